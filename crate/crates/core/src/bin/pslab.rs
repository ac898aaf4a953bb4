//! Command-line front end. See `pslab --help`.
//!
//! Exit codes: 0 success, 1 runtime failure (I/O, malformed files), 2 invalid
//! configuration or usage, 3 non-finite loss or parameters during training.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use pslab::experiment::{
    dump_features, emit_report, ensure_dataset, load_final, load_initial, load_pretrained, matrix_configs,
    run_experiment, stage_evaluate, stage_finetune, stage_pretrain, stage_transfer, write_config, ExperimentConfig,
    InitMode, RunPaths,
};
use pslab::model::PoolingMode;
use pslab::Error;

#[derive(Parser)]
#[command(name = "pslab", version, about = "Desk-scale one-step person search laboratory")]
struct Cli {
    /// Root directory for datasets and runs.
    #[arg(long, env = "PSLAB_OUTPUT_ROOT", default_value = "runs", global = true)]
    output_root: PathBuf,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set finetune.schedule.epochs=4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_init)]
    init: Option<InitMode>,
    #[arg(long, value_parser = parse_pooling)]
    pooling: Option<PoolingMode>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or reuse) the synthetic dataset of a config.
    GenerateData(ConfigArgs),
    /// Pretrain the backbone for the `stl` or `generic` arm.
    Pretrain(ConfigArgs),
    /// Build the search model, transferring the pretrained backbone if any.
    Transfer(ConfigArgs),
    /// Fine-tune the transferred search model.
    Finetune(ConfigArgs),
    /// Evaluate the fine-tuned model on the test split.
    Evaluate(ConfigArgs),
    /// All stages of one experiment.
    Run(ConfigArgs),
    /// Every (init, pooling, seed) arm, then a comparison report.
    RunMatrix {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', value_parser = parse_init, default_value = "random,generic,stl")]
        inits: Vec<InitMode>,
        #[arg(long, value_delimiter = ',', value_parser = parse_pooling, default_value = "single,mrfp")]
        poolings: Vec<PoolingMode>,
    },
    /// Comparison CSV over run directories.
    Report {
        /// Run directories; all runs under the output root when omitted.
        runs: Vec<PathBuf>,
        /// Output CSV; `<output-root>/report.csv` when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also dump initial feature heat maps for this many test scenes.
        #[arg(long, default_value_t = 0)]
        features: usize,
    },
    /// Print a config as TOML.
    PrintConfig {
        /// Full-scale schedules instead of the desk ones.
        #[arg(long)]
        full_scale: bool,
    },
}

fn parse_init(s: &str) -> Result<InitMode, String> {
    match s {
        "random" => Ok(InitMode::Random),
        "generic" => Ok(InitMode::Generic),
        "stl" => Ok(InitMode::Stl),
        _ => Err(format!("unknown init mode {s:?} (random, generic, stl)")),
    }
}

fn parse_pooling(s: &str) -> Result<PoolingMode, String> {
    match s {
        "single" => Ok(PoolingMode::Single),
        "mrfp" => Ok(PoolingMode::Mrfp),
        _ => Err(format!("unknown pooling mode {s:?} (single, mrfp)")),
    }
}

fn set_key(root: &mut toml::Table, key: &str, raw: &str) -> pslab::Result<()> {
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .map(|mut t| t.remove("v").expect("parsed key"))
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::config(key, "empty key"))?;
    let mut table = root;
    for p in parts {
        table = table
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{p}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn load_config(args: &ConfigArgs) -> pslab::Result<ExperimentConfig> {
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?,
        None => ExperimentConfig::default().to_toml(),
    };
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| Error::config("<toml>", e.to_string()))?;
    for s in &args.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::config(s, "expected KEY=VALUE"))?;
        set_key(&mut table, k.trim(), v.trim())?;
    }
    let mut cfg = ExperimentConfig::from_toml(&toml::to_string(&table).expect("table serializes"))?;
    if let Some(n) = &args.name {
        cfg.name = n.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(i) = args.init {
        cfg.init = i;
    }
    if let Some(p) = args.pooling {
        cfg.model.pooling = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare(args: &ConfigArgs, root: &Path) -> pslab::Result<(ExperimentConfig, RunPaths)> {
    let cfg = load_config(args)?;
    let paths = RunPaths::new(root.join(&cfg.name));
    write_config(&cfg, &paths)?;
    Ok((cfg, paths))
}

fn print_metrics(name: &str, m: &pslab::eval::SearchMetrics) {
    println!(
        "{name}: mAP {:.4}  top-1 {:.4}  detection AP {:.4}  recall {:.4}",
        m.map, m.top1, m.detection_ap, m.detection_recall
    );
}

fn runs_under(root: &Path) -> Vec<PathBuf> {
    let mut runs: Vec<PathBuf> = std::fs::read_dir(root)
        .map(|rd| {
            rd.filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join("config.toml").is_file())
                .collect()
        })
        .unwrap_or_default();
    runs.sort();
    runs
}

fn execute(cli: &Cli) -> pslab::Result<()> {
    let root = &cli.output_root;
    match &cli.command {
        Command::GenerateData(a) => {
            let cfg = load_config(a)?;
            ensure_dataset(root, &cfg.dataset)?;
            println!("{}", pslab::experiment::dataset_dir(root, &cfg.dataset).display());
        }
        Command::Pretrain(a) => {
            let (cfg, paths) = prepare(a, root)?;
            let ds = ensure_dataset(root, &cfg.dataset)?;
            match stage_pretrain(&cfg, &ds, &paths)? {
                Some(_) => println!("{}", paths.pretrain_checkpoint().display()),
                None => println!("init = random: nothing to pretrain"),
            }
        }
        Command::Transfer(a) => {
            let (cfg, paths) = prepare(a, root)?;
            let pretrained = match cfg.init {
                InitMode::Random => None,
                _ => Some(load_pretrained(&paths)?),
            };
            stage_transfer(&cfg, pretrained.as_ref(), &paths)?;
            println!("{}", paths.init_checkpoint().display());
        }
        Command::Finetune(a) => {
            let (cfg, paths) = prepare(a, root)?;
            let ds = ensure_dataset(root, &cfg.dataset)?;
            stage_finetune(&cfg, &ds, load_initial(&paths)?, &paths)?;
            println!("{}", paths.final_checkpoint().display());
        }
        Command::Evaluate(a) => {
            let (cfg, paths) = prepare(a, root)?;
            let ds = ensure_dataset(root, &cfg.dataset)?;
            let m = stage_evaluate(&cfg, &ds, &load_final(&paths)?, &paths)?;
            print_metrics(&cfg.name, &m);
        }
        Command::Run(a) => {
            let cfg = load_config(a)?;
            let m = run_experiment(&cfg, root)?;
            print_metrics(&cfg.name, &m);
        }
        Command::RunMatrix {
            config,
            seeds,
            inits,
            poolings,
        } => {
            let base = load_config(config)?;
            let mut dirs = Vec::new();
            for cfg in matrix_configs(&base, inits, poolings, seeds) {
                info!("arm {}", cfg.name);
                let m = run_experiment(&cfg, root)?;
                print_metrics(&cfg.name, &m);
                dirs.push(root.join(&cfg.name));
            }
            let out = root.join(format!("{}-report.csv", base.name));
            emit_report(&dirs, &out)?;
            println!("{}", out.display());
        }
        Command::Report { runs, out, features } => {
            let runs = if runs.is_empty() {
                runs_under(root)
            } else {
                runs.clone()
            };
            let out = out.clone().unwrap_or_else(|| root.join("report.csv"));
            let outcome = emit_report(&runs, &out)?;
            for m in &outcome.missing {
                eprintln!("missing or incomplete run: {}", m.display());
            }
            if *features > 0 {
                for r in &runs {
                    if !outcome.missing.contains(r) {
                        dump_features(r, root, *features)?;
                    }
                }
            }
            println!("{}", out.display());
        }
        Command::PrintConfig { full_scale } => {
            let cfg = if *full_scale {
                ExperimentConfig::full_scale()
            } else {
                ExperimentConfig::default()
            };
            print!("{}", cfg.to_toml());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::NonFinite { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
