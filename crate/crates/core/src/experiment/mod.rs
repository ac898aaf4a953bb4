//! Experiment orchestration: configs, the staged run, arm matrices and
//! comparison reports.

mod config;
mod features;
mod report;
mod run;

pub use config::{pooling_name, ExperimentConfig, GenericConfig, InitMode, SCHEMA_VERSION};
pub use features::{activation_ratio, feature_heatmap, write_pgm};
pub use report::{dump_features, emit_report, FeatureRow, ReportOutcome, ReportRow, REPORT_HEADER};
pub use run::{
    dataset_dir, dataset_key, ensure_dataset, load_final, load_initial, load_pretrained, matrix_configs,
    run_experiment, stage_evaluate, stage_finetune, stage_pretrain, stage_transfer, write_config, RunPaths,
};
