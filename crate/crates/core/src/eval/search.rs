use std::path::Path;

use serde::{Deserialize, Serialize};

use super::protocol::{detection_ap_recall, person_search_ap, person_search_map_cmc, Gallery};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::SearchModel;
use crate::roi::BBox;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Detections below this foreground score leave the gallery.
    pub score_threshold: f64,
    /// A detection is a true person when its IoU with a ground truth
    /// exceeds this.
    pub iou_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            score_threshold: 0.5,
            iou_threshold: 0.5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::config("eval.score_threshold", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.iou_threshold) {
            return Err(Error::config("eval.iou_threshold", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub identity: usize,
    pub scene: usize,
    pub ap: f64,
    pub raw_ap: f64,
    pub recall_rate: f64,
    pub top1: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchMetrics {
    pub map: f64,
    pub top1: f64,
    pub detection_ap: f64,
    pub detection_recall: f64,
    pub queries: Vec<QueryRow>,
}

/// Detection of every test scene, the gallery built from them, and the
/// search protocol over all queries.
pub fn evaluate_search(model: &SearchModel, dataset: &Dataset, cfg: &EvalConfig) -> Result<SearchMetrics> {
    cfg.validate()?;
    let scenes = &dataset.test;
    let mut detections: Vec<Vec<BBox>> = Vec::with_capacity(scenes.len());
    let mut gallery_items = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let (dets, emb) = model.detect_and_embed(&scene.image)?;
        let items: Vec<(BBox, Vec<f64>)> = match &emb {
            Some(e) => dets.iter().enumerate().map(|(i, d)| (*d, e.row(i).to_vec())).collect(),
            None => Vec::new(),
        };
        detections.push(dets);
        gallery_items.push(items);
    }
    let gts: Vec<Vec<BBox>> = scenes.iter().map(|s| s.instances.clone()).collect();
    let (detection_ap, detection_recall) =
        detection_ap_recall(&detections, &gts, cfg.iou_threshold, cfg.score_threshold)?;
    let gallery = Gallery::build(gallery_items, gts, cfg.iou_threshold, cfg.score_threshold)?;
    let mut results = Vec::with_capacity(dataset.queries.len());
    for q in &dataset.queries {
        let scene = scenes
            .get(q.scene)
            .ok_or_else(|| Error::invalid("evaluate_search", format!("query scene {}", q.scene)))?;
        let emb = model.embed_boxes(&scene.image, &[q.bbox])?;
        results.push(person_search_ap(q.identity, q.scene, emb.row(0), &gallery)?);
    }
    let (map, top1) = person_search_map_cmc(&results)?;
    Ok(SearchMetrics {
        map,
        top1,
        detection_ap,
        detection_recall,
        queries: results
            .iter()
            .map(|r| QueryRow {
                identity: r.identity,
                scene: r.scene,
                ap: r.ap,
                raw_ap: r.raw_ap,
                recall_rate: r.recall_rate,
                top1: r.top1(),
            })
            .collect(),
    })
}

/// Pretty JSON with a trailing newline; equal metrics give equal bytes.
pub fn write_metrics(path: &Path, metrics: &SearchMetrics) -> Result<()> {
    let mut text = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<SearchMetrics> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}
