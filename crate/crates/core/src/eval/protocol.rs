use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roi::{iou, BBox};

/// Greedy one-to-one matching of score-sorted detections to ground truth:
/// each detection takes the unmatched ground truth of highest IoU when that
/// IoU is strictly above `iou_threshold`.
pub fn match_detections(detections: &[BBox], gts: &[BBox], iou_threshold: f64) -> Result<Vec<Option<usize>>> {
    let score = |b: &BBox| b.score.unwrap_or(f64::NEG_INFINITY);
    if detections.windows(2).any(|w| score(&w[0]) < score(&w[1])) {
        return Err(Error::invalid(
            "match_detections",
            "detections are not sorted by descending score",
        ));
    }
    let mut taken = vec![false; gts.len()];
    let mut out = Vec::with_capacity(detections.len());
    for d in detections {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let o = iou(d, gt);
            if o > iou_threshold && best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
        }
        out.push(best.map(|(g, _)| g));
    }
    Ok(out)
}

fn sort_desc(boxes: &[BBox]) -> Vec<BBox> {
    let mut v = boxes.to_vec();
    v.sort_by(|a, b| b.score.unwrap_or(0.0).total_cmp(&a.score.unwrap_or(0.0)));
    v
}

/// All-point interpolated average precision of a ranked list of hit flags
/// against `positives` relevant items.
pub fn interpolated_ap(hits: &[bool], positives: usize) -> f64 {
    if positives == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(hits.len());
    for (i, &h) in hits.iter().enumerate() {
        tp += usize::from(h);
        points.push((tp as f64 / positives as f64, tp as f64 / (i + 1) as f64));
    }
    // Precision envelope from the right.
    for i in (0..points.len().saturating_sub(1)).rev() {
        points[i].1 = points[i].1.max(points[i + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in points {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    ap
}

/// Detection AP over the score sweep and recall at `score_threshold`, with
/// matching per scene at `iou_threshold`.
pub fn detection_ap_recall(
    detections: &[Vec<BBox>],
    gts: &[Vec<BBox>],
    iou_threshold: f64,
    score_threshold: f64,
) -> Result<(f64, f64)> {
    if detections.len() != gts.len() {
        return Err(Error::shape(
            "detection_ap_recall",
            format!("{} detection lists for {} scenes", detections.len(), gts.len()),
        ));
    }
    let total: usize = gts.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::invalid("detection_ap_recall", "no ground-truth boxes"));
    }
    let mut scored: Vec<(f64, bool, usize)> = Vec::new();
    let mut recalled = 0usize;
    for (s, (dets, gt)) in detections.iter().zip(gts).enumerate() {
        let dets = sort_desc(dets);
        let m = match_detections(&dets, gt, iou_threshold)?;
        for (d, mm) in dets.iter().zip(&m) {
            scored.push((d.score.unwrap_or(0.0), mm.is_some(), s));
        }
        let kept: Vec<BBox> = dets
            .iter()
            .copied()
            .filter(|d| d.score.unwrap_or(0.0) >= score_threshold)
            .collect();
        recalled += match_detections(&kept, gt, iou_threshold)?.iter().flatten().count();
    }
    // Stable sort keeps scene order among equal scores.
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let hits: Vec<bool> = scored.iter().map(|s| s.1).collect();
    Ok((interpolated_ap(&hits, total), recalled as f64 / total as f64))
}

/// A detected box in a gallery scene with its embedding and the identity
/// of the ground truth it matched, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct GalleryEntry {
    pub scene: usize,
    pub bbox: BBox,
    pub embedding: Vec<f64>,
    /// `Some(None)` for a match to an unlabelled person.
    pub matched: Option<Option<usize>>,
    pub matched_gt: Option<usize>,
}

/// Detections of every scene, filtered at the score threshold and matched to
/// ground truth once, independent of any query.
#[derive(Clone, Debug, PartialEq)]
pub struct Gallery {
    pub entries: Vec<GalleryEntry>,
    pub gts: Vec<Vec<BBox>>,
}

impl Gallery {
    /// `detections[s]` pairs each box of scene `s` with its embedding.
    pub fn build(
        detections: Vec<Vec<(BBox, Vec<f64>)>>,
        gts: Vec<Vec<BBox>>,
        iou_threshold: f64,
        score_threshold: f64,
    ) -> Result<Self> {
        if detections.len() != gts.len() {
            return Err(Error::shape(
                "gallery",
                format!("{} detection lists for {} scenes", detections.len(), gts.len()),
            ));
        }
        let mut entries = Vec::new();
        for (s, dets) in detections.into_iter().enumerate() {
            let mut dets: Vec<(BBox, Vec<f64>)> = dets
                .into_iter()
                .filter(|(b, _)| b.score.unwrap_or(0.0) >= score_threshold)
                .collect();
            dets.sort_by(|a, b| b.0.score.unwrap_or(0.0).total_cmp(&a.0.score.unwrap_or(0.0)));
            let boxes: Vec<BBox> = dets.iter().map(|d| d.0).collect();
            let m = match_detections(&boxes, &gts[s], iou_threshold)?;
            for ((bbox, embedding), g) in dets.into_iter().zip(m) {
                entries.push(GalleryEntry {
                    scene: s,
                    bbox,
                    embedding,
                    matched: g.map(|g| gts[s][g].identity),
                    matched_gt: g,
                });
            }
        }
        Ok(Gallery { entries, gts })
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub identity: usize,
    pub scene: usize,
    /// Gallery entry indices by descending similarity.
    pub ranking: Vec<usize>,
    /// Correctness of each ranked entry.
    pub correct: Vec<bool>,
    /// Fraction of the identity's gallery ground truth that was detected.
    pub recall_rate: f64,
    pub raw_ap: f64,
    /// `raw_ap · recall_rate`.
    pub ap: f64,
}

impl QueryResult {
    pub fn top1(&self) -> bool {
        self.correct.first().copied().unwrap_or(false)
    }
}

/// Ranks all gallery entries outside the query's own scene by cosine
/// similarity; an entry is correct when it matched a ground truth of the
/// query identity. Entries matching unlabelled people count as incorrect.
/// Ties keep gallery order.
pub fn person_search_ap(
    identity: usize,
    query_scene: usize,
    query_embedding: &[f64],
    gallery: &Gallery,
) -> Result<QueryResult> {
    let total: usize = gallery
        .gts
        .iter()
        .enumerate()
        .filter(|(s, _)| *s != query_scene)
        .map(|(_, g)| g.iter().filter(|b| b.identity == Some(identity)).count())
        .sum();
    if total == 0 {
        return Err(Error::invalid(
            "person_search_ap",
            format!("identity {identity} has no ground truth in the gallery"),
        ));
    }
    let mut ranked: Vec<(usize, f64)> = gallery
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.scene != query_scene)
        .map(|(i, e)| (i, cosine(query_embedding, &e.embedding)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let correct: Vec<bool> = ranked
        .iter()
        .map(|&(i, _)| gallery.entries[i].matched == Some(Some(identity)))
        .collect();
    let found = correct.iter().filter(|&&c| c).count();
    let raw_ap = average_precision(&correct);
    let recall_rate = found as f64 / total as f64;
    Ok(QueryResult {
        identity,
        scene: query_scene,
        ranking: ranked.iter().map(|r| r.0).collect(),
        correct,
        recall_rate,
        raw_ap,
        ap: raw_ap * recall_rate,
    })
}

/// Mean precision at the ranks of the correct entries; 0 when none is
/// correct.
pub fn average_precision(correct: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &c) in correct.iter().enumerate() {
        if c {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

/// `(mAP, top-1)` over queries.
pub fn person_search_map_cmc(results: &[QueryResult]) -> Result<(f64, f64)> {
    if results.is_empty() {
        return Err(Error::invalid("person_search_map_cmc", "no queries"));
    }
    let n = results.len() as f64;
    let map = results.iter().map(|r| r.ap).sum::<f64>() / n;
    let top1 = results.iter().filter(|r| r.top1()).count() as f64 / n;
    Ok((map, top1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64, s: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).with_score(s)
    }

    #[test]
    fn exact_box_matches_and_duplicates_do_not() {
        let gt = [BBox::new(0.0, 0.0, 10.0, 20.0)];
        let dets = [b(0.0, 0.0, 10.0, 20.0, 0.9), b(0.0, 1.0, 10.0, 20.0, 0.8)];
        assert_eq!(match_detections(&dets, &gt, 0.5).unwrap(), vec![Some(0), None]);
    }

    #[test]
    fn unsorted_detections_rejected() {
        let dets = [b(0.0, 0.0, 1.0, 1.0, 0.1), b(0.0, 0.0, 1.0, 1.0, 0.9)];
        assert!(match_detections(&dets, &[], 0.5).is_err());
    }

    #[test]
    fn perfect_and_empty_detection() {
        let gts = vec![
            vec![BBox::new(0.0, 0.0, 10.0, 10.0)],
            vec![BBox::new(5.0, 5.0, 20.0, 30.0)],
        ];
        let perfect: Vec<Vec<BBox>> = gts.iter().map(|g| vec![g[0].with_score(0.9)]).collect();
        assert_eq!(detection_ap_recall(&perfect, &gts, 0.5, 0.5).unwrap(), (1.0, 1.0));
        assert_eq!(
            detection_ap_recall(&[vec![], vec![]], &gts, 0.5, 0.5).unwrap(),
            (0.0, 0.0)
        );
        assert!(detection_ap_recall(&[vec![]], &[vec![]], 0.5, 0.5).is_err());
    }

    fn gallery_of(entries: Vec<(usize, Option<Option<usize>>, Vec<f64>)>, gts: Vec<Vec<BBox>>) -> Gallery {
        Gallery {
            entries: entries
                .into_iter()
                .map(|(scene, matched, embedding)| GalleryEntry {
                    scene,
                    bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
                    embedding,
                    matched,
                    matched_gt: None,
                })
                .collect(),
            gts,
        }
    }

    fn person(id: Option<usize>) -> BBox {
        BBox::new(0.0, 0.0, 1.0, 1.0).with_identity(id)
    }

    #[test]
    fn single_gt_ranked_first() {
        let g = gallery_of(
            vec![(1, Some(Some(3)), vec![1.0, 0.0]), (1, None, vec![0.0, 1.0])],
            vec![vec![person(Some(3))], vec![person(Some(3))]],
        );
        let r = person_search_ap(3, 0, &[1.0, 0.1], &g).unwrap();
        assert_eq!(r.ap, 1.0);
        assert!(r.top1());
    }

    #[test]
    fn recall_scaling_halves_ap() {
        let g = gallery_of(
            vec![(1, Some(Some(3)), vec![1.0, 0.0])],
            vec![vec![], vec![person(Some(3))], vec![person(Some(3))]],
        );
        let r = person_search_ap(3, 0, &[1.0, 0.0], &g).unwrap();
        assert_eq!(r.raw_ap, 1.0);
        assert_eq!(r.recall_rate, 0.5);
        assert_eq!(r.ap, 0.5);
    }

    #[test]
    fn absent_identity_rejected() {
        let g = gallery_of(vec![], vec![vec![person(Some(1))]]);
        assert!(person_search_ap(1, 0, &[1.0], &g).is_err());
    }

    #[test]
    fn map_arithmetic() {
        let mk = |ap: f64, top: bool| QueryResult {
            identity: 0,
            scene: 0,
            ranking: vec![0],
            correct: vec![top],
            recall_rate: 1.0,
            raw_ap: ap,
            ap,
        };
        assert_eq!(
            person_search_map_cmc(&[mk(1.0, true), mk(0.5, false)]).unwrap(),
            (0.75, 0.5)
        );
        assert!(person_search_map_cmc(&[]).is_err());
    }

    #[test]
    fn interpolation_fills_valleys() {
        // hits at ranks 1 and 3 of 2 positives: envelope precision 1 then 2/3.
        let ap = interpolated_ap(&[true, false, true], 2);
        assert!((ap - (0.5 * 1.0 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }
}
