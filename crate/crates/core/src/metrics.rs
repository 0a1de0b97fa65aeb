//! Quantitative instruments: AUROC, average precision/recall, and CLEAR-MOT
//! tracking scores, plus the serializable report container.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tracking::{iou, BBox, Detection};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("auroc needs both a positive and a negative label")]
    SingleClass,
    #[error("scores and labels differ in length: {scores} vs {labels}")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("labels must be 0 or 1, got {0}")]
    BadLabel(f64),
    #[error("duplicate id {id} on frame {frame}")]
    DuplicateId { id: u32, frame: usize },
    #[error("metric evaluated over an empty dataset")]
    EmptyDataset,
}

/// One curve: axis values (budgets, thresholds, ...) against metric values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub axis: Vec<f64>,
    pub values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stderr: Option<Vec<f64>>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn new(name: &str, axis: Vec<f64>, values: Vec<f64>) -> Self {
        MetricReport {
            name: name.to_string(),
            axis,
            values,
            stderr: None,
            metadata: BTreeMap::new(),
        }
    }
}

/// Probability that a random positive outranks a random negative, ties
/// counted half (midrank method).
pub fn auroc(scores: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    for &l in labels {
        if l != 0.0 && l != 1.0 {
            return Err(MetricError::BadLabel(l));
        }
    }
    let n_pos = labels.iter().filter(|&&l| l == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // midranks over tied score groups
    let mut rank = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            rank[idx] = mid;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = labels
        .iter()
        .zip(&rank)
        .filter(|(&l, _)| l == 1.0)
        .map(|(_, &r)| r)
        .sum();
    Ok((pos_rank_sum - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0) / (n_pos as f64 * n_neg as f64))
}

fn sorted_by_confidence(detections: &[Detection]) -> Vec<&Detection> {
    let mut dets: Vec<&Detection> = detections.iter().collect();
    dets.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap());
    dets
}

/// Greedy matching of detections against ground truth at one IoU threshold,
/// in descending confidence order; each GT box matches at most once.
/// Returns per-detection true/false-positive flags.
fn match_detections(dets: &[&Detection], gt: &[BBox], threshold: f64) -> Vec<bool> {
    let mut taken = vec![false; gt.len()];
    dets.iter()
        .map(|d| {
            let mut best = None;
            let mut best_iou = threshold;
            for (gi, g) in gt.iter().enumerate() {
                if taken[gi] {
                    continue;
                }
                let v = iou(&d.bbox, g);
                if v >= best_iou {
                    best_iou = v;
                    best = Some(gi);
                }
            }
            match best {
                Some(gi) => {
                    taken[gi] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// Area under the precision-recall curve with the monotone precision
/// envelope (all points, not 11-point sampling).
pub fn average_precision(detections: &[Detection], gt: &[BBox], iou_threshold: f64) -> f64 {
    if gt.is_empty() {
        return if detections.is_empty() { 1.0 } else { 0.0 };
    }
    if detections.is_empty() {
        return 0.0;
    }
    let dets = sorted_by_confidence(detections);
    let tp_flags = match_detections(&dets, gt, iou_threshold);
    let mut precisions = Vec::with_capacity(dets.len());
    let mut recalls = Vec::with_capacity(dets.len());
    let mut tp = 0usize;
    for (i, &is_tp) in tp_flags.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        precisions.push(tp as f64 / (i + 1) as f64);
        recalls.push(tp as f64 / gt.len() as f64);
    }
    // monotone envelope from the right
    for i in (0..precisions.len().saturating_sub(1)).rev() {
        precisions[i] = precisions[i].max(precisions[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precisions.iter().zip(&recalls) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

pub const COCO_IOU_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

/// Mean AP over IoU thresholds.
pub fn mean_ap(detections: &[Detection], gt: &[BBox], thresholds: &[f64]) -> f64 {
    thresholds
        .iter()
        .map(|&t| average_precision(detections, gt, t))
        .sum::<f64>()
        / thresholds.len() as f64
}

/// Mean recall over IoU thresholds using at most `max_detections` highest
/// confidence detections.
pub fn mean_ar(
    detections: &[Detection],
    gt: &[BBox],
    thresholds: &[f64],
    max_detections: usize,
) -> f64 {
    if gt.is_empty() {
        return if detections.is_empty() { 1.0 } else { 0.0 };
    }
    let dets = sorted_by_confidence(detections);
    let dets = &dets[..dets.len().min(max_detections)];
    thresholds
        .iter()
        .map(|&t| {
            let tp = match_detections(dets, gt, t).iter().filter(|&&m| m).count();
            tp as f64 / gt.len() as f64
        })
        .sum::<f64>()
        / thresholds.len() as f64
}

/// CLEAR-MOT tally over a whole sequence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MotTally {
    pub misses: u64,
    pub false_positives: u64,
    pub id_switches: u64,
    pub matches: u64,
    pub total_gt: u64,
    /// Sum of (1 - IoU) over all matches; MOTP is this over `matches`.
    pub dist_sum: f64,
}

/// Objects present on one frame: `(track id, box)` pairs.
pub type FrameObjects = Vec<(u32, BBox)>;

/// CLEAR-MOT with persistent correspondences: previous-frame matches are
/// kept while IoU stays at or above `iou_min`, the remainder matched
/// greedily by descending IoU. Returns `(MOTA, MOTP, tally)` where MOTP is
/// the mean `1 - IoU` distance over matches (lower is better).
pub fn clear_mot(
    gt: &[FrameObjects],
    hyp: &[FrameObjects],
    iou_min: f64,
) -> Result<(f64, f64, MotTally), MetricError> {
    let n_frames = gt.len().max(hyp.len());
    let empty: FrameObjects = Vec::new();

    let mut tally = MotTally::default();
    // gt id -> hyp id correspondence from the previous frame, and the last
    // hyp ever matched to each gt id (for switch counting)
    let mut prev: BTreeMap<u32, u32> = BTreeMap::new();
    let mut last_matched: BTreeMap<u32, u32> = BTreeMap::new();

    for f in 0..n_frames {
        let gt_f = gt.get(f).unwrap_or(&empty);
        let hyp_f = hyp.get(f).unwrap_or(&empty);
        for frame_objs in [gt_f, hyp_f] {
            let mut seen = std::collections::BTreeSet::new();
            for (id, _) in frame_objs {
                if !seen.insert(*id) {
                    return Err(MetricError::DuplicateId { id: *id, frame: f });
                }
            }
        }
        tally.total_gt += gt_f.len() as u64;

        let gt_box: BTreeMap<u32, BBox> = gt_f.iter().cloned().collect();
        let hyp_box: BTreeMap<u32, BBox> = hyp_f.iter().cloned().collect();
        let mut matched_gt = std::collections::BTreeSet::new();
        let mut matched_hyp = std::collections::BTreeSet::new();
        let mut frame_pairs: Vec<(u32, u32, f64)> = Vec::new();

        // keep surviving correspondences
        for (&g, &h) in &prev {
            if let (Some(gb), Some(hb)) = (gt_box.get(&g), hyp_box.get(&h)) {
                let v = iou(gb, hb);
                if v >= iou_min {
                    matched_gt.insert(g);
                    matched_hyp.insert(h);
                    frame_pairs.push((g, h, v));
                }
            }
        }

        // greedy matching of the remainder
        let mut candidates: Vec<(f64, u32, u32)> = Vec::new();
        for (&g, gb) in &gt_box {
            if matched_gt.contains(&g) {
                continue;
            }
            for (&h, hb) in &hyp_box {
                if matched_hyp.contains(&h) {
                    continue;
                }
                let v = iou(gb, hb);
                if v >= iou_min {
                    candidates.push((v, g, h));
                }
            }
        }
        candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for (v, g, h) in candidates {
            if matched_gt.contains(&g) || matched_hyp.contains(&h) {
                continue;
            }
            matched_gt.insert(g);
            matched_hyp.insert(h);
            frame_pairs.push((g, h, v));
        }

        let mut next_prev = BTreeMap::new();
        for (g, h, v) in frame_pairs {
            if let Some(&old) = last_matched.get(&g) {
                if old != h {
                    tally.id_switches += 1;
                }
            }
            last_matched.insert(g, h);
            next_prev.insert(g, h);
            tally.matches += 1;
            tally.dist_sum += 1.0 - v;
        }
        prev = next_prev;

        tally.misses += (gt_f.len() - matched_gt.len()) as u64;
        tally.false_positives += (hyp_f.len() - matched_hyp.len()) as u64;
    }

    debug_assert_eq!(tally.matches + tally.misses, tally.total_gt);
    let mota = if tally.total_gt == 0 {
        1.0
    } else {
        1.0 - (tally.misses + tally.false_positives + tally.id_switches) as f64 / tally.total_gt as f64
    };
    let motp = if tally.matches == 0 {
        0.0
    } else {
        tally.dist_sum / tally.matches as f64
    };
    Ok((mota, motp, tally))
}
