//! Toy per-patch detector over sensed tokens and a greedy IoU tracker.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, NumericsError};
use crate::params::{bind_params, harvest_grads, AdamConfig, ParamStore};
use crate::sensor::{extract_tokens, Frame, PatchGrid, PatchMask, SensorError};

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("detections span multiple frames: {0} and {1}")]
    MixedFrames(usize, usize),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Axis-aligned box in pixels, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a.area() + b.area() - inter)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
    pub frame_index: usize,
}

#[derive(Debug, Clone)]
pub struct Track {
    pub id: u32,
    pub entries: Vec<(usize, BBox)>,
    pub active: bool,
    pub misses: usize,
}

impl Track {
    pub fn last_box(&self) -> &BBox {
        &self.entries.last().expect("tracks are never empty").1
    }
}

/// Per-patch objectness labels from ground-truth boxes: a patch is positive
/// when at least `coverage` of its area is covered by some box.
pub fn objectness_labels(boxes: &[BBox], grid: &PatchGrid, coverage: f64) -> Vec<f64> {
    let p = grid.patch_size as f64;
    (0..grid.n_patches())
        .map(|i| {
            let (x0, y0) = grid.patch_origin(i);
            let patch = BBox::new(x0 as f64, y0 as f64, p, p);
            let covered: f64 = boxes
                .iter()
                .map(|b| {
                    let ix = (patch.x + patch.w).min(b.x + b.w) - patch.x.max(b.x);
                    let iy = (patch.y + patch.h).min(b.y + b.h) - patch.y.max(b.y);
                    if ix <= 0.0 || iy <= 0.0 {
                        0.0
                    } else {
                        ix * iy
                    }
                })
                .sum();
            if covered / patch.area() >= coverage {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

fn patch_score(store: &ParamStore, pixels: &[f64]) -> f64 {
    let w = &store.get("obj.w").expect("objectness head present").data;
    let b = store.get("obj.b").expect("objectness head present").data[0];
    let z: f64 = pixels.iter().zip(w).map(|(x, wi)| x * wi).sum::<f64>() + b;
    1.0 / (1.0 + (-z).exp())
}

/// One BCE step of the logistic objectness head over every patch of a fully
/// sensed frame. Returns the loss.
pub fn objectness_train_step(
    store: &mut ParamStore,
    frame: &Frame,
    grid: &PatchGrid,
    labels: &[f64],
    adam: &AdamConfig,
) -> Result<f64, TrackingError> {
    let tokens = extract_tokens(frame, grid, &PatchMask::all_sensed(grid.n_patches()))?;
    let d = grid.patch_size * grid.patch_size * frame.channels;
    let mut flat = Vec::with_capacity(tokens.len() * d);
    for (_, px) in &tokens {
        flat.extend_from_slice(px);
    }
    let mut g = Graph::new();
    let bound = bind_params(&mut g, store)?;
    let x = g.constant(tokens.len(), d, flat)?;
    let z = g.matmul(x, bound.id("obj.w")?)?;
    let z = g.add_row(z, bound.id("obj.b")?)?;
    let zt = g.transpose(z)?;
    let pred = g.sigmoid(zt)?;
    let loss = g.bce(pred, labels)?;
    g.backward(loss)?;
    store.zero_grads();
    harvest_grads(&g, &bound, store);
    store.adam_step(adam)?;
    Ok(g.value(loss)[0])
}

/// Detections from sensed patches only: patches scoring at least 0.5 are
/// merged into 4-connected components whose pixel bounding rectangle becomes
/// the box and whose mean score becomes the confidence. Unsensed patches can
/// never contribute.
pub fn detect_on_mask(
    frame: &Frame,
    grid: &PatchGrid,
    mask: &PatchMask,
    store: &ParamStore,
) -> Result<Vec<Detection>, TrackingError> {
    let tokens = extract_tokens(frame, grid, mask)?;
    let mut score = vec![0.0f64; grid.n_patches()];
    let mut hot = vec![false; grid.n_patches()];
    for (i, px) in &tokens {
        score[*i] = patch_score(store, px);
        hot[*i] = score[*i] >= 0.5;
    }
    // 4-connected flood fill over hot patches
    let mut seen = vec![false; grid.n_patches()];
    let mut detections = Vec::new();
    for start in 0..grid.n_patches() {
        if !hot[start] || seen[start] {
            continue;
        }
        let mut stack = vec![start];
        let mut component = Vec::new();
        seen[start] = true;
        while let Some(i) = stack.pop() {
            component.push(i);
            let (r, c) = (i / grid.cols, i % grid.cols);
            let mut neighbors = Vec::with_capacity(4);
            if r > 0 {
                neighbors.push(i - grid.cols);
            }
            if r + 1 < grid.rows {
                neighbors.push(i + grid.cols);
            }
            if c > 0 {
                neighbors.push(i - 1);
            }
            if c + 1 < grid.cols {
                neighbors.push(i + 1);
            }
            for n in neighbors {
                if hot[n] && !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        let p = grid.patch_size;
        let mut x0 = usize::MAX;
        let mut y0 = usize::MAX;
        let mut x1 = 0usize;
        let mut y1 = 0usize;
        let mut conf = 0.0;
        for &i in &component {
            let (px0, py0) = grid.patch_origin(i);
            x0 = x0.min(px0);
            y0 = y0.min(py0);
            x1 = x1.max(px0 + p);
            y1 = y1.max(py0 + p);
            conf += score[i];
        }
        detections.push(Detection {
            bbox: BBox::new(x0 as f64, y0 as f64, (x1 - x0) as f64, (y1 - y0) as f64),
            confidence: conf / component.len() as f64,
            frame_index: frame.time_index,
        });
    }
    Ok(detections)
}

/// Greedy IoU tracker state. Track ids are never reused within a video.
#[derive(Debug, Default)]
pub struct TrackerState {
    pub tracks: Vec<Track>,
    next_id: u32,
}

#[derive(Debug, Clone, Copy)]
pub struct AssociateConfig {
    pub iou_min: f64,
    pub max_misses: usize,
}

impl Default for AssociateConfig {
    fn default() -> Self {
        AssociateConfig {
            iou_min: 0.3,
            max_misses: 3,
        }
    }
}

impl TrackerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Greedy matching in descending IoU order; pairs below `iou_min` never
    /// match. Unmatched detections open new tracks, unmatched active tracks
    /// accrue misses and deactivate after `max_misses`.
    pub fn associate(
        &mut self,
        detections: &[Detection],
        cfg: &AssociateConfig,
    ) -> Result<(), TrackingError> {
        if let Some(first) = detections.first() {
            for d in detections {
                if d.frame_index != first.frame_index {
                    return Err(TrackingError::MixedFrames(first.frame_index, d.frame_index));
                }
            }
        }
        let active: Vec<usize> = (0..self.tracks.len()).filter(|&t| self.tracks[t].active).collect();
        let mut pairs = Vec::new();
        for &t in &active {
            for (d, det) in detections.iter().enumerate() {
                let v = iou(self.tracks[t].last_box(), &det.bbox);
                if v >= cfg.iou_min {
                    pairs.push((v, t, d));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut track_used = vec![false; self.tracks.len()];
        let mut det_used = vec![false; detections.len()];
        for (_, t, d) in pairs {
            if track_used[t] || det_used[d] {
                continue;
            }
            track_used[t] = true;
            det_used[d] = true;
            let frame_index = detections[d].frame_index;
            self.tracks[t].entries.push((frame_index, detections[d].bbox));
            self.tracks[t].misses = 0;
        }

        for &t in &active {
            if !track_used[t] {
                self.tracks[t].misses += 1;
                if self.tracks[t].misses >= cfg.max_misses {
                    self.tracks[t].active = false;
                }
            }
        }

        for (d, det) in detections.iter().enumerate() {
            if !det_used[d] {
                self.tracks.push(Track {
                    id: self.next_id,
                    entries: vec![(det.frame_index, det.bbox)],
                    active: true,
                    misses: 0,
                });
                self.next_id += 1;
            }
        }
        Ok(())
    }
}

/// One CSV per video, the common MOT layout: frame,id,x,y,w,h,confidence.
pub fn tracks_to_csv(tracks: &[Track]) -> String {
    let mut rows: Vec<(usize, u32, BBox)> = Vec::new();
    for t in tracks {
        for (frame, b) in &t.entries {
            rows.push((*frame, t.id, *b));
        }
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut s = String::from("frame,id,x,y,w,h,confidence\n");
    for (frame, id, b) in rows {
        s.push_str(&format!("{},{},{},{},{},{},1\n", frame, id, b.x, b.y, b.w, b.h));
    }
    s
}
