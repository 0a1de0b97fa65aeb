//! Saccade policy training and inference: a recurrent predictor learns which
//! patches will matter next, trained in 4-frame windows (one fully sensed
//! frame, three predicted ones) and run closed-loop at test time where only
//! the first frame of a video is fully sensed. Also hosts classifier
//! training on masked data.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{FrameGt, GroundTruth, Video};
use crate::graph::{Graph, NumericsError, TensorId};
use crate::models::{
    dense_forward, frame_features, gru_step, vit_forward, DenseConfig, GruConfig, ViTConfig,
};
use crate::params::{bind_params, harvest_grads, AdamConfig, ParamStore};
use crate::policy::{oracle_select, random_select, topk_select, Budget, Heatmap, OracleMode, PolicyError};
use crate::sensor::{
    extract_tokens, readout_cost, zero_fill, BandwidthReport, CostModel, Frame, PatchGrid,
    PatchMask, SensorError,
};

#[derive(Debug, Error)]
pub enum SaccadeError {
    #[error("invalid episode config: horizon {horizon} != period {period} - 1")]
    BadEpisode { period: usize, horizon: usize },
    #[error("attention map has {got} pixels, grid expects {want}")]
    MapMismatch { got: usize, want: usize },
    #[error("empty video")]
    EmptyVideo,
    #[error("policy {0:?} needs {1} attached to each frame")]
    MissingSide(MaskPolicy, &'static str),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error("trace io on {path}: {reason}")]
    TraceIo { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Every `period`-th training frame is fully sensed (state reset point).
    pub period: usize,
    /// Prediction steps per window; must equal `period - 1`.
    pub horizon: usize,
    pub budget: Budget,
    /// Salient-pixel fraction above which a patch counts as ground truth.
    pub tau_gt: f64,
}

impl EpisodeConfig {
    pub fn new(budget: Budget) -> Self {
        EpisodeConfig {
            period: 4,
            horizon: 3,
            budget,
            tau_gt: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), SaccadeError> {
        if self.period < 2 || self.horizon != self.period - 1 {
            return Err(SaccadeError::BadEpisode {
                period: self.period,
                horizon: self.horizon,
            });
        }
        Ok(())
    }
}

/// Binary per-patch labels from a per-pixel attention map: 1 iff the salient
/// fraction of the patch is at least `tau_gt`.
pub fn patch_labels(
    attention: &[u8],
    grid: &PatchGrid,
    tau_gt: f64,
) -> Result<Vec<f64>, SaccadeError> {
    let want = grid.frame_width * grid.frame_height;
    if attention.len() != want {
        return Err(SaccadeError::MapMismatch {
            got: attention.len(),
            want,
        });
    }
    let p = grid.patch_size;
    let area = (p * p) as f64;
    let mut out = Vec::with_capacity(grid.n_patches());
    for i in 0..grid.n_patches() {
        let (x0, y0) = grid.patch_origin(i);
        let mut salient = 0usize;
        for dy in 0..p {
            for dx in 0..p {
                salient += attention[(y0 + dy) * grid.frame_width + (x0 + dx)] as usize;
            }
        }
        out.push((salient as f64 / area >= tau_gt) as u8 as f64);
    }
    Ok(out)
}

/// Which per-pixel map supplies the saccade training labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    /// Only the currently attended object's silhouette.
    AttendedMask,
    /// Any foreground object (all instances), the proxy used for tracking.
    AllForeground,
}

fn label_map(fgt: &FrameGt, source: LabelSource) -> Vec<u8> {
    match source {
        LabelSource::AttendedMask => fgt.attention.clone(),
        LabelSource::AllForeground => fgt.instance_map.iter().map(|&id| (id != 0) as u8).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub n_windows: usize,
    pub skipped_videos: usize,
}

fn sigmoid_probs(g: &mut Graph, logits: TensorId) -> Result<TensorId, NumericsError> {
    g.sigmoid(logits)
}

/// One training epoch over 4-frame windows (Fig.-5-style schedule): reset
/// state, consume a fully sensed frame, then for each of the `horizon` next
/// frames predict a heatmap, take BCE against that frame's patch labels,
/// sense its top-k patches and feed them back in (closed loop). The window
/// loss is the sum of the step BCEs; one optimizer step per window.
pub fn train_saccade_epoch(
    videos: &[(Video, GroundTruth)],
    store: &mut ParamStore,
    gru_cfg: &GruConfig,
    grid: &PatchGrid,
    episode: &EpisodeConfig,
    adam: &AdamConfig,
    label_source: LabelSource,
    epoch_seed: u64,
) -> Result<EpochStats, SaccadeError> {
    episode.validate()?;
    let n = grid.n_patches();
    let k_budget = episode.budget;

    let mut order: Vec<usize> = (0..videos.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));

    let mut total_loss = 0.0;
    let mut n_windows = 0usize;
    let mut skipped = 0usize;
    for &vi in &order {
        let (video, gt) = &videos[vi];
        if video.frames.len() < episode.period {
            skipped += 1;
            continue;
        }
        let windows = video.frames.len() / episode.period;
        for w in 0..windows {
            let t0 = w * episode.period;
            let mut g = Graph::new();
            let bound = bind_params(&mut g, store)?;
            let mut h = bound.id("gru.h0")?;

            let full = PatchMask::all_sensed(n);
            let x0 = frame_features(&video.frames[t0], grid, &full)?;
            let x = g.constant(1, gru_cfg.flat_input(), x0)?;
            let (h_new, mut logits) = gru_step(&mut g, &bound, gru_cfg, x, h)?;
            h = h_new;

            let mut loss: Option<TensorId> = None;
            for s in 1..=episode.horizon {
                let t = t0 + s;
                let labels = patch_labels(&label_map(&gt.frames[t], label_source), grid, episode.tau_gt)?;
                let probs = sigmoid_probs(&mut g, logits)?;
                let step_loss = g.bce(probs, &labels)?;
                loss = Some(match loss {
                    Some(acc) => g.add(acc, step_loss)?,
                    None => step_loss,
                });

                if s < episode.horizon {
                    let heat = Heatmap::new(g.value(probs).to_vec())?;
                    let mask = topk_select(&heat, k_budget)?;
                    let feats = frame_features(&video.frames[t], grid, &mask)?;
                    let x = g.constant(1, gru_cfg.flat_input(), feats)?;
                    let (h_new, l) = gru_step(&mut g, &bound, gru_cfg, x, h)?;
                    h = h_new;
                    logits = l;
                }
            }

            let loss = loss.expect("horizon >= 1");
            total_loss += g.value(loss)[0];
            n_windows += 1;
            g.backward(loss)?;
            harvest_grads(&g, &bound, store);
            store.adam_step(adam)?;
            store.clear_grads();
        }
    }
    Ok(EpochStats {
        mean_loss: if n_windows == 0 { 0.0 } else { total_loss / n_windows as f64 },
        n_windows,
        skipped_videos: skipped,
    })
}

/// One frame of a saccade inference trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFrame {
    pub frame_index: usize,
    /// Sensed patch indices, ascending.
    pub mask: Vec<usize>,
    /// Per-patch probabilities that produced this frame's mask (absent on
    /// frame 0, which is fully sensed by protocol).
    pub heatmap: Option<Vec<f64>>,
    pub bandwidth: BandwidthReport,
    /// Ground-truth patch labels, attached only for evaluation.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub labels: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SaccadeTrace {
    pub frames: Vec<TraceFrame>,
}

impl SaccadeTrace {
    /// Total pixels read across the traced video.
    pub fn total_pixels_read(&self) -> u64 {
        self.frames.iter().map(|f| f.bandwidth.pixels_read).sum()
    }
}

/// Closed-loop test protocol: state reset once, frame 0 fully sensed, every
/// later frame sensed through the top-k of the predictor's own heatmap.
/// Consumes no ground truth.
pub fn infer_saccade_video(
    video: &Video,
    store: &ParamStore,
    gru_cfg: &GruConfig,
    grid: &PatchGrid,
    budget: Budget,
    cost: &CostModel,
) -> Result<SaccadeTrace, SaccadeError> {
    if video.frames.is_empty() {
        return Err(SaccadeError::EmptyVideo);
    }
    let n = grid.n_patches();
    let channels = video.frames[0].channels;

    let mut g = Graph::new();
    let bound = bind_params(&mut g, store)?;
    let mut h = bound.id("gru.h0")?;
    let mut trace = SaccadeTrace::default();
    let mut next_heatmap: Option<Vec<f64>> = None;

    for (t, frame) in video.frames.iter().enumerate() {
        let (mask, heatmap) = match &next_heatmap {
            None => (PatchMask::all_sensed(n), None),
            Some(probs) => {
                let heat = Heatmap::new(probs.clone())?;
                (topk_select(&heat, budget)?, Some(probs.clone()))
            }
        };
        let bandwidth = readout_cost(&mask, grid, channels, cost)?;

        let feats = frame_features(frame, grid, &mask)?;
        let x = g.constant(1, gru_cfg.flat_input(), feats)?;
        let (h_new, logits) = gru_step(&mut g, &bound, gru_cfg, x, h)?;
        h = h_new;
        let probs = g.sigmoid(logits)?;
        next_heatmap = Some(g.value(probs).to_vec());

        trace.frames.push(TraceFrame {
            frame_index: t,
            mask: mask.sensed_indices(),
            heatmap,
            bandwidth,
            labels: None,
        });
    }
    Ok(trace)
}

/// Attach ground-truth patch labels to an existing trace for evaluation.
pub fn attach_labels(
    trace: &mut SaccadeTrace,
    gt: &GroundTruth,
    grid: &PatchGrid,
    tau_gt: f64,
    source: LabelSource,
) -> Result<(), SaccadeError> {
    for tf in trace.frames.iter_mut() {
        let fgt = &gt.frames[tf.frame_index];
        tf.labels = Some(patch_labels(&label_map(fgt, source), grid, tau_gt)?);
    }
    Ok(())
}

/// Trace files are JSON lines, one frame record per line.
pub fn write_trace(trace: &SaccadeTrace, path: &Path) -> Result<(), SaccadeError> {
    let err = |e: std::io::Error| SaccadeError::TraceIo {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(err)?);
    for frame in &trace.frames {
        let line = serde_json::to_string(frame).expect("trace frame serializes");
        writeln!(f, "{line}").map_err(err)?;
    }
    f.flush().map_err(err)
}

pub fn read_trace(path: &Path) -> Result<SaccadeTrace, SaccadeError> {
    let err = |reason: String| SaccadeError::TraceIo {
        path: path.display().to_string(),
        reason,
    };
    let f = std::fs::File::open(path).map_err(|e| err(e.to_string()))?;
    let mut trace = SaccadeTrace::default();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        trace
            .frames
            .push(serde_json::from_str(&line).map_err(|e| err(e.to_string()))?);
    }
    Ok(trace)
}

// ---------------------------------------------------------------------------
// classifier training on masked data

/// How patches are chosen before the classifier sees a frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskPolicy {
    Random,
    Oracle,
    Learned,
    Full,
}

/// One classification example: a frame, its class label, and the side
/// information some policies need.
#[derive(Debug, Clone)]
pub struct LabeledFrame {
    pub frame: Frame,
    pub label: usize,
    /// Per-pixel saliency for the oracle policy.
    pub attention: Option<Vec<u8>>,
    /// Per-patch probabilities for the learned policy.
    pub heatmap: Option<Vec<f64>>,
}

/// Which classifier consumes the masked frame.
#[derive(Debug, Clone)]
pub enum ClassifierKind {
    /// Token-based: sees sensed patches only.
    Vit(ViTConfig),
    /// Dense baseline: sees the zero-filled full frame.
    Dense(DenseConfig),
}

fn policy_mask(
    example: &LabeledFrame,
    index: usize,
    grid: &PatchGrid,
    policy: MaskPolicy,
    budget: Budget,
    seed: u64,
) -> Result<PatchMask, SaccadeError> {
    let n = grid.n_patches();
    match policy {
        MaskPolicy::Full => Ok(PatchMask::all_sensed(n)),
        MaskPolicy::Random => {
            // per-example stream so masks are independent yet reproducible
            Ok(random_select(n, budget, seed ^ (index as u64).wrapping_mul(0x9e3779b97f4a7c15))?)
        }
        MaskPolicy::Oracle => {
            let att = example
                .attention
                .as_ref()
                .ok_or(SaccadeError::MissingSide(policy, "a per-pixel attention map"))?;
            let data: Vec<f64> = att.iter().map(|&v| v as f64).collect();
            let saliency = Frame::new(grid.frame_width, grid.frame_height, 1, data, 0)?;
            Ok(oracle_select(&saliency, grid, OracleMode::Budget(budget))?)
        }
        MaskPolicy::Learned => {
            let heat = example
                .heatmap
                .as_ref()
                .ok_or(SaccadeError::MissingSide(policy, "a per-patch heatmap"))?;
            Ok(topk_select(&Heatmap::new(heat.clone())?, budget)?)
        }
    }
}

fn classifier_logits(
    g: &mut Graph,
    store: &ParamStore,
    kind: &ClassifierKind,
    grid: &PatchGrid,
    frame: &Frame,
    mask: &PatchMask,
) -> Result<(TensorId, crate::params::Bound), SaccadeError> {
    let bound = bind_params(g, store)?;
    let logits = match kind {
        ClassifierKind::Vit(cfg) => {
            let tokens = extract_tokens(frame, grid, mask)?;
            vit_forward(g, &bound, cfg, &tokens)?
        }
        ClassifierKind::Dense(cfg) => {
            let filled = zero_fill(frame, grid, mask)?;
            dense_forward(g, &bound, cfg, &filled)?
        }
    };
    Ok((logits, bound))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpochStats {
    pub mean_loss: f64,
    pub accuracy: f64,
}

/// One epoch of classifier training under a masking policy: one graph and
/// one optimizer step per example, examples visited in a seeded shuffle.
/// Returns mean cross-entropy and training accuracy.
#[allow(clippy::too_many_arguments)]
pub fn train_classifier_epoch(
    data: &[LabeledFrame],
    store: &mut ParamStore,
    kind: &ClassifierKind,
    grid: &PatchGrid,
    policy: MaskPolicy,
    budget: Budget,
    adam: &AdamConfig,
    epoch_seed: u64,
) -> Result<ClassifierEpochStats, SaccadeError> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));

    let mut total_loss = 0.0;
    let mut correct = 0usize;
    for &i in &order {
        let example = &data[i];
        let mask = policy_mask(example, i, grid, policy, budget, epoch_seed)?;
        let mut g = Graph::new();
        let (logits, bound) = classifier_logits(&mut g, store, kind, grid, &example.frame, &mask)?;
        if argmax(g.value(logits)) == example.label {
            correct += 1;
        }
        let loss = g.cross_entropy(logits, &[example.label])?;
        total_loss += g.value(loss)[0];
        g.backward(loss)?;
        harvest_grads(&g, &bound, store);
        store.adam_step(adam)?;
        store.clear_grads();
    }
    let n = data.len().max(1) as f64;
    Ok(ClassifierEpochStats {
        mean_loss: total_loss / n,
        accuracy: correct as f64 / n,
    })
}

/// Accuracy of a trained classifier under a masking policy; no updates.
pub fn eval_classifier(
    data: &[LabeledFrame],
    store: &ParamStore,
    kind: &ClassifierKind,
    grid: &PatchGrid,
    policy: MaskPolicy,
    budget: Budget,
    seed: u64,
) -> Result<f64, SaccadeError> {
    let mut correct = 0usize;
    for (i, example) in data.iter().enumerate() {
        let mask = policy_mask(example, i, grid, policy, budget, seed)?;
        let mut g = Graph::new();
        let (logits, _) = classifier_logits(&mut g, store, kind, grid, &example.frame, &mask)?;
        if argmax(g.value(logits)) == example.label {
            correct += 1;
        }
    }
    if data.is_empty() {
        return Err(SaccadeError::EmptyVideo);
    }
    Ok(correct as f64 / data.len() as f64)
}
