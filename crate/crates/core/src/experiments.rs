//! Experiment pipelines shared by the CLI and the acceptance suite: dataset
//! construction, multi-epoch training drivers, accuracy curves over budgets,
//! saccade trace evaluation, and tracking under masks.

use thiserror::Error;

use crate::datagen::{generate_video, DatagenError, GroundTruth, SceneConfig, Video};
use crate::metrics::{auroc, clear_mot, FrameObjects, MetricError, MetricReport, MotTally};
use crate::models::GruConfig;
use crate::params::{AdamConfig, ParamStore};
use crate::policy::{random_select, Budget, PolicyError};
use crate::saccade::{
    eval_classifier, infer_saccade_video, train_classifier_epoch, train_saccade_epoch,
    ClassifierEpochStats, ClassifierKind, EpisodeConfig, EpochStats, LabelSource, LabeledFrame,
    MaskPolicy, SaccadeError, SaccadeTrace,
};
use crate::sensor::{CostModel, PatchGrid, PatchMask, SensorError};
use crate::tracking::{
    detect_on_mask, objectness_labels, objectness_train_step, AssociateConfig, Track,
    TrackerState, TrackingError,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("budgets must be sorted ascending, got {0:?}")]
    UnsortedBudgets(Vec<f64>),
    #[error("no frame in the trace set had both classes of patch labels")]
    NoScorableFrames,
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Saccade(#[from] SaccadeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
}

/// Single-object single-frame scenes labeled by the object's class: the
/// synthetic stand-in for an image classification set.
pub fn make_classification_set(
    base: &SceneConfig,
    n: usize,
    base_seed: u64,
) -> Result<Vec<LabeledFrame>, ExperimentError> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let config = SceneConfig {
            n_frames: 1,
            objects_min: 1,
            objects_max: 1,
            seed: base_seed + i as u64,
            ..base.clone()
        };
        let (video, gt) = generate_video(&config)?;
        out.push(LabeledFrame {
            frame: video.frames.into_iter().next().expect("one frame"),
            label: gt.frames[0].attended_class.index(),
            attention: Some(gt.frames[0].attention.clone()),
            heatmap: None,
        });
    }
    Ok(out)
}

/// Multi-epoch classifier training; returns per-epoch stats.
#[allow(clippy::too_many_arguments)]
pub fn train_classifier(
    data: &[LabeledFrame],
    store: &mut ParamStore,
    kind: &ClassifierKind,
    grid: &PatchGrid,
    policy: MaskPolicy,
    budget: Budget,
    adam: &AdamConfig,
    epochs: usize,
    seed: u64,
) -> Result<Vec<ClassifierEpochStats>, ExperimentError> {
    if data.is_empty() {
        return Err(ExperimentError::EmptyDataset);
    }
    let mut history = Vec::with_capacity(epochs);
    for e in 0..epochs {
        history.push(train_classifier_epoch(
            data,
            store,
            kind,
            grid,
            policy,
            budget,
            adam,
            seed.wrapping_add(e as u64),
        )?);
    }
    Ok(history)
}

/// Mean top-1 accuracy per budget fraction under one masking policy.
pub fn accuracy_curve(
    data: &[LabeledFrame],
    store: &ParamStore,
    kind: &ClassifierKind,
    grid: &PatchGrid,
    policy: MaskPolicy,
    budgets: &[f64],
    seed: u64,
) -> Result<MetricReport, ExperimentError> {
    if data.is_empty() {
        return Err(ExperimentError::EmptyDataset);
    }
    if budgets.windows(2).any(|w| w[0] > w[1]) {
        return Err(ExperimentError::UnsortedBudgets(budgets.to_vec()));
    }
    let mut values = Vec::with_capacity(budgets.len());
    for &b in budgets {
        values.push(eval_classifier(
            data,
            store,
            kind,
            grid,
            policy,
            Budget::Fraction(b),
            seed,
        )?);
    }
    let mut report = MetricReport::new("accuracy", budgets.to_vec(), values);
    report.metadata.insert("policy".into(), format!("{policy:?}").to_lowercase());
    report.metadata.insert("seed".into(), seed.to_string());
    Ok(report)
}

/// Multi-epoch saccade training; returns per-epoch stats.
#[allow(clippy::too_many_arguments)]
pub fn train_saccade(
    videos: &[(Video, GroundTruth)],
    store: &mut ParamStore,
    gru_cfg: &GruConfig,
    grid: &PatchGrid,
    episode: &EpisodeConfig,
    adam: &AdamConfig,
    source: LabelSource,
    epochs: usize,
    seed: u64,
) -> Result<Vec<EpochStats>, ExperimentError> {
    if videos.is_empty() {
        return Err(ExperimentError::EmptyDataset);
    }
    let mut history = Vec::with_capacity(epochs);
    for e in 0..epochs {
        history.push(train_saccade_epoch(
            videos,
            store,
            gru_cfg,
            grid,
            episode,
            adam,
            source,
            seed.wrapping_add(e as u64),
        )?);
    }
    Ok(history)
}

/// Mean per-frame heatmap AUROC of a labeled trace. Frames without a heatmap
/// (frame 0) or with single-class labels are skipped.
pub fn trace_auroc(trace: &SaccadeTrace) -> Result<f64, ExperimentError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for tf in &trace.frames {
        let (Some(heat), Some(labels)) = (&tf.heatmap, &tf.labels) else {
            continue;
        };
        match auroc(heat, labels) {
            Ok(a) => {
                sum += a;
                n += 1;
            }
            Err(MetricError::SingleClass) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    if n == 0 {
        return Err(ExperimentError::NoScorableFrames);
    }
    Ok(sum / n as f64)
}

/// Mean AUROC over several labeled traces.
pub fn mean_trace_auroc(traces: &[SaccadeTrace]) -> Result<f64, ExperimentError> {
    if traces.is_empty() {
        return Err(ExperimentError::EmptyDataset);
    }
    let mut sum = 0.0;
    for t in traces {
        sum += trace_auroc(t)?;
    }
    Ok(sum / traces.len() as f64)
}

/// Train the logistic objectness head on fully sensed frames of the given
/// videos, with patch labels from ground-truth boxes.
pub fn train_objectness(
    videos: &[(Video, GroundTruth)],
    store: &mut ParamStore,
    grid: &PatchGrid,
    coverage: f64,
    adam: &AdamConfig,
    epochs: usize,
) -> Result<f64, ExperimentError> {
    if videos.is_empty() {
        return Err(ExperimentError::EmptyDataset);
    }
    let mut last = 0.0;
    for _ in 0..epochs {
        let mut total = 0.0;
        let mut n = 0usize;
        for (video, gt) in videos {
            for (frame, fgt) in video.frames.iter().zip(&gt.frames) {
                let boxes: Vec<_> = fgt.boxes.iter().map(|b| b.bbox).collect();
                let labels = objectness_labels(&boxes, grid, coverage);
                total += objectness_train_step(store, frame, grid, &labels, adam)?;
                n += 1;
            }
        }
        last = total / n.max(1) as f64;
    }
    Ok(last)
}

/// Per-frame sensing masks for a whole video.
pub enum MaskSchedule<'a> {
    /// Masks recorded in a saccade trace.
    Trace(&'a SaccadeTrace),
    /// Fresh random mask per frame; frame 0 fully sensed to match the
    /// saccade protocol.
    Random { budget: Budget, seed: u64 },
    Full,
}

impl MaskSchedule<'_> {
    pub fn mask_for(&self, frame_index: usize, n_patches: usize) -> Result<PatchMask, ExperimentError> {
        match self {
            MaskSchedule::Trace(trace) => {
                let tf = &trace.frames[frame_index];
                Ok(PatchMask::from_indices(n_patches, &tf.mask))
            }
            MaskSchedule::Random { budget, seed } => {
                if frame_index == 0 {
                    Ok(PatchMask::all_sensed(n_patches))
                } else {
                    Ok(random_select(
                        n_patches,
                        *budget,
                        seed ^ (frame_index as u64).wrapping_mul(0x9e3779b97f4a7c15),
                    )?)
                }
            }
            MaskSchedule::Full => Ok(PatchMask::all_sensed(n_patches)),
        }
    }
}

/// Detector + greedy tracker over one masked video.
pub fn track_video(
    video: &Video,
    grid: &PatchGrid,
    obj_store: &ParamStore,
    schedule: &MaskSchedule,
    assoc: &AssociateConfig,
) -> Result<Vec<Track>, ExperimentError> {
    let mut tracker = TrackerState::new();
    for (t, frame) in video.frames.iter().enumerate() {
        let mask = schedule.mask_for(t, grid.n_patches())?;
        let detections = detect_on_mask(frame, grid, &mask, obj_store)?;
        tracker.associate(&detections, assoc)?;
    }
    Ok(tracker.tracks)
}

/// Ground-truth tracks in the per-frame layout `clear_mot` consumes.
pub fn gt_frame_objects(gt: &GroundTruth) -> Vec<FrameObjects> {
    gt.frames
        .iter()
        .map(|fgt| fgt.boxes.iter().map(|b| (b.id, b.bbox)).collect())
        .collect()
}

/// Hypothesis tracks in the same layout.
pub fn tracks_to_frame_objects(tracks: &[Track], n_frames: usize) -> Vec<FrameObjects> {
    let mut out: Vec<FrameObjects> = vec![Vec::new(); n_frames];
    for t in tracks {
        for &(frame, b) in &t.entries {
            if frame < n_frames {
                out[frame].push((t.id, b));
            }
        }
    }
    out
}

/// Full tracking evaluation of one video under a mask schedule.
pub fn mot_under_masks(
    video: &Video,
    gt: &GroundTruth,
    grid: &PatchGrid,
    obj_store: &ParamStore,
    schedule: &MaskSchedule,
    assoc: &AssociateConfig,
    iou_min: f64,
) -> Result<(f64, f64, MotTally), ExperimentError> {
    let tracks = track_video(video, grid, obj_store, schedule, assoc)?;
    let hyp = tracks_to_frame_objects(&tracks, video.frames.len());
    let gt_objs = gt_frame_objects(gt);
    Ok(clear_mot(&gt_objs, &hyp, iou_min)?)
}

/// Run saccade inference over several videos and attach labels.
pub fn labeled_traces(
    videos: &[(Video, GroundTruth)],
    store: &ParamStore,
    gru_cfg: &GruConfig,
    grid: &PatchGrid,
    budget: Budget,
    tau_gt: f64,
    source: LabelSource,
) -> Result<Vec<SaccadeTrace>, ExperimentError> {
    let cost = CostModel::default();
    videos
        .iter()
        .map(|(video, gt)| {
            let mut trace = infer_saccade_video(video, store, gru_cfg, grid, budget, &cost)?;
            crate::saccade::attach_labels(&mut trace, gt, grid, tau_gt, source)?;
            Ok(trace)
        })
        .collect()
}
