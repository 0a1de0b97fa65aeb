//! Config-driven experiment runner. Every subcommand reads one TOML config
//! (plus `--set` overrides), derives all randomness from its seed, writes its
//! artifacts under the config's output directory and records a manifest.
//!
//! Exit codes: 0 success, 1 usage error, 2 config error, 3 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use saccade_core::config::{load_config, ConfigError, ExperimentConfig};
use saccade_core::datagen::{generate_videos, read_videos, write_videos, GroundTruth, Video};
use saccade_core::experiments::{
    accuracy_curve, labeled_traces, make_classification_set, mot_under_masks, train_classifier,
    train_objectness, train_saccade, trace_auroc, MaskSchedule,
};
use saccade_core::io::{emit_report, write_manifest, write_mask_json, write_pnm, ReportFormat, RunManifest};
use saccade_core::metrics::MetricReport;
use saccade_core::models::{
    init_dense, init_gru, init_objectness, init_vit, DenseConfig, GruConfig, ViTConfig,
};
use saccade_core::params::{AdamConfig, ParamStore};
use saccade_core::policy::{oracle_select, random_select, OracleMode};
use saccade_core::saccade::{
    write_trace, ClassifierKind, EpisodeConfig, MaskPolicy, SaccadeTrace,
};
use saccade_core::sensor::{partition, zero_fill, Frame, PatchGrid, PatchMask};
use saccade_core::tracking::{tracks_to_csv, AssociateConfig};

#[derive(Parser)]
#[command(name = "saccade", version, about = "Patch-selection experiments on synthetic video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. --set training.epochs=5. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic video dataset.
    GenData(Common),
    /// Train a classifier (vit or dense) under a masking policy.
    TrainClassifier(Common),
    /// Train the recurrent saccade predictor.
    TrainSaccade(Common),
    /// Accuracy over budgets for a trained classifier.
    EvalClassify(Common),
    /// Run saccade inference on held-out videos; report AUROC.
    EvalSaccade(Common),
    /// Detector + tracker under a mask schedule; report MOTA/MOTP.
    EvalTrack(Common),
    /// Dump zero-filled visualization frames for a policy.
    MaskDemo(Common),
}

#[derive(Debug)]
enum AppError {
    Config(String),
    Runtime(String),
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AppError::Config(m) => write!(f, "config error: {m}"),
            AppError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Config(e.to_string())
    }
}

fn rt(e: impl std::fmt::Display) -> AppError {
    AppError::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version are successful exits; anything else is usage
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (name, common) = match &cli.command {
        Command::GenData(c) => ("gen-data", c),
        Command::TrainClassifier(c) => ("train-classifier", c),
        Command::TrainSaccade(c) => ("train-saccade", c),
        Command::EvalClassify(c) => ("eval-classify", c),
        Command::EvalSaccade(c) => ("eval-saccade", c),
        Command::EvalTrack(c) => ("eval-track", c),
        Command::MaskDemo(c) => ("mask-demo", c),
    };
    match run(name, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ AppError::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(3)
        }
    }
}

struct Run {
    cfg: ExperimentConfig,
    out: PathBuf,
    outputs: Vec<String>,
}

impl Run {
    fn new(common: &Common) -> Result<Self, AppError> {
        let cfg = load_config(&common.config, &common.sets)?;
        let out = cfg.resolved_output_dir();
        std::fs::create_dir_all(&out).map_err(rt)?;
        Ok(Run {
            cfg,
            out,
            outputs: Vec::new(),
        })
    }

    fn path(&mut self, rel: &str) -> PathBuf {
        self.outputs.push(rel.to_string());
        self.out.join(rel)
    }

    fn grid(&self) -> Result<PatchGrid, AppError> {
        let scene = self.cfg.scene();
        let probe = Frame::zeros(scene.width, scene.height, scene.channels);
        partition(&probe, self.cfg.dataset.patch_size).map_err(rt)
    }

    fn videos(&self, n: usize, seed_offset: u64) -> Result<Vec<(Video, GroundTruth)>, AppError> {
        match &self.cfg.dataset.path {
            Some(path) => {
                let all = read_videos(path).map_err(rt)?;
                Ok(all.into_iter().take(n).collect())
            }
            None => generate_videos(&self.cfg.scene(), n, self.cfg.seed.wrapping_add(seed_offset))
                .map_err(rt),
        }
    }

    fn classifier_kind(&self, grid: &PatchGrid) -> Result<ClassifierKind, AppError> {
        let scene = self.cfg.scene();
        let m = &self.cfg.model;
        match m.kind.as_str() {
            "vit" => Ok(ClassifierKind::Vit(ViTConfig {
                patch_size: grid.patch_size,
                channels: scene.channels,
                embed_dim: m.embed_dim,
                heads: m.heads,
                blocks: m.blocks,
                classes: m.classes,
                max_patches: grid.n_patches(),
                mlp_hidden: m.mlp_hidden,
            })),
            "dense" => Ok(ClassifierKind::Dense(DenseConfig::for_frame(
                scene.width,
                scene.height,
                scene.channels,
                m.classes,
            ))),
            other => Err(AppError::Config(format!(
                "unknown model kind {other:?}: expected vit or dense"
            ))),
        }
    }

    fn gru_config(&self, grid: &PatchGrid) -> GruConfig {
        GruConfig::for_grid(
            self.cfg.scene().channels,
            grid.n_patches(),
            self.cfg.model.hidden_dim,
        )
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.cfg.training.lr,
            ..AdamConfig::default()
        }
    }

    fn checkpoint(&self) -> Result<ParamStore, AppError> {
        let path = self.cfg.eval.checkpoint.as_ref().ok_or_else(|| {
            AppError::Config("eval.checkpoint must point at a trained checkpoint".into())
        })?;
        ParamStore::load(path).map_err(rt)
    }

    fn finish(mut self, subcommand: &str) -> Result<(), AppError> {
        self.outputs.push("manifest.json".to_string());
        let manifest = RunManifest {
            subcommand: subcommand.to_string(),
            config: serde_json::to_value(&self.cfg).map_err(rt)?,
            seed: self.cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: self.outputs.clone(),
        };
        write_manifest(&manifest, &self.out.join("manifest.json")).map_err(rt)?;
        Ok(())
    }
}

fn epoch_report(name: &str, values: Vec<f64>) -> MetricReport {
    let axis = (1..=values.len()).map(|e| e as f64).collect();
    MetricReport::new(name, axis, values)
}

fn run(name: &str, common: &Common) -> Result<(), AppError> {
    let mut run = Run::new(common)?;
    match name {
        "gen-data" => {
            let sets = generate_videos(
                &run.cfg.scene(),
                run.cfg.dataset.n_videos,
                run.cfg.seed,
            )
            .map_err(rt)?;
            let dir = run.path("dataset");
            write_videos(&dir, &sets).map_err(rt)?;
            println!("wrote {} videos to {}", sets.len(), dir.display());
        }
        "train-classifier" => {
            let grid = run.grid()?;
            let kind = run.classifier_kind(&grid)?;
            let data = make_classification_set(
                &run.cfg.scene(),
                run.cfg.dataset.classify_frames,
                run.cfg.seed,
            )
            .map_err(rt)?;
            let mut store = ParamStore::new();
            match &kind {
                ClassifierKind::Vit(c) => init_vit(&mut store, c, run.cfg.seed),
                ClassifierKind::Dense(c) => init_dense(&mut store, c, run.cfg.seed),
            }
            let policy = run.cfg.policy.mask_policy()?;
            let budget = run.cfg.policy.budget()?;
            let history = train_classifier(
                &data,
                &mut store,
                &kind,
                &grid,
                policy,
                budget,
                &run.adam(),
                run.cfg.training.epochs,
                run.cfg.seed,
            )
            .map_err(rt)?;
            let acc = epoch_report("train_accuracy", history.iter().map(|h| h.accuracy).collect());
            let loss = epoch_report("train_loss", history.iter().map(|h| h.mean_loss).collect());
            emit_report(&acc, &run.path("train_accuracy.csv"), ReportFormat::Csv).map_err(rt)?;
            emit_report(&loss, &run.path("train_loss.csv"), ReportFormat::Csv).map_err(rt)?;
            store.save(&run.path("classifier.ckpt")).map_err(rt)?;
            if let Some(last) = history.last() {
                println!("final train accuracy {:.3}", last.accuracy);
            }
        }
        "train-saccade" => {
            let grid = run.grid()?;
            let gru_cfg = run.gru_config(&grid);
            let videos = run.videos(run.cfg.dataset.n_videos, 0)?;
            let mut store = ParamStore::new();
            init_gru(&mut store, &gru_cfg, run.cfg.seed);
            let episode = EpisodeConfig::new(run.cfg.policy.budget()?);
            let history = train_saccade(
                &videos,
                &mut store,
                &gru_cfg,
                &grid,
                &episode,
                &run.adam(),
                run.cfg.training.label_source()?,
                run.cfg.training.epochs,
                run.cfg.seed,
            )
            .map_err(rt)?;
            let loss = epoch_report("window_loss", history.iter().map(|h| h.mean_loss).collect());
            emit_report(&loss, &run.path("train_loss.csv"), ReportFormat::Csv).map_err(rt)?;
            store.save(&run.path("saccade.ckpt")).map_err(rt)?;
            if let Some(last) = history.last() {
                println!("final mean window loss {:.4}", last.mean_loss);
            }
        }
        "eval-classify" => {
            let grid = run.grid()?;
            let kind = run.classifier_kind(&grid)?;
            let store = run.checkpoint()?;
            let policy = run.cfg.policy.mask_policy()?;
            if policy == MaskPolicy::Learned {
                return Err(AppError::Config(
                    "learned policy is not available for eval-classify; evaluate traces with eval-saccade".into(),
                ));
            }
            // held-out frames: disjoint seed range from training
            let data = make_classification_set(
                &run.cfg.scene(),
                run.cfg.dataset.classify_frames,
                run.cfg.seed.wrapping_add(1_000_000),
            )
            .map_err(rt)?;
            let report = accuracy_curve(
                &data,
                &store,
                &kind,
                &grid,
                policy,
                &run.cfg.eval.budgets,
                run.cfg.seed,
            )
            .map_err(rt)?;
            emit_report(&report, &run.path("accuracy_curve.csv"), ReportFormat::Csv).map_err(rt)?;
            emit_report(&report, &run.path("accuracy_curve.json"), ReportFormat::Json).map_err(rt)?;
            for (b, v) in report.axis.iter().zip(&report.values) {
                println!("budget {b:.2}: accuracy {v:.3}");
            }
        }
        "eval-saccade" => {
            let grid = run.grid()?;
            let gru_cfg = run.gru_config(&grid);
            let store = run.checkpoint()?;
            let videos = run.videos(run.cfg.dataset.eval_videos, 500_000)?;
            let traces = labeled_traces(
                &videos,
                &store,
                &gru_cfg,
                &grid,
                run.cfg.policy.budget()?,
                0.1,
                run.cfg.training.label_source()?,
            )
            .map_err(rt)?;
            let mut aurocs = Vec::with_capacity(traces.len());
            for (i, trace) in traces.iter().enumerate() {
                write_trace(trace, &run.path(&format!("trace_{i:03}.jsonl"))).map_err(rt)?;
                aurocs.push(trace_auroc(trace).map_err(rt)?);
            }
            let mean = aurocs.iter().sum::<f64>() / aurocs.len() as f64;
            let axis = (0..aurocs.len()).map(|i| i as f64).collect();
            let mut report = MetricReport::new("heatmap_auroc", axis, aurocs);
            report.metadata.insert("mean".into(), format!("{mean}"));
            emit_report(&report, &run.path("auroc.csv"), ReportFormat::Csv).map_err(rt)?;
            emit_report(&report, &run.path("auroc.json"), ReportFormat::Json).map_err(rt)?;
            println!("mean heatmap AUROC {mean:.3}");
        }
        "eval-track" => {
            let grid = run.grid()?;
            let scene = run.cfg.scene();
            let train_videos = run.videos(run.cfg.dataset.n_videos, 0)?;
            let eval_videos = run.videos(run.cfg.dataset.eval_videos, 500_000)?;

            let mut obj = ParamStore::new();
            init_objectness(&mut obj, grid.patch_size, scene.channels, run.cfg.seed);
            let obj_adam = AdamConfig {
                lr: run.cfg.training.objectness_lr,
                ..AdamConfig::default()
            };
            train_objectness(
                &train_videos,
                &mut obj,
                &grid,
                0.3,
                &obj_adam,
                run.cfg.training.objectness_epochs,
            )
            .map_err(rt)?;

            let policy = run.cfg.policy.mask_policy()?;
            let budget = run.cfg.policy.budget()?;
            // learned masks come from the saccade predictor's own traces
            let traces: Option<Vec<SaccadeTrace>> = if policy == MaskPolicy::Learned {
                let store = run.checkpoint()?;
                let gru_cfg = run.gru_config(&grid);
                Some(
                    labeled_traces(
                        &eval_videos,
                        &store,
                        &gru_cfg,
                        &grid,
                        budget,
                        0.1,
                        run.cfg.training.label_source()?,
                    )
                    .map_err(rt)?,
                )
            } else {
                None
            };

            let assoc = AssociateConfig::default();
            let mut motas = Vec::new();
            let mut motps = Vec::new();
            for (i, (video, gt)) in eval_videos.iter().enumerate() {
                let schedule = match (&traces, policy) {
                    (Some(t), _) => MaskSchedule::Trace(&t[i]),
                    (None, MaskPolicy::Full) => MaskSchedule::Full,
                    _ => MaskSchedule::Random {
                        budget,
                        seed: run.cfg.seed.wrapping_add(i as u64),
                    },
                };
                let tracks = saccade_core::experiments::track_video(video, &grid, &obj, &schedule, &assoc)
                    .map_err(rt)?;
                std::fs::write(run.path(&format!("tracks_{i:03}.csv")), tracks_to_csv(&tracks))
                    .map_err(rt)?;
                let (mota, motp, _) =
                    mot_under_masks(video, gt, &grid, &obj, &schedule, &assoc, run.cfg.eval.iou_min)
                        .map_err(rt)?;
                motas.push(mota);
                motps.push(motp);
            }
            let axis: Vec<f64> = (0..motas.len()).map(|i| i as f64).collect();
            let mean_mota = motas.iter().sum::<f64>() / motas.len().max(1) as f64;
            let mean_motp = motps.iter().sum::<f64>() / motps.len().max(1) as f64;
            let mut mota_rep = MetricReport::new("mota", axis.clone(), motas);
            mota_rep.metadata.insert("mean".into(), format!("{mean_mota}"));
            let mut motp_rep = MetricReport::new("motp", axis, motps);
            motp_rep.metadata.insert("mean".into(), format!("{mean_motp}"));
            emit_report(&mota_rep, &run.path("mota.csv"), ReportFormat::Csv).map_err(rt)?;
            emit_report(&motp_rep, &run.path("motp.csv"), ReportFormat::Csv).map_err(rt)?;
            println!("mean MOTA {mean_mota:.3}, mean MOTP {mean_motp:.3}");
        }
        "mask-demo" => {
            let grid = run.grid()?;
            let videos = run.videos(1, 0)?;
            let (video, gt) = &videos[0];
            let policy = run.cfg.policy.mask_policy()?;
            let budget = run.cfg.policy.budget()?;
            let n = grid.n_patches();
            for (t, frame) in video.frames.iter().enumerate() {
                let mask = match policy {
                    MaskPolicy::Full => PatchMask::all_sensed(n),
                    MaskPolicy::Random => {
                        random_select(n, budget, run.cfg.seed.wrapping_add(t as u64)).map_err(rt)?
                    }
                    MaskPolicy::Oracle => {
                        let att: Vec<f64> =
                            gt.frames[t].attention.iter().map(|&v| v as f64).collect();
                        let sal = Frame::new(grid.frame_width, grid.frame_height, 1, att, t)
                            .map_err(rt)?;
                        oracle_select(&sal, &grid, OracleMode::Budget(budget)).map_err(rt)?
                    }
                    MaskPolicy::Learned => {
                        return Err(AppError::Config(
                            "mask-demo supports random, oracle and full policies".into(),
                        ))
                    }
                };
                let filled = zero_fill(frame, &grid, &mask).map_err(rt)?;
                let ext = if frame.channels == 1 { "pgm" } else { "ppm" };
                write_pnm(&filled, &run.path(&format!("demo_{t:06}.{ext}"))).map_err(rt)?;
                write_mask_json(&mask, &run.path(&format!("demo_{t:06}.mask.json"))).map_err(rt)?;
            }
            println!("wrote {} demo frames", video.frames.len());
        }
        other => unreachable!("unknown subcommand {other}"),
    }
    run.finish(name)
}
