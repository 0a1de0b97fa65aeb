//! TOML experiment configuration shared by all CLI subcommands. The seed is
//! mandatory; every other knob has a documented default. Command-line
//! `--set section.key=value` overrides are applied to the parsed document
//! before deserialization.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::SceneConfig;
use crate::policy::Budget;
use crate::saccade::{LabelSource, MaskPolicy};

/// Environment variable that reroots relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "SACCADE_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Unreadable { path: String, reason: String },
    #[error("malformed config {path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error("bad --set override {0:?}: expected key.path=value")]
    BadOverride(String),
    #[error("unknown policy {0:?}: expected random, oracle, learned or full")]
    BadPolicy(String),
    #[error("unknown model kind {0:?}: expected vit or dense")]
    BadModelKind(String),
    #[error("unknown label source {0:?}: expected attended-mask or all-foreground")]
    BadLabelSource(String),
    #[error("config sets both budget_fraction and budget_count")]
    AmbiguousBudget,
}

fn default_n_videos() -> usize {
    10
}
fn default_eval_videos() -> usize {
    5
}
fn default_classify_frames() -> usize {
    200
}
fn default_patch_size() -> usize {
    8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Existing dataset directory; when unset, scenes are generated.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_n_videos")]
    pub n_videos: usize,
    #[serde(default = "default_eval_videos")]
    pub eval_videos: usize,
    #[serde(default = "default_classify_frames")]
    pub classify_frames: usize,
    #[serde(default = "default_patch_size")]
    pub patch_size: usize,
    #[serde(default)]
    pub scene: SceneConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            path: None,
            n_videos: default_n_videos(),
            eval_videos: default_eval_videos(),
            classify_frames: default_classify_frames(),
            patch_size: default_patch_size(),
            scene: SceneConfig::default(),
        }
    }
}

fn default_model_kind() -> String {
    "vit".into()
}
fn default_embed_dim() -> usize {
    16
}
fn default_heads() -> usize {
    2
}
fn default_blocks() -> usize {
    1
}
fn default_mlp_hidden() -> usize {
    32
}
fn default_hidden_dim() -> usize {
    32
}
fn default_classes() -> usize {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// "vit" or "dense" for classifiers; the saccade predictor is always the
    /// recurrent model.
    #[serde(default = "default_model_kind")]
    pub kind: String,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    #[serde(default = "default_mlp_hidden")]
    pub mlp_hidden: usize,
    /// Recurrent state size of the saccade predictor.
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: default_model_kind(),
            embed_dim: default_embed_dim(),
            heads: default_heads(),
            blocks: default_blocks(),
            mlp_hidden: default_mlp_hidden(),
            hidden_dim: default_hidden_dim(),
            classes: default_classes(),
        }
    }
}

fn default_policy_name() -> String {
    "random".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    /// random, oracle, learned or full.
    #[serde(default = "default_policy_name")]
    pub name: String,
    #[serde(default)]
    pub budget_fraction: Option<f64>,
    #[serde(default)]
    pub budget_count: Option<usize>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            name: default_policy_name(),
            budget_fraction: None,
            budget_count: None,
        }
    }
}

impl PolicyConfig {
    pub fn mask_policy(&self) -> Result<MaskPolicy, ConfigError> {
        match self.name.as_str() {
            "random" => Ok(MaskPolicy::Random),
            "oracle" => Ok(MaskPolicy::Oracle),
            "learned" => Ok(MaskPolicy::Learned),
            "full" => Ok(MaskPolicy::Full),
            other => Err(ConfigError::BadPolicy(other.to_string())),
        }
    }

    /// Defaults to a 0.3 fraction when neither field is set.
    pub fn budget(&self) -> Result<Budget, ConfigError> {
        match (self.budget_fraction, self.budget_count) {
            (Some(_), Some(_)) => Err(ConfigError::AmbiguousBudget),
            (Some(f), None) => Ok(Budget::Fraction(f)),
            (None, Some(k)) => Ok(Budget::Count(k)),
            (None, None) => Ok(Budget::Fraction(0.3)),
        }
    }
}

fn default_epochs() -> usize {
    10
}
fn default_lr() -> f64 {
    1e-3
}
fn default_label_source() -> String {
    "attended-mask".into()
}
fn default_objectness_epochs() -> usize {
    20
}
fn default_objectness_lr() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_label_source")]
    pub label_source: String,
    #[serde(default = "default_objectness_epochs")]
    pub objectness_epochs: usize,
    #[serde(default = "default_objectness_lr")]
    pub objectness_lr: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: default_epochs(),
            lr: default_lr(),
            label_source: default_label_source(),
            objectness_epochs: default_objectness_epochs(),
            objectness_lr: default_objectness_lr(),
        }
    }
}

impl TrainingConfig {
    pub fn label_source(&self) -> Result<LabelSource, ConfigError> {
        match self.label_source.as_str() {
            "attended-mask" => Ok(LabelSource::AttendedMask),
            "all-foreground" => Ok(LabelSource::AllForeground),
            other => Err(ConfigError::BadLabelSource(other.to_string())),
        }
    }
}

fn default_budgets() -> Vec<f64> {
    vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
}
fn default_iou_min() -> f64 {
    0.3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Checkpoint written by a prior training run.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_budgets")]
    pub budgets: Vec<f64>,
    #[serde(default = "default_iou_min")]
    pub iou_min: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            checkpoint: None,
            budgets: default_budgets(),
            iou_min: default_iou_min(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Mandatory; every random choice in a run flows from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    /// Output directory with the optional environment root applied to
    /// relative paths.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => {
                PathBuf::from(root).join(&self.output_dir)
            }
            _ => self.output_dir.clone(),
        }
    }

    /// Scene config with the experiment seed folded in.
    pub fn scene(&self) -> SceneConfig {
        SceneConfig {
            seed: self.seed,
            ..self.dataset.scene.clone()
        }
    }
}

fn apply_override(doc: &mut toml::Value, spec: &str) -> Result<(), ConfigError> {
    let bad = || ConfigError::BadOverride(spec.to_string());
    let (key_path, raw_value) = spec.split_once('=').ok_or_else(bad)?;
    let keys: Vec<&str> = key_path.split('.').collect();
    if keys.is_empty() || keys.iter().any(|k| k.is_empty()) {
        return Err(bad());
    }
    // value parsed as TOML when possible, else taken as a string
    let value: toml::Value = format!("v = {raw_value}")
        .parse::<toml::Value>()
        .ok()
        .and_then(|t| t.get("v").cloned())
        .unwrap_or_else(|| toml::Value::String(raw_value.to_string()));

    let mut node = doc;
    for k in &keys[..keys.len() - 1] {
        let table = node.as_table_mut().ok_or_else(bad)?;
        node = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node.as_table_mut().ok_or_else(bad)?;
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Parse a config file and apply `--set` overrides.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_config(&text, overrides, &path.display().to_string())
}

pub fn parse_config(
    text: &str,
    overrides: &[String],
    origin: &str,
) -> Result<ExperimentConfig, ConfigError> {
    let mut doc: toml::Value = text.parse().map_err(|e: toml::de::Error| ConfigError::Malformed {
        path: origin.to_string(),
        reason: e.to_string(),
    })?;
    for spec in overrides {
        apply_override(&mut doc, spec)?;
    }
    doc.try_into().map_err(|e: toml::de::Error| ConfigError::Malformed {
        path: origin.to_string(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seed = 7\noutput_dir = \"out\"\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL, &[], "test").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.dataset.patch_size, 8);
        assert_eq!(cfg.model.kind, "vit");
        assert_eq!(cfg.policy.budget().unwrap(), Budget::Fraction(0.3));
        assert_eq!(cfg.training.epochs, 10);
        assert_eq!(cfg.eval.budgets.len(), 10);
    }

    #[test]
    fn missing_seed_is_an_error() {
        let err = parse_config("output_dir = \"out\"\n", &[], "test").unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let sets = vec![
            "training.epochs=3".to_string(),
            "policy.name=oracle".to_string(),
            "dataset.scene.n_frames=9".to_string(),
            "seed=99".to_string(),
        ];
        let cfg = parse_config(MINIMAL, &sets, "test").unwrap();
        assert_eq!(cfg.training.epochs, 3);
        assert_eq!(cfg.policy.name, "oracle");
        assert_eq!(cfg.dataset.scene.n_frames, 9);
        assert_eq!(cfg.seed, 99);
    }

    #[test]
    fn bad_override_is_rejected() {
        assert!(matches!(
            parse_config(MINIMAL, &["no-equals-sign".to_string()], "test"),
            Err(ConfigError::BadOverride(_))
        ));
    }

    #[test]
    fn unknown_keys_name_the_problem() {
        let err = parse_config("seed = 1\noutput_dir = \"o\"\n[training]\nepocsh = 2\n", &[], "t")
            .unwrap_err()
            .to_string();
        assert!(err.contains("epocsh"), "{err}");
    }

    #[test]
    fn string_override_without_quotes_still_parses() {
        let cfg = parse_config(MINIMAL, &["policy.name=full".to_string()], "t").unwrap();
        assert_eq!(cfg.policy.name, "full");
        assert_eq!(cfg.policy.mask_policy().unwrap(), MaskPolicy::Full);
    }

    #[test]
    fn ambiguous_budget_rejected() {
        let cfg = parse_config(
            MINIMAL,
            &["policy.budget_fraction=0.3".into(), "policy.budget_count=4".into()],
            "t",
        )
        .unwrap();
        assert!(matches!(cfg.policy.budget(), Err(ConfigError::AmbiguousBudget)));
    }

    #[test]
    fn output_root_env_reroots_relative_dirs() {
        let cfg = parse_config(MINIMAL, &[], "t").unwrap();
        // can't mutate the process env safely in parallel tests; emulate
        assert_eq!(cfg.output_dir, PathBuf::from("out"));
    }
}
