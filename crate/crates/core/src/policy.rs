//! Patch selection policies: random, ground-truth oracle, and score-driven
//! top-k, all under a sensing budget.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensor::{Frame, PatchGrid, PatchMask, SensorError};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("budget k={k} invalid for {n} patches")]
    BadBudget { k: usize, n: usize },
    #[error("budget fraction {0} must lie in (0,1]")]
    BadFraction(f64),
    #[error("heatmap has {got} scores but grid has {expected} patches")]
    HeatmapMismatch { got: usize, expected: usize },
    #[error("heatmap scores must be finite and in [0,1]")]
    BadScores,
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error("unknown policy name {0:?}")]
    UnknownPolicy(String),
}

/// Per-patch attention scores in `[0,1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub scores: Vec<f64>,
}

impl Heatmap {
    pub fn new(scores: Vec<f64>) -> Result<Self, PolicyError> {
        if !scores.iter().all(|s| s.is_finite() && (0.0..=1.0).contains(s)) {
            return Err(PolicyError::BadScores);
        }
        Ok(Heatmap { scores })
    }
}

/// Sensing budget: a patch count or a fraction of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Budget {
    Count(usize),
    Fraction(f64),
}

impl Budget {
    /// Number of patches for a grid of `n`. Fractions resolve by rounding
    /// half up, with a floor of one patch (0.3 of 64 patches gives 19).
    pub fn resolve(&self, n: usize) -> Result<usize, PolicyError> {
        let k = match *self {
            Budget::Count(k) => k,
            Budget::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(PolicyError::BadFraction(f));
                }
                ((f * n as f64 + 0.5).floor() as usize).max(1)
            }
        };
        if k == 0 || k > n {
            return Err(PolicyError::BadBudget { k, n });
        }
        Ok(k)
    }
}

/// Exactly `k` patches drawn uniformly without replacement; deterministic
/// per seed.
pub fn random_select(n_patches: usize, budget: Budget, seed: u64) -> Result<PatchMask, PolicyError> {
    let k = budget.resolve(n_patches)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, n_patches, k).into_vec();
    Ok(PatchMask::from_indices(n_patches, &picks))
}

/// Mean saliency per patch, in patch-index order.
pub fn salient_fractions(saliency: &Frame, grid: &PatchGrid) -> Result<Vec<f64>, PolicyError> {
    if saliency.width != grid.frame_width || saliency.height != grid.frame_height || saliency.channels != 1 {
        return Err(PolicyError::Sensor(SensorError::GridFrameMismatch {
            gw: grid.frame_width,
            gh: grid.frame_height,
            fw: saliency.width,
            fh: saliency.height,
        }));
    }
    let p = grid.patch_size;
    let area = (p * p) as f64;
    let mut out = vec![0.0; grid.n_patches()];
    for i in 0..grid.n_patches() {
        let (x0, y0) = grid.patch_origin(i);
        let mut sum = 0.0;
        for dy in 0..p {
            for dx in 0..p {
                sum += saliency.pixel(x0 + dx, y0 + dy, 0);
            }
        }
        out[i] = sum / area;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleMode {
    /// Sense patches with salient fraction >= tau; tau = 0 means "any
    /// salient pixel at all".
    Threshold(f64),
    /// Sense the top-k patches by salient fraction.
    Budget(Budget),
}

/// Patch selection from ground-truth saliency.
pub fn oracle_select(
    saliency: &Frame,
    grid: &PatchGrid,
    mode: OracleMode,
) -> Result<PatchMask, PolicyError> {
    let fractions = salient_fractions(saliency, grid)?;
    match mode {
        OracleMode::Threshold(tau) => {
            let sensed = fractions
                .iter()
                .map(|&s| if tau > 0.0 { s >= tau } else { s > 0.0 })
                .collect();
            Ok(PatchMask { sensed })
        }
        OracleMode::Budget(budget) => {
            let heat = Heatmap::new(fractions.iter().map(|s| s.clamp(0.0, 1.0)).collect())?;
            topk_select(&heat, budget)
        }
    }
}

/// Top-k patches by score; ties broken by ascending patch index.
pub fn topk_select(heatmap: &Heatmap, budget: Budget) -> Result<PatchMask, PolicyError> {
    let n = heatmap.scores.len();
    let k = budget.resolve(n)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        heatmap.scores[b]
            .partial_cmp(&heatmap.scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    Ok(PatchMask::from_indices(n, &order[..k]))
}

/// Policy names addressable from experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Random,
    OracleThreshold,
    OracleTopk,
    Learned,
    Full,
}

impl std::str::FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, PolicyError> {
        match s {
            "random" => Ok(PolicyKind::Random),
            "oracle-threshold" => Ok(PolicyKind::OracleThreshold),
            "oracle-topk" => Ok(PolicyKind::OracleTopk),
            "learned" => Ok(PolicyKind::Learned),
            "full" => Ok(PolicyKind::Full),
            other => Err(PolicyError::UnknownPolicy(other.to_string())),
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PolicyKind::Random => "random",
            PolicyKind::OracleThreshold => "oracle-threshold",
            PolicyKind::OracleTopk => "oracle-topk",
            PolicyKind::Learned => "learned",
            PolicyKind::Full => "full",
        };
        f.write_str(s)
    }
}
