//! Model architectures: a tiny vision transformer over sensed tokens, a GRU
//! saccade predictor emitting patch heatmaps, a dense baseline consuming
//! whole zero-filled frames, and a logistic per-patch objectness head.

mod dense;
mod gru;
mod vit;

pub use dense::{dense_forward, init_dense, DenseConfig};
pub use gru::{gru_step, init_gru, GruConfig};
pub use vit::{init_vit, vit_forward, ViTConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::params::ParamStore;
use crate::sensor::{Frame, PatchGrid, PatchMask, SensorError};

/// Uniform init with bound `sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-patch input dimension of the saccade predictor: one pooled mean per
/// channel plus a sensed-flag bit.
pub fn feature_dim(channels: usize) -> usize {
    channels + 1
}

/// Pooled per-patch features of a partially sensed frame, flattened in
/// patch-index order. Sensed patches contribute their per-channel mean and a
/// flag of 1; unsensed patches are all zeros.
pub fn frame_features(
    frame: &Frame,
    grid: &PatchGrid,
    mask: &PatchMask,
) -> Result<Vec<f64>, SensorError> {
    mask.check_grid(grid)?;
    if frame.width != grid.frame_width || frame.height != grid.frame_height {
        return Err(SensorError::GridFrameMismatch {
            gw: grid.frame_width,
            gh: grid.frame_height,
            fw: frame.width,
            fh: frame.height,
        });
    }
    let p = grid.patch_size;
    let area = (p * p) as f64;
    let d_in = feature_dim(frame.channels);
    let mut out = vec![0.0; grid.n_patches() * d_in];
    for i in 0..grid.n_patches() {
        if !mask.sensed[i] {
            continue;
        }
        let (x0, y0) = grid.patch_origin(i);
        for c in 0..frame.channels {
            let mut sum = 0.0;
            for dy in 0..p {
                for dx in 0..p {
                    sum += frame.pixel(x0 + dx, y0 + dy, c);
                }
            }
            out[i * d_in + c] = sum / area;
        }
        out[i * d_in + frame.channels] = 1.0;
    }
    Ok(out)
}

/// Logistic objectness head over raw patch pixels.
pub fn init_objectness(store: &mut ParamStore, patch_size: usize, channels: usize, seed: u64) {
    let mut rng = seeded_rng(seed);
    let d = patch_size * patch_size * channels;
    store.insert("obj.w", vec![d, 1], glorot(&mut rng, d, 1, d));
    store.insert("obj.b", vec![1], vec![0.0]);
}
