//! Dense small-net baseline standing in for the convolutional comparison.
//! It consumes whole zero-filled frames, so masking perturbs every feature.

use serde::{Deserialize, Serialize};

use super::{glorot, seeded_rng};
use crate::graph::{Graph, NumericsError, Result, TensorId};
use crate::params::{Bound, ParamStore};
use crate::sensor::Frame;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DenseConfig {
    pub input_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub classes: usize,
}

impl DenseConfig {
    pub fn for_frame(width: usize, height: usize, channels: usize, classes: usize) -> Self {
        DenseConfig {
            input_dim: width * height * channels,
            hidden1: 128,
            hidden2: 64,
            classes,
        }
    }
}

pub fn init_dense(store: &mut ParamStore, cfg: &DenseConfig, seed: u64) {
    let mut rng = seeded_rng(seed);
    let (d, h1, h2, c) = (cfg.input_dim, cfg.hidden1, cfg.hidden2, cfg.classes);
    store.insert("dense.w1", vec![d, h1], glorot(&mut rng, d, h1, d * h1));
    store.insert("dense.b1", vec![h1], vec![0.0; h1]);
    store.insert("dense.w2", vec![h1, h2], glorot(&mut rng, h1, h2, h1 * h2));
    store.insert("dense.b2", vec![h2], vec![0.0; h2]);
    store.insert("dense.w3", vec![h2, c], glorot(&mut rng, h2, c, h2 * c));
    store.insert("dense.b3", vec![c], vec![0.0; c]);
}

/// Flatten -> two relu layers -> logits.
pub fn dense_forward(
    g: &mut Graph,
    bound: &Bound,
    cfg: &DenseConfig,
    frame: &Frame,
) -> Result<TensorId> {
    if frame.data.len() != cfg.input_dim {
        return Err(NumericsError::ShapeMismatch {
            op: "dense_forward",
            detail: format!("frame has {} values, expected {}", frame.data.len(), cfg.input_dim),
        });
    }
    let x = g.constant(1, cfg.input_dim, frame.data.clone())?;
    let h1 = g.matmul(x, bound.id("dense.w1")?)?;
    let h1 = g.add_row(h1, bound.id("dense.b1")?)?;
    let h1 = g.relu(h1)?;
    let h2 = g.matmul(h1, bound.id("dense.w2")?)?;
    let h2 = g.add_row(h2, bound.id("dense.b2")?)?;
    let h2 = g.relu(h2)?;
    let logits = g.matmul(h2, bound.id("dense.w3")?)?;
    g.add_row(logits, bound.id("dense.b3")?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::bind_params;
    use crate::sensor::{partition, zero_fill, PatchMask};

    fn tiny() -> (DenseConfig, ParamStore) {
        let cfg = DenseConfig {
            input_dim: 64,
            hidden1: 8,
            hidden2: 8,
            classes: 4,
        };
        let mut store = ParamStore::new();
        init_dense(&mut store, &cfg, 2);
        (cfg, store)
    }

    #[test]
    fn all_zero_frame_takes_the_bias_path() {
        let (cfg, store) = tiny();
        let mut g = Graph::new();
        let bound = bind_params(&mut g, &store).unwrap();
        let frame = Frame::zeros(8, 8, 1);
        let out = dense_forward(&mut g, &bound, &cfg, &frame).unwrap();
        // biases are zero-initialized, so the zero input gives zero logits
        assert!(g.value(out).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn masking_a_patch_changes_logits() {
        let (cfg, store) = tiny();
        let frame = Frame::new(8, 8, 1, (0..64).map(|i| i as f64 / 64.0).collect(), 0).unwrap();
        let grid = partition(&frame, 4).unwrap();
        let forward = |f: &Frame| {
            let mut g = Graph::new();
            let bound = bind_params(&mut g, &store).unwrap();
            let out = dense_forward(&mut g, &bound, &cfg, f).unwrap();
            g.value(out).to_vec()
        };
        let full = forward(&frame);
        let masked = zero_fill(&frame, &grid, &PatchMask::from_indices(4, &[0, 1, 2])).unwrap();
        let part = forward(&masked);
        assert_ne!(full, part);
    }

    #[test]
    fn rejects_wrong_dims() {
        let (cfg, store) = tiny();
        let mut g = Graph::new();
        let bound = bind_params(&mut g, &store).unwrap();
        let frame = Frame::zeros(4, 4, 1);
        assert!(dense_forward(&mut g, &bound, &cfg, &frame).is_err());
    }
}
