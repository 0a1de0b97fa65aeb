//! GRU saccade predictor: one global recurrent cell over the flattened patch
//! grid, with a linear head emitting per-patch heatmap logits.

use serde::{Deserialize, Serialize};

use super::{feature_dim, glorot, seeded_rng};
use crate::graph::{Graph, NumericsError, Result, TensorId};
use crate::params::{Bound, ParamStore};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GruConfig {
    /// Per-patch input feature dimension (pooled channel means + sensed flag).
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_patches: usize,
}

impl GruConfig {
    pub fn for_grid(channels: usize, n_patches: usize, hidden_dim: usize) -> Self {
        GruConfig {
            input_dim: feature_dim(channels),
            hidden_dim,
            n_patches,
        }
    }

    pub fn flat_input(&self) -> usize {
        self.input_dim * self.n_patches
    }
}

/// Parameters under the `gru.` prefix. The initial state `h0` is a trainable
/// zero-initialized vector.
pub fn init_gru(store: &mut ParamStore, cfg: &GruConfig, seed: u64) {
    let mut rng = seeded_rng(seed);
    let di = cfg.flat_input();
    let dh = cfg.hidden_dim;
    for gate in ["z", "r", "h"] {
        store.insert(&format!("gru.w{gate}"), vec![di, dh], glorot(&mut rng, di, dh, di * dh));
        store.insert(&format!("gru.u{gate}"), vec![dh, dh], glorot(&mut rng, dh, dh, dh * dh));
        store.insert(&format!("gru.b{gate}"), vec![dh], vec![0.0; dh]);
    }
    store.insert(
        "gru.head.v",
        vec![dh, cfg.n_patches],
        glorot(&mut rng, dh, cfg.n_patches, dh * cfg.n_patches),
    );
    store.insert("gru.head.c", vec![cfg.n_patches], vec![0.0; cfg.n_patches]);
    store.insert("gru.h0", vec![1, dh], vec![0.0; dh]);
}

/// One recurrence step.
///
/// z = sigmoid(Wz x + Uz h + bz), r = sigmoid(Wr x + Ur h + br),
/// h~ = tanh(Wh x + Uh (r*h) + bh), h' = (1-z)*h + z*h~.
/// Returns the new state and the `1×N` heatmap logits `V h' + c`.
pub fn gru_step(
    g: &mut Graph,
    bound: &Bound,
    cfg: &GruConfig,
    x: TensorId,
    h: TensorId,
) -> Result<(TensorId, TensorId)> {
    let (xr, xc) = g.shape(x);
    if xr != 1 || xc != cfg.flat_input() {
        return Err(NumericsError::ShapeMismatch {
            op: "gru_step",
            detail: format!("input {}x{}, expected 1x{}", xr, xc, cfg.flat_input()),
        });
    }
    let (hr, hc) = g.shape(h);
    if hr != 1 || hc != cfg.hidden_dim {
        return Err(NumericsError::ShapeMismatch {
            op: "gru_step",
            detail: format!("state {}x{}, expected 1x{}", hr, hc, cfg.hidden_dim),
        });
    }

    let gate = |g: &mut Graph, w: &str, u: &str, b: &str, hin: TensorId| -> Result<TensorId> {
        let wx = g.matmul(x, bound.id(w)?)?;
        let uh = g.matmul(hin, bound.id(u)?)?;
        let s = g.add(wx, uh)?;
        g.add_row(s, bound.id(b)?)
    };

    let z_pre = gate(g, "gru.wz", "gru.uz", "gru.bz", h)?;
    let z = g.sigmoid(z_pre)?;
    let r_pre = gate(g, "gru.wr", "gru.ur", "gru.br", h)?;
    let r = g.sigmoid(r_pre)?;
    let rh = g.mul(r, h)?;
    let cand_pre = gate(g, "gru.wh", "gru.uh", "gru.bh", rh)?;
    let cand = g.tanh(cand_pre)?;

    // h' = (1-z)*h + z*cand
    let zh = g.mul(z, cand)?;
    let neg_z = g.scale(z, -1.0)?;
    let one = g.scalar(1.0)?;
    let one_minus_z = g.add(neg_z, one)?;
    let keep = g.mul(one_minus_z, h)?;
    let h_new = g.add(keep, zh)?;

    let logits = g.matmul(h_new, bound.id("gru.head.v")?)?;
    let logits = g.add_row(logits, bound.id("gru.head.c")?)?;
    Ok((h_new, logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::bind_params;

    fn tiny_cfg() -> GruConfig {
        GruConfig {
            input_dim: 2,
            hidden_dim: 4,
            n_patches: 4,
        }
    }

    #[test]
    fn zero_weights_halve_the_state() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new();
        init_gru(&mut store, &cfg, 1);
        for name in store.names().cloned().collect::<Vec<_>>() {
            let p = store.get_mut(&name).unwrap();
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let bound = bind_params(&mut g, &store).unwrap();
        let x = g.constant(1, cfg.flat_input(), vec![0.3; cfg.flat_input()]).unwrap();
        let h = g.constant(1, 4, vec![0.8, -0.4, 0.2, 0.6]).unwrap();
        let (h_new, _) = gru_step(&mut g, &bound, &cfg, x, h).unwrap();
        // z = r = 0.5, cand = 0, so h' = 0.5 h
        assert_eq!(g.value(h_new), &[0.4, -0.2, 0.1, 0.3]);
    }

    #[test]
    fn state_stays_bounded_under_iteration() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new();
        init_gru(&mut store, &cfg, 3);
        let mut g = Graph::new();
        let bound = bind_params(&mut g, &store).unwrap();
        let x = g
            .constant(1, cfg.flat_input(), vec![0.5; cfg.flat_input()])
            .unwrap();
        let mut h = g.constant(1, 4, vec![0.0; 4]).unwrap();
        let mut prev_residual = f64::INFINITY;
        let mut last = vec![0.0; 4];
        for step in 0..30 {
            let (h_new, _) = gru_step(&mut g, &bound, &cfg, x, h).unwrap();
            let v = g.value(h_new).to_vec();
            assert!(v.iter().all(|c| c.abs() < 1.0));
            if step > 20 {
                let residual: f64 = v.iter().zip(&last).map(|(a, b)| (a - b).abs()).sum();
                assert!(residual <= prev_residual + 1e-12);
                prev_residual = residual;
            }
            last = v;
            h = h_new;
        }
    }

    #[test]
    fn rejects_wrong_dims() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new();
        init_gru(&mut store, &cfg, 1);
        let mut g = Graph::new();
        let bound = bind_params(&mut g, &store).unwrap();
        let x = g.constant(1, 3, vec![0.0; 3]).unwrap();
        let h = g.constant(1, 4, vec![0.0; 4]).unwrap();
        assert!(gru_step(&mut g, &bound, &cfg, x, h).is_err());
    }
}
