//! Tiny vision transformer classifying from sensed tokens only.
//!
//! Tokens carry their true grid index, so unsensed patches are simply absent
//! from the sequence; the logits are a function of the provided tokens only.

use serde::{Deserialize, Serialize};

use super::{glorot, seeded_rng};
use crate::graph::{Graph, NumericsError, Result, TensorId};
use crate::params::{Bound, ParamStore};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ViTConfig {
    pub patch_size: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub classes: usize,
    /// Grid size the positional table is built for (rows * cols).
    pub max_patches: usize,
    pub mlp_hidden: usize,
}

impl Default for ViTConfig {
    fn default() -> Self {
        ViTConfig {
            patch_size: 8,
            channels: 1,
            embed_dim: 64,
            heads: 4,
            blocks: 4,
            classes: 4,
            max_patches: 64,
            mlp_hidden: 128,
        }
    }
}

impl ViTConfig {
    pub fn token_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim % self.heads != 0 {
            return Err(NumericsError::ShapeMismatch {
                op: "vit_config",
                detail: format!("embed_dim {} not divisible by heads {}", self.embed_dim, self.heads),
            });
        }
        if self.classes < 2 {
            return Err(NumericsError::ShapeMismatch {
                op: "vit_config",
                detail: format!("need at least 2 classes, got {}", self.classes),
            });
        }
        Ok(())
    }
}

/// Deterministic parameter initialization under the `vit.` prefix. Row 0 of
/// the positional table belongs to the class token.
pub fn init_vit(store: &mut ParamStore, cfg: &ViTConfig, seed: u64) {
    let mut rng = seeded_rng(seed);
    let d = cfg.embed_dim;
    let t = cfg.token_dim();
    store.insert("vit.embed.w", vec![t, d], glorot(&mut rng, t, d, t * d));
    store.insert("vit.embed.b", vec![d], vec![0.0; d]);
    store.insert("vit.cls", vec![1, d], glorot(&mut rng, d, d, d));
    let n_pos = cfg.max_patches + 1;
    store.insert("vit.pos", vec![n_pos, d], glorot(&mut rng, n_pos, d, n_pos * d));
    for l in 0..cfg.blocks {
        let p = format!("vit.block{l}");
        store.insert(&format!("{p}.ln1.g"), vec![d], vec![1.0; d]);
        store.insert(&format!("{p}.ln1.b"), vec![d], vec![0.0; d]);
        for w in ["wq", "wk", "wv", "wo"] {
            store.insert(&format!("{p}.attn.{w}"), vec![d, d], glorot(&mut rng, d, d, d * d));
        }
        store.insert(&format!("{p}.attn.bo"), vec![d], vec![0.0; d]);
        store.insert(&format!("{p}.ln2.g"), vec![d], vec![1.0; d]);
        store.insert(&format!("{p}.ln2.b"), vec![d], vec![0.0; d]);
        let h = cfg.mlp_hidden;
        store.insert(&format!("{p}.mlp.w1"), vec![d, h], glorot(&mut rng, d, h, d * h));
        store.insert(&format!("{p}.mlp.b1"), vec![h], vec![0.0; h]);
        store.insert(&format!("{p}.mlp.w2"), vec![h, d], glorot(&mut rng, h, d, h * d));
        store.insert(&format!("{p}.mlp.b2"), vec![d], vec![0.0; d]);
    }
    store.insert("vit.head.ln.g", vec![d], vec![1.0; d]);
    store.insert("vit.head.ln.b", vec![d], vec![0.0; d]);
    store.insert(
        "vit.head.w",
        vec![d, cfg.classes],
        glorot(&mut rng, d, cfg.classes, d * cfg.classes),
    );
    store.insert("vit.head.b", vec![cfg.classes], vec![0.0; cfg.classes]);
}

const LN_EPS: f64 = 1e-5;

/// Forward pass over a (possibly empty) token sequence. Returns `1×C` logits
/// read from the class-token position.
pub fn vit_forward(
    g: &mut Graph,
    bound: &Bound,
    cfg: &ViTConfig,
    tokens: &[(usize, Vec<f64>)],
) -> Result<TensorId> {
    cfg.validate()?;
    let mut seen = vec![false; cfg.max_patches];
    for (idx, px) in tokens {
        if *idx >= cfg.max_patches {
            return Err(NumericsError::ShapeMismatch {
                op: "vit_forward",
                detail: format!("patch index {} out of {}", idx, cfg.max_patches),
            });
        }
        if seen[*idx] {
            return Err(NumericsError::ShapeMismatch {
                op: "vit_forward",
                detail: format!("duplicate patch index {}", idx),
            });
        }
        seen[*idx] = true;
        if px.len() != cfg.token_dim() {
            return Err(NumericsError::ShapeMismatch {
                op: "vit_forward",
                detail: format!("token has {} values, expected {}", px.len(), cfg.token_dim()),
            });
        }
    }

    let pos = bound.id("vit.pos")?;
    let cls = bound.id("vit.cls")?;
    let pos0 = g.gather_rows(pos, &[0])?;
    let cls_row = g.add(cls, pos0)?;

    let mut seq = if tokens.is_empty() {
        cls_row
    } else {
        let t = tokens.len();
        let mut flat = Vec::with_capacity(t * cfg.token_dim());
        let mut pos_idx = Vec::with_capacity(t);
        for (idx, px) in tokens {
            flat.extend_from_slice(px);
            pos_idx.push(idx + 1);
        }
        let x = g.constant(t, cfg.token_dim(), flat)?;
        let w = bound.id("vit.embed.w")?;
        let b = bound.id("vit.embed.b")?;
        let emb = g.matmul(x, w)?;
        let emb = g.add_row(emb, b)?;
        let pos_rows = g.gather_rows(pos, &pos_idx)?;
        let emb = g.add(emb, pos_rows)?;
        g.concat_rows(&[cls_row, emb])?
    };

    let d = cfg.embed_dim;
    let dh = d / cfg.heads;
    for l in 0..cfg.blocks {
        let p = format!("vit.block{l}");
        let ln1 = g.layernorm_rows(seq, bound.id(&format!("{p}.ln1.g"))?, bound.id(&format!("{p}.ln1.b"))?, LN_EPS)?;
        let q = g.matmul(ln1, bound.id(&format!("{p}.attn.wq"))?)?;
        let k = g.matmul(ln1, bound.id(&format!("{p}.attn.wk"))?)?;
        let v = g.matmul(ln1, bound.id(&format!("{p}.attn.wv"))?)?;
        let mut head_outs = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scaled = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
            let att = g.softmax_rows(scaled)?;
            head_outs.push(g.matmul(att, vh)?);
        }
        let merged = g.concat_cols(&head_outs)?;
        let proj = g.matmul(merged, bound.id(&format!("{p}.attn.wo"))?)?;
        let proj = g.add_row(proj, bound.id(&format!("{p}.attn.bo"))?)?;
        seq = g.add(seq, proj)?;

        let ln2 = g.layernorm_rows(seq, bound.id(&format!("{p}.ln2.g"))?, bound.id(&format!("{p}.ln2.b"))?, LN_EPS)?;
        let h1 = g.matmul(ln2, bound.id(&format!("{p}.mlp.w1"))?)?;
        let h1 = g.add_row(h1, bound.id(&format!("{p}.mlp.b1"))?)?;
        let h1 = g.relu(h1)?;
        let h2 = g.matmul(h1, bound.id(&format!("{p}.mlp.w2"))?)?;
        let h2 = g.add_row(h2, bound.id(&format!("{p}.mlp.b2"))?)?;
        seq = g.add(seq, h2)?;
    }

    let lnf = g.layernorm_rows(seq, bound.id("vit.head.ln.g")?, bound.id("vit.head.ln.b")?, LN_EPS)?;
    let cls_out = g.slice_rows(lnf, 0, 1)?;
    let logits = g.matmul(cls_out, bound.id("vit.head.w")?)?;
    g.add_row(logits, bound.id("vit.head.b")?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::bind_params;

    fn tiny_cfg() -> ViTConfig {
        ViTConfig {
            patch_size: 2,
            channels: 1,
            embed_dim: 8,
            heads: 2,
            blocks: 1,
            classes: 3,
            max_patches: 4,
            mlp_hidden: 8,
        }
    }

    fn forward(cfg: &ViTConfig, store: &ParamStore, tokens: &[(usize, Vec<f64>)]) -> Vec<f64> {
        let mut g = Graph::new();
        let bound = bind_params(&mut g, store).unwrap();
        let out = vit_forward(&mut g, &bound, cfg, tokens).unwrap();
        g.value(out).to_vec()
    }

    #[test]
    fn empty_token_sequence_is_defined() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new();
        init_vit(&mut store, &cfg, 5);
        let logits = forward(&cfg, &store, &[]);
        assert_eq!(logits.len(), 3);
        assert!(logits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new();
        init_vit(&mut store, &cfg, 5);
        let tokens: Vec<(usize, Vec<f64>)> =
            (0..4).map(|i| (i, vec![i as f64 / 8.0; 4])).collect();
        assert_eq!(forward(&cfg, &store, &tokens), forward(&cfg, &store, &tokens));
    }

    #[test]
    fn permutation_of_tokens_leaves_logits_unchanged() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new();
        init_vit(&mut store, &cfg, 7);
        let tokens: Vec<(usize, Vec<f64>)> = (0..4)
            .map(|i| (i, vec![0.1 * i as f64, 0.2, 0.3, 0.05 * i as f64]))
            .collect();
        let mut shuffled = tokens.clone();
        shuffled.swap(0, 3);
        shuffled.swap(1, 2);
        let a = forward(&cfg, &store, &tokens);
        let b = forward(&cfg, &store, &shuffled);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_duplicate_and_out_of_range_indices() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new();
        init_vit(&mut store, &cfg, 5);
        let mut g = Graph::new();
        let bound = bind_params(&mut g, &store).unwrap();
        let dup = vec![(1usize, vec![0.0; 4]), (1, vec![0.0; 4])];
        assert!(vit_forward(&mut g, &bound, &cfg, &dup).is_err());
        let oob = vec![(4usize, vec![0.0; 4])];
        assert!(vit_forward(&mut g, &bound, &cfg, &oob).is_err());
    }

    #[test]
    fn init_is_seed_deterministic_and_bounded() {
        let cfg = tiny_cfg();
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        let mut c = ParamStore::new();
        init_vit(&mut a, &cfg, 9);
        init_vit(&mut b, &cfg, 9);
        init_vit(&mut c, &cfg, 10);
        let mut any_diff = false;
        for (name, pa) in a.iter() {
            let pb = b.get(name).unwrap();
            assert_eq!(pa.data, pb.data);
            if pa.data != c.get(name).unwrap().data {
                any_diff = true;
            }
            let (r, cdim) = pa.dims2();
            let bound_v = (6.0 / (r + cdim) as f64).sqrt().max(1.0);
            assert!(pa.data.iter().all(|v| v.abs() <= bound_v));
        }
        assert!(any_diff);
    }
}
