//! Named trainable parameters, the Adam-style optimizer, gradient checking,
//! and the binary checkpoint format.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, NumericsError, TensorId};

#[derive(Debug, Clone)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Param {
    fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let n = data.len();
        Param {
            shape,
            data,
            grad: None,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// (rows, cols) view of the shape: `[n]` maps to `1×n`.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => panic!("parameters are at most 2-d, got {:?}", self.shape),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named parameter container with per-parameter Adam moment buffers.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "{name}");
        self.params.insert(name.to_string(), Param::new(shape, data));
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn n_scalars(&self) -> usize {
        self.params.values().map(|p| p.data.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = Some(vec![0.0; p.data.len()]);
        }
    }

    pub fn clear_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// Bias-corrected Adam update over every parameter. Gradients are left
    /// untouched; zeroing is the caller's job.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<(), NumericsError> {
        for (name, p) in &self.params {
            if p.grad.is_none() {
                return Err(NumericsError::MissingGrad(name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for p in self.params.values_mut() {
            let g = p.grad.as_ref().unwrap();
            for i in 0..p.data.len() {
                p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g[i];
                p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mhat = p.m[i] / bc1;
                let vhat = p.v[i] / bc2;
                p.data[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

/// Mapping from parameter names to leaf nodes of one forward graph.
pub struct Bound {
    ids: BTreeMap<String, TensorId>,
}

impl Bound {
    pub fn id(&self, name: &str) -> Result<TensorId, NumericsError> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = (&String, &TensorId)> {
        self.ids.iter()
    }
}

/// Create one `requires_grad` leaf per parameter in `store`.
pub fn bind_params(g: &mut Graph, store: &ParamStore) -> Result<Bound, NumericsError> {
    let mut ids = BTreeMap::new();
    for (name, p) in store.iter() {
        let (r, c) = p.dims2();
        let id = g.leaf(r, c, p.data.clone(), true)?;
        ids.insert(name.clone(), id);
    }
    Ok(Bound { ids })
}

/// Add the graph's accumulated leaf gradients into the store's grad buffers.
pub fn harvest_grads(g: &Graph, bound: &Bound, store: &mut ParamStore) {
    for (name, &id) in bound.ids() {
        if let Some(node_grad) = g.grad(id) {
            let p = store.get_mut(name).expect("bound param exists in store");
            let buf = p.grad.get_or_insert_with(|| vec![0.0; p.data.len()]);
            for (b, gsrc) in buf.iter_mut().zip(node_grad) {
                *b += gsrc;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: BTreeMap<String, f64>,
    pub max_rel_err: f64,
}

/// Compare reverse-mode gradients against central finite differences.
///
/// `forward` must deterministically rebuild the loss from a fresh graph and
/// binding. Relative error per coordinate is
/// `|g_ad − g_fd| / max(1e-8, |g_ad| + |g_fd|)`; the report keeps the max
/// per parameter.
pub fn grad_check<F>(store: &mut ParamStore, h: f64, forward: F) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Graph, &Bound) -> Result<TensorId, NumericsError>,
{
    let eval = |store: &ParamStore| -> Result<f64, NumericsError> {
        let mut g = Graph::new();
        let bound = bind_params(&mut g, store)?;
        let loss = forward(&mut g, &bound)?;
        Ok(g.value(loss)[0])
    };

    // analytic gradients
    let mut g = Graph::new();
    let bound = bind_params(&mut g, store)?;
    let loss = forward(&mut g, &bound)?;
    g.backward(loss)?;
    let mut ad: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (name, &id) in bound.ids() {
        let grad = g.grad(id).map(|s| s.to_vec()).unwrap_or_else(|| {
            let (r, c) = g.shape(id);
            vec![0.0; r * c]
        });
        ad.insert(name.clone(), grad);
    }

    let names: Vec<String> = store.names().cloned().collect();
    let mut per_param = BTreeMap::new();
    let mut max_rel = 0.0f64;
    for name in names {
        let n = store.get(&name).unwrap().data.len();
        let mut worst = 0.0f64;
        for i in 0..n {
            let orig = store.get(&name).unwrap().data[i];
            store.get_mut(&name).unwrap().data[i] = orig + h;
            let plus = eval(store)?;
            store.get_mut(&name).unwrap().data[i] = orig - h;
            let minus = eval(store)?;
            store.get_mut(&name).unwrap().data[i] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let a = ad[&name][i];
            let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        max_rel = max_rel.max(worst);
        per_param.insert(name, worst);
    }
    Ok(GradCheckReport {
        per_param,
        max_rel_err: max_rel,
    })
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("payload truncated for parameter {0}")]
    Truncated(String),
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    step: u64,
    params: Vec<CheckpointEntry>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    shape: Vec<usize>,
}

const CHECKPOINT_VERSION: u32 = 1;

impl ParamStore {
    /// Write the store as a JSON header plus little-endian f64 payload.
    /// Round-trips bit-exactly.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let header = CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            step: self.step,
            params: self
                .params
                .iter()
                .map(|(name, p)| CheckpointEntry {
                    name: name.clone(),
                    shape: p.shape.clone(),
                })
                .collect(),
        };
        let header_json = serde_json::to_vec(&header).expect("header serializes");
        let ioerr = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = std::fs::File::create(path).map_err(ioerr)?;
        f.write_all(&(header_json.len() as u64).to_le_bytes())
            .map_err(|e| CheckpointError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
        f.write_all(&header_json).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut payload = Vec::new();
        for p in self.params.values() {
            for v in &p.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        f.write_all(&payload).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ParamStore, CheckpointError> {
        let ioerr = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = std::fs::File::open(path).map_err(ioerr)?;
        let mut len_buf = [0u8; 8];
        f.read_exact(&mut len_buf).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let header_len = u64::from_le_bytes(len_buf) as usize;
        let mut header_buf = vec![0u8; header_len];
        f.read_exact(&mut header_buf)
            .map_err(|e| CheckpointError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
        let header: CheckpointHeader = serde_json::from_slice(&header_buf)
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Header(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let mut store = ParamStore::new();
        store.step = header.step;
        for entry in &header.params {
            let n: usize = entry.shape.iter().product();
            let mut buf = vec![0u8; n * 8];
            f.read_exact(&mut buf)
                .map_err(|_| CheckpointError::Truncated(entry.name.clone()))?;
            let data: Vec<f64> = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            store.insert(&entry.name, entry.shape.clone(), data);
        }
        Ok(store)
    }
}
