//! Dense-tensor math with tape-based reverse-mode automatic differentiation.
//!
//! Every tensor lives in a [`Graph`] and is addressed by a [`TensorId`].
//! The graph is rebuilt for every forward pass (dynamic tape), which keeps
//! recurrent unrolls trivially correct. All tensors are two-dimensional
//! row-major matrices; vectors are `1×n`, scalars `1×1`.

use thiserror::Error;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got {elems} elements")]
    NonScalarLoss { elems: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("bce target must be 0 or 1, got {0}")]
    InvalidTarget(f64),
    #[error("parameter {0} has no gradient")]
    MissingGrad(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("empty axis in {0}")]
    EmptyAxis(&'static str),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Clamp bound used by [`Graph::bce`].
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, f64),
    AddRow(TensorId, TensorId),
    Matmul(TensorId, TensorId),
    Transpose(TensorId),
    Sigmoid(TensorId),
    Tanh(TensorId),
    Relu(TensorId),
    SoftmaxRows(TensorId),
    LayerNormRows {
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        eps: f64,
    },
    GatherRows {
        table: TensorId,
        indices: Vec<usize>,
    },
    ConcatRows(Vec<TensorId>),
    SliceRows {
        x: TensorId,
        start: usize,
    },
    SliceCols {
        x: TensorId,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<TensorId>),
    Sum(TensorId),
    Mean(TensorId),
    CrossEntropy {
        logits: TensorId,
        labels: Vec<usize>,
    },
    Bce {
        pred: TensorId,
        target: Vec<f64>,
    },
}

struct Node {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Dynamic computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    /// Accumulated gradient of `id`, if backward has reached it.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, requires_grad: bool, op: Op) -> TensorId {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            data,
            grad: None,
            requires_grad,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn check_finite(&self, id: TensorId, op: &'static str) -> Result<TensorId> {
        if self.nodes[id.0].data.iter().all(|v| v.is_finite()) {
            Ok(id)
        } else {
            Err(NumericsError::NonFinite { op })
        }
    }

    fn needs(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Tensor with no gradient tracking.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<TensorId> {
        self.leaf(rows, cols, data, false)
    }

    pub fn scalar(&mut self, v: f64) -> Result<TensorId> {
        self.constant(1, 1, vec![v])
    }

    /// Tensor leaf; `requires_grad` marks it as a differentiation target.
    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<f64>, requires_grad: bool) -> Result<TensorId> {
        if data.len() != rows * cols {
            return Err(NumericsError::ShapeMismatch {
                op: "leaf",
                detail: format!("{}x{} vs {} values", rows, cols, data.len()),
            });
        }
        let id = self.push(rows, cols, data, requires_grad, Op::Leaf);
        self.check_finite(id, "leaf")
    }

    /// Elementwise sum. The right operand may be a `1×1` scalar, which is
    /// broadcast; shapes must match otherwise.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let data = if (ar, ac) == (br, bc) {
            self.nodes[a.0]
                .data
                .iter()
                .zip(&self.nodes[b.0].data)
                .map(|(x, y)| x + y)
                .collect()
        } else if (br, bc) == (1, 1) {
            let s = self.nodes[b.0].data[0];
            self.nodes[a.0].data.iter().map(|x| x + s).collect()
        } else {
            return Err(NumericsError::ShapeMismatch {
                op: "add",
                detail: format!("{}x{} vs {}x{}", ar, ac, br, bc),
            });
        };
        let rg = self.needs(&[a, b]);
        let id = self.push(ar, ac, data, rg, Op::Add(a, b));
        self.check_finite(id, "add")
    }

    /// Elementwise product, with the same scalar-broadcast rule as [`add`](Self::add).
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let data = if (ar, ac) == (br, bc) {
            self.nodes[a.0]
                .data
                .iter()
                .zip(&self.nodes[b.0].data)
                .map(|(x, y)| x * y)
                .collect()
        } else if (br, bc) == (1, 1) {
            let s = self.nodes[b.0].data[0];
            self.nodes[a.0].data.iter().map(|x| x * s).collect()
        } else {
            return Err(NumericsError::ShapeMismatch {
                op: "mul",
                detail: format!("{}x{} vs {}x{}", ar, ac, br, bc),
            });
        };
        let rg = self.needs(&[a, b]);
        let id = self.push(ar, ac, data, rg, Op::Mul(a, b));
        self.check_finite(id, "mul")
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        let (r, cl) = self.shape(a);
        let data = self.nodes[a.0].data.iter().map(|x| x * c).collect();
        let rg = self.needs(&[a]);
        let id = self.push(r, cl, data, rg, Op::Scale(a, c));
        self.check_finite(id, "scale")
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    /// Add a `1×n` row vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: TensorId, row: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(row);
        if br != 1 || bc != ac {
            return Err(NumericsError::ShapeMismatch {
                op: "add_row",
                detail: format!("{}x{} vs row {}x{}", ar, ac, br, bc),
            });
        }
        let mut data = self.nodes[a.0].data.clone();
        for r in 0..ar {
            for c in 0..ac {
                data[r * ac + c] += self.nodes[row.0].data[c];
            }
        }
        let rg = self.needs(&[a, row]);
        let id = self.push(ar, ac, data, rg, Op::AddRow(a, row));
        self.check_finite(id, "add_row")
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                detail: format!("{}x{} vs {}x{}", m, k, k2, n),
            });
        }
        let av = &self.nodes[a.0].data;
        let bv = &self.nodes[b.0].data;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                let out = &mut data[i * n..(i + 1) * n];
                for j in 0..n {
                    out[j] += aip * brow[j];
                }
            }
        }
        let rg = self.needs(&[a, b]);
        let id = self.push(m, n, data, rg, Op::Matmul(a, b));
        self.check_finite(id, "matmul")
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.needs(&[a]);
        Ok(self.push(c, r, data, rg, Op::Transpose(a)))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        let data = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let rg = self.needs(&[a]);
        let id = self.push(r, c, data, rg, Op::Sigmoid(a));
        self.check_finite(id, "sigmoid")
    }

    pub fn tanh(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        let data = self.nodes[a.0].data.iter().map(|x| x.tanh()).collect();
        let rg = self.needs(&[a]);
        let id = self.push(r, c, data, rg, Op::Tanh(a));
        self.check_finite(id, "tanh")
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        let data = self.nodes[a.0].data.iter().map(|x| x.max(0.0)).collect();
        let rg = self.needs(&[a]);
        let id = self.push(r, c, data, rg, Op::Relu(a));
        self.check_finite(id, "relu")
    }

    /// Row-wise softmax with max-subtraction for stability.
    pub fn softmax_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        if c == 0 {
            return Err(NumericsError::EmptyAxis("softmax"));
        }
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - m).exp();
                data[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                data[i * c + j] /= sum;
            }
        }
        let rg = self.needs(&[a]);
        let id = self.push(r, c, data, rg, Op::SoftmaxRows(a));
        self.check_finite(id, "softmax")
    }

    /// Row-wise layer normalization followed by an elementwise affine with
    /// `1×n` gain and bias vectors.
    pub fn layernorm_rows(&mut self, x: TensorId, gain: TensorId, bias: TensorId, eps: f64) -> Result<TensorId> {
        let (r, c) = self.shape(x);
        let (gr, gc) = self.shape(gain);
        let (br, bc) = self.shape(bias);
        if gr != 1 || br != 1 || gc != c || bc != c {
            return Err(NumericsError::ShapeMismatch {
                op: "layernorm",
                detail: format!("x {}x{}, gain {}x{}, bias {}x{}", r, c, gr, gc, br, bc),
            });
        }
        let src = &self.nodes[x.0].data;
        let g = &self.nodes[gain.0].data;
        let b = &self.nodes[bias.0].data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                data[i * c + j] = (row[j] - mean) * inv * g[j] + b[j];
            }
        }
        let rg = self.needs(&[x, gain, bias]);
        let id = self.push(r, c, data, rg, Op::LayerNormRows { x, gain, bias, eps });
        self.check_finite(id, "layernorm")
    }

    /// Select rows of `table` by index; gradients scatter-add back.
    pub fn gather_rows(&mut self, table: TensorId, indices: &[usize]) -> Result<TensorId> {
        let (r, c) = self.shape(table);
        for &i in indices {
            if i >= r {
                return Err(NumericsError::ShapeMismatch {
                    op: "gather_rows",
                    detail: format!("index {} out of {} rows", i, r),
                });
            }
        }
        let src = &self.nodes[table.0].data;
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rg = self.needs(&[table]);
        Ok(self.push(
            indices.len(),
            c,
            data,
            rg,
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Stack matrices vertically; all operands must share a column count.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(NumericsError::EmptyAxis("concat_rows"));
        }
        let (_, c) = self.shape(parts[0]);
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pc != c {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_rows",
                    detail: format!("column counts {} vs {}", c, pc),
                });
            }
            rows += pr;
            data.extend_from_slice(&self.nodes[p.0].data);
        }
        let rg = self.needs(parts);
        Ok(self.push(rows, c, data, rg, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (r, c) = self.shape(x);
        if start + len > r {
            return Err(NumericsError::ShapeMismatch {
                op: "slice_rows",
                detail: format!("rows {}..{} of {}", start, start + len, r),
            });
        }
        let data = self.nodes[x.0].data[start * c..(start + len) * c].to_vec();
        let rg = self.needs(&[x]);
        Ok(self.push(len, c, data, rg, Op::SliceRows { x, start }))
    }

    pub fn slice_cols(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (r, c) = self.shape(x);
        if start + len > c {
            return Err(NumericsError::ShapeMismatch {
                op: "slice_cols",
                detail: format!("cols {}..{} of {}", start, start + len, c),
            });
        }
        let src = &self.nodes[x.0].data;
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let rg = self.needs(&[x]);
        Ok(self.push(r, len, data, rg, Op::SliceCols { x, start, len }))
    }

    /// Stack matrices horizontally; all operands must share a row count.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(NumericsError::EmptyAxis("concat_cols"));
        }
        let (r, _) = self.shape(parts[0]);
        let mut cols = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pr != r {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("row counts {} vs {}", r, pr),
                });
            }
            cols += pc;
        }
        let mut data = Vec::with_capacity(r * cols);
        for i in 0..r {
            for &p in parts {
                let (_, pc) = self.shape(p);
                let src = &self.nodes[p.0].data;
                data.extend_from_slice(&src[i * pc..(i + 1) * pc]);
            }
        }
        let rg = self.needs(parts);
        Ok(self.push(r, cols, data, rg, Op::ConcatCols(parts.to_vec())))
    }

    /// Sum of all elements, as a `1×1` scalar.
    pub fn sum(&mut self, a: TensorId) -> Result<TensorId> {
        let s = self.nodes[a.0].data.iter().sum();
        let rg = self.needs(&[a]);
        let id = self.push(1, 1, vec![s], rg, Op::Sum(a));
        self.check_finite(id, "sum")
    }

    pub fn mean(&mut self, a: TensorId) -> Result<TensorId> {
        let n = self.nodes[a.0].data.len();
        if n == 0 {
            return Err(NumericsError::EmptyAxis("mean"));
        }
        let s = self.nodes[a.0].data.iter().sum::<f64>() / n as f64;
        let rg = self.needs(&[a]);
        let id = self.push(1, 1, vec![s], rg, Op::Mean(a));
        self.check_finite(id, "mean")
    }

    /// Mean negative log softmax probability of the true class.
    pub fn cross_entropy(&mut self, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
        let (b, c) = self.shape(logits);
        if labels.len() != b {
            return Err(NumericsError::ShapeMismatch {
                op: "cross_entropy",
                detail: format!("{} rows vs {} labels", b, labels.len()),
            });
        }
        for &l in labels {
            if l >= c {
                return Err(NumericsError::LabelOutOfRange { label: l, classes: c });
            }
        }
        let src = &self.nodes[logits.0].data;
        let mut loss = 0.0;
        for i in 0..b {
            let row = &src[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[labels[i]];
        }
        loss /= b as f64;
        let rg = self.needs(&[logits]);
        let id = self.push(
            1,
            1,
            vec![loss],
            rg,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
        );
        self.check_finite(id, "cross_entropy")
    }

    /// Mean binary cross-entropy of predictions in `(0,1)` against `{0,1}`
    /// targets. Predictions are clamped to `[BCE_EPS, 1-BCE_EPS]`.
    pub fn bce(&mut self, pred: TensorId, target: &[f64]) -> Result<TensorId> {
        let (r, c) = self.shape(pred);
        if target.len() != r * c {
            return Err(NumericsError::ShapeMismatch {
                op: "bce",
                detail: format!("{} predictions vs {} targets", r * c, target.len()),
            });
        }
        for &t in target {
            if t != 0.0 && t != 1.0 {
                return Err(NumericsError::InvalidTarget(t));
            }
        }
        let src = &self.nodes[pred.0].data;
        let n = target.len() as f64;
        let mut loss = 0.0;
        for (p, &t) in src.iter().zip(target) {
            let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            loss -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        }
        loss /= n;
        let rg = self.needs(&[pred]);
        let id = self.push(
            1,
            1,
            vec![loss],
            rg,
            Op::Bce {
                pred,
                target: target.to_vec(),
            },
        );
        self.check_finite(id, "bce")
    }

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate (`+=`)
    /// into each reachable `requires_grad` node; a second call on the same
    /// graph doubles them. Use [`zero_grads`](Self::zero_grads) to reset.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let n = &self.nodes[loss.0];
        if n.rows * n.cols != 1 {
            return Err(NumericsError::NonScalarLoss {
                elems: n.rows * n.cols,
            });
        }
        // Per-pass adjoints live in a scratch table so that repeated backward
        // calls add exactly one copy of the gradient to each node.
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let up = match adj[i].take() {
                Some(v) => v,
                None => continue,
            };
            self.propagate(i, &up, &mut adj);
            let node = &mut self.nodes[i];
            let g = node.grad.get_or_insert_with(|| vec![0.0; node.data.len()]);
            for (gi, ui) in g.iter_mut().zip(&up) {
                *gi += ui;
            }
        }
        Ok(())
    }

    fn bump(&self, adj: &mut [Option<Vec<f64>>], id: TensorId, contrib: impl FnOnce(&mut [f64])) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let slot = adj[id.0].get_or_insert_with(|| vec![0.0; self.nodes[id.0].data.len()]);
        contrib(slot);
    }

    fn propagate(&self, i: usize, up: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let op = self.nodes[i].op.clone();
        let (rows, cols) = (self.nodes[i].rows, self.nodes[i].cols);
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.bump(adj, a, |g| {
                    for (gi, ui) in g.iter_mut().zip(up) {
                        *gi += ui;
                    }
                });
                let (br, bc) = self.shape(b);
                if (br, bc) == (rows, cols) {
                    self.bump(adj, b, |g| {
                        for (gi, ui) in g.iter_mut().zip(up) {
                            *gi += ui;
                        }
                    });
                } else {
                    // scalar broadcast
                    self.bump(adj, b, |g| g[0] += up.iter().sum::<f64>());
                }
            }
            Op::Mul(a, b) => {
                let av = &self.nodes[a.0].data;
                let bv = &self.nodes[b.0].data;
                let (br, bc) = self.shape(b);
                if (br, bc) == (rows, cols) {
                    self.bump(adj, a, |g| {
                        for k in 0..g.len() {
                            g[k] += up[k] * bv[k];
                        }
                    });
                    self.bump(adj, b, |g| {
                        for k in 0..g.len() {
                            g[k] += up[k] * av[k];
                        }
                    });
                } else {
                    let s = bv[0];
                    self.bump(adj, a, |g| {
                        for k in 0..g.len() {
                            g[k] += up[k] * s;
                        }
                    });
                    self.bump(adj, b, |g| {
                        g[0] += up.iter().zip(av).map(|(u, x)| u * x).sum::<f64>();
                    });
                }
            }
            Op::Scale(a, c) => {
                self.bump(adj, a, |g| {
                    for k in 0..g.len() {
                        g[k] += up[k] * c;
                    }
                });
            }
            Op::AddRow(a, row) => {
                self.bump(adj, a, |g| {
                    for (gi, ui) in g.iter_mut().zip(up) {
                        *gi += ui;
                    }
                });
                self.bump(adj, row, |g| {
                    for r in 0..rows {
                        for c in 0..cols {
                            g[c] += up[r * cols + c];
                        }
                    }
                });
            }
            Op::Matmul(a, b) => {
                let (m, k) = self.shape(a);
                let (_, n) = self.shape(b);
                let av = &self.nodes[a.0].data;
                let bv = &self.nodes[b.0].data;
                // dA = up . B^T ; dB = A^T . up
                self.bump(adj, a, |g| {
                    for i2 in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += up[i2 * n + j] * bv[p * n + j];
                            }
                            g[i2 * k + p] += s;
                        }
                    }
                });
                self.bump(adj, b, |g| {
                    for p in 0..k {
                        for i2 in 0..m {
                            let aip = av[i2 * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                g[p * n + j] += aip * up[i2 * n + j];
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (ar, ac) = self.shape(a);
                self.bump(adj, a, |g| {
                    for i2 in 0..ar {
                        for j in 0..ac {
                            g[i2 * ac + j] += up[j * ar + i2];
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].data;
                self.bump(adj, a, |g| {
                    for k in 0..g.len() {
                        g[k] += up[k] * y[k] * (1.0 - y[k]);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].data;
                self.bump(adj, a, |g| {
                    for k in 0..g.len() {
                        g[k] += up[k] * (1.0 - y[k] * y[k]);
                    }
                });
            }
            Op::Relu(a) => {
                let x = &self.nodes[a.0].data;
                self.bump(adj, a, |g| {
                    for k in 0..g.len() {
                        if x[k] > 0.0 {
                            g[k] += up[k];
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[i].data;
                self.bump(adj, a, |g| {
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let ur = &up[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(ur).map(|(p, u)| p * u).sum();
                        for c in 0..cols {
                            g[r * cols + c] += yr[c] * (ur[c] - dot);
                        }
                    }
                });
            }
            Op::LayerNormRows { x, gain, bias, eps } => {
                let xv = &self.nodes[x.0].data;
                let gv = &self.nodes[gain.0].data;
                let d = cols as f64;
                // per-row normalized values and inverse stddev
                let mut xhat = vec![0.0; rows * cols];
                let mut inv = vec![0.0; rows];
                for r in 0..rows {
                    let row = &xv[r * cols..(r + 1) * cols];
                    let mean = row.iter().sum::<f64>() / d;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
                    inv[r] = 1.0 / (var + eps).sqrt();
                    for c in 0..cols {
                        xhat[r * cols + c] = (row[c] - mean) * inv[r];
                    }
                }
                self.bump(adj, x, |g| {
                    for r in 0..rows {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_x = 0.0;
                        for c in 0..cols {
                            let dh = up[r * cols + c] * gv[c];
                            mean_dh += dh;
                            mean_dh_x += dh * xhat[r * cols + c];
                        }
                        mean_dh /= d;
                        mean_dh_x /= d;
                        for c in 0..cols {
                            let dh = up[r * cols + c] * gv[c];
                            g[r * cols + c] += inv[r] * (dh - mean_dh - xhat[r * cols + c] * mean_dh_x);
                        }
                    }
                });
                self.bump(adj, gain, |g| {
                    for r in 0..rows {
                        for c in 0..cols {
                            g[c] += up[r * cols + c] * xhat[r * cols + c];
                        }
                    }
                });
                self.bump(adj, bias, |g| {
                    for r in 0..rows {
                        for c in 0..cols {
                            g[c] += up[r * cols + c];
                        }
                    }
                });
            }
            Op::GatherRows { table, indices } => {
                self.bump(adj, table, |g| {
                    for (r, &src_row) in indices.iter().enumerate() {
                        for c in 0..cols {
                            g[src_row * cols + c] += up[r * cols + c];
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (pr, pc) = self.shape(p);
                    let len = pr * pc;
                    self.bump(adj, p, |g| {
                        for k in 0..len {
                            g[k] += up[offset + k];
                        }
                    });
                    offset += len;
                }
            }
            Op::SliceRows { x, start, .. } => {
                self.bump(adj, x, |g| {
                    for k in 0..rows * cols {
                        g[start * cols + k] += up[k];
                    }
                });
            }
            Op::SliceCols { x, start, len } => {
                let (_, xc) = self.shape(x);
                self.bump(adj, x, |g| {
                    for r in 0..rows {
                        for c in 0..len {
                            g[r * xc + start + c] += up[r * len + c];
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts.clone() {
                    let (_, pc) = self.shape(p);
                    self.bump(adj, p, |g| {
                        for r in 0..rows {
                            for c in 0..pc {
                                g[r * pc + c] += up[r * cols + offset + c];
                            }
                        }
                    });
                    offset += pc;
                }
            }
            Op::Sum(a) => {
                self.bump(adj, a, |g| {
                    for gi in g.iter_mut() {
                        *gi += up[0];
                    }
                });
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].data.len() as f64;
                self.bump(adj, a, |g| {
                    for gi in g.iter_mut() {
                        *gi += up[0] / n;
                    }
                });
            }
            Op::CrossEntropy { logits, labels } => {
                let (b, c) = self.shape(logits);
                let src = &self.nodes[logits.0].data;
                self.bump(adj, logits, |g| {
                    for r in 0..b {
                        let row = &src[r * c..(r + 1) * c];
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
                        for j in 0..c {
                            let p = (row[j] - m).exp() / sum;
                            let y = if labels[r] == j { 1.0 } else { 0.0 };
                            g[r * c + j] += up[0] * (p - y) / b as f64;
                        }
                    }
                });
            }
            Op::Bce { pred, target } => {
                let src = &self.nodes[pred.0].data;
                let n = target.len() as f64;
                self.bump(adj, pred, |g| {
                    for k in 0..target.len() {
                        let p = src[k];
                        if p < BCE_EPS || p > 1.0 - BCE_EPS {
                            continue; // clamp region: zero derivative
                        }
                        let t = target[k];
                        g[k] += up[0] * ((1.0 - t) / (1.0 - p) - t / p) / n;
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g() -> Graph {
        Graph::new()
    }

    #[test]
    fn matmul_identity() {
        let mut g = g();
        let i = g.constant(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = g.constant(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = g.matmul(i, a).unwrap();
        assert_eq!(g.value(r), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_inner_product() {
        let mut g = g();
        let a = g.constant(1, 2, vec![1.0, 2.0]).unwrap();
        let b = g.constant(2, 1, vec![3.0, 4.0]).unwrap();
        let r = g.matmul(a, b).unwrap();
        assert_eq!(g.value(r), &[11.0]);
    }

    #[test]
    fn matmul_against_triple_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let (m, k, n) = (3, 4, 2);
        let av: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bv: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut expect = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    expect[i * n + j] += av[i * k + p] * bv[p * n + j];
                }
            }
        }
        let mut g = g();
        let a = g.constant(m, k, av).unwrap();
        let b = g.constant(k, n, bv).unwrap();
        let r = g.matmul(a, b).unwrap();
        for (got, want) in g.value(r).iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut g = g();
        let a = g.constant(2, 3, vec![0.0; 6]).unwrap();
        let b = g.constant(2, 2, vec![0.0; 4]).unwrap();
        assert!(g.matmul(a, b).is_err());
    }

    #[test]
    fn elementwise_basics() {
        let mut g = g();
        let z = g.constant(1, 1, vec![0.0]).unwrap();
        let s = g.sigmoid(z).unwrap();
        assert_eq!(g.value(s), &[0.5]);
        let t = g.tanh(z).unwrap();
        assert_eq!(g.value(t), &[0.0]);
        let a = g.constant(1, 2, vec![1.0, 2.0]).unwrap();
        let b = g.constant(1, 2, vec![3.0, 4.0]).unwrap();
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c), &[4.0, 6.0]);
        let bad = g.constant(1, 3, vec![0.0; 3]).unwrap();
        assert!(g.add(a, bad).is_err());
    }

    #[test]
    fn softmax_rows_cases() {
        let mut g = g();
        let a = g.constant(1, 2, vec![0.0, 0.0]).unwrap();
        let s = g.softmax_rows(a).unwrap();
        assert_eq!(g.value(s), &[0.5, 0.5]);
        let big = g.constant(1, 2, vec![1000.0, 1000.0]).unwrap();
        let s2 = g.softmax_rows(big).unwrap();
        assert_eq!(g.value(s2), &[0.5, 0.5]);
        let logs = g
            .constant(1, 3, vec![1f64.ln(), 2f64.ln(), 3f64.ln()])
            .unwrap();
        let s3 = g.softmax_rows(logs).unwrap();
        let v = g.value(s3);
        for (got, want) in v.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        let sum: f64 = v.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layernorm_cases() {
        let mut g = g();
        let gain = g.constant(1, 4, vec![1.0; 4]).unwrap();
        let bias = g.constant(1, 4, vec![0.0; 4]).unwrap();
        let x = g.constant(1, 4, vec![1.0; 4]).unwrap();
        let y = g.layernorm_rows(x, gain, bias, 1e-5).unwrap();
        for v in g.value(y) {
            assert_eq!(*v, 0.0);
        }
        let gain2 = g.constant(1, 2, vec![1.0; 2]).unwrap();
        let bias2 = g.constant(1, 2, vec![0.0; 2]).unwrap();
        let x2 = g.constant(1, 2, vec![-1.0, 1.0]).unwrap();
        let y2 = g.layernorm_rows(x2, gain2, bias2, 1e-8).unwrap();
        assert!((g.value(y2)[0] + 1.0).abs() < 1e-6);
        assert!((g.value(y2)[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn layernorm_statistics_random_row() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let d = 16;
        let xv: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut g = g();
        let gain = g.constant(1, d, vec![1.0; d]).unwrap();
        let bias = g.constant(1, d, vec![0.0; d]).unwrap();
        let x = g.constant(1, d, xv).unwrap();
        let y = g.layernorm_rows(x, gain, bias, 1e-5).unwrap();
        let out = g.value(y);
        let mean = out.iter().sum::<f64>() / d as f64;
        let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-3);
    }

    #[test]
    fn cross_entropy_uniform_and_confident() {
        let mut g = g();
        let logits = g.constant(1, 4, vec![0.0; 4]).unwrap();
        let l = g.cross_entropy(logits, &[2]).unwrap();
        assert!((g.value(l)[0] - 4f64.ln()).abs() < 1e-12);
        let hot = g.constant(1, 4, vec![0.0, 1000.0, 0.0, 0.0]).unwrap();
        let l2 = g.cross_entropy(hot, &[1]).unwrap();
        assert!(g.value(l2)[0].abs() < 1e-9);
        assert!(g.cross_entropy(logits, &[4]).is_err());
    }

    #[test]
    fn cross_entropy_two_sample_hand_case() {
        // hand softmax + log per sample, then mean
        let rows: [[f64; 3]; 2] = [[0.2, -0.4, 1.0], [0.0, 0.5, -0.5]];
        let labels = [2usize, 0usize];
        let mut expect = 0.0;
        for (row, &lab) in rows.iter().zip(&labels) {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            expect -= (row[lab].exp() / z).ln();
        }
        expect /= 2.0;
        let mut g = g();
        let logits = g.constant(2, 3, rows.concat()).unwrap();
        let l = g.cross_entropy(logits, &labels).unwrap();
        assert!((g.value(l)[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn bce_cases() {
        let mut g = g();
        let p = g.constant(1, 1, vec![0.5]).unwrap();
        let l = g.bce(p, &[1.0]).unwrap();
        assert!((g.value(l)[0] - 2f64.ln()).abs() < 1e-12);

        let perfect = g.constant(1, 2, vec![1.0, 0.0]).unwrap();
        let l2 = g.bce(perfect, &[1.0, 0.0]).unwrap();
        assert!(g.value(l2)[0] <= 2e-7);

        let p3 = g.constant(1, 2, vec![0.9, 0.2]).unwrap();
        let l3 = g.bce(p3, &[1.0, 0.0]).unwrap();
        let expect = (-(0.9f64.ln()) - 0.8f64.ln()) / 2.0;
        assert!((g.value(l3)[0] - expect).abs() < 1e-12);

        assert!(g.bce(p3, &[0.5, 0.0]).is_err());
    }

    #[test]
    fn backward_sum_and_square() {
        let mut g = g();
        let w = g.leaf(1, 3, vec![1.0, -2.0, 3.0], true).unwrap();
        let s = g.sum(w).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[1.0, 1.0, 1.0]);

        let mut g2 = Graph::new();
        let w2 = g2.leaf(1, 3, vec![1.0, -2.0, 3.0], true).unwrap();
        let sq = g2.mul(w2, w2).unwrap();
        let loss = g2.sum(sq).unwrap();
        g2.backward(loss).unwrap();
        assert_eq!(g2.grad(w2).unwrap(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_twice_doubles() {
        let mut g = g();
        let w = g.leaf(1, 2, vec![0.3, 0.7], true).unwrap();
        let y = g.mul(w, w).unwrap();
        let loss = g.sum(y).unwrap();
        g.backward(loss).unwrap();
        let first = g.grad(w).unwrap().to_vec();
        g.backward(loss).unwrap();
        let second = g.grad(w).unwrap().to_vec();
        for (a, b) in first.iter().zip(&second) {
            assert_eq!(b, &(a * 2.0));
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = g();
        let w = g.leaf(1, 2, vec![1.0, 2.0], true).unwrap();
        assert!(matches!(
            g.backward(w),
            Err(NumericsError::NonScalarLoss { elems: 2 })
        ));
    }

    #[test]
    fn non_finite_is_rejected() {
        let mut g = g();
        assert!(g.constant(1, 1, vec![f64::NAN]).is_err());
        let big = g.constant(1, 1, vec![1e308]).unwrap();
        assert!(g.mul(big, big).is_err());
    }
}
