//! Eager op recording and reverse-mode gradient accumulation.

use thiserror::Error;

use super::tensor::Tensor;
use super::EPS_LOG;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{op}: row index {index} out of bounds for {rows} rows")]
    IndexOutOfBounds { op: &'static str, index: usize, rows: usize },
}

type Result<T> = std::result::Result<T, AutodiffError>;

// some payloads (scalar constants, the detach input) are only read through
// Debug output, not by the backward rules
#[allow(dead_code)]
#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var, f64),
    MulScalar(Var, f64),
    SubFromScalar(f64, Var),
    Matmul(Var, Var),
    Mean(Var),
    MeanRows(Var),
    Sum(Var),
    Sigmoid(Var),
    Softplus(Var),
    Log(Var),
    Powf(Var, f64),
    Abs(Var),
    Clamp(Var, f64, f64),
    L2Norm(Var),
    L2NormRows(Var),
    GatherRows(Var, Vec<usize>),
    Concat(Vec<Var>),
    Reshape(Var),
    Grl(Var, f64),
    Detach(Var),
    CrossEntropy { logits: Var, targets: Vec<usize> },
}

struct Node {
    op: Op,
    value: Tensor,
    param: bool,
}

/// Gradients produced by [`Tape::backward`]. Every parameter node has an
/// entry (zeros if the loss never reached it); non-parameter leaves have none.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

/// Wengert-style tape: ops are appended in forward order (inputs always
/// precede their consumers) and replayed in reverse by [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Register a constant/input leaf. It never receives a gradient entry.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, false)
    }

    /// Register a trainable leaf. `backward` always reports its gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, true)
    }

    pub fn scalar_input(&mut self, v: f64) -> Var {
        self.input(Tensor::scalar(v))
    }

    fn push_leaf(&mut self, t: Tensor, param: bool) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value: t, param });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        if !value.all_finite() {
            return Err(AutodiffError::NonFinite { op: op_name(&op) });
        }
        self.nodes.push(Node { op, value, param: false });
        Ok(Var(self.nodes.len() - 1))
    }

    // ── elementwise binary ops ──────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.broadcast_binary("sub", a, b, |x, y| x - y)?;
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.broadcast_binary("mul", a, b, |x, y| x * y)?;
        self.push(Op::Mul(a, b), v)
    }

    /// Elementwise binary with scalar broadcast. Shapes must match exactly
    /// unless one side is rank 0.
    fn broadcast_binary(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
            Ok(clone_shape(ta, data))
        } else if ta.is_scalar() {
            let x = ta.item();
            Ok(clone_shape(tb, tb.data().iter().map(|y| f(x, *y)).collect()))
        } else if tb.is_scalar() {
            let y = tb.item();
            Ok(clone_shape(ta, ta.data().iter().map(|x| f(*x, y)).collect()))
        } else {
            Err(AutodiffError::ShapeMismatch {
                op,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            })
        }
    }

    // ── scalar-constant ops ─────────────────────────────────────────────

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = map_data(self.value(a), |x| x + c);
        self.push(Op::AddScalar(a, c), v)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = map_data(self.value(a), |x| x * c);
        self.push(Op::MulScalar(a, c), v)
    }

    /// `c - a`, elementwise. Used for complements like `1 - p`.
    pub fn sub_from_scalar(&mut self, c: f64, a: Var) -> Result<Var> {
        let v = map_data(self.value(a), |x| c - x);
        self.push(Op::SubFromScalar(c, a), v)
    }

    // ── linear algebra ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for l in 0..k {
                let x = ta.data()[i * k + l];
                for j in 0..m {
                    out[i * m + j] += x * tb.data()[l * m + j];
                }
            }
        }
        self.push(Op::Matmul(a, b), Tensor::matrix(n, m, out))
    }

    // ── reductions ──────────────────────────────────────────────────────

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let n = t.len().max(1) as f64;
        let v = Tensor::scalar(t.data().iter().sum::<f64>() / n);
        self.push(Op::Mean(a), v)
    }

    /// Column means of a `[n, d]` matrix, as a `[1, d]` matrix.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "mean_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (n, d) = (t.rows(), t.cols());
        let mut out = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                out[j] += t.data()[i * d + j];
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        self.push(Op::MeanRows(a), Tensor::matrix(1, d, out))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(Op::Sum(a), v)
    }

    // ── elementwise unary ops ───────────────────────────────────────────

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = map_data(self.value(a), sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let v = map_data(self.value(a), softplus);
        self.push(Op::Softplus(a), v)
    }

    /// Natural log with the argument clamped below at [`EPS_LOG`].
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = map_data(self.value(a), |x| x.max(EPS_LOG).ln());
        self.push(Op::Log(a), v)
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        let v = map_data(self.value(a), |x| x.powf(p));
        self.push(Op::Powf(a, p), v)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let v = map_data(self.value(a), f64::abs);
        self.push(Op::Abs(a), v)
    }

    /// Elementwise clamp to `[lo, hi]`; gradient passes only where the input
    /// was strictly inside the band.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let v = map_data(self.value(a), |x| x.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), v)
    }

    // ── norms ───────────────────────────────────────────────────────────

    /// Full L2 norm over all elements, as a scalar.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).data().iter().map(|x| x * x).sum::<f64>().sqrt();
        self.push(Op::L2Norm(a), Tensor::scalar(n))
    }

    /// Per-row L2 norm of a `[n, d]` matrix, as a length-n vector.
    pub fn l2_norm_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "l2_norm_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![],
            });
        }
        let out = (0..t.rows())
            .map(|i| t.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        self.push(Op::L2NormRows(a), Tensor::vector(out))
    }

    // ── structural ops ──────────────────────────────────────────────────

    /// Select rows of a matrix (or elements of a vector) by index.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let rows = t.rows();
        for &i in indices {
            if i >= rows {
                return Err(AutodiffError::IndexOutOfBounds {
                    op: "gather_rows",
                    index: i,
                    rows,
                });
            }
        }
        let v = match t.rank() {
            1 => Tensor::vector(indices.iter().map(|&i| t.data()[i]).collect()),
            2 => {
                let d = t.cols();
                let mut data = Vec::with_capacity(indices.len() * d);
                for &i in indices {
                    data.extend_from_slice(t.row(i));
                }
                Tensor::matrix(indices.len(), d, data)
            }
            _ => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "gather_rows",
                    lhs: t.shape().to_vec(),
                    rhs: vec![],
                })
            }
        };
        self.push(Op::GatherRows(a, indices.to_vec()), v)
    }

    /// Concatenate vectors end to end (or stack equal-width matrices by
    /// rows). Backward slices the adjoint back to each part.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        assert!(!parts.is_empty(), "concat needs at least one part");
        let first = self.value(parts[0]);
        let rank = first.rank();
        let cols = if rank == 2 { first.cols() } else { 0 };
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != rank || (rank == 2 && t.cols() != cols) {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = match rank {
            1 => Tensor::vector(data),
            2 => Tensor::matrix(rows, cols, data),
            _ => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: vec![],
                })
            }
        };
        self.push(Op::Concat(parts.to_vec()), value)
    }

    /// Same data, new shape (element count must match).
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let n: usize = shape.iter().product();
        if n != t.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                lhs: t.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = t.data().to_vec();
        let v = match shape.len() {
            0 => Tensor::scalar(data[0]),
            1 => Tensor::vector(data),
            2 => Tensor::matrix(shape[0], shape[1], data),
            _ => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "reshape",
                    lhs: t.shape().to_vec(),
                    rhs: shape.to_vec(),
                })
            }
        };
        self.push(Op::Reshape(a), v)
    }

    // ── adversarial plumbing ────────────────────────────────────────────

    /// Gradient reversal: identity forward, upstream gradient times
    /// `-lambda` backward.
    pub fn grl(&mut self, a: Var, lambda: f64) -> Result<Var> {
        let v = self.value(a).clone();
        self.push(Op::Grl(a, lambda), v)
    }

    /// Identity forward; contributes no gradient to its producers.
    pub fn detach(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).clone();
        self.push(Op::Detach(a), v)
    }

    // ── fused classifier loss ───────────────────────────────────────────

    /// Mean cross-entropy of row-softmax logits against integer targets.
    /// Fused for numerical stability (log-sum-exp inside).
    pub fn cross_entropy_logits(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if t.rank() != 2 || t.rows() != targets.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "cross_entropy_logits",
                lhs: t.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let k = t.cols();
        for &y in targets {
            if y >= k {
                return Err(AutodiffError::IndexOutOfBounds {
                    op: "cross_entropy_logits",
                    index: y,
                    rows: k,
                });
            }
        }
        let n = targets.len() as f64;
        let mut loss = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            let row = t.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        self.push(
            Op::CrossEntropy { logits, targets: targets.to_vec() },
            Tensor::scalar(loss / n),
        )
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns per-parameter gradients;
    /// two sweeps over the same tape produce identical results.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(AutodiffError::NonScalarLoss { shape: lt.shape().to_vec() });
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            self.backward_node(id, &g, &mut adj);
            // keep the adjoint around for params so it can be reported
            if self.nodes[id].param {
                adj[id] = Some(g);
            }
        }

        let grads = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, node)| {
                if node.param {
                    let data = adj[id].take().unwrap_or_else(|| vec![0.0; node.value.len()]);
                    Some(reshape_like(&node.value, data))
                } else {
                    None
                }
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backward_node(&self, id: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(adj, *a, &spread(g, self.value(*a).len()));
                self.accumulate(adj, *b, &spread(g, self.value(*b).len()));
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, *a, &spread(g, self.value(*a).len()));
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                self.accumulate(adj, *b, &spread(&neg, self.value(*b).len()));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da = pairwise(g, tb, ta.len());
                let db = pairwise(g, ta, tb.len());
                self.accumulate(adj, *a, &da);
                self.accumulate(adj, *b, &db);
            }
            Op::AddScalar(a, _) => self.accumulate(adj, *a, g),
            Op::MulScalar(a, c) => {
                let da: Vec<f64> = g.iter().map(|x| c * x).collect();
                self.accumulate(adj, *a, &da);
            }
            Op::SubFromScalar(_, a) => {
                let da: Vec<f64> = g.iter().map(|x| -x).collect();
                self.accumulate(adj, *a, &da);
            }
            Op::Matmul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                // dA = g @ B^T
                let mut da = vec![0.0; n * k];
                for i in 0..n {
                    for l in 0..k {
                        let mut s = 0.0;
                        for j in 0..m {
                            s += g[i * m + j] * tb.data()[l * m + j];
                        }
                        da[i * k + l] = s;
                    }
                }
                // dB = A^T @ g
                let mut db = vec![0.0; k * m];
                for l in 0..k {
                    for i in 0..n {
                        let x = ta.data()[i * k + l];
                        for j in 0..m {
                            db[l * m + j] += x * g[i * m + j];
                        }
                    }
                }
                self.accumulate(adj, *a, &da);
                self.accumulate(adj, *b, &db);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                let da = vec![g[0] / n as f64; n];
                self.accumulate(adj, *a, &da);
            }
            Op::MeanRows(a) => {
                let t = self.value(*a);
                let (n, d) = (t.rows(), t.cols());
                let mut da = vec![0.0; n * d];
                for i in 0..n {
                    for j in 0..d {
                        da[i * d + j] = g[j] / n as f64;
                    }
                }
                self.accumulate(adj, *a, &da);
            }
            Op::Sum(a) => {
                let da = vec![g[0]; self.value(*a).len()];
                self.accumulate(adj, *a, &da);
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let da: Vec<f64> =
                    g.iter().zip(y.data()).map(|(gi, yi)| gi * yi * (1.0 - yi)).collect();
                self.accumulate(adj, *a, &da);
            }
            Op::Softplus(a) => {
                let x = self.value(*a);
                let da: Vec<f64> =
                    g.iter().zip(x.data()).map(|(gi, xi)| gi * sigmoid(*xi)).collect();
                self.accumulate(adj, *a, &da);
            }
            Op::Log(a) => {
                let x = self.value(*a);
                let da: Vec<f64> = g
                    .iter()
                    .zip(x.data())
                    .map(|(gi, xi)| if *xi > EPS_LOG { gi / xi } else { 0.0 })
                    .collect();
                self.accumulate(adj, *a, &da);
            }
            Op::Powf(a, p) => {
                let x = self.value(*a);
                let da: Vec<f64> = g
                    .iter()
                    .zip(x.data())
                    .map(|(gi, xi)| gi * p * xi.powf(p - 1.0))
                    .collect();
                self.accumulate(adj, *a, &da);
            }
            Op::Abs(a) => {
                let x = self.value(*a);
                let da: Vec<f64> = g
                    .iter()
                    .zip(x.data())
                    .map(|(gi, xi)| gi * sign(*xi))
                    .collect();
                self.accumulate(adj, *a, &da);
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a);
                let da: Vec<f64> = g
                    .iter()
                    .zip(x.data())
                    .map(|(gi, xi)| if *xi >= *lo && *xi <= *hi { *gi } else { 0.0 })
                    .collect();
                self.accumulate(adj, *a, &da);
            }
            Op::L2Norm(a) => {
                let x = self.value(*a);
                let norm = node.value.item();
                let da: Vec<f64> = if norm > 0.0 {
                    x.data().iter().map(|xi| g[0] * xi / norm).collect()
                } else {
                    vec![0.0; x.len()]
                };
                self.accumulate(adj, *a, &da);
            }
            Op::L2NormRows(a) => {
                let x = self.value(*a);
                let d = x.cols();
                let mut da = vec![0.0; x.len()];
                for i in 0..x.rows() {
                    let norm = node.value.data()[i];
                    if norm > 0.0 {
                        for j in 0..d {
                            da[i * d + j] = g[i] * x.data()[i * d + j] / norm;
                        }
                    }
                }
                self.accumulate(adj, *a, &da);
            }
            Op::GatherRows(a, indices) => {
                let t = self.value(*a);
                let d = if t.rank() == 2 { t.cols() } else { 1 };
                let mut da = vec![0.0; t.len()];
                for (k, &i) in indices.iter().enumerate() {
                    for j in 0..d {
                        da[i * d + j] += g[k * d + j];
                    }
                }
                self.accumulate(adj, *a, &da);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.accumulate(adj, p, &g[offset..offset + len]);
                    offset += len;
                }
            }
            Op::Reshape(a) => self.accumulate(adj, *a, g),
            Op::Grl(a, lambda) => {
                let da: Vec<f64> = g.iter().map(|x| -lambda * x).collect();
                self.accumulate(adj, *a, &da);
            }
            Op::Detach(_) => {}
            Op::CrossEntropy { logits, targets } => {
                let t = self.value(*logits);
                let k = t.cols();
                let n = targets.len() as f64;
                let mut da = vec![0.0; t.len()];
                for (i, &y) in targets.iter().enumerate() {
                    let row = t.row(i);
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
                    let denom: f64 = exps.iter().sum();
                    for j in 0..k {
                        let p = exps[j] / denom;
                        let delta = if j == y { 1.0 } else { 0.0 };
                        da[i * k + j] = g[0] * (p - delta) / n;
                    }
                }
                self.accumulate(adj, *logits, &da);
            }
        }
    }

    fn accumulate(&self, adj: &mut [Option<Vec<f64>>], target: Var, g: &[f64]) {
        let node = &self.nodes[target.0];
        // non-parameter leaves never allocate an adjoint
        if matches!(node.op, Op::Leaf) && !node.param {
            return;
        }
        match &mut adj[target.0] {
            Some(existing) => {
                for (e, x) in existing.iter_mut().zip(g) {
                    *e += x;
                }
            }
            None => adj[target.0] = Some(g.to_vec()),
        }
    }
}

fn clone_shape(like: &Tensor, data: Vec<f64>) -> Tensor {
    reshape_like(like, data)
}

fn reshape_like(like: &Tensor, data: Vec<f64>) -> Tensor {
    match like.rank() {
        0 => Tensor::scalar(data[0]),
        1 => Tensor::vector(data),
        _ => Tensor::matrix(like.rows(), like.cols(), data),
    }
}

fn map_data(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    reshape_like(t, t.data().iter().map(|x| f(*x)).collect())
}

/// Adjoint for one side of a broadcast binary op: if the operand was a
/// scalar, its adjoint is the sum of the upstream gradient.
fn spread(g: &[f64], operand_len: usize) -> Vec<f64> {
    if operand_len == g.len() {
        g.to_vec()
    } else {
        vec![g.iter().sum()]
    }
}

/// Adjoint of `mul` with respect to one operand: upstream times the other
/// operand, reduced to a scalar when that operand was broadcast.
fn pairwise(g: &[f64], other: &Tensor, operand_len: usize) -> Vec<f64> {
    if other.is_scalar() {
        // out = a * s: da = g * s (same length as a)
        let s = other.item();
        let full: Vec<f64> = g.iter().map(|x| x * s).collect();
        spread(&full, operand_len)
    } else {
        let full: Vec<f64> = g.iter().zip(other.data()).map(|(x, o)| x * o).collect();
        spread(&full, operand_len)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::AddScalar(..) => "add_scalar",
        Op::MulScalar(..) => "mul_scalar",
        Op::SubFromScalar(..) => "sub_from_scalar",
        Op::Matmul(..) => "matmul",
        Op::Mean(..) => "mean",
        Op::MeanRows(..) => "mean_rows",
        Op::Sum(..) => "sum",
        Op::Sigmoid(..) => "sigmoid",
        Op::Softplus(..) => "softplus",
        Op::Log(..) => "log",
        Op::Powf(..) => "powf",
        Op::Abs(..) => "abs",
        Op::Clamp(..) => "clamp",
        Op::L2Norm(..) => "l2_norm",
        Op::L2NormRows(..) => "l2_norm_rows",
        Op::GatherRows(..) => "gather_rows",
        Op::Concat(..) => "concat",
        Op::Reshape(..) => "reshape",
        Op::Grl(..) => "grl",
        Op::Detach(..) => "detach",
        Op::CrossEntropy { .. } => "cross_entropy_logits",
    }
}
