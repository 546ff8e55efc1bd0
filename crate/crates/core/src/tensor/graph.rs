//! Computation tape with reverse-mode differentiation.

use std::collections::HashMap;

use super::params::{Grads, ParamId, ParamStore};
use super::{mismatch, Tensor, TensorError};

const LN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    MulCol(Var, Var),
    MulConst(Var, Tensor),
    Sigmoid(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Rows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SegmentSum(Var, Vec<usize>),
    SegmentSoftmax(Var, Vec<usize>),
    WhereRows(Vec<bool>, Var, Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Tensor,
    },
    BceWithLogits {
        logits: Var,
        coef: Tensor,
    },
    Mse {
        pred: Var,
        target: Tensor,
        coef: Tensor,
    },
    Sum(Var),
    BiasGather {
        table: Var,
        col: usize,
        idx: Vec<Option<usize>>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    pub params: Grads,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if any flowed there.
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].as_ref()
    }
}

/// A tape bound to a parameter store.
pub struct Graph<'p> {
    store: &'p ParamStore,
    trainable: Option<&'p [bool]>,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store,
            trainable: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    /// Restricts gradient tracking to parameters flagged `true`.
    pub fn with_trainable(store: &'p ParamStore, trainable: &'p [bool]) -> Self {
        Graph {
            trainable: Some(trainable),
            ..Graph::new(store)
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// The parameter as a leaf; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let trainable = self.trainable.is_none_or(|t| t[id]);
        let v = self.leaf(self.store.get(id).clone(), trainable);
        self.param_vars.insert(id, v);
        v
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// A non-parameter leaf that does receive a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let y = self.value(a).matmul(self.value(b))?;
        Ok(self.push(y, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let y = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(y, Op::MatMulNt(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let y = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(y, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let y = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(y, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let y = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(y, Op::Mul(a, b), &[a, b]))
    }

    /// Adds the 1×c row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var, TensorError> {
        let (av, rv) = (self.value(a), self.value(r));
        if rv.rows != 1 || rv.cols != av.cols {
            return Err(mismatch("add_row", av, rv));
        }
        let mut y = av.clone();
        for i in 0..y.rows {
            for (o, b) in y.row_mut(i).iter_mut().zip(&rv.data) {
                *o += b;
            }
        }
        Ok(self.push(y, Op::AddRow(a, r), &[a, r]))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let y = self.value(a).map(|x| x * k);
        self.push(y, Op::Scale(a, k), &[a])
    }

    /// Multiplies `a` by the 1×1 tensor `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var, TensorError> {
        let sv = self.value(s);
        if sv.shape() != (1, 1) {
            return Err(mismatch("mul_scalar", self.value(a), sv));
        }
        let k = sv.item();
        let y = self.value(a).map(|x| x * k);
        Ok(self.push(y, Op::MulScalar(a, s), &[a, s]))
    }

    /// Scales row i of `a` by `c[i]`, with `c` an n×1 column.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var, TensorError> {
        let (av, cv) = (self.value(a), self.value(c));
        if cv.cols != 1 || cv.rows != av.rows {
            return Err(mismatch("mul_col", av, cv));
        }
        let mut y = av.clone();
        for i in 0..y.rows {
            let k = cv.data[i];
            y.row_mut(i).iter_mut().for_each(|x| *x *= k);
        }
        Ok(self.push(y, Op::MulCol(a, c), &[a, c]))
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var, TensorError> {
        let y = self.value(a).zip_map(&c, |x, k| x * k)?;
        Ok(self.push(y, Op::MulConst(a, c), &[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.value(a).map(sigmoid);
        self.push(y, Op::Sigmoid(a), &[a])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let y = self.value(a).map(gelu);
        self.push(y, Op::Gelu(a), &[a])
    }

    /// Row softmax. Columns with `key_mask[j] == false` get probability 0;
    /// a row needs at least one allowed column.
    pub fn softmax_rows(&mut self, a: Var, key_mask: Option<&[bool]>) -> Result<Var, TensorError> {
        let x = self.value(a);
        if let Some(m) = key_mask {
            if m.len() != x.cols {
                return Err(TensorError::ShapeMismatch {
                    op: "softmax_rows",
                    left: x.shape(),
                    right: (1, m.len()),
                });
            }
        }
        let allowed = |j: usize| key_mask.is_none_or(|m| m[j]);
        let mut y = Tensor::zeros(x.rows, x.cols);
        for i in 0..x.rows {
            let row = x.row(i);
            let max = (0..x.cols)
                .filter(|&j| allowed(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let out = y.row_mut(i);
            let mut total = 0.0;
            for j in 0..row.len() {
                if allowed(j) {
                    out[j] = (row[j] - max).exp();
                    total += out[j];
                }
            }
            out.iter_mut().for_each(|v| *v /= total);
        }
        Ok(self.push(y, Op::SoftmaxRows(a), &[a]))
    }

    /// Row-wise layer normalization with 1×c affine parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let c = xv.cols;
        for p in [gamma, beta] {
            if self.value(p).shape() != (1, c) {
                return Err(mismatch("layer_norm", xv, self.value(p)));
            }
        }
        let (g, b) = (&self.value(gamma).data, &self.value(beta).data);
        let mut xhat = Tensor::zeros(xv.rows, c);
        let mut inv_std = Vec::with_capacity(xv.rows);
        let mut y = Tensor::zeros(xv.rows, c);
        for i in 0..xv.rows {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(s);
            for j in 0..c {
                let h = (row[j] - mean) * s;
                xhat.set(i, j, h);
                y.set(i, j, h * g[j] + b[j]);
            }
        }
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        };
        Ok(self.push(y, op, &[x, gamma, beta]))
    }

    /// Rows of `table` at `idx` (embedding lookup / row selection).
    pub fn rows(&mut self, table: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(table);
        let mut y = Tensor::zeros(idx.len(), t.cols);
        for (r, &i) in idx.iter().enumerate() {
            if i >= t.rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "rows",
                    index: i,
                    len: t.rows,
                });
            }
            y.row_mut(r).copy_from_slice(t.row(i));
        }
        Ok(self.push(y, Op::Rows(table, idx.to_vec()), &[table]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut y = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows != rows {
                return Err(mismatch("concat_cols", self.value(parts[0]), v));
            }
            for i in 0..rows {
                y.row_mut(i)[off..off + v.cols].copy_from_slice(v.row(i));
            }
            off += v.cols;
        }
        Ok(self.push(y, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols != cols {
                return Err(mismatch("concat_rows", self.value(parts[0]), v));
            }
            data.extend_from_slice(&v.data);
            rows += v.rows;
        }
        let y = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(y, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let x = self.value(a);
        if start + len > x.cols {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                len: x.cols,
            });
        }
        let mut y = Tensor::zeros(x.rows, len);
        for i in 0..x.rows {
            y.row_mut(i).copy_from_slice(&x.row(i)[start..start + len]);
        }
        Ok(self.push(y, Op::SliceCols(a, start), &[a]))
    }

    /// Sums rows of `a` into `n_seg` buckets given by `seg`.
    pub fn segment_sum(&mut self, a: Var, seg: &[usize], n_seg: usize) -> Result<Var, TensorError> {
        let x = self.value(a);
        if seg.len() != x.rows {
            return Err(TensorError::ShapeMismatch {
                op: "segment_sum",
                left: x.shape(),
                right: (seg.len(), 1),
            });
        }
        let mut y = Tensor::zeros(n_seg, x.cols);
        for (i, &s) in seg.iter().enumerate() {
            if s >= n_seg {
                return Err(TensorError::IndexOutOfRange {
                    op: "segment_sum",
                    index: s,
                    len: n_seg,
                });
            }
            for (o, v) in y.row_mut(s).iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        Ok(self.push(y, Op::SegmentSum(a, seg.to_vec()), &[a]))
    }

    /// Softmax of the n×1 column `a` within each segment.
    pub fn segment_softmax(&mut self, a: Var, seg: &[usize], n_seg: usize) -> Result<Var, TensorError> {
        let x = self.value(a);
        if x.cols != 1 || seg.len() != x.rows {
            return Err(TensorError::ShapeMismatch {
                op: "segment_softmax",
                left: x.shape(),
                right: (seg.len(), 1),
            });
        }
        if let Some(&s) = seg.iter().find(|&&s| s >= n_seg) {
            return Err(TensorError::IndexOutOfRange {
                op: "segment_softmax",
                index: s,
                len: n_seg,
            });
        }
        let mut max = vec![f64::NEG_INFINITY; n_seg];
        for (i, &s) in seg.iter().enumerate() {
            max[s] = max[s].max(x.data[i]);
        }
        let mut y = Tensor::zeros(x.rows, 1);
        let mut total = vec![0.0; n_seg];
        for (i, &s) in seg.iter().enumerate() {
            y.data[i] = (x.data[i] - max[s]).exp();
            total[s] += y.data[i];
        }
        for (i, &s) in seg.iter().enumerate() {
            y.data[i] /= total[s];
        }
        Ok(self.push(y, Op::SegmentSoftmax(a, seg.to_vec()), &[a]))
    }

    /// Row i from `a` where `mask[i]`, else from `b`.
    pub fn where_rows(&mut self, mask: &[bool], a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() || mask.len() != av.rows {
            return Err(mismatch("where_rows", av, bv));
        }
        let mut y = bv.clone();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                y.row_mut(i).copy_from_slice(av.row(i));
            }
        }
        Ok(self.push(y, Op::WhereRows(mask.to_vec(), a, b), &[a, b]))
    }

    /// Mean cross-entropy of rows of `logits` against `targets`. With class
    /// weights the mean is weighted: Σ w_y·ℓ / Σ w_y.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        class_weights: Option<&[f64]>,
    ) -> Result<Var, TensorError> {
        let x = self.value(logits);
        if targets.len() != x.rows || targets.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: x.shape(),
                right: (targets.len(), 1),
            });
        }
        let mut probs = Tensor::zeros(x.rows, x.cols);
        let mut weights = Vec::with_capacity(targets.len());
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= x.cols {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: t,
                    len: x.cols,
                });
            }
            let row = x.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (p, v) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
            let w = class_weights.map_or(1.0, |cw| cw[t]);
            weights.push(w);
            loss += w * (lse - row[t]);
        }
        let wsum: f64 = weights.iter().sum();
        let y = Tensor::scalar(loss / wsum);
        weights.iter_mut().for_each(|w| *w /= wsum);
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            weights,
            probs,
        };
        Ok(self.push(y, op, &[logits]))
    }

    /// Mean binary cross-entropy with logits over entries where `valid`,
    /// positives weighted by the per-column `pos_weight`.
    pub fn bce_with_logits(
        &mut self,
        logits: Var,
        targets: &Tensor,
        valid: &[bool],
        pos_weight: Option<&[f64]>,
    ) -> Result<Var, TensorError> {
        let x = self.value(logits);
        if targets.shape() != x.shape() || valid.len() != x.len() {
            return Err(mismatch("bce_with_logits", x, targets));
        }
        let n_valid = valid.iter().filter(|&&v| v).count().max(1) as f64;
        let mut loss = 0.0;
        // Per entry: the weights of softplus(−z) and softplus(z).
        let mut coef = Tensor::zeros(x.rows, 2 * x.cols);
        for i in 0..x.rows {
            for j in 0..x.cols {
                let k = i * x.cols + j;
                if !valid[k] {
                    continue;
                }
                let pw = pos_weight.map_or(1.0, |p| p[j]);
                let (y, z) = (targets.data[k], x.data[k]);
                let a = pw * y / n_valid;
                let b = (1.0 - y) / n_valid;
                loss += a * softplus(-z) + b * softplus(z);
                coef.set(i, 2 * j, a);
                coef.set(i, 2 * j + 1, b);
            }
        }
        let op = Op::BceWithLogits { logits, coef };
        Ok(self.push(Tensor::scalar(loss), op, &[logits]))
    }

    /// Mean squared error over entries where `valid`.
    pub fn mse(&mut self, pred: Var, target: &Tensor, valid: &[bool]) -> Result<Var, TensorError> {
        let x = self.value(pred);
        if target.shape() != x.shape() || valid.len() != x.len() {
            return Err(mismatch("mse", x, target));
        }
        let n_valid = valid.iter().filter(|&&v| v).count().max(1) as f64;
        let coef = Tensor {
            rows: x.rows,
            cols: x.cols,
            data: valid.iter().map(|&v| if v { 1.0 / n_valid } else { 0.0 }).collect(),
        };
        let loss: f64 = (0..x.len())
            .map(|k| coef.data[k] * (x.data[k] - target.data[k]).powi(2))
            .sum();
        let op = Op::Mse {
            pred,
            target: target.clone(),
            coef,
        };
        Ok(self.push(Tensor::scalar(loss), op, &[pred]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let y = Tensor::scalar(self.value(a).sum());
        self.push(y, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// n×n matrix with entry (i, j) = `table[idx[i·n + j]][col]`, or 0 where
    /// the index is `None`.
    pub fn bias_gather(&mut self, table: Var, col: usize, idx: &[Option<usize>], n: usize) -> Result<Var, TensorError> {
        let t = self.value(table);
        if idx.len() != n * n || col >= t.cols {
            return Err(TensorError::ShapeMismatch {
                op: "bias_gather",
                left: t.shape(),
                right: (idx.len(), col),
            });
        }
        let mut y = Tensor::zeros(n, n);
        for (k, ix) in idx.iter().enumerate() {
            if let Some(r) = *ix {
                if r >= t.rows {
                    return Err(TensorError::IndexOutOfRange {
                        op: "bias_gather",
                        index: r,
                        len: t.rows,
                    });
                }
                y.data[k] = t.get(r, col);
            }
        }
        let op = Op::BiasGather {
            table,
            col,
            idx: idx.to_vec(),
        };
        Ok(self.push(y, op, &[table]))
    }

    /// Reverse pass from the 1×1 node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.0] = Some(Tensor::full(
            self.nodes[loss.0].value.rows,
            self.nodes[loss.0].value.cols,
            1.0,
        ));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        let mut params = Grads::zeros_like(self.store);
        for (&id, &v) in &self.param_vars {
            if let Some(g) = &grads[v.0] {
                params.accumulate(id, g);
            }
        }
        Gradients { nodes: grads, params }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    self.acc(grads, *a, dy.matmul_nt(val(*b)).unwrap());
                }
                if self.wants(*b) {
                    self.acc(grads, *b, val(*a).matmul_tn(dy).unwrap());
                }
            }
            Op::MatMulNt(a, b) => {
                if self.wants(*a) {
                    self.acc(grads, *a, dy.matmul(val(*b)).unwrap());
                }
                if self.wants(*b) {
                    self.acc(grads, *b, dy.matmul_tn(val(*a)).unwrap());
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, dy.clone());
                self.acc(grads, *b, dy.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, dy.clone());
                self.acc(grads, *b, dy.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.acc(grads, *a, dy.zip_map(val(*b), |g, y| g * y).unwrap());
                }
                if self.wants(*b) {
                    self.acc(grads, *b, dy.zip_map(val(*a), |g, x| g * x).unwrap());
                }
            }
            Op::AddRow(a, r) => {
                self.acc(grads, *a, dy.clone());
                if self.wants(*r) {
                    let mut g = Tensor::zeros(1, dy.cols);
                    for i in 0..dy.rows {
                        for (o, v) in g.data.iter_mut().zip(dy.row(i)) {
                            *o += v;
                        }
                    }
                    self.acc(grads, *r, g);
                }
            }
            Op::Scale(a, k) => self.acc(grads, *a, dy.map(|x| x * k)),
            Op::MulScalar(a, s) => {
                let k = val(*s).item();
                if self.wants(*a) {
                    self.acc(grads, *a, dy.map(|x| x * k));
                }
                if self.wants(*s) {
                    let d: f64 = dy.data.iter().zip(&val(*a).data).map(|(g, x)| g * x).sum();
                    self.acc(grads, *s, Tensor::scalar(d));
                }
            }
            Op::MulCol(a, c) => {
                let (av, cv) = (val(*a), val(*c));
                if self.wants(*a) {
                    let mut g = dy.clone();
                    for i in 0..g.rows {
                        let k = cv.data[i];
                        g.row_mut(i).iter_mut().for_each(|x| *x *= k);
                    }
                    self.acc(grads, *a, g);
                }
                if self.wants(*c) {
                    let g = (0..av.rows)
                        .map(|i| dy.row(i).iter().zip(av.row(i)).map(|(p, q)| p * q).sum())
                        .collect();
                    self.acc(grads, *c, Tensor::from_vec(av.rows, 1, g).unwrap());
                }
            }
            Op::MulConst(a, c) => self.acc(grads, *a, dy.zip_map(c, |g, k| g * k).unwrap()),
            Op::Sigmoid(a) => {
                let g = dy.zip_map(&node.value, |g, s| g * s * (1.0 - s)).unwrap();
                self.acc(grads, *a, g);
            }
            Op::Gelu(a) => {
                let g = dy.zip_map(val(*a), |g, x| g * gelu_grad(x)).unwrap();
                self.acc(grads, *a, g);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut g = Tensor::zeros(y.rows, y.cols);
                for i in 0..y.rows {
                    let (yr, dr) = (y.row(i), dy.row(i));
                    let dot: f64 = yr.iter().zip(dr).map(|(p, q)| p * q).sum();
                    for (o, (p, q)) in g.row_mut(i).iter_mut().zip(yr.iter().zip(dr)) {
                        *o = p * (q - dot);
                    }
                }
                self.acc(grads, *a, g);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = xhat.cols;
                let gv = &val(*gamma).data;
                if self.wants(*x) {
                    let mut g = Tensor::zeros(xhat.rows, c);
                    for i in 0..xhat.rows {
                        let dxh: Vec<f64> = dy.row(i).iter().zip(gv).map(|(d, w)| d * w).collect();
                        let xh = xhat.row(i);
                        let m1 = dxh.iter().sum::<f64>() / c as f64;
                        let m2 = dxh.iter().zip(xh).map(|(d, h)| d * h).sum::<f64>() / c as f64;
                        for j in 0..c {
                            g.set(i, j, inv_std[i] * (dxh[j] - m1 - xh[j] * m2));
                        }
                    }
                    self.acc(grads, *x, g);
                }
                if self.wants(*gamma) {
                    let mut g = Tensor::zeros(1, c);
                    for i in 0..xhat.rows {
                        for j in 0..c {
                            g.data[j] += dy.get(i, j) * xhat.get(i, j);
                        }
                    }
                    self.acc(grads, *gamma, g);
                }
                if self.wants(*beta) {
                    let mut g = Tensor::zeros(1, c);
                    for i in 0..xhat.rows {
                        for (o, v) in g.data.iter_mut().zip(dy.row(i)) {
                            *o += v;
                        }
                    }
                    self.acc(grads, *beta, g);
                }
            }
            Op::Rows(t, idx) => {
                let tv = val(*t);
                let mut g = Tensor::zeros(tv.rows, tv.cols);
                for (r, &i) in idx.iter().enumerate() {
                    for (o, v) in g.row_mut(i).iter_mut().zip(dy.row(r)) {
                        *o += v;
                    }
                }
                self.acc(grads, *t, g);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let cols = val(p).cols;
                    if self.wants(p) {
                        let mut g = Tensor::zeros(dy.rows, cols);
                        for i in 0..dy.rows {
                            g.row_mut(i).copy_from_slice(&dy.row(i)[off..off + cols]);
                        }
                        self.acc(grads, p, g);
                    }
                    off += cols;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (rows, cols) = val(p).shape();
                    if self.wants(p) {
                        let data = dy.data[off * cols..(off + rows) * cols].to_vec();
                        self.acc(grads, p, Tensor::from_vec(rows, cols, data).unwrap());
                    }
                    off += rows;
                }
            }
            Op::SliceCols(a, start) => {
                let av = val(*a);
                let mut g = Tensor::zeros(av.rows, av.cols);
                for i in 0..av.rows {
                    g.row_mut(i)[*start..*start + dy.cols].copy_from_slice(dy.row(i));
                }
                self.acc(grads, *a, g);
            }
            Op::SegmentSum(a, seg) => {
                let av = val(*a);
                let mut g = Tensor::zeros(av.rows, av.cols);
                for (i, &s) in seg.iter().enumerate() {
                    g.row_mut(i).copy_from_slice(dy.row(s));
                }
                self.acc(grads, *a, g);
            }
            Op::SegmentSoftmax(a, seg) => {
                let y = &node.value;
                let n_seg = seg.iter().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; n_seg];
                for (i, &s) in seg.iter().enumerate() {
                    dot[s] += dy.data[i] * y.data[i];
                }
                let g = (0..y.rows).map(|i| y.data[i] * (dy.data[i] - dot[seg[i]])).collect();
                self.acc(grads, *a, Tensor::from_vec(y.rows, 1, g).unwrap());
            }
            Op::WhereRows(mask, a, b) => {
                let mut ga = Tensor::zeros(dy.rows, dy.cols);
                let mut gb = Tensor::zeros(dy.rows, dy.cols);
                for (i, &m) in mask.iter().enumerate() {
                    let target = if m { &mut ga } else { &mut gb };
                    target.row_mut(i).copy_from_slice(dy.row(i));
                }
                self.acc(grads, *a, ga);
                self.acc(grads, *b, gb);
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let k = dy.item();
                let mut g = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    let row = g.row_mut(i);
                    row[t] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= k * weights[i]);
                }
                self.acc(grads, *logits, g);
            }
            Op::BceWithLogits { logits, coef, .. } => {
                let k = dy.item();
                let z = val(*logits);
                let g = (0..z.len())
                    .map(|e| {
                        let (i, j) = (e / z.cols, e % z.cols);
                        let (a, b) = (coef.get(i, 2 * j), coef.get(i, 2 * j + 1));
                        let s = sigmoid(z.data[e]);
                        k * (-a * (1.0 - s) + b * s)
                    })
                    .collect();
                self.acc(grads, *logits, Tensor::from_vec(z.rows, z.cols, g).unwrap());
            }
            Op::Mse { pred, target, coef } => {
                let k = dy.item();
                let p = val(*pred);
                let g = (0..p.len())
                    .map(|e| k * 2.0 * coef.data[e] * (p.data[e] - target.data[e]))
                    .collect();
                self.acc(grads, *pred, Tensor::from_vec(p.rows, p.cols, g).unwrap());
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                self.acc(grads, *a, Tensor::full(r, c, dy.item()));
            }
            Op::BiasGather { table, col, idx } => {
                let tv = val(*table);
                let mut g = Tensor::zeros(tv.rows, tv.cols);
                for (k, ix) in idx.iter().enumerate() {
                    if let Some(r) = *ix {
                        g.data[r * tv.cols + col] += dy.data[k];
                    }
                }
                self.acc(grads, *table, g);
            }
        }
    }
}
