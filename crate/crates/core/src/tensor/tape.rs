use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::math;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    QuickGelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Dropout { x: Var, mask: Vec<f64> },
    GatherRows { table: Var, ids: Vec<usize> },
    ConcatRows(Var, Var),
    SliceRows { x: Var, start: usize },
    Attention { qkv: Var, heads: usize, probs: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<f64>, count: usize },
    Sum(Var),
    SumSquares(Var),
}

struct Node {
    /// `None` for parameters, whose values live in the store.
    value: Option<Tensor>,
    op: Op,
}

/// Records a computation over a borrowed [`ParamStore`] for one backward pass.
///
/// Values are computed eagerly when an op is recorded.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn shape_err(msg: alloc::string::String) -> Error {
    Error::ShapeMismatch(msg)
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new(), param_vars: vec![None; params.len()] }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    /// The parameter as a tape variable; repeated calls return the same var.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let id = self.params.require(name)?;
        Ok(self.param(id))
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.tensor(*id),
            (None, _) => unreachable!("only parameters are stored outside the tape"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        if tb.shape().len() != 2 || tb.rows() != k {
            return Err(shape_err(format!("matmul {:?} x {:?}", ta.shape(), tb.shape())));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(ta.data(), tb.data(), &mut out, m, k, n);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(shape_err(format!("add {:?} + {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Add(a, b)))
    }

    /// Adds a length-`n` bias to every row of an `[m, n]` input.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tx.cols();
        if tb.len() != n {
            return Err(shape_err(format!("bias {:?} for {:?}", tb.shape(), tx.shape())));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let shape = tx.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::AddBias(x, bias)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let tx = self.value(x);
        let t = Tensor::from_parts(tx.shape().to_vec(), tx.data().iter().map(|v| v * c).collect());
        self.push(t, Op::Scale(x, c))
    }

    pub fn quick_gelu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let t = Tensor::from_parts(tx.shape().to_vec(), tx.data().iter().map(|&v| super::ops::quick_gelu_scalar(v)).collect());
        self.push(t, Op::QuickGelu(x))
    }

    /// Normalizes each row over the last axis, then scales and shifts.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let n = tx.cols();
        if n == 0 || tg.len() != n || tb.len() != n {
            return Err(shape_err(format!("layer_norm {:?} with gain {:?}", tx.shape(), tg.shape())));
        }
        let m = tx.rows();
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let s = 1.0 / math::sqrt(var + eps);
            rstd[r] = s;
            for i in 0..n {
                let h = (row[i] - mean) * s;
                xhat[r * n + i] = h;
                out[r * n + i] = h * tg.data()[i] + tb.data()[i];
            }
        }
        let shape = tx.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::LayerNorm { x, gamma, beta, xhat, rstd }))
    }

    /// Inverted dropout; `rate == 0` returns `x` unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - rate);
        let tx = self.value(x);
        let mask: Vec<f64> = (0..tx.len()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
        let data = tx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push(t, Op::Dropout { x, mask })
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (v, d) = (tt.rows(), tt.cols());
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::IndexOutOfVocab { id, size: v });
            }
            out.extend_from_slice(tt.row(id));
        }
        Ok(self.push(Tensor::from_parts(vec![ids.len(), d], out), Op::GatherRows { table, ids: ids.to_vec() }))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(shape_err(format!("concat {:?} with {:?}", ta.shape(), tb.shape())));
        }
        let mut data = ta.data().to_vec();
        data.extend_from_slice(tb.data());
        let shape = vec![ta.rows() + tb.rows(), ta.cols()];
        Ok(self.push(Tensor::from_parts(shape, data), Op::ConcatRows(a, b)))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let c = tx.cols();
        if start + len > tx.rows() {
            return Err(shape_err(format!("rows {start}..{} of {:?}", start + len, tx.shape())));
        }
        let data = tx.data()[start * c..(start + len) * c].to_vec();
        Ok(self.push(Tensor::from_parts(vec![len, c], data), Op::SliceRows { x, start }))
    }

    /// Scaled dot-product attention over packed `[T, 3D]` query/key/value
    /// rows, split into `heads` heads. Keys with `key_mask[j] == false` get
    /// zero weight. Returns `[T, D]`.
    pub fn attention(&mut self, qkv: Var, key_mask: &[bool], heads: usize) -> Result<Var> {
        let t = self.value(qkv);
        let (rows, width) = (t.rows(), t.cols());
        if heads == 0 || width % (3 * heads) != 0 || key_mask.len() != rows {
            return Err(shape_err(format!("attention over {:?} with {heads} heads", t.shape())));
        }
        if !key_mask.iter().any(|&m| m) {
            return Err(shape_err("attention needs at least one valid key".into()));
        }
        let d = width / 3;
        let dh = d / heads;
        let scale = 1.0 / math::sqrt(dh as f64);
        let x = t.data();
        let mut probs = vec![0.0; heads * rows * rows];
        let mut out = vec![0.0; rows * d];
        let mut scores = vec![0.0; rows];
        for h in 0..heads {
            let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
            for i in 0..rows {
                let q = &x[i * width + qo..i * width + qo + dh];
                let mut max = f64::NEG_INFINITY;
                for j in 0..rows {
                    if key_mask[j] {
                        let k = &x[j * width + ko..j * width + ko + dh];
                        let s = dot(q, k) * scale;
                        scores[j] = s;
                        max = max.max(s);
                    }
                }
                let p = &mut probs[(h * rows + i) * rows..(h * rows + i + 1) * rows];
                let mut total = 0.0;
                for j in 0..rows {
                    if key_mask[j] {
                        p[j] = math::exp(scores[j] - max);
                        total += p[j];
                    }
                }
                let o = &mut out[i * d + h * dh..i * d + (h + 1) * dh];
                for j in 0..rows {
                    if key_mask[j] {
                        p[j] /= total;
                        let v = &x[j * width + vo..j * width + vo + dh];
                        axpy(p[j], v, o);
                    }
                }
            }
        }
        Ok(self.push(Tensor::from_parts(vec![rows, d], out), Op::Attention { qkv, heads, probs }))
    }

    /// Attention weights cached by an attention op, laid out `[heads, T, T]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Mean softmax cross-entropy over rows whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let t = self.value(logits);
        let (m, k) = (t.rows(), t.cols());
        if targets.len() != m {
            return Err(Error::LengthMismatch { expected: m, actual: targets.len() });
        }
        let mut probs = vec![0.0; m * k];
        let mut total = 0.0;
        let mut count = 0;
        for (r, target) in targets.iter().enumerate() {
            let Some(target) = *target else { continue };
            if target >= k {
                return Err(Error::TargetOutOfRange { target, classes: k });
            }
            let row = t.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| math::exp(v - max)).sum();
            for (p, v) in probs[r * k..(r + 1) * k].iter_mut().zip(row) {
                *p = math::exp(v - max) / z;
            }
            total += -(row[target] - max - math::ln(z));
            count += 1;
        }
        if count == 0 {
            return Err(Error::NoValidTargets);
        }
        let loss = Tensor::scalar(total / count as f64);
        Ok(self.push(loss, Op::CrossEntropy { logits, targets: targets.to_vec(), probs, count }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        self.push(Tensor::scalar(s), Op::SumSquares(x))
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let mut grads = self.params.zero_grads();
        self.backward_into(loss, 1.0, &mut grads)?;
        Ok(grads)
    }

    /// Adds `seed * d(loss)/d(param)` into `grads`.
    pub fn backward_into(&self, loss: Var, seed: f64, grads: &mut Gradients) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(shape_err(format!("backward from non-scalar {:?}", self.value(loss).shape())));
        }
        if grads.len() != self.params.len() {
            return Err(shape_err("gradient buffer does not match the parameter store".into()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![seed]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj, grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>], grads: &mut Gradients) {
        match &self.nodes[i].op {
            Op::Constant => {}
            Op::Param(id) => {
                for (a, b) in grads.slot_mut(*id).iter_mut().zip(g) {
                    *a += b;
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                let ga = slot(adj, *a, m * k);
                // dA = dC * B^T
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        ga[r * k + p] += dot(grow, &tb.data()[p * n..(p + 1) * n]);
                    }
                }
                let gb = slot(adj, *b, k * n);
                // dB = A^T * dC
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        axpy(ta.data()[r * k + p], grow, &mut gb[p * n..(p + 1) * n]);
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(slot(adj, *a, g.len()), g);
                add_into(slot(adj, *b, g.len()), g);
            }
            Op::AddBias(x, bias) => {
                add_into(slot(adj, *x, g.len()), g);
                let n = self.value(*bias).len();
                let gb = slot(adj, *bias, n);
                for row in g.chunks(n.max(1)) {
                    add_into(gb, row);
                }
            }
            Op::Scale(x, c) => {
                let gx = slot(adj, *x, g.len());
                for (a, b) in gx.iter_mut().zip(g) {
                    *a += c * b;
                }
            }
            Op::QuickGelu(x) => {
                let tx = self.value(*x);
                let gx = slot(adj, *x, g.len());
                for ((a, b), &v) in gx.iter_mut().zip(g).zip(tx.data()) {
                    *a += b * super::quick_gelu_grad(v);
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let tg = self.value(*gamma);
                let n = tg.len();
                let m = rstd.len();
                {
                    let gg = slot(adj, *gamma, n);
                    for r in 0..m {
                        for c in 0..n {
                            gg[c] += g[r * n + c] * xhat[r * n + c];
                        }
                    }
                }
                {
                    let gbeta = slot(adj, *beta, n);
                    for row in g.chunks(n) {
                        add_into(gbeta, row);
                    }
                }
                let gx = slot(adj, *x, m * n);
                let mut dxhat = vec![0.0; n];
                for r in 0..m {
                    let h = &xhat[r * n..(r + 1) * n];
                    for c in 0..n {
                        dxhat[c] = g[r * n + c] * tg.data()[c];
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                    let mean_dh = dot(&dxhat, h) / n as f64;
                    for c in 0..n {
                        gx[r * n + c] += rstd[r] * (dxhat[c] - mean_d - h[c] * mean_dh);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                let gx = slot(adj, *x, g.len());
                for ((a, b), m) in gx.iter_mut().zip(g).zip(mask) {
                    *a += b * m;
                }
            }
            Op::GatherRows { table, ids } => {
                let tt = self.value(*table);
                let d = tt.cols();
                let gt = slot(adj, *table, tt.len());
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                }
            }
            Op::ConcatRows(a, b) => {
                let na = self.value(*a).len();
                add_into(slot(adj, *a, na), &g[..na]);
                let nb = g.len() - na;
                add_into(slot(adj, *b, nb), &g[na..]);
            }
            Op::SliceRows { x, start } => {
                let tx = self.value(*x);
                let c = tx.cols();
                let gx = slot(adj, *x, tx.len());
                add_into(&mut gx[start * c..start * c + g.len()], g);
            }
            Op::Attention { qkv, heads, probs } => {
                let t = self.value(*qkv);
                let (rows, width) = (t.rows(), t.cols());
                let d = width / 3;
                let dh = d / heads;
                let scale = 1.0 / math::sqrt(dh as f64);
                let x = t.data();
                let gx = slot(adj, *qkv, rows * width);
                let mut dp = vec![0.0; rows];
                for h in 0..*heads {
                    let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
                    for i in 0..rows {
                        let p = &probs[(h * rows + i) * rows..(h * rows + i + 1) * rows];
                        let go = &g[i * d + h * dh..i * d + (h + 1) * dh];
                        let mut weighted = 0.0;
                        for j in 0..rows {
                            if p[j] != 0.0 {
                                let v = &x[j * width + vo..j * width + vo + dh];
                                dp[j] = dot(go, v);
                                weighted += p[j] * dp[j];
                                axpy(p[j], go, &mut gx[j * width + vo..j * width + vo + dh]);
                            }
                        }
                        for j in 0..rows {
                            if p[j] != 0.0 {
                                let ds = p[j] * (dp[j] - weighted) * scale;
                                let (ki, qi) = (j * width + ko, i * width + qo);
                                for c in 0..dh {
                                    gx[qi + c] += ds * x[ki + c];
                                    gx[ki + c] += ds * x[qi + c];
                                }
                            }
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs, count } => {
                let k = self.value(*logits).cols();
                let w = g[0] / *count as f64;
                let gl = slot(adj, *logits, probs.len());
                for (r, target) in targets.iter().enumerate() {
                    let Some(target) = *target else { continue };
                    for c in 0..k {
                        let onehot = if c == target { 1.0 } else { 0.0 };
                        gl[r * k + c] += w * (probs[r * k + c] - onehot);
                    }
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                for a in slot(adj, *x, n).iter_mut() {
                    *a += g[0];
                }
            }
            Op::SumSquares(x) => {
                let tx = self.value(*x);
                let gx = slot(adj, *x, tx.len());
                for (a, v) in gx.iter_mut().zip(tx.data()) {
                    *a += 2.0 * v * g[0];
                }
            }
        }
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(a[i * k + p], &b[p * n..(p + 1) * n], row);
        }
    }
}
