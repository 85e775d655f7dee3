use rand::Rng;

use super::tensor::{broadcast_shape, for_each_broadcast, Tensor};
use super::NumericsError;

/// Additive logit offset applied to masked positions before a softmax.
pub const MASK_NEG: f64 = -1e9;

/// Handle to a node recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    /// Population variance (divides by the axis length).
    Var,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    MatMul(Var, Var),
    Exp(Var),
    Tanh(Var),
    Relu(Var),
    Sqrt(Var),
    Softmax(Var),
    Transpose(Var),
    Concat(Vec<Var>),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Reduce {
        input: Var,
        axis: usize,
        kind: ReduceKind,
    },
    SumAll(Var),
    MeanAll(Var),
    Reshape(Var),
    Dropout {
        input: Var,
        scale_mask: Vec<f64>,
    },
    UnfoldTime {
        input: Var,
        kernel: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Append-only computation record. Nodes are stored in creation order, which
/// is a topological order of the recorded expression DAG.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn split_last2(shape: &[usize]) -> (usize, usize, usize) {
    let r = shape.len();
    let batch: usize = shape[..r - 2].iter().product();
    (batch, shape[r - 2], shape[r - 1])
}

// c[m×n] += a[m×k] · b[k×n]
fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

// ga[m×k] += g[m×n] · b[k×n]ᵀ
fn gemm_a_bt_acc(g: &[f64], b: &[f64], ga: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for (x, y) in grow.iter().zip(brow) {
                s += x * y;
            }
            ga[i * k + p] += s;
        }
    }
}

// gb[k×n] += a[m×k]ᵀ · g[m×n]
fn gemm_at_b_acc(a: &[f64], g: &[f64], gb: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let gbrow = &mut gb[p * n..(p + 1) * n];
            for (x, y) in gbrow.iter_mut().zip(grow) {
                *x += av * y;
            }
        }
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of a leaf, if any backward pass has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| NumericsError::ShapeMismatch {
            op: name,
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let data = if sa == sb {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut out = vec![0.0; out_shape.iter().product()];
            for_each_broadcast(&out_shape, &sa, &sb, |o, i, j| out[o] = f(av[i], bv[j]));
            out
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(out_shape, data)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("unary preserves shape");
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::MulScalar(a, c))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    /// Matrix product over the last two axes. Leading axes must either match
    /// or `b` must be a plain matrix shared across the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || NumericsError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (ba, m, k) = split_last2(&sa);
        let (bb, k2, n) = split_last2(&sb);
        if k != k2 {
            return Err(mismatch());
        }
        let shared = bb == 1;
        if !shared && sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(mismatch());
        }
        let mut out = vec![0.0; ba * m * n];
        let av = self.value(a).data();
        let bv = self.value(b).data();
        if shared {
            gemm_acc(av, bv, &mut out, ba * m, k, n);
        } else {
            for i in 0..ba {
                gemm_acc(
                    &av[i * m * k..(i + 1) * m * k],
                    &bv[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.extend([m, n]);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(a, b), rg))
    }

    /// `x · w + b` with `w` a `[in, out]` matrix and `b` a length-`out` vector.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    /// Softmax over the last axis. `mask`, when given, is added to the
    /// logits first (use [`MASK_NEG`] at suppressed positions) and must
    /// broadcast against `x`.
    pub fn softmax(&mut self, x: Var, mask: Option<Var>) -> Result<Var, NumericsError> {
        let x = match mask {
            Some(m) => {
                let out = self.add(x, m)?;
                if self.shape(out) != self.shape(x) {
                    return Err(NumericsError::ShapeMismatch {
                        op: "softmax mask",
                        lhs: self.shape(x).to_vec(),
                        rhs: self.shape(m).to_vec(),
                    });
                }
                out
            }
            None => x,
        };
        let t = self.value(x);
        let shape = t.shape().to_vec();
        let n = *shape.last().ok_or(NumericsError::RankTooLow { op: "softmax", rank: 0 })?;
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(x), rg))
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 2 {
            return Err(NumericsError::RankTooLow {
                op: "transpose",
                rank: shape.len(),
            });
        }
        let (batch, m, n) = split_last2(&shape);
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        for b in 0..batch {
            let base = b * m * n;
            for i in 0..m {
                for j in 0..n {
                    out[base + j * m + i] = src[base + i * n + j];
                }
            }
        }
        let mut new_shape = shape.clone();
        let r = shape.len();
        new_shape.swap(r - 1, r - 2);
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(new_shape, out)?, Op::Transpose(a), rg))
    }

    /// Concatenate along the last axis; all other axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = *parts.first().ok_or(NumericsError::EmptyConcat)?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat",
                    lhs: self.shape(first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Take `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, NumericsError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(NumericsError::SliceOutOfRange {
                shape,
                axis,
                start,
                len,
            });
        }
        let (outer, dim, inner) = axis_split(&shape, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(new_shape, out)?, Op::Slice { input: a, axis, start }, rg))
    }

    /// Reduce over one axis, keeping it with length 1.
    pub fn reduce(&mut self, a: Var, axis: usize, kind: ReduceKind) -> Result<Var, NumericsError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(NumericsError::RankTooLow {
                op: "reduce",
                rank: shape.len(),
            });
        }
        let (outer, dim, inner) = axis_split(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |d: usize| src[o * dim * inner + d * inner + i];
                let sum: f64 = (0..dim).map(at).sum();
                out[o * inner + i] = match kind {
                    ReduceKind::Sum => sum,
                    ReduceKind::Mean => sum / dim as f64,
                    ReduceKind::Var => {
                        let mean = sum / dim as f64;
                        (0..dim).map(|d| (at(d) - mean).powi(2)).sum::<f64>() / dim as f64
                    }
                };
            }
        }
        let mut new_shape = shape;
        new_shape[axis] = 1;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(new_shape, out)?, Op::Reduce { input: a, axis, kind }, rg))
    }

    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var, NumericsError> {
        self.reduce(a, axis, ReduceKind::Sum)
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var, NumericsError> {
        self.reduce(a, axis, ReduceKind::Mean)
    }

    pub fn var(&mut self, a: Var, axis: usize) -> Result<Var, NumericsError> {
        self.reduce(a, axis, ReduceKind::Var)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::MeanAll(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Inverted dropout: in training, zero each element with probability
    /// `rate` and scale survivors by `1/(1-rate)`. Identity otherwise.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, train: bool, rng: &mut R) -> Var {
        if !train || rate <= 0.0 {
            return a;
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(a).numel();
        let scale_mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let t = self.value(a);
        let data = t.data().iter().zip(&scale_mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("dropout preserves shape");
        let rg = self.rg(a);
        self.push(value, Op::Dropout { input: a, scale_mask }, rg)
    }

    /// Gather a `kernel`-tap temporal neighbourhood for each step of a
    /// `[batch, time, channels]` tensor, zero padded so the output keeps the
    /// input length. Output is `[batch, time, kernel * channels]` with tap `j`
    /// reading step `t + j - (kernel - 1) / 2`.
    pub fn unfold_time(&mut self, a: Var, kernel: usize) -> Result<Var, NumericsError> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 3 {
            return Err(NumericsError::RankTooLow {
                op: "unfold_time",
                rank: shape.len(),
            });
        }
        let (b, t, c) = (shape[0], shape[1], shape[2]);
        let left = (kernel.saturating_sub(1) / 2) as isize;
        let src = self.value(a).data();
        let mut out = vec![0.0; b * t * kernel * c];
        for bi in 0..b {
            for ti in 0..t {
                for j in 0..kernel {
                    let s = ti as isize + j as isize - left;
                    if s < 0 || s >= t as isize {
                        continue;
                    }
                    let src_off = (bi * t + s as usize) * c;
                    let dst_off = (bi * t + ti) * kernel * c + j * c;
                    out[dst_off..dst_off + c].copy_from_slice(&src[src_off..src_off + c]);
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![b, t, kernel * c], out)?,
            Op::UnfoldTime { input: a, kernel },
            rg,
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`. Gradients are added into every
    /// trainable leaf, so repeated calls accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(NumericsError::NonScalarLoss {
                shape: lt.shape().to_vec(),
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                let node = &mut self.nodes[id];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(id, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let node = &nodes[id];
        let out = node.value.data();
        let want = |v: Var| nodes[v.0].requires_grad;
        // Adjoint buffers are taken out and put back so that an op using the
        // same node twice (x * x) sees both contributions.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let len = nodes[v.0].value.numel();
            let mut buf = adj[v.0].take().unwrap_or_else(|| vec![0.0; len]);
            f(&mut buf);
            adj[v.0] = Some(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                let (a, b) = (*a, *b);
                let sa = nodes[a.0].value.shape();
                let sb = nodes[b.0].value.shape();
                let os = node.value.shape();
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                let kind = &node.op;
                if want(a) {
                    acc(a, &mut |ga| {
                        for_each_broadcast(os, sa, sb, |o, i, j| {
                            ga[i] += match kind {
                                Op::Add(..) | Op::Sub(..) => g[o],
                                Op::Mul(..) => g[o] * bv[j],
                                _ => g[o] / bv[j],
                            }
                        })
                    });
                }
                if want(b) {
                    acc(b, &mut |gb| {
                        for_each_broadcast(os, sa, sb, |o, i, j| {
                            gb[j] += match kind {
                                Op::Add(..) => g[o],
                                Op::Sub(..) => -g[o],
                                Op::Mul(..) => g[o] * av[i],
                                _ => -g[o] * av[i] / (bv[j] * bv[j]),
                            }
                        })
                    });
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::MulScalar(a, c) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y));
            }
            Op::Exp(a) => acc(*a, &mut |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * out[i];
                }
            }),
            Op::Tanh(a) => acc(*a, &mut |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * (1.0 - out[i] * out[i]);
                }
            }),
            Op::Relu(a) => {
                let x = nodes[a.0].value.data();
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                })
            }
            Op::Sqrt(a) => acc(*a, &mut |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * 0.5 / out[i];
                }
            }),
            Op::Softmax(a) => {
                let n = *node.value.shape().last().unwrap();
                acc(*a, &mut |ga| {
                    for ((yr, gr), gar) in out.chunks(n).zip(g.chunks(n)).zip(ga.chunks_mut(n)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for i in 0..n {
                            gar[i] += yr[i] * (gr[i] - dot);
                        }
                    }
                })
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (ba, m, k) = split_last2(nodes[a.0].value.shape());
                let (bb, _, n) = split_last2(nodes[b.0].value.shape());
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                let shared = bb == 1;
                if want(a) {
                    acc(a, &mut |ga| {
                        if shared {
                            gemm_a_bt_acc(g, bv, ga, ba * m, k, n);
                        } else {
                            for i in 0..ba {
                                gemm_a_bt_acc(
                                    &g[i * m * n..(i + 1) * m * n],
                                    &bv[i * k * n..(i + 1) * k * n],
                                    &mut ga[i * m * k..(i + 1) * m * k],
                                    m,
                                    k,
                                    n,
                                );
                            }
                        }
                    });
                }
                if want(b) {
                    acc(b, &mut |gb| {
                        if shared {
                            gemm_at_b_acc(av, g, gb, ba * m, k, n);
                        } else {
                            for i in 0..ba {
                                gemm_at_b_acc(
                                    &av[i * m * k..(i + 1) * m * k],
                                    &g[i * m * n..(i + 1) * m * n],
                                    &mut gb[i * k * n..(i + 1) * k * n],
                                    m,
                                    k,
                                    n,
                                );
                            }
                        }
                    });
                }
            }
            Op::Transpose(a) => {
                let (batch, m, n) = split_last2(nodes[a.0].value.shape());
                acc(*a, &mut |ga| {
                    for b in 0..batch {
                        let base = b * m * n;
                        for i in 0..m {
                            for j in 0..n {
                                ga[base + i * n + j] += g[base + j * m + i];
                            }
                        }
                    }
                })
            }
            Op::Concat(parts) => {
                let total = *node.value.shape().last().unwrap();
                let rows = g.len() / total;
                let mut col = 0;
                for &p in parts {
                    let w = *nodes[p.0].value.shape().last().unwrap();
                    if want(p) {
                        acc(p, &mut |gp| {
                            for r in 0..rows {
                                for c in 0..w {
                                    gp[r * w + c] += g[r * total + col + c];
                                }
                            }
                        });
                    }
                    col += w;
                }
            }
            Op::Slice { input, axis, start } => {
                let (outer, dim, inner) = axis_split(nodes[input.0].value.shape(), *axis);
                let len = node.value.shape()[*axis];
                acc(*input, &mut |gi| {
                    for o in 0..outer {
                        let dst = o * dim * inner + start * inner;
                        let src = o * len * inner;
                        for i in 0..len * inner {
                            gi[dst + i] += g[src + i];
                        }
                    }
                })
            }
            Op::Reduce { input, axis, kind } => {
                let (outer, dim, inner) = axis_split(nodes[input.0].value.shape(), *axis);
                let x = nodes[input.0].value.data();
                acc(*input, &mut |gi| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let go = g[o * inner + i];
                            let idx = |d: usize| o * dim * inner + d * inner + i;
                            match kind {
                                ReduceKind::Sum => (0..dim).for_each(|d| gi[idx(d)] += go),
                                ReduceKind::Mean => {
                                    (0..dim).for_each(|d| gi[idx(d)] += go / dim as f64)
                                }
                                ReduceKind::Var => {
                                    let mean =
                                        (0..dim).map(|d| x[idx(d)]).sum::<f64>() / dim as f64;
                                    for d in 0..dim {
                                        gi[idx(d)] += go * 2.0 * (x[idx(d)] - mean) / dim as f64;
                                    }
                                }
                            }
                        }
                    }
                })
            }
            Op::SumAll(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::MeanAll(a) => acc(*a, &mut |ga| {
                let n = ga.len() as f64;
                ga.iter_mut().for_each(|x| *x += g[0] / n)
            }),
            Op::Dropout { input, scale_mask } => acc(*input, &mut |gi| {
                for i in 0..g.len() {
                    gi[i] += g[i] * scale_mask[i];
                }
            }),
            Op::UnfoldTime { input, kernel } => {
                let s = nodes[input.0].value.shape();
                let (b, t, c) = (s[0], s[1], s[2]);
                let kernel = *kernel;
                let left = (kernel.saturating_sub(1) / 2) as isize;
                acc(*input, &mut |gi| {
                    for bi in 0..b {
                        for ti in 0..t {
                            for j in 0..kernel {
                                let src = ti as isize + j as isize - left;
                                if src < 0 || src >= t as isize {
                                    continue;
                                }
                                let dst_off = (bi * t + src as usize) * c;
                                let g_off = (bi * t + ti) * kernel * c + j * c;
                                for ci in 0..c {
                                    gi[dst_off + ci] += g[g_off + ci];
                                }
                            }
                        }
                    }
                })
            }
        }
    }
}
