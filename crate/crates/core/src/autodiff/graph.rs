//! Tape of tensor operations with reverse-mode gradients.
//!
//! Every op works on row-major matrices: rank-0/1 tensors count as a single
//! row. Nodes are appended in evaluation order, so the tape is already
//! topologically sorted and `backward` is a single reverse sweep.

use super::gemm::{gemm, MatRef};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Variance floor of [`Graph::set_norm`].
pub const NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Variable,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    MaxPoolGroups {
        x: Var,
        argmax: Vec<usize>,
    },
    WeightedGroupSum {
        x: Var,
        weights: Vec<f64>,
        group: usize,
    },
    BatchedMatVec {
        m: Var,
        x: Var,
    },
    SetNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        softmax: Vec<f64>,
    },
    OrthPenalty {
        m: Var,
        dim: usize,
        residual: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Option<Tensor>,
    requires_grad: bool,
}

/// A single forward evaluation. Parameters are borrowed, not copied.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    flops: u64,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to a node, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    /// Accumulated gradient of a parameter (summed over all its uses).
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(id.index()).and_then(|g| g.as_deref())
    }

    /// Adds every parameter gradient into `acc` (one buffer per parameter).
    pub fn accumulate_into(&self, acc: &mut [Vec<f64>]) {
        for (dst, src) in acc.iter_mut().zip(&self.params) {
            if let Some(src) = src {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src.to_vec()),
    }
}

fn out_tensor(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::matrix(rows, cols, data).expect("op output shape")
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            flops: 0,
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    /// Floating-point operations recorded by forward ops so far.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.params.get(*id),
            (_, Some(t)) => t,
            _ => unreachable!("non-parameter node without value"),
        }
    }

    fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite("forward value"));
        }
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Constant,
            value: Some(t),
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is tracked (inputs of gradient checks).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Variable,
            value: Some(t),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// `x·W + b` for `x: n×a`, `W: a×b`, `b: b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.rank() != 2 || xv.cols() != wv.rows() {
            return Err(Error::shape(
                "linear",
                format!("x {:?} vs W {:?}", xv.shape(), wv.shape()),
            ));
        }
        let (n, a, out) = (xv.rows(), xv.cols(), wv.cols());
        let mut y = vec![0.0; n * out];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != out {
                return Err(Error::shape(
                    "linear",
                    format!("bias {:?} for {out} outputs", bv.shape()),
                ));
            }
            for row in y.chunks_exact_mut(out) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm(
            MatRef::row_major(xv.data(), n, a),
            MatRef::row_major(wv.data(), a, out),
            1.0,
            &mut y,
        );
        self.flops += 2 * (n * a * out) as u64;
        let rg = self.requires_grad(x) || self.requires_grad(w) || b.is_some_and(|b| self.requires_grad(b));
        self.push(Op::Linear { x, w, b }, out_tensor(n, out, y), rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let y: Vec<f64> = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let t = Tensor::new(xv.shape().to_vec(), y)?;
        self.flops += t.len() as u64;
        let rg = self.requires_grad(x);
        self.push(Op::Relu(x), t, rg)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(name, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let y = av.data().iter().zip(bv.data()).map(|(&p, &q)| f(p, q)).collect();
        let t = Tensor::new(av.shape().to_vec(), y)?;
        self.flops += t.len() as u64;
        Ok(t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |p, q| p + q)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(Op::Add(a, b), t, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |p, q| p - q)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(Op::Sub(a, b), t, rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |p, q| p * q)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(Op::Mul(a, b), t, rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let xv = self.value(x);
        let t = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| v * s).collect())?;
        let rg = self.requires_grad(x);
        self.push(Op::Scale(x, s), t, rg)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.requires_grad(x);
        self.push(Op::Sum(x), Tensor::scalar(s), rg)
    }

    /// Output row `r` is input row `index[r]`.
    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        if let Some(bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {n}")));
        }
        let mut y = Vec::with_capacity(index.len() * c);
        for &i in &index {
            y.extend_from_slice(xv.row(i));
        }
        let t = out_tensor(index.len(), c, y);
        let rg = self.requires_grad(x);
        self.push(Op::GatherRows { x, index }, t, rg)
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::shape("concat_cols", "no inputs"));
        };
        let n = self.value(first).rows();
        if let Some(bad) = xs.iter().find(|&&v| self.value(v).rows() != n) {
            return Err(Error::shape(
                "concat_cols",
                format!("{} rows vs {n}", self.value(*bad).rows()),
            ));
        }
        let widths: Vec<usize> = xs.iter().map(|&v| self.value(v).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut y = Vec::with_capacity(n * total);
        for r in 0..n {
            for &v in xs {
                y.extend_from_slice(self.value(v).row(r));
            }
        }
        let rg = xs.iter().any(|&v| self.requires_grad(v));
        self.push(Op::ConcatCols(xs.to_vec()), out_tensor(n, total, y), rg)
    }

    /// Columnwise max over consecutive blocks of `group` rows.
    ///
    /// On ties the gradient goes to the first (lowest) row of the block.
    pub fn max_pool_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        if group == 0 || n == 0 || n % group != 0 {
            return Err(Error::shape(
                "max_pool_groups",
                format!("{n} rows in groups of {group}"),
            ));
        }
        let g = n / group;
        let mut y = vec![0.0; g * c];
        let mut argmax = vec![0usize; g * c];
        let data = xv.data();
        for gi in 0..g {
            let base = gi * group;
            let out = &mut y[gi * c..(gi + 1) * c];
            let arg = &mut argmax[gi * c..(gi + 1) * c];
            out.copy_from_slice(&data[base * c..(base + 1) * c]);
            arg.iter_mut().for_each(|a| *a = base);
            for r in base + 1..base + group {
                let row = &data[r * c..(r + 1) * c];
                for j in 0..c {
                    if row[j] > out[j] {
                        out[j] = row[j];
                        arg[j] = r;
                    }
                }
            }
        }
        self.flops += (n * c) as u64;
        let rg = self.requires_grad(x);
        self.push(Op::MaxPoolGroups { x, argmax }, out_tensor(g, c, y), rg)
    }

    /// Columnwise max over all rows, as a `1×F` row.
    pub fn max_pool_set(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).rows();
        if n == 0 {
            return Err(Error::EmptyCloud);
        }
        self.max_pool_groups(x, n)
    }

    /// `y_g = Σ_t w_{g,t} · x_{g,t}` over consecutive blocks of `group` rows.
    pub fn weighted_group_sum(&mut self, x: Var, weights: Vec<f64>, group: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        if group == 0 || n % group != 0 || weights.len() != n {
            return Err(Error::shape(
                "weighted_group_sum",
                format!("{n} rows, {} weights, group {group}", weights.len()),
            ));
        }
        let g = n / group;
        let mut y = vec![0.0; g * c];
        for r in 0..n {
            let w = weights[r];
            let out = &mut y[(r / group) * c..(r / group + 1) * c];
            for (o, v) in out.iter_mut().zip(xv.row(r)) {
                *o += w * v;
            }
        }
        self.flops += 2 * (n * c) as u64;
        let rg = self.requires_grad(x);
        self.push(Op::WeightedGroupSum { x, weights, group }, out_tensor(g, c, y), rg)
    }

    /// Row-wise matrix-vector product: each row of `m` holds an `F×F`
    /// row-major matrix applied to the matching row of `x`.
    pub fn batched_matvec(&mut self, m: Var, x: Var) -> Result<Var> {
        let (mv, xv) = (self.value(m), self.value(x));
        let (n, f) = (xv.rows(), xv.cols());
        if mv.rows() != n || mv.cols() != f * f {
            return Err(Error::shape(
                "batched_matvec",
                format!("M {:?} vs x {:?}", mv.shape(), xv.shape()),
            ));
        }
        let mut y = vec![0.0; n * f];
        for e in 0..n {
            let me = mv.row(e);
            let xe = xv.row(e);
            for i in 0..f {
                y[e * f + i] = me[i * f..(i + 1) * f].iter().zip(xe).map(|(a, b)| a * b).sum();
            }
        }
        self.flops += 2 * (n * f * f) as u64;
        let rg = self.requires_grad(m) || self.requires_grad(x);
        self.push(Op::BatchedMatVec { m, x }, out_tensor(n, f, y), rg)
    }

    /// Per-column standardization over the rows, then `γ·x̂ + β`.
    pub fn set_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        if self.value(gamma).len() != c || self.value(beta).len() != c || n == 0 {
            return Err(Error::shape(
                "set_norm",
                format!("{n}×{c} input with mismatched scale/shift"),
            ));
        }
        let data = xv.data();
        let mut mean = vec![0.0; c];
        for row in data.chunks_exact(c) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; c];
        for row in data.chunks_exact(c) {
            for j in 0..c {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / n as f64 + NORM_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; n * c];
        for (r, row) in data.chunks_exact(c).enumerate() {
            for j in 0..c {
                xhat[r * c + j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut y = xhat.clone();
        for row in y.chunks_exact_mut(c) {
            for j in 0..c {
                row[j] = row[j] * gv[j] + bv[j];
            }
        }
        self.flops += 6 * (n * c) as u64;
        let rg = self.requires_grad(x) || self.requires_grad(gamma) || self.requires_grad(beta);
        self.push(
            Op::SetNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            out_tensor(n, c, y),
            rg,
        )
    }

    /// Mean over rows of `−log softmax(logits_r)[labels_r]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (n, c) = (lv.rows(), lv.cols());
        if labels.len() != n || n == 0 {
            return Err(Error::shape(
                "cross_entropy",
                format!("{n} rows, {} labels", labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::invalid(format!("label {bad} out of range for {c} classes")));
        }
        let mut softmax = vec![0.0; n * c];
        let mut loss = 0.0;
        for r in 0..n {
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                softmax[r * c + j] = e;
                z += e;
            }
            softmax[r * c..(r + 1) * c].iter_mut().for_each(|s| *s /= z);
            loss += z.ln() - (row[labels[r]] - max);
        }
        loss /= n as f64;
        let rg = self.requires_grad(logits);
        self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                softmax,
            },
            Tensor::scalar(loss),
            rg,
        )
    }

    /// Mean over rows of `‖M Mᵀ − I‖²_F` where each row of `m` is an
    /// `dim×dim` row-major matrix.
    pub fn orth_penalty(&mut self, m: Var, dim: usize) -> Result<Var> {
        let mv = self.value(m);
        let (n, c) = (mv.rows(), mv.cols());
        if c != dim * dim || n == 0 {
            return Err(Error::shape("orth_penalty", format!("{n}×{c} for dim {dim}")));
        }
        let mut residual = vec![0.0; n * c];
        let mut total = 0.0;
        for e in 0..n {
            let me = mv.row(e);
            let a = &mut residual[e * c..(e + 1) * c];
            gemm(
                MatRef::row_major(me, dim, dim),
                MatRef::row_major(me, dim, dim).t(),
                0.0,
                a,
            );
            for i in 0..dim {
                a[i * dim + i] -= 1.0;
            }
            total += a.iter().map(|v| v * v).sum::<f64>();
        }
        self.flops += 2 * (n * c * dim) as u64;
        let rg = self.requires_grad(m);
        self.push(
            Op::OrthPenalty { m, dim, residual },
            Tensor::scalar(total / n as f64),
            rg,
        )
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut params: Vec<Option<Vec<f64>>> = vec![None; self.params.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            match &node.op {
                Op::Constant | Op::Variable => {}
                Op::Param(id) => add_into(&mut params[id.index()], &g),
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (n, a, out) = (xv.rows(), xv.cols(), wv.cols());
                    let dy = MatRef::row_major(&g, n, out);
                    if self.requires_grad(*x) {
                        let mut dx = vec![0.0; n * a];
                        gemm(dy, MatRef::row_major(wv.data(), a, out).t(), 0.0, &mut dx);
                        add_into(&mut grads[x.0], &dx);
                    }
                    if self.requires_grad(*w) {
                        let mut dw = vec![0.0; a * out];
                        gemm(MatRef::row_major(xv.data(), n, a).t(), dy, 0.0, &mut dw);
                        add_into(&mut grads[w.0], &dw);
                    }
                    if let Some(b) = b.filter(|b| self.requires_grad(*b)) {
                        let mut db = vec![0.0; out];
                        for row in g.chunks_exact(out) {
                            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                        }
                        add_into(&mut grads[b.0], &db);
                    }
                }
                Op::Relu(x) => {
                    let y = node.value.as_ref().expect("relu value").data();
                    let dx: Vec<f64> = g.iter().zip(y).map(|(&d, &v)| if v > 0.0 { d } else { 0.0 }).collect();
                    add_into(&mut grads[x.0], &dx);
                }
                Op::Add(a, b) => {
                    if self.requires_grad(*a) {
                        add_into(&mut grads[a.0], &g);
                    }
                    if self.requires_grad(*b) {
                        add_into(&mut grads[b.0], &g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.requires_grad(*a) {
                        add_into(&mut grads[a.0], &g);
                    }
                    if self.requires_grad(*b) {
                        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                        add_into(&mut grads[b.0], &neg);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    if self.requires_grad(*a) {
                        let da: Vec<f64> = g.iter().zip(bv).map(|(d, v)| d * v).collect();
                        add_into(&mut grads[a.0], &da);
                    }
                    if self.requires_grad(*b) {
                        let db: Vec<f64> = g.iter().zip(av).map(|(d, v)| d * v).collect();
                        add_into(&mut grads[b.0], &db);
                    }
                }
                Op::Scale(x, s) => {
                    let dx: Vec<f64> = g.iter().map(|v| v * s).collect();
                    add_into(&mut grads[x.0], &dx);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    add_into(&mut grads[x.0], &vec![g[0]; n]);
                }
                Op::GatherRows { x, index } => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let dst = grads[x.0].get_or_insert_with(|| vec![0.0; xv.len()]);
                    for (r, &src) in index.iter().enumerate() {
                        let d = &mut dst[src * c..(src + 1) * c];
                        d.iter_mut().zip(&g[r * c..(r + 1) * c]).for_each(|(a, b)| *a += b);
                    }
                }
                Op::ConcatCols(xs) => {
                    let total = node.value.as_ref().expect("concat value").cols();
                    let n = g.len() / total.max(1);
                    let mut offset = 0;
                    for v in xs {
                        let c = self.value(*v).cols();
                        if self.requires_grad(*v) {
                            let mut dv = Vec::with_capacity(n * c);
                            for r in 0..n {
                                dv.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                            }
                            add_into(&mut grads[v.0], &dv);
                        }
                        offset += c;
                    }
                }
                Op::MaxPoolGroups { x, argmax } => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let dst = grads[x.0].get_or_insert_with(|| vec![0.0; xv.len()]);
                    for (o, &row) in argmax.iter().enumerate() {
                        dst[row * c + o % c] += g[o];
                    }
                }
                Op::WeightedGroupSum { x, weights, group } => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let mut dx = vec![0.0; xv.len()];
                    for (r, w) in weights.iter().enumerate() {
                        let gr = &g[(r / group) * c..(r / group + 1) * c];
                        dx[r * c..(r + 1) * c].iter_mut().zip(gr).for_each(|(d, v)| *d = w * v);
                    }
                    add_into(&mut grads[x.0], &dx);
                }
                Op::BatchedMatVec { m, x } => {
                    let (mv, xv) = (self.value(*m), self.value(*x));
                    let (n, f) = (xv.rows(), xv.cols());
                    if self.requires_grad(*m) {
                        let mut dm = vec![0.0; mv.len()];
                        for e in 0..n {
                            let xe = xv.row(e);
                            for i in 0..f {
                                let gi = g[e * f + i];
                                let d = &mut dm[e * f * f + i * f..e * f * f + (i + 1) * f];
                                d.iter_mut().zip(xe).for_each(|(a, b)| *a = gi * b);
                            }
                        }
                        add_into(&mut grads[m.0], &dm);
                    }
                    if self.requires_grad(*x) {
                        let mut dx = vec![0.0; xv.len()];
                        for e in 0..n {
                            let me = mv.row(e);
                            let dxe = &mut dx[e * f..(e + 1) * f];
                            for i in 0..f {
                                let gi = g[e * f + i];
                                dxe.iter_mut()
                                    .zip(&me[i * f..(i + 1) * f])
                                    .for_each(|(a, b)| *a += gi * b);
                            }
                        }
                        add_into(&mut grads[x.0], &dx);
                    }
                }
                Op::SetNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let c = inv_std.len();
                    let n = xhat.len() / c;
                    let gv = self.value(*gamma).data();
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for r in 0..n {
                        for j in 0..c {
                            dgamma[j] += g[r * c + j] * xhat[r * c + j];
                            dbeta[j] += g[r * c + j];
                        }
                    }
                    if self.requires_grad(*x) {
                        // dx = inv/n · (n·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂)), dx̂ = dy·γ
                        let nf = n as f64;
                        let mut dx = vec![0.0; n * c];
                        for r in 0..n {
                            for j in 0..c {
                                let dxh = g[r * c + j] * gv[j];
                                let sum_dxh = dbeta[j] * gv[j];
                                let sum_dxh_xh = dgamma[j] * gv[j];
                                dx[r * c + j] = inv_std[j] / nf * (nf * dxh - sum_dxh - xhat[r * c + j] * sum_dxh_xh);
                            }
                        }
                        add_into(&mut grads[x.0], &dx);
                    }
                    if self.requires_grad(*gamma) {
                        add_into(&mut grads[gamma.0], &dgamma);
                    }
                    if self.requires_grad(*beta) {
                        add_into(&mut grads[beta.0], &dbeta);
                    }
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    softmax,
                } => {
                    let n = labels.len();
                    let c = softmax.len() / n;
                    let s = g[0] / n as f64;
                    let mut dl: Vec<f64> = softmax.iter().map(|p| p * s).collect();
                    for (r, &l) in labels.iter().enumerate() {
                        dl[r * c + l] -= s;
                    }
                    add_into(&mut grads[logits.0], &dl);
                }
                Op::OrthPenalty { m, dim, residual } => {
                    let mv = self.value(*m);
                    let (n, c) = (mv.rows(), mv.cols());
                    let mut dm = vec![0.0; n * c];
                    for e in 0..n {
                        gemm(
                            MatRef::row_major(&residual[e * c..(e + 1) * c], *dim, *dim),
                            MatRef::row_major(mv.row(e), *dim, *dim),
                            0.0,
                            &mut dm[e * c..(e + 1) * c],
                        );
                    }
                    let s = 4.0 * g[0] / n as f64;
                    dm.iter_mut().for_each(|v| *v *= s);
                    add_into(&mut grads[m.0], &dm);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { nodes: grads, params })
    }
}
