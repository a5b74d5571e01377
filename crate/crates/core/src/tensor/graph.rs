use super::{matmul_nn, matmul_nt, matmul_tn, ParamId, ParamStore, Tensor};
use crate::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    /// `[n, m] + [m]`, broadcast over the leading axis.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Softmax(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Mse(Var, Vec<f64>),
    CrossEntropy(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize, usize),
    BatchedMatVec(Var, Var, usize, usize),
    StopGradient,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Dynamically recorded computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    num_params: usize,
}

/// Gradients of a scalar loss with respect to the parameters of a store.
#[derive(Debug, Clone)]
pub struct Gradients {
    by_param: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when no gradient path reached the parameter.
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of `id`, zero-filled when it was unreachable.
    pub fn dense(&self, id: ParamId, like: &Tensor) -> Tensor {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    /// True when the gradient is missing or identically zero.
    pub fn is_zero(&self, id: ParamId) -> bool {
        self.get(id).is_none_or(|g| g.data().iter().all(|&x| x == 0.0))
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.push("input", value, Op::Input, false)
    }

    /// Copies parameter `id` onto the tape as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        self.num_params = self.num_params.max(store.len());
        self.push("param", store.get(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((n, k), (k2, m)) = match (ta.dims2(), tb.dims2()) {
            (Some(x), Some(y)) if x.1 == y.0 => (x, y),
            _ => return Err(shape_err("matmul", ta, tb)),
        };
        debug_assert_eq!(k, k2);
        let out = Tensor::new(vec![n, m], matmul_nn(ta.data(), tb.data(), n, k, m))?;
        let ng = self.needs(a) || self.needs(b);
        self.push("matmul", out, Op::MatMul(a, b), ng)
    }

    /// Elementwise sum of equal shapes, or `[n, m] + [m]` row broadcast.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ng = self.needs(a) || self.needs(b);
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
            let out = Tensor::new(ta.shape().to_vec(), data)?;
            return self.push("add", out, Op::Add(a, b), ng);
        }
        let (rows, cols) = ta.rows_cols();
        if tb.shape() != [cols] || ta.shape().len() < 2 {
            return Err(shape_err("add", ta, tb));
        }
        let mut data = ta.data().to_vec();
        for r in 0..rows {
            for (x, y) in data[r * cols..(r + 1) * cols].iter_mut().zip(tb.data()) {
                *x += y;
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("add", out, Op::AddRow(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("sub", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        self.push("sub", out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        self.push("mul", out, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * c).collect())?;
        let ng = self.needs(a);
        self.push("scale", out, Op::Scale(a, c), ng)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x.max(0.0)).collect())?;
        let ng = self.needs(a);
        self.push("relu", out, Op::Relu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x.tanh()).collect())?;
        let ng = self.needs(a);
        self.push("tanh", out, Op::Tanh(a), ng)
    }

    /// Softmax over the last axis, stabilized by max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let cols = *t.shape().last().unwrap_or(&1);
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let ng = self.needs(a);
        self.push("softmax", out, Op::Softmax(a), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.numel() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: t.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = Tensor::new(shape.to_vec(), t.data().to_vec())?;
        let ng = self.needs(a);
        self.push("reshape", out, Op::Reshape(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let ng = self.needs(a);
        self.push("sum", Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let ng = self.needs(a);
        self.push("mean", Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Sums the last axis away: `[.., m] -> [..]` (`[m] -> [1]`).
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let shape = t.shape();
        let cols = *shape.last().unwrap_or(&1);
        let data: Vec<f64> = t.data().chunks(cols).map(|c| c.iter().sum()).collect();
        let out_shape = if shape.len() > 1 {
            shape[..shape.len() - 1].to_vec()
        } else {
            vec![1]
        };
        let out = Tensor::new(out_shape, data)?;
        let ng = self.needs(a);
        self.push("sum_last", out, Op::SumLast(a), ng)
    }

    /// Mean squared error against constant targets.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let t = self.value(pred);
        if t.numel() != target.len() {
            return Err(Error::Shape {
                op: "mse",
                lhs: t.shape().to_vec(),
                rhs: vec![target.len()],
            });
        }
        let s = t.data().iter().zip(target).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / target.len() as f64;
        let ng = self.needs(pred);
        self.push("mse", Tensor::scalar(s), Op::Mse(pred, target.to_vec()), ng)
    }

    /// Mean cross-entropy of `[batch, classes]` logits against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (rows, cols) = t.dims2().ok_or_else(|| Error::Shape {
            op: "cross_entropy",
            lhs: t.shape().to_vec(),
            rhs: vec![labels.len()],
        })?;
        if rows != labels.len() || labels.iter().any(|&l| l >= cols) {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: t.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let mut loss = 0.0;
        for (row, &y) in t.data().chunks(cols).zip(labels) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        let ng = self.needs(logits);
        self.push(
            "cross_entropy",
            Tensor::scalar(loss / rows as f64),
            Op::CrossEntropy(logits, labels.to_vec()),
            ng,
        )
    }

    /// Rows `indices` of a `[rows, d]` table, as `[indices.len(), d]`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, d) = t.dims2().ok_or_else(|| Error::Shape {
            op: "gather_rows",
            lhs: t.shape().to_vec(),
            rhs: vec![indices.len()],
        })?;
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= rows {
                return Err(Error::Shape {
                    op: "gather_rows",
                    lhs: t.shape().to_vec(),
                    rhs: vec![i],
                });
            }
            data.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
        }
        let out = Tensor::new(vec![indices.len(), d], data)?;
        let ng = self.needs(table);
        self.push("gather_rows", out, Op::GatherRows(table, indices.to_vec()), ng)
    }

    /// Columns `start..end` of a `[rows, cols]` tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = match t.dims2() {
            Some(d) if start < end && end <= d.1 => d,
            _ => {
                return Err(Error::Shape {
                    op: "slice_cols",
                    lhs: t.shape().to_vec(),
                    rhs: vec![start, end],
                })
            }
        };
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&t.data()[r * cols + start..r * cols + end]);
        }
        let out = Tensor::new(vec![rows, end - start], data)?;
        let ng = self.needs(a);
        self.push("slice_cols", out, Op::SliceCols(a, start, end), ng)
    }

    /// Per-row matrix-vector product: `mats` is `[b, m*n]` holding one
    /// row-major `m x n` matrix per row, `vecs` is `[b, n]`; the result is
    /// `[b, m]`.
    pub fn batched_matvec(&mut self, mats: Var, vecs: Var, m: usize, n: usize) -> Result<Var> {
        let (tm, tv) = (self.value(mats), self.value(vecs));
        let ok =
            matches!((tm.dims2(), tv.dims2()), (Some((b1, mn)), Some((b2, nn))) if b1 == b2 && mn == m * n && nn == n);
        if !ok {
            return Err(shape_err("batched_matvec", tm, tv));
        }
        let b = tv.shape()[0];
        let mut data = vec![0.0; b * m];
        for r in 0..b {
            let v = &tv.data()[r * n..(r + 1) * n];
            let mat = &tm.data()[r * m * n..(r + 1) * m * n];
            for i in 0..m {
                data[r * m + i] = mat[i * n..(i + 1) * n].iter().zip(v).map(|(x, y)| x * y).sum();
            }
        }
        let out = Tensor::new(vec![b, m], data)?;
        let ng = self.needs(mats) || self.needs(vecs);
        self.push("batched_matvec", out, Op::BatchedMatVec(mats, vecs, m, n), ng)
    }

    /// Identity on values; blocks gradients.
    pub fn stop_gradient(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).clone();
        self.push("stop_gradient", out, Op::StopGradient, false)
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut by_param: Vec<Option<Tensor>> = vec![None; self.num_params];
        if !self.nodes[loss.0].needs_grad {
            return Ok(Gradients { by_param });
        }
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let send = |v: Var, t: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if self.nodes[v.0].needs_grad {
                    accumulate(&mut grads[v.0], t);
                }
            };
            let gd = g.data();
            match &node.op {
                Op::Input | Op::StopGradient => {}
                Op::Param(id) => accumulate(&mut by_param[id.0], g.clone()),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (n, k) = ta.dims2().unwrap();
                    let m = tb.shape()[1];
                    if self.needs(*a) {
                        let da = matmul_nt(gd, tb.data(), n, m, k);
                        send(*a, Tensor::new(vec![n, k], da)?, &mut grads);
                    }
                    if self.needs(*b) {
                        let db = matmul_tn(ta.data(), gd, n, k, m);
                        send(*b, Tensor::new(vec![k, m], db)?, &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    send(*a, g.clone(), &mut grads);
                    send(*b, g.clone(), &mut grads);
                }
                Op::AddRow(a, b) => {
                    send(*a, g.clone(), &mut grads);
                    if self.needs(*b) {
                        let cols = self.value(*b).numel();
                        let mut db = vec![0.0; cols];
                        for row in gd.chunks(cols) {
                            db.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                        }
                        send(*b, Tensor::vector(db), &mut grads);
                    }
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone(), &mut grads);
                    let neg = gd.iter().map(|x| -x).collect();
                    send(*b, Tensor::new(g.shape().to_vec(), neg)?, &mut grads);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        let d = gd.iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                        send(*a, Tensor::new(g.shape().to_vec(), d)?, &mut grads);
                    }
                    if self.needs(*b) {
                        let d = gd.iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                        send(*b, Tensor::new(g.shape().to_vec(), d)?, &mut grads);
                    }
                }
                Op::Scale(a, c) => {
                    let d = gd.iter().map(|x| x * c).collect();
                    send(*a, Tensor::new(g.shape().to_vec(), d)?, &mut grads);
                }
                Op::Relu(a) => {
                    let d = gd
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(x, &v)| if v > 0.0 { *x } else { 0.0 })
                        .collect();
                    send(*a, Tensor::new(g.shape().to_vec(), d)?, &mut grads);
                }
                Op::Tanh(a) => {
                    let d = gd
                        .iter()
                        .zip(node.value.data())
                        .map(|(x, y)| x * (1.0 - y * y))
                        .collect();
                    send(*a, Tensor::new(g.shape().to_vec(), d)?, &mut grads);
                }
                Op::Softmax(a) => {
                    let cols = *g.shape().last().unwrap();
                    let mut d = vec![0.0; gd.len()];
                    for ((drow, grow), yrow) in d
                        .chunks_mut(cols)
                        .zip(gd.chunks(cols))
                        .zip(node.value.data().chunks(cols))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                        for ((o, x), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *o = y * (x - dot);
                        }
                    }
                    send(*a, Tensor::new(g.shape().to_vec(), d)?, &mut grads);
                }
                Op::Reshape(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    send(*a, Tensor::new(shape, gd.to_vec())?, &mut grads);
                }
                Op::Sum(a) => {
                    send(*a, Tensor::full(self.value(*a).shape(), gd[0]), &mut grads);
                }
                Op::Mean(a) => {
                    let t = self.value(*a);
                    send(*a, Tensor::full(t.shape(), gd[0] / t.numel() as f64), &mut grads);
                }
                Op::SumLast(a) => {
                    let t = self.value(*a);
                    let cols = *t.shape().last().unwrap();
                    let d = gd.iter().flat_map(|&x| std::iter::repeat_n(x, cols)).collect();
                    send(*a, Tensor::new(t.shape().to_vec(), d)?, &mut grads);
                }
                Op::Mse(p, target) => {
                    let t = self.value(*p);
                    let c = 2.0 * gd[0] / target.len() as f64;
                    let d = t.data().iter().zip(target).map(|(x, y)| c * (x - y)).collect();
                    send(*p, Tensor::new(t.shape().to_vec(), d)?, &mut grads);
                }
                Op::CrossEntropy(l, labels) => {
                    let t = self.value(*l);
                    let (rows, cols) = t.dims2().unwrap();
                    let mut d = t.data().to_vec();
                    let c = gd[0] / rows as f64;
                    for (row, &y) in d.chunks_mut(cols).zip(labels) {
                        softmax_in_place(row);
                        row[y] -= 1.0;
                        row.iter_mut().for_each(|x| *x *= c);
                    }
                    send(*l, Tensor::new(vec![rows, cols], d)?, &mut grads);
                }
                Op::GatherRows(table, indices) => {
                    let t = self.value(*table);
                    let d = t.shape()[1];
                    let mut dt = vec![0.0; t.numel()];
                    for (r, &i) in indices.iter().enumerate() {
                        dt[i * d..(i + 1) * d]
                            .iter_mut()
                            .zip(&gd[r * d..(r + 1) * d])
                            .for_each(|(o, x)| *o += x);
                    }
                    send(*table, Tensor::new(t.shape().to_vec(), dt)?, &mut grads);
                }
                Op::SliceCols(a, start, end) => {
                    let t = self.value(*a);
                    let (rows, cols) = t.dims2().unwrap();
                    let w = end - start;
                    let mut d = vec![0.0; t.numel()];
                    for r in 0..rows {
                        d[r * cols + start..r * cols + end].copy_from_slice(&gd[r * w..(r + 1) * w]);
                    }
                    send(*a, Tensor::new(vec![rows, cols], d)?, &mut grads);
                }
                Op::BatchedMatVec(mats, vecs, m, n) => {
                    let (m, n) = (*m, *n);
                    let (tm, tv) = (self.value(*mats), self.value(*vecs));
                    let b = tv.shape()[0];
                    if self.needs(*mats) {
                        let mut d = vec![0.0; tm.numel()];
                        for r in 0..b {
                            let v = &tv.data()[r * n..(r + 1) * n];
                            for i in 0..m {
                                let gi = gd[r * m + i];
                                let base = r * m * n + i * n;
                                d[base..base + n].iter_mut().zip(v).for_each(|(o, x)| *o = gi * x);
                            }
                        }
                        send(*mats, Tensor::new(tm.shape().to_vec(), d)?, &mut grads);
                    }
                    if self.needs(*vecs) {
                        let mut d = vec![0.0; tv.numel()];
                        for r in 0..b {
                            let mat = &tm.data()[r * m * n..(r + 1) * m * n];
                            let out = &mut d[r * n..(r + 1) * n];
                            for i in 0..m {
                                let gi = gd[r * m + i];
                                out.iter_mut()
                                    .zip(&mat[i * n..(i + 1) * n])
                                    .for_each(|(o, x)| *o += gi * x);
                            }
                        }
                        send(*vecs, Tensor::new(tv.shape().to_vec(), d)?, &mut grads);
                    }
                }
            }
        }
        Ok(Gradients { by_param })
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    row.iter_mut().for_each(|x| *x /= s);
}
