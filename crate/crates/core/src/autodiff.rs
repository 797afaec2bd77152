//! Reverse-mode automatic differentiation over a Wengert list.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Operations
//! append a node and return a [`Var`] handle; [`Tape::backward`] replays the
//! recorded rules in reverse and leaves gradients on the nodes that were
//! registered from tracked tensors. Nodes that do not depend on any tracked
//! leaf are never visited during the backward sweep, so a frozen model can
//! share the tape with a trainable one at no gradient cost.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Added under the square root when differentiating a norm; the forward
/// value is left exact so that coincident points have distance 0.
pub const NORM_GRAD_EPS: f32 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Div(Var, Var),
    Scale(Var, f32),
    AddScalar(Var),
    MinScalar(Var, f32),
    Relu(Var),
    Tanh(Var),
    Concat(Var, Var),
    Mean {
        input: Var,
        axis: Option<usize>,
    },
    L2Norm(Var),
    Distance(Var, Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f32>,
    },
    EmbeddingBagMean {
        table: Var,
        bags: Vec<Vec<usize>>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf; it receives a gradient iff `tensor.track_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.track_grad();
        self.push(tensor, Op::Leaf, requires_grad)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, mut tensor: Tensor) -> Var {
        tensor.set_track_grad(false);
        self.push(tensor, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated on `v` by the last [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f32>> {
        self.nodes[v.0].value.take_grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn data(&self, v: Var) -> &[f32] {
        self.nodes[v.0].value.data()
    }

    // ---- operations -------------------------------------------------------

    /// `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.data(a), self.data(b), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let out = zip_map(self.data(a), self.data(b), |x, y| x + y);
        self.binary(out, a, b, Op::Add(a, b))
    }

    /// Adds a length-`n` vector to every row of an `[m×n]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sa.len() != 2 || sr.len() != 1 || sa[1] != sr[0] {
            return Err(Error::shape("add_row", sa, sr));
        }
        let n = sa[1];
        let r = self.data(row);
        let out: Vec<f32> = self.data(a).iter().enumerate().map(|(i, x)| x + r[i % n]).collect();
        self.binary(out, a, row, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        let out = zip_map(self.data(a), self.data(b), |x, y| x - y);
        self.binary(out, a, b, Op::Sub(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let out = zip_map(self.data(a), self.data(b), |x, y| x * y);
        self.binary(out, a, b, Op::Mul(a, b))
    }

    /// Scales row `i` of an `[m×n]` matrix by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (sa, sc) = (self.shape(a), self.shape(col));
        if sa.len() != 2 || sc.len() != 1 || sa[0] != sc[0] {
            return Err(Error::shape("mul_col", sa, sc));
        }
        let n = sa[1];
        let c = self.data(col);
        let out: Vec<f32> = self.data(a).iter().enumerate().map(|(i, x)| x * c[i / n]).collect();
        self.binary(out, a, col, Op::MulCol(a, col))
    }

    /// Element-wise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("div", a, b)?;
        let out = zip_map(self.data(a), self.data(b), |x, y| x / y);
        self.binary(out, a, b, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let out: Vec<f32> = self.data(a).iter().map(|x| x * s).collect();
        self.unary(out, a, Op::Scale(a, s))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f32) -> Var {
        let out: Vec<f32> = self.data(a).iter().map(|x| x + s).collect();
        self.unary(out, a, Op::AddScalar(a))
    }

    /// `min(a, cap)` element-wise; the gradient passes only where `a < cap`.
    pub fn min_scalar(&mut self, a: Var, cap: f32) -> Var {
        let out: Vec<f32> = self.data(a).iter().map(|&x| x.min(cap)).collect();
        self.unary(out, a, Op::MinScalar(a, cap))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out: Vec<f32> = self.data(a).iter().map(|&x| x.max(0.0)).collect();
        self.unary(out, a, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out: Vec<f32> = self.data(a).iter().map(|x| x.tanh()).collect();
        self.unary(out, a, Op::Tanh(a))
    }

    /// Concatenates along the last axis. Both operands must be rank 1 or
    /// rank 2 with equal row counts.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() == sb.len() && (sa.len() == 1 || (sa.len() == 2 && sa[0] == sb[0]));
        if !ok {
            return Err(Error::shape("concat", &sa, &sb));
        }
        let (ca, cb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let rows = if sa.len() == 2 { sa[0] } else { 1 };
        let (da, db) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(da.len() + db.len());
        for r in 0..rows {
            out.extend_from_slice(&da[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&db[r * cb..(r + 1) * cb]);
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = ca + cb;
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Concat(a, b), rg))
    }

    /// Mean over all elements (`axis = None`) or over one axis of a rank-1/2 tensor.
    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let data = self.data(a);
        let value = match axis {
            None => {
                if data.is_empty() {
                    return Err(Error::validation("mean of empty tensor"));
                }
                Tensor::scalar(data.iter().sum::<f32>() / data.len() as f32)
            }
            Some(ax) if ax < shape.len() && shape.len() <= 2 => {
                let (rows, cols) = rows_cols(&shape);
                if shape[ax] == 0 {
                    return Err(Error::validation("mean over empty axis"));
                }
                if shape.len() == 1 || ax == 1 {
                    let out = (0..rows)
                        .map(|r| data[r * cols..(r + 1) * cols].iter().sum::<f32>() / cols as f32)
                        .collect::<Vec<_>>();
                    if shape.len() == 1 {
                        Tensor::scalar(out[0])
                    } else {
                        Tensor::vector(out)
                    }
                } else {
                    let mut out = vec![0.0f32; cols];
                    for r in 0..rows {
                        for (o, x) in out.iter_mut().zip(&data[r * cols..(r + 1) * cols]) {
                            *o += x;
                        }
                    }
                    out.iter_mut().for_each(|o| *o /= rows as f32);
                    Tensor::vector(out)
                }
            }
            Some(ax) => return Err(Error::contract(format!("mean axis {ax} invalid for shape {shape:?}"))),
        };
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Mean { input: a, axis }, rg))
    }

    /// Euclidean norm over the last axis.
    pub fn l2_norm(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let (rows, cols) = rows_cols(&shape);
        let data = self.data(a);
        let out: Vec<f32> = (0..rows)
            .map(|r| sum_sq(&data[r * cols..(r + 1) * cols]).sqrt())
            .collect();
        let value = reduced_last(&shape, out);
        self.unary_value(value, a, Op::L2Norm(a))
    }

    /// Euclidean distance over the last axis: a scalar for vectors, one
    /// distance per row for matrices.
    pub fn euclidean_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("euclidean_distance", a, b)?;
        let shape = self.shape(a).to_vec();
        let (rows, cols) = rows_cols(&shape);
        let (da, db) = (self.data(a), self.data(b));
        let out: Vec<f32> = (0..rows)
            .map(|r| {
                let s: f32 = da[r * cols..(r + 1) * cols]
                    .iter()
                    .zip(&db[r * cols..(r + 1) * cols])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                s.sqrt()
            })
            .collect();
        let value = reduced_last(&shape, out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Distance(a, b), rg))
    }

    /// Mean softmax cross-entropy of `[B×C]` logits against class indices.
    /// Returns the scalar loss and the per-sample losses.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<(Var, Tensor)> {
        let shape = self.shape(logits);
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::shape("softmax_cross_entropy", shape, &[labels.len()]));
        }
        let (b, c) = (shape[0], shape[1]);
        if b == 0 {
            return Err(Error::validation("softmax_cross_entropy on empty batch"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::validation(format!("label {bad} out of range for {c} classes")));
        }
        let data = self.data(logits);
        let mut probs = vec![0.0f32; b * c];
        let mut per_sample = Vec::with_capacity(b);
        for (r, &label) in labels.iter().enumerate() {
            let row = &data[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut z = 0.0f32;
            for (p, &x) in probs[r * c..(r + 1) * c].iter_mut().zip(row) {
                *p = (x - max).exp();
                z += *p;
            }
            probs[r * c..(r + 1) * c].iter_mut().for_each(|p| *p /= z);
            per_sample.push(z.ln() - (row[label] - max));
        }
        let mean = per_sample.iter().sum::<f32>() / b as f32;
        let rg = self.rg(&[logits]);
        let var = self.push(
            Tensor::scalar(mean),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        );
        Ok((var, Tensor::vector(per_sample)))
    }

    /// Mean of table rows per bag: `[V×d]` with `B` bags of ids → `[B×d]`.
    pub fn embedding_bag_mean(&mut self, table: Var, bags: &[Vec<usize>]) -> Result<Var> {
        let shape = self.shape(table);
        if shape.len() != 2 {
            return Err(Error::shape("embedding_bag_mean", shape, &[]));
        }
        let (v, d) = (shape[0], shape[1]);
        let data = self.data(table);
        let mut out = vec![0.0f32; bags.len() * d];
        for (b, bag) in bags.iter().enumerate() {
            if bag.is_empty() {
                return Err(Error::validation(format!("empty token bag at row {b}")));
            }
            let dst = &mut out[b * d..(b + 1) * d];
            for &id in bag {
                if id >= v {
                    return Err(Error::validation(format!("token id {id} out of range {v}")));
                }
                for (o, x) in dst.iter_mut().zip(&data[id * d..(id + 1) * d]) {
                    *o += x;
                }
            }
            let inv = 1.0 / bag.len() as f32;
            dst.iter_mut().for_each(|o| *o *= inv);
        }
        let value = Tensor::new(vec![bags.len(), d], out)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            value,
            Op::EmbeddingBagMean {
                table,
                bags: bags.to_vec(),
            },
            rg,
        ))
    }

    // ---- helpers ----------------------------------------------------------

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn binary(&mut self, out: Vec<f32>, a: Var, b: Var, op: Op) -> Result<Var> {
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    fn unary(&mut self, out: Vec<f32>, a: Var, op: Op) -> Var {
        let value = Tensor::new(self.shape(a).to_vec(), out).expect("unary keeps shape");
        self.unary_value(value, a, op)
    }

    fn unary_value(&mut self, value: Tensor, a: Var, op: Op) -> Var {
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    // ---- backward ---------------------------------------------------------

    /// Back-propagates from a scalar `loss`. Every tracked leaf ends with a
    /// gradient buffer (zeros when unreachable from `loss`).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = g.unwrap_or_else(|| vec![0.0; node.value.len()]);
                node.value.set_grad(g)?;
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        let want = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if want(*a) {
                    // dA = dC · Bᵀ
                    let bd = self.data(*b);
                    let mut da = vec![0.0f32; m * k];
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for (kk, out) in da[r * k..(r + 1) * k].iter_mut().enumerate() {
                            *out = dot(grow, &bd[kk * n..(kk + 1) * n]);
                        }
                    }
                    accumulate(grads, *a, da);
                }
                if want(*b) {
                    // dB = Aᵀ · dC
                    let ad = self.data(*a);
                    let mut db = vec![0.0f32; k * n];
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for kk in 0..k {
                            let s = ad[r * k + kk];
                            if s != 0.0 {
                                axpy(&mut db[kk * n..(kk + 1) * n], s, grow);
                            }
                        }
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                if want(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if want(*b) {
                    accumulate(grads, *b, g.to_vec());
                }
            }
            Op::AddRow(a, row) => {
                if want(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if want(*row) {
                    let n = self.shape(*row)[0];
                    let mut dr = vec![0.0f32; n];
                    for chunk in g.chunks(n) {
                        axpy(&mut dr, 1.0, chunk);
                    }
                    accumulate(grads, *row, dr);
                }
            }
            Op::Sub(a, b) => {
                if want(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if want(*b) {
                    accumulate(grads, *b, g.iter().map(|x| -x).collect());
                }
            }
            Op::Mul(a, b) => {
                if want(*a) {
                    accumulate(grads, *a, zip_map(g, self.data(*b), |x, y| x * y));
                }
                if want(*b) {
                    accumulate(grads, *b, zip_map(g, self.data(*a), |x, y| x * y));
                }
            }
            Op::MulCol(a, col) => {
                let n = self.shape(*a)[1];
                if want(*a) {
                    let c = self.data(*col);
                    let da = g.iter().enumerate().map(|(j, x)| x * c[j / n]).collect();
                    accumulate(grads, *a, da);
                }
                if want(*col) {
                    let ad = self.data(*a);
                    let dc = g.chunks(n).zip(ad.chunks(n)).map(|(gr, ar)| dot(gr, ar)).collect();
                    accumulate(grads, *col, dc);
                }
            }
            Op::Div(a, b) => {
                let bd = self.data(*b);
                if want(*a) {
                    accumulate(grads, *a, zip_map(g, bd, |x, y| x / y));
                }
                if want(*b) {
                    let out = node.value.data();
                    let db = g.iter().zip(out).zip(bd).map(|((gx, q), y)| -gx * q / y).collect();
                    accumulate(grads, *b, db);
                }
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.iter().map(|x| x * s).collect()),
            Op::AddScalar(a) => accumulate(grads, *a, g.to_vec()),
            Op::MinScalar(a, cap) => {
                let da = zip_map(g, self.data(*a), |gx, x| if x < *cap { gx } else { 0.0 });
                accumulate(grads, *a, da);
            }
            Op::Relu(a) => {
                let da = zip_map(g, self.data(*a), |gx, x| if x > 0.0 { gx } else { 0.0 });
                accumulate(grads, *a, da);
            }
            Op::Tanh(a) => {
                let da = zip_map(g, node.value.data(), |gx, y| gx * (1.0 - y * y));
                accumulate(grads, *a, da);
            }
            Op::Concat(a, b) => {
                let (ca, cb) = (
                    self.shape(*a).last().copied().unwrap(),
                    self.shape(*b).last().copied().unwrap(),
                );
                let rows = g.len() / (ca + cb);
                let mut da = Vec::with_capacity(rows * ca);
                let mut db = Vec::with_capacity(rows * cb);
                for r in 0..rows {
                    let row = &g[r * (ca + cb)..(r + 1) * (ca + cb)];
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                if want(*a) {
                    accumulate(grads, *a, da);
                }
                if want(*b) {
                    accumulate(grads, *b, db);
                }
            }
            Op::Mean { input, axis } => {
                let shape = self.shape(*input);
                let n = self.nodes[input.0].value.len();
                let (rows, cols) = rows_cols(shape);
                let da = match axis {
                    None => vec![g[0] / n as f32; n],
                    Some(ax) if shape.len() == 1 || *ax == 1 => {
                        let _ = ax;
                        (0..n).map(|j| g[j / cols] / cols as f32).collect()
                    }
                    Some(_) => (0..n).map(|j| g[j % cols] / rows as f32).collect(),
                };
                accumulate(grads, *input, da);
            }
            Op::L2Norm(a) => {
                let x = self.data(*a);
                let cols = self.shape(*a).last().copied().unwrap_or(1);
                let mut da = vec![0.0f32; x.len()];
                for (r, gr) in g.iter().enumerate() {
                    let xr = &x[r * cols..(r + 1) * cols];
                    let denom = (sum_sq(xr) + NORM_GRAD_EPS).sqrt();
                    for (d, xv) in da[r * cols..(r + 1) * cols].iter_mut().zip(xr) {
                        *d = gr * xv / denom;
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::Distance(a, b) => {
                let (xa, xb) = (self.data(*a), self.data(*b));
                let cols = self.shape(*a).last().copied().unwrap_or(1);
                let mut da = vec![0.0f32; xa.len()];
                for (r, gr) in g.iter().enumerate() {
                    let ra = &xa[r * cols..(r + 1) * cols];
                    let rb = &xb[r * cols..(r + 1) * cols];
                    let s: f32 = ra.iter().zip(rb).map(|(p, q)| (p - q) * (p - q)).sum();
                    if s == 0.0 {
                        continue;
                    }
                    let denom = (s + NORM_GRAD_EPS).sqrt();
                    for ((d, p), q) in da[r * cols..(r + 1) * cols].iter_mut().zip(ra).zip(rb) {
                        *d = gr * (p - q) / denom;
                    }
                }
                if want(*b) {
                    accumulate(grads, *b, da.iter().map(|x| -x).collect());
                }
                if want(*a) {
                    accumulate(grads, *a, da);
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let c = self.shape(*logits)[1];
                let b = labels.len() as f32;
                let mut dl = probs.clone();
                for (r, &label) in labels.iter().enumerate() {
                    dl[r * c + label] -= 1.0;
                }
                dl.iter_mut().for_each(|x| *x *= g[0] / b);
                accumulate(grads, *logits, dl);
            }
            Op::EmbeddingBagMean { table, bags } => {
                let shape = self.shape(*table);
                let (v, d) = (shape[0], shape[1]);
                let mut dt = vec![0.0f32; v * d];
                for (b, bag) in bags.iter().enumerate() {
                    let inv = 1.0 / bag.len() as f32;
                    let gr = &g[b * d..(b + 1) * d];
                    for &id in bag {
                        axpy(&mut dt[id * d..(id + 1) * d], inv, gr);
                    }
                }
                accumulate(grads, *table, dt);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f32>>], v: Var, contribution: Vec<f32>) {
    match &mut grads[v.0] {
        Some(existing) => axpy(existing, 1.0, &contribution),
        slot @ None => *slot = Some(contribution),
    }
}

fn zip_map(a: &[f32], b: &[f32], f: impl Fn(f32, f32) -> f32) -> Vec<f32> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(dst: &mut [f32], s: f32, src: &[f32]) {
    for (d, x) in dst.iter_mut().zip(src) {
        *d += s * x;
    }
}

fn sum_sq(x: &[f32]) -> f32 {
    x.iter().map(|v| v * v).sum()
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => (shape[..shape.len() - 1].iter().product(), shape[shape.len() - 1]),
    }
}

fn reduced_last(shape: &[usize], out: Vec<f32>) -> Tensor {
    if shape.len() <= 1 {
        Tensor::scalar(out[0])
    } else {
        Tensor::new(shape[..shape.len() - 1].to_vec(), out).expect("reduced shape")
    }
}

/// Row-major `[m×k]·[k×n]` product.
pub(crate) fn matmul_raw(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let s = a[i * k + kk];
            if s != 0.0 {
                axpy(orow, s, &b[kk * n..(kk + 1) * n]);
            }
        }
    }
    out
}
