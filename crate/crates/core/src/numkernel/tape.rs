//! Tape-based reverse-mode differentiation over [`Tensor2`] values.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order of the graph and `backward` only has to walk it in
//! reverse once.

use crate::error::{Error, Result};
use crate::numkernel::tensor::{self, Tensor2};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    SoftmaxRows(Var),
    ColSlice { src: Var, start: usize },
    ConcatCols(Vec<Var>),
    CosineRows { query: Var, rows: Var },
    Sum(Var),
    LogSumExp(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor2,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `var`; zeros when the node is not on a path to the loss.
    pub fn get(&self, var: Var) -> Tensor2 {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Tensor2::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor2 {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[var.0];
                Tensor2::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor2 {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor2, op: Op, requires_grad: bool) -> Var {
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

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `var`'s current value with the gradient path cut.
    pub fn detach(&mut self, var: Var) -> Var {
        let value = self.nodes[var.0].value.clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Elementwise quotient. A zero divisor is a domain error.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().contains(&0.0) {
            return Err(Error::Domain("division by zero".into()));
        }
        let value = self.value(a).zip_map(self.value(b), "div", |x, y| x / y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Div(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.cols() == 0 {
            return Err(Error::Domain("softmax of an empty row".into()));
        }
        let mut out = Vec::with_capacity(x.len());
        for r in 0..x.rows() {
            out.extend(tensor::softmax_unchecked(x.row(r)));
        }
        let value = Tensor2::from_raw(x.rows(), x.cols(), out);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SoftmaxRows(a), rg))
    }

    /// Columns `start..start + len`.
    pub fn col_slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(Error::Dimension(format!(
                "column slice {start}..{} of a {}x{} tensor",
                start + len,
                x.rows(),
                x.cols()
            )));
        }
        let mut out = Vec::with_capacity(x.rows() * len);
        for r in 0..x.rows() {
            out.extend_from_slice(&x.row(r)[start..start + len]);
        }
        let value = Tensor2::from_raw(x.rows(), len, out);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::ColSlice { src: a, start }, rg))
    }

    /// Horizontal concatenation of tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concatenation of zero tensors".into()))?;
        let rows = self.value(*first).rows();
        if let Some(bad) = parts.iter().find(|p| self.value(**p).rows() != rows) {
            return Err(Error::Dimension(format!(
                "concatenating {} rows with {} rows",
                rows,
                self.value(*bad).rows()
            )));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(r));
            }
        }
        let value = Tensor2::from_raw(rows, cols, out);
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Cosine similarity of a 1×d query against each row of an n×d matrix,
    /// giving a 1×n row.
    pub fn cosine_rows(&mut self, query: Var, rows: Var) -> Result<Var> {
        let q = self.value(query);
        let m = self.value(rows);
        if q.rows() != 1 || q.cols() != m.cols() {
            return Err(Error::Dimension(format!(
                "cosine of a {}x{} query against {}x{} rows",
                q.rows(),
                q.cols(),
                m.rows(),
                m.cols()
            )));
        }
        let mut out = Vec::with_capacity(m.rows());
        for r in 0..m.rows() {
            out.push(tensor::cosine(q.data(), m.row(r))?);
        }
        let value = Tensor2::from_raw(1, m.rows(), out);
        let rg = self.rg(&[query, rows]);
        Ok(self.push(value, Op::CosineRows { query, rows }, rg))
    }

    /// Sum of all entries, as a 1×1 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor2::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    /// log Σ exp over all entries, as a 1×1 tensor.
    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::Domain("log-sum-exp of an empty tensor".into()));
        }
        let value = Tensor2::scalar(tensor::log_sum_exp(x.data()));
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::LogSumExp(a), rg))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shapes: Vec<_> = self.nodes.iter().map(|n| n.value.shape()).collect();
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        let root = &self.nodes[loss.0].value;
        if !root.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {}x{}",
                root.rows(),
                root.cols()
            )));
        }
        grads[loss.0] = Some(Tensor2::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &upstream, &mut grads)?;
            grads[idx] = Some(upstream);
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, up: &Tensor2, grads: &mut [Option<Tensor2>]) -> Result<()> {
        let mut accumulate = |var: Var, g: Tensor2| {
            if !self.nodes[var.0].requires_grad {
                return;
            }
            match &mut grads[var.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.nodes[a.0].requires_grad {
                    accumulate(*a, up.matmul(&bv.transpose())?);
                }
                if self.nodes[b.0].requires_grad {
                    accumulate(*b, av.transpose().matmul(up)?);
                }
            }
            Op::Add(a, b) => {
                accumulate(*a, up.clone());
                accumulate(*b, up.clone());
            }
            Op::Sub(a, b) => {
                accumulate(*a, up.clone());
                accumulate(*b, up.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                accumulate(*a, up.zip_map(bv, "mul", |g, y| g * y)?);
                accumulate(*b, up.zip_map(av, "mul", |g, x| g * x)?);
            }
            Op::Div(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                accumulate(*a, up.zip_map(bv, "div", |g, y| g / y)?);
                let ga: Vec<f64> = up
                    .data()
                    .iter()
                    .zip(av.data())
                    .zip(bv.data())
                    .map(|((g, x), y)| -g * x / (y * y))
                    .collect();
                accumulate(*b, Tensor2::from_raw(bv.rows(), bv.cols(), ga));
            }
            Op::Scale(a, factor) => accumulate(*a, up.map(|g| g * factor)),
            Op::Transpose(a) => accumulate(*a, up.transpose()),
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut out = Vec::with_capacity(y.len());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = up.row(r);
                    let inner = tensor::dot(yr, gr);
                    out.extend(yr.iter().zip(gr).map(|(yi, gi)| yi * (gi - inner)));
                }
                accumulate(*a, Tensor2::from_raw(y.rows(), y.cols(), out));
            }
            Op::ColSlice { src, start } => {
                let sv = self.value(*src);
                let mut g = Tensor2::zeros(sv.rows(), sv.cols());
                for r in 0..up.rows() {
                    for c in 0..up.cols() {
                        g.set(r, start + c, up.get(r, c));
                    }
                }
                accumulate(*src, g);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let mut g = Vec::with_capacity(pv.len());
                    for r in 0..up.rows() {
                        g.extend_from_slice(&up.row(r)[offset..offset + pv.cols()]);
                    }
                    accumulate(*p, Tensor2::from_raw(pv.rows(), pv.cols(), g));
                    offset += pv.cols();
                }
            }
            Op::CosineRows { query, rows } => {
                let q = self.value(*query);
                let m = self.value(*rows);
                let c = &node.value;
                let qd = q.data();
                let qn = tensor::norm(qd);
                let mut gq = vec![0.0; qd.len()];
                let mut gm = vec![0.0; m.len()];
                for r in 0..m.rows() {
                    let g = up.get(0, r);
                    if g == 0.0 {
                        continue;
                    }
                    let mr = m.row(r);
                    let mn = tensor::norm(mr);
                    let cos = c.get(0, r);
                    let gmr = &mut gm[r * m.cols()..(r + 1) * m.cols()];
                    for k in 0..qd.len() {
                        gq[k] += g * (mr[k] / (qn * mn) - cos * qd[k] / (qn * qn));
                        gmr[k] += g * (qd[k] / (qn * mn) - cos * mr[k] / (mn * mn));
                    }
                }
                accumulate(*query, Tensor2::from_raw(1, qd.len(), gq));
                accumulate(*rows, Tensor2::from_raw(m.rows(), m.cols(), gm));
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                accumulate(*a, Tensor2::filled(r, c, up.get(0, 0)));
            }
            Op::LogSumExp(a) => {
                let x = self.value(*a);
                let g = up.get(0, 0);
                let sm = tensor::softmax_unchecked(x.data());
                let data = sm.into_iter().map(|p| p * g).collect();
                accumulate(*a, Tensor2::from_raw(x.rows(), x.cols(), data));
            }
        }
        Ok(())
    }
}

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference(x: &Tensor2, h: f64, mut f: impl FnMut(&Tensor2) -> f64) -> Tensor2 {
    let mut grad = Tensor2::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Largest elementwise relative error, with `floor` guarding near-zero entries.
pub fn max_relative_error(analytic: &Tensor2, numeric: &Tensor2, floor: f64) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
