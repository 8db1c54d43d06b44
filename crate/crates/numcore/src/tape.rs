//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every kernel applied during a forward pass. Parameters
//! enter through [`Tape::param`], which borrows the registry value instead of
//! copying it, and resolves slot names to storages so that tied slots land
//! on a single tape node. [`Tape::backward`] returns gradients per storage;
//! a storage used at several sites receives the sum of all contributions.
//!
//! One tape is built per training step and dropped afterwards.

use std::borrow::Cow;
use std::collections::HashMap;

use crate::error::{NumError, Result};
use crate::params::{Gradients, ParamRegistry, StorageId};
use crate::tensor::{gemm_into, Scalar, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Param(StorageId),
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { x: Var, bias: Var },
    Scale { x: Var, s: F },
    OneMinus(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    Gather { table: Var, idx: Vec<Option<usize>> },
    GatherSum { table: Var, offsets: Vec<usize>, flat: Vec<usize> },
    Reshape(Var),
    MaxOverTime { x: Var, argmax: Vec<usize> },
    Mask { x: Var, mask: Tensor<F> },
    SumCols(Var),
    SoftmaxCe { logits: Var, targets: Vec<usize>, probs: Tensor<F> },
}

struct Node<'p, F: Scalar> {
    value: Cow<'p, Tensor<F>>,
    op: Op<F>,
}

pub struct Tape<'p, F: Scalar> {
    params: Option<&'p ParamRegistry<F>>,
    nodes: Vec<Node<'p, F>>,
    param_nodes: HashMap<StorageId, Var>,
}

fn same_matrix<F: Scalar>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(NumError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn finite<F: Scalar>(op: &'static str, t: Tensor<F>) -> Result<Tensor<F>> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(NumError::NonFinite { op })
    }
}

fn zip_map<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("same length")
}

fn sigmoid<F: Scalar>(v: F) -> F {
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}

impl<'p, F: Scalar> Default for Tape<'p, F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, F: Scalar> Tape<'p, F> {
    /// A tape without parameters (constants only).
    pub fn new() -> Self {
        Tape {
            params: None,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn with_params(params: &'p ParamRegistry<F>) -> Self {
        Tape {
            params: Some(params),
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor<F>>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push_owned(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        self.push(Cow::Owned(value), op)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push_owned(t, Op::Leaf)
    }

    /// Constant borrowed for the lifetime of the tape (no copy).
    pub fn constant_ref(&mut self, t: &'p Tensor<F>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf)
    }

    /// Trainable parameter by slot name. Slots sharing a storage map to the
    /// same node.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let reg = self
            .params
            .ok_or_else(|| NumError::UnknownSlot(name.to_string()))?;
        let id = reg.layout().storage_of(name)?;
        if let Some(&v) = self.param_nodes.get(&id) {
            return Ok(v);
        }
        let v = self.push(Cow::Borrowed(reg.storage_value(id)), Op::Param(id));
        self.param_nodes.insert(id, v);
        Ok(v)
    }

    fn mm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b), trans_b)?;
        let out = finite("matmul", out)?;
        Ok(self.push_owned(out, Op::MatMul { a, b, trans_b }))
    }

    /// `a * b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.mm(a, b, false)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.mm(a, b, true)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(F, F) -> F,
        op: Op<F>,
    ) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_matrix(name, x, y)?;
        let out = finite(name, zip_map(x, y, f))?;
        Ok(self.push_owned(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.len() != xv.cols() {
            return Err(NumError::ShapeMismatch {
                op: "add_row",
                left: xv.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let mut out = xv.clone();
        let c = xv.cols();
        for r in 0..xv.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(&bv.data()[..c]) {
                *o = *o + b;
            }
        }
        let out = finite("add_row", out)?;
        Ok(self.push_owned(out, Op::AddRow { x, bias }))
    }

    pub fn scale(&mut self, x: Var, s: F) -> Result<Var> {
        let out = finite("scale", self.value(x).map(|v| v * s))?;
        Ok(self.push_owned(out, Op::Scale { x, s }))
    }

    /// `1 - x` elementwise.
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| F::one() - v);
        Ok(self.push_owned(out, Op::OneMinus(x)))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > F::zero() { v } else { F::zero() });
        Ok(self.push_owned(out, Op::Relu(x)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        Ok(self.push_owned(out, Op::Sigmoid(x)))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.tanh());
        Ok(self.push_owned(out, Op::Tanh(x)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NumError::InvalidArgument("concat of nothing".into()))?;
        let rows = self.value(*first).rows();
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(NumError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.value(*first).shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
            total += v.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::from_vec(&[rows, total], data)?;
        Ok(self.push_owned(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NumError::InvalidArgument("concat of nothing".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(NumError::ShapeMismatch {
                    op: "concat_rows",
                    left: self.value(*first).shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::from_vec(&[rows, cols], data)?;
        Ok(self.push_owned(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        if start + len > v.cols() {
            return Err(NumError::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                bound: v.cols(),
            });
        }
        let mut data = Vec::with_capacity(v.rows() * len);
        for r in 0..v.rows() {
            data.extend_from_slice(&v.row(r)[start..start + len]);
        }
        let out = Tensor::from_vec(&[v.rows(), len], data)?;
        Ok(self.push_owned(out, Op::SliceCols { x, start }))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        if start + len > v.rows() {
            return Err(NumError::IndexOutOfRange {
                op: "slice_rows",
                index: start + len,
                bound: v.rows(),
            });
        }
        let c = v.cols();
        let out = Tensor::from_vec(&[len, c], v.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.push_owned(out, Op::SliceRows { x, start }))
    }

    /// Row lookup: `out[i] = table[idx[i]]` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let idx: Vec<Option<usize>> = idx.iter().copied().map(Some).collect();
        self.gather_impl(table, idx)
    }

    /// Row lookup where `None` yields a zero row.
    pub fn gather_rows_or_zero(&mut self, table: Var, idx: &[Option<usize>]) -> Result<Var> {
        self.gather_impl(table, idx.to_vec())
    }

    fn gather_impl(&mut self, table: Var, idx: Vec<Option<usize>>) -> Result<Var> {
        let t = self.value(table);
        let (rows, c) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(idx.len() * c);
        for i in idx.iter() {
            match *i {
                Some(i) if i >= rows => {
                    return Err(NumError::IndexOutOfRange {
                        op: "gather_rows",
                        index: i,
                        bound: rows,
                    })
                }
                Some(i) => data.extend_from_slice(t.row(i)),
                None => data.extend(std::iter::repeat(F::zero()).take(c)),
            }
        }
        let out = Tensor::from_vec(&[idx.len(), c], data)?;
        Ok(self.push_owned(out, Op::Gather { table, idx }))
    }

    /// `out[g] = sum of table rows listed in groups[g]`.
    pub fn gather_sum(&mut self, table: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let t = self.value(table);
        let (rows, c) = (t.rows(), t.cols());
        let mut out = Tensor::zeros(&[groups.len(), c]);
        let mut offsets = Vec::with_capacity(groups.len() + 1);
        let mut flat = Vec::new();
        offsets.push(0);
        for (g, group) in groups.iter().enumerate() {
            for &i in group {
                if i >= rows {
                    return Err(NumError::IndexOutOfRange {
                        op: "gather_sum",
                        index: i,
                        bound: rows,
                    });
                }
                for (o, &v) in out.row_mut(g).iter_mut().zip(t.row(i)) {
                    *o = *o + v;
                }
                flat.push(i);
            }
            offsets.push(flat.len());
        }
        let out = finite("gather_sum", out)?;
        Ok(self.push_owned(out, Op::GatherSum { table, offsets, flat }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push_owned(out, Op::Reshape(x)))
    }

    /// Max over consecutive row groups of length `group_len`, considering
    /// only the first `valid[g]` rows of group `g`. Output row `g` holds the
    /// column-wise maximum of group `g`.
    pub fn max_over_time(&mut self, x: Var, group_len: usize, valid: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let c = v.cols();
        if group_len == 0 || v.rows() != group_len * valid.len() {
            return Err(NumError::ShapeMismatch {
                op: "max_over_time",
                left: v.shape().to_vec(),
                right: vec![valid.len(), group_len],
            });
        }
        let mut out = Tensor::zeros(&[valid.len(), c]);
        let mut argmax = vec![0usize; valid.len() * c];
        for (g, &n) in valid.iter().enumerate() {
            if n == 0 || n > group_len {
                return Err(NumError::InvalidArgument(format!(
                    "max_over_time: group {g} has {n} valid rows of {group_len}"
                )));
            }
            let base = g * group_len;
            for f in 0..c {
                let mut best = base;
                for r in base + 1..base + n {
                    if v.at(r, f) > v.at(best, f) {
                        best = r;
                    }
                }
                argmax[g * c + f] = best;
                out.row_mut(g)[f] = v.at(best, f);
            }
        }
        Ok(self.push_owned(out, Op::MaxOverTime { x, argmax }))
    }

    /// Dropout with a caller-supplied binary mask: `x * mask / (1 - rate)`.
    pub fn dropout(&mut self, x: Var, mask: &Tensor<F>, rate: F) -> Result<Var> {
        let xv = self.value(x);
        same_matrix("dropout", xv, mask)?;
        if !(rate >= F::zero() && rate < F::one()) {
            return Err(NumError::InvalidArgument(format!("dropout rate {rate}")));
        }
        let keep = F::one() / (F::one() - rate);
        let scaled = mask.map(|m| m * keep);
        let out = zip_map(xv, &scaled, |a, b| a * b);
        Ok(self.push_owned(out, Op::Mask { x, mask: scaled }))
    }

    /// Row sums as an `[rows x 1]` column.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let data = (0..v.rows()).map(|r| v.row(r).iter().copied().sum()).collect();
        let out = finite("sum_cols", Tensor::from_vec(&[v.rows(), 1], data)?)?;
        Ok(self.push_owned(out, Op::SumCols(x)))
    }

    /// Mean negative log-likelihood (nats) of `targets` under row-wise softmax.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        let (n, c) = (z.rows(), z.cols());
        if targets.len() != n {
            return Err(NumError::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: z.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        if c < 2 {
            return Err(NumError::InvalidArgument(
                "softmax over fewer than 2 classes".into(),
            ));
        }
        let mut probs = Tensor::zeros(&[n, c]);
        let mut total = F::zero();
        for (r, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(NumError::IndexOutOfRange {
                    op: "softmax_cross_entropy",
                    index: t,
                    bound: c,
                });
            }
            let row = z.row(r);
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let p = probs.row_mut(r);
            let mut s = F::zero();
            for (pi, &zi) in p.iter_mut().zip(row) {
                *pi = (zi - m).exp();
                s = s + *pi;
            }
            for pi in p.iter_mut() {
                *pi = *pi / s;
            }
            total = total + (m + s.ln() - row[t]);
        }
        let mean = total / F::from_usize(n).expect("row count");
        let out = finite("softmax_cross_entropy", Tensor::scalar(mean))?;
        Ok(self.push_owned(
            out,
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Reverse pass from a scalar node; returns gradients per storage.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.value(loss).len() != 1 {
            return Err(NumError::InvalidArgument(format!(
                "backward from non-scalar {:?}",
                self.value(loss).shape()
            )));
        }
        let n_storages = self.params.map_or(0, |p| p.layout().storages().len());
        let mut out = Gradients {
            by_storage: vec![None; n_storages],
        };
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), F::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    match &mut out.by_storage[id.0] {
                        Some(acc) => acc.add_assign(&g),
                        slot => *slot = Some(g),
                    }
                }
                Op::MatMul { a, b, trans_b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    {
                        let ga = grad_slot(&mut grads, *a, av);
                        // C = A op(B): dA = dC op(B)^T
                        gemm_into(&g, false, bv, !trans_b, F::one(), F::one(), ga);
                    }
                    let gb = grad_slot(&mut grads, *b, bv);
                    if *trans_b {
                        // C = A B^T: dB = dC^T A
                        gemm_into(&g, true, av, false, F::one(), F::one(), gb);
                    } else {
                        gemm_into(av, true, &g, false, F::one(), F::one(), gb);
                    }
                }
                Op::Add(a, b) => {
                    grad_slot(&mut grads, *a, self.value(*a)).add_assign(&g);
                    grad_slot(&mut grads, *b, self.value(*b)).add_assign(&g);
                }
                Op::Sub(a, b) => {
                    grad_slot(&mut grads, *a, self.value(*a)).add_assign(&g);
                    let gb = grad_slot(&mut grads, *b, self.value(*b));
                    for (d, &v) in gb.data_mut().iter_mut().zip(g.data()) {
                        *d = *d - v;
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    axpy_prod(grad_slot(&mut grads, *a, av), &g, bv);
                    axpy_prod(grad_slot(&mut grads, *b, bv), &g, av);
                }
                Op::AddRow { x, bias } => {
                    grad_slot(&mut grads, *x, self.value(*x)).add_assign(&g);
                    let gb = grad_slot(&mut grads, *bias, self.value(*bias));
                    let c = g.cols();
                    for r in 0..g.rows() {
                        for (d, &v) in gb.data_mut()[..c].iter_mut().zip(g.row(r)) {
                            *d = *d + v;
                        }
                    }
                }
                Op::Scale { x, s } => {
                    let gx = grad_slot(&mut grads, *x, self.value(*x));
                    for (d, &v) in gx.data_mut().iter_mut().zip(g.data()) {
                        *d = *d + *s * v;
                    }
                }
                Op::OneMinus(x) => {
                    let gx = grad_slot(&mut grads, *x, self.value(*x));
                    for (d, &v) in gx.data_mut().iter_mut().zip(g.data()) {
                        *d = *d - v;
                    }
                }
                Op::Relu(x) => {
                    let y = &node.value;
                    let gx = grad_slot(&mut grads, *x, self.value(*x));
                    for ((d, &v), &yv) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        if yv > F::zero() {
                            *d = *d + v;
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let gx = grad_slot(&mut grads, *x, self.value(*x));
                    for ((d, &v), &yv) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *d = *d + v * yv * (F::one() - yv);
                    }
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let gx = grad_slot(&mut grads, *x, self.value(*x));
                    for ((d, &v), &yv) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *d = *d + v * (F::one() - yv * yv);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let w = pv.cols();
                        let gp = grad_slot(&mut grads, p, pv);
                        for r in 0..g.rows() {
                            for (d, &v) in gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                                *d = *d + v;
                            }
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let n = pv.len();
                        let gp = grad_slot(&mut grads, p, pv);
                        for (d, &v) in gp.data_mut().iter_mut().zip(&g.data()[offset..offset + n]) {
                            *d = *d + v;
                        }
                        offset += n;
                    }
                }
                Op::SliceCols { x, start } => {
                    let gx = grad_slot(&mut grads, *x, self.value(*x));
                    let w = g.cols();
                    for r in 0..g.rows() {
                        for (d, &v) in gx.row_mut(r)[*start..*start + w].iter_mut().zip(g.row(r)) {
                            *d = *d + v;
                        }
                    }
                }
                Op::SliceRows { x, start } => {
                    let gx = grad_slot(&mut grads, *x, self.value(*x));
                    let c = g.cols();
                    let base = start * c;
                    for (d, &v) in gx.data_mut()[base..base + g.len()].iter_mut().zip(g.data()) {
                        *d = *d + v;
                    }
                }
                Op::Gather { table, idx } => {
                    let gt = grad_slot(&mut grads, *table, self.value(*table));
                    for (r, i) in idx.iter().enumerate() {
                        if let Some(i) = *i {
                            for (d, &v) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                                *d = *d + v;
                            }
                        }
                    }
                }
                Op::GatherSum { table, offsets, flat } => {
                    let gt = grad_slot(&mut grads, *table, self.value(*table));
                    for r in 0..offsets.len() - 1 {
                        for &i in &flat[offsets[r]..offsets[r + 1]] {
                            for (d, &v) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                                *d = *d + v;
                            }
                        }
                    }
                }
                Op::Reshape(x) => {
                    grad_slot(&mut grads, *x, self.value(*x)).add_assign(&g);
                }
                Op::MaxOverTime { x, argmax } => {
                    let gx = grad_slot(&mut grads, *x, self.value(*x));
                    let c = g.cols();
                    for (k, &src) in argmax.iter().enumerate() {
                        let f = k % c;
                        let d = &mut gx.row_mut(src)[f];
                        *d = *d + g.data()[k];
                    }
                }
                Op::Mask { x, mask } => {
                    axpy_prod(grad_slot(&mut grads, *x, self.value(*x)), &g, mask);
                }
                Op::SumCols(x) => {
                    let gx = grad_slot(&mut grads, *x, self.value(*x));
                    for r in 0..g.rows() {
                        let v = g.data()[r];
                        for d in gx.row_mut(r) {
                            *d = *d + v;
                        }
                    }
                }
                Op::SoftmaxCe {
                    logits,
                    targets,
                    probs,
                } => {
                    let scale = g.data()[0] / F::from_usize(targets.len()).expect("row count");
                    let gz = grad_slot(&mut grads, *logits, self.value(*logits));
                    for (r, &t) in targets.iter().enumerate() {
                        let row = gz.row_mut(r);
                        for (d, &p) in row.iter_mut().zip(probs.row(r)) {
                            *d = *d + scale * p;
                        }
                        row[t] = row[t] - scale;
                    }
                }
            }
        }
        Ok(out)
    }
}

fn grad_slot<'g, F: Scalar>(
    grads: &'g mut [Option<Tensor<F>>],
    v: Var,
    like: &Tensor<F>,
) -> &'g mut Tensor<F> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(like.shape()))
}

/// `acc += a * b` elementwise.
fn axpy_prod<F: Scalar>(acc: &mut Tensor<F>, a: &Tensor<F>, b: &Tensor<F>) {
    for ((d, &x), &y) in acc.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        *d = *d + x * y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{InitRule, ParamLayout};

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn relu_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2], &[-1.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn max_over_time_example() {
        // rows [[1,5,2],[4,0,3]] along time, one feature column per row
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3, 2], &[1.0, 4.0, 5.0, 0.0, 2.0, 3.0]));
        let y = tape.max_over_time(x, 3, &[3]).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0, 4.0]);
        // masking the tail of the group
        let z = tape.max_over_time(x, 3, &[1]).unwrap();
        assert_eq!(tape.value(z).data(), &[1.0, 4.0]);
    }

    #[test]
    fn softmax_uniform_is_ln_v() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::zeros(&[3, 4]));
        let l = tape.softmax_cross_entropy(z, &[0, 1, 3]).unwrap();
        assert!((tape.value(l).data()[0] - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_saturated() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(t(&[1, 2], &[10.0, -10.0]));
        let l = tape.softmax_cross_entropy(z, &[0]).unwrap();
        let expected = (1.0 + (-20f64).exp()).ln();
        assert!((tape.value(l).data()[0] - expected).abs() < 1e-15);
        assert!((expected - 2.061e-9).abs() < 1e-12);
    }

    #[test]
    fn softmax_mean_semantics() {
        let row = [0.3, -1.2, 2.0];
        let mut tape = Tape::<f64>::new();
        let one = tape.constant(t(&[1, 3], &row));
        let many = tape.constant(t(&[3, 3], &[row, row, row].concat()));
        let a = tape.softmax_cross_entropy(one, &[2]).unwrap();
        let b = tape.softmax_cross_entropy(many, &[2, 2, 2]).unwrap();
        assert!((tape.value(a).data()[0] - tape.value(b).data()[0]).abs() < 1e-14);
    }

    #[test]
    fn invalid_target() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::zeros(&[1, 4]));
        assert!(matches!(
            tape.softmax_cross_entropy(z, &[4]),
            Err(NumError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[1], &[f64::MAX]));
        assert!(matches!(tape.add(a, a), Err(NumError::NonFinite { .. })));
    }

    #[test]
    fn product_rule_scalar() {
        let mut l = ParamLayout::new();
        l.declare("x", &[1], InitRule::Uniform).unwrap();
        l.declare("y", &[1], InitRule::Uniform).unwrap();
        let mut reg = ParamRegistry::<f64>::zeros(l);
        reg.value_mut("x").unwrap().data_mut()[0] = 2.0;
        reg.value_mut("y").unwrap().data_mut()[0] = 3.0;
        let mut tape = Tape::with_params(&reg);
        let x = tape.param("x").unwrap();
        let y = tape.param("y").unwrap();
        let p = tape.mul(x, y).unwrap();
        let g = tape.backward(p).unwrap();
        let xid = reg.layout().storage_of("x").unwrap();
        assert_eq!(g.get(xid).unwrap().data(), &[3.0]);
    }

    #[test]
    fn parameter_used_twice_sums() {
        let mut l = ParamLayout::new();
        l.declare("p", &[1], InitRule::Uniform).unwrap();
        l.declare("q", &[1], InitRule::Uniform).unwrap();
        l.tie("q", "p").unwrap();
        let reg = ParamRegistry::<f64>::zeros(l);
        let mut tape = Tape::with_params(&reg);
        let p = tape.param("p").unwrap();
        let q = tape.param("q").unwrap();
        assert_eq!(p, q);
        let s = tape.add(p, q).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(StorageId(0)).unwrap().data(), &[2.0]);
    }

    #[test]
    fn dropout_scales_kept_units() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let mask = t(&[1, 4], &[1.0, 0.0, 1.0, 0.0]);
        let y = tape.dropout(x, &mask, 0.5).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 0.0, 6.0, 0.0]);
    }
}
