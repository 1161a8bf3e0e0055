//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the tape and returns a [`Var`] handle.
//! Nodes are recorded in creation order, which is already a topological
//! order, so `backward` is a single reverse sweep.

use super::tensor::{Tensor, COSINE_EPS};
use super::{NumError, Scalar};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What happens when `backward` is called again before `reset_grads`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BackwardPolicy {
    #[default]
    Reject,
    /// Sum the new gradients into the existing ones.
    Accumulate,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Sigmoid(Var),
    Ln(Var),
    Clamp(Var, T, T),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    MeanAxis(Var, usize),
    Sum(Var),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    Concat(Vec<Var>, usize),
    Cosine(Var, Var),
    Reshape(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a computation and differentiates it.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    backward_done: bool,
    policy: BackwardPolicy,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self::with_policy(BackwardPolicy::Reject)
    }

    pub fn with_policy(policy: BackwardPolicy) -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            policy,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push_with(value, op, needs_grad)
    }

    fn push_with(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable input; receives a gradient on `backward`.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_with(value, Op::Leaf, true)
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_with(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> Result<T, NumError> {
        self.value(v).item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Clears gradients so `backward` may run again under [`BackwardPolicy::Reject`].
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let v = self.value(a).div(self.value(b))?;
        Ok(self.push(v, Op::Div(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let v = self.value(a).scale(k);
        self.push(v, Op::Scale(a, k), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    pub fn add_scalar(&mut self, a: Var, k: T) -> Var {
        let v = self.value(a).map(|x| x + k);
        self.push(v, Op::AddScalar(a), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumError> {
        let v = self.value(a).transpose()?;
        Ok(self.push(v, Op::Transpose(a), &[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(T::ln);
        self.push(v, Op::Ln(a), &[a])
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let v = self.value(a).map(|x| x.max(lo).min(hi));
        self.push(v, Op::Clamp(a, lo, hi), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, NumError> {
        let v = self.value(a).softmax_rows()?;
        Ok(self.push(v, Op::SoftmaxRows(a), &[a]))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var, NumError> {
        let v = self.value(a).log_softmax_rows()?;
        Ok(self.push(v, Op::LogSoftmaxRows(a), &[a]))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var, NumError> {
        let v = self.value(a).mean_axis(axis)?;
        Ok(self.push(v, Op::MeanAxis(a, axis), &[a]))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var, NumError> {
        let v = self.value(a).gather_rows(indices)?;
        Ok(self.push(v, Op::GatherRows(a, indices.to_vec()), &[a]))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumError> {
        let v = self.value(a).slice_cols(start, end)?;
        Ok(self.push(v, Op::SliceCols(a, start), &[a]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, NumError> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat(&tensors, axis)?;
        Ok(self.push(v, Op::Concat(parts.to_vec(), axis), parts))
    }

    /// Cosine similarity of two equal-length tensors, as a rank-0 tensor.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let c = self.value(a).cosine(self.value(b))?;
        Ok(self.push(Tensor::scalar(c), Op::Cosine(a, b), &[a, b]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumError> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a), &[a]))
    }

    /// Sum of a non-empty list of same-shape nodes.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var, NumError> {
        let (&first, rest) = vars.split_first().ok_or(NumError::EmptyIndex { op: "add_all" })?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    /// Arithmetic mean of a non-empty list of same-shape nodes.
    pub fn mean_of(&mut self, vars: &[Var]) -> Result<Var, NumError> {
        let total = self.add_all(vars)?;
        Ok(self.scale(total, T::one() / T::lit(vars.len() as f64)))
    }

    /// Propagates gradients from a one-element `loss` to every node that needs one.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumError> {
        let loss_shape = self.value(loss).shape().to_vec();
        if self.value(loss).numel() != 1 {
            return Err(NumError::NotScalar { shape: loss_shape });
        }
        if self.backward_done && self.policy == BackwardPolicy::Reject {
            return Err(NumError::BackwardTwice);
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(&loss_shape, T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        if self.grads.len() < grads.len() {
            self.grads.resize(grads.len(), None);
        }
        for (slot, new) in self.grads.iter_mut().zip(grads) {
            match (slot.as_mut(), new) {
                (Some(old), Some(new)) => old.add_assign(&new)?,
                (None, Some(new)) => *slot = Some(new),
                _ => {}
            }
        }
        self.backward_done = true;
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<(), NumError> {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(grads, *a, g.clone())?;
                self.accum(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.clone())?;
                self.accum(grads, *b, g.scale(-T::one()))?;
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accum(grads, *a, g.mul(vb)?)?;
                self.accum(grads, *b, g.mul(va)?)?;
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accum(grads, *a, g.div(vb)?)?;
                let gb = g.mul(va)?.div(&vb.mul(vb)?)?.scale(-T::one());
                self.accum(grads, *b, gb)?;
            }
            Op::Scale(a, k) => self.accum(grads, *a, g.scale(*k))?,
            Op::AddScalar(a) | Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accum(grads, *a, g.reshape(&shape)?)?;
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    self.accum(grads, *a, g.matmul(&vb.transpose()?)?)?;
                }
                if self.nodes[b.0].needs_grad {
                    self.accum(grads, *b, va.transpose()?.matmul(g)?)?;
                }
            }
            Op::Transpose(a) => self.accum(grads, *a, g.transpose()?)?,
            Op::Sigmoid(a) => {
                let local = out.map(|s| s * (T::one() - s));
                self.accum(grads, *a, g.mul(&local)?)?;
            }
            Op::Ln(a) => self.accum(grads, *a, g.div(self.value(*a))?)?,
            Op::Clamp(a, lo, hi) => {
                let mask = self
                    .value(*a)
                    .map(|x| if x >= *lo && x <= *hi { T::one() } else { T::zero() });
                self.accum(grads, *a, g.mul(&mask)?)?;
            }
            Op::SoftmaxRows(a) => {
                let cols = *out.shape().last().unwrap_or(&1);
                let mut dx = g.clone();
                for (row_g, row_s) in dx.data_mut().chunks_mut(cols).zip(out.data().chunks(cols)) {
                    let inner: T = row_g.iter().zip(row_s).map(|(&gi, &si)| gi * si).sum();
                    for (gi, &si) in row_g.iter_mut().zip(row_s) {
                        *gi = si * (*gi - inner);
                    }
                }
                self.accum(grads, *a, dx)?;
            }
            Op::LogSoftmaxRows(a) => {
                let cols = *out.shape().last().unwrap_or(&1);
                let mut dx = g.clone();
                for (row_g, row_l) in dx.data_mut().chunks_mut(cols).zip(out.data().chunks(cols)) {
                    let total: T = row_g.iter().copied().sum();
                    for (gi, &li) in row_g.iter_mut().zip(row_l) {
                        *gi = *gi - li.exp() * total;
                    }
                }
                self.accum(grads, *a, dx)?;
            }
            Op::MeanAxis(a, axis) => {
                let (r, c) = self.value(*a).dims2("mean_axis")?;
                let mut dx = Tensor::zeros(&[r, c]);
                let data = dx.data_mut();
                match axis {
                    0 => {
                        let inv = T::one() / T::lit(r as f64);
                        for i in 0..r {
                            for j in 0..c {
                                data[i * c + j] = g.data()[j] * inv;
                            }
                        }
                    }
                    _ => {
                        let inv = T::one() / T::lit(c as f64);
                        for i in 0..r {
                            for j in 0..c {
                                data[i * c + j] = g.data()[i] * inv;
                            }
                        }
                    }
                }
                self.accum(grads, *a, dx)?;
            }
            Op::Sum(a) => {
                let gv = g.item()?;
                self.accum(grads, *a, Tensor::full(self.value(*a).shape(), gv))?;
            }
            Op::GatherRows(a, indices) => {
                let (r, c) = self.value(*a).dims2("gather_rows")?;
                let mut dx = Tensor::zeros(&[r, c]);
                let data = dx.data_mut();
                for (k, &i) in indices.iter().enumerate() {
                    for j in 0..c {
                        data[i * c + j] = data[i * c + j] + g.data()[k * c + j];
                    }
                }
                self.accum(grads, *a, dx)?;
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.value(*a).dims2("slice_cols")?;
                let width = g.shape()[1];
                let mut dx = Tensor::zeros(&[r, c]);
                let data = dx.data_mut();
                for i in 0..r {
                    for j in 0..width {
                        data[i * c + start + j] = g.data()[i * width + j];
                    }
                }
                self.accum(grads, *a, dx)?;
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.value(p).dims2("concat")?;
                    let piece = if *axis == 0 {
                        let (_, cols) = g.dims2("concat")?;
                        let piece = Tensor::new(vec![r, c], g.data()[offset * cols..(offset + r) * cols].to_vec())?;
                        offset += r;
                        piece
                    } else {
                        let piece = g.slice_cols(offset, offset + c)?;
                        offset += c;
                        piece
                    };
                    self.accum(grads, p, piece)?;
                }
            }
            Op::Cosine(a, b) => {
                let gv = g.item()?;
                let (va, vb) = (self.value(*a), self.value(*b));
                let (na, nb) = (va.norm(), vb.norm());
                let denom = na * nb;
                let eps = T::lit(COSINE_EPS);
                let (ga, gb) = if denom > eps {
                    let c = out.item()?;
                    let ga = va
                        .reshape(vb.shape())?
                        .scale(-c / (na * na))
                        .add(&vb.scale(T::one() / denom))?;
                    let gb = vb
                        .reshape(va.shape())?
                        .scale(-c / (nb * nb))
                        .add(&va.scale(T::one() / denom))?;
                    (ga.reshape(va.shape())?, gb.reshape(vb.shape())?)
                } else {
                    (
                        vb.scale(T::one() / eps).reshape(va.shape())?,
                        va.scale(T::one() / eps).reshape(vb.shape())?,
                    )
                };
                self.accum(grads, *a, ga.scale(gv))?;
                self.accum(grads, *b, gb.scale(gv))?;
            }
        }
        Ok(())
    }

    fn accum(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<(), NumError> {
        if !self.nodes[v.0].needs_grad {
            return Ok(());
        }
        match grads[v.0].as_mut() {
            Some(existing) => existing.add_assign(&g),
            None => {
                grads[v.0] = Some(g);
                Ok(())
            }
        }
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
