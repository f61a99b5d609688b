//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every node created during one forward pass in
//! creation order, which is a topological order by construction. Parameters
//! enter the tape as leaves bound to a [`ParamId`]; [`Tape::backward`]
//! propagates adjoints from a scalar loss and adds the parameter gradients
//! into the owning [`ParamStore`].

use std::collections::HashMap;
use std::fmt::Write as _;

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate faults for exercising the gradient checker.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Backward pass of `sigmoid` uses σ(x) instead of σ(x)(1−σ(x)).
    SigmoidGrad,
}

#[derive(Debug)]
enum Op {
    Input,
    Constant,
    Param,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    MulConst(usize, Tensor),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Transpose(usize),
    Reshape(usize),
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    Narrow {
        src: usize,
        axis: usize,
        start: usize,
    },
    Sum(usize),
    Mean(usize),
    MeanAxis {
        src: usize,
        axis: usize,
    },
    MaxAxis {
        src: usize,
        winners: Vec<usize>,
    },
    SoftmaxRows(usize),
    GatherRows {
        src: usize,
        ids: Vec<usize>,
        frozen_row: Option<usize>,
    },
    BlockRowDot(usize, usize),
    SoftmaxXent {
        logits: usize,
        probs: Tensor,
        gold: Vec<usize>,
        mask: Vec<bool>,
        count: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Constant => "constant",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::MulConst(..) => "mul_const",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::MeanAxis { .. } => "mean_axis",
            Op::MaxAxis { .. } => "max_axis",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::GatherRows { .. } => "gather_rows",
            Op::BlockRowDot(..) => "block_row_dot",
            Op::SoftmaxXent { .. } => "softmax_cross_entropy",
        }
    }

    fn parents(&self) -> Vec<usize> {
        match self {
            Op::Input | Op::Constant | Op::Param => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::BlockRowDot(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::MulConst(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SoftmaxRows(a) => vec![*a],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Narrow { src, .. }
            | Op::MeanAxis { src, .. }
            | Op::MaxAxis { src, .. }
            | Op::GatherRows { src, .. } => vec![*src],
            Op::SoftmaxXent { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of one forward pass.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    bound: HashMap<ParamId, Var>,
    checked: bool,
    fault: Option<Fault>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Splits `shape` around `axis` into (outer, axis_len, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            bound: HashMap::new(),
            checked: true,
            fault: None,
        }
    }

    /// Toggles non-finite detection at op boundaries (on by default).
    pub fn set_checked(&mut self, checked: bool) {
        self.checked = checked;
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the most recent backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        let id = self.nodes.len();
        // leaves are not checked; the first op that consumes a
        // non-finite leaf reports it under its own name
        let leaf = matches!(op, Op::Input | Op::Param | Op::Constant);
        if self.checked && !leaf && !value.is_finite() {
            return Err(Error::NonFinite {
                op: op.name(),
                node: id,
            });
        }
        let requires_grad = match op {
            Op::Input | Op::Param => true,
            Op::Constant => false,
            _ => op.parents().iter().any(|&p| self.nodes[p].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(id))
    }

    /// Differentiable leaf not bound to a parameter.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input).expect("leaves are never rejected")
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant).expect("leaves are never rejected")
    }

    /// Leaf bound to parameter `id`; repeated calls on one tape return the
    /// same node.
    pub fn param(&mut self, params: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self
            .push(params.value(id).clone(), Op::Param)
            .expect("leaves are never rejected");
        self.bound.insert(id, v);
        v
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v)
            .dims2()
            .ok_or_else(|| Error::shape(op, self.shape(v), &[0, 0]))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        tensor::gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a.0, b.0))
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(a, b, name)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "add", |x, y| x + y)?;
        self.push(t, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "sub", |x, y| x - y)?;
        self.push(t, Op::Sub(a.0, b.0))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "mul", |x, y| x * y)?;
        self.push(t, Op::Mul(a.0, b.0))
    }

    /// Adds a row vector (`[1×n]` or `[n]`) to every row of `a: [m×n]`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "add_row")?;
        if self.value(row).numel() != n {
            return Err(Error::shape("add_row", self.shape(a), self.shape(row)));
        }
        let r = self.value(row).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += r[j];
            }
        }
        self.push(Tensor::new(vec![m, n], data)?, Op::AddRow(a.0, row.0))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let t = self.value(a).map(|x| x * factor);
        self.push(t, Op::Scale(a.0, factor))
    }

    /// Elementwise product with a non-differentiable tensor (dropout masks).
    pub fn mul_const(&mut self, a: Var, mask: Tensor) -> Result<Var> {
        if mask.shape() != self.shape(a) {
            return Err(Error::shape("mul_const", self.shape(a), mask.shape()));
        }
        let data = self.value(a).data().iter().zip(mask.data()).map(|(x, m)| x * m).collect();
        let t = Tensor::new(mask.shape().to_vec(), data)?;
        self.push(t, Op::MulConst(a.0, mask))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(|x| x.max(0.0));
        self.push(t, Op::Relu(a.0))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.dims2(a, "transpose")?;
        let t = self.value(a).transpose();
        self.push(t, Op::Transpose(a.0))
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape.to_vec())?;
        self.push(t, Op::Reshape(a.0))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Invalid("concat of zero tensors".into()))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", &base, &[axis]));
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().enumerate().all(|(d, &v)| d == axis || v == base[d]);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            axis_total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = axis_total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let t = Tensor::new(shape, data)?;
        self.push(
            t,
            Op::Concat {
                parts: parts.iter().map(|v| v.0).collect(),
                axis,
            },
        )
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape("narrow", &shape, &[axis, start, len]));
        }
        let (outer, alen, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * alen * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let t = Tensor::new(out_shape, data)?;
        self.push(
            t,
            Op::Narrow {
                src: a.0,
                axis,
                start,
            },
        )
    }

    /// Row `i` of a matrix, as a `[1×n]` matrix.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        self.narrow(a, 0, i, 1)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s = v.sum() / v.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a.0))
    }

    /// Reduces `axis` to length one by averaging.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("mean_axis", &shape, &[axis]));
        }
        let (outer, alen, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..alen {
                for i in 0..inner {
                    data[o * inner + i] += src[(o * alen + k) * inner + i];
                }
            }
        }
        data.iter_mut().for_each(|x| *x /= alen as f64);
        let mut out_shape = shape;
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let t = Tensor::new(out_shape, data)?;
        self.push(t, Op::MeanAxis { src: a.0, axis })
    }

    /// Maximum over `axis`, removing it. Subgradient goes to the first
    /// maximal index.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("max_axis", &shape, &[axis]));
        }
        let (outer, alen, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = vec![f64::NEG_INFINITY; outer * inner];
        let mut winners = vec![0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                for k in 0..alen {
                    let idx = (o * alen + k) * inner + i;
                    if src[idx] > data[o * inner + i] {
                        data[o * inner + i] = src[idx];
                        winners[o * inner + i] = idx;
                    }
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let t = Tensor::new(out_shape, data)?;
        self.push(
            t,
            Op::MaxAxis { src: a.0, winners },
        )
    }

    /// Row-wise softmax of a matrix, stabilized by max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "softmax_rows")?;
        let t = softmax_rows_value(self.value(a), m, n);
        self.push(t, Op::SoftmaxRows(a.0))
    }

    /// Selects rows of `a` by index. Gradient rows for `frozen_row` are
    /// dropped (used for the padding embedding).
    pub fn gather_rows(&mut self, a: Var, ids: &[usize], frozen_row: Option<usize>) -> Result<Var> {
        let (m, n) = self.dims2(a, "gather_rows")?;
        if ids.is_empty() {
            return Err(Error::Invalid("gather_rows with no indices".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= m) {
            return Err(Error::shape("gather_rows", &[m, n], &[bad]));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(ids.len() * n);
        for &i in ids {
            data.extend_from_slice(src.row(i));
        }
        let t = Tensor::new(vec![ids.len(), n], data)?;
        self.push(
            t,
            Op::GatherRows {
                src: a.0,
                ids: ids.to_vec(),
                frozen_row,
            },
        )
    }

    /// `out[i, l] = Σ_k a[i, l·d + k] · b[i, k]` for `a: [n × L·d]`, `b: [n × d]`.
    pub fn block_row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ld) = self.dims2(a, "block_row_dot")?;
        let (n2, d) = self.dims2(b, "block_row_dot")?;
        if n != n2 || ld % d != 0 {
            return Err(Error::shape("block_row_dot", self.shape(a), self.shape(b)));
        }
        let l = ld / d;
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let mut data = vec![0.0; n * l];
        for i in 0..n {
            for lab in 0..l {
                let mut s = 0.0;
                for k in 0..d {
                    s += va[i * ld + lab * d + k] * vb[i * d + k];
                }
                data[i * l + lab] = s;
            }
        }
        self.push(Tensor::new(vec![n, l], data)?, Op::BlockRowDot(a.0, b.0))
    }

    /// Mean over unmasked rows of `−log softmax(logits)[gold]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, gold: &[usize], mask: &[bool]) -> Result<Var> {
        let (n, k) = self.dims2(logits, "softmax_cross_entropy")?;
        if gold.len() != n || mask.len() != n {
            return Err(Error::shape(
                "softmax_cross_entropy",
                &[n, k],
                &[gold.len(), mask.len()],
            ));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::Invalid("softmax_cross_entropy: all positions masked".into()));
        }
        for (i, (&g, &m)) in gold.iter().zip(mask).enumerate() {
            if m && g >= k {
                return Err(Error::Invalid(format!(
                    "softmax_cross_entropy: gold index {g} out of range for {k} classes at row {i}"
                )));
            }
        }
        let v = self.value(logits);
        let probs = softmax_rows_value(v, n, k);
        let mut loss = 0.0;
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            let row = v.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[gold[i]];
        }
        loss /= count as f64;
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits: logits.0,
                probs,
                gold: gold.to_vec(),
                mask: mask.to_vec(),
                count,
            },
        )
    }

    /// Propagates adjoints from the scalar `loss` and adds parameter
    /// gradients into `params`. Node gradients from the previous call are
    /// discarded; parameter gradients accumulate until
    /// [`ParamStore::zero_grad`].
    pub fn backward(&mut self, loss: Var, params: &mut ParamStore) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if self.nodes[id].requires_grad {
                self.propagate(id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        for (&pid, &v) in &self.bound {
            if let Some(g) = &grads[v.0] {
                params.accumulate_grad(pid, g);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let mut acc = |p: usize, delta: Tensor| {
            if !self.nodes[p].requires_grad {
                return;
            }
            match &mut grads[p] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let val = |p: usize| &self.nodes[p].value;
        match &node.op {
            Op::Input | Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2().unwrap();
                let n = val(*b).shape()[1];
                if self.nodes[*a].requires_grad {
                    let mut da = vec![0.0; m * k];
                    tensor::gemm_abt_acc(g.data(), val(*b).data(), &mut da, m, n, k);
                    acc(*a, Tensor::new(vec![m, k], da).unwrap());
                }
                if self.nodes[*b].requires_grad {
                    let mut db = vec![0.0; k * n];
                    tensor::gemm_atb_acc(val(*a).data(), g.data(), &mut db, m, k, n);
                    acc(*b, Tensor::new(vec![k, n], db).unwrap());
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, zip(g, val(*b), |x, y| x * y));
                acc(*b, zip(g, val(*a), |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                let (m, n) = g.dims2().unwrap();
                let mut dr = vec![0.0; n];
                for grow in g.data().chunks_exact(n).take(m) {
                    for (d, x) in dr.iter_mut().zip(grow) {
                        *d += x;
                    }
                }
                acc(*row, Tensor::new(val(*row).shape().to_vec(), dr).unwrap());
            }
            Op::Scale(a, f) => acc(*a, g.map(|x| x * f)),
            Op::MulConst(a, mask) => acc(*a, zip(g, mask, |x, m| x * m)),
            Op::Sigmoid(a) => {
                let s = &node.value;
                let d = match self.fault {
                    Some(Fault::SigmoidGrad) => zip(g, s, |x, y| x * y),
                    None => zip(g, s, |x, y| x * y * (1.0 - y)),
                };
                acc(*a, d);
            }
            Op::Tanh(a) => acc(*a, zip(g, &node.value, |x, y| x * (1.0 - y * y))),
            Op::Relu(a) => acc(*a, zip(g, val(*a), |x, y| if y > 0.0 { x } else { 0.0 })),
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Reshape(a) => acc(*a, g.clone().reshape(val(*a).shape().to_vec()).unwrap()),
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(g.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let shape = val(p).shape().to_vec();
                    let len = shape[*axis];
                    let mut d = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        d.extend_from_slice(&g.data()[base..base + len * inner]);
                    }
                    acc(p, Tensor::new(shape, d).unwrap());
                    offset += len;
                }
            }
            Op::Narrow { src, axis, start } => {
                let shape = val(*src).shape().to_vec();
                let (outer, alen, inner) = split_axis(&shape, *axis);
                let len = g.shape()[*axis];
                let mut d = vec![0.0; shape.iter().product()];
                for o in 0..outer {
                    let base = o * alen * inner + start * inner;
                    d[base..base + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                acc(*src, Tensor::new(shape, d).unwrap());
            }
            Op::Sum(a) => acc(*a, Tensor::full(val(*a).shape(), g.item())),
            Op::Mean(a) => {
                let n = val(*a).numel() as f64;
                acc(*a, Tensor::full(val(*a).shape(), g.item() / n));
            }
            Op::MeanAxis { src, axis } => {
                let shape = val(*src).shape().to_vec();
                let (outer, alen, inner) = split_axis(&shape, *axis);
                let mut d = vec![0.0; shape.iter().product()];
                for o in 0..outer {
                    for k in 0..alen {
                        for i in 0..inner {
                            d[(o * alen + k) * inner + i] = g.data()[o * inner + i] / alen as f64;
                        }
                    }
                }
                acc(*src, Tensor::new(shape, d).unwrap());
            }
            Op::MaxAxis { src, winners, .. } => {
                let shape = val(*src).shape().to_vec();
                let mut d = vec![0.0; shape.iter().product()];
                for (slot, &w) in winners.iter().enumerate() {
                    d[w] += g.data()[slot];
                }
                acc(*src, Tensor::new(shape, d).unwrap());
            }
            Op::SoftmaxRows(a) => {
                let s = &node.value;
                let (m, n) = s.dims2().unwrap();
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    let srow = s.row(i);
                    let grow = g.row(i);
                    let dot: f64 = srow.iter().zip(grow).map(|(x, y)| x * y).sum();
                    for j in 0..n {
                        d[i * n + j] = srow[j] * (grow[j] - dot);
                    }
                }
                acc(*a, Tensor::new(vec![m, n], d).unwrap());
            }
            Op::GatherRows {
                src,
                ids,
                frozen_row,
            } => {
                let shape = val(*src).shape().to_vec();
                let n = shape[1];
                let mut d = vec![0.0; shape[0] * n];
                for (r, &i) in ids.iter().enumerate() {
                    if Some(i) == *frozen_row {
                        continue;
                    }
                    for j in 0..n {
                        d[i * n + j] += g.data()[r * n + j];
                    }
                }
                acc(*src, Tensor::new(shape, d).unwrap());
            }
            Op::BlockRowDot(a, b) => {
                let (n, ld) = val(*a).dims2().unwrap();
                let d = val(*b).shape()[1];
                let l = ld / d;
                let va = val(*a).data();
                let vb = val(*b).data();
                let mut da = vec![0.0; n * ld];
                let mut db = vec![0.0; n * d];
                for i in 0..n {
                    for lab in 0..l {
                        let gv = g.data()[i * l + lab];
                        for k in 0..d {
                            da[i * ld + lab * d + k] += gv * vb[i * d + k];
                            db[i * d + k] += gv * va[i * ld + lab * d + k];
                        }
                    }
                }
                acc(*a, Tensor::new(vec![n, ld], da).unwrap());
                acc(*b, Tensor::new(vec![n, d], db).unwrap());
            }
            Op::SoftmaxXent {
                logits,
                probs,
                gold,
                mask,
                count,
            } => {
                let (n, k) = probs.dims2().unwrap();
                let scale = g.item() / *count as f64;
                let mut d = vec![0.0; n * k];
                for i in 0..n {
                    if !mask[i] {
                        continue;
                    }
                    for j in 0..k {
                        let onehot = if j == gold[i] { 1.0 } else { 0.0 };
                        d[i * k + j] = (probs.get2(i, j) - onehot) * scale;
                    }
                }
                acc(*logits, Tensor::new(vec![n, k], d).unwrap());
            }
        }
    }

    /// One line per node: `node_id op_name shape parent_ids`.
    pub fn dump_graph(&self) -> String {
        let mut out = String::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let shape = node
                .value
                .shape()
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            let parents = node
                .op
                .parents()
                .iter()
                .map(|p| p.to_string())
                .collect::<Vec<_>>()
                .join(",");
            let parents = if parents.is_empty() { "-".to_string() } else { parents };
            let _ = writeln!(out, "{i} {} {shape} {parents}", node.op.name());
        }
        out
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

pub(crate) fn softmax_rows_value(v: &Tensor, m: usize, n: usize) -> Tensor {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = v.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..n {
            let e = (row[j] - max).exp();
            out[i * n + j] = e;
            z += e;
        }
        for j in 0..n {
            out[i * n + j] /= z;
        }
    }
    Tensor::new(vec![m, n], out).unwrap()
}
