use std::cell::RefCell;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;

use super::array::{broadcast_shape, broadcast_strides, contiguous_strides, gemm, split_axis, walk2, Precision};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Pointwise nonlinearity selector for [`Var::activation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Exact form `x·Φ(x)` with the Gaussian CDF evaluated through `erf`.
    Gelu,
}

pub fn gelu(x: f64) -> f64 {
    x * 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

enum Op {
    Leaf {
        param: Option<ParamId>,
    },
    MatMul {
        a: usize,
        b: usize,
    },
    BatchMatMul {
        a: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        a: usize,
        factor: f64,
    },
    Relu {
        a: usize,
    },
    Gelu {
        a: usize,
    },
    Softmax {
        a: usize,
        axis: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        axis: usize,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Mean {
        a: usize,
        keep_shape: Vec<usize>,
        count: usize,
    },
    Sum {
        a: usize,
    },
    Reshape {
        a: usize,
    },
    Permute {
        a: usize,
        perm: Vec<usize>,
    },
    Dropout {
        a: usize,
        mask: Vec<f64>,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed differentiable operations.
///
/// Nodes are appended as operations run, so the node order is already a
/// topological order; backward walks it in reverse exactly once.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    precision: Precision,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// A handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
    visited: usize,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Number of tape nodes the sweep propagated through.
    pub fn visited(&self) -> usize {
        self.visited
    }

    /// Adds each parameter leaf's gradient into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(pid, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                let param = store.get_mut(pid);
                param.has_grad = true;
                let dst = param.grad.data_mut();
                for (d, s) in dst.iter_mut().zip(g.data()) {
                    *d += s;
                }
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_precision(Precision::F64)
    }

    pub fn with_precision(precision: Precision) -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            precision,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a value that does not take part in differentiation.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, false, None)
    }

    /// Records a free differentiable input (not owned by a parameter store).
    pub fn variable(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, true, None)
    }

    /// Records the current value of a stored parameter.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        self.push_leaf(store.get(id).value.clone(), true, Some(id))
    }

    fn push_leaf(&self, value: Tensor, requires_grad: bool, param: Option<ParamId>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf { param },
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse-mode sweep from a scalar `loss` recorded on this tape.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Autodiff("loss was recorded on a different tape".into()));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Autodiff(format!(
                "loss must be a scalar, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Err(Error::Autodiff(
                "loss is detached: no differentiable input reaches it".into(),
            ));
        }

        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);
        let mut visited = 0;
        let mut params = Vec::new();
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            visited += 1;
            let node = &nodes[id];
            backprop(self.precision, &nodes, node, &g, &mut grads);
            if let Op::Leaf { param: Some(pid) } = node.op {
                params.push((pid, id));
            }
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, n)| g.map(|g| Tensor::new(n.value.shape(), g).expect("gradient shape")))
            .collect();
        Ok(Gradients { grads, params, visited })
    }
}

fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], id: usize) -> Option<&'g mut Vec<f64>> {
    if !nodes[id].requires_grad {
        return None;
    }
    Some(grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()]))
}

fn backprop(precision: Precision, nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out_shape = node.value.shape();
    match &node.op {
        Op::Leaf { .. } => {}
        Op::MatMul { a, b } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (k, n) = (bv.shape()[0], bv.shape()[1]);
            let m = av.len() / k;
            if let Some(ga) = slot(grads, nodes, *a) {
                gemm(precision, m, n, k, g, (n, 1), bv.data(), (1, n), ga, 1.0);
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                gemm(precision, k, m, n, av.data(), (1, k), g, (n, 1), gb, 1.0);
            }
        }
        Op::BatchMatMul { a, b } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (batch, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
            let n = bv.shape()[2];
            if let Some(ga) = slot(grads, nodes, *a) {
                for i in 0..batch {
                    gemm(
                        precision,
                        m,
                        n,
                        k,
                        &g[i * m * n..(i + 1) * m * n],
                        (n, 1),
                        &bv.data()[i * k * n..(i + 1) * k * n],
                        (1, n),
                        &mut ga[i * m * k..(i + 1) * m * k],
                        1.0,
                    );
                }
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                for i in 0..batch {
                    gemm(
                        precision,
                        k,
                        m,
                        n,
                        &av.data()[i * m * k..(i + 1) * m * k],
                        (1, k),
                        &g[i * m * n..(i + 1) * m * n],
                        (n, 1),
                        &mut gb[i * k * n..(i + 1) * k * n],
                        1.0,
                    );
                }
            }
        }
        Op::Add { a, b } | Op::Sub { a, b } => {
            let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
            for (id, s) in [(*a, 1.0), (*b, sign)] {
                let shape = nodes[id].value.shape().to_vec();
                if let Some(gx) = slot(grads, nodes, id) {
                    if shape == out_shape {
                        for (d, v) in gx.iter_mut().zip(g) {
                            *d += s * v;
                        }
                    } else {
                        let st = broadcast_strides(&shape, out_shape);
                        let zero = vec![0; out_shape.len()];
                        walk2(out_shape, &st, &zero, |o, i, _| gx[i] += s * g[o]);
                    }
                }
            }
        }
        Op::Mul { a, b } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let sa = broadcast_strides(av.shape(), out_shape);
            let sb = broadcast_strides(bv.shape(), out_shape);
            if let Some(ga) = slot(grads, nodes, *a) {
                let bd = bv.data();
                walk2(out_shape, &sa, &sb, |o, i, j| ga[i] += g[o] * bd[j]);
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                let ad = av.data();
                walk2(out_shape, &sa, &sb, |o, i, j| gb[j] += g[o] * ad[i]);
            }
        }
        Op::Scale { a, factor } => {
            if let Some(ga) = slot(grads, nodes, *a) {
                for (d, v) in ga.iter_mut().zip(g) {
                    *d += factor * v;
                }
            }
        }
        Op::Relu { a } => {
            let x = nodes[*a].value.data();
            if let Some(ga) = slot(grads, nodes, *a) {
                for ((d, v), &xi) in ga.iter_mut().zip(g).zip(x) {
                    if xi > 0.0 {
                        *d += v;
                    }
                }
            }
        }
        Op::Gelu { a } => {
            let x = nodes[*a].value.data();
            if let Some(ga) = slot(grads, nodes, *a) {
                for ((d, v), &xi) in ga.iter_mut().zip(g).zip(x) {
                    *d += v * gelu_derivative(xi);
                }
            }
        }
        Op::Softmax { a, axis } => {
            let y = node.value.data();
            let (outer, len, inner) = split_axis(out_shape, *axis);
            if let Some(ga) = slot(grads, nodes, *a) {
                for o in 0..outer {
                    for r in 0..inner {
                        let base = o * len * inner + r;
                        let dot: f64 = (0..len).map(|i| g[base + i * inner] * y[base + i * inner]).sum();
                        for i in 0..len {
                            let p = base + i * inner;
                            ga[p] += y[p] * (g[p] - dot);
                        }
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            axis,
            normalized,
            inv_std,
        } => {
            let (outer, len, inner) = split_axis(out_shape, *axis);
            let gamma = nodes[*gain].value.data().to_vec();
            if let Some(gg) = slot(grads, nodes, *gain) {
                for (p, (&gv, &xh)) in g.iter().zip(normalized).enumerate() {
                    gg[(p / inner) % len] += gv * xh;
                }
            }
            if let Some(gb) = slot(grads, nodes, *bias) {
                for (p, &gv) in g.iter().enumerate() {
                    gb[(p / inner) % len] += gv;
                }
            }
            if let Some(gx) = slot(grads, nodes, *x) {
                let nf = len as f64;
                for o in 0..outer {
                    for r in 0..inner {
                        let base = o * len * inner + r;
                        let s = o * inner + r;
                        let (mut sum_d, mut sum_dx) = (0.0, 0.0);
                        for i in 0..len {
                            let p = base + i * inner;
                            let d = g[p] * gamma[i];
                            sum_d += d;
                            sum_dx += d * normalized[p];
                        }
                        for i in 0..len {
                            let p = base + i * inner;
                            let d = g[p] * gamma[i];
                            gx[p] += inv_std[s] / nf * (nf * d - sum_d - normalized[p] * sum_dx);
                        }
                    }
                }
            }
        }
        Op::Mean { a, keep_shape, count } => {
            let in_shape = nodes[*a].value.shape().to_vec();
            if let Some(ga) = slot(grads, nodes, *a) {
                let sa = contiguous_strides(&in_shape);
                let sk = broadcast_strides(keep_shape, &in_shape);
                let scale = 1.0 / *count as f64;
                walk2(&in_shape, &sa, &sk, |_, i, k| ga[i] += g[k] * scale);
            }
        }
        Op::Sum { a } => {
            if let Some(ga) = slot(grads, nodes, *a) {
                for d in ga.iter_mut() {
                    *d += g[0];
                }
            }
        }
        Op::Reshape { a } => {
            if let Some(ga) = slot(grads, nodes, *a) {
                for (d, v) in ga.iter_mut().zip(g) {
                    *d += v;
                }
            }
        }
        Op::Permute { a, perm } => {
            let in_strides = contiguous_strides(nodes[*a].value.shape());
            if let Some(ga) = slot(grads, nodes, *a) {
                let sp: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
                let zero = vec![0; out_shape.len()];
                walk2(out_shape, &sp, &zero, |o, i, _| ga[i] += g[o]);
            }
        }
        Op::Dropout { a, mask } => {
            if let Some(ga) = slot(grads, nodes, *a) {
                for ((d, v), m) in ga.iter_mut().zip(g).zip(mask) {
                    *d += v * m;
                }
            }
        }
        Op::CrossEntropy { logits, targets, probs } => {
            let k = nodes[*logits].value.shape()[1];
            let scale = g[0] / targets.len() as f64;
            if let Some(gl) = slot(grads, nodes, *logits) {
                for (row, &t) in targets.iter().enumerate() {
                    for c in 0..k {
                        let onehot = if c == t { 1.0 } else { 0.0 };
                        gl[row * k + c] += scale * (probs[row * k + c] - onehot);
                    }
                }
            }
        }
    }
}

fn check_axis(shape: &[usize], axis: usize, op: &str) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::Dimension(format!(
            "{op}: axis {axis} out of range for shape {shape:?}"
        )));
    }
    Ok(())
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    fn same_tape(&self, other: &Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Autodiff("operands live on different tapes".into()))
        }
    }

    fn rg2(&self, other: &Var<'t>) -> bool {
        self.requires_grad() || other.requires_grad()
    }

    /// `[.., m, k] · [k, n] → [.., m, n]`; leading axes of the left operand
    /// are treated as extra rows.
    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&rhs)?;
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
            let (sa, sb) = (a.shape(), b.shape());
            if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
                return Err(Error::Dimension(format!(
                    "matmul of {sa:?} by {sb:?}: inner dimensions do not match"
                )));
            }
            let (k, n) = (sb[0], sb[1]);
            let m = a.len() / k.max(1);
            let mut c = vec![0.0; m * n];
            gemm(
                self.tape.precision,
                m,
                k,
                n,
                a.data(),
                (k, 1),
                b.data(),
                (n, 1),
                &mut c,
                0.0,
            );
            let mut shape = sa.to_vec();
            *shape.last_mut().unwrap() = n;
            Tensor::new(&shape, c)?
        };
        self.tape
            .push(out, Op::MatMul { a: self.id, b: rhs.id }, self.rg2(&rhs), "matmul")
    }

    /// Batched product `[B, m, k] · [B, k, n] → [B, m, n]`.
    pub fn bmm(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&rhs)?;
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
            let (sa, sb) = (a.shape(), b.shape());
            if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
                return Err(Error::Dimension(format!(
                    "batched matmul of {sa:?} by {sb:?}: shapes incompatible"
                )));
            }
            let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
            let mut c = vec![0.0; batch * m * n];
            for i in 0..batch {
                gemm(
                    self.tape.precision,
                    m,
                    k,
                    n,
                    &a.data()[i * m * k..(i + 1) * m * k],
                    (k, 1),
                    &b.data()[i * k * n..(i + 1) * k * n],
                    (n, 1),
                    &mut c[i * m * n..(i + 1) * m * n],
                    0.0,
                );
            }
            Tensor::new(&[batch, m, n], c)?
        };
        self.tape
            .push(out, Op::BatchMatMul { a: self.id, b: rhs.id }, self.rg2(&rhs), "bmm")
    }

    fn broadcast_binary(&self, rhs: &Var<'t>, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_tape(rhs)?;
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
        if a.shape() == b.shape() {
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            return Tensor::new(a.shape(), data);
        }
        let shape = broadcast_shape(a.shape(), b.shape())?;
        let sa = broadcast_strides(a.shape(), &shape);
        let sb = broadcast_strides(b.shape(), &shape);
        let mut data = vec![0.0; shape.iter().product()];
        let (ad, bd) = (a.data(), b.data());
        walk2(&shape, &sa, &sb, |o, i, j| data[o] = f(ad[i], bd[j]));
        Tensor::new(&shape, data)
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let out = self.broadcast_binary(&rhs, |x, y| x + y)?;
        self.tape
            .push(out, Op::Add { a: self.id, b: rhs.id }, self.rg2(&rhs), "add")
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let out = self.broadcast_binary(&rhs, |x, y| x - y)?;
        self.tape
            .push(out, Op::Sub { a: self.id, b: rhs.id }, self.rg2(&rhs), "sub")
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let out = self.broadcast_binary(&rhs, |x, y| x * y)?;
        self.tape
            .push(out, Op::Mul { a: self.id, b: rhs.id }, self.rg2(&rhs), "mul")
    }

    pub fn scale(self, factor: f64) -> Result<Var<'t>> {
        let out = self.with_value(|v| v.map(|x| x * factor));
        self.tape
            .push(out, Op::Scale { a: self.id, factor }, self.requires_grad(), "scale")
    }

    pub fn activation(self, kind: Activation) -> Result<Var<'t>> {
        match kind {
            Activation::Relu => {
                let out = self.with_value(|v| v.map(|x| x.max(0.0)));
                self.tape
                    .push(out, Op::Relu { a: self.id }, self.requires_grad(), "relu")
            }
            Activation::Gelu => {
                let out = self.with_value(|v| v.map(gelu));
                self.tape
                    .push(out, Op::Gelu { a: self.id }, self.requires_grad(), "gelu")
            }
        }
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.activation(Activation::Relu)
    }

    pub fn gelu(self) -> Result<Var<'t>> {
        self.activation(Activation::Gelu)
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let out = self.with_value(|v| -> Result<Tensor> {
            check_axis(v.shape(), axis, "softmax")?;
            let (outer, len, inner) = split_axis(v.shape(), axis);
            let x = v.data();
            let mut y = vec![0.0; x.len()];
            for o in 0..outer {
                for r in 0..inner {
                    let base = o * len * inner + r;
                    let max = (0..len).map(|i| x[base + i * inner]).fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for i in 0..len {
                        let e = (x[base + i * inner] - max).exp();
                        y[base + i * inner] = e;
                        total += e;
                    }
                    for i in 0..len {
                        y[base + i * inner] /= total;
                    }
                }
            }
            Tensor::new(v.shape(), y)
        })?;
        self.tape
            .push(out, Op::Softmax { a: self.id, axis }, self.requires_grad(), "softmax")
    }

    /// Normalizes every slice along `axis` to zero mean and unit (biased)
    /// variance, then applies `gain` and `bias` of shape `[len(axis)]`.
    pub fn layer_norm(self, axis: usize, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Result<Var<'t>> {
        self.same_tape(&gain)?;
        self.same_tape(&bias)?;
        let (out, normalized, inv_std) = {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.id].value;
            check_axis(v.shape(), axis, "layer_norm")?;
            let (outer, len, inner) = split_axis(v.shape(), axis);
            let (gm, bt) = (&nodes[gain.id].value, &nodes[bias.id].value);
            if gm.shape() != [len] || bt.shape() != [len] {
                return Err(Error::Dimension(format!(
                    "layer_norm over axis of length {len}: gain {:?}, bias {:?}",
                    gm.shape(),
                    bt.shape()
                )));
            }
            let x = v.data();
            let mut normalized = vec![0.0; x.len()];
            let mut y = vec![0.0; x.len()];
            let mut inv_std = vec![0.0; outer * inner];
            for o in 0..outer {
                for r in 0..inner {
                    let base = o * len * inner + r;
                    let mean = (0..len).map(|i| x[base + i * inner]).sum::<f64>() / len as f64;
                    let var = (0..len).map(|i| (x[base + i * inner] - mean).powi(2)).sum::<f64>() / len as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    inv_std[o * inner + r] = inv;
                    for i in 0..len {
                        let p = base + i * inner;
                        normalized[p] = (x[p] - mean) * inv;
                        y[p] = normalized[p] * gm.data()[i] + bt.data()[i];
                    }
                }
            }
            (Tensor::new(v.shape(), y)?, normalized, inv_std)
        };
        let rg = self.requires_grad() || gain.requires_grad() || bias.requires_grad();
        self.tape.push(
            out,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                axis,
                normalized,
                inv_std,
            },
            rg,
            "layer_norm",
        )
    }

    /// Arithmetic mean over `axes`, which are removed from the output shape.
    pub fn mean(self, axes: &[usize]) -> Result<Var<'t>> {
        let (out, keep_shape, count) = self.with_value(|v| -> Result<_> {
            let shape = v.shape();
            if axes.is_empty() {
                return Err(Error::Dimension("mean over an empty axis list".into()));
            }
            let mut keep = shape.to_vec();
            for (i, &ax) in axes.iter().enumerate() {
                check_axis(shape, ax, "mean")?;
                if axes[..i].contains(&ax) {
                    return Err(Error::Dimension(format!("mean: axis {ax} listed twice")));
                }
                if shape[ax] == 0 {
                    return Err(Error::Dimension(format!("mean over empty axis {ax}")));
                }
                keep[ax] = 1;
            }
            let count: usize = axes.iter().map(|&a| shape[a]).product();
            let mut acc = vec![0.0; keep.iter().product()];
            let sa = contiguous_strides(shape);
            let sk = broadcast_strides(&keep, shape);
            let x = v.data();
            walk2(shape, &sa, &sk, |_, i, k| acc[k] += x[i]);
            let scale = 1.0 / count as f64;
            acc.iter_mut().for_each(|s| *s *= scale);
            let out_shape: Vec<usize> = shape
                .iter()
                .enumerate()
                .filter(|(d, _)| !axes.contains(d))
                .map(|(_, &n)| n)
                .collect();
            Ok((Tensor::new(&out_shape, acc)?, keep, count))
        })?;
        self.tape.push(
            out,
            Op::Mean {
                a: self.id,
                keep_shape,
                count,
            },
            self.requires_grad(),
            "mean",
        )
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum(self) -> Result<Var<'t>> {
        let out = self.with_value(|v| Tensor::scalar(v.data().iter().sum()));
        self.tape.push(out, Op::Sum { a: self.id }, self.requires_grad(), "sum")
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let out = self.value().reshaped(shape)?;
        self.tape
            .push(out, Op::Reshape { a: self.id }, self.requires_grad(), "reshape")
    }

    /// Reorders axes so that output axis `d` is input axis `perm[d]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'t>> {
        let out = self.with_value(|v| -> Result<Tensor> {
            let shape = v.shape();
            let mut seen = vec![false; shape.len()];
            if perm.len() != shape.len()
                || perm
                    .iter()
                    .any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
            {
                return Err(Error::Dimension(format!(
                    "permutation {perm:?} invalid for shape {shape:?}"
                )));
            }
            let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
            let in_strides = contiguous_strides(shape);
            let sp: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
            let zero = vec![0; shape.len()];
            let x = v.data();
            let mut y = vec![0.0; x.len()];
            walk2(&out_shape, &sp, &zero, |o, i, _| y[o] = x[i]);
            Tensor::new(&out_shape, y)
        })?;
        self.tape.push(
            out,
            Op::Permute {
                a: self.id,
                perm: perm.to_vec(),
            },
            self.requires_grad(),
            "permute",
        )
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1−p)`; otherwise
    /// identity.
    pub fn dropout(self, p: f64, training: bool, rng: &mut impl Rng) -> Result<Var<'t>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(self);
        }
        let keep = 1.0 / (1.0 - p);
        let (out, mask) = self.with_value(|v| {
            let mask: Vec<f64> = (0..v.len())
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect();
            let data = v.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
            (Tensor::new(v.shape(), data), mask)
        });
        self.tape
            .push(out?, Op::Dropout { a: self.id, mask }, self.requires_grad(), "dropout")
    }

    /// Mean over rows of `−log softmax(logits)[target]`, logits shaped
    /// `[batch, classes]`.
    pub fn cross_entropy(self, targets: &[usize]) -> Result<Var<'t>> {
        let (out, probs) = self.with_value(|v| -> Result<_> {
            let shape = v.shape();
            if shape.len() != 2 || shape[0] != targets.len() || shape[0] == 0 {
                return Err(Error::Dimension(format!(
                    "cross entropy needs [batch, classes] logits matching {} targets, got {shape:?}",
                    targets.len()
                )));
            }
            let k = shape[1];
            let x = v.data();
            let mut probs = vec![0.0; x.len()];
            let mut total = 0.0;
            for (row, &t) in targets.iter().enumerate() {
                if t >= k {
                    return Err(Error::Data(format!("target {t} out of range for {k} classes")));
                }
                let r = &x[row * k..(row + 1) * k];
                let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + r.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
                total += lse - r[t];
                for c in 0..k {
                    probs[row * k + c] = (r[c] - lse).exp();
                }
            }
            Ok((Tensor::scalar(total / targets.len() as f64), probs))
        })?;
        self.tape.push(
            out,
            Op::CrossEntropy {
                logits: self.id,
                targets: targets.to_vec(),
                probs,
            },
            self.requires_grad(),
            "cross_entropy",
        )
    }

    /// Runs backward from this scalar and accumulates parameter gradients
    /// into `store`.
    pub fn backward(self, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.tape.backward(self)?;
        grads.accumulate_into(store);
        Ok(grads)
    }
}
