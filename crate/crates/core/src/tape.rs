//! Reverse-mode differentiation over [`Tensor4`] values.
//!
//! A [`Tape`] records every operation in execution order. Calling
//! [`Tape::backward`] on a scalar node walks the record in reverse and returns
//! the gradient of that scalar with respect to every node it depends on.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::ops::{self, conv, pool, resample};
use crate::params::{ModelParams, ParamId};
use crate::tensor::{Shape, Tensor4};

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One `|target - sum(weights * x[item])|` term of an L1 count objective.
#[derive(Clone, Debug)]
pub struct CountTerm {
    pub item: usize,
    pub weights: Vec<f64>,
    pub target: f64,
}

enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: conv::ConvGeom,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<u32>,
    },
    AdaptiveAvgPool(Var),
    Upsample(Var),
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulBroadcast(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    SumAll(Var),
    GlobalAvg(Var),
    GlobalMax {
        x: Var,
        argmax: Vec<u32>,
    },
    ChannelMean(Var),
    ChannelMax {
        x: Var,
        argmax: Vec<u32>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    CountL1 {
        x: Var,
        terms: Vec<CountTerm>,
    },
    SquaredError {
        x: Var,
        target: Tensor4,
    },
}

struct Node {
    value: Tensor4,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
    bindings: Vec<(ParamId, Var)>,
}

fn same_shape(op: &'static str, a: &Tensor4, b: &Tensor4) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

fn zip_map(a: &Tensor4, b: &Tensor4, f: impl Fn(f64, f64) -> f64) -> Tensor4 {
    Tensor4::from_parts(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Index into a broadcast operand `b` for flat position `i` of `a`.
fn broadcast_index(a: Shape, b: Shape, i: usize) -> usize {
    let w = i % a.w;
    let h = (i / a.w) % a.h;
    let c = (i / a.plane()) % a.c;
    let n = i / a.item();
    let pick = |full: usize, dim: usize| if dim == 1 { 0 } else { full };
    ((pick(n, b.n) * b.c + pick(c, b.c)) * b.h + pick(h, b.h)) * b.w + pick(w, b.w)
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

    pub fn value(&self, v: Var) -> &Tensor4 {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor4, op: Op) -> Var {
        debug_assert!(
            value.is_finite() || !self.inputs_finite(&op),
            "non-finite output from finite inputs"
        );
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn inputs_finite(&self, op: &Op) -> bool {
        let vars: Vec<Var> = match op {
            Op::Leaf => return false,
            Op::Conv2d { x, w, b, .. } | Op::Linear { x, w, b } => vec![*x, *w, *b],
            Op::MaxPool2 { x, .. }
            | Op::GlobalMax { x, .. }
            | Op::ChannelMax { x, .. }
            | Op::CountL1 { x, .. }
            | Op::SquaredError { x, .. } => vec![*x],
            Op::AdaptiveAvgPool(x)
            | Op::Upsample(x)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Scale(x, _)
            | Op::SumAll(x)
            | Op::GlobalAvg(x)
            | Op::ChannelMean(x) => vec![*x],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MulBroadcast(a, b) => vec![*a, *b],
            Op::Concat(v) => v.clone(),
        };
        vars.iter().all(|v| self.value(*v).is_finite())
    }

    /// A differentiable input not tied to any parameter.
    pub fn leaf(&mut self, value: Tensor4) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A non-differentiable input. Gradients are still computed for it but
    /// nothing reads them.
    pub fn constant(&mut self, value: Tensor4) -> Var {
        self.leaf(value)
    }

    /// Binds a named parameter as a leaf. Repeated binds return the same node.
    pub fn param(&mut self, params: &ModelParams, name: &str) -> Result<Var> {
        let id = params.id(name)?;
        if let Some(&v) = self.bound.get(&id) {
            return Ok(v);
        }
        let v = self.leaf(params.by_id(id).value.clone());
        self.bound.insert(id, v);
        self.bindings.push((id, v));
        Ok(v)
    }

    /// Parameters bound on this tape, in binding order.
    pub fn bindings(&self) -> &[(ParamId, Var)] {
        &self.bindings
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = conv::ConvGeom::new(self.shape(x), self.shape(w), self.shape(b), stride, pad)?;
        let out = conv::forward(self.value(x), self.value(w), self.value(b), &geom);
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }))
    }

    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = pool::maxpool2(self.value(x))?;
        Ok(self.push(out, Op::MaxPool2 { x, argmax }))
    }

    pub fn adaptive_avgpool2d(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = pool::adaptive_avgpool(self.value(x), out_h, out_w)?;
        Ok(self.push(out, Op::AdaptiveAvgPool(x)))
    }

    pub fn bilinear_upsample(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = resample::upsample(self.value(x), out_h, out_w)?;
        Ok(self.push(out, Op::Upsample(x)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Elementwise product where every dimension of `b` is 1 or equal to `a`'s.
    pub fn mul_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = sa.dims().iter().zip(sb.dims()).all(|(&x, y)| y == 1 || y == x);
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "mul_broadcast",
                lhs: sa,
                rhs: sb,
            });
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let data = (0..sa.len()).map(|i| va[i] * vb[broadcast_index(sa, sb, i)]).collect();
        Ok(self.push(Tensor4::from_parts(sa, data), Op::MulBroadcast(a, b)))
    }

    /// Scales each `(item, channel)` plane by `s`, shaped `(n, c, 1, 1)` or `(1, c, 1, 1)`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let (sx, ss) = (self.shape(x), self.shape(s));
        if ss.c != sx.c || ss.h != 1 || ss.w != 1 || (ss.n != 1 && ss.n != sx.n) {
            return Err(Error::ShapeMismatch {
                op: "scale_channels",
                lhs: sx,
                rhs: ss,
            });
        }
        self.mul_broadcast(x, s)
    }

    /// Scales each pixel by `m`, shaped `(n, 1, h, w)`.
    pub fn scale_pixels(&mut self, x: Var, m: Var) -> Result<Var> {
        let (sx, sm) = (self.shape(x), self.shape(m));
        if sm != Shape::new(sx.n, 1, sx.h, sx.w) {
            return Err(Error::ShapeMismatch {
                op: "scale_pixels",
                lhs: sx,
                rhs: sm,
            });
        }
        self.mul_broadcast(x, m)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).map(|v| v * k);
        self.push(out, Op::Scale(x, k))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat_channels", "no inputs"))?;
        let s0 = self.shape(first);
        let mut c = 0;
        for &p in parts {
            let s = self.shape(p);
            if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    lhs: s0,
                    rhs: s,
                });
            }
            c += s.c;
        }
        let shape = Shape::new(s0.n, c, s0.h, s0.w);
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..s0.n {
            for &p in parts {
                data.extend_from_slice(self.value(p).item(n));
            }
        }
        Ok(self.push(Tensor4::from_parts(shape, data), Op::Concat(parts.to_vec())))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor4::scalar(s), Op::SumAll(x))
    }

    pub fn global_avg(&mut self, x: Var) -> Var {
        let out = pool::global_avg(self.value(x));
        self.push(out, Op::GlobalAvg(x))
    }

    pub fn global_max(&mut self, x: Var) -> Var {
        let (out, argmax) = pool::global_max(self.value(x));
        self.push(out, Op::GlobalMax { x, argmax })
    }

    pub fn channel_mean(&mut self, x: Var) -> Var {
        let out = pool::channel_mean(self.value(x));
        self.push(out, Op::ChannelMean(x))
    }

    pub fn channel_max(&mut self, x: Var) -> Var {
        let (out, argmax) = pool::channel_max(self.value(x));
        self.push(out, Op::ChannelMax { x, argmax })
    }

    /// Affine map on `(n, d_in, 1, 1)` inputs with weight `(d_out, d_in, 1, 1)`
    /// and bias `(1, d_out, 1, 1)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.h != 1 || sx.w != 1 || sw.h != 1 || sw.w != 1 || sw.c != sx.c {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: sx,
                rhs: sw,
            });
        }
        if sb != Shape::new(1, sw.n, 1, 1) {
            return Err(Error::ShapeMismatch {
                op: "linear bias",
                lhs: sw,
                rhs: sb,
            });
        }
        let (n, d_in, d_out) = (sx.n, sx.c, sw.n);
        let mut out = Vec::with_capacity(n * d_out);
        for _ in 0..n {
            out.extend_from_slice(self.value(b).data());
        }
        // out (n x d_out) += x (n x d_in) * W^T (d_in x d_out)
        ops::gemm(
            n,
            d_in,
            d_out,
            self.value(x).data(),
            (d_in, 1),
            self.value(w).data(),
            (1, d_in),
            &mut out,
            1.0,
        );
        let shape = Shape::new(n, d_out, 1, 1);
        Ok(self.push(Tensor4::from_parts(shape, out), Op::Linear { x, w, b }))
    }

    /// `sum_k |target_k - <weights_k, x[item_k]>|` for a single-channel `x`.
    pub fn count_l1(&mut self, x: Var, terms: Vec<CountTerm>) -> Result<Var> {
        let s = self.shape(x);
        if s.c != 1 {
            return Err(Error::invalid("count_l1", format!("expected one channel, got {s}")));
        }
        for t in &terms {
            if t.item >= s.n || t.weights.len() != s.plane() {
                return Err(Error::invalid(
                    "count_l1",
                    format!("term for item {} has {} weights; map is {s}", t.item, t.weights.len()),
                ));
            }
        }
        let v = self.value(x);
        let total: f64 = terms
            .iter()
            .map(|t| {
                let e: f64 = t.weights.iter().zip(v.item(t.item)).map(|(w, m)| w * m).sum();
                (t.target - e).abs()
            })
            .sum();
        Ok(self.push(Tensor4::scalar(total), Op::CountL1 { x, terms }))
    }

    /// `sum((x - target)^2)`.
    pub fn squared_error(&mut self, x: Var, target: Tensor4) -> Result<Var> {
        same_shape("squared_error", self.value(x), &target)?;
        let total = self
            .value(x)
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(self.push(Tensor4::scalar(total), Op::SquaredError { x, target }))
    }

    /// Fingerprint of every piecewise choice made so far: relu masks, max
    /// indices and the sign of each L1 residual. Two evaluations with equal
    /// fingerprints lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (k, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Relu(x) => {
                    k.hash(&mut h);
                    for &v in self.value(*x).data() {
                        (v > 0.0).hash(&mut h);
                    }
                }
                Op::MaxPool2 { argmax, .. } | Op::GlobalMax { argmax, .. } | Op::ChannelMax { argmax, .. } => {
                    k.hash(&mut h);
                    argmax.hash(&mut h);
                }
                Op::CountL1 { x, terms } => {
                    k.hash(&mut h);
                    let v = self.value(*x);
                    for t in terms {
                        let e: f64 = t.weights.iter().zip(v.item(t.item)).map(|(w, m)| w * m).sum();
                        e.partial_cmp(&t.target).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != Shape::scalar() {
            return Err(Error::invalid(
                "backward",
                format!("loss must be a scalar, got {}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, contrib: Vec<f64>| match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(&contrib).for_each(|(e, c)| *e += c),
            slot @ None => *slot = Some(contrib),
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let cg = conv::backward(val(*x), val(*w), g, geom);
                acc(*x, cg.dx);
                acc(*w, cg.dw);
                acc(*b, cg.db);
            }
            Op::MaxPool2 { x, argmax } | Op::GlobalMax { x, argmax } | Op::ChannelMax { x, argmax } => {
                acc(*x, pool::scatter_argmax(val(*x).len(), argmax, g));
            }
            Op::AdaptiveAvgPool(x) => {
                let gt = Tensor4::from_parts(node.value.shape(), g.to_vec());
                acc(*x, pool::adaptive_avgpool_backward(val(*x).shape(), &gt));
            }
            Op::Upsample(x) => {
                let gt = Tensor4::from_parts(node.value.shape(), g.to_vec());
                acc(*x, resample::upsample_backward(val(*x).shape(), &gt));
            }
            Op::Relu(x) => {
                let d = val(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 });
                acc(*x, d.collect());
            }
            Op::Sigmoid(x) => {
                let d = node.value.data().iter().zip(g).map(|(&y, &gi)| gi * y * (1.0 - y));
                acc(*x, d.collect());
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                acc(*a, g.iter().zip(vb).map(|(gi, y)| gi * y).collect());
                acc(*b, g.iter().zip(va).map(|(gi, x)| gi * x).collect());
            }
            Op::MulBroadcast(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (va, vb) = (val(*a).data(), val(*b).data());
                let mut da = Vec::with_capacity(sa.len());
                let mut db = vec![0.0; sb.len()];
                for i in 0..sa.len() {
                    let j = broadcast_index(sa, sb, i);
                    da.push(g[i] * vb[j]);
                    db[j] += g[i] * va[i];
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::Scale(x, k) => acc(*x, g.iter().map(|v| v * k).collect()),
            Op::Concat(parts) => {
                let s = node.value.shape();
                let mut offset = 0;
                for &p in parts {
                    let ps = val(p).shape();
                    let mut d = Vec::with_capacity(ps.len());
                    for n in 0..s.n {
                        let start = n * s.item() + offset * s.plane();
                        d.extend_from_slice(&g[start..start + ps.item()]);
                    }
                    offset += ps.c;
                    acc(p, d);
                }
            }
            Op::SumAll(x) => acc(*x, vec![g[0]; val(*x).len()]),
            Op::GlobalAvg(x) => {
                let s = val(*x).shape();
                let p = s.plane();
                let d = (0..s.len()).map(|i| g[i / p] / p as f64).collect();
                acc(*x, d);
            }
            Op::ChannelMean(x) => {
                let s = val(*x).shape();
                let p = s.plane();
                let d = (0..s.len())
                    .map(|i| g[(i / s.item()) * p + i % p] / s.c as f64)
                    .collect();
                acc(*x, d);
            }
            Op::Linear { x, w, b } => {
                let (sx, sw) = (val(*x).shape(), val(*w).shape());
                let (n, d_in, d_out) = (sx.n, sx.c, sw.n);
                let mut dx = vec![0.0; n * d_in];
                // dx (n x d_in) = g (n x d_out) * W (d_out x d_in)
                ops::gemm(n, d_out, d_in, g, (d_out, 1), val(*w).data(), (d_in, 1), &mut dx, 0.0);
                let mut dw = vec![0.0; d_out * d_in];
                // dW (d_out x d_in) = g^T (d_out x n) * x (n x d_in)
                ops::gemm(d_out, n, d_in, g, (1, d_out), val(*x).data(), (d_in, 1), &mut dw, 0.0);
                let mut db = vec![0.0; d_out];
                for row in g.chunks(d_out) {
                    db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                }
                acc(*x, dx);
                acc(*w, dw);
                acc(*b, db);
            }
            Op::CountL1 { x, terms } => {
                let v = val(*x);
                let p = v.shape().plane();
                let mut d = vec![0.0; v.len()];
                for t in terms {
                    let item = v.item(t.item);
                    let e: f64 = t.weights.iter().zip(item).map(|(w, m)| w * m).sum();
                    let sign = if e > t.target {
                        1.0
                    } else if e < t.target {
                        -1.0
                    } else {
                        0.0
                    };
                    let dst = &mut d[t.item * p..(t.item + 1) * p];
                    dst.iter_mut().zip(&t.weights).for_each(|(o, w)| *o += g[0] * sign * w);
                }
                acc(*x, d);
            }
            Op::SquaredError { x, target } => {
                let d = val(*x)
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(a, t)| 2.0 * g[0] * (a - t))
                    .collect();
                acc(*x, d);
            }
        }
    }
}

/// Result of a backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    /// Gradient with respect to `v`. Nodes the loss does not depend on get an
    /// all-zero tensor.
    pub fn wrt(&self, v: Var) -> Tensor4 {
        let shape = self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor4::from_parts(shape, g.clone()),
            None => Tensor4::zeros(shape),
        }
    }

    /// Raw gradient buffer, `None` when the loss does not depend on `v`.
    pub fn raw(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// `(parameter, gradient)` for every parameter bound on `tape` that
    /// influenced the loss.
    pub fn param_grads<'a>(&'a self, tape: &'a Tape) -> impl Iterator<Item = (ParamId, &'a [f64])> + 'a {
        tape.bindings()
            .iter()
            .filter_map(|&(id, v)| self.raw(v).map(|g| (id, g)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, v: &[f64]) -> Tensor4 {
        Tensor4::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(Shape::new(1, 3, 1, 1), &[-1.0, 0.0, 2.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = tape.leaf(Tensor4::scalar(0.0));
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).data(), &[0.5]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(Shape::new(1, 3, 1, 1), &[-1.0, 0.0, 2.0]));
        let r = tape.relu(x);
        let l = tape.sum_all(r);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sum_all_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor4::full(Shape::new(2, 3, 4, 5), 0.3));
        let l = tape.sum_all(x);
        let g = tape.backward(l).unwrap();
        assert!(g.wrt(x).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn unused_nodes_get_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor4::scalar(2.0));
        let y = tape.leaf(Tensor4::scalar(3.0));
        let l = tape.sum_all(x);
        let g = tape.backward(l).unwrap();
        assert!(g.raw(y).is_none());
        assert_eq!(g.wrt(y).data(), &[0.0]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor4::zeros(Shape::new(1, 2, 3, 3)));
        let b = tape.leaf(Tensor4::zeros(Shape::new(1, 2, 3, 4)));
        let msg = tape.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("1x2x3x3") && msg.contains("1x2x3x4"), "{msg}");
        let w = tape.leaf(Tensor4::zeros(Shape::new(4, 3, 3, 3)));
        let bias = tape.leaf(Tensor4::zeros(Shape::new(1, 4, 1, 1)));
        let msg = tape.conv2d(a, w, bias, 1, 1).unwrap_err().to_string();
        assert!(msg.contains("1x2x3x3") && msg.contains("4x3x3x3"), "{msg}");
    }

    #[test]
    fn conv_identity_and_constant() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (1..=9).map(f64::from).collect();
        let x = tape.leaf(t(Shape::new(1, 1, 3, 3), &data));
        let w = tape.leaf(Tensor4::full(Shape::new(1, 1, 1, 1), 1.0));
        let b = tape.leaf(Tensor4::zeros(Shape::new(1, 1, 1, 1)));
        let y = tape.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y), tape.value(x));

        let w0 = tape.leaf(Tensor4::zeros(Shape::new(1, 1, 3, 3)));
        let b5 = tape.leaf(Tensor4::full(Shape::new(1, 1, 1, 1), 5.0));
        let y = tape.conv2d(x, w0, b5, 1, 1).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn conv_output_arithmetic() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor4::zeros(Shape::new(2, 3, 9, 7)));
        let w = tape.leaf(Tensor4::zeros(Shape::new(5, 3, 3, 3)));
        let b = tape.leaf(Tensor4::zeros(Shape::new(1, 5, 1, 1)));
        let y = tape.conv2d(x, w, b, 2, 1).unwrap();
        assert_eq!(tape.shape(y), Shape::new(2, 5, 5, 4));
        assert!(tape.conv2d(x, w, b, 0, 1).is_err());
    }

    #[test]
    fn linear_identity_and_bias() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor4::from_fn(Shape::new(2, 3, 1, 1), |n, c, _, _| {
            (n * 3 + c) as f64
        }));
        let eye = tape.leaf(Tensor4::from_fn(Shape::new(3, 3, 1, 1), |o, i, _, _| {
            (o == i) as u8 as f64
        }));
        let zero = tape.leaf(Tensor4::zeros(Shape::new(1, 3, 1, 1)));
        let y = tape.linear(x, eye, zero).unwrap();
        assert_eq!(tape.value(y), tape.value(x));

        let w0 = tape.leaf(Tensor4::zeros(Shape::new(2, 3, 1, 1)));
        let b = tape.leaf(t(Shape::new(1, 2, 1, 1), &[1.5, -2.0]));
        let y = tape.linear(x, w0, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.5, -2.0, 1.5, -2.0]);
    }

    #[test]
    fn concat_orders_channels_per_item() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor4::from_fn(Shape::new(2, 1, 1, 2), |n, _, _, w| {
            (10 * n + w) as f64
        }));
        let b = tape.leaf(Tensor4::from_fn(Shape::new(2, 2, 1, 2), |n, c, _, w| {
            (100 + 10 * n + 5 * c + w) as f64
        }));
        let y = tape.concat_channels(&[a, b]).unwrap();
        assert_eq!(
            tape.value(y).data(),
            &[0.0, 1.0, 100.0, 101.0, 105.0, 106.0, 10.0, 11.0, 110.0, 111.0, 115.0, 116.0]
        );
        let bad = tape.leaf(Tensor4::zeros(Shape::new(1, 1, 1, 2)));
        assert!(tape.concat_channels(&[a, bad]).is_err());
    }
}
