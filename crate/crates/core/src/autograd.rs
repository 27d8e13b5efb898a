//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Parameters enter
//! the tape through [`Graph::param`]; only parameters of the store bound with
//! [`Graph::track`] are differentiated; everything else (constants, parameters of
//! other stores, [`Graph::detach`]ed values) sits behind a stop-gradient barrier.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::{self, check_finite, LnCache, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Narrow(Var, usize, usize),
    SumAxis(Var, usize),
    SumAll(Var),
    LayerNorm(Var, Var, Var, LnCache<T>),
    Softmax(Var),
    Gelu(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    CrossEntropy(Var, Vec<usize>),
    L2Normalize(Var, Vec<T>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients of a scalar loss with respect to the parameters of one store.
#[derive(Debug, Clone)]
pub struct GradientSet<T> {
    store: Option<u64>,
    grads: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Real> GradientSet<T> {
    /// Tag of the store the gradients belong to, if any parameter was tracked.
    pub fn store_tag(&self) -> Option<u64> {
        self.store
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.grads.iter().map(|(&k, v)| (k, v))
    }

    /// True when every gradient belongs to the store with tag `tag`.
    pub fn belongs_to(&self, tag: u64) -> bool {
        self.grads.is_empty() || self.store == Some(tag)
    }

    /// Global L2 norm over all gradients.
    pub fn norm(&self) -> T {
        self.grads
            .values()
            .flat_map(|t| t.data().iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }
}

/// Computation tape.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    tracked: Option<u64>,
    params: BTreeMap<(u64, ParamId), Var>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            tracked: None,
            params: BTreeMap::new(),
        }
    }

    /// A graph that differentiates the parameters of `store`.
    pub fn tracking(store: &ParamStore<T>) -> Self {
        let mut g = Self::new();
        g.track(store);
        g
    }

    pub fn track(&mut self, store: &ParamStore<T>) {
        self.tracked = Some(store.tag());
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Result<Var> {
        check_finite(op_name, value.data())?;
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; never differentiated.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Brings a parameter onto the tape (once per graph).
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let key = (store.tag(), id);
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let tracked = self.tracked == Some(store.tag());
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: if tracked { Op::Param(id) } else { Op::Leaf },
            needs_grad: tracked,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(key, v);
        v
    }

    /// Stop-gradient: same value, no gradient flows back through it.
    pub fn detach(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.constant(t)
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let out = tensor::binary(self.value(a), self.value(b), name, f)?;
        let ng = self.ng(a) || self.ng(b);
        self.push(name, out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.value(a).map(|v| v * c);
        let ng = self.ng(a);
        self.push("scale", out, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.value(a).map(|v| v + c);
        let ng = self.ng(a);
        self.push("add_scalar", out, Op::AddScalar(a), ng)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -T::one())
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul_forward(self.value(a), self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        self.push("matmul", out, Op::MatMul(a, b), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let ng = self.ng(a);
        self.push("reshape", out, Op::Reshape(a), ng)
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = tensor::permute_forward(self.value(a), axes)?;
        let ng = self.ng(a);
        self.push("permute", out, Op::Permute(a, axes.to_vec()), ng)
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.value(a).rank();
        if r < 2 {
            return Err(invalid("transpose needs rank >= 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(a, &axes)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = tensor::concat_forward(&tensors, axis)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push("concat", out, Op::Concat(parts.to_vec(), axis), ng)
    }

    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = tensor::narrow_forward(self.value(a), axis, start, len)?;
        let ng = self.ng(a);
        self.push("narrow", out, Op::Narrow(a, axis, start), ng)
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = tensor::sum_axis_forward(self.value(a), axis)?;
        let ng = self.ng(a);
        self.push("sum_axis", out, Op::SumAxis(a, axis), ng)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let n = *self
            .shape(a)
            .get(axis)
            .ok_or_else(|| invalid("mean_axis: axis out of range"))?;
        let s = self.sum_axis(a, axis)?;
        self.scale(s, T::one() / T::of(n as f64))
    }

    /// Biased variance along `axis`, composed from differentiable primitives.
    pub fn var_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let mut keep = self.shape(a).to_vec();
        if axis >= keep.len() {
            return Err(invalid("var_axis: axis out of range"));
        }
        keep[axis] = 1;
        let m = self.mean_axis(a, axis)?;
        let m = self.reshape(m, &keep)?;
        let c = self.sub(a, m)?;
        let sq = self.square(c)?;
        self.mean_axis(sq, axis)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push("sum", out, Op::SumAll(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        let s = self.sum(a)?;
        self.scale(s, T::one() / T::of(n as f64))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (out, cache) =
            tensor::layer_norm_forward(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push("layer_norm", out, Op::LayerNorm(x, gamma, beta, cache), ng)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        if self.value(x).rank() == 0 {
            return Err(invalid("softmax on a scalar"));
        }
        let out = tensor::softmax_forward(self.value(x));
        let ng = self.ng(x);
        self.push("softmax", out, Op::Softmax(x), ng)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(tensor::gelu);
        let ng = self.ng(x);
        self.push("gelu", out, Op::Gelu(x), ng)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(T::exp);
        let ng = self.ng(x);
        self.push("exp", out, Op::Exp(x), ng)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(T::ln);
        let ng = self.ng(x);
        self.push("ln", out, Op::Ln(x), ng)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(T::sqrt);
        let ng = self.ng(x);
        self.push("sqrt", out, Op::Sqrt(x), ng)
    }

    /// Mean cross-entropy of `logits[B×C]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.shape()[0] != labels.len() {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let c = lv.shape()[1];
        if labels.iter().any(|&l| l >= c) {
            return Err(invalid("cross_entropy: label out of range"));
        }
        let mut loss = T::zero();
        for (row, &l) in lv.data().chunks(c).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            loss += lse - row[l];
        }
        loss /= T::of(labels.len() as f64);
        let ng = self.ng(logits);
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy(logits, labels.to_vec()),
            ng,
        )
    }

    /// Scales every row (last axis) to unit L2 norm; zero rows are an error.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = *xv.shape().last().ok_or_else(|| invalid("l2_normalize on a scalar"))?;
        let mut norms = Vec::with_capacity(xv.numel() / d.max(1));
        let mut data = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(d) {
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if !(n > T::zero()) {
                return Err(Error::ZeroNorm { op: "l2_normalize" });
            }
            norms.push(n);
            data.extend(row.iter().map(|&v| v / n));
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        let ng = self.ng(x);
        self.push("l2_normalize", out, Op::L2Normalize(x, norms), ng)
    }

    /// `x·W + b` for `x[.., in]`, `W[in, out]`, `b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add(h, b)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<GradientSet<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut out = GradientSet {
            store: self.tracked,
            grads: BTreeMap::new(),
        };
        if !self.ng(loss) {
            return Ok(out);
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    check_finite("backward", g.data())?;
                    out.grads.insert(*id, g);
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, || tensor::reduce_to(&g, self.shape(*a)));
                    self.acc(&mut grads, *b, || tensor::reduce_to(&g, self.shape(*b)));
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *a, || tensor::reduce_to(&g, self.shape(*a)));
                    self.acc(&mut grads, *b, || {
                        tensor::reduce_to(&g, self.shape(*b)).map(|v| -v)
                    });
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.acc(&mut grads, *a, || {
                        let p = tensor::binary(&g, bv, "mul", |x, y| x * y).unwrap();
                        tensor::reduce_to(&p, av.shape())
                    });
                    self.acc(&mut grads, *b, || {
                        let p = tensor::binary(&g, av, "mul", |x, y| x * y).unwrap();
                        tensor::reduce_to(&p, bv.shape())
                    });
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let y = &node.value;
                    self.acc(&mut grads, *a, || {
                        let p = tensor::binary(&g, bv, "div", |x, y| x / y).unwrap();
                        tensor::reduce_to(&p, av.shape())
                    });
                    self.acc(&mut grads, *b, || {
                        // d(a/b)/db = -y/b
                        let gy = tensor::binary(&g, y, "mul", |x, y| x * y).unwrap();
                        let p = tensor::binary(&gy, bv, "div", |x, y| -x / y).unwrap();
                        tensor::reduce_to(&p, bv.shape())
                    });
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    self.acc(&mut grads, *a, || g.map(|v| v * c));
                }
                Op::AddScalar(a) => self.acc(&mut grads, *a, || g.clone()),
                Op::MatMul(a, b) => {
                    let (da, db) = tensor::matmul_backward(self.value(*a), self.value(*b), &g);
                    self.acc(&mut grads, *a, || da);
                    self.acc(&mut grads, *b, || db);
                }
                Op::Reshape(a) => {
                    self.acc(&mut grads, *a, || g.reshape(self.shape(*a)).unwrap());
                }
                Op::Permute(a, axes) => {
                    let inv = tensor::inverse_permutation(axes);
                    self.acc(&mut grads, *a, || tensor::permute_forward(&g, &inv).unwrap());
                }
                Op::Concat(parts, axis) => {
                    let mut start = 0;
                    for &p in parts {
                        let len = self.shape(p)[*axis];
                        self.acc(&mut grads, p, || {
                            tensor::narrow_forward(&g, *axis, start, len).unwrap()
                        });
                        start += len;
                    }
                }
                Op::Narrow(a, axis, start) => {
                    self.acc(&mut grads, *a, || {
                        tensor::narrow_backward(&g, self.shape(*a), *axis, *start)
                    });
                }
                Op::SumAxis(a, axis) => {
                    self.acc(&mut grads, *a, || {
                        tensor::sum_axis_backward(&g, self.shape(*a), *axis)
                    });
                }
                Op::SumAll(a) => {
                    let s = g.data()[0];
                    self.acc(&mut grads, *a, || Tensor::full(self.shape(*a), s));
                }
                Op::LayerNorm(x, gamma, beta, cache) => {
                    let (dx, dg, db) = tensor::layer_norm_backward(cache, self.value(*gamma), &g);
                    self.acc(&mut grads, *x, || dx);
                    self.acc(&mut grads, *gamma, || dg);
                    self.acc(&mut grads, *beta, || db);
                }
                Op::Softmax(x) => {
                    self.acc(&mut grads, *x, || tensor::softmax_backward(&node.value, &g));
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    self.acc(&mut grads, *x, || {
                        tensor::binary(&g, xv, "gelu", |gi, xi| gi * tensor::gelu_grad(xi)).unwrap()
                    });
                }
                Op::Exp(x) => {
                    self.acc(&mut grads, *x, || {
                        tensor::binary(&g, &node.value, "exp", |gi, yi| gi * yi).unwrap()
                    });
                }
                Op::Ln(x) => {
                    let xv = self.value(*x);
                    self.acc(&mut grads, *x, || {
                        tensor::binary(&g, xv, "ln", |gi, xi| gi / xi).unwrap()
                    });
                }
                Op::Sqrt(x) => {
                    self.acc(&mut grads, *x, || {
                        tensor::binary(&g, &node.value, "sqrt", |gi, yi| {
                            gi / (T::of(2.0) * yi)
                        })
                        .unwrap()
                    });
                }
                Op::CrossEntropy(logits, labels) => {
                    let lv = self.value(*logits);
                    let c = lv.shape()[1];
                    let scale = g.data()[0] / T::of(labels.len() as f64);
                    self.acc(&mut grads, *logits, || {
                        let mut p = tensor::softmax_forward(lv);
                        for (row, &l) in p.data_mut().chunks_mut(c).zip(labels) {
                            row[l] -= T::one();
                            for v in row.iter_mut() {
                                *v *= scale;
                            }
                        }
                        p
                    });
                }
                Op::L2Normalize(x, norms) => {
                    let d = *node.value.shape().last().unwrap();
                    self.acc(&mut grads, *x, || {
                        let mut dx = Vec::with_capacity(g.numel());
                        for ((yr, gr), &n) in node
                            .value
                            .data()
                            .chunks(d)
                            .zip(g.data().chunks(d))
                            .zip(norms)
                        {
                            let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                            dx.extend(yr.iter().zip(gr).map(|(&yi, &gi)| (gi - yi * dot) / n));
                        }
                        Tensor::from_parts(g.shape().to_vec(), dx)
                    });
                }
            }
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl FnOnce() -> Tensor<T>) {
        if !self.ng(v) {
            return;
        }
        let g = f();
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, &x) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += x;
                }
            }
            slot => *slot = Some(g),
        }
    }
}
