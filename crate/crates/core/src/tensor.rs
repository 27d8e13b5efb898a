//! Dense row-major tensors and the forward kernels shared with the autodiff graph.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::real::Real;

/// Dense n-dimensional array stored row-major.
///
/// A tensor is an immutable value once built: every operation returns a new one.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn check_finite<T: Real>(op: &'static str, data: &[T]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(invalid(alloc::format!(
                "shape {shape:?} needs {} values, got {}",
                numel(&shape),
                data.len()
            )));
        }
        check_finite("tensor", &data)?;
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor whose length is already known to match `shape`.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor { shape, data }
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Tensor::new(shape.to_vec(), values.iter().map(|&v| T::of(v)).collect())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(invalid(alloc::format!(
                "item() on tensor of shape {:?}",
                self.shape
            )))
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.f64()).collect()
    }

    /// Converts the element type (f32 <-> f64).
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Row `i` of a tensor viewed as `[rows, last_dim]`.
    pub fn row(&self, i: usize) -> &[T] {
        let d = *self.shape.last().unwrap_or(&1);
        &self.data[i * d..(i + 1) * d]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let out = binary(self, other, "add", |a, b| a + b)?;
        check_finite("add", &out.data)?;
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let out = binary(self, other, "sub", |a, b| a - b)?;
        check_finite("sub", &out.data)?;
        Ok(out)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        let out = binary(self, other, "mul", |a, b| a * b)?;
        check_finite("mul", &out.data)?;
        Ok(out)
    }

    pub fn scale(&self, c: T) -> Result<Self> {
        let out = self.map(|v| v * c);
        check_finite("scale", &out.data)?;
        Ok(out)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let out = matmul_forward(self, other)?;
        check_finite("matmul", &out.data)?;
        Ok(out)
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Self> {
        let r = self.rank();
        if r < 2 {
            return Err(invalid("transpose needs rank >= 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        permute_forward(self, &axes)
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        permute_forward(self, axes)
    }

    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        concat_forward(parts, axis)
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        narrow_forward(self, axis, start, len)
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Self> {
        sum_axis_forward(self, axis)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Self> {
        let n = *self
            .shape
            .get(axis)
            .ok_or_else(|| invalid("mean_axis: axis out of range"))?;
        let s = sum_axis_forward(self, axis)?;
        Ok(s.map(|v| v / T::of(n as f64)))
    }

    /// Biased (1/n) variance along `axis`.
    pub fn var_axis(&self, axis: usize) -> Result<Self> {
        let n = *self
            .shape
            .get(axis)
            .ok_or_else(|| invalid("var_axis: axis out of range"))?;
        let mean = self.mean_axis(axis)?;
        let mut keep = self.shape.clone();
        keep[axis] = 1;
        let centered = self.sub(&mean.reshape(&keep)?)?;
        let sq = centered.mul(&centered)?;
        Ok(sum_axis_forward(&sq, axis)?.map(|v| v / T::of(n as f64)))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.data.len() as f64)
    }

    pub fn softmax(&self) -> Result<Self> {
        if self.rank() == 0 {
            return Err(invalid("softmax on a scalar"));
        }
        let out = softmax_forward(self);
        check_finite("softmax", &out.data)?;
        Ok(out)
    }

    pub fn layer_norm(&self, gamma: &Self, beta: &Self, eps: T) -> Result<Self> {
        Ok(layer_norm_forward(self, gamma, beta, eps)?.0)
    }

    pub fn gelu(&self) -> Result<Self> {
        let out = self.map(gelu);
        check_finite("gelu", &out.data)?;
        Ok(out)
    }

    pub fn norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }
}

// ---------------------------------------------------------------------------
// broadcasting

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

/// Strides of `shape` aligned to `out` (rank >= shape rank); broadcast axes get stride 0.
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let r = out.len();
    let off = r - shape.len();
    let mut strides = vec![0; r];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + off] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` for every element of the broadcast output.
fn walk_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total = numel(out);
    if total == 0 {
        return;
    }
    let r = out.len();
    let mut idx = vec![0usize; r];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..total {
        f(o, ia, ib);
        // increment multi-index
        let mut ax = r;
        while ax > 0 {
            ax -= 1;
            idx[ax] += 1;
            ia += sa[ax];
            ib += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            ia -= sa[ax] * out[ax];
            ib -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

pub(crate) fn binary<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &'static str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape.clone(), data));
    }
    let out = broadcast_shape(&a.shape, &b.shape).ok_or_else(|| Error::Shape {
        op,
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    })?;
    let n = numel(&out);
    // rhs broadcast along leading axes only (bias-style)
    if out == a.shape && b.numel() > 0 && a.shape.ends_with(&b.shape) {
        let m = b.numel();
        let data = a
            .data
            .chunks(m)
            .flat_map(|row| row.iter().zip(&b.data).map(|(&x, &y)| f(x, y)))
            .collect();
        return Ok(Tensor::from_parts(out, data));
    }
    let sa = aligned_strides(&a.shape, &out);
    let sb = aligned_strides(&b.shape, &out);
    let mut data = vec![T::zero(); n];
    walk_broadcast(&out, &sa, &sb, |o, ia, ib| data[o] = f(a.data[ia], b.data[ib]));
    Ok(Tensor::from_parts(out, data))
}

/// Sums a broadcast-shaped gradient back down to `shape`.
pub(crate) fn reduce_to<T: Real>(grad: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if grad.shape == shape {
        return grad.clone();
    }
    let m = numel(shape);
    let mut data = vec![T::zero(); m];
    if grad.shape.ends_with(shape) && m > 0 {
        for row in grad.data.chunks(m) {
            for (d, &g) in data.iter_mut().zip(row) {
                *d += g;
            }
        }
    } else {
        let st = aligned_strides(shape, &grad.shape);
        let zero = vec![0; grad.shape.len()];
        walk_broadcast(&grad.shape, &st, &zero, |o, it, _| data[it] += grad.data[o]);
    }
    Tensor::from_parts(shape.to_vec(), data)
}

// ---------------------------------------------------------------------------
// matrix products

/// `c[m×n] += a[m×k] · b[k×n]`, row-major.
pub(crate) fn gemm_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += aip * bj;
            }
        }
    }
}

pub(crate) fn transpose2<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// `[.., m, k] × [k, n]` (shared rhs) or `[b, m, k] × [b, k, n]` (batched).
pub(crate) fn matmul_forward<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let err = || Error::Shape {
        op: "matmul",
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    };
    if a.rank() < 2 || b.rank() < 2 {
        return Err(err());
    }
    let k = a.shape[a.rank() - 1];
    if b.rank() == 2 {
        if b.shape[0] != k {
            return Err(err());
        }
        let n = b.shape[1];
        let m = a.numel() / k.max(1);
        let mut out = vec![T::zero(); m * n];
        gemm_acc(&a.data, &b.data, &mut out, m, k, n);
        let mut shape = a.shape.clone();
        *shape.last_mut().unwrap() = n;
        return Ok(Tensor::from_parts(shape, out));
    }
    if a.rank() != 3 || b.rank() != 3 || a.shape[0] != b.shape[0] || b.shape[1] != k {
        return Err(err());
    }
    let (batch, m, n) = (a.shape[0], a.shape[1], b.shape[2]);
    let mut out = vec![T::zero(); batch * m * n];
    for i in 0..batch {
        gemm_acc(
            &a.data[i * m * k..(i + 1) * m * k],
            &b.data[i * k * n..(i + 1) * k * n],
            &mut out[i * m * n..(i + 1) * m * n],
            m,
            k,
            n,
        );
    }
    Ok(Tensor::from_parts(vec![batch, m, n], out))
}

/// Gradients of `matmul_forward` for upstream gradient `g`.
pub(crate) fn matmul_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let k = a.shape[a.rank() - 1];
    if b.rank() == 2 {
        let n = b.shape[1];
        let m = a.numel() / k.max(1);
        // dA = G · Bᵀ
        let bt = transpose2(&b.data, k, n);
        let mut da = vec![T::zero(); m * k];
        gemm_acc(&g.data, &bt, &mut da, m, n, k);
        // dB = Aᵀ · G
        let at = transpose2(&a.data, m, k);
        let mut db = vec![T::zero(); k * n];
        gemm_acc(&at, &g.data, &mut db, k, m, n);
        return (
            Tensor::from_parts(a.shape.clone(), da),
            Tensor::from_parts(b.shape.clone(), db),
        );
    }
    let (batch, m, n) = (a.shape[0], a.shape[1], b.shape[2]);
    let mut da = vec![T::zero(); batch * m * k];
    let mut db = vec![T::zero(); batch * k * n];
    for i in 0..batch {
        let ai = &a.data[i * m * k..(i + 1) * m * k];
        let bi = &b.data[i * k * n..(i + 1) * k * n];
        let gi = &g.data[i * m * n..(i + 1) * m * n];
        let bt = transpose2(bi, k, n);
        gemm_acc(gi, &bt, &mut da[i * m * k..(i + 1) * m * k], m, n, k);
        let at = transpose2(ai, m, k);
        gemm_acc(&at, gi, &mut db[i * k * n..(i + 1) * k * n], k, m, n);
    }
    (
        Tensor::from_parts(a.shape.clone(), da),
        Tensor::from_parts(b.shape.clone(), db),
    )
}

// ---------------------------------------------------------------------------
// layout

pub(crate) fn permute_forward<T: Real>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let r = x.rank();
    let mut seen = vec![false; r];
    if axes.len() != r || axes.iter().any(|&a| a >= r || core::mem::replace(&mut seen[a], true)) {
        return Err(invalid(alloc::format!(
            "permute: {axes:?} is not a permutation of rank {r}"
        )));
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| x.shape[a]).collect();
    let in_strides = aligned_strides_plain(&x.shape);
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut data = vec![T::zero(); x.numel()];
    let zero = vec![0; r];
    walk_broadcast(&out_shape, &src_strides, &zero, |o, src, _| {
        data[o] = x.data[src]
    });
    Ok(Tensor::from_parts(out_shape, data))
}

fn aligned_strides_plain(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i] = acc;
        acc *= shape[i];
    }
    strides
}

pub(crate) fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

pub(crate) fn concat_forward<T: Real>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| invalid("concat of zero tensors"))?;
    if axis >= first.rank() {
        return Err(invalid("concat: axis out of range"));
    }
    let mut total = 0;
    for p in parts {
        let ok = p.rank() == first.rank()
            && p.shape
                .iter()
                .zip(&first.shape)
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::Shape {
                op: "concat",
                lhs: first.shape.clone(),
                rhs: p.shape.clone(),
            });
        }
        total += p.shape[axis];
    }
    let mut shape = first.shape.clone();
    shape[axis] = total;
    let (outer, _, inner) = split_at_axis(&shape, axis);
    let mut data = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape[axis] * inner;
            data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
        }
    }
    Ok(Tensor::from_parts(shape, data))
}

pub(crate) fn narrow_forward<T: Real>(
    x: &Tensor<T>,
    axis: usize,
    start: usize,
    len: usize,
) -> Result<Tensor<T>> {
    if axis >= x.rank() || start + len > x.shape[axis] {
        return Err(invalid(alloc::format!(
            "narrow: [{start}, {}) out of range for axis {axis} of {:?}",
            start + len,
            x.shape
        )));
    }
    let (outer, dim, inner) = split_at_axis(&x.shape, axis);
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * dim * inner + start * inner;
        data.extend_from_slice(&x.data[base..base + len * inner]);
    }
    let mut shape = x.shape.clone();
    shape[axis] = len;
    Ok(Tensor::from_parts(shape, data))
}

/// Scatters a narrowed gradient back into a zero tensor of `full` shape.
pub(crate) fn narrow_backward<T: Real>(
    g: &Tensor<T>,
    full: &[usize],
    axis: usize,
    start: usize,
) -> Tensor<T> {
    let (outer, dim, inner) = split_at_axis(full, axis);
    let len = g.shape[axis];
    let mut data = vec![T::zero(); numel(full)];
    for o in 0..outer {
        let base = o * dim * inner + start * inner;
        data[base..base + len * inner].copy_from_slice(&g.data[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::from_parts(full.to_vec(), data)
}

pub(crate) fn sum_axis_forward<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(invalid("sum_axis: axis out of range"));
    }
    let (outer, dim, inner) = split_at_axis(&x.shape, axis);
    let mut data = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for d in 0..dim {
            let src = &x.data[(o * dim + d) * inner..(o * dim + d + 1) * inner];
            for (acc, &v) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *acc += v;
            }
        }
    }
    let mut shape = x.shape.clone();
    shape.remove(axis);
    Ok(Tensor::from_parts(shape, data))
}

pub(crate) fn sum_axis_backward<T: Real>(g: &Tensor<T>, full: &[usize], axis: usize) -> Tensor<T> {
    let (outer, dim, inner) = split_at_axis(full, axis);
    let mut data = Vec::with_capacity(numel(full));
    for o in 0..outer {
        for _ in 0..dim {
            data.extend_from_slice(&g.data[o * inner..(o + 1) * inner]);
        }
    }
    Tensor::from_parts(full.to_vec(), data)
}

// ---------------------------------------------------------------------------
// normalization and activations

pub(crate) fn softmax_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let n = *x.shape.last().unwrap();
    let mut data = x.data.clone();
    for row in data.chunks_mut(n.max(1)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::from_parts(x.shape.clone(), data)
}

pub(crate) fn softmax_backward<T: Real>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let n = *y.shape.last().unwrap();
    let mut data = vec![T::zero(); y.numel()];
    for ((out, yr), gr) in data
        .chunks_mut(n)
        .zip(y.data.chunks(n))
        .zip(g.data.chunks(n))
    {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((o, &yi), &gi) in out.iter_mut().zip(yr).zip(gr) {
            *o = yi * (gi - dot);
        }
    }
    Tensor::from_parts(y.shape.clone(), data)
}

/// Cached statistics from a layer-norm forward pass.
#[derive(Debug, Clone)]
pub(crate) struct LnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

pub(crate) fn layer_norm_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, LnCache<T>)> {
    let d = *x.shape.last().ok_or_else(|| invalid("layer_norm on a scalar"))?;
    if d < 2 || gamma.shape != [d] || beta.shape != [d] {
        return Err(Error::Shape {
            op: "layer_norm",
            lhs: x.shape.clone(),
            rhs: gamma.shape.clone(),
        });
    }
    if !(eps > T::zero()) {
        return Err(invalid("layer_norm eps must be positive"));
    }
    let rows = x.numel() / d;
    let dn = T::of(d as f64);
    let mut y = vec![T::zero(); x.numel()];
    let mut xhat = vec![T::zero(); x.numel()];
    let mut inv_std = vec![T::zero(); rows];
    for r in 0..rows {
        let xr = &x.data[r * d..(r + 1) * d];
        let mean = xr.iter().copied().sum::<T>() / dn;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let is = T::one() / (var + eps).sqrt();
        inv_std[r] = is;
        for j in 0..d {
            let h = (xr[j] - mean) * is;
            xhat[r * d + j] = h;
            y[r * d + j] = h * gamma.data[j] + beta.data[j];
        }
    }
    check_finite("layer_norm", &y)?;
    Ok((
        Tensor::from_parts(x.shape.clone(), y),
        LnCache { xhat, inv_std },
    ))
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn layer_norm_backward<T: Real>(
    cache: &LnCache<T>,
    gamma: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let d = gamma.numel();
    let rows = g.numel() / d;
    let dn = T::of(d as f64);
    let mut dx = vec![T::zero(); g.numel()];
    let mut dgamma = vec![T::zero(); d];
    let mut dbeta = vec![T::zero(); d];
    let mut dxhat = vec![T::zero(); d];
    for r in 0..rows {
        let gr = &g.data[r * d..(r + 1) * d];
        let hr = &cache.xhat[r * d..(r + 1) * d];
        let mut sum_dh = T::zero();
        let mut sum_dh_h = T::zero();
        for j in 0..d {
            dgamma[j] += gr[j] * hr[j];
            dbeta[j] += gr[j];
            dxhat[j] = gr[j] * gamma.data[j];
            sum_dh += dxhat[j];
            sum_dh_h += dxhat[j] * hr[j];
        }
        let m1 = sum_dh / dn;
        let m2 = sum_dh_h / dn;
        let is = cache.inv_std[r];
        for j in 0..d {
            dx[r * d + j] = is * (dxhat[j] - m1 - hr[j] * m2);
        }
    }
    (
        Tensor::from_parts(g.shape.clone(), dx),
        Tensor::from_parts(vec![d], dgamma),
        Tensor::from_parts(vec![d], dbeta),
    )
}

/// Exact GELU, `x·Φ(x)`.
#[inline]
pub(crate) fn gelu<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    half * x * (T::one() + (x * T::of(core::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    let cdf = half * (T::one() + (x * T::of(core::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::of(0.398_942_280_401_432_7);
    cdf + x * pdf
}
