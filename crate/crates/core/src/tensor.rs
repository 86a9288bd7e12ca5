//! Dense f64 tensors with tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records primitive operations eagerly; [`Tape::backward`] replays
//! them in reverse to fill gradients. Tensors are plain value types; a tape is
//! single-threaded. Gradient policy: grads accumulate within one backward pass,
//! a second backward on the same tape is rejected until [`Tape::zero_grads`].

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Dense row-major f64 array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dimension(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; numel] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    /// Row-major 2D constructor.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::dimension("ragged rows"));
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    pub fn rand_uniform<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.random_range(lo..hi)).collect();
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn rand_normal<R: Rng>(shape: &[usize], mean: f64, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(mean, std).expect("std must be finite and positive");
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| normal.sample(rng)).collect();
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() requires a scalar tensor");
        self.data[0]
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::dimension(format!(
                "cannot reshape {} elements to {:?}",
                self.data.len(),
                shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Matmul(Var, Var),
    /// `a @ b^T` without materializing the transpose.
    MatmulNT(Var, Var),
    Transpose2d(Var),
    Sin(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Relu(Var),
    SoftmaxLast(Var),
    LayerNormLast { x: Var, inv_sigma: Vec<f64> },
    MeanAll(Var),
    SumAll(Var),
    SumSq(Var),
    SumAxis { x: Var, axis: usize },
    BroadcastTo(Var),
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires: bool,
    op: Op,
}

/// Eager computation tape. Operations append nodes in topological order.
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

// ── broadcasting helpers ─────────────────────────────────────────────

fn pad_shape(shape: &[usize], ndim: usize) -> Vec<usize> {
    let mut padded = vec![1usize; ndim];
    padded[ndim - shape.len()..].copy_from_slice(shape);
    padded
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let ndim = a.len().max(b.len());
    let pa = pad_shape(a, ndim);
    let pb = pad_shape(b, ndim);
    let mut out = vec![0usize; ndim];
    for i in 0..ndim {
        out[i] = match (pa[i], pb[i]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            (x, y) => {
                return Err(Error::dimension(format!(
                    "cannot broadcast {:?} with {:?} (axis {}: {} vs {})",
                    a, b, i, x, y
                )))
            }
        };
    }
    Ok(out)
}

/// Expand `data` of `shape` to `out_shape` by repeating broadcast axes.
fn expand_to(data: &[f64], shape: &[usize], out_shape: &[usize]) -> Vec<f64> {
    if shape == out_shape {
        return data.to_vec();
    }
    let ndim = out_shape.len();
    let padded = pad_shape(shape, ndim);
    let numel: usize = out_shape.iter().product();
    // strides in the source, zeroed on broadcast axes
    let mut strides = vec![0usize; ndim];
    let mut acc = 1;
    for d in (0..ndim).rev() {
        strides[d] = if padded[d] == 1 { 0 } else { acc };
        acc *= padded[d];
    }
    let mut out = vec![0.0; numel];
    let mut coords = vec![0usize; ndim];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut rem = i;
        for d in (0..ndim).rev() {
            coords[d] = rem % out_shape[d];
            rem /= out_shape[d];
        }
        let src: usize = coords.iter().zip(&strides).map(|(c, s)| c * s).sum();
        *slot = data[src];
    }
    out
}

/// Sum `grad` of `grad_shape` down to `target_shape` (inverse of broadcast).
fn reduce_to(grad: &[f64], grad_shape: &[usize], target_shape: &[usize]) -> Vec<f64> {
    if grad_shape == target_shape {
        return grad.to_vec();
    }
    let ndim = grad_shape.len();
    let padded = pad_shape(target_shape, ndim);
    let target_numel: usize = target_shape.iter().product();
    let mut strides = vec![0usize; ndim];
    let mut acc = 1;
    for d in (0..ndim).rev() {
        strides[d] = if padded[d] == 1 { 0 } else { acc };
        acc *= padded[d];
    }
    let mut out = vec![0.0; target_numel];
    let mut coords = vec![0usize; ndim];
    for (i, g) in grad.iter().enumerate() {
        let mut rem = i;
        for d in (0..ndim).rev() {
            coords[d] = rem % grad_shape[d];
            rem /= grad_shape[d];
        }
        let dst: usize = coords.iter().zip(&strides).map(|(c, s)| c * s).sum();
        out[dst] += g;
    }
    out
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `a [m,k] @ b^T` where `b` is stored `[n,k]`.
fn matmul_nt_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (av, bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            c[i * n + j] = s;
        }
    }
    c
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

/// Split a shape around `axis` into (outer, axis_len, inner) extents.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register an input tensor. Gradients are tracked when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Non-differentiable input (masks, targets, frozen parameters).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, requires: bool, op: Op) -> Var {
        self.nodes.push(Node { value, grad: None, requires, op });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` target w.r.t. `v`, if tracked.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.as_ref().map(|g| Tensor {
            shape: self.nodes[v.0].value.shape().to_vec(),
            data: g.clone(),
        })
    }

    /// Clears all gradients and re-arms `backward`.
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    // ── elementwise binary ops with broadcasting ─────────────────────

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let out_shape = broadcast_shape(self.shape(a), self.shape(b))?;
        let ae = expand_to(self.value(a).data(), self.shape(a), &out_shape);
        let be = expand_to(self.value(b).data(), self.shape(b), &out_shape);
        let data: Vec<f64> = ae.iter().zip(&be).map(|(&x, &y)| f(x, y)).collect();
        let requires = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor { shape: out_shape, data }, requires, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    // ── unary ops ────────────────────────────────────────────────────

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let data = self.value(x).data().iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let requires = self.requires(x);
        self.push(Tensor { shape, data }, requires, op)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, Op::Neg(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(x, f64::sin, Op::Sin(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Ln(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    // ── linear algebra ───────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dimension(format!("matmul shapes {:?} x {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let requires = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor { shape: vec![m, n], data }, requires, Op::Matmul(a, b)))
    }

    /// `a @ b^T` for `a: [m,k]`, `b: [n,k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::dimension(format!("matmul_nt shapes {:?} x {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let data = matmul_nt_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let requires = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor { shape: vec![m, n], data }, requires, Op::MatmulNT(a, b)))
    }

    pub fn transpose2d(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::dimension(format!("transpose2d on shape {:?}", s)));
        }
        let (r, c) = (s[0], s[1]);
        let data = transpose_raw(self.value(x).data(), r, c);
        let requires = self.requires(x);
        Ok(self.push(Tensor { shape: vec![c, r], data }, requires, Op::Transpose2d(x)))
    }

    // ── normalization ────────────────────────────────────────────────

    /// Softmax over the last axis, with max-subtraction for stability.
    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::dimension("softmax on 0-d tensor"))?;
        let src = self.value(x).data();
        let mut data = vec![0.0; src.len()];
        for (row_in, row_out) in src.chunks(d).zip(data.chunks_mut(d)) {
            let max = row_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &v) in row_out.iter_mut().zip(row_in) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in row_out.iter_mut() {
                *o /= sum;
            }
        }
        let requires = self.requires(x);
        Ok(self.push(Tensor { shape, data }, requires, Op::SoftmaxLast(x)))
    }

    /// Layer normalization over the last axis (no affine; compose with mul/add).
    pub fn layer_norm_last(&mut self, x: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::dimension("layer_norm on 0-d tensor"))?;
        let src = self.value(x).data();
        let rows = src.len() / d;
        let mut data = vec![0.0; src.len()];
        let mut inv_sigma = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_sigma[r] = inv;
            for i in 0..d {
                data[r * d + i] = (row[i] - mean) * inv;
            }
        }
        let requires = self.requires(x);
        Ok(self.push(Tensor { shape, data }, requires, Op::LayerNormLast { x, inv_sigma }))
    }

    // ── reductions ───────────────────────────────────────────────────

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.value(x).data().iter().sum::<f64>() / n;
        let requires = self.requires(x);
        self.push(Tensor::scalar(s), requires, Op::MeanAll(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum::<f64>();
        let requires = self.requires(x);
        self.push(Tensor::scalar(s), requires, Op::SumAll(x))
    }

    /// Σ xᵢ² as a scalar.
    pub fn sumsq(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|&v| v * v).sum::<f64>();
        let requires = self.requires(x);
        self.push(Tensor::scalar(s), requires, Op::SumSq(x))
    }

    /// Mean over one axis; the reduced axis is kept with extent 1.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.sum_axis(x, axis)?;
        let n = self.shape(x)[axis] as f64;
        // fold the division into a fresh scale node so backward stays simple
        Ok(self.scale(v, 1.0 / n))
    }

    /// Sum over one axis; the reduced axis is kept with extent 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dimension(format!("sum_axis {} on shape {:?}", axis, shape)));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out_shape = shape.clone();
        out_shape[axis] = 1;
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                let dst = o * inner;
                for i in 0..inner {
                    data[dst + i] += src[base + i];
                }
            }
        }
        let requires = self.requires(x);
        Ok(self.push(Tensor { shape: out_shape, data }, requires, Op::SumAxis { x, axis }))
    }

    // ── shape ops ────────────────────────────────────────────────────

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        // validate by broadcasting against the target
        let out = broadcast_shape(self.shape(x), shape)?;
        if out != shape {
            return Err(Error::dimension(format!(
                "cannot broadcast {:?} to {:?}",
                self.shape(x),
                shape
            )));
        }
        let data = expand_to(self.value(x).data(), self.shape(x), shape);
        let requires = self.requires(x);
        Ok(self.push(Tensor { shape: shape.to_vec(), data }, requires, Op::BroadcastTo(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::dimension(format!(
                "reshape {:?} to {:?}",
                self.shape(x),
                shape
            )));
        }
        let t = Tensor { shape: shape.to_vec(), data: self.value(x).data().to_vec() };
        let requires = self.requires(x);
        Ok(self.push(t, requires, Op::Reshape(x)))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::dimension(format!("concat axis {} on shape {:?}", axis, first)));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(Error::dimension(format!("concat shapes {:?} vs {:?}", s, first)));
            }
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = axis_split(&out_shape, axis);
        let numel: usize = out_shape.iter().product();
        let mut data = vec![0.0; numel];
        let mut offset = 0;
        for &p in parts {
            let len = self.shape(p)[axis];
            let src = self.value(p).data();
            for o in 0..outer {
                let dst = (o * total + offset) * inner;
                let sb = o * len * inner;
                data[dst..dst + len * inner].copy_from_slice(&src[sb..sb + len * inner]);
            }
            offset += len;
        }
        let requires = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            Tensor { shape: out_shape, data },
            requires,
            Op::Concat { parts: parts.to_vec(), axis },
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::dimension(format!(
                "slice [{}, {}) of axis {} on shape {:?}",
                start,
                start + len,
                axis,
                shape
            )));
        }
        let (outer, full, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut data = vec![0.0; outer * len * inner];
        for o in 0..outer {
            let sb = (o * full + start) * inner;
            let db = o * len * inner;
            data[db..db + len * inner].copy_from_slice(&src[sb..sb + len * inner]);
        }
        let requires = self.requires(x);
        Ok(self.push(
            Tensor { shape: out_shape, data },
            requires,
            Op::Slice { x, axis, start },
        ))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Rejected if already run on this tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::contract(
                "backward already ran on this tape; call zero_grads to reset",
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward target must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.requires(loss) {
            return Err(Error::contract("backward target does not require gradients"));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if self.nodes[idx].grad.is_none() || !self.nodes[idx].requires {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            let grad = self.nodes[idx].grad.clone().unwrap();
            self.propagate(idx, &op, &grad);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contrib: &[f64]) {
        if !self.nodes[v.0].requires {
            return;
        }
        let numel = self.nodes[v.0].value.numel();
        let grad = self.nodes[v.0].grad.get_or_insert_with(|| vec![0.0; numel]);
        for (g, c) in grad.iter_mut().zip(contrib) {
            *g += c;
        }
    }

    fn propagate(&mut self, idx: usize, op: &Op, grad: &[f64]) {
        let out_shape = self.nodes[idx].value.shape().to_vec();
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let da = reduce_to(grad, &out_shape, self.shape(a));
                let db = reduce_to(grad, &out_shape, self.shape(b));
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Sub(a, b) => {
                let da = reduce_to(grad, &out_shape, self.shape(a));
                let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                let db = reduce_to(&neg, &out_shape, self.shape(b));
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Mul(a, b) => {
                let ae = expand_to(self.value(a).data(), self.shape(a), &out_shape);
                let be = expand_to(self.value(b).data(), self.shape(b), &out_shape);
                let da_full: Vec<f64> = grad.iter().zip(&be).map(|(g, y)| g * y).collect();
                let db_full: Vec<f64> = grad.iter().zip(&ae).map(|(g, x)| g * x).collect();
                let da = reduce_to(&da_full, &out_shape, self.shape(a));
                let db = reduce_to(&db_full, &out_shape, self.shape(b));
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Div(a, b) => {
                let ae = expand_to(self.value(a).data(), self.shape(a), &out_shape);
                let be = expand_to(self.value(b).data(), self.shape(b), &out_shape);
                let da_full: Vec<f64> = grad.iter().zip(&be).map(|(g, y)| g / y).collect();
                let db_full: Vec<f64> = grad
                    .iter()
                    .zip(ae.iter().zip(&be))
                    .map(|(g, (x, y))| -g * x / (y * y))
                    .collect();
                let da = reduce_to(&da_full, &out_shape, self.shape(a));
                let db = reduce_to(&db_full, &out_shape, self.shape(b));
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Neg(x) => {
                let d: Vec<f64> = grad.iter().map(|g| -g).collect();
                self.accumulate(x, &d);
            }
            Op::Scale(x, c) => {
                let d: Vec<f64> = grad.iter().map(|g| g * c).collect();
                self.accumulate(x, &d);
            }
            Op::AddScalar(x) => {
                self.accumulate(x, grad);
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                // dA = G @ B^T, dB = A^T @ G
                let da = matmul_nt_raw(grad, self.value(b).data(), m, n, k);
                let at = transpose_raw(self.value(a).data(), m, k);
                let db = matmul_raw(&at, grad, k, m, n);
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::MatmulNT(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[0];
                // C = A B^T: dA = G @ B, dB = G^T @ A
                let da = matmul_raw(grad, self.value(b).data(), m, n, k);
                let gt = transpose_raw(grad, m, n);
                let db = matmul_raw(&gt, self.value(a).data(), n, m, k);
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Transpose2d(x) => {
                let (r, c) = (out_shape[0], out_shape[1]);
                let d = transpose_raw(grad, r, c);
                self.accumulate(x, &d);
            }
            Op::Sin(x) => {
                let d: Vec<f64> = grad
                    .iter()
                    .zip(self.value(x).data())
                    .map(|(g, &v)| g * v.cos())
                    .collect();
                self.accumulate(x, &d);
            }
            Op::Exp(x) => {
                let d: Vec<f64> = grad
                    .iter()
                    .zip(self.nodes[idx].value.data())
                    .map(|(g, &y)| g * y)
                    .collect();
                self.accumulate(x, &d);
            }
            Op::Ln(x) => {
                let d: Vec<f64> = grad
                    .iter()
                    .zip(self.value(x).data())
                    .map(|(g, &v)| g / v)
                    .collect();
                self.accumulate(x, &d);
            }
            Op::Sqrt(x) => {
                let d: Vec<f64> = grad
                    .iter()
                    .zip(self.nodes[idx].value.data())
                    .map(|(g, &y)| g * 0.5 / y)
                    .collect();
                self.accumulate(x, &d);
            }
            Op::Relu(x) => {
                let d: Vec<f64> = grad
                    .iter()
                    .zip(self.value(x).data())
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(x, &d);
            }
            Op::SoftmaxLast(x) => {
                let d = *out_shape.last().unwrap();
                let s = self.nodes[idx].value.data();
                let mut dx = vec![0.0; s.len()];
                for r in 0..s.len() / d {
                    let srow = &s[r * d..(r + 1) * d];
                    let grow = &grad[r * d..(r + 1) * d];
                    let dot: f64 = srow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for i in 0..d {
                        dx[r * d + i] = srow[i] * (grow[i] - dot);
                    }
                }
                self.accumulate(x, &dx);
            }
            Op::LayerNormLast { x, ref inv_sigma } => {
                let d = *out_shape.last().unwrap();
                let y = self.nodes[idx].value.data();
                let mut dx = vec![0.0; y.len()];
                for r in 0..y.len() / d {
                    let yrow = &y[r * d..(r + 1) * d];
                    let grow = &grad[r * d..(r + 1) * d];
                    let gmean: f64 = grow.iter().sum::<f64>() / d as f64;
                    let gy: f64 = grow.iter().zip(yrow).map(|(g, v)| g * v).sum::<f64>() / d as f64;
                    for i in 0..d {
                        dx[r * d + i] = inv_sigma[r] * (grow[i] - gmean - yrow[i] * gy);
                    }
                }
                self.accumulate(x, &dx);
            }
            Op::MeanAll(x) => {
                let n = self.value(x).numel();
                let d = vec![grad[0] / n as f64; n];
                self.accumulate(x, &d);
            }
            Op::SumAll(x) => {
                let n = self.value(x).numel();
                let d = vec![grad[0]; n];
                self.accumulate(x, &d);
            }
            Op::SumSq(x) => {
                let d: Vec<f64> = self
                    .value(x)
                    .data()
                    .iter()
                    .map(|&v| 2.0 * v * grad[0])
                    .collect();
                self.accumulate(x, &d);
            }
            Op::SumAxis { x, axis } => {
                let in_shape = self.shape(x).to_vec();
                let (outer, len, inner) = axis_split(&in_shape, axis);
                let mut d = vec![0.0; self.value(x).numel()];
                for o in 0..outer {
                    for l in 0..len {
                        let dst = (o * len + l) * inner;
                        let src = o * inner;
                        d[dst..dst + inner].copy_from_slice(&grad[src..src + inner]);
                    }
                }
                self.accumulate(x, &d);
            }
            Op::BroadcastTo(x) => {
                let d = reduce_to(grad, &out_shape, self.shape(x));
                self.accumulate(x, &d);
            }
            Op::Reshape(x) => {
                self.accumulate(x, grad);
            }
            Op::Concat { ref parts, axis } => {
                let total = out_shape[axis];
                let (outer, _, inner) = axis_split(&out_shape, axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[axis];
                    let mut d = vec![0.0; self.value(p).numel()];
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        let dst = o * len * inner;
                        d[dst..dst + len * inner].copy_from_slice(&grad[src..src + len * inner]);
                    }
                    self.accumulate(p, &d);
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let in_shape = self.shape(x).to_vec();
                let (outer, full, inner) = axis_split(&in_shape, axis);
                let len = out_shape[axis];
                let mut d = vec![0.0; self.value(x).numel()];
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    let src = o * len * inner;
                    d[dst..dst + len * inner].copy_from_slice(&grad[src..src + len * inner]);
                }
                self.accumulate(x, &d);
            }
        }
    }
}
