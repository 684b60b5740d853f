//! Dense f32 kernels for the forward pass.
//!
//! All reductions run left to right in index order (for matmul: over the inner
//! dimension, starting from zero, bias added afterwards), so results are
//! bit-identical between runs and between the parallel and sequential paths.

use crate::exec;
use crate::{Error, Result};

/// Rows handed to one task in the parallel matmul.
const ROWS_PER_TASK: usize = 16;

/// Layer norm epsilon used throughout the model.
pub const LN_EPS: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!("invalid dimensions {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} implies {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        assert!(!shape.is_empty() && shape.iter().all(|&d| d > 0), "invalid shape {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
        t
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("tensor has rank >= 1")
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// Multiply-accumulate counter. Single owner; never shared across threads.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct MacCounter {
    macs: u64,
}

impl MacCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, n: u64) {
        self.macs += n;
    }

    pub fn macs(&self) -> u64 {
        self.macs
    }
}

fn count(counter: Option<&mut MacCounter>, n: u64) {
    if let Some(c) = counter {
        c.add(n);
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`, overwriting `out`.
pub(crate) fn matmul_into(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    exec::for_each_chunk(out, ROWS_PER_TASK * n, |task, chunk| {
        let row0 = task * ROWS_PER_TASK;
        matmul_rows(&a[row0 * k..], b, chunk, k, n);
    });
}

// Four output rows share each streamed row of `b`; per element the sum is
// still accumulated over `kk` in ascending order.
fn matmul_rows(a: &[f32], b: &[f32], out: &mut [f32], k: usize, n: usize) {
    out.fill(0.0);
    let rows = out.len() / n;
    let mut r = 0;
    while r + 4 <= rows {
        let (o0, rest) = out[r * n..(r + 4) * n].split_at_mut(n);
        let (o1, rest) = rest.split_at_mut(n);
        let (o2, o3) = rest.split_at_mut(n);
        let a0 = &a[r * k..(r + 1) * k];
        let a1 = &a[(r + 1) * k..(r + 2) * k];
        let a2 = &a[(r + 2) * k..(r + 3) * k];
        let a3 = &a[(r + 3) * k..(r + 4) * k];
        for kk in 0..k {
            let brow = &b[kk * n..(kk + 1) * n];
            let (x0, x1, x2, x3) = (a0[kk], a1[kk], a2[kk], a3[kk]);
            for j in 0..n {
                let bv = brow[j];
                o0[j] += x0 * bv;
                o1[j] += x1 * bv;
                o2[j] += x2 * bv;
                o3[j] += x3 * bv;
            }
        }
        r += 4;
    }
    for r in r..rows {
        let o = &mut out[r * n..(r + 1) * n];
        let ar = &a[r * k..(r + 1) * k];
        for kk in 0..k {
            let brow = &b[kk * n..(kk + 1) * n];
            let x = ar[kk];
            for j in 0..n {
                o[j] += x * brow[j];
            }
        }
    }
}

pub fn matmul(a: &Tensor, b: &Tensor, counter: Option<&mut MacCounter>) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::Shape(format!(
            "matmul {:?} x {:?}",
            a.shape, b.shape
        )));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    matmul_into(&a.data, &b.data, &mut out, m, k, n);
    count(counter, (m * k * n) as u64);
    Tensor::new(vec![m, n], out)
}

/// `x[..×din] · w[din×dout] + b`, broadcast over leading dimensions.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor, counter: Option<&mut MacCounter>) -> Result<Tensor> {
    let din = x.last_dim();
    if w.shape.len() != 2 || w.shape[0] != din || b.data.len() != w.shape[1] {
        return Err(Error::Shape(format!(
            "linear input {:?}, weight {:?}, bias {:?}",
            x.shape, w.shape, b.shape
        )));
    }
    let dout = w.shape[1];
    let rows = x.data.len() / din;
    let mut out = vec![0.0; rows * dout];
    linear_into(&x.data, &w.data, &b.data, &mut out, rows, din, dout);
    count(counter, (rows * din * dout) as u64);
    let mut shape = x.shape.clone();
    *shape.last_mut().unwrap() = dout;
    Tensor::new(shape, out)
}

pub(crate) fn linear_into(
    x: &[f32],
    w: &[f32],
    b: &[f32],
    out: &mut [f32],
    rows: usize,
    din: usize,
    dout: usize,
) {
    matmul_into(x, w, out, rows, din, dout);
    for row in out.chunks_mut(dout) {
        for (o, bv) in row.iter_mut().zip(b) {
            *o += bv;
        }
    }
}

/// Normalises one row in place; masked entries come out as exact zeros.
pub(crate) fn softmax_row(row: &mut [f32], mask: Option<&[bool]>) -> bool {
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let mut max = f32::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if keep(i) && v > max {
            max = v;
        }
    }
    if max == f32::NEG_INFINITY {
        return false;
    }
    let mut sum = 0.0f32;
    for (i, v) in row.iter_mut().enumerate() {
        if keep(i) {
            *v = libm::expf(*v - max);
            sum += *v;
        } else {
            *v = 0.0;
        }
    }
    let inv = 1.0 / sum;
    for (i, v) in row.iter_mut().enumerate() {
        if keep(i) {
            *v *= inv;
        }
    }
    true
}

/// Softmax over the last axis. Masked (`false`) entries are excluded from the
/// normalisation and returned as exact zeros.
pub fn softmax_masked(logits: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    if let Some(m) = mask {
        if m.len() != logits.len() {
            return Err(Error::Shape(format!(
                "mask of {} entries for logits {:?}",
                m.len(),
                logits.shape
            )));
        }
    }
    let n = logits.last_dim();
    let mut out = logits.clone();
    for (r, row) in out.data.chunks_mut(n).enumerate() {
        let row_mask = mask.map(|m| &m[r * n..(r + 1) * n]);
        if !softmax_row(row, row_mask) {
            return Err(Error::MaskedRow(r));
        }
    }
    Ok(out)
}

pub(crate) fn layer_norm_into(x: &[f32], gamma: &[f32], beta: &[f32], eps: f32, out: &mut [f32]) {
    let d = gamma.len();
    for (xr, or) in x.chunks(d).zip(out.chunks_mut(d)) {
        let mut mean = 0.0f32;
        for &v in xr {
            mean += v;
        }
        mean /= d as f32;
        let mut var = 0.0f32;
        for &v in xr {
            var += (v - mean) * (v - mean);
        }
        var /= d as f32;
        let inv = 1.0 / (var + eps).sqrt();
        for j in 0..d {
            or[j] = (xr[j] - mean) * inv * gamma[j] + beta[j];
        }
    }
}

pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let d = x.last_dim();
    if gamma.len() != d || beta.len() != d {
        return Err(Error::Shape(format!(
            "layer norm over {d} with gamma {:?}, beta {:?}",
            gamma.shape, beta.shape
        )));
    }
    let mut out = x.clone();
    layer_norm_into(&x.data, &gamma.data, &beta.data, eps, &mut out.data);
    Ok(out)
}

/// Tanh approximation: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
#[inline]
pub(crate) fn gelu_scalar(x: f32) -> f32 {
    const K: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + libm::tanhf(K * (x + 0.044_715 * x * x * x)))
}

pub fn gelu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data.iter_mut().for_each(|v| *v = gelu_scalar(*v));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `(k−1)/2` before and the remainder after; stride 1
    /// keeps the spatial size.
    Same,
    Valid,
}

/// Geometry of a 2D convolution over a `[cin × h × w]` input.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub groups: usize,
    pub padding: Padding,
}

impl ConvGeom {
    pub fn output_hw(&self) -> (usize, usize) {
        match self.padding {
            Padding::Same => ((self.h - 1) / self.stride + 1, (self.w - 1) / self.stride + 1),
            Padding::Valid => (
                (self.h - self.kh) / self.stride + 1,
                (self.w - self.kw) / self.stride + 1,
            ),
        }
    }

    fn pads(&self) -> (usize, usize) {
        match self.padding {
            Padding::Same => ((self.kh - 1) / 2, (self.kw - 1) / 2),
            Padding::Valid => (0, 0),
        }
    }

    pub fn macs(&self) -> u64 {
        let (oh, ow) = self.output_hw();
        (self.cout * oh * ow * (self.cin / self.groups) * self.kh * self.kw) as u64
    }

    fn validate(&self) -> Result<()> {
        let ok = self.groups >= 1
            && self.stride >= 1
            && self.cin.is_multiple_of(self.groups)
            && self.cout.is_multiple_of(self.groups)
            && self.kh >= 1
            && self.kw >= 1
            && (self.padding == Padding::Same || (self.kh <= self.h && self.kw <= self.w));
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!("invalid convolution geometry {self:?}")))
        }
    }
}

/// Cross-correlation; per output element the sum runs over (input channel,
/// kernel row, kernel column) in order, then the bias is added.
pub(crate) fn conv2d_into(x: &[f32], kernels: &[f32], bias: Option<&[f32]>, g: &ConvGeom, out: &mut [f32]) {
    let (oh, ow) = g.output_hw();
    let (pt, pl) = g.pads();
    let cin_g = g.cin / g.groups;
    let cout_g = g.cout / g.groups;
    let (h, w, kh, kw) = (g.h as isize, g.w as isize, g.kh, g.kw);
    exec::for_each_chunk(out, oh * ow, |co, plane| {
        let grp = co / cout_g;
        let kbase = co * cin_g * kh * kw;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f32;
                for ci in 0..cin_g {
                    let xc = &x[(grp * cin_g + ci) * g.h * g.w..][..g.h * g.w];
                    let kc = &kernels[kbase + ci * kh * kw..][..kh * kw];
                    for ky in 0..kh {
                        let iy = (oy * g.stride + ky) as isize - pt as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * g.stride + kx) as isize - pl as isize;
                            if ix < 0 || ix >= w {
                                continue;
                            }
                            acc += xc[(iy * w + ix) as usize] * kc[ky * kw + kx];
                        }
                    }
                }
                if let Some(b) = bias {
                    acc += b[co];
                }
                plane[oy * ow + ox] = acc;
            }
        }
    });
}

/// 2D convolution of `x[cin×h×w]` with `kernels[cout×cin/groups×kh×kw]`.
pub fn conv2d(
    x: &Tensor,
    kernels: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    groups: usize,
    padding: Padding,
    counter: Option<&mut MacCounter>,
) -> Result<Tensor> {
    if x.shape.len() != 3 || kernels.shape.len() != 4 {
        return Err(Error::Shape(format!(
            "conv2d input {:?}, kernels {:?}",
            x.shape, kernels.shape
        )));
    }
    let geom = ConvGeom {
        cin: x.shape[0],
        h: x.shape[1],
        w: x.shape[2],
        cout: kernels.shape[0],
        kh: kernels.shape[2],
        kw: kernels.shape[3],
        stride,
        groups,
        padding,
    };
    geom.validate()?;
    if kernels.shape[1] * groups != geom.cin {
        return Err(Error::Shape(format!(
            "kernel fan-in {} x {groups} groups != {} input channels",
            kernels.shape[1], geom.cin
        )));
    }
    if let Some(b) = bias {
        if b.len() != geom.cout {
            return Err(Error::Shape(format!("bias {:?} for {} outputs", b.shape, geom.cout)));
        }
    }
    let (oh, ow) = geom.output_hw();
    let mut out = vec![0.0; geom.cout * oh * ow];
    conv2d_into(&x.data, &kernels.data, bias.map(|b| b.data()), &geom, &mut out);
    count(counter, geom.macs());
    Tensor::new(vec![geom.cout, oh, ow], out)
}
