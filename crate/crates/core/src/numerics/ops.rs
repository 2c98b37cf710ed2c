//! Forward/backward pairs for the primitives the model is composed of.
//!
//! Every `*_backward` takes the upstream gradient and either returns the
//! input gradient or accumulates into caller-owned gradient tensors.

use super::Tensor;
use crate::error::{Error, Result};

fn mismatch(a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch { left: a.to_vec(), right: b.to_vec() }
}

/// Dot product with four independent accumulators. The summation order is
/// fixed so results are reproducible bit for bit.
#[inline]
pub fn dot_slice(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = c * 4;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn dot(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(mismatch(a.shape(), b.shape()));
    }
    Ok(dot_slice(a.data(), b.data()))
}

/// Gradients of `a·b` given the upstream scalar gradient.
pub fn dot_backward(a: &Tensor, b: &Tensor, g: f64, ga: &mut Tensor, gb: &mut Tensor) {
    axpy(g, b.data(), ga.data_mut());
    axpy(g, a.data(), gb.data_mut());
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(mismatch(a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// `y = W x` for `W: [m, n]`, `x: [n]`.
pub fn matvec(w: &Tensor, x: &Tensor) -> Result<Tensor> {
    if w.shape().len() != 2 || x.shape().len() != 1 || w.shape()[1] != x.len() {
        return Err(mismatch(w.shape(), x.shape()));
    }
    let out = (0..w.rows()).map(|i| dot_slice(w.row(i), x.data())).collect();
    Ok(Tensor::vector(out))
}

/// Accumulates `dW += g xᵀ` and `dx += Wᵀ g`.
pub fn matvec_backward(w: &Tensor, x: &Tensor, g: &Tensor, gw: &mut Tensor, gx: &mut Tensor) {
    for (i, &gi) in g.data().iter().enumerate() {
        if gi == 0.0 {
            continue;
        }
        axpy(gi, x.data(), gw.row_mut(i));
        axpy(gi, w.row(i), gx.data_mut());
    }
}

/// `C = A B` for `A: [m, k]`, `B: [k, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(mismatch(a.shape(), b.shape()));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a.data()[i * k + p];
            axpy(aip, &b.data()[p * n..(p + 1) * n], &mut out[i * n..(i + 1) * n]);
        }
    }
    Tensor::matrix(m, n, out)
}

/// Accumulates `dA += G Bᵀ` and `dB += Aᵀ G`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor, ga: &mut Tensor, gb: &mut Tensor) {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    for i in 0..m {
        let gi = &g.data()[i * n..(i + 1) * n];
        for p in 0..k {
            let bp = &b.data()[p * n..(p + 1) * n];
            ga.data_mut()[i * k + p] += dot_slice(gi, bp);
            axpy(a.data()[i * k + p], gi, &mut gb.data_mut()[p * n..(p + 1) * n]);
        }
    }
}

/// Concatenates 1-d tensors.
pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
    let mut out = Vec::new();
    for p in parts {
        if p.shape().len() != 1 {
            return Err(mismatch(p.shape(), &[p.len()]));
        }
        out.extend_from_slice(p.data());
    }
    Ok(Tensor::vector(out))
}

/// Splits a concatenated gradient back into its parts.
pub fn concat_backward(g: &Tensor, sizes: &[usize]) -> Vec<Tensor> {
    let mut offset = 0;
    sizes
        .iter()
        .map(|&s| {
            let part = Tensor::vector(g.data()[offset..offset + s].to_vec());
            offset += s;
            part
        })
        .collect()
}

pub fn tanh(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|v| v.tanh()).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Gradient through `y = tanh(x)` given the forward output `y`.
pub fn tanh_backward(y: &Tensor, g: &Tensor) -> Tensor {
    let data = y.data().iter().zip(g.data()).map(|(y, g)| g * (1.0 - y * y)).collect();
    Tensor::new(y.shape().to_vec(), data).expect("same shape")
}

/// Max-subtracted softmax over a slice.
pub fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Numerically stable `log softmax(x)[i]`.
pub fn log_softmax_at(x: &[f64], i: usize) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x[i] - lse
}

pub fn softmax(x: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 1 || x.is_empty() {
        return Err(Error::Empty("softmax input"));
    }
    Ok(Tensor::vector(softmax_slice(x.data())))
}

/// Gradient through `p = softmax(x)`: `dx = p ⊙ (g − ⟨p, g⟩)`.
pub fn softmax_backward(p: &Tensor, g: &Tensor) -> Tensor {
    Tensor::vector(softmax_backward_slice(p.data(), g.data()))
}

pub fn softmax_backward_slice(p: &[f64], g: &[f64]) -> Vec<f64> {
    let inner: f64 = p.iter().zip(g).map(|(p, g)| p * g).sum();
    p.iter().zip(g).map(|(p, g)| p * (g - inner)).collect()
}

/// Column-wise max over the time axis of `x: [T, C]`. Ties go to the lowest
/// time index.
pub fn max_over_time(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    if x.shape().len() != 2 || x.rows() == 0 {
        return Err(Error::Empty("max_over_time input"));
    }
    let c = x.shape()[1];
    let mut best = x.row(0).to_vec();
    let mut arg = vec![0usize; c];
    for t in 1..x.rows() {
        for (j, &v) in x.row(t).iter().enumerate() {
            if v > best[j] {
                best[j] = v;
                arg[j] = t;
            }
        }
    }
    Ok((Tensor::vector(best), arg))
}

/// Routes each channel's gradient to the time step that produced its max.
pub fn max_over_time_backward(argmax: &[usize], g: &Tensor, steps: usize) -> Tensor {
    let c = argmax.len();
    let mut out = Tensor::zeros(&[steps, c]);
    for (j, &t) in argmax.iter().enumerate() {
        out.data_mut()[t * c + j] += g.data()[j];
    }
    out
}

/// Width-preserving 1-d convolution. `x: [T, C]`, `w: [F, k·C]`, `b: [F]`,
/// zero padding of `(k−1)/2` rows on each side, output `[T, F]`
/// pre-activation. Row `t` of the output sees input rows `t−(k−1)/2 ..= t+(k−1)/2`.
pub fn conv1d_same(x: &Tensor, w: &Tensor, b: &Tensor, window: usize) -> Result<Tensor> {
    let (steps, channels, filters) = conv_dims(x, w, b, window)?;
    let padded = pad_rows(x, window);
    let span = window * channels;
    let mut out = vec![0.0; steps * filters];
    for t in 0..steps {
        let z = &padded[t * channels..t * channels + span];
        for f in 0..filters {
            out[t * filters + f] = dot_slice(w.row(f), z) + b.data()[f];
        }
    }
    Tensor::matrix(steps, filters, out)
}

/// Backward of [`conv1d_same`]; accumulates into `gx`, `gw`, `gb`. Zero
/// upstream entries are skipped, which makes the max-pooled case cheap.
pub fn conv1d_same_backward(
    x: &Tensor,
    w: &Tensor,
    g: &Tensor,
    window: usize,
    gx: &mut Tensor,
    gw: &mut Tensor,
    gb: &mut Tensor,
) {
    let steps = x.rows();
    let channels = x.shape()[1];
    let filters = w.rows();
    let half = (window - 1) / 2;
    let padded = pad_rows(x, window);
    let span = window * channels;
    let mut gpad = vec![0.0; (steps + window - 1) * channels];
    for t in 0..steps {
        let z = &padded[t * channels..t * channels + span];
        for f in 0..filters {
            let gf = g.data()[t * filters + f];
            if gf == 0.0 {
                continue;
            }
            gb.data_mut()[f] += gf;
            axpy(gf, z, gw.row_mut(f));
            axpy(gf, w.row(f), &mut gpad[t * channels..t * channels + span]);
        }
    }
    let gxd = gx.data_mut();
    for t in 0..steps {
        let src = &gpad[(t + half) * channels..(t + half + 1) * channels];
        for (dst, s) in gxd[t * channels..(t + 1) * channels].iter_mut().zip(src) {
            *dst += s;
        }
    }
}

fn conv_dims(x: &Tensor, w: &Tensor, b: &Tensor, window: usize) -> Result<(usize, usize, usize)> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!("convolution window must be odd, got {window}")));
    }
    if x.shape().len() != 2 || x.rows() == 0 {
        return Err(Error::Empty("convolution input"));
    }
    let channels = x.shape()[1];
    if w.shape().len() != 2 || w.shape()[1] != window * channels {
        return Err(mismatch(w.shape(), &[w.rows(), window * channels]));
    }
    if b.shape() != [w.rows()] {
        return Err(mismatch(b.shape(), &[w.rows()]));
    }
    Ok((x.rows(), channels, w.rows()))
}

fn pad_rows(x: &Tensor, window: usize) -> Vec<f64> {
    let half = (window - 1) / 2;
    let channels = x.shape()[1];
    let mut padded = vec![0.0; (x.rows() + 2 * half) * channels];
    padded[half * channels..(half + x.rows()) * channels].copy_from_slice(x.data());
    padded
}
