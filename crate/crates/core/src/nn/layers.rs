//! Layer kernels over `[height, width, channels]` activations.
//!
//! Convolution is im2col + GEMM with TensorFlow-style 'same' zero padding:
//! output extent is `ceil(in / stride)` and the odd padding pixel goes to the
//! bottom/right edge.

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerConfig {
    Conv2d {
        kernel: usize,
        filters: usize,
        stride: usize,
    },
    Relu,
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    GlobalAvgPool,
    Dense {
        units: usize,
    },
    Softmax,
}

impl LayerConfig {
    pub fn conv(kernel: usize, filters: usize) -> Self {
        LayerConfig::Conv2d {
            kernel,
            filters,
            stride: 1,
        }
    }

    pub fn pool(window: usize) -> Self {
        LayerConfig::MaxPool2d {
            window,
            stride: window,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerConfig::Conv2d { .. } => "conv2d",
            LayerConfig::Relu => "relu",
            LayerConfig::MaxPool2d { .. } => "maxpool2d",
            LayerConfig::GlobalAvgPool => "global_avg_pool",
            LayerConfig::Dense { .. } => "dense",
            LayerConfig::Softmax => "softmax",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerConfig::Conv2d { .. } | LayerConfig::Dense { .. })
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerConfig::Conv2d {
                kernel,
                filters,
                stride,
            } => {
                let [h, w, _] = spatial(input)?;
                if kernel == 0 || filters == 0 || stride == 0 {
                    return Err(Error::Param(format!("invalid conv2d config {self:?}")));
                }
                Ok(vec![h.div_ceil(stride), w.div_ceil(stride), filters])
            }
            LayerConfig::MaxPool2d { window, stride } => {
                let [h, w, c] = spatial(input)?;
                if window == 0 || stride == 0 || window > h || window > w {
                    return Err(Error::shape(&[window, window], &[h, w]));
                }
                Ok(vec![(h - window) / stride + 1, (w - window) / stride + 1, c])
            }
            LayerConfig::GlobalAvgPool => {
                let [_, _, c] = spatial(input)?;
                Ok(vec![c])
            }
            LayerConfig::Dense { units } => {
                if units == 0 {
                    return Err(Error::Param("dense layer needs at least one unit".into()));
                }
                Ok(vec![units])
            }
            LayerConfig::Relu => Ok(input.to_vec()),
            LayerConfig::Softmax => {
                if input.len() != 1 {
                    return Err(Error::shape(&[input.iter().product()], input));
                }
                Ok(input.to_vec())
            }
        }
    }

    /// Parameter shapes `(weight, bias)` for a given input shape.
    pub fn param_shapes(&self, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerConfig::Conv2d {
                kernel, filters, ..
            } => {
                let c = *input.last()?;
                Some((vec![kernel, kernel, c, filters], vec![filters]))
            }
            LayerConfig::Dense { units } => {
                let n: usize = input.iter().product();
                Some((vec![n, units], vec![units]))
            }
            _ => None,
        }
    }

    /// Number of inputs feeding one output unit.
    pub fn fan_in(&self, input: &[usize]) -> usize {
        match *self {
            LayerConfig::Conv2d { kernel, .. } => kernel * kernel * input.last().copied().unwrap_or(1),
            LayerConfig::Dense { .. } => input.iter().product(),
            _ => 0,
        }
    }
}

fn spatial(shape: &[usize]) -> Result<[usize; 3]> {
    match shape {
        &[h, w, c] => Ok([h, w, c]),
        other => Err(Error::Shape {
            expected: vec![0, 0, 0],
            actual: other.to_vec(),
        }),
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernel: usize, stride: usize) -> Result<Self> {
        let [in_h, in_w, in_c] = spatial(input)?;
        let out_h = in_h.div_ceil(stride);
        let out_w = in_w.div_ceil(stride);
        let pad_h = ((out_h - 1) * stride + kernel).saturating_sub(in_h);
        let pad_w = ((out_w - 1) * stride + kernel).saturating_sub(in_w);
        Ok(ConvGeometry {
            in_h,
            in_w,
            in_c,
            kernel,
            stride,
            out_h,
            out_w,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
        })
    }

    #[inline]
    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_c
    }

    #[inline]
    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }
}

/// Unrolls receptive fields into rows of `[ky][kx][c]`, zero where the
/// window hangs over the padding.
pub(crate) fn im2col<T: Real>(input: &[T], g: &ConvGeometry) -> Vec<T> {
    let plen = g.patch_len();
    let mut cols = vec![T::zero(); g.out_pixels() * plen];
    let c = g.in_c;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &mut cols[(oy * g.out_w + ox) * plen..][..plen];
            for ky in 0..g.kernel {
                let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                let iy = iy as usize;
                // contiguous run of in-bounds kx
                let x_start = (ox * g.stride) as isize - g.pad_left as isize;
                let kx_lo = (-x_start).max(0) as usize;
                let kx_hi = ((g.in_w as isize - x_start).min(g.kernel as isize)).max(0) as usize;
                if kx_lo >= kx_hi {
                    continue;
                }
                let ix0 = (x_start + kx_lo as isize) as usize;
                let src = &input[(iy * g.in_w + ix0) * c..][..(kx_hi - kx_lo) * c];
                row[(ky * g.kernel + kx_lo) * c..][..src.len()].copy_from_slice(src);
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeometry) -> Vec<T> {
    let plen = g.patch_len();
    let c = g.in_c;
    let mut out = vec![T::zero(); g.in_h * g.in_w * c];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &cols[(oy * g.out_w + ox) * plen..][..plen];
            for ky in 0..g.kernel {
                let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                for kx in 0..g.kernel {
                    let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                    if ix < 0 || ix >= g.in_w as isize {
                        continue;
                    }
                    let dst = &mut out[(iy as usize * g.in_w + ix as usize) * c..][..c];
                    let src = &row[(ky * g.kernel + kx) * c..][..c];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += *s;
                    }
                }
            }
        }
    }
    out
}

fn check_conv_params<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize)> {
    let in_c = spatial(input.shape())?[2];
    match weights.shape() {
        &[k, k2, c, f] if k == k2 && c == in_c && bias.shape() == [f] => Ok((k, f)),
        _ => Err(Error::shape(weights.shape(), input.shape())),
    }
}

fn conv_forward_cols<T: Real>(
    cols: &[T],
    g: &ConvGeometry,
    weights: &[T],
    bias: &[T],
    filters: usize,
) -> Vec<T> {
    let m = g.out_pixels();
    let mut out = Vec::with_capacity(m * filters);
    for _ in 0..m {
        out.extend_from_slice(bias);
    }
    T::gemm(
        m,
        g.patch_len(),
        filters,
        T::one(),
        cols,
        g.patch_len() as isize,
        1,
        weights,
        filters as isize,
        1,
        T::one(),
        &mut out,
        filters as isize,
        1,
    );
    out
}

/// 'Same'-padded cross-correlation.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (kernel, filters) = check_conv_params(input, weights, bias)?;
    if stride == 0 {
        return Err(Error::Param("conv2d stride must be positive".into()));
    }
    let g = ConvGeometry::new(input.shape(), kernel, stride)?;
    let out = if g.is_pointwise() {
        conv_forward_cols(input.data(), &g, weights.data(), bias.data(), filters)
    } else {
        let cols = im2col(input.data(), &g);
        conv_forward_cols(&cols, &g, weights.data(), bias.data(), filters)
    };
    Tensor::from_vec(&[g.out_h, g.out_w, filters], out)
}

/// Forward pass that keeps the unrolled input for the backward pass.
pub(crate) fn conv2d_cached<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<(Tensor<T>, Vec<T>, ConvGeometry)> {
    let (kernel, filters) = check_conv_params(input, weights, bias)?;
    let g = ConvGeometry::new(input.shape(), kernel, stride)?;
    let cols = if g.is_pointwise() {
        input.data().to_vec()
    } else {
        im2col(input.data(), &g)
    };
    let out = conv_forward_cols(&cols, &g, weights.data(), bias.data(), filters);
    Ok((Tensor::from_vec(&[g.out_h, g.out_w, filters], out)?, cols, g))
}

/// Accumulates weight/bias gradients and optionally returns the input
/// gradient.
pub(crate) fn conv2d_backward<T: Real>(
    cols: &[T],
    g: &ConvGeometry,
    weights: &[T],
    grad_out: &[T],
    filters: usize,
    param_grads: Option<(&mut [T], &mut [T])>,
    need_input: bool,
) -> Option<Vec<T>> {
    let m = g.out_pixels();
    let plen = g.patch_len();
    if let Some((grad_w, grad_b)) = param_grads {
        accumulate_conv_param_grads(cols, g, grad_out, filters, grad_w, grad_b);
    }
    if !need_input {
        return None;
    }
    // dCols = dY · Wᵀ
    let mut dcols = vec![T::zero(); m * plen];
    T::gemm(
        m,
        filters,
        plen,
        T::one(),
        grad_out,
        filters as isize,
        1,
        weights,
        1,
        filters as isize,
        T::zero(),
        &mut dcols,
        plen as isize,
        1,
    );
    if g.is_pointwise() {
        Some(dcols)
    } else {
        Some(col2im(&dcols, g))
    }
}

fn accumulate_conv_param_grads<T: Real>(
    cols: &[T],
    g: &ConvGeometry,
    grad_out: &[T],
    filters: usize,
    grad_w: &mut [T],
    grad_b: &mut [T],
) {
    let m = g.out_pixels();
    let plen = g.patch_len();
    // dW += colsᵀ · dY
    T::gemm(
        plen,
        m,
        filters,
        T::one(),
        cols,
        1,
        plen as isize,
        grad_out,
        filters as isize,
        1,
        T::one(),
        grad_w,
        filters as isize,
        1,
    );
    for row in grad_out.chunks_exact(filters) {
        for (b, &d) in grad_b.iter_mut().zip(row) {
            *b += d;
        }
    }
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let mut out = input.clone();
    relu_in_place(out.data_mut());
    out
}

#[inline]
pub(crate) fn relu_in_place<T: Real>(data: &mut [T]) {
    for v in data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Max pooling without padding. Ties route to the first position in
/// row-major window order.
pub fn maxpool2d<T: Real>(input: &Tensor<T>, window: usize, stride: usize) -> Result<Tensor<T>> {
    maxpool2d_indexed(input, window, stride).map(|(t, _)| t)
}

pub(crate) fn maxpool2d_indexed<T: Real>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<u32>)> {
    let out_shape = LayerConfig::MaxPool2d { window, stride }.output_shape(input.shape())?;
    let [_, w, c] = spatial(input.shape())?;
    let (oh, ow) = (out_shape[0], out_shape[1]);
    let data = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best_i = ((oy * stride) * w + ox * stride) * c + ch;
                let mut best = data[best_i];
                for ky in 0..window {
                    for kx in 0..window {
                        let i = ((oy * stride + ky) * w + ox * stride + kx) * c + ch;
                        if data[i] > best {
                            best = data[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_i as u32);
            }
        }
    }
    Ok((Tensor::from_vec(&out_shape, out)?, argmax))
}

pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [h, w, c] = spatial(input.shape())?;
    let mut sums = vec![T::zero(); c];
    for px in input.data().chunks_exact(c) {
        for (s, &v) in sums.iter_mut().zip(px) {
            *s += v;
        }
    }
    let n = T::from_f64((h * w) as f64);
    Tensor::from_vec(&[c], sums.into_iter().map(|s| s / n).collect())
}

/// Affine map on the flattened input: `out = x·W + b`.
pub fn dense<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let n = input.len();
    let units = match weights.shape() {
        &[i, u] if i == n && bias.shape() == [u] => u,
        _ => return Err(Error::shape(weights.shape(), &[n])),
    };
    let mut out = bias.data().to_vec();
    T::gemm(
        1,
        n,
        units,
        T::one(),
        input.data(),
        n as isize,
        1,
        weights.data(),
        units as isize,
        1,
        T::one(),
        &mut out,
        units as isize,
        1,
    );
    Tensor::from_vec(&[units], out)
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Stabilized softmax and `-ln p[label]`. The loss is computed from the
/// log-sum-exp so it stays finite for confident wrong predictions.
pub fn softmax_cross_entropy<T: Real>(logits: &[T], label: usize) -> (T, Vec<T>) {
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let sum: T = logits.iter().map(|&z| (z - max).exp()).sum();
    let loss = sum.ln() - (logits[label] - max);
    (loss, softmax(logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    // six nested loops, straight from the definition
    fn conv_reference(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: &Tensor<f64>,
        stride: usize,
    ) -> Tensor<f64> {
        let (h, wd, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (k, f) = (w.shape()[0], w.shape()[3]);
        let oh = (h + stride - 1) / stride;
        let ow = (wd + stride - 1) / stride;
        let pad_h = ((oh - 1) * stride + k).saturating_sub(h) / 2;
        let pad_w = ((ow - 1) * stride + k).saturating_sub(wd) / 2;
        let mut out = vec![0.0; oh * ow * f];
        for oy in 0..oh {
            for ox in 0..ow {
                for fi in 0..f {
                    let mut acc = b.data()[fi];
                    for ky in 0..k {
                        for kx in 0..k {
                            for ci in 0..c {
                                let iy = (oy * stride + ky) as isize - pad_h as isize;
                                let ix = (ox * stride + kx) as isize - pad_w as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[(iy as usize * wd + ix as usize) * c + ci];
                                let wv = w.data()[((ky * k + kx) * c + ci) * f + fi];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[(oy * ow + ox) * f + fi] = acc;
                }
            }
        }
        Tensor::from_vec(&[oh, ow, f], out).unwrap()
    }

    #[test]
    fn conv_matches_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(h, w, stride) in &[(5, 5, 1), (5, 5, 2), (6, 7, 2), (4, 9, 3)] {
            let x = random_tensor(&mut rng, &[h, w, 2]);
            let k = random_tensor(&mut rng, &[3, 3, 2, 4]);
            let b = random_tensor(&mut rng, &[4]);
            let fast = conv2d(&x, &k, &b, stride).unwrap();
            let slow = conv_reference(&x, &k, &b, stride);
            assert_eq!(fast.shape(), slow.shape());
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn pointwise_identity_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_tensor(&mut rng, &[4, 3, 3]);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        for i in 0..3 {
            k.data_mut()[i * 3 + i] = 1.0;
        }
        let out = conv2d(&x, &k, &Tensor::zeros(&[3]), 1).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn zero_kernel_yields_bias() {
        let x = Tensor::filled(&[5, 5, 2], 0.7f64);
        let out = conv2d(&x, &Tensor::zeros(&[3, 3, 2, 2]), &Tensor::from_vec(&[2], vec![0.25, -1.5]).unwrap(), 1).unwrap();
        for px in out.data().chunks_exact(2) {
            assert_eq!(px, &[0.25, -1.5]);
        }
    }

    #[test]
    fn conv_shape_mismatch_names_both() {
        let x = Tensor::<f64>::zeros(&[5, 5, 3]);
        let err = conv2d(&x, &Tensor::zeros(&[3, 3, 2, 4]), &Tensor::zeros(&[4]), 1).unwrap_err();
        match err {
            Error::Shape { expected, actual } => {
                assert_eq!(expected, vec![3, 3, 2, 4]);
                assert_eq!(actual, vec![5, 5, 3]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn maxpool_basics() {
        let x = Tensor::from_vec(&[2, 2, 1], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2d(&x, 2, 2).unwrap().data(), &[4.0]);
        let c = Tensor::filled(&[4, 4, 2], 0.3f64);
        assert!(maxpool2d(&c, 2, 2).unwrap().data().iter().all(|&v| v == 0.3));
        assert!(maxpool2d(&x, 3, 3).is_err());
    }

    #[test]
    fn maxpool_ties_take_first_index() {
        let x = Tensor::filled(&[2, 2, 1], 1.0f64);
        let (_, arg) = maxpool2d_indexed(&x, 2, 2).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn maxpool_matches_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random_tensor(&mut rng, &[7, 6, 3]);
        let out = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(out.shape(), &[3, 3, 3]);
        for oy in 0..3 {
            for ox in 0..3 {
                for c in 0..3 {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(x.data()[((oy * 2 + dy) * 6 + ox * 2 + dx) * 3 + c]);
                        }
                    }
                    assert_eq!(out.data()[(oy * 3 + ox) * 3 + c], m);
                }
            }
        }
    }

    #[test]
    fn small_ops() {
        let x = Tensor::from_vec(&[2], vec![-1.0f64, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0]);
        let c = Tensor::filled(&[3, 4, 2], 1.5f64);
        assert_eq!(global_avg_pool(&c).unwrap().data(), &[1.5, 1.5]);
        let mut eye = Tensor::zeros(&[2, 2]);
        eye.data_mut()[0] = 1.0;
        eye.data_mut()[3] = 1.0;
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[2])).unwrap(), x);
    }

    #[test]
    fn uniform_logits_give_ln3() {
        let (loss, p) = softmax_cross_entropy(&[0.2f64, 0.2, 0.2], 1);
        assert!((loss - 3f64.ln()).abs() < 1e-15);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let (l1, p1) = softmax_cross_entropy(&[0.1f64, 2.0, -1.0], 0);
        let (l2, p2) = softmax_cross_entropy(&[100.1f64, 102.0, 99.0], 0);
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_matches_wide_oracle() {
        // Oracle: p_i = 1 / Σ_j exp(z_j − z_i) with Kahan-compensated
        // summation, a different route from the max-subtracted kernel.
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..200 {
            let n = rng.gen_range(2..8);
            let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-30.0..30.0)).collect();
            let label = rng.gen_range(0..n);
            let (loss, p) = softmax_cross_entropy(&logits, label);
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for (i, &pi) in p.iter().enumerate() {
                // p_i = 1 / Σ_j exp(z_j − z_i)
                let mut s = 0.0f64;
                let mut comp = 0.0f64;
                for &zj in &logits {
                    let y = (zj - logits[i]).exp() - comp;
                    let t = s + y;
                    comp = (t - s) - y;
                    s = t;
                }
                let oracle = 1.0 / s;
                assert!((pi - oracle).abs() <= 1e-12 * oracle.max(1e-300) + 1e-300);
                if i == label {
                    assert!((loss - s.ln()).abs() < 1e-12);
                }
            }
        }
    }
}
