//! Forward and backward passes for the fixed layer set: 2-D convolution
//! (with stride, dilation and zero padding), max pooling, ReLU, affine and
//! cross-channel response normalization.

use crate::error::{Error, Result};
use crate::gemm::gemm;
use crate::tensor::{Scalar, Tensor};

/// Gradients of one layer: w.r.t. its input and each of its parameters.
#[derive(Debug, Clone)]
pub struct LayerGrad<T = f64> {
    pub d_input: Tensor<T>,
    pub d_params: Vec<Tensor<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            dilation: 1,
            padding: 0,
        }
    }
}

impl Conv2dSpec {
    pub fn new(stride: usize, dilation: usize, padding: usize) -> Self {
        Self {
            stride,
            dilation,
            padding,
        }
    }

    /// Extent covered by a kernel of `kernel` taps once dilated.
    pub fn effective_kernel(&self, kernel: usize) -> usize {
        kernel + (kernel - 1) * (self.dilation - 1)
    }

    /// Output extent along one axis, or `None` if the input is too small.
    pub fn output_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = input + 2 * self.padding;
        let eff = self.effective_kernel(kernel);
        (span >= eff).then(|| (span - eff) / self.stride + 1)
    }

    fn validate(&self) -> Result<()> {
        if self.stride < 1 || self.dilation < 1 {
            return Err(Error::Argument(format!(
                "stride and dilation must be >= 1, got stride {} dilation {}",
                self.stride, self.dilation
            )));
        }
        Ok(())
    }
}

struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &Conv2dSpec,
) -> Result<ConvGeom> {
    spec.validate()?;
    input.expect_rank(3, "conv2d input")?;
    weight.expect_rank(4, "conv2d weight")?;
    let (c_in, h, w) = (input.dim(0), input.dim(1), input.dim(2));
    let (c_out, kc, kh, kw) = (weight.dim(0), weight.dim(1), weight.dim(2), weight.dim(3));
    if kc != c_in {
        return Err(Error::Dimension(format!(
            "conv2d: weight expects {kc} input channels, input has {c_in}"
        )));
    }
    let ho = spec.output_extent(h, kh);
    let wo = spec.output_extent(w, kw);
    match (ho, wo) {
        (Some(ho), Some(wo)) => Ok(ConvGeom {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            ho,
            wo,
        }),
        _ => Err(Error::Dimension(format!(
            "conv2d: input {h}x{w} (padding {}) smaller than dilated kernel {}x{}",
            spec.padding,
            spec.effective_kernel(kh),
            spec.effective_kernel(kw)
        ))),
    }
}

/// Column matrix `[c_in·kh·kw, ho·wo]`; out-of-image taps read as zero.
fn im2col<T: Scalar>(input: &[T], g: &ConvGeom, spec: &Conv2dSpec) -> Vec<T> {
    im2col_rows(input, g, spec, 0, g.ho)
}

/// Columns for output rows `oy0..oy1` only.
fn im2col_rows<T: Scalar>(
    input: &[T],
    g: &ConvGeom,
    spec: &Conv2dSpec,
    oy0: usize,
    oy1: usize,
) -> Vec<T> {
    let n = (oy1 - oy0) * g.wo;
    let mut col = vec![T::ZERO; g.c_in * g.kh * g.kw * n];
    let pad = spec.padding as isize;
    for c in 0..g.c_in {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                for oy in oy0..oy1 {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let dst = &mut dst[(oy - oy0) * g.wo..(oy - oy0 + 1) * g.wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * spec.stride + kx * spec.dilation) as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Output positions per im2col tile in the forward pass; keeps the column
/// buffer cache-sized.
const CONV_TILE: usize = 1024;

fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, spec: &Conv2dSpec) -> Vec<T> {
    let n = g.ho * g.wo;
    let mut out = vec![T::ZERO; g.c_in * g.h * g.w];
    let pad = spec.padding as isize;
    for c in 0..g.c_in {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &col[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.wo {
                        let ix = (ox * spec.stride + kx * spec.dilation) as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            plane[iy as usize * g.w + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Cross-correlation of `[C_in,H,W]` with `[C_out,C_in,kH,kW]` plus bias.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: Conv2dSpec,
) -> Result<Tensor<T>> {
    let g = conv_geometry(input, weight, &spec)?;
    bias.expect_shape(&[g.c_out], "conv2d bias")?;
    let n = g.ho * g.wo;
    let k = g.c_in * g.kh * g.kw;
    let mut out = vec![T::ZERO; g.c_out * n];
    let rows_per_tile = (CONV_TILE / g.wo).max(1);
    let mut tile = Vec::new();
    for oy0 in (0..g.ho).step_by(rows_per_tile) {
        let oy1 = (oy0 + rows_per_tile).min(g.ho);
        let tn = (oy1 - oy0) * g.wo;
        let col = im2col_rows(input.data(), &g, &spec, oy0, oy1);
        tile.resize(g.c_out * tn, T::ZERO);
        gemm(g.c_out, tn, k, weight.data(), &col, &mut tile);
        for (dst, src) in out.chunks_exact_mut(n).zip(tile.chunks_exact(tn)) {
            dst[oy0 * g.wo..oy1 * g.wo].copy_from_slice(src);
        }
    }
    for (row, &b) in out.chunks_exact_mut(n).zip(bias.data()) {
        for v in row {
            *v += b;
        }
    }
    let out = Tensor::new([g.c_out, g.ho, g.wo], out)?;
    out.ensure_finite("conv2d")?;
    Ok(out)
}

/// Gradients of [`conv2d`] w.r.t. input, weight and bias (in that order in
/// `d_params`: weight, bias).
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: Conv2dSpec,
    grad_out: &Tensor<T>,
) -> Result<LayerGrad<T>> {
    let (d_params, d_input) = conv2d_backward_impl(input, weight, spec, grad_out, true)?;
    Ok(LayerGrad {
        d_input: d_input.expect("input gradient requested"),
        d_params,
    })
}

/// Weight and bias gradients only; skips the input gradient.
pub(crate) fn conv2d_backward_params<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: Conv2dSpec,
    grad_out: &Tensor<T>,
) -> Result<Vec<Tensor<T>>> {
    Ok(conv2d_backward_impl(input, weight, spec, grad_out, false)?.0)
}

#[allow(clippy::type_complexity)]
fn conv2d_backward_impl<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: Conv2dSpec,
    grad_out: &Tensor<T>,
    want_input: bool,
) -> Result<(Vec<Tensor<T>>, Option<Tensor<T>>)> {
    let g = conv_geometry(input, weight, &spec)?;
    grad_out.expect_shape(&[g.c_out, g.ho, g.wo], "conv2d upstream gradient")?;
    let n = g.ho * g.wo;
    let k = g.c_in * g.kh * g.kw;

    let col = Tensor::new([k, n], im2col(input.data(), &g, &spec))?;
    let col_t = col.transpose()?;
    let mut d_weight = vec![T::ZERO; g.c_out * k];
    gemm(g.c_out, k, n, grad_out.data(), col_t.data(), &mut d_weight);

    let d_bias: Vec<T> = grad_out
        .data()
        .chunks_exact(n)
        .map(|row| row.iter().fold(T::ZERO, |s, &v| s + v))
        .collect();

    let d_input = if want_input {
        let w_t = Tensor::new([g.c_out, k], weight.data().to_vec())?.transpose()?;
        let mut d_col = vec![T::ZERO; k * n];
        gemm(k, n, g.c_out, w_t.data(), grad_out.data(), &mut d_col);
        Some(Tensor::new([g.c_in, g.h, g.w], col2im(&d_col, &g, &spec))?)
    } else {
        None
    };

    Ok((
        vec![
            Tensor::new(weight.shape().to_vec(), d_weight)?,
            Tensor::new([g.c_out], d_bias)?,
        ],
        d_input,
    ))
}

/// Max-pool result with, for each output cell, the flat input index that won.
#[derive(Debug, Clone)]
pub struct MaxPoolOutput<T = f64> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

/// Windowed maximum without padding. Ties go to the lowest flat index.
pub fn maxpool2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: usize,
    stride: usize,
) -> Result<MaxPoolOutput<T>> {
    input.expect_rank(3, "maxpool2d input")?;
    if kernel < 1 || stride < 1 {
        return Err(Error::Argument(
            "maxpool2d kernel and stride must be >= 1".into(),
        ));
    }
    let (c, h, w) = (input.dim(0), input.dim(1), input.dim(2));
    if kernel > h || kernel > w {
        return Err(Error::Dimension(format!(
            "maxpool2d: kernel {kernel} exceeds input {h}x{w}"
        )));
    }
    let ho = (h - kernel) / stride + 1;
    let wo = (w - kernel) / stride + 1;
    let src = input.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut argmax = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best_idx = base + oy * stride * w + ox * stride;
                let mut best = src[best_idx];
                for ky in 0..kernel {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..kernel {
                        if src[row + kx] > best {
                            best = src[row + kx];
                            best_idx = row + kx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok(MaxPoolOutput {
        output: Tensor::new([c, ho, wo], out)?,
        argmax,
    })
}

/// Routes each upstream gradient to the input position that won its window.
pub fn maxpool2d_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::Dimension(format!(
            "maxpool2d_backward: {} gradients for {} windows",
            grad_out.len(),
            argmax.len()
        )));
    }
    let mut d = Tensor::zeros(input_shape.to_vec());
    let dd = d.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        if idx >= dd.len() {
            return Err(Error::Dimension(
                "maxpool2d_backward: argmax out of range".into(),
            ));
        }
        dd[idx] += g;
    }
    Ok(d)
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// Gradient mask `x > 0`; the gradient at exactly zero is zero.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.expect_shape(input.shape(), "relu upstream gradient")?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::ZERO { g } else { T::ZERO })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

fn linear_dims<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize)> {
    input.expect_rank(2, "linear input")?;
    weight.expect_rank(2, "linear weight")?;
    let (n, f_in) = (input.dim(0), input.dim(1));
    let f_out = weight.dim(0);
    if weight.dim(1) != f_in {
        return Err(Error::Dimension(format!(
            "linear: weight expects {} features, input has {f_in}",
            weight.dim(1)
        )));
    }
    Ok((n, f_in, f_out))
}

/// Row-wise affine map `[N,F_in] -> [N,F_out]`.
pub fn linear<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, f_in, f_out) = linear_dims(input, weight)?;
    bias.expect_shape(&[f_out], "linear bias")?;
    let w_t = weight.transpose()?;
    let mut out = vec![T::ZERO; n * f_out];
    gemm(n, f_out, f_in, input.data(), w_t.data(), &mut out);
    for row in out.chunks_exact_mut(f_out) {
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    let out = Tensor::new([n, f_out], out)?;
    out.ensure_finite("linear")?;
    Ok(out)
}

pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<LayerGrad<T>> {
    let (n, f_in, f_out) = linear_dims(input, weight)?;
    grad_out.expect_shape(&[n, f_out], "linear upstream gradient")?;
    let mut d_input = vec![T::ZERO; n * f_in];
    gemm(n, f_in, f_out, grad_out.data(), weight.data(), &mut d_input);
    let g_t = grad_out.transpose()?;
    let mut d_weight = vec![T::ZERO; f_out * f_in];
    gemm(f_out, f_in, n, g_t.data(), input.data(), &mut d_weight);
    let mut d_bias = vec![T::ZERO; f_out];
    for row in grad_out.data().chunks_exact(f_out) {
        for (d, &g) in d_bias.iter_mut().zip(row) {
            *d += g;
        }
    }
    Ok(LayerGrad {
        d_input: Tensor::new([n, f_in], d_input)?,
        d_params: vec![
            Tensor::new([f_out, f_in], d_weight)?,
            Tensor::new([f_out], d_bias)?,
        ],
    })
}

/// Cross-channel local response normalization:
/// `y_c = x_c / (k + alpha / size * sum x_j^2)^beta`, the sum running over
/// the `size` channels centered on `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrnSpec {
    pub size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
}

impl Default for LrnSpec {
    fn default() -> Self {
        Self {
            size: 5,
            alpha: 1e-4,
            beta: 0.75,
            k: 2.0,
        }
    }
}

impl LrnSpec {
    fn window(&self, c: usize, channels: usize) -> std::ops::Range<usize> {
        let half = self.size / 2;
        c.saturating_sub(half)..(c + half + 1).min(channels)
    }
}

/// Denominator base `k + alpha / size * sum x_j^2` for every element.
fn lrn_scale<T: Scalar>(input: &Tensor<T>, spec: &LrnSpec) -> Result<Vec<f64>> {
    input.expect_rank(3, "lrn input")?;
    let (c, plane) = (input.dim(0), input.dim(1) * input.dim(2));
    let x = input.data();
    let mut scale = vec![spec.k; c * plane];
    let a = spec.alpha / spec.size as f64;
    for ch in 0..c {
        let dst = &mut scale[ch * plane..(ch + 1) * plane];
        for j in spec.window(ch, c) {
            for (s, &v) in dst.iter_mut().zip(&x[j * plane..(j + 1) * plane]) {
                let v = v.to_f64();
                *s += a * v * v;
            }
        }
    }
    Ok(scale)
}

pub fn lrn<T: Scalar>(input: &Tensor<T>, spec: &LrnSpec) -> Result<Tensor<T>> {
    let scale = lrn_scale(input, spec)?;
    let data = input
        .data()
        .iter()
        .zip(&scale)
        .map(|(&v, &s)| T::from_f64(v.to_f64() * s.powf(-spec.beta)))
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

pub fn lrn_backward(input: &Tensor, spec: &LrnSpec, grad_out: &Tensor) -> Result<Tensor> {
    grad_out.expect_shape(input.shape(), "lrn upstream gradient")?;
    let scale = lrn_scale(input, spec)?;
    let (c, plane) = (input.dim(0), input.dim(1) * input.dim(2));
    let (x, g) = (input.data(), grad_out.data());
    // t_c = g_c * x_c * s_c^(-beta-1), shared by every channel in c's window.
    let t: Vec<f64> = (0..x.len())
        .map(|i| g[i] * x[i] * scale[i].powf(-spec.beta - 1.0))
        .collect();
    let coef = 2.0 * spec.alpha * spec.beta / spec.size as f64;
    let mut d: Vec<f64> = (0..x.len())
        .map(|i| g[i] * scale[i].powf(-spec.beta))
        .collect();
    for ch in 0..c {
        // The window relation is symmetric, so j sees c exactly when c sees j.
        for j in spec.window(ch, c) {
            for p in 0..plane {
                d[ch * plane + p] -= coef * x[ch * plane + p] * t[j * plane + p];
            }
        }
    }
    Tensor::new(input.shape().to_vec(), d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn lrn_by_hand() {
        // Two channels, one pixel, window 3 covers both.
        let spec = LrnSpec {
            size: 3,
            alpha: 3.0,
            beta: 0.5,
            k: 1.0,
        };
        let y = lrn(&t(&[2, 1, 1], vec![1.0, 2.0]), &spec).unwrap();
        // s = 1 + 3/3 * (1 + 4) = 6 for both channels.
        let s = 6f64.sqrt();
        assert!((y.data()[0] - 1.0 / s).abs() < 1e-15);
        assert!((y.data()[1] - 2.0 / s).abs() < 1e-15);
    }

    #[test]
    fn lrn_window_stays_local() {
        let spec = LrnSpec {
            size: 1,
            alpha: 1.0,
            beta: 1.0,
            k: 1.0,
        };
        let y = lrn(&t(&[3, 1, 1], vec![1.0, 2.0, 3.0]), &spec).unwrap();
        for (v, e) in y.data().iter().zip([0.5, 0.4, 0.3]) {
            assert!((v - e).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::uniform([1, 5, 6], 1.0, &mut rng);
        let w = t(&[1, 1, 1, 1], vec![1.0]);
        let b = t(&[1], vec![0.0]);
        let y = conv2d(&x, &w, &b, Conv2dSpec::default()).unwrap();
        assert_eq!(y, x);
        let g = conv2d_backward(&x, &w, Conv2dSpec::default(), &x).unwrap();
        assert_eq!(g.d_input, x);
    }

    #[test]
    fn all_ones_kernel_on_constant_input() {
        let x = Tensor::full([1, 6, 6], 2.5);
        let w = Tensor::full([1, 1, 3, 3], 1.0);
        let b = t(&[1], vec![0.0]);
        let y = conv2d(&x, &w, &b, Conv2dSpec::default()).unwrap();
        assert_eq!(y.shape(), &[1, 4, 4]);
        assert!(y.data().iter().all(|&v| v == 22.5));
    }

    #[test]
    fn dilation_three_on_seven_by_seven() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::uniform([1, 7, 7], 1.0, &mut rng);
        let w = Tensor::<f64>::uniform([1, 1, 3, 3], 1.0, &mut rng);
        let b = t(&[1], vec![0.0]);
        let y = conv2d(&x, &w, &b, Conv2dSpec::new(1, 3, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        // direct enumeration of the taps at {0,3,6} x {0,3,6}
        let mut expected = 0.0;
        for ky in 0..3 {
            for kx in 0..3 {
                expected += w.data()[ky * 3 + kx] * x.data()[(3 * ky) * 7 + 3 * kx];
            }
        }
        assert!((y.data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn output_extent_formula() {
        let spec = Conv2dSpec::new(2, 1, 1);
        assert_eq!(spec.output_extent(25, 5), Some(12));
        assert_eq!(Conv2dSpec::new(1, 3, 0).output_extent(6, 3), None);
        assert_eq!(Conv2dSpec::new(1, 3, 0).output_extent(7, 3), Some(1));
    }

    #[test]
    fn conv_errors() {
        let x = Tensor::<f64>::zeros([2, 5, 5]);
        let w = Tensor::<f64>::zeros([1, 3, 3, 3]);
        let b = Tensor::<f64>::zeros([1]);
        assert!(matches!(
            conv2d(&x, &w, &b, Conv2dSpec::default()),
            Err(Error::Dimension(_))
        ));
        let w = Tensor::<f64>::zeros([1, 2, 3, 3]);
        assert!(matches!(
            conv2d(&x, &w, &b, Conv2dSpec::new(0, 1, 0)),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            conv2d(&x, &w, &b, Conv2dSpec::new(1, 3, 0)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::uniform([2, 5, 5], 1.0, &mut rng);
        let w = Tensor::<f64>::uniform([3, 2, 3, 3], 1.0, &mut rng);
        let g = conv2d_backward(&x, &w, Conv2dSpec::default(), &Tensor::zeros([3, 3, 3])).unwrap();
        assert!(g.d_input.data().iter().all(|&v| v == 0.0));
        assert!(g
            .d_params
            .iter()
            .all(|p| p.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn maxpool_examples() {
        let x = t(&[1, 2, 2], vec![1., 2., 3., 4.]);
        let p = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(p.output.data(), &[4.0]);
        assert_eq!(p.argmax, vec![3]);

        let c = Tensor::full([2, 4, 4], 1.5);
        let p = maxpool2d(&c, 2, 2).unwrap();
        assert!(p.output.data().iter().all(|&v| v == 1.5));
        // first index of each window
        assert_eq!(p.argmax, vec![0, 2, 8, 10, 16, 18, 24, 26]);

        assert!(matches!(maxpool2d(&x, 3, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn maxpool_matches_window_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f64>::uniform([2, 6, 6], 1.0, &mut rng);
        let p = maxpool2d(&x, 3, 3).unwrap();
        for c in 0..2 {
            for oy in 0..2 {
                for ox in 0..2 {
                    let mut m = f64::MIN;
                    for y in oy * 3..oy * 3 + 3 {
                        for xx in ox * 3..ox * 3 + 3 {
                            m = m.max(x.data()[c * 36 + y * 6 + xx]);
                        }
                    }
                    assert_eq!(p.output.data()[c * 4 + oy * 2 + ox], m);
                }
            }
        }
        let g = maxpool2d_backward(x.shape(), &p.argmax, &Tensor::full([2, 2, 2], 1.0)).unwrap();
        assert_eq!(g.data().iter().filter(|&&v| v != 0.0).count(), 8);
    }

    #[test]
    fn relu_examples() {
        let neg = t(&[3], vec![-1., -2., -0.5]);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let pos = t(&[3], vec![1., 2., 0.5]);
        assert_eq!(relu(&pos), pos);
        let g = relu_backward(&t(&[3], vec![-1., 0., 2.]), &t(&[3], vec![5., 5., 5.])).unwrap();
        assert_eq!(g.data(), &[0., 0., 5.]);
    }

    #[test]
    fn linear_examples() {
        let x = t(&[2, 3], vec![1., 2., 3., 4., 5., 6.]);
        let eye = t(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let y = linear(&x, &eye, &Tensor::zeros([3])).unwrap();
        assert_eq!(y, x);
        let b = t(&[2], vec![0.5, -1.5]);
        let y = linear(&x, &Tensor::zeros([2, 3]), &b).unwrap();
        assert_eq!(y.data(), &[0.5, -1.5, 0.5, -1.5]);
        assert!(linear(&x, &Tensor::zeros([2, 4]), &b).is_err());
    }
}
