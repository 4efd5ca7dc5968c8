//! Central finite-difference checks of every analytic gradient.
//!
//! Each check draws a random instance, reduces the layer output to a
//! scalar with a fixed random projection and compares the analytic
//! gradient of that scalar against `(L(x+h) - L(x-h)) / 2h`, using
//!
//! ```text
//! rel = ||analytic - numeric|| / max(||analytic||, ||numeric||)
//! ```
//!
//! Inputs that feed ReLU or max pooling are drawn away from their kinks so
//! the finite difference does not straddle one.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{
    backbone_backward, forward_traced, BackboneConfig, BackboneParams, BackboneVariant,
};
use crate::error::Result;
use crate::geometry::BBox;
use crate::head::{
    head_backward, head_forward_traced, head_step, loss_cls_grad, loss_inst_grad, DropoutMasks,
    HeadConfig, HeadParams,
};
use crate::layers::{
    conv2d, conv2d_backward, linear, linear_backward, lrn, lrn_backward, maxpool2d,
    maxpool2d_backward, relu, relu_backward, Conv2dSpec, LrnSpec,
};
use crate::roi::{
    extract_batch_traced, roi_backward, stack_features, FeatureGeometry, RoiConfig, RoiMode,
};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` at `x`.
pub fn numeric_gradient(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    let mut p = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        p[i] = x[i] + h;
        let up = f(&p)?;
        p[i] = x[i] - h;
        let down = f(&p)?;
        p[i] = x[i];
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    /// Relative error of each instance.
    pub errors: Vec<f64>,
}

impl CheckOutcome {
    pub fn worst(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        !self.errors.is_empty() && self.worst() < tol
    }
}

pub const CHECK_NAMES: [&str; 11] = [
    "conv2d",
    "linear",
    "maxpool2d",
    "relu",
    "roi_align",
    "adaptive_roi_align",
    "backbone",
    "head",
    "loss_cls",
    "loss_inst",
    "lrn",
];

/// Runs every check for `instances` random instances each.
pub fn run_suite(instances: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    CHECK_NAMES
        .iter()
        .enumerate()
        .map(|(k, &name)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64 * 7919));
            let errors = (0..instances)
                .map(|_| check_instance(name, &mut rng))
                .collect::<Result<Vec<f64>>>()?;
            Ok(CheckOutcome { name, errors })
        })
        .collect()
}

fn check_instance<R: Rng + ?Sized>(name: &str, rng: &mut R) -> Result<f64> {
    match name {
        "conv2d" => check_conv(rng),
        "linear" => check_linear(rng),
        "maxpool2d" => check_maxpool(rng),
        "relu" => check_relu(rng),
        "roi_align" => check_roi(RoiMode::Align, rng),
        "adaptive_roi_align" => check_roi(RoiMode::AdaptiveAlign, rng),
        "backbone" => check_backbone(rng),
        "head" => check_head(rng),
        "loss_cls" => check_loss_cls(rng),
        "loss_inst" => check_loss_inst(rng),
        "lrn" => check_lrn(rng),
        other => unreachable!("unknown check {other}"),
    }
}

fn normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tensor<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), normal_vec(n, rng)).expect("shape matches data")
}

/// Distinct values at least 0.05 apart, shuffled, so max pooling has no
/// near-ties.
fn spread_tensor<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.05).collect();
    v.shuffle(rng);
    Tensor::new(shape.to_vec(), v).expect("shape matches data")
}

fn dot(a: &Tensor, b: &[f64]) -> f64 {
    a.data().iter().zip(b).map(|(x, y)| x * y).sum()
}

fn with_data(t: &Tensor, data: &[f64]) -> Result<Tensor> {
    Tensor::new(t.shape().to_vec(), data.to_vec())
}

fn flatten(ts: &[&Tensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

/// Splits `flat` back into tensors shaped like `like`.
fn unflatten(flat: &[f64], like: &[&Tensor]) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(like.len());
    let mut at = 0;
    for t in like {
        out.push(with_data(t, &flat[at..at + t.len()])?);
        at += t.len();
    }
    Ok(out)
}

fn check_conv<R: Rng + ?Sized>(rng: &mut R) -> Result<f64> {
    let c_in = rng.random_range(1..=3);
    let c_out = rng.random_range(1..=3);
    let k = rng.random_range(1..=3);
    let spec = Conv2dSpec::new(
        rng.random_range(1..=2),
        rng.random_range(1..=2),
        rng.random_range(0..=1),
    );
    let side = spec.effective_kernel(k) + rng.random_range(0..=4);
    let x = tensor(&[c_in, side, side], rng);
    let w = tensor(&[c_out, c_in, k, k], rng);
    let b = tensor(&[c_out], rng);
    let out = conv2d(&x, &w, &b, spec)?;
    let r = normal_vec(out.len(), rng);
    let g = conv2d_backward(&x, &w, spec, &with_data(&out, &r)?)?;
    let analytic = flatten(&[&g.d_input, &g.d_params[0], &g.d_params[1]]);
    let numeric = numeric_gradient(
        |p| {
            let t = unflatten(p, &[&x, &w, &b])?;
            Ok(dot(&conv2d(&t[0], &t[1], &t[2], spec)?, &r))
        },
        &flatten(&[&x, &w, &b]),
        STEP,
    )?;
    Ok(relative_error(&analytic, &numeric))
}

fn check_linear<R: Rng + ?Sized>(rng: &mut R) -> Result<f64> {
    let (n, fi, fo) = (
        rng.random_range(1..=4),
        rng.random_range(1..=6),
        rng.random_range(1..=5),
    );
    let x = tensor(&[n, fi], rng);
    let w = tensor(&[fo, fi], rng);
    let b = tensor(&[fo], rng);
    let r = normal_vec(n * fo, rng);
    let g = linear_backward(&x, &w, &Tensor::new([n, fo], r.clone())?)?;
    let analytic = flatten(&[&g.d_input, &g.d_params[0], &g.d_params[1]]);
    let numeric = numeric_gradient(
        |p| {
            let t = unflatten(p, &[&x, &w, &b])?;
            Ok(dot(&linear(&t[0], &t[1], &t[2])?, &r))
        },
        &flatten(&[&x, &w, &b]),
        STEP,
    )?;
    Ok(relative_error(&analytic, &numeric))
}

fn check_maxpool<R: Rng + ?Sized>(rng: &mut R) -> Result<f64> {
    let (k, s) = (rng.random_range(1..=3), rng.random_range(1..=2));
    let side = k + rng.random_range(0..=4);
    let x = spread_tensor(&[rng.random_range(1..=2), side, side], rng);
    let out = maxpool2d(&x, k, s)?;
    let r = normal_vec(out.output.len(), rng);
    let analytic = maxpool2d_backward(x.shape(), &out.argmax, &with_data(&out.output, &r)?)?;
    let numeric = numeric_gradient(
        |p| Ok(dot(&maxpool2d(&with_data(&x, p)?, k, s)?.output, &r)),
        x.data(),
        STEP,
    )?;
    Ok(relative_error(analytic.data(), &numeric))
}

/// Strong normalization so the cross-channel term is not negligible.
fn strong_lrn<R: Rng + ?Sized>(rng: &mut R) -> LrnSpec {
    LrnSpec {
        size: [1, 3, 5][rng.random_range(0..3)],
        alpha: rng.random_range(0.5..2.0),
        beta: rng.random_range(0.5..1.0),
        k: rng.random_range(1.0..2.0),
    }
}

fn check_lrn<R: Rng + ?Sized>(rng: &mut R) -> Result<f64> {
    let spec = strong_lrn(rng);
    let side = rng.random_range(1..=4);
    let x = tensor(&[rng.random_range(1..=7), side, side], rng);
    let r = normal_vec(x.len(), rng);
    let analytic = lrn_backward(&x, &spec, &with_data(&x, &r)?)?;
    let numeric = numeric_gradient(
        |p| Ok(dot(&lrn(&with_data(&x, p)?, &spec)?, &r)),
        x.data(),
        STEP,
    )?;
    Ok(relative_error(analytic.data(), &numeric))
}

fn check_relu<R: Rng + ?Sized>(rng: &mut R) -> Result<f64> {
    let n = rng.random_range(1..=20);
    let v: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    let x = Tensor::new([n], v)?;
    let r = normal_vec(n, rng);
    let analytic = relu_backward(&x, &Tensor::new([n], r.clone())?)?;
    let numeric = numeric_gradient(|p| Ok(dot(&relu(&with_data(&x, p)?), &r)), x.data(), STEP)?;
    Ok(relative_error(analytic.data(), &numeric))
}

/// Gradient of the pooled RoI features with respect to the feature map.
fn check_roi<R: Rng + ?Sized>(mode: RoiMode, rng: &mut R) -> Result<f64> {
    let (c, side) = (rng.random_range(1..=2), rng.random_range(8..=14));
    let map = tensor(&[c, side, side], rng);
    let geometry = FeatureGeometry {
        stride: 1.0,
        offset: 0.0,
    };
    let cfg = RoiConfig {
        align_bandwidth: rng.random_range(1..=2),
        samples_per_bin: rng.random_range(1..=2),
        ..RoiConfig::with_mode(mode)
    };
    let boxes: Vec<BBox> = (0..rng.random_range(1..=3))
        .map(|_| {
            let w = rng.random_range(2.0..side as f64 - 1.0);
            let h = rng.random_range(2.0..side as f64 - 1.0);
            let x = rng.random_range(0.0..side as f64 - 1.0 - w);
            let y = rng.random_range(0.0..side as f64 - 1.0 - h);
            BBox::from_xywh(x, y, w, h)
        })
        .collect::<Result<_>>()?;
    let (feats, traces) = extract_batch_traced(&map, &boxes, &geometry, &cfg)?;
    let stacked = stack_features(&feats)?;
    let r = normal_vec(stacked.len(), rng);
    let per = stacked.dim(1);
    let grads: Vec<Tensor> = feats
        .iter()
        .enumerate()
        .map(|(i, f)| with_data(&f.values, &r[i * per..(i + 1) * per]))
        .collect::<Result<_>>()?;
    let analytic = roi_backward(map.shape(), &traces, &grads, &cfg)?;
    let numeric = numeric_gradient(
        |p| {
            let (f, _) = extract_batch_traced(&with_data(&map, p)?, &boxes, &geometry, &cfg)?;
            Ok(dot(&stack_features(&f)?, &r))
        },
        map.data(),
        STEP,
    )?;
    Ok(relative_error(analytic.data(), &numeric))
}

/// All six tensors of a two-channel backbone, either variant, with or
/// without normalization.
fn check_backbone<R: Rng + ?Sized>(rng: &mut R) -> Result<f64> {
    let variant = if rng.random::<bool>() {
        BackboneVariant::DenseFm
    } else {
        BackboneVariant::Original
    };
    let mut cfg = BackboneConfig::new(variant, [2, 2, 2]);
    if rng.random::<bool>() {
        cfg.lrn = Some(strong_lrn(rng));
    }
    let side = cfg.receptive_field() + rng.random_range(0..=8);
    let mut params = BackboneParams::init(&cfg, rng);
    // Zero biases put every dead window exactly on the ReLU kink.
    for t in [
        &mut params.conv1_b,
        &mut params.conv2_b,
        &mut params.conv3_b,
    ] {
        for v in t.data_mut() {
            *v = rng.random_range(0.05..0.3);
        }
    }
    let x = tensor(&[3, side, side], rng);
    let (out, trace) = forward_traced(&x, &params, &cfg)?;
    let r = normal_vec(out.len(), rng);
    let grads = backbone_backward(&trace, &params, &cfg, &with_data(&out, &r)?)?;
    let names: Vec<&Tensor> = params.tensors().to_vec();
    let analytic = flatten(&grads.iter().collect::<Vec<_>>());
    let numeric = numeric_gradient(
        |p| {
            let t = unflatten(p, &names)?;
            let mut q = params.clone();
            for (dst, src) in q.tensors_mut().into_iter().zip(t) {
                *dst = src;
            }
            let (o, _) = forward_traced(&x, &q, &cfg)?;
            Ok(dot(&o, &r))
        },
        &flatten(&names),
        STEP,
    )?;
    Ok(relative_error(&analytic, &numeric))
}

fn small_head<R: Rng + ?Sized>(rng: &mut R) -> Result<(HeadParams, Tensor)> {
    let cfg = HeadConfig {
        in_features: rng.random_range(2..=6),
        width: rng.random_range(2..=5),
        domains: rng.random_range(1..=3),
    };
    let mut params = HeadParams::init(&cfg, rng)?;
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    let x = tensor(&[rng.random_range(1..=4), cfg.in_features], rng);
    Ok((params, x))
}

fn set_head(params: &HeadParams, flat: &[f64]) -> Result<HeadParams> {
    let mut q = params.clone();
    let like = params.tensors();
    let t = unflatten(flat, &like)?;
    for (dst, src) in q.tensors_mut().into_iter().zip(t) {
        *dst = src;
    }
    Ok(q)
}

/// fc4-6 parameters and input features, through the full multi-task loss.
fn check_head<R: Rng + ?Sized>(rng: &mut R) -> Result<f64> {
    let (params, x) = small_head(rng)?;
    let d = params.domains();
    let branches: Vec<usize> = (0..d).collect();
    let (scores, trace) = head_forward_traced(&x, &params, &branches)?;
    let r = normal_vec(scores.len(), rng);
    let (grads, d_x) = head_backward(&trace, &params, &with_data(&scores, &r)?)?;
    let mut analytic = flatten(&grads.iter().collect::<Vec<_>>());
    analytic.extend_from_slice(d_x.data());
    let np: usize = params.tensors().iter().map(|t| t.len()).sum();
    let mut start = flatten(&params.tensors());
    start.extend_from_slice(x.data());
    let numeric = numeric_gradient(
        |p| {
            let q = set_head(&params, &p[..np])?;
            let xs = with_data(&x, &p[np..])?;
            Ok(dot(&head_forward_traced(&xs, &q, &branches)?.0, &r))
        },
        &start,
        STEP,
    )?;
    let head_err = relative_error(&analytic, &numeric);

    // The combined objective through head_step, with the instance term and
    // dropout on.
    let labels: Vec<bool> = (0..x.dim(0)).map(|_| rng.random()).collect();
    let active = rng.random_range(0..d);
    let alpha = rng.random_range(0.05..1.0);
    let masks = DropoutMasks::sample(x.dim(0), params.width(), rng.random_range(0.0..0.5), rng)?;
    let masks = masks.as_ref();
    let step = head_step(&x, &labels, &params, active, &branches, alpha, 1.0, masks)?;
    let analytic = flatten(&step.grads.iter().collect::<Vec<_>>());
    let numeric = numeric_gradient(
        |p| {
            Ok(head_step(
                &x,
                &labels,
                &set_head(&params, p)?,
                active,
                &branches,
                alpha,
                1.0,
                masks,
            )?
            .loss
            .total)
        },
        &flatten(&params.tensors()),
        STEP,
    )?;
    Ok(head_err.max(relative_error(&analytic, &numeric)))
}

fn random_scores<R: Rng + ?Sized>(rng: &mut R) -> (Tensor, Vec<bool>, usize) {
    let n = rng.random_range(1..=6);
    let d = rng.random_range(1..=4);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
    labels[0] = true;
    let scores = Tensor::new(
        [n, 2, d],
        normal_vec(n * 2 * d, rng).iter().map(|v| 3.0 * v).collect(),
    )
    .expect("sizes");
    (scores, labels, rng.random_range(0..d))
}

fn check_loss_cls<R: Rng + ?Sized>(rng: &mut R) -> Result<f64> {
    let (s, labels, active) = random_scores(rng);
    let (_, g) = loss_cls_grad(&s, &labels, active)?;
    let numeric = numeric_gradient(
        |p| Ok(loss_cls_grad(&with_data(&s, p)?, &labels, active)?.0),
        s.data(),
        STEP,
    )?;
    Ok(relative_error(g.data(), &numeric))
}

fn check_loss_inst<R: Rng + ?Sized>(rng: &mut R) -> Result<f64> {
    let (s, labels, active) = random_scores(rng);
    let d = s.dim(2);
    let mut subset: Vec<usize> = (0..d)
        .filter(|&c| c != active && rng.random::<bool>())
        .collect();
    subset.push(active);
    let (_, g) = loss_inst_grad(&s, &labels, active, &subset)?;
    let numeric = numeric_gradient(
        |p| Ok(loss_inst_grad(&with_data(&s, p)?, &labels, active, &subset)?.0),
        s.data(),
        STEP,
    )?;
    Ok(relative_error(g.data(), &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_of_equal_vectors_is_zero() {
        assert_eq!(relative_error(&[1.0, -2.0], &[1.0, -2.0]), 0.0);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[0.0, 0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn numeric_gradient_of_quadratic() {
        let g = numeric_gradient(|p| Ok(p[0] * p[0] + 3.0 * p[1]), &[2.0, 5.0], 1e-5).unwrap();
        assert!((g[0] - 4.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }
}
