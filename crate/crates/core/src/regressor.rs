//! Linear bounding-box regression on flattened RoI features.
//!
//! Targets are the usual center-size offsets of a ground truth `g` from a
//! proposal `p`:
//!
//! ```text
//! dx = (gx - px) / pw    dy = (gy - py) / ph
//! dw = ln(gw / pw)       dh = ln(gh / ph)
//! ```
//!
//! Weights come from ridge regression on centered data, so the bias is
//! not shrunk and a large `lambda` drives predictions to the mean target.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::tensor::Tensor;

pub const DEFAULT_LAMBDA: f64 = 1000.0;
/// Training pairs must overlap the ground truth at least this much.
pub const TRAIN_IOU: f64 = 0.6;
pub const MIN_PAIRS: usize = 8;
/// Features are rescaled so their mean L2 norm is this value before
/// fitting, which keeps `lambda` meaningful across feature widths.
pub const FEATURE_NORM: f64 = 20.0;

pub fn encode_targets(p: &BBox, g: &BBox) -> [f64; 4] {
    let (px, py, pw, ph) = p.to_center_size();
    let (gx, gy, gw, gh) = g.to_center_size();
    [
        (gx - px) / pw,
        (gy - py) / ph,
        (gw / pw).ln(),
        (gh / ph).ln(),
    ]
}

pub fn decode_targets(p: &BBox, t: [f64; 4]) -> BBox {
    let (px, py, pw, ph) = p.to_center_size();
    let (cx, cy, w, h) = (
        px + t[0] * pw,
        py + t[1] * ph,
        pw * t[2].exp(),
        ph * t[3].exp(),
    );
    BBox {
        x1: cx - w / 2.0,
        y1: cy - h / 2.0,
        x2: cx + w / 2.0,
        y2: cy + h / 2.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorModel {
    /// `[4, F]`, applied to rescaled features.
    pub weights: Tensor,
    pub bias: [f64; 4],
    pub feature_scale: f64,
    pub lambda: f64,
}

impl RegressorModel {
    pub fn feature_len(&self) -> usize {
        self.weights.dim(1)
    }

    pub fn predict(&self, feature: &[f64]) -> Result<[f64; 4]> {
        let f = self.feature_len();
        if feature.len() != f {
            return Err(Error::Dimension(format!(
                "regressor expects {f} features, got {}",
                feature.len()
            )));
        }
        let w = self.weights.data();
        let mut out = self.bias;
        for (k, o) in out.iter_mut().enumerate() {
            let row = &w[k * f..(k + 1) * f];
            *o += self.feature_scale * row.iter().zip(feature).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(out)
    }

    /// Moves `b` by the predicted offsets.
    pub fn apply(&self, feature: &[f64], b: &BBox) -> Result<BBox> {
        Ok(decode_targets(b, self.predict(feature)?))
    }
}

/// Closed-form ridge fit of features `[N, F]` (one row per box) onto the
/// offsets from each box to `gt`.
pub fn fit_regressor(
    features: &Tensor,
    boxes: &[BBox],
    gt: &BBox,
    lambda: f64,
) -> Result<RegressorModel> {
    features.expect_rank(2, "regressor features")?;
    let (n, f) = (features.dim(0), features.dim(1));
    if boxes.len() != n {
        return Err(Error::Dimension(format!(
            "{n} feature rows for {} boxes",
            boxes.len()
        )));
    }
    if n < MIN_PAIRS {
        return Err(Error::Argument(format!(
            "need at least {MIN_PAIRS} training pairs, got {n}"
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Argument(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    if let Some(i) = boxes.iter().position(|b| iou(b, gt) < TRAIN_IOU) {
        return Err(Error::Argument(format!(
            "training box {i} overlaps the ground truth below {TRAIN_IOU}"
        )));
    }
    let x = features.data();
    let mean_norm = x
        .chunks_exact(f)
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum::<f64>()
        / n as f64;
    let scale = if mean_norm > 0.0 {
        FEATURE_NORM / mean_norm
    } else {
        1.0
    };

    let targets: Vec<[f64; 4]> = boxes.iter().map(|b| encode_targets(b, gt)).collect();
    let mut mx = vec![0.0; f];
    for row in x.chunks_exact(f) {
        for (m, v) in mx.iter_mut().zip(row) {
            *m += v * scale / n as f64;
        }
    }
    let mut mt = [0.0; 4];
    for t in &targets {
        for k in 0..4 {
            mt[k] += t[k] / n as f64;
        }
    }
    let xc = DMatrix::from_fn(n, f, |i, j| x[i * f + j] * scale - mx[j]);
    let tc = DMatrix::from_fn(n, 4, |i, k| targets[i][k] - mt[k]);
    let mut a = xc.transpose() * &xc;
    for j in 0..f {
        a[(j, j)] += lambda;
    }
    let rhs = xc.transpose() * tc;
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Numeric("regressor normal matrix is singular".into()))?;
    let w = chol.solve(&rhs);
    let mut weights = vec![0.0; 4 * f];
    let mut bias = mt;
    for k in 0..4 {
        let col = w.column(k);
        let dot: f64 = DVector::from_column_slice(&mx).dot(&col);
        bias[k] -= dot;
        for j in 0..f {
            weights[k * f + j] = col[j];
        }
    }
    let weights = Tensor::new([4, f], weights)?;
    if !weights.all_finite() || bias.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numeric(
            "regressor fit produced non-finite weights".into(),
        ));
    }
    Ok(RegressorModel {
        weights,
        bias,
        feature_scale: scale,
        lambda,
    })
}
