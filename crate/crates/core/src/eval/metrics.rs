//! Success and precision curves over a tracked sequence.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

pub const SUCCESS_STEPS: usize = 101;
pub const PRECISION_STEPS: usize = 51;
pub const PRECISION_AT: usize = 20;

/// IoU thresholds `0, 0.01, ..., 1`.
pub fn success_thresholds() -> Vec<f64> {
    (0..SUCCESS_STEPS).map(|i| i as f64 / 100.0).collect()
}

/// Center-error thresholds `0, 1, ..., 50` pixels.
pub fn precision_thresholds() -> Vec<f64> {
    (0..PRECISION_STEPS).map(|i| i as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// Fraction of frames with IoU at or above each success threshold.
    pub success: Vec<f64>,
    /// Fraction of frames with center error at or below each precision
    /// threshold.
    pub precision: Vec<f64>,
    /// Mean of the success curve.
    pub auc: f64,
    pub precision_20: f64,
    pub frames: usize,
}

/// Curves from per-frame IoU and center errors.
pub fn curves(ious: &[f64], errors: &[f64]) -> Result<EvalResult> {
    if ious.len() != errors.len() {
        return Err(Error::Argument(format!(
            "{} IoUs for {} center errors",
            ious.len(),
            errors.len()
        )));
    }
    if ious.is_empty() {
        return Err(Error::Argument("cannot evaluate an empty sequence".into()));
    }
    let n = ious.len() as f64;
    let success: Vec<f64> = success_thresholds()
        .iter()
        .map(|&t| ious.iter().filter(|&&v| v >= t).count() as f64 / n)
        .collect();
    let precision: Vec<f64> = precision_thresholds()
        .iter()
        .map(|&t| errors.iter().filter(|&&e| e <= t).count() as f64 / n)
        .collect();
    Ok(EvalResult {
        auc: success.iter().sum::<f64>() / SUCCESS_STEPS as f64,
        precision_20: precision[PRECISION_AT],
        success,
        precision,
        frames: ious.len(),
    })
}

pub fn evaluate(tracked: &[BBox], groundtruth: &[BBox]) -> Result<EvalResult> {
    if tracked.len() != groundtruth.len() {
        return Err(Error::Argument(format!(
            "{} tracked boxes for {} ground-truth boxes",
            tracked.len(),
            groundtruth.len()
        )));
    }
    let ious: Vec<f64> = tracked
        .iter()
        .zip(groundtruth)
        .map(|(a, b)| iou(a, b))
        .collect();
    let errors: Vec<f64> = tracked
        .iter()
        .zip(groundtruth)
        .map(|(a, b)| a.center_distance(b))
        .collect();
    curves(&ious, &errors)
}

/// Frame-weighted pooling of several results, as for a whole suite.
pub fn pooled(results: &[EvalResult]) -> Result<EvalResult> {
    let total: usize = results.iter().map(|r| r.frames).sum();
    if total == 0 {
        return Err(Error::Argument("no frames to pool".into()));
    }
    let mix = |get: fn(&EvalResult) -> &Vec<f64>, len: usize| -> Vec<f64> {
        (0..len)
            .map(|i| {
                results
                    .iter()
                    .map(|r| get(r)[i] * r.frames as f64)
                    .sum::<f64>()
                    / total as f64
            })
            .collect()
    };
    let success = mix(|r| &r.success, SUCCESS_STEPS);
    let precision = mix(|r| &r.precision, PRECISION_STEPS);
    Ok(EvalResult {
        auc: success.iter().sum::<f64>() / SUCCESS_STEPS as f64,
        precision_20: precision[PRECISION_AT],
        success,
        precision,
        frames: total,
    })
}

impl EvalResult {
    /// Plain-text report: summary lines followed by both curves.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frames = {}", self.frames);
        let _ = writeln!(s, "auc = {:.6}", self.auc);
        let _ = writeln!(s, "precision@{PRECISION_AT} = {:.6}", self.precision_20);
        let _ = writeln!(s, "# success: iou_threshold fraction");
        for (t, v) in success_thresholds().iter().zip(&self.success) {
            let _ = writeln!(s, "success {t:.2} {v:.6}");
        }
        let _ = writeln!(s, "# precision: pixel_threshold fraction");
        for (t, v) in precision_thresholds().iter().zip(&self.precision) {
            let _ = writeln!(s, "precision {t:.0} {v:.6}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64) -> BBox {
        BBox::from_xywh(x, y, 10.0, 10.0).unwrap()
    }

    #[test]
    fn perfect_tracking() {
        let gt = vec![bx(0.0, 0.0), bx(5.0, 3.0)];
        let r = evaluate(&gt, &gt).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.precision_20, 1.0);
    }

    #[test]
    fn disjoint_at_distance_100() {
        let gt = vec![bx(0.0, 0.0); 4];
        let tr = vec![bx(100.0, 0.0); 4];
        let r = evaluate(&tr, &gt).unwrap();
        assert_eq!(r.success[0], 1.0);
        assert!(r.success[1..].iter().all(|&v| v == 0.0));
        assert_eq!(r.auc, 1.0 / 101.0);
        assert_eq!(r.precision_20, 0.0);
    }

    #[test]
    fn three_frame_mix() {
        let r = curves(&[1.0, 0.5, 0.0], &[0.0, 0.0, 0.0]).unwrap();
        assert!((r.success[40] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch() {
        assert!(evaluate(&[bx(0.0, 0.0)], &[]).is_err());
    }
}
