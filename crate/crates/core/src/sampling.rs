//! IoU-gated box sampling around a reference box.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

/// Draws rejected in a row before sampling gives up.
pub const MAX_CONSECUTIVE_REJECTIONS: usize = 10_000;

/// Acceptance rule on the IoU with the reference box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IouGate {
    AtLeast(f64),
    Above(f64),
    Below(f64),
}

impl IouGate {
    pub fn accepts(&self, v: f64) -> bool {
        match *self {
            IouGate::AtLeast(t) => v >= t,
            IouGate::Above(t) => v > t,
            IouGate::Below(t) => v < t,
        }
    }
}

/// Proposal perturbation in `(cx, cy, log scale)`.
///
/// Translations are in units of the reference width (x) and height (y);
/// `log_scale` is the standard deviation of the natural-log size factor
/// applied to both sides. With probability `uniform_fraction` the center
/// is instead drawn uniformly over the frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalDistribution {
    pub trans: f64,
    pub log_scale: f64,
    pub uniform_fraction: f64,
}

impl ProposalDistribution {
    pub const POSITIVE: Self = Self {
        trans: 0.1,
        log_scale: 0.2,
        uniform_fraction: 0.0,
    };
    pub const NEGATIVE: Self = Self {
        trans: 0.5,
        log_scale: 0.5,
        uniform_fraction: 0.5,
    };
    /// Training pairs for the bounding-box regressor.
    pub const REGRESSION: Self = Self {
        trans: 0.3,
        log_scale: 0.3,
        uniform_fraction: 0.0,
    };

    pub fn draw<R: Rng + ?Sized>(&self, reference: &BBox, frame: &BBox, rng: &mut R) -> BBox {
        let (cx, cy, w, h) = reference.to_center_size();
        let n = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
        let (cx, cy) = if self.uniform_fraction > 0.0 && rng.random::<f64>() < self.uniform_fraction
        {
            (
                rng.random_range(frame.x1..frame.x2),
                rng.random_range(frame.y1..frame.y2),
            )
        } else {
            (cx + self.trans * w * n(rng), cy + self.trans * h * n(rng))
        };
        let s = (self.log_scale * n(rng)).exp();
        BBox {
            x1: cx - w * s / 2.0,
            y1: cy - h * s / 2.0,
            x2: cx + w * s / 2.0,
            y2: cy + h * s / 2.0,
        }
        .clamp_inside(frame)
    }
}

/// Rejection-samples `count` boxes whose IoU with `reference` passes
/// `gate`. Boxes are clamped inside `frame` before the gate is applied.
pub fn sample_boxes<R: Rng + ?Sized>(
    reference: &BBox,
    frame: &BBox,
    count: usize,
    gate: IouGate,
    dist: &ProposalDistribution,
    rng: &mut R,
) -> Result<Vec<BBox>> {
    if count == 0 {
        return Err(Error::Argument("sample count must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(count);
    let (mut draws, mut misses) = (0usize, 0usize);
    while out.len() < count {
        let b = dist.draw(reference, frame, rng);
        draws += 1;
        if b.width() > 0.0 && b.height() > 0.0 && gate.accepts(iou(&b, reference)) {
            out.push(b);
            misses = 0;
        } else {
            misses += 1;
            if misses >= MAX_CONSECUTIVE_REJECTIONS {
                return Err(Error::SamplingExhausted {
                    draws,
                    accepted: out.len(),
                    requested: count,
                });
            }
        }
    }
    Ok(out)
}

/// `k` distinct indices from `0..n` (all of them, shuffled, if `k >= n`).
pub fn choose_distinct<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    rand::seq::index::sample(rng, n, k.min(n)).into_vec()
}

/// `k` indices from `0..n`: distinct when `n >= k`, otherwise every index
/// once plus uniform draws with replacement to make up the rest.
pub fn choose_fill<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    if n >= k {
        return choose_distinct(n, k, rng);
    }
    let mut v: Vec<usize> = (0..n).collect();
    v.extend((n..k).map(|_| rng.random_range(0..n)));
    v
}
