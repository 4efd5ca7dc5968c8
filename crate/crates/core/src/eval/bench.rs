//! Shared-map RoI extraction versus one backbone forward per candidate.
//!
//! Both paths run in `f32` on the same frame and candidate set and produce
//! one pooled feature per candidate:
//!
//! * shared: crop the union of all candidates once, one backbone forward,
//!   then RoI extraction for every box;
//! * per-candidate: for each box, crop around it alone (at least the input
//!   side), run the backbone and extract that single box.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::backbone::{forward_features, prepare_input, BackboneParams, CropOptions};
use crate::error::{Error, Result};
use crate::eval::synth::{generate_sequence, SyntheticSpec};
use crate::geometry::BBox;
use crate::network::NetworkConfig;
use crate::roi::{extract_batch, stack_features};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub network: NetworkConfig,
    pub n_rois: usize,
    /// Timed repetitions of each path.
    pub reps: usize,
    /// Untimed repetitions run first.
    pub warmup: usize,
    pub seed: u64,
    pub frame: SyntheticSpec,
    /// Candidate center spread in units of the mean target side.
    pub trans_sigma: f64,
}

impl BenchConfig {
    pub fn new(network: NetworkConfig, n_rois: usize) -> Self {
        Self {
            network,
            n_rois,
            reps: 10,
            warmup: 1,
            seed: 17,
            frame: SyntheticSpec {
                length: 1,
                ..SyntheticSpec::default()
            },
            trans_sigma: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub median: Duration,
    pub min: Duration,
    pub max: Duration,
}

impl Timing {
    fn from_samples(mut v: Vec<Duration>) -> Self {
        v.sort();
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2
        };
        Self {
            median,
            min: v[0],
            max: v[n - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub n_rois: usize,
    pub reps: usize,
    /// `[n_rois, feature_len]`, identical for both paths.
    pub feature_shape: Vec<usize>,
    /// Side lengths of the shared crop.
    pub shared_crop: (usize, usize),
    pub shared: Timing,
    pub per_candidate: Timing,
    /// Per-candidate median over shared median.
    pub speedup: f64,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        let _ = writeln!(s, "n_rois = {}", self.n_rois);
        let _ = writeln!(s, "reps = {}", self.reps);
        let _ = writeln!(s, "feature_shape = {:?}", self.feature_shape);
        let _ = writeln!(
            s,
            "shared_crop = {}x{}",
            self.shared_crop.0, self.shared_crop.1
        );
        for (name, t) in [
            ("shared", &self.shared),
            ("per_candidate", &self.per_candidate),
        ] {
            let _ = writeln!(s, "{name}_median_ms = {:.3}", ms(t.median));
            let _ = writeln!(s, "{name}_min_ms = {:.3}", ms(t.min));
            let _ = writeln!(s, "{name}_max_ms = {:.3}", ms(t.max));
        }
        let _ = writeln!(s, "speedup = {:.3}", self.speedup);
        s
    }
}

/// Gaussian candidates around `target`, kept when their center is inside
/// the frame.
fn candidates(target: &BBox, frame: &BBox, n: usize, sigma: f64, seed: u64) -> Result<Vec<BBox>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cx, cy, w, h) = target.to_center_size();
    let s = (w + h) / 2.0;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let z: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let k = 1.05f64.powf(z[2].clamp(-2.0, 2.0));
        let (x, y) = (cx + sigma * s * z[0], cy + sigma * s * z[1]);
        if x >= frame.x1 && x < frame.x2 && y >= frame.y1 && y < frame.y2 {
            out.push(BBox::from_center(x, y, w * k, h * k)?);
        }
    }
    Ok(out)
}

pub fn benchmark_extraction(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.n_rois == 0 || cfg.reps == 0 {
        return Err(Error::Argument(
            "benchmark needs n_rois >= 1 and reps >= 1".into(),
        ));
    }
    let seq = generate_sequence(&cfg.frame, cfg.seed)?;
    let (frame, target) = (&seq.frames[0], seq.groundtruth[0]);
    let bounds = crate::network::frame_rect(frame);
    let boxes = candidates(&target, &bounds, cfg.n_rois, cfg.trans_sigma, cfg.seed)?;

    let net = &cfg.network;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params: BackboneParams<f32> = BackboneParams::<f64>::init(&net.backbone, &mut rng).cast();
    let geometry = net.backbone.geometry();
    let shared_opts = CropOptions::for_config(&net.backbone);
    let single_opts = CropOptions {
        min_side: net.backbone.input_side.max(shared_opts.min_side),
        ..shared_opts
    };

    let mut shared_crop = (0, 0);
    let mut shared = || -> Result<Tensor<f32>> {
        let prep = prepare_input(frame, &target, &boxes, &shared_opts)?;
        shared_crop = (prep.tensor.dim(2), prep.tensor.dim(1));
        let map = forward_features(&prep.tensor.cast::<f32>(), &params, &net.backbone)?;
        let crop: Vec<BBox> = boxes.iter().map(|b| prep.transform.to_crop(b)).collect();
        stack_features(&extract_batch(&map, &crop, &geometry, &net.roi)?)
    };
    let per_candidate = || -> Result<Tensor<f32>> {
        let mut feats = Vec::with_capacity(boxes.len());
        for b in &boxes {
            let prep = prepare_input(frame, b, std::slice::from_ref(b), &single_opts)?;
            let map = forward_features(&prep.tensor.cast::<f32>(), &params, &net.backbone)?;
            feats.extend(extract_batch(
                &map,
                &[prep.transform.to_crop(b)],
                &geometry,
                &net.roi,
            )?);
        }
        stack_features(&feats)
    };

    let a = shared()?;
    let b = per_candidate()?;
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "shared path gives {:?}, per-candidate path {:?}",
            a.shape(),
            b.shape()
        )));
    }
    for _ in 1..cfg.warmup {
        shared()?;
        per_candidate()?;
    }
    let mut ts = Vec::with_capacity(cfg.reps);
    let mut tp = Vec::with_capacity(cfg.reps);
    for _ in 0..cfg.reps {
        let t = Instant::now();
        std::hint::black_box(shared()?);
        ts.push(t.elapsed());
        let t = Instant::now();
        std::hint::black_box(per_candidate()?);
        tp.push(t.elapsed());
    }
    let shared = Timing::from_samples(ts);
    let per_candidate = Timing::from_samples(tp);
    Ok(BenchReport {
        n_rois: cfg.n_rois,
        reps: cfg.reps,
        feature_shape: a.shape().to_vec(),
        shared_crop,
        speedup: per_candidate.median.as_secs_f64() / shared.median.as_secs_f64().max(1e-12),
        shared,
        per_candidate,
    })
}
