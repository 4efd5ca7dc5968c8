//! Region-of-interest feature extraction from a shared feature map.
//!
//! Three extractors are provided:
//!
//! * [`roi_pool`]: quantized bins with a max inside each bin.
//! * [`roi_align`]: one sample at each output cell center, interpolated
//!   with a separable tent kernel. A half-width of one feature cell is
//!   ordinary bilinear interpolation; larger half-widths average over a
//!   wider neighbourhood.
//! * [`adaptive_roi_align`]: picks the tent half-width per axis as
//!   `max(1, round(roi_extent / output_extent))`, so that large regions
//!   are covered evenly instead of being read at a few sparse points.
//!
//! Tent weights are renormalized over the taps that fall inside the map,
//! so a sample near the border reads the border values rather than being
//! pulled towards zero. Samples with no tap inside the map read zero.
//!
//! [`extract_batch`] maps pixel boxes into feature coordinates, runs the
//! configured extractor and applies the trailing 3×3 max pool.

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::layers::{maxpool2d, maxpool2d_backward};
use crate::tensor::{Scalar, Tensor};

const MIN_EXTENT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RoiMode {
    Pooling,
    Align,
    AdaptiveAlign,
}

impl RoiMode {
    pub fn name(&self) -> &'static str {
        match self {
            RoiMode::Pooling => "pool",
            RoiMode::Align => "align",
            RoiMode::AdaptiveAlign => "adaptive",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pool" | "roipool" | "pooling" => Ok(RoiMode::Pooling),
            "align" | "roialign" => Ok(RoiMode::Align),
            "adaptive" | "adaptive_align" => Ok(RoiMode::AdaptiveAlign),
            other => Err(Error::Config(format!("unknown RoI mode '{other}'"))),
        }
    }
}

/// Tent-kernel half-width in feature cells, per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bandwidth {
    pub x: usize,
    pub y: usize,
}

impl Bandwidth {
    pub fn uniform(b: usize) -> Self {
        Self { x: b, y: b }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiConfig {
    pub mode: RoiMode,
    /// Pre-pool output size `(h, w)`.
    pub out: (usize, usize),
    /// Samples per output cell along each axis (1 = cell center only).
    pub samples_per_bin: usize,
    /// Fixed half-width used by [`RoiMode::Align`].
    pub align_bandwidth: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self {
            mode: RoiMode::AdaptiveAlign,
            out: (7, 7),
            samples_per_bin: 1,
            align_bandwidth: 1,
            pool_kernel: 3,
            pool_stride: 2,
        }
    }
}

impl RoiConfig {
    pub fn with_mode(mode: RoiMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    /// Post-pool spatial size.
    pub fn pooled_size(&self) -> (usize, usize) {
        (
            (self.out.0 - self.pool_kernel) / self.pool_stride + 1,
            (self.out.1 - self.pool_kernel) / self.pool_stride + 1,
        )
    }

    pub fn feature_len(&self, channels: usize) -> usize {
        let (h, w) = self.pooled_size();
        channels * h * w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiFeature<T = f64> {
    /// `[C, h, w]`.
    pub values: Tensor<T>,
    pub source_box: BBox,
    pub mode: RoiMode,
}

/// Divides every coordinate by `stride` without rounding.
pub fn project_box(b: &BBox, stride: f64) -> Result<BBox> {
    if !(stride > 0.0 && stride.is_finite()) {
        return Err(Error::Argument(format!(
            "feature stride must be > 0, got {stride}"
        )));
    }
    Ok(BBox {
        x1: b.x1 / stride,
        y1: b.y1 / stride,
        x2: b.x2 / stride,
        y2: b.y2 / stride,
    })
}

/// Maps crop pixels onto feature-map cell indices: cell `i` is centered on
/// pixel `offset + i * stride`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureGeometry {
    pub stride: f64,
    pub offset: f64,
}

impl FeatureGeometry {
    pub fn to_feature(&self, b: &BBox) -> Result<BBox> {
        project_box(&b.translate(-self.offset, -self.offset), self.stride)
    }
}

fn map_dims<T: Scalar>(featmap: &Tensor<T>) -> Result<(usize, usize, usize)> {
    featmap.expect_rank(3, "feature map")?;
    Ok((featmap.dim(0), featmap.dim(1), featmap.dim(2)))
}

fn check_out(out: (usize, usize)) -> Result<()> {
    if out.0 == 0 || out.1 == 0 {
        return Err(Error::Argument("RoI output size must be positive".into()));
    }
    Ok(())
}

/// Quantized bins per output cell: `(start, end)` along one axis, possibly empty.
fn pool_bins(lo: f64, hi: f64, out: usize, size: usize) -> Vec<(usize, usize)> {
    let start = lo.round() as i64;
    let end = hi.round() as i64;
    let extent = (end - start + 1).max(1) as f64;
    let bin = extent / out as f64;
    (0..out)
        .map(|p| {
            let s = ((p as f64 * bin).floor() as i64 + start).clamp(0, size as i64);
            let e = (((p + 1) as f64 * bin).ceil() as i64 + start).clamp(0, size as i64);
            (s as usize, e as usize)
        })
        .collect()
}

fn pool_forward<T: Scalar>(
    featmap: &Tensor<T>,
    fbox: &BBox,
    out: (usize, usize),
) -> Result<(Tensor<T>, Vec<Option<usize>>)> {
    let (c, h, w) = map_dims(featmap)?;
    check_out(out)?;
    let (sx, ex) = (fbox.x1.round(), fbox.x2.round());
    let (sy, ey) = (fbox.y1.round(), fbox.y2.round());
    if ex < 0.0 || ey < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
        return Err(Error::OutOfBounds(format!(
            "{fbox:?} does not intersect a {h}x{w} map"
        )));
    }
    let ybins = pool_bins(fbox.y1, fbox.y2, out.0, h);
    let xbins = pool_bins(fbox.x1, fbox.x2, out.1, w);
    let src = featmap.data();
    let mut values = Vec::with_capacity(c * out.0 * out.1);
    let mut argmax = Vec::with_capacity(c * out.0 * out.1);
    for ch in 0..c {
        for &(ys, ye) in &ybins {
            for &(xs, xe) in &xbins {
                let mut best: Option<(T, usize)> = None;
                for y in ys..ye {
                    for x in xs..xe {
                        let idx = (ch * h + y) * w + x;
                        if best.is_none_or(|(b, _)| src[idx] > b) {
                            best = Some((src[idx], idx));
                        }
                    }
                }
                values.push(best.map_or(T::ZERO, |(v, _)| v));
                argmax.push(best.map(|(_, i)| i));
            }
        }
    }
    Ok((Tensor::new([c, out.0, out.1], values)?, argmax))
}

/// Classical RoI max pooling on a feature-coordinate box. Empty bins read 0.
pub fn roi_pool<T: Scalar>(
    featmap: &Tensor<T>,
    fbox: &BBox,
    out: (usize, usize),
) -> Result<RoiFeature<T>> {
    let (values, _) = pool_forward(featmap, fbox, out)?;
    Ok(RoiFeature {
        values,
        source_box: *fbox,
        mode: RoiMode::Pooling,
    })
}

/// Normalized tent taps for one axis, averaged over the sub-samples of each
/// output cell.
fn align_taps(
    lo: f64,
    extent: f64,
    out: usize,
    samples: usize,
    half_width: usize,
    size: usize,
) -> Vec<Vec<(usize, f64)>> {
    let b = half_width as f64;
    let bin = extent / out as f64;
    (0..out)
        .map(|i| {
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for a in 0..samples {
                let p = lo + (i as f64 + (a as f64 + 0.5) / samples as f64) * bin;
                let first = (p - b).ceil().max(0.0) as i64;
                let last = (p + b).floor().min((size - 1) as f64) as i64;
                let mut local: Vec<(usize, f64)> = Vec::new();
                let mut total = 0.0;
                for u in first..=last {
                    let wgt = 1.0 - (p - u as f64).abs() / b;
                    if wgt > 0.0 {
                        local.push((u as usize, wgt));
                        total += wgt;
                    }
                }
                if total <= 0.0 {
                    continue;
                }
                for (u, wgt) in local {
                    let wn = wgt / total / samples as f64;
                    match taps.iter_mut().find(|(t, _)| *t == u) {
                        Some(slot) => slot.1 += wn,
                        None => taps.push((u, wn)),
                    }
                }
            }
            taps
        })
        .collect()
}

fn check_extent(fbox: &BBox) -> Result<()> {
    if fbox.width() < MIN_EXTENT || fbox.height() < MIN_EXTENT {
        return Err(Error::DegenerateBox(format!(
            "projected box {fbox:?} has extent below {MIN_EXTENT}"
        )));
    }
    Ok(())
}

fn align_forward<T: Scalar>(
    featmap: &Tensor<T>,
    fbox: &BBox,
    out: (usize, usize),
    bandwidth: Bandwidth,
    samples: usize,
) -> Result<Tensor<T>> {
    let (c, h, w) = map_dims(featmap)?;
    check_out(out)?;
    check_extent(fbox)?;
    if bandwidth.x < 1 || bandwidth.y < 1 || samples < 1 {
        return Err(Error::Argument(
            "bandwidth and samples per bin must be >= 1".into(),
        ));
    }
    let ytaps = align_taps(fbox.y1, fbox.height(), out.0, samples, bandwidth.y, h);
    let xtaps = align_taps(fbox.x1, fbox.width(), out.1, samples, bandwidth.x, w);
    let src = featmap.data();
    let mut values = vec![T::ZERO; c * out.0 * out.1];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for (i, yt) in ytaps.iter().enumerate() {
            let dst = &mut values[(ch * out.0 + i) * out.1..(ch * out.0 + i + 1) * out.1];
            for &(v, wy) in yt {
                let row = &plane[v * w..(v + 1) * w];
                let wy = T::from_f64(wy);
                for (j, xt) in xtaps.iter().enumerate() {
                    let mut s = T::ZERO;
                    for &(u, wx) in xt {
                        s += T::from_f64(wx) * row[u];
                    }
                    dst[j] += wy * s;
                }
            }
        }
    }
    Tensor::new([c, out.0, out.1], values)
}

/// Tent-kernel RoIAlign on a feature-coordinate box.
pub fn roi_align<T: Scalar>(
    featmap: &Tensor<T>,
    fbox: &BBox,
    out: (usize, usize),
    bandwidth: Bandwidth,
) -> Result<RoiFeature<T>> {
    Ok(RoiFeature {
        values: align_forward(featmap, fbox, out, bandwidth, 1)?,
        source_box: *fbox,
        mode: RoiMode::Align,
    })
}

/// `max(1, round(extent / out))` per axis.
pub fn adaptive_bandwidth(fbox: &BBox, out: (usize, usize)) -> Bandwidth {
    let pick = |extent: f64, n: usize| ((extent / n as f64).round() as usize).max(1);
    Bandwidth {
        x: pick(fbox.width(), out.1),
        y: pick(fbox.height(), out.0),
    }
}

pub fn adaptive_roi_align<T: Scalar>(
    featmap: &Tensor<T>,
    fbox: &BBox,
    out: (usize, usize),
) -> Result<RoiFeature<T>> {
    check_extent(fbox)?;
    Ok(RoiFeature {
        values: align_forward(featmap, fbox, out, adaptive_bandwidth(fbox, out), 1)?,
        source_box: *fbox,
        mode: RoiMode::AdaptiveAlign,
    })
}

/// What a backward pass needs to route gradients for one extracted RoI.
#[derive(Debug, Clone)]
pub struct RoiTrace {
    pre: PreTrace,
    pre_shape: Vec<usize>,
    pool_argmax: Vec<usize>,
}

#[derive(Debug, Clone)]
enum PreTrace {
    Pool(Vec<Option<usize>>),
    Align { fbox: BBox, bandwidth: Bandwidth },
}

fn extract_one<T: Scalar>(
    featmap: &Tensor<T>,
    pixel_box: &BBox,
    geometry: &FeatureGeometry,
    cfg: &RoiConfig,
) -> Result<(RoiFeature<T>, RoiTrace)> {
    let fbox = geometry.to_feature(pixel_box)?;
    let (pre, trace) = match cfg.mode {
        RoiMode::Pooling => {
            // Boxes near the crop edge can project past the outermost cell
            // centers; read the border cells as the align modes do.
            let (_, h, w) = map_dims(featmap)?;
            let (mx, my) = ((w - 1) as f64, (h - 1) as f64);
            let clamped = BBox {
                x1: fbox.x1.clamp(0.0, mx),
                y1: fbox.y1.clamp(0.0, my),
                x2: fbox.x2.clamp(0.0, mx),
                y2: fbox.y2.clamp(0.0, my),
            };
            let (v, argmax) = pool_forward(featmap, &clamped, cfg.out)?;
            (v, PreTrace::Pool(argmax))
        }
        RoiMode::Align | RoiMode::AdaptiveAlign => {
            check_extent(&fbox)?;
            let bandwidth = if cfg.mode == RoiMode::Align {
                Bandwidth::uniform(cfg.align_bandwidth)
            } else {
                adaptive_bandwidth(&fbox, cfg.out)
            };
            let v = align_forward(featmap, &fbox, cfg.out, bandwidth, cfg.samples_per_bin)?;
            (v, PreTrace::Align { fbox, bandwidth })
        }
    };
    let pooled = maxpool2d(&pre, cfg.pool_kernel, cfg.pool_stride)?;
    Ok((
        RoiFeature {
            values: pooled.output,
            source_box: *pixel_box,
            mode: cfg.mode,
        },
        RoiTrace {
            pre: trace,
            pre_shape: pre.shape().to_vec(),
            pool_argmax: pooled.argmax,
        },
    ))
}

/// Extracts and max-pools one feature per pixel box, preserving order.
pub fn extract_batch<T: Scalar>(
    featmap: &Tensor<T>,
    boxes: &[BBox],
    geometry: &FeatureGeometry,
    cfg: &RoiConfig,
) -> Result<Vec<RoiFeature<T>>> {
    boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            extract_one(featmap, b, geometry, cfg)
                .map(|(f, _)| f)
                .map_err(|e| Error::at_box(i, e))
        })
        .collect()
}

/// As [`extract_batch`], also returning per-box traces for [`roi_backward`].
pub fn extract_batch_traced(
    featmap: &Tensor,
    boxes: &[BBox],
    geometry: &FeatureGeometry,
    cfg: &RoiConfig,
) -> Result<(Vec<RoiFeature>, Vec<RoiTrace>)> {
    let mut feats = Vec::with_capacity(boxes.len());
    let mut traces = Vec::with_capacity(boxes.len());
    for (i, b) in boxes.iter().enumerate() {
        let (f, t) = extract_one(featmap, b, geometry, cfg).map_err(|e| Error::at_box(i, e))?;
        feats.push(f);
        traces.push(t);
    }
    Ok((feats, traces))
}

/// Accumulates the feature-map gradient from post-pool RoI gradients.
pub fn roi_backward(
    map_shape: &[usize],
    traces: &[RoiTrace],
    grads: &[Tensor],
    cfg: &RoiConfig,
) -> Result<Tensor> {
    if traces.len() != grads.len() {
        return Err(Error::Dimension(format!(
            "roi_backward: {} traces for {} gradients",
            traces.len(),
            grads.len()
        )));
    }
    if map_shape.len() != 3 {
        return Err(Error::Dimension(
            "roi_backward: feature map must be rank 3".into(),
        ));
    }
    let (c, h, w) = (map_shape[0], map_shape[1], map_shape[2]);
    let mut dmap = Tensor::zeros(map_shape.to_vec());
    for (trace, g) in traces.iter().zip(grads) {
        let dpre = maxpool2d_backward(&trace.pre_shape, &trace.pool_argmax, g)?;
        let dd = dmap.data_mut();
        match &trace.pre {
            PreTrace::Pool(argmax) => {
                for (&src, &gv) in argmax.iter().zip(dpre.data()) {
                    if let Some(idx) = src {
                        dd[idx] += gv;
                    }
                }
            }
            PreTrace::Align { fbox, bandwidth } => {
                let ytaps = align_taps(
                    fbox.y1,
                    fbox.height(),
                    cfg.out.0,
                    cfg.samples_per_bin,
                    bandwidth.y,
                    h,
                );
                let xtaps = align_taps(
                    fbox.x1,
                    fbox.width(),
                    cfg.out.1,
                    cfg.samples_per_bin,
                    bandwidth.x,
                    w,
                );
                let gp = dpre.data();
                for ch in 0..c {
                    for (i, yt) in ytaps.iter().enumerate() {
                        for (j, xt) in xtaps.iter().enumerate() {
                            let gv = gp[(ch * cfg.out.0 + i) * cfg.out.1 + j];
                            if gv == 0.0 {
                                continue;
                            }
                            for &(v, wy) in yt {
                                for &(u, wx) in xt {
                                    dd[(ch * h + v) * w + u] += gv * wy * wx;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(dmap)
}

/// Stacks flattened features into an `[N, len]` matrix.
pub fn stack_features<T: Scalar>(features: &[RoiFeature<T>]) -> Result<Tensor<T>> {
    let first = features
        .first()
        .ok_or_else(|| Error::Argument("cannot stack an empty feature list".into()))?;
    let len = first.values.len();
    let mut data = Vec::with_capacity(len * features.len());
    for f in features {
        if f.values.len() != len {
            return Err(Error::Dimension("features of unequal size".into()));
        }
        data.extend_from_slice(f.values.data());
    }
    Tensor::new([features.len(), len], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    /// Evaluates the tent-weighted average by visiting every map cell.
    fn dense_tent_oracle(
        map: &Tensor,
        fbox: &BBox,
        out: (usize, usize),
        bw: Bandwidth,
    ) -> Vec<f64> {
        let (c, h, w) = (map.dim(0), map.dim(1), map.dim(2));
        let mut res = vec![0.0; c * out.0 * out.1];
        for ch in 0..c {
            for i in 0..out.0 {
                for j in 0..out.1 {
                    let py = fbox.y1 + (i as f64 + 0.5) * fbox.height() / out.0 as f64;
                    let px = fbox.x1 + (j as f64 + 0.5) * fbox.width() / out.1 as f64;
                    let (mut num, mut den) = (0.0, 0.0);
                    for v in 0..h {
                        for u in 0..w {
                            let ky = (1.0 - (py - v as f64).abs() / bw.y as f64).max(0.0);
                            let kx = (1.0 - (px - u as f64).abs() / bw.x as f64).max(0.0);
                            num += ky * kx * map.data()[(ch * h + v) * w + u];
                            den += ky * kx;
                        }
                    }
                    res[(ch * out.0 + i) * out.1 + j] = if den > 0.0 { num / den } else { 0.0 };
                }
            }
        }
        res
    }

    #[test]
    fn project_box_examples() {
        let b = bx(3., 5., 19., 29.);
        assert_eq!(project_box(&b, 1.0).unwrap(), b);
        assert_eq!(
            project_box(&bx(0., 0., 16., 16.), 8.0).unwrap(),
            bx(0., 0., 2., 2.)
        );
        assert_eq!(
            project_box(&b, 8.0).unwrap(),
            bx(0.375, 0.625, 2.375, 3.625)
        );
        assert!(project_box(&b, 0.0).is_err());
    }

    #[test]
    fn align_exact_hit_reads_node() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let map = Tensor::<f64>::uniform([2, 6, 6], 1.0, &mut rng);
        // 1x1 output centered exactly on node (3, 2)
        let f = roi_align(&map, &bx(1.5, 2.5, 2.5, 3.5), (1, 1), Bandwidth::uniform(1)).unwrap();
        assert_eq!(f.values.data()[0], map.data()[3 * 6 + 2]);
        assert_eq!(f.values.data()[1], map.data()[36 + 3 * 6 + 2]);
    }

    #[test]
    fn constant_map_gives_constant_output() {
        let map = Tensor::<f64>::full([3, 9, 9], 0.75);
        for bw in 1..4 {
            let f = roi_align(
                &map,
                &bx(-0.4, 0.2, 7.9, 8.3),
                (7, 7),
                Bandwidth::uniform(bw),
            )
            .unwrap();
            assert!(f.values.data().iter().all(|&v| (v - 0.75).abs() < 1e-12));
        }
        let p = roi_pool(&map, &bx(0.0, 0.0, 4.0, 4.0), (2, 2)).unwrap();
        assert!(p.values.data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn align_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let map = Tensor::<f64>::uniform([2, 12, 12], 1.0, &mut rng);
        let b = bx(1.3, 2.1, 9.7, 10.4);
        let f = roi_align(&map, &b, (7, 7), Bandwidth::uniform(2)).unwrap();
        let oracle = dense_tent_oracle(&map, &b, (7, 7), Bandwidth::uniform(2));
        for (a, o) in f.values.data().iter().zip(&oracle) {
            assert!((a - o).abs() < 1e-12);
        }
    }

    #[test]
    fn adaptive_bandwidth_rule() {
        let out = (7, 7);
        let width = |w: f64| adaptive_bandwidth(&bx(0.0, 0.0, w, 7.0), out).x;
        assert_eq!(width(7.0), 1);
        assert_eq!(width(10.0), 1);
        assert_eq!(width(14.0), 2);
        assert_eq!(width(21.0), 3);
        assert_eq!(width(2.0), 1);
        assert_eq!(
            adaptive_bandwidth(&bx(0.0, 0.0, 7.0, 21.0), out),
            Bandwidth { x: 1, y: 3 }
        );
    }

    #[test]
    fn pool_whole_map_is_global_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let map = Tensor::<f64>::uniform([2, 5, 6], 1.0, &mut rng);
        let p = roi_pool(&map, &bx(0.0, 0.0, 5.0, 4.0), (1, 1)).unwrap();
        for ch in 0..2 {
            let m = map.data()[ch * 30..(ch + 1) * 30]
                .iter()
                .cloned()
                .fold(f64::MIN, f64::max);
            assert_eq!(p.values.data()[ch], m);
        }
    }

    #[test]
    fn pool_outside_map_errors() {
        let map = Tensor::<f64>::zeros([1, 4, 4]);
        assert!(matches!(
            roi_pool(&map, &bx(10., 10., 12., 12.), (2, 2)),
            Err(Error::OutOfBounds(_))
        ));
    }

    #[test]
    fn degenerate_projected_box_errors() {
        let map = Tensor::<f64>::zeros([1, 4, 4]);
        let tiny = bx(1.0, 1.0, 1.0 + 1e-9, 2.0);
        assert!(matches!(
            roi_align(&map, &tiny, (7, 7), Bandwidth::uniform(1)),
            Err(Error::DegenerateBox(_))
        ));
    }

    #[test]
    fn align_backward_is_adjoint_of_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let map = Tensor::<f64>::uniform([2, 10, 10], 1.0, &mut rng);
        let geom = FeatureGeometry {
            stride: 1.0,
            offset: 0.0,
        };
        for mode in [RoiMode::Align, RoiMode::AdaptiveAlign, RoiMode::Pooling] {
            let cfg = RoiConfig::with_mode(mode);
            let boxes = [bx(0.5, 1.0, 8.5, 9.0), bx(2.0, -1.0, 15.0, 6.0)];
            let (feats, traces) = extract_batch_traced(&map, &boxes, &geom, &cfg).unwrap();
            let grads: Vec<Tensor> = feats
                .iter()
                .map(|f| Tensor::uniform(f.values.shape().to_vec(), 1.0, &mut rng))
                .collect();
            let dmap = roi_backward(map.shape(), &traces, &grads, &cfg).unwrap();
            // <g, d feat/d map . delta> == <dmap, delta> for a small perturbation
            let delta = Tensor::<f64>::uniform([2, 10, 10], 1.0, &mut rng);
            let h = 1e-6;
            let mut plus = map.clone();
            for (p, d) in plus.data_mut().iter_mut().zip(delta.data()) {
                *p += h * d;
            }
            let fp = extract_batch(&plus, &boxes, &geom, &cfg).unwrap();
            let lhs: f64 = fp
                .iter()
                .zip(&feats)
                .zip(&grads)
                .map(|((a, b), g)| {
                    a.values
                        .data()
                        .iter()
                        .zip(b.values.data())
                        .zip(g.data())
                        .map(|((x, y), gv)| (x - y) / h * gv)
                        .sum::<f64>()
                })
                .sum();
            let rhs: f64 = dmap
                .data()
                .iter()
                .zip(delta.data())
                .map(|(a, b)| a * b)
                .sum();
            assert!(
                (lhs - rhs).abs() < 1e-5 * rhs.abs().max(1.0),
                "{mode:?}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn batch_equals_loop_and_is_order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let map = Tensor::<f64>::uniform([3, 16, 16], 1.0, &mut rng);
        let geom = FeatureGeometry {
            stride: 4.0,
            offset: 2.0,
        };
        let cfg = RoiConfig::default();
        let boxes: Vec<BBox> = (0..20)
            .map(|_| {
                let x = rng.random_range(0.0..40.0);
                let y = rng.random_range(0.0..40.0);
                BBox::from_xywh(
                    x,
                    y,
                    rng.random_range(8.0..30.0),
                    rng.random_range(8.0..30.0),
                )
                .unwrap()
            })
            .collect();
        let batch = extract_batch(&map, &boxes, &geom, &cfg).unwrap();
        for (b, f) in boxes.iter().zip(&batch) {
            let single = extract_batch(&map, std::slice::from_ref(b), &geom, &cfg).unwrap();
            assert_eq!(single[0], *f);
            assert_eq!(f.values.shape(), &[3, 3, 3]);
        }
        let rev: Vec<BBox> = boxes.iter().rev().cloned().collect();
        let rb = extract_batch(&map, &rev, &geom, &cfg).unwrap();
        for (a, b) in batch.iter().zip(rb.iter().rev()) {
            assert_eq!(a, b);
        }
    }
}
