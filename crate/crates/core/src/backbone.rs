//! Convolutional trunk (conv1-3) producing the shared feature map.
//!
//! Two topologies share the same kernels:
//!
//! ```text
//! Original: conv1 7x7/2 - relu - pool 3x3/2 - conv2 5x5/2 (pad 1) - relu - pool 3x3/2 - conv3 3x3/1 - relu
//! DenseFm : conv1 7x7/2 - relu - pool 3x3/2 - conv2 5x5/2 (pad 1) - relu -              conv3 3x3/1 dil 3 - relu
//! ```
//!
//! Both have a 75-pixel receptive field per output unit. Dropping the
//! second pool halves the feature stride (16 -> 8); dilating conv3 by 3
//! keeps the receptive field at 75. With conv2 padded by one pixel and
//! conv3 unpadded, a 107-pixel input gives a 3x3 map for `Original` and
//! 6x6 for `DenseFm`; in general the extents are
//! `o = (floor((floor((w-7)/2+1) - 3)/2 + 1) - 3)/2 + 1` after conv2, then
//! `floor((o-3)/2)+1-2` versus `o-6`.
//!
//! Setting [`BackboneConfig::lrn`] inserts cross-channel normalization after
//! the first two ReLUs (off by default; it does not change the geometry).

use image::RgbImage;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{bounding_rect, BBox};
use crate::layers::{
    conv2d, conv2d_backward, conv2d_backward_params, lrn, lrn_backward, maxpool2d,
    maxpool2d_backward, relu, relu_backward, Conv2dSpec, LrnSpec,
};
use crate::roi::FeatureGeometry;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackboneVariant {
    Original,
    DenseFm,
}

impl BackboneVariant {
    pub fn name(&self) -> &'static str {
        match self {
            BackboneVariant::Original => "original",
            BackboneVariant::DenseFm => "dense",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(BackboneVariant::Original),
            "dense" | "densefm" => Ok(BackboneVariant::DenseFm),
            other => Err(Error::Config(format!("unknown backbone variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub kernel: usize,
    pub spec: Conv2dSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolLayer {
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub variant: BackboneVariant,
    pub in_channels: usize,
    pub conv1: ConvLayer,
    pub pool1: PoolLayer,
    pub conv2: ConvLayer,
    pub pool2: Option<PoolLayer>,
    pub conv3: ConvLayer,
    /// Side the target is resized to before feature extraction.
    pub input_side: usize,
    /// Normalization after relu1 and relu2.
    pub lrn: Option<LrnSpec>,
}

/// One step of the trunk, in forward order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Conv(ConvLayer),
    Relu,
    Pool(PoolLayer),
}

pub const TOY_CHANNELS: [usize; 3] = [8, 16, 32];
pub const FULL_CHANNELS: [usize; 3] = [96, 256, 512];

impl BackboneConfig {
    pub fn new(variant: BackboneVariant, channels: [usize; 3]) -> Self {
        let pool = PoolLayer {
            kernel: 3,
            stride: 2,
        };
        let (pool2, dilation) = match variant {
            BackboneVariant::Original => (Some(pool), 1),
            BackboneVariant::DenseFm => (None, 3),
        };
        Self {
            variant,
            in_channels: 3,
            conv1: ConvLayer {
                out_channels: channels[0],
                kernel: 7,
                spec: Conv2dSpec::new(2, 1, 0),
            },
            pool1: pool,
            conv2: ConvLayer {
                out_channels: channels[1],
                kernel: 5,
                spec: Conv2dSpec::new(2, 1, 1),
            },
            pool2,
            conv3: ConvLayer {
                out_channels: channels[2],
                kernel: 3,
                spec: Conv2dSpec::new(1, dilation, 0),
            },
            input_side: 107,
            lrn: None,
        }
    }

    /// Small channel plan used by tests and desk-scale experiments.
    pub fn toy(variant: BackboneVariant) -> Self {
        Self::new(variant, TOY_CHANNELS)
    }

    /// VGG-M channel widths.
    pub fn full(variant: BackboneVariant) -> Self {
        Self::new(variant, FULL_CHANNELS)
    }

    pub fn channels(&self) -> [usize; 3] {
        [
            self.conv1.out_channels,
            self.conv2.out_channels,
            self.conv3.out_channels,
        ]
    }

    pub fn out_channels(&self) -> usize {
        self.conv3.out_channels
    }

    pub fn stages(&self) -> Vec<Stage> {
        let mut s = vec![
            Stage::Conv(self.conv1),
            Stage::Relu,
            Stage::Pool(self.pool1),
        ];
        s.extend([Stage::Conv(self.conv2), Stage::Relu]);
        if let Some(p) = self.pool2 {
            s.push(Stage::Pool(p));
        }
        s.extend([Stage::Conv(self.conv3), Stage::Relu]);
        s
    }

    /// `(receptive field, jump, center of unit 0)` composed over all stages.
    fn unit_chain(&self) -> (usize, usize, f64) {
        let (mut rf, mut jump, mut center) = (1usize, 1usize, 0.0f64);
        for stage in self.stages() {
            let (k, stride, pad) = match stage {
                Stage::Conv(c) => (
                    c.spec.effective_kernel(c.kernel),
                    c.spec.stride,
                    c.spec.padding,
                ),
                Stage::Pool(p) => (p.kernel, p.stride, 0),
                Stage::Relu => continue,
            };
            rf += (k - 1) * jump;
            center += ((k - 1) as f64 / 2.0 - pad as f64) * jump as f64;
            jump *= stride;
        }
        (rf, jump, center)
    }

    /// Input pixels seen by one output unit.
    pub fn receptive_field(&self) -> usize {
        self.unit_chain().0
    }

    /// Input pixels between neighbouring output units.
    pub fn feature_stride(&self) -> usize {
        self.unit_chain().1
    }

    /// Input pixel on which output unit 0 is centered.
    pub fn feature_offset(&self) -> f64 {
        self.unit_chain().2
    }

    pub fn geometry(&self) -> FeatureGeometry {
        FeatureGeometry {
            stride: self.feature_stride() as f64,
            offset: self.feature_offset(),
        }
    }

    /// Spatial extent of the feature map for an input of `side` pixels.
    pub fn output_extent(&self, side: usize) -> Option<usize> {
        let mut n = side;
        for stage in self.stages() {
            n = match stage {
                Stage::Conv(c) => c.spec.output_extent(n, c.kernel)?,
                Stage::Pool(p) => {
                    if n < p.kernel {
                        return None;
                    }
                    (n - p.kernel) / p.stride + 1
                }
                Stage::Relu => n,
            };
        }
        Some(n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams<T = f64> {
    pub conv1_w: Tensor<T>,
    pub conv1_b: Tensor<T>,
    pub conv2_w: Tensor<T>,
    pub conv2_b: Tensor<T>,
    pub conv3_w: Tensor<T>,
    pub conv3_b: Tensor<T>,
}

pub const BACKBONE_PARAM_NAMES: [&str; 6] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "conv3.weight",
    "conv3.bias",
];

impl<T: Scalar> BackboneParams<T> {
    /// Fan-in scaled uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(config: &BackboneConfig, rng: &mut R) -> Self {
        let conv = |c_out: usize, c_in: usize, k: usize, rng: &mut R| {
            let fan_in = (c_in * k * k) as f64;
            (
                Tensor::uniform([c_out, c_in, k, k], (6.0 / fan_in).sqrt(), rng),
                Tensor::zeros([c_out]),
            )
        };
        let [c1, c2, c3] = config.channels();
        let (conv1_w, conv1_b) = conv(c1, config.in_channels, config.conv1.kernel, rng);
        let (conv2_w, conv2_b) = conv(c2, c1, config.conv2.kernel, rng);
        let (conv3_w, conv3_b) = conv(c3, c2, config.conv3.kernel, rng);
        Self {
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            conv3_w,
            conv3_b,
        }
    }

    pub fn tensors(&self) -> [&Tensor<T>; 6] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.conv3_w,
            &self.conv3_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 6] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.conv3_w,
            &mut self.conv3_b,
        ]
    }

    pub fn cast<U: Scalar>(&self) -> BackboneParams<U> {
        BackboneParams {
            conv1_w: self.conv1_w.cast(),
            conv1_b: self.conv1_b.cast(),
            conv2_w: self.conv2_w.cast(),
            conv2_b: self.conv2_b.cast(),
            conv3_w: self.conv3_w.cast(),
            conv3_b: self.conv3_b.cast(),
        }
    }

    pub fn check(&self, config: &BackboneConfig) -> Result<()> {
        let [c1, c2, c3] = config.channels();
        let cin = config.in_channels;
        let (k1, k2, k3) = (
            config.conv1.kernel,
            config.conv2.kernel,
            config.conv3.kernel,
        );
        self.conv1_w
            .expect_shape(&[c1, cin, k1, k1], "conv1.weight")?;
        self.conv1_b.expect_shape(&[c1], "conv1.bias")?;
        self.conv2_w
            .expect_shape(&[c2, c1, k2, k2], "conv2.weight")?;
        self.conv2_b.expect_shape(&[c2], "conv2.bias")?;
        self.conv3_w
            .expect_shape(&[c3, c2, k3, k3], "conv3.weight")?;
        self.conv3_b.expect_shape(&[c3], "conv3.bias")
    }
}

fn check_input<T: Scalar>(crop: &Tensor<T>, config: &BackboneConfig) -> Result<()> {
    crop.expect_rank(3, "backbone input")?;
    if crop.dim(0) != config.in_channels {
        return Err(Error::Dimension(format!(
            "backbone expects {} input channels, got {}",
            config.in_channels,
            crop.dim(0)
        )));
    }
    let rf = config.receptive_field();
    if crop.dim(1) < rf || crop.dim(2) < rf {
        return Err(Error::Dimension(format!(
            "input {}x{} is smaller than the {rf}-pixel receptive field",
            crop.dim(1),
            crop.dim(2)
        )));
    }
    Ok(())
}

/// Shared feature map `[C3, Hf, Wf]` of a prepared crop.
pub fn forward_features<T: Scalar>(
    crop: &Tensor<T>,
    params: &BackboneParams<T>,
    config: &BackboneConfig,
) -> Result<Tensor<T>> {
    check_input(crop, config)?;
    let norm = |x: Tensor<T>| match &config.lrn {
        Some(spec) => lrn(&x, spec),
        None => Ok(x),
    };
    let mut x = norm(relu(&conv2d(
        crop,
        &params.conv1_w,
        &params.conv1_b,
        config.conv1.spec,
    )?))?;
    x = maxpool2d(&x, config.pool1.kernel, config.pool1.stride)?.output;
    x = norm(relu(&conv2d(
        &x,
        &params.conv2_w,
        &params.conv2_b,
        config.conv2.spec,
    )?))?;
    if let Some(p) = config.pool2 {
        x = maxpool2d(&x, p.kernel, p.stride)?.output;
    }
    Ok(relu(&conv2d(
        &x,
        &params.conv3_w,
        &params.conv3_b,
        config.conv3.spec,
    )?))
}

/// Intermediate activations kept for [`backbone_backward`].
#[derive(Debug, Clone)]
pub struct BackboneTrace {
    input: Tensor,
    conv1_out: Tensor,
    /// ReLU outputs fed to the normalization, when it is on.
    lrn1_in: Option<Tensor>,
    lrn2_in: Option<Tensor>,
    pool1_argmax: Vec<usize>,
    pool1_out: Tensor,
    conv2_out: Tensor,
    pool2_argmax: Option<Vec<usize>>,
    conv3_in: Tensor,
    conv3_out: Tensor,
}

pub fn forward_traced(
    crop: &Tensor,
    params: &BackboneParams,
    config: &BackboneConfig,
) -> Result<(Tensor, BackboneTrace)> {
    check_input(crop, config)?;
    let norm = |a: Tensor| -> Result<(Tensor, Option<Tensor>)> {
        match &config.lrn {
            Some(spec) => Ok((lrn(&a, spec)?, Some(a))),
            None => Ok((a, None)),
        }
    };
    let conv1_out = conv2d(crop, &params.conv1_w, &params.conv1_b, config.conv1.spec)?;
    let (a1, lrn1_in) = norm(relu(&conv1_out))?;
    let p1 = maxpool2d(&a1, config.pool1.kernel, config.pool1.stride)?;
    let conv2_out = conv2d(
        &p1.output,
        &params.conv2_w,
        &params.conv2_b,
        config.conv2.spec,
    )?;
    let (a2, lrn2_in) = norm(relu(&conv2_out))?;
    let (conv3_in, pool2_argmax) = match config.pool2 {
        Some(p) => {
            let p2 = maxpool2d(&a2, p.kernel, p.stride)?;
            (p2.output, Some(p2.argmax))
        }
        None => (a2, None),
    };
    let conv3_out = conv2d(
        &conv3_in,
        &params.conv3_w,
        &params.conv3_b,
        config.conv3.spec,
    )?;
    let map = relu(&conv3_out);
    Ok((
        map,
        BackboneTrace {
            input: crop.clone(),
            conv1_out,
            lrn1_in,
            lrn2_in,
            pool1_argmax: p1.argmax,
            pool1_out: p1.output,
            conv2_out,
            pool2_argmax,
            conv3_in,
            conv3_out,
        },
    ))
}

/// Parameter gradients (in [`BACKBONE_PARAM_NAMES`] order) given the
/// gradient of the feature map.
pub fn backbone_backward(
    trace: &BackboneTrace,
    params: &BackboneParams,
    config: &BackboneConfig,
    d_map: &Tensor,
) -> Result<Vec<Tensor>> {
    let d3 = relu_backward(&trace.conv3_out, d_map)?;
    let g3 = conv2d_backward(&trace.conv3_in, &params.conv3_w, config.conv3.spec, &d3)?;
    let d_a2 = match &trace.pool2_argmax {
        Some(argmax) => maxpool2d_backward(trace.conv2_out.shape(), argmax, &g3.d_input)?,
        None => g3.d_input,
    };
    let unnorm = |input: &Option<Tensor>, g: Tensor| match (input, &config.lrn) {
        (Some(x), Some(spec)) => lrn_backward(x, spec, &g),
        _ => Ok(g),
    };
    let d2 = relu_backward(&trace.conv2_out, &unnorm(&trace.lrn2_in, d_a2)?)?;
    let g2 = conv2d_backward(&trace.pool1_out, &params.conv2_w, config.conv2.spec, &d2)?;
    let d_a1 = maxpool2d_backward(trace.conv1_out.shape(), &trace.pool1_argmax, &g2.d_input)?;
    let d1 = relu_backward(&trace.conv1_out, &unnorm(&trace.lrn1_in, d_a1)?)?;
    let g1 = conv2d_backward_params(&trace.input, &params.conv1_w, config.conv1.spec, &d1)?;
    let mut grads = g1;
    grads.extend(g2.d_params);
    grads.extend(g3.d_params);
    Ok(grads)
}

/// Similarity transform from frame pixels to crop pixels:
/// `crop = scale * frame - origin`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropTransform {
    pub scale: f64,
    pub origin_x: f64,
    pub origin_y: f64,
}

impl CropTransform {
    pub fn to_crop(&self, b: &BBox) -> BBox {
        BBox {
            x1: b.x1 * self.scale - self.origin_x,
            y1: b.y1 * self.scale - self.origin_y,
            x2: b.x2 * self.scale - self.origin_x,
            y2: b.y2 * self.scale - self.origin_y,
        }
    }

    pub fn to_frame(&self, b: &BBox) -> BBox {
        BBox {
            x1: (b.x1 + self.origin_x) / self.scale,
            y1: (b.y1 + self.origin_y) / self.scale,
            x2: (b.x2 + self.origin_x) / self.scale,
            y2: (b.y2 + self.origin_y) / self.scale,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedInput {
    /// `[3, H, W]`, pixel values mapped to `(v - 128) / 128`.
    pub tensor: Tensor,
    pub transform: CropTransform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropOptions {
    /// Target size (geometric mean of w and h) after resizing.
    pub input_side: usize,
    /// Extra context in crop pixels around the union of the sample boxes.
    pub margin: f64,
    /// Crops are grown symmetrically to at least this side.
    pub min_side: usize,
}

impl CropOptions {
    pub fn for_config(config: &BackboneConfig) -> Self {
        Self {
            input_side: config.input_side,
            margin: 0.0,
            min_side: config.receptive_field(),
        }
    }
}

/// Resizes the frame so the target measures `input_side` pixels and crops
/// the smallest rectangle enclosing every sample box. Pixels beyond the
/// frame are zero in the normalized input.
pub fn prepare_input(
    frame: &RgbImage,
    target: &BBox,
    samples: &[BBox],
    opts: &CropOptions,
) -> Result<PreparedInput> {
    let union = bounding_rect(samples).ok_or_else(|| Error::Argument("no sample boxes".into()))?;
    let scale = opts.input_side as f64 / (target.width() * target.height()).sqrt();
    let mut x0 = (union.x1 * scale - opts.margin).floor();
    let mut y0 = (union.y1 * scale - opts.margin).floor();
    let mut x1 = (union.x2 * scale + opts.margin).ceil();
    let mut y1 = (union.y2 * scale + opts.margin).ceil();
    let grow = |lo: &mut f64, hi: &mut f64| {
        let short = opts.min_side as f64 - (*hi - *lo);
        if short > 0.0 {
            *lo -= (short / 2.0).floor();
            *hi = *lo + opts.min_side as f64;
        }
    };
    grow(&mut x0, &mut x1);
    grow(&mut y0, &mut y1);
    let (w, h) = ((x1 - x0) as usize, (y1 - y0) as usize);
    let transform = CropTransform {
        scale,
        origin_x: x0,
        origin_y: y0,
    };
    Ok(PreparedInput {
        tensor: resample(frame, &transform, w, h)?,
        transform,
    })
}

/// Bilinear resampling of the frame into a `[3, h, w]` normalized crop.
fn resample(frame: &RgbImage, t: &CropTransform, w: usize, h: usize) -> Result<Tensor> {
    let (fw, fh) = (frame.width() as usize, frame.height() as usize);
    let raw = frame.as_raw();
    let mut data = vec![0.0f64; 3 * w * h];
    let axis = |i: usize, origin: f64, limit: usize| -> [(usize, f64); 2] {
        let src = (origin + i as f64 + 0.5) / t.scale - 0.5;
        let lo = src.floor();
        let frac = src - lo;
        let lo = lo as i64;
        let tap = |idx: i64, wgt: f64| {
            if idx >= 0 && (idx as usize) < limit {
                (idx as usize, wgt)
            } else {
                (0, 0.0)
            }
        };
        [tap(lo, 1.0 - frac), tap(lo + 1, frac)]
    };
    let xtaps: Vec<_> = (0..w).map(|j| axis(j, t.origin_x, fw)).collect();
    for i in 0..h {
        let ytap = axis(i, t.origin_y, fh);
        for (j, xt) in xtaps.iter().enumerate() {
            let mut px = [0.0f64; 3];
            for &(yy, wy) in &ytap {
                if wy == 0.0 {
                    continue;
                }
                for &(xx, wx) in xt {
                    if wx == 0.0 {
                        continue;
                    }
                    let base = (yy * fw + xx) * 3;
                    for (c, p) in px.iter_mut().enumerate() {
                        *p += wy * wx * ((raw[base + c] as f64 - 128.0) / 128.0);
                    }
                }
            }
            for (c, p) in px.iter().enumerate() {
                data[(c * h + i) * w + j] = *p;
            }
        }
    }
    Tensor::new([3, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn receptive_field_is_75_for_both_variants() {
        for v in [BackboneVariant::Original, BackboneVariant::DenseFm] {
            assert_eq!(BackboneConfig::toy(v).receptive_field(), 75);
            assert_eq!(BackboneConfig::full(v).receptive_field(), 75);
        }
    }

    #[test]
    fn dense_stride_is_half() {
        let o = BackboneConfig::toy(BackboneVariant::Original);
        let d = BackboneConfig::toy(BackboneVariant::DenseFm);
        assert_eq!(o.feature_stride(), 16);
        assert_eq!(d.feature_stride(), 8);
        assert_eq!(o.feature_offset(), 33.0);
        assert_eq!(d.feature_offset(), 33.0);
    }

    #[test]
    fn extents_on_107() {
        assert_eq!(
            BackboneConfig::toy(BackboneVariant::Original).output_extent(107),
            Some(3)
        );
        assert_eq!(
            BackboneConfig::toy(BackboneVariant::DenseFm).output_extent(107),
            Some(6)
        );
        assert_eq!(
            BackboneConfig::toy(BackboneVariant::DenseFm).output_extent(66),
            None
        );
    }

    #[test]
    fn forward_shape_matches_extent_and_zero_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for v in [BackboneVariant::Original, BackboneVariant::DenseFm] {
            let cfg = BackboneConfig::toy(v);
            let mut p = BackboneParams::<f64>::init(&cfg, &mut rng);
            let x = Tensor::<f64>::uniform([3, 107, 120], 1.0, &mut rng);
            let y = forward_features(&x, &p, &cfg).unwrap();
            assert_eq!(
                y.shape(),
                &[
                    32,
                    cfg.output_extent(107).unwrap(),
                    cfg.output_extent(120).unwrap()
                ]
            );
            for t in p.tensors_mut() {
                t.fill(0.0);
            }
            let z = forward_features(&x, &p, &cfg).unwrap();
            assert!(z.data().iter().all(|&v| v == 0.0));
            let small = Tensor::<f64>::zeros([3, 74, 200]);
            assert!(matches!(
                forward_features(&small, &p, &cfg),
                Err(Error::Dimension(_))
            ));
        }
    }

    #[test]
    fn crop_transform_round_trip_and_scale() {
        let frame = RgbImage::new(300, 200);
        let target = BBox::from_xywh(40.0, 30.0, 214.0, 214.0).unwrap();
        let samples = [target, BBox::from_xywh(10.3, 20.7, 50.0, 60.0).unwrap()];
        let p = prepare_input(
            &frame,
            &target,
            &samples,
            &CropOptions {
                input_side: 107,
                margin: 0.0,
                min_side: 75,
            },
        )
        .unwrap();
        assert_eq!(p.transform.scale, 0.5);
        for b in &samples {
            let back = p.transform.to_frame(&p.transform.to_crop(b));
            assert!((back.x1 - b.x1).abs() < 1e-9 && (back.y2 - b.y2).abs() < 1e-9);
        }
    }

    #[test]
    fn unit_scale_crop_is_union_rectangle() {
        let mut frame = RgbImage::new(200, 200);
        for (x, y, px) in frame.enumerate_pixels_mut() {
            *px = image::Rgb([(x % 256) as u8, (y % 256) as u8, 7]);
        }
        let target = BBox::from_xywh(50.0, 50.0, 107.0, 107.0).unwrap();
        let samples = [target, BBox::from_xywh(40.0, 45.0, 107.0, 107.0).unwrap()];
        let p = prepare_input(
            &frame,
            &target,
            &samples,
            &CropOptions {
                input_side: 107,
                margin: 0.0,
                min_side: 75,
            },
        )
        .unwrap();
        assert_eq!(p.transform.scale, 1.0);
        assert_eq!((p.transform.origin_x, p.transform.origin_y), (40.0, 45.0));
        assert_eq!(p.tensor.shape(), &[3, 112, 117]);
        // at unit scale the crop copies pixels exactly
        let expect = (40.0 + 3.0 - 128.0) / 128.0;
        assert_eq!(p.tensor.data()[3], expect);
    }
}
