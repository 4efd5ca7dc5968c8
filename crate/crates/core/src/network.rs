//! Backbone + RoI extraction + head, and their checkpoint encoding.

use image::RgbImage;
use rand::Rng;

use crate::backbone::{
    forward_features, prepare_input, BackboneConfig, BackboneParams, BackboneVariant, CropOptions,
    PreparedInput, BACKBONE_PARAM_NAMES, FULL_CHANNELS, TOY_CHANNELS,
};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::head::{HeadConfig, HeadParams};
use crate::layers::LrnSpec;
use crate::roi::{extract_batch, stack_features, RoiConfig, RoiMode};
use crate::tensor::Tensor;

pub const TOY_FC_WIDTH: usize = 32;
pub const FULL_FC_WIDTH: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub backbone: BackboneConfig,
    pub roi: RoiConfig,
    pub fc_width: usize,
}

impl NetworkConfig {
    pub fn toy(variant: BackboneVariant, mode: RoiMode) -> Self {
        Self {
            backbone: BackboneConfig::new(variant, TOY_CHANNELS),
            roi: RoiConfig::with_mode(mode),
            fc_width: TOY_FC_WIDTH,
        }
    }

    pub fn full(variant: BackboneVariant, mode: RoiMode) -> Self {
        Self {
            backbone: BackboneConfig::new(variant, FULL_CHANNELS),
            roi: RoiConfig::with_mode(mode),
            fc_width: FULL_FC_WIDTH,
        }
    }

    /// Flattened post-pool RoI feature length.
    pub fn feature_len(&self) -> usize {
        self.roi.feature_len(self.backbone.out_channels())
    }

    pub fn head_config(&self, domains: usize) -> HeadConfig {
        HeadConfig {
            in_features: self.feature_len(),
            width: self.fc_width,
            domains,
        }
    }
}

/// `off`, or `size,alpha,beta,k`.
fn lrn_meta(spec: Option<&LrnSpec>) -> String {
    match spec {
        Some(s) => format!("{},{},{},{}", s.size, s.alpha, s.beta, s.k),
        None => "off".into(),
    }
}

/// Checkpoints written without the key carry no normalization.
fn parse_lrn(value: Option<&str>) -> Result<Option<LrnSpec>> {
    let v = match value {
        None | Some("off") => return Ok(None),
        Some(v) => v,
    };
    let bad = || Error::Config(format!("bad backbone.lrn '{v}'"));
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    let [size, alpha, beta, k] = parts[..] else {
        return Err(bad());
    };
    Ok(Some(LrnSpec {
        size: size.parse().map_err(|_| bad())?,
        alpha: alpha.parse().map_err(|_| bad())?,
        beta: beta.parse().map_err(|_| bad())?,
        k: k.parse().map_err(|_| bad())?,
    }))
}

pub fn frame_rect(frame: &RgbImage) -> BBox {
    BBox {
        x1: 0.0,
        y1: 0.0,
        x2: frame.width() as f64,
        y2: frame.height() as f64,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub backbone: BackboneParams,
    pub head: HeadParams,
}

impl Network {
    pub fn init<R: Rng + ?Sized>(
        config: NetworkConfig,
        domains: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let backbone = BackboneParams::init(&config.backbone, rng);
        let head = HeadParams::init(&config.head_config(domains), rng)?;
        Ok(Self {
            config,
            backbone,
            head,
        })
    }

    /// Crop enclosing the whole frame and every box in `extra`, resized so
    /// `target` measures the configured input side.
    pub fn prepare_frame(
        &self,
        frame: &RgbImage,
        target: &BBox,
        extra: &[BBox],
    ) -> Result<PreparedInput> {
        let mut boxes = Vec::with_capacity(extra.len() + 1);
        boxes.push(frame_rect(frame));
        boxes.extend_from_slice(extra);
        prepare_input(
            frame,
            target,
            &boxes,
            &CropOptions::for_config(&self.config.backbone),
        )
    }

    pub fn feature_map(&self, crop: &Tensor) -> Result<Tensor> {
        forward_features(crop, &self.backbone, &self.config.backbone)
    }

    /// Flattened RoI features `[N, len]` for boxes given in crop pixels.
    pub fn roi_features(&self, featmap: &Tensor, crop_boxes: &[BBox]) -> Result<Tensor> {
        let feats = extract_batch(
            featmap,
            crop_boxes,
            &self.config.backbone.geometry(),
            &self.config.roi,
        )?;
        stack_features(&feats)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        let cfg = &self.config;
        let ch = cfg.backbone.channels();
        let meta = [
            ("backbone.variant", cfg.backbone.variant.name().to_string()),
            (
                "backbone.channels",
                format!("{},{},{}", ch[0], ch[1], ch[2]),
            ),
            ("backbone.input_side", cfg.backbone.input_side.to_string()),
            ("backbone.lrn", lrn_meta(cfg.backbone.lrn.as_ref())),
            ("roi.mode", cfg.roi.mode.name().to_string()),
            ("roi.samples_per_bin", cfg.roi.samples_per_bin.to_string()),
            ("roi.align_bandwidth", cfg.roi.align_bandwidth.to_string()),
            ("head.width", cfg.fc_width.to_string()),
            ("head.domains", self.head.domains().to_string()),
        ];
        for (k, v) in meta {
            c.metadata.insert(k.to_string(), v);
        }
        for (name, t) in BACKBONE_PARAM_NAMES.iter().zip(self.backbone.tensors()) {
            c.insert(*name, t.clone());
        }
        for (name, t) in self.head.names().into_iter().zip(self.head.tensors()) {
            c.insert(name, t.clone());
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let parse = |key: &str| -> Result<usize> {
            c.meta(key)?
                .parse()
                .map_err(|_| Error::Config(format!("checkpoint key '{key}' is not an integer")))
        };
        let variant = BackboneVariant::parse(c.meta("backbone.variant")?)?;
        let ch: Vec<usize> = c
            .meta("backbone.channels")?
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config("bad backbone.channels".into()))
            })
            .collect::<Result<_>>()?;
        let ch: [usize; 3] = ch
            .try_into()
            .map_err(|_| Error::Config("backbone.channels needs three values".into()))?;
        let mut backbone_cfg = BackboneConfig::new(variant, ch);
        backbone_cfg.input_side = parse("backbone.input_side")?;
        backbone_cfg.lrn = parse_lrn(c.metadata.get("backbone.lrn").map(String::as_str))?;
        let mut roi = RoiConfig::with_mode(RoiMode::parse(c.meta("roi.mode")?)?);
        roi.samples_per_bin = parse("roi.samples_per_bin")?;
        roi.align_bandwidth = parse("roi.align_bandwidth")?;
        let config = NetworkConfig {
            backbone: backbone_cfg,
            roi,
            fc_width: parse("head.width")?,
        };
        let get = |name: &str| c.get(name).cloned();
        let backbone = BackboneParams {
            conv1_w: get("conv1.weight")?,
            conv1_b: get("conv1.bias")?,
            conv2_w: get("conv2.weight")?,
            conv2_b: get("conv2.bias")?,
            conv3_w: get("conv3.weight")?,
            conv3_b: get("conv3.bias")?,
        };
        backbone.check(&config.backbone)?;
        let domains = parse("head.domains")?;
        let mut head = HeadParams {
            fc4_w: get("fc4.weight")?,
            fc4_b: get("fc4.bias")?,
            fc5_w: get("fc5.weight")?,
            fc5_b: get("fc5.bias")?,
            fc6_w: Vec::with_capacity(domains),
            fc6_b: Vec::with_capacity(domains),
        };
        for d in 0..domains {
            head.fc6_w.push(get(&format!("fc6.{d}.weight"))?);
            head.fc6_b.push(get(&format!("fc6.{d}.bias"))?);
        }
        head.check()?;
        if head.fc4_w.dim(1) != config.feature_len() || head.width() != config.fc_width {
            return Err(Error::Dimension(
                "checkpoint head does not match its backbone".into(),
            ));
        }
        Ok(Self {
            config,
            backbone,
            head,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Network::init(
            NetworkConfig::toy(BackboneVariant::DenseFm, RoiMode::Align),
            3,
            &mut rng,
        )
        .unwrap();
        let back = Network::from_checkpoint(
            &Checkpoint::from_bytes(&net.to_checkpoint().to_bytes()).unwrap(),
        )
        .unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn normalization_settings_survive_a_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cfg = NetworkConfig::toy(BackboneVariant::Original, RoiMode::AdaptiveAlign);
        cfg.backbone.lrn = Some(LrnSpec {
            size: 3,
            alpha: 0.25,
            beta: 0.5,
            k: 1.5,
        });
        let net = Network::init(cfg, 2, &mut rng).unwrap();
        let mut ckpt = net.to_checkpoint();
        assert_eq!(Network::from_checkpoint(&ckpt).unwrap(), net);
        ckpt.metadata.remove("backbone.lrn");
        assert_eq!(
            Network::from_checkpoint(&ckpt).unwrap().config.backbone.lrn,
            None
        );
        ckpt.metadata.insert("backbone.lrn".into(), "5,1".into());
        assert!(Network::from_checkpoint(&ckpt).is_err());
    }
}
