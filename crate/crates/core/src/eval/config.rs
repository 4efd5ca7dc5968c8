//! Flat `key = value` run configuration shared by every CLI command.
//!
//! A file names a `preset` (`full` or `toy`) and overrides any keys on
//! top of it. `#` starts a comment. [`RunConfig::to_text`] lists every key
//! in a fixed order, so its SHA-256 identifies a configuration.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::backbone::BackboneVariant;
use crate::error::{Error, Result};
use crate::layers::LrnSpec;
use crate::network::NetworkConfig;
use crate::pretrain::{PretrainConfig, Reduction};
use crate::roi::RoiMode;
use crate::tracker::TrackerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Full channel widths and the published training settings.
    Full,
    /// Narrow network and short schedules for desk-scale runs.
    Toy,
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Full => "full",
            Preset::Toy => "toy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Preset::Full),
            "toy" => Ok(Preset::Toy),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected full or toy)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub network: NetworkConfig,
    pub pretrain: PretrainConfig,
    pub tracker: TrackerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Full)
    }
}

/// Ablation cells understood by [`RunConfig::named`].
pub const NAMED: [&str; 8] = [
    "pooling",
    "align",
    "adaptive",
    "dense-align",
    "improved",
    "ours",
    "ours-bbr",
    "ours-bbr-iel",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got '{v}'"
        ))),
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let variant = BackboneVariant::DenseFm;
        let mode = RoiMode::AdaptiveAlign;
        match preset {
            Preset::Full => Self {
                preset,
                network: NetworkConfig::full(variant, mode),
                pretrain: PretrainConfig::default(),
                tracker: TrackerConfig::default(),
            },
            Preset::Toy => Self {
                preset,
                network: NetworkConfig::toy(variant, mode),
                pretrain: PretrainConfig::toy(),
                tracker: TrackerConfig::toy(),
            },
        }
    }

    pub fn toy() -> Self {
        Self::preset(Preset::Toy)
    }

    /// Applies the overrides that define an ablation cell.
    pub fn named(&self, name: &str) -> Result<Self> {
        let mut c = self.clone();
        let set_arch = |c: &mut Self, variant: &str, mode: &str| -> Result<()> {
            c.set("network.variant", variant)?;
            c.set("roi.mode", mode)
        };
        match name {
            "pooling" => set_arch(&mut c, "original", "pooling")?,
            "align" => set_arch(&mut c, "original", "align")?,
            "adaptive" => set_arch(&mut c, "original", "adaptive")?,
            "dense-align" => set_arch(&mut c, "dense", "align")?,
            "improved" | "ours" => set_arch(&mut c, "dense", "adaptive")?,
            "ours-bbr" => {
                set_arch(&mut c, "dense", "adaptive")?;
                c.tracker.bbox_regression = false;
            }
            "ours-bbr-iel" => {
                set_arch(&mut c, "dense", "adaptive")?;
                c.tracker.bbox_regression = false;
                c.pretrain.alpha = 0.0;
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown configuration '{other}' (expected one of {})",
                    NAMED.join(", ")
                )))
            }
        }
        Ok(c)
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let n = &self.network;
        let p = &self.pretrain;
        let t = &self.tracker;
        let ch = n.backbone.channels();
        vec![
            ("preset", self.preset.name().into()),
            ("network.variant", n.backbone.variant.name().into()),
            ("network.channels", format!("{},{},{}", ch[0], ch[1], ch[2])),
            ("network.fc_width", n.fc_width.to_string()),
            ("network.input_side", n.backbone.input_side.to_string()),
            ("network.lrn", n.backbone.lrn.is_some().to_string()),
            ("roi.mode", n.roi.mode.name().into()),
            ("roi.samples_per_bin", n.roi.samples_per_bin.to_string()),
            ("roi.align_bandwidth", n.roi.align_bandwidth.to_string()),
            ("pretrain.frames_per_iter", p.frames_per_iter.to_string()),
            ("pretrain.pos_per_frame", p.pos_per_frame.to_string()),
            ("pretrain.neg_per_frame", p.neg_per_frame.to_string()),
            ("pretrain.pos_iou", p.pos_iou.to_string()),
            ("pretrain.neg_iou", p.neg_iou.to_string()),
            ("pretrain.accumulate_every", p.accumulate_every.to_string()),
            ("pretrain.inst_domains", p.inst_domains.to_string()),
            ("pretrain.alpha", p.alpha.to_string()),
            ("pretrain.epochs", p.epochs.to_string()),
            (
                "pretrain.iterations",
                p.iterations
                    .map_or_else(|| "none".into(), |v| v.to_string()),
            ),
            ("pretrain.learning_rate", p.learning_rate.to_string()),
            ("pretrain.momentum", p.momentum.to_string()),
            ("pretrain.weight_decay", p.weight_decay.to_string()),
            ("pretrain.fc6_lr_mult", p.fc6_lr_mult.to_string()),
            ("pretrain.conv_lr_mult", p.conv_lr_mult.to_string()),
            ("pretrain.dropout", p.dropout.to_string()),
            ("pretrain.train_backbone", p.train_backbone.to_string()),
            ("pretrain.reduction", p.reduction.name().into()),
            ("tracker.n_candidates", t.n_candidates.to_string()),
            ("tracker.trans_sigma", t.trans_sigma.to_string()),
            ("tracker.scale_step", t.scale_step.to_string()),
            ("tracker.scale_clip", t.scale_clip.to_string()),
            ("tracker.success_threshold", t.success_threshold.to_string()),
            ("tracker.init_pos", t.init_pos.to_string()),
            ("tracker.init_neg", t.init_neg.to_string()),
            ("tracker.init_pos_iou", t.init_pos_iou.to_string()),
            ("tracker.init_neg_iou", t.init_neg_iou.to_string()),
            ("tracker.update_pos", t.update_pos.to_string()),
            ("tracker.update_neg", t.update_neg.to_string()),
            ("tracker.update_pos_iou", t.update_pos_iou.to_string()),
            ("tracker.update_neg_iou", t.update_neg_iou.to_string()),
            ("tracker.batch_pos", t.batch_pos.to_string()),
            ("tracker.mining_pool", t.mining_pool.to_string()),
            ("tracker.mining_keep", t.mining_keep.to_string()),
            ("tracker.long_interval", t.long_interval.to_string()),
            ("tracker.t_long", t.t_long.to_string()),
            ("tracker.t_short", t.t_short.to_string()),
            ("tracker.init_iters", t.init_iters.to_string()),
            ("tracker.update_iters", t.update_iters.to_string()),
            ("tracker.init_lr", t.init_lr.to_string()),
            ("tracker.update_lr", t.update_lr.to_string()),
            ("tracker.fc6_lr_mult", t.fc6_lr_mult.to_string()),
            ("tracker.momentum", t.momentum.to_string()),
            ("tracker.weight_decay", t.weight_decay.to_string()),
            ("tracker.reduction", t.reduction.name().into()),
            ("tracker.bbox_regression", t.bbox_regression.to_string()),
            ("tracker.bbr_samples", t.bbr_samples.to_string()),
            ("tracker.bbr_lambda", t.bbr_lambda.to_string()),
            ("tracker.top_k", t.top_k.to_string()),
            ("tracker.max_resample", t.max_resample.to_string()),
            ("tracker.dropout", t.dropout.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let n = &mut self.network;
        let p = &mut self.pretrain;
        let t = &mut self.tracker;
        match key {
            "preset" => {
                return Err(Error::Config(
                    "preset can only be chosen once, before other keys".into(),
                ));
            }
            "network.variant" => {
                let variant = BackboneVariant::parse(v)?;
                let (ch, side, lrn) =
                    (n.backbone.channels(), n.backbone.input_side, n.backbone.lrn);
                n.backbone = crate::backbone::BackboneConfig::new(variant, ch);
                n.backbone.input_side = side;
                n.backbone.lrn = lrn;
            }
            "network.channels" => {
                let ch: Vec<usize> = v
                    .split(',')
                    .map(|s| parse_num(key, s.trim()))
                    .collect::<Result<_>>()?;
                let ch: [usize; 3] = ch.try_into().map_err(|_| {
                    Error::Config(format!("{key}: expected three comma-separated values"))
                })?;
                if ch.contains(&0) {
                    return Err(Error::Config(format!(
                        "{key}: channel counts must be positive"
                    )));
                }
                let (side, lrn) = (n.backbone.input_side, n.backbone.lrn);
                n.backbone = crate::backbone::BackboneConfig::new(n.backbone.variant, ch);
                n.backbone.input_side = side;
                n.backbone.lrn = lrn;
            }
            "network.fc_width" => n.fc_width = parse_num(key, v)?,
            "network.input_side" => n.backbone.input_side = parse_num(key, v)?,
            "network.lrn" => n.backbone.lrn = parse_bool(key, v)?.then(LrnSpec::default),
            "roi.mode" => n.roi.mode = RoiMode::parse(v)?,
            "roi.samples_per_bin" => n.roi.samples_per_bin = parse_num(key, v)?,
            "roi.align_bandwidth" => n.roi.align_bandwidth = parse_num(key, v)?,
            "pretrain.frames_per_iter" => p.frames_per_iter = parse_num(key, v)?,
            "pretrain.pos_per_frame" => p.pos_per_frame = parse_num(key, v)?,
            "pretrain.neg_per_frame" => p.neg_per_frame = parse_num(key, v)?,
            "pretrain.pos_iou" => p.pos_iou = parse_num(key, v)?,
            "pretrain.neg_iou" => p.neg_iou = parse_num(key, v)?,
            "pretrain.accumulate_every" => p.accumulate_every = parse_num(key, v)?,
            "pretrain.inst_domains" => p.inst_domains = parse_num(key, v)?,
            "pretrain.alpha" => p.alpha = parse_num(key, v)?,
            "pretrain.epochs" => p.epochs = parse_num(key, v)?,
            "pretrain.iterations" => {
                p.iterations = if v == "none" {
                    None
                } else {
                    Some(parse_num(key, v)?)
                };
            }
            "pretrain.learning_rate" => p.learning_rate = parse_num(key, v)?,
            "pretrain.momentum" => p.momentum = parse_num(key, v)?,
            "pretrain.weight_decay" => p.weight_decay = parse_num(key, v)?,
            "pretrain.fc6_lr_mult" => p.fc6_lr_mult = parse_num(key, v)?,
            "pretrain.conv_lr_mult" => p.conv_lr_mult = parse_num(key, v)?,
            "pretrain.dropout" => p.dropout = parse_num(key, v)?,
            "pretrain.train_backbone" => p.train_backbone = parse_bool(key, v)?,
            "pretrain.reduction" => p.reduction = Reduction::parse(v)?,
            "tracker.n_candidates" => t.n_candidates = parse_num(key, v)?,
            "tracker.trans_sigma" => t.trans_sigma = parse_num(key, v)?,
            "tracker.scale_step" => t.scale_step = parse_num(key, v)?,
            "tracker.scale_clip" => t.scale_clip = parse_num(key, v)?,
            "tracker.success_threshold" => t.success_threshold = parse_num(key, v)?,
            "tracker.init_pos" => t.init_pos = parse_num(key, v)?,
            "tracker.init_neg" => t.init_neg = parse_num(key, v)?,
            "tracker.init_pos_iou" => t.init_pos_iou = parse_num(key, v)?,
            "tracker.init_neg_iou" => t.init_neg_iou = parse_num(key, v)?,
            "tracker.update_pos" => t.update_pos = parse_num(key, v)?,
            "tracker.update_neg" => t.update_neg = parse_num(key, v)?,
            "tracker.update_pos_iou" => t.update_pos_iou = parse_num(key, v)?,
            "tracker.update_neg_iou" => t.update_neg_iou = parse_num(key, v)?,
            "tracker.batch_pos" => t.batch_pos = parse_num(key, v)?,
            "tracker.mining_pool" => t.mining_pool = parse_num(key, v)?,
            "tracker.mining_keep" => t.mining_keep = parse_num(key, v)?,
            "tracker.long_interval" => t.long_interval = parse_num(key, v)?,
            "tracker.t_long" => t.t_long = parse_num(key, v)?,
            "tracker.t_short" => t.t_short = parse_num(key, v)?,
            "tracker.init_iters" => t.init_iters = parse_num(key, v)?,
            "tracker.update_iters" => t.update_iters = parse_num(key, v)?,
            "tracker.init_lr" => t.init_lr = parse_num(key, v)?,
            "tracker.update_lr" => t.update_lr = parse_num(key, v)?,
            "tracker.fc6_lr_mult" => t.fc6_lr_mult = parse_num(key, v)?,
            "tracker.momentum" => t.momentum = parse_num(key, v)?,
            "tracker.weight_decay" => t.weight_decay = parse_num(key, v)?,
            "tracker.reduction" => t.reduction = Reduction::parse(v)?,
            "tracker.bbox_regression" => t.bbox_regression = parse_bool(key, v)?,
            "tracker.bbr_samples" => t.bbr_samples = parse_num(key, v)?,
            "tracker.bbr_lambda" => t.bbr_lambda = parse_num(key, v)?,
            "tracker.top_k" => t.top_k = parse_num(key, v)?,
            "tracker.max_resample" => t.max_resample = parse_num(key, v)?,
            "tracker.dropout" => t.dropout = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `preset` may appear anywhere and is
    /// applied before every other key.
    pub fn from_text(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let preset = match pairs.iter().find(|(k, _)| k == "preset") {
            Some((_, v)) => Preset::parse(v)?,
            None => Preset::Full,
        };
        let mut c = Self::preset(preset);
        for (k, v) in pairs.iter().filter(|(k, _)| k != "preset") {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.network;
        if n.fc_width == 0 || n.roi.samples_per_bin == 0 || n.roi.align_bandwidth == 0 {
            return Err(Error::Config(
                "network widths and RoI sampling counts must be positive".into(),
            ));
        }
        if n.backbone.input_side < n.backbone.receptive_field() {
            return Err(Error::Config(format!(
                "network.input_side {} is below the receptive field {}",
                n.backbone.input_side,
                n.backbone.receptive_field()
            )));
        }
        self.pretrain.validate()?;
        self.tracker.validate()
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Hex SHA-256 of [`Self::to_text`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// `key = value` pairs in file order; rejects duplicates.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
            what: "config file",
            detail: format!("line {}: expected key = value", i + 1),
        })?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if out.iter().any(|(seen, _)| *seen == k) {
            return Err(Error::Config(format!("key '{k}' appears twice")));
        }
        out.push((k, v));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_for_both_presets() {
        for preset in [Preset::Full, Preset::Toy] {
            let c = RunConfig::preset(preset);
            assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
        }
    }

    #[test]
    fn ablation_plumbing_matches_hash() {
        let base = RunConfig::toy();
        let mut manual = base.named("ours").unwrap();
        manual.pretrain.alpha = 0.0;
        manual.tracker.bbox_regression = false;
        assert_eq!(manual.hash(), base.named("ours-bbr-iel").unwrap().hash());
        assert_ne!(manual.hash(), base.named("ours").unwrap().hash());
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(RunConfig::from_text("tracker.nope = 1").is_err());
        assert!(RunConfig::from_text("tracker.top_k = 2\ntracker.top_k = 3").is_err());
        assert!(RunConfig::from_text("tracker.top_k = x").is_err());
        let c = RunConfig::from_text("tracker.top_k = 5 # comment\npreset = toy").unwrap();
        assert_eq!((c.preset, c.tracker.top_k), (Preset::Toy, 5));
    }
}
