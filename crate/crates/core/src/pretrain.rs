//! Offline multi-domain training.
//!
//! Iteration `k` (counting from 1) draws a minibatch from domain
//! `k mod D` only, scores it with that domain's branch plus a random
//! subset of other branches for the instance loss, and adds the gradient
//! to an accumulator that steps SGD every `accumulate_every` iterations.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{backbone_backward, forward_traced, BackboneTrace, CropTransform};
use crate::checkpoint::Checkpoint;
use crate::dataset::DomainDataset;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::head::{head_step, DropoutMasks, LossBreakdown, DEFAULT_ALPHA, SHARED_TENSORS};
use crate::network::{frame_rect, Network, NetworkConfig};
use crate::optim::{GradAccumulator, SgdState};
use crate::roi::{extract_batch_traced, roi_backward, stack_features, RoiTrace};
use crate::sampling::{choose_distinct, choose_fill, sample_boxes, IouGate, ProposalDistribution};
use crate::tensor::Tensor;

/// How the per-sample losses of a minibatch are combined into the
/// gradient handed to SGD. The reported loss is always the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

impl Reduction {
    pub fn name(&self) -> &'static str {
        match self {
            Reduction::Mean => "mean",
            Reduction::Sum => "sum",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Reduction::Mean),
            "sum" => Ok(Reduction::Sum),
            other => Err(Error::Config(format!("unknown reduction '{other}'"))),
        }
    }

    pub fn grad_scale(&self, batch: usize) -> f64 {
        match self {
            Reduction::Mean => 1.0,
            Reduction::Sum => batch as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub frames_per_iter: usize,
    pub pos_per_frame: usize,
    pub neg_per_frame: usize,
    pub pos_iou: f64,
    pub neg_iou: f64,
    pub accumulate_every: usize,
    /// Size of the domain subset the instance loss normalizes over.
    pub inst_domains: usize,
    pub alpha: f64,
    /// One epoch is one pass over the D domains.
    pub epochs: usize,
    /// Overrides `epochs * D` when set.
    pub iterations: Option<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub fc6_lr_mult: f64,
    pub conv_lr_mult: f64,
    /// Dropout rate on the fc4 and fc5 activations; 0 disables it.
    pub dropout: f64,
    pub train_backbone: bool,
    pub reduction: Reduction,
    pub pos_proposal: ProposalDistribution,
    pub neg_proposal: ProposalDistribution,
    /// Keep a snapshot every this many optimizer steps.
    pub snapshot_every: Option<usize>,
    /// Where the diagnostic checkpoint goes when the loss turns non-finite.
    pub diagnostic_dir: Option<PathBuf>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            frames_per_iter: 8,
            pos_per_frame: 32,
            neg_per_frame: 96,
            pos_iou: 0.7,
            neg_iou: 0.5,
            accumulate_every: 50,
            inst_domains: 100,
            alpha: DEFAULT_ALPHA,
            epochs: 1000,
            iterations: None,
            learning_rate: 0.0001,
            momentum: 0.9,
            weight_decay: 0.0005,
            fc6_lr_mult: 1.0,
            conv_lr_mult: 1.0,
            dropout: 0.0,
            train_backbone: true,
            reduction: Reduction::Sum,
            pos_proposal: ProposalDistribution::POSITIVE,
            neg_proposal: ProposalDistribution::NEGATIVE,
            snapshot_every: None,
            diagnostic_dir: None,
        }
    }
}

impl PretrainConfig {
    /// Small preset that trains a toy network in seconds: frozen random
    /// backbone, fewer samples, frequent optimizer steps.
    pub fn toy() -> Self {
        Self {
            frames_per_iter: 2,
            pos_per_frame: 16,
            neg_per_frame: 48,
            accumulate_every: 2,
            epochs: 100,
            learning_rate: 0.001,
            fc6_lr_mult: 1.0,
            train_backbone: false,
            reduction: Reduction::Mean,
            ..Self::default()
        }
    }

    pub fn total_iterations(&self, domains: usize) -> usize {
        self.iterations.unwrap_or(self.epochs * domains)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.frames_per_iter,
            self.pos_per_frame,
            self.neg_per_frame,
            self.accumulate_every,
            self.inst_domains,
        ];
        if counts.contains(&0) {
            return Err(Error::Config("pretraining counts must be positive".into()));
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.pos_iou)
            || !unit.contains(&self.neg_iou)
            || self.pos_iou <= self.neg_iou
        {
            return Err(Error::Config(format!(
                "need 0 <= neg_iou < pos_iou <= 1, got {} and {}",
                self.neg_iou, self.pos_iou
            )));
        }
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(Error::Config("alpha must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Active domain of iteration `k` (1-based) among `d` domains.
pub fn domain_schedule(k: usize, d: usize) -> usize {
    k % d
}

/// Active domain plus `size - 1` distinct others, active first.
pub fn domain_subset<R: Rng + ?Sized>(
    active: usize,
    domains: usize,
    size: usize,
    rng: &mut R,
) -> Vec<usize> {
    let others = choose_distinct(domains - 1, size.clamp(1, domains) - 1, rng);
    let mut s = vec![active];
    s.extend(
        others
            .into_iter()
            .map(|i| if i >= active { i + 1 } else { i }),
    );
    s
}

struct FramePart {
    rois: usize,
    map_shape: Vec<usize>,
    backbone: Option<BackboneTrace>,
    roi: Vec<RoiTrace>,
}

/// One single-domain training batch.
pub struct Minibatch {
    pub domain: usize,
    /// `[N, len]`, frame by frame, positives before negatives.
    pub features: Tensor,
    pub labels: Vec<bool>,
    /// `(frame index, sample boxes in frame pixels)` per drawn frame.
    pub frames: Vec<(usize, Vec<BBox>)>,
    parts: Vec<FramePart>,
}

/// Feature maps of a frozen backbone, keyed by `(domain, frame)`.
pub type MapCache = HashMap<(usize, usize), (Tensor, CropTransform)>;

pub fn build_minibatch<R: Rng + ?Sized>(
    dataset: &DomainDataset,
    domain: usize,
    net: &Network,
    cfg: &PretrainConfig,
    rng: &mut R,
    mut cache: Option<&mut MapCache>,
) -> Result<Minibatch> {
    let seq = dataset
        .domains
        .get(domain)
        .ok_or_else(|| Error::Argument(format!("domain {domain} out of range")))?;
    let frame_ids = if seq.len() >= cfg.frames_per_iter {
        choose_distinct(seq.len(), cfg.frames_per_iter, rng)
    } else {
        choose_fill(seq.len(), cfg.frames_per_iter, rng)
    };
    let geometry = net.config.backbone.geometry();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut frames = Vec::new();
    let mut parts = Vec::new();
    for &fi in &frame_ids {
        let (img, gt) = (&seq.frames[fi], &seq.groundtruth[fi]);
        let bounds = frame_rect(img);
        let mut boxes = sample_boxes(
            gt,
            &bounds,
            cfg.pos_per_frame,
            IouGate::AtLeast(cfg.pos_iou),
            &cfg.pos_proposal,
            rng,
        )?;
        boxes.extend(sample_boxes(
            gt,
            &bounds,
            cfg.neg_per_frame,
            IouGate::Below(cfg.neg_iou),
            &cfg.neg_proposal,
            rng,
        )?);
        let (map, transform, btrace) = match cache.as_deref_mut() {
            Some(c) if !cfg.train_backbone => {
                let (m, t) = match c.entry((domain, fi)) {
                    Entry::Occupied(e) => e.into_mut(),
                    Entry::Vacant(e) => {
                        let prep = net.prepare_frame(img, gt, &[])?;
                        e.insert((net.feature_map(&prep.tensor)?, prep.transform))
                    }
                };
                (m.clone(), *t, None)
            }
            _ => {
                let prep = net.prepare_frame(img, gt, &[])?;
                if cfg.train_backbone {
                    let (m, tr) =
                        forward_traced(&prep.tensor, &net.backbone, &net.config.backbone)?;
                    (m, prep.transform, Some(tr))
                } else {
                    (net.feature_map(&prep.tensor)?, prep.transform, None)
                }
            }
        };
        let crop_boxes: Vec<BBox> = boxes.iter().map(|b| transform.to_crop(b)).collect();
        let (feats, traces) = extract_batch_traced(&map, &crop_boxes, &geometry, &net.config.roi)?;
        rows.push(stack_features(&feats)?);
        labels.extend((0..boxes.len()).map(|i| i < cfg.pos_per_frame));
        parts.push(FramePart {
            rois: boxes.len(),
            map_shape: map.shape().to_vec(),
            backbone: btrace,
            roi: if cfg.train_backbone {
                traces
            } else {
                Vec::new()
            },
        });
        frames.push((fi, boxes));
    }
    let len = rows[0].dim(1);
    let data: Vec<f64> = rows.into_iter().flat_map(Tensor::into_data).collect();
    Ok(Minibatch {
        domain,
        features: Tensor::new([labels.len(), len], data)?,
        labels,
        frames,
        parts,
    })
}

/// Training state that can be advanced one iteration at a time.
pub struct Pretrainer<'a> {
    pub network: Network,
    pub config: PretrainConfig,
    dataset: &'a DomainDataset,
    sgd: SgdState,
    acc: GradAccumulator,
    rng: ChaCha8Rng,
    cache: MapCache,
    iteration: usize,
    pub history: Vec<LossBreakdown>,
    pub snapshots: Vec<(usize, Checkpoint)>,
}

fn param_refs(net: &Network, with_backbone: bool) -> Vec<&Tensor> {
    let mut v = net.head.tensors();
    if with_backbone {
        v.extend(net.backbone.tensors());
    }
    v
}

impl<'a> Pretrainer<'a> {
    /// Fresh network with one branch per domain, initialized from `seed`.
    pub fn new(
        dataset: &'a DomainDataset,
        net_config: NetworkConfig,
        config: PretrainConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let network = Network::init(net_config, dataset.len(), &mut rng)?;
        Self::from_network(dataset, network, config, rng)
    }

    pub fn from_network(
        dataset: &'a DomainDataset,
        network: Network,
        config: PretrainConfig,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        if network.head.domains() != dataset.len() {
            return Err(Error::Config(format!(
                "network has {} branches for {} domains",
                network.head.domains(),
                dataset.len()
            )));
        }
        let params = param_refs(&network, config.train_backbone);
        let mut sgd = SgdState::new(
            &params,
            config.learning_rate,
            config.momentum,
            config.weight_decay,
        )?;
        let n_head = network.head.tensors().len();
        for i in SHARED_TENSORS..n_head {
            sgd.set_lr_scale(i, config.fc6_lr_mult);
        }
        for i in n_head..params.len() {
            sgd.set_lr_scale(i, config.conv_lr_mult);
        }
        let acc = GradAccumulator::new(&params, config.accumulate_every)?;
        Ok(Self {
            network,
            config,
            dataset,
            sgd,
            acc,
            rng,
            cache: MapCache::new(),
            iteration: 0,
            history: Vec::new(),
            snapshots: Vec::new(),
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn flushes(&self) -> usize {
        self.acc.flushes()
    }

    fn diagnostic(&self, k: usize) -> Option<PathBuf> {
        let dir = self.config.diagnostic_dir.as_ref()?;
        let path = dir.join(format!("diagnostic_iter{k}.ckpt"));
        self.network.to_checkpoint().save(&path).ok().map(|_| path)
    }

    fn non_finite(&self, k: usize, e: Error) -> Error {
        match e {
            Error::Numeric(_) | Error::NonFiniteLoss { .. } => Error::NonFiniteLoss {
                iteration: k,
                diagnostic: self.diagnostic(k),
            },
            other => other,
        }
    }

    /// Runs iteration `k = iteration() + 1` and returns its loss.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        let k = self.iteration + 1;
        let d = self.dataset.len();
        let active = domain_schedule(k, d);
        let cache = (!self.config.train_backbone).then_some(&mut self.cache);
        let batch = build_minibatch(
            self.dataset,
            active,
            &self.network,
            &self.config,
            &mut self.rng,
            cache,
        )?;
        let subset = domain_subset(active, d, self.config.inst_domains, &mut self.rng);
        let scale = self.config.reduction.grad_scale(batch.labels.len());
        let masks = DropoutMasks::sample(
            batch.labels.len(),
            self.network.head.width(),
            self.config.dropout,
            &mut self.rng,
        )?;
        let step = head_step(
            &batch.features,
            &batch.labels,
            &self.network.head,
            active,
            &subset,
            self.config.alpha,
            scale,
            masks.as_ref(),
        )
        .map_err(|e| self.non_finite(k, e))?;
        if !step.loss.total.is_finite() {
            return Err(self.non_finite(k, Error::Numeric("loss".into())));
        }
        let mut grads = step.grads;
        if self.config.train_backbone {
            grads.extend(self.backbone_grads(&batch, &step.d_input)?);
        }
        self.acc.accumulate(&grads)?;
        let train_backbone = self.config.train_backbone;
        let flushed = {
            let mut params: Vec<&mut Tensor> = self.network.head.tensors_mut();
            if train_backbone {
                params.extend(self.network.backbone.tensors_mut());
            }
            self.acc.flush_every(&mut params, &mut self.sgd)
        };
        let stepped = flushed.map_err(|e| self.non_finite(k, e))?;
        if stepped {
            if let Some(every) = self.config.snapshot_every {
                if self.acc.flushes().is_multiple_of(every) {
                    self.snapshots.push((self.acc.flushes(), self.checkpoint()));
                }
            }
        }
        self.iteration = k;
        self.history.push(step.loss);
        Ok(step.loss)
    }

    fn backbone_grads(&self, batch: &Minibatch, d_input: &Tensor) -> Result<Vec<Tensor>> {
        let len = d_input.dim(1);
        let c = self.network.config.backbone.out_channels();
        let (ph, pw) = self.network.config.roi.pooled_size();
        let mut total: Option<Vec<Tensor>> = None;
        let mut row = 0;
        for part in &batch.parts {
            let grads: Vec<Tensor> = (0..part.rois)
                .map(|i| {
                    let s = (row + i) * len;
                    Tensor::new([c, ph, pw], d_input.data()[s..s + len].to_vec())
                })
                .collect::<Result<_>>()?;
            row += part.rois;
            let d_map = roi_backward(&part.map_shape, &part.roi, &grads, &self.network.config.roi)?;
            let trace = part
                .backbone
                .as_ref()
                .ok_or_else(|| Error::State("missing backbone trace".into()))?;
            let g = backbone_backward(
                trace,
                &self.network.backbone,
                &self.network.config.backbone,
                &d_map,
            )?;
            match total.as_mut() {
                None => total = Some(g),
                Some(t) => {
                    for (a, b) in t.iter_mut().zip(&g) {
                        a.add_assign(b)?;
                    }
                }
            }
        }
        total.ok_or_else(|| Error::State("empty minibatch".into()))
    }

    /// Network checkpoint tagged with the training settings.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = self.network.to_checkpoint();
        let cfg = &self.config;
        let meta = [
            ("pretrain.alpha", cfg.alpha.to_string()),
            ("pretrain.iterations", self.iteration.to_string()),
            ("pretrain.flushes", self.acc.flushes().to_string()),
            ("pretrain.train_backbone", cfg.train_backbone.to_string()),
        ];
        for (k, v) in meta {
            c.metadata.insert(k.to_string(), v);
        }
        c
    }

    /// Runs every remaining iteration.
    pub fn run(&mut self) -> Result<()> {
        let total = self.config.total_iterations(self.dataset.len());
        while self.iteration < total {
            self.step()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub network: Network,
    pub checkpoint: Checkpoint,
    pub history: Vec<LossBreakdown>,
    pub flushes: usize,
    pub snapshots: Vec<(usize, Checkpoint)>,
}

/// Full pretraining run, deterministic in `seed`.
pub fn pretrain_loop(
    dataset: &DomainDataset,
    net_config: NetworkConfig,
    config: PretrainConfig,
    seed: u64,
) -> Result<PretrainOutcome> {
    let mut t = Pretrainer::new(dataset, net_config, config, seed)?;
    t.run()?;
    let mut checkpoint = t.checkpoint();
    checkpoint
        .metadata
        .insert("pretrain.seed".into(), seed.to_string());
    Ok(PretrainOutcome {
        checkpoint,
        history: std::mem::take(&mut t.history),
        flushes: t.flushes(),
        snapshots: std::mem::take(&mut t.snapshots),
        network: t.network,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_cycles() {
        let v: Vec<usize> = (1..=6).map(|k| domain_schedule(k, 3)).collect();
        assert_eq!(v, [1, 2, 0, 1, 2, 0]);
    }

    #[test]
    fn subset_contains_active_and_is_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for active in 0..5 {
            let mut s = domain_subset(active, 5, 3, &mut rng);
            assert_eq!(s[0], active);
            s.sort();
            s.dedup();
            assert_eq!(s.len(), 3);
            assert!(s.iter().all(|&d| d < 5));
        }
        assert_eq!(domain_subset(0, 1, 100, &mut rng), vec![0]);
        assert_eq!(domain_subset(1, 3, 100, &mut rng).len(), 3);
    }
}
