//! Online tracking: first-frame fine-tuning, per-frame candidate scoring
//! on one shared feature map, sample collection and scheduled updates.
//!
//! Per frame `t` (0 is the initialization frame):
//!
//! 1. draw candidates around the current state and score them all on one
//!    feature map of the frame;
//! 2. take the best candidate; it is a success when its positive
//!    probability exceeds `success_threshold`;
//! 3. on success, move the state there, optionally refine the reported
//!    box with the regressor and cache new samples;
//! 4. run a long-term update when `t` is a multiple of `long_interval`,
//!    otherwise a short-term update after a failure.

use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::checkpoint::Checkpoint;
use crate::dataset::Sequence;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::head::{
    head_forward_branches, head_step, positive_probability, DropoutMasks, HeadParams,
};
use crate::network::{frame_rect, Network};
use crate::optim::{sgd_step, SgdState};
use crate::pretrain::Reduction;
use crate::regressor::{fit_regressor, RegressorModel, DEFAULT_LAMBDA, TRAIN_IOU};
use crate::sampling::{choose_distinct, choose_fill, sample_boxes, IouGate, ProposalDistribution};
use crate::tensor::Tensor;

pub const MIN_SCALE: f64 = 1.0 / 8.0;
pub const MAX_SCALE: f64 = 8.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub n_candidates: usize,
    /// Candidate center spread, in units of the mean initial side.
    pub trans_sigma: f64,
    /// Candidate scale is `scale * scale_step^u`, `u ~ N(0,1)` clipped to
    /// `[-scale_clip, scale_clip]`.
    pub scale_step: f64,
    pub scale_clip: f64,
    pub success_threshold: f64,
    pub init_pos: usize,
    pub init_neg: usize,
    pub init_pos_iou: f64,
    pub init_neg_iou: f64,
    pub update_pos: usize,
    pub update_neg: usize,
    pub update_pos_iou: f64,
    pub update_neg_iou: f64,
    pub batch_pos: usize,
    pub mining_pool: usize,
    pub mining_keep: usize,
    pub long_interval: usize,
    pub t_long: usize,
    pub t_short: usize,
    pub init_iters: usize,
    pub update_iters: usize,
    pub init_lr: f64,
    pub update_lr: f64,
    pub fc6_lr_mult: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub reduction: Reduction,
    pub bbox_regression: bool,
    pub bbr_samples: usize,
    pub bbr_lambda: f64,
    /// 1 is the plain argmax; larger values average the best k candidates.
    pub top_k: usize,
    /// Attempts (each doubling the spread) when no candidate lands in the
    /// frame.
    pub max_resample: usize,
    /// Dropout rate on the fc4 and fc5 activations during updates.
    pub dropout: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            n_candidates: 256,
            trans_sigma: 0.3,
            scale_step: 1.05,
            scale_clip: 2.0,
            success_threshold: 0.5,
            init_pos: 500,
            init_neg: 5000,
            init_pos_iou: 0.7,
            init_neg_iou: 0.5,
            update_pos: 50,
            update_neg: 200,
            update_pos_iou: 0.7,
            update_neg_iou: 0.3,
            batch_pos: 32,
            mining_pool: 1024,
            mining_keep: 96,
            long_interval: 10,
            t_long: 100,
            t_short: 20,
            init_iters: 50,
            update_iters: 15,
            init_lr: 0.0003,
            update_lr: 0.0003,
            fc6_lr_mult: 10.0,
            momentum: 0.9,
            weight_decay: 0.0005,
            reduction: Reduction::Sum,
            bbox_regression: true,
            bbr_samples: 1000,
            bbr_lambda: DEFAULT_LAMBDA,
            top_k: 1,
            max_resample: 5,
            dropout: 0.0,
        }
    }
}

impl TrackerConfig {
    /// Settings for the toy network: the same schedule with a smaller step,
    /// since toy features are not on the scale the default rate assumes.
    pub fn toy() -> Self {
        Self {
            init_lr: 3e-5,
            update_lr: 3e-5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.n_candidates,
            self.init_pos,
            self.init_neg,
            self.update_pos,
            self.update_neg,
            self.batch_pos,
            self.mining_pool,
            self.mining_keep,
            self.long_interval,
            self.t_long,
            self.t_short,
            self.top_k,
        ];
        if counts.contains(&0) {
            return Err(Error::Config("tracker counts must be positive".into()));
        }
        if self.mining_keep > self.mining_pool || self.t_short > self.t_long {
            return Err(Error::Config(
                "need mining_keep <= mining_pool and t_short <= t_long".into(),
            ));
        }
        if self.init_pos_iou <= self.init_neg_iou || self.update_pos_iou <= self.update_neg_iou {
            return Err(Error::Config(
                "positive IoU gates must exceed negative ones".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if self.bbox_regression && self.bbr_samples < crate::regressor::MIN_PAIRS {
            return Err(Error::Config("too few regression samples".into()));
        }
        Ok(())
    }
}

/// Center and scale relative to the initial target size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetState {
    pub cx: f64,
    pub cy: f64,
    pub scale: f64,
}

impl TargetState {
    pub fn new(cx: f64, cy: f64, scale: f64) -> Self {
        Self {
            cx,
            cy,
            scale: scale.clamp(MIN_SCALE, MAX_SCALE),
        }
    }

    pub fn to_box(&self, base: (f64, f64)) -> BBox {
        let (w, h) = (base.0 * self.scale, base.1 * self.scale);
        BBox {
            x1: self.cx - w / 2.0,
            y1: self.cy - h / 2.0,
            x2: self.cx + w / 2.0,
            y2: self.cy + h / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub frame: usize,
    pub label: Label,
    /// `[n, F]` flattened RoI features.
    pub features: Tensor,
}

/// Cached RoI features from earlier frames, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMemory {
    entries: Vec<MemoryEntry>,
    pub t_long: usize,
    pub t_short: usize,
}

impl SampleMemory {
    pub fn new(t_long: usize, t_short: usize) -> Self {
        Self {
            entries: Vec::new(),
            t_long,
            t_short,
        }
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn add(&mut self, frame: usize, label: Label, features: Tensor) -> Result<()> {
        if self.entries.last().is_some_and(|e| e.frame > frame) {
            return Err(Error::State(format!(
                "memory entry for frame {frame} arrives out of order"
            )));
        }
        self.entries.push(MemoryEntry {
            frame,
            label,
            features,
        });
        Ok(())
    }

    /// Drops positives at least `t_long` frames old and negatives at least
    /// `t_short` frames old, as seen from frame `now`.
    pub fn evict(&mut self, now: usize) {
        let (tl, ts) = (self.t_long, self.t_short);
        self.entries.retain(|e| {
            let age = now.saturating_sub(e.frame);
            match e.label {
                Label::Positive => age < tl,
                Label::Negative => age < ts,
            }
        });
    }

    /// Total cached feature rows.
    pub fn rows(&self) -> usize {
        self.entries.iter().map(|e| e.features.dim(0)).sum()
    }

    /// Rows with `label` younger than `horizon` frames at `now`, stacked.
    pub fn gather(&self, label: Label, now: usize, horizon: usize) -> Option<Tensor> {
        let picked: Vec<&MemoryEntry> = self
            .entries
            .iter()
            .filter(|e| e.label == label && now.saturating_sub(e.frame) < horizon)
            .collect();
        let f = picked.first()?.features.dim(1);
        let data: Vec<f64> = picked
            .iter()
            .flat_map(|e| e.features.data().iter().copied())
            .collect();
        Tensor::new([data.len() / f, f], data).ok()
    }
}

fn take_rows(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let f = t.dim(1);
    let mut data = Vec::with_capacity(idx.len() * f);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * f..(i + 1) * f]);
    }
    Tensor::new([idx.len(), f], data)
}

fn concat_rows(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::new([a.dim(0) + b.dim(0), a.dim(1)], data)
}

/// Positive probability of branch 0 for each feature row.
pub fn score_rows(head: &HeadParams, x: &Tensor) -> Result<Vec<f64>> {
    Ok(positive_probability(
        &head_forward_branches(x, head, &[0])?,
        0,
    ))
}

/// Indices of the `keep` highest scores, ordered by decreasing score with
/// ties broken by position.
pub fn top_k_indices(scores: &[f64], keep: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(keep);
    idx
}

#[derive(Debug, Clone)]
pub struct HardBatch {
    /// `[n_pos + keep, F]`, positives first.
    pub features: Tensor,
    pub labels: Vec<bool>,
    /// Rows of the negative set that formed the mining pool.
    pub pool: Vec<usize>,
    /// Positive probability of every pool member, pool order.
    pub pool_scores: Vec<f64>,
    /// Positions in `pool` that were kept.
    pub selected: Vec<usize>,
}

/// Draws `n_pos` positives and mines the `keep` highest-scoring negatives
/// from a pool of `pool` negatives.
///
/// With fewer than `pool` negatives the whole set is the pool; with fewer
/// than `keep` the pool is topped up by drawing with replacement.
/// Positives are drawn without replacement unless there are too few.
pub fn hard_minibatch<R: Rng + ?Sized>(
    pos: &Tensor,
    neg: &Tensor,
    head: &HeadParams,
    n_pos: usize,
    pool: usize,
    keep: usize,
    rng: &mut R,
) -> Result<HardBatch> {
    if pos.dim(0) == 0 || neg.dim(0) == 0 {
        return Err(Error::State("sample memory is empty".into()));
    }
    let pos_idx = choose_fill(pos.dim(0), n_pos, rng);
    let pool_idx = if neg.dim(0) >= pool {
        choose_distinct(neg.dim(0), pool, rng)
    } else {
        choose_fill(neg.dim(0), keep.max(neg.dim(0)), rng)
    };
    let pool_feats = take_rows(neg, &pool_idx)?;
    let pool_scores = score_rows(head, &pool_feats)?;
    let selected = top_k_indices(&pool_scores, keep);
    let chosen: Vec<usize> = selected.iter().map(|&i| pool_idx[i]).collect();
    let features = concat_rows(&take_rows(pos, &pos_idx)?, &take_rows(neg, &chosen)?)?;
    let mut labels = vec![true; pos_idx.len()];
    labels.extend(std::iter::repeat_n(false, chosen.len()));
    Ok(HardBatch {
        features,
        labels,
        pool: pool_idx,
        pool_scores,
        selected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    Long,
    Short,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub index: usize,
    pub state: TargetState,
    /// Box written to the results file.
    pub reported: BBox,
    /// Best candidate before regression.
    pub raw: BBox,
    pub score: f64,
    pub success: bool,
    pub update: Option<UpdateKind>,
    /// Set when the scheduled update had no samples to train on.
    pub update_skipped: bool,
    /// Whether new samples were cached for this frame.
    pub collected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitReport {
    /// Mean loss of each fine-tuning iteration.
    pub losses: Vec<f64>,
    pub gt_score: f64,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    pub network: Network,
    pub config: TrackerConfig,
    pub regressor: Option<RegressorModel>,
    pub memory: SampleMemory,
    state: TargetState,
    base_size: (f64, f64),
    last_frame: usize,
    update_sgd: SgdState,
    rng: ChaCha8Rng,
    seed: u64,
    forward_passes: usize,
}

fn head_sgd(head: &HeadParams, lr: f64, cfg: &TrackerConfig) -> Result<SgdState> {
    let params = head.tensors();
    let mut s = SgdState::new(&params, lr, cfg.momentum, cfg.weight_decay)?;
    for i in crate::head::SHARED_TENSORS..params.len() {
        s.set_lr_scale(i, cfg.fc6_lr_mult);
    }
    Ok(s)
}

fn train_iterations<R: Rng + ?Sized>(
    head: &mut HeadParams,
    sgd: &mut SgdState,
    pos: &Tensor,
    neg: &Tensor,
    cfg: &TrackerConfig,
    iters: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut losses = Vec::with_capacity(iters);
    for _ in 0..iters {
        let batch = hard_minibatch(
            pos,
            neg,
            head,
            cfg.batch_pos,
            cfg.mining_pool,
            cfg.mining_keep,
            rng,
        )?;
        let scale = cfg.reduction.grad_scale(batch.labels.len());
        let masks = DropoutMasks::sample(batch.labels.len(), head.width(), cfg.dropout, rng)?;
        let step = head_step(
            &batch.features,
            &batch.labels,
            head,
            0,
            &[0],
            0.0,
            scale,
            masks.as_ref(),
        )?;
        let mut params = head.tensors_mut();
        sgd_step(&mut params, &step.grads, sgd)?;
        losses.push(step.loss.cls);
    }
    Ok(losses)
}

impl Tracker {
    /// Replaces the domain branches with one fresh branch, fine-tunes
    /// fc4-6 on samples of the first frame and fits the regressor.
    pub fn init(
        pretrained: &Network,
        frame: &RgbImage,
        gt: BBox,
        config: TrackerConfig,
        seed: u64,
    ) -> Result<(Self, InitReport)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut network = pretrained.clone();
        network.head.reset_branches(1, &mut rng);
        let bounds = frame_rect(frame);
        let pos_boxes = sample_boxes(
            &gt,
            &bounds,
            config.init_pos,
            IouGate::AtLeast(config.init_pos_iou),
            &ProposalDistribution::POSITIVE,
            &mut rng,
        )?;
        let neg_boxes = sample_boxes(
            &gt,
            &bounds,
            config.init_neg,
            IouGate::Below(config.init_neg_iou),
            &ProposalDistribution::NEGATIVE,
            &mut rng,
        )?;
        let bbr_boxes = if config.bbox_regression {
            sample_boxes(
                &gt,
                &bounds,
                config.bbr_samples,
                IouGate::AtLeast(TRAIN_IOU),
                &ProposalDistribution::REGRESSION,
                &mut rng,
            )?
        } else {
            Vec::new()
        };
        let prep = network.prepare_frame(frame, &gt, &[])?;
        let map = network.feature_map(&prep.tensor)?;
        let feats = |boxes: &[BBox]| -> Result<Tensor> {
            let crop: Vec<BBox> = boxes.iter().map(|b| prep.transform.to_crop(b)).collect();
            network.roi_features(&map, &crop)
        };
        let pos = feats(&pos_boxes)?;
        let neg = feats(&neg_boxes)?;
        let gt_feat = feats(&[gt])?;
        let regressor = if config.bbox_regression {
            Some(fit_regressor(
                &feats(&bbr_boxes)?,
                &bbr_boxes,
                &gt,
                config.bbr_lambda,
            )?)
        } else {
            None
        };

        let mut init_sgd = head_sgd(&network.head, config.init_lr, &config)?;
        let losses = train_iterations(
            &mut network.head,
            &mut init_sgd,
            &pos,
            &neg,
            &config,
            config.init_iters,
            &mut rng,
        )?;
        let gt_score = score_rows(&network.head, &gt_feat)?[0];

        let mut memory = SampleMemory::new(config.t_long, config.t_short);
        let np = config.update_pos.min(pos.dim(0));
        let nn = config.update_neg.min(neg.dim(0));
        memory.add(
            0,
            Label::Positive,
            take_rows(&pos, &(0..np).collect::<Vec<_>>())?,
        )?;
        memory.add(
            0,
            Label::Negative,
            take_rows(&neg, &(0..nn).collect::<Vec<_>>())?,
        )?;

        let (cx, cy) = gt.center();
        let update_sgd = head_sgd(&network.head, config.update_lr, &config)?;
        Ok((
            Self {
                network,
                regressor,
                memory,
                state: TargetState::new(cx, cy, 1.0),
                base_size: (gt.width(), gt.height()),
                last_frame: 0,
                update_sgd,
                rng,
                seed,
                forward_passes: 1,
                config,
            },
            InitReport { losses, gt_score },
        ))
    }

    pub fn state(&self) -> TargetState {
        self.state
    }

    pub fn base_size(&self) -> (f64, f64) {
        self.base_size
    }

    /// Backbone forward passes so far, initialization included.
    pub fn forward_passes(&self) -> usize {
        self.forward_passes
    }

    pub fn last_frame(&self) -> usize {
        self.last_frame
    }

    /// Gaussian candidates around the current state whose centers lie in
    /// the frame. The spread doubles on each retry when none do.
    pub fn draw_candidates(&mut self, bounds: &BBox) -> Result<Vec<(TargetState, BBox)>> {
        let cfg = &self.config;
        let s = (self.base_size.0 + self.base_size.1) / 2.0;
        let mut spread = 1.0;
        for _ in 0..=cfg.max_resample {
            let mut out = Vec::with_capacity(cfg.n_candidates);
            for _ in 0..cfg.n_candidates {
                let (nx, ny, ns): (f64, f64, f64) = (
                    StandardNormal.sample(&mut self.rng),
                    StandardNormal.sample(&mut self.rng),
                    StandardNormal.sample(&mut self.rng),
                );
                let st = TargetState::new(
                    self.state.cx + spread * cfg.trans_sigma * s * nx,
                    self.state.cy + spread * cfg.trans_sigma * s * ny,
                    self.state.scale
                        * cfg
                            .scale_step
                            .powf(ns.clamp(-cfg.scale_clip, cfg.scale_clip)),
                );
                let inside = st.cx >= bounds.x1
                    && st.cx < bounds.x2
                    && st.cy >= bounds.y1
                    && st.cy < bounds.y2;
                if inside {
                    out.push((st, st.to_box(self.base_size)));
                }
            }
            if !out.is_empty() {
                return Ok(out);
            }
            spread *= 2.0;
        }
        Err(Error::State("no candidate landed inside the frame".into()))
    }

    /// Processes frame `index`, which must directly follow the previous one.
    pub fn track_frame(&mut self, index: usize, frame: &RgbImage) -> Result<FrameResult> {
        if index != self.last_frame + 1 {
            return Err(Error::State(format!(
                "frame {index} requested after frame {}; frames must arrive in order",
                self.last_frame
            )));
        }
        let bounds = frame_rect(frame);
        let cands = self.draw_candidates(&bounds)?;
        let boxes: Vec<BBox> = cands.iter().map(|c| c.1).collect();
        let current = self.state.to_box(self.base_size);
        let prep = self.network.prepare_frame(frame, &current, &boxes)?;
        let map = self.network.feature_map(&prep.tensor)?;
        self.forward_passes += 1;
        self.last_frame = index;
        let crop_boxes: Vec<BBox> = boxes.iter().map(|b| prep.transform.to_crop(b)).collect();
        let feats = self.network.roi_features(&map, &crop_boxes)?;
        let scores = score_rows(&self.network.head, &feats)?;
        let top = top_k_indices(&scores, self.config.top_k);
        let best = top[0];
        let k = top.len() as f64;
        let score = top.iter().map(|&i| scores[i]).sum::<f64>() / k;
        let est = TargetState::new(
            top.iter().map(|&i| cands[i].0.cx).sum::<f64>() / k,
            top.iter().map(|&i| cands[i].0.cy).sum::<f64>() / k,
            top.iter().map(|&i| cands[i].0.scale).sum::<f64>() / k,
        );
        let raw = est.to_box(self.base_size);
        let success = score > self.config.success_threshold;
        let mut reported = raw;
        let mut collected = false;
        if success {
            self.state = est;
            if let Some(reg) = &self.regressor {
                let f = feats.dim(1);
                let row = if top.len() == 1 {
                    feats.data()[best * f..(best + 1) * f].to_vec()
                } else {
                    let crop = prep.transform.to_crop(&raw);
                    self.network.roi_features(&map, &[crop])?.into_data()
                };
                reported = reg.apply(&row, &raw)?;
            }
            collected = self.collect(index, frame, &raw, &map, &prep.transform)?;
        }
        let kind = if index.is_multiple_of(self.config.long_interval) {
            Some(UpdateKind::Long)
        } else if !success {
            Some(UpdateKind::Short)
        } else {
            None
        };
        let mut update_skipped = false;
        if let Some(kind) = kind {
            update_skipped = !self.update(kind, index)?;
        }
        Ok(FrameResult {
            index,
            state: self.state,
            reported,
            raw,
            score,
            success,
            update: kind,
            update_skipped,
            collected,
        })
    }

    /// Caches samples around `est`. Returns false, leaving the memory
    /// untouched, when the gates cannot be met around this box.
    fn collect(
        &mut self,
        index: usize,
        frame: &RgbImage,
        est: &BBox,
        map: &Tensor,
        transform: &crate::backbone::CropTransform,
    ) -> Result<bool> {
        let bounds = frame_rect(frame);
        let reference = est.clamp_inside(&bounds);
        let cfg = &self.config;
        let drawn = sample_boxes(
            &reference,
            &bounds,
            cfg.update_pos,
            IouGate::Above(cfg.update_pos_iou),
            &ProposalDistribution::POSITIVE,
            &mut self.rng,
        )
        .and_then(|pos| {
            let neg = sample_boxes(
                &reference,
                &bounds,
                cfg.update_neg,
                IouGate::Below(cfg.update_neg_iou),
                &ProposalDistribution::NEGATIVE,
                &mut self.rng,
            )?;
            Ok((pos, neg))
        });
        let (pos, neg) = match drawn {
            Ok(v) => v,
            Err(Error::SamplingExhausted { .. }) => return Ok(false),
            Err(e) => return Err(e),
        };
        let to_crop = |v: &[BBox]| v.iter().map(|b| transform.to_crop(b)).collect::<Vec<_>>();
        let pf = self.network.roi_features(map, &to_crop(&pos))?;
        let nf = self.network.roi_features(map, &to_crop(&neg))?;
        self.memory.add(index, Label::Positive, pf)?;
        self.memory.add(index, Label::Negative, nf)?;
        self.memory.evict(index);
        Ok(true)
    }

    /// Fine-tunes fc4-6 on cached samples. Returns false when the memory
    /// holds no usable positives or negatives.
    pub fn update(&mut self, kind: UpdateKind, now: usize) -> Result<bool> {
        let horizon = match kind {
            UpdateKind::Long => self.config.t_long,
            UpdateKind::Short => self.config.t_short,
        };
        let (Some(pos), Some(neg)) = (
            self.memory.gather(Label::Positive, now, horizon),
            self.memory
                .gather(Label::Negative, now, self.config.t_short),
        ) else {
            return Ok(false);
        };
        train_iterations(
            &mut self.network.head,
            &mut self.update_sgd,
            &pos,
            &neg,
            &self.config,
            self.config.update_iters,
            &mut self.rng,
        )?;
        Ok(true)
    }

    /// Everything needed to resume tracking after frame `last_frame()`.
    pub fn session_checkpoint(&self) -> Checkpoint {
        let mut c = self.network.to_checkpoint();
        let m = &mut c.metadata;
        m.insert("session.seed".into(), self.seed.to_string());
        m.insert(
            "session.word_pos".into(),
            self.rng.get_word_pos().to_string(),
        );
        m.insert("session.last_frame".into(), self.last_frame.to_string());
        m.insert(
            "session.forward_passes".into(),
            self.forward_passes.to_string(),
        );
        m.insert(
            "session.memory_entries".into(),
            self.memory.entries.len().to_string(),
        );
        c.insert(
            "session.state",
            Tensor::new(
                [5],
                vec![
                    self.state.cx,
                    self.state.cy,
                    self.state.scale,
                    self.base_size.0,
                    self.base_size.1,
                ],
            )
            .expect("five values"),
        );
        for (i, v) in self.update_sgd.velocity().iter().enumerate() {
            c.insert(format!("session.velocity.{i}"), v.clone());
        }
        for (i, e) in self.memory.entries.iter().enumerate() {
            let label = match e.label {
                Label::Positive => 1.0,
                Label::Negative => 0.0,
            };
            c.insert(
                format!("session.memory.{i}.meta"),
                Tensor::new([2], vec![e.frame as f64, label]).expect("two values"),
            );
            c.insert(format!("session.memory.{i}.features"), e.features.clone());
        }
        if let Some(r) = &self.regressor {
            c.insert("regressor.weights", r.weights.clone());
            let mut extra = r.bias.to_vec();
            extra.extend([r.feature_scale, r.lambda]);
            c.insert(
                "regressor.extra",
                Tensor::new([6], extra).expect("six values"),
            );
        }
        c
    }

    pub fn save_session(&self, path: impl AsRef<Path>) -> Result<()> {
        self.session_checkpoint().save(path)
    }

    pub fn from_session(c: &Checkpoint, config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        let network = Network::from_checkpoint(c)?;
        let num = |k: &str| -> Result<u128> {
            c.meta(k)?
                .parse()
                .map_err(|_| Error::Config(format!("session key '{k}' is not an integer")))
        };
        let seed = num("session.seed")? as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_word_pos(num("session.word_pos")?);
        let st = c.get("session.state")?.data().to_vec();
        let mut update_sgd = head_sgd(&network.head, config.update_lr, &config)?;
        let mut velocity = Vec::new();
        for i in 0..network.head.tensors().len() {
            velocity.push(c.get(&format!("session.velocity.{i}"))?.clone());
        }
        update_sgd = update_sgd.with_velocity(velocity)?;
        let mut memory = SampleMemory::new(config.t_long, config.t_short);
        for i in 0..num("session.memory_entries")? as usize {
            let meta = c.get(&format!("session.memory.{i}.meta"))?.data().to_vec();
            let label = if meta[1] == 1.0 {
                Label::Positive
            } else {
                Label::Negative
            };
            memory.add(
                meta[0] as usize,
                label,
                c.get(&format!("session.memory.{i}.features"))?.clone(),
            )?;
        }
        let regressor = match c.get("regressor.weights") {
            Ok(w) => {
                let e = c.get("regressor.extra")?.data().to_vec();
                Some(RegressorModel {
                    weights: w.clone(),
                    bias: [e[0], e[1], e[2], e[3]],
                    feature_scale: e[4],
                    lambda: e[5],
                })
            }
            Err(_) => None,
        };
        Ok(Self {
            network,
            config,
            regressor,
            memory,
            state: TargetState::new(st[0], st[1], st[2]),
            base_size: (st[3], st[4]),
            last_frame: num("session.last_frame")? as usize,
            update_sgd,
            rng,
            seed,
            forward_passes: num("session.forward_passes")? as usize,
        })
    }
}

/// Result of tracking a whole sequence.
#[derive(Debug, Clone)]
pub struct TrackRun {
    pub init: InitReport,
    /// One entry per frame; frame 0 reports the initial box.
    pub frames: Vec<FrameResult>,
    pub forward_passes: usize,
}

impl TrackRun {
    pub fn boxes(&self) -> Vec<BBox> {
        self.frames.iter().map(|f| f.reported).collect()
    }

    /// `frame_index,x,y,w,h,score` per line.
    pub fn to_text(&self) -> String {
        self.frames
            .iter()
            .map(|f| {
                let (x, y, w, h) = f.reported.to_xywh();
                format!("{},{x},{y},{w},{h},{}\n", f.index, f.score)
            })
            .collect()
    }
}

/// Initializes on frame 0 of `seq` and tracks the remaining frames.
pub fn track_sequence(
    pretrained: &Network,
    seq: &Sequence,
    config: TrackerConfig,
    seed: u64,
) -> Result<TrackRun> {
    let gt = seq.groundtruth[0];
    let (mut tracker, init) = Tracker::init(pretrained, &seq.frames[0], gt, config, seed)?;
    let (cx, cy) = gt.center();
    let mut frames = vec![FrameResult {
        index: 0,
        state: TargetState::new(cx, cy, 1.0),
        reported: gt,
        raw: gt,
        score: init.gt_score,
        success: true,
        update: None,
        update_skipped: false,
        collected: true,
    }];
    for (i, frame) in seq.frames.iter().enumerate().skip(1) {
        frames.push(tracker.track_frame(i, frame)?);
    }
    Ok(TrackRun {
        init,
        frames,
        forward_passes: tracker.forward_passes(),
    })
}

/// Parses a results file back into per-frame `(index, box, score)`.
pub fn parse_results(text: &str) -> Result<Vec<(usize, BBox, f64)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |d: String| Error::Format {
            what: "results file",
            detail: format!("line {}: {d}", n + 1),
        };
        let v: Vec<&str> = line.split(',').map(str::trim).collect();
        if v.len() != 6 {
            return Err(bad(format!("expected 6 fields, got {}", v.len())));
        }
        let idx: usize = v[0].parse().map_err(|e| bad(format!("{e}")))?;
        let nums: Vec<f64> = v[1..]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("{e}")))?;
        let b =
            BBox::from_xywh(nums[0], nums[1], nums[2], nums[3]).map_err(|e| bad(e.to_string()))?;
        out.push((idx, b, nums[4]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(n: usize, v: f64) -> Tensor {
        Tensor::full([n, 2], v)
    }

    #[test]
    fn eviction_by_age() {
        let mut m = SampleMemory::new(100, 20);
        for f in 0..130 {
            m.add(f, Label::Positive, rows(1, 1.0)).unwrap();
            m.add(f, Label::Negative, rows(2, 0.0)).unwrap();
            m.evict(f);
        }
        assert!(m.entries().iter().all(|e| match e.label {
            Label::Positive => 129 - e.frame < 100,
            Label::Negative => 129 - e.frame < 20,
        }));
        assert_eq!(m.gather(Label::Positive, 129, 100).unwrap().dim(0), 100);
        assert_eq!(m.gather(Label::Positive, 129, 20).unwrap().dim(0), 20);
        assert_eq!(m.gather(Label::Negative, 129, 20).unwrap().dim(0), 40);
        assert!(m.add(3, Label::Positive, rows(1, 0.0)).is_err());
    }

    #[test]
    fn top_k_orders_and_breaks_ties() {
        assert_eq!(top_k_indices(&[0.1, 0.9, 0.5, 0.9], 3), vec![1, 3, 2]);
    }

    #[test]
    fn state_scale_is_clamped() {
        assert_eq!(TargetState::new(0.0, 0.0, 100.0).scale, MAX_SCALE);
        assert_eq!(TargetState::new(0.0, 0.0, 0.0).scale, MIN_SCALE);
    }
}
