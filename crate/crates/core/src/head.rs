//! Fully connected head: fc4, fc5 and one two-way fc6 branch per domain.
//!
//! Batch scores are stored as `[N, 2, B]`: sample, class (row 0 is the
//! positive/target channel, row 1 background), branch. `B` is either all
//! `D` domains or an explicit subset of them.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{linear, linear_backward, relu, relu_backward};
use crate::tensor::Tensor;

pub const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadConfig {
    /// Flattened RoI feature length (`C3 * 3 * 3`).
    pub in_features: usize,
    /// Width of fc4 and fc5.
    pub width: usize,
    pub domains: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub fc4_w: Tensor,
    pub fc4_b: Tensor,
    pub fc5_w: Tensor,
    pub fc5_b: Tensor,
    pub fc6_w: Vec<Tensor>,
    pub fc6_b: Vec<Tensor>,
}

fn fc_init<R: Rng + ?Sized>(out: usize, inp: usize, rng: &mut R) -> (Tensor, Tensor) {
    (
        Tensor::uniform([out, inp], (6.0 / inp as f64).sqrt(), rng),
        Tensor::zeros([out]),
    )
}

/// Number of shared (fc4, fc5) tensors preceding the fc6 branches in
/// [`HeadParams::tensors`].
pub const SHARED_TENSORS: usize = 4;

impl HeadParams {
    pub fn init<R: Rng + ?Sized>(cfg: &HeadConfig, rng: &mut R) -> Result<Self> {
        if cfg.in_features == 0 || cfg.width == 0 || cfg.domains == 0 {
            return Err(Error::Argument(format!(
                "invalid head configuration {cfg:?}"
            )));
        }
        let (fc4_w, fc4_b) = fc_init(cfg.width, cfg.in_features, rng);
        let (fc5_w, fc5_b) = fc_init(cfg.width, cfg.width, rng);
        let mut p = Self {
            fc4_w,
            fc4_b,
            fc5_w,
            fc5_b,
            fc6_w: Vec::new(),
            fc6_b: Vec::new(),
        };
        p.reset_branches(cfg.domains, rng);
        Ok(p)
    }

    /// Replaces every fc6 branch with `count` freshly initialized ones.
    pub fn reset_branches<R: Rng + ?Sized>(&mut self, count: usize, rng: &mut R) {
        let width = self.width();
        self.fc6_w.clear();
        self.fc6_b.clear();
        for _ in 0..count {
            let (w, b) = fc_init(2, width, rng);
            self.fc6_w.push(w);
            self.fc6_b.push(b);
        }
    }

    pub fn config(&self) -> HeadConfig {
        HeadConfig {
            in_features: self.fc4_w.dim(1),
            width: self.width(),
            domains: self.domains(),
        }
    }

    pub fn domains(&self) -> usize {
        self.fc6_w.len()
    }

    pub fn width(&self) -> usize {
        self.fc4_w.dim(0)
    }

    /// fc4.w, fc4.b, fc5.w, fc5.b, then (w, b) per branch.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.fc4_w, &self.fc4_b, &self.fc5_w, &self.fc5_b];
        for (w, b) in self.fc6_w.iter().zip(&self.fc6_b) {
            v.push(w);
            v.push(b);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![
            &mut self.fc4_w,
            &mut self.fc4_b,
            &mut self.fc5_w,
            &mut self.fc5_b,
        ];
        for (w, b) in self.fc6_w.iter_mut().zip(self.fc6_b.iter_mut()) {
            v.push(w);
            v.push(b);
        }
        v
    }

    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = ["fc4.weight", "fc4.bias", "fc5.weight", "fc5.bias"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for d in 0..self.domains() {
            v.push(format!("fc6.{d}.weight"));
            v.push(format!("fc6.{d}.bias"));
        }
        v
    }

    pub fn check(&self) -> Result<()> {
        let (w, f) = (self.width(), self.fc4_w.dim(1));
        self.fc4_w.expect_shape(&[w, f], "fc4.weight")?;
        self.fc4_b.expect_shape(&[w], "fc4.bias")?;
        self.fc5_w.expect_shape(&[w, w], "fc5.weight")?;
        self.fc5_b.expect_shape(&[w], "fc5.bias")?;
        if self.fc6_w.is_empty() || self.fc6_w.len() != self.fc6_b.len() {
            return Err(Error::Dimension(
                "head needs at least one complete fc6 branch".into(),
            ));
        }
        for (bw, bb) in self.fc6_w.iter().zip(&self.fc6_b) {
            bw.expect_shape(&[2, w], "fc6 weight")?;
            bb.expect_shape(&[2], "fc6 bias")?;
        }
        Ok(())
    }

    fn stacked_fc6(&self, branches: &[usize]) -> Result<(Tensor, Tensor)> {
        let w = self.width();
        let mut wd = Vec::with_capacity(branches.len() * 2 * w);
        let mut bd = Vec::with_capacity(branches.len() * 2);
        for &d in branches {
            if d >= self.domains() {
                return Err(Error::Argument(format!(
                    "branch {d} out of range for {} domains",
                    self.domains()
                )));
            }
            wd.extend_from_slice(self.fc6_w[d].data());
            bd.extend_from_slice(self.fc6_b[d].data());
        }
        Ok((
            Tensor::new([2 * branches.len(), w], wd)?,
            Tensor::new([2 * branches.len()], bd)?,
        ))
    }
}

/// Reorders `[N, B*2]` (branch-major) logits into `[N, 2, B]`.
fn to_scores(raw: &Tensor, b: usize) -> Result<Tensor> {
    let n = raw.dim(0);
    let r = raw.data();
    let mut out = vec![0.0; n * 2 * b];
    for i in 0..n {
        for j in 0..b {
            for c in 0..2 {
                out[(i * 2 + c) * b + j] = r[i * 2 * b + j * 2 + c];
            }
        }
    }
    Tensor::new([n, 2, b], out)
}

fn from_scores(scores: &Tensor) -> Result<Tensor> {
    let (n, b) = (scores.dim(0), scores.dim(2));
    let s = scores.data();
    let mut out = vec![0.0; n * 2 * b];
    for i in 0..n {
        for j in 0..b {
            for c in 0..2 {
                out[i * 2 * b + j * 2 + c] = s[(i * 2 + c) * b + j];
            }
        }
    }
    Tensor::new([n, 2 * b], out)
}

/// Inverted-dropout masks for the fc4 and fc5 activations, each `[N, width]`
/// with entries `0` or `1 / (1 - rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub fc4: Tensor,
    pub fc5: Tensor,
}

impl DropoutMasks {
    /// `None` when `rate` is zero, without touching `rng`.
    pub fn sample<R: Rng + ?Sized>(
        rows: usize,
        width: usize,
        rate: f64,
        rng: &mut R,
    ) -> Result<Option<Self>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!(
                "dropout rate {rate} must lie in [0, 1)"
            )));
        }
        if rate == 0.0 {
            return Ok(None);
        }
        let keep = 1.0 / (1.0 - rate);
        let mut mask = || {
            let data = (0..rows * width)
                .map(|_| {
                    if rng.random::<f64>() < rate {
                        0.0
                    } else {
                        keep
                    }
                })
                .collect();
            Tensor::new([rows, width], data)
        };
        Ok(Some(Self {
            fc4: mask()?,
            fc5: mask()?,
        }))
    }
}

fn apply_mask(a: Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    match mask {
        Some(m) => {
            m.expect_shape(a.shape(), "dropout mask")?;
            let data = a
                .data()
                .iter()
                .zip(m.data())
                .map(|(&v, &k)| v * k)
                .collect();
            Tensor::new(a.shape().to_vec(), data)
        }
        None => Ok(a),
    }
}

/// Activations kept for [`head_backward`].
#[derive(Debug, Clone)]
pub struct HeadTrace {
    x: Tensor,
    z4: Tensor,
    a4: Tensor,
    z5: Tensor,
    a5: Tensor,
    branches: Vec<usize>,
    masks: Option<DropoutMasks>,
}

/// Scores `[N, 2, B]` of the listed branches for features `[N, F]`.
pub fn head_forward_traced(
    x: &Tensor,
    params: &HeadParams,
    branches: &[usize],
) -> Result<(Tensor, HeadTrace)> {
    head_forward_masked(x, params, branches, None)
}

/// As [`head_forward_traced`], with the fc4 and fc5 activations multiplied
/// by `masks` when given.
pub fn head_forward_masked(
    x: &Tensor,
    params: &HeadParams,
    branches: &[usize],
    masks: Option<&DropoutMasks>,
) -> Result<(Tensor, HeadTrace)> {
    x.expect_rank(2, "head input")?;
    if x.dim(1) != params.fc4_w.dim(1) {
        return Err(Error::Dimension(format!(
            "head expects {} input features, got {}",
            params.fc4_w.dim(1),
            x.dim(1)
        )));
    }
    let z4 = linear(x, &params.fc4_w, &params.fc4_b)?;
    let a4 = apply_mask(relu(&z4), masks.map(|m| &m.fc4))?;
    let z5 = linear(&a4, &params.fc5_w, &params.fc5_b)?;
    let a5 = apply_mask(relu(&z5), masks.map(|m| &m.fc5))?;
    let (w6, b6) = params.stacked_fc6(branches)?;
    let scores = to_scores(&linear(&a5, &w6, &b6)?, branches.len())?;
    Ok((
        scores,
        HeadTrace {
            x: x.clone(),
            z4,
            a4,
            z5,
            a5,
            branches: branches.to_vec(),
            masks: masks.cloned(),
        },
    ))
}

pub fn head_forward_branches(
    x: &Tensor,
    params: &HeadParams,
    branches: &[usize],
) -> Result<Tensor> {
    head_forward_traced(x, params, branches).map(|(s, _)| s)
}

/// Scores `[N, 2, D]` over every domain branch.
pub fn head_forward(x: &Tensor, params: &HeadParams) -> Result<Tensor> {
    let all: Vec<usize> = (0..params.domains()).collect();
    head_forward_branches(x, params, &all)
}

/// Gradients for every head tensor (in [`HeadParams::tensors`] order,
/// zero for branches absent from the trace) and for the input features.
pub fn head_backward(
    trace: &HeadTrace,
    params: &HeadParams,
    d_scores: &Tensor,
) -> Result<(Vec<Tensor>, Tensor)> {
    let b = trace.branches.len();
    d_scores.expect_shape(&[trace.x.dim(0), 2, b], "head score gradient")?;
    let (w6, _) = params.stacked_fc6(&trace.branches)?;
    let g6 = linear_backward(&trace.a5, &w6, &from_scores(d_scores)?)?;
    let masks = trace.masks.as_ref();
    let d5 = relu_backward(&trace.z5, &apply_mask(g6.d_input, masks.map(|m| &m.fc5))?)?;
    let g5 = linear_backward(&trace.a4, &params.fc5_w, &d5)?;
    let d4 = relu_backward(&trace.z4, &apply_mask(g5.d_input, masks.map(|m| &m.fc4))?)?;
    let g4 = linear_backward(&trace.x, &params.fc4_w, &d4)?;

    let mut grads: Vec<Tensor> = params
        .tensors()
        .iter()
        .map(|t| Tensor::zeros(t.shape().to_vec()))
        .collect();
    let [gw4, gb4]: [Tensor; 2] = g4.d_params.try_into().expect("linear yields two gradients");
    let [gw5, gb5]: [Tensor; 2] = g5.d_params.try_into().expect("linear yields two gradients");
    grads[0] = gw4;
    grads[1] = gb4;
    grads[2] = gw5;
    grads[3] = gb5;
    let width = params.width();
    let (dw6, db6) = (g6.d_params[0].data(), g6.d_params[1].data());
    for (j, &d) in trace.branches.iter().enumerate() {
        let gw = grads[SHARED_TENSORS + 2 * d].data_mut();
        for (g, &v) in gw.iter_mut().zip(&dw6[j * 2 * width..(j + 1) * 2 * width]) {
            *g += v;
        }
        let gb = grads[SHARED_TENSORS + 2 * d + 1].data_mut();
        gb[0] += db6[2 * j];
        gb[1] += db6[2 * j + 1];
    }
    Ok((grads, g4.d_input))
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn check_scores(f: &Tensor) -> Result<(usize, usize)> {
    f.expect_rank(2, "domain scores")?;
    if f.dim(0) != 2 {
        return Err(Error::Dimension(format!(
            "domain scores need 2 rows, got {}",
            f.dim(0)
        )));
    }
    Ok((2, f.dim(1)))
}

/// Two-way softmax down each column of `f` (`[2, D]`).
pub fn softmax_cls(f: &Tensor) -> Result<Tensor> {
    let (_, d) = check_scores(f)?;
    let v = f.data();
    let mut out = vec![0.0; 2 * d];
    for j in 0..d {
        let lse = log_sum_exp([v[j], v[d + j]].into_iter());
        out[j] = (v[j] - lse).exp();
        out[d + j] = (v[d + j] - lse).exp();
    }
    Tensor::new([2, d], out)
}

/// D-way softmax along each row of `f` (`[2, D]`).
pub fn softmax_inst(f: &Tensor) -> Result<Tensor> {
    let (_, d) = check_scores(f)?;
    let v = f.data();
    let mut out = vec![0.0; 2 * d];
    for r in 0..2 {
        let row = &v[r * d..(r + 1) * d];
        let lse = log_sum_exp(row.iter().copied());
        for j in 0..d {
            out[r * d + j] = (row[j] - lse).exp();
        }
    }
    Tensor::new([2, d], out)
}

fn check_batch(scores: &Tensor, labels: &[bool], active: usize) -> Result<(usize, usize)> {
    scores.expect_rank(3, "batch scores")?;
    let (n, b) = (scores.dim(0), scores.dim(2));
    if scores.dim(1) != 2 {
        return Err(Error::Dimension("batch scores need 2 class rows".into()));
    }
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{} labels for {n} samples",
            labels.len()
        )));
    }
    if active >= b {
        return Err(Error::Argument(format!(
            "active column {active} out of range for {b} branches"
        )));
    }
    Ok((n, b))
}

/// Mean cross-entropy of the active column's two-way softmax, with its
/// gradient with respect to `scores`.
pub fn loss_cls_grad(scores: &Tensor, labels: &[bool], active: usize) -> Result<(f64, Tensor)> {
    let (n, b) = check_batch(scores, labels, active)?;
    let s = scores.data();
    let mut grad = vec![0.0; s.len()];
    let mut loss = 0.0;
    for (i, &pos) in labels.iter().enumerate() {
        let (ip, ineg) = ((i * 2) * b + active, (i * 2 + 1) * b + active);
        let lse = log_sum_exp([s[ip], s[ineg]].into_iter());
        let (lp, ln) = (s[ip] - lse, s[ineg] - lse);
        loss -= if pos { lp } else { ln };
        grad[ip] = (lp.exp() - if pos { 1.0 } else { 0.0 }) / n as f64;
        grad[ineg] = (ln.exp() - if pos { 0.0 } else { 1.0 }) / n as f64;
    }
    Ok((loss / n as f64, Tensor::new(scores.shape().to_vec(), grad)?))
}

pub fn loss_cls(scores: &Tensor, labels: &[bool], active: usize) -> Result<f64> {
    loss_cls_grad(scores, labels, active).map(|(l, _)| l)
}

/// Instance-embedding loss: for positive samples, cross-entropy of the
/// positive row softmax over the columns in `subset`, target `active`.
/// Negatives contribute zero but count in the 1/N normalization.
pub fn loss_inst_grad(
    scores: &Tensor,
    labels: &[bool],
    active: usize,
    subset: &[usize],
) -> Result<(f64, Tensor)> {
    let (n, b) = check_batch(scores, labels, active)?;
    if !subset.contains(&active) {
        return Err(Error::Argument(format!(
            "active column {active} is not in the domain subset"
        )));
    }
    if let Some(&bad) = subset.iter().find(|&&j| j >= b) {
        return Err(Error::Argument(format!(
            "subset column {bad} out of range for {b} branches"
        )));
    }
    let s = scores.data();
    let mut grad = vec![0.0; s.len()];
    let mut loss = 0.0;
    for (i, _) in labels.iter().enumerate().filter(|(_, &p)| p) {
        let row = &s[i * 2 * b..i * 2 * b + b];
        let lse = log_sum_exp(subset.iter().map(|&j| row[j]));
        loss -= row[active] - lse;
        for &j in subset {
            let g = (row[j] - lse).exp() - if j == active { 1.0 } else { 0.0 };
            grad[i * 2 * b + j] += g / n as f64;
        }
    }
    Ok((loss / n as f64, Tensor::new(scores.shape().to_vec(), grad)?))
}

pub fn loss_inst(scores: &Tensor, labels: &[bool], active: usize, subset: &[usize]) -> Result<f64> {
    loss_inst_grad(scores, labels, active, subset).map(|(l, _)| l)
}

pub fn loss_total(cls: f64, inst: f64, alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Argument(format!("alpha must be >= 0, got {alpha}")));
    }
    Ok(cls + alpha * inst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub cls: f64,
    pub inst: f64,
    pub total: f64,
}

/// Everything one training step needs from the head.
#[derive(Debug, Clone)]
pub struct HeadStep {
    pub loss: LossBreakdown,
    /// One tensor per head parameter, [`HeadParams::tensors`] order.
    pub grads: Vec<Tensor>,
    /// Gradient with respect to the input features `[N, F]`.
    pub d_input: Tensor,
}

/// Multi-task loss `cls + alpha * inst` and its gradients. Scores are
/// computed for the `subset` branches only; `active` must be one of them.
/// The gradient is multiplied by `grad_scale` (the reported loss is not).
#[allow(clippy::too_many_arguments)]
pub fn head_step(
    x: &Tensor,
    labels: &[bool],
    params: &HeadParams,
    active: usize,
    subset: &[usize],
    alpha: f64,
    grad_scale: f64,
    dropout: Option<&DropoutMasks>,
) -> Result<HeadStep> {
    let col = subset.iter().position(|&d| d == active).ok_or_else(|| {
        Error::Argument(format!(
            "active domain {active} is not in the domain subset"
        ))
    })?;
    let (scores, trace) = head_forward_masked(x, params, subset, dropout)?;
    let (cls, mut d_scores) = loss_cls_grad(&scores, labels, col)?;
    let inst = if alpha > 0.0 && subset.len() > 1 {
        let cols: Vec<usize> = (0..subset.len()).collect();
        let (inst, g) = loss_inst_grad(&scores, labels, col, &cols)?;
        for (a, &v) in d_scores.data_mut().iter_mut().zip(g.data()) {
            *a += alpha * v;
        }
        inst
    } else {
        0.0
    };
    let total = loss_total(cls, inst, alpha)?;
    if grad_scale != 1.0 {
        d_scores.scale(grad_scale);
    }
    let (grads, d_input) = head_backward(&trace, params, &d_scores)?;
    Ok(HeadStep {
        loss: LossBreakdown { cls, inst, total },
        grads,
        d_input,
    })
}

/// Probability of the positive class for each sample in branch 0 of
/// `[N, 2, B]` scores.
pub fn positive_probability(scores: &Tensor, branch: usize) -> Vec<f64> {
    let (n, b) = (scores.dim(0), scores.dim(2));
    let s = scores.data();
    (0..n)
        .map(|i| {
            let diff = s[(i * 2) * b + branch] - s[(i * 2 + 1) * b + branch];
            1.0 / (1.0 + (-diff).exp())
        })
        .collect()
}
