//! SGD with momentum and coupled weight decay, plus gradient accumulation.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct SgdState {
    velocity: Vec<Tensor>,
    lr_scale: Vec<f64>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdState {
    /// Zero velocity for every parameter, all learning-rate multipliers 1.
    pub fn new(
        params: &[&Tensor],
        learning_rate: f64,
        momentum: f64,
        weight_decay: f64,
    ) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::Argument(format!(
                "learning rate must be >= 0, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Argument(format!(
                "momentum must be in [0,1), got {momentum}"
            )));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::Argument(format!(
                "weight decay must be >= 0, got {weight_decay}"
            )));
        }
        Ok(Self {
            velocity: params
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect(),
            lr_scale: vec![1.0; params.len()],
            learning_rate,
            momentum,
            weight_decay,
        })
    }

    /// Multiplies the learning rate of parameter `index` by `scale`.
    pub fn set_lr_scale(&mut self, index: usize, scale: f64) {
        self.lr_scale[index] = scale;
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    /// Restores saved momentum buffers; shapes must match the current ones.
    pub fn with_velocity(mut self, velocity: Vec<Tensor>) -> Result<Self> {
        if velocity.len() != self.velocity.len() {
            return Err(Error::Dimension(format!(
                "{} velocity buffers for {} parameters",
                velocity.len(),
                self.velocity.len()
            )));
        }
        for (old, new) in self.velocity.iter().zip(&velocity) {
            new.expect_shape(old.shape(), "restored velocity")?;
        }
        self.velocity = velocity;
        Ok(self)
    }
}

/// One momentum step: `v <- mu*v - lr*(g + wd*p)`, `p <- p + v`.
pub fn sgd_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut SgdState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::Dimension(format!(
            "sgd_step: {} params, {} grads, {} velocity buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        g.expect_shape(p.shape(), "sgd_step gradient")?;
        state.velocity[i].expect_shape(p.shape(), "sgd_step velocity")?;
        if !g.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient for parameter {i}"
            )));
        }
    }
    let (mu, wd) = (state.momentum, state.weight_decay);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let lr = state.learning_rate * state.lr_scale[i];
        let v = state.velocity[i].data_mut();
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
            *vv = mu * *vv - lr * (gv + wd * *pv);
            *pv += *vv;
        }
    }
    Ok(())
}

/// Sums gradients over several backward passes and applies one SGD step
/// on the sum every `every` accumulations.
#[derive(Debug, Clone)]
pub struct GradAccumulator {
    buffer: Vec<Tensor>,
    every: usize,
    pending: usize,
    flushes: usize,
}

impl GradAccumulator {
    pub fn new(params: &[&Tensor], every: usize) -> Result<Self> {
        if every == 0 {
            return Err(Error::Argument("accumulation interval must be >= 1".into()));
        }
        Ok(Self {
            buffer: params
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect(),
            every,
            pending: 0,
            flushes: 0,
        })
    }

    pub fn accumulate(&mut self, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.buffer.len() {
            return Err(Error::Dimension(format!(
                "accumulate: expected {} gradients, got {}",
                self.buffer.len(),
                grads.len()
            )));
        }
        for (b, g) in self.buffer.iter_mut().zip(grads) {
            b.add_assign(g)?;
        }
        self.pending += 1;
        Ok(())
    }

    /// Steps if `every` gradients are pending. Returns whether it stepped.
    pub fn flush_every(
        &mut self,
        params: &mut [&mut Tensor],
        state: &mut SgdState,
    ) -> Result<bool> {
        if self.pending < self.every {
            return Ok(false);
        }
        self.flush(params, state)?;
        Ok(true)
    }

    /// Steps on whatever is pending and clears the buffer.
    pub fn flush(&mut self, params: &mut [&mut Tensor], state: &mut SgdState) -> Result<()> {
        sgd_step(params, &self.buffer, state)?;
        for b in &mut self.buffer {
            b.fill(0.0);
        }
        self.pending = 0;
        self.flushes += 1;
        Ok(())
    }

    pub fn pending(&self) -> usize {
        self.pending
    }

    pub fn flushes(&self) -> usize {
        self.flushes
    }

    pub fn buffer(&self) -> &[Tensor] {
        &self.buffer
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(v: &[f64]) -> Tensor {
        Tensor::new([v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = tensor(&[1.0, -2.0]);
        let mut st = SgdState::new(&[&p], 0.1, 0.9, 0.0).unwrap();
        sgd_step(&mut [&mut p], &[tensor(&[0.0, 0.0])], &mut st).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn plain_sgd() {
        let mut p = tensor(&[1.0, -2.0]);
        let mut st = SgdState::new(&[&p], 0.5, 0.0, 0.0).unwrap();
        sgd_step(&mut [&mut p], &[tensor(&[0.25, 1.0])], &mut st).unwrap();
        assert_eq!(p.data(), &[1.0 - 0.125, -2.5]);
    }

    #[test]
    fn momentum_two_steps_closed_form() {
        let (lr, g) = (0.01, 3.0);
        let mut p = tensor(&[0.0]);
        let mut st = SgdState::new(&[&p], lr, 0.9, 0.0).unwrap();
        for _ in 0..2 {
            sgd_step(&mut [&mut p], &[tensor(&[g])], &mut st).unwrap();
        }
        // v1 = -lr g, v2 = -0.9 lr g - lr g
        assert!((p.data()[0] - (-lr * g * 2.9)).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut p = tensor(&[0.3, 0.7]);
        let mut st = SgdState::new(&[&p], 0.0, 0.9, 0.0005).unwrap();
        for _ in 0..3 {
            sgd_step(&mut [&mut p], &[tensor(&[5.0, -1.0])], &mut st).unwrap();
        }
        assert_eq!(p.data(), &[0.3, 0.7]);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut p = tensor(&[0.0]);
        let mut st = SgdState::new(&[&p], 0.1, 0.0, 0.0).unwrap();
        let r = sgd_step(&mut [&mut p], &[tensor(&[f64::NAN])], &mut st);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn accumulate_k1_matches_immediate() {
        let grads = [tensor(&[0.5, -0.25]), tensor(&[1.0, 2.0])];
        let mut a = tensor(&[1.0, 1.0]);
        let mut b = a.clone();
        let mut sa = SgdState::new(&[&a], 0.1, 0.9, 0.0005).unwrap();
        let mut sb = sa.clone();
        let mut acc = GradAccumulator::new(&[&b], 1).unwrap();
        for g in &grads {
            sgd_step(&mut [&mut a], std::slice::from_ref(g), &mut sa).unwrap();
            acc.accumulate(std::slice::from_ref(g)).unwrap();
            assert!(acc.flush_every(&mut [&mut b], &mut sb).unwrap());
        }
        assert_eq!(a, b);
    }

    #[test]
    fn fifty_identical_batches_equal_one_scaled_step() {
        let g = tensor(&[0.125, -0.5]);
        let mut a = tensor(&[1.0, 1.0]);
        let mut b = a.clone();
        let mut sa = SgdState::new(&[&a], 0.01, 0.9, 0.0).unwrap();
        let mut sb = sa.clone();
        let mut acc = GradAccumulator::new(&[&a], 50).unwrap();
        for i in 0..50 {
            acc.accumulate(std::slice::from_ref(&g)).unwrap();
            assert_eq!(acc.flush_every(&mut [&mut a], &mut sa).unwrap(), i == 49);
        }
        let mut g50 = g.clone();
        g50.scale(50.0);
        sgd_step(&mut [&mut b], &[g50], &mut sb).unwrap();
        assert_eq!(a, b);
    }
}
