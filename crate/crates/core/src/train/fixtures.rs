//! Analytic sequence fixtures for gradient-path validation.

use super::sequence::SequenceModel;
use crate::autodiff::{Tape, Tensor, ValueId};
use crate::error::{CoreError, Result};

/// The scalar linear system x_{n+1} = a x_n + theta with squared-error
/// losses w_{n+1} (x_hat_{n+1} - y_{n+1})^2. Every gradient quantity has a
/// closed form, which makes it the reference fixture for BPTT semantics.
#[derive(Debug, Clone)]
pub struct ScalarLinearModel {
    pub a: f64,
    pub theta: f64,
    pub x0: f64,
    /// Targets y_1 .. y_T.
    pub targets: Vec<f64>,
    /// Loss weights for steps 1 .. T (zero skips the step's loss).
    pub loss_weights: Vec<f64>,
}

impl ScalarLinearModel {
    pub fn new(a: f64, theta: f64, x0: f64, targets: Vec<f64>) -> Self {
        let w = vec![1.0; targets.len()];
        Self {
            a,
            theta,
            x0,
            targets,
            loss_weights: w,
        }
    }

    /// Loss only at the final step: the fixture with exactly geometric
    /// TBPTT bias decay.
    pub fn final_step_loss(mut self) -> Self {
        let t = self.loss_weights.len();
        self.loss_weights = vec![0.0; t];
        self.loss_weights[t - 1] = 1.0;
        self
    }

    /// Exact rollout states x_0 .. x_T.
    pub fn rollout(&self) -> Vec<f64> {
        let mut xs = vec![self.x0];
        for _ in 0..self.targets.len() {
            xs.push(self.a * xs.last().unwrap() + self.theta);
        }
        xs
    }

    /// Closed-form d/dtheta of (1/T) sum_n w_{n+1} (x_{n+1} - y_{n+1})^2,
    /// using dx_{n+1}/dtheta = sum_{j=0}^{n} a^j.
    pub fn exact_gradient(&self) -> f64 {
        let xs = self.rollout();
        let t = self.targets.len();
        let mut g = 0.0;
        for n in 0..t {
            let sens: f64 = (0..=n).map(|j| self.a.powi(j as i32)).sum();
            g += self.loss_weights[n] * 2.0 * (xs[n + 1] - self.targets[n]) * sens;
        }
        g / t as f64
    }
}

impl SequenceModel for ScalarLinearModel {
    fn params(&self) -> Vec<Tensor> {
        vec![Tensor::scalar(self.theta)]
    }

    fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != 1 || params[0].numel() != 1 {
            return Err(CoreError::Config("scalar model has one parameter".into()));
        }
        self.theta = params[0].data()[0];
        Ok(())
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn batch_size(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        self.targets.len()
    }

    fn initial_state(&self, _item: usize) -> Result<Vec<f64>> {
        Ok(vec![self.x0])
    }

    fn step_on_tape(
        &self,
        tape: &mut Tape,
        params: &[ValueId],
        state: ValueId,
        _item: usize,
        _step: usize,
    ) -> Result<ValueId> {
        let ax = tape.scale(state, self.a)?;
        tape.add(ax, params[0])
    }

    fn loss_on_tape(
        &self,
        tape: &mut Tape,
        pred: ValueId,
        _item: usize,
        step: usize,
    ) -> Result<ValueId> {
        let w = self.loss_weights[step];
        let d = tape.affine(pred, 1.0, -self.targets[step])?;
        let sq = tape.hadamard(d, d)?;
        let s = tape.reduce_sum(sq)?;
        tape.scale(s, w)
    }
}
