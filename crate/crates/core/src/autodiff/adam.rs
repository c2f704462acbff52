//! Adam optimizer with bias correction and an optional 1/sqrt(t) schedule.

use super::Tensor;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// When set, the effective rate at step t is lr / sqrt(t).
    pub sqrt_t_schedule: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            sqrt_t_schedule: false,
        }
    }
}

/// First/second moment accumulators, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    pub step: u64,
    /// Count of tensors skipped because their gradient contained NaN.
    pub skipped_nan: usize,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
            skipped_nan: 0,
        }
    }
}

/// One Adam update over aligned parameter/gradient slices.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(CoreError::dimension(
            "adam_step parameter count",
            params.len(),
            grads.len(),
        ));
    }
    state.step += 1;
    let t = state.step as f64;
    let lr = if cfg.sqrt_t_schedule {
        cfg.lr / t.sqrt()
    } else {
        cfg.lr
    };
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if p.shape() != g.shape() {
            return Err(CoreError::Config(format!(
                "adam_step: parameter shape {:?} vs gradient shape {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if g.data().iter().any(|x| x.is_nan()) {
            state.skipped_nan += 1;
            continue;
        }
        for i in 0..p.numel() {
            let gi = g.data()[i];
            let mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * gi;
            let vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            p.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = vec![Tensor::from_vec(vec![1.0, -2.0, 3.0])];
        let grads = vec![Tensor::from_vec(vec![0.0; 3])];
        let mut st = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(params[0].data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_with_zero_betas_is_sign_like() {
        let mut params = vec![Tensor::from_vec(vec![1.0, -1.0])];
        let grads = vec![Tensor::from_vec(vec![0.5, -0.25])];
        let mut st = AdamState::new(&params);
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.0,
            beta2: 0.0,
            ..AdamConfig::default()
        };
        adam_step(&mut params, &grads, &mut st, &cfg).unwrap();
        // theta - lr * g / (|g| + eps)
        assert_relative_eq!(params[0].data()[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), epsilon = 1e-12);
        assert_relative_eq!(params[0].data()[1], -1.0 + 0.1 * 0.25 / (0.25 + 1e-8), epsilon = 1e-12);
    }

    #[test]
    fn deterministic_repeat() {
        let run = || {
            let mut params = vec![Tensor::from_vec(vec![0.3, 0.7])];
            let grads = vec![Tensor::from_vec(vec![0.11, -0.07])];
            let mut st = AdamState::new(&params);
            for _ in 0..5 {
                adam_step(&mut params, &grads, &mut st, &AdamConfig::default()).unwrap();
            }
            params[0].data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn nan_gradient_skips_tensor_and_flags() {
        let mut params = vec![
            Tensor::from_vec(vec![1.0]),
            Tensor::from_vec(vec![2.0]),
        ];
        let grads = vec![
            Tensor::from_vec(vec![f64::NAN]),
            Tensor::from_vec(vec![1.0]),
        ];
        let mut st = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(params[0].data()[0], 1.0);
        assert!(params[1].data()[0] < 2.0);
        assert_eq!(st.skipped_nan, 1);
    }

    #[test]
    fn sqrt_t_schedule_shrinks_steps() {
        let mut params = vec![Tensor::from_vec(vec![0.0])];
        let grads = vec![Tensor::from_vec(vec![1.0])];
        let mut st = AdamState::new(&params);
        let cfg = AdamConfig {
            lr: 1.0,
            sqrt_t_schedule: true,
            ..AdamConfig::default()
        };
        adam_step(&mut params, &grads, &mut st, &cfg).unwrap();
        let first = -params[0].data()[0];
        let before = params[0].data()[0];
        adam_step(&mut params, &grads, &mut st, &cfg).unwrap();
        let second = before - params[0].data()[0];
        assert!(second < first);
        assert_relative_eq!(second * 2.0f64.sqrt(), first, epsilon = 1e-6);
    }
}
