//! Training paradigms: teacher-forced one-step, autoregressive with K-step
//! truncated backpropagation, and the physics-penalised variants, together
//! with exact reference gradients and the Jacobian-chain oracle.

mod fixtures;
mod loss;
mod oracle;
mod sequence;
mod trainer;

pub use fixtures::ScalarLinearModel;
pub use loss::{loss_rel_l2, pino_penalty_on_tape, rel_l2_on_tape, PenaltyWeights};
pub use oracle::{jacobian_chain_oracle, ChainFilter};
pub use sequence::{
    full_bptt_gradient, rollout_ar, tbptt_gradient, FnoSequenceModel, SequenceModel,
    TruncationMode,
};
pub use trainer::{train_ar_tbptt, train_one_step, EpochStats, LossReport};

use crate::error::{CoreError, Result};

/// Which trajectory state anchors the physics penalty's second argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhysicsAnchor {
    /// The true simulator state x_n.
    TeacherForced,
    /// The model's own previous prediction.
    ClosedLoop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Paradigm {
    OneStep,
    ArFull,
    ArTbptt,
}

impl Paradigm {
    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "one_step" => Ok(Paradigm::OneStep),
            "ar_full" => Ok(Paradigm::ArFull),
            "ar_tbptt" => Ok(Paradigm::ArTbptt),
            other => Err(CoreError::Config(format!("unknown paradigm '{other}'"))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Paradigm::OneStep => "one_step",
            Paradigm::ArFull => "ar_full",
            Paradigm::ArTbptt => "ar_tbptt",
        }
    }
}

/// Optimizer stepping for windowed training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepMode {
    /// One Adam step at each window boundary (the memory-friendly default).
    PerWindow,
    /// Accumulate window gradients and step once per sequence, making the
    /// update a single estimator of the truncated gradient.
    Accumulate,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub paradigm: Paradigm,
    /// TBPTT window length (>= 1, <= T).
    pub k_window: usize,
    /// Physics weight lambda_R (>= 0; 0 disables the penalty).
    pub lambda_r: f64,
    /// Component weights (w_P, w_W, w_O, w_G) on the supervised loss.
    pub component_weights: [f64; 4],
    /// Physics sub-weights (lambda_P, lambda_S, lambda_G).
    pub physics_weights: [f64; 3],
    /// Epoch stride between physics-residual evaluations.
    pub pino_freq: usize,
    pub physics_anchor: PhysicsAnchor,
    pub step_mode: StepMode,
    pub epochs: usize,
    /// Members per optimizer step for one-step training.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub sqrt_t_schedule: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            paradigm: Paradigm::ArTbptt,
            k_window: 5,
            lambda_r: 0.0,
            component_weights: [1.0; 4],
            physics_weights: [1.0; 3],
            pino_freq: 1,
            physics_anchor: PhysicsAnchor::ClosedLoop,
            step_mode: StepMode::PerWindow,
            epochs: 30,
            batch_size: 4,
            learning_rate: 3e-3,
            sqrt_t_schedule: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.k_window == 0 || self.k_window > horizon {
            return Err(CoreError::Config(format!(
                "K = {} must satisfy 1 <= K <= T = {horizon}",
                self.k_window
            )));
        }
        if self.lambda_r < 0.0
            || self.component_weights.iter().any(|&w| w < 0.0)
            || self.physics_weights.iter().any(|&w| w < 0.0)
        {
            return Err(CoreError::Config("loss weights must be >= 0".into()));
        }
        if self.pino_freq == 0 {
            return Err(CoreError::Config("pino_freq must be >= 1".into()));
        }
        Ok(())
    }
}
