//! Desk-scale black-oil surrogate laboratory.
//!
//! The crate is organised around the pipeline it implements:
//!
//! - [`grid`]: cell geometry, pore-volume weighted metrics, admissible states;
//! - [`blackoil`]: the finite-volume residual operator, its Jacobians, and
//!   the coercivity probe;
//! - [`sim`]: the implicit (Newton) time-advance map, Gaussian field and
//!   dataset generation, Lipschitz / one-step-error estimation;
//! - [`autodiff`]: dense FP64 tensors, a reverse-mode tape with stop-gradient,
//!   spectral transforms, and Adam;
//! - [`fno`]: the Fourier-space neural operator surrogate;
//! - [`train`]: one-step, autoregressive, and physics-penalised training with
//!   K-step truncated backpropagation through time;
//! - [`verify`]: closed-form bound evaluators and empirical checkers for the
//!   stability, coupling, bias-decay, and spectral-rate claims.

pub mod autodiff;
pub mod blackoil;
pub mod error;
pub mod fno;
pub mod grid;
pub mod linalg;
pub mod sim;
pub mod train;
pub mod verify;

pub use error::{CoreError, Result};
pub use grid::{Component, EnsembleTrajectory, Grid, RockFields, State};
