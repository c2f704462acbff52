//! The true time-advance map: damped Newton on the residual, trajectory and
//! ensemble generation, and empirical estimation of the Lipschitz constant
//! and one-step error.

mod dataset;
mod estimate;
mod fields;
mod newton;
pub mod upwind;

pub use dataset::{gen_dataset, Dataset, DatasetConfig, Member, WellLayout};
pub use estimate::{estimate_lipschitz, estimate_onestep_error, LipschitzEstimate, OneStepError};
pub use fields::{gen_gaussian_field, FieldGenConfig};
pub use newton::{solve_timestep, solve_timestep_substep, NewtonConfig, NewtonStats};

use crate::blackoil::{CapillaryModel, FluidModel, RelPermModel, StepContext, WellControls};
use crate::error::{CoreError, Result};
use crate::grid::{Grid, ProjectionConfig, RockFields, State};

/// A one-step state map x_n -> x_{n+1} given static fields and controls.
/// Implemented by the simulator itself and by trained surrogates.
pub trait OneStepMap: Sync {
    fn step(
        &self,
        rock: &RockFields,
        state: &State,
        wells: &WellControls,
        ctx: StepContext,
    ) -> Result<State>;
}

/// The implicit finite-volume simulator: physics models plus solver settings.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub grid: Grid,
    pub fluid: FluidModel,
    pub relperm: RelPermModel,
    pub capillary: CapillaryModel,
    pub newton: NewtonConfig,
    pub projection: ProjectionConfig,
}

impl Simulator {
    pub fn new(grid: Grid) -> Self {
        Self {
            grid,
            fluid: FluidModel::default(),
            relperm: RelPermModel::default(),
            capillary: CapillaryModel::default(),
            newton: NewtonConfig::default(),
            projection: ProjectionConfig::default(),
        }
    }

    pub fn inputs<'a>(
        &'a self,
        rock: &'a RockFields,
        wells: &'a WellControls,
        ctx: StepContext,
    ) -> crate::blackoil::ResidualInputs<'a> {
        crate::blackoil::ResidualInputs {
            grid: &self.grid,
            rock,
            fluid: &self.fluid,
            relperm: &self.relperm,
            capillary: &self.capillary,
            wells,
            ctx,
        }
    }

    /// Runs the closed-loop trajectory x_0, F(x_0), F(F(x_0)), ...
    /// Each consecutive pair satisfies the residual tolerance.
    pub fn simulate_trajectory(
        &self,
        rock: &RockFields,
        x0: &State,
        controls: &[WellControls],
        dt: f64,
    ) -> Result<Vec<State>> {
        if controls.is_empty() {
            return Err(CoreError::Config("trajectory needs T >= 1 steps".into()));
        }
        let mut states = Vec::with_capacity(controls.len() + 1);
        states.push(x0.clone());
        let mut t = 0.0;
        for (step, wells) in controls.iter().enumerate() {
            let ctx = StepContext { dt, t };
            let next = self
                .step(rock, states.last().unwrap(), wells, ctx)
                .map_err(|e| CoreError::at_step(step, e))?;
            states.push(next);
            t += dt;
        }
        Ok(states)
    }
}

impl OneStepMap for Simulator {
    fn step(
        &self,
        rock: &RockFields,
        state: &State,
        wells: &WellControls,
        ctx: StepContext,
    ) -> Result<State> {
        solve_timestep_substep(self, rock, state, wells, ctx, 4)
    }
}
