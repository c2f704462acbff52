//! The relative l2 loss in the pore-volume metric and the physics penalty.

use crate::autodiff::{Tape, Tensor, ValueId};
use crate::blackoil::tape::{residual_blocks_on_tape, StateIds};
use crate::blackoil::ResidualInputs;
use crate::error::{CoreError, Result};
use crate::grid::{pv_inner, Grid, RockFields};

/// Guard floor for zero-norm targets; flagged by returning the floored value.
const DENOM_FLOOR: f64 = 1e-12;

/// Plain evaluation: ||pred - target||^2_phi / ||target||^2_phi.
pub fn loss_rel_l2(
    pred: &[f64],
    target: &[f64],
    rock: &RockFields,
    grid: &Grid,
) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(CoreError::dimension("loss_rel_l2", target.len(), pred.len()));
    }
    let diff: Vec<f64> = pred.iter().zip(target).map(|(a, b)| a - b).collect();
    let num = pv_inner(&diff, &diff, rock, grid)?;
    let den = pv_inner(target, target, rock, grid)?.max(DENOM_FLOOR);
    Ok(num / den)
}

/// Tape version over grid-shaped tensors; `target` enters as a constant.
pub fn rel_l2_on_tape(
    tape: &mut Tape,
    pred: ValueId,
    target: &[f64],
    rock: &RockFields,
    grid: &Grid,
) -> Result<ValueId> {
    let n = grid.n_cells();
    let shape = tape.value(pred).shape().to_vec();
    let numel: usize = shape.iter().product();
    if numel != target.len() {
        return Err(CoreError::dimension("rel_l2_on_tape", numel, target.len()));
    }
    // Per-cell pv weights tiled over leading channels.
    let vol = grid.cell_volume();
    let channels = numel / n;
    let mut w = Vec::with_capacity(numel);
    for _ in 0..channels {
        w.extend(rock.porosity.iter().map(|&p| p * vol));
    }
    let den: f64 = target
        .iter()
        .zip(&w)
        .map(|(t, wi)| wi * t * t)
        .sum::<f64>()
        .max(DENOM_FLOOR);

    let t_const = tape.leaf(Tensor::new(shape.clone(), target.to_vec())?);
    let w_const = tape.leaf(Tensor::new(shape, w)?);
    let diff = tape.sub(pred, t_const)?;
    let wd = tape.hadamard(w_const, diff)?;
    let sq = tape.hadamard(wd, diff)?;
    let sum = tape.reduce_sum(sq)?;
    tape.scale(sum, 1.0 / den)
}

/// Sub-weights of the physics penalty blocks.
#[derive(Debug, Clone, Copy)]
pub struct PenaltyWeights {
    /// Weight of the closure (constraint) block.
    pub lambda_p: f64,
    /// Weight of the water + oil transport blocks.
    pub lambda_s: f64,
    /// Weight of the gas block.
    pub lambda_g: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        Self {
            lambda_p: 1.0,
            lambda_s: 1.0,
            lambda_g: 1.0,
        }
    }
}

/// Differentiable residual penalty
/// lambda_P ||r_c||^2_phi + lambda_S (||r_w||^2 + ||r_o||^2)_phi + lambda_G ||r_g||^2_phi
/// evaluated at (x_plus, anchor). With unit weights this is exactly
/// ||R(x_plus, anchor)||^2_phi.
pub fn pino_penalty_on_tape(
    tape: &mut Tape,
    x_plus: StateIds,
    anchor: StateIds,
    inputs: &ResidualInputs<'_>,
    weights: PenaltyWeights,
) -> Result<ValueId> {
    let [r_w, r_o, r_g, r_c] = residual_blocks_on_tape(tape, x_plus, anchor, inputs)?;
    let grid = inputs.grid;
    let vol = grid.cell_volume();
    let w: Vec<f64> = inputs.rock.porosity.iter().map(|&p| p * vol).collect();
    let gshape = vec![grid.nx, grid.ny, grid.nz];
    let w_const = tape.leaf(Tensor::new(gshape, w)?);

    let norm_sq = |tape: &mut Tape, r: ValueId| -> Result<ValueId> {
        let wr = tape.hadamard(w_const, r)?;
        let sq = tape.hadamard(wr, r)?;
        tape.reduce_sum(sq)
    };
    let nw = norm_sq(tape, r_w)?;
    let no = norm_sq(tape, r_o)?;
    let ng = norm_sq(tape, r_g)?;
    let nc = norm_sq(tape, r_c)?;

    let transport = tape.add(nw, no)?;
    let transport = tape.scale(transport, weights.lambda_s)?;
    let gas = tape.scale(ng, weights.lambda_g)?;
    let closure = tape.scale(nc, weights.lambda_p)?;
    let a = tape.add(transport, gas)?;
    tape.add(a, closure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackoil::tape::leaf_state;
    use crate::blackoil::{
        CapillaryModel, FluidModel, RelPermModel, StepContext, WellControls,
    };
    use crate::grid::State;
    use approx::assert_relative_eq;

    #[test]
    fn rel_l2_basic_values() {
        let grid = Grid::new(2, 1, 1, 1.0, 1.0, 1.0).unwrap();
        let rock = RockFields::uniform(&grid, 0.5, 0.0);
        let t = vec![1.0, 2.0];
        assert_eq!(loss_rel_l2(&t, &t, &rock, &grid).unwrap(), 0.0);
        let double: Vec<f64> = t.iter().map(|x| 2.0 * x).collect();
        assert_relative_eq!(loss_rel_l2(&double, &t, &rock, &grid).unwrap(), 1.0);
        // Hand case: pred (1.5, 2.0), target (1.0, 2.0), weights 0.5:
        // num = 0.5 * 0.25 = 0.125; den = 0.5 * (1 + 4) = 2.5.
        let pred = vec![1.5, 2.0];
        assert_relative_eq!(
            loss_rel_l2(&pred, &t, &rock, &grid).unwrap(),
            0.125 / 2.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn rel_l2_zero_target_is_floored() {
        let grid = Grid::new(2, 1, 1, 1.0, 1.0, 1.0).unwrap();
        let rock = RockFields::uniform(&grid, 0.5, 0.0);
        let z = vec![0.0, 0.0];
        let pred = vec![1.0, 0.0];
        let v = loss_rel_l2(&pred, &z, &rock, &grid).unwrap();
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn tape_loss_matches_plain() {
        let grid = Grid::new(3, 2, 1, 1.0, 1.0, 1.0).unwrap();
        let rock = RockFields::uniform(&grid, 0.3, 0.0);
        let n = grid.n_cells();
        let pred: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
        let target: Vec<f64> = (0..n).map(|i| 1.0 + 0.07 * i as f64).collect();
        let plain = loss_rel_l2(&pred, &target, &rock, &grid).unwrap();
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::new(vec![grid.nx, grid.ny, grid.nz], pred).unwrap());
        let l = rel_l2_on_tape(&mut tape, p, &target, &rock, &grid).unwrap();
        assert_relative_eq!(tape.value(l).item().unwrap(), plain, epsilon = 1e-14);
    }

    #[test]
    fn penalty_is_nonnegative_and_zero_on_manifold() {
        let grid = Grid::new(2, 2, 1, 10.0, 10.0, 5.0).unwrap();
        let rock = RockFields::uniform(&grid, 0.25, -4.0);
        let fluid = FluidModel::default();
        let rp = RelPermModel::default();
        let cap = CapillaryModel::default();
        let wells = WellControls::none();
        let inputs = ResidualInputs {
            grid: &grid,
            rock: &rock,
            fluid: &fluid,
            relperm: &rp,
            capillary: &cap,
            wells: &wells,
            ctx: StepContext { dt: 1.0, t: 0.0 },
        };
        // Equilibrium pair (x, x) with uniform fields is on the manifold.
        let x = State::uniform(grid.n_cells(), 1000.0, 0.3, 0.5, 0.2);
        let mut tape = Tape::new();
        let xp = leaf_state(&mut tape, &x, &grid).unwrap();
        let xm = leaf_state(&mut tape, &x, &grid).unwrap();
        let pen =
            pino_penalty_on_tape(&mut tape, xp, xm, &inputs, PenaltyWeights::default()).unwrap();
        let v = tape.value(pen).item().unwrap();
        assert!(v >= 0.0 && v < 1e-20, "penalty {v}");

        // Off-manifold states score positive.
        let mut y = x.clone();
        y.sw[0] += 0.05;
        y.so[0] -= 0.02;
        let mut tape = Tape::new();
        let yp = leaf_state(&mut tape, &y, &grid).unwrap();
        let xm = leaf_state(&mut tape, &x, &grid).unwrap();
        let pen =
            pino_penalty_on_tape(&mut tape, yp, xm, &inputs, PenaltyWeights::default()).unwrap();
        assert!(tape.value(pen).item().unwrap() > 0.0);
    }
}
