//! Spectral-radius, operator-norm, and Jacobian-gap estimates for one-step
//! maps, built on power iteration with matrix-free Jacobian actions.

use crate::autodiff::fd::jvp;
use crate::blackoil::jacobian::{interleave_for_solve, interleave_residual, uninterleave_solution};
use crate::blackoil::{
    residual_jacobian_minus, residual_jacobian_plus, StepContext, WellControls,
};
use crate::error::{CoreError, Result};
use crate::fno::FnoSurrogate;
use crate::grid::{Grid, RockFields, State};
use crate::linalg::{
    bicgstab, operator_norm_power, spectral_radius_power, Csr, Ilu0, LinOp, LinOpT, PowerEstimate,
};
use crate::sim::{OneStepMap, Simulator};

/// Finite-difference Jacobian action of any one-step map at a fixed point.
/// No transpose: usable for spectral-radius estimates only.
pub struct MapJacobian<'a> {
    map: &'a dyn OneStepMap,
    rock: &'a RockFields,
    wells: &'a WellControls,
    ctx: StepContext,
    base: Vec<f64>,
    h: Option<f64>,
}

impl<'a> MapJacobian<'a> {
    pub fn new(
        map: &'a dyn OneStepMap,
        rock: &'a RockFields,
        state: &State,
        wells: &'a WellControls,
        ctx: StepContext,
    ) -> Self {
        Self {
            map,
            rock,
            wells,
            ctx,
            base: state.to_flat(),
            h: None,
        }
    }

    /// Overrides the finite-difference step (for stiff maps like the
    /// implicit solver, where the default scale is too coarse).
    pub fn with_step(mut self, h: f64) -> Self {
        self.h = Some(h);
        self
    }

    fn eval(&self, flat: &[f64]) -> Result<Vec<f64>> {
        let state = State::from_flat(flat)?;
        Ok(self
            .map
            .step(self.rock, &state, self.wells, self.ctx)?
            .to_flat())
    }
}

impl LinOp for MapJacobian<'_> {
    fn dim(&self) -> usize {
        self.base.len()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let f = |x: &[f64]| self.eval(x);
        jvp(&f, &self.base, v, self.h).unwrap_or_else(|_| vec![f64::NAN; self.base.len()])
    }
}

/// Jacobian of a trained operator: forward action by central differences,
/// transpose action exactly via the tape.
pub struct SurrogateJacobian<'a> {
    surrogate: &'a FnoSurrogate,
    rock: &'a RockFields,
    wells: &'a WellControls,
    ctx: StepContext,
    state: State,
    base: Vec<f64>,
}

impl<'a> SurrogateJacobian<'a> {
    pub fn new(
        surrogate: &'a FnoSurrogate,
        rock: &'a RockFields,
        state: &State,
        wells: &'a WellControls,
        ctx: StepContext,
    ) -> Self {
        Self {
            surrogate,
            rock,
            wells,
            ctx,
            state: state.clone(),
            base: state.to_flat(),
        }
    }
}

impl LinOp for SurrogateJacobian<'_> {
    fn dim(&self) -> usize {
        self.base.len()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let f = |x: &[f64]| -> Result<Vec<f64>> {
            let state = State::from_flat(x)?;
            Ok(self
                .surrogate
                .eval(self.rock, &state, self.wells, self.ctx)?
                .to_flat())
        };
        jvp(&f, &self.base, v, None).unwrap_or_else(|_| vec![f64::NAN; self.base.len()])
    }
}

impl LinOpT for SurrogateJacobian<'_> {
    fn apply_t(&self, u: &[f64]) -> Vec<f64> {
        self.surrogate
            .state_vjp(self.rock, &self.state, self.wells, self.ctx, u)
            .unwrap_or_else(|_| vec![f64::NAN; self.base.len()])
    }
}

/// Jacobian of the implicit time-advance map by implicit differentiation:
/// J = -(dR/dx+)^{-1} dR/dx-, with both factors assembled at (F(x), x).
/// The transpose action solves the adjoint system.
pub struct SimulatorJacobian {
    jac_minus: Csr,
    a: Csr,
    at: Csr,
    ilu: Ilu0,
    ilu_t: Ilu0,
    n: usize,
}

impl SimulatorJacobian {
    pub fn at_state(
        sim: &Simulator,
        rock: &RockFields,
        state: &State,
        wells: &WellControls,
        ctx: StepContext,
    ) -> Result<Self> {
        let x_plus = sim.step(rock, state, wells, ctx)?;
        let inputs = sim.inputs(rock, wells, ctx);
        let jac_plus = residual_jacobian_plus(&x_plus, state, &inputs)?;
        let jac_minus = residual_jacobian_minus(&x_plus, state, &inputs)?;
        let n = sim.grid.n_cells();
        let a = interleave_for_solve(&jac_plus, n);
        let at = transpose(&a);
        let ilu = Ilu0::new(&a)?;
        let ilu_t = Ilu0::new(&at)?;
        Ok(Self {
            jac_minus,
            a,
            at,
            ilu,
            ilu_t,
            n,
        })
    }
}

fn transpose(a: &Csr) -> Csr {
    let mut triplets = Vec::with_capacity(a.nnz());
    for r in 0..a.n_rows {
        for k in a.indptr[r]..a.indptr[r + 1] {
            triplets.push((a.indices[k], r, a.data[k]));
        }
    }
    Csr::from_triplets(a.n_cols, a.n_rows, &triplets)
}

impl LinOp for SimulatorJacobian {
    fn dim(&self) -> usize {
        4 * self.n
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        // J v = -(dR/dx+)^{-1} (dR/dx- v).
        let mut rhs_state = vec![0.0; 4 * self.n];
        self.jac_minus.matvec(v, &mut rhs_state);
        let rhs: Vec<f64> = interleave_residual(&rhs_state, self.n)
            .iter()
            .map(|x| -x)
            .collect();
        match bicgstab(&self.a, &self.ilu, &rhs, 1e-12, 600) {
            Ok((sol, _)) => uninterleave_solution(&sol, self.n),
            Err(_) => vec![f64::NAN; 4 * self.n],
        }
    }
}

impl LinOpT for SimulatorJacobian {
    fn apply_t(&self, u: &[f64]) -> Vec<f64> {
        // J^T u = -(dR/dx-)^T (dR/dx+)^{-T} u.
        // u lives in state layout; (dR/dx+)^{-T} acts on the residual side.
        // Interleave as a solution vector, solve the transposed system, then
        // map the residual-layout result through (dR/dx-)^T.
        let n = self.n;
        let mut u_sol = vec![0.0; 4 * n];
        for cell in 0..n {
            for var in 0..4 {
                u_sol[cell * 4 + var] = u[var * n + cell];
            }
        }
        let (sol, _) = match bicgstab(&self.at, &self.ilu_t, &u_sol, 1e-12, 600) {
            Ok(v) => v,
            Err(_) => return vec![f64::NAN; 4 * n],
        };
        // The transposed interleaved solve returns a vector indexed by the
        // interleaved residual rows; map back to residual block layout.
        use crate::blackoil::jacobian::SLOT_OF_EQ;
        let mut resid = vec![0.0; 4 * n];
        for eq in 0..4 {
            for cell in 0..n {
                resid[eq * n + cell] = sol[cell * 4 + SLOT_OF_EQ[eq]];
            }
        }
        let mut out = vec![0.0; 4 * n];
        self.jac_minus.matvec_t(&resid, &mut out);
        out.iter_mut().for_each(|x| *x = -*x);
        out
    }
}

/// Difference of two Jacobian actions, for the Jacobian-gap estimate.
pub struct DifferenceJacobian<'a> {
    pub a: &'a dyn LinOpT,
    pub b: &'a dyn LinOpT,
}

impl LinOp for DifferenceJacobian<'_> {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.a
            .apply(v)
            .iter()
            .zip(self.b.apply(v))
            .map(|(x, y)| x - y)
            .collect()
    }
}

impl LinOpT for DifferenceJacobian<'_> {
    fn apply_t(&self, u: &[f64]) -> Vec<f64> {
        self.a
            .apply_t(u)
            .iter()
            .zip(self.b.apply_t(u))
            .map(|(x, y)| x - y)
            .collect()
    }
}

/// Spectral radius estimate of a Jacobian action by power iteration, with
/// an oscillation diagnostic for complex dominant pairs.
pub fn spectral_radius(op: &dyn LinOp, iters: usize, seed: u64) -> Result<PowerEstimate> {
    if iters < 20 {
        return Err(CoreError::Config("spectral radius needs >= 20 iterations".into()));
    }
    Ok(spectral_radius_power(op, iters, seed))
}

/// Operator norm in the phi metric (weights = per-cell pv weight, repeated
/// over the four state blocks); None gives the Euclidean norm.
pub fn operator_norm(
    op: &dyn LinOpT,
    weights: Option<&[f64]>,
    iters: usize,
    seed: u64,
) -> Result<PowerEstimate> {
    if iters < 20 {
        return Err(CoreError::Config("operator norm needs >= 20 iterations".into()));
    }
    Ok(operator_norm_power(op, weights, iters, seed))
}

/// ||D_x G - D_x F||_{op,phi} by power iteration on the difference.
pub fn jacobian_gap(
    a: &dyn LinOpT,
    b: &dyn LinOpT,
    weights: Option<&[f64]>,
    iters: usize,
    seed: u64,
) -> Result<PowerEstimate> {
    let diff = DifferenceJacobian { a, b };
    operator_norm(&diff, weights, iters, seed)
}

/// pv weights for a 4N state vector on this grid/rock.
pub fn phi_weights(rock: &RockFields, grid: &Grid) -> Vec<f64> {
    crate::grid::pv_weights_4n(rock, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::LinOpT;

    struct DenseOp {
        m: Vec<Vec<f64>>,
    }
    impl LinOp for DenseOp {
        fn dim(&self) -> usize {
            self.m.len()
        }
        fn apply(&self, v: &[f64]) -> Vec<f64> {
            self.m
                .iter()
                .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
                .collect()
        }
    }
    impl LinOpT for DenseOp {
        fn apply_t(&self, v: &[f64]) -> Vec<f64> {
            let n = self.m.len();
            (0..n)
                .map(|j| (0..n).map(|i| self.m[i][j] * v[i]).sum())
                .collect()
        }
    }

    #[test]
    fn operator_norm_dominates_spectral_radius() {
        // A shear has rho = 1 but norm > 1.
        let op = DenseOp {
            m: vec![vec![1.0, 2.0], vec![0.0, 1.0]],
        };
        let rho = spectral_radius(&op, 400, 3).unwrap();
        let norm = operator_norm(&op, None, 400, 3).unwrap();
        assert!(norm.value >= rho.value - 1e-3);
        assert!((norm.value - 2.414).abs() < 1e-2);
    }

    #[test]
    fn gap_recovers_constructed_perturbation() {
        let a = DenseOp {
            m: vec![vec![0.5, 0.0], vec![0.0, 0.2]],
        };
        let b = DenseOp {
            m: vec![vec![0.5, 0.3], vec![0.0, 0.2]],
        };
        let gap = jacobian_gap(&a, &b, None, 400, 1).unwrap();
        assert!((gap.value - 0.3).abs() < 1e-6, "gap {}", gap.value);
    }

    #[test]
    fn simulator_jacobian_matches_fd_action() {
        use crate::sim::Simulator;
        let mut sim = Simulator::new(Grid::new(3, 3, 1, 50.0, 50.0, 20.0).unwrap());
        // The finite-difference reference needs the solver converged well
        // below the probe step, or the weakly determined pressure mode
        // pollutes the quotient.
        sim.newton.tol_residual = 1e-12;
        sim.newton.linear_rtol = 1e-11;
        let rock = RockFields::uniform(&sim.grid, 0.25, -4.0);
        let n = sim.grid.n_cells();
        let mut state = State::uniform(n, 1000.0, 0.35, 0.45, 0.2);
        for i in 0..n {
            state.pressure[i] += (i as f64 * 0.71).sin() * 25.0;
        }
        let wells = WellControls::none();
        let ctx = StepContext { dt: 20.0, t: 0.0 };
        let implicit = SimulatorJacobian::at_state(&sim, &rock, &state, &wells, ctx).unwrap();
        let fd = MapJacobian::new(&sim, &rock, &state, &wells, ctx).with_step(2e-3);
        let v: Vec<f64> = (0..4 * n)
            .map(|k| ((k * 37 % 19) as f64 - 9.0) / 9.0)
            .collect();
        let a = implicit.apply(&v);
        let b = fd.apply(&v);
        let num: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let den: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(num / den < 2e-3, "rel err {}", num / den);

        // Adjoint identity: <u, Jv> = <J^T u, v>.
        let u: Vec<f64> = (0..4 * n)
            .map(|k| ((k * 13 % 7) as f64 - 3.0) / 3.0)
            .collect();
        let jv = implicit.apply(&v);
        let jtu = implicit.apply_t(&u);
        let lhs: f64 = u.iter().zip(&jv).map(|(a, b)| a * b).sum();
        let rhs: f64 = jtu.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!(
            (lhs - rhs).abs() / lhs.abs().max(1e-12) < 1e-6,
            "adjoint identity: {lhs} vs {rhs}"
        );
    }
}
