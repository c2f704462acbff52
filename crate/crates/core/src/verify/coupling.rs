//! Coupled trajectory divergence (the Wasserstein upper bound by the
//! canonical coupling) and the per-step rollout bound check.

use crate::blackoil::{StepContext, WellControls};
use crate::error::{CoreError, Result};
use crate::grid::{pv_norm_4n, Grid, RockFields, State};
use crate::sim::OneStepMap;

/// One evaluation scenario: shared rock, initial condition, and controls.
pub struct CouplingScenario {
    pub rock: RockFields,
    pub x0: State,
    pub controls: Vec<WellControls>,
}

/// Runs both maps from identical (x0, u, c) and reports the per-step RMS
/// pv-distance sqrt(mean ||x_hat_n - x_n||^2_phi): an upper bound on the
/// Wasserstein-2 distance between the step-n laws under the canonical
/// coupling. Failed members are dropped; their count is returned.
pub fn coupled_divergence(
    surrogate: &dyn OneStepMap,
    truth: &dyn OneStepMap,
    scenarios: &[CouplingScenario],
    dt: f64,
    grid: &Grid,
) -> Result<(Vec<f64>, usize)> {
    if scenarios.len() < 8 {
        return Err(CoreError::Config(format!(
            "coupled divergence needs >= 8 scenarios, got {}",
            scenarios.len()
        )));
    }
    let t_steps = scenarios[0].controls.len();
    let mut sums = vec![0.0; t_steps + 1];
    let mut used = 0usize;
    let mut dropped = 0usize;
    'member: for sc in scenarios {
        if sc.controls.len() != t_steps {
            return Err(CoreError::Config("scenario horizons differ".into()));
        }
        let mut x_hat = sc.x0.clone();
        let mut x = sc.x0.clone();
        let mut dists = vec![0.0; t_steps + 1];
        for (step, wells) in sc.controls.iter().enumerate() {
            let ctx = StepContext {
                dt,
                t: step as f64 * dt,
            };
            let next_hat = match surrogate.step(&sc.rock, &x_hat, wells, ctx) {
                Ok(v) => v,
                Err(_) => {
                    dropped += 1;
                    continue 'member;
                }
            };
            let next = match truth.step(&sc.rock, &x, wells, ctx) {
                Ok(v) => v,
                Err(_) => {
                    dropped += 1;
                    continue 'member;
                }
            };
            x_hat = next_hat;
            x = next;
            let diff: Vec<f64> = x_hat
                .to_flat()
                .iter()
                .zip(&x.to_flat())
                .map(|(a, b)| a - b)
                .collect();
            dists[step + 1] = pv_norm_4n(&diff, &sc.rock, grid)?;
        }
        for (s, d) in sums.iter_mut().zip(&dists) {
            *s += d * d;
        }
        used += 1;
    }
    if used == 0 {
        return Err(CoreError::Numerical("every coupling scenario failed".into()));
    }
    Ok((
        sums.iter().map(|s| (s / used as f64).sqrt()).collect(),
        dropped,
    ))
}

/// Per-step comparison of measured rollout errors against the convolution
/// bound sum_j L^{n-1-j} e_j (with the slack factor for estimator noise).
#[derive(Debug, Clone)]
pub struct BoundReport {
    /// Measured ||delta_n||, n = 0..T.
    pub measured: Vec<f64>,
    /// Bound value per step (without slack).
    pub bound: Vec<f64>,
    pub satisfied: Vec<bool>,
    /// bound * slack_factor - measured, per step.
    pub slack: Vec<f64>,
    pub slack_factor: f64,
    pub l_hat: f64,
    pub eps_hat: f64,
    pub rho_hat: Option<f64>,
}

impl BoundReport {
    pub fn all_satisfied(&self) -> bool {
        self.satisfied.iter().all(|&s| s)
    }

    pub fn violations(&self) -> usize {
        self.satisfied.iter().filter(|&&s| !s).count()
    }
}

/// Evaluates the rollout bound recursion b_{n+1} = L b_n + e_n against the
/// measured per-step errors. `measured[0]` is delta_0 (usually 0).
pub fn check_rollout(
    measured: &[f64],
    per_step_e: &[f64],
    l_hat: f64,
    slack_factor: f64,
) -> Result<BoundReport> {
    if measured.len() != per_step_e.len() + 1 {
        return Err(CoreError::dimension(
            "check_rollout: need T+1 measurements for T step errors",
            per_step_e.len() + 1,
            measured.len(),
        ));
    }
    let mut bound = Vec::with_capacity(measured.len());
    bound.push(measured[0]);
    let mut b = measured[0];
    for &e in per_step_e {
        b = l_hat * b + e;
        bound.push(b);
    }
    let satisfied: Vec<bool> = measured
        .iter()
        .zip(&bound)
        .map(|(&m, &bd)| m <= bd * slack_factor + 1e-15)
        .collect();
    let slack: Vec<f64> = measured
        .iter()
        .zip(&bound)
        .map(|(&m, &bd)| bd * slack_factor - m)
        .collect();
    let eps_hat = per_step_e.iter().cloned().fold(0.0, f64::max);
    Ok(BoundReport {
        measured: measured.to_vec(),
        bound,
        satisfied,
        slack,
        slack_factor,
        l_hat,
        eps_hat,
        rho_hat: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::RockFields;
    use crate::verify::bound_geometric;

    struct Shrink(f64);
    impl OneStepMap for Shrink {
        fn step(
            &self,
            _rock: &RockFields,
            state: &State,
            _wells: &WellControls,
            _ctx: StepContext,
        ) -> Result<State> {
            let flat: Vec<f64> = state.to_flat().iter().map(|v| self.0 * v).collect();
            State::from_flat(&flat)
        }
    }

    struct ShrinkOffset(f64, f64);
    impl OneStepMap for ShrinkOffset {
        fn step(
            &self,
            rock: &RockFields,
            state: &State,
            wells: &WellControls,
            ctx: StepContext,
        ) -> Result<State> {
            let mut out = Shrink(self.0).step(rock, state, wells, ctx)?;
            for v in out.pressure.iter_mut() {
                *v += self.1;
            }
            Ok(out)
        }
    }

    fn scenarios(n: usize, grid: &Grid) -> Vec<CouplingScenario> {
        (0..n)
            .map(|i| CouplingScenario {
                rock: RockFields::uniform(grid, 0.25, -4.0),
                x0: State::uniform(grid.n_cells(), 100.0 + i as f64, 0.3, 0.5, 0.2),
                controls: vec![WellControls::none(); 6],
            })
            .collect()
    }

    #[test]
    fn identical_maps_have_zero_divergence() {
        let grid = Grid::new(2, 2, 1, 1.0, 1.0, 1.0).unwrap();
        let scs = scenarios(8, &grid);
        let (d, dropped) =
            coupled_divergence(&Shrink(0.9), &Shrink(0.9), &scs, 1.0, &grid).unwrap();
        assert_eq!(dropped, 0);
        for v in d {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn divergence_respects_geometric_bound() {
        let grid = Grid::new(2, 2, 1, 1.0, 1.0, 1.0).unwrap();
        let scs = scenarios(8, &grid);
        let l = 0.9;
        let eps_press = 0.5;
        let (d, _) =
            coupled_divergence(&ShrinkOffset(l, eps_press), &Shrink(l), &scs, 1.0, &grid).unwrap();
        // One-step error in the pv norm: the offset acts on pressure only.
        let ones = vec![1.0; grid.n_cells()];
        let eps = eps_press * crate::grid::pv_norm(&ones, &scs[0].rock, &grid).unwrap();
        for (n, v) in d.iter().enumerate() {
            let bound = bound_geometric(eps, l, n);
            assert!(
                *v <= bound * 1.05 + 1e-12,
                "step {n}: divergence {v} > bound {bound}"
            );
        }
        // The linear map with a constant offset attains the bound exactly.
        let last = *d.last().unwrap();
        let exact = bound_geometric(eps, l, d.len() - 1);
        assert!((last - exact).abs() / exact < 1e-10, "{last} vs {exact}");
    }

    #[test]
    fn requires_eight_scenarios() {
        let grid = Grid::new(2, 1, 1, 1.0, 1.0, 1.0).unwrap();
        let scs = scenarios(3, &grid);
        assert!(coupled_divergence(&Shrink(0.9), &Shrink(0.9), &scs, 1.0, &grid).is_err());
    }

    #[test]
    fn rollout_check_trivial_and_extremal() {
        // delta = 0: trivially satisfied.
        let rep = check_rollout(&[0.0, 0.0, 0.0], &[0.1, 0.1], 1.1, 1.05).unwrap();
        assert!(rep.all_satisfied());

        // Extremal sequence delta_{n+1} = L delta_n + e_n has zero slack at
        // slack factor 1.
        let l = 1.2;
        let e = [0.1, 0.2, 0.05];
        let mut seq = vec![0.0];
        for &en in &e {
            let prev = *seq.last().unwrap();
            seq.push(l * prev + en);
        }
        let rep = check_rollout(&seq, &e, l, 1.0).unwrap();
        assert!(rep.all_satisfied());
        for (i, s) in rep.slack.iter().enumerate() {
            assert!(s.abs() < 1e-12, "slack at {i}: {s}");
        }

        // Violation is flagged.
        let rep = check_rollout(&[0.0, 1.0], &[0.1], 1.0, 1.05).unwrap();
        assert!(!rep.all_satisfied());
        assert_eq!(rep.violations(), 1);
    }
}
