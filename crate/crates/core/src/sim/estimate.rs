//! Empirical estimation of the one-step map's local Lipschitz constant and
//! of the surrogate's open-loop one-step error.

use super::{Dataset, OneStepMap};
use crate::blackoil::StepContext;
use crate::error::{CoreError, Result};
use crate::grid::{project_state, pv_norm, pv_norm_4n, Component, Grid, ProjectionConfig, State};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Lipschitz ratios maximised over sampled pairs, per output component and
/// overall. A lower bound on the true local constant.
#[derive(Debug, Clone)]
pub struct LipschitzEstimate {
    pub global: f64,
    pub pressure: f64,
    pub water: f64,
    pub oil: f64,
    pub gas: f64,
    pub probes_used: usize,
    pub probes_failed: usize,
}

impl LipschitzEstimate {
    pub fn component(&self, c: Component) -> f64 {
        match c {
            Component::Pressure => self.pressure,
            Component::Water => self.water,
            Component::Oil => self.oil,
            Component::Gas => self.gas,
        }
    }
}

/// Max over sampled pairs (x, project(x + r delta)) of the pv-distance ratio
/// of outputs; delta is a random unit direction, r defaults to 1% of the
/// state pv-norm. Failed probes are skipped and counted.
pub fn estimate_lipschitz(
    map: &dyn OneStepMap,
    dataset: &Dataset,
    grid: &Grid,
    n_probes: usize,
    radius: Option<f64>,
    seed: u64,
) -> Result<LipschitzEstimate> {
    if n_probes == 0 {
        return Err(CoreError::Config("n_probes must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut est = LipschitzEstimate {
        global: 0.0,
        pressure: 0.0,
        water: 0.0,
        oil: 0.0,
        gas: 0.0,
        probes_used: 0,
        probes_failed: 0,
    };
    let n = grid.n_cells();
    let proj = ProjectionConfig::default();
    for _ in 0..n_probes {
        let m = rng.gen_range(0..dataset.members.len());
        let member = &dataset.members[m];
        let step = rng.gen_range(0..member.controls.len());
        let x = &member.states[step];
        let wells = &member.controls[step];
        let ctx = StepContext {
            dt: dataset.dt,
            t: step as f64 * dataset.dt,
        };

        // The probe radius is applied per component: each block moves by
        // `r_rel` of its own pv-norm along a random direction, so pressure
        // (~1e3) does not drown the saturations (~1e0).
        let r_rel = radius.unwrap_or(0.01);
        let ones_norm = pv_norm(&vec![1.0; n], &member.rock, grid)?;
        let flat = x.to_flat();
        let mut perturbed = flat.clone();
        for block in 0..4 {
            let xb = &flat[block * n..(block + 1) * n];
            let dir: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let dn = pv_norm(&dir, &member.rock, grid)?;
            if dn == 0.0 {
                continue;
            }
            // Floor near-empty components (e.g. initial gas) at 5% of the
            // all-ones field so they still get probed.
            let scale = r_rel * pv_norm(xb, &member.rock, grid)?.max(0.05 * ones_norm) / dn;
            for i in 0..n {
                perturbed[block * n + i] += scale * dir[i];
            }
        }
        let y = project_state(&State::from_flat(&perturbed)?, proj)?;
        let dist_flat: Vec<f64> = y
            .to_flat()
            .iter()
            .zip(&flat)
            .map(|(a, b)| a - b)
            .collect();
        let dist = pv_norm_4n(&dist_flat, &member.rock, grid)?;
        if dist < 1e-14 {
            continue;
        }

        let out_a = match map.step(&member.rock, x, wells, ctx) {
            Ok(v) => v,
            Err(_) => {
                est.probes_failed += 1;
                continue;
            }
        };
        let out_b = match map.step(&member.rock, &y, wells, ctx) {
            Ok(v) => v,
            Err(_) => {
                est.probes_failed += 1;
                continue;
            }
        };
        let diff: Vec<f64> = out_b
            .to_flat()
            .iter()
            .zip(&out_a.to_flat())
            .map(|(a, b)| a - b)
            .collect();
        let total = pv_norm_4n(&diff, &member.rock, grid)?;
        est.global = est.global.max(total / dist);
        for (slot, comp) in Component::ALL.iter().enumerate() {
            let cn = pv_norm(&diff[slot * n..(slot + 1) * n], &member.rock, grid)?;
            let ratio = cn / dist;
            match comp {
                Component::Pressure => est.pressure = est.pressure.max(ratio),
                Component::Water => est.water = est.water.max(ratio),
                Component::Oil => est.oil = est.oil.max(ratio),
                Component::Gas => est.gas = est.gas.max(ratio),
            }
        }
        est.probes_used += 1;
    }
    Ok(est)
}

/// Per-step open-loop one-step error of a surrogate on true states, averaged
/// and maximised over members, plus the horizon maxima.
#[derive(Debug, Clone)]
pub struct OneStepError {
    pub per_step_mean: Vec<f64>,
    pub per_step_max: Vec<f64>,
    pub eps_mean: f64,
    pub eps_max: f64,
}

pub fn estimate_onestep_error(
    map: &dyn OneStepMap,
    dataset: &Dataset,
    grid: &Grid,
) -> Result<OneStepError> {
    let t_steps = dataset.t_steps();
    if t_steps == 0 {
        return Err(CoreError::Config("dataset has no steps".into()));
    }
    let mut per_step_mean = vec![0.0_f64; t_steps];
    let mut per_step_max = vec![0.0_f64; t_steps];
    for step in 0..t_steps {
        let mut total = 0.0;
        let mut count = 0usize;
        for member in &dataset.members {
            let ctx = StepContext {
                dt: dataset.dt,
                t: step as f64 * dataset.dt,
            };
            let pred = map.step(&member.rock, &member.states[step], &member.controls[step], ctx)?;
            let diff: Vec<f64> = pred
                .to_flat()
                .iter()
                .zip(&member.states[step + 1].to_flat())
                .map(|(a, b)| a - b)
                .collect();
            let e = pv_norm_4n(&diff, &member.rock, grid)?;
            total += e;
            per_step_max[step] = per_step_max[step].max(e);
            count += 1;
        }
        per_step_mean[step] = total / count as f64;
    }
    let eps_mean = per_step_mean.iter().cloned().fold(0.0, f64::max);
    let eps_max = per_step_max.iter().cloned().fold(0.0, f64::max);
    Ok(OneStepError {
        per_step_mean,
        per_step_max,
        eps_mean,
        eps_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackoil::WellControls;
    use crate::grid::RockFields;
    use crate::sim::{gen_dataset, DatasetConfig, Simulator};

    struct IdentityMap;
    impl OneStepMap for IdentityMap {
        fn step(
            &self,
            _rock: &RockFields,
            state: &State,
            _wells: &WellControls,
            _ctx: StepContext,
        ) -> Result<State> {
            Ok(state.clone())
        }
    }

    struct HalfMap;
    impl OneStepMap for HalfMap {
        fn step(
            &self,
            _rock: &RockFields,
            state: &State,
            _wells: &WellControls,
            _ctx: StepContext,
        ) -> Result<State> {
            let flat: Vec<f64> = state.to_flat().iter().map(|v| 0.5 * v).collect();
            State::from_flat(&flat)
        }
    }

    fn tiny_dataset() -> (Simulator, Dataset) {
        let sim = Simulator::new(crate::grid::Grid::new(4, 4, 1, 50.0, 50.0, 20.0).unwrap());
        let mut cfg = DatasetConfig::desk_defaults(&sim.grid, 7);
        cfg.n_members = 2;
        cfg.t_steps = 3;
        let ds = gen_dataset(&sim, &cfg).unwrap();
        (sim, ds)
    }

    #[test]
    fn identity_map_has_unit_lipschitz() {
        let (sim, ds) = tiny_dataset();
        let est = estimate_lipschitz(&IdentityMap, &ds, &sim.grid, 40, None, 3).unwrap();
        assert!((est.global - 1.0).abs() < 1e-9, "L = {}", est.global);
    }

    #[test]
    fn half_map_has_half_lipschitz() {
        let (sim, ds) = tiny_dataset();
        let est = estimate_lipschitz(&HalfMap, &ds, &sim.grid, 40, None, 3).unwrap();
        assert!((est.global - 0.5).abs() < 1e-9, "L = {}", est.global);
    }

    #[test]
    fn lipschitz_estimate_grows_with_probes() {
        let (sim, ds) = tiny_dataset();
        // Nested sampling: the max over a prefix of the same seeded sequence
        // is non-decreasing.
        let sim_map = &sim;
        let few = estimate_lipschitz(sim_map, &ds, &sim.grid, 4, None, 9).unwrap();
        let many = estimate_lipschitz(sim_map, &ds, &sim.grid, 16, None, 9).unwrap();
        assert!(many.global >= few.global - 1e-12);
    }

    #[test]
    fn onestep_error_of_truth_is_solver_tolerance() {
        let (sim, ds) = tiny_dataset();
        let err = estimate_onestep_error(&sim, &ds, &sim.grid).unwrap();
        // The simulator reproduces its own states except for substep or
        // projection rounding.
        assert!(err.eps_max < 1e-6, "eps {}", err.eps_max);
    }

    #[test]
    fn constant_offset_surrogate_error_is_exact() {
        let (sim, ds) = tiny_dataset();
        struct Offset<'a>(&'a Simulator, f64);
        impl OneStepMap for Offset<'_> {
            fn step(
                &self,
                rock: &RockFields,
                state: &State,
                wells: &WellControls,
                ctx: StepContext,
            ) -> Result<State> {
                let mut out = self.0.step(rock, state, wells, ctx)?;
                for v in out.pressure.iter_mut() {
                    *v += self.1;
                }
                Ok(out)
            }
        }
        let eps = 0.5;
        let surrogate = Offset(&sim, eps);
        let err = estimate_onestep_error(&surrogate, &ds, &sim.grid).unwrap();
        // || eps * 1 ||_phi on the pressure block.
        let ones = vec![1.0; sim.grid.n_cells()];
        let expected = eps * pv_norm(&ones, &ds.members[0].rock, &sim.grid).unwrap();
        // Both members share the porosity statistics closely; allow slack for
        // rock differences and the substep rounding.
        assert!(
            (err.per_step_mean[0] - expected).abs() / expected < 0.05,
            "err {} vs expected {expected}",
            err.per_step_mean[0]
        );
        for (a, b) in err.per_step_mean.iter().zip(&err.per_step_max) {
            assert!(err.eps_max >= *a && err.eps_max >= *b - 1e-15);
        }
    }
}
