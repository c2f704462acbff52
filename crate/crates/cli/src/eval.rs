//! Shared evaluation helpers: held-out ensembles, rollouts, and the
//! empirical constants the bound checks consume.

use crate::config::ExperimentConfig;
use anyhow::{anyhow, Result};
use bolab_core::blackoil::StepContext;
use bolab_core::fno::FnoSurrogate;
use bolab_core::grid::{pv_norm_4n, EnsembleTrajectory, Grid, State};
use bolab_core::sim::{estimate_lipschitz, gen_dataset, Dataset, Simulator};
use bolab_core::train::rollout_ar;
use bolab_core::verify::{operator_norm, phi_weights, SurrogateJacobian};

/// Salt for the held-out evaluation stream, distinct from training data.
pub const EVAL_SALT: u64 = 0xE7A1_0000;

pub fn eval_dataset(cfg: &ExperimentConfig, sim: &Simulator) -> Result<Dataset> {
    let dcfg = cfg.dataset_config(cfg.eval_members, cfg.seed ^ EVAL_SALT);
    gen_dataset(sim, &dcfg).map_err(|e| anyhow!("generating evaluation ensemble: {e}"))
}

/// Closed-loop rollouts of the surrogate over every member of a dataset.
pub fn rollout_all(surrogate: &FnoSurrogate, dataset: &Dataset) -> Result<Vec<Vec<State>>> {
    let mut out = Vec::with_capacity(dataset.members.len());
    for member in &dataset.members {
        let traj = rollout_ar(
            surrogate,
            &member.rock,
            &member.states[0],
            &member.controls,
            dataset.dt,
        )
        .map_err(|e| anyhow!("rollout failed: {e}"))?;
        out.push(traj);
    }
    Ok(out)
}

pub fn predicted_ensemble(predicted: &[Vec<State>]) -> Result<EnsembleTrajectory> {
    EnsembleTrajectory::new(predicted.to_vec()).map_err(|e| anyhow!("{e}"))
}

/// Per-step max over members of the pv-distance between predicted and true
/// trajectories (delta_0 = 0 included).
pub fn delta_max_per_step(
    predicted: &[Vec<State>],
    dataset: &Dataset,
    grid: &Grid,
) -> Result<Vec<f64>> {
    let steps = dataset.t_steps() + 1;
    let mut out = vec![0.0_f64; steps];
    for (traj, member) in predicted.iter().zip(&dataset.members) {
        for step in 0..steps {
            let diff: Vec<f64> = traj[step]
                .to_flat()
                .iter()
                .zip(&member.states[step].to_flat())
                .map(|(a, b)| a - b)
                .collect();
            let d = pv_norm_4n(&diff, &member.rock, grid).map_err(|e| anyhow!("{e}"))?;
            out[step] = out[step].max(d);
        }
    }
    Ok(out)
}

/// Lipschitz estimate combining random probes with the actual coupled pairs
/// (predicted vs true states), so the rollout recursion is evaluated with a
/// constant measured where it is used.
pub fn measure_l_hat(
    surrogate: &FnoSurrogate,
    dataset: &Dataset,
    predicted: &[Vec<State>],
    grid: &Grid,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    let probe_est = estimate_lipschitz(surrogate, dataset, grid, probes, None, seed)
        .map_err(|e| anyhow!("{e}"))?;
    let mut l = probe_est.global;
    for (traj, member) in predicted.iter().zip(&dataset.members) {
        for step in 0..dataset.t_steps() {
            let x_hat = &traj[step];
            let x = &member.states[step];
            let din: Vec<f64> = x_hat
                .to_flat()
                .iter()
                .zip(&x.to_flat())
                .map(|(a, b)| a - b)
                .collect();
            let din = pv_norm_4n(&din, &member.rock, grid).map_err(|e| anyhow!("{e}"))?;
            if din < 1e-13 {
                continue;
            }
            let ctx = StepContext {
                dt: dataset.dt,
                t: step as f64 * dataset.dt,
            };
            let g_hat = surrogate
                .eval(&member.rock, x_hat, &member.controls[step], ctx)
                .map_err(|e| anyhow!("{e}"))?;
            let g = surrogate
                .eval(&member.rock, x, &member.controls[step], ctx)
                .map_err(|e| anyhow!("{e}"))?;
            let dout: Vec<f64> = g_hat
                .to_flat()
                .iter()
                .zip(&g.to_flat())
                .map(|(a, b)| a - b)
                .collect();
            let dout = pv_norm_4n(&dout, &member.rock, grid).map_err(|e| anyhow!("{e}"))?;
            l = l.max(dout / din);
        }
    }
    Ok(l)
}

/// Mean and sup of the surrogate Jacobian's phi-operator norm over sampled
/// rollout states.
pub fn rho_hat(
    surrogate: &FnoSurrogate,
    dataset: &Dataset,
    predicted: &[Vec<State>],
    grid: &Grid,
    iters: usize,
    max_samples: usize,
) -> Result<(f64, f64)> {
    let mut values = Vec::new();
    let stride = (dataset.t_steps() * predicted.len() / max_samples.max(1)).max(1);
    let mut counter = 0usize;
    for (traj, member) in predicted.iter().zip(&dataset.members) {
        let w = phi_weights(&member.rock, grid);
        for step in 0..dataset.t_steps() {
            counter += 1;
            if (counter - 1) % stride != 0 {
                continue;
            }
            let ctx = StepContext {
                dt: dataset.dt,
                t: step as f64 * dataset.dt,
            };
            let jac = SurrogateJacobian::new(
                surrogate,
                &member.rock,
                &traj[step],
                &member.controls[step],
                ctx,
            );
            let est = operator_norm(&jac, Some(&w), iters, 1234 + counter as u64)
                .map_err(|e| anyhow!("{e}"))?;
            values.push(est.value);
        }
    }
    if values.is_empty() {
        return Err(anyhow!("no states sampled for the contractivity estimate"));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let sup = values.iter().cloned().fold(0.0_f64, f64::max);
    Ok((mean, sup))
}
