//! The two training loops: teacher-forced one-step and autoregressive
//! K-step TBPTT, both with the optional physics penalty.

use super::loss::{pino_penalty_on_tape, rel_l2_on_tape, PenaltyWeights};
use super::sequence::param_ids_from_flat;
use super::{PhysicsAnchor, StepMode, TrainConfig};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape, Tensor, ValueId};
use crate::blackoil::tape::StateIds;
use crate::blackoil::{ResidualInputs, StepContext};
use crate::error::{CoreError, Result};
use crate::fno::{
    forward_on_tape, pack_on_tape, ChannelStats, FnoConfig, FnoSurrogate, OperatorParams,
    PackStateIds,
};
use crate::grid::Grid;
use crate::sim::{Dataset, Member, Simulator};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub supervised: f64,
    /// Mean physics penalty (unweighted by lambda_R); 0 when disabled.
    pub physics: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LossReport {
    pub epochs: Vec<EpochStats>,
}

impl LossReport {
    pub fn final_supervised(&self) -> f64 {
        self.epochs.last().map(|e| e.supervised).unwrap_or(f64::NAN)
    }
}

fn grid_shape(grid: &Grid) -> Vec<usize> {
    vec![grid.nx, grid.ny, grid.nz]
}

fn leaf_state_channels(
    tape: &mut Tape,
    state: &crate::grid::State,
    grid: &Grid,
) -> Result<PackStateIds> {
    let gs = grid_shape(grid);
    Ok(PackStateIds {
        p: tape.leaf(Tensor::new(gs.clone(), state.pressure.clone())?),
        sw: tape.leaf(Tensor::new(gs.clone(), state.sw.clone())?),
        so: tape.leaf(Tensor::new(gs.clone(), state.so.clone())?),
        sg: tape.leaf(Tensor::new(gs, state.sg.clone())?),
    })
}

struct SampleGrad {
    grads: Vec<Tensor>,
    supervised: f64,
    physics: f64,
}

/// Supervised + physics loss for one (member, step) pair at fixed inputs
/// (teacher forcing); gradient over all parameters.
#[allow(clippy::too_many_arguments)]
fn one_step_sample_grad(
    fno_cfg: &FnoConfig,
    cfg: &TrainConfig,
    grid: &Grid,
    stats: &ChannelStats,
    params: &OperatorParams,
    sim: &Simulator,
    member: &Member,
    step: usize,
    dt: f64,
    with_physics: bool,
) -> Result<SampleGrad> {
    let mut tape = Tape::new();
    let ctx = StepContext {
        dt,
        t: step as f64 * dt,
    };
    let state_ids = leaf_state_channels(&mut tape, &member.states[step], grid)?;
    let bundle = pack_on_tape(
        &mut tape,
        &member.rock,
        state_ids,
        &member.controls[step],
        ctx,
        grid,
        stats,
    )?;
    let tensors = params.to_tensors();
    let param_ids: Vec<ValueId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
    let fno_ids = param_ids_from_flat(&param_ids, fno_cfg.n_layers);
    let (p, s) = forward_on_tape(&mut tape, fno_cfg, grid, &fno_ids, bundle)?;

    let target = &member.states[step + 1];
    let n = grid.n_cells();
    let gs = grid_shape(grid);
    let mut loss = {
        let l = rel_l2_on_tape(&mut tape, p, &target.pressure, &member.rock, grid)?;
        tape.scale(l, cfg.component_weights[0])?
    };
    let comps: [(usize, &[f64], f64); 3] = [
        (0, &target.sw, cfg.component_weights[1]),
        (1, &target.so, cfg.component_weights[2]),
        (2, &target.sg, cfg.component_weights[3]),
    ];
    for (slot, data, w) in comps {
        let c = tape.slice_channels(s, slot, slot + 1)?;
        let c = tape.reshape(c, gs.clone())?;
        let l = rel_l2_on_tape(&mut tape, c, data, &member.rock, grid)?;
        let l = tape.scale(l, w)?;
        loss = tape.add(loss, l)?;
    }
    let supervised = tape.value(loss).item()?;

    let mut physics = 0.0;
    if with_physics && cfg.lambda_r > 0.0 {
        let p_grid = tape.reshape(p, gs.clone())?;
        let sw = tape.slice_channels(s, 0, 1)?;
        let sw = tape.reshape(sw, gs.clone())?;
        let so = tape.slice_channels(s, 1, 2)?;
        let so = tape.reshape(so, gs.clone())?;
        let sg = tape.slice_channels(s, 2, 3)?;
        let sg = tape.reshape(sg, gs.clone())?;
        let x_plus = StateIds {
            p: p_grid,
            sw,
            so,
            sg,
        };
        // One-step training has no closed-loop state: anchor on the truth.
        let anchor = {
            let ids = leaf_state_channels(&mut tape, &member.states[step], grid)?;
            StateIds {
                p: ids.p,
                sw: ids.sw,
                so: ids.so,
                sg: ids.sg,
            }
        };
        let inputs = ResidualInputs {
            grid,
            rock: &member.rock,
            fluid: &sim.fluid,
            relperm: &sim.relperm,
            capillary: &sim.capillary,
            wells: &member.controls[step],
            ctx,
        };
        let pen = pino_penalty_on_tape(
            &mut tape,
            x_plus,
            anchor,
            &inputs,
            PenaltyWeights {
                lambda_p: cfg.physics_weights[0],
                lambda_s: cfg.physics_weights[1],
                lambda_g: cfg.physics_weights[2],
            },
        )?;
        physics = tape.value(pen).item()?;
        let pen_scaled = tape.scale(pen, cfg.lambda_r)?;
        loss = tape.add(loss, pen_scaled)?;
        let _ = n;
    }

    let mut grads = tape.backward(loss)?;
    let g = param_ids
        .iter()
        .zip(&tensors)
        .map(|(&id, t)| {
            grads
                .take(id)
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();
    Ok(SampleGrad {
        grads: g,
        supervised,
        physics,
    })
}

fn mean_grads(mut per_sample: Vec<Vec<Tensor>>) -> Vec<Tensor> {
    let count = per_sample.len() as f64;
    let mut acc = per_sample.remove(0);
    for g in &per_sample {
        for (a, b) in acc.iter_mut().zip(g) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }
    for a in acc.iter_mut() {
        for x in a.data_mut() {
            *x /= count;
        }
    }
    acc
}

/// Teacher-forced one-step training: every input uses the true simulator
/// state. Deterministic per seed.
pub fn train_one_step(
    fno_cfg: &FnoConfig,
    cfg: &TrainConfig,
    sim: &Simulator,
    dataset: &Dataset,
    initial: Option<(OperatorParams, ChannelStats)>,
) -> Result<(FnoSurrogate, LossReport)> {
    let grid = &sim.grid;
    let t_steps = dataset.t_steps();
    cfg.validate(t_steps.max(1))?;
    let (mut params, stats) = match initial {
        Some((p, s)) => (p, s),
        None => {
            let stats = ChannelStats::from_dataset(dataset, grid)?;
            (
                OperatorParams::init(fno_cfg, grid, &stats, cfg.seed)?,
                stats,
            )
        }
    };
    let mut adam = AdamState::new(&params.to_tensors());
    let adam_cfg = AdamConfig {
        lr: cfg.learning_rate,
        sqrt_t_schedule: cfg.sqrt_t_schedule,
        ..AdamConfig::default()
    };

    let mut pairs: Vec<(usize, usize)> = (0..dataset.n_members())
        .flat_map(|m| (0..t_steps).map(move |s| (m, s)))
        .collect();
    let mut report = LossReport::default();
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37));
        pairs.shuffle(&mut rng);
        let with_physics = cfg.lambda_r > 0.0 && epoch % cfg.pino_freq == 0;

        let mut sup_sum = 0.0;
        let mut phys_sum = 0.0;
        let mut count = 0usize;
        for chunk in pairs.chunks(cfg.batch_size.max(1)) {
            let samples: Vec<Result<SampleGrad>> = chunk
                .par_iter()
                .map(|&(m, s)| {
                    one_step_sample_grad(
                        fno_cfg,
                        cfg,
                        grid,
                        &stats,
                        &params,
                        sim,
                        &dataset.members[m],
                        s,
                        dataset.dt,
                        with_physics,
                    )
                })
                .collect();
            let mut grads = Vec::with_capacity(samples.len());
            for s in samples {
                let s = s?;
                if s.supervised.is_nan() {
                    return Err(CoreError::Numerical(format!(
                        "loss diverged to NaN at epoch {epoch}"
                    )));
                }
                sup_sum += s.supervised;
                phys_sum += s.physics;
                count += 1;
                grads.push(s.grads);
            }
            let mean = mean_grads(grads);
            let mut tensors = params.to_tensors();
            adam_step(&mut tensors, &mean, &mut adam, &adam_cfg)?;
            params = OperatorParams::from_tensors(fno_cfg, tensors)?;
        }
        report.epochs.push(EpochStats {
            epoch,
            supervised: sup_sum / count as f64,
            physics: phys_sum / count.max(1) as f64,
            wall_secs: started.elapsed().as_secs_f64(),
        });
    }
    let surrogate = FnoSurrogate::new(fno_cfg.clone(), params, stats, *grid)?;
    Ok((surrogate, report))
}

struct WindowGrad {
    grads: Vec<Tensor>,
    carried: Vec<crate::grid::State>,
    supervised: f64,
    physics: f64,
}

/// One member's window: autoregressive forward from the carried (detached)
/// state, window loss normalized by the full horizon, one backward pass.
#[allow(clippy::too_many_arguments)]
fn window_grad(
    fno_cfg: &FnoConfig,
    cfg: &TrainConfig,
    grid: &Grid,
    stats: &ChannelStats,
    params: &OperatorParams,
    sim: &Simulator,
    member: &Member,
    carried: &crate::grid::State,
    window: std::ops::Range<usize>,
    dt: f64,
    with_physics: bool,
) -> Result<WindowGrad> {
    let mut tape = Tape::new();
    let tensors = params.to_tensors();
    let param_ids: Vec<ValueId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
    let fno_ids = param_ids_from_flat(&param_ids, fno_cfg.n_layers);
    let gs = grid_shape(grid);
    let t_total = member.controls.len() as f64;

    let mut state_ids = leaf_state_channels(&mut tape, carried, grid)?;
    let mut loss_acc: Option<ValueId> = None;
    let mut supervised = 0.0;
    let mut physics = 0.0;
    for step in window.clone() {
        let ctx = StepContext {
            dt,
            t: step as f64 * dt,
        };
        let bundle = pack_on_tape(
            &mut tape,
            &member.rock,
            state_ids,
            &member.controls[step],
            ctx,
            grid,
            stats,
        )?;
        let (p, s) = forward_on_tape(&mut tape, fno_cfg, grid, &fno_ids, bundle)?;
        let sw = tape.slice_channels(s, 0, 1)?;
        let sw = tape.reshape(sw, gs.clone())?;
        let so = tape.slice_channels(s, 1, 2)?;
        let so = tape.reshape(so, gs.clone())?;
        let sg = tape.slice_channels(s, 2, 3)?;
        let sg = tape.reshape(sg, gs.clone())?;
        let p_grid = tape.reshape(p, gs.clone())?;

        // Supervised loss of this step.
        let target = &member.states[step + 1];
        let mut l = {
            let lp = rel_l2_on_tape(&mut tape, p_grid, &target.pressure, &member.rock, grid)?;
            tape.scale(lp, cfg.component_weights[0])?
        };
        for (id, data, w) in [
            (sw, &target.sw, cfg.component_weights[1]),
            (so, &target.so, cfg.component_weights[2]),
            (sg, &target.sg, cfg.component_weights[3]),
        ] {
            let lc = rel_l2_on_tape(&mut tape, id, data, &member.rock, grid)?;
            let lc = tape.scale(lc, w)?;
            l = tape.add(l, lc)?;
        }
        supervised += tape.value(l).item()?;

        if with_physics && cfg.lambda_r > 0.0 {
            let anchor = match cfg.physics_anchor {
                PhysicsAnchor::ClosedLoop => StateIds {
                    p: state_ids.p,
                    sw: state_ids.sw,
                    so: state_ids.so,
                    sg: state_ids.sg,
                },
                PhysicsAnchor::TeacherForced => {
                    let ids = leaf_state_channels(&mut tape, &member.states[step], grid)?;
                    StateIds {
                        p: ids.p,
                        sw: ids.sw,
                        so: ids.so,
                        sg: ids.sg,
                    }
                }
            };
            let inputs = ResidualInputs {
                grid,
                rock: &member.rock,
                fluid: &sim.fluid,
                relperm: &sim.relperm,
                capillary: &sim.capillary,
                wells: &member.controls[step],
                ctx,
            };
            let x_plus = StateIds {
                p: p_grid,
                sw,
                so,
                sg,
            };
            let pen = pino_penalty_on_tape(
                &mut tape,
                x_plus,
                anchor,
                &inputs,
                PenaltyWeights {
                    lambda_p: cfg.physics_weights[0],
                    lambda_s: cfg.physics_weights[1],
                    lambda_g: cfg.physics_weights[2],
                },
            )?;
            physics += tape.value(pen).item()?;
            let pen_scaled = tape.scale(pen, cfg.lambda_r)?;
            l = tape.add(l, pen_scaled)?;
        }

        loss_acc = Some(match loss_acc {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
        // Feed the prediction back as the next initial condition.
        state_ids = PackStateIds {
            p: p_grid,
            sw,
            so,
            sg,
        };
    }

    // Divide by the full horizon, as the training-step listing does.
    let loss = tape.scale(loss_acc.expect("non-empty window"), 1.0 / t_total)?;
    if tape.value(loss).item()?.is_nan() {
        return Err(CoreError::Numerical("window loss is NaN".into()));
    }
    let mut grads = tape.backward(loss)?;
    let g: Vec<Tensor> = param_ids
        .iter()
        .zip(&tensors)
        .map(|(&id, t)| grads.take(id).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    // Detach the carried state for the next window.
    let carried_next = crate::grid::State::new(
        tape.value(state_ids.p).data().to_vec(),
        tape.value(state_ids.sw).data().to_vec(),
        tape.value(state_ids.so).data().to_vec(),
        tape.value(state_ids.sg).data().to_vec(),
    )?;
    Ok(WindowGrad {
        grads: g,
        carried: vec![carried_next],
        supervised,
        physics,
    })
}

/// Autoregressive training with K-step TBPTT: predicted states feed back as
/// inputs, gradients stop at window boundaries, and the optimizer steps per
/// window (or accumulates, per config).
pub fn train_ar_tbptt(
    fno_cfg: &FnoConfig,
    cfg: &TrainConfig,
    sim: &Simulator,
    dataset: &Dataset,
    initial: Option<(OperatorParams, ChannelStats)>,
) -> Result<(FnoSurrogate, LossReport)> {
    let grid = &sim.grid;
    let t_steps = dataset.t_steps();
    cfg.validate(t_steps)?;
    let (mut params, stats) = match initial {
        Some((p, s)) => (p, s),
        None => {
            let stats = ChannelStats::from_dataset(dataset, grid)?;
            (
                OperatorParams::init(fno_cfg, grid, &stats, cfg.seed)?,
                stats,
            )
        }
    };
    let mut adam = AdamState::new(&params.to_tensors());
    let adam_cfg = AdamConfig {
        lr: cfg.learning_rate,
        sqrt_t_schedule: cfg.sqrt_t_schedule,
        ..AdamConfig::default()
    };
    let k = cfg.k_window;

    let mut report = LossReport::default();
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let with_physics = cfg.lambda_r > 0.0 && epoch % cfg.pino_freq == 0;
        let mut sup_sum = 0.0;
        let mut phys_sum = 0.0;

        let mut carried: Vec<crate::grid::State> = dataset
            .members
            .iter()
            .map(|m| m.states[0].clone())
            .collect();
        let mut accumulated: Option<Vec<Tensor>> = None;
        let mut windows = 0usize;
        let mut start = 0;
        while start < t_steps {
            let end = (start + k).min(t_steps);
            let results: Vec<Result<WindowGrad>> = dataset
                .members
                .par_iter()
                .zip(carried.par_iter())
                .map(|(member, c)| {
                    window_grad(
                        fno_cfg,
                        cfg,
                        grid,
                        &stats,
                        &params,
                        sim,
                        member,
                        c,
                        start..end,
                        dataset.dt,
                        with_physics,
                    )
                })
                .collect();
            let mut grads = Vec::with_capacity(results.len());
            for (idx, r) in results.into_iter().enumerate() {
                let mut r = r.map_err(|e| {
                    CoreError::Numerical(format!("epoch {epoch}, window at {start}: {e}"))
                })?;
                sup_sum += r.supervised;
                phys_sum += r.physics;
                carried[idx] = r.carried.pop().expect("one carried state");
                grads.push(r.grads);
            }
            let mean = mean_grads(grads);
            match cfg.step_mode {
                StepMode::PerWindow => {
                    let mut tensors = params.to_tensors();
                    adam_step(&mut tensors, &mean, &mut adam, &adam_cfg)?;
                    params = OperatorParams::from_tensors(fno_cfg, tensors)?;
                }
                StepMode::Accumulate => match &mut accumulated {
                    None => accumulated = Some(mean),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&mean) {
                            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                                *x += y;
                            }
                        }
                    }
                },
            }
            windows += 1;
            start = end;
        }
        if let Some(acc) = accumulated {
            let mut tensors = params.to_tensors();
            adam_step(&mut tensors, &acc, &mut adam, &adam_cfg)?;
            params = OperatorParams::from_tensors(fno_cfg, tensors)?;
        }

        let denom = (dataset.n_members() * t_steps) as f64;
        report.epochs.push(EpochStats {
            epoch,
            supervised: sup_sum / denom,
            physics: phys_sum / denom,
            wall_secs: started.elapsed().as_secs_f64(),
        });
        let _ = windows;
    }
    let surrogate = FnoSurrogate::new(fno_cfg.clone(), params, stats, *grid)?;
    Ok((surrogate, report))
}
