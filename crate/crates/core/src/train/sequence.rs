//! Autoregressive sequence gradients: full backpropagation through time,
//! its K-step truncations, and the closed-loop rollout.

use super::loss::rel_l2_on_tape;
use crate::autodiff::{Gradients, Tape, Tensor, ValueId};
use crate::blackoil::StepContext;
use crate::error::{CoreError, Result};
use crate::fno::{pack_on_tape, ChannelStats, FnoConfig, FnoParamIds, OperatorParams};
use crate::grid::{Grid, State};
use crate::sim::{Member, OneStepMap};

/// A parametric sequence map with per-step losses, expressed as tape
/// subgraphs. States flow as flat vectors.
pub trait SequenceModel {
    fn params(&self) -> Vec<Tensor>;
    fn set_params(&mut self, params: Vec<Tensor>) -> Result<()>;
    fn state_dim(&self) -> usize;
    fn batch_size(&self) -> usize;
    fn horizon(&self) -> usize;
    fn initial_state(&self, item: usize) -> Result<Vec<f64>>;
    /// Appends one step to the tape: x_hat_{step+1} from x_hat_step.
    fn step_on_tape(
        &self,
        tape: &mut Tape,
        params: &[ValueId],
        state: ValueId,
        item: usize,
        step: usize,
    ) -> Result<ValueId>;
    /// Loss of the prediction made at `step` (i.e. of x_hat_{step+1}).
    fn loss_on_tape(
        &self,
        tape: &mut Tape,
        pred: ValueId,
        item: usize,
        step: usize,
    ) -> Result<ValueId>;
}

/// How truncated backpropagation discards long dependency chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruncationMode {
    /// Detach at block-window boundaries (training-loop semantics): the
    /// loss terms of window r see no gradient through states before rK.
    BlockWindow,
    /// Drop every parameter-to-loss chain spanning K or more steps (the
    /// estimator analysed by the bias-decay theory).
    ChainLength,
}

fn leaf_params(tape: &mut Tape, params: &[Tensor]) -> Vec<ValueId> {
    params.iter().map(|p| tape.leaf(p.clone())).collect()
}

fn collect_grads(
    grads: &mut Gradients,
    param_ids: &[ValueId],
    shapes: &[Tensor],
) -> Vec<Tensor> {
    param_ids
        .iter()
        .zip(shapes)
        .map(|(&id, proto)| {
            grads
                .take(id)
                .unwrap_or_else(|| Tensor::zeros(proto.shape()))
        })
        .collect()
}

fn add_into(acc: &mut [Tensor], add: &[Tensor]) {
    for (a, b) in acc.iter_mut().zip(add) {
        for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
            *x += y;
        }
    }
}

/// Exact gradient of the autoregressive loss
/// (1/(B T)) sum_items sum_n loss_n by one reverse sweep over the whole
/// rollout. Desk-scale horizons only; the guard rejects runaway tapes.
pub fn full_bptt_gradient(model: &dyn SequenceModel) -> Result<(Vec<Tensor>, f64)> {
    let t = model.horizon();
    if t > 64 {
        return Err(CoreError::Config(format!(
            "full BPTT horizon {t} exceeds the desk-scale guard (64); use TBPTT"
        )));
    }
    let protos = model.params();
    let mut total_grad: Vec<Tensor> = protos.iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut total_loss = 0.0;
    let scale = 1.0 / (model.batch_size() as f64 * t as f64);
    for item in 0..model.batch_size() {
        let mut tape = Tape::new();
        let param_ids = leaf_params(&mut tape, &protos);
        let mut state = tape.leaf(Tensor::from_vec(model.initial_state(item)?));
        let mut loss_acc: Option<ValueId> = None;
        for step in 0..t {
            state = model.step_on_tape(&mut tape, &param_ids, state, item, step)?;
            let l = model.loss_on_tape(&mut tape, state, item, step)?;
            loss_acc = Some(match loss_acc {
                None => l,
                Some(acc) => tape.add(acc, l)?,
            });
        }
        let loss = tape.scale(loss_acc.expect("t >= 1"), scale)?;
        total_loss += tape.value(loss).item()?;
        let mut grads = tape.backward(loss)?;
        let g = collect_grads(&mut grads, &param_ids, &protos);
        add_into(&mut total_grad, &g);
    }
    Ok((total_grad, total_loss))
}

/// K-step truncated gradient of the same normalized loss. `BlockWindow`
/// detaches the carried state at window boundaries; `ChainLength` rebuilds
/// each loss term from a detached state K steps earlier.
pub fn tbptt_gradient(
    model: &dyn SequenceModel,
    k: usize,
    mode: TruncationMode,
) -> Result<(Vec<Tensor>, f64)> {
    let t = model.horizon();
    if k == 0 || k > t {
        return Err(CoreError::Config(format!(
            "window K = {k} must satisfy 1 <= K <= T = {t}"
        )));
    }
    let protos = model.params();
    let mut total_grad: Vec<Tensor> = protos.iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut total_loss = 0.0;
    let scale = 1.0 / (model.batch_size() as f64 * t as f64);

    match mode {
        TruncationMode::BlockWindow => {
            for item in 0..model.batch_size() {
                let mut carried = model.initial_state(item)?;
                let mut step = 0;
                while step < t {
                    let win_end = (step + k).min(t);
                    let mut tape = Tape::new();
                    let param_ids = leaf_params(&mut tape, &protos);
                    // Detach: the carried state enters as a constant.
                    let mut state = tape.leaf(Tensor::from_vec(carried.clone()));
                    let mut loss_acc: Option<ValueId> = None;
                    for s in step..win_end {
                        state = model.step_on_tape(&mut tape, &param_ids, state, item, s)?;
                        let l = model.loss_on_tape(&mut tape, state, item, s)?;
                        loss_acc = Some(match loss_acc {
                            None => l,
                            Some(acc) => tape.add(acc, l)?,
                        });
                    }
                    let loss = tape.scale(loss_acc.expect("non-empty window"), scale)?;
                    total_loss += tape.value(loss).item()?;
                    carried = tape.value(state).data().to_vec();
                    let mut grads = tape.backward(loss)?;
                    let g = collect_grads(&mut grads, &param_ids, &protos);
                    add_into(&mut total_grad, &g);
                    step = win_end;
                }
            }
        }
        TruncationMode::ChainLength => {
            for item in 0..model.batch_size() {
                // Reference rollout for the detached window starts.
                let mut reference: Vec<Vec<f64>> = vec![model.initial_state(item)?];
                {
                    let mut tape = Tape::new();
                    let param_ids = leaf_params(&mut tape, &protos);
                    let mut state = tape.leaf(Tensor::from_vec(reference[0].clone()));
                    for step in 0..t {
                        state = model.step_on_tape(&mut tape, &param_ids, state, item, step)?;
                        reference.push(tape.value(state).data().to_vec());
                    }
                }
                // Each loss term backpropagates through at most K steps.
                for n in 0..t {
                    let start = (n + 1).saturating_sub(k);
                    let mut tape = Tape::new();
                    let param_ids = leaf_params(&mut tape, &protos);
                    let mut state = tape.leaf(Tensor::from_vec(reference[start].clone()));
                    for s in start..=n {
                        state = model.step_on_tape(&mut tape, &param_ids, state, item, s)?;
                    }
                    let l = model.loss_on_tape(&mut tape, state, item, n)?;
                    let loss = tape.scale(l, scale)?;
                    total_loss += tape.value(loss).item()?;
                    let mut grads = tape.backward(loss)?;
                    let g = collect_grads(&mut grads, &param_ids, &protos);
                    add_into(&mut total_grad, &g);
                }
            }
        }
    }
    Ok((total_grad, total_loss))
}

/// Closed-loop rollout of a one-step map: x_hat_0 = x0, then feed
/// predictions back. Returns T+1 states.
pub fn rollout_ar(
    map: &dyn OneStepMap,
    rock: &crate::grid::RockFields,
    x0: &State,
    controls: &[crate::blackoil::WellControls],
    dt: f64,
) -> Result<Vec<State>> {
    if controls.is_empty() {
        return Err(CoreError::Config("rollout needs T >= 1".into()));
    }
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(x0.clone());
    for (step, wells) in controls.iter().enumerate() {
        let ctx = StepContext {
            dt,
            t: step as f64 * dt,
        };
        let next = map
            .step(rock, states.last().unwrap(), wells, ctx)
            .map_err(|e| CoreError::at_step(step, e))?;
        if next.pressure.iter().any(|v| v.is_nan()) {
            return Err(CoreError::at_step(
                step,
                CoreError::Numerical("NaN state in rollout".into()),
            ));
        }
        states.push(next);
    }
    Ok(states)
}

/// The neural operator bound to a training batch as a [`SequenceModel`].
/// States flow flat in the [p | Sw | So | Sg] layout; the supervised loss is
/// the component-weighted relative l2 against the members' simulator states.
pub struct FnoSequenceModel<'a> {
    pub config: FnoConfig,
    pub params: OperatorParams,
    pub stats: ChannelStats,
    pub grid: Grid,
    pub members: &'a [Member],
    pub dt: f64,
    pub horizon: usize,
    pub component_weights: [f64; 4],
}

impl<'a> FnoSequenceModel<'a> {
    pub fn new(
        config: FnoConfig,
        params: OperatorParams,
        stats: ChannelStats,
        grid: Grid,
        members: &'a [Member],
        dt: f64,
        horizon: usize,
        component_weights: [f64; 4],
    ) -> Result<Self> {
        if members.is_empty() {
            return Err(CoreError::Config("empty training batch".into()));
        }
        for m in members {
            if m.controls.len() < horizon {
                return Err(CoreError::Config(format!(
                    "member horizon {} shorter than requested {horizon}",
                    m.controls.len()
                )));
            }
        }
        Ok(Self {
            config,
            params,
            stats,
            grid,
            members,
            dt,
            horizon,
            component_weights,
        })
    }

    fn grid_shape(&self) -> Vec<usize> {
        vec![self.grid.nx, self.grid.ny, self.grid.nz]
    }
}

impl SequenceModel for FnoSequenceModel<'_> {
    fn params(&self) -> Vec<Tensor> {
        self.params.to_tensors()
    }

    fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        self.params = OperatorParams::from_tensors(&self.config, params)?;
        Ok(())
    }

    fn state_dim(&self) -> usize {
        4 * self.grid.n_cells()
    }

    fn batch_size(&self) -> usize {
        self.members.len()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn initial_state(&self, item: usize) -> Result<Vec<f64>> {
        Ok(self.members[item].states[0].to_flat())
    }

    fn step_on_tape(
        &self,
        tape: &mut Tape,
        params: &[ValueId],
        state: ValueId,
        item: usize,
        step: usize,
    ) -> Result<ValueId> {
        let n = self.grid.n_cells();
        let member = &self.members[item];
        let gshape = self.grid_shape();
        // Split the flat state into grid-shaped channels.
        let p = tape.slice_channels(state, 0, n)?;
        let p = tape.reshape(p, gshape.clone())?;
        let sw = tape.slice_channels(state, n, 2 * n)?;
        let sw = tape.reshape(sw, gshape.clone())?;
        let so = tape.slice_channels(state, 2 * n, 3 * n)?;
        let so = tape.reshape(so, gshape.clone())?;
        let sg = tape.slice_channels(state, 3 * n, 4 * n)?;
        let sg = tape.reshape(sg, gshape)?;
        let ids = crate::fno::PackStateIds { p, sw, so, sg };
        let ctx = StepContext {
            dt: self.dt,
            t: step as f64 * self.dt,
        };
        let bundle = pack_on_tape(
            tape,
            &member.rock,
            ids,
            &member.controls[step],
            ctx,
            &self.grid,
            &self.stats,
        )?;
        let fno_ids = param_ids_from_flat(params, self.config.n_layers);
        let (pid, sid) = crate::fno::forward_on_tape(tape, &self.config, &self.grid, &fno_ids, bundle)?;
        // Back to the flat layout.
        let p_flat = tape.reshape(pid, vec![n])?;
        let s_flat = tape.reshape(sid, vec![3 * n])?;
        tape.concat_channels(&[p_flat, s_flat])
    }

    fn loss_on_tape(
        &self,
        tape: &mut Tape,
        pred: ValueId,
        item: usize,
        step: usize,
    ) -> Result<ValueId> {
        let n = self.grid.n_cells();
        let member = &self.members[item];
        let target = &member.states[step + 1];
        let gshape = self.grid_shape();
        let mut total: Option<ValueId> = None;
        let targets: [(&[f64], f64); 4] = [
            (&target.pressure, self.component_weights[0]),
            (&target.sw, self.component_weights[1]),
            (&target.so, self.component_weights[2]),
            (&target.sg, self.component_weights[3]),
        ];
        for (slot, (t_data, w)) in targets.into_iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let comp = tape.slice_channels(pred, slot * n, (slot + 1) * n)?;
            let comp = tape.reshape(comp, gshape.clone())?;
            let l = rel_l2_on_tape(tape, comp, t_data, &member.rock, &self.grid)?;
            let l = tape.scale(l, w)?;
            total = Some(match total {
                None => l,
                Some(acc) => tape.add(acc, l)?,
            });
        }
        total.ok_or_else(|| CoreError::Config("all component weights are zero".into()))
    }
}

pub(crate) fn param_ids_from_flat(flat: &[ValueId], n_layers: usize) -> FnoParamIds {
    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        layers.push((flat[1 + 2 * l], flat[2 + 2 * l]));
    }
    FnoParamIds {
        lifting: flat[0],
        layers,
        head_pressure: flat[flat.len() - 2],
        head_saturation: flat[flat.len() - 1],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::fd::rel_err;
    use crate::train::ScalarLinearModel;

    fn fixture() -> ScalarLinearModel {
        ScalarLinearModel::new(
            0.8,
            0.3,
            1.0,
            vec![1.0, 0.6, 0.9, 0.2, 0.5, 0.7, 0.4, 0.8],
        )
    }

    #[test]
    fn full_bptt_matches_closed_form() {
        let m = fixture();
        let (g, _) = full_bptt_gradient(&m).unwrap();
        let exact = m.exact_gradient();
        assert!(
            (g[0].data()[0] - exact).abs() < 1e-12 * exact.abs().max(1.0),
            "{} vs {exact}",
            g[0].data()[0]
        );
    }

    #[test]
    fn tbptt_equals_full_at_k_equals_t() {
        let m = fixture();
        let (full, _) = full_bptt_gradient(&m).unwrap();
        for mode in [TruncationMode::BlockWindow, TruncationMode::ChainLength] {
            let (g, _) = tbptt_gradient(&m, m.horizon(), mode).unwrap();
            let err = rel_err(g[0].data(), full[0].data());
            assert!(err < 1e-10, "{mode:?}: rel err {err}");
        }
    }

    #[test]
    fn chain_length_bias_decays_monotonically_for_contraction() {
        let m = ScalarLinearModel::new(0.5, 0.2, 1.0, vec![0.7; 12]);
        let (full, _) = full_bptt_gradient(&m).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..=12 {
            let (g, _) = tbptt_gradient(&m, k, TruncationMode::ChainLength).unwrap();
            let bias = (g[0].data()[0] - full[0].data()[0]).abs();
            assert!(bias <= last + 1e-15, "bias not decreasing at K = {k}");
            last = bias;
        }
    }

    #[test]
    fn expansive_system_bias_does_not_decay_geometrically() {
        // |a| > 1: long chains dominate, truncation stays badly biased.
        let m = ScalarLinearModel::new(1.3, 0.1, 1.0, vec![0.0; 10]).final_step_loss();
        let (full, _) = full_bptt_gradient(&m).unwrap();
        let (g1, _) = tbptt_gradient(&m, 1, TruncationMode::ChainLength).unwrap();
        let (g5, _) = tbptt_gradient(&m, 5, TruncationMode::ChainLength).unwrap();
        let b1 = (g1[0].data()[0] - full[0].data()[0]).abs();
        let b5 = (g5[0].data()[0] - full[0].data()[0]).abs();
        // Informational: the K = 5 bias is still a large fraction of K = 1.
        assert!(b5 > 0.2 * b1, "b1 = {b1}, b5 = {b5}");
    }

    #[test]
    fn scalar_k1_block_window_is_teacher_forced_on_predictions() {
        // K = 1 with frozen-state substitution: the gradient of each step's
        // loss sees only that step's parameter use.
        let m = fixture();
        let (g, _) = tbptt_gradient(&m, 1, TruncationMode::BlockWindow).unwrap();
        // Hand value: sum_n w 2 (x_{n+1} - y_{n+1}) * 1 / T (sensitivity of
        // one step wrt theta is 1).
        let xs = m.rollout();
        let t = m.horizon();
        let mut expect = 0.0;
        for n in 0..t {
            expect += 2.0 * (xs[n + 1] - m.targets[n]);
        }
        expect /= t as f64;
        assert!((g[0].data()[0] - expect).abs() < 1e-12);
    }
}
