//! Operator forward pass and the trained-surrogate wrapper.

use super::pack::{pack_on_tape, PackStateIds};
use super::{ChannelStats, FnoConfig, OperatorParams, INPUT_CHANNELS};
use crate::autodiff::{Tape, Tensor, ValueId};
use crate::blackoil::{StepContext, WellControls};
use crate::error::{CoreError, Result};
use crate::grid::{Grid, RockFields, State};
use crate::sim::OneStepMap;

/// Tape handles of the operator parameters, in [`OperatorParams`] order.
#[derive(Debug, Clone)]
pub struct FnoParamIds {
    pub lifting: ValueId,
    pub layers: Vec<(ValueId, ValueId)>,
    pub head_pressure: ValueId,
    pub head_saturation: ValueId,
}

impl FnoParamIds {
    /// Registers parameters as tape leaves.
    pub fn leaf(tape: &mut Tape, params: &OperatorParams) -> Self {
        let lifting = tape.leaf(params.lifting.clone());
        let layers = params
            .spectral
            .iter()
            .zip(&params.pointwise)
            .map(|(s, w)| (tape.leaf(s.clone()), tape.leaf(w.clone())))
            .collect();
        Self {
            lifting,
            layers,
            head_pressure: tape.leaf(params.head_pressure.clone()),
            head_saturation: tape.leaf(params.head_saturation.clone()),
        }
    }

    /// Flat list in [`OperatorParams::to_tensors`] order.
    pub fn flat(&self) -> Vec<ValueId> {
        let mut out = vec![self.lifting];
        for (s, w) in &self.layers {
            out.push(*s);
            out.push(*w);
        }
        out.push(self.head_pressure);
        out.push(self.head_saturation);
        out
    }
}

/// Appends a ones row to a (c, N) matrix so a bias column can ride along the
/// weight matrix.
fn with_ones_row(tape: &mut Tape, x: ValueId, n: usize) -> Result<ValueId> {
    let ones = tape.leaf(Tensor::full(&[1, n], 1.0));
    tape.concat_channels(&[x, ones])
}

/// Forward pass on the tape: lifting, n_layers of sigma(W v + K v), then the
/// floored pressure head and simplex-projected saturation head.
/// Returns ((1, nx, ny, nz), (3, nx, ny, nz)) with saturations (Sw, So, Sg).
pub fn forward_on_tape(
    tape: &mut Tape,
    cfg: &FnoConfig,
    grid: &Grid,
    params: &FnoParamIds,
    bundle: ValueId,
) -> Result<(ValueId, ValueId)> {
    cfg.validate_for(grid)?;
    let n = grid.n_cells();
    let d = cfg.latent_width;
    let spec = cfg.spectral_spec(grid);
    let grid_shape = |c: usize| vec![c, grid.nx, grid.ny, grid.nz];

    // Lifting: (d, 13) x (13, N).
    let flat_in = tape.reshape(bundle, vec![INPUT_CHANNELS, n])?;
    let flat_in = with_ones_row(tape, flat_in, n)?;
    let mut v = tape.matmul(params.lifting, flat_in)?;

    for (spectral_w, pointwise_w) in &params.layers {
        let v_grid = tape.reshape(v, grid_shape(d))?;
        let conv = tape.spectral_conv(v_grid, *spectral_w, &spec)?;
        let conv_flat = tape.reshape(conv, vec![d, n])?;
        let v_aug = with_ones_row(tape, v, n)?;
        let local = tape.matmul(*pointwise_w, v_aug)?;
        let pre = tape.add(local, conv_flat)?;
        v = tape.activation(pre, cfg.activation)?;
        if tape.value(v).data().iter().any(|x| x.is_nan()) {
            return Err(CoreError::Numerical(
                "NaN activation in operator layer".into(),
            ));
        }
    }

    let v_aug = with_ones_row(tape, v, n)?;
    // Pressure head with floor: p = p_min + relu(raw - p_min).
    let raw_p = tape.matmul(params.head_pressure, v_aug)?;
    let shifted = tape.affine(raw_p, 1.0, -cfg.p_min)?;
    let relu_p = tape.relu(shifted)?;
    let p = tape.affine(relu_p, 1.0, cfg.p_min)?;
    let p = tape.reshape(p, grid_shape(1))?;

    // Saturation head through the clip-rescale simplex projection.
    let raw_s = tape.matmul(params.head_saturation, v_aug)?;
    let raw_s = tape.reshape(raw_s, grid_shape(3))?;
    let s = tape.simplex_project(raw_s)?;

    Ok((p, s))
}

/// A trained operator bound to its grid and normalization statistics.
#[derive(Debug, Clone)]
pub struct FnoSurrogate {
    pub config: FnoConfig,
    pub params: OperatorParams,
    pub stats: ChannelStats,
    pub grid: Grid,
}

impl FnoSurrogate {
    pub fn new(
        config: FnoConfig,
        params: OperatorParams,
        stats: ChannelStats,
        grid: Grid,
    ) -> Result<Self> {
        config.validate_for(&grid)?;
        Ok(Self {
            config,
            params,
            stats,
            grid,
        })
    }

    /// One forward evaluation outside any training loop.
    pub fn eval(
        &self,
        rock: &RockFields,
        state: &State,
        wells: &WellControls,
        ctx: StepContext,
    ) -> Result<State> {
        let mut tape = Tape::new();
        let (p, s) = self.eval_on_fresh_tape(&mut tape, rock, state, wells, ctx)?;
        extract_state(&tape, p, s)
    }

    fn eval_on_fresh_tape(
        &self,
        tape: &mut Tape,
        rock: &RockFields,
        state: &State,
        wells: &WellControls,
        ctx: StepContext,
    ) -> Result<(ValueId, ValueId)> {
        let gshape = vec![self.grid.nx, self.grid.ny, self.grid.nz];
        let ids = PackStateIds {
            p: tape.leaf(Tensor::new(gshape.clone(), state.pressure.clone())?),
            sw: tape.leaf(Tensor::new(gshape.clone(), state.sw.clone())?),
            so: tape.leaf(Tensor::new(gshape.clone(), state.so.clone())?),
            sg: tape.leaf(Tensor::new(gshape, state.sg.clone())?),
        };
        let bundle = pack_on_tape(tape, rock, ids, wells, ctx, &self.grid, &self.stats)?;
        let params = FnoParamIds::leaf(tape, &self.params);
        forward_on_tape(tape, &self.config, &self.grid, &params, bundle)
    }

    /// Exact vector-Jacobian product of the state-to-state map at `state`,
    /// via one tape backward pass. `cotangent` has the flat state layout.
    pub fn state_vjp(
        &self,
        rock: &RockFields,
        state: &State,
        wells: &WellControls,
        ctx: StepContext,
        cotangent: &[f64],
    ) -> Result<Vec<f64>> {
        let n = self.grid.n_cells();
        if cotangent.len() != 4 * n {
            return Err(CoreError::dimension("state_vjp cotangent", 4 * n, cotangent.len()));
        }
        let mut tape = Tape::new();
        let gshape = vec![self.grid.nx, self.grid.ny, self.grid.nz];
        let ids = PackStateIds {
            p: tape.leaf(Tensor::new(gshape.clone(), state.pressure.clone())?),
            sw: tape.leaf(Tensor::new(gshape.clone(), state.sw.clone())?),
            so: tape.leaf(Tensor::new(gshape.clone(), state.so.clone())?),
            sg: tape.leaf(Tensor::new(gshape.clone(), state.sg.clone())?),
        };
        let bundle = pack_on_tape(&mut tape, rock, ids, wells, ctx, &self.grid, &self.stats)?;
        let params = FnoParamIds::leaf(&mut tape, &self.params);
        let (p, s) = forward_on_tape(&mut tape, &self.config, &self.grid, &params, bundle)?;

        // loss = <output, cotangent> with the flat layout [p | Sw | So | Sg].
        let cot_p = tape.leaf(Tensor::new(gshape.clone(), cotangent[..n].to_vec())?);
        let mut cot_s = Vec::with_capacity(3 * n);
        cot_s.extend_from_slice(&cotangent[n..4 * n]);
        let cot_s = tape.leaf(Tensor::new(vec![3, self.grid.nx, self.grid.ny, self.grid.nz], cot_s)?);
        let p_dot = tape.hadamard(p, cot_p)?;
        let s_dot = tape.hadamard(s, cot_s)?;
        let p_sum = tape.reduce_sum(p_dot)?;
        let s_sum = tape.reduce_sum(s_dot)?;
        let loss = tape.add(p_sum, s_sum)?;
        let grads = tape.backward(loss)?;

        let mut out = vec![0.0; 4 * n];
        for (slot, id) in [ids.p, ids.sw, ids.so, ids.sg].into_iter().enumerate() {
            if let Some(g) = grads.get(id) {
                out[slot * n..(slot + 1) * n].copy_from_slice(g.data());
            }
        }
        Ok(out)
    }
}

/// Reads the two head outputs into a [`State`] (saturation order Sw, So, Sg).
pub(crate) fn extract_state(tape: &Tape, p: ValueId, s: ValueId) -> Result<State> {
    let pd = tape.value(p).data();
    let sd = tape.value(s).data();
    let n = pd.len();
    State::new(
        pd.to_vec(),
        sd[..n].to_vec(),
        sd[n..2 * n].to_vec(),
        sd[2 * n..].to_vec(),
    )
}

impl OneStepMap for FnoSurrogate {
    fn step(
        &self,
        rock: &RockFields,
        state: &State,
        wells: &WellControls,
        ctx: StepContext,
    ) -> Result<State> {
        self.eval(rock, state, wells, ctx)
    }
}
