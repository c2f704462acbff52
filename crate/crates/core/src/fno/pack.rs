//! Input packing: the 12-channel grid tensor fed to the operator.

use super::ChannelStats;
use crate::autodiff::{Tape, Tensor, ValueId};
use crate::blackoil::{StepContext, WellControls};
use crate::error::{CoreError, Result};
use crate::grid::{Grid, RockFields, State};

pub const INPUT_CHANNELS: usize = 12;

/// Fixed channel order of the input bundle.
pub const INPUT_CHANNEL_NAMES: [&str; INPUT_CHANNELS] = [
    "perm", "poro", "fault", "Q", "Qg", "Qw", "dt", "t", "pini", "sini", "sgini", "soini",
];

/// Raw (unnormalized) channel data, channel-major over the grid.
pub(crate) fn raw_channels(
    rock: &RockFields,
    state: &State,
    wells: &WellControls,
    ctx: StepContext,
    grid: &Grid,
) -> Result<Vec<f64>> {
    let n = grid.n_cells();
    if state.n() != n {
        return Err(CoreError::dimension("pack_inputs state", n, state.n()));
    }
    rock.validate(grid)?;
    wells.validate(n)?;
    let (qw, qo, qg) = wells.rasterize(n);
    let inv_vol = 1.0 / grid.cell_volume();
    let mut out = Vec::with_capacity(INPUT_CHANNELS * n);
    out.extend_from_slice(&rock.log_perm);
    out.extend_from_slice(&rock.porosity);
    out.extend_from_slice(&rock.fault_mult);
    out.extend(qo.iter().map(|q| q * inv_vol));
    out.extend(qg.iter().map(|q| q * inv_vol));
    out.extend(qw.iter().map(|q| q * inv_vol));
    out.extend(std::iter::repeat(ctx.dt).take(n));
    out.extend(std::iter::repeat(ctx.t).take(n));
    out.extend_from_slice(&state.pressure);
    out.extend_from_slice(&state.sw);
    out.extend_from_slice(&state.sg);
    out.extend_from_slice(&state.so);
    Ok(out)
}

/// Packs the normalized input bundle as a (12, nx, ny, nz) tensor.
pub fn pack_inputs(
    rock: &RockFields,
    state: &State,
    wells: &WellControls,
    ctx: StepContext,
    grid: &Grid,
    stats: &ChannelStats,
) -> Result<Tensor> {
    let n = grid.n_cells();
    let mut data = raw_channels(rock, state, wells, ctx, grid)?;
    for c in 0..INPUT_CHANNELS {
        let (m, s) = (stats.mean[c], stats.std[c]);
        for v in &mut data[c * n..(c + 1) * n] {
            *v = (*v - m) / s;
        }
    }
    Tensor::new(vec![INPUT_CHANNELS, grid.nx, grid.ny, grid.nz], data)
}

/// Recovers the state channels from a packed bundle (inverse affine).
pub fn unpack_state(bundle: &Tensor, grid: &Grid, stats: &ChannelStats) -> Result<State> {
    let n = grid.n_cells();
    let expect = vec![INPUT_CHANNELS, grid.nx, grid.ny, grid.nz];
    if bundle.shape() != expect.as_slice() {
        return Err(CoreError::Config(format!(
            "unpack_state: bundle shape {:?}, expected {expect:?}",
            bundle.shape()
        )));
    }
    let d = bundle.data();
    let denorm = |c: usize, i: usize| d[c * n + i] * stats.std[c] + stats.mean[c];
    let pressure = (0..n).map(|i| denorm(8, i)).collect();
    let sw = (0..n).map(|i| denorm(9, i)).collect();
    let sg = (0..n).map(|i| denorm(10, i)).collect();
    let so = (0..n).map(|i| denorm(11, i)).collect();
    State::new(pressure, sw, so, sg)
}

/// Tape handles for the four state channels entering the pack.
#[derive(Debug, Clone, Copy)]
pub struct PackStateIds {
    pub p: ValueId,
    pub sw: ValueId,
    pub so: ValueId,
    pub sg: ValueId,
}

/// Builds the normalized bundle on the tape; state channels are live tape
/// values (so gradients flow through the packing), the rest are constants.
pub fn pack_on_tape(
    tape: &mut Tape,
    rock: &RockFields,
    state: PackStateIds,
    wells: &WellControls,
    ctx: StepContext,
    grid: &Grid,
    stats: &ChannelStats,
) -> Result<ValueId> {
    let n = grid.n_cells();
    let shape = vec![1, grid.nx, grid.ny, grid.nz];
    let (qw, qo, qg) = wells.rasterize(n);
    wells.validate(n)?;
    let inv_vol = 1.0 / grid.cell_volume();

    let mut channels: Vec<ValueId> = Vec::with_capacity(INPUT_CHANNELS);
    let constant = |tape: &mut Tape, c: usize, data: Vec<f64>| -> Result<ValueId> {
        let normed: Vec<f64> = data
            .iter()
            .map(|v| (v - stats.mean[c]) / stats.std[c])
            .collect();
        Ok(tape.leaf(Tensor::new(shape.clone(), normed)?))
    };
    channels.push(constant(tape, 0, rock.log_perm.clone())?);
    channels.push(constant(tape, 1, rock.porosity.clone())?);
    channels.push(constant(tape, 2, rock.fault_mult.clone())?);
    channels.push(constant(tape, 3, qo.iter().map(|q| q * inv_vol).collect())?);
    channels.push(constant(tape, 4, qg.iter().map(|q| q * inv_vol).collect())?);
    channels.push(constant(tape, 5, qw.iter().map(|q| q * inv_vol).collect())?);
    channels.push(constant(tape, 6, vec![ctx.dt; n])?);
    channels.push(constant(tape, 7, vec![ctx.t; n])?);

    // State channels: normalize on the tape so gradients flow.
    let live = |tape: &mut Tape, c: usize, id: ValueId| -> Result<ValueId> {
        let scaled = tape.affine(id, 1.0 / stats.std[c], -stats.mean[c] / stats.std[c])?;
        tape.reshape(scaled, shape.clone())
    };
    channels.push(live(tape, 8, state.p)?);
    channels.push(live(tape, 9, state.sw)?);
    channels.push(live(tape, 10, state.sg)?);
    channels.push(live(tape, 11, state.so)?);

    tape.concat_channels(&channels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackoil::{Well, WellKind};

    fn fixture() -> (Grid, RockFields, State, WellControls, StepContext) {
        let grid = Grid::new(3, 2, 2, 50.0, 50.0, 20.0).unwrap();
        let n = grid.n_cells();
        let rock = RockFields::uniform(&grid, 0.25, -4.0);
        let mut state = State::uniform(n, 1000.0, 0.3, 0.5, 0.2);
        for i in 0..n {
            state.pressure[i] += i as f64;
            state.sw[i] += 0.01 * (i as f64);
            state.so[i] -= 0.01 * (i as f64);
        }
        let wells = WellControls {
            wells: vec![Well {
                cell: 2,
                kind: WellKind::Injector,
                q_o: 0.0,
                q_w: 7.0,
                q_g: 3.0,
            }],
        };
        (grid, rock, state, wells, StepContext { dt: 100.0, t: 300.0 })
    }

    #[test]
    fn channel_count_is_twelve() {
        let (grid, rock, state, wells, ctx) = fixture();
        let bundle =
            pack_inputs(&rock, &state, &wells, ctx, &grid, &ChannelStats::identity()).unwrap();
        assert_eq!(bundle.shape()[0], 12);
        assert_eq!(INPUT_CHANNEL_NAMES.len(), 12);
    }

    #[test]
    fn zero_wells_give_zero_rate_channels() {
        let (grid, rock, state, _, ctx) = fixture();
        let bundle = pack_inputs(
            &rock,
            &state,
            &WellControls::none(),
            ctx,
            &grid,
            &ChannelStats::identity(),
        )
        .unwrap();
        let n = grid.n_cells();
        for c in 3..6 {
            assert!(bundle.data()[c * n..(c + 1) * n].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn wells_rasterize_as_rate_density() {
        let (grid, rock, state, wells, ctx) = fixture();
        let bundle =
            pack_inputs(&rock, &state, &wells, ctx, &grid, &ChannelStats::identity()).unwrap();
        let n = grid.n_cells();
        let vol = grid.cell_volume();
        // Channel 5 is Qw.
        assert!((bundle.data()[5 * n + 2] - 7.0 / vol).abs() < 1e-15);
        assert!((bundle.data()[4 * n + 2] - 3.0 / vol).abs() < 1e-15);
        assert_eq!(bundle.data()[5 * n + 1], 0.0);
    }

    #[test]
    fn pack_unpack_round_trip_recovers_state() {
        let (grid, rock, state, wells, ctx) = fixture();
        let stats = ChannelStats {
            mean: [1.0, 0.2, 0.5, 0.0, 0.0, 0.0, 50.0, 100.0, 990.0, 0.3, 0.1, 0.5],
            std: [2.0, 0.1, 1.0, 1.0, 1.0, 1.0, 10.0, 200.0, 55.0, 0.2, 0.3, 0.25],
        };
        let bundle = pack_inputs(&rock, &state, &wells, ctx, &grid, &stats).unwrap();
        let back = unpack_state(&bundle, &grid, &stats).unwrap();
        for i in 0..state.n() {
            assert!((back.pressure[i] - state.pressure[i]).abs() < 1e-9);
            assert!((back.sw[i] - state.sw[i]).abs() < 1e-12);
            assert!((back.so[i] - state.so[i]).abs() < 1e-12);
            assert!((back.sg[i] - state.sg[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn tape_pack_matches_plain_pack() {
        let (grid, rock, state, wells, ctx) = fixture();
        let stats = ChannelStats {
            mean: [0.5; 12],
            std: [2.0; 12],
        };
        let plain = pack_inputs(&rock, &state, &wells, ctx, &grid, &stats).unwrap();
        let mut tape = Tape::new();
        let gshape = vec![grid.nx, grid.ny, grid.nz];
        let ids = PackStateIds {
            p: tape.leaf(Tensor::new(gshape.clone(), state.pressure.clone()).unwrap()),
            sw: tape.leaf(Tensor::new(gshape.clone(), state.sw.clone()).unwrap()),
            so: tape.leaf(Tensor::new(gshape.clone(), state.so.clone()).unwrap()),
            sg: tape.leaf(Tensor::new(gshape, state.sg.clone()).unwrap()),
        };
        let bundle = pack_on_tape(&mut tape, &rock, ids, &wells, ctx, &grid, &stats).unwrap();
        for (a, b) in tape.value(bundle).data().iter().zip(plain.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
