//! Assembly of the finite-volume residual vector.

use super::ResidualInputs;
use crate::error::{CoreError, Result};
use crate::grid::{Grid, RockFields, State};

/// Harmonic mean; zero when either argument vanishes (sealed fault).
#[inline]
fn harmonic(a: f64, b: f64) -> f64 {
    let s = a + b;
    if s <= 0.0 {
        0.0
    } else {
        2.0 * a * b / s
    }
}

/// Geometric face transmissibility between adjacent cells i and j:
/// harmonic mean of f*K times face area over centre distance. Symmetric.
pub fn face_transmissibility(i: usize, j: usize, rock: &RockFields, grid: &Grid) -> Result<f64> {
    let axis = grid
        .adjacency_axis(i, j)
        .ok_or_else(|| CoreError::Topology(format!("cells {i} and {j} are not adjacent")))?;
    let (area, dist) = grid.face_geometry(axis);
    let ki = rock.fault_mult[i] * rock.perm_axis(i, axis);
    let kj = rock.fault_mult[j] * rock.perm_axis(j, axis);
    Ok(harmonic(ki, kj) * area / dist)
}

/// Per-cell quantities the flux loop needs, evaluated at the new state.
struct CellEval {
    /// Phase mobilities K_r / mu.
    mob_w: Vec<f64>,
    mob_o: Vec<f64>,
    mob_g: Vec<f64>,
    /// Phase potentials P_alpha - rho_alpha g depth.
    pot_w: Vec<f64>,
    pot_o: Vec<f64>,
    pot_g: Vec<f64>,
    /// Gas-flux carrier coefficients rho_g/B_g and R_so rho_g/B_o.
    free_gas_coef: Vec<f64>,
    diss_gas_coef: Vec<f64>,
}

fn eval_cells(x: &State, inputs: &ResidualInputs<'_>) -> CellEval {
    let n = x.n();
    let f = inputs.fluid;
    let rp = inputs.relperm;
    let cap = inputs.capillary;
    let g = f.gravity;
    let mut e = CellEval {
        mob_w: vec![0.0; n],
        mob_o: vec![0.0; n],
        mob_g: vec![0.0; n],
        pot_w: vec![0.0; n],
        pot_o: vec![0.0; n],
        pot_g: vec![0.0; n],
        free_gas_coef: vec![0.0; n],
        diss_gas_coef: vec![0.0; n],
    };
    for i in 0..n {
        let (krw, kro, krg) = rp.relperm(x.sw[i], x.so[i], x.sg[i]);
        e.mob_w[i] = krw / f.mu_w;
        e.mob_o[i] = kro / f.mu_o;
        e.mob_g[i] = krg / f.mu_g;
        let p = x.pressure[i];
        let depth = inputs.grid.cell_depth(i);
        let pw = p - cap.p_cwo(x.sw[i]);
        let po = p;
        let pg = p + cap.p_cog(x.sg[i]);
        e.pot_w[i] = pw - f.rho_w * g * depth;
        e.pot_o[i] = po - f.rho_o * g * depth;
        e.pot_g[i] = pg - f.rho_g * g * depth;
        e.free_gas_coef[i] = f.rho_g / f.b_g.eval(p);
        e.diss_gas_coef[i] = f.r_so.eval(p) * f.rho_g / f.b_o.eval(p);
    }
    e
}

/// Donor-cell mobility: the higher-potential side donates; exact ties take
/// the arithmetic mean, removing the direction-flip discontinuity.
#[inline]
fn upwind(dpot: f64, donor_j: f64, donor_i: f64) -> f64 {
    if dpot > 0.0 {
        donor_j
    } else if dpot < 0.0 {
        donor_i
    } else {
        0.5 * (donor_j + donor_i)
    }
}

/// Finite-volume residual, blocks [water | oil | gas | constraint].
pub fn residual(x_plus: &State, x_minus: &State, inputs: &ResidualInputs<'_>) -> Result<Vec<f64>> {
    let mut out = vec![0.0; 4 * inputs.grid.n_cells()];
    residual_into(x_plus, x_minus, inputs, &mut out)?;
    Ok(out)
}

/// As [`residual`] but writing into a caller-provided buffer.
pub fn residual_into(
    x_plus: &State,
    x_minus: &State,
    inputs: &ResidualInputs<'_>,
    out: &mut [f64],
) -> Result<()> {
    let grid = inputs.grid;
    let n = grid.n_cells();
    inputs.ctx.validate()?;
    if x_plus.n() != n {
        return Err(CoreError::dimension("residual x_plus", n, x_plus.n()));
    }
    if x_minus.n() != n {
        return Err(CoreError::dimension("residual x_minus", n, x_minus.n()));
    }
    if out.len() != 4 * n {
        return Err(CoreError::dimension("residual output", 4 * n, out.len()));
    }
    let fluid = inputs.fluid;
    let dt = inputs.ctx.dt;
    let vol = grid.cell_volume();
    let inv_vol = 1.0 / vol;
    let phi = &inputs.rock.porosity;
    // Permeability is sampled per face; hoist the exponentials.
    let perm: Vec<f64> = (0..n)
        .map(|i| inputs.rock.fault_mult[i] * inputs.rock.perm(i))
        .collect();
    let kv_kh = inputs.rock.kv_kh;

    let (qw, qo, qg) = inputs.wells.rasterize(n);
    inputs.wells.validate(n)?;

    let plus = eval_cells(x_plus, inputs);

    // Accumulation and sources.
    for i in 0..n {
        let acc_w = phi[i] * (x_plus.sw[i] - x_minus.sw[i]) / dt;
        let acc_o = phi[i] * (x_plus.so[i] - x_minus.so[i]) / dt;
        let gas_plus = fluid.rho_g / fluid.b_g.eval(x_plus.pressure[i]) * x_plus.sg[i]
            + fluid.r_so.eval(x_plus.pressure[i]) * fluid.rho_g
                / fluid.b_o.eval(x_plus.pressure[i])
                * x_plus.so[i];
        let gas_minus = fluid.rho_g / fluid.b_g.eval(x_minus.pressure[i]) * x_minus.sg[i]
            + fluid.r_so.eval(x_minus.pressure[i]) * fluid.rho_g
                / fluid.b_o.eval(x_minus.pressure[i])
                * x_minus.so[i];
        let acc_g = phi[i] * (gas_plus - gas_minus) / dt;
        out[i] = acc_w - qw[i] * inv_vol;
        out[n + i] = acc_o - qo[i] * inv_vol;
        out[2 * n + i] = acc_g - qg[i] * inv_vol;
        out[3 * n + i] = x_plus.sw[i] + x_plus.so[i] + x_plus.sg[i] - 1.0;
    }

    // Upwinded Darcy fluxes, new-state mobilities and coefficients.
    let face_stride = [grid.ny * grid.nz, grid.nz, 1];
    for axis in 0..3 {
        let (area, dist) = grid.face_geometry(axis);
        let area_over_dist = area / dist;
        let lens = [grid.nx, grid.ny, grid.nz];
        if lens[axis] < 2 {
            continue;
        }
        for i in 0..n {
            let (ix, iy, iz) = grid.coords(i);
            let at_edge = match axis {
                0 => ix + 1 >= grid.nx,
                1 => iy + 1 >= grid.ny,
                _ => iz + 1 >= grid.nz,
            };
            if at_edge {
                continue;
            }
            let j = i + face_stride[axis];
        let aniso = if axis == 2 { kv_kh } else { 1.0 };
        let t_geo = harmonic(perm[i], perm[j]) * area_over_dist * aniso;
        if t_geo == 0.0 {
            continue;
        }

        // Water.
        let dpw = plus.pot_w[j] - plus.pot_w[i];
        let flux_w = t_geo * upwind(dpw, plus.mob_w[j], plus.mob_w[i]) * dpw;
        out[i] -= flux_w * inv_vol;
        out[j] += flux_w * inv_vol;

        // Oil (also carries dissolved gas below).
        let dpo = plus.pot_o[j] - plus.pot_o[i];
        let mob_o_up = upwind(dpo, plus.mob_o[j], plus.mob_o[i]);
        let flux_o = t_geo * mob_o_up * dpo;
        out[n + i] -= flux_o * inv_vol;
        out[n + j] += flux_o * inv_vol;

        // Free gas.
        let dpg = plus.pot_g[j] - plus.pot_g[i];
        let mobg_coef = upwind(
            dpg,
            plus.mob_g[j] * plus.free_gas_coef[j],
            plus.mob_g[i] * plus.free_gas_coef[i],
        );
        let flux_g_free = t_geo * mobg_coef * dpg;
        // Dissolved gas rides the oil flux with the oil donor's coefficient.
        let diss_coef = upwind(dpo, plus.diss_gas_coef[j], plus.diss_gas_coef[i]);
        let flux_g = flux_g_free + t_geo * mob_o_up * diss_coef * dpo;
        out[2 * n + i] -= flux_g * inv_vol;
        out[2 * n + j] += flux_g * inv_vol;
        }
    }
    Ok(())
}
