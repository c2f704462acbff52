//! Finite-difference residual Jacobians with stencil colouring, and the
//! coercivity probe.
//!
//! Row blocks follow the residual layout [w | o | g | c]; column blocks follow
//! the state layout [p | Sw | So | Sg]. Columns are grouped by a distance-2
//! colouring of the grid graph (ix, iy, iz mod 3), so one residual pair
//! evaluates a full column group without stencil collisions.

use super::residual::residual_into;
use super::ResidualInputs;
use crate::error::{CoreError, Result};
use crate::grid::State;
use crate::linalg::{smallest_symmetric_eig, Csr};

const FD_SCALE: f64 = 1e-7;

#[derive(Debug, Clone, Copy)]
enum Arg {
    Plus,
    Minus,
}

fn state_field_mut(s: &mut State, var: usize) -> &mut [f64] {
    match var {
        0 => &mut s.pressure,
        1 => &mut s.sw,
        2 => &mut s.so,
        _ => &mut s.sg,
    }
}

fn fd_jacobian(
    x_plus: &State,
    x_minus: &State,
    inputs: &ResidualInputs<'_>,
    arg: Arg,
) -> Result<Csr> {
    let grid = inputs.grid;
    let n = grid.n_cells();
    let dim = 4 * n;

    // Distance-2 colouring: same-colour cells are at least 3 apart per axis.
    let mut colours: Vec<Vec<usize>> = vec![Vec::new(); 27];
    for i in 0..n {
        let (ix, iy, iz) = grid.coords(i);
        colours[(ix % 3) * 9 + (iy % 3) * 3 + (iz % 3)].push(i);
    }

    // Stencil rows touched by a column at `cell`: the cell and face neighbours.
    let stencil = |cell: usize| -> Vec<usize> {
        let (ix, iy, iz) = grid.coords(cell);
        let mut s = vec![cell];
        if ix > 0 {
            s.push(grid.flat(ix - 1, iy, iz));
        }
        if ix + 1 < grid.nx {
            s.push(grid.flat(ix + 1, iy, iz));
        }
        if iy > 0 {
            s.push(grid.flat(ix, iy - 1, iz));
        }
        if iy + 1 < grid.ny {
            s.push(grid.flat(ix, iy + 1, iz));
        }
        if iz > 0 {
            s.push(grid.flat(ix, iy, iz - 1));
        }
        if iz + 1 < grid.nz {
            s.push(grid.flat(ix, iy, iz + 1));
        }
        s
    };

    let base = match arg {
        Arg::Plus => x_plus,
        Arg::Minus => x_minus,
    };

    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut r_hi = vec![0.0; dim];
    let mut r_lo = vec![0.0; dim];
    for var in 0..4 {
        for cells in colours.iter().filter(|c| !c.is_empty()) {
            let mut hi = base.clone();
            let mut lo = base.clone();
            let mut steps = Vec::with_capacity(cells.len());
            for &c in cells {
                let v = base.component(component_of(var))[c];
                let h = FD_SCALE * (1.0 + v.abs());
                state_field_mut(&mut hi, var)[c] = v + h;
                state_field_mut(&mut lo, var)[c] = v - h;
                steps.push(h);
            }
            match arg {
                Arg::Plus => {
                    residual_into(&hi, x_minus, inputs, &mut r_hi)?;
                    residual_into(&lo, x_minus, inputs, &mut r_lo)?;
                }
                Arg::Minus => {
                    residual_into(x_plus, &hi, inputs, &mut r_hi)?;
                    residual_into(x_plus, &lo, inputs, &mut r_lo)?;
                }
            }
            for (&c, &h) in cells.iter().zip(&steps) {
                let col = var * n + c;
                for row_cell in stencil(c) {
                    for eq in 0..4 {
                        let row = eq * n + row_cell;
                        let d = (r_hi[row] - r_lo[row]) / (2.0 * h);
                        if d.is_nan() {
                            return Err(CoreError::Numerical(format!(
                                "NaN in residual Jacobian at cell {row_cell}, equation block {eq}"
                            )));
                        }
                        if d != 0.0 {
                            triplets.push((row, col, d));
                        }
                    }
                }
            }
        }
    }
    Ok(Csr::from_triplets(dim, dim, &triplets))
}

fn component_of(var: usize) -> crate::grid::Component {
    use crate::grid::Component::*;
    match var {
        0 => Pressure,
        1 => Water,
        2 => Oil,
        _ => Gas,
    }
}

/// dR/dx+ as a sparse matrix (4N x 4N).
pub fn residual_jacobian_plus(
    x_plus: &State,
    x_minus: &State,
    inputs: &ResidualInputs<'_>,
) -> Result<Csr> {
    fd_jacobian(x_plus, x_minus, inputs, Arg::Plus)
}

/// dR/dx- as a sparse matrix. Flux terms live entirely in the new state, so
/// this matrix is block-diagonal per cell.
pub fn residual_jacobian_minus(
    x_plus: &State,
    x_minus: &State,
    inputs: &ResidualInputs<'_>,
) -> Result<Csr> {
    fd_jacobian(x_plus, x_minus, inputs, Arg::Minus)
}

/// Configuration of the coercivity probe iteration.
#[derive(Debug, Clone, Copy)]
pub struct ProbeConfig {
    pub iters: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            iters: 300,
            seed: 0,
        }
    }
}

/// Pairs each transport equation with its own evolved variable and the
/// constraint row with pressure: slots [p, Sw, So, Sg] hold rows [c, w, o, g].
/// This alignment puts the accumulation terms on the diagonal, which is what
/// the monotonicity argument behind the implicit step pairs against.
fn pair_permute(y: &[f64], n: usize, out: &mut [f64]) {
    out[..n].copy_from_slice(&y[3 * n..]); // constraint row <-> p
    out[n..2 * n].copy_from_slice(&y[..n]); // water row <-> Sw
    out[2 * n..3 * n].copy_from_slice(&y[n..2 * n]); // oil row <-> So
    out[3 * n..].copy_from_slice(&y[2 * n..3 * n]); // gas row <-> Sg
}

fn pair_permute_t(z: &[f64], n: usize, out: &mut [f64]) {
    out[3 * n..].copy_from_slice(&z[..n]);
    out[..n].copy_from_slice(&z[n..2 * n]);
    out[n..2 * n].copy_from_slice(&z[2 * n..3 * n]);
    out[2 * n..3 * n].copy_from_slice(&z[3 * n..]);
}

/// Result of [`coercivity_probe`].
#[derive(Debug, Clone)]
pub struct CoercivityProbe {
    /// Smallest eigenvalue of the phi-weighted symmetrisation of the paired
    /// dR/dx+. Positive certifies the coercivity condition at this point;
    /// flux-dominated (over-large dt) regimes drive it negative.
    pub lambda_min: f64,
    /// Smallest singular value of dR/dx+ in the phi metric: the reciprocal
    /// of the inverse-Jacobian norm that enters the Lipschitz estimate.
    pub sigma_min: f64,
    pub converged: bool,
}

/// Probes the coercivity of dR/dx+ at (x+, x-) by shifted power iteration on
/// the symmetrised paired Jacobian, plus an inverse-power estimate of the
/// smallest singular value.
pub fn coercivity_probe(
    x_plus: &State,
    x_minus: &State,
    inputs: &ResidualInputs<'_>,
    cfg: ProbeConfig,
) -> Result<CoercivityProbe> {
    let n = inputs.grid.n_cells();
    let dim = 4 * n;
    let jac = residual_jacobian_plus(x_plus, x_minus, inputs)?;
    let w = crate::grid::pv_weights_4n(inputs.rock, inputs.grid);
    let sqrt_w: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();

    let sym_est = {
        let jac = &jac;
        let sqrt_w = &sqrt_w;
        let apply_sym = move |v: &[f64]| -> Vec<f64> {
            // Forward part: W^{1/2} P J W^{-1/2} v.
            let mut x = v.to_vec();
            for i in 0..dim {
                x[i] /= sqrt_w[i];
            }
            let y = jac.matvec_alloc(&x);
            let mut py = vec![0.0; dim];
            pair_permute(&y, n, &mut py);
            for i in 0..dim {
                py[i] *= sqrt_w[i];
            }
            // Transpose part: W^{-1/2} J^T P^T W^{1/2} v.
            let mut z = v.to_vec();
            for i in 0..dim {
                z[i] *= sqrt_w[i];
            }
            let mut pz = vec![0.0; dim];
            pair_permute_t(&z, n, &mut pz);
            let mut jt = vec![0.0; dim];
            jac.matvec_t(&pz, &mut jt);
            for i in 0..dim {
                jt[i] /= sqrt_w[i];
            }
            (0..dim).map(|i| 0.5 * (py[i] + jt[i])).collect()
        };
        smallest_symmetric_eig(&apply_sym, dim, cfg.iters, cfg.seed)
    };

    let sigma_min = smallest_singular_phi(&jac, &w, cfg)?;

    Ok(CoercivityProbe {
        lambda_min: sym_est.value,
        sigma_min,
        converged: sym_est.converged,
    })
}

/// Per-cell slot of each equation block [w, o, g, c] in the solver layout:
/// the oil row pairs with pressure (oil stays mobile in the desk scenarios,
/// so its flux keeps a nonzero pressure derivative), water with Sw, the
/// constraint row with So, and gas with Sg.
pub(crate) const SLOT_OF_EQ: [usize; 4] = [1, 0, 3, 2];

/// Reorders the raw Jacobian (rows [w|o|g|c], cols [p|Sw|So|Sg]) into the
/// cell-interleaved solver layout. The alignment gives every diagonal slot a
/// (generically) nonzero entry, which ILU(0) wants, and keeps the matrix
/// banded for the 7-point stencil. Explicit zero diagonals are inserted so
/// the pattern is always factorizable.
pub(crate) fn interleave_for_solve(jac: &Csr, n: usize) -> Csr {
    let dim = 4 * n;
    let mut triplets = Vec::with_capacity(jac.nnz() + dim);
    for row in 0..dim {
        let eq = row / n;
        let cell = row % n;
        let new_row = cell * 4 + SLOT_OF_EQ[eq];
        for k in jac.indptr[row]..jac.indptr[row + 1] {
            let col = jac.indices[k];
            let var = col / n;
            let ccell = col % n;
            triplets.push((new_row, ccell * 4 + var, jac.data[k]));
        }
    }
    for d in 0..dim {
        triplets.push((d, d, 0.0));
    }
    Csr::from_triplets(dim, dim, &triplets)
}

/// Public profiling shim for the solver interleave.
pub fn interleave_for_solve_public(jac: &Csr, n: usize) -> Csr {
    interleave_for_solve(jac, n)
}

/// Interleaves a residual vector [w|o|g|c] into the solver row layout.
pub(crate) fn interleave_residual(r: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; 4 * n];
    for eq in 0..4 {
        for cell in 0..n {
            out[cell * 4 + SLOT_OF_EQ[eq]] = r[eq * n + cell];
        }
    }
    out
}

/// Maps a solver-layout solution (per-cell [p, Sw, So, Sg]) back to the flat
/// state layout [p | Sw | So | Sg].
pub(crate) fn uninterleave_solution(sol: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; 4 * n];
    for cell in 0..n {
        for var in 0..4 {
            out[var * n + cell] = sol[cell * 4 + var];
        }
    }
    out
}

/// sigma_min(W^{1/2} A W^{-1/2}) = 1 / ||W^{1/2} A^{-1} W^{-1/2}||_2, with
/// the inverse applied by preconditioned Krylov solves on the interleaved
/// system (block permutations leave the phi-metric singular values unchanged
/// because the weights are shared across the four blocks of a cell).
fn smallest_singular_phi(raw: &Csr, weights: &[f64], cfg: ProbeConfig) -> Result<f64> {
    use crate::linalg::{bicgstab, Ilu0};
    let dim = raw.n_rows;
    let n = dim / 4;
    let a = interleave_for_solve(raw, n);
    let at = transpose(&a);
    let ilu = Ilu0::new(&a)?;
    let ilu_t = Ilu0::new(&at)?;
    // Interleaved weights: per cell, the same pv weight for all four slots.
    let sqrt_w: Vec<f64> = (0..dim)
        .map(|i| weights[(i % 4) * n + i / 4].sqrt())
        .collect();

    let mut v = crate::linalg::random_unit_vector(dim, cfg.seed ^ 0x5ca1ab1e);
    let mut sigma2_inv = 0.0;
    for _ in 0..cfg.iters.min(60) {
        // u = W^{1/2} A^{-1} W^{-1/2} v.
        let mut rhs = v.clone();
        for i in 0..dim {
            rhs[i] /= sqrt_w[i];
        }
        let (mut u, _) = bicgstab(&a, &ilu, &rhs, 1e-12, 400)?;
        for i in 0..dim {
            u[i] *= sqrt_w[i];
        }
        // w = (W^{1/2} A^{-1} W^{-1/2})^T u = W^{-1/2} A^{-T} W^{1/2} u.
        let mut rhs_t = u.clone();
        for i in 0..dim {
            rhs_t[i] *= sqrt_w[i];
        }
        let (mut z, _) = bicgstab(&at, &ilu_t, &rhs_t, 1e-12, 400)?;
        for i in 0..dim {
            z[i] /= sqrt_w[i];
        }
        sigma2_inv = z.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        let nz = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nz < 1e-300 {
            break;
        }
        for i in 0..dim {
            v[i] = z[i] / nz;
        }
    }
    if sigma2_inv <= 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 / sigma2_inv.sqrt())
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackoil::{
        CapillaryModel, FluidModel, RelPermModel, StepContext, WellControls,
    };
    use crate::grid::{Grid, RockFields, State};
    use crate::linalg::LinOp;

    struct Fixture {
        grid: Grid,
        rock: RockFields,
        fluid: FluidModel,
        relperm: RelPermModel,
        capillary: CapillaryModel,
        wells: WellControls,
    }

    impl Fixture {
        fn new(grid: Grid) -> Self {
            let mut rock = RockFields::uniform(&grid, 0.25, -4.0);
            for i in 0..grid.n_cells() {
                rock.log_perm[i] += ((i * 29 % 13) as f64 - 6.0) * 0.05;
            }
            Self {
                grid,
                rock,
                fluid: FluidModel::default(),
                relperm: RelPermModel::default(),
                capillary: CapillaryModel::default(),
                wells: WellControls::none(),
            }
        }

        fn inputs(&self, dt: f64) -> ResidualInputs<'_> {
            ResidualInputs {
                grid: &self.grid,
                rock: &self.rock,
                fluid: &self.fluid,
                relperm: &self.relperm,
                capillary: &self.capillary,
                wells: &self.wells,
                ctx: StepContext { dt, t: 0.0 },
            }
        }
    }

    fn generic_states(n: usize) -> (State, State) {
        let mut xp = State::uniform(n, 1000.0, 0.3, 0.5, 0.2);
        let mut xm = xp.clone();
        for i in 0..n {
            xp.pressure[i] = 980.0 + (i as f64 * 0.61).sin() * 60.0;
            xp.sw[i] = 0.28 + 0.07 * ((i as f64) * 0.41).sin();
            xp.sg[i] = 0.14 + 0.05 * ((i as f64) * 0.77).cos();
            xp.so[i] = 1.0 - xp.sw[i] - xp.sg[i];
            xm.pressure[i] = 1010.0 + (i as f64 * 0.3).cos() * 40.0;
            xm.sw[i] = 0.31 + 0.04 * ((i as f64) * 0.9).cos();
            xm.sg[i] = 0.12 + 0.03 * ((i as f64) * 0.5).sin();
            xm.so[i] = 1.0 - xm.sw[i] - xm.sg[i];
        }
        (xp, xm)
    }

    #[test]
    fn pure_accumulation_jacobian_is_analytic() {
        let grid = Grid::new(2, 2, 1, 1.0, 1.0, 1.0).unwrap();
        let mut fx = Fixture::new(grid);
        fx.rock.fault_mult = vec![0.0; fx.grid.n_cells()];
        fx.fluid = FluidModel::simple();
        let n = fx.grid.n_cells();
        let (xp, xm) = generic_states(n);
        let dt = 0.5;
        let jac = residual_jacobian_plus(&xp, &xm, &fx.inputs(dt)).unwrap();
        for i in 0..n {
            // Water row wrt own Sw: phi/dt.
            let d = jac.get(i, n + i);
            assert!((d - fx.rock.porosity[i] / dt).abs() < 1e-5, "got {d}");
            // Oil row wrt own So.
            let d = jac.get(n + i, 2 * n + i);
            assert!((d - fx.rock.porosity[i] / dt).abs() < 1e-5);
            // Constraint row: ones on all three saturations.
            for block in 1..4 {
                let d = jac.get(3 * n + i, block * n + i);
                assert!((d - 1.0).abs() < 1e-6);
            }
            // No coupling to other cells.
            if i + 1 < n {
                assert_eq!(jac.get(i, n + i + 1), 0.0);
            }
        }
    }

    #[test]
    fn minus_jacobian_pure_accumulation_diag() {
        let grid = Grid::new(2, 2, 1, 1.0, 1.0, 1.0).unwrap();
        let mut fx = Fixture::new(grid);
        fx.rock.fault_mult = vec![0.0; fx.grid.n_cells()];
        fx.fluid = FluidModel::simple();
        let n = fx.grid.n_cells();
        let (xp, xm) = generic_states(n);
        let dt = 0.5;
        let jac = residual_jacobian_minus(&xp, &xm, &fx.inputs(dt)).unwrap();
        for i in 0..n {
            let d = jac.get(i, n + i);
            assert!((d + fx.rock.porosity[i] / dt).abs() < 1e-5, "got {d}");
        }
    }

    #[test]
    fn minus_jacobian_has_no_flux_columns() {
        // Upwind weights live in the new state: dR/dx- never couples cells.
        let grid = Grid::new(3, 2, 2, 2.0, 2.0, 1.0).unwrap();
        let fx = Fixture::new(grid);
        let n = fx.grid.n_cells();
        let (xp, xm) = generic_states(n);
        let jac = residual_jacobian_minus(&xp, &xm, &fx.inputs(0.5)).unwrap();
        for row in 0..4 * n {
            let row_cell = row % n;
            for k in jac.indptr[row]..jac.indptr[row + 1] {
                let col_cell = jac.indices[k] % n;
                assert_eq!(
                    row_cell, col_cell,
                    "cross-cell entry in dR/dx- at row {row}, col {}",
                    jac.indices[k]
                );
            }
        }
    }

    #[test]
    fn jacobian_vector_product_matches_directional_fd() {
        let grid = Grid::new(3, 3, 2, 4.0, 4.0, 2.0).unwrap();
        let fx = Fixture::new(grid);
        let n = fx.grid.n_cells();
        let (xp, xm) = generic_states(n);
        let inputs = fx.inputs(0.5);
        let jac = residual_jacobian_plus(&xp, &xm, &inputs).unwrap();

        // Random direction, scaled small relative to the state.
        let v: Vec<f64> = (0..4 * n).map(|k| ((k * 31 % 17) as f64 - 8.0) / 8.0).collect();
        let jv = jac.matvec_alloc(&v);

        let h = 1e-6;
        let perturb = |sign: f64| -> State {
            let flat = xp.to_flat();
            let moved: Vec<f64> = flat
                .iter()
                .zip(&v)
                .map(|(x, vi)| x + sign * h * vi)
                .collect();
            State::from_flat(&moved).unwrap()
        };
        let r_hi = super::super::residual(&perturb(1.0), &xm, &inputs).unwrap();
        let r_lo = super::super::residual(&perturb(-1.0), &xm, &inputs).unwrap();
        let fd: Vec<f64> = r_hi
            .iter()
            .zip(&r_lo)
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect();

        let num: f64 = jv.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(num / den < 1e-5, "rel err {}", num / den);
    }

    #[test]
    fn minus_jacobian_directional_fd() {
        let grid = Grid::new(3, 2, 2, 4.0, 4.0, 2.0).unwrap();
        let fx = Fixture::new(grid);
        let n = fx.grid.n_cells();
        let (xp, xm) = generic_states(n);
        let inputs = fx.inputs(0.5);
        let jac = residual_jacobian_minus(&xp, &xm, &inputs).unwrap();
        let v: Vec<f64> = (0..4 * n).map(|k| ((k * 13 % 11) as f64 - 5.0) / 5.0).collect();
        let jv = jac.matvec_alloc(&v);
        let h = 1e-6;
        let perturb = |sign: f64| -> State {
            let flat = xm.to_flat();
            let moved: Vec<f64> = flat
                .iter()
                .zip(&v)
                .map(|(x, vi)| x + sign * h * vi)
                .collect();
            State::from_flat(&moved).unwrap()
        };
        let r_hi = super::super::residual(&xp, &perturb(1.0), &inputs).unwrap();
        let r_lo = super::super::residual(&xp, &perturb(-1.0), &inputs).unwrap();
        let fd: Vec<f64> = r_hi
            .iter()
            .zip(&r_lo)
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect();
        let num: f64 = jv.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(num / den < 1e-5, "rel err {}", num / den);
    }

    #[test]
    fn probe_agrees_with_dense_eigensolve() {
        let grid = Grid::new(2, 2, 2, 4.0, 4.0, 2.0).unwrap();
        let fx = Fixture::new(grid);
        let n = fx.grid.n_cells();
        let dim = 4 * n;
        let (xp, xm) = generic_states(n);
        let inputs = fx.inputs(0.05);

        let est = coercivity_probe(&xp, &xm, &inputs, ProbeConfig { iters: 40000, seed: 1 }).unwrap();

        // Dense oracle: assemble the symmetrised paired operator column by column.
        let jac = residual_jacobian_plus(&xp, &xm, &inputs).unwrap();
        let w = crate::grid::pv_weights_4n(&fx.rock, &fx.grid);
        let sw: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
        let mut dense = nalgebra::DMatrix::<f64>::zeros(dim, dim);
        for c in 0..dim {
            let mut xv = vec![0.0; dim];
            xv[c] = 1.0;
            for i in 0..dim {
                xv[i] /= sw[i];
            }
            let y = jac.apply(&xv);
            let mut py = vec![0.0; dim];
            super::pair_permute(&y, n, &mut py);
            for r in 0..dim {
                dense[(r, c)] += 0.5 * py[r] * sw[r];
                dense[(c, r)] += 0.5 * py[r] * sw[r];
            }
        }
        let eig = dense.symmetric_eigen();
        let lam_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(
            (est.lambda_min - lam_min).abs() <= 1e-6 * lam_min.abs().max(1e-9),
            "probe {} vs dense {lam_min}",
            est.lambda_min
        );

        // Singular-value oracle on the same point.
        let interleaved = super::interleave_for_solve(&jac, n);
        let mut dense_a = nalgebra::DMatrix::<f64>::zeros(dim, dim);
        let sw_int: Vec<f64> = (0..dim).map(|i| w[(i % 4) * n + i / 4].sqrt()).collect();
        for r in 0..dim {
            for k in interleaved.indptr[r]..interleaved.indptr[r + 1] {
                let c = interleaved.indices[k];
                dense_a[(r, c)] = sw_int[r] * interleaved.data[k] / sw_int[c];
            }
        }
        let svd = dense_a.svd(false, false);
        let sig_min = svd
            .singular_values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(
            (est.sigma_min - sig_min).abs() <= 1e-3 * sig_min.abs().max(1e-12),
            "sigma probe {} vs dense {sig_min}",
            est.sigma_min
        );
    }

    #[test]
    fn probe_flags_over_large_dt() {
        let grid = Grid::new(3, 3, 1, 1.0, 1.0, 1.0).unwrap();
        let fx = Fixture::new(grid);
        let n = fx.grid.n_cells();
        let (xp, xm) = generic_states(n);
        let small = coercivity_probe(&xp, &xm, &fx.inputs(1e-3), ProbeConfig::default()).unwrap();
        let large = coercivity_probe(&xp, &xm, &fx.inputs(1e5), ProbeConfig::default()).unwrap();
        let phi_min = fx.rock.porosity.iter().cloned().fold(f64::INFINITY, f64::min);
        // Accumulation-dominated: the probe sits near zero (the constraint/
        // pressure corner caps it at zero from above); flux-dominated: it
        // falls well below the accumulation bound.
        assert!(small.lambda_min > -0.1, "small-dt probe {}", small.lambda_min);
        assert!(small.lambda_min > large.lambda_min);
        assert!(
            large.lambda_min < phi_min / 1e5,
            "large-dt probe {} not below accumulation bound",
            large.lambda_min
        );
        assert!(small.sigma_min > 0.0);
    }
}
