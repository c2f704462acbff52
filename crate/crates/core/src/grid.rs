//! Cell geometry, pore-volume weighted inner products, admissible states, and
//! ensemble metrics.
//!
//! Flat cell indexing is fixed once here and inherited by every other module:
//! `flat = (ix * ny + iy) * nz + iz`, i.e. z varies fastest, then y, then x.

use crate::error::{CoreError, Result};

/// Uniform Cartesian cell grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Cell edge lengths, consistent length units.
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, nz: usize, dx: f64, dy: f64, dz: f64) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(CoreError::Config("grid extents must be >= 1".into()));
        }
        if dx <= 0.0 || dy <= 0.0 || dz <= 0.0 {
            return Err(CoreError::Config("cell edge lengths must be > 0".into()));
        }
        Ok(Self {
            nx,
            ny,
            nz,
            dx,
            dy,
            dz,
        })
    }

    /// Total cell count N = nx*ny*nz.
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Flat index of cell (ix, iy, iz); z-fastest ordering.
    #[inline]
    pub fn flat(&self, ix: usize, iy: usize, iz: usize) -> usize {
        debug_assert!(ix < self.nx && iy < self.ny && iz < self.nz);
        (ix * self.ny + iy) * self.nz + iz
    }

    /// Inverse of [`Grid::flat`].
    #[inline]
    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        debug_assert!(i < self.n_cells());
        let iz = i % self.nz;
        let rest = i / self.nz;
        let iy = rest % self.ny;
        let ix = rest / self.ny;
        (ix, iy, iz)
    }

    /// All cells share the same volume on a uniform grid.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dy * self.dz
    }

    /// Depth of the cell centre, increasing with iz (used by gravity terms).
    #[inline]
    pub fn cell_depth(&self, i: usize) -> f64 {
        let (_, _, iz) = self.coords(i);
        (iz as f64 + 0.5) * self.dz
    }

    /// Face area and centre distance between neighbours along `axis` (0=x,1=y,2=z).
    pub fn face_geometry(&self, axis: usize) -> (f64, f64) {
        match axis {
            0 => (self.dy * self.dz, self.dx),
            1 => (self.dx * self.dz, self.dy),
            2 => (self.dx * self.dy, self.dz),
            _ => unreachable!("axis must be 0, 1, or 2"),
        }
    }

    /// Iterate interior faces as (cell_i, cell_j, axis) with j the +axis neighbour of i.
    pub fn interior_faces(&self) -> Vec<(usize, usize, usize)> {
        let mut faces =
            Vec::with_capacity(3 * self.n_cells());
        for ix in 0..self.nx {
            for iy in 0..self.ny {
                for iz in 0..self.nz {
                    let i = self.flat(ix, iy, iz);
                    if ix + 1 < self.nx {
                        faces.push((i, self.flat(ix + 1, iy, iz), 0));
                    }
                    if iy + 1 < self.ny {
                        faces.push((i, self.flat(ix, iy + 1, iz), 1));
                    }
                    if iz + 1 < self.nz {
                        faces.push((i, self.flat(ix, iy, iz + 1), 2));
                    }
                }
            }
        }
        faces
    }

    /// Axis along which two cells are adjacent, if they are.
    pub fn adjacency_axis(&self, i: usize, j: usize) -> Option<usize> {
        let (ix, iy, iz) = self.coords(i);
        let (jx, jy, jz) = self.coords(j);
        let d = (
            ix.abs_diff(jx),
            iy.abs_diff(jy),
            iz.abs_diff(jz),
        );
        match d {
            (1, 0, 0) => Some(0),
            (0, 1, 0) => Some(1),
            (0, 0, 1) => Some(2),
            _ => None,
        }
    }
}

/// Static reservoir parameter fields on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct RockFields {
    /// Porosity per cell, each in (0, 1).
    pub porosity: Vec<f64>,
    /// Natural log of (horizontal) absolute permeability per cell.
    pub log_perm: Vec<f64>,
    /// Fault transmissibility multiplier per cell, each in [0, 1].
    pub fault_mult: Vec<f64>,
    /// Vertical-to-horizontal permeability ratio applied on z faces.
    pub kv_kh: f64,
}

impl RockFields {
    pub fn uniform(grid: &Grid, porosity: f64, log_perm: f64) -> Self {
        let n = grid.n_cells();
        Self {
            porosity: vec![porosity; n],
            log_perm: vec![log_perm; n],
            fault_mult: vec![1.0; n],
            kv_kh: 0.1,
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let n = grid.n_cells();
        for (name, field) in [
            ("porosity", &self.porosity),
            ("log_perm", &self.log_perm),
            ("fault_mult", &self.fault_mult),
        ] {
            if field.len() != n {
                return Err(CoreError::dimension(name, n, field.len()));
            }
        }
        if self.porosity.iter().any(|&p| p <= 0.0 || p >= 1.0) {
            return Err(CoreError::Constraint("porosity must lie in (0, 1)".into()));
        }
        if self.fault_mult.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
            return Err(CoreError::Constraint(
                "fault multiplier must lie in [0, 1]".into(),
            ));
        }
        if self.kv_kh <= 0.0 {
            return Err(CoreError::Constraint("kv/kh must be > 0".into()));
        }
        Ok(())
    }

    /// Horizontal absolute permeability of cell i.
    #[inline]
    pub fn perm(&self, i: usize) -> f64 {
        self.log_perm[i].exp()
    }

    /// Directional permeability: z faces carry the kv/kh ratio.
    #[inline]
    pub fn perm_axis(&self, i: usize, axis: usize) -> f64 {
        let k = self.perm(i);
        if axis == 2 {
            self.kv_kh * k
        } else {
            k
        }
    }
}

/// A state component label; also indexes the four blocks of 4N-vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    Pressure,
    Water,
    Oil,
    Gas,
}

impl Component {
    pub const ALL: [Component; 4] = [
        Component::Pressure,
        Component::Water,
        Component::Oil,
        Component::Gas,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Component::Pressure => "pressure",
            Component::Water => "sw",
            Component::Oil => "so",
            Component::Gas => "sg",
        }
    }
}

/// Per-cell reservoir state (p, Sw, So, Sg).
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub pressure: Vec<f64>,
    pub sw: Vec<f64>,
    pub so: Vec<f64>,
    pub sg: Vec<f64>,
}

impl State {
    pub fn new(pressure: Vec<f64>, sw: Vec<f64>, so: Vec<f64>, sg: Vec<f64>) -> Result<Self> {
        let n = pressure.len();
        for (name, v) in [("sw", &sw), ("so", &so), ("sg", &sg)] {
            if v.len() != n {
                return Err(CoreError::dimension(name, n, v.len()));
            }
        }
        Ok(Self {
            pressure,
            sw,
            so,
            sg,
        })
    }

    pub fn uniform(n: usize, p: f64, sw: f64, so: f64, sg: f64) -> Self {
        Self {
            pressure: vec![p; n],
            sw: vec![sw; n],
            so: vec![so; n],
            sg: vec![sg; n],
        }
    }

    pub fn n(&self) -> usize {
        self.pressure.len()
    }

    pub fn component(&self, c: Component) -> &[f64] {
        match c {
            Component::Pressure => &self.pressure,
            Component::Water => &self.sw,
            Component::Oil => &self.so,
            Component::Gas => &self.sg,
        }
    }

    /// Flattened [p | Sw | So | Sg] vector of length 4N.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(4 * self.n());
        out.extend_from_slice(&self.pressure);
        out.extend_from_slice(&self.sw);
        out.extend_from_slice(&self.so);
        out.extend_from_slice(&self.sg);
        out
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 4 != 0 {
            return Err(CoreError::dimension("flat state", 4, flat.len() % 4));
        }
        let n = flat.len() / 4;
        Ok(Self {
            pressure: flat[..n].to_vec(),
            sw: flat[n..2 * n].to_vec(),
            so: flat[2 * n..3 * n].to_vec(),
            sg: flat[3 * n..].to_vec(),
        })
    }

    /// Checks the admissibility invariants (positivity, unit saturation sum).
    pub fn check_admissible(&self) -> Result<()> {
        for i in 0..self.n() {
            if self.pressure[i] <= 0.0 {
                return Err(CoreError::Constraint(format!(
                    "pressure must be > 0 (cell {i}: {})",
                    self.pressure[i]
                )));
            }
            if self.sw[i] < 0.0 || self.so[i] < 0.0 || self.sg[i] < 0.0 {
                return Err(CoreError::Constraint(format!(
                    "saturations must be >= 0 (cell {i})"
                )));
            }
            let sum = self.sw[i] + self.so[i] + self.sg[i];
            if (sum - 1.0).abs() > 1e-10 {
                return Err(CoreError::Constraint(format!(
                    "saturation sum must be 1 (cell {i}: {sum})"
                )));
            }
        }
        Ok(())
    }
}

/// Pore-volume weighted inner product: sum_i phi_i |Omega_i| a_i b_i.
pub fn pv_inner(a: &[f64], b: &[f64], rock: &RockFields, grid: &Grid) -> Result<f64> {
    let n = grid.n_cells();
    if a.len() != n {
        return Err(CoreError::dimension("pv_inner lhs", n, a.len()));
    }
    if b.len() != n {
        return Err(CoreError::dimension("pv_inner rhs", n, b.len()));
    }
    let vol = grid.cell_volume();
    Ok(a.iter()
        .zip(b)
        .zip(&rock.porosity)
        .map(|((&ai, &bi), &phi)| phi * vol * ai * bi)
        .sum())
}

/// Pore-volume weighted norm induced by [`pv_inner`].
pub fn pv_norm(a: &[f64], rock: &RockFields, grid: &Grid) -> Result<f64> {
    Ok(pv_inner(a, a, rock, grid)?.sqrt())
}

/// The phi-weights of a length-4N vector (per-cell weight repeated per block).
pub fn pv_weights_4n(rock: &RockFields, grid: &Grid) -> Vec<f64> {
    let vol = grid.cell_volume();
    let mut w = Vec::with_capacity(4 * rock.porosity.len());
    for _ in 0..4 {
        w.extend(rock.porosity.iter().map(|&phi| phi * vol));
    }
    w
}

/// Pv-norm of a length-4N vector (state difference, residual, ...).
pub fn pv_norm_4n(v: &[f64], rock: &RockFields, grid: &Grid) -> Result<f64> {
    let n = grid.n_cells();
    if v.len() != 4 * n {
        return Err(CoreError::dimension("pv_norm_4n", 4 * n, v.len()));
    }
    let vol = grid.cell_volume();
    let mut acc = 0.0;
    for block in 0..4 {
        for i in 0..n {
            let x = v[block * n + i];
            acc += rock.porosity[i] * vol * x * x;
        }
    }
    Ok(acc.sqrt())
}

/// Configuration for [`project_state`].
#[derive(Debug, Clone, Copy)]
pub struct ProjectionConfig {
    /// Pressure floor, keeps the positivity invariant testable.
    pub p_min: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self { p_min: 1.0 }
    }
}

/// Projects raw per-cell values onto the admissible state set: saturations are
/// clipped to >= 0 then rescaled to unit sum, pressure is floored at `p_min`.
/// Idempotent.
pub fn project_state(raw: &State, cfg: ProjectionConfig) -> Result<State> {
    let n = raw.n();
    let mut out = raw.clone();
    for i in 0..n {
        out.pressure[i] = raw.pressure[i].max(cfg.p_min);
        let sw = raw.sw[i].max(0.0);
        let so = raw.so[i].max(0.0);
        let sg = raw.sg[i].max(0.0);
        let sum = sw + so + sg;
        if sum <= 0.0 {
            return Err(CoreError::Constraint(format!(
                "cell {i}: all saturations clipped to zero, no valid rescale"
            )));
        }
        out.sw[i] = sw / sum;
        out.so[i] = so / sum;
        out.sg[i] = sg / sum;
    }
    Ok(out)
}

/// Ensemble of state trajectories sharing one grid and horizon.
#[derive(Debug, Clone)]
pub struct EnsembleTrajectory {
    /// members[m][n] is the state of member m at step n; each member holds T+1 states.
    pub members: Vec<Vec<State>>,
}

impl EnsembleTrajectory {
    pub fn new(members: Vec<Vec<State>>) -> Result<Self> {
        if members.is_empty() {
            return Err(CoreError::Config("ensemble needs >= 1 member".into()));
        }
        let horizon = members[0].len();
        if members.iter().any(|m| m.len() != horizon) {
            return Err(CoreError::Config(
                "all ensemble members must share the horizon".into(),
            ));
        }
        Ok(Self { members })
    }

    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    /// Number of stored states per member (T + 1).
    pub fn n_states(&self) -> usize {
        self.members[0].len()
    }
}

/// Time-resolved coefficient of determination per step for one state component.
///
/// Steps with zero ensemble spread are reported as NaN rather than skipped.
/// `rocks` holds either one shared rock field or one per member.
pub fn r2_per_step(
    predicted: &EnsembleTrajectory,
    truth: &EnsembleTrajectory,
    component: Component,
    rocks: &[RockFields],
    grid: &Grid,
) -> Result<Vec<f64>> {
    let ns = truth.n_members();
    if predicted.n_members() != ns {
        return Err(CoreError::dimension(
            "r2 member count",
            ns,
            predicted.n_members(),
        ));
    }
    if predicted.n_states() != truth.n_states() {
        return Err(CoreError::dimension(
            "r2 horizon",
            truth.n_states(),
            predicted.n_states(),
        ));
    }
    if ns < 2 {
        return Err(CoreError::Config("r2 needs >= 2 ensemble members".into()));
    }
    if rocks.len() != 1 && rocks.len() != ns {
        return Err(CoreError::dimension("r2 rock fields", ns, rocks.len()));
    }
    let rock_of = |m: usize| if rocks.len() == 1 { &rocks[0] } else { &rocks[m] };

    let n = grid.n_cells();
    let steps = truth.n_states();
    let mut out = Vec::with_capacity(steps);
    for step in 0..steps {
        // Ensemble mean of the true states at this step.
        let mut mean = vec![0.0; n];
        for m in 0..ns {
            for (mi, xi) in mean.iter_mut().zip(truth.members[m][step].component(component)) {
                *mi += xi;
            }
        }
        for mi in &mut mean {
            *mi /= ns as f64;
        }

        let mut num = 0.0;
        let mut den = 0.0;
        let mut diff = vec![0.0; n];
        for m in 0..ns {
            let hat = predicted.members[m][step].component(component);
            let tru = truth.members[m][step].component(component);
            for i in 0..n {
                diff[i] = hat[i] - tru[i];
            }
            num += pv_inner(&diff, &diff, rock_of(m), grid)?;
            for i in 0..n {
                diff[i] = tru[i] - mean[i];
            }
            den += pv_inner(&diff, &diff, rock_of(m), grid)?;
        }
        out.push(if den == 0.0 { f64::NAN } else { 1.0 - num / den });
    }
    Ok(out)
}
