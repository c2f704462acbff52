//! The discrete finite-volume black-oil residual operator, its Jacobians, and
//! the coercivity probe.
//!
//! The residual R(x+, x-; u, c, tau) maps two length-4N states to a length-4N
//! vector with blocks ordered [water | oil | gas | constraint]. Water and oil
//! blocks carry accumulation minus upwinded Darcy flux minus well sources; the
//! gas block tracks free plus dissolved gas; the fourth block is the
//! saturation-sum constraint row.

pub mod jacobian;
mod residual;
pub mod tape;

pub use jacobian::{
    coercivity_probe, residual_jacobian_minus, residual_jacobian_plus, CoercivityProbe,
    ProbeConfig,
};
pub use residual::{face_transmissibility, residual, residual_into};

use crate::error::{CoreError, Result};

/// Pressure-dependent formation volume factor B(p) = b_ref / (1 + c (p - p_ref)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fvf {
    pub b_ref: f64,
    pub compressibility: f64,
    pub p_ref: f64,
}

impl Fvf {
    pub fn eval(&self, p: f64) -> f64 {
        // Keep B positive even far outside the calibrated range.
        let denom = (1.0 + self.compressibility * (p - self.p_ref)).max(1e-2);
        self.b_ref / denom
    }
}

/// Solution gas-oil ratio: affine in p, clipped at the bubble-point plateau.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolutionGor {
    pub slope: f64,
    pub p_bubble: f64,
}

impl SolutionGor {
    pub fn eval(&self, p: f64) -> f64 {
        (self.slope * p.min(self.p_bubble)).max(0.0)
    }
}

/// Phase viscosities, densities, and PVT functions.
///
/// Densities are expressed as pressure gradient per unit depth (rho * g with
/// g = 1), so gravity potentials are rho * depth directly.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidModel {
    pub mu_w: f64,
    pub mu_o: f64,
    pub mu_g: f64,
    pub rho_w: f64,
    pub rho_o: f64,
    pub rho_g: f64,
    pub b_o: Fvf,
    pub b_g: Fvf,
    pub r_so: SolutionGor,
    /// Gravitational acceleration multiplier; 1.0 folds g into the densities.
    pub gravity: f64,
}

impl Default for FluidModel {
    fn default() -> Self {
        Self {
            mu_w: 0.5,
            mu_o: 2.0,
            mu_g: 0.3,
            rho_w: 0.433,
            rho_o: 0.35,
            rho_g: 0.30,
            // Constant oil FVF above the bubble point: dissolved gas then
            // moves exactly with the oil flux and free gas stays
            // nonnegative without variable switching.
            b_o: Fvf {
                b_ref: 1.2,
                compressibility: 0.0,
                p_ref: 1000.0,
            },
            b_g: Fvf {
                b_ref: 0.9,
                compressibility: 8e-4,
                p_ref: 1000.0,
            },
            // Dissolved gas expressed as a reservoir-volume ratio, with the
            // bubble point below the operating pressure: on the plateau the
            // oil is saturated, so injected gas stays free and saturations
            // stay nonnegative without variable switching.
            r_so: SolutionGor {
                slope: 1e-3,
                p_bubble: 300.0,
            },
            gravity: 1.0,
        }
    }
}

impl FluidModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mu_w", self.mu_w),
            ("mu_o", self.mu_o),
            ("mu_g", self.mu_g),
            ("rho_w", self.rho_w),
            ("rho_o", self.rho_o),
            ("rho_g", self.rho_g),
        ] {
            if v <= 0.0 {
                return Err(CoreError::Config(format!("{name} must be > 0")));
            }
        }
        if self.r_so.slope < 0.0 {
            return Err(CoreError::Config("r_so slope must be >= 0".into()));
        }
        Ok(())
    }

    /// A fluid with constant unit FVFs and no dissolved gas; keeps the gas
    /// block structurally identical to water/oil. Used by analytic fixtures.
    pub fn simple() -> Self {
        Self {
            b_o: Fvf {
                b_ref: 1.0,
                compressibility: 0.0,
                p_ref: 0.0,
            },
            b_g: Fvf {
                b_ref: 1.0,
                compressibility: 0.0,
                p_ref: 0.0,
            },
            r_so: SolutionGor {
                slope: 0.0,
                p_bubble: 0.0,
            },
            rho_g: 1.0,
            ..Self::default()
        }
    }
}

/// Corey relative permeability with connate-water and residual-oil endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelPermModel {
    pub swc: f64,
    pub sor: f64,
    pub n_w: f64,
    pub n_o: f64,
    pub n_g: f64,
    pub kw_end: f64,
    pub ko_end: f64,
    pub kg_end: f64,
}

impl Default for RelPermModel {
    fn default() -> Self {
        Self {
            swc: 0.20,
            sor: 0.20,
            n_w: 2.0,
            n_o: 2.0,
            n_g: 2.0,
            // Endpoints below one keep the [0, 1] clamp outside the
            // reachable saturation range, so the curves stay smooth where
            // Newton linearises them.
            kw_end: 0.9,
            ko_end: 0.9,
            kg_end: 0.9,
        }
    }
}

impl RelPermModel {
    #[inline]
    fn movable(&self) -> f64 {
        1.0 - self.swc - self.sor
    }

    #[inline]
    fn corey(s: f64, n: f64, k_end: f64) -> f64 {
        // The quadratic default dominates the flux assembly; skip powf there.
        let p = if n == 2.0 { s * s } else { s.powf(n) };
        (k_end * p).clamp(0.0, 1.0)
    }

    pub fn krw(&self, sw: f64) -> f64 {
        let s = ((sw - self.swc) / self.movable()).clamp(0.0, 1.0);
        Self::corey(s, self.n_w, self.kw_end)
    }

    pub fn kro(&self, so: f64) -> f64 {
        let s = ((so - self.sor) / self.movable()).clamp(0.0, 1.0);
        Self::corey(s, self.n_o, self.ko_end)
    }

    pub fn krg(&self, sg: f64) -> f64 {
        let s = (sg / self.movable()).clamp(0.0, 1.0);
        Self::corey(s, self.n_g, self.kg_end)
    }

    /// All three Corey values for a point on the saturation simplex.
    pub fn relperm(&self, sw: f64, so: f64, sg: f64) -> (f64, f64, f64) {
        (self.krw(sw), self.kro(so), self.krg(sg))
    }
}

/// Linear monotone capillary pressure relations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapillaryModel {
    /// P_cwo(Sw) = eps_cwo * (1 - Sw): strictly decreasing in Sw when > 0.
    pub eps_cwo: f64,
    /// P_cog(Sg) = eps_cog * Sg: strictly increasing in Sg when > 0.
    pub eps_cog: f64,
}

impl Default for CapillaryModel {
    fn default() -> Self {
        Self {
            eps_cwo: 2.0,
            eps_cog: 1.0,
        }
    }
}

impl CapillaryModel {
    pub fn validate(&self) -> Result<()> {
        if self.eps_cwo < 0.0 || self.eps_cog < 0.0 {
            return Err(CoreError::Config("capillary slopes must be >= 0".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn p_cwo(&self, sw: f64) -> f64 {
        self.eps_cwo * (1.0 - sw)
    }

    #[inline]
    pub fn p_cog(&self, sg: f64) -> f64 {
        self.eps_cog * sg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WellKind {
    Injector,
    Producer,
}

/// A fixed-rate cell source. Rates are signed volumes per unit time:
/// injectors positive, producers negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Well {
    pub cell: usize,
    pub kind: WellKind,
    pub q_o: f64,
    pub q_w: f64,
    pub q_g: f64,
}

/// Well controls for one timestep.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WellControls {
    pub wells: Vec<Well>,
}

impl WellControls {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self, n_cells: usize) -> Result<()> {
        for w in &self.wells {
            if w.cell >= n_cells {
                return Err(CoreError::Config(format!(
                    "well cell index {} out of range (N = {n_cells})",
                    w.cell
                )));
            }
            if !(w.q_o.is_finite() && w.q_w.is_finite() && w.q_g.is_finite()) {
                return Err(CoreError::Config("well rates must be finite".into()));
            }
        }
        Ok(())
    }

    /// Per-cell source rates (volume/time) for each phase: (water, oil, gas).
    pub fn rasterize(&self, n_cells: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut qw = vec![0.0; n_cells];
        let mut qo = vec![0.0; n_cells];
        let mut qg = vec![0.0; n_cells];
        for w in &self.wells {
            qw[w.cell] += w.q_w;
            qo[w.cell] += w.q_o;
            qg[w.cell] += w.q_g;
        }
        (qw, qo, qg)
    }
}

/// Temporal scalars of a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepContext {
    pub dt: f64,
    pub t: f64,
}

impl StepContext {
    pub fn validate(&self) -> Result<()> {
        if self.dt <= 0.0 {
            return Err(CoreError::Config(format!("dt must be > 0 (got {})", self.dt)));
        }
        if self.t < 0.0 {
            return Err(CoreError::Config("t must be >= 0".into()));
        }
        Ok(())
    }
}

/// Everything the residual needs besides the two states: the xi_n bundle
/// minus the state itself.
#[derive(Debug, Clone, Copy)]
pub struct ResidualInputs<'a> {
    pub grid: &'a crate::grid::Grid,
    pub rock: &'a crate::grid::RockFields,
    pub fluid: &'a FluidModel,
    pub relperm: &'a RelPermModel,
    pub capillary: &'a CapillaryModel,
    pub wells: &'a WellControls,
    pub ctx: StepContext,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn relperm_endpoints_are_zero() {
        let rp = RelPermModel::default();
        assert_eq!(rp.krw(0.2), 0.0);
        assert_eq!(rp.kro(0.2), 0.0);
        assert_eq!(rp.krg(0.0), 0.0);
    }

    #[test]
    fn relperm_hand_value() {
        // Unit endpoint: ((0.6 - 0.2) / 0.6)^2 = 0.4444...
        let rp = RelPermModel {
            kw_end: 1.0,
            ..RelPermModel::default()
        };
        assert_relative_eq!(rp.krw(0.6), (0.4f64 / 0.6).powi(2), epsilon = 1e-12);
    }

    #[test]
    fn relperm_bounded_and_monotone() {
        let rp = RelPermModel::default();
        let mut prev = (0.0, 0.0, 0.0);
        for k in 0..=100 {
            let s = k as f64 / 100.0;
            let (kw, ko, kg) = (rp.krw(s), rp.kro(s), rp.krg(s));
            for v in [kw, ko, kg] {
                assert!((0.0..=1.0).contains(&v));
            }
            if k > 0 {
                assert!(kw >= prev.0);
                assert!(ko >= prev.1);
                assert!(kg >= prev.2);
            }
            prev = (kw, ko, kg);
        }
    }

    #[test]
    fn fvf_positive_and_monotone() {
        let f = FluidModel::default();
        let mut prev_bo = f64::INFINITY;
        let mut prev_rso = -1.0;
        for k in 0..60 {
            let p = 100.0 + k as f64 * 50.0;
            let bo = f.b_o.eval(p);
            let bg = f.b_g.eval(p);
            let rso = f.r_so.eval(p);
            assert!(bo > 0.0 && bg > 0.0 && rso >= 0.0);
            assert!(bo <= prev_bo + 1e-12);
            assert!(rso >= prev_rso);
            prev_bo = bo;
            prev_rso = rso;
        }
        // Plateau above the bubble point.
        assert_eq!(f.r_so.eval(2500.0), f.r_so.eval(800.0));
    }

    #[test]
    fn capillary_monotonicity() {
        let c = CapillaryModel::default();
        assert!(c.p_cwo(0.3) > c.p_cwo(0.7));
        assert!(c.p_cog(0.7) > c.p_cog(0.3));
    }
}
