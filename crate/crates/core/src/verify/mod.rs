//! Closed-form bound evaluators and empirical checkers for the stability,
//! coupling, bias-decay, and spectral-rate claims.

mod bias;
mod coupling;
mod spectral;
mod tracks;

pub use bias::{tbptt_bias_curve, BiasCurve};
pub use coupling::{check_rollout, coupled_divergence, BoundReport, CouplingScenario};
pub use spectral::{
    jacobian_gap, operator_norm, phi_weights, spectral_radius, DifferenceJacobian, MapJacobian,
    SimulatorJacobian, SurrogateJacobian,
};
pub use tracks::{component_error_tracks, ComponentTracks};

use crate::error::{CoreError, Result};

/// Geometric accumulation bound eps (L^n - 1) / (L - 1); the L = 1 branch
/// (n eps) is taken within 1e-12 of unity, keeping the formula continuous.
pub fn bound_geometric(eps: f64, l: f64, n: usize) -> f64 {
    if (l - 1.0).abs() < 1e-12 {
        n as f64 * eps
    } else {
        eps * (l.powi(n as i32) - 1.0) / (l - 1.0)
    }
}

/// Uniform-in-time contraction bound eps / (1 - rho), for rho < 1.
pub fn bound_uniform(eps: f64, rho: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&rho) {
        return Err(CoreError::Domain(format!(
            "uniform bound needs 0 <= rho < 1, got {rho}"
        )));
    }
    Ok(eps / (1.0 - rho))
}

/// Population-risk gap bound L_ell eps / T * (L^T - T L + T - 1) / (L - 1)^2,
/// with the L -> 1 limit L_ell eps (T - 1) / 2 taken near unity where the
/// direct formula cancels catastrophically.
pub fn risk_gap_bound(eps: f64, l: f64, t: usize, l_ell: f64) -> f64 {
    let tf = t as f64;
    if (l - 1.0).abs() < 1e-6 {
        return l_ell * eps * (tf - 1.0) / 2.0;
    }
    l_ell * eps / tf * (l.powi(t as i32) - tf * l + tf - 1.0) / ((l - 1.0) * (l - 1.0))
}

/// Bias-variance objective of the truncated estimator:
/// C_g^2 rho^{2K} / (1 - rho)^2 + sigma^2 K / T.
pub fn mse_window(k: f64, t: usize, c_g: f64, sigma: f64, rho: f64) -> Result<f64> {
    if !(0.0 < rho && rho < 1.0) {
        return Err(CoreError::Domain(format!("mse_window needs rho in (0,1), got {rho}")));
    }
    Ok(c_g * c_g * rho.powf(2.0 * k) / ((1.0 - rho) * (1.0 - rho))
        + sigma * sigma * k / t as f64)
}

/// Closed-form window size (natural logs) that minimises [`mse_window`],
/// plus the integer minimiser over 1..=T.
pub fn optimal_window(t: usize, c_g: f64, sigma: f64, rho: f64) -> Result<(f64, usize)> {
    if !(0.0 < rho && rho < 1.0) {
        return Err(CoreError::Domain(format!(
            "optimal window needs rho in (0,1), got {rho}"
        )));
    }
    if sigma <= 0.0 || t == 0 {
        return Err(CoreError::Domain("optimal window needs sigma > 0, T >= 1".into()));
    }
    let log_inv_rho = (1.0 / rho).ln();
    let k_star = ((2.0 * t as f64 * c_g * c_g * log_inv_rho)
        / (sigma * sigma * (1.0 - rho) * (1.0 - rho)))
        .ln()
        / (2.0 * log_inv_rho);
    let mut best_k = 1;
    let mut best = f64::INFINITY;
    for k in 1..=t {
        let v = mse_window(k as f64, t, c_g, sigma, rho)?;
        if v < best {
            best = v;
            best_k = k;
        }
    }
    Ok((k_star, best_k))
}

/// Ratio of the contractive AR bound to the expansive one-step bound:
/// [eps / (1 - L_tilde)] / [eps (L^n - 1)/(L - 1)]. Tends to zero in n.
pub fn ar_advantage_ratio(eps: f64, l: f64, l_tilde: f64, n: usize) -> Result<f64> {
    if !(l_tilde < 1.0 && l > 1.0) {
        return Err(CoreError::Domain(format!(
            "advantage ratio needs L_tilde < 1 < L (got {l_tilde}, {l})"
        )));
    }
    if eps <= 0.0 || n == 0 {
        return Err(CoreError::Domain("advantage ratio needs eps > 0, n >= 1".into()));
    }
    let ar = eps / (1.0 - l_tilde);
    let one_one = bound_geometric(eps, l, n);
    Ok(ar / one_one)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn geometric_bound_values() {
        assert_relative_eq!(bound_geometric(0.01, 1.0, 7), 0.07);
        // Direct geometric-sum evaluation at the gas-failure constants.
        let v = bound_geometric(3e-3, 1.15, 12);
        assert_relative_eq!(v, 0.0870, epsilon = 5e-5);
        // Contractive limit approaches eps / (1 - L).
        let v = bound_geometric(0.01, 0.5, 200);
        assert_relative_eq!(v, 0.02, epsilon = 1e-10);
    }

    #[test]
    fn geometric_bound_is_continuous_at_one() {
        let n = 9;
        let eps = 0.37;
        let at_one = bound_geometric(eps, 1.0, n);
        for l in [1.0 - 1e-9, 1.0 + 1e-9] {
            let v = bound_geometric(eps, l, n);
            assert!(
                (v - at_one).abs() < 1e-6 * at_one,
                "bound jumps at L = {l}: {v} vs {at_one}"
            );
        }
    }

    #[test]
    fn uniform_bound_values_and_domain() {
        assert_eq!(bound_uniform(0.5, 0.0).unwrap(), 0.5);
        assert_relative_eq!(bound_uniform(1e-3, 0.9).unwrap(), 1e-2);
        assert!(bound_uniform(1.0, 1.0).is_err());
        // Monotone increasing in rho.
        let mut prev = 0.0;
        for i in 0..9 {
            let v = bound_uniform(1.0, i as f64 * 0.1).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn risk_gap_values() {
        // T = 1: no gap.
        assert_relative_eq!(risk_gap_bound(0.3, 1.4, 1, 2.0), 0.0, epsilon = 1e-12);
        // L = 1 limit, T = 3, eps = 0.1, L_ell = 1 -> 0.1.
        assert_relative_eq!(risk_gap_bound(0.1, 1.0, 3, 1.0), 0.1);
        // Exponential growth in the horizon for L > 1.
        assert!(risk_gap_bound(0.1, 1.2, 20, 1.0) > risk_gap_bound(0.1, 1.0, 20, 1.0));
    }

    #[test]
    fn optimal_window_reference_point() {
        let (k_star, k_int) = optimal_window(1000, 1.0, 1.0, 0.5).unwrap();
        assert!((k_star - 6.22).abs() < 0.01, "K* = {k_star}");
        assert!((k_int as f64 - k_star.round()).abs() <= 1.0, "integer scan {k_int}");
    }

    #[test]
    fn optimal_window_grows_with_horizon() {
        let (k10, _) = optimal_window(10, 1.0, 1.0, 0.5).unwrap();
        let (k100, _) = optimal_window(100, 1.0, 1.0, 0.5).unwrap();
        let (k1000, _) = optimal_window(1000, 1.0, 1.0, 0.5).unwrap();
        assert!(k10 < k100 && k100 < k1000);
    }

    #[test]
    fn mse_window_minimised_near_closed_form() {
        let (k_star, k_int) = optimal_window(200, 1.3, 0.7, 0.6).unwrap();
        let at_int = mse_window(k_int as f64, 200, 1.3, 0.7, 0.6).unwrap();
        for k in 1..=200 {
            assert!(mse_window(k as f64, 200, 1.3, 0.7, 0.6).unwrap() >= at_int - 1e-15);
        }
        assert!((k_int as f64 - k_star).abs() <= 1.0 + 1e-9);
    }

    #[test]
    fn advantage_ratio_values() {
        // n = 1 reduces to 1 / (1 - L_tilde).
        let r = ar_advantage_ratio(0.2, 1.3, 0.9, 1).unwrap();
        assert_relative_eq!(r, 10.0, epsilon = 1e-12);
        // Direct evaluation at the reference constants.
        let r = ar_advantage_ratio(1.0, 1.15, 0.9, 30).unwrap();
        assert!((r - 0.0230).abs() < 2e-4, "ratio {r}");
        // Strictly decreasing in n.
        let mut prev = f64::INFINITY;
        for n in 1..40 {
            let v = ar_advantage_ratio(1.0, 1.15, 0.9, n).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(ar_advantage_ratio(1.0, 0.9, 0.5, 3).is_err());
    }
}
