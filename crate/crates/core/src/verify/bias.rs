//! TBPTT gradient-bias decay measurement.

use crate::error::{CoreError, Result};
use crate::train::{full_bptt_gradient, tbptt_gradient, SequenceModel, TruncationMode};

/// Bias of the truncated estimator against the exact gradient over a window
/// sweep, with a log-linear decay fit.
#[derive(Debug, Clone)]
pub struct BiasCurve {
    pub k_values: Vec<usize>,
    pub bias: Vec<f64>,
    /// Fitted slope of ln(bias) vs K (decay rate); NaN when degenerate.
    pub fitted_slope: f64,
    pub fitted_intercept: f64,
    /// Measured contractivity estimate supplied by the caller, if any.
    pub rho_hat: Option<f64>,
    /// Set when every bias is below the degeneracy floor.
    pub degenerate: bool,
}

fn flat_l2_diff(a: &[crate::autodiff::Tensor], b: &[crate::autodiff::Tensor]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        for (u, v) in x.data().iter().zip(y.data()) {
            acc += (u - v) * (u - v);
        }
    }
    acc.sqrt()
}

/// bias(K) = ||g - g_K||_2 on the model's fixed batch, for each K. The fit
/// runs over K values whose bias exceeds 1e-12; fewer than two such points
/// mark the curve degenerate.
pub fn tbptt_bias_curve(
    model: &dyn SequenceModel,
    k_values: &[usize],
    mode: TruncationMode,
    rho_hat: Option<f64>,
) -> Result<BiasCurve> {
    if k_values.is_empty() {
        return Err(CoreError::Config("bias curve needs >= 1 window size".into()));
    }
    let (full, _) = full_bptt_gradient(model)?;
    let mut bias = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let (g, _) = tbptt_gradient(model, k, mode)?;
        bias.push(flat_l2_diff(&full, &g));
    }
    let fit_ks: Vec<f64> = k_values
        .iter()
        .zip(&bias)
        .filter(|(_, &b)| b > 1e-12)
        .map(|(&k, _)| k as f64)
        .collect();
    let fit_bias: Vec<f64> = bias.iter().cloned().filter(|&b| b > 1e-12).collect();
    let (fitted_slope, fitted_intercept, degenerate) = if fit_ks.len() >= 2 {
        // Fit ln(bias) = slope * K + c (linear in K, not in ln K).
        let n = fit_ks.len() as f64;
        let sx: f64 = fit_ks.iter().sum();
        let sy: f64 = fit_bias.iter().map(|b| b.ln()).sum();
        let sxx: f64 = fit_ks.iter().map(|k| k * k).sum();
        let sxy: f64 = fit_ks
            .iter()
            .zip(&fit_bias)
            .map(|(k, b)| k * b.ln())
            .sum();
        let denom = n * sxx - sx * sx;
        if denom.abs() < 1e-300 {
            (f64::NAN, f64::NAN, true)
        } else {
            let slope = (n * sxy - sx * sy) / denom;
            ((slope), (sy - slope * sx) / n, false)
        }
    } else {
        (f64::NAN, f64::NAN, true)
    };
    Ok(BiasCurve {
        k_values: k_values.to_vec(),
        bias,
        fitted_slope,
        fitted_intercept,
        rho_hat,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::ScalarLinearModel;

    #[test]
    fn bias_at_k_equals_t_is_zero() {
        let m = ScalarLinearModel::new(0.5, 0.2, 1.0, vec![0.4; 10]);
        let curve =
            tbptt_bias_curve(&m, &[10], TruncationMode::ChainLength, None).unwrap();
        assert!(curve.bias[0] < 1e-14);
        assert!(curve.degenerate);
    }

    #[test]
    fn contractive_scalar_fixture_halves_bias_per_window_step() {
        // a = 0.5 with loss at the final step only: bias(K)/bias(K+1) = 2
        // up to a^{T-K-1} remainder terms.
        let t = 30;
        let m = ScalarLinearModel::new(0.5, 0.1, 1.0, vec![0.3; t]).final_step_loss();
        let ks: Vec<usize> = (2..=8).collect();
        let curve = tbptt_bias_curve(&m, &ks, TruncationMode::ChainLength, None).unwrap();
        for w in curve.bias.windows(2) {
            let ratio = w[0] / w[1];
            assert!(
                (ratio - 2.0).abs() < 1e-6,
                "decay ratio {ratio} deviates from 1/a"
            );
        }
        // Fitted slope matches ln(0.5).
        assert!((curve.fitted_slope - 0.5f64.ln()).abs() < 1e-6);
    }
}
