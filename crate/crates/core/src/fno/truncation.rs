//! Mode-truncation error of grid fields and power-law rate fitting.

use crate::autodiff::spectral::lowpass;
use crate::autodiff::Tensor;
use crate::error::{CoreError, Result};

/// L2 error (under the grid measure with cell volume `cell_volume`) between
/// a field and its low-pass projection to |k| <= k_max per axis.
pub fn spectral_truncation_error(field: &Tensor, k_max: &[usize], cell_volume: f64) -> Result<f64> {
    let lp = lowpass(field, k_max)?;
    let err2: f64 = field
        .data()
        .iter()
        .zip(lp.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((cell_volume * err2).sqrt())
}

/// Least-squares fit of log(err) = slope * log(k) + intercept.
/// Pairs with non-positive error are skipped.
pub fn fit_power_law(k_values: &[f64], errors: &[f64]) -> Result<(f64, f64)> {
    if k_values.len() != errors.len() {
        return Err(CoreError::dimension(
            "fit_power_law",
            k_values.len(),
            errors.len(),
        ));
    }
    let pts: Vec<(f64, f64)> = k_values
        .iter()
        .zip(errors)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&k, &e)| (k.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(CoreError::Numerical(
            "fit_power_law needs >= 2 positive samples".into(),
        ));
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(CoreError::Numerical("degenerate power-law fit".into()));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    Ok((slope, intercept))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn band_limited_field_has_zero_truncation_error() {
        let n = 64;
        let field = Tensor::from_vec(
            (0..n)
                .map(|i| {
                    let x = 2.0 * PI * i as f64 / n as f64;
                    (3.0 * x).sin() + 0.5 * (2.0 * x).cos()
                })
                .collect(),
        );
        let e = spectral_truncation_error(&field, &[3], 1.0).unwrap();
        assert!(e < 1e-12, "error {e}");
    }

    #[test]
    fn step_function_decays_at_gibbs_rate() {
        // O(k^{-1/2}) truncation floor for a jump discontinuity.
        let n = 1024;
        let field = Tensor::from_vec(
            (0..n).map(|i| if i < n / 2 { 1.0 } else { 0.0 }).collect(),
        );
        let ks: Vec<f64> = (2..=7).map(|p| (1usize << p) as f64).collect(); // 4..128
        let errs: Vec<f64> = ks
            .iter()
            .map(|&k| spectral_truncation_error(&field, &[k as usize], 1.0).unwrap())
            .collect();
        let (slope, _) = fit_power_law(&ks, &errs).unwrap();
        assert!(
            (-0.6..=-0.4).contains(&slope),
            "fitted Gibbs exponent {slope}"
        );
    }

    #[test]
    fn smooth_field_decays_fast() {
        // Coefficients ~ (1 + k^2)^{-(s+2)/2} with s = 2: the fitted
        // truncation exponent must be at most -2.
        let n = 1024;
        let mut data = vec![0.0; n];
        for k in 1..=(n / 2) {
            let amp = (1.0 + (k * k) as f64).powf(-2.0);
            let phase = (k as f64) * 0.7;
            for (i, d) in data.iter_mut().enumerate() {
                let x = 2.0 * PI * (k as f64) * (i as f64) / n as f64;
                *d += amp * (x + phase).cos();
            }
        }
        let field = Tensor::from_vec(data);
        let ks: Vec<f64> = (2..=7).map(|p| (1usize << p) as f64).collect();
        let errs: Vec<f64> = ks
            .iter()
            .map(|&k| spectral_truncation_error(&field, &[k as usize], 1.0).unwrap())
            .collect();
        let (slope, _) = fit_power_law(&ks, &errs).unwrap();
        assert!(slope <= -2.0, "fitted smooth exponent {slope}");
    }

    #[test]
    fn fit_recovers_known_law() {
        let ks = [4.0f64, 8.0, 16.0, 32.0];
        let errs: Vec<f64> = ks.iter().map(|k| 3.0 * k.powf(-1.5)).collect();
        let (slope, intercept) = fit_power_law(&ks, &errs).unwrap();
        assert!((slope + 1.5).abs() < 1e-12);
        assert!((intercept - 3.0f64.ln()).abs() < 1e-12);
    }
}
