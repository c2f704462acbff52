//! Finite-difference probes: Jacobian-vector products and gradient checks.

use crate::error::Result;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central-difference Jacobian-vector product of a vector map:
/// (map(x + h v) - map(x - h v)) / (2h). Default h = 1e-5 (1 + |x|/|v|).
pub fn jvp(
    map: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    x: &[f64],
    v: &[f64],
    h: Option<f64>,
) -> Result<Vec<f64>> {
    let vn = norm(v);
    if vn == 0.0 {
        let y = map(x)?;
        return Ok(vec![0.0; y.len()]);
    }
    let h = h.unwrap_or_else(|| 1e-5 * (1.0 + norm(x) / vn));
    let plus: Vec<f64> = x.iter().zip(v).map(|(xi, vi)| xi + h * vi).collect();
    let minus: Vec<f64> = x.iter().zip(v).map(|(xi, vi)| xi - h * vi).collect();
    let yp = map(&plus)?;
    let ym = map(&minus)?;
    Ok(yp
        .iter()
        .zip(&ym)
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect())
}

/// Central-difference gradient of a scalar function, h = 1e-6 (1 + |x_i|).
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> Result<f64>, x: &[f64]) -> Result<Vec<f64>> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * (1.0 + x[i].abs());
        xp[i] = x[i] + h;
        let fp = f(&xp)?;
        xp[i] = x[i] - h;
        let fm = f(&xp)?;
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Relative l2 difference used by gradient checks.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let den = norm(a).max(norm(b)).max(1e-300);
    num / den
}
