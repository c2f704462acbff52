//! One-dimensional periodic first-order upwind transport and the constant
//! offset surrogate: the sharpness fixture for the coupling bounds.

use crate::error::{CoreError, Result};

/// First-order upwind advection on a periodic grid of n cells with CFL
/// number nu in (0, 1): x_i <- x_i - nu (x_i - x_{i-1}).
#[derive(Debug, Clone, Copy)]
pub struct Upwind1d {
    pub n: usize,
    pub nu: f64,
}

impl Upwind1d {
    pub fn new(n: usize, nu: f64) -> Result<Self> {
        if n == 0 {
            return Err(CoreError::Config("upwind grid needs n >= 1".into()));
        }
        // nu = 1 shifts exactly one cell per step; excluded as the boundary
        // of validity.
        if !(nu > 0.0 && nu < 1.0) {
            return Err(CoreError::Config(format!(
                "CFL number must lie in (0, 1), got {nu}"
            )));
        }
        Ok(Self { n, nu })
    }

    pub fn step(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| {
                let prev = x[(i + n - 1) % n];
                x[i] - self.nu * (x[i] - prev)
            })
            .collect()
    }

    /// steps+1 states including the initial condition.
    pub fn trajectory(&self, x0: &[f64], steps: usize) -> Result<Vec<Vec<f64>>> {
        if x0.len() != self.n {
            return Err(CoreError::dimension("upwind x0", self.n, x0.len()));
        }
        let mut out = Vec::with_capacity(steps + 1);
        out.push(x0.to_vec());
        for _ in 0..steps {
            let next = self.step(out.last().unwrap());
            out.push(next);
        }
        Ok(out)
    }
}

/// Wraps a one-step map, adding a constant eps to every cell: the
/// DC-aligned model error that saturates the L = 1 rollout bound.
pub struct DcOffset<F> {
    pub inner: F,
    pub eps: f64,
}

impl<F: Fn(&[f64]) -> Vec<f64>> DcOffset<F> {
    pub fn step(&self, x: &[f64]) -> Vec<f64> {
        let mut out = (self.inner)(x);
        for v in out.iter_mut() {
            *v += self.eps;
        }
        out
    }

    pub fn trajectory(&self, x0: &[f64], steps: usize) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(steps + 1);
        out.push(x0.to_vec());
        for _ in 0..steps {
            let next = self.step(out.last().unwrap());
            out.push(next);
        }
        out
    }
}

/// l2 (unweighted) norm, the metric of the 1-D fixture.
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_cfl_outside_unit_interval() {
        assert!(Upwind1d::new(8, 0.0).is_err());
        assert!(Upwind1d::new(8, 1.0).is_err());
        assert!(Upwind1d::new(8, 1.5).is_err());
        assert!(Upwind1d::new(8, 0.5).is_ok());
    }

    #[test]
    fn constant_profile_is_preserved_exactly() {
        let up = Upwind1d::new(16, 0.3).unwrap();
        let x = vec![2.5; 16];
        let y = up.step(&x);
        assert_eq!(x, y);
    }

    #[test]
    fn dc_offset_error_grows_linearly_exactly() {
        // ||x_hat_n - x_n||_2 = n eps sqrt(N) to machine precision.
        let n = 64;
        let eps = 1e-3;
        let up = Upwind1d::new(n, 0.5).unwrap();
        let x0: Vec<f64> = (0..n).map(|i| if i < n / 4 { 1.0 } else { 0.0 }).collect();
        let truth = up.trajectory(&x0, 50).unwrap();
        let surrogate = DcOffset {
            inner: |x: &[f64]| up.step(x),
            eps,
        };
        let pred = surrogate.trajectory(&x0, 50);
        for step in 1..=50 {
            let diff: Vec<f64> = pred[step]
                .iter()
                .zip(&truth[step])
                .map(|(a, b)| a - b)
                .collect();
            let expected = step as f64 * eps * (n as f64).sqrt();
            assert!(
                (l2_norm(&diff) - expected).abs() < 1e-12,
                "step {step}: {} vs {expected}",
                l2_norm(&diff)
            );
        }
    }
}
