//! Gaussian random fields by spectral synthesis: white noise shaped by a
//! squared-exponential spectrum, inverse transform, affine rescale.

use crate::autodiff::spectral::{fftn, freq_of};
use crate::error::Result;
use crate::grid::Grid;
use num_complex::Complex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy)]
pub struct FieldGenConfig {
    /// Correlation length per axis, in the grid's length units.
    pub corr_len: [f64; 3],
    pub mean: f64,
    pub std: f64,
}

impl Default for FieldGenConfig {
    fn default() -> Self {
        Self {
            corr_len: [200.0, 200.0, 40.0],
            mean: 0.0,
            std: 1.0,
        }
    }
}

/// Deterministic per seed. std = 0 returns the constant mean field.
pub fn gen_gaussian_field(cfg: &FieldGenConfig, grid: &Grid, seed: u64) -> Result<Vec<f64>> {
    let n = grid.n_cells();
    if cfg.std == 0.0 {
        return Ok(vec![cfg.mean; n]);
    }
    let dims = [grid.nx, grid.ny, grid.nz];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Gaussian white noise via Box-Muller.
    let mut noise: Vec<Complex<f64>> = Vec::with_capacity(n);
    for _ in 0..n {
        let u1: f64 = rng.gen::<f64>().max(1e-16);
        let u2: f64 = rng.gen();
        let g = (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos();
        noise.push(Complex::new(g, 0.0));
    }
    fftn(&mut noise, &dims, true);

    // Shape by the square root of a squared-exponential spectrum.
    let spacing = [grid.dx, grid.dy, grid.dz];
    for idx in 0..n {
        let (ix, iy, iz) = grid.coords(idx);
        let ii = [ix, iy, iz];
        let mut arg = 0.0;
        for a in 0..3 {
            if dims[a] < 2 {
                continue;
            }
            let k = freq_of(ii[a], dims[a]) as f64;
            // Angular wavenumber over the physical domain length.
            let length = dims[a] as f64 * spacing[a];
            let kappa = 2.0 * PI * k / length;
            arg += (kappa * cfg.corr_len[a]).powi(2);
        }
        let amp = (-arg / 4.0).exp();
        noise[idx] *= amp;
    }
    fftn(&mut noise, &dims, false);
    let mut field: Vec<f64> = noise.iter().map(|c| c.re / n as f64).collect();

    // Affine rescale to the target mean and std.
    let m = field.iter().sum::<f64>() / n as f64;
    let var = field.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    let s = var.sqrt();
    if s < 1e-300 {
        field.iter_mut().for_each(|x| *x = cfg.mean);
    } else {
        for x in field.iter_mut() {
            *x = cfg.mean + (*x - m) / s * cfg.std;
        }
    }
    Ok(field)
}
