//! The Fourier-space neural operator surrogate: input packing, spectral
//! layers, and the pressure/saturation heads.

mod model;
mod pack;
mod truncation;

pub use model::{forward_on_tape, FnoParamIds, FnoSurrogate};
pub use pack::{pack_inputs, pack_on_tape, unpack_state, PackStateIds, INPUT_CHANNELS, INPUT_CHANNEL_NAMES};
pub use truncation::{fit_power_law, spectral_truncation_error};

use crate::autodiff::{Activation, SpectralSpec, Tensor};
use crate::error::{CoreError, Result};
use crate::grid::Grid;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Architecture settings of the surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct FnoConfig {
    /// Latent channel count d_v.
    pub latent_width: usize,
    pub n_layers: usize,
    /// Retained |frequency| per axis (x, y, z).
    pub k_max: [usize; 3],
    pub activation: Activation,
    /// Mirror-pad non-periodic fields before the transforms.
    pub mirror_pad: bool,
    /// Pressure floor applied by the output head.
    pub p_min: f64,
}

impl Default for FnoConfig {
    fn default() -> Self {
        Self {
            latent_width: 32,
            n_layers: 4,
            k_max: [8, 8, 4],
            activation: Activation::Gelu,
            mirror_pad: true,
            p_min: 1.0,
        }
    }
}

impl FnoConfig {
    /// The full-scale preset: mode truncation (16, 16, 6) in (x, y, z).
    pub fn paper_preset() -> Self {
        Self {
            k_max: [16, 16, 6],
            ..Self::default()
        }
    }

    /// Clamps the per-axis cutoffs to the Nyquist limit of this grid.
    pub fn clamped_for(mut self, grid: &Grid) -> Self {
        let spec = SpectralSpec {
            grid_dims: vec![grid.nx, grid.ny, grid.nz],
            k_max: vec![0, 0, 0],
            channels: 1,
            mirror_pad: self.mirror_pad,
        };
        let pd = spec.padded_dims();
        for a in 0..3 {
            self.k_max[a] = self.k_max[a].min(pd[a] / 2);
        }
        self
    }

    pub fn validate_for(&self, grid: &Grid) -> Result<()> {
        if self.latent_width == 0 || self.n_layers == 0 {
            return Err(CoreError::Config(
                "latent width and layer count must be >= 1".into(),
            ));
        }
        self.spectral_spec(grid).validate()
    }

    pub fn spectral_spec(&self, grid: &Grid) -> SpectralSpec {
        SpectralSpec {
            grid_dims: vec![grid.nx, grid.ny, grid.nz],
            k_max: self.k_max.to_vec(),
            channels: self.latent_width,
            mirror_pad: self.mirror_pad,
        }
    }
}

/// Per-channel affine normalization statistics, stored with checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; INPUT_CHANNELS],
    pub std: [f64; INPUT_CHANNELS],
}

impl ChannelStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; INPUT_CHANNELS],
            std: [1.0; INPUT_CHANNELS],
        }
    }

    /// Means/stds over every member, step, and cell of a dataset.
    pub fn from_dataset(dataset: &crate::sim::Dataset, grid: &Grid) -> Result<Self> {
        let mut sum = [0.0; INPUT_CHANNELS];
        let mut sumsq = [0.0; INPUT_CHANNELS];
        let mut count = 0usize;
        for member in &dataset.members {
            for (step, wells) in member.controls.iter().enumerate() {
                let ctx = crate::blackoil::StepContext {
                    dt: dataset.dt,
                    t: step as f64 * dataset.dt,
                };
                let bundle = pack::raw_channels(
                    &member.rock,
                    &member.states[step],
                    wells,
                    ctx,
                    grid,
                )?;
                let n = grid.n_cells();
                for c in 0..INPUT_CHANNELS {
                    for i in 0..n {
                        let v = bundle[c * n + i];
                        sum[c] += v;
                        sumsq[c] += v * v;
                    }
                }
                count += n;
            }
        }
        if count == 0 {
            return Err(CoreError::Config("empty dataset for statistics".into()));
        }
        let mut mean = [0.0; INPUT_CHANNELS];
        let mut std = [1.0; INPUT_CHANNELS];
        for c in 0..INPUT_CHANNELS {
            mean[c] = sum[c] / count as f64;
            let var = (sumsq[c] / count as f64 - mean[c] * mean[c]).max(0.0);
            // Constant channels (fault, dt, ...) get unit scale.
            std[c] = if var.sqrt() < 1e-12 { 1.0 } else { var.sqrt() };
        }
        Ok(Self { mean, std })
    }
}

/// Lifting, spectral, pointwise, and head weights. Biases are folded into
/// the weight matrices as an extra column applied to an appended ones row.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorParams {
    /// (d_v, 13): lifting over the 12 channels plus bias column.
    pub lifting: Tensor,
    /// Per layer: complex spectral weights (n_modes, d_v, d_v, 2).
    pub spectral: Vec<Tensor>,
    /// Per layer: pointwise linear (d_v, d_v + 1).
    pub pointwise: Vec<Tensor>,
    /// (1, d_v + 1).
    pub head_pressure: Tensor,
    /// (3, d_v + 1), channel order (Sw, So, Sg).
    pub head_saturation: Tensor,
}

impl OperatorParams {
    /// Zero parameters: the heads then emit the projection of zero
    /// (pressure = p_min, saturations = 1/3 each).
    pub fn zeros(cfg: &FnoConfig, grid: &Grid) -> Result<Self> {
        let d = cfg.latent_width;
        let spec = cfg.spectral_spec(grid);
        spec.validate()?;
        let n_modes = spec.n_modes();
        Ok(Self {
            lifting: Tensor::zeros(&[d, INPUT_CHANNELS + 1]),
            spectral: (0..cfg.n_layers)
                .map(|_| Tensor::zeros(&[n_modes, d, d, 2]))
                .collect(),
            pointwise: (0..cfg.n_layers)
                .map(|_| Tensor::zeros(&[d, d + 1]))
                .collect(),
            head_pressure: Tensor::zeros(&[1, d + 1]),
            head_saturation: Tensor::zeros(&[3, d + 1]),
        })
    }

    /// Random initialization; head biases start at the channel means so the
    /// first forward pass already sits at the data scale.
    pub fn init(cfg: &FnoConfig, grid: &Grid, stats: &ChannelStats, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(cfg, grid)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.latent_width as f64;
        let mut fill = |t: &mut Tensor, scale: f64| {
            for v in t.data_mut() {
                *v = scale * (rng.gen::<f64>() * 2.0 - 1.0);
            }
        };
        let lift_scale = (6.0 / (INPUT_CHANNELS as f64 + d)).sqrt();
        fill(&mut p.lifting, lift_scale);
        let spec_scale = 1.0 / (d * d);
        let point_scale = (6.0 / (2.0 * d)).sqrt();
        for t in p.spectral.iter_mut() {
            fill(t, spec_scale);
        }
        for t in p.pointwise.iter_mut() {
            fill(t, point_scale);
        }
        let head_scale = (1.0 / d).sqrt() * 0.1;
        fill(&mut p.head_pressure, head_scale);
        fill(&mut p.head_saturation, head_scale);
        // Bias columns: start the heads at the mean state.
        let dcols = cfg.latent_width + 1;
        p.head_pressure.data_mut()[dcols - 1] = stats.mean[8];
        let hs = p.head_saturation.data_mut();
        hs[dcols - 1] = stats.mean[9]; // Sw
        hs[2 * dcols - 1] = stats.mean[11]; // So
        hs[3 * dcols - 1] = stats.mean[10]; // Sg
        Ok(p)
    }

    /// Named tensors in checkpoint order.
    pub fn tensor_names(n_layers: usize) -> Vec<String> {
        let mut names = vec!["lifting".to_string()];
        for l in 0..n_layers {
            names.push(format!("layer{l}.spectral"));
            names.push(format!("layer{l}.pointwise"));
        }
        names.push("head.pressure".to_string());
        names.push("head.saturation".to_string());
        names
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        let mut out = vec![self.lifting.clone()];
        for (s, w) in self.spectral.iter().zip(&self.pointwise) {
            out.push(s.clone());
            out.push(w.clone());
        }
        out.push(self.head_pressure.clone());
        out.push(self.head_saturation.clone());
        out
    }

    pub fn from_tensors(cfg: &FnoConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let expect = 1 + 2 * cfg.n_layers + 2;
        if tensors.len() != expect {
            return Err(CoreError::dimension(
                "operator parameter tensors",
                expect,
                tensors.len(),
            ));
        }
        let mut it = tensors.into_iter();
        let lifting = it.next().unwrap();
        let mut spectral = Vec::new();
        let mut pointwise = Vec::new();
        for _ in 0..cfg.n_layers {
            spectral.push(it.next().unwrap());
            pointwise.push(it.next().unwrap());
        }
        Ok(Self {
            lifting,
            spectral,
            pointwise,
            head_pressure: it.next().unwrap(),
            head_saturation: it.next().unwrap(),
        })
    }

    pub fn n_parameters(&self) -> usize {
        self.to_tensors().iter().map(|t| t.numel()).sum()
    }
}
