//! Operator checkpoints: one tensor file per parameter plus a manifest
//! holding tensor names, shapes, normalization statistics, and the
//! architecture.

use crate::tensorfile::{read_tensor, write_tensor};
use anyhow::{anyhow, bail, Context, Result};
use bolab_core::autodiff::{Activation, Tensor};
use bolab_core::fno::{ChannelStats, FnoConfig, FnoSurrogate, OperatorParams, INPUT_CHANNELS};
use bolab_core::grid::Grid;
use std::fmt::Write as _;
use std::path::Path;

pub fn save_checkpoint(dir: &Path, surrogate: &FnoSurrogate) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let names = OperatorParams::tensor_names(surrogate.config.n_layers);
    let tensors = surrogate.params.to_tensors();
    let mut manifest = String::new();
    let cfg = &surrogate.config;
    let _ = writeln!(manifest, "width = {}", cfg.latent_width);
    let _ = writeln!(manifest, "layers = {}", cfg.n_layers);
    let _ = writeln!(manifest, "kmax = {},{},{}", cfg.k_max[0], cfg.k_max[1], cfg.k_max[2]);
    let act = match cfg.activation {
        Activation::Gelu => "gelu",
        Activation::Relu => "relu",
        Activation::Tanh => "tanh",
    };
    let _ = writeln!(manifest, "activation = {act}");
    let _ = writeln!(manifest, "mirror_pad = {}", cfg.mirror_pad);
    let _ = writeln!(manifest, "p_min = {}", cfg.p_min);
    let join = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:e}"))
            .collect::<Vec<_>>()
            .join(",")
    };
    let _ = writeln!(manifest, "stats_mean = {}", join(&surrogate.stats.mean));
    let _ = writeln!(manifest, "stats_std = {}", join(&surrogate.stats.std));
    for (idx, (name, tensor)) in names.iter().zip(&tensors).enumerate() {
        let file = format!("{idx:03}_{}.botf", name.replace('.', "_"));
        let extents: Vec<u64> = tensor.shape().iter().map(|&e| e as u64).collect();
        write_tensor(&dir.join(&file), &extents, tensor.data())?;
        let shape = tensor
            .shape()
            .iter()
            .map(|e| e.to_string())
            .collect::<Vec<_>>()
            .join("x");
        let _ = writeln!(manifest, "tensor = {name} {file} {shape}");
    }
    std::fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path, grid: &Grid) -> Result<FnoSurrogate> {
    let manifest = std::fs::read_to_string(dir.join("manifest.txt"))
        .with_context(|| format!("reading checkpoint manifest in {}", dir.display()))?;
    let mut cfg = FnoConfig::default();
    let mut stats = ChannelStats::identity();
    let mut tensor_files: Vec<String> = Vec::new();
    for line in manifest.lines() {
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "width" => cfg.latent_width = value.parse()?,
            "layers" => cfg.n_layers = value.parse()?,
            "kmax" => {
                let parts: Vec<usize> = value
                    .split(',')
                    .map(|x| x.trim().parse())
                    .collect::<std::result::Result<_, _>>()?;
                if parts.len() != 3 {
                    bail!("kmax needs three entries");
                }
                cfg.k_max = [parts[0], parts[1], parts[2]];
            }
            "activation" => cfg.activation = Activation::from_tag(value).map_err(|e| anyhow!("{e}"))?,
            "mirror_pad" => cfg.mirror_pad = value == "true",
            "p_min" => cfg.p_min = value.parse()?,
            "stats_mean" | "stats_std" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|x| x.trim().parse())
                    .collect::<std::result::Result<_, _>>()?;
                if parts.len() != INPUT_CHANNELS {
                    bail!("{key} needs {INPUT_CHANNELS} entries");
                }
                let target = if key == "stats_mean" {
                    &mut stats.mean
                } else {
                    &mut stats.std
                };
                target.copy_from_slice(&parts);
            }
            "tensor" => {
                let mut parts = value.split_whitespace();
                let _name = parts.next();
                let file = parts
                    .next()
                    .ok_or_else(|| anyhow!("malformed tensor line: {line}"))?;
                tensor_files.push(file.to_string());
            }
            _ => bail!("unknown checkpoint manifest key '{key}'"),
        }
    }
    let expected = 1 + 2 * cfg.n_layers + 2;
    if tensor_files.len() != expected {
        bail!(
            "checkpoint lists {} tensors, architecture needs {expected}",
            tensor_files.len()
        );
    }
    let mut tensors = Vec::with_capacity(tensor_files.len());
    for file in &tensor_files {
        let (extents, data) = read_tensor(&dir.join(file))?;
        let shape: Vec<usize> = extents.iter().map(|&e| e as usize).collect();
        tensors.push(Tensor::new(shape, data).map_err(|e| anyhow!("{e}"))?);
    }
    let params = OperatorParams::from_tensors(&cfg, tensors).map_err(|e| anyhow!("{e}"))?;
    FnoSurrogate::new(cfg, params, stats, *grid).map_err(|e| anyhow!("{e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trips() {
        let grid = Grid::new(4, 4, 2, 50.0, 50.0, 20.0).unwrap();
        let cfg = FnoConfig {
            latent_width: 3,
            n_layers: 2,
            k_max: [2, 2, 1],
            ..FnoConfig::default()
        };
        let stats = ChannelStats {
            mean: [1.5; INPUT_CHANNELS],
            std: [0.25; INPUT_CHANNELS],
        };
        let params = OperatorParams::init(&cfg, &grid, &stats, 5).unwrap();
        let surrogate = FnoSurrogate::new(cfg, params, stats, grid).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &surrogate).unwrap();
        let back = load_checkpoint(dir.path(), &grid).unwrap();
        assert_eq!(back.config, surrogate.config);
        assert_eq!(back.stats, surrogate.stats);
        assert_eq!(back.params, surrogate.params);
    }
}
