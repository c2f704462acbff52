//! Per-component rollout error curves and fitted growth rates.

use crate::error::{CoreError, Result};
use crate::grid::{pv_norm, Component, Grid, RockFields, State};

/// delta_n per state component, with a fitted exponential growth rate
/// (slope of ln ||delta_n|| over n, on steps with positive error).
#[derive(Debug, Clone)]
pub struct ComponentTracks {
    pub pressure: Vec<f64>,
    pub water: Vec<f64>,
    pub oil: Vec<f64>,
    pub gas: Vec<f64>,
    pub growth_rate: [f64; 4],
}

impl ComponentTracks {
    pub fn track(&self, c: Component) -> &[f64] {
        match c {
            Component::Pressure => &self.pressure,
            Component::Water => &self.water,
            Component::Oil => &self.oil,
            Component::Gas => &self.gas,
        }
    }

    pub fn rate(&self, c: Component) -> f64 {
        match c {
            Component::Pressure => self.growth_rate[0],
            Component::Water => self.growth_rate[1],
            Component::Oil => self.growth_rate[2],
            Component::Gas => self.growth_rate[3],
        }
    }
}

fn fit_log_linear(values: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 1e-300)
        .map(|(n, &v)| (n as f64, v.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        f64::NAN
    } else {
        (n * sxy - sx * sy) / denom
    }
}

/// Separate pv-error curves for p, Sw, So, Sg along aligned trajectories.
pub fn component_error_tracks(
    predicted: &[State],
    truth: &[State],
    rock: &RockFields,
    grid: &Grid,
) -> Result<ComponentTracks> {
    if predicted.len() != truth.len() {
        return Err(CoreError::dimension(
            "component tracks",
            truth.len(),
            predicted.len(),
        ));
    }
    let mut tracks = ComponentTracks {
        pressure: Vec::with_capacity(truth.len()),
        water: Vec::with_capacity(truth.len()),
        oil: Vec::with_capacity(truth.len()),
        gas: Vec::with_capacity(truth.len()),
        growth_rate: [f64::NAN; 4],
    };
    for (hat, x) in predicted.iter().zip(truth) {
        for comp in Component::ALL {
            let diff: Vec<f64> = hat
                .component(comp)
                .iter()
                .zip(x.component(comp))
                .map(|(a, b)| a - b)
                .collect();
            let e = pv_norm(&diff, rock, grid)?;
            match comp {
                Component::Pressure => tracks.pressure.push(e),
                Component::Water => tracks.water.push(e),
                Component::Oil => tracks.oil.push(e),
                Component::Gas => tracks.gas.push(e),
            }
        }
    }
    tracks.growth_rate = [
        fit_log_linear(&tracks.pressure),
        fit_log_linear(&tracks.water),
        fit_log_linear(&tracks.oil),
        fit_log_linear(&tracks.gas),
    ];
    Ok(tracks)
}
