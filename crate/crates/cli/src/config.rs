//! Line-oriented `section.key = value` experiment configuration: strict
//! parsing, documented defaults, full echo of the resolved state.

use anyhow::{anyhow, bail, Context, Result};
use bolab_core::autodiff::Activation;
use bolab_core::blackoil::{CapillaryModel, FluidModel, Fvf, RelPermModel, SolutionGor};
use bolab_core::fno::FnoConfig;
use bolab_core::grid::Grid;
use bolab_core::sim::{DatasetConfig, FieldGenConfig, WellLayout};
use bolab_core::train::{Paradigm, PhysicsAnchor, StepMode, TrainConfig};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridPreset {
    Desk16,
    Desk32,
    NorneShape,
}

impl GridPreset {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "desk16" => Ok(Self::Desk16),
            "desk32" => Ok(Self::Desk32),
            "norne-shape" => Ok(Self::NorneShape),
            other => bail!("unknown grid preset '{other}' (desk16 | desk32 | norne-shape)"),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Self::Desk16 => "desk16",
            Self::Desk32 => "desk32",
            Self::NorneShape => "norne-shape",
        }
    }

    pub fn grid(&self) -> Grid {
        match self {
            Self::Desk16 => Grid::new(16, 16, 4, 50.0, 50.0, 20.0).unwrap(),
            Self::Desk32 => Grid::new(32, 32, 4, 50.0, 50.0, 20.0).unwrap(),
            Self::NorneShape => Grid::new(46, 112, 22, 50.0, 50.0, 20.0).unwrap(),
        }
    }
}

/// Everything a run needs, with every field defaulted and echoed.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub preset: GridPreset,
    pub fluid: FluidModel,
    pub relperm: RelPermModel,
    pub capillary: CapillaryModel,
    pub layout: WellLayout,
    pub dt: f64,
    pub t_steps: usize,
    pub n_members: usize,
    pub initial_pressure: f64,
    pub initial_sw: f64,
    pub initial_sg: f64,
    pub porosity_mean: f64,
    pub porosity_std: f64,
    pub logperm_mean: f64,
    pub logperm_std: f64,
    pub corr_len: [f64; 3],
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub fno: FnoConfig,
    pub train: TrainConfig,
    pub allow_norne_train: bool,
    pub eval_members: usize,
    pub eval_probes: usize,
    pub slack: f64,
    pub lambda_sweep: Vec<f64>,
    pub k_sweep: Vec<usize>,
    pub gibbs_kmax: Vec<usize>,
    pub spectral_iters: usize,
    /// verify-rollout / verify-coupling target: "surrogate" or "upwind".
    pub rollout_fixture: String,
    pub coupling_fixture: String,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: GridPreset::Desk16,
            fluid: FluidModel::default(),
            relperm: RelPermModel::default(),
            capillary: CapillaryModel::default(),
            layout: WellLayout::default(),
            dt: 100.0,
            t_steps: 20,
            n_members: 16,
            initial_pressure: 1000.0,
            initial_sw: 0.25,
            initial_sg: 0.05,
            porosity_mean: 0.25,
            porosity_std: 0.04,
            logperm_mean: -4.2,
            logperm_std: 0.7,
            corr_len: [300.0, 300.0, 40.0],
            newton_tol: 1e-9,
            newton_max_iter: 25,
            fno: FnoConfig {
                latent_width: 12,
                n_layers: 3,
                ..FnoConfig::default()
            },
            train: TrainConfig::default(),
            allow_norne_train: false,
            eval_members: 16,
            eval_probes: 32,
            slack: 1.05,
            lambda_sweep: vec![0.0, 1.0, 10.0, 100.0],
            k_sweep: vec![1, 2, 3, 4, 5, 8, 10, 15, 20],
            gibbs_kmax: vec![4, 8, 16, 32, 64, 128],
            spectral_iters: 60,
            rollout_fixture: "surrogate".to_string(),
            coupling_fixture: "upwind".to_string(),
            seed: 0,
        }
    }
}

struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| anyhow!("line {lineno}: expected 'section.key = value'"))?;
            let key = key.trim().to_string();
            if key.is_empty() || !key.contains('.') {
                bail!("line {lineno}: keys must be 'section.key', got '{key}'");
            }
            let value = value.trim().to_string();
            if entries.insert(key.clone(), (value, lineno)).is_some() {
                bail!("line {lineno}: duplicate key '{key}'");
            }
        }
        Ok(Self { entries })
    }

    fn take<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(default),
            Some((v, line)) => v
                .parse::<T>()
                .map_err(|e| anyhow!("line {line}: key '{key}': {e}")),
        }
    }

    fn take_str(&mut self, key: &str, default: &str) -> (String, Option<usize>) {
        match self.entries.remove(key) {
            None => (default.to_string(), None),
            Some((v, line)) => (v, Some(line)),
        }
    }

    fn take_bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.entries.remove(key) {
            None => Ok(default),
            Some((v, line)) => match v.as_str() {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                other => bail!("line {line}: key '{key}': expected a boolean, got '{other}'"),
            },
        }
    }

    fn take_list_f64(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.entries.remove(key) {
            None => Ok(default.to_vec()),
            Some((v, line)) => v
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|e| anyhow!("line {line}: key '{key}': {e}"))
                })
                .collect(),
        }
    }

    fn take_list_usize(&mut self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.entries.remove(key) {
            None => Ok(default.to_vec()),
            Some((v, line)) => v
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse::<usize>()
                        .map_err(|e| anyhow!("line {line}: key '{key}': {e}"))
                })
                .collect(),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some((key, (_, line))) = self.entries.into_iter().next() {
            bail!("line {line}: unknown key '{key}'");
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut raw = RawConfig::parse(text)?;
        let mut cfg = ExperimentConfig::default();
        let d = ExperimentConfig::default();

        let (preset, _) = raw.take_str("grid.preset", d.preset.tag());
        cfg.preset = GridPreset::parse(&preset)?;

        cfg.fluid.mu_w = raw.take("fluid.mu_w", d.fluid.mu_w)?;
        cfg.fluid.mu_o = raw.take("fluid.mu_o", d.fluid.mu_o)?;
        cfg.fluid.mu_g = raw.take("fluid.mu_g", d.fluid.mu_g)?;
        cfg.fluid.rho_w = raw.take("fluid.rho_w", d.fluid.rho_w)?;
        cfg.fluid.rho_o = raw.take("fluid.rho_o", d.fluid.rho_o)?;
        cfg.fluid.rho_g = raw.take("fluid.rho_g", d.fluid.rho_g)?;
        cfg.fluid.b_o = Fvf {
            b_ref: raw.take("fluid.bo_ref", d.fluid.b_o.b_ref)?,
            compressibility: raw.take("fluid.bo_compr", d.fluid.b_o.compressibility)?,
            p_ref: raw.take("fluid.bo_pref", d.fluid.b_o.p_ref)?,
        };
        cfg.fluid.b_g = Fvf {
            b_ref: raw.take("fluid.bg_ref", d.fluid.b_g.b_ref)?,
            compressibility: raw.take("fluid.bg_compr", d.fluid.b_g.compressibility)?,
            p_ref: raw.take("fluid.bg_pref", d.fluid.b_g.p_ref)?,
        };
        cfg.fluid.r_so = SolutionGor {
            slope: raw.take("fluid.rso_slope", d.fluid.r_so.slope)?,
            p_bubble: raw.take("fluid.rso_pbubble", d.fluid.r_so.p_bubble)?,
        };
        cfg.fluid.gravity = raw.take("fluid.gravity", d.fluid.gravity)?;

        cfg.relperm.swc = raw.take("relperm.swc", d.relperm.swc)?;
        cfg.relperm.sor = raw.take("relperm.sor", d.relperm.sor)?;
        cfg.relperm.n_w = raw.take("relperm.nw", d.relperm.n_w)?;
        cfg.relperm.n_o = raw.take("relperm.no", d.relperm.n_o)?;
        cfg.relperm.n_g = raw.take("relperm.ng", d.relperm.n_g)?;
        cfg.relperm.kw_end = raw.take("relperm.kw_end", d.relperm.kw_end)?;
        cfg.relperm.ko_end = raw.take("relperm.ko_end", d.relperm.ko_end)?;
        cfg.relperm.kg_end = raw.take("relperm.kg_end", d.relperm.kg_end)?;

        cfg.capillary.eps_cwo = raw.take("capillary.eps_cwo", d.capillary.eps_cwo)?;
        cfg.capillary.eps_cog = raw.take("capillary.eps_cog", d.capillary.eps_cog)?;

        cfg.layout.n_producers = raw.take("wells.producers", d.layout.n_producers)?;
        cfg.layout.n_injectors = raw.take("wells.injectors", d.layout.n_injectors)?;
        cfg.layout.injected_pv_per_step =
            raw.take("wells.injected_pv_per_step", d.layout.injected_pv_per_step)?;
        cfg.layout.gas_fraction = raw.take("wells.gas_fraction", d.layout.gas_fraction)?;
        cfg.layout.rate_perturb_std =
            raw.take("wells.rate_perturb_std", d.layout.rate_perturb_std)?;

        cfg.dt = raw.take("sim.dt", d.dt)?;
        cfg.t_steps = raw.take("sim.t_steps", d.t_steps)?;
        cfg.n_members = raw.take("sim.n_members", d.n_members)?;
        cfg.initial_pressure = raw.take("sim.initial_pressure", d.initial_pressure)?;
        cfg.initial_sw = raw.take("sim.initial_sw", d.initial_sw)?;
        cfg.initial_sg = raw.take("sim.initial_sg", d.initial_sg)?;
        cfg.porosity_mean = raw.take("sim.porosity_mean", d.porosity_mean)?;
        cfg.porosity_std = raw.take("sim.porosity_std", d.porosity_std)?;
        cfg.logperm_mean = raw.take("sim.logperm_mean", d.logperm_mean)?;
        cfg.logperm_std = raw.take("sim.logperm_std", d.logperm_std)?;
        cfg.corr_len = [
            raw.take("sim.corr_x", d.corr_len[0])?,
            raw.take("sim.corr_y", d.corr_len[1])?,
            raw.take("sim.corr_z", d.corr_len[2])?,
        ];
        cfg.newton_tol = raw.take("sim.newton_tol", d.newton_tol)?;
        cfg.newton_max_iter = raw.take("sim.newton_max_iter", d.newton_max_iter)?;

        let (fno_preset, _) = raw.take_str("fno.preset", "desk");
        match fno_preset.as_str() {
            "desk" => {}
            "paper" => cfg.fno = FnoConfig::paper_preset(),
            other => bail!("unknown fno preset '{other}' (desk | paper)"),
        }
        cfg.fno.latent_width = raw.take("fno.width", cfg.fno.latent_width)?;
        cfg.fno.n_layers = raw.take("fno.layers", cfg.fno.n_layers)?;
        cfg.fno.k_max = [
            raw.take("fno.kmax_x", cfg.fno.k_max[0])?,
            raw.take("fno.kmax_y", cfg.fno.k_max[1])?,
            raw.take("fno.kmax_z", cfg.fno.k_max[2])?,
        ];
        let (act, act_line) = raw.take_str("fno.activation", "gelu");
        cfg.fno.activation = Activation::from_tag(&act)
            .map_err(|e| anyhow!("line {}: {e}", act_line.unwrap_or(0)))?;
        cfg.fno.mirror_pad = raw.take_bool("fno.mirror_pad", cfg.fno.mirror_pad)?;
        cfg.fno.p_min = raw.take("fno.p_min", cfg.fno.p_min)?;

        let (paradigm, par_line) = raw.take_str("train.paradigm", d.train.paradigm.tag());
        cfg.train.paradigm = Paradigm::from_tag(&paradigm)
            .map_err(|e| anyhow!("line {}: {e}", par_line.unwrap_or(0)))?;
        cfg.train.k_window = raw.take("train.k", d.train.k_window)?;
        if cfg.train.k_window == 0 {
            bail!("train.k must be >= 1");
        }
        cfg.train.lambda_r = raw.take("train.lambda_r", d.train.lambda_r)?;
        cfg.train.component_weights = [
            raw.take("train.wp", d.train.component_weights[0])?,
            raw.take("train.ww", d.train.component_weights[1])?,
            raw.take("train.wo", d.train.component_weights[2])?,
            raw.take("train.wg", d.train.component_weights[3])?,
        ];
        cfg.train.physics_weights = [
            raw.take("train.lp", d.train.physics_weights[0])?,
            raw.take("train.ls", d.train.physics_weights[1])?,
            raw.take("train.lg", d.train.physics_weights[2])?,
        ];
        cfg.train.pino_freq = raw.take("train.pino_freq", d.train.pino_freq)?;
        let (anchor, _) = raw.take_str("train.anchor", "closed_loop");
        cfg.train.physics_anchor = match anchor.as_str() {
            "closed_loop" => PhysicsAnchor::ClosedLoop,
            "teacher_forced" => PhysicsAnchor::TeacherForced,
            other => bail!("unknown physics anchor '{other}'"),
        };
        let (step_mode, _) = raw.take_str("train.step_mode", "per_window");
        cfg.train.step_mode = match step_mode.as_str() {
            "per_window" => StepMode::PerWindow,
            "accumulate" => StepMode::Accumulate,
            other => bail!("unknown step mode '{other}'"),
        };
        cfg.train.epochs = raw.take("train.epochs", d.train.epochs)?;
        cfg.train.batch_size = raw.take("train.batch", d.train.batch_size)?;
        cfg.train.learning_rate = raw.take("train.lr", d.train.learning_rate)?;
        cfg.train.sqrt_t_schedule = raw.take_bool("train.sqrt_t_schedule", d.train.sqrt_t_schedule)?;
        cfg.allow_norne_train = raw.take_bool("train.allow_norne", d.allow_norne_train)?;

        cfg.eval_members = raw.take("eval.members", d.eval_members)?;
        cfg.eval_probes = raw.take("eval.probes", d.eval_probes)?;
        cfg.slack = raw.take("eval.slack", d.slack)?;

        cfg.lambda_sweep = raw.take_list_f64("verify.lambda_sweep", &d.lambda_sweep)?;
        cfg.k_sweep = raw.take_list_usize("verify.k_sweep", &d.k_sweep)?;
        cfg.gibbs_kmax = raw.take_list_usize("verify.gibbs_kmax", &d.gibbs_kmax)?;
        cfg.spectral_iters = raw.take("verify.spectral_iters", d.spectral_iters)?;
        let (rf, rf_line) = raw.take_str("verify.rollout_fixture", &d.rollout_fixture);
        if rf != "surrogate" && rf != "upwind" {
            bail!("line {}: verify.rollout_fixture must be surrogate|upwind", rf_line.unwrap_or(0));
        }
        cfg.rollout_fixture = rf;
        let (cf, cf_line) = raw.take_str("verify.coupling_fixture", &d.coupling_fixture);
        if cf != "surrogate" && cf != "upwind" {
            bail!("line {}: verify.coupling_fixture must be surrogate|upwind", cf_line.unwrap_or(0));
        }
        cfg.coupling_fixture = cf;

        cfg.seed = raw.take("run.seed", d.seed)?;

        raw.finish()?;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_overrides(mut self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self);
        }
        // Re-parse through the same strict path: echo + overrides, so every
        // override is validated like a file line.
        let mut text = self.to_config_text();
        for ov in overrides {
            if !ov.contains('=') {
                bail!("override '{ov}' must look like section.key=value");
            }
            text.push_str(ov);
            text.push('\n');
        }
        // Later duplicates would be rejected; strip earlier lines instead.
        let mut last: BTreeMap<String, String> = BTreeMap::new();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                last.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let mut merged = String::new();
        for (k, v) in last {
            let _ = writeln!(merged, "{k} = {v}");
        }
        self = Self::from_text(&merged)?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.fluid.validate().map_err(|e| anyhow!("{e}"))?;
        self.capillary.validate().map_err(|e| anyhow!("{e}"))?;
        self.layout.validate().map_err(|e| anyhow!("{e}"))?;
        if self.t_steps == 0 || self.n_members == 0 {
            bail!("sim.t_steps and sim.n_members must be >= 1");
        }
        if self.train.k_window > self.t_steps {
            bail!(
                "train.k = {} exceeds sim.t_steps = {}",
                self.train.k_window,
                self.t_steps
            );
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        self.preset.grid()
    }

    /// The resolved FNO config, clamped to this grid's Nyquist limits.
    pub fn fno_for_grid(&self) -> FnoConfig {
        self.fno.clone().clamped_for(&self.grid())
    }

    pub fn simulator(&self) -> bolab_core::sim::Simulator {
        let mut sim = bolab_core::sim::Simulator::new(self.grid());
        sim.fluid = self.fluid.clone();
        sim.relperm = self.relperm;
        sim.capillary = self.capillary;
        sim.newton.tol_residual = self.newton_tol;
        sim.newton.max_iter = self.newton_max_iter;
        sim
    }

    pub fn dataset_config(&self, n_members: usize, seed: u64) -> DatasetConfig {
        DatasetConfig {
            n_members,
            t_steps: self.t_steps,
            dt: self.dt,
            porosity: FieldGenConfig {
                corr_len: self.corr_len,
                mean: self.porosity_mean,
                std: self.porosity_std,
            },
            log_perm: FieldGenConfig {
                corr_len: self.corr_len,
                mean: self.logperm_mean,
                std: self.logperm_std,
            },
            layout: self.layout.clone(),
            initial_pressure: self.initial_pressure,
            initial_sw: self.initial_sw,
            initial_sg: self.initial_sg,
            seed,
        }
    }

    /// Full echo: every key with its resolved value, parseable by
    /// [`ExperimentConfig::from_text`].
    pub fn to_config_text(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        let _ = writeln!(w, "grid.preset = {}", self.preset.tag());
        let _ = writeln!(w, "fluid.mu_w = {}", self.fluid.mu_w);
        let _ = writeln!(w, "fluid.mu_o = {}", self.fluid.mu_o);
        let _ = writeln!(w, "fluid.mu_g = {}", self.fluid.mu_g);
        let _ = writeln!(w, "fluid.rho_w = {}", self.fluid.rho_w);
        let _ = writeln!(w, "fluid.rho_o = {}", self.fluid.rho_o);
        let _ = writeln!(w, "fluid.rho_g = {}", self.fluid.rho_g);
        let _ = writeln!(w, "fluid.bo_ref = {}", self.fluid.b_o.b_ref);
        let _ = writeln!(w, "fluid.bo_compr = {}", self.fluid.b_o.compressibility);
        let _ = writeln!(w, "fluid.bo_pref = {}", self.fluid.b_o.p_ref);
        let _ = writeln!(w, "fluid.bg_ref = {}", self.fluid.b_g.b_ref);
        let _ = writeln!(w, "fluid.bg_compr = {}", self.fluid.b_g.compressibility);
        let _ = writeln!(w, "fluid.bg_pref = {}", self.fluid.b_g.p_ref);
        let _ = writeln!(w, "fluid.rso_slope = {}", self.fluid.r_so.slope);
        let _ = writeln!(w, "fluid.rso_pbubble = {}", self.fluid.r_so.p_bubble);
        let _ = writeln!(w, "fluid.gravity = {}", self.fluid.gravity);
        let _ = writeln!(w, "relperm.swc = {}", self.relperm.swc);
        let _ = writeln!(w, "relperm.sor = {}", self.relperm.sor);
        let _ = writeln!(w, "relperm.nw = {}", self.relperm.n_w);
        let _ = writeln!(w, "relperm.no = {}", self.relperm.n_o);
        let _ = writeln!(w, "relperm.ng = {}", self.relperm.n_g);
        let _ = writeln!(w, "relperm.kw_end = {}", self.relperm.kw_end);
        let _ = writeln!(w, "relperm.ko_end = {}", self.relperm.ko_end);
        let _ = writeln!(w, "relperm.kg_end = {}", self.relperm.kg_end);
        let _ = writeln!(w, "capillary.eps_cwo = {}", self.capillary.eps_cwo);
        let _ = writeln!(w, "capillary.eps_cog = {}", self.capillary.eps_cog);
        let _ = writeln!(w, "wells.producers = {}", self.layout.n_producers);
        let _ = writeln!(w, "wells.injectors = {}", self.layout.n_injectors);
        let _ = writeln!(
            w,
            "wells.injected_pv_per_step = {}",
            self.layout.injected_pv_per_step
        );
        let _ = writeln!(w, "wells.gas_fraction = {}", self.layout.gas_fraction);
        let _ = writeln!(
            w,
            "wells.rate_perturb_std = {}",
            self.layout.rate_perturb_std
        );
        let _ = writeln!(w, "sim.dt = {}", self.dt);
        let _ = writeln!(w, "sim.t_steps = {}", self.t_steps);
        let _ = writeln!(w, "sim.n_members = {}", self.n_members);
        let _ = writeln!(w, "sim.initial_pressure = {}", self.initial_pressure);
        let _ = writeln!(w, "sim.initial_sw = {}", self.initial_sw);
        let _ = writeln!(w, "sim.initial_sg = {}", self.initial_sg);
        let _ = writeln!(w, "sim.porosity_mean = {}", self.porosity_mean);
        let _ = writeln!(w, "sim.porosity_std = {}", self.porosity_std);
        let _ = writeln!(w, "sim.logperm_mean = {}", self.logperm_mean);
        let _ = writeln!(w, "sim.logperm_std = {}", self.logperm_std);
        let _ = writeln!(w, "sim.corr_x = {}", self.corr_len[0]);
        let _ = writeln!(w, "sim.corr_y = {}", self.corr_len[1]);
        let _ = writeln!(w, "sim.corr_z = {}", self.corr_len[2]);
        let _ = writeln!(w, "sim.newton_tol = {}", self.newton_tol);
        let _ = writeln!(w, "sim.newton_max_iter = {}", self.newton_max_iter);
        let _ = writeln!(w, "fno.width = {}", self.fno.latent_width);
        let _ = writeln!(w, "fno.layers = {}", self.fno.n_layers);
        let _ = writeln!(w, "fno.kmax_x = {}", self.fno.k_max[0]);
        let _ = writeln!(w, "fno.kmax_y = {}", self.fno.k_max[1]);
        let _ = writeln!(w, "fno.kmax_z = {}", self.fno.k_max[2]);
        let act = match self.fno.activation {
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        };
        let _ = writeln!(w, "fno.activation = {act}");
        let _ = writeln!(w, "fno.mirror_pad = {}", self.fno.mirror_pad);
        let _ = writeln!(w, "fno.p_min = {}", self.fno.p_min);
        let _ = writeln!(w, "train.paradigm = {}", self.train.paradigm.tag());
        let _ = writeln!(w, "train.k = {}", self.train.k_window);
        let _ = writeln!(w, "train.lambda_r = {}", self.train.lambda_r);
        let _ = writeln!(w, "train.wp = {}", self.train.component_weights[0]);
        let _ = writeln!(w, "train.ww = {}", self.train.component_weights[1]);
        let _ = writeln!(w, "train.wo = {}", self.train.component_weights[2]);
        let _ = writeln!(w, "train.wg = {}", self.train.component_weights[3]);
        let _ = writeln!(w, "train.lp = {}", self.train.physics_weights[0]);
        let _ = writeln!(w, "train.ls = {}", self.train.physics_weights[1]);
        let _ = writeln!(w, "train.lg = {}", self.train.physics_weights[2]);
        let _ = writeln!(w, "train.pino_freq = {}", self.train.pino_freq);
        let anchor = match self.train.physics_anchor {
            PhysicsAnchor::ClosedLoop => "closed_loop",
            PhysicsAnchor::TeacherForced => "teacher_forced",
        };
        let _ = writeln!(w, "train.anchor = {anchor}");
        let step_mode = match self.train.step_mode {
            StepMode::PerWindow => "per_window",
            StepMode::Accumulate => "accumulate",
        };
        let _ = writeln!(w, "train.step_mode = {step_mode}");
        let _ = writeln!(w, "train.epochs = {}", self.train.epochs);
        let _ = writeln!(w, "train.batch = {}", self.train.batch_size);
        let _ = writeln!(w, "train.lr = {}", self.train.learning_rate);
        let _ = writeln!(w, "train.sqrt_t_schedule = {}", self.train.sqrt_t_schedule);
        let _ = writeln!(w, "train.allow_norne = {}", self.allow_norne_train);
        let _ = writeln!(w, "eval.members = {}", self.eval_members);
        let _ = writeln!(w, "eval.probes = {}", self.eval_probes);
        let _ = writeln!(w, "eval.slack = {}", self.slack);
        let join_f = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let join_u = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let _ = writeln!(w, "verify.lambda_sweep = {}", join_f(&self.lambda_sweep));
        let _ = writeln!(w, "verify.k_sweep = {}", join_u(&self.k_sweep));
        let _ = writeln!(w, "verify.gibbs_kmax = {}", join_u(&self.gibbs_kmax));
        let _ = writeln!(w, "verify.spectral_iters = {}", self.spectral_iters);
        let _ = writeln!(w, "verify.rollout_fixture = {}", self.rollout_fixture);
        let _ = writeln!(w, "verify.coupling_fixture = {}", self.coupling_fixture);
        let _ = writeln!(w, "run.seed = {}", self.seed);
        s
    }
}
