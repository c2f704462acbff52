//! The experiment subcommands.

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{ExperimentConfig, GridPreset};
use crate::data::{load_dataset, save_dataset};
use crate::eval::{
    delta_max_per_step, eval_dataset, measure_l_hat, predicted_ensemble, rho_hat, rollout_all,
};
use crate::rundir::{fmt, CsvFile, RunDir};
use anyhow::{anyhow, bail, Result};
use bolab_core::autodiff::Tensor;
use bolab_core::blackoil::StepContext;
use bolab_core::fno::{fit_power_law, spectral_truncation_error, FnoSurrogate};
use bolab_core::grid::{pv_norm, Component, Grid};
use bolab_core::sim::upwind::{l2_norm, DcOffset, Upwind1d};
use bolab_core::sim::{estimate_onestep_error, gen_dataset, Dataset, Simulator};
use bolab_core::train::{
    tbptt_gradient, train_ar_tbptt, train_one_step, Paradigm, ScalarLinearModel, TrainConfig,
    TruncationMode,
};
use bolab_core::verify::{
    bound_geometric, bound_uniform, check_rollout, jacobian_gap, phi_weights, tbptt_bias_curve,
    SimulatorJacobian, SurrogateJacobian,
};

/// Outcome of a verify-* subcommand: `violated` maps to exit code 2.
pub struct VerifyOutcome {
    pub violated: bool,
}

fn summary_line(run: &RunDir, lines: &[String]) -> Result<()> {
    let mut text = String::new();
    for l in lines {
        println!("{l}");
        text.push_str(l);
        text.push('\n');
    }
    let path = run.file("summary.txt");
    let existing = std::fs::read_to_string(&path).unwrap_or_default();
    std::fs::write(path, existing + &text)?;
    Ok(())
}

pub fn gen_data(cfg: &ExperimentConfig, run: &RunDir) -> Result<()> {
    let sim = cfg.simulator();
    let dcfg = cfg.dataset_config(cfg.n_members, cfg.seed);
    let dataset = gen_dataset(&sim, &dcfg).map_err(|e| anyhow!("{e}"))?;
    save_dataset(&run.file("data"), &dataset, &sim.grid)?;
    summary_line(
        run,
        &[format!(
            "gen-data: {} members (T = {}, dt = {}), {} failed",
            dataset.n_members(),
            dataset.t_steps(),
            dataset.dt,
            dataset.failed.len()
        )],
    )?;
    Ok(())
}

fn load_or_generate_data(cfg: &ExperimentConfig, run: &RunDir, sim: &Simulator) -> Result<Dataset> {
    let dir = run.file("data");
    if dir.join("index.csv").exists() {
        load_dataset(&dir, &sim.grid)
    } else {
        let dcfg = cfg.dataset_config(cfg.n_members, cfg.seed);
        let ds = gen_dataset(sim, &dcfg).map_err(|e| anyhow!("{e}"))?;
        save_dataset(&dir, &ds, &sim.grid)?;
        Ok(ds)
    }
}

fn train_with(
    cfg: &ExperimentConfig,
    sim: &Simulator,
    dataset: &Dataset,
    train_cfg: &TrainConfig,
) -> Result<(FnoSurrogate, bolab_core::train::LossReport)> {
    let fno_cfg = cfg.fno_for_grid();
    let result = match train_cfg.paradigm {
        Paradigm::OneStep => train_one_step(&fno_cfg, train_cfg, sim, dataset, None),
        Paradigm::ArFull => {
            let mut full = train_cfg.clone();
            full.k_window = dataset.t_steps();
            train_ar_tbptt(&fno_cfg, &full, sim, dataset, None)
        }
        Paradigm::ArTbptt => train_ar_tbptt(&fno_cfg, train_cfg, sim, dataset, None),
    };
    result.map_err(|e| anyhow!("training failed: {e}"))
}

pub fn train(cfg: &ExperimentConfig, run: &RunDir) -> Result<()> {
    if cfg.preset == GridPreset::NorneShape && !cfg.allow_norne_train {
        bail!(
            "training on the norne-shape preset is guarded; set train.allow_norne = true to override"
        );
    }
    let sim = cfg.simulator();
    let dataset = load_or_generate_data(cfg, run, &sim)?;
    let (surrogate, report) = train_with(cfg, &sim, &dataset, &cfg.train)?;
    let tag = cfg.train.paradigm.tag();
    save_checkpoint(&run.file(&format!("checkpoint/{tag}")), &surrogate)?;
    let mut csv = CsvFile::create(
        &run.file(&format!("train_log_{tag}.csv")),
        "epoch,supervised,physics,wall_secs",
    )?;
    for e in &report.epochs {
        csv.row(&[
            e.epoch.to_string(),
            fmt(e.supervised),
            fmt(e.physics),
            fmt(e.wall_secs),
        ])?;
    }
    summary_line(
        run,
        &[format!(
            "train[{tag}]: {} epochs, final supervised loss {:.3e}",
            report.epochs.len(),
            report.final_supervised()
        )],
    )?;
    Ok(())
}

pub fn rollout(cfg: &ExperimentConfig, run: &RunDir) -> Result<()> {
    let sim = cfg.simulator();
    let tag = cfg.train.paradigm.tag();
    let surrogate = load_checkpoint(&run.file(&format!("checkpoint/{tag}")), &sim.grid)?;
    let dataset = eval_dataset(cfg, &sim)?;
    let predicted = rollout_all(&surrogate, &dataset)?;
    write_rollout_csv(cfg, run, &sim.grid, tag, &dataset, &predicted)?;
    summary_line(run, &[format!("rollout[{tag}]: {} members evaluated", dataset.n_members())])?;
    Ok(())
}

fn write_rollout_csv(
    cfg: &ExperimentConfig,
    run: &RunDir,
    grid: &Grid,
    tag: &str,
    dataset: &Dataset,
    predicted: &[Vec<bolab_core::grid::State>],
) -> Result<()> {
    let truth = dataset.ensemble().map_err(|e| anyhow!("{e}"))?;
    let pred = predicted_ensemble(predicted)?;
    let rocks = dataset.rocks();
    let mut csv = CsvFile::create(
        &run.file(&format!("rollout_{tag}.csv")),
        "paradigm,component,step,days,r2,err_phi",
    )?;
    for comp in Component::ALL {
        let r2 = bolab_core::grid::r2_per_step(&pred, &truth, comp, &rocks, grid)
            .map_err(|e| anyhow!("{e}"))?;
        for step in 0..truth.n_states() {
            // RMS over members of the per-member component pv-error.
            let mut acc = 0.0;
            for (traj, member) in predicted.iter().zip(&dataset.members) {
                let diff: Vec<f64> = traj[step]
                    .component(comp)
                    .iter()
                    .zip(member.states[step].component(comp))
                    .map(|(a, b)| a - b)
                    .collect();
                let e = pv_norm(&diff, &member.rock, grid).map_err(|e| anyhow!("{e}"))?;
                acc += e * e;
            }
            let err = (acc / predicted.len() as f64).sqrt();
            csv.row(&[
                tag.to_string(),
                comp.name().to_string(),
                step.to_string(),
                fmt(step as f64 * cfg.dt),
                fmt(r2[step]),
                fmt(err),
            ])?;
        }
    }
    Ok(())
}

pub fn verify_rollout(cfg: &ExperimentConfig, run: &RunDir) -> Result<VerifyOutcome> {
    if cfg.rollout_fixture == "upwind" {
        return verify_rollout_upwind(run);
    }
    let sim = cfg.simulator();
    let tag = cfg.train.paradigm.tag();
    let surrogate = load_checkpoint(&run.file(&format!("checkpoint/{tag}")), &sim.grid)?;
    let dataset = eval_dataset(cfg, &sim)?;
    let predicted = rollout_all(&surrogate, &dataset)?;
    let measured = delta_max_per_step(&predicted, &dataset, &sim.grid)?;
    let e = estimate_onestep_error(&surrogate, &dataset, &sim.grid).map_err(|e| anyhow!("{e}"))?;
    let l_hat = measure_l_hat(
        &surrogate,
        &dataset,
        &predicted,
        &sim.grid,
        cfg.eval_probes,
        cfg.seed ^ 0x11,
    )?;
    let report =
        check_rollout(&measured, &e.per_step_max, l_hat, cfg.slack).map_err(|e| anyhow!("{e}"))?;
    let mut csv = CsvFile::create(
        &run.file("verify_rollout.csv"),
        "step,measured,bound,slack,satisfied",
    )?;
    for n in 0..report.measured.len() {
        csv.row(&[
            n.to_string(),
            fmt(report.measured[n]),
            fmt(report.bound[n]),
            fmt(report.slack[n]),
            report.satisfied[n].to_string(),
        ])?;
    }
    let ok = report.all_satisfied();
    summary_line(
        run,
        &[format!(
            "verify-rollout[{tag}]: {} (L_hat = {:.4}, eps_hat = {:.3e}, violations = {})",
            if ok { "PASS" } else { "FAIL" },
            l_hat,
            report.eps_hat,
            report.violations()
        )],
    )?;
    Ok(VerifyOutcome { violated: !ok })
}

fn verify_rollout_upwind(run: &RunDir) -> Result<VerifyOutcome> {
    let n = 64;
    let eps = 1e-3;
    let steps = 50;
    let up = Upwind1d::new(n, 0.5).map_err(|e| anyhow!("{e}"))?;
    let x0: Vec<f64> = (0..n)
        .map(|i| if i < n / 4 { 1.0 } else { 0.0 })
        .collect();
    let truth = up.trajectory(&x0, steps).map_err(|e| anyhow!("{e}"))?;
    let surrogate = DcOffset {
        inner: |x: &[f64]| up.step(x),
        eps,
    };
    let pred = surrogate.trajectory(&x0, steps);
    let measured: Vec<f64> = (0..=steps)
        .map(|s| {
            let diff: Vec<f64> = pred[s].iter().zip(&truth[s]).map(|(a, b)| a - b).collect();
            l2_norm(&diff)
        })
        .collect();
    // Per-step one-step error is exactly eps * sqrt(N); L = 1 on the DC mode.
    let per_step_e = vec![eps * (n as f64).sqrt(); steps];
    let report = check_rollout(&measured, &per_step_e, 1.0, 1.0).map_err(|e| anyhow!("{e}"))?;
    let mut csv = CsvFile::create(
        &run.file("verify_rollout.csv"),
        "step,measured,bound,slack,satisfied",
    )?;
    let mut max_slack = 0.0_f64;
    for s in 0..report.measured.len() {
        max_slack = max_slack.max(report.slack[s].abs());
        csv.row(&[
            s.to_string(),
            fmt(report.measured[s]),
            fmt(report.bound[s]),
            fmt(report.slack[s]),
            report.satisfied[s].to_string(),
        ])?;
    }
    let ok = report.all_satisfied() && max_slack < 1e-12;
    summary_line(
        run,
        &[format!(
            "verify-rollout[upwind]: {} (max |slack| = {max_slack:.2e})",
            if ok { "PASS" } else { "FAIL" }
        )],
    )?;
    Ok(VerifyOutcome { violated: !ok })
}

pub fn verify_coupling(cfg: &ExperimentConfig, run: &RunDir) -> Result<VerifyOutcome> {
    if cfg.coupling_fixture == "upwind" {
        return verify_coupling_upwind(run);
    }
    let sim = cfg.simulator();
    let tag = cfg.train.paradigm.tag();
    let surrogate = load_checkpoint(&run.file(&format!("checkpoint/{tag}")), &sim.grid)?;
    let dataset = eval_dataset(cfg, &sim)?;
    let scenarios: Vec<bolab_core::verify::CouplingScenario> = dataset
        .members
        .iter()
        .map(|m| bolab_core::verify::CouplingScenario {
            rock: m.rock.clone(),
            x0: m.states[0].clone(),
            controls: m.controls.clone(),
        })
        .collect();
    let (divergence, dropped) = bolab_core::verify::coupled_divergence(
        &surrogate,
        &sim,
        &scenarios,
        dataset.dt,
        &sim.grid,
    )
    .map_err(|e| anyhow!("{e}"))?;
    let predicted = rollout_all(&surrogate, &dataset)?;
    let e = estimate_onestep_error(&surrogate, &dataset, &sim.grid).map_err(|e| anyhow!("{e}"))?;
    let l_hat = measure_l_hat(
        &surrogate,
        &dataset,
        &predicted,
        &sim.grid,
        cfg.eval_probes,
        cfg.seed ^ 0x13,
    )?;
    let mut csv = CsvFile::create(
        &run.file("verify_coupling.csv"),
        "step,divergence,bound,satisfied",
    )?;
    let mut ok = true;
    for (n, d) in divergence.iter().enumerate() {
        let bound = bound_geometric(e.eps_max, l_hat, n) * cfg.slack;
        let sat = *d <= bound + 1e-15;
        ok &= sat;
        csv.row(&[n.to_string(), fmt(*d), fmt(bound), sat.to_string()])?;
    }
    summary_line(
        run,
        &[format!(
            "verify-coupling[{tag}]: {} ({} scenarios dropped)",
            if ok { "PASS" } else { "FAIL" },
            dropped
        )],
    )?;
    Ok(VerifyOutcome { violated: !ok })
}

fn verify_coupling_upwind(run: &RunDir) -> Result<VerifyOutcome> {
    // The DC-offset construction attains n * eps * sqrt(N) exactly.
    let n = 64;
    let eps = 1e-3;
    let steps = 50;
    let up = Upwind1d::new(n, 0.5).map_err(|e| anyhow!("{e}"))?;
    let x0: Vec<f64> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * i as f64 / n as f64).sin().max(0.0))
        .collect();
    let truth = up.trajectory(&x0, steps).map_err(|e| anyhow!("{e}"))?;
    let surrogate = DcOffset {
        inner: |x: &[f64]| up.step(x),
        eps,
    };
    let pred = surrogate.trajectory(&x0, steps);
    let mut csv = CsvFile::create(
        &run.file("verify_coupling.csv"),
        "step,divergence,expected,abs_error",
    )?;
    let mut worst = 0.0_f64;
    for s in 1..=steps {
        let diff: Vec<f64> = pred[s].iter().zip(&truth[s]).map(|(a, b)| a - b).collect();
        let measured = l2_norm(&diff);
        let expected = s as f64 * eps * (n as f64).sqrt();
        worst = worst.max((measured - expected).abs());
        csv.row(&[
            s.to_string(),
            fmt(measured),
            fmt(expected),
            fmt((measured - expected).abs()),
        ])?;
    }
    let ok = worst < 1e-12;
    summary_line(
        run,
        &[format!(
            "verify-coupling[upwind]: {} (max deviation from n*eps*sqrt(N): {worst:.2e})",
            if ok { "PASS" } else { "FAIL" }
        )],
    )?;
    Ok(VerifyOutcome { violated: !ok })
}

pub fn verify_tbptt(cfg: &ExperimentConfig, run: &RunDir) -> Result<VerifyOutcome> {
    // Scalar contractive fixture: exactly geometric decay.
    let t = 30;
    let a = 0.5;
    let model = ScalarLinearModel::new(a, 0.1, 1.0, vec![0.3; t]).final_step_loss();
    let ks: Vec<usize> = (2..=8).collect();
    let curve = tbptt_bias_curve(&model, &ks, TruncationMode::ChainLength, Some(a))
        .map_err(|e| anyhow!("{e}"))?;
    let mut csv = CsvFile::create(
        &run.file("verify_tbptt.csv"),
        "K,bias,fitted_slope,rho_hat",
    )?;
    for (k, b) in curve.k_values.iter().zip(&curve.bias) {
        csv.row(&[
            k.to_string(),
            fmt(*b),
            fmt(curve.fitted_slope),
            fmt(a),
        ])?;
    }
    let mut ok = true;
    for w in curve.bias.windows(2) {
        if ((w[0] / w[1]) - 2.0).abs() > 1e-6 {
            ok = false;
        }
    }
    // Full-window equality on the same fixture.
    let (full, _) = bolab_core::train::full_bptt_gradient(&model).map_err(|e| anyhow!("{e}"))?;
    let (at_t, _) = tbptt_gradient(&model, t, TruncationMode::ChainLength)
        .map_err(|e| anyhow!("{e}"))?;
    let eq = (full[0].data()[0] - at_t[0].data()[0]).abs()
        <= 1e-10 * full[0].data()[0].abs().max(1e-30);
    ok &= eq;

    // Trained-surrogate sweep when a checkpoint is present.
    let sim = cfg.simulator();
    let tag = cfg.train.paradigm.tag();
    let ckpt = run.file(&format!("checkpoint/{tag}"));
    if ckpt.join("manifest.txt").exists() {
        let surrogate = load_checkpoint(&ckpt, &sim.grid)?;
        let dataset = eval_dataset(cfg, &sim)?;
        let horizon = dataset.t_steps().min(10);
        let members: Vec<bolab_core::sim::Member> =
            dataset.members.iter().take(2).cloned().collect();
        let leaked: &'static [bolab_core::sim::Member] =
            Box::leak(members.into_boxed_slice());
        let seq = bolab_core::train::FnoSequenceModel::new(
            surrogate.config.clone(),
            surrogate.params.clone(),
            surrogate.stats.clone(),
            sim.grid,
            leaked,
            dataset.dt,
            horizon,
            [1.0; 4],
        )
        .map_err(|e| anyhow!("{e}"))?;
        let ks: Vec<usize> = cfg
            .k_sweep
            .iter()
            .cloned()
            .filter(|&k| k >= 1 && k <= horizon)
            .collect();
        let predicted = rollout_all(&surrogate, &dataset)?;
        let (rho_mean, _) = rho_hat(
            &surrogate,
            &dataset,
            &predicted,
            &sim.grid,
            cfg.spectral_iters,
            8,
        )?;
        let curve = tbptt_bias_curve(&seq, &ks, TruncationMode::ChainLength, Some(rho_mean))
            .map_err(|e| anyhow!("{e}"))?;
        let mut csv = CsvFile::create(
            &run.file(&format!("verify_tbptt_{tag}.csv")),
            "K,bias,fitted_slope,rho_hat",
        )?;
        for (k, b) in curve.k_values.iter().zip(&curve.bias) {
            csv.row(&[k.to_string(), fmt(*b), fmt(curve.fitted_slope), fmt(rho_mean)])?;
        }
        summary_line(
            run,
            &[format!(
                "verify-tbptt[{tag}]: fitted slope {:.3}, ln(rho_hat) = {:.3}",
                curve.fitted_slope,
                rho_mean.ln()
            )],
        )?;
    }

    summary_line(
        run,
        &[format!(
            "verify-tbptt[scalar a=0.5]: {} (fitted slope {:.6}, ln(1/2) = {:.6})",
            if ok { "PASS" } else { "FAIL" },
            curve.fitted_slope,
            (0.5f64).ln()
        )],
    )?;
    Ok(VerifyOutcome { violated: !ok })
}

pub fn verify_spectral(cfg: &ExperimentConfig, run: &RunDir) -> Result<VerifyOutcome> {
    let sim = cfg.simulator();
    let dataset = load_or_generate_data(cfg, run, &sim)?;
    let eval = eval_dataset(cfg, &sim)?;

    let mut csv = CsvFile::create(
        &run.file("verify_spectral.csv"),
        "lambda_r,rho_mean,rho_sup,jacobian_gap,eps_hat,thm11_bound,thm11_sup_delta,thm11_applicable,thm11_pass",
    )?;

    let mut rho_means = Vec::new();
    let mut gaps = Vec::new();
    let mut last_model: Option<(f64, FnoSurrogate)> = None;
    for &lambda in &cfg.lambda_sweep {
        let mut tcfg = cfg.train.clone();
        tcfg.paradigm = Paradigm::ArTbptt;
        tcfg.lambda_r = lambda;
        let (surrogate, _) = train_with(cfg, &sim, &dataset, &tcfg)?;
        let predicted = rollout_all(&surrogate, &eval)?;
        let (rho_mean, rho_sup) = rho_hat(
            &surrogate,
            &eval,
            &predicted,
            &sim.grid,
            cfg.spectral_iters,
            6,
        )?;
        // Jacobian gap at a representative mid-trajectory state.
        let member = &eval.members[0];
        let mid = eval.t_steps() / 2;
        let ctx = StepContext {
            dt: eval.dt,
            t: mid as f64 * eval.dt,
        };
        let wts = phi_weights(&member.rock, &sim.grid);
        let sj = SurrogateJacobian::new(
            &surrogate,
            &member.rock,
            &member.states[mid],
            &member.controls[mid],
            ctx,
        );
        let fj = SimulatorJacobian::at_state(
            &sim,
            &member.rock,
            &member.states[mid],
            &member.controls[mid],
            ctx,
        )
        .map_err(|e| anyhow!("{e}"))?;
        let gap = jacobian_gap(&sj, &fj, Some(&wts), cfg.spectral_iters, 77)
            .map_err(|e| anyhow!("{e}"))?
            .value;

        let e = estimate_onestep_error(&surrogate, &eval, &sim.grid).map_err(|e| anyhow!("{e}"))?;
        let (thm11_bound, thm11_sup, applicable, pass) = if rho_sup < 1.0 {
            let bound = bound_uniform(e.eps_max, rho_sup).map_err(|e| anyhow!("{e}"))? * cfg.slack;
            let sup_delta = delta_max_per_step(&predicted, &eval, &sim.grid)?
                .iter()
                .cloned()
                .fold(0.0_f64, f64::max);
            (bound, sup_delta, true, sup_delta <= bound)
        } else {
            (f64::NAN, f64::NAN, false, true)
        };
        csv.row(&[
            fmt(lambda),
            fmt(rho_mean),
            fmt(rho_sup),
            fmt(gap),
            fmt(e.eps_max),
            fmt(thm11_bound),
            fmt(thm11_sup),
            applicable.to_string(),
            pass.to_string(),
        ])?;
        rho_means.push(rho_mean);
        gaps.push(gap);
        if applicable {
            last_model = Some((lambda, surrogate));
        }
        if applicable && !pass {
            summary_line(
                run,
                &[format!(
                    "verify-spectral: uniform rollout bound violated at lambda_R = {lambda}"
                )],
            )?;
            return Ok(VerifyOutcome { violated: true });
        }
    }
    let _ = last_model;

    // Trend checks, 10% noise allowance.
    let mut ok = true;
    for w in rho_means.windows(2) {
        if w[1] > w[0] * 1.10 {
            ok = false;
        }
    }
    for w in gaps.windows(2) {
        if w[1] > w[0] * 1.10 {
            ok = false;
        }
    }
    summary_line(
        run,
        &[format!(
            "verify-spectral: {} (rho_mean sweep {:?}, gap sweep {:?})",
            if ok { "PASS" } else { "FAIL" },
            rho_means,
            gaps
        )],
    )?;
    Ok(VerifyOutcome { violated: !ok })
}

pub fn verify_gibbs(cfg: &ExperimentConfig, run: &RunDir) -> Result<VerifyOutcome> {
    let n = 1024;
    let step_field = Tensor::from_vec(
        (0..n).map(|i| if i < n / 2 { 1.0 } else { 0.0 }).collect(),
    );
    let mut smooth = vec![0.0; n];
    for k in 1..=(n / 2) {
        let amp = (1.0 + (k * k) as f64).powf(-2.0);
        for (i, d) in smooth.iter_mut().enumerate() {
            let x = 2.0 * std::f64::consts::PI * (k as f64) * (i as f64) / n as f64;
            *d += amp * (x + k as f64 * 0.7).cos();
        }
    }
    let smooth_field = Tensor::from_vec(smooth);

    let mut csv = CsvFile::create(&run.file("verify_gibbs.csv"), "field,k_max,error")?;
    let ks: Vec<f64> = cfg.gibbs_kmax.iter().map(|&k| k as f64).collect();
    let mut errors_step = Vec::new();
    let mut errors_smooth = Vec::new();
    for &k in &cfg.gibbs_kmax {
        let es = spectral_truncation_error(&step_field, &[k], 1.0).map_err(|e| anyhow!("{e}"))?;
        let em = spectral_truncation_error(&smooth_field, &[k], 1.0).map_err(|e| anyhow!("{e}"))?;
        csv.row(&["step".into(), k.to_string(), fmt(es)])?;
        csv.row(&["smooth_s2".into(), k.to_string(), fmt(em)])?;
        errors_step.push(es);
        errors_smooth.push(em);
    }
    let (slope_step, _) = fit_power_law(&ks, &errors_step).map_err(|e| anyhow!("{e}"))?;
    let (slope_smooth, _) = fit_power_law(&ks, &errors_smooth).map_err(|e| anyhow!("{e}"))?;
    let ok = (-0.6..=-0.4).contains(&slope_step) && slope_smooth <= -2.0;
    summary_line(
        run,
        &[format!(
            "verify-gibbs: {} (step exponent {:.3}, smooth exponent {:.3})",
            if ok { "PASS" } else { "FAIL" },
            slope_step,
            slope_smooth
        )],
    )?;
    Ok(VerifyOutcome { violated: !ok })
}

pub fn report(cfg: &ExperimentConfig, run: &RunDir) -> Result<()> {
    // Consolidate the per-paradigm rollout CSVs plus the rollout bound.
    let mut rows: Vec<(String, String, usize, f64, f64, f64)> = Vec::new();
    for tag in ["one_step", "ar_full", "ar_tbptt"] {
        let path = run.file(&format!("rollout_{tag}.csv"));
        let Ok(text) = std::fs::read_to_string(&path) else {
            continue;
        };
        for line in text.lines().skip(1) {
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 6 {
                continue;
            }
            rows.push((
                parts[0].to_string(),
                parts[1].to_string(),
                parts[2].parse().unwrap_or(0),
                parts[3].parse().unwrap_or(f64::NAN),
                parts[4].parse().unwrap_or(f64::NAN),
                parts[5].parse().unwrap_or(f64::NAN),
            ));
        }
    }
    // Rollout bound per step, if a verify run produced one.
    let mut bound_per_step: Vec<f64> = Vec::new();
    if let Ok(text) = std::fs::read_to_string(run.file("verify_rollout.csv")) {
        for line in text.lines().skip(1) {
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() >= 3 {
                bound_per_step.push(parts[2].parse().unwrap_or(f64::NAN));
            }
        }
    }
    let mut csv = CsvFile::create(
        &run.file("report.csv"),
        "paradigm,component,step,days,r2,err_phi,bound",
    )?;
    for (paradigm, component, step, days, r2, err) in &rows {
        let bound = bound_per_step.get(*step).cloned().unwrap_or(f64::NAN);
        csv.row(&[
            paradigm.clone(),
            component.clone(),
            step.to_string(),
            fmt(*days),
            fmt(*r2),
            fmt(*err),
            fmt(bound),
        ])?;
    }
    let n = rows.len();
    summary_line(
        run,
        &[format!(
            "report: {n} rows consolidated (T = {}, dt = {})",
            cfg.t_steps, cfg.dt
        )],
    )?;
    Ok(())
}
