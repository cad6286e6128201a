//! The seven experiment drivers. Each validates up front, computes, writes
//! plot-ready CSVs plus a manifest, and signals tolerance failures through
//! the exit code.

use icalab::metrics;
use icalab::ode;
use icalab::pde;
use icalab::simulate::{self, calibrate_g_sign};

use crate::config::Resolved;
use crate::output::{csv, fmt, GSignRecord, Manifest, OutputWriter};
use crate::AppError;

pub struct CommandResult {
    pub writer: OutputWriter,
    pub g_sign: GSignRecord,
    pub trial_seeds: Vec<u64>,
    pub results: serde_json::Value,
    /// Tolerance verdict: None when the command has no bands to check.
    pub tolerance_failure: Option<String>,
}

fn calibrate(res: &Resolved) -> Result<GSignRecord, AppError> {
    if !res.raw.calibrate.enabled {
        return Ok(GSignRecord::default_sign());
    }
    let cal = &res.raw.calibrate;
    let (_, ev) = calibrate_g_sign(&res.ctx, cal.probe_q, cal.n, cal.samples, res.seed)
        .map_err(AppError::from_compute)?;
    Ok(GSignRecord::calibrated(&ev))
}

fn trial_seeds(base: u64, trials: usize) -> Vec<u64> {
    (0..trials).map(|i| base.wrapping_add(i as u64)).collect()
}

fn density_rows(
    t: f64,
    grid: &pde::Grid1D,
    per_atom: &[(f64, Vec<f64>)],
    rows: &mut Vec<String>,
) {
    for (xi, density) in per_atom {
        for (j, d) in density.iter().enumerate() {
            rows.push(format!(
                "{},{},{},{}",
                fmt(t),
                fmt(*xi),
                fmt(grid.center(j)),
                fmt(*d)
            ));
        }
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------
pub fn cmd_simulate(res: &Resolved) -> Result<CommandResult, AppError> {
    let g_sign = calibrate(res)?;
    let trials = res.raw.sim.trials;
    let outs = simulate::run_trials(&res.trial_config(), &res.ctx, &res.sched, trials)
        .map_err(AppError::from_compute)?;

    let mut writer = OutputWriter::create(&res.out_dir)?;
    let mut rows = Vec::new();
    for (trial, out) in outs.iter().enumerate() {
        for k in 0..out.trajectory.len() {
            rows.push(format!(
                "{},{},{},{}",
                fmt(out.trajectory.times[k]),
                trial,
                fmt(out.trajectory.q[k]),
                fmt(out.trajectory.r[k])
            ));
        }
    }
    writer.write_file("sim_trajectory.csv", &csv("t,trial,Q,R", rows))?;

    if !res.raw.time.snapshot_times.is_empty() {
        let grid = res.grid()?;
        let atoms = res.atom_values();
        let mut rows = Vec::new();
        for snap in &outs[0].snapshots {
            let hists = metrics::conditional_histograms(&outs[0].xi, &snap.x, &atoms, &grid)
                .map_err(AppError::from_compute)?;
            let per_atom: Vec<(f64, Vec<f64>)> =
                hists.into_iter().map(|h| (h.xi, h.density)).collect();
            density_rows(snap.t, &grid, &per_atom, &mut rows);
        }
        writer.write_file("sim_density.csv", &csv("t,xi,x,density", rows))?;
    }

    let final_q: Vec<f64> = outs
        .iter()
        .map(|o| *o.trajectory.q.last().unwrap())
        .collect();
    let mean_q = final_q.iter().sum::<f64>() / trials as f64;
    Ok(CommandResult {
        writer,
        g_sign,
        trial_seeds: trial_seeds(res.seed, trials),
        results: serde_json::json!({ "terminal_q_mean": mean_q, "trials": trials }),
        tolerance_failure: None,
    })
}

// ---------------------------------------------------------------------------
// ode
// ---------------------------------------------------------------------------
pub fn cmd_ode(res: &Resolved) -> Result<CommandResult, AppError> {
    let corr0 = res.raw.model.q0.sqrt();
    let sol = ode::solve_general(
        &res.ctx,
        &res.sched,
        corr0,
        res.raw.time.t_end,
        res.raw.ode.dt,
    )
    .map_err(AppError::from_config_stage)?;
    let mut writer = OutputWriter::create(&res.out_dir)?;
    let rows = (0..sol.times.len()).map(|i| {
        format!(
            "{},{},{}",
            fmt(sol.times[i]),
            fmt(sol.q[i]),
            fmt(sol.corr[i])
        )
    });
    writer.write_file("ode.csv", &csv("t,q,Q", rows))?;
    Ok(CommandResult {
        writer,
        g_sign: GSignRecord::default_sign(),
        trial_seeds: vec![],
        results: serde_json::json!({ "terminal_q": sol.q.last() }),
        tolerance_failure: None,
    })
}

// ---------------------------------------------------------------------------
// pde
// ---------------------------------------------------------------------------
pub fn cmd_pde(res: &Resolved) -> Result<CommandResult, AppError> {
    let g_sign = calibrate(res)?;
    let cfg = res.pde_config(res.raw.time.snapshot_times.clone())?;
    let sol = pde::solve(&cfg, &res.ctx, &res.sched).map_err(AppError::from_compute)?;
    let mut writer = OutputWriter::create(&res.out_dir)?;
    write_pde_outputs(&mut writer, &sol, "pde")?;
    Ok(CommandResult {
        writer,
        g_sign,
        trial_seeds: vec![],
        results: serde_json::json!({
            "steps": sol.steps,
            "terminal_q": sol.path.q.last(),
            "max_mass_drift": sol.max_mass_drift,
            "clipped_mass": sol.clipped_mass,
            "max_boundary_mass": sol.max_boundary_mass,
        }),
        tolerance_failure: None,
    })
}

fn write_pde_outputs(
    writer: &mut OutputWriter,
    sol: &pde::PdeSolution,
    prefix: &str,
) -> Result<(), AppError> {
    let rows = (0..sol.path.len()).map(|i| {
        format!(
            "{},{},{}",
            fmt(sol.path.times[i]),
            fmt(sol.path.q[i]),
            fmt(sol.path.r[i])
        )
    });
    writer.write_file(&format!("{prefix}_path.csv"), &csv("t,Q,R", rows))?;
    if !sol.snapshots.is_empty() {
        let mut rows = Vec::new();
        for snap in &sol.snapshots {
            let per_atom: Vec<(f64, Vec<f64>)> = snap
                .atoms
                .iter()
                .map(|a| (a.xi, a.density.clone()))
                .collect();
            density_rows(snap.t, &snap.grid, &per_atom, &mut rows);
        }
        writer.write_file(
            &format!("{prefix}_density.csv"),
            &csv("t,xi,x,density", rows),
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// decoupled
// ---------------------------------------------------------------------------
pub fn cmd_decoupled(res: &Resolved) -> Result<CommandResult, AppError> {
    let g_sign = calibrate(res)?;
    let mut writer = OutputWriter::create(&res.out_dir)?;
    let path = match res.raw.decoupled.drive.as_str() {
        "pde" => {
            let cfg = res.pde_config(vec![])?;
            let sol = pde::solve(&cfg, &res.ctx, &res.sched).map_err(AppError::from_compute)?;
            write_pde_outputs(&mut writer, &sol, "pde")?;
            sol.path
        }
        "ode" => {
            let sol = ode::solve_general(
                &res.ctx,
                &res.sched,
                res.raw.model.q0.sqrt(),
                res.raw.time.t_end,
                res.raw.ode.dt,
            )
            .map_err(AppError::from_config_stage)?;
            sol.as_qr_path()
        }
        other => {
            return Err(AppError::config(format!(
                "decoupled.drive = '{other}' (expected pde | ode)"
            )));
        }
    };
    let cfg = res.decoupled_config(res.raw.time.snapshot_times.clone());
    let out =
        simulate::run_decoupled(&cfg, &res.ctx, &res.sched, &path).map_err(AppError::from_compute)?;

    let rows = (0..out.trajectory.len()).map(|i| {
        format!(
            "{},{},{}",
            fmt(out.trajectory.times[i]),
            fmt(out.trajectory.q[i]),
            fmt(out.trajectory.r[i])
        )
    });
    writer.write_file("decoupled_trajectory.csv", &csv("t,Q,R", rows))?;

    if !out.snapshots.is_empty() {
        let grid = res.grid()?;
        let atoms = res.atom_values();
        let mut rows = Vec::new();
        for snap in &out.snapshots {
            let per_atom: Vec<(f64, Vec<f64>)> = atoms
                .iter()
                .map(|&a| {
                    let samples: Vec<f64> = out
                        .xi
                        .iter()
                        .zip(&snap.z)
                        .filter(|(&x, _)| (x - a).abs() < 1e-9)
                        .map(|(_, &z)| z)
                        .collect();
                    (a, metrics::histogram_of_samples(&samples, &grid))
                })
                .collect();
            density_rows(snap.t, &grid, &per_atom, &mut rows);
        }
        writer.write_file("decoupled_density.csv", &csv("t,xi,x,density", rows))?;
    }

    Ok(CommandResult {
        writer,
        g_sign,
        trial_seeds: vec![cfg.seed],
        results: serde_json::json!({
            "particles": cfg.n_particles,
            "terminal_q": out.trajectory.q.last(),
        }),
        tolerance_failure: None,
    })
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------
pub fn cmd_compare(res: &Resolved) -> Result<CommandResult, AppError> {
    let target = match res.raw.compare.target.as_str() {
        "auto" => {
            if res.phi.is_none() {
                "ode"
            } else {
                "pde"
            }
        }
        "ode" => "ode",
        "pde" => "pde",
        other => {
            return Err(AppError::config(format!(
                "compare.target = '{other}' (expected auto | ode | pde)"
            )));
        }
    };
    if target == "ode" && !res.phi.is_none() {
        return Err(AppError::config(
            "compare against the ODE requires phi = none".into(),
        ));
    }
    let g_sign = calibrate(res)?;
    let trials = res.raw.sim.trials;
    let outs = simulate::run_trials(&res.trial_config(), &res.ctx, &res.sched, trials)
        .map_err(AppError::from_compute)?;
    let mut writer = OutputWriter::create(&res.out_dir)?;
    let mut failure: Option<String> = None;
    let results;

    if target == "ode" {
        let ode_sol = ode::solve_general(
            &res.ctx,
            &res.sched,
            res.raw.model.q0.sqrt(),
            res.raw.time.t_end,
            res.raw.ode.dt,
        )
        .map_err(AppError::from_config_stage)?;
        let n_rec = outs[0].trajectory.len();
        let mut rows = Vec::new();
        let mut worst = f64::NEG_INFINITY;
        for k in 0..n_rec {
            let t = outs[0].trajectory.times[k];
            let qs: Vec<f64> = outs.iter().map(|o| o.trajectory.q[k].powi(2)).collect();
            let mean = qs.iter().sum::<f64>() / trials as f64;
            let std = if trials > 1 {
                (qs.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt()
            } else {
                0.0
            };
            let q_ode = ode_sol.interpolate_q(t).map_err(AppError::from_compute)?;
            let band = (res.raw.compare.band_sigma * std).max(res.raw.compare.band_abs);
            let pass = (mean - q_ode).abs() <= band;
            if !pass && failure.is_none() {
                failure = Some(format!(
                    "t = {t}: |mean Q^2 - q_ode| = {:.4} exceeds band {band:.4}",
                    (mean - q_ode).abs()
                ));
            }
            worst = worst.max((mean - q_ode).abs() - band);
            rows.push(format!(
                "{},{},{},{},{},{}",
                fmt(t),
                fmt(q_ode),
                fmt(mean),
                fmt(std),
                fmt(band),
                u8::from(pass)
            ));
        }
        writer.write_file(
            "compare_ode.csv",
            &csv("t,q_ode,q_sim_mean,q_sim_std,band,pass", rows),
        )?;
        results = serde_json::json!({
            "target": "ode",
            "trials": trials,
            "worst_band_margin": worst,
        });
    } else {
        if res.raw.time.snapshot_times.is_empty() {
            return Err(AppError::config(
                "compare against the PDE needs time.snapshot_times".into(),
            ));
        }
        let cfg = res.pde_config(res.raw.time.snapshot_times.clone())?;
        let sol = pde::solve(&cfg, &res.ctx, &res.sched).map_err(AppError::from_compute)?;
        let grid = cfg.grid.unwrap();
        let atoms = res.atom_values();
        let mut density_rows_out = Vec::new();
        let mut summary_rows = Vec::new();
        let mut worst_ks: f64 = 0.0;
        for snap in &sol.snapshots {
            let sim_snap = outs[0]
                .snapshots
                .iter()
                .find(|s| (s.t - snap.t).abs() < 1e-9)
                .ok_or_else(|| {
                    AppError::numeric(format!("missing simulation snapshot at t = {}", snap.t))
                })?;
            let hists = metrics::conditional_histograms(&outs[0].xi, &sim_snap.x, &atoms, &grid)
                .map_err(AppError::from_compute)?;
            for (a, hist) in hists.iter().enumerate() {
                let d = metrics::density_distance(
                    &hist.density,
                    &snap.atoms[a].density,
                    grid.h(),
                )
                .map_err(AppError::from_compute)?;
                worst_ks = worst_ks.max(d.ks);
                let pass = d.ks <= res.raw.compare.ks_tolerance;
                if !pass && failure.is_none() {
                    failure = Some(format!(
                        "t = {}, atom xi = {:.4}: KS = {:.4} exceeds {}",
                        snap.t, hist.xi, d.ks, res.raw.compare.ks_tolerance
                    ));
                }
                summary_rows.push(format!(
                    "{},{},{},{},{}",
                    fmt(snap.t),
                    fmt(hist.xi),
                    fmt(d.ks),
                    fmt(d.w1),
                    u8::from(pass)
                ));
                for (j, (&ds, &dp)) in hist
                    .density
                    .iter()
                    .zip(&snap.atoms[a].density)
                    .enumerate()
                {
                    density_rows_out.push(format!(
                        "{},{},{},{},{}",
                        fmt(snap.t),
                        fmt(hist.xi),
                        fmt(grid.center(j)),
                        fmt(ds),
                        fmt(dp)
                    ));
                }
            }
        }
        writer.write_file(
            "compare_density.csv",
            &csv("t,xi,x,density_sim,density_pde", density_rows_out),
        )?;
        writer.write_file("compare_summary.csv", &csv("t,xi,ks,w1,pass", summary_rows))?;
        results = serde_json::json!({
            "target": "pde",
            "trials": trials,
            "worst_ks": worst_ks,
        });
    }

    Ok(CommandResult {
        writer,
        g_sign,
        trial_seeds: trial_seeds(res.seed, trials),
        results,
        tolerance_failure: failure,
    })
}

// ---------------------------------------------------------------------------
// roc
// ---------------------------------------------------------------------------
pub fn cmd_roc(res: &Resolved) -> Result<CommandResult, AppError> {
    if !res.prior.has_zero_atom() {
        return Err(AppError::config(
            "support recovery needs a prior with a zero atom".into(),
        ));
    }
    let times = if res.raw.roc.times.is_empty() {
        res.raw.time.snapshot_times.clone()
    } else {
        res.raw.roc.times.clone()
    };
    if times.is_empty() {
        return Err(AppError::config(
            "roc needs roc.times (or time.snapshot_times)".into(),
        ));
    }
    let g_sign = calibrate(res)?;

    let mut trial_cfg = res.trial_config();
    trial_cfg.snapshot_times = times.clone();
    let sim = simulate::run_trial(&trial_cfg, &res.ctx, &res.sched).map_err(AppError::from_compute)?;
    let pde_cfg = res.pde_config(times.clone())?;
    let sol = pde::solve(&pde_cfg, &res.ctx, &res.sched).map_err(AppError::from_compute)?;
    let grid = pde_cfg.grid.unwrap();

    let count = res.raw.roc.thresholds.max(2);
    let lo = res.raw.roc.threshold_min;
    let ratio = (grid.x_max() / lo).ln() / (count - 1) as f64;
    let thresholds: Vec<f64> = (0..count).map(|i| lo * (ratio * i as f64).exp()).collect();

    let mut rows = Vec::new();
    let mut diffs = Vec::new();
    let mut failure = None;
    for &t in &times {
        let sim_snap = sim
            .snapshots
            .iter()
            .find(|s| (s.t - t).abs() < 1e-9)
            .ok_or_else(|| AppError::numeric(format!("missing sim snapshot at t = {t}")))?;
        let pde_snap = sol
            .snapshots
            .iter()
            .find(|s| (s.t - t).abs() < 1e-9)
            .ok_or_else(|| AppError::numeric(format!("missing pde snapshot at t = {t}")))?;
        let roc_sim = metrics::roc_from_simulation(&sim.xi, &sim_snap.x, &thresholds)
            .map_err(AppError::from_compute)?;
        let roc_pde =
            metrics::roc_from_pde(pde_snap, &thresholds).map_err(AppError::from_compute)?;
        let mut d_tpr: f64 = 0.0;
        let mut d_fpr: f64 = 0.0;
        for i in 0..thresholds.len() {
            d_tpr = d_tpr.max((roc_sim.tpr[i] - roc_pde.tpr[i]).abs());
            d_fpr = d_fpr.max((roc_sim.fpr[i] - roc_pde.fpr[i]).abs());
            rows.push(format!(
                "{},{},{},{},sim",
                fmt(t),
                fmt(thresholds[i]),
                fmt(roc_sim.tpr[i]),
                fmt(roc_sim.fpr[i])
            ));
            rows.push(format!(
                "{},{},{},{},pde",
                fmt(t),
                fmt(thresholds[i]),
                fmt(roc_pde.tpr[i]),
                fmt(roc_pde.fpr[i])
            ));
        }
        if (d_tpr > res.raw.roc.tolerance || d_fpr > res.raw.roc.tolerance) && failure.is_none() {
            failure = Some(format!(
                "t = {t}: sup |TPR diff| = {d_tpr:.4}, sup |FPR diff| = {d_fpr:.4} exceeds {}",
                res.raw.roc.tolerance
            ));
        }
        diffs.push(serde_json::json!({
            "t": t,
            "sup_tpr_diff": d_tpr,
            "sup_fpr_diff": d_fpr,
            "auc_sim": roc_sim.auc(),
            "auc_pde": roc_pde.auc(),
        }));
    }
    let mut writer = OutputWriter::create(&res.out_dir)?;
    writer.write_file("roc.csv", &csv("t,threshold,tpr,fpr,source", rows))?;
    Ok(CommandResult {
        writer,
        g_sign,
        trial_seeds: vec![res.seed],
        results: serde_json::json!({ "times": diffs, "tolerance": res.raw.roc.tolerance }),
        tolerance_failure: failure,
    })
}

// ---------------------------------------------------------------------------
// bifurcation
// ---------------------------------------------------------------------------
pub fn cmd_bifurcation(res: &Resolved) -> Result<CommandResult, AppError> {
    use icalab::coeffs::Nonlinearity;
    if !matches!(res.f, Nonlinearity::Cube | Nonlinearity::NegCube) {
        return Err(AppError::config(
            "bifurcation analysis uses the cubic-family closed forms; set algorithm.f to cube or neg_cube"
                .into(),
        ));
    }
    let (m4, m6) = res.source.moments();
    let taus = &res.raw.bifurcation.taus;
    if taus.is_empty() || taus.iter().any(|&t| t <= 0.0) {
        return Err(AppError::config("bifurcation.taus must be positive".into()));
    }
    let q_points = res.raw.bifurcation.q_points.max(10);

    let mut curve_rows = Vec::new();
    for &tau in taus {
        for i in 1..=q_points {
            let q = i as f64 / q_points as f64;
            let g = ode::rhs_example1(tau, q, m4, m6) / tau;
            curve_rows.push(format!("{},{},{}", fmt(tau), fmt(q), fmt(g)));
        }
    }
    let table = ode::bifurcation_table(taus, m4, m6);
    let fp_rows = table.branches.iter().map(|b| {
        format!(
            "{},{},{}",
            fmt(b.tau),
            b.q_unstable.map(fmt).unwrap_or_default(),
            b.q_stable.map(fmt).unwrap_or_default()
        )
    });

    let mut writer = OutputWriter::create(&res.out_dir)?;
    writer.write_file("bifurcation_curves.csv", &csv("tau,q,g", curve_rows))?;
    writer.write_file("fixed_points.csv", &csv("tau,q_unstable,q_stable", fp_rows))?;
    let results = match &table.tau_c {
        Some(tc) => serde_json::json!({
            "m4": m4, "m6": m6,
            "tau_c": tc.tau_c,
            "bracket_width": tc.bracket.1 - tc.bracket.0,
        }),
        None => serde_json::json!({
            "m4": m4, "m6": m6,
            "tau_c": null,
            "note": "no informative branch for this source",
        }),
    };
    Ok(CommandResult {
        writer,
        g_sign: GSignRecord::default_sign(),
        trial_seeds: vec![],
        results,
        tolerance_failure: None,
    })
}

pub fn finish(
    res: &Resolved,
    command: &str,
    config_path: &str,
    config_echo: String,
    started: std::time::Instant,
    out: CommandResult,
) -> Result<i32, AppError> {
    let CommandResult {
        mut writer,
        g_sign,
        trial_seeds,
        results,
        tolerance_failure,
    } = out;
    Manifest {
        tool: "icalab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config_path: config_path.into(),
        config_echo,
        seed: res.seed,
        trial_seeds,
        g_sign,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        results,
        outputs: vec![],
    }
    .write(&mut writer)?;
    match tolerance_failure {
        None => Ok(0),
        Some(msg) => {
            eprintln!("tolerance failure: {msg}");
            Ok(2)
        }
    }
}
