//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use log::{info, warn};
use num_complex::Complex64 as C64;
use serde::Serialize;

use qno_core::analysis::{
    discrete_spectrum, extract_envelope_peaks, fit_ehrenfest_bump, fit_frame_coherence, fit_recurrence_decay,
    fit_spectral_width, group_bumps, DecoherenceFit, SpectrumFit, SpectrumOptions,
};
use qno_core::closedform::{alpha_closed, alpha_lindblad_rwa};
use qno_core::evolve::{integrate_partial, integrate_with, EvolutionMode, Generator, Probes, Trajectory};
use qno_core::fock::{coherent_state_density, FockSpace};
use qno_core::model::{
    cantilever_threshold, classify_regime, derive_timescales, theta_bec, theta_cantilever, validate_params,
    RegimeReport, SurvivalCondition, SystemParams, Timescales,
};
use qno_core::sweep::{draw_parameters, median_abs_log_ratio, run_draw};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{DrawRecord, DrawStatus, SweepManifest};
use crate::output::{ensure_dir, read_csv_columns, to_json, unix_time, write_csv, write_json, SCHEMA_VERSION};

pub const TRAJECTORY_HEADER: [&str; 7] = ["tau", "x", "re_a", "im_a", "n", "trace", "herm_defect"];

#[derive(Serialize)]
struct TimescalesReport {
    schema_version: &'static str,
    params: SystemParams,
    timescales: Timescales,
    regime: RegimeReport,
    warnings: Vec<String>,
}

pub fn timescales(cfg: &RunConfig) -> CliResult<()> {
    let p = cfg.params()?;
    let t = derive_timescales(&p);
    let report = TimescalesReport {
        schema_version: SCHEMA_VERSION,
        params: p,
        timescales: t,
        regime: classify_regime(&t),
        warnings: validate_params(&p).warnings,
    };
    for w in &report.warnings {
        warn!("{w}");
    }
    ensure_dir(&cfg.out)?;
    let text = to_json(&report);
    print!("{text}");
    crate::output::write_atomic(&cfg.out.join("timescales.json"), &text)
}

fn trajectory_rows(traj: &Trajectory) -> impl Iterator<Item = Vec<f64>> + '_ {
    (0..traj.len()).map(move |k| {
        vec![
            traj.times[k],
            traj.x[k],
            traj.a[k].re,
            traj.a[k].im,
            traj.n[k],
            traj.trace[k],
            traj.herm_defect[k],
        ]
    })
}

#[derive(Serialize)]
struct RunDiagnostics {
    dim: usize,
    dt: f64,
    steps: usize,
    samples: usize,
    max_trace_drift: f64,
    max_herm_defect: f64,
    /// Absent when no eigenvalue samples were requested.
    min_eigenvalue: Option<f64>,
    max_energy_drift: f64,
}

impl RunDiagnostics {
    fn of(traj: &Trajectory, dim: usize) -> Self {
        RunDiagnostics {
            dim,
            dt: traj.dt,
            steps: traj.steps,
            samples: traj.len(),
            max_trace_drift: traj.max_trace_drift(),
            max_herm_defect: traj.max_herm_defect(),
            min_eigenvalue: (!traj.min_eigenvalues.is_empty()).then(|| traj.min_eigenvalue()),
            max_energy_drift: traj.max_energy_drift(),
        }
    }
}

#[derive(Serialize, Default)]
struct RunAnalysis {
    /// Ehrenfest time from the first bump.
    tau_e_fit: Option<f64>,
    /// Decay of recurrence heights.
    recurrence: Option<DecoherenceFit>,
    /// Decay of the co-rotating mean amplitude.
    frame_coherence: Option<DecoherenceFit>,
    notes: Vec<String>,
}

fn analyze(p: &SystemParams, traj: &Trajectory) -> RunAnalysis {
    let mut out = RunAnalysis::default();
    if traj.len() < 3 {
        return out;
    }
    let t = derive_timescales(p);
    match extract_envelope_peaks(&traj.times, &traj.x) {
        Ok(peaks) if t.tau_r.is_finite() => {
            let fits: Vec<_> = group_bumps(&peaks, t.tau_r)
                .into_iter()
                .filter_map(|(n, b)| fit_ehrenfest_bump(&b, n, t.tau_r).ok())
                .collect();
            out.tau_e_fit = fits.iter().find(|f| f.n == 0).map(|f| f.tau_e);
            let heights: Vec<(u32, f64)> = fits.iter().map(|f| (f.n, f.peak_height)).collect();
            match fit_recurrence_decay(&heights, t.tau_r) {
                Ok(f) => out.recurrence = Some(f),
                Err(e) => out.notes.push(format!("recurrence decay: {e}")),
            }
        }
        Ok(_) => out.notes.push("no recurrences (mu = 0)".into()),
        Err(e) => out.notes.push(format!("envelope: {e}")),
    }
    if p.gamma > 0.0 && p.mu_bar > 0.0 {
        let om = p.omega_bar();
        let kappa = p.spectral_density().eval(om) / (2.0 * om);
        match fit_frame_coherence(&traj.times, &traj.a_frame, p.mu_bar, kappa) {
            Ok(f) => out.frame_coherence = Some(f),
            Err(e) => out.notes.push(format!("frame coherence: {e}")),
        }
    }
    out
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    schema_version: &'static str,
    generated_unix: u64,
    config: &'a RunConfig,
    params: SystemParams,
    timescales: Timescales,
    diagnostics: RunDiagnostics,
    warnings: &'a [String],
    partial: bool,
    failure: Option<String>,
    analysis: RunAnalysis,
}

pub fn simulate(cfg: &RunConfig) -> CliResult<()> {
    let p = cfg.params()?;
    let ic = cfg.integrator()?;
    let space = FockSpace::for_intensity(p.intensity)?;
    let rho = coherent_state_density(p.alpha(), space)?;
    let mut gen = Generator::new(cfg.mode, &p, space.dim())?;
    ensure_dir(&cfg.out)?;
    info!("simulating {} with N = {} to tau = {}", cfg.mode, space.dim(), cfg.tau_end);
    let (traj, err) = integrate_partial(&mut gen, &rho, &ic, &Probes::default())?;
    let csv_path = cfg.out.join("trajectory.csv");
    write_csv(&csv_path, &TRAJECTORY_HEADER, trajectory_rows(&traj))?;
    let report = SimulateReport {
        schema_version: SCHEMA_VERSION,
        generated_unix: unix_time(),
        config: cfg,
        params: p,
        timescales: derive_timescales(&p),
        diagnostics: RunDiagnostics::of(&traj, space.dim()),
        warnings: &traj.warnings,
        partial: err.is_some(),
        failure: err.as_ref().map(|e| e.to_string()),
        analysis: analyze(&p, &traj),
    };
    write_json(&cfg.out.join("trajectory.json"), &report)?;
    for w in &traj.warnings {
        warn!("{w}");
    }
    info!("wrote {} samples to {}", traj.len(), csv_path.display());
    match err {
        Some(e) => Err(CliError::Integrator(format!("{e} (partial output in {})", cfg.out.display()))),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct CompareReport<'a> {
    schema_version: &'static str,
    mode: EvolutionMode,
    params: SystemParams,
    samples: usize,
    max_abs_deviation: f64,
    rms_abs_deviation: f64,
    /// Deviations divided by `|alpha|`.
    max_rel_deviation: f64,
    rms_rel_deviation: f64,
    tolerance: f64,
    passed: bool,
    diagnostics: RunDiagnostics,
    warnings: &'a [String],
}

/// Default bound on `max |d<a>| / |alpha|` for each oracle.
pub fn default_tolerance(mode: EvolutionMode) -> f64 {
    match mode {
        EvolutionMode::LindbladRwa => 1e-3,
        _ => 1e-6,
    }
}

pub fn compare(cfg: &RunConfig) -> CliResult<()> {
    let oracle: fn(&SystemParams, f64) -> C64 = match cfg.mode {
        EvolutionMode::Closed => |p, t| alpha_closed(p.alpha(), p.mu_bar, t),
        EvolutionMode::LindbladRwa => |p, t| alpha_lindblad_rwa(p.alpha(), p.mu_bar, p.gamma, t),
        m => {
            return Err(CliError::Validation(format!(
                "compare needs mode closed or lindblad-rwa (no closed form for {m})"
            )))
        }
    };
    let tol = cfg.tolerance.unwrap_or_else(|| default_tolerance(cfg.mode));
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(CliError::Validation(format!("tolerance must be > 0, got {tol}")));
    }
    let p = cfg.params()?;
    let ic = cfg.integrator()?;
    let space = FockSpace::for_intensity(p.intensity)?;
    let rho = coherent_state_density(p.alpha(), space)?;
    let mut gen = Generator::new(cfg.mode, &p, space.dim())?;
    ensure_dir(&cfg.out)?;
    let traj = integrate_with(&mut gen, &rho, &ic, &Probes::default())?;
    let dev: Vec<f64> = traj
        .times
        .iter()
        .zip(&traj.a)
        .map(|(&t, a)| (a - oracle(&p, t)).norm())
        .collect();
    let max = dev.iter().copied().fold(0.0, f64::max);
    let rms = (dev.iter().map(|d| d * d).sum::<f64>() / dev.len().max(1) as f64).sqrt();
    let scale = p.alpha().norm().max(f64::MIN_POSITIVE);
    let report = CompareReport {
        schema_version: SCHEMA_VERSION,
        mode: cfg.mode,
        params: p,
        samples: dev.len(),
        max_abs_deviation: max,
        rms_abs_deviation: rms,
        max_rel_deviation: max / scale,
        rms_rel_deviation: rms / scale,
        tolerance: tol,
        passed: max / scale <= tol,
        diagnostics: RunDiagnostics::of(&traj, space.dim()),
        warnings: &traj.warnings,
    };
    write_json(&cfg.out.join("compare.json"), &report)?;
    println!(
        "{}: max |d<a>| = {:.3e} ({:.3e} relative), rms = {:.3e}, tolerance {:.1e}",
        cfg.mode, max, report.max_rel_deviation, rms, tol
    );
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Tolerance(format!(
            "deviation {:.3e} exceeds tolerance {tol:.1e}",
            report.max_rel_deviation
        )))
    }
}

#[derive(Serialize)]
struct SpectrumReport {
    schema_version: &'static str,
    source: String,
    options: SpectrumOptions,
    fit: Option<SpectrumFit>,
    fit_error: Option<String>,
    /// `1 / (2 mu sqrt(I0))` for the configured parameters.
    tau_e_theory: Option<f64>,
    /// Fitted width times the theoretical Ehrenfest time.
    width_tau_e: Option<f64>,
    omega_cl: Option<f64>,
}

pub fn spectrum(cfg: &RunConfig, input: Option<&Path>) -> CliResult<()> {
    let opts = cfg.spectrum_options();
    let (times, x, source, params) = match input {
        Some(path) => {
            let cols = read_csv_columns(path, &["tau", "x"])?;
            let mut it = cols.into_iter();
            let (t, x) = (it.next().unwrap_or_default(), it.next().unwrap_or_default());
            // parameters are only known when a config file came along
            (t, x, path.display().to_string(), cfg.params().ok())
        }
        None => {
            let p = cfg.params()?;
            let ic = cfg.integrator()?;
            let space = FockSpace::for_intensity(p.intensity)?;
            let rho = coherent_state_density(p.alpha(), space)?;
            let mut gen = Generator::new(cfg.mode, &p, space.dim())?;
            let traj = integrate_with(&mut gen, &rho, &ic, &Probes::default())?;
            (traj.times, traj.x, format!("{} run", cfg.mode), Some(p))
        }
    };
    ensure_dir(&cfg.out)?;
    let spec = discrete_spectrum(&times, &x, opts)?;
    write_csv(
        &cfg.out.join("spectrum.csv"),
        &["omega", "amplitude"],
        spec.omega.iter().zip(&spec.amplitude).map(|(&w, &a)| vec![w, a]),
    )?;
    let (fit, fit_error) = match fit_spectral_width(&spec) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let tau_e = params.map(|p| derive_timescales(&p).tau_e).filter(|t| t.is_finite());
    let report = SpectrumReport {
        schema_version: SCHEMA_VERSION,
        source,
        options: opts,
        width_tau_e: fit.as_ref().zip(tau_e).map(|(f, t)| f.width * t),
        fit,
        fit_error,
        tau_e_theory: tau_e,
        omega_cl: params.map(|p| p.omega_cl()),
    };
    let text = to_json(&report);
    print!("{text}");
    crate::output::write_atomic(&cfg.out.join("spectrum.json"), &text)
}

/// Runs every pending draw on `workers` threads. Each worker writes its own
/// result file; this thread alone updates the manifest.
pub fn sweep(cfg: &RunConfig) -> CliResult<()> {
    let seed = cfg
        .seed
        .ok_or_else(|| CliError::Validation("sweep needs a seed (--seed or `seed = ...`)".into()))?;
    let ranges = cfg.ranges()?;
    let opts = cfg.draw_options()?;
    let draws = draw_parameters(seed, cfg.draws, &ranges)?;
    let dir = cfg.out.clone();
    ensure_dir(&dir.join("draws"))?;
    let manifest_path = dir.join("manifest.json");
    let fresh = SweepManifest::new(seed, ranges, opts, &draws);
    let mut manifest = if manifest_path.exists() {
        let old = SweepManifest::load(&manifest_path)?;
        if !old.same_sweep(&fresh) {
            return Err(CliError::Validation(format!(
                "{} belongs to a different sweep; use another --out",
                manifest_path.display()
            )));
        }
        old
    } else {
        fresh
    };
    manifest.save(&manifest_path)?;
    let todo = manifest.pending(&dir);
    let workers = cfg
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .max(1)
        .min(todo.len().max(1));
    info!(
        "sweep seed {seed}: {} draws, {} to run on {workers} worker(s)",
        manifest.draws.len(),
        todo.len()
    );

    let jobs: Vec<(usize, SystemParams, PathBuf)> = todo
        .iter()
        .map(|&i| (i, manifest.draws[i].params, dir.join(&manifest.draws[i].result)))
        .collect();
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<(), String>)>();
    std::thread::scope(|s| -> CliResult<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, jobs) = (&next, &jobs);
            s.spawn(move || loop {
                let Some((index, params, path)) = jobs.get(next.fetch_add(1, Ordering::SeqCst)) else {
                    break;
                };
                let outcome = run_draw(params, &opts).map_err(|e| e.to_string()).and_then(|result| {
                    let record = DrawRecord {
                        schema_version: SCHEMA_VERSION.into(),
                        index: *index,
                        result,
                    };
                    write_json(path, &record).map_err(|e| e.to_string())
                });
                if tx.send((*index, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (index, outcome) in rx {
            let d = &mut manifest.draws[index];
            match outcome {
                Ok(()) => {
                    info!("draw {index} done");
                    d.status = DrawStatus::Done;
                    d.error = None;
                }
                Err(e) => {
                    warn!("draw {index} failed: {e}");
                    d.status = DrawStatus::Failed;
                    d.error = Some(e);
                }
            }
            manifest.save(&manifest_path)?;
        }
        Ok(())
    })?;
    summarize_sweep(&manifest, &dir)
}

fn summarize_sweep(manifest: &SweepManifest, dir: &Path) -> CliResult<()> {
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for d in &manifest.draws {
        if d.status != DrawStatus::Done {
            continue;
        }
        let path = dir.join(&d.result);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let rec: DrawRecord =
            serde_json::from_str(&text).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
        let r = rec.result;
        rows.push(vec![
            d.index as f64,
            r.params.intensity,
            r.params.mu_bar,
            r.params.beta_bar,
            r.params.gamma,
            r.tau_d_theory,
            r.tau_d_fit,
            r.log_ratio(),
        ]);
        results.push(r);
    }
    write_csv(
        &dir.join("results.csv"),
        &["index", "intensity", "mu_bar", "beta_bar", "gamma", "tau_d_theory", "tau_d_fit", "log_ratio"],
        rows.into_iter(),
    )?;
    let failed = manifest.draws.iter().filter(|d| d.status == DrawStatus::Failed).count();
    match median_abs_log_ratio(&results) {
        Some(m) => println!(
            "{} draws done, {failed} failed; median |ln(tau_fit / tau_theory)| = {m:.3}",
            results.len()
        ),
        None => println!("{} draws done, {failed} failed", results.len()),
    }
    Ok(())
}

#[derive(Serialize)]
struct RegimeOutput {
    schema_version: &'static str,
    system: &'static str,
    theta: f64,
    condition: SurvivalCondition,
    /// Nonlinearity at which the ratio equals one (cantilever only).
    threshold_mu_cl: Option<f64>,
}

pub enum RegimeInput {
    Bec {
        scattering_length: f64,
        mass: f64,
        omega: f64,
        particles: f64,
        tau_gamma: f64,
    },
    Cantilever {
        mu_cl: f64,
        quality: f64,
        levels: f64,
    },
}

pub fn regimes(input: &RegimeInput, out: Option<&PathBuf>) -> CliResult<()> {
    let report = match *input {
        RegimeInput::Bec {
            scattering_length,
            mass,
            omega,
            particles,
            tau_gamma,
        } => {
            let theta = theta_bec(scattering_length, mass, omega, particles, tau_gamma)?;
            RegimeOutput {
                schema_version: SCHEMA_VERSION,
                system: "bec",
                theta,
                condition: SurvivalCondition::from_theta(theta),
                threshold_mu_cl: None,
            }
        }
        RegimeInput::Cantilever { mu_cl, quality, levels } => {
            let theta = theta_cantilever(mu_cl, quality, levels)?;
            RegimeOutput {
                schema_version: SCHEMA_VERSION,
                system: "cantilever",
                theta,
                condition: SurvivalCondition::from_theta(theta),
                threshold_mu_cl: Some(cantilever_threshold(quality, levels)?),
            }
        }
    };
    println!("Theta = {:.6} ({})", report.theta, report.condition);
    if let Some(t) = report.threshold_mu_cl {
        println!("Theta = 1 at mu_cl = {t:.6}");
    }
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(&dir.join("regimes.json"), &report)?;
    }
    Ok(())
}
