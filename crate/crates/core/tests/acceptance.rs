//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run with `cargo test --release -p qno-core --test acceptance`.

use std::f64::consts::PI;
use std::time::Instant;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qno_core::analysis::{
    discrete_spectrum, extract_envelope_peaks, fit_ehrenfest_bump, fit_frame_coherence, fit_recurrence_decay,
    fit_relaxation_peaks, fit_spectral_width, gaussian_envelope_residual, group_bumps, Peak, SpectrumOptions,
};
use qno_core::closedform::{alpha_closed, alpha_lindblad_rwa, decay_factor};
use qno_core::evolve::{integrate_with, EvolutionMode, Generator, IntegratorConfig, Probes, Trajectory};
use qno_core::fock::{coherent_state_density, FockSpace};
use qno_core::model::{cantilever_threshold, derive_timescales, theta_bec, SystemParams};
use qno_core::sweep::{draw_parameters, median_abs_log_ratio, run_sweep, DrawOptions, SweepRanges};
use qno_core::Execution;

const EPS_TRACE: f64 = 1e-9;
const EPS_HERM: f64 = 1e-9;
const EPS_ENERGY: f64 = 1e-9;
const EPS_POS: f64 = 1e-6;

struct RunRecord {
    label: String,
    trace: f64,
    herm: f64,
    min_eig: f64,
    energy: Option<f64>,
}

#[derive(Default)]
struct Suite {
    runs: Vec<RunRecord>,
    failures: Vec<u32>,
}

impl Suite {
    fn report(&mut self, id: u32, title: &str, ok: bool, detail: String, started: Instant) {
        let verdict = if ok { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} {verdict}: {title}: {detail} [{:.0} s]",
            started.elapsed().as_secs_f64()
        );
        if !ok {
            self.failures.push(id);
        }
    }

    fn run(&mut self, label: &str, p: &SystemParams, mode: EvolutionMode, tau_end: f64, h: f64) -> Trajectory {
        let space = FockSpace::for_intensity(p.intensity).unwrap();
        let rho = coherent_state_density(p.alpha(), space).unwrap();
        let mut gen = Generator::new(mode, p, space.dim()).unwrap();
        let dt = gen.default_step();
        let mut cfg = IntegratorConfig::new(tau_end);
        cfg.stride = ((h / dt).round() as usize).max(1);
        cfg.eigen_samples = 12;
        let tr = integrate_with(&mut gen, &rho, &cfg, &Probes::default()).unwrap();
        self.runs.push(RunRecord {
            label: label.to_string(),
            trace: tr.max_trace_drift(),
            herm: tr.max_herm_defect(),
            min_eig: tr.min_eigenvalue(),
            energy: (mode == EvolutionMode::Closed).then(|| tr.max_energy_drift()),
        });
        tr
    }
}

fn params(mu: f64, intensity: f64, beta: f64, gamma: f64) -> SystemParams {
    SystemParams::new(mu, intensity, 0.0, beta, gamma).unwrap()
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value / target - 1.0).abs() <= rel
}

/// Envelope of `|x|` at `tau`, log-interpolated between the bracketing peaks.
fn envelope_at(peaks: &[Peak], tau: f64) -> Option<f64> {
    let k = peaks.iter().position(|p| p.tau >= tau)?;
    if k == 0 {
        return None;
    }
    let (a, b) = (peaks[k - 1], peaks[k]);
    let w = (tau - a.tau) / (b.tau - a.tau);
    Some((a.height.ln() * (1.0 - w) + b.height.ln() * w).exp())
}

fn oracle_equivalence(s: &mut Suite) {
    let t0 = Instant::now();
    let p = params(0.1, 20.0, 1.0, 1e-8);
    let tau_r = derive_timescales(&p).tau_r;
    let bound = 1e-5 * p.intensity.sqrt();
    let mut devs = Vec::new();
    for mode in [EvolutionMode::Closed, EvolutionMode::BornMarkovAsymptotic] {
        let tr = s.run(&format!("oracle {mode}"), &p, mode, tau_r, 0.01);
        let dev = tr
            .times
            .iter()
            .zip(&tr.a)
            .map(|(&t, a)| (a - alpha_closed(p.alpha(), p.mu_bar, t)).norm())
            .fold(0.0, f64::max);
        devs.push((mode, dev));
    }
    let ok = devs.iter().all(|d| d.1 < bound);
    let detail = devs
        .iter()
        .map(|(m, d)| format!("{m} max|da|={d:.3e}"))
        .collect::<Vec<_>>()
        .join(", ");
    s.report(1, "closed-form oracle", ok, format!("{detail} (bound {bound:.3e})"), t0);
}

fn lindblad_oracle(s: &mut Suite) {
    let t0 = Instant::now();
    let p = params(0.1, 20.0, 1.0, 1e-3);
    let t = derive_timescales(&p);
    // the first bump has collapsed well before half a recurrence
    let tau_end = 0.5 * t.tau_r;
    let tr = s.run("lindblad-rwa oracle", &p, EvolutionMode::LindbladRwa, tau_end, 0.01);
    let scale = p.alpha().norm();
    let dev = tr
        .times
        .iter()
        .zip(&tr.a)
        .map(|(&tau, a)| (a - alpha_lindblad_rwa(p.alpha(), p.mu_bar, p.gamma, tau)).norm())
        .fold(0.0, f64::max)
        / scale;
    s.report(
        2,
        "lindblad oracle",
        dev < 1e-3,
        format!("max|da|/|alpha|={dev:.3e} over [0, {tau_end:.2}] (bound 1e-3)"),
        t0,
    );
}

fn recurrence_decay(s: &mut Suite) {
    let t0 = Instant::now();
    let p = params(0.1, 50.0, 1.0, 1e-4);
    let t = derive_timescales(&p);
    let tr = s.run("recurrence decay", &p, EvolutionMode::BornMarkovAsymptotic, 2.4 * t.tau_r, 0.01);
    let peaks = extract_envelope_peaks(&tr.times, &tr.x).unwrap();
    let bumps = group_bumps(&peaks, t.tau_r);
    let fits: Vec<_> = bumps
        .iter()
        .filter_map(|(n, b)| fit_ehrenfest_bump(b, *n, t.tau_r).ok())
        .collect();
    let heights: Vec<(u32, f64)> = fits.iter().map(|f| (f.n, f.peak_height)).collect();
    let tau_d = fit_recurrence_decay(&heights, t.tau_r).map(|f| f.tau_d).unwrap_or(f64::NAN);
    let tau_e = fits.iter().find(|f| f.n == 0).map(|f| f.tau_e).unwrap_or(f64::NAN);
    let om = p.omega_bar();
    let kappa = p.spectral_density().eval(om) / (2.0 * om);
    let frame = fit_frame_coherence(&tr.times, &tr.a_frame, p.mu_bar, kappa)
        .map(|f| f.tau_d)
        .unwrap_or(f64::NAN);
    let ok = within(tau_d, 18.0, 0.2) && within(tau_e, 0.71, 0.1);
    s.report(
        3,
        "recurrence decay (mu=0.1, gamma=1e-4)",
        ok,
        format!(
            "tau_D={tau_d:.3} (18 +- 20%), tau_E={tau_e:.4} (0.71 +- 10%), bumps={}, frame-coherence tau_D={frame:.3} ({:+.1}% vs peak ratio)",
            heights.len(),
            100.0 * (frame / tau_d - 1.0)
        ),
        t0,
    );
}

fn survival(s: &mut Suite) {
    let t0 = Instant::now();
    let p = params(0.01, 50.0, 1.0, 1e-2);
    let tr = s.run("survival", &p, EvolutionMode::BornMarkovAsymptotic, 14.0, 0.01);
    let peaks = extract_envelope_peaks(&tr.times, &tr.x).unwrap();
    let x10 = envelope_at(&peaks, 10.0).unwrap_or(f64::NAN);
    let naive = 1.3e-5;
    let ok = within(x10, 3.7, 0.3) && x10 > 1e3 * naive;
    s.report(
        4,
        "survival past tau_D (mu=gamma=1e-2)",
        ok,
        format!("|x(10)|={x10:.3} (3.7 +- 30%), ratio to naive 1.3e-5 = {:.2e} (> 1e3)", x10 / naive),
        t0,
    );
}

fn classical_limit(s: &mut Suite) {
    let t0 = Instant::now();
    let p = params(1e-4, 50.0, 1.0, 1e-2);
    let t = derive_timescales(&p);
    let tr = s.run("classical limit", &p, EvolutionMode::BornMarkovAsymptotic, 420.0, 0.05);
    let peaks: Vec<Peak> = extract_envelope_peaks(&tr.times, &tr.x)
        .unwrap()
        .into_iter()
        .filter(|pk| pk.tau <= 2.0 * t.tau_gamma)
        .collect();
    let fit = fit_relaxation_peaks(&peaks).unwrap();
    let gauss = gaussian_envelope_residual(&peaks, t.tau_e);
    let ok = within(fit.tau, t.tau_gamma, 0.1) && gauss >= 5.0 * fit.residual;
    s.report(
        5,
        "classical limit (mu=1e-4, gamma=1e-2)",
        ok,
        format!(
            "envelope decay {:.2} (200 +- 10%), residual exp={:.3e} gauss(tau_E={:.0})={:.3e} (ratio {:.0}, >= 5)",
            fit.tau,
            fit.residual,
            t.tau_e,
            gauss,
            gauss / fit.residual
        ),
        t0,
    );
}

fn width_invariance(s: &mut Suite) {
    let t0 = Instant::now();
    let opts = SpectrumOptions {
        even_extension: true,
        ..Default::default()
    };
    let target = 2f64.sqrt();
    let mut ok = true;
    let mut parts = Vec::new();
    let closed = params(0.1, 50.0, 1.0, 0.0);
    let tau_r = derive_timescales(&closed).tau_r;
    let tr = s.run("spectrum closed", &closed, EvolutionMode::Closed, tau_r, 0.01);
    let f = fit_spectral_width(&discrete_spectrum(&tr.times, &tr.x, opts).unwrap()).unwrap();
    ok &= (f.center - 11.0).abs() <= 0.2 && within(f.width, target, 0.15);
    parts.push(format!("closed center={:.3} width={:.3}", f.center, f.width));
    for gamma in [1e-5, 1e-4, 1e-3, 1e-2] {
        let p = params(0.1, 50.0, 1.0, gamma);
        let tr = s.run(&format!("spectrum gamma={gamma:e}"), &p, EvolutionMode::BornMarkovAsymptotic, tau_r, 0.01);
        let f = fit_spectral_width(&discrete_spectrum(&tr.times, &tr.x, opts).unwrap()).unwrap();
        ok &= within(f.width, target, 0.15) && (f.center - 11.0).abs() <= 0.2;
        parts.push(format!("gamma={gamma:e} width={:.3} center={:.3}", f.width, f.center));
    }
    s.report(
        6,
        "spectral width invariance (mu=0.1)",
        ok,
        format!("{} (width 1.414 +- 15%, center 11 +- 0.2)", parts.join("; ")),
        t0,
    );
}

fn scatter(s: &mut Suite) {
    let t0 = Instant::now();
    let draws = draw_parameters(1, 20, &SweepRanges::desk()).unwrap();
    let results = run_sweep(&draws, &DrawOptions::default(), Execution::default());
    let failed = results.iter().filter(|r| r.is_err()).count();
    let ok_draws: Vec<_> = results.into_iter().filter_map(|r| r.ok()).collect();
    let worst = ok_draws.iter().map(|r| r.log_ratio().abs()).fold(0.0, f64::max);
    let median = median_abs_log_ratio(&ok_draws).unwrap_or(f64::INFINITY);
    let ok = median <= 2f64.ln() && failed == 0;
    s.report(
        7,
        "decoherence-time scatter (20 draws, seed 1)",
        ok,
        format!("median |ln ratio|={median:.3} (<= ln 2), worst={worst:.3}, failed draws={failed}"),
        t0,
    );
}

fn conservation(s: &mut Suite) {
    let t0 = Instant::now();
    let mut bad = Vec::new();
    for r in &s.runs {
        let energy_ok = r.energy.is_none_or(|e| e < EPS_ENERGY);
        if !(r.trace < EPS_TRACE && r.herm < EPS_HERM && r.min_eig >= -EPS_POS && energy_ok) {
            bad.push(r.label.clone());
        }
    }
    let worst = |f: fn(&RunRecord) -> f64| s.runs.iter().map(f).fold(0.0, f64::max);
    let detail = format!(
        "{} runs, max trace drift={:.2e}, max herm defect={:.2e}, min eigenvalue={:.2e}, closed energy drift={:.2e}{}",
        s.runs.len(),
        worst(|r| r.trace),
        worst(|r| r.herm),
        s.runs.iter().map(|r| r.min_eig).fold(f64::INFINITY, f64::min),
        worst(|r| r.energy.unwrap_or(0.0)),
        if bad.is_empty() { String::new() } else { format!(", violations: {}", bad.join(", ")) }
    );
    let ok = bad.is_empty() && !s.runs.is_empty();
    s.report(8, "conservation", ok, detail, t0);
}

fn identities(s: &mut Suite) {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let mu = 10f64.powf(rng.random_range(-3.0..0.6));
        let i0 = rng.random_range(20.0..100.0);
        let beta = 10f64.powf(rng.random_range(-2.0..0.0));
        let gamma = 10f64.powf(rng.random_range(-5.0..-2.0));
        let p = params(mu, i0, beta, gamma);
        let t = derive_timescales(&p);
        let om = 1.0 + mu * (1.0 + 2.0 * i0);
        for e in [
            t.tau_e * 2.0 * mu * i0.sqrt() - 1.0,
            t.tau_r * mu / PI - 1.0,
            t.tau_gamma * gamma / 2.0 - 1.0,
            t.tau_d * i0 * gamma * om / (0.5 * beta * om).tanh() - 1.0,
            t.theta_ratio * gamma / (4.0 * mu * i0.sqrt()) - 1.0,
        ] {
            worst = worst.max(e.abs());
        }
    }
    let mut worst_d: f64 = 0.0;
    for _ in 0..100 {
        let mu = 10f64.powf(rng.random_range(-3.0..0.6));
        let i0: f64 = rng.random_range(20.0..100.0);
        let gamma = 10f64.powf(rng.random_range(-5.0..-2.0));
        let tau = rng.random_range(0.0..50.0);
        let alpha = C64::from_polar(i0.sqrt(), rng.random_range(0.0..2.0 * PI));
        let d = decay_factor(alpha, mu, gamma, tau);
        let direct = -(alpha_lindblad_rwa(alpha, mu, gamma, tau).norm() / alpha.norm()).ln();
        worst_d = worst_d.max((d - direct).abs() / d.abs().max(1.0));
    }
    let ok = worst < 1e-12 && worst_d < 1e-10;
    s.report(
        9,
        "identities",
        ok,
        format!("timescale identities worst rel err={worst:.2e} (1000 draws), decay factor worst err={worst_d:.2e} (100 points)"),
        t0,
    );
}

fn regimes(s: &mut Suite) {
    let t0 = Instant::now();
    let omega = 2.0 * PI * 100.0;
    let bec = theta_bec(5e-9, 1.5e-25, omega, 1e4, omega).unwrap();
    let thr = cantilever_threshold(1e6, 6e11).unwrap();
    let ok = (bec - 237.0).abs() <= 1.0 && (thr - 0.194).abs() <= 1e-3;
    s.report(
        10,
        "regime estimates",
        ok,
        format!("Theta_BEC={bec:.2} (237 +- 1), cantilever threshold mu_cl={thr:.4} (0.194 +- 0.001)"),
        t0,
    );
}

fn main() {
    // libtest flags such as `--nocapture` are accepted and ignored; a filter
    // argument that names nothing here skips the suite
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let start = Instant::now();
    let mut s = Suite::default();
    oracle_equivalence(&mut s);
    lindblad_oracle(&mut s);
    recurrence_decay(&mut s);
    survival(&mut s);
    classical_limit(&mut s);
    width_invariance(&mut s);
    scatter(&mut s);
    conservation(&mut s);
    identities(&mut s);
    regimes(&mut s);
    println!(
        "acceptance: {} of 10 criteria passed in {:.0} s",
        10 - s.failures.len(),
        start.elapsed().as_secs_f64()
    );
    if !s.failures.is_empty() {
        println!("acceptance: failed criteria {:?}", s.failures);
        std::process::exit(1);
    }
}
