//! Seeded random parameter draws and the per-draw decoherence pipeline
//! behind the theory-versus-numerics scatter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    dephasing_clock, extract_envelope_peaks, fit_ehrenfest_bump, fit_frame_coherence, fit_recurrence_decay,
    group_bumps, DecoherenceMethod,
};
use crate::error::{Error, Result};
use crate::evolve::{integrate_with, EvolutionMode, Generator, IntegratorConfig, Probes, Scheme};
use crate::exec::Execution;
use crate::fock::{coherent_state_density, FockSpace};
use crate::model::{derive_timescales, SystemParams};

/// Closed intervals the draws are taken from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRanges {
    pub intensity: (f64, f64),
    pub mu_bar: (f64, f64),
    pub beta_bar: (f64, f64),
    pub gamma: (f64, f64),
}

impl SweepRanges {
    /// The full published ranges.
    pub fn published() -> Self {
        SweepRanges {
            intensity: (20.0, 100.0),
            mu_bar: (1e-3, 4.0),
            beta_bar: (1e-2, 1.0),
            gamma: (1e-5, 1e-2),
        }
    }

    /// Ranges clamped to `I0 <= 50` and `mu <= 1` to keep single-machine
    /// runtimes reasonable.
    pub fn desk() -> Self {
        SweepRanges {
            intensity: (20.0, 50.0),
            mu_bar: (1e-3, 1.0),
            ..Self::published()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("intensity", self.intensity),
            ("mu_bar", self.mu_bar),
            ("beta_bar", self.beta_bar),
            ("gamma", self.gamma),
        ] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} range must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// `count` parameter sets: uniform in `I0`, log-uniform in `mu`, `beta`
/// and `gamma`. The same seed always yields the same list.
pub fn draw_parameters(seed: u64, count: usize, ranges: &SweepRanges) -> Result<Vec<SystemParams>> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let (lo, hi) = ranges.intensity;
            let intensity = if lo == hi { lo } else { rng.random_range(lo..hi) };
            let mu = log_uniform(&mut rng, ranges.mu_bar);
            let beta = log_uniform(&mut rng, ranges.beta_bar);
            let gamma = log_uniform(&mut rng, ranges.gamma);
            SystemParams::new(mu, intensity, 0.0, beta, gamma)
        })
        .collect()
}

/// Settings of the per-draw pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawOptions {
    /// Run until the dephasing clock reaches this fraction of the
    /// theoretical `tau_D`.
    pub coherence_fraction: f64,
    /// Number of samples kept for the fit.
    pub samples: usize,
    pub mode: EvolutionMode,
    pub scheme: Scheme,
    /// Fixed step; `None` uses the generator default.
    pub dt: Option<f64>,
}

impl Default for DrawOptions {
    fn default() -> Self {
        DrawOptions {
            coherence_fraction: 0.2,
            samples: 400,
            mode: EvolutionMode::BornMarkovAsymptotic,
            scheme: Scheme::default(),
            dt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawResult {
    pub params: SystemParams,
    pub tau_d_theory: f64,
    pub tau_d_fit: f64,
    pub method: DecoherenceMethod,
    pub confidence: Option<(f64, f64)>,
    pub residual: f64,
    pub tau_end: f64,
    pub steps: usize,
    pub warnings: Vec<String>,
}

impl DrawResult {
    pub fn log_ratio(&self) -> f64 {
        (self.tau_d_fit / self.tau_d_theory).ln()
    }
}

/// Smallest `tau` with `g(tau) >= target`.
fn clock_time(mu_bar: f64, target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, target.max(1e-12));
    while dephasing_clock(mu_bar, hi) < target {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if dephasing_clock(mu_bar, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Evolves a coherent state and fits `tau_D` from the decay of `<a>` in the
/// frame of the free Hamiltonian, falling back to recurrence peaks when the
/// run covers them.
pub fn run_draw(params: &SystemParams, opts: &DrawOptions) -> Result<DrawResult> {
    let t = derive_timescales(params);
    if !t.tau_d.is_finite() {
        return Err(Error::InvalidParameter("decoherence time is infinite (gamma = 0)".into()));
    }
    let space = FockSpace::for_intensity(params.intensity)?;
    let rho = coherent_state_density(params.alpha(), space)?;
    let mut gen = Generator::with_execution(opts.mode, params, space.dim(), Execution::Sequential)?;
    let tau_end = clock_time(params.mu_bar, opts.coherence_fraction * t.tau_d);
    let dt = opts.dt.unwrap_or_else(|| gen.default_step_for(opts.scheme));
    let mut cfg = IntegratorConfig::new(tau_end);
    cfg.dt = Some(dt);
    cfg.scheme = opts.scheme;
    cfg.stride = ((tau_end / dt / opts.samples.max(2) as f64) as usize).max(1);
    let traj = integrate_with(&mut gen, &rho, &cfg, &Probes::default())?;

    let om = params.omega_bar();
    let kappa = params.spectral_density().eval(om) / (2.0 * om);
    let fit = fit_frame_coherence(&traj.times, &traj.a_frame, params.mu_bar, kappa).or_else(|frame_err| {
        let peaks = extract_envelope_peaks(&traj.times, &traj.x)?;
        let heights: Vec<(u32, f64)> = group_bumps(&peaks, t.tau_r)
            .into_iter()
            .filter_map(|(n, b)| fit_ehrenfest_bump(&b, n, t.tau_r).ok().map(|f| (n, f.peak_height)))
            .collect();
        fit_recurrence_decay(&heights, t.tau_r)
            .map_err(|e| Error::Fit(format!("frame coherence: {frame_err}; peak ratio: {e}")))
    })?;
    Ok(DrawResult {
        params: *params,
        tau_d_theory: t.tau_d,
        tau_d_fit: fit.tau_d,
        method: fit.method,
        confidence: fit.confidence,
        residual: fit.residual,
        tau_end,
        steps: traj.steps,
        warnings: traj.warnings,
    })
}

/// Runs every draw; failures are returned in place rather than aborting.
pub fn run_sweep(draws: &[SystemParams], opts: &DrawOptions, exec: Execution) -> Vec<Result<DrawResult>> {
    exec.map(draws.to_vec(), |p| run_draw(&p, opts))
}

/// Median of `|ln(tau_fit / tau_theory)|` over successful draws.
pub fn median_abs_log_ratio(results: &[DrawResult]) -> Option<f64> {
    let mut v: Vec<f64> = results.iter().map(|r| r.log_ratio().abs()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    Some(if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) })
}
