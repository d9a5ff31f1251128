//! Master-equation right-hand sides and the fixed-step RK4 integrator.
//!
//! With `X = a + a^dagger` and the tridiagonal Hermitian operators
//! `K_A = A1 a + a^dagger A1 + i (A2 a - a^dagger A2)` (same form for `K_B`),
//! the Born-Markov equation reads
//!
//! `d rho / d tau = -i [n + mu n^2, rho] + (i/2) [X, {K_A, rho}] - (1/2) [X, [K_B, rho]]`.
//!
//! The two bath terms combine into `[X, L rho + rho R]` with
//! `L = (i K_A - K_B)/2` and `R = (i K_A + K_B)/2`, so one evaluation costs a
//! few banded sweeps over the matrix.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fock::{energies, frame_mean_a, frame_overlap, DensityMatrix};
use crate::kernels::{asymptotic_coefficients_with, BathCoefficients, TransientTable};
use crate::model::{derive_timescales, SystemParams};

const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvolutionMode {
    Closed,
    BornMarkovAsymptotic,
    BornMarkovTransient,
    LindbladRwa,
}

impl EvolutionMode {
    pub const ALL: [EvolutionMode; 4] = [
        EvolutionMode::Closed,
        EvolutionMode::BornMarkovAsymptotic,
        EvolutionMode::BornMarkovTransient,
        EvolutionMode::LindbladRwa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EvolutionMode::Closed => "closed",
            EvolutionMode::BornMarkovAsymptotic => "born-markov-asymptotic",
            EvolutionMode::BornMarkovTransient => "born-markov-transient",
            EvolutionMode::LindbladRwa => "lindblad-rwa",
        }
    }
}

impl fmt::Display for EvolutionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvolutionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EvolutionMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown evolution mode '{s}'")))
    }
}

/// Time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Classical RK4 on the full right-hand side.
    Rk4,
    /// RK4 in the frame of the diagonal part of the generator, which is
    /// applied exactly (Lawson's integrating-factor RK4).
    #[default]
    InteractionRk4,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Rk4 => "rk4",
            Scheme::InteractionRk4 => "interaction-rk4",
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Scheme::Rk4, Scheme::InteractionRk4]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown scheme '{s}'")))
    }
}

/// Step, sampling and diagnostics settings of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Step size; `None` selects [`Generator::default_step_for`].
    pub dt: Option<f64>,
    #[serde(default)]
    pub scheme: Scheme,
    /// Record observables every `stride` steps.
    pub stride: usize,
    pub tau_end: f64,
    /// Tolerance on the smallest eigenvalue.
    pub eps_pos: f64,
    /// Compute the smallest eigenvalue on this many evenly spaced samples
    /// (0 disables the check).
    pub eigen_samples: usize,
    /// Keep a copy of the state every this many samples.
    pub snapshot_every: Option<usize>,
}

impl IntegratorConfig {
    pub fn new(tau_end: f64) -> Self {
        IntegratorConfig {
            dt: None,
            scheme: Scheme::default(),
            stride: 1,
            tau_end,
            eps_pos: 1e-6,
            eigen_samples: 0,
            snapshot_every: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_end > 0.0 && self.tau_end.is_finite()) {
            return Err(Error::InvalidParameter("tau_end must be > 0".into()));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::InvalidParameter("dt must be > 0".into()));
            }
        }
        if self.stride == 0 {
            return Err(Error::InvalidParameter("stride must be >= 1".into()));
        }
        Ok(())
    }
}

fn bath_bound(dim: usize, coeffs: &BathCoefficients) -> f64 {
    coeffs
        .levels
        .iter()
        .map(|l| l.a1.abs() + l.a2.abs() + l.b1.abs() + l.b2.abs())
        .fold(0.0, f64::max)
        * 4.0
        * dim as f64
}

/// Stability bound of the bath terms alone.
pub fn bath_stability_step(dim: usize, coeffs: &BathCoefficients) -> f64 {
    let b = bath_bound(dim, coeffs);
    if b > 0.0 {
        2.0 / b
    } else {
        f64::INFINITY
    }
}

/// `min(0.02 / Omega_top, tau_E / 200)` for a space of `dim` levels.
pub fn default_step(p: &SystemParams, dim: usize) -> f64 {
    let omega_top = p.level_frequency(dim as f64 - 1.0);
    let t = derive_timescales(p);
    (0.02 / omega_top).min(t.tau_e / 200.0)
}

/// Explicit-RK4 stability bound from the spread of level energies and the
/// largest bath coefficient.
pub fn stability_step(p: &SystemParams, dim: usize, coeffs: Option<&BathCoefficients>) -> f64 {
    let top = dim as f64 - 1.0;
    let spread = top + p.mu_bar * top * top;
    let bath = coeffs.map(|c| bath_bound(dim, c)).unwrap_or(0.0);
    2.0 / (spread + bath)
}

/// `-i (E_n - E_m) rho_nm`.
pub fn free_rhs(rho: &Array2<C64>, mu_bar: f64) -> Array2<C64> {
    let e = energies(rho.nrows(), mu_bar);
    Array2::from_shape_fn(rho.dim(), |(n, m)| -I * (e[n] - e[m]) * rho[(n, m)])
}

/// Upper and lower off-diagonals of `K = C1 a + a^dagger C1 + i (C2 a - a^dagger C2)`.
fn k_bands(c1: impl Fn(usize) -> f64, c2: impl Fn(usize) -> f64, dim: usize) -> (Vec<C64>, Vec<C64>) {
    let up: Vec<C64> = (0..dim - 1)
        .map(|n| ((n + 1) as f64).sqrt() * C64::new(c1(n), c2(n)))
        .collect();
    let lo = up.iter().map(|z| z.conj()).collect();
    (up, lo)
}

/// `T rho` for tridiagonal `T` with zero diagonal.
fn tri_left(up: &[C64], lo: &[C64], rho: &Array2<C64>) -> Array2<C64> {
    let d = rho.nrows();
    Array2::from_shape_fn((d, d), |(n, m)| {
        let mut v = C64::new(0.0, 0.0);
        if n + 1 < d {
            v += up[n] * rho[(n + 1, m)];
        }
        if n > 0 {
            v += lo[n - 1] * rho[(n - 1, m)];
        }
        v
    })
}

/// `rho T` for tridiagonal `T` with zero diagonal.
fn tri_right(up: &[C64], lo: &[C64], rho: &Array2<C64>) -> Array2<C64> {
    let d = rho.nrows();
    Array2::from_shape_fn((d, d), |(n, m)| {
        let mut v = C64::new(0.0, 0.0);
        if m > 0 {
            v += rho[(n, m - 1)] * up[m - 1];
        }
        if m + 1 < d {
            v += rho[(n, m + 1)] * lo[m];
        }
        v
    })
}

fn x_bands(d: usize) -> (Vec<C64>, Vec<C64>) {
    let s: Vec<C64> = (0..d - 1).map(|n| C64::new(((n + 1) as f64).sqrt(), 0.0)).collect();
    (s.clone(), s)
}

/// `(i/2) [X, {K_A, rho}]`.
pub fn dissipation_rhs(rho: &Array2<C64>, coeffs: &BathCoefficients) -> Array2<C64> {
    let d = rho.nrows();
    let (up, lo) = k_bands(|n| coeffs.levels[n].a1, |n| coeffs.levels[n].a2, d);
    let anti = tri_left(&up, &lo, rho) + tri_right(&up, &lo, rho);
    let (xu, xl) = x_bands(d);
    (tri_left(&xu, &xl, &anti) - tri_right(&xu, &xl, &anti)).mapv(|z| 0.5 * I * z)
}

/// `-(1/2) [X, [K_B, rho]]`.
pub fn noise_rhs(rho: &Array2<C64>, coeffs: &BathCoefficients) -> Array2<C64> {
    let d = rho.nrows();
    let (up, lo) = k_bands(|n| coeffs.levels[n].b1, |n| coeffs.levels[n].b2, d);
    let comm = tri_left(&up, &lo, rho) - tri_right(&up, &lo, rho);
    let (xu, xl) = x_bands(d);
    (tri_left(&xu, &xl, &comm) - tri_right(&xu, &xl, &comm)).mapv(|z| -0.5 * z)
}

/// `-i [n + mu n^2, rho] + (gamma/2)(2 a rho a^dagger - n rho - rho n)`.
pub fn lindblad_rhs(rho: &Array2<C64>, mu_bar: f64, gamma: f64) -> Array2<C64> {
    let d = rho.nrows();
    let e = energies(d, mu_bar);
    Array2::from_shape_fn((d, d), |(n, m)| {
        let mut v = -I * (e[n] - e[m]) * rho[(n, m)] - 0.5 * gamma * (n + m) as f64 * rho[(n, m)];
        if n + 1 < d && m + 1 < d {
            v += gamma * (((n + 1) * (m + 1)) as f64).sqrt() * rho[(n + 1, m + 1)];
        }
        v
    })
}

enum Bath {
    None,
    Lindblad { gamma: f64 },
    Constant,
    Transient(Box<TransientTable>),
}

/// Precomputed generator of one evolution mode on a fixed space.
pub struct Generator {
    pub mode: EvolutionMode,
    pub params: SystemParams,
    dim: usize,
    energy: Vec<f64>,
    sqrt: Vec<f64>,
    bath: Bath,
    coeffs: BathCoefficients,
    l_up: Vec<C64>,
    l_lo: Vec<C64>,
    r_up: Vec<C64>,
    r_lo: Vec<C64>,
    scratch: Vec<C64>,
}

impl Generator {
    pub fn new(mode: EvolutionMode, params: &SystemParams, dim: usize) -> Result<Self> {
        Self::with_execution(mode, params, dim, Execution::default())
    }

    /// Builds coefficient tables using `exec` for the per-level work.
    pub fn with_execution(mode: EvolutionMode, params: &SystemParams, dim: usize, exec: Execution) -> Result<Self> {
        let params = params.checked()?;
        if dim < 2 {
            return Err(Error::InvalidParameter("dimension must be >= 2".into()));
        }
        let zeros = BathCoefficients::zeros(dim, crate::kernels::CoefficientMode::Asymptotic);
        let (bath, coeffs) = match mode {
            EvolutionMode::Closed => (Bath::None, zeros),
            EvolutionMode::LindbladRwa => (Bath::Lindblad { gamma: params.gamma }, zeros),
            EvolutionMode::BornMarkovAsymptotic => {
                (Bath::Constant, asymptotic_coefficients_with(&params, dim, exec)?)
            }
            EvolutionMode::BornMarkovTransient => {
                let table = TransientTable::build(&params, dim, exec)?;
                let start = table.at(0.0);
                (Bath::Transient(Box::new(table)), start)
            }
        };
        let mut g = Generator {
            mode,
            params,
            dim,
            energy: energies(dim, params.mu_bar),
            sqrt: (0..=dim).map(|n| (n as f64).sqrt()).collect(),
            bath,
            coeffs,
            l_up: vec![C64::default(); dim - 1],
            l_lo: vec![C64::default(); dim - 1],
            r_up: vec![C64::default(); dim - 1],
            r_lo: vec![C64::default(); dim - 1],
            scratch: vec![C64::default(); dim * dim],
        };
        g.rebuild_bands();
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Coefficients currently in use.
    pub fn coefficients(&self) -> &BathCoefficients {
        &self.coeffs
    }

    /// Asymptotic coefficients for transient runs, the fixed ones otherwise.
    pub fn asymptotic_coefficients(&self) -> &BathCoefficients {
        match &self.bath {
            Bath::Transient(t) => t.asymptote(),
            _ => &self.coeffs,
        }
    }

    fn rebuild_bands(&mut self) {
        for n in 0..self.dim - 1 {
            let c = self.coeffs.levels[n];
            let s = self.sqrt[n + 1];
            let ka_up = s * C64::new(c.a1, c.a2);
            let ka_lo = ka_up.conj();
            let kb_up = s * C64::new(c.b1, c.b2);
            let kb_lo = kb_up.conj();
            self.l_up[n] = 0.5 * (I * ka_up - kb_up);
            self.l_lo[n] = 0.5 * (I * ka_lo - kb_lo);
            self.r_up[n] = 0.5 * (I * ka_up + kb_up);
            self.r_lo[n] = 0.5 * (I * ka_lo + kb_lo);
        }
    }

    fn set_time(&mut self, tau: f64) {
        if let Bath::Transient(table) = &self.bath {
            let asymptotic = matches!(self.coeffs.mode, crate::kernels::CoefficientMode::Asymptotic);
            if asymptotic && tau >= table.settling_time() {
                return;
            }
            table.fill(tau, &mut self.coeffs);
            self.rebuild_bands();
        }
    }

    /// Writes `d rho / d tau` at time `tau` into `out`.
    pub fn rhs(&mut self, tau: f64, rho: &Array2<C64>, out: &mut Array2<C64>) {
        self.eval(tau, rho, out, true);
    }

    /// Elementwise rate `L_nm` of the diagonal part `d rho_nm = L_nm rho_nm`.
    pub fn linear_rate(&self, n: usize, m: usize) -> C64 {
        let damp = match self.bath {
            Bath::Lindblad { gamma } => -0.5 * gamma * (n + m) as f64,
            _ => 0.0,
        };
        C64::new(damp, -(self.energy[n] - self.energy[m]))
    }

    /// The right-hand side minus its diagonal part.
    pub fn coupling_rhs(&mut self, tau: f64, rho: &Array2<C64>, out: &mut Array2<C64>) {
        self.eval(tau, rho, out, false);
    }

    fn eval(&mut self, tau: f64, rho: &Array2<C64>, out: &mut Array2<C64>, linear: bool) {
        self.set_time(tau);
        let lin = if linear { 1.0 } else { 0.0 };
        let d = self.dim;
        let r = rho.as_slice().expect("standard layout");
        let o = out.as_slice_mut().expect("standard layout");
        let e = &self.energy;
        match self.bath {
            Bath::None => {
                for n in 0..d {
                    for m in 0..d {
                        o[n * d + m] = -I * (lin * (e[n] - e[m])) * r[n * d + m];
                    }
                }
            }
            Bath::Lindblad { gamma } => {
                let s = &self.sqrt;
                for n in 0..d {
                    for m in 0..d {
                        let mut v = lin * C64::new(0.5 * gamma * -((n + m) as f64), -(e[n] - e[m])) * r[n * d + m];
                        if n + 1 < d && m + 1 < d {
                            v += gamma * s[n + 1] * s[m + 1] * r[(n + 1) * d + m + 1];
                        }
                        o[n * d + m] = v;
                    }
                }
            }
            Bath::Constant | Bath::Transient(_) => {
                // M = L rho + rho R
                let mm = &mut self.scratch;
                let (lu, ll, ru, rl) = (&self.l_up, &self.l_lo, &self.r_up, &self.r_lo);
                for n in 0..d {
                    for m in 0..d {
                        let mut v = C64::new(0.0, 0.0);
                        if n + 1 < d {
                            v += lu[n] * r[(n + 1) * d + m];
                        }
                        if n > 0 {
                            v += ll[n - 1] * r[(n - 1) * d + m];
                        }
                        if m > 0 {
                            v += r[n * d + m - 1] * ru[m - 1];
                        }
                        if m + 1 < d {
                            v += r[n * d + m + 1] * rl[m];
                        }
                        mm[n * d + m] = v;
                    }
                }
                // [X, M] plus the free term
                let s = &self.sqrt;
                for n in 0..d {
                    for m in 0..d {
                        let mut v = -I * (lin * (e[n] - e[m])) * r[n * d + m];
                        if n + 1 < d {
                            v += s[n + 1] * mm[(n + 1) * d + m];
                        }
                        if n > 0 {
                            v += s[n] * mm[(n - 1) * d + m];
                        }
                        if m > 0 {
                            v -= mm[n * d + m - 1] * s[m];
                        }
                        if m + 1 < d {
                            v -= mm[n * d + m + 1] * s[m + 1];
                        }
                        o[n * d + m] = v;
                    }
                }
            }
        }
    }

    /// Step size of the default scheme.
    pub fn default_step(&self) -> f64 {
        self.default_step_for(Scheme::default())
    }

    /// Step size used by [`integrate_with`] when none is configured: the
    /// accuracy rule capped by the explicit stability bound of `scheme`.
    pub fn default_step_for(&self, scheme: Scheme) -> f64 {
        let coeffs = match self.mode {
            EvolutionMode::Closed | EvolutionMode::LindbladRwa => None,
            _ => Some(self.asymptotic_coefficients()),
        };
        let mut dt = default_step(&self.params, self.dim);
        match scheme {
            Scheme::Rk4 => dt = dt.min(stability_step(&self.params, self.dim, coeffs)),
            Scheme::InteractionRk4 => {
                if let Some(c) = coeffs {
                    dt = dt.min(bath_stability_step(self.dim, c));
                }
            }
        }
        if let Bath::Lindblad { gamma } = self.bath {
            dt = dt.min(2.0 / (gamma * self.dim as f64 + 1e-300));
        }
        dt
    }
}

/// Sampled observables of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub mode: Option<EvolutionMode>,
    pub dt: f64,
    pub steps: usize,
    pub stride: usize,
    pub times: Vec<f64>,
    pub a: Vec<C64>,
    pub x: Vec<f64>,
    pub n: Vec<f64>,
    /// `<n + mu n^2>`.
    pub energy: Vec<f64>,
    pub trace: Vec<f64>,
    pub herm_defect: Vec<f64>,
    /// `<a>` in the frame rotating with the free Hamiltonian.
    pub a_frame: Vec<C64>,
    /// `<alpha| rho_I |beta>` when an overlap probe is set.
    pub overlap: Option<Vec<C64>>,
    /// `(tau, smallest eigenvalue)` on the checked samples.
    pub min_eigenvalues: Vec<(f64, f64)>,
    #[serde(skip)]
    pub snapshots: Vec<(f64, DensityMatrix)>,
    #[serde(skip)]
    pub final_state: Option<DensityMatrix>,
    pub warnings: Vec<String>,
    /// Set when the run stopped early.
    pub failure: Option<String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn max_trace_drift(&self) -> f64 {
        self.trace.iter().map(|t| (t - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn max_herm_defect(&self) -> f64 {
        self.herm_defect.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalues.iter().map(|e| e.1).fold(f64::INFINITY, f64::min)
    }

    /// Largest relative deviation of the energy from its initial value.
    pub fn max_energy_drift(&self) -> f64 {
        let e0 = match self.energy.first() {
            Some(&e) => e,
            None => return 0.0,
        };
        self.energy
            .iter()
            .map(|e| ((e - e0) / e0).abs())
            .fold(0.0, f64::max)
    }

    /// Sampling interval.
    pub fn sample_step(&self) -> f64 {
        self.dt * self.stride as f64
    }
}

/// Optional extra series computed while integrating.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Probes {
    /// Coherent pair for the frame overlap `<alpha| rho_I |beta>`.
    pub overlap: Option<(C64, C64)>,
}

fn record(
    traj: &mut Trajectory,
    gen: &Generator,
    rho: &Array2<C64>,
    tau: f64,
    probes: &Probes,
    state: &mut DensityMatrix,
) {
    state.data.assign(rho);
    let (occ, a, energy) = state.moments(gen.params.mu_bar);
    traj.times.push(tau);
    traj.a.push(a);
    traj.x.push(std::f64::consts::SQRT_2 * a.re);
    traj.n.push(occ);
    traj.energy.push(energy);
    traj.trace.push(state.trace().re);
    traj.herm_defect.push(state.hermiticity_defect());
    traj.a_frame.push(frame_mean_a(state, &gen.energy, tau));
    if let (Some((alpha, beta)), Some(series)) = (probes.overlap, traj.overlap.as_mut()) {
        series.push(frame_overlap(state, alpha, beta, gen.params.mu_bar, tau));
    }
}

/// Integrates from `rho0` and returns the sampled trajectory.
pub fn integrate(
    rho0: &DensityMatrix,
    mode: EvolutionMode,
    params: &SystemParams,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    let mut gen = Generator::new(mode, params, rho0.dim())?;
    integrate_with(&mut gen, rho0, config, &Probes::default())
}

/// As [`integrate`], reusing a generator and recording probes.
pub fn integrate_with(
    gen: &mut Generator,
    rho0: &DensityMatrix,
    config: &IntegratorConfig,
    probes: &Probes,
) -> Result<Trajectory> {
    let (traj, err) = integrate_partial(gen, rho0, config, probes)?;
    match err {
        Some(e) => Err(e),
        None => Ok(traj),
    }
}

/// Runs the integration and returns whatever was sampled together with the
/// error that stopped it, if any. Invalid inputs are still reported as `Err`.
pub fn integrate_partial(
    gen: &mut Generator,
    rho0: &DensityMatrix,
    config: &IntegratorConfig,
    probes: &Probes,
) -> Result<(Trajectory, Option<Error>)> {
    config.validate()?;
    let d = gen.dim();
    if rho0.dim() != d {
        return Err(Error::Dimension {
            expected: d,
            found: rho0.dim(),
        });
    }
    let dt_target = config.dt.unwrap_or_else(|| gen.default_step_for(config.scheme));
    let steps = (config.tau_end / dt_target).ceil().max(1.0) as usize;
    let dt = config.tau_end / steps as f64;
    let n_samples = steps / config.stride + 1;
    let eigen_every = if config.eigen_samples == 0 {
        usize::MAX
    } else {
        (n_samples / config.eigen_samples).max(1)
    };

    let mut traj = Trajectory {
        mode: Some(gen.mode),
        dt,
        steps,
        stride: config.stride,
        overlap: probes.overlap.map(|_| Vec::with_capacity(n_samples)),
        ..Default::default()
    };

    let mut rho = rho0.data.as_standard_layout().into_owned();
    let mut k1 = Array2::<C64>::zeros((d, d));
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut tmp = k1.clone();
    let mut state = DensityMatrix { data: k1.clone() };
    let limit = 10.0 * (d as f64).sqrt() + 10.0;
    let mut leaked = false;

    let check = |traj: &mut Trajectory, rho: &Array2<C64>, tau: f64, sample: usize, state: &mut DensityMatrix| {
        if sample % eigen_every == 0 {
            traj.min_eigenvalues.push((tau, state.min_eigenvalue()));
        }
        if let Some(every) = config.snapshot_every {
            if every > 0 && sample % every == 0 {
                traj.snapshots.push((tau, DensityMatrix { data: rho.clone() }));
            }
        }
    };

    record(&mut traj, gen, &rho, 0.0, probes, &mut state);
    check(&mut traj, &rho, 0.0, 0, &mut state);

    // half-step propagator of the diagonal part
    let half = match config.scheme {
        Scheme::Rk4 => Array2::zeros((0, 0)),
        Scheme::InteractionRk4 => Array2::from_shape_fn((d, d), |(n, m)| (gen.linear_rate(n, m) * (0.5 * dt)).exp()),
    };
    let h = C64::new(dt, 0.0);
    let h2 = C64::new(0.5 * dt, 0.0);

    for step in 1..=steps {
        let t0 = (step - 1) as f64 * dt;
        match config.scheme {
            Scheme::Rk4 => {
                gen.rhs(t0, &rho, &mut k1);
                tmp.assign(&rho);
                tmp.scaled_add(h2, &k1);
                gen.rhs(t0 + 0.5 * dt, &tmp, &mut k2);
                tmp.assign(&rho);
                tmp.scaled_add(h2, &k2);
                gen.rhs(t0 + 0.5 * dt, &tmp, &mut k3);
                tmp.assign(&rho);
                tmp.scaled_add(h, &k3);
                gen.rhs(t0 + dt, &tmp, &mut k4);
                let w = dt / 6.0;
                ndarray::Zip::from(&mut rho)
                    .and(&k1)
                    .and(&k2)
                    .and(&k3)
                    .and(&k4)
                    .for_each(|r, a, b, c, e| *r += w * (a + 2.0 * b + 2.0 * c + e));
            }
            Scheme::InteractionRk4 => {
                gen.coupling_rhs(t0, &rho, &mut k1);
                ndarray::Zip::from(&mut tmp)
                    .and(&rho)
                    .and(&k1)
                    .and(&half)
                    .for_each(|t, r, k, p| *t = p * (r + h2 * k));
                gen.coupling_rhs(t0 + 0.5 * dt, &tmp, &mut k2);
                ndarray::Zip::from(&mut tmp)
                    .and(&rho)
                    .and(&k2)
                    .and(&half)
                    .for_each(|t, r, k, p| *t = p * r + h2 * k);
                gen.coupling_rhs(t0 + 0.5 * dt, &tmp, &mut k3);
                ndarray::Zip::from(&mut tmp)
                    .and(&rho)
                    .and(&k3)
                    .and(&half)
                    .for_each(|t, r, k, p| *t = p * (p * r + h * k));
                gen.coupling_rhs(t0 + dt, &tmp, &mut k4);
                let w = dt / 6.0;
                ndarray::Zip::from(&mut rho)
                    .and(&k1)
                    .and(&k2)
                    .and(&k3)
                    .and(&half)
                    .for_each(|r, a, b, c, p| *r = p * (p * (*r + w * a) + 2.0 * w * (b + c)));
                ndarray::Zip::from(&mut rho).and(&k4).for_each(|r, e| *r += w * e);
            }
        }

        if step % config.stride == 0 {
            let tau = step as f64 * dt;
            record(&mut traj, gen, &rho, tau, probes, &mut state);
            let sample = step / config.stride;
            let a = *traj.a.last().unwrap_or(&C64::default());
            let tr = *traj.trace.last().unwrap_or(&1.0);
            if !(a.norm() < limit) || !((tr - 1.0).abs() < 1e-2) {
                let reason = format!("observable blow-up (|<a>| = {:.3e}, trace = {:.6})", a.norm(), tr);
                traj.failure = Some(reason.clone());
                traj.final_state = Some(DensityMatrix { data: rho });
                return Ok((traj, Some(Error::Unstable { tau, dt, reason })));
            }
            check(&mut traj, &rho, tau, sample, &mut state);
            if !leaked && state.top_population(3) > 1e-6 {
                leaked = true;
                traj.warnings.push(format!(
                    "truncation leakage: population of the top 3 levels is {:.2e} at tau = {:.4}",
                    state.top_population(3),
                    tau
                ));
            }
        }
    }
    if traj.min_eigenvalue() < -config.eps_pos {
        traj.warnings.push(format!(
            "positivity: smallest eigenvalue {:.3e} below -{:.1e}",
            traj.min_eigenvalue(),
            config.eps_pos
        ));
    }
    traj.final_state = Some(DensityMatrix { data: rho });
    Ok((traj, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closedform::{alpha_closed, alpha_lindblad_rwa};
    use crate::fock::{coherent_state_density, FockSpace, LadderOperators};
    use crate::kernels::{CoefficientMode, LevelCoefficients};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(d: usize, seed: u64) -> Array2<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Array2::from_shape_fn((d, d), |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let h = &raw + &raw.t().mapv(|z| z.conj());
        let tr: C64 = h.diag().iter().sum();
        h.mapv(|z| z / tr.re)
    }

    fn random_coeffs(d: usize, seed: u64) -> BathCoefficients {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BathCoefficients {
            mode: CoefficientMode::Asymptotic,
            levels: (0..d)
                .map(|_| LevelCoefficients {
                    a1: rng.random_range(0.0..1e-2),
                    a2: rng.random_range(0.0..1e-2),
                    b1: rng.random_range(0.0..1e-2),
                    b2: rng.random_range(-1e-2..1e-2),
                })
                .collect(),
            error_bound: 0.0,
        }
    }

    fn dense_ops(d: usize) -> LadderOperators {
        LadderOperators::new(FockSpace::new(d).unwrap(), 0.0)
    }

    fn diag(v: impl Fn(usize) -> f64, d: usize) -> Array2<C64> {
        Array2::from_shape_fn((d, d), |(i, j)| if i == j { C64::new(v(i), 0.0) } else { C64::default() })
    }

    fn trace(m: &Array2<C64>) -> C64 {
        m.diag().iter().sum()
    }

    fn max_abs(m: &Array2<C64>) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn free_term_properties() {
        let d = 7;
        let rho = random_hermitian(d, 1);
        assert!(trace(&free_rhs(&rho, 0.3)).norm() < 1e-12);
        let diag_rho = diag(|i| i as f64 * 0.1, d);
        assert!(max_abs(&free_rhs(&diag_rho, 0.3)) == 0.0);

        let space = FockSpace::for_intensity(4.0).unwrap();
        let alpha = C64::new(2.0, 0.0);
        let coh = coherent_state_density(alpha, space).unwrap();
        let drho = free_rhs(&coh.data, 0.0);
        let da = DensityMatrix { data: drho }.moments(0.0).1;
        assert!((da - (-I * alpha)).norm() < 1e-9);
    }

    #[test]
    fn bath_terms_match_dense_formula() {
        let d = 9;
        let rho = random_hermitian(d, 2);
        let c = random_coeffs(d, 3);
        let ops = dense_ops(d);
        let x = &ops.a + &ops.adag;
        let a1 = diag(|n| c.levels[n].a1, d);
        let a2 = diag(|n| c.levels[n].a2, d);
        let b1 = diag(|n| c.levels[n].b1, d);
        let b2 = diag(|n| c.levels[n].b2, d);
        let ka = a1.dot(&ops.a) + ops.adag.dot(&a1) + (a2.dot(&ops.a) - ops.adag.dot(&a2)).mapv(|z| I * z);
        let kb = b1.dot(&ops.a) + ops.adag.dot(&b1) + (b2.dot(&ops.a) - ops.adag.dot(&b2)).mapv(|z| I * z);
        let anti = ka.dot(&rho) + rho.dot(&ka);
        let diss = (x.dot(&anti) - anti.dot(&x)).mapv(|z| 0.5 * I * z);
        let comm = kb.dot(&rho) - rho.dot(&kb);
        let noise = (x.dot(&comm) - comm.dot(&x)).mapv(|z| -0.5 * z);
        assert!(max_abs(&(&diss - &dissipation_rhs(&rho, &c))) < 1e-13);
        assert!(max_abs(&(&noise - &noise_rhs(&rho, &c))) < 1e-13);
        assert!(trace(&diss).norm() < 1e-12);
        assert!(trace(&noise).norm() < 1e-12);
        let herm = |m: &Array2<C64>| max_abs(&(m - &m.t().mapv(|z| z.conj())));
        assert!(herm(&diss) < 1e-14);
        assert!(herm(&noise) < 1e-14);

        // generator combines all three terms
        let p = SystemParams::new(0.05, 2.0, 0.0, 1.0, 1e-2).unwrap();
        let mut gen = Generator::new(EvolutionMode::BornMarkovAsymptotic, &p, d).unwrap();
        gen.coeffs = c.clone();
        gen.rebuild_bands();
        let mut out = Array2::zeros((d, d));
        gen.rhs(0.0, &rho, &mut out);
        let want = free_rhs(&rho, 0.05) + diss + noise;
        assert!(max_abs(&(&out - &want)) < 1e-13);
    }

    #[test]
    fn decoupled_bath_terms_vanish() {
        let d = 6;
        let rho = random_hermitian(d, 4);
        let zero = BathCoefficients::zeros(d, CoefficientMode::Asymptotic);
        assert_eq!(max_abs(&dissipation_rhs(&rho, &zero)), 0.0);
        assert_eq!(max_abs(&noise_rhs(&rho, &zero)), 0.0);
    }

    #[test]
    fn lindblad_properties() {
        let d = 8;
        let vac = DensityMatrix::fock(d, 0);
        assert_eq!(max_abs(&lindblad_rhs(&vac.data, 0.1, 0.3)), 0.0);
        let ops = dense_ops(d);
        let rho = random_hermitian(d, 5);
        let out = lindblad_rhs(&rho, 0.1, 0.3);
        assert!(trace(&out).norm() < 1e-12);
        let dense = (ops.a.dot(&rho).dot(&ops.adag)).mapv(|z| 2.0 * z) - ops.n.dot(&rho) - rho.dot(&ops.n);
        let want = free_rhs(&rho, 0.1) + dense.mapv(|z| 0.15 * z);
        assert!(max_abs(&(&out - &want)) < 1e-13);

        // d<n>/dtau = -gamma <n> for any state away from the cut-off
        let space = FockSpace::for_intensity(3.0).unwrap();
        let start = coherent_state_density(C64::new(1.2, 0.9), space).unwrap();
        let p = SystemParams::new(0.1, 3.0, 0.0, 1.0, 0.2).unwrap();
        let mut cfg = IntegratorConfig::new(0.5);
        cfg.dt = Some(1e-3);
        let tr = integrate(&start, EvolutionMode::LindbladRwa, &p, &cfg).unwrap();
        let k = tr.len() / 2;
        let h = tr.times[k + 1] - tr.times[k];
        let deriv = (tr.n[k + 1] - tr.n[k - 1]) / (2.0 * h);
        assert!((deriv + 0.2 * tr.n[k]).abs() < 1e-6);
    }

    #[test]
    fn closed_run_follows_exact_solution_with_fourth_order() {
        let p = SystemParams::new(0.1, 6.0, 0.4, 1.0, 0.0).unwrap();
        let space = FockSpace::for_intensity(6.0).unwrap();
        let rho = coherent_state_density(p.alpha(), space).unwrap();
        let err_for = |dt: f64| {
            let mut cfg = IntegratorConfig::new(3.0);
            cfg.dt = Some(dt);
            cfg.scheme = Scheme::Rk4;
            let tr = integrate(&rho, EvolutionMode::Closed, &p, &cfg).unwrap();
            assert!(tr.max_trace_drift() < 1e-12);
            assert!(tr.max_energy_drift() < 1e-12);
            tr.times
                .iter()
                .zip(&tr.a)
                .map(|(&t, a)| (a - alpha_closed(p.alpha(), p.mu_bar, t)).norm())
                .fold(0.0, f64::max)
        };
        let coarse = err_for(0.02);
        let fine = err_for(0.01);
        let ratio = coarse / fine;
        assert!(ratio > 13.0 && ratio < 19.0, "{coarse} {fine} {ratio}");
        assert!(fine < 1e-6);
    }

    #[test]
    fn lindblad_run_matches_exact_solution() {
        let p = SystemParams::new(0.1, 5.0, 0.0, 1.0, 0.05).unwrap();
        let space = FockSpace::for_intensity(5.0).unwrap();
        let rho = coherent_state_density(p.alpha(), space).unwrap();
        let mut cfg = IntegratorConfig::new(8.0);
        cfg.stride = 10;
        let tr = integrate(&rho, EvolutionMode::LindbladRwa, &p, &cfg).unwrap();
        assert_eq!(tr.len(), tr.steps / 10 + 1);
        for (&t, a) in tr.times.iter().zip(&tr.a) {
            let exact = alpha_lindblad_rwa(p.alpha(), p.mu_bar, p.gamma, t);
            assert!((a - exact).norm() < 1e-7 * p.alpha().norm(), "{t}");
        }
    }

    #[test]
    fn blow_up_is_reported_with_partial_output() {
        let p = SystemParams::new(0.3, 6.0, 0.0, 1.0, 0.0).unwrap();
        let space = FockSpace::for_intensity(6.0).unwrap();
        let rho = coherent_state_density(p.alpha(), space).unwrap();
        let mut gen = Generator::new(EvolutionMode::Closed, &p, space.dim()).unwrap();
        let mut cfg = IntegratorConfig::new(200.0);
        cfg.dt = Some(0.5);
        cfg.scheme = Scheme::Rk4;
        let (tr, err) = integrate_partial(&mut gen, &rho, &cfg, &Probes::default()).unwrap();
        assert!(matches!(err, Some(Error::Unstable { .. })));
        assert!(tr.failure.is_some());
        assert!(!tr.is_empty());
    }

    #[test]
    fn interaction_scheme_is_exact_when_closed() {
        let p = SystemParams::new(0.1, 20.0, 0.0, 1.0, 0.0).unwrap();
        let space = FockSpace::for_intensity(20.0).unwrap();
        let rho = coherent_state_density(p.alpha(), space).unwrap();
        let mut cfg = IntegratorConfig::new(10.0);
        cfg.dt = Some(0.05);
        cfg.eigen_samples = 5;
        let tr = integrate(&rho, EvolutionMode::Closed, &p, &cfg).unwrap();
        for (&t, a) in tr.times.iter().zip(&tr.a) {
            assert!((a - alpha_closed(p.alpha(), p.mu_bar, t)).norm() < 1e-9, "{}", (a - alpha_closed(p.alpha(), p.mu_bar, t)).norm());
        }
        assert!(tr.min_eigenvalue() > -1e-12);
    }

    #[test]
    fn interaction_scheme_is_fourth_order_with_a_bath() {
        let p = SystemParams::new(0.1, 4.0, 0.0, 1.0, 0.05).unwrap();
        let space = FockSpace::for_intensity(4.0).unwrap();
        let rho = coherent_state_density(p.alpha(), space).unwrap();
        let run = |dt: f64, scheme: Scheme| {
            let mut cfg = IntegratorConfig::new(2.0);
            cfg.dt = Some(dt);
            cfg.scheme = scheme;
            integrate(&rho, EvolutionMode::BornMarkovAsymptotic, &p, &cfg).unwrap()
        };
        let reference = run(0.0005, Scheme::Rk4);
        let err_for = |dt: f64| {
            let tr = run(dt, Scheme::InteractionRk4);
            (tr.a.last().unwrap() - reference.a.last().unwrap()).norm()
        };
        let ratio = err_for(0.04) / err_for(0.02);
        assert!(ratio > 12.0 && ratio < 20.0, "{ratio}");
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in [Scheme::Rk4, Scheme::InteractionRk4] {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("euler".parse::<Scheme>().is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in EvolutionMode::ALL {
            assert_eq!(m.name().parse::<EvolutionMode>().unwrap(), m);
        }
        assert!("born-markov".parse::<EvolutionMode>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn generators_are_traceless_and_hermitian(seed in 0u64..10_000, mu in 0.0f64..0.5) {
            let d = 10;
            let rho = random_hermitian(d, seed);
            let c = random_coeffs(d, seed + 1);
            let herm = |m: &Array2<C64>| max_abs(&(m - &m.t().mapv(|z| z.conj())));
            for m in [free_rhs(&rho, mu), dissipation_rhs(&rho, &c), noise_rhs(&rho, &c), lindblad_rhs(&rho, mu, 0.3)] {
                prop_assert!(trace(&m).norm() < 1e-12);
                prop_assert!(herm(&m) < 1e-12);
            }
        }
    }
}
