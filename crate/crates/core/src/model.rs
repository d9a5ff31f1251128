//! Dimensionless parameters, derived timescales and regime estimates.
//!
//! Time is measured in units of the inverse linear frequency (`tau = omega t`),
//! so every quantity here is dimensionless except the inputs of
//! [`theta_bec`].

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::kernels::OhmicSpectralDensity;

/// Reduced Planck constant (CODATA 2018, exact), J s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Default UV cutoff as a multiple of the system frequency `Omega_bar`.
pub const DEFAULT_CUTOFF_RATIO: f64 = 10.0;

/// Survival figure of merit above which Ehrenfest-time effects are taken to
/// outlive relaxation.
pub const THETA_HIGH: f64 = 10.0;
/// Survival figure of merit below which the dynamics is classical.
pub const THETA_LOW: f64 = 0.5;

/// Intensity above which the dense truncated basis becomes impractical.
pub const MAX_PRACTICAL_INTENSITY: f64 = 200.0;

/// Physical inputs of one simulation, all dimensionless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Nonlinearity `hbar mu / omega`.
    pub mu_bar: f64,
    /// Initial coherent-state intensity `|alpha|^2`.
    pub intensity: f64,
    /// Initial phase: `alpha = sqrt(I0) exp(-i theta)`.
    pub theta: f64,
    /// Inverse temperature `hbar omega / k_B T`.
    pub beta_bar: f64,
    /// System-bath coupling.
    pub gamma: f64,
    /// Lorentzian UV cutoff of the spectral density.
    pub lambda_bar: f64,
}

impl SystemParams {
    /// Builds validated parameters with the cutoff at
    /// [`DEFAULT_CUTOFF_RATIO`] times `Omega_bar`.
    pub fn new(mu_bar: f64, intensity: f64, theta: f64, beta_bar: f64, gamma: f64) -> Result<Self> {
        let mut p = SystemParams {
            mu_bar,
            intensity,
            theta,
            beta_bar,
            gamma,
            lambda_bar: 1.0,
        };
        p.lambda_bar = DEFAULT_CUTOFF_RATIO * p.omega_bar();
        p.checked()
    }

    /// Replaces the cutoff.
    pub fn with_cutoff(mut self, lambda_bar: f64) -> Result<Self> {
        self.lambda_bar = lambda_bar;
        self.checked()
    }

    /// Returns `self` if no hard constraint is violated.
    pub fn checked(self) -> Result<Self> {
        let diag = validate_params(&self);
        match diag.violations.first() {
            None => Ok(self),
            Some(_) => Err(Error::InvalidParameter(diag.violations.join("; "))),
        }
    }

    /// Quasi-classical parameter `epsilon = 1/I0`.
    pub fn epsilon(&self) -> f64 {
        1.0 / self.intensity
    }

    /// Classical nonlinearity `mu_cl = mu_bar I0`.
    pub fn mu_cl(&self) -> f64 {
        self.mu_bar * self.intensity
    }

    /// Frequency operator evaluated at the mean intensity.
    pub fn omega_bar(&self) -> f64 {
        self.level_frequency(self.intensity)
    }

    /// `Omega_n = 1 + mu_bar (1 + 2n)`, the frequency operator on level `n`.
    pub fn level_frequency(&self, n: f64) -> f64 {
        1.0 + self.mu_bar * (1.0 + 2.0 * n)
    }

    /// Classical frequency `1 + 2 mu_bar I0`.
    pub fn omega_cl(&self) -> f64 {
        1.0 + 2.0 * self.mu_bar * self.intensity
    }

    /// Initial coherent amplitude.
    pub fn alpha(&self) -> C64 {
        C64::from_polar(self.intensity.sqrt(), -self.theta)
    }

    /// Initial mean position `(alpha + alpha*)/sqrt 2`.
    pub fn x0(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.alpha().re
    }

    pub fn spectral_density(&self) -> OhmicSpectralDensity {
        OhmicSpectralDensity {
            gamma: self.gamma,
            lambda_bar: self.lambda_bar,
        }
    }
}

/// Result of [`validate_params`]: hard violations and soft warnings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every violated constraint of `p`. Never fails.
pub fn validate_params(p: &SystemParams) -> Diagnostics {
    let mut d = Diagnostics::default();
    let mut need = |ok: bool, msg: &str| {
        if !ok {
            d.violations.push(msg.to_string());
        }
    };
    need(p.mu_bar.is_finite() && p.mu_bar >= 0.0, "mu_bar must be >= 0");
    need(p.intensity.is_finite() && p.intensity > 0.0, "intensity must be > 0");
    need(p.theta.is_finite(), "theta must be finite");
    need(p.beta_bar.is_finite() && p.beta_bar > 0.0, "beta_bar must be > 0");
    need(p.gamma.is_finite() && p.gamma >= 0.0, "gamma must be >= 0");
    need(p.lambda_bar.is_finite() && p.lambda_bar > 0.0, "lambda_bar must be > 0");

    if d.violations.is_empty() {
        let omega = p.omega_bar();
        if p.lambda_bar <= omega {
            d.warnings.push(format!(
                "cutoff below system frequency: lambda_bar = {} <= Omega_bar = {:.4}",
                p.lambda_bar, omega
            ));
        }
        if p.intensity > MAX_PRACTICAL_INTENSITY {
            d.warnings.push(format!(
                "truncation infeasible at desk scale: intensity {} > {}",
                p.intensity, MAX_PRACTICAL_INTENSITY
            ));
        }
    }
    d
}

/// How the decoherence time is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauDMode {
    /// `tanh(beta Omega / 2) / (I0 gamma Omega)`: cutoff factor dropped.
    #[default]
    Headline,
    /// `1 / (2 B1(inf) I0)` with the full Lorentzian cutoff factor.
    Exact,
}

/// The five characteristic times and the survival ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timescales {
    pub tau_cl: f64,
    pub tau_e: f64,
    pub tau_r: f64,
    pub tau_d: f64,
    pub tau_gamma: f64,
    /// `Theta = tau_gamma / tau_E`.
    pub theta_ratio: f64,
}

/// Derives all timescales with the headline decoherence formula.
pub fn derive_timescales(p: &SystemParams) -> Timescales {
    derive_timescales_with(p, TauDMode::Headline)
}

pub fn derive_timescales_with(p: &SystemParams, mode: TauDMode) -> Timescales {
    use std::f64::consts::PI;
    let omega = p.omega_bar();
    let tau_cl = 2.0 * PI / p.omega_cl();
    let (tau_e, tau_r) = if p.mu_bar > 0.0 {
        (1.0 / (2.0 * p.mu_bar * p.intensity.sqrt()), PI / p.mu_bar)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    let (tau_d, tau_gamma) = if p.gamma > 0.0 {
        let tau_d = match mode {
            TauDMode::Headline => {
                (0.5 * p.beta_bar * omega).tanh() / (p.intensity * p.gamma * omega)
            }
            TauDMode::Exact => {
                let b1 = p.spectral_density().noise_asymptote(omega, p.beta_bar);
                1.0 / (2.0 * b1 * p.intensity)
            }
        };
        (tau_d, 2.0 / p.gamma)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    let theta_ratio = if p.mu_bar == 0.0 {
        0.0
    } else if p.gamma == 0.0 {
        f64::INFINITY
    } else {
        tau_gamma / tau_e
    };
    Timescales {
        tau_cl,
        tau_e,
        tau_r,
        tau_d,
        tau_gamma,
        theta_ratio,
    }
}

/// Dynamical regime read off the survival ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Isolated,
    QuantumSurviving,
    Classical,
    Intermediate,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Isolated => "isolated",
            Regime::QuantumSurviving => "quantum-surviving",
            Regime::Classical => "classical",
            Regime::Intermediate => "intermediate",
        })
    }
}

/// A named timescale, for ordering reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedScale {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub regime: Regime,
    /// Timescales sorted ascending; infinite ones last.
    pub ordering: Vec<NamedScale>,
}

pub fn classify_regime(t: &Timescales) -> RegimeReport {
    let regime = if t.tau_gamma.is_infinite() {
        Regime::Isolated
    } else if t.theta_ratio > THETA_HIGH {
        Regime::QuantumSurviving
    } else if t.theta_ratio < THETA_LOW {
        Regime::Classical
    } else {
        Regime::Intermediate
    };
    let mut ordering: Vec<NamedScale> = [
        ("tau_D", t.tau_d),
        ("tau_cl", t.tau_cl),
        ("tau_gamma", t.tau_gamma),
        ("tau_E", t.tau_e),
        ("tau_R", t.tau_r),
    ]
    .into_iter()
    .map(|(name, value)| NamedScale {
        name: name.to_string(),
        value,
    })
    .collect();
    ordering.sort_by(|a, b| a.value.total_cmp(&b.value));
    RegimeReport { regime, ordering }
}

/// Whether a survival estimate clears the thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurvivalCondition {
    Satisfied,
    Boundary,
    Failed,
}

impl SurvivalCondition {
    pub fn from_theta(theta: f64) -> Self {
        if theta > THETA_HIGH {
            SurvivalCondition::Satisfied
        } else if theta < THETA_LOW {
            SurvivalCondition::Failed
        } else {
            SurvivalCondition::Boundary
        }
    }
}

impl fmt::Display for SurvivalCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SurvivalCondition::Satisfied => "satisfied",
            SurvivalCondition::Boundary => "boundary",
            SurvivalCondition::Failed => "failed",
        })
    }
}

fn require_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")))
    }
}

/// Survival ratio for a single-mode condensate.
///
/// Inputs are SI: scattering length `a` in m, atomic mass in kg, trap angular
/// frequency in rad/s; `tau_gamma` is dimensionless.
pub fn theta_bec(a: f64, mass: f64, omega: f64, particles: f64, tau_gamma: f64) -> Result<f64> {
    require_positive("scattering length", a)?;
    require_positive("mass", mass)?;
    require_positive("trap frequency", omega)?;
    require_positive("particle count", particles)?;
    require_positive("tau_gamma", tau_gamma)?;
    let root = (2.0 * mass * omega * particles / (std::f64::consts::PI * HBAR)).sqrt();
    Ok(a * root * tau_gamma)
}

/// Survival ratio `4 mu_cl Q / sqrt(n)` for a mechanical resonator.
pub fn theta_cantilever(mu_cl: f64, quality: f64, levels: f64) -> Result<f64> {
    if !(mu_cl.is_finite() && mu_cl >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mu_cl must be >= 0, got {mu_cl}"
        )));
    }
    require_positive("quality factor", quality)?;
    require_positive("level count", levels)?;
    Ok(4.0 * mu_cl * quality / levels.sqrt())
}

/// Classical nonlinearity at which the cantilever ratio equals one.
pub fn cantilever_threshold(quality: f64, levels: f64) -> Result<f64> {
    require_positive("quality factor", quality)?;
    require_positive("level count", levels)?;
    Ok(levels.sqrt() / (4.0 * quality))
}
