//! Flat key-value run configuration, read from and written to TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qno_core::analysis::{SpectrumOptions, Window};
use qno_core::evolve::{EvolutionMode, IntegratorConfig, Scheme};
use qno_core::model::SystemParams;
use qno_core::sweep::{DrawOptions, SweepRanges};

use crate::error::{CliError, CliResult};

/// Every setting of one invocation. Missing keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mu_bar: f64,
    pub intensity: f64,
    pub theta: f64,
    pub beta_bar: f64,
    pub gamma: f64,
    /// Bath cutoff; omitted means ten times `Omega_bar`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_bar: Option<f64>,

    pub mode: EvolutionMode,
    pub scheme: Scheme,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub stride: usize,
    pub tau_end: f64,
    pub eps_pos: f64,
    pub eigen_samples: usize,

    pub out: PathBuf,
    /// Compare tolerance; omitted means the per-mode default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,

    pub window: Window,
    pub even_extension: bool,
    pub padding: usize,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub draws: usize,
    /// Sweep worker threads; omitted means one per CPU.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub intensity_range: [f64; 2],
    pub mu_bar_range: [f64; 2],
    pub beta_bar_range: [f64; 2],
    pub gamma_range: [f64; 2],
    pub coherence_fraction: f64,
    pub samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let desk = SweepRanges::desk();
        let draw = DrawOptions::default();
        let integ = IntegratorConfig::new(1.0);
        RunConfig {
            mu_bar: 0.1,
            intensity: 50.0,
            theta: 0.0,
            beta_bar: 1.0,
            gamma: 1e-4,
            lambda_bar: None,
            mode: EvolutionMode::BornMarkovAsymptotic,
            scheme: Scheme::default(),
            dt: None,
            stride: 10,
            tau_end: 10.0,
            eps_pos: integ.eps_pos,
            eigen_samples: 10,
            out: PathBuf::from("out"),
            tolerance: None,
            window: Window::default(),
            even_extension: true,
            padding: SpectrumOptions::default().padding,
            seed: None,
            draws: 20,
            workers: None,
            intensity_range: desk.intensity.into(),
            mu_bar_range: desk.mu_bar.into(),
            beta_bar_range: desk.beta_bar.into(),
            gamma_range: desk.gamma.into(),
            coherence_fraction: draw.coherence_fraction,
            samples: draw.samples,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config fields are all representable in TOML")
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn params(&self) -> CliResult<SystemParams> {
        let p = SystemParams::new(self.mu_bar, self.intensity, self.theta, self.beta_bar, self.gamma)?;
        Ok(match self.lambda_bar {
            Some(l) => p.with_cutoff(l)?,
            None => p,
        })
    }

    pub fn integrator(&self) -> CliResult<IntegratorConfig> {
        let mut c = IntegratorConfig::new(self.tau_end);
        c.dt = self.dt;
        c.scheme = self.scheme;
        c.stride = self.stride;
        c.eps_pos = self.eps_pos;
        c.eigen_samples = self.eigen_samples;
        c.validate()?;
        Ok(c)
    }

    pub fn spectrum_options(&self) -> SpectrumOptions {
        SpectrumOptions {
            window: self.window,
            even_extension: self.even_extension,
            padding: self.padding,
        }
    }

    pub fn ranges(&self) -> CliResult<SweepRanges> {
        let pair = |r: [f64; 2]| (r[0], r[1]);
        let r = SweepRanges {
            intensity: pair(self.intensity_range),
            mu_bar: pair(self.mu_bar_range),
            beta_bar: pair(self.beta_bar_range),
            gamma: pair(self.gamma_range),
        };
        r.validate()?;
        Ok(r)
    }

    pub fn draw_options(&self) -> CliResult<DrawOptions> {
        if !(self.coherence_fraction > 0.0 && self.coherence_fraction.is_finite()) {
            return Err(CliError::Validation("coherence_fraction must be > 0".into()));
        }
        if self.samples < 3 {
            return Err(CliError::Validation("samples must be >= 3".into()));
        }
        Ok(DrawOptions {
            coherence_fraction: self.coherence_fraction,
            samples: self.samples,
            mode: self.mode,
            scheme: self.scheme,
            dt: self.dt,
        })
    }
}
