//! Analytic solutions: closed-system and RWA observables, decay factor,
//! Ehrenfest envelope and the Fourier line spectrum.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::quadrature::gauss_legendre_composite;

/// `<a>(tau) = alpha exp(-i(1+mu) tau) exp[|alpha|^2 (exp(-2 i mu tau) - 1)]`.
pub fn alpha_closed(alpha0: C64, mu_bar: f64, tau: f64) -> C64 {
    let carrier = C64::from_polar(1.0, -(1.0 + mu_bar) * tau);
    let inner = C64::from_polar(1.0, -2.0 * mu_bar * tau) - 1.0;
    alpha0 * carrier * (alpha0.norm_sqr() * inner).exp()
}

/// `sqrt(2) Re <a>(tau)` for the closed system.
pub fn x_closed(alpha0: C64, mu_bar: f64, tau: f64) -> f64 {
    SQRT_2 * alpha_closed(alpha0, mu_bar, tau).re
}

/// `exp(-n tau_R / tau_D) exp(-(tau - n tau_R)^2 / 2 tau_E^2)`.
pub fn ehrenfest_envelope(tau: f64, tau_e: f64, n_bump: u32, tau_r: f64, tau_d: f64) -> f64 {
    let n = n_bump as f64;
    let shift = tau - n * tau_r;
    let decay = if n_bump == 0 { 0.0 } else { n * tau_r / tau_d };
    (-decay - shift * shift / (2.0 * tau_e * tau_e)).exp()
}

/// `|alpha|^2 (1 + ik)/(1 + k^2)` with `k = gamma / 2 mu`, written so that
/// `mu = 0` is the regular `k -> inf` limit.
fn rwa_weight(alpha0: C64, mu_bar: f64, gamma: f64) -> C64 {
    let den = C64::new(2.0 * mu_bar, -gamma);
    if den.norm() == 0.0 {
        return C64::new(alpha0.norm_sqr(), 0.0);
    }
    alpha0.norm_sqr() * 2.0 * mu_bar / den
}

/// Exact `<a>(tau)` of the RWA Lindblad equation from a coherent state.
pub fn alpha_lindblad_rwa(alpha0: C64, mu_bar: f64, gamma: f64, tau: f64) -> C64 {
    let carrier = C64::from_polar((-0.5 * gamma * tau).exp(), -(1.0 + mu_bar) * tau);
    let z = 1.0 - C64::from_polar((-gamma * tau).exp(), -2.0 * mu_bar * tau);
    alpha0 * carrier * (-rwa_weight(alpha0, mu_bar, gamma) * z).exp()
}

/// `D(tau) = -ln |<a>(tau) / alpha|` for the RWA solution.
pub fn decay_factor(alpha0: C64, mu_bar: f64, gamma: f64, tau: f64) -> f64 {
    let i0 = alpha0.norm_sqr();
    let den = 4.0 * mu_bar * mu_bar + gamma * gamma;
    if den == 0.0 {
        return 0.0;
    }
    let e = (-gamma * tau).exp();
    let (s, c) = (2.0 * mu_bar * tau).sin_cos();
    0.5 * gamma * tau + i0 / den * (4.0 * mu_bar * mu_bar * (1.0 - e * c) - 2.0 * mu_bar * gamma * e * s)
}

/// One comb line of the closed-system position spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumLine {
    pub n: i64,
    /// `Omega_n = 1 + mu (1 + 2n)`; lines are `2 mu` apart.
    pub frequency: f64,
    pub lambda: C64,
    /// `alpha Lambda(n)`.
    pub amplitude: C64,
    /// Quadrature error estimate of `Lambda(n)`.
    pub error: f64,
}

impl SpectrumLine {
    /// Line weight `x_omega = Re(alpha Lambda(n))`.
    pub fn x_omega(&self) -> f64 {
        self.amplitude.re
    }
}

/// `x(tau) = sqrt 2 Re sum alpha Lambda(n) exp(-i Omega_n tau)`.
pub fn reconstruct_x(lines: &[SpectrumLine], tau: f64) -> f64 {
    let s: C64 = lines
        .iter()
        .map(|l| l.amplitude * C64::from_polar(1.0, -l.frequency * tau))
        .sum();
    SQRT_2 * s.re
}

/// `Lambda(n) = (mu/pi) int_0^{pi/mu} exp[(e^{2 i mu tau} - 1)|alpha|^2 - 2 i mu n tau] dtau`,
/// evaluated over one period in the variable `2 mu tau`.
pub fn fourier_component(intensity: f64, n: i64) -> (C64, f64) {
    let f = |t: f64| (intensity * (C64::from_polar(1.0, t) - 1.0) - C64::new(0.0, n as f64 * t)).exp();
    let panels = 40 + 2 * (intensity.ceil() as usize + n.unsigned_abs() as usize);
    let coarse: C64 = gauss_legendre_composite(f, 0.0, 2.0 * PI, panels);
    let fine: C64 = gauss_legendre_composite(f, 0.0, 2.0 * PI, 2 * panels);
    (fine / (2.0 * PI), ((fine - coarse) / (2.0 * PI)).norm())
}

/// Spectrum lines for every `n` in `range`.
pub fn fourier_lines(alpha0: C64, mu_bar: f64, range: std::ops::Range<i64>) -> Result<Vec<SpectrumLine>> {
    fourier_lines_with(alpha0, mu_bar, range, Execution::default())
}

pub fn fourier_lines_with(
    alpha0: C64,
    mu_bar: f64,
    range: std::ops::Range<i64>,
    exec: Execution,
) -> Result<Vec<SpectrumLine>> {
    if !mu_bar.is_finite() || mu_bar < 0.0 {
        return Err(Error::InvalidParameter("mu_bar must be >= 0".into()));
    }
    let intensity = alpha0.norm_sqr();
    let ns: Vec<i64> = range.collect();
    Ok(exec.map(ns, |n| {
        let (lambda, error) = fourier_component(intensity, n);
        SpectrumLine {
            n,
            frequency: 1.0 + mu_bar * (1.0 + 2.0 * n as f64),
            lambda,
            amplitude: alpha0 * lambda,
            error,
        }
    }))
}

/// `x(0) (4 pi |alpha|^2)^{-1/2} exp[-(omega - omega_cl)^2 / 2 dw^2]` with
/// `omega_cl = 1 + 2 mu |alpha|^2` and `dw = 2 mu |alpha|`.
pub fn gaussian_spectrum(alpha0: C64, mu_bar: f64, omega: f64) -> f64 {
    let i0 = alpha0.norm_sqr();
    let x0 = SQRT_2 * alpha0.re;
    let center = 1.0 + 2.0 * mu_bar * i0;
    let width = 2.0 * mu_bar * i0.sqrt();
    let z = (omega - center) / width;
    x0 / (4.0 * PI * i0).sqrt() * (-0.5 * z * z).exp()
}
