//! Fits that turn simulated series into timescales: envelope peaks, Ehrenfest
//! bumps, recurrence and relaxation decay, spectra and cat coherence.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// A local maximum of `|x|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub tau: f64,
    pub height: f64,
}

/// Least-squares polynomial fit of degree `deg`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyFit {
    /// Coefficients, constant term first.
    pub coeffs: Vec<f64>,
    /// Standard errors of the coefficients (NaN without spare degrees of freedom).
    pub std_err: Vec<f64>,
    /// Root-mean-square residual.
    pub rms: f64,
}

/// Fits `y ~ sum c_k x^k` after centring and scaling `x`.
pub fn polyfit(x: &[f64], y: &[f64], deg: usize) -> Result<PolyFit> {
    let n = x.len();
    if n != y.len() || n < deg + 1 {
        return Err(Error::Fit(format!("need at least {} points, got {n}", deg + 1)));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let scale = x.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max).max(1e-300);
    let a = DMatrix::from_fn(n, deg + 1, |i, k| ((x[i] - mean) / scale).powi(k as i32));
    let b = DVector::from_column_slice(y);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(Error::Fit("ill-conditioned design matrix".into()));
    }
    let c = svd.solve(&b, 1e-14).map_err(|e| Error::Fit(e.to_string()))?;
    let resid = &a * &c - &b;
    let rss = resid.norm_squared();
    let rms = (rss / n as f64).sqrt();
    let dof = n as f64 - (deg + 1) as f64;
    let cov_scaled = (a.transpose() * &a)
        .try_inverse()
        .ok_or_else(|| Error::Fit("singular normal matrix".into()))?;
    // back-substitute centring/scaling: expand sum c_k ((x - m)/s)^k
    let mut coeffs = vec![0.0; deg + 1];
    let mut var = vec![0.0; deg + 1];
    for k in 0..=deg {
        for j in 0..=k {
            let binom = (1..=j).fold(1.0, |acc, i| acc * (k - i + 1) as f64 / i as f64);
            let term = c[k] * binom * (-mean).powi((k - j) as i32) / scale.powi(k as i32);
            coeffs[j] += term;
        }
    }
    // standard errors in the original basis (linear transform of covariance)
    let t = DMatrix::from_fn(deg + 1, deg + 1, |j, k| {
        if j > k {
            0.0
        } else {
            let binom = (1..=j).fold(1.0, |acc, i| acc * (k - i + 1) as f64 / i as f64);
            binom * (-mean).powi((k - j) as i32) / scale.powi(k as i32)
        }
    });
    let sigma2 = if dof > 0.0 { rss / dof } else { f64::NAN };
    let cov = &t * cov_scaled * t.transpose() * sigma2;
    for (k, v) in var.iter_mut().enumerate() {
        *v = cov[(k, k)].max(0.0).sqrt();
    }
    Ok(PolyFit {
        coeffs,
        std_err: var,
        rms,
    })
}

fn check_uniform(times: &[f64]) -> Result<f64> {
    if times.len() < 3 {
        return Err(Error::Fit("series too short".into()));
    }
    let h = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if !(h > 0.0) || times.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-6 * h) {
        return Err(Error::InvalidParameter("series must be uniformly sampled".into()));
    }
    Ok(h)
}

/// Local maxima of `|x|` above `1e-3 max|x|`, refined by a parabola through
/// the three samples around each maximum.
pub fn extract_envelope_peaks(times: &[f64], x: &[f64]) -> Result<Vec<Peak>> {
    check_uniform(times)?;
    if x.len() != times.len() {
        return Err(Error::Dimension {
            expected: times.len(),
            found: x.len(),
        });
    }
    let ax: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    let top = ax.iter().copied().fold(0.0, f64::max);
    let floor = 1e-3 * top;
    let h = times[1] - times[0];
    let mut peaks = Vec::new();
    for i in 1..ax.len() - 1 {
        if ax[i] > floor && ax[i] >= ax[i - 1] && ax[i] > ax[i + 1] {
            let (l, c, r) = (ax[i - 1], ax[i], ax[i + 1]);
            let den = l - 2.0 * c + r;
            let (shift, height) = if den < 0.0 {
                let s = 0.5 * (l - r) / den;
                (s, c - 0.25 * (l - r) * s)
            } else {
                (0.0, c)
            };
            peaks.push(Peak {
                tau: times[i] + shift * h,
                height,
            });
        }
    }
    if peaks.is_empty() {
        return Err(Error::NoPeaks);
    }
    Ok(peaks)
}

/// Splits peaks into recurrence bumps by the nearest multiple of `tau_r`.
pub fn group_bumps(peaks: &[Peak], tau_r: f64) -> Vec<(u32, Vec<Peak>)> {
    let mut out: Vec<(u32, Vec<Peak>)> = Vec::new();
    for p in peaks {
        let n = (p.tau / tau_r).round().max(0.0) as u32;
        match out.iter_mut().find(|(k, _)| *k == n) {
            Some((_, v)) => v.push(*p),
            None => out.push((n, vec![*p])),
        }
    }
    out.sort_by_key(|(n, _)| *n);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpFit {
    pub n: u32,
    pub center: f64,
    /// Gaussian width of the bump, the Ehrenfest-time estimate.
    pub tau_e: f64,
    pub peak_height: f64,
    /// RMS residual of `ln(height)`.
    pub residual: f64,
    pub points: usize,
}

/// Fits `ln h = c - (tau - center)^2 / 2 tau_E^2` to the peaks of bump `n`.
///
/// The first bump only has its right half, so its centre is pinned to 0;
/// later bumps fit the centre freely.
pub fn fit_ehrenfest_bump(peaks: &[Peak], n: u32, tau_r: f64) -> Result<BumpFit> {
    if peaks.len() < 5 {
        return Err(Error::Fit(format!("bump {n} has {} peaks, need 5", peaks.len())));
    }
    let y: Vec<f64> = peaks.iter().map(|p| p.height.ln()).collect();
    let (center, curvature, c0, rms) = if n == 0 {
        let s: Vec<f64> = peaks.iter().map(|p| p.tau * p.tau).collect();
        let f = polyfit(&s, &y, 1)?;
        (0.0, f.coeffs[1], f.coeffs[0], f.rms)
    } else {
        let t: Vec<f64> = peaks.iter().map(|p| p.tau - n as f64 * tau_r).collect();
        let f = polyfit(&t, &y, 2)?;
        let c2 = f.coeffs[2];
        let shift = -f.coeffs[1] / (2.0 * c2);
        let top = f.coeffs[0] - f.coeffs[1] * f.coeffs[1] / (4.0 * c2);
        (n as f64 * tau_r + shift, c2, top, f.rms)
    };
    if !(curvature < 0.0) {
        return Err(Error::Fit(format!("bump {n} is not peaked (curvature {curvature:.3e})")));
    }
    Ok(BumpFit {
        n,
        center,
        tau_e: (-0.5 / curvature).sqrt(),
        peak_height: c0.exp(),
        residual: rms,
        points: peaks.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoherenceMethod {
    PeakRatio,
    CatOverlap,
    /// Decay of `<a>` in the frame co-rotating with the free Hamiltonian.
    FrameCoherence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoherenceFit {
    pub tau_d: f64,
    pub rate: f64,
    pub method: DecoherenceMethod,
    /// Two-sigma interval on `tau_D`, when the fit has spare degrees of freedom.
    pub confidence: Option<(f64, f64)>,
    pub residual: f64,
    /// Theoretical rate the fit is compared with, if known.
    pub predicted_rate: Option<f64>,
}

fn decoherence_from_rate(rate: f64, se: f64, residual: f64, method: DecoherenceMethod) -> Result<DecoherenceFit> {
    if !(rate > 0.0) {
        return Err(Error::Fit(format!("non-positive decay rate {rate:.3e}")));
    }
    let confidence = if se.is_finite() {
        let lo = rate + 2.0 * se;
        let hi = rate - 2.0 * se;
        Some((1.0 / lo, if hi > 0.0 { 1.0 / hi } else { f64::INFINITY }))
    } else {
        None
    };
    Ok(DecoherenceFit {
        tau_d: 1.0 / rate,
        rate,
        method,
        confidence,
        residual,
        predicted_rate: None,
    })
}

/// `tau_D` from bump heights: `ln h_n = c - n tau_R / tau_D`.
pub fn fit_recurrence_decay(heights: &[(u32, f64)], tau_r: f64) -> Result<DecoherenceFit> {
    let usable: Vec<(f64, f64)> = heights
        .iter()
        .filter(|(_, h)| *h > 0.0)
        .map(|&(n, h)| (n as f64 * tau_r, h.ln()))
        .collect();
    if usable.len() < 2 {
        return Err(Error::BumpsUnresolved(format!(
            "{} bump(s) above the noise floor",
            usable.len()
        )));
    }
    let (t, y): (Vec<f64>, Vec<f64>) = usable.into_iter().unzip();
    let f = polyfit(&t, &y, 1)?;
    decoherence_from_rate(-f.coeffs[1], f.std_err[1], f.rms, DecoherenceMethod::PeakRatio)
}

/// Exponential decay fit of the peak envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationFit {
    pub tau: f64,
    pub amplitude: f64,
    /// RMS residual of `ln(height)`.
    pub residual: f64,
    pub points: usize,
}

/// Fits `ln h = c - tau / T` to the envelope peaks of `x`.
pub fn fit_relaxation_decay(times: &[f64], x: &[f64]) -> Result<RelaxationFit> {
    let peaks = extract_envelope_peaks(times, x)?;
    fit_relaxation_peaks(&peaks)
}

pub fn fit_relaxation_peaks(peaks: &[Peak]) -> Result<RelaxationFit> {
    let t: Vec<f64> = peaks.iter().map(|p| p.tau).collect();
    let y: Vec<f64> = peaks.iter().map(|p| p.height.ln()).collect();
    let f = polyfit(&t, &y, 1)?;
    if !(f.coeffs[1] < 0.0) {
        return Err(Error::Fit("envelope does not decay".into()));
    }
    Ok(RelaxationFit {
        tau: -1.0 / f.coeffs[1],
        amplitude: f.coeffs[0].exp(),
        residual: f.rms,
        points: peaks.len(),
    })
}

/// RMS log residual of `h = A exp(-tau^2 / 2 tau_E^2)` with the best `A`.
pub fn gaussian_envelope_residual(peaks: &[Peak], tau_e: f64) -> f64 {
    let r: Vec<f64> = peaks
        .iter()
        .map(|p| p.height.ln() + p.tau * p.tau / (2.0 * tau_e * tau_e))
        .collect();
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / r.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    Rectangular,
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumOptions {
    pub window: Window,
    /// Mirror the series to negative times before transforming.
    pub even_extension: bool,
    /// Zero-padding factor (transform length / data length).
    pub padding: usize,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        SpectrumOptions {
            window: Window::Hann,
            even_extension: false,
            padding: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub omega: Vec<f64>,
    /// `|X(omega)|`, normalized so a unit-amplitude cosine peaks at 1.
    pub amplitude: Vec<f64>,
}

/// Magnitude spectrum of a uniformly sampled real series, non-negative
/// frequencies only.
pub fn discrete_spectrum(times: &[f64], x: &[f64], opts: SpectrumOptions) -> Result<Spectrum> {
    let h = check_uniform(times)?;
    if x.len() != times.len() {
        return Err(Error::Dimension {
            expected: times.len(),
            found: x.len(),
        });
    }
    let series: Vec<f64> = if opts.even_extension {
        x.iter().rev().chain(x.iter().skip(1)).copied().collect()
    } else {
        x.to_vec()
    };
    let len = series.len();
    let window: Vec<f64> = match opts.window {
        Window::Rectangular => vec![1.0; len],
        Window::Hann => (0..len)
            .map(|k| {
                let s = (PI * (k as f64 + 0.5) / len as f64).sin();
                s * s
            })
            .collect(),
    };
    let wsum: f64 = window.iter().sum();
    let total = (len * opts.padding.max(1)).next_power_of_two();
    let mut buf: Vec<C64> = series
        .iter()
        .zip(&window)
        .map(|(v, w)| C64::new(v * w, 0.0))
        .collect();
    buf.resize(total, C64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(total).process(&mut buf);
    let bins = total / 2 + 1;
    let omega = (0..bins).map(|k| 2.0 * PI * k as f64 / (total as f64 * h)).collect();
    let amplitude = buf[..bins]
        .iter()
        .enumerate()
        .map(|(k, z)| z.norm() * if k == 0 { 1.0 } else { 2.0 } / wsum)
        .collect();
    Ok(Spectrum { omega, amplitude })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFit {
    pub center: f64,
    /// Gaussian standard deviation `dw` of the dominant lobe.
    pub width: f64,
    /// `1 / dw`.
    pub tau_e: f64,
    /// RMS residual of `ln(amplitude)`.
    pub residual: f64,
    /// True when the fit used resolved comb lines rather than smooth bins.
    pub comb: bool,
    pub points: usize,
    pub warning: Option<String>,
}

/// Gaussian fit of the dominant spectral lobe in log space.
///
/// When the spectrum is a resolved comb, the fit runs through the line
/// maxima; otherwise through the contiguous bins above a tenth of the peak.
pub fn fit_spectral_width(spec: &Spectrum) -> Result<SpectrumFit> {
    let a = &spec.amplitude;
    let w = &spec.omega;
    if a.len() < 7 {
        return Err(Error::Fit("spectrum too short".into()));
    }
    // ignore the DC region when locating the dominant lobe
    let start = 1;
    let (imax, &amax) = a
        .iter()
        .enumerate()
        .skip(start)
        .max_by(|x, y| x.1.total_cmp(y.1))
        .ok_or(Error::NoPeaks)?;
    if !(amax > 0.0) {
        return Err(Error::NoPeaks);
    }
    let threshold = 0.1 * amax;
    let maxima: Vec<usize> = (start.max(1)..a.len() - 1)
        .filter(|&k| a[k] >= threshold && a[k] >= a[k - 1] && a[k] > a[k + 1])
        .collect();

    // contiguous lobe around the maximum
    let mut lo = imax;
    while lo > start && a[lo - 1] >= threshold {
        lo -= 1;
    }
    let mut hi = imax;
    while hi + 1 < a.len() && a[hi + 1] >= threshold {
        hi += 1;
    }

    let comb = maxima.len() >= 5;
    let idx: Vec<usize> = if comb { maxima.clone() } else { (lo..=hi).collect() };
    if idx.len() < 5 {
        return Err(Error::Fit(format!(
            "only {} spectral points above a tenth of the peak",
            idx.len()
        )));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = idx.iter().map(|&k| (w[k], a[k].ln())).unzip();
    let f = polyfit(&x, &y, 2)?;
    let c2 = f.coeffs[2];
    if !(c2 < 0.0) {
        return Err(Error::Fit("spectral lobe is not peaked".into()));
    }
    let center = -f.coeffs[1] / (2.0 * c2);
    let width = (-0.5 / c2).sqrt();
    let warning = if comb {
        None
    } else {
        let outside = maxima.iter().any(|&k| (k < lo || k > hi) && a[k] >= 0.5 * amax);
        outside.then(|| "multi-modal spectrum: fit restricted to the dominant lobe".to_string())
    };
    Ok(SpectrumFit {
        center,
        width,
        tau_e: 1.0 / width,
        residual: f.rms,
        comb,
        points: idx.len(),
        warning,
    })
}

/// Linear fit of `ln |o(tau)|` where the overlap stays above `floor`.
fn log_rate(times: &[f64], values: &[f64], floor: f64) -> Result<PolyFit> {
    let top = values.iter().copied().fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, &v)| v > floor * top)
        .map(|(&t, &v)| (t, v.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Fit("overlap fell below the numeric floor before the fit window".into()));
    }
    let (t, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    polyfit(&t, &y, 1)
}

/// Exponential decay rate of `|<alpha| rho |beta>|`, compared with
/// `2 B1 dx^2`.
pub fn cat_offdiagonal_rate(times: &[f64], overlap: &[f64], dx2: f64, b1: f64) -> Result<DecoherenceFit> {
    let f = log_rate(times, overlap, 1e-10)?;
    let mut fit = decoherence_from_rate(-f.coeffs[1], f.std_err[1], f.rms, DecoherenceMethod::CatOverlap)?;
    fit.predicted_rate = Some(2.0 * b1 * dx2);
    Ok(fit)
}

/// Phase-diffusion clock `g(tau) = tau - sin(2 mu tau) / 2 mu`.
pub fn dephasing_clock(mu_bar: f64, tau: f64) -> f64 {
    let x = 2.0 * mu_bar * tau;
    if x.abs() < 1e-3 {
        // x - sin x ~ x^3/6 - x^5/120
        tau * x * x / 6.0 * (1.0 - x * x / 20.0)
    } else {
        tau - x.sin() / (2.0 * mu_bar)
    }
}

/// `tau_D` from the co-rotating mean amplitude `a_I`, using
/// `-ln |a_I / alpha| - kappa tau = c + g(tau) / tau_D` where `kappa` is the
/// known relaxation rate of the amplitude.
pub fn fit_frame_coherence(times: &[f64], a_frame: &[C64], mu_bar: f64, kappa: f64) -> Result<DecoherenceFit> {
    let a0 = a_frame.first().map(|z| z.norm()).ok_or(Error::NoPeaks)?;
    let (g, y): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(a_frame)
        .filter(|(_, z)| z.norm() > 1e-8 * a0)
        .map(|(&t, z)| (dephasing_clock(mu_bar, t), -(z.norm() / a0).ln() - kappa * t))
        .unzip();
    if g.len() < 3 {
        return Err(Error::Fit("coherence lost before the fit window".into()));
    }
    if !(g.last().copied().unwrap_or(0.0) > 0.0) {
        return Err(Error::Fit("dephasing clock did not advance".into()));
    }
    let f = polyfit(&g, &y, 1)?;
    decoherence_from_rate(f.coeffs[1], f.std_err[1], f.rms, DecoherenceMethod::FrameCoherence)
}
