//! Ohmic spectral density and the Born-Markov bath coefficients.
//!
//! With `eta(s) = (1/pi) int J(w) sin(ws) dw` and
//! `nu(s) = (1/pi) int J(w) coth(beta w / 2) cos(ws) dw`, each coefficient
//! `A1 = int_0^tau eta(s) cos(Omega s) ds` (and likewise `A2` with sin, `B1`,
//! `B2` with `nu`) is evaluated with the time integral done first, leaving an
//! absolutely convergent frequency integral.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::SystemParams;
use crate::quadrature::{integrate, Tolerance};

/// `J(w) = gamma w Lambda^2 / (Lambda^2 + w^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OhmicSpectralDensity {
    pub gamma: f64,
    pub lambda_bar: f64,
}

impl OhmicSpectralDensity {
    /// `J(w)` without the sign check of [`spectral_density_at`].
    pub fn eval(&self, w: f64) -> f64 {
        let l2 = self.lambda_bar * self.lambda_bar;
        self.gamma * w * l2 / (l2 + w * w)
    }

    pub fn derivative(&self, w: f64) -> f64 {
        let l2 = self.lambda_bar * self.lambda_bar;
        let d = l2 + w * w;
        self.gamma * l2 * (l2 - w * w) / (d * d)
    }

    /// Noise density `h(w) = J(w) coth(beta w / 2)`, finite at `w = 0`.
    pub fn noise(&self, w: f64, beta: f64) -> f64 {
        let l2 = self.lambda_bar * self.lambda_bar;
        let x = 0.5 * beta * w;
        let x_coth_x = if x.abs() < 1e-3 {
            let x2 = x * x;
            1.0 + x2 / 3.0 - x2 * x2 / 45.0
        } else {
            x / x.tanh()
        };
        self.gamma * l2 / (l2 + w * w) * (2.0 / beta) * x_coth_x
    }

    /// `B1(inf) = h(Omega) / 2`.
    pub fn noise_asymptote(&self, omega: f64, beta: f64) -> f64 {
        0.5 * self.noise(omega, beta)
    }

    /// `A1(inf) = gamma Lambda^3 / (2 (Lambda^2 + Omega^2))`.
    pub fn renormalization_asymptote(&self, omega: f64) -> f64 {
        let l = self.lambda_bar;
        0.5 * self.gamma * l * l * l / (l * l + omega * omega)
    }

    /// `int_W^inf J(w) / (w + s) dw` for `W + s > 0`.
    fn shifted_tail(&self, w: f64, s: f64) -> f64 {
        let l = self.lambda_bar;
        let d = l * l + s * s;
        let log_part = (w + s).ln() - 0.5 * (l * l + w * w).ln();
        self.gamma * l * l * ((s / d) * log_part + (l / d) * (FRAC_PI_2 - (w / l).atan()))
    }

    /// Two-term asymptotic value of `int_W^inf J(w)/(w+s) cos(k w + phi) dw`.
    fn oscillatory_tail(&self, w: f64, s: f64, k: f64, phi: f64) -> f64 {
        let g = self.eval(w) / (w + s);
        let dg = self.derivative(w) / (w + s) - self.eval(w) / ((w + s) * (w + s));
        let arg = k * w + phi;
        -g * arg.sin() / k - dg * arg.cos() / (k * k)
    }
}

/// `J(w)` for `w >= 0`.
pub fn spectral_density_at(j: &OhmicSpectralDensity, omega_bar: f64) -> Result<f64> {
    if !(omega_bar >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "frequency must be >= 0, got {omega_bar}"
        )));
    }
    Ok(j.eval(omega_bar))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientMode {
    Asymptotic,
    Transient { tau: f64 },
}

/// The four coefficients on one Fock level.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LevelCoefficients {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
}

impl LevelCoefficients {
    fn from_array(v: [f64; 4]) -> Self {
        LevelCoefficients {
            a1: v[0],
            a2: v[1],
            b1: v[2],
            b2: v[3],
        }
    }

    fn to_array(self) -> [f64; 4] {
        [self.a1, self.a2, self.b1, self.b2]
    }
}

/// Per-level coefficients, evaluated at `Omega_n = 1 + mu (1 + 2n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathCoefficients {
    pub mode: CoefficientMode,
    pub levels: Vec<LevelCoefficients>,
    /// Largest quadrature error estimate over all levels and components.
    pub error_bound: f64,
}

impl BathCoefficients {
    pub fn zeros(n_max: usize, mode: CoefficientMode) -> Self {
        BathCoefficients {
            mode,
            levels: vec![LevelCoefficients::default(); n_max],
            error_bound: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

fn tolerance_for(j: &OhmicSpectralDensity, omega: f64) -> Tolerance {
    Tolerance {
        abs: 1e-11 * j.gamma * (omega + 1.0),
        rel: 1e-7,
        max_intervals: 20_000,
    }
}

/// Asymptotic `A1` and `B2` at a single frequency by principal-value
/// quadrature. `A1` has a closed form; this is its independent check.
pub fn principal_value_asymptotes(j: &OhmicSpectralDensity, beta: f64, omega: f64) -> Result<[f64; 2]> {
    if j.gamma == 0.0 {
        return Ok([0.0, 0.0]);
    }
    let w_max = (50.0 * j.lambda_bar).max(40.0 / beta).max(50.0 * omega);
    // f(w) = q(w) / (w - Omega) with the pole removed by folding.
    let q = |w: f64| -> [f64; 2] {
        let jw = j.eval(w);
        let hw = j.noise(w, beta);
        [jw * (2.0 * w) / (w + omega), -hw * 2.0 * omega / (w + omega)]
    };
    let regular = |w: f64| -> [f64; 2] {
        let v = q(w);
        [v[0] / (w - omega), v[1] / (w - omega)]
    };
    let delta = 0.5 * omega;
    let tol = tolerance_for(j, omega);
    let folded = integrate(
        |u: f64| {
            let (p, m) = (q(omega + u), q(omega - u));
            if u == 0.0 {
                return [0.0, 0.0];
            }
            [(p[0] - m[0]) / u, (p[1] - m[1]) / u]
        },
        0.0,
        delta,
        &[],
        tol,
    );
    let left = integrate(regular, 0.0, omega - delta, &[], tol);
    let right = integrate(regular, omega + delta, w_max, &[2.0 * omega, j.lambda_bar], tol);
    for r in [&folded.converged, &left.converged, &right.converged] {
        if !*r {
            return Err(Error::Quadrature {
                value: folded.value[1] + left.value[1] + right.value[1],
                error: folded.error[1] + left.error[1] + right.error[1],
                evaluations: folded.evaluations + left.evaluations + right.evaluations,
            });
        }
    }
    let tail_plus = j.shifted_tail(w_max, omega);
    let tail_minus = j.shifted_tail(w_max, -omega);
    let a1 = folded.value[0] + left.value[0] + right.value[0] + tail_plus + tail_minus;
    let b2 = folded.value[1] + left.value[1] + right.value[1] + tail_plus - tail_minus;
    Ok([a1 / (2.0 * PI), b2 / (2.0 * PI)])
}

/// All four asymptotic coefficients at one frequency.
pub fn asymptotic_at(j: &OhmicSpectralDensity, beta: f64, omega: f64) -> Result<LevelCoefficients> {
    if j.gamma == 0.0 {
        return Ok(LevelCoefficients::default());
    }
    let [_, b2] = principal_value_asymptotes(j, beta, omega)?;
    Ok(LevelCoefficients {
        a1: j.renormalization_asymptote(omega),
        a2: 0.5 * j.eval(omega),
        b1: j.noise_asymptote(omega, beta),
        b2,
    })
}

/// All four coefficients at time `tau` and one frequency, with error estimates.
pub fn transient_at(
    j: &OhmicSpectralDensity,
    beta: f64,
    omega: f64,
    tau: f64,
) -> Result<(LevelCoefficients, [f64; 4])> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be >= 0, got {tau}")));
    }
    if j.gamma == 0.0 || tau == 0.0 {
        return Ok((LevelCoefficients::default(), [0.0; 4]));
    }
    let w_max = (5.0 * j.lambda_bar)
        .max(40.0 / beta)
        .max(5.0 * omega)
        .max(200.0 / tau);
    let integrand = |w: f64| -> [f64; 4] {
        let jw = j.eval(w);
        let hw = j.noise(w, beta);
        let up = w + omega;
        let dn = w - omega;
        // (1 - cos(u tau)) / u and sin(u tau) / u, regular at u = 0
        let c_up = tau * (0.5 * up * tau).sin() * sinc(0.5 * up * tau);
        let c_dn = tau * (0.5 * dn * tau).sin() * sinc(0.5 * dn * tau);
        let s_up = tau * sinc(up * tau);
        let s_dn = tau * sinc(dn * tau);
        [
            jw * (c_up + c_dn),
            jw * (s_dn - s_up),
            hw * (s_dn + s_up),
            hw * (c_up - c_dn),
        ]
    };
    let period = 4.0 * PI / tau;
    let n_panels = ((w_max / period).ceil() as usize).clamp(1, 20_000);
    let mut breaks: Vec<f64> = (1..n_panels).map(|k| k as f64 * w_max / n_panels as f64).collect();
    breaks.push(omega);
    let tol = tolerance_for(j, omega);
    let r = integrate(integrand, 0.0, w_max, &breaks, tol);
    if !r.converged {
        let worst = (0..4).fold(0, |m, d| if r.error[d] > r.error[m] { d } else { m });
        return Err(Error::Quadrature {
            value: r.value[worst] / (2.0 * PI),
            error: r.error[worst] / (2.0 * PI),
            evaluations: r.evaluations,
        });
    }
    let ph = omega * tau;
    let t_up = j.shifted_tail(w_max, omega);
    let t_dn = j.shifted_tail(w_max, -omega);
    let o = |s: f64, phi: f64| j.oscillatory_tail(w_max, s, tau, phi);
    let tails = [
        t_up + t_dn - o(omega, ph) - o(-omega, -ph),
        o(-omega, -ph - FRAC_PI_2) - o(omega, ph - FRAC_PI_2),
        o(-omega, -ph - FRAC_PI_2) + o(omega, ph - FRAC_PI_2),
        t_up - t_dn - o(omega, ph) + o(-omega, -ph),
    ];
    let value: [f64; 4] = std::array::from_fn(|d| (r.value[d] + tails[d]) / (2.0 * PI));
    let error: [f64; 4] = std::array::from_fn(|d| r.error[d] / (2.0 * PI));
    Ok((LevelCoefficients::from_array(value), error))
}

/// Asymptotic coefficients for levels `0..n_max`.
pub fn asymptotic_coefficients(p: &SystemParams, n_max: usize) -> Result<BathCoefficients> {
    asymptotic_coefficients_with(p, n_max, Execution::default())
}

pub fn asymptotic_coefficients_with(p: &SystemParams, n_max: usize, exec: Execution) -> Result<BathCoefficients> {
    let j = p.spectral_density();
    let levels = exec
        .map_range(n_max, |n| asymptotic_at(&j, p.beta_bar, p.level_frequency(n as f64)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(BathCoefficients {
        mode: CoefficientMode::Asymptotic,
        levels,
        error_bound: 0.0,
    })
}

/// Coefficients at time `tau` for levels `0..n_max`.
pub fn transient_coefficients(p: &SystemParams, n_max: usize, tau: f64) -> Result<BathCoefficients> {
    transient_coefficients_with(p, n_max, tau, Execution::default())
}

pub fn transient_coefficients_with(
    p: &SystemParams,
    n_max: usize,
    tau: f64,
    exec: Execution,
) -> Result<BathCoefficients> {
    let j = p.spectral_density();
    let rows = exec
        .map_range(n_max, |n| transient_at(&j, p.beta_bar, p.level_frequency(n as f64), tau))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let error_bound = rows
        .iter()
        .flat_map(|(_, e)| e.iter().copied())
        .fold(0.0, f64::max);
    Ok(BathCoefficients {
        mode: CoefficientMode::Transient { tau },
        levels: rows.into_iter().map(|(c, _)| c).collect(),
        error_bound,
    })
}

/// `omega_eff = sqrt(Omega^2 - gamma Lambda^3 / (Lambda^2 + Omega^2))`.
pub fn effective_frequency(p: &SystemParams) -> Result<f64> {
    let omega = p.omega_bar();
    let l = p.lambda_bar;
    let radicand = omega * omega - p.gamma * l * l * l / (l * l + omega * omega);
    if radicand <= 0.0 {
        return Err(Error::OverDamped { radicand });
    }
    Ok(radicand.sqrt())
}

/// Time after which transient coefficients are replaced by their asymptotes.
pub fn settling_time(p: &SystemParams) -> f64 {
    40.0 / p.lambda_bar.min(2.0 * PI / p.beta_bar)
}

/// Transient coefficients tabulated on a time grid for use during integration.
///
/// The grid is fine on `[0, 40/Lambda]` and coarser up to
/// [`settling_time`]; values are cubic-interpolated in between and equal the
/// asymptotes afterwards.
#[derive(Debug, Clone)]
pub struct TransientTable {
    grid: Vec<f64>,
    /// `values[n][k]` at level `n`, grid point `k`.
    values: Vec<Vec<[f64; 4]>>,
    asymptote: BathCoefficients,
    pub error_bound: f64,
}

impl TransientTable {
    pub fn build(p: &SystemParams, n_max: usize, exec: Execution) -> Result<Self> {
        let fine_end = 40.0 / p.lambda_bar;
        let settle = settling_time(p);
        let mut grid: Vec<f64> = (0..=64).map(|k| fine_end.min(settle) * k as f64 / 64.0).collect();
        if settle > fine_end {
            let coarse = ((settle - fine_end) / (fine_end / 8.0)).ceil().clamp(8.0, 256.0) as usize;
            grid.extend((1..=coarse).map(|k| fine_end + (settle - fine_end) * k as f64 / coarse as f64));
        }
        let j = p.spectral_density();
        let rows = exec
            .map_range(n_max, |n| -> Result<(Vec<[f64; 4]>, f64)> {
                let omega = p.level_frequency(n as f64);
                let mut out = Vec::with_capacity(grid.len());
                let mut err: f64 = 0.0;
                for &t in &grid {
                    let (c, e) = transient_at(&j, p.beta_bar, omega, t)?;
                    err = e.iter().copied().fold(err, f64::max);
                    out.push(c.to_array());
                }
                Ok((out, err))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let error_bound = rows.iter().map(|r| r.1).fold(0.0, f64::max);
        Ok(TransientTable {
            grid,
            values: rows.into_iter().map(|r| r.0).collect(),
            asymptote: asymptotic_coefficients_with(p, n_max, exec)?,
            error_bound,
        })
    }

    pub fn settling_time(&self) -> f64 {
        *self.grid.last().unwrap_or(&0.0)
    }

    pub fn asymptote(&self) -> &BathCoefficients {
        &self.asymptote
    }

    /// Writes the coefficients at `tau` into `out`.
    pub fn fill(&self, tau: f64, out: &mut BathCoefficients) {
        out.levels.resize(self.values.len(), LevelCoefficients::default());
        if tau >= self.settling_time() {
            out.levels.copy_from_slice(&self.asymptote.levels);
            out.mode = CoefficientMode::Asymptotic;
            return;
        }
        out.mode = CoefficientMode::Transient { tau };
        let g = &self.grid;
        let k = g.partition_point(|&x| x <= tau).clamp(1, g.len() - 1) - 1;
        let lo = k.saturating_sub(1).min(g.len().saturating_sub(4));
        let idx: Vec<usize> = (lo..(lo + 4).min(g.len())).collect();
        let weights: Vec<f64> = idx
            .iter()
            .map(|&i| {
                idx.iter()
                    .filter(|&&m| m != i)
                    .map(|&m| (tau - g[m]) / (g[i] - g[m]))
                    .product()
            })
            .collect();
        for (n, level) in out.levels.iter_mut().enumerate() {
            let mut acc = [0.0; 4];
            for (w, &i) in weights.iter().zip(&idx) {
                for d in 0..4 {
                    acc[d] += w * self.values[n][i][d];
                }
            }
            *level = LevelCoefficients::from_array(acc);
        }
    }

    pub fn at(&self, tau: f64) -> BathCoefficients {
        let mut out = BathCoefficients::zeros(self.values.len(), CoefficientMode::Asymptotic);
        self.fill(tau, &mut out);
        out
    }
}
