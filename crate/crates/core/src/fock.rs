//! Truncated Fock space: states, ladder operators and coherent-state overlaps.

use nalgebra::DMatrix;
use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Levels `0..dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FockSpace {
    dim: usize,
}

impl FockSpace {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidParameter(format!(
                "Fock space needs at least 2 levels, got {dim}"
            )));
        }
        Ok(FockSpace { dim })
    }

    /// Smallest space satisfying the truncation rule for mean occupation `intensity`.
    pub fn for_intensity(intensity: f64) -> Result<Self> {
        FockSpace::new(required_dim(intensity))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check(&self, intensity: f64) -> Result<()> {
        let need = required_dim(intensity);
        if self.dim < need {
            return Err(Error::Truncation {
                have: self.dim,
                need,
            });
        }
        Ok(())
    }
}

/// Truncation rule: keep the Poisson distribution of mean `intensity` out to
/// eight standard deviations, plus a small margin. Never fewer than
/// `MIN_DIM` levels, where eight sigma is too thin a tail.
pub fn required_dim(intensity: f64) -> usize {
    let i = intensity.max(0.0);
    ((i + 8.0 * i.sqrt()).floor() as usize + 3).max(MIN_DIM)
}

pub const MIN_DIM: usize = 24;

/// Energies `E_n = n + mu n^2`.
pub fn energies(dim: usize, mu_bar: f64) -> Vec<f64> {
    (0..dim)
        .map(|n| {
            let n = n as f64;
            n + mu_bar * n * n
        })
        .collect()
}

/// Coherent-state amplitudes `exp(-|a|^2/2) a^n / sqrt(n!)` for `n < dim`,
/// evaluated in log space.
pub fn coherent_amplitudes(alpha: C64, dim: usize) -> Vec<C64> {
    let r = alpha.norm();
    let phi = alpha.arg();
    let mut out = Vec::with_capacity(dim);
    let mut log_fact = 0.0;
    for n in 0..dim {
        if n > 0 {
            log_fact += (n as f64).ln();
        }
        if r == 0.0 {
            out.push(if n == 0 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
            continue;
        }
        let log_mag = -0.5 * r * r + n as f64 * r.ln() - 0.5 * log_fact;
        out.push(C64::from_polar(log_mag.exp(), n as f64 * phi));
    }
    out
}

/// `<alpha|beta> = exp(-|a|^2/2 - |b|^2/2 + conj(a) b)`.
pub fn coherent_inner(alpha: C64, beta: C64) -> C64 {
    (-0.5 * alpha.norm_sqr() - 0.5 * beta.norm_sqr() + alpha.conj() * beta).exp()
}

/// A Hermitian, unit-trace matrix on a truncated Fock space.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub data: Array2<C64>,
}

impl DensityMatrix {
    pub fn from_array(data: Array2<C64>) -> Result<Self> {
        let (r, c) = data.dim();
        if r != c {
            return Err(Error::Dimension {
                expected: r,
                found: c,
            });
        }
        Ok(DensityMatrix { data })
    }

    /// `|psi><psi|`, not normalized.
    pub fn outer(psi: &[C64], phi: &[C64]) -> Self {
        let n = psi.len();
        DensityMatrix {
            data: Array2::from_shape_fn((n, n), |(i, j)| psi[i] * phi[j].conj()),
        }
    }

    pub fn fock(dim: usize, level: usize) -> Self {
        let mut data = Array2::zeros((dim, dim));
        data[(level, level)] = C64::new(1.0, 0.0);
        DensityMatrix { data }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn trace(&self) -> C64 {
        self.data.diag().iter().sum()
    }

    /// `max |rho - rho^dagger|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.data[(i, j)] - self.data[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// `tr(rho^2)`.
    pub fn purity(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Population of the top `k` levels.
    pub fn top_population(&self, k: usize) -> f64 {
        let n = self.dim();
        (n.saturating_sub(k)..n).map(|i| self.data[(i, i)].re).sum()
    }

    pub fn normalize(&mut self) {
        let t = self.trace().re;
        if t != 0.0 {
            self.data.mapv_inplace(|z| z / t);
        }
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let n = self.dim();
        let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (self.data[(i, j)] + self.data[(j, i)].conj()));
        m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `<n>`, `<a>` and `<n + mu n^2>` in one pass.
    pub fn moments(&self, mu_bar: f64) -> (f64, C64, f64) {
        let n = self.dim();
        let mut occ = 0.0;
        let mut energy = 0.0;
        let mut a = C64::new(0.0, 0.0);
        for k in 0..n {
            let p = self.data[(k, k)].re;
            let kf = k as f64;
            occ += kf * p;
            energy += (kf + mu_bar * kf * kf) * p;
            if k > 0 {
                a += self.data[(k, k - 1)] * kf.sqrt();
            }
        }
        (occ, a, energy)
    }
}

/// Pure coherent state `|alpha><alpha|`, trace renormalized after truncation.
pub fn coherent_state_density(alpha: C64, space: FockSpace) -> Result<DensityMatrix> {
    space.check(alpha.norm_sqr())?;
    let c = coherent_amplitudes(alpha, space.dim());
    let mut rho = DensityMatrix::outer(&c, &c);
    rho.normalize();
    Ok(rho)
}

/// Amplitudes of a cat pair on a common ray: `alpha = x e^{i theta}`,
/// `beta = (x + dx) e^{i theta}`.
pub fn cat_amplitudes(x: f64, dx: f64, theta: f64) -> (C64, C64) {
    (C64::from_polar(x, theta), C64::from_polar(x + dx, theta))
}

/// `N (|alpha> + |beta>)(<alpha| + <beta|)` with `N = 1/(2 + 2 Re<alpha|beta>)`.
pub fn cat_state_density(alpha: C64, beta: C64, space: FockSpace) -> Result<DensityMatrix> {
    space.check(alpha.norm_sqr().max(beta.norm_sqr()))?;
    let ca = coherent_amplitudes(alpha, space.dim());
    let cb = coherent_amplitudes(beta, space.dim());
    let psi: Vec<C64> = ca.iter().zip(&cb).map(|(a, b)| a + b).collect();
    let norm = 1.0 / (2.0 + 2.0 * coherent_inner(alpha, beta).re);
    let mut rho = DensityMatrix::outer(&psi, &psi);
    rho.data.mapv_inplace(|z| z * norm);
    rho.normalize();
    Ok(rho)
}

/// `<alpha| rho |beta>`.
pub fn coherent_overlap(rho: &DensityMatrix, alpha: C64, beta: C64) -> C64 {
    let n = rho.dim();
    let ca = coherent_amplitudes(alpha, n);
    let cb = coherent_amplitudes(beta, n);
    contract(rho, &ca, &cb, None)
}

/// `<alpha| rho_I |beta>` in the frame rotating with `H = n + mu n^2`,
/// i.e. with `rho_nm` multiplied by `exp(i (E_n - E_m) tau)`.
pub fn frame_overlap(rho: &DensityMatrix, alpha: C64, beta: C64, mu_bar: f64, tau: f64) -> C64 {
    let n = rho.dim();
    let ca = coherent_amplitudes(alpha, n);
    let cb = coherent_amplitudes(beta, n);
    let e = energies(n, mu_bar);
    contract(rho, &ca, &cb, Some((&e, tau)))
}

/// `sum conj(u_n) rho_nm w_m` with optional frame phases.
pub(crate) fn contract(rho: &DensityMatrix, u: &[C64], w: &[C64], frame: Option<(&[f64], f64)>) -> C64 {
    let n = rho.dim();
    let phase: Vec<C64> = match frame {
        Some((e, tau)) => e.iter().map(|&en| C64::from_polar(1.0, en * tau)).collect(),
        None => vec![C64::new(1.0, 0.0); n],
    };
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        let left = u[i].conj() * phase[i];
        let mut row = C64::new(0.0, 0.0);
        for j in 0..n {
            row += rho.data[(i, j)] * w[j] * phase[j].conj();
        }
        acc += left * row;
    }
    acc
}

/// `<a>` in the frame rotating with `H = n + mu n^2`.
pub fn frame_mean_a(rho: &DensityMatrix, energies: &[f64], tau: f64) -> C64 {
    (1..rho.dim())
        .map(|k| {
            let ph = C64::from_polar(1.0, (energies[k] - energies[k - 1]) * tau);
            rho.data[(k, k - 1)] * (k as f64).sqrt() * ph
        })
        .sum()
}

/// Dense matrices of the basic operators.
#[derive(Debug, Clone)]
pub struct LadderOperators {
    pub a: Array2<C64>,
    pub adag: Array2<C64>,
    pub n: Array2<C64>,
    pub x: Array2<C64>,
    pub omega: Array2<C64>,
}

impl LadderOperators {
    pub fn new(space: FockSpace, mu_bar: f64) -> Self {
        let d = space.dim();
        let a = Array2::from_shape_fn((d, d), |(i, j)| {
            if j == i + 1 {
                C64::new((j as f64).sqrt(), 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let adag = a.t().mapv(|z| z.conj());
        let n = adag.dot(&a);
        let x = (&a + &adag).mapv(|z| z / std::f64::consts::SQRT_2);
        let omega = Array2::from_shape_fn((d, d), |(i, j)| {
            if i == j {
                C64::new(1.0 + mu_bar * (1.0 + 2.0 * i as f64), 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        LadderOperators {
            a,
            adag,
            n,
            x,
            omega,
        }
    }
}

/// Operator chosen for [`expectation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    Identity,
    A,
    ADag,
    N,
    X,
    Omega,
}

/// `tr(rho op)`.
pub fn expectation(rho: &DensityMatrix, ops: &LadderOperators, which: Observable) -> Result<C64> {
    let op = match which {
        Observable::Identity => return Ok(rho.trace()),
        Observable::A => &ops.a,
        Observable::ADag => &ops.adag,
        Observable::N => &ops.n,
        Observable::X => &ops.x,
        Observable::Omega => &ops.omega,
    };
    if op.nrows() != rho.dim() {
        return Err(Error::Dimension {
            expected: op.nrows(),
            found: rho.dim(),
        });
    }
    let n = rho.dim();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += rho.data[(i, j)] * op[(j, i)];
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn truncation_rule() {
        assert_eq!(required_dim(50.0), 109);
        assert_eq!(required_dim(100.0), 183);
        let small = FockSpace::new(40).unwrap();
        match coherent_state_density(c(50f64.sqrt(), 0.0), small) {
            Err(Error::Truncation { have: 40, need: 109 }) => {}
            other => panic!("{other:?}"),
        }
        assert!(FockSpace::new(1).is_err());
    }

    #[test]
    fn coherent_state_moments() {
        let alpha = C64::from_polar(50f64.sqrt(), 0.3);
        let space = FockSpace::for_intensity(50.0).unwrap();
        let rho = coherent_state_density(alpha, space).unwrap();
        let ops = LadderOperators::new(space, 0.1);
        assert!((rho.trace() - 1.0).norm() < 1e-12);
        let n = expectation(&rho, &ops, Observable::N).unwrap();
        assert_relative_eq!(n.re, 50.0, max_relative = 1e-9);
        let a = expectation(&rho, &ops, Observable::A).unwrap();
        assert!((a - alpha).norm() < 1e-9);
        assert_relative_eq!(rho.purity(), 1.0, max_relative = 1e-9);
        let (occ, a2, _) = rho.moments(0.1);
        assert_relative_eq!(occ, n.re, max_relative = 1e-12);
        assert!((a2 - a).norm() < 1e-12);
    }

    #[test]
    fn initial_position() {
        let space = FockSpace::for_intensity(50.0).unwrap();
        let rho = coherent_state_density(c(50f64.sqrt(), 0.0), space).unwrap();
        let ops = LadderOperators::new(space, 0.1);
        let x = expectation(&rho, &ops, Observable::X).unwrap();
        assert_relative_eq!(x.re, 10.0, max_relative = 1e-9);
        assert!(x.im.abs() < 1e-10);
        assert_eq!(expectation(&rho, &ops, Observable::Identity).unwrap(), rho.trace());
    }

    #[test]
    fn fock_state_has_no_coherence() {
        let space = FockSpace::new(12).unwrap();
        let ops = LadderOperators::new(space, 0.0);
        let rho = DensityMatrix::fock(12, 5);
        assert_eq!(expectation(&rho, &ops, Observable::A).unwrap(), c(0.0, 0.0));
        assert_relative_eq!(expectation(&rho, &ops, Observable::N).unwrap().re, 5.0);
    }

    #[test]
    fn ladder_operators_match_elementwise_rule() {
        let space = FockSpace::new(9).unwrap();
        let ops = LadderOperators::new(space, 0.2);
        for i in 0..9 {
            for j in 0..9 {
                let a = if j == i + 1 { (j as f64).sqrt() } else { 0.0 };
                assert_eq!(ops.a[(i, j)].re, a);
                let nn = if i == j { i as f64 } else { 0.0 };
                assert!((ops.n[(i, j)].re - nn).abs() < 1e-14);
                let om = if i == j { 1.0 + 0.2 * (1.0 + 2.0 * i as f64) } else { 0.0 };
                assert!((ops.omega[(i, j)].re - om).abs() < 1e-14);
                let x = ((if j == i + 1 { (j as f64).sqrt() } else { 0.0 })
                    + (if i == j + 1 { (i as f64).sqrt() } else { 0.0 }))
                    / std::f64::consts::SQRT_2;
                assert!((ops.x[(i, j)].re - x).abs() < 1e-14);
            }
        }
        let comm = ops.a.dot(&ops.adag) - ops.adag.dot(&ops.a);
        for i in 0..8 {
            for j in 0..8 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((comm[(i, j)] - want).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn cat_state_normalization_and_overlap() {
        let (alpha, beta) = cat_amplitudes(7.0, 1.0, 0.0);
        let space = FockSpace::for_intensity(64.0).unwrap();
        let rho = cat_state_density(alpha, beta, space).unwrap();
        assert!((rho.trace() - 1.0).norm() < 1e-9);
        assert!(rho.hermiticity_defect() < 1e-15);

        // <a|rho|b> = N (<a|a> + <a|b>)(<a|b> + <b|b>)
        let s = coherent_inner(alpha, beta);
        let norm = 1.0 / (2.0 + 2.0 * s.re);
        let closed = (1.0 + s) * (s + 1.0) * norm;
        let brute = coherent_overlap(&rho, alpha, beta);
        assert!((brute - closed).norm() < 1e-9, "{brute} vs {closed}");

        let same = cat_state_density(alpha, alpha, space).unwrap();
        let coh = coherent_state_density(alpha, space).unwrap();
        let diff = (&same.data - &coh.data).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }

    #[test]
    fn overlap_of_projector() {
        let space = FockSpace::for_intensity(9.0).unwrap();
        let alpha = c(2.0, 1.0);
        let beta = c(-1.0, 2.0);
        let ca = coherent_amplitudes(alpha, space.dim());
        let cb = coherent_amplitudes(beta, space.dim());
        let rho = DensityMatrix::outer(&ca, &cb);
        assert!((coherent_overlap(&rho, alpha, beta) - 1.0).norm() < 1e-9);
        let coh = coherent_state_density(alpha, space).unwrap();
        assert!((coherent_overlap(&coh, alpha, alpha) - 1.0).norm() < 1e-9);
    }

    #[test]
    fn frame_overlap_undoes_free_phases() {
        let space = FockSpace::for_intensity(9.0).unwrap();
        let d = space.dim();
        let alpha = c(3.0, 0.0);
        let mu = 0.07;
        let tau = 2.3;
        let e = energies(d, mu);
        let mut rho = coherent_state_density(alpha, space).unwrap();
        for i in 0..d {
            for j in 0..d {
                rho.data[(i, j)] *= C64::from_polar(1.0, -(e[i] - e[j]) * tau);
            }
        }
        assert!((frame_overlap(&rho, alpha, alpha, mu, tau) - 1.0).norm() < 1e-9);
        assert!((frame_mean_a(&rho, &e, tau) - alpha).norm() < 1e-9);
    }

    #[test]
    fn min_eigenvalue_of_pure_state() {
        let space = FockSpace::for_intensity(4.0).unwrap();
        let rho = coherent_state_density(c(2.0, 0.0), space).unwrap();
        assert!(rho.min_eigenvalue().abs() < 1e-12);
        let mut bad = rho.clone();
        bad.data[(0, 0)] -= 0.5;
        assert!(bad.min_eigenvalue() < -0.1);
    }

    proptest! {
        #[test]
        fn coherent_states_are_faithful(r in 0.0f64..60f64.sqrt(), phi in -3.2f64..3.2) {
            let alpha = C64::from_polar(r, phi);
            let space = FockSpace::for_intensity(r * r).unwrap();
            let raw = coherent_amplitudes(alpha, space.dim());
            let rho = coherent_state_density(alpha, space).unwrap();
            prop_assert!((rho.trace() - 1.0).norm() < 1e-9);
            let (occ, a, _) = rho.moments(0.0);
            prop_assert!((occ - r * r).abs() <= 1e-6 * (r * r).max(1e-300) + 1e-12);
            // <a> loses exactly alpha times the top-level population
            prop_assert!((a - alpha * (1.0 - rho.top_population(1))).norm() < 1e-12 * (1.0 + r));
            // a |alpha> = alpha |alpha> up to the truncated tail
            for nlev in 0..space.dim() - 1 {
                let lhs = raw[nlev + 1] * ((nlev + 1) as f64).sqrt();
                prop_assert!((lhs - alpha * raw[nlev]).norm() < 1e-9);
            }
        }
    }
}
