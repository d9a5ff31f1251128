//! Adaptive Gauss-Kronrod (7-15) quadrature for vector-valued integrands.
//!
//! Subdivision is a deterministic bisection of the worst interval, so a given
//! integrand and tolerance always produce bitwise-identical results.

/// Kronrod abscissae on [-1, 1] (non-negative half, descending).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

/// Gauss weights for the odd-indexed Kronrod nodes and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Stopping rule: every component must satisfy
/// `error <= max(abs, rel * |value|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            abs: 1e-14,
            rel: 1e-6,
            max_intervals: 4000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult<const D: usize> {
    pub value: [f64; D],
    pub error: [f64; D],
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy)]
struct Panel<const D: usize> {
    a: f64,
    b: f64,
    value: [f64; D],
    error: [f64; D],
}

fn gk15<const D: usize, F: Fn(f64) -> [f64; D]>(f: &F, a: f64, b: f64) -> Panel<D> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron = [0.0; D];
    let mut gauss = [0.0; D];
    let fc = f(c);
    for d in 0..D {
        kron[d] = WGK[7] * fc[d];
        gauss[d] = WG[3] * fc[d];
    }
    for (j, &x) in XGK[..7].iter().enumerate() {
        let lo = f(c - h * x);
        let hi = f(c + h * x);
        for d in 0..D {
            let s = lo[d] + hi[d];
            kron[d] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[d] += WG[j / 2] * s;
            }
        }
    }
    let mut value = [0.0; D];
    let mut error = [0.0; D];
    for d in 0..D {
        value[d] = kron[d] * h;
        error[d] = ((kron[d] - gauss[d]) * h).abs();
    }
    Panel { a, b, value, error }
}

/// Integrates `f` over `[a, b]`, starting from panels split at `breaks`
/// (points outside `(a, b)` are ignored).
pub fn integrate<const D: usize, F>(f: F, a: f64, b: f64, breaks: &[f64], tol: Tolerance) -> QuadResult<D>
where
    F: Fn(f64) -> [f64; D],
{
    let mut edges: Vec<f64> = std::iter::once(a)
        .chain(breaks.iter().copied().filter(|&x| x > a && x < b))
        .chain(std::iter::once(b))
        .collect();
    edges.sort_by(f64::total_cmp);
    edges.dedup();

    let mut panels: Vec<Panel<D>> = edges.windows(2).map(|w| gk15(&f, w[0], w[1])).collect();
    let mut evaluations = 15 * panels.len();

    loop {
        let mut value = [0.0; D];
        let mut error = [0.0; D];
        for p in &panels {
            for d in 0..D {
                value[d] += p.value[d];
                error[d] += p.error[d];
            }
        }
        let target: [f64; D] = std::array::from_fn(|d| tol.abs.max(tol.rel * value[d].abs()));
        let converged = (0..D).all(|d| error[d] <= target[d]);
        if converged || panels.len() >= tol.max_intervals {
            return QuadResult {
                value,
                error,
                evaluations,
                converged,
            };
        }
        let badness = |p: &Panel<D>| (0..D).map(|d| p.error[d] / target[d]).fold(0.0, f64::max);
        let (worst, _) = panels
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, p)| {
                let s = badness(p);
                if s > best.1 {
                    (i, s)
                } else {
                    best
                }
            });
        let p = panels[worst];
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            return QuadResult {
                value,
                error,
                evaluations,
                converged: false,
            };
        }
        panels[worst] = gk15(&f, p.a, mid);
        panels.insert(worst + 1, gk15(&f, mid, p.b));
        evaluations += 30;
    }
}

/// Scalar convenience wrapper around [`integrate`].
pub fn integrate_scalar<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> QuadResult<1> {
    integrate(|x| [f(x)], a, b, &[], tol)
}

/// Fixed composite Gauss-Legendre rule (7 nodes per panel) over `[a, b]`.
pub fn gauss_legendre_composite<F, T>(f: F, a: f64, b: f64, panels: usize) -> T
where
    F: Fn(f64) -> T,
    T: std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T> + Default,
{
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let mut acc = T::default();
    for k in 0..panels {
        let c = a + (k as f64 + 0.5) * h;
        let half = 0.5 * h;
        acc = acc + f(c) * (WG[3] * half);
        for (j, &x) in [XGK[1], XGK[3], XGK[5]].iter().enumerate() {
            acc = acc + f(c - half * x) * (WG[j] * half) + f(c + half * x) * (WG[j] * half);
        }
    }
    acc
}
