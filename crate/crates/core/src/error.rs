use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Fock space too small: dimension {have} but the state needs at least {need} levels")]
    Truncation { have: usize, need: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("over-damped: effective frequency squared is {radicand:.6e} (must be positive)")]
    OverDamped { radicand: f64 },

    #[error("quadrature did not converge: estimate {value:.6e}, error {error:.3e} after {evaluations} evaluations")]
    Quadrature {
        value: f64,
        error: f64,
        evaluations: usize,
    },

    #[error("integration unstable at tau = {tau:.6}: {reason}; retry with a smaller step (current {dt:.3e})")]
    Unstable { tau: f64, dt: f64, reason: String },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("no peaks found above the noise floor")]
    NoPeaks,

    #[error("recurrence bumps unresolved ({0}); use the cat-overlap or frame-coherence estimate instead")]
    BumpsUnresolved(String),
}

pub type Result<T> = std::result::Result<T, Error>;
