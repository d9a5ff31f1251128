//! Quantum nonlinear (Kerr) oscillator coupled to an Ohmic thermal bath.
//!
//! The crate integrates the Born-Markov master equation and its rotating-wave
//! Lindblad reduction in a truncated Fock basis, evaluates the analytic
//! solutions of the closed and RWA problems, and extracts Ehrenfest,
//! decoherence and relaxation times from simulated observables.
//!
//! ```
//! use qno_core::model::{derive_timescales, SystemParams};
//!
//! let p = SystemParams::new(0.1, 50.0, 0.0, 1.0, 1e-4).unwrap();
//! let t = derive_timescales(&p);
//! assert!((t.tau_e - 0.7071).abs() < 1e-4);
//! ```

pub mod analysis;
pub mod closedform;
pub mod error;
pub mod evolve;
pub mod exec;
pub mod fock;
pub mod kernels;
pub mod model;
pub mod quadrature;
pub mod sweep;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::SystemParams;
