//! Online ICA at finite dimension n and its high-dimensional scaling limit.
//!
//! The crate has three layers that check each other:
//!
//! * [`model`] + [`simulate`] — the finite-n data model and the online
//!   learning iteration, plus Monte-Carlo oracles for its conditional
//!   increment moments.
//! * [`coeffs`] + [`ode`] + [`pde`] — the limit theory: coefficient
//!   functions Lambda, G, Gamma; the closed order-parameter ODE; and the
//!   coupled nonlinear Fokker-Planck equation solved by an explicit
//!   finite-volume scheme.
//! * [`metrics`] — separable performance functionals, conditional-density
//!   distances, and support-recovery ROC curves used to cross-validate
//!   simulation against theory.

pub mod coeffs;
pub mod error;
pub mod metrics;
pub mod model;
pub mod ode;
pub mod pde;
pub mod quad;
pub mod simulate;

pub use error::{Error, Result};
