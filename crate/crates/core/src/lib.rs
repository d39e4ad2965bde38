//! Priors over affine model-discrepancy operators for PDE-constrained
//! optimization.
//!
//! A low-fidelity model `S̃` is corrected by `δ(z, θ) = θ₀ + L(θ) M_z z`.
//! The crate builds Gaussian priors on `θ`, initializes their
//! hyper-parameters from a few high-fidelity solves, calibrates against
//! data and pushes posterior samples through the post-optimality update
//! `z̃ − H⁻¹Bθ`. The [`studio`] module curates prior samples for
//! interactive review.

pub mod calibration;
pub mod discrepancy;
pub mod error;
pub mod fem;
pub mod hyper_init;
pub mod linalg;
pub mod prior;
pub mod rng;
pub mod scenario;
pub mod studio;

pub use error::{Error, Result};
