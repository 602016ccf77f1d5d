//! Construction and verification of KdV-like solitary traveling waves in
//! two-dimensional FPU lattices.
//!
//! The pipeline: [`lattice`] turns a geometry (built-in square / diamond /
//! triangle or a custom bond list) into Taylor data of the effective bond
//! forces; [`kdv`] computes the macroscopic constants of the long-wave limit
//! and the explicit sech^2 profile; [`operators`] assembles the singularly
//! perturbed operator stack on a periodic spectral grid; [`solver`] runs the
//! contraction iteration for the corrector and produces wave profiles at
//! speed `sqrt(sigma0 + eps^2)`; [`verify`] checks the frequency-domain
//! invertibility condition, evaluates traveling-wave residuals, runs the
//! eps^2 convergence-rate study, and cross-validates waves against direct
//! lattice dynamics.

pub mod error;
pub mod kdv;
pub mod lattice;
pub mod operators;
pub mod solver;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
