//! Error types shared across the crate.

/// Errors reported by lattice construction, coefficient extraction, and the
/// wave solver.
///
/// Programming mistakes (mismatched grids, non-real transform output) panic
/// instead; everything here describes a data, configuration, or convergence
/// problem the caller can act on.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration: unknown lattice name, bad grid size, malformed
    /// bond data.
    #[error("configuration error: {0}")]
    Config(String),

    /// Evaluation outside the model's domain, e.g. a spring compressed to
    /// zero length or wave amplitudes too large for the potential.
    #[error("domain error: {0}")]
    Domain(String),

    /// One of the genericity assumptions fails for the requested direction,
    /// so no KdV wave exists there.
    #[error("{assumption} violated: {detail}")]
    Genericity {
        assumption: &'static str,
        detail: String,
    },

    /// An internal cross-check (analytic vs. finite-difference coefficients,
    /// symbol identities) disagreed beyond tolerance.
    #[error("internal consistency check failed: {0}")]
    InternalCheck(String),

    /// The linear solve against the singularly perturbed operator stalled or
    /// lost its determinant lower bound.
    #[error(
        "linear solve failed: {detail} (best residual {residual:.3e} after {iterations} iterations)"
    )]
    LinearSolve {
        residual: f64,
        iterations: usize,
        detail: String,
    },

    /// The fixed-point iteration did not reach tolerance within the allowed
    /// number of steps. `history` holds the update norms per iteration.
    #[error("fixed point did not converge: last update {last_delta:.3e} after {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        last_delta: f64,
        history: Vec<f64>,
    },

    /// An iterate left the trust ball; usually means the scaling parameter is
    /// too large for the contraction regime.
    #[error("iterate escaped the ball: |V| = {norm:.3e} exceeds guard {bound:.3e} (try a smaller epsilon)")]
    BallEscape { norm: f64, bound: f64 },

    /// The time integrator's step is too coarse for the requested accuracy.
    #[error("integrator step problem: {0}")]
    IntegratorStep(String),
}

pub type Result<T> = std::result::Result<T, Error>;
