//! Crate-wide error type.

use thiserror::Error;

/// Everything that can go wrong across the model, integrator, shooting
/// and spectral layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Parameter or argument rejected before any numerics ran.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A state or derivative stopped being finite during integration.
    #[error("non-finite state at x = {x}")]
    NonFiniteState { x: f64 },

    /// The adaptive step collapsed below the representable resolution.
    #[error("step size underflow at x = {x} (last step {step:.3e})")]
    StepSizeUnderflow { x: f64, step: f64 },

    /// Step budget exhausted before reaching the right end.
    #[error("exceeded {max_steps} steps at x = {x}")]
    MaxStepsExceeded { x: f64, max_steps: usize },

    /// Event refinement asked to bracket a function with no sign change.
    #[error("no sign change over [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },

    /// Connecting orbits were requested outside the oscillatory regime.
    #[error(
        "no connecting orbits: a^2 = {a_sq} is not below the threshold {num}/{den}; \
         the linearization at h = 0 stops oscillating there"
    )]
    RegimeViolation { a_sq: f64, num: u64, den: u64 },

    /// The downward scan of initial slopes hit its floor first.
    #[error("bracket search exhausted below b = {b_floor:e}: found {found} of {requested} transitions")]
    SearchExhausted { b_floor: f64, found: usize, requested: usize },

    /// Bisection could not classify an orbit even after enlarging the horizon.
    #[error("orbit at b = {b} is still unclassified at x_max = {x_max}; increase the horizon")]
    Inconclusive { b: f64, x_max: f64 },

    /// Eigenvalue bisection failed to close its bracket.
    #[error("eigenvalue bisection stalled on [{lo}, {hi}]")]
    EigenNoConvergence { lo: f64, hi: f64 },
}
