//! Numerical study of rotationally equivariant harmonic self-maps of
//! k-dimensional ellipsoids.
//!
//! An equivariant self-map of the ellipsoid E_a is described by a profile
//! angle f(psi) joining the poles. After the chart change x = log tan(psi/2)
//! the offset h = f - pi/2 satisfies a second-order equation on the whole
//! line whose pole-to-pole connecting orbits are the harmonic self-maps.
//! The crate locates those orbits by shooting, graded by a rotation number,
//! and analyzes the linearized problem:
//!
//! * [`model`]: every closed-form ingredient (both chart equations, the
//!   Lyapunov function and its rate, the phase-angle rate, energy densities,
//!   the coordinate transform, the identity profile),
//! * [`integrate`]: adaptive embedded Runge-Kutta 5(4) with dense output
//!   and event localization,
//! * [`shooting`]: orbit classification, rotation numbers, bracketing and
//!   bisection to connecting orbits, profile reconstruction, energies,
//! * [`spectral`]: oscillation threshold of the linearization at h = 0 and
//!   the lowest eigenvalue of the Jacobi operator about the identity map.

// Validation sites negate comparisons on purpose: !(v > 0.0) rejects NaN,
// v <= 0.0 lets it through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod integrate;
pub mod model;
pub mod shooting;
pub mod spectral;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
