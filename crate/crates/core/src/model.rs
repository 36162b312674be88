//! Closed-form ingredients of the reduced harmonic-map problem on the
//! ellipsoid.
//!
//! Conventions. E_a is the k-dimensional ellipsoid with one semi-axis scaled
//! by a; a = 1 is the round sphere. An equivariant self-map is a profile
//! f(psi) of the polar angle, with d the degree of the equatorial eigenmap
//! and lambda = d(d + k - 2) its eigenvalue. In the chart x = log tan(psi/2)
//! the offset h = f - pi/2 satisfies a second-order equation on the whole
//! line; the poles psi = 0 and pi sit at x = -inf and +inf. For d = 1 the
//! chart carries the identity map to h(x) = atan(sinh x).
//!
//! Recurring factors, written so nothing overflows for large |x|:
//!
//! * S(x) = a^2 sech^2 x + tanh^2 x   (chart factor; a^2 + sinh^2 x = S cosh^2 x)
//! * Q(h) = a^2 cos^2 h + sin^2 h     (profile factor)
//!
//! Both are squared distances from the ellipse center to its boundary at a
//! given direction, so one helper serves S, Q and the psi-chart factors.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Problem parameters with the derived eigenvalue and threshold cached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Ellipsoid dimension, k >= 3.
    pub k: u32,
    /// Semi-axis parameter, finite and nonzero (enters only as a^2).
    pub a: f64,
    /// Equatorial eigenmap degree, d >= 1.
    pub d: u32,
    /// Eigenvalue lambda = d (d + k - 2).
    pub lambda: f64,
    /// Oscillation threshold for a^2: 4 lambda / (k - 2)^2.
    pub a_crit_sq: f64,
}

impl ModelParams {
    /// Validates (k, a, d) and caches lambda and the threshold.
    pub fn new(k: u32, a: f64, d: u32) -> Result<Self> {
        if k < 3 {
            return Err(Error::InvalidInput(format!("k = {k}, need k >= 3")));
        }
        if d < 1 {
            return Err(Error::InvalidInput(format!("d = {d}, need d >= 1")));
        }
        if !a.is_finite() || a == 0.0 {
            return Err(Error::InvalidInput(format!("a = {a}, need finite nonzero a")));
        }
        let lambda = (d * (d + k - 2)) as f64;
        let km2 = (k - 2) as f64;
        Ok(Self { k, a, d, lambda, a_crit_sq: 4.0 * lambda / (km2 * km2) })
    }

    /// a^2, the only way a enters the equations.
    pub fn a_sq(&self) -> f64 {
        self.a * self.a
    }

    /// The threshold 4 lambda / (k - 2)^2 as a reduced fraction.
    pub fn a_crit_sq_rational(&self) -> (u64, u64) {
        let num = 4 * (self.d as u64) * ((self.d + self.k - 2) as u64);
        let den = ((self.k - 2) as u64).pow(2);
        let g = gcd(num, den);
        (num / g, den / g)
    }

    /// True when a^2 lies strictly below the threshold, i.e. the
    /// linearization at h = 0 oscillates and connecting orbits exist.
    pub fn is_oscillatory(&self) -> bool {
        self.a_sq() < self.a_crit_sq
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// State in the whole-line chart: position x, offset h = f - pi/2, slope h'.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub x: f64,
    pub h: f64,
    pub hp: f64,
}

/// State in the polar chart: angle psi in (0, pi), profile f, slope f'.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiState {
    pub psi: f64,
    pub f: f64,
    pub fp: f64,
}

/// sech x through exp(-|x|); stable for every finite x (no cosh overflow).
#[inline]
pub(crate) fn sech(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    2.0 * e / (1.0 + e * e)
}

/// a^2 c^2 + s^2 for a direction (c, s) on the unit circle.
#[inline]
pub(crate) fn ellipse_sq(a_sq: f64, c: f64, s: f64) -> f64 {
    a_sq * c * c + s * s
}

/// tanh x / (a^2 + sinh^2 x), formed as tanh x sech^2 x / S so that no
/// intermediate overflows; decays like e^{-2|x|} far out.
#[inline]
pub(crate) fn tanh_over_offset(a_sq: f64, x: f64) -> f64 {
    let s = sech(x);
    let t = x.tanh();
    t * s * s / ellipse_sq(a_sq, s, t)
}

fn require_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} = {v} is not finite")))
    }
}

/// Right-hand side of the whole-line equation, as (h', h'').
///
/// h'' = -(1 - a^2)/2 sin(2h)/Q h'^2
///       + (1 - a^2) tanh x / (a^2 + sinh^2 x) h'
///       + (k - 2) tanh x h'
///       - lambda/2 S/Q sin(2h).
///
/// Equilibria: h = 0 and h = +-pi/2 (with h' = 0). For d = 1 the identity
/// profile solves this for every a; see [`identity_profile`].
pub fn rhs_x(params: &ModelParams, state: PhaseState) -> Result<(f64, f64)> {
    require_finite("x", state.x)?;
    require_finite("h", state.h)?;
    require_finite("hp", state.hp)?;
    Ok(rhs_x_raw(params, state.x, state.h, state.hp))
}

#[inline]
pub(crate) fn rhs_x_raw(params: &ModelParams, x: f64, h: f64, hp: f64) -> (f64, f64) {
    let a_sq = params.a * params.a;
    let s = sech(x);
    let t = x.tanh();
    let s_chart = ellipse_sq(a_sq, s, t);
    let (sin_h, cos_h) = h.sin_cos();
    let q = ellipse_sq(a_sq, cos_h, sin_h);
    let sin_2h = 2.0 * sin_h * cos_h;
    let km2 = (params.k - 2) as f64;
    let one_m_a2 = 1.0 - a_sq;
    let hpp = -0.5 * one_m_a2 * sin_2h / q * hp * hp
        + one_m_a2 * (t * s * s / s_chart) * hp
        + km2 * t * hp
        - 0.5 * params.lambda * s_chart / q * sin_2h;
    (hp, hpp)
}

/// Right-hand side in the polar chart, as (f', f'').
///
/// f'' = lambda/2 (a^2 sin^2 psi + cos^2 psi)/(a^2 sin^2 f + cos^2 f)
///         sin(2f)/sin^2 psi
///       - (k - 1) cot(psi) f'
///       - (a^2 - 1)/2 sin(2f)/(a^2 sin^2 f + cos^2 f) f'^2
///       + (a^2 - 1)/2 sin(2 psi)/(a^2 sin^2 psi + cos^2 psi) f'.
///
/// The chart factors here equal S and Q of [`rhs_x`] under
/// sin psi = sech x, sin f = cos h.
pub fn rhs_psi(params: &ModelParams, state: PsiState) -> Result<(f64, f64)> {
    require_finite("f", state.f)?;
    require_finite("fp", state.fp)?;
    if !(state.psi > 0.0 && state.psi < PI) {
        return Err(Error::InvalidInput(format!(
            "psi = {} outside the open interval (0, pi)",
            state.psi
        )));
    }
    let a_sq = params.a * params.a;
    let (sin_psi, cos_psi) = state.psi.sin_cos();
    let (sin_f, cos_f) = state.f.sin_cos();
    let q_psi = ellipse_sq(a_sq, sin_psi, cos_psi);
    let q_f = ellipse_sq(a_sq, sin_f, cos_f);
    let sin_2f = 2.0 * sin_f * cos_f;
    let sin_2psi = 2.0 * sin_psi * cos_psi;
    let km1 = (params.k - 1) as f64;
    let a2m1 = a_sq - 1.0;
    let fp = state.fp;
    let fpp = 0.5 * params.lambda * q_psi / q_f * sin_2f / (sin_psi * sin_psi)
        - km1 * cos_psi / sin_psi * fp
        - 0.5 * a2m1 * sin_2f / q_f * fp * fp
        + 0.5 * a2m1 * sin_2psi / q_psi * fp;
    Ok((fp, fpp))
}

/// Lyapunov function W = h'^2 Q/S + lambda sin^2 h.
///
/// W(0) = b^2 on a shot h(0) = 0, h'(0) = b; W is nondecreasing for x >= 0,
/// bounded by b^2 e^{2(k-2)x}, and crosses lambda exactly when the orbit
/// leaves the strip |h| < pi/2.
pub fn lyapunov(params: &ModelParams, state: PhaseState) -> f64 {
    let a_sq = params.a * params.a;
    let s = sech(state.x);
    let t = state.x.tanh();
    let s_chart = ellipse_sq(a_sq, s, t);
    let (sin_h, cos_h) = state.h.sin_cos();
    let q = ellipse_sq(a_sq, cos_h, sin_h);
    state.hp * state.hp * q / s_chart + params.lambda * sin_h * sin_h
}

/// Rate W' = 2 (k - 2) tanh x h'^2 Q/S along solutions.
pub fn lyapunov_rate(params: &ModelParams, state: PhaseState) -> f64 {
    let a_sq = params.a * params.a;
    let s = sech(state.x);
    let t = state.x.tanh();
    let s_chart = ellipse_sq(a_sq, s, t);
    let (sin_h, cos_h) = state.h.sin_cos();
    let q = ellipse_sq(a_sq, cos_h, sin_h);
    2.0 * ((params.k - 2) as f64) * t * state.hp * state.hp * q / s_chart
}

/// Phase-angle rate for theta = atan2(h', h), the angle of the phase point
/// (h, h') measured from the h-axis: theta' = (h'' h - h'^2) / (h^2 + h'^2).
///
/// A shot from the origin starts at theta = pi/2 and theta moves clockwise
/// through pi/2 mod pi at every zero of h (rate exactly -1 there), so
/// (theta(start) - theta(end)) / pi counts half-turns of the orbit.
///
/// The rate depends on `theta` only through its class mod pi, and that class
/// is already determined by (h, h'); the branch-free rational form below
/// uses the state directly, which keeps the theta component of an integrated
/// system from feeding its own error back into the flow.
pub fn theta_rate(params: &ModelParams, state: PhaseState, theta: f64) -> Result<f64> {
    let _ = theta;
    require_finite("x", state.x)?;
    require_finite("h", state.h)?;
    require_finite("hp", state.hp)?;
    let r_sq = state.h * state.h + state.hp * state.hp;
    if r_sq == 0.0 {
        return Err(Error::InvalidInput(
            "phase angle undefined at (h, h') = (0, 0)".into(),
        ));
    }
    let (_, hpp) = rhs_x_raw(params, state.x, state.h, state.hp);
    Ok((hpp * state.h - state.hp * state.hp) / r_sq)
}

/// Energy density in the whole-line chart, with the overall constant set
/// to one: (h'^2 Q/S + lambda cos^2 h) sqrt(S) sech^{k-2} x.
///
/// The total energy of a profile is the integral of this over the line;
/// the density is even in x for odd h.
pub fn energy_density_x(params: &ModelParams, state: PhaseState) -> f64 {
    let a_sq = params.a * params.a;
    let s = sech(state.x);
    let t = state.x.tanh();
    let s_chart = ellipse_sq(a_sq, s, t);
    let (sin_h, cos_h) = state.h.sin_cos();
    let q = ellipse_sq(a_sq, cos_h, sin_h);
    let kinetic = state.hp * state.hp * q / s_chart;
    let potential = params.lambda * cos_h * cos_h;
    (kinetic + potential) * s_chart.sqrt() * s.powi(params.k as i32 - 2)
}

/// Energy density in the polar chart:
/// (f'^2 Qf/Qpsi + lambda sin^2 f / sin^2 psi) sqrt(Qpsi) sin^{k-1} psi,
/// with Qf = a^2 sin^2 f + cos^2 f and Qpsi the same at psi.
pub fn energy_density_psi(params: &ModelParams, state: PsiState) -> f64 {
    let a_sq = params.a * params.a;
    let (sin_psi, cos_psi) = state.psi.sin_cos();
    let (sin_f, cos_f) = state.f.sin_cos();
    let q_psi = ellipse_sq(a_sq, sin_psi, cos_psi);
    let q_f = ellipse_sq(a_sq, sin_f, cos_f);
    let kinetic = state.fp * state.fp * q_f / q_psi;
    let potential = params.lambda * sin_f * sin_f / (sin_psi * sin_psi);
    (kinetic + potential) * q_psi.sqrt() * sin_psi.powi(params.k as i32 - 1)
}

/// Chart map x = log tan(psi/2), defined for psi strictly inside (0, pi).
pub fn psi_to_x(psi: f64) -> Result<f64> {
    if !(psi > 0.0 && psi < PI) {
        return Err(Error::InvalidInput(format!(
            "psi = {psi} outside the open interval (0, pi)"
        )));
    }
    Ok((psi / 2.0).tan().ln())
}

/// Inverse chart map psi = 2 atan(e^x), written as pi/2 + atan(sinh x) so
/// that psi(-x) and psi(x) are floating-point complements about pi/2.
pub fn x_to_psi(x: f64) -> f64 {
    FRAC_PI_2 + x.sinh().atan()
}

/// Converts a polar-chart state to the whole-line chart:
/// h = f - pi/2 and h' = f' sin(psi).
pub fn psi_state_to_x(state: PsiState) -> Result<PhaseState> {
    let x = psi_to_x(state.psi)?;
    Ok(PhaseState {
        x,
        h: state.f - FRAC_PI_2,
        hp: state.fp * state.psi.sin(),
    })
}

/// The identity profile h(x) = atan(sinh x) = 2 atan(e^x) - pi/2 with slope
/// h'(x) = sech x. For d = 1 it solves [`rhs_x`] exactly for every a.
/// Odd in x exactly, including in floating point.
pub fn identity_profile(x: f64) -> PhaseState {
    PhaseState { x, h: x.sinh().atan(), hp: sech(x) }
}
