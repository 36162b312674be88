//! Linearization threshold and Jacobi stability analysis.
//!
//! Two questions are answered here. First, when do connecting orbits exist
//! at all: the linearization of the whole-line equation at h = 0 has
//! characteristic roots alpha^2 - (k-2) alpha + lambda/a^2 = 0 at infinity,
//! and orbits can wind only while those roots are complex, i.e. while
//! a^2 < 4 lambda / (k-2)^2. [`regime_classify`] reports the roots and the
//! regime; [`linearized_rhs_origin`] exposes the x-dependent linearization
//! the asymptotic roots are the limit of.
//!
//! Second, is the identity self-map stable: the second variation of the
//! energy at the identity (degree d = 1) is governed by the Jacobi equation
//! xi'' + P xi' + R xi + Lambda w xi = 0 with weight w = 1/(a^2 + sinh^2 x).
//! It has the closed-form eigenpair xi = (a^2 + sinh^2 x)^{-1/2},
//! Lambda = a^2 (2 - k), negative for every k >= 3, so the identity is
//! always unstable. [`jacobi_apply`] discretizes the operator,
//! [`jacobi_general_apply`] the linearization about an arbitrary profile,
//! and [`lowest_eigenvalue`] confirms the eigenvalue numerically with a
//! self-adjoint finite-difference pencil and Sturm-sequence bisection.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::model::{self, ModelParams};
use crate::{Error, Result};

/// Relative width at which the eigenvalue bisection stops.
const EIGEN_TOL: f64 = 1e-10;

/// Hard cap on bisection iterations before reporting non-convergence.
const EIGEN_MAX_ITER: usize = 500;

/// Inverse-iteration sweeps for the ground eigenvector.
const INVERSE_ITERATIONS: usize = 4;

/// Where the linearization at h = 0 sits relative to the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// Complex roots: the origin spirals and connecting orbits can exist.
    Oscillatory,
    /// Double real root, exactly at the threshold.
    Critical,
    /// Real roots: orbits cannot wind and no connecting orbit exists.
    NonOscillatory,
}

/// Characteristic roots of the linearization at h = 0 for x -> infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootReport {
    pub alpha_plus: Complex64,
    pub alpha_minus: Complex64,
    /// (k-2)^2 - 4 lambda / a^2.
    pub discriminant: f64,
    pub regime: Regime,
}

/// Classifies the asymptotic linearization at h = 0.
///
/// The roots solve alpha^2 - (k-2) alpha + lambda/a^2 = 0; they are complex
/// exactly when a^2 < a_crit_sq = 4 lambda / (k-2)^2.
pub fn regime_classify(params: &ModelParams) -> RootReport {
    let km2 = (params.k - 2) as f64;
    let a_sq = params.a_sq();
    let discriminant = km2 * km2 - 4.0 * params.lambda / a_sq;
    // The regime is decided by the same comparison the model exposes, so
    // the two can never disagree at the threshold.
    let regime = if a_sq < params.a_crit_sq {
        Regime::Oscillatory
    } else if a_sq == params.a_crit_sq {
        Regime::Critical
    } else {
        Regime::NonOscillatory
    };
    let half = Complex64::new(0.5 * km2, 0.0);
    let root = Complex64::new(discriminant, 0.0).sqrt();
    RootReport {
        alpha_plus: half + 0.5 * root,
        alpha_minus: half - 0.5 * root,
        discriminant,
        regime,
    }
}

/// Exact x-dependent linearization of the whole-line equation at h = 0,
/// as (eta', eta''):
///
/// eta'' = (1 - a^2) tanh x / (a^2 + sinh^2 x) eta'
///         + (k - 2) tanh x eta'
///         - lambda/a^2 (a^2 sech^2 x + tanh^2 x) eta.
///
/// As x -> infinity the coefficients converge to the constant-coefficient
/// equation whose roots [`regime_classify`] reports.
pub fn linearized_rhs_origin(
    params: &ModelParams,
    x: f64,
    eta: f64,
    etap: f64,
) -> (f64, f64) {
    let a_sq = params.a_sq();
    let km2 = (params.k - 2) as f64;
    let s = model::sech(x);
    let t = x.tanh();
    let s_chart = model::ellipse_sq(a_sq, s, t);
    let etapp = (1.0 - a_sq) * model::tanh_over_offset(a_sq, x) * etap + km2 * t * etap
        - params.lambda / a_sq * s_chart * eta;
    (etap, etapp)
}

/// Pointwise coefficients of the identity-map Jacobi equation
/// xi'' + P xi' + R xi + Lambda w xi = 0, returned as (P, R, w):
///
///   P(x) = -(k-2) tanh x + (1-a^2) tanh x / (a^2 + sinh^2 x),
///   R(x) = (1-a^2)(a^2 - sinh^2 x)/(a^2 + sinh^2 x)^2
///          + (k-1)(a^2 - sinh^2 x)/(a^2 + sinh^2 x),
///   w(x) = 1/(a^2 + sinh^2 x),
///
/// all formed through sech/tanh so that no intermediate overflows:
/// (a^2 - sinh^2 x)/(a^2 + sinh^2 x) = (a^2 sech^2 x - tanh^2 x)/S and
/// 1/(a^2 + sinh^2 x) = sech^2 x / S with S = a^2 sech^2 x + tanh^2 x.
fn identity_coeffs(params: &ModelParams, x: f64) -> (f64, f64, f64) {
    let a_sq = params.a_sq();
    let km2 = (params.k - 2) as f64;
    let s = model::sech(x);
    let t = x.tanh();
    let s_chart = model::ellipse_sq(a_sq, s, t);
    let w = s * s / s_chart;
    let ratio = (a_sq * s * s - t * t) / s_chart;
    let p = -km2 * t + (1.0 - a_sq) * t * w;
    let r = (1.0 - a_sq) * ratio * w + (params.k as f64 - 1.0) * ratio;
    (p, r, w)
}

/// Uniform symmetric grid on [-X, X] with the coefficient tables of the
/// identity-map Jacobi operator and Dirichlet conditions at the ends.
///
/// `m` counts interior nodes; the spacing is dx = 2X/(m+1) and the stored
/// vectors cover all m+2 nodes including the boundary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JacobiGrid {
    pub x: Vec<f64>,
    pub dx: f64,
    /// w(x_j) = 1/(a^2 + sinh^2 x_j); positive everywhere.
    pub weight: Vec<f64>,
    /// First-derivative coefficient P(x_j).
    pub p: Vec<f64>,
    /// Zeroth-order coefficient R(x_j).
    pub r: Vec<f64>,
}

impl JacobiGrid {
    /// Builds the grid for a degree-1 model (the identity self-map only
    /// exists at d = 1, and the coefficient R hard-codes its lambda = k-1).
    pub fn new(params: &ModelParams, x_half: f64, m: usize) -> Result<Self> {
        if params.d != 1 {
            return Err(Error::InvalidInput(format!(
                "d = {}; the identity-map Jacobi operator is defined for degree 1",
                params.d
            )));
        }
        if !(x_half.is_finite() && (10.0..=200.0).contains(&x_half)) {
            return Err(Error::InvalidInput(format!(
                "x_half = {x_half}, need a half-width in [10, 200]"
            )));
        }
        if m < 3 {
            return Err(Error::InvalidInput(format!("m = {m} interior nodes, need at least 3")));
        }
        let dx = 2.0 * x_half / (m + 1) as f64;
        let n = m + 2;
        let mut x = Vec::with_capacity(n);
        let mut weight = Vec::with_capacity(n);
        let mut p = Vec::with_capacity(n);
        let mut r = Vec::with_capacity(n);
        for j in 0..n {
            // Integer offset from the midpoint keeps the grid exactly
            // symmetric: x_j = -x_{n-1-j}.
            let xj = 0.5 * dx * (2 * j as i64 - (m + 1) as i64) as f64;
            let (pj, rj, wj) = identity_coeffs(params, xj);
            x.push(xj);
            weight.push(wj);
            p.push(pj);
            r.push(rj);
        }
        Ok(Self { x, dx, weight, p, r })
    }

    /// Number of stored nodes, boundary included.
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Applies the non-weight part of the identity-map Jacobi operator,
/// xi'' + P xi' + R xi, by second-order central differences. Boundary
/// entries of the result are zero (Dirichlet).
pub fn jacobi_apply(grid: &JacobiGrid, xi: &[f64]) -> Result<Vec<f64>> {
    let n = grid.len();
    if xi.len() != n {
        return Err(Error::InvalidInput(format!(
            "xi has {} entries, the grid has {n} nodes",
            xi.len()
        )));
    }
    let inv_dx2 = 1.0 / (grid.dx * grid.dx);
    let inv_2dx = 0.5 / grid.dx;
    let mut out = vec![0.0; n];
    for j in 1..n - 1 {
        let d2 = (xi[j + 1] - 2.0 * xi[j] + xi[j - 1]) * inv_dx2;
        let d1 = (xi[j + 1] - xi[j - 1]) * inv_2dx;
        out[j] = d2 + grid.p[j] * d1 + grid.r[j] * xi[j];
    }
    Ok(out)
}

/// Applies the linearization of the whole-line equation about an arbitrary
/// profile h (the general Jacobi operator, without its weight term):
///
/// xi'' + (1-a^2) sin(2h)/Q h' xi' - (1-a^2) tanh x/(a^2+sinh^2 x) xi'
///      - (k-2) tanh x xi'
///      + (1-a^2) cos(2h)/Q h'^2 xi
///      - (1-a^2)^2/2 sin^2(2h)/Q^2 h'^2 xi
///      + lambda cos(2h) S/Q xi
///      - lambda/2 (1-a^2) sin^2(2h) S/Q^2 xi,
///
/// with Q = a^2 cos^2 h + sin^2 h. The profile rows (x, h, h') must sit on
/// the grid nodes. At the identity profile this reduces to [`jacobi_apply`].
pub fn jacobi_general_apply(
    params: &ModelParams,
    grid: &JacobiGrid,
    h_profile: &[(f64, f64, f64)],
    xi: &[f64],
) -> Result<Vec<f64>> {
    let n = grid.len();
    if xi.len() != n || h_profile.len() != n {
        return Err(Error::InvalidInput(format!(
            "sizes disagree: grid {n}, profile {}, xi {}",
            h_profile.len(),
            xi.len()
        )));
    }
    for (row, &xg) in h_profile.iter().zip(&grid.x) {
        if (row.0 - xg).abs() > 1e-9 * xg.abs().max(1.0) {
            return Err(Error::InvalidInput(format!(
                "profile abscissa {} does not match grid node {xg}",
                row.0
            )));
        }
    }
    let a_sq = params.a_sq();
    let km2 = (params.k - 2) as f64;
    let one_m_a2 = 1.0 - a_sq;
    let inv_dx2 = 1.0 / (grid.dx * grid.dx);
    let inv_2dx = 0.5 / grid.dx;
    let mut out = vec![0.0; n];
    for j in 1..n - 1 {
        let (x, h, hp) = h_profile[j];
        let s = model::sech(x);
        let t = x.tanh();
        let s_chart = model::ellipse_sq(a_sq, s, t);
        let (sin_h, cos_h) = h.sin_cos();
        let q = model::ellipse_sq(a_sq, cos_h, sin_h);
        let sin_2h = 2.0 * sin_h * cos_h;
        let cos_2h = cos_h * cos_h - sin_h * sin_h;
        let g = model::tanh_over_offset(a_sq, x);
        let c1 = one_m_a2 * (sin_2h / q) * hp - one_m_a2 * g - km2 * t;
        let c0 = one_m_a2 * (cos_2h / q) * hp * hp
            - 0.5 * one_m_a2 * one_m_a2 * (sin_2h * sin_2h / (q * q)) * hp * hp
            + params.lambda * (s_chart / q) * cos_2h
            - 0.5 * params.lambda * one_m_a2 * (s_chart / (q * q)) * sin_2h * sin_2h;
        let d2 = (xi[j + 1] - 2.0 * xi[j] + xi[j - 1]) * inv_dx2;
        let d1 = (xi[j + 1] - xi[j - 1]) * inv_2dx;
        out[j] = d2 + c1 * d1 + c0 * xi[j];
    }
    Ok(out)
}

/// Result of the discrete eigenvalue solve at the identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenReport {
    /// Closed form a^2 (2 - k); negative for every k >= 3.
    pub lambda_analytic: f64,
    /// Lowest eigenvalue of the finite-difference pencil.
    pub lambda_numeric: f64,
    /// Sup-norm of the discrete operator applied to the closed-form
    /// eigenfunction (a^2 + sinh^2 x)^{-1/2} with its eigenvalue.
    pub eigfn_residual: f64,
    /// Ground eigenvector on all grid nodes, sup-normalized, zero at the
    /// Dirichlet boundary.
    pub eigenvector: Vec<f64>,
    /// Next two eigenvalues, emitted unvalidated (exploratory only).
    pub lambda_exploratory: [f64; 2],
    pub x_half: f64,
    /// Interior node count.
    pub m: usize,
    pub dx: f64,
}

/// Lowest eigenvalue of the identity-map Jacobi operator on [-X, X].
///
/// The equation is put in self-adjoint form with the integrating factor
/// mu = exp(int P), accumulated in log space by cumulative trapezoid so
/// that large X cannot overflow, then discretized as the symmetric
/// tridiagonal pencil A v = Lambda B v with
/// A = -D(mu D) - mu R and B = diag(mu w). Eigenvalues are extracted by
/// bisection on the Sturm count (negative pivots of LDL^T of A - sigma B)
/// and the ground vector by shifted inverse iteration.
pub fn lowest_eigenvalue(params: &ModelParams, x_half: f64, m: usize) -> Result<EigenReport> {
    if m < 1000 {
        return Err(Error::InvalidInput(format!("m = {m} interior nodes, need at least 1000")));
    }
    let grid = JacobiGrid::new(params, x_half, m)?;
    let dx = grid.dx;

    // log mu on the half-step lattice (nodes and midpoints), by cumulative
    // trapezoid of P from the left end; the arbitrary additive constant
    // cancels between A and B. Normalizing the max to 0 guards exp.
    let lattice = 2 * (m + 1) + 1;
    let mut log_mu = Vec::with_capacity(lattice);
    let mut acc = 0.0;
    let mut p_prev = 0.0;
    for i in 0..lattice {
        let xi = 0.25 * dx * (2 * i as i64 - (lattice as i64 - 1)) as f64;
        let (p, _, _) = identity_coeffs(params, xi);
        if i > 0 {
            acc += 0.25 * dx * (p_prev + p);
        }
        p_prev = p;
        log_mu.push(acc);
    }
    let peak = log_mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mu: Vec<f64> = log_mu.iter().map(|l| (l - peak).exp()).collect();
    // mu[2j] sits on node j, mu[2j+1] between nodes j and j+1.
    let mu_node = |j: usize| mu[2 * j];
    let mu_half = |j: usize| mu[2 * j + 1];

    // Interior assembly of the pencil.
    let inv_dx2 = 1.0 / (dx * dx);
    let mut a_diag = Vec::with_capacity(m);
    let mut a_off = Vec::with_capacity(m - 1);
    let mut b_diag = Vec::with_capacity(m);
    for i in 1..=m {
        a_diag.push((mu_half(i - 1) + mu_half(i)) * inv_dx2 - mu_node(i) * grid.r[i]);
        b_diag.push(mu_node(i) * grid.weight[i]);
        if i < m {
            a_off.push(-mu_half(i) * inv_dx2);
        }
    }

    // Pencil Gershgorin bounds: every eigenvalue Lambda of A v = Lambda B v
    // satisfies min_i (a_ii - r_i)/b_ii <= Lambda <= max_i (a_ii + r_i)/b_ii.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..m {
        let mut radius = 0.0;
        if i > 0 {
            radius += a_off[i - 1].abs();
        }
        if i < m - 1 {
            radius += a_off[i].abs();
        }
        lo = lo.min((a_diag[i] - radius) / b_diag[i]);
        hi = hi.max((a_diag[i] + radius) / b_diag[i]);
    }

    let lambda_numeric = bisect_pencil(&a_diag, &a_off, &b_diag, lo, hi, 1)?;
    let lambda_2 = bisect_pencil(&a_diag, &a_off, &b_diag, lambda_numeric, hi, 2)?;
    let lambda_3 = bisect_pencil(&a_diag, &a_off, &b_diag, lambda_2, hi, 3)?;

    let interior = inverse_iteration(&a_diag, &a_off, &b_diag, lambda_numeric);
    let mut eigenvector = vec![0.0; m + 2];
    eigenvector[1..=m].copy_from_slice(&interior);

    // Residual of the closed form xi* = (a^2 + sinh^2 x)^{-1/2}, computed
    // stably as sech x / sqrt(S).
    let a_sq = params.a_sq();
    let xi_star: Vec<f64> = grid
        .x
        .iter()
        .map(|&x| {
            let s = model::sech(x);
            let t = x.tanh();
            s / model::ellipse_sq(a_sq, s, t).sqrt()
        })
        .collect();
    let lambda_analytic = a_sq * (2.0 - params.k as f64);
    let applied = jacobi_apply(&grid, &xi_star)?;
    let mut eigfn_residual = 0.0f64;
    for j in 1..grid.len() - 1 {
        let r = applied[j] + lambda_analytic * grid.weight[j] * xi_star[j];
        eigfn_residual = eigfn_residual.max(r.abs());
    }

    Ok(EigenReport {
        lambda_analytic,
        lambda_numeric,
        eigfn_residual,
        eigenvector,
        lambda_exploratory: [lambda_2, lambda_3],
        x_half,
        m,
        dx,
    })
}

/// Number of pencil eigenvalues below sigma: negative pivots of the LDL^T
/// factorization of the tridiagonal A - sigma B (Sylvester inertia).
fn sturm_count(a_diag: &[f64], a_off: &[f64], b_diag: &[f64], sigma: f64) -> usize {
    let mut count = 0;
    let mut d_prev = 0.0;
    for i in 0..a_diag.len() {
        let mut d = a_diag[i] - sigma * b_diag[i];
        if i > 0 {
            d -= a_off[i - 1] * a_off[i - 1] / d_prev;
        }
        if d == 0.0 {
            // Exactly singular pivot: nudge to the negative side so the
            // boundary eigenvalue counts as below sigma.
            d = -f64::MIN_POSITIVE;
        }
        if d < 0.0 {
            count += 1;
        }
        d_prev = d;
    }
    count
}

/// Bisection for the k-th smallest pencil eigenvalue inside [lo, hi].
fn bisect_pencil(
    a_diag: &[f64],
    a_off: &[f64],
    b_diag: &[f64],
    mut lo: f64,
    mut hi: f64,
    k: usize,
) -> Result<f64> {
    for _ in 0..EIGEN_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= EIGEN_TOL * lo.abs().max(hi.abs()).max(1.0) || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        if sturm_count(a_diag, a_off, b_diag, mid) >= k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(Error::EigenNoConvergence { lo, hi })
}

/// Shifted inverse iteration on the pencil: repeatedly solves
/// (A - sigma B) v = B u and normalizes; converges to the eigenvector
/// nearest sigma. Returns the interior vector, sup-normalized with a
/// positive center.
fn inverse_iteration(a_diag: &[f64], a_off: &[f64], b_diag: &[f64], sigma: f64) -> Vec<f64> {
    let n = a_diag.len();
    let diag: Vec<f64> = (0..n).map(|i| a_diag[i] - sigma * b_diag[i]).collect();
    let lu = TridiagLu::factor(&diag, a_off);
    let mut v = vec![1.0; n];
    for _ in 0..INVERSE_ITERATIONS {
        let mut rhs: Vec<f64> = (0..n).map(|i| b_diag[i] * v[i]).collect();
        lu.solve(&mut rhs);
        let norm = rhs.iter().fold(0.0f64, |acc, &t| acc.max(t.abs()));
        if !(norm.is_finite() && norm > 0.0) {
            break;
        }
        for t in &mut rhs {
            *t /= norm;
        }
        v = rhs;
    }
    if v[n / 2] < 0.0 {
        for t in &mut v {
            *t = -*t;
        }
    }
    v
}

/// LU factorization with partial pivoting of a symmetric tridiagonal
/// matrix given by its diagonal and off-diagonal. Row interchanges
/// introduce one extra superdiagonal of fill-in (u2).
struct TridiagLu {
    /// Elimination multipliers.
    low: Vec<f64>,
    /// Main diagonal of U; zero pivots are nudged to stay divisible.
    d: Vec<f64>,
    /// First superdiagonal of U.
    u1: Vec<f64>,
    /// Second superdiagonal of U (fill-in from interchanges).
    u2: Vec<f64>,
    swapped: Vec<bool>,
}

impl TridiagLu {
    fn factor(diag: &[f64], off: &[f64]) -> Self {
        let n = diag.len();
        let mut d = diag.to_vec();
        let mut u1 = vec![0.0; n];
        let mut u2 = vec![0.0; n];
        u1[..n - 1].copy_from_slice(off);
        let mut low = vec![0.0; n];
        let mut swapped = vec![false; n];
        for i in 0..n - 1 {
            // The subdiagonal entry of row i+1 is still the original
            // off[i]: elimination only ever rewrites rows at or above i.
            if d[i].abs() >= off[i].abs() {
                let l = if d[i] != 0.0 { off[i] / d[i] } else { 0.0 };
                low[i] = l;
                d[i + 1] -= l * u1[i];
            } else {
                // Interchange rows i and i+1; the pivot is the subdiagonal.
                swapped[i] = true;
                let l = d[i] / off[i];
                low[i] = l;
                d[i] = off[i];
                let old_u1 = u1[i];
                u1[i] = d[i + 1];
                d[i + 1] = old_u1 - l * u1[i];
                if i + 1 < n - 1 {
                    u2[i] = u1[i + 1];
                    u1[i + 1] = -l * u2[i];
                }
            }
            if d[i] == 0.0 {
                d[i] = f64::MIN_POSITIVE;
            }
            if d[i + 1] == 0.0 {
                d[i + 1] = f64::MIN_POSITIVE;
            }
        }
        if d[n - 1] == 0.0 {
            d[n - 1] = f64::MIN_POSITIVE;
        }
        Self { low, d, u1, u2, swapped }
    }

    fn solve(&self, b: &mut [f64]) {
        let n = self.d.len();
        for i in 0..n - 1 {
            if self.swapped[i] {
                b.swap(i, i + 1);
            }
            b[i + 1] -= self.low[i] * b[i];
        }
        b[n - 1] /= self.d[n - 1];
        if n >= 2 {
            b[n - 2] = (b[n - 2] - self.u1[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.u1[i] * b[i + 1] - self.u2[i] * b[i + 2]) / self.d[i];
        }
    }
}
