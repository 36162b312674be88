//! Shooting for pole-to-pole connecting orbits.
//!
//! A b-orbit is the odd solution with h(0) = 0, h'(0) = b > 0. It either
//! exits the strip |h| < pi/2 through one of the boundary values (ExitUp or
//! ExitDown at the first such x) or stays inside up to the horizon
//! (Trapped). The number of sign changes of h after x = 0 is a staircase in
//! b: it jumps by one each time b passes a connecting-orbit slope b_n from
//! above. The n-th connecting orbit is located by scanning b downward on a
//! geometric grid until the zero count jumps from n-1 to at least n, then
//! bisecting on the count.
//!
//! Alongside (h, h') the phase angle theta = atan2(h', h) is co-integrated;
//! the rotation number Omega(b) = (theta(0) - theta(end)) / pi counts
//! half-turns of the phase point and grades the family: the n-th connecting
//! orbit has Omega near n - 1/2.
//!
//! A converged orbit is post-processed into a value object: the profile is
//! truncated where the Lyapunov function W has closed all but a fixed
//! fraction of its gap to lambda (the plateau), the tail decay rate of
//! pi/2 - |h| is fitted over the final decade, the polar profile f(psi) is
//! reconstructed with a tail extrapolation, and the energy is integrated
//! with an analytic remainder for the discarded tail.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::integrate::{integrate, Direction, EventSpec, IntegratorConfig, Trajectory};
use crate::model::{self, ModelParams, PhaseState};
use crate::{Error, Result};

/// Start of the downward scan, as a multiple of sqrt(lambda); shots with
/// W(0) = b^2 > lambda exit without crossing zero, so the seed count is 0.
const SCAN_SEED: f64 = 1.01;

/// Geometric ratio between consecutive scan slopes.
const SCAN_RATIO: f64 = 0.85;

/// The scan gives up below this slope.
const SCAN_FLOOR: f64 = 1e-13;

/// Default relative width at which slope bisection stops.
pub const DEFAULT_B_TOL: f64 = 1e-12;

/// Fraction of the initial gap lambda - W(0) that may remain open at the
/// truncation point: the profile is cut where W has stopped changing to
/// within this fraction of all the change it will ever make.
const PLATEAU_MARGIN: f64 = 1e-5;

/// The tail fit spans the final decade of u = pi/2 - |h| before truncation.
const TAIL_DECADE: f64 = 10.0;

/// Samples used for the least-squares tail fit.
const TAIL_FIT_SAMPLES: usize = 64;

/// Uniform samples of the stored half-line profile (zeros of h and the
/// truncation point are merged in on top).
const PROFILE_SAMPLES: usize = 2000;

/// Default half-width in x of the reconstructed polar profile.
const F_PROFILE_X_CUT: f64 = 20.0;

/// Points in the reconstructed polar profile.
const F_PROFILE_SAMPLES: usize = 1001;

/// Horizon doublings allowed when a shot stays unclassified.
const MAX_HORIZON_DOUBLINGS: u32 = 2;

/// How a shot left (or failed to leave) the strip |h| < pi/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrbitTag {
    /// First boundary touch at h = +pi/2.
    ExitUp,
    /// First boundary touch at h = -pi/2.
    ExitDown,
    /// Still strictly inside at the horizon.
    Trapped,
}

/// Classification of one shot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitClass {
    pub tag: OrbitTag,
    /// First x with |h| = pi/2; None when trapped.
    pub exit_x: Option<f64>,
    /// Sign changes of h on (0, min(exit, horizon)].
    pub zero_count: usize,
}

/// Full record of one shot.
#[derive(Debug)]
pub struct ShotRecord {
    /// The shot parameter: initial slope h'(0) for axis shots, initial
    /// height h(0) for even shots.
    pub b: f64,
    /// Initial phase angle: pi/2 for axis shots, 0 for even shots.
    pub theta0: f64,
    pub orbit_class: OrbitClass,
    /// Half-turn count (theta0 - theta(end)) / pi at min(exit, horizon).
    pub omega: f64,
    /// Trapped orbits only reach a lower bound for their limiting omega.
    pub omega_lower_bound: bool,
    /// Lyapunov samples (x, W) at the accepted nodes.
    pub w_trace: Vec<(f64, f64)>,
    /// The integration record, for dense evaluation.
    pub trajectory: Trajectory<3>,
}

/// One bracket of a zero-count transition: the shot at b_hi crosses zero
/// count_hi = n - 1 times, the shot at b_lo at least n times, so the n-th
/// connecting slope lies between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeBracket {
    pub n: usize,
    pub b_lo: f64,
    pub b_hi: f64,
    pub count_lo: usize,
    pub count_hi: usize,
}

/// Quadrature value with the analytic estimate of the discarded tail that
/// is already included in it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyValue {
    pub value: f64,
    pub tail_remainder: f64,
}

/// A converged connecting orbit: the n-th equivariant harmonic self-map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConnectingOrbit {
    /// Family index, n >= 1.
    pub n: usize,
    /// Converged shooting slope (bracket midpoint).
    pub b_n: f64,
    /// Final bracket width |b_hi - b_lo|.
    pub bracket_width: f64,
    /// Sign of h at the truncation point: +1 means h -> +pi/2 on the right
    /// (odd n), -1 means h -> -pi/2 (even n).
    pub endpoint_sign: i8,
    /// Sign changes of h on (0, x_trunc]; expected n - 1.
    pub zero_count: usize,
    /// Rotation number measured at the truncation point; expected n - 1/2.
    pub omega: f64,
    /// Fitted exponential rate of u = pi/2 - |h| on the final decade;
    /// the linearization at the pole predicts (k-2)/2 - sqrt((k-2)^2+4 lambda)/2.
    pub tail_rate: f64,
    /// Truncation abscissa: W has closed all but PLATEAU_MARGIN of its gap.
    pub x_trunc: f64,
    /// Half-line profile rows (x, h, h') on [0, x_trunc]; h is odd in x.
    pub profile: Vec<(f64, f64, f64)>,
    /// Polar profile rows (psi, f), oriented so f starts at 0 near psi = 0.
    pub f_profile: Vec<(f64, f64)>,
    /// Energy of the full (symmetric) profile.
    pub energy: EnergyValue,
}

/// Shoots the odd orbit with h'(0) = b and classifies it.
pub fn shoot(params: &ModelParams, b: f64, config: &IntegratorConfig) -> Result<ShotRecord> {
    if !(b.is_finite() && b > 0.0) {
        return Err(Error::InvalidInput(format!(
            "b = {b}; the slope must be positive and finite (b < 0 mirrors by oddness, \
             b = 0 is the zero orbit)"
        )));
    }
    run_shot(params, b, FRAC_PI_2, [0.0, b, FRAC_PI_2], config)
}

/// Shoots the even orbit with h(0) = h0, h'(0) = 0.
pub fn even_shoot(params: &ModelParams, h0: f64, config: &IntegratorConfig) -> Result<ShotRecord> {
    if !(h0.is_finite() && h0 > 0.0 && h0 < FRAC_PI_2) {
        return Err(Error::InvalidInput(format!(
            "h0 = {h0}; the initial height must lie strictly between 0 and pi/2"
        )));
    }
    run_shot(params, h0, 0.0, [h0, 0.0, 0.0], config)
}

/// Rotation number Omega(b) of the odd b-orbit; thin wrapper over [`shoot`].
pub fn rotation_number(params: &ModelParams, b: f64, config: &IntegratorConfig) -> Result<f64> {
    Ok(shoot(params, b, config)?.omega)
}

fn run_shot(
    params: &ModelParams,
    b: f64,
    theta0: f64,
    y0: [f64; 3],
    config: &IntegratorConfig,
) -> Result<ShotRecord> {
    let rhs = |x: f64, y: &[f64; 3]| -> [f64; 3] {
        let (dh, dhp) = model::rhs_x_raw(params, x, y[0], y[1]);
        let r_sq = y[0] * y[0] + y[1] * y[1];
        // The origin of the phase plane is an equilibrium; freezing the
        // angle there keeps transient stage states from poisoning the flow.
        let dtheta = if r_sq == 0.0 { 0.0 } else { (dhp * y[0] - y[1] * y[1]) / r_sq };
        [dh, dhp, dtheta]
    };
    let events = [
        EventSpec::new(Direction::Rising, true, |_, y: &[f64; 3]| y[0] - FRAC_PI_2),
        EventSpec::new(Direction::Falling, true, |_, y: &[f64; 3]| y[0] + FRAC_PI_2),
        EventSpec::new(Direction::Any, false, |_, y: &[f64; 3]| y[0]),
    ];
    let traj = integrate(rhs, 0.0, y0, config, &events)?;

    let zero_count = traj.events.iter().filter(|e| e.event == 2).count();
    let (tag, exit_x) = match traj.terminal_event {
        Some(0) => (OrbitTag::ExitUp, Some(traj.x_end())),
        Some(1) => (OrbitTag::ExitDown, Some(traj.x_end())),
        _ => (OrbitTag::Trapped, None),
    };
    let theta_end = traj.y_end()[2];
    let w_trace = traj
        .nodes
        .iter()
        .map(|&(x, y)| (x, model::lyapunov(params, PhaseState { x, h: y[0], hp: y[1] })))
        .collect();

    Ok(ShotRecord {
        b,
        theta0,
        orbit_class: OrbitClass { tag, exit_x, zero_count },
        omega: (theta0 - theta_end) / PI,
        omega_lower_bound: tag == OrbitTag::Trapped,
        w_trace,
        trajectory: traj,
    })
}

/// Worst-case slack of the two Lyapunov laws along a shot, from its node
/// trace: the most negative per-node increment of W for x >= 0 (the
/// monotonicity law says none should be), and the largest relative excess
/// of W over W(0) e^{2(k-2)x} (the growth law says none should be).
pub fn lyapunov_law_slack(params: &ModelParams, record: &ShotRecord) -> (f64, f64) {
    let km2 = (params.k - 2) as f64;
    let w0 = record.w_trace.first().map_or(0.0, |&(_, w)| w);
    let mut min_increment = f64::INFINITY;
    let mut max_excess = f64::NEG_INFINITY;
    for pair in record.w_trace.windows(2) {
        let (x0, w_a) = pair[0];
        let (_, w_b) = pair[1];
        if x0 >= 0.0 {
            min_increment = min_increment.min(w_b - w_a);
        }
    }
    for &(x, w) in &record.w_trace {
        if x < 0.0 {
            continue;
        }
        let bound = w0 * (2.0 * km2 * x).exp();
        if bound.is_finite() && bound > 0.0 {
            max_excess = max_excess.max((w - bound) / bound);
        }
    }
    (min_increment, max_excess)
}

/// A shot whose zero count is exact: a trapped count is only a lower bound
/// (an enlarged horizon may reveal more crossings), so trapped shots are
/// re-run with the horizon doubled, up to the documented limit.
fn shoot_exact_count(
    params: &ModelParams,
    b: f64,
    config: &IntegratorConfig,
) -> Result<ShotRecord> {
    let mut cfg = *config;
    for _ in 0..=MAX_HORIZON_DOUBLINGS {
        let rec = shoot(params, b, &cfg)?;
        if rec.orbit_class.tag != OrbitTag::Trapped {
            return Ok(rec);
        }
        cfg.x_max *= 2.0;
    }
    Err(Error::Inconclusive { b, x_max: cfg.x_max / 2.0 })
}

/// Scans b downward from 1.01 sqrt(lambda) on a geometric grid and returns
/// one bracket per zero-count transition n = 1..n_max, each with
/// count_hi = n - 1 exactly and count_lo >= n.
pub fn bracket_family(
    params: &ModelParams,
    n_max: usize,
    config: &IntegratorConfig,
) -> Result<Vec<SlopeBracket>> {
    if n_max < 1 {
        return Err(Error::InvalidInput(format!("n_max = {n_max}, need n_max >= 1")));
    }
    if !params.is_oscillatory() {
        let (num, den) = params.a_crit_sq_rational();
        return Err(Error::RegimeViolation { a_sq: params.a_sq(), num, den });
    }

    let mut out: Vec<SlopeBracket> = Vec::new();
    let mut b = SCAN_SEED * params.lambda.sqrt();
    let mut prev: Option<(f64, usize)> = None;
    while b >= SCAN_FLOOR && out.len() < n_max {
        let count = shoot_exact_count(params, b, config)?.orbit_class.zero_count;
        if let Some((b_prev, c_prev)) = prev {
            if count > c_prev {
                refine_transitions(params, config, (b_prev, c_prev), (b, count), n_max, &mut out)?;
            }
        }
        prev = Some((b, count));
        b *= SCAN_RATIO;
    }
    if out.len() < n_max {
        return Err(Error::SearchExhausted {
            b_floor: SCAN_FLOOR,
            found: out.len(),
            requested: n_max,
        });
    }
    Ok(out)
}

/// Splits a scan pair that jumped one or more transitions into one bracket
/// per transition, probing interior slopes until each bracket's upper count
/// is exactly n - 1. Probes use the geometric mean, matching the scan grid.
fn refine_transitions(
    params: &ModelParams,
    config: &IntegratorConfig,
    hi: (f64, usize),
    lo: (f64, usize),
    n_max: usize,
    out: &mut Vec<SlopeBracket>,
) -> Result<()> {
    let (b_hi, c_hi) = hi;
    let (b_lo, c_lo) = lo;
    if c_hi >= n_max {
        return Ok(());
    }
    let width_floor = 4.0 * f64::EPSILON * b_hi;
    if c_lo == c_hi + 1 || b_hi - b_lo <= width_floor {
        // Single transition (or an unresolvably thin cluster): bracket
        // every n this pair jumps over.
        for n in (c_hi + 1)..=c_lo.min(n_max) {
            out.push(SlopeBracket { n, b_lo, b_hi, count_lo: c_lo, count_hi: c_hi });
        }
        return Ok(());
    }
    let mid = (b_lo * b_hi).sqrt();
    let c_mid = shoot_exact_count(params, mid, config)?.orbit_class.zero_count;
    refine_transitions(params, config, (b_hi, c_hi), (mid, c_mid), n_max, out)?;
    refine_transitions(params, config, (mid, c_mid), (b_lo, c_lo), n_max, out)
}

/// Locates the n-th connecting orbit by bisection inside its bracket and
/// post-processes the midpoint shot into a [`ConnectingOrbit`].
pub fn find_bn(
    params: &ModelParams,
    n: usize,
    config: &IntegratorConfig,
    b_tol: f64,
) -> Result<ConnectingOrbit> {
    Ok(find_bn_traced(params, n, config, b_tol)?.0)
}

/// As [`find_bn`], additionally returning every intermediate bisection
/// bracket (outermost first), for diagnostics and correctness checks.
pub fn find_bn_traced(
    params: &ModelParams,
    n: usize,
    config: &IntegratorConfig,
    b_tol: f64,
) -> Result<(ConnectingOrbit, Vec<(f64, f64)>)> {
    if !(b_tol.is_finite() && b_tol > 0.0) {
        return Err(Error::InvalidInput(format!("b_tol = {b_tol}, need a positive width")));
    }
    let brackets = bracket_family(params, n, config)?;
    let bracket = brackets
        .iter()
        .find(|bk| bk.n == n)
        .copied()
        .expect("bracket_family returns every index up to n_max or fails");

    let (mut lo, mut hi) = (bracket.b_lo, bracket.b_hi);
    let mut trace = vec![(lo, hi)];
    while hi - lo > b_tol * hi.max(1.0) {
        // Classify an interior point; if the exact midpoint sits so close
        // to the connecting slope that no horizon resolves it, a second
        // interior point is tried before giving up.
        let mut classified = None;
        for frac in [0.5, 0.75] {
            let cand = lo + frac * (hi - lo);
            if cand <= lo || cand >= hi {
                break;
            }
            match shoot_exact_count(params, cand, config) {
                Ok(rec) => {
                    classified = Some((cand, rec.orbit_class.zero_count));
                    break;
                }
                Err(Error::Inconclusive { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        let Some((mid, count)) = classified else {
            return Err(Error::Inconclusive { b: 0.5 * (lo + hi), x_max: config.x_max });
        };
        if count >= n {
            lo = mid;
        } else {
            hi = mid;
        }
        trace.push((lo, hi));
        if 0.5 * (lo + hi) <= lo || 0.5 * (lo + hi) >= hi {
            break; // bracket at rounding resolution
        }
    }

    let b_n = 0.5 * (lo + hi);
    let record = shoot(params, b_n, config)?;
    let orbit = build_orbit(params, n, b_n, hi - lo, &record, config)?;
    Ok((orbit, trace))
}

/// Post-processing shared by the solver path: truncation at the Lyapunov
/// plateau, tail fit, profile tables, polar reconstruction, energy.
fn build_orbit(
    params: &ModelParams,
    n: usize,
    b_n: f64,
    bracket_width: f64,
    record: &ShotRecord,
    config: &IntegratorConfig,
) -> Result<ConnectingOrbit> {
    let traj = &record.trajectory;
    let w0 = record.w_trace.first().map_or(0.0, |&(_, w)| w);
    let w_cut = params.lambda - PLATEAU_MARGIN * (params.lambda - w0);

    // First node pair straddling the plateau threshold, refined on the
    // dense output. W is nondecreasing, so the first crossing is the one.
    let cross = record
        .w_trace
        .windows(2)
        .position(|pair| pair[0].1 < w_cut && pair[1].1 >= w_cut);
    let Some(i) = cross else {
        return Err(Error::Inconclusive { b: b_n, x_max: config.x_max });
    };
    let w_event = EventSpec::new(Direction::Any, false, |x: f64, y: &[f64; 3]| {
        model::lyapunov(params, PhaseState { x, h: y[0], hp: y[1] }) - w_cut
    });
    let (x_trunc, y_trunc) = crate::integrate::refine_event(
        traj,
        &w_event,
        (record.w_trace[i].0, record.w_trace[i + 1].0),
        config.event_tol,
    )?;

    let endpoint_sign: i8 = if y_trunc[0] >= 0.0 { 1 } else { -1 };
    let zero_xs: Vec<f64> = traj
        .events
        .iter()
        .filter(|e| e.event == 2 && e.x <= x_trunc)
        .map(|e| e.x)
        .collect();
    let zero_count = zero_xs.len();
    let omega = (record.theta0 - y_trunc[2]) / PI;

    // Half-line profile: uniform grid merged with the zeros of h and the
    // truncation point itself.
    let mut grid: Vec<f64> = (0..PROFILE_SAMPLES)
        .map(|i| x_trunc * i as f64 / PROFILE_SAMPLES as f64)
        .collect();
    grid.extend_from_slice(&zero_xs);
    grid.push(x_trunc);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut profile = Vec::with_capacity(grid.len());
    for x in grid {
        let y = traj.eval(x).expect("profile grid stays inside the trajectory");
        profile.push((x, y[0], y[1]));
    }

    let tail_rate = fit_tail_rate(traj, x_trunc, y_trunc[0])?;

    let mut orbit = ConnectingOrbit {
        n,
        b_n,
        bracket_width,
        endpoint_sign,
        zero_count,
        omega,
        tail_rate,
        x_trunc,
        profile,
        f_profile: Vec::new(),
        energy: EnergyValue { value: 0.0, tail_remainder: 0.0 },
    };
    orbit.f_profile = reconstruct_f(&orbit, F_PROFILE_X_CUT)?;
    orbit.energy = energy_of(&orbit, params);
    Ok(orbit)
}

/// Least-squares slope of log(pi/2 - |h|) over the final decade before the
/// truncation point.
fn fit_tail_rate(traj: &Trajectory<3>, x_trunc: f64, h_trunc: f64) -> Result<f64> {
    let u_trunc = FRAC_PI_2 - h_trunc.abs();
    if !(u_trunc > 0.0) {
        return Err(Error::InvalidInput(
            "profile reached the pole value before truncation".into(),
        ));
    }
    // Walk back to where u last reached a decade above its final value.
    let mut x_start = 0.5 * x_trunc;
    for &(x, y) in traj.nodes.iter().rev() {
        if x >= x_trunc {
            continue;
        }
        let u = FRAC_PI_2 - y[0].abs();
        if u >= TAIL_DECADE * u_trunc {
            x_start = x;
            break;
        }
    }
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let m = TAIL_FIT_SAMPLES;
    for i in 0..m {
        let x = x_start + (x_trunc - x_start) * i as f64 / (m - 1) as f64;
        let y = traj.eval(x).expect("fit window stays inside the trajectory");
        let u = FRAC_PI_2 - y[0].abs();
        if !(u > 0.0) {
            continue;
        }
        let ln_u = u.ln();
        sx += x;
        sy += ln_u;
        sxx += x * x;
        sxy += x * ln_u;
    }
    let mf = m as f64;
    let denom = mf * sxx - sx * sx;
    if denom == 0.0 {
        return Err(Error::InvalidInput("degenerate tail-fit window".into()));
    }
    Ok((mf * sxy - sx * sy) / denom)
}

/// C^1 cubic Hermite evaluation of (h, h') between stored profile rows.
fn hermite_eval(profile: &[(f64, f64, f64)], x: f64) -> (f64, f64) {
    let idx = profile.partition_point(|row| row.0 < x).clamp(1, profile.len() - 1);
    let (x0, h0, p0) = profile[idx - 1];
    let (x1, h1, p1) = profile[idx];
    let dx = x1 - x0;
    if dx == 0.0 {
        return (h1, p1);
    }
    let t = ((x - x0) / dx).clamp(0.0, 1.0);
    let t2 = t * t;
    let t3 = t2 * t;
    let h = (2.0 * t3 - 3.0 * t2 + 1.0) * h0
        + (t3 - 2.0 * t2 + t) * dx * p0
        + (-2.0 * t3 + 3.0 * t2) * h1
        + (t3 - t2) * dx * p1;
    let hp = (6.0 * t2 - 6.0 * t) * h0 / dx
        + (3.0 * t2 - 4.0 * t + 1.0) * p0
        + (6.0 * t - 6.0 * t2) * h1 / dx
        + (3.0 * t2 - 2.0 * t) * p1;
    (h, hp)
}

/// h and h' of the full (odd) profile at any x, using the stored half-line
/// table for |x| <= x_trunc and the fitted exponential tail beyond it.
fn orbit_h(orbit: &ConnectingOrbit, x: f64) -> (f64, f64) {
    let ax = x.abs();
    let (h_pos, hp_pos) = if ax <= orbit.x_trunc {
        hermite_eval(&orbit.profile, ax)
    } else {
        let &(x_t, h_t, _) = orbit.profile.last().expect("profile is nonempty");
        let sign = orbit.endpoint_sign as f64;
        let u_t = FRAC_PI_2 - h_t.abs();
        let u = u_t * (orbit.tail_rate * (ax - x_t)).exp();
        (sign * (FRAC_PI_2 - u), -sign * orbit.tail_rate * u)
    };
    if x >= 0.0 {
        (h_pos, hp_pos)
    } else {
        (-h_pos, hp_pos)
    }
}

/// Reconstructs the polar profile f(psi) = h(log tan(psi/2)) + pi/2 on
/// x in [-x_cut, x_cut], extending the stored half-line profile by oddness
/// and by the fitted tail beyond the truncation point. The profile is
/// oriented so that f -> 0 at the left pole (for even n this mirrors the
/// raw shot, the same map composed with the equatorial reflection).
pub fn reconstruct_f(orbit: &ConnectingOrbit, x_cut: f64) -> Result<Vec<(f64, f64)>> {
    if !(x_cut.is_finite() && x_cut > 0.0) {
        return Err(Error::InvalidInput(format!("x_cut = {x_cut}, need a positive width")));
    }
    let flip = if orbit.endpoint_sign < 0 { -1.0 } else { 1.0 };
    let psi_lo = model::x_to_psi(-x_cut);
    let psi_hi = model::x_to_psi(x_cut);
    let m = F_PROFILE_SAMPLES;
    let mut rows = Vec::with_capacity(m);
    for i in 0..m {
        let psi = psi_lo + (psi_hi - psi_lo) * i as f64 / (m - 1) as f64;
        let x = model::psi_to_x(psi)?;
        let (h, _) = orbit_h(orbit, x);
        rows.push((psi, FRAC_PI_2 + flip * h));
    }
    Ok(rows)
}

/// Energy of the full symmetric profile: composite Simpson quadrature of
/// the energy density over [-x_trunc, x_trunc] (computed as twice the
/// stored half) plus an analytic remainder for both exponential tails,
/// density(x_trunc) / (local decay rate) per side.
pub fn energy_of(orbit: &ConnectingOrbit, params: &ModelParams) -> EnergyValue {
    let density = |x: f64, h: f64, hp: f64| {
        model::energy_density_x(params, PhaseState { x, h, hp })
    };
    let mut acc = 0.0;
    for pair in orbit.profile.windows(2) {
        let (x0, h0, p0) = pair[0];
        let (x1, h1, p1) = pair[1];
        let xm = 0.5 * (x0 + x1);
        let (hm, pm) = hermite_eval(&orbit.profile, xm);
        acc += (x1 - x0) / 6.0
            * (density(x0, h0, p0) + 4.0 * density(xm, hm, pm) + density(x1, h1, p1));
    }
    let &(x_t, h_t, p_t) = orbit.profile.last().expect("profile is nonempty");
    let d_end = density(x_t, h_t, p_t);
    // On the tail the density decays like e^{2 tail_rate (x - x_t)} times
    // sech^{k-2}, giving the rate below; the remainder integrates it.
    let gamma = ((params.k - 2) as f64) * x_t.tanh() + 2.0 * orbit.tail_rate.abs();
    let tail = if gamma > 0.0 { 2.0 * d_end / gamma } else { 0.0 };
    EnergyValue { value: 2.0 * acc + tail, tail_remainder: tail }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(k: u32, a: f64, d: u32) -> ModelParams {
        ModelParams::new(k, a, d).unwrap()
    }

    fn cfg() -> IntegratorConfig {
        IntegratorConfig::default()
    }

    #[test]
    fn shoot_rejects_bad_parameters() {
        let m = p(3, 1.0, 1);
        assert!(shoot(&m, 0.0, &cfg()).is_err());
        assert!(shoot(&m, -1.0, &cfg()).is_err());
        assert!(shoot(&m, f64::NAN, &cfg()).is_err());
        assert!(even_shoot(&m, 0.0, &cfg()).is_err());
        assert!(even_shoot(&m, FRAC_PI_2, &cfg()).is_err());
        assert!(even_shoot(&m, 2.0, &cfg()).is_err());
    }

    /// W(0) = b^2 > lambda forces an immediate exit through +pi/2 with no
    /// zero crossing and a small rotation number.
    #[test]
    fn large_slope_exits_up_without_crossing() {
        for &(k, a, d) in &[(3u32, 1.0, 1u32), (4, 0.7, 1), (5, 0.5, 2)] {
            let m = p(k, a, d);
            for mult in [1.05, 2.0, 10.0] {
                let b = mult * m.lambda.sqrt();
                let rec = shoot(&m, b, &cfg()).unwrap();
                assert_eq!(rec.orbit_class.tag, OrbitTag::ExitUp, "k={k} a={a} b={b}");
                assert_eq!(rec.orbit_class.zero_count, 0);
                assert!(rec.omega < 0.5, "omega = {}", rec.omega);
                assert!(rec.orbit_class.exit_x.is_some());
                let exit_x = rec.orbit_class.exit_x.unwrap();
                assert_eq!(exit_x, rec.trajectory.x_end());
                // |h| = pi/2 at the exit to event resolution.
                let h_exit = rec.trajectory.y_end()[0];
                assert!((h_exit - FRAC_PI_2).abs() < 1e-9);
            }
        }
    }

    /// On the round sphere with d = 1 the identity is the first connecting
    /// orbit, with slope exactly 1. A saddle connection can only be shadowed
    /// while accumulated error times e^{2x} stays below the pi/2 - h gap
    /// (~2e^{-x}), so the horizon is held at 8 where the margin is ~100x;
    /// past x ~ 12 the shot inevitably peels off to one side.
    #[test]
    fn sphere_identity_shot_is_trapped() {
        let m = p(3, 1.0, 1);
        let c = IntegratorConfig { x_max: 8.0, ..cfg() };
        let rec = shoot(&m, 1.0, &c).unwrap();
        assert_eq!(rec.orbit_class.tag, OrbitTag::Trapped);
        assert_eq!(rec.orbit_class.zero_count, 0);
        assert!(rec.orbit_class.exit_x.is_none());
        assert!(rec.omega_lower_bound);
        assert!(rec.omega > 0.45 && rec.omega <= 0.5 + 1e-12, "omega = {}", rec.omega);
        // The trajectory should follow atan(sinh x) closely.
        for &x in &[0.5, 2.0, 6.0] {
            let y = rec.trajectory.eval(x).unwrap();
            let id = model::identity_profile(x);
            assert!((y[0] - id.h).abs() < 1e-6, "x={x}: {} vs {}", y[0], id.h);
        }
        // W has climbed to its plateau at lambda = 2 by x = 8.
        let w_end = rec.w_trace.last().unwrap().1;
        assert!((w_end - 2.0).abs() < 1e-3, "W(8) = {w_end}");
    }

    #[test]
    fn small_slope_rotation_exceeds_three_halves() {
        let m = p(3, 1.0, 1);
        let c = IntegratorConfig { x_max: 25.0, ..cfg() };
        let rec = shoot(&m, 1e-4, &c).unwrap();
        assert!(rec.omega > 1.5, "omega = {}", rec.omega);
    }

    #[test]
    fn rotation_number_is_shoot_omega() {
        let m = p(4, 0.8, 1);
        let rec = shoot(&m, 0.9, &cfg()).unwrap();
        let om = rotation_number(&m, 0.9, &cfg()).unwrap();
        assert_eq!(rec.omega, om);
    }

    /// Above the threshold the rotation number stays bounded as b -> 0
    /// instead of diverging: the linearization at h = 0 rotates only inside
    /// a finite transient window, so every small-b shot winds exactly once
    /// through zero and exits downward with the same limiting omega. Values
    /// cross-checked against an independent integrator to 1e-4.
    #[test]
    fn non_oscillatory_rotation_saturates() {
        let m = p(7, 1.0, 1);
        for &(b, omega_ref) in &[(1e-6, 1.080084), (1.565e-3, 1.079736), (6.192e-2, 1.075170)] {
            let rec = shoot(&m, b, &cfg()).unwrap();
            assert_eq!(rec.orbit_class.tag, OrbitTag::ExitDown, "b = {b}");
            assert_eq!(rec.orbit_class.zero_count, 1, "b = {b}");
            assert!(
                (rec.omega - omega_ref).abs() < 1e-4,
                "b = {b}: omega = {} vs {omega_ref}",
                rec.omega
            );
        }
        // Slopes with W(0) > lambda exit upward with less than a half-turn.
        let rec = shoot(&m, 6.0f64.sqrt(), &cfg()).unwrap();
        assert_eq!(rec.orbit_class.tag, OrbitTag::ExitUp);
        assert_eq!(rec.orbit_class.zero_count, 0);
        assert!((rec.omega - 0.130679).abs() < 1e-4, "omega = {}", rec.omega);
    }

    #[test]
    fn lyapunov_laws_hold_along_shots() {
        for &(k, a, d, b) in &[(3u32, 1.0f64, 1u32, 0.7f64), (8, 0.5, 1, 1.3), (4, 2.0, 2, 2.0)] {
            let m = p(k, a, d);
            let rec = shoot(&m, b, &cfg()).unwrap();
            let (min_inc, max_excess) = lyapunov_law_slack(&m, &rec);
            assert!(min_inc >= -1e-9, "W lost monotonicity: {min_inc:e}");
            assert!(max_excess <= 1e-8, "growth bound violated: {max_excess:e}");
        }
    }

    #[test]
    fn even_shot_near_pole_lingers() {
        let m = p(3, 1.0, 1);
        let c = IntegratorConfig { x_max: 1.0, ..cfg() };
        let rec = even_shoot(&m, FRAC_PI_2 - 1e-3, &c).unwrap();
        // By continuity from the equilibrium the orbit is still near pi/2.
        let h_end = rec.trajectory.y_end()[0];
        assert!((h_end - FRAC_PI_2).abs() < 0.05, "h(1) = {h_end}");
        assert_eq!(rec.theta0, 0.0);
    }

    #[test]
    fn even_shot_small_height_rotates_fast() {
        let m = p(3, 1.0, 1);
        let rec = even_shoot(&m, 1e-3, &cfg()).unwrap();
        assert!(rec.omega > 1.0, "omega = {}", rec.omega);
    }

    #[test]
    fn bracket_family_refuses_outside_regime() {
        let m = p(7, 1.0, 1);
        match bracket_family(&m, 1, &cfg()) {
            Err(Error::RegimeViolation { num, den, a_sq }) => {
                assert_eq!((num, den), (24, 25));
                assert_eq!(a_sq, 1.0);
            }
            other => panic!("expected a regime violation, got {other:?}"),
        }
        assert!(bracket_family(&p(3, 1.0, 1), 0, &cfg()).is_err());
    }

    #[test]
    fn bracket_family_sphere_first_two() {
        let m = p(3, 1.0, 1);
        let brackets = bracket_family(&m, 2, &cfg()).unwrap();
        assert_eq!(brackets.len(), 2);
        let b1 = &brackets[0];
        assert_eq!(b1.n, 1);
        assert_eq!(b1.count_hi, 0);
        assert!(b1.count_lo >= 1);
        assert!(b1.b_lo < 1.0 && 1.0 < b1.b_hi, "b_1 = 1 must lie inside [{}, {}]", b1.b_lo, b1.b_hi);
        let b2 = &brackets[1];
        assert_eq!(b2.n, 2);
        assert_eq!(b2.count_hi, 1);
        assert!(b2.count_lo >= 2);
        assert!(b2.b_hi <= b1.b_lo + 1e-15, "the n = 2 bracket sits strictly below n = 1");
    }

    /// The first connecting orbit on the round 3-sphere is the identity:
    /// slope 1, no zeros, omega 1/2, tail rate -1, energy 3 pi / 2.
    #[test]
    fn sphere_first_orbit_is_the_identity() {
        let m = p(3, 1.0, 1);
        let (orbit, trace) = find_bn_traced(&m, 1, &cfg(), 1e-12).unwrap();
        assert!((orbit.b_n - 1.0).abs() < 1e-9, "b_1 = {:.15}", orbit.b_n);
        assert!(orbit.bracket_width <= 1e-12 * orbit.b_n.max(1.0) * 1.0001);
        assert_eq!(orbit.zero_count, 0);
        assert_eq!(orbit.endpoint_sign, 1);
        assert!((orbit.omega - 0.5).abs() < 0.02, "omega = {}", orbit.omega);
        assert!((orbit.tail_rate - (-1.0)).abs() < 5e-3, "tail rate {}", orbit.tail_rate);
        let want = 1.5 * PI;
        assert!(
            (orbit.energy.value - want).abs() < 1e-6,
            "energy {} vs {}",
            orbit.energy.value,
            want
        );
        assert!(orbit.energy.tail_remainder >= 0.0);
        // The returned slope lies in every intermediate bracket.
        for &(lo, hi) in &trace {
            assert!(lo <= orbit.b_n && orbit.b_n <= hi);
        }
        // Profile sanity: strictly increasing x, h odd start, h' positive start.
        assert_eq!(orbit.profile.first().map(|r| (r.0, r.1)), Some((0.0, 0.0)));
        for w in orbit.profile.windows(2) {
            assert!(w[1].0 > w[0].0);
        }
        // f passes through the equator fixed point.
        let mid = orbit
            .f_profile
            .iter()
            .min_by(|a, b| {
                (a.0 - FRAC_PI_2).abs().total_cmp(&(b.0 - FRAC_PI_2).abs())
            })
            .unwrap();
        assert!((mid.1 - FRAC_PI_2).abs() < 1e-6);
        // Endpoint gap: f at the right end of the window is a multiple of pi.
        let (_, f_end) = *orbit.f_profile.last().unwrap();
        assert!((f_end - PI).abs() < 1e-5, "f end {f_end}");
        let (_, f_start) = *orbit.f_profile.first().unwrap();
        assert!(f_start.abs() < 1e-5, "f start {f_start}");
    }

    #[test]
    fn find_bn_validates_tolerance() {
        let m = p(3, 1.0, 1);
        assert!(find_bn(&m, 1, &cfg(), 0.0).is_err());
        assert!(find_bn(&m, 1, &cfg(), f64::NAN).is_err());
    }

    /// Hermite interpolation reproduces rows exactly and stays smooth
    /// between them.
    #[test]
    fn hermite_eval_reproduces_rows() {
        // y = sin x rows with exact derivatives.
        let rows: Vec<(f64, f64, f64)> =
            (0..=40).map(|i| {
                let x = 0.1 * i as f64;
                (x, x.sin(), x.cos())
            }).collect();
        for &(x, h, hp) in &rows {
            let (gh, ghp) = hermite_eval(&rows, x);
            assert!((gh - h).abs() < 1e-14);
            assert!((ghp - hp).abs() < 1e-12);
        }
        for i in 0..200 {
            let x = 4.0 * i as f64 / 200.0;
            let (gh, ghp) = hermite_eval(&rows, x);
            assert!((gh - x.sin()).abs() < 1e-6);
            assert!((ghp - x.cos()).abs() < 1e-4);
        }
    }
}
