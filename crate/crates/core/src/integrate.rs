//! Adaptive embedded Runge-Kutta 5(4) integration with continuous (dense)
//! output and event localization.
//!
//! The pair is the classic seven-stage first-same-as-last scheme of order
//! 5 with an embedded order-4 error estimate, a proportional-integral step
//! controller, and a quartic interpolant on every accepted step. Events are
//! scalar functions of (x, y) sampled on a five-point subgrid of each step
//! and refined to a tolerance by safeguarded bracketing on the interpolant;
//! a terminal event truncates the trajectory at the hit.
//!
//! The state dimension N is a const generic; the shooting layer uses N = 3
//! for (h, h', theta) and tests use N = 1 and 2.

use crate::{Error, Result};

/// Stage abscissae.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

/// Runge-Kutta matrix, row i holding the weights of stages 0..i.
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

/// Difference between the 5th and embedded 4th order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Coefficients of the quartic interpolant: the continuous extension is
/// y(x0 + t h) = y0 + h sum_s k_s sum_j P[s][j] t^{j+1}.
const P: [[f64; 4]; 7] = [
    [
        1.0,
        -8048581381.0 / 2820520608.0,
        8663915743.0 / 2820520608.0,
        -12715105075.0 / 11282082432.0,
    ],
    [0.0, 0.0, 0.0, 0.0],
    [
        0.0,
        131558114200.0 / 32700410799.0,
        -68118460800.0 / 10900136933.0,
        87487479700.0 / 32700410799.0,
    ],
    [
        0.0,
        -1754552775.0 / 470086768.0,
        14199869525.0 / 1410260304.0,
        -10690763975.0 / 1880347072.0,
    ],
    [
        0.0,
        127303824393.0 / 49829197408.0,
        -318862633887.0 / 49829197408.0,
        701980252875.0 / 199316789632.0,
    ],
    [
        0.0,
        -282668133.0 / 205662961.0,
        2019193451.0 / 616988883.0,
        -1453857185.0 / 822651844.0,
    ],
    [
        0.0,
        40617522.0 / 29380423.0,
        -110615467.0 / 29380423.0,
        69997945.0 / 29380423.0,
    ],
];

/// Controller: step exponent, integral gain, safety and clamp factors.
const EXPO1: f64 = 0.2 - 0.04 * 0.75;
const BETA: f64 = 0.04;
const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// Hard cap on accepted plus rejected steps per call.
const MAX_STEPS: usize = 5_000_000;

/// Event sampling points inside each accepted step.
const EVENT_SAMPLES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Tolerances and horizon for one integration run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    /// Relative tolerance per component.
    pub rel_tol: f64,
    /// Absolute tolerance per component.
    pub abs_tol: f64,
    /// Largest step the controller may take.
    pub max_step: f64,
    /// Right end of the integration interval.
    pub x_max: f64,
    /// Width to which event abscissae are refined.
    pub event_tol: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { rel_tol: 1e-10, abs_tol: 1e-12, max_step: 0.5, x_max: 30.0, event_tol: 1e-12 }
    }
}

impl IntegratorConfig {
    /// Same configuration with a different horizon.
    pub fn with_x_max(mut self, x_max: f64) -> Self {
        self.x_max = x_max;
        self
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("max_step", self.max_step),
            ("event_tol", self.event_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} = {v}, need a positive finite value")));
            }
        }
        if !self.x_max.is_finite() {
            return Err(Error::InvalidInput(format!("x_max = {} is not finite", self.x_max)));
        }
        Ok(())
    }
}

/// Which sign changes of an event function count as hits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Any,
    Rising,
    Falling,
}

/// Boxed event function g(x, y).
pub type EventFn<'a, const N: usize> = Box<dyn Fn(f64, &[f64; N]) -> f64 + 'a>;

/// A scalar event g(x, y); hits are sign changes of g along the trajectory.
pub struct EventSpec<'a, const N: usize> {
    pub direction: Direction,
    /// A terminal event stops the integration at its first hit.
    pub terminal: bool,
    pub g: EventFn<'a, N>,
}

impl<'a, const N: usize> EventSpec<'a, N> {
    pub fn new(
        direction: Direction,
        terminal: bool,
        g: impl Fn(f64, &[f64; N]) -> f64 + 'a,
    ) -> Self {
        Self { direction, terminal, g: Box::new(g) }
    }
}

/// A localized event: which spec fired, where, and the state there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventHit<const N: usize> {
    /// Index into the event slice passed to [`integrate`].
    pub event: usize,
    pub x: f64,
    pub y: [f64; N],
}

/// One accepted step's interpolant on [x0, x0 + h].
#[derive(Debug, Clone)]
pub struct DenseSegment<const N: usize> {
    pub x0: f64,
    pub h: f64,
    y0: [f64; N],
    /// Per component, coefficients of t, t^2, t^3, t^4.
    coeffs: [[f64; 4]; N],
}

impl<const N: usize> DenseSegment<N> {
    /// Evaluates the interpolant at the unit-interval coordinate t.
    fn eval_t(&self, t: f64) -> [f64; N] {
        let mut y = self.y0;
        for (yn, c) in y.iter_mut().zip(&self.coeffs) {
            // Horner in t, innermost coefficient first.
            let poly = t * (c[0] + t * (c[1] + t * (c[2] + t * c[3])));
            *yn += self.h * poly;
        }
        y
    }

    /// Evaluates the interpolant at the abscissa x (unchecked extrapolation
    /// outside [x0, x0 + h]).
    pub fn eval(&self, x: f64) -> [f64; N] {
        self.eval_t((x - self.x0) / self.h)
    }
}

/// Result of one integration run: accepted nodes, the interpolant chain,
/// localized events, and step statistics.
#[derive(Debug)]
pub struct Trajectory<const N: usize> {
    /// Accepted step endpoints (x, y), strictly increasing in x, starting
    /// at the initial point. A terminal event replaces the final node.
    pub nodes: Vec<(f64, [f64; N])>,
    /// One segment per accepted step, covering nodes pairwise.
    pub dense: Vec<DenseSegment<N>>,
    /// All localized event hits in increasing x.
    pub events: Vec<EventHit<N>>,
    /// Index of the terminating event spec if one fired.
    pub terminal_event: Option<usize>,
    pub n_accepted: usize,
    pub n_rejected: usize,
    pub n_rhs: usize,
}

impl<const N: usize> Trajectory<N> {
    pub fn x_start(&self) -> f64 {
        self.nodes.first().expect("trajectory has at least the initial node").0
    }

    pub fn x_end(&self) -> f64 {
        self.nodes.last().expect("trajectory has at least the initial node").0
    }

    pub fn y_end(&self) -> [f64; N] {
        self.nodes.last().expect("trajectory has at least the initial node").1
    }

    /// Dense evaluation at any x in [x_start, x_end]; None outside.
    pub fn eval(&self, x: f64) -> Option<[f64; N]> {
        if !(x >= self.x_start() && x <= self.x_end()) {
            return None;
        }
        if self.dense.is_empty() {
            return (x == self.x_start()).then(|| self.nodes[0].1);
        }
        // Binary search for the segment containing x.
        let idx = self
            .dense
            .partition_point(|seg| seg.x0 + seg.h < x)
            .min(self.dense.len() - 1);
        Some(self.dense[idx].eval(x))
    }
}

fn error_norm<const N: usize>(
    err: &[f64; N],
    y0: &[f64; N],
    y1: &[f64; N],
    rel: f64,
    abs: f64,
) -> f64 {
    let mut sum = 0.0;
    for n in 0..N {
        let scale = abs + rel * y0[n].abs().max(y1[n].abs());
        let q = err[n] / scale;
        sum += q * q;
    }
    (sum / N as f64).sqrt()
}

/// Classic starting-step heuristic based on the initial derivative and a
/// trial Euler step.
fn initial_step<const N: usize>(
    rhs: &impl Fn(f64, &[f64; N]) -> [f64; N],
    x0: f64,
    y0: &[f64; N],
    k1: &[f64; N],
    cfg: &IntegratorConfig,
) -> f64 {
    let span = cfg.x_max - x0;
    let sci = |y: &[f64; N], n: usize| cfg.abs_tol + cfg.rel_tol * y[n].abs();
    let mut d0 = 0.0f64;
    let mut d1 = 0.0f64;
    for n in 0..N {
        let s = sci(y0, n);
        d0 += (y0[n] / s).powi(2);
        d1 += (k1[n] / s).powi(2);
    }
    d0 = (d0 / N as f64).sqrt();
    d1 = (d1 / N as f64).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span).min(cfg.max_step);

    let mut y1 = *y0;
    for n in 0..N {
        y1[n] += h0 * k1[n];
    }
    let k2 = rhs(x0 + h0, &y1);
    let mut d2 = 0.0f64;
    for n in 0..N {
        let s = sci(y0, n);
        d2 += ((k2[n] - k1[n]) / s).powi(2);
    }
    d2 = (d2 / N as f64).sqrt() / h0;
    let dm = d1.max(d2);
    let h1 = if dm <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dm).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span).min(cfg.max_step)
}

/// Integrates y' = rhs(x, y) from (x0, y0) to config.x_max, or to the first
/// terminal event. Fails if the state stops being finite, the step
/// underflows, or the step budget is exhausted.
pub fn integrate<const N: usize>(
    rhs: impl Fn(f64, &[f64; N]) -> [f64; N],
    x0: f64,
    y0: [f64; N],
    config: &IntegratorConfig,
    events: &[EventSpec<'_, N>],
) -> Result<Trajectory<N>> {
    config.validate()?;
    if !(config.x_max > x0) {
        return Err(Error::InvalidInput(format!(
            "x_max = {} must exceed the start x = {x0}",
            config.x_max
        )));
    }
    if x0.is_nan() || y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite initial state".into()));
    }

    let mut traj = Trajectory {
        nodes: vec![(x0, y0)],
        dense: Vec::new(),
        events: Vec::new(),
        terminal_event: None,
        n_accepted: 0,
        n_rejected: 0,
        n_rhs: 0,
    };

    let mut x = x0;
    let mut y = y0;
    let mut k1 = rhs(x, &y);
    traj.n_rhs += 1;
    if k1.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { x });
    }

    // Event function values at the current node.
    let mut g_now: Vec<f64> = events.iter().map(|e| (e.g)(x, &y)).collect();

    let mut h = initial_step(&rhs, x, &y, &k1, config);
    traj.n_rhs += 1;
    let mut facold: f64 = 1e-4;

    loop {
        if traj.n_accepted + traj.n_rejected >= MAX_STEPS {
            return Err(Error::MaxStepsExceeded { x, max_steps: MAX_STEPS });
        }
        let h_floor = 16.0 * f64::EPSILON * x.abs().max(1.0);
        if h < h_floor {
            return Err(Error::StepSizeUnderflow { x, step: h });
        }
        let mut last = false;
        if x + h >= config.x_max {
            h = config.x_max - x;
            last = true;
        }

        // Stages 2..7; k7 is the derivative at the proposed endpoint (FSAL).
        let mut k = [[0.0; N]; 7];
        k[0] = k1;
        for s in 1..7 {
            let mut ys = y;
            for n in 0..N {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += A[s][j] * kj[n];
                }
                ys[n] += h * acc;
            }
            k[s] = rhs(x + C[s] * h, &ys);
        }
        traj.n_rhs += 6;
        // Fifth-order solution: its weights are row 6 of A, so stage 7 was
        // already evaluated at (x + h, y1) and serves as k1 of the next
        // step (first-same-as-last).
        let mut y1 = y;
        for n in 0..N {
            let acc = A[6][0] * k[0][n]
                + A[6][2] * k[2][n]
                + A[6][3] * k[3][n]
                + A[6][4] * k[4][n]
                + A[6][5] * k[5][n];
            y1[n] = y[n] + h * acc;
        }
        let k7 = k[6];

        let mut err = [0.0; N];
        for n in 0..N {
            let mut acc = 0.0;
            for s in 0..7 {
                acc += E[s] * k[s][n];
            }
            err[n] = h * acc;
        }

        let finite = y1.iter().all(|v| v.is_finite()) && err.iter().all(|v| v.is_finite());
        let err_norm = if finite {
            error_norm(&err, &y, &y1, config.rel_tol, config.abs_tol)
        } else {
            f64::INFINITY
        };

        if err_norm > 1.0 {
            // Rejected: shrink and retry.
            traj.n_rejected += 1;
            let fac = if finite {
                (SAFETY * err_norm.powf(-EXPO1)).max(FAC_MIN)
            } else {
                0.25
            };
            h *= fac.min(1.0);
            continue;
        }

        // Accepted: build the dense segment.
        traj.n_accepted += 1;
        let mut coeffs = [[0.0; 4]; N];
        for n in 0..N {
            for j in 0..4 {
                let mut acc = 0.0;
                for s in 0..7 {
                    acc += k[s][n] * P[s][j];
                }
                coeffs[n][j] = acc;
            }
        }
        let seg = DenseSegment { x0: x, h, y0: y, coeffs };

        // Localize events on this step.
        let mut step_hits: Vec<EventHit<N>> = Vec::new();
        let mut terminal_hit: Option<(usize, EventHit<N>)> = None;
        for (ie, ev) in events.iter().enumerate() {
            let mut t_lo = EVENT_SAMPLES[0];
            let mut g_lo = g_now[ie];
            for &t_hi in &EVENT_SAMPLES[1..] {
                let y_hi = seg.eval_t(t_hi);
                let g_hi = (ev.g)(x + t_hi * h, &y_hi);
                let crossed = g_lo * g_hi < 0.0 || (g_hi == 0.0 && g_lo != 0.0);
                if crossed {
                    let rising = g_lo < 0.0;
                    let wanted = match ev.direction {
                        Direction::Any => true,
                        Direction::Rising => rising,
                        Direction::Falling => !rising,
                    };
                    if wanted {
                        let (x_hit, y_hit) = bracket_on_segment(
                            &seg,
                            &ev.g,
                            (x + t_lo * h, g_lo),
                            (x + t_hi * h, g_hi),
                            config.event_tol,
                        );
                        let hit = EventHit { event: ie, x: x_hit, y: y_hit };
                        if ev.terminal {
                            let better = terminal_hit
                                .as_ref()
                                .is_none_or(|(_, prev)| x_hit < prev.x);
                            if better {
                                terminal_hit = Some((ie, hit));
                            }
                            break;
                        } else {
                            step_hits.push(hit);
                        }
                    }
                }
                t_lo = t_hi;
                g_lo = g_hi;
            }
        }

        match terminal_hit {
            Some((ie, hit)) => {
                // Record non-terminal hits that happened before it, then stop.
                step_hits.retain(|p| p.x <= hit.x);
                step_hits.sort_by(|p, q| p.x.total_cmp(&q.x));
                traj.events.extend(step_hits);
                traj.events.push(hit);
                traj.dense.push(seg);
                traj.nodes.push((hit.x, hit.y));
                traj.terminal_event = Some(ie);
                return Ok(traj);
            }
            None => {
                step_hits.sort_by(|p, q| p.x.total_cmp(&q.x));
                traj.events.extend(step_hits);
            }
        }

        traj.dense.push(seg);
        x += h;
        y = y1;
        k1 = k7;
        traj.nodes.push((x, y));
        for (ie, ev) in events.iter().enumerate() {
            g_now[ie] = (ev.g)(x, &y);
        }

        if last || x >= config.x_max {
            return Ok(traj);
        }

        // PI controller for the next step. max/min rather than clamp: a NaN
        // factor must land on a bound, not poison the step size.
        let err_n = err_norm.max(1e-32);
        let fac11 = err_n.powf(EXPO1);
        #[allow(clippy::manual_clamp)]
        let fac = (fac11 / facold.powf(BETA) / SAFETY).max(1.0 / FAC_MAX).min(1.0 / FAC_MIN);
        h = (h / fac).min(config.max_step);
        facold = err_n.max(1e-4);
        if k1.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { x });
        }
    }
}

/// Safeguarded bracketing on one dense segment: alternates a regula-falsi
/// proposal with interval halving, so it is never slower than bisection.
fn bracket_on_segment<const N: usize>(
    seg: &DenseSegment<N>,
    g: &(dyn Fn(f64, &[f64; N]) -> f64 + '_),
    lo: (f64, f64),
    hi: (f64, f64),
    tol: f64,
) -> (f64, [f64; N]) {
    let (mut x_lo, mut g_lo) = lo;
    let (mut x_hi, mut g_hi) = hi;
    let mut use_secant = true;
    while x_hi - x_lo > tol {
        let mid = if use_secant && g_hi != g_lo {
            let m = x_lo - g_lo * (x_hi - x_lo) / (g_hi - g_lo);
            // Keep strictly interior, else fall back to the midpoint.
            if m > x_lo && m < x_hi {
                m
            } else {
                0.5 * (x_lo + x_hi)
            }
        } else {
            0.5 * (x_lo + x_hi)
        };
        use_secant = !use_secant;
        if mid <= x_lo || mid >= x_hi {
            break; // interval at rounding resolution
        }
        let y_mid = seg.eval(mid);
        let g_mid = g(mid, &y_mid);
        if g_mid == 0.0 {
            return (mid, y_mid);
        }
        if (g_lo < 0.0) == (g_mid < 0.0) {
            x_lo = mid;
            g_lo = g_mid;
        } else {
            x_hi = mid;
            g_hi = g_mid;
        }
    }
    // Report the endpoint on the far side of the crossing.
    (x_hi, seg.eval(x_hi))
}

/// Refines an event abscissa inside an existing trajectory by safeguarded
/// bracketing on its dense output. The bracket must either have zero width
/// (returns the evaluated point) or contain a sign change of g.
pub fn refine_event<const N: usize>(
    traj: &Trajectory<N>,
    event: &EventSpec<'_, N>,
    bracket: (f64, f64),
    event_tol: f64,
) -> Result<(f64, [f64; N])> {
    let (lo, hi) = bracket;
    if !(lo <= hi) {
        return Err(Error::InvalidInput(format!("bracket [{lo}, {hi}] is not ordered")));
    }
    if !(event_tol > 0.0) {
        return Err(Error::InvalidInput(format!("event_tol = {event_tol}, need > 0")));
    }
    let y_lo = traj
        .eval(lo)
        .ok_or_else(|| Error::InvalidInput(format!("{lo} outside the trajectory span")))?;
    if lo == hi {
        return Ok((lo, y_lo));
    }
    let y_hi = traj
        .eval(hi)
        .ok_or_else(|| Error::InvalidInput(format!("{hi} outside the trajectory span")))?;
    let g_lo = (event.g)(lo, &y_lo);
    let g_hi = (event.g)(hi, &y_hi);
    if g_lo == 0.0 {
        return Ok((lo, y_lo));
    }
    if g_hi == 0.0 {
        return Ok((hi, y_hi));
    }
    if g_lo * g_hi > 0.0 {
        return Err(Error::NoSignChange { lo, hi });
    }

    let (mut x_lo, mut g_lo) = (lo, g_lo);
    let (mut x_hi, mut g_hi) = (hi, g_hi);
    let mut use_secant = true;
    while x_hi - x_lo > event_tol {
        let mid = if use_secant && g_hi != g_lo {
            let m = x_lo - g_lo * (x_hi - x_lo) / (g_hi - g_lo);
            if m > x_lo && m < x_hi {
                m
            } else {
                0.5 * (x_lo + x_hi)
            }
        } else {
            0.5 * (x_lo + x_hi)
        };
        use_secant = !use_secant;
        if mid <= x_lo || mid >= x_hi {
            break;
        }
        let y_mid = traj.eval(mid).expect("midpoint stays inside the bracket");
        let g_mid = (event.g)(mid, &y_mid);
        if g_mid == 0.0 {
            return Ok((mid, y_mid));
        }
        if (g_lo < 0.0) == (g_mid < 0.0) {
            x_lo = mid;
            g_lo = g_mid;
        } else {
            x_hi = mid;
            g_hi = g_mid;
        }
    }
    let y = traj.eval(x_hi).expect("refined point stays inside the trajectory");
    Ok((x_hi, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(rel: f64, abs: f64) -> IntegratorConfig {
        IntegratorConfig { rel_tol: rel, abs_tol: abs, ..Default::default() }
    }

    #[test]
    fn config_validation() {
        let c = IntegratorConfig { rel_tol: 0.0, ..IntegratorConfig::default() };
        assert!(integrate(|_, y: &[f64; 1]| *y, 0.0, [1.0], &c, &[]).is_err());
        let c = IntegratorConfig { x_max: -1.0, ..IntegratorConfig::default() };
        assert!(integrate(|_, y: &[f64; 1]| *y, 0.0, [1.0], &c, &[]).is_err());
        let c = IntegratorConfig::default();
        assert!(integrate(|_, y: &[f64; 1]| *y, 0.0, [f64::NAN], &c, &[]).is_err());
    }

    #[test]
    fn exponential_decay_to_high_accuracy() {
        let c = IntegratorConfig { x_max: 5.0, ..cfg(1e-10, 1e-12) };
        let traj = integrate(|_, y: &[f64; 1]| [-y[0]], 0.0, [1.0], &c, &[]).unwrap();
        let want = (-5.0f64).exp();
        assert!((traj.y_end()[0] - want).abs() < 1e-9);
        assert_eq!(traj.x_end(), 5.0);
        assert_eq!(traj.nodes.len(), traj.dense.len() + 1);
        // Nodes strictly increasing.
        for w in traj.nodes.windows(2) {
            assert!(w[1].0 > w[0].0);
        }
    }

    #[test]
    fn harmonic_oscillator_energy_drift_is_tiny() {
        let c = IntegratorConfig { x_max: 20.0 * std::f64::consts::PI, ..cfg(1e-11, 1e-13) };
        let traj =
            integrate(|_, y: &[f64; 2]| [y[1], -y[0]], 0.0, [1.0, 0.0], &c, &[]).unwrap();
        let [q, p] = traj.y_end();
        let energy = q * q + p * p;
        assert!((energy - 1.0).abs() < 1e-8, "energy drift {}", energy - 1.0);
        assert!((q - 1.0).abs() < 1e-7);
        assert!(p.abs() < 1e-7);
    }

    /// Dense output must reproduce step endpoints exactly and stay within
    /// an order of the local tolerance in the interior of each step.
    #[test]
    fn dense_output_matches_nodes_and_interior() {
        let c = IntegratorConfig { x_max: 3.0, ..cfg(1e-9, 1e-11) };
        let traj = integrate(|x, y: &[f64; 1]| [y[0] * x.cos()], 0.0, [1.0], &c, &[]).unwrap();
        for &(xn, yn) in &traj.nodes {
            let via_dense = traj.eval(xn).unwrap();
            assert!(
                (via_dense[0] - yn[0]).abs() <= 1e-12 * yn[0].abs().max(1.0),
                "endpoint reproduction at x = {xn}"
            );
        }
        // Exact solution e^{sin x} on a fine grid. The quartic interpolant
        // is one order below the node accuracy, so interior error runs a
        // couple of decades above the step tolerance.
        for i in 0..=300 {
            let x = 3.0 * i as f64 / 300.0;
            let got = traj.eval(x).unwrap()[0];
            let want = x.sin().exp();
            assert!((got - want).abs() < 5e-8, "x = {x}: {got} vs {want}");
        }
        assert!(traj.eval(-0.1).is_none());
        assert!(traj.eval(3.0 + 1e-9).is_none());
    }

    /// Fixed-step order check: with tolerances wide open the controller
    /// sits at max_step, and halving max_step must cut the global error by
    /// about 2^5. Requires empirical order at least 4.
    #[test]
    fn empirical_order_on_step_ladder() {
        let err_at = |hmax: f64| -> f64 {
            let c = IntegratorConfig {
                rel_tol: 10.0,
                abs_tol: 10.0,
                max_step: hmax,
                x_max: 2.0,
                event_tol: 1e-12,
            };
            let traj =
                integrate(|x, y: &[f64; 1]| [y[0] * x.cos()], 0.0, [1.0], &c, &[]).unwrap();
            (traj.y_end()[0] - 2.0f64.sin().exp()).abs()
        };
        let e1 = err_at(0.2);
        let e2 = err_at(0.1);
        let e3 = err_at(0.05);
        let p12 = (e1 / e2).log2();
        let p23 = (e2 / e3).log2();
        assert!(p12 > 4.0, "order between h=0.2 and 0.1: {p12} (e1={e1:e}, e2={e2:e})");
        assert!(p23 > 4.0, "order between h=0.1 and 0.05: {p23} (e2={e2:e}, e3={e3:e})");
    }

    /// Tightening tolerances tightens the answer monotonically down to the
    /// documented default accuracy.
    #[test]
    fn tolerance_ladder_converges() {
        let run = |rel: f64| -> f64 {
            let c = IntegratorConfig { x_max: 5.0, ..cfg(rel, rel * 1e-2) };
            let traj = integrate(|_, y: &[f64; 1]| [-y[0]], 0.0, [1.0], &c, &[]).unwrap();
            (traj.y_end()[0] - (-5.0f64).exp()).abs()
        };
        let errs: Vec<f64> = [1e-4, 1e-6, 1e-8, 1e-10].iter().map(|&r| run(r)).collect();
        for w in errs.windows(2) {
            assert!(w[1] < w[0] * 1.5, "ladder not improving: {errs:?}");
        }
        assert!(errs[3] < 1e-9, "default-accuracy target missed: {errs:?}");
    }

    #[test]
    fn event_localization_cosine_zeros() {
        // y = cos x crosses zero falling at pi/2 and rising at 3 pi/2.
        let c = IntegratorConfig { x_max: 7.0, ..cfg(1e-10, 1e-12) };
        let ev = EventSpec::new(Direction::Any, false, |_, y: &[f64; 2]| y[0]);
        let traj =
            integrate(|_, y: &[f64; 2]| [y[1], -y[0]], 0.0, [1.0, 0.0], &c, &[ev]).unwrap();
        let zeros: Vec<f64> = traj.events.iter().map(|e| e.x).collect();
        assert_eq!(zeros.len(), 2, "zeros found: {zeros:?}");
        assert!((zeros[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-10);
        assert!((zeros[1] - 3.0 * std::f64::consts::FRAC_PI_2).abs() < 1e-10);
        assert!(traj.terminal_event.is_none());
    }

    #[test]
    fn direction_filters_select_crossings() {
        let c = IntegratorConfig { x_max: 7.0, ..cfg(1e-10, 1e-12) };
        let rising = EventSpec::new(Direction::Rising, false, |_, y: &[f64; 2]| y[0]);
        let traj =
            integrate(|_, y: &[f64; 2]| [y[1], -y[0]], 0.0, [1.0, 0.0], &c, &[rising]).unwrap();
        assert_eq!(traj.events.len(), 1);
        assert!((traj.events[0].x - 3.0 * std::f64::consts::FRAC_PI_2).abs() < 1e-10);

        let falling = EventSpec::new(Direction::Falling, false, |_, y: &[f64; 2]| y[0]);
        let traj =
            integrate(|_, y: &[f64; 2]| [y[1], -y[0]], 0.0, [1.0, 0.0], &c, &[falling]).unwrap();
        assert_eq!(traj.events.len(), 1);
        assert!((traj.events[0].x - std::f64::consts::FRAC_PI_2).abs() < 1e-10);
    }

    #[test]
    fn terminal_event_truncates() {
        let c = IntegratorConfig { x_max: 100.0, ..cfg(1e-10, 1e-12) };
        let stop = EventSpec::new(Direction::Falling, true, |_, y: &[f64; 2]| y[0]);
        let traj =
            integrate(|_, y: &[f64; 2]| [y[1], -y[0]], 0.0, [1.0, 0.0], &c, &[stop]).unwrap();
        assert_eq!(traj.terminal_event, Some(0));
        assert!((traj.x_end() - std::f64::consts::FRAC_PI_2).abs() < 1e-10);
        assert!(traj.y_end()[0].abs() < 1e-10);
        // The final node is the event point.
        assert_eq!(traj.events.last().unwrap().x, traj.x_end());
    }

    /// An event that is zero at the start point must not fire there.
    #[test]
    fn start_point_zero_is_not_a_hit() {
        let c = IntegratorConfig { x_max: 4.0, ..cfg(1e-10, 1e-12) };
        let ev = EventSpec::new(Direction::Any, false, |_, y: &[f64; 2]| y[0]);
        // y = sin x: zero at x = 0 (start, not a hit) and x = pi (a hit).
        let traj =
            integrate(|_, y: &[f64; 2]| [y[1], -y[0]], 0.0, [0.0, 1.0], &c, &[ev]).unwrap();
        assert_eq!(traj.events.len(), 1);
        assert!((traj.events[0].x - std::f64::consts::PI).abs() < 1e-10);
    }

    #[test]
    fn refine_event_brackets_and_errors() {
        let c = IntegratorConfig { x_max: 4.0, ..cfg(1e-10, 1e-12) };
        let traj =
            integrate(|_, y: &[f64; 2]| [y[1], -y[0]], 0.0, [1.0, 0.0], &c, &[]).unwrap();
        let ev = EventSpec::new(Direction::Any, false, |_, y: &[f64; 2]| y[0]);
        // Genuine bracket around pi/2. The located root is the root of the
        // interpolant, which sits within its interior accuracy of the truth.
        let (x, y) = refine_event(&traj, &ev, (1.0, 2.0), 1e-13).unwrap();
        assert!((x - std::f64::consts::FRAC_PI_2).abs() < 1e-11);
        assert!(y[0].abs() < 1e-12);
        // Degenerate bracket returns the point itself.
        let (x, _) = refine_event(&traj, &ev, (1.25, 1.25), 1e-13).unwrap();
        assert_eq!(x, 1.25);
        // No sign change.
        assert!(matches!(
            refine_event(&traj, &ev, (0.1, 0.5), 1e-13),
            Err(Error::NoSignChange { .. })
        ));
        // Outside the span.
        assert!(refine_event(&traj, &ev, (3.9, 4.5), 1e-13).is_err());
    }

    #[test]
    fn blow_up_is_reported_not_hung() {
        // y' = 1 + y^2 blows up at pi/2 - atan(0) = pi/2.
        let c = IntegratorConfig { x_max: 3.0, ..cfg(1e-10, 1e-12) };
        let r = integrate(|_, y: &[f64; 1]| [1.0 + y[0] * y[0]], 0.0, [0.0], &c, &[]);
        match r {
            Err(Error::StepSizeUnderflow { x, .. }) | Err(Error::NonFiniteState { x }) => {
                assert!((x - std::f64::consts::FRAC_PI_2).abs() < 0.01);
            }
            other => panic!("expected a blow-up error, got {other:?}"),
        }
    }

    #[test]
    fn max_step_is_respected() {
        let c = IntegratorConfig {
            rel_tol: 1.0,
            abs_tol: 1.0,
            max_step: 0.125,
            x_max: 1.0,
            event_tol: 1e-12,
        };
        let traj = integrate(|_, y: &[f64; 1]| [-y[0]], 0.0, [1.0], &c, &[]).unwrap();
        for w in traj.nodes.windows(2) {
            assert!(w[1].0 - w[0].0 <= 0.125 + 1e-12);
        }
    }
}
