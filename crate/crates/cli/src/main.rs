//! Command-line driver: validates parameters, runs the solver suite, and
//! persists results as JSON and plot-ready CSV.
//!
//! Exit codes: 0 success, 1 verification failure, 2 invalid parameters,
//! 3 numerical non-convergence.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ellipsoid_maps::integrate::IntegratorConfig;
use ellipsoid_maps::model::{self, ModelParams, PhaseState, PsiState};
use ellipsoid_maps::shooting::{self, ConnectingOrbit};
use ellipsoid_maps::spectral;
use ellipsoid_maps::Error;

/// Environment variable naming the default output directory.
const OUT_DIR_ENV: &str = "ELLIPSOID_MAPS_OUT";

/// Serialized artifacts carry this schema marker.
const SCHEMA_VERSION: u32 = 1;

/// Profile CSV rows are capped here; event rows always survive the cut.
const MAX_CSV_ROWS: usize = 5000;

/// Random states drawn by the chart-consistency verification.
const VERIFY_CHART_STATES: usize = 200;

/// Random shots drawn by the Lyapunov verification.
const VERIFY_SHOTS: usize = 24;

#[derive(Parser)]
#[command(
    name = "ellipsoid-maps",
    version,
    about = "Equivariant harmonic self-maps of ellipsoids by shooting",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the invariant battery for one parameter set and report PASS/FAIL.
    Verify(CommonArgs),
    /// Converge the n-th connecting orbit and write its JSON and CSV.
    Solve(SolveArgs),
    /// Classify shots on a logarithmic slope grid and write a CSV.
    Scan(ScanArgs),
    /// Report the oscillation threshold and characteristic roots.
    Regime(CommonArgs),
    /// Solve the lowest Jacobi eigenvalue about the identity map.
    Stability(StabilityArgs),
    /// Converge the family n = 1..n_max and print a summary table.
    Family(FamilyArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Ambient dimension of the ellipsoid, k >= 3.
    #[arg(long, default_value_t = 3)]
    k: u32,
    /// Semi-axis parameter of E_a.
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    /// Equatorial eigenmap degree.
    #[arg(long, default_value_t = 1)]
    d: u32,
    /// Integration horizon.
    #[arg(long, default_value_t = 30.0)]
    x_max: f64,
    /// Relative integrator tolerance.
    #[arg(long, default_value_t = 1e-10)]
    rtol: f64,
    /// Absolute integrator tolerance.
    #[arg(long, default_value_t = 1e-12)]
    atol: f64,
    /// Relative slope tolerance for bisection.
    #[arg(long, default_value_t = shooting::DEFAULT_B_TOL)]
    b_tol: f64,
    /// Output directory (falls back to ELLIPSOID_MAPS_OUT, then ".").
    #[arg(long)]
    out: Option<PathBuf>,
    /// Which artifacts to write.
    #[arg(long, value_enum, default_value_t = Format::Both)]
    format: Format,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Family index of the orbit to converge.
    #[arg(long, default_value_t = 1)]
    n: usize,
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Smallest slope of the logarithmic grid.
    #[arg(long, default_value_t = 1e-6)]
    b_min: f64,
    /// Largest slope; defaults to sqrt(lambda).
    #[arg(long)]
    b_max: Option<f64>,
    /// Number of grid points.
    #[arg(long, default_value_t = 25)]
    b_count: usize,
}

#[derive(Args)]
struct StabilityArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Half-width of the symmetric grid.
    #[arg(long, default_value_t = 12.0)]
    x_half: f64,
    /// Number of interior grid nodes.
    #[arg(long, default_value_t = 6000)]
    m: usize,
}

#[derive(Args)]
struct FamilyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Largest family index to converge.
    #[arg(long, default_value_t = 2)]
    n_max: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Both,
}

/// A command failure carrying its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn invalid(message: String) -> Self {
        Failure { code: 2, message }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidInput(_) => 2,
            _ => 3,
        };
        Failure { code, message: e.to_string() }
    }
}

/// Everything a command needs: validated parameters, integrator settings,
/// and output plumbing.
struct RunConfig {
    params: ModelParams,
    integrator: IntegratorConfig,
    b_tol: f64,
    out_dir: PathBuf,
    format: Format,
}

impl RunConfig {
    fn build(args: &CommonArgs) -> Result<Self, Failure> {
        let params = ModelParams::new(args.k, args.a, args.d)?;
        for (name, v) in [("rtol", args.rtol), ("atol", args.atol)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Failure::invalid(format!("{name} = {v}, need a positive finite value")));
            }
        }
        if !(args.x_max.is_finite() && args.x_max > 0.0) {
            return Err(Failure::invalid(format!("x_max = {}, need a positive horizon", args.x_max)));
        }
        let integrator = IntegratorConfig {
            rel_tol: args.rtol,
            abs_tol: args.atol,
            x_max: args.x_max,
            ..IntegratorConfig::default()
        };
        if !(args.b_tol.is_finite() && args.b_tol > 0.0) {
            return Err(Failure::invalid(format!("b_tol = {}, need a positive width", args.b_tol)));
        }
        let out_dir = args
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(RunConfig {
            params,
            integrator,
            b_tol: args.b_tol,
            out_dir,
            format: args.format,
        })
    }
}

#[derive(Serialize)]
struct Provenance {
    tool: &'static str,
    version: &'static str,
    rtol: f64,
    atol: f64,
    b_tol: f64,
    x_max: f64,
    timestamp_unix_s: u64,
    wall_ms: u64,
}

/// The persisted form of a converged orbit.
#[derive(Serialize)]
struct SolutionRecord<'a> {
    schema_version: u32,
    params: ParamsBlock,
    provenance: Provenance,
    orbit: &'a ConnectingOrbit,
}

#[derive(Serialize)]
struct ParamsBlock {
    k: u32,
    a: f64,
    d: u32,
    lambda: f64,
    a_crit_sq_num: u64,
    a_crit_sq_den: u64,
}

impl ParamsBlock {
    fn new(p: &ModelParams) -> Self {
        let (num, den) = p.a_crit_sq_rational();
        ParamsBlock { k: p.k, a: p.a, d: p.d, lambda: p.lambda, a_crit_sq_num: num, a_crit_sq_den: den }
    }
}

fn main() -> ExitCode {
    // Restore default SIGPIPE so a closed pipe (| head, | grep -q) kills the
    // process quietly instead of panicking mid-print.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Verify(args) => cmd_verify(args),
        Cmd::Solve(args) => cmd_solve(args),
        Cmd::Scan(args) => cmd_scan(args),
        Cmd::Regime(args) => cmd_regime(args),
        Cmd::Stability(args) => cmd_stability(args),
        Cmd::Family(args) => cmd_family(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Simple xorshift generator; keeps the verification battery free of
/// external randomness while still sweeping the state space.
struct SplitMix(u64);

impl SplitMix {
    fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z = z ^ (z >> 31);
        (z >> 11) as f64 / (1u64 << 53) as f64
    }

    fn in_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

fn cmd_verify(args: &CommonArgs) -> Result<(), Failure> {
    let cfg = RunConfig::build(args)?;
    let p = &cfg.params;
    let mut rows: Vec<(&str, bool, String)> = Vec::new();

    // Identity profile must solve the equation (d = 1 families only).
    if p.d == 1 {
        let mut sup = 0.0f64;
        for i in 0..=3000 {
            let x = -15.0 + 0.01 * i as f64;
            let s = model::identity_profile(x);
            let (_, hpp) = model::rhs_x(p, s)?;
            let sech = 1.0 / x.cosh();
            sup = sup.max((hpp + sech * x.tanh()).abs());
        }
        rows.push(("identity residual", sup <= 1e-9, format!("sup {sup:.3e} (<= 1e-9)")));
    } else {
        rows.push(("identity residual", true, "skipped: defined for d = 1".into()));
    }

    // Lyapunov monotonicity and growth along random shots.
    let mut rng = SplitMix(0x1dead);
    let mut worst_inc = f64::INFINITY;
    let mut worst_excess = 0.0f64;
    for _ in 0..VERIFY_SHOTS {
        let b = rng.in_range(1e-3, 1.2 * p.lambda.sqrt());
        let rec = shooting::shoot(p, b, &cfg.integrator)?;
        let (min_inc, max_excess) = shooting::lyapunov_law_slack(p, &rec);
        worst_inc = worst_inc.min(min_inc);
        worst_excess = worst_excess.max(max_excess);
    }
    rows.push((
        "lyapunov laws",
        worst_inc >= -1e-9 && worst_excess <= 1e-8,
        format!("min step {worst_inc:.2e}, bound excess {worst_excess:.2e}"),
    ));

    // Both chart equations agree through the transport.
    let mut worst_rel = 0.0f64;
    for _ in 0..VERIFY_CHART_STATES {
        let psi = rng.in_range(0.05, PI - 0.05);
        let st = PsiState {
            psi,
            f: FRAC_PI_2 + rng.in_range(-1.5, 1.5),
            fp: rng.in_range(-3.0, 3.0),
        };
        let (_, fpp) = model::rhs_psi(p, st)?;
        let xs = model::psi_state_to_x(st)?;
        let (_, hpp) = model::rhs_x(p, xs)?;
        let transported = fpp * psi.sin() * psi.sin() + st.fp * psi.sin() * psi.cos();
        let rel = (hpp - transported).abs() / hpp.abs().max(transported.abs()).max(1e-12);
        worst_rel = worst_rel.max(rel);
    }
    rows.push((
        "chart consistency",
        worst_rel <= 1e-10,
        format!("worst rel {worst_rel:.2e} (<= 1e-10)"),
    ));

    // Lowest Jacobi eigenvalue about the identity map (d = 1 only).
    if p.d == 1 {
        let rep = spectral::lowest_eigenvalue(p, 12.0, 3000)?;
        let rel = ((rep.lambda_numeric - rep.lambda_analytic) / rep.lambda_analytic).abs();
        rows.push((
            "jacobi eigenvalue",
            rel <= 1e-3,
            format!(
                "numeric {:.6} vs a^2(2-k) = {:.6}, rel {rel:.2e}",
                rep.lambda_numeric, rep.lambda_analytic
            ),
        ));
    } else {
        rows.push(("jacobi eigenvalue", true, "skipped: defined for d = 1".into()));
    }

    println!("verification of k = {}, a = {}, d = {}", p.k, p.a, p.d);
    let mut all_pass = true;
    for (name, pass, detail) in &rows {
        all_pass &= pass;
        println!("  {:<20} {:<4}  {detail}", name, if *pass { "PASS" } else { "FAIL" });
    }
    if all_pass {
        Ok(())
    } else {
        Err(Failure { code: 1, message: "verification failed".into() })
    }
}

fn cmd_solve(args: &SolveArgs) -> Result<(), Failure> {
    let cfg = RunConfig::build(&args.common)?;
    if args.n < 1 {
        return Err(Failure::invalid(format!("n = {}, need n >= 1", args.n)));
    }
    let started = Instant::now();
    let orbit = shooting::find_bn(&cfg.params, args.n, &cfg.integrator, cfg.b_tol)?;
    print_orbit_summary(&orbit);
    write_solution(&cfg, &orbit, started)?;
    Ok(())
}

fn cmd_family(args: &FamilyArgs) -> Result<(), Failure> {
    let cfg = RunConfig::build(&args.common)?;
    if args.n_max < 1 {
        return Err(Failure::invalid(format!("n_max = {}, need n_max >= 1", args.n_max)));
    }
    let mut summary = Vec::new();
    for n in 1..=args.n_max {
        let started = Instant::now();
        let orbit = shooting::find_bn(&cfg.params, n, &cfg.integrator, cfg.b_tol)?;
        write_solution(&cfg, &orbit, started)?;
        summary.push((n, orbit.b_n, orbit.omega, orbit.energy.value));
    }
    println!("{:>3} {:>22} {:>12} {:>18}", "n", "b_n", "omega", "energy");
    for (n, b, omega, energy) in summary {
        println!("{n:>3} {b:>22.16} {omega:>12.6} {energy:>18.12}");
    }
    Ok(())
}

fn cmd_scan(args: &ScanArgs) -> Result<(), Failure> {
    let cfg = RunConfig::build(&args.common)?;
    if args.b_count < 2 {
        return Err(Failure::invalid(format!("b_count = {}, need at least 2", args.b_count)));
    }
    let b_max = args.b_max.unwrap_or_else(|| cfg.params.lambda.sqrt());
    if !(args.b_min > 0.0 && b_max > args.b_min) {
        return Err(Failure::invalid(format!(
            "slope grid [{}, {b_max}] is not an increasing positive range",
            args.b_min
        )));
    }

    let mut csv = String::from("b,class,zero_count,omega\n");
    let mut table = Vec::new();
    for i in 0..args.b_count {
        let t = i as f64 / (args.b_count - 1) as f64;
        let b = args.b_min.powf(1.0 - t) * b_max.powf(t);
        let rec = shooting::shoot(&cfg.params, b, &cfg.integrator)?;
        let class = format!("{:?}", rec.orbit_class.tag);
        let _ = writeln!(csv, "{b},{class},{},{}", rec.orbit_class.zero_count, rec.omega);
        table.push((b, class, rec.orbit_class.zero_count, rec.omega));
    }

    let path = cfg.out_dir.join(format!(
        "scan_k{}_a{}_d{}.csv",
        cfg.params.k, cfg.params.a, cfg.params.d
    ));
    write_atomic(&path, csv.as_bytes())?;
    for (b, class, zeros, omega) in table {
        println!("b = {b:<24.16e} {class:<9} zeros = {zeros:<3} omega = {omega:.6}");
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_regime(args: &CommonArgs) -> Result<(), Failure> {
    let cfg = RunConfig::build(args)?;
    let p = &cfg.params;
    let rep = spectral::regime_classify(p);
    let (num, den) = p.a_crit_sq_rational();
    println!("k = {}, a = {}, d = {}", p.k, p.a, p.d);
    println!("a^2 = {}", p.a_sq());
    println!("threshold a_crit^2 = {num}/{den} = {}", p.a_crit_sq);
    println!("discriminant = {}", rep.discriminant);
    println!("regime = {:?}", rep.regime);
    println!("alpha_plus = {}", rep.alpha_plus);
    println!("alpha_minus = {}", rep.alpha_minus);
    Ok(())
}

fn cmd_stability(args: &StabilityArgs) -> Result<(), Failure> {
    let cfg = RunConfig::build(&args.common)?;
    let rep = spectral::lowest_eigenvalue(&cfg.params, args.x_half, args.m)?;
    let rel = ((rep.lambda_numeric - rep.lambda_analytic) / rep.lambda_analytic).abs();
    println!("lowest Jacobi eigenvalue about the identity map");
    println!("  closed form a^2(2-k) = {}", rep.lambda_analytic);
    println!("  numeric              = {}", rep.lambda_numeric);
    println!("  relative error       = {rel:.3e}");
    println!("  eigenpair residual   = {:.3e}", rep.eigfn_residual);
    println!("  next eigenvalues     = {}, {}", rep.lambda_exploratory[0], rep.lambda_exploratory[1]);
    println!("  grid: x in [-{}, {}], {} interior nodes", rep.x_half, rep.x_half, rep.m);
    if rep.lambda_numeric < 0.0 {
        println!("  identity map is unstable (negative eigenvalue)");
    }

    if matches!(cfg.format, Format::Json | Format::Both) {
        let path = cfg.out_dir.join(format!(
            "stability_k{}_a{}_d{}.json",
            cfg.params.k, cfg.params.a, cfg.params.d
        ));
        let body = serde_json::to_string_pretty(&rep).expect("report serializes");
        write_atomic(&path, body.as_bytes())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn print_orbit_summary(orbit: &ConnectingOrbit) {
    println!("b_{} = {:.16}", orbit.n, orbit.b_n);
    println!("omega = {:.6} (expected {:.1})", orbit.omega, orbit.n as f64 - 0.5);
    println!(
        "energy = {:.12} (tail remainder {:.2e})",
        orbit.energy.value, orbit.energy.tail_remainder
    );
    println!("tail_rate = {:.6}", orbit.tail_rate);
}

/// Writes the JSON and/or CSV artifacts for one converged orbit.
fn write_solution(cfg: &RunConfig, orbit: &ConnectingOrbit, started: Instant) -> Result<(), Failure> {
    let stem = format!(
        "solution_k{}_a{}_d{}_n{}",
        cfg.params.k, cfg.params.a, cfg.params.d, orbit.n
    );
    if matches!(cfg.format, Format::Json | Format::Both) {
        let record = SolutionRecord {
            schema_version: SCHEMA_VERSION,
            params: ParamsBlock::new(&cfg.params),
            provenance: Provenance {
                tool: "ellipsoid-maps",
                version: env!("CARGO_PKG_VERSION"),
                rtol: cfg.integrator.rel_tol,
                atol: cfg.integrator.abs_tol,
                b_tol: cfg.b_tol,
                x_max: cfg.integrator.x_max,
                timestamp_unix_s: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
                wall_ms: started.elapsed().as_millis() as u64,
            },
            orbit,
        };
        let body = serde_json::to_string_pretty(&record).expect("record serializes");
        let path = cfg.out_dir.join(format!("{stem}.json"));
        write_atomic(&path, body.as_bytes())?;
        println!("wrote {}", path.display());
    }
    if matches!(cfg.format, Format::Csv | Format::Both) {
        let path = cfg.out_dir.join(format!("{stem}.csv"));
        write_atomic(&path, profile_csv(&cfg.params, orbit).as_bytes())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Renders the orbit profile as `x,h,hp,W,theta` rows followed by a
/// `psi,f` block, downsampled to the row cap with sign-change rows kept.
fn profile_csv(params: &ModelParams, orbit: &ConnectingOrbit) -> String {
    let thetas = unwrap_theta(&orbit.profile);
    let keep = sign_change_rows(&orbit.profile);
    let idx = downsample_indices(orbit.profile.len(), MAX_CSV_ROWS, &keep);

    let mut csv = String::from("x,h,hp,W,theta\n");
    for &i in &idx {
        let (x, h, hp) = orbit.profile[i];
        let w = model::lyapunov(params, PhaseState { x, h, hp });
        let _ = writeln!(csv, "{x},{h},{hp},{w},{}", thetas[i]);
    }

    let keep_f = BTreeSet::new();
    let idx_f = downsample_indices(orbit.f_profile.len(), MAX_CSV_ROWS, &keep_f);
    csv.push_str("psi,f\n");
    for &i in &idx_f {
        let (psi, f) = orbit.f_profile[i];
        let _ = writeln!(csv, "{psi},{f}");
    }
    csv
}

/// Continuous phase angle along the stored profile, starting at pi/2.
fn unwrap_theta(profile: &[(f64, f64, f64)]) -> Vec<f64> {
    let mut out = Vec::with_capacity(profile.len());
    let mut prev = FRAC_PI_2;
    for &(_, h, hp) in profile {
        let mut th = hp.atan2(h);
        while th - prev > PI {
            th -= 2.0 * PI;
        }
        while prev - th > PI {
            th += 2.0 * PI;
        }
        out.push(th);
        prev = th;
    }
    out
}

/// Rows adjacent to a sign change of h (the orbit's zero crossings).
fn sign_change_rows(profile: &[(f64, f64, f64)]) -> BTreeSet<usize> {
    let mut keep = BTreeSet::new();
    for i in 1..profile.len() {
        if profile[i - 1].1.signum() != profile[i].1.signum() {
            keep.insert(i - 1);
            keep.insert(i);
        }
    }
    keep
}

/// Row indices after capping: an even stride plus the protected rows and
/// both endpoints.
fn downsample_indices(len: usize, cap: usize, keep: &BTreeSet<usize>) -> Vec<usize> {
    if len <= cap {
        return (0..len).collect();
    }
    let budget = cap.saturating_sub(keep.len()).max(2);
    let stride = len.div_ceil(budget);
    let mut idx: BTreeSet<usize> = (0..len).step_by(stride).collect();
    idx.insert(len - 1);
    idx.extend(keep.iter().copied());
    idx.into_iter().collect()
}

/// Writes through a temporary sibling then renames, so readers never see a
/// half-written artifact.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::invalid(format!("cannot create {}: {e}", dir.display())))?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)
        .map_err(|e| Failure::invalid(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| Failure::invalid(format!("cannot move into {}: {e}", path.display())))?;
    Ok(())
}
