mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ctprice::dispatch::solve_scenario;
use ctprice::market_model::{load_scenario, CostFunction, DuckParams, LoadDoc, ScenarioDoc, Unit};
use ctprice::pricing::{aggregate_hourly, euler_lagrange_residual, price_formula};
use ctprice::qp_solver::SolverSettings;
use ctprice::trajectory::{Horizon, Mesh, Scheme, Trajectory};
use ctprice::verify::{
    cross_scheme_check, kkt_check, perturbation_check, refinement_study, PerturbationSpec,
    Reference, RefinementOptions, VerificationReport,
};
use serde::Deserialize;

#[derive(Parser)]
#[command(
    name = "ctprice",
    version,
    about = "Continuous-time dispatch and marginal prices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write trajectories, a price report and hourly energies
    Solve(SolveArgs),
    /// Run a verification study and write its report
    Verify(VerifyArgs),
    /// Write a scenario file with a synthetic duck-curve load
    Duckgen(DuckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    /// piecewise-linear power, trapezoid weights
    Uniform,
    /// cubic Hermite power with node slopes
    Spline,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Uniform => Scheme::PiecewiseLinear,
            SchemeArg::Spline => Scheme::CubicHermite,
        }
    }
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_enum, default_value = "uniform")]
    scheme: SchemeArg,
    #[arg(long, default_value_t = 96, value_parser = clap::value_parser!(u64).range(2..))]
    intervals: u64,
    /// relative duality-gap tolerance
    #[arg(long, default_value_t = 1e-8, value_parser = positive)]
    tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    /// hourly energy CSV; defaults to `<out>_hourly.csv`
    #[arg(long)]
    out_hourly: Option<PathBuf>,
    /// price report JSON; defaults to `<out>.report.json` with the extension replaced
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Kkt,
    Theorem1,
    Refine,
    Cross,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "kkt")]
    mode: Mode,
    /// perturbation size in MW
    #[arg(long, default_value_t = 0.01, value_parser = positive)]
    epsilon: f64,
    /// perturbation shape as `{"times": [...], "values": [...]}`; a uniform lift when absent
    #[arg(long)]
    eta: Option<PathBuf>,
    /// number of meshes in a refinement study, each twice as fine as the last
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(3..))]
    levels: u64,
    /// smallest accepted observed order in a refinement study
    #[arg(long, default_value_t = 1.0)]
    min_order: f64,
    /// relative price tolerance of the cross-scheme check
    #[arg(long, default_value_t = 0.01, value_parser = positive)]
    rel_tol: f64,
}

#[derive(Args)]
struct DuckArgs {
    #[arg(long)]
    out: PathBuf,
    /// sample spacing of the written load
    #[arg(long, default_value_t = 15, value_parser = clap::value_parser!(u64).range(1..=60))]
    step_minutes: u64,
    /// JSON array of units; a three-unit thermal fleet when absent
    #[arg(long)]
    units: Option<PathBuf>,
    #[arg(long)]
    base: Option<f64>,
    #[arg(long)]
    morning_peak: Option<f64>,
    #[arg(long)]
    morning_center: Option<f64>,
    #[arg(long)]
    morning_width: Option<f64>,
    #[arg(long)]
    evening_peak: Option<f64>,
    #[arg(long)]
    evening_center: Option<f64>,
    #[arg(long)]
    evening_width: Option<f64>,
    #[arg(long)]
    solar_depth: Option<f64>,
    #[arg(long)]
    solar_center: Option<f64>,
    #[arg(long)]
    solar_width: Option<f64>,
}

fn positive(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be positive, got {v}"))
    }
}

/// Unreadable or malformed input files.
#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

/// Verification ran but an asserted check failed.
#[derive(Debug)]
struct CheckFailed(String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| InputError(format!("cannot read {}: {e}", path.display())).into())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.is::<InputError>() {
        return 2;
    }
    if e.is::<CheckFailed>() {
        return 4;
    }
    match e.downcast_ref::<ctprice::Error>() {
        Some(ctprice::Error::Schema(_) | ctprice::Error::Ingestion { .. }) => 2,
        Some(ctprice::Error::Infeasible(_) | ctprice::Error::NotOptimal(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Verify(a) => verify(a),
        Command::Duckgen(a) => duckgen(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn settings(c: &Common) -> SolverSettings {
    SolverSettings::with_tol(c.tol)
}

fn solve(a: SolveArgs) -> Result<()> {
    let c = &a.common;
    let scheme: Scheme = c.scheme.into();
    let report_path = a
        .report
        .clone()
        .unwrap_or_else(|| sibling(&c.out, ".report.json"));
    let hourly_path = a
        .out_hourly
        .clone()
        .unwrap_or_else(|| sibling(&c.out, "_hourly.csv"));
    for p in [&c.out, &report_path, &hourly_path] {
        if same_file(p, &c.scenario) {
            anyhow::bail!("refusing to overwrite the scenario file {}", p.display());
        }
    }
    let s = load_scenario(&read_input(&c.scenario)?, scheme)?;
    let d = solve_scenario(&s, scheme, c.intervals as usize, &settings(c))?;
    let price = price_formula(&s, &d.schedule, &d.multipliers)?;
    let el = euler_lagrange_residual(&s, &d.schedule, &d.multipliers)?;

    write(&c.out, &output::trajectory_csv(&s, &d)?)?;
    write(
        &report_path,
        &output::solve_report(&s, &d, &price, &el, c.intervals as usize)?,
    )?;

    match aggregate_hourly(&d.schedule) {
        Ok(h) => write(&hourly_path, &output::hourly_csv(&h))?,
        Err(ctprice::Error::Refused(why)) if a.out_hourly.is_none() => {
            eprintln!("note: no hourly output: {why}")
        }
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Samples {
    times: Vec<f64>,
    values: Vec<f64>,
}

fn read_eta(path: &Path, h: Horizon, scheme: Scheme) -> Result<Trajectory> {
    let smp: Samples = serde_json::from_slice(&read_input(path)?)
        .map_err(|e| InputError(format!("{}: {e}", path.display())))?;
    let mesh = Mesh::from_nodes(h, smp.times).map_err(|e| InputError(format!("eta times: {e}")))?;
    Trajectory::from_samples(&mesh, &smp.values, scheme)
        .map_err(|e| InputError(format!("eta values: {e}")).into())
}

fn verify(a: VerifyArgs) -> Result<()> {
    let c = &a.common;
    let scheme: Scheme = c.scheme.into();
    let s = load_scenario(&read_input(&c.scenario)?, scheme)?;
    let n = c.intervals as usize;
    let st = settings(c);
    let rep: VerificationReport = match a.mode {
        Mode::Kkt => kkt_check(&s, scheme, n, &st)?,
        Mode::Theorem1 => {
            let spec = match &a.eta {
                Some(p) => PerturbationSpec::custom(a.epsilon, read_eta(p, s.horizon, scheme)?),
                None => PerturbationSpec::uniform(a.epsilon),
            };
            perturbation_check(&s, &spec, scheme, n, &st)?
        }
        Mode::Refine => {
            let counts: Vec<usize> = (0..a.levels).map(|k| n << k).collect();
            let opts = RefinementOptions {
                scheme,
                interior_only: true,
                min_order: a.min_order,
            };
            refinement_study(&s, &counts, Reference::Finest, opts, &st)?
        }
        Mode::Cross => cross_scheme_check(&s, n, a.rel_tol, &st)?,
    };
    write(&c.out, &output::json(&rep)?)?;
    if !rep.passed {
        let failed: Vec<String> = rep
            .checks
            .iter()
            .filter(|k| !k.passed)
            .map(|k| format!("{} = {:e} (threshold {:e})", k.name, k.value, k.threshold))
            .collect();
        return Err(CheckFailed(format!("verification failed: {}", failed.join(", "))).into());
    }
    Ok(())
}

fn default_fleet() -> Vec<Unit> {
    vec![
        Unit::new("base", 20.0, 160.0, CostFunction::power(15.0, 0.02)).with_ramp(-40.0, 40.0),
        Unit::new("mid", 0.0, 120.0, CostFunction::power(25.0, 0.05)).with_ramp(-60.0, 60.0),
        Unit::new("peak", 0.0, 100.0, CostFunction::power(40.0, 0.2)),
    ]
}

fn duckgen(a: DuckArgs) -> Result<()> {
    let mut p = DuckParams::default();
    for (slot, v) in [
        (&mut p.base, a.base),
        (&mut p.morning_peak, a.morning_peak),
        (&mut p.morning_center, a.morning_center),
        (&mut p.morning_width, a.morning_width),
        (&mut p.evening_peak, a.evening_peak),
        (&mut p.evening_center, a.evening_center),
        (&mut p.evening_width, a.evening_width),
        (&mut p.solar_depth, a.solar_depth),
        (&mut p.solar_center, a.solar_center),
        (&mut p.solar_width, a.solar_width),
    ] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    let units = match &a.units {
        Some(path) => serde_json::from_slice(&read_input(path)?)
            .map_err(|e| InputError(format!("{}: {e}", path.display())))?,
        None => default_fleet(),
    };
    if 1440 % a.step_minutes != 0 {
        anyhow::bail!("--step-minutes must divide a day, got {}", a.step_minutes);
    }
    let h = Horizon::new(0.0, 24.0)?;
    let mesh = Mesh::uniform(h, (24 * 60 / a.step_minutes) as usize)?;
    let load = ctprice::market_model::duck_curve(&p, &mesh)?;
    let doc = ScenarioDoc {
        horizon: h,
        load: LoadDoc::Samples {
            times: mesh.nodes().to_vec(),
            values: load.node_values(),
        },
        units,
        slack: None,
    };
    let text = output::json(&doc)?;
    // the written file must load back
    load_scenario(text.as_bytes(), Scheme::PiecewiseLinear)?;
    write(&a.out, &text)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}
