//! Command-line front end.
//!
//! Exit codes: 0 success, 1 file-system failure, 2 invalid arguments,
//! 3 numerical failure (mass defect, no convergence, overflow), 4 parameters
//! outside a formula's validity domain.

use std::ffi::OsString;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::analytic::AnalyticError;
use crate::evolution::{
    self, EvolutionConfig, EvolutionError, EvolutionTrace, Recursion, StepRecord, StorePolicy,
    DEFAULT_STEADY_HORIZON,
};
use crate::io::{write_densities, write_json, write_table_csv, DensityIndex};
use crate::montecarlo::{self, McError, Variable, MAX_EXPORTED_PATHS};
use crate::noise::{NoiseModel, NoiseSpec};
use crate::pdfgrid::GridSpec;

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "CUMVOL_THREADS";

const DEFAULT_GRID_HELP: &str = "Grid as MIN,MAX,N. Default: [0, U] with U the deterministic \
value log(sum_j e^{d j}) plus 12 noise widths times sqrt(steps + 1) (capped by the stationary \
width when the drift d is negative; at least 500 widths for lorentzian noise), and \
max(8192, U / 0.005) points (32768 for lorentzian), at most 65536";

#[derive(Parser, Debug)]
#[command(
    name = "cumvol",
    version,
    about = "Exact densities of log cumulative production and its volatility"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Evolve the density of z_t = log Z_t and write one CSV per step
    Evolve(EvolveArgs),
    /// Evolve y_t and write the volatility densities of dz_t = z_t - z_{t-1}
    Volatility(VolatilityArgs),
    /// Ratio of the steady-state volatility to sigma_a^2 tanh(g/2) over a sweep of sigma_a^2
    CompareSaddle(CompareArgs),
    /// Monte Carlo simulation of the production paths
    Simulate(SimulateArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Drift per step
    #[arg(long, allow_negative_numbers = true)]
    pub g: f64,
    /// gaussian:sigma=S | lorentzian:gamma=G | table:PATH
    #[arg(long)]
    pub noise: String,
}

#[derive(Args, Debug)]
pub struct EvolveArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of steps
    #[arg(long, default_value_t = 30)]
    pub steps: usize,
    #[arg(long, value_parser = parse_grid, help = DEFAULT_GRID_HELP)]
    pub grid: Option<GridSpec>,
    /// Write the density of every k-th step (the last step is always written)
    #[arg(long, default_value_t = 1)]
    pub every: usize,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct VolatilityArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of steps; with --until-converged the largest number of steps (default 5000)
    #[arg(long)]
    pub steps: Option<usize>,
    /// Stop at the steady state and write its report; requires g > 0
    #[arg(long)]
    pub until_converged: bool,
    /// Grid for y_t as MIN,MAX,N (default as for evolve, with the drift reversed)
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<GridSpec>,
    /// Grid for dz_t as MIN,MAX,N (default [0, log(1 + e^{g + a_hi})], a_hi an extreme noise quantile)
    #[arg(long, value_parser = parse_grid)]
    pub dz_grid: Option<GridSpec>,
    /// Write every k-th step (default 1, or 100 with --until-converged); the last step is always written
    #[arg(long)]
    pub every: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub g: f64,
    /// Comma-separated noise variances sigma_a^2 (gaussian noise)
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub sigma_sweep: Vec<f64>,
    /// Largest number of steps per point
    #[arg(long, default_value_t = DEFAULT_STEADY_HORIZON)]
    pub steps: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub paths: usize,
    #[arg(long)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory of a previous evolve run (or its z/ subdirectory) to compare against
    #[arg(long)]
    pub against: Option<PathBuf>,
    /// Also write per-path values (at most 10000 paths)
    #[arg(long)]
    pub per_path: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_grid(s: &str) -> Result<GridSpec, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err("expected MIN,MAX,N".into());
    }
    let lo: f64 = parts[0].parse().map_err(|e| format!("MIN: {e}"))?;
    let hi: f64 = parts[1].parse().map_err(|e| format!("MAX: {e}"))?;
    let n: usize = parts[2].parse().map_err(|e| format!("N: {e}"))?;
    GridSpec::new(lo, hi, n).map_err(|e| e.to_string())
}

#[derive(Error, Debug)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("outside validity domain: {0}")]
    Domain(String),
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Domain(_) => 4,
        }
    }
}

impl From<EvolutionError> for CliError {
    fn from(e: EvolutionError) -> Self {
        match e {
            EvolutionError::NonPositiveDrift(_) | EvolutionError::Analytic(_) => {
                CliError::Domain(e.to_string())
            }
            EvolutionError::BadConfig(_) | EvolutionError::BadDomain(..) => {
                CliError::Usage(e.to_string())
            }
            EvolutionError::Grid(_)
            | EvolutionError::MassDefect { .. }
            | EvolutionError::NotConverged { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<AnalyticError> for CliError {
    fn from(e: AnalyticError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        match e {
            McError::Overflow { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

/// Record of one CLI invocation, written as `manifest.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: Value,
    /// seconds since the Unix epoch
    pub started: f64,
    pub finished: f64,
    /// paths relative to the output directory
    pub outputs: Vec<String>,
    pub diagnostics: Value,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
    started: f64,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            started: now(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn finish(self, command: &str, config: Value, diagnostics: Value) -> Result<(), CliError> {
        let mut outputs = Vec::with_capacity(self.files.len());
        for f in &self.files {
            let len = std::fs::metadata(f)?.len();
            if len == 0 {
                return Err(CliError::Io(io::Error::other(format!(
                    "output {} is empty",
                    f.display()
                ))));
            }
            let rel = f.strip_prefix(&self.dir).unwrap_or(f);
            outputs.push(rel.to_string_lossy().replace('\\', "/"));
        }
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            started: self.started,
            finished: now(),
            outputs,
            diagnostics,
        };
        write_json(&self.dir.join("manifest.json"), &manifest)?;
        Ok(())
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

pub fn execute(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Evolve(a) => cmd_evolve(a),
        Command::Volatility(a) => cmd_volatility(a),
        Command::CompareSaddle(a) => cmd_compare_saddle(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

fn noise_model(spec: &str) -> Result<NoiseModel, CliError> {
    NoiseSpec::parse(spec)
        .and_then(|s| NoiseModel::new(&s))
        .map_err(|e| CliError::Usage(format!("--noise: {e}")))
}

fn check_g(g: f64) -> Result<(), CliError> {
    if g.is_finite() {
        Ok(())
    } else {
        Err(CliError::Usage("--g must be finite".into()))
    }
}

fn store_every(every: usize, horizon: usize) -> Result<StorePolicy, CliError> {
    match every {
        0 => Err(CliError::Usage("--every must be at least 1".into())),
        1 => Ok(StorePolicy::All),
        k => Ok(StorePolicy::Steps((k..=horizon).step_by(k).collect())),
    }
}

fn record_rows(records: &[StepRecord]) -> Vec<Vec<f64>> {
    records
        .iter()
        .map(|r| {
            let mut row = vec![
                r.t as f64,
                r.moments.mean,
                r.moments.variance,
                r.moments.skewness,
                r.moments.kurtosis,
            ];
            row.extend(&r.quantiles);
            row.extend([r.truncated_mass, r.defect, r.l1_change.unwrap_or(f64::NAN)]);
            row
        })
        .collect()
}

const RECORD_HEADER: [&str; 13] = [
    "t",
    "mean",
    "variance",
    "skewness",
    "excess_kurtosis",
    "q05",
    "q25",
    "q50",
    "q75",
    "q95",
    "truncated_mass",
    "defect",
    "l1_change",
];

fn trace_diagnostics(trace: &EvolutionTrace) -> Value {
    let max_defect = trace.records.iter().map(|r| r.defect).fold(0.0, f64::max);
    let last = trace.records.last();
    json!({
        "steps_run": trace.records.len(),
        "converged_at": trace.converged_at,
        "max_step_defect": max_defect,
        "final_truncated_mass": last.map(|r| r.truncated_mass),
        "final_l1_change": last.and_then(|r| r.l1_change),
    })
}

fn cmd_evolve(a: &EvolveArgs) -> Result<(), CliError> {
    check_g(a.model.g)?;
    if a.steps < 1 {
        return Err(CliError::Usage("--steps must be at least 1".into()));
    }
    let noise = noise_model(&a.model.noise)?;
    let mut cfg = match a.grid {
        Some(grid) => EvolutionConfig::new(a.model.g, noise, grid, a.steps),
        None => EvolutionConfig::with_default_grid(Recursion::Z, a.model.g, noise, a.steps)?,
    };
    cfg.stop_on_convergence = false;
    cfg.store = store_every(a.every, a.steps)?;
    let trace = evolution::evolve_z(&cfg)?;

    let mut out = Outputs::new(&a.out)?;
    let (_, files) = write_densities(&a.out, "z", &trace.densities)?;
    out.files.extend(files);
    write_table_csv(&out.path("z_steps.csv"), &RECORD_HEADER, &record_rows(&trace.records))?;
    let diag = trace_diagnostics(&trace);
    println!(
        "evolve: {} steps on {} points, final truncated mass {:.3e}",
        trace.records.len(),
        cfg.grid.n_points,
        trace.records.last().map_or(0.0, |r| r.truncated_mass)
    );
    out.finish("evolve", serde_json::to_value(&cfg).map_err(io::Error::other)?, diag)
}

fn cmd_volatility(a: &VolatilityArgs) -> Result<(), CliError> {
    check_g(a.model.g)?;
    if a.until_converged && !(a.model.g > 0.0) {
        return Err(CliError::Domain(format!(
            "--until-converged needs g > 0 for a steady state (g = {})",
            a.model.g
        )));
    }
    let horizon = a.steps.unwrap_or(if a.until_converged {
        DEFAULT_STEADY_HORIZON
    } else {
        30
    });
    if horizon < 1 {
        return Err(CliError::Usage("--steps must be at least 1".into()));
    }
    let noise = noise_model(&a.model.noise)?;
    let mut cfg = match a.grid {
        Some(grid) => {
            let mut c = EvolutionConfig::new(a.model.g, noise, grid, horizon);
            c.dz_grid = Some(evolution::default_dz_grid(a.model.g, &c.noise)?);
            c
        }
        None => EvolutionConfig::with_default_grid(Recursion::Y, a.model.g, noise, horizon)?,
    };
    if let Some(d) = a.dz_grid {
        cfg.dz_grid = Some(d);
    }
    cfg.stop_on_convergence = a.until_converged;
    let every = a.every.unwrap_or(if a.until_converged { 100 } else { 1 });
    cfg.store = store_every(every, horizon)?;
    let trace = evolution::evolve_y(&cfg)?;

    let mut out = Outputs::new(&a.out)?;
    let (_, files) = write_densities(&a.out, "dz", &trace.dz_densities)?;
    out.files.extend(files);
    let (_, files) = write_densities(&a.out, "y", &trace.densities)?;
    out.files.extend(files);
    write_table_csv(&out.path("y_steps.csv"), &RECORD_HEADER, &record_rows(&trace.records))?;
    write_table_csv(
        &out.path("dz_steps.csv"),
        &RECORD_HEADER,
        &record_rows(&trace.dz_records),
    )?;
    let mut diag = trace_diagnostics(&trace);
    if a.until_converged {
        let report = evolution::volatility_report(&cfg, &trace)?;
        write_json(&out.path("volatility.json"), &report)?;
        println!(
            "volatility: steady state at t = {}, Var(dz) = {:.6e}, IQR = {:.6e}{}",
            report.converged_at,
            report.variance,
            report.iqr,
            report
                .ratio
                .map_or(String::new(), |r| format!(", ratio to saddle value {r:.6}"))
        );
        diag["report"] = serde_json::to_value(&report).map_err(io::Error::other)?;
    } else {
        let last = trace.dz_records.last().expect("at least one step");
        println!(
            "volatility: {} steps, Var(dz_t) = {:.6e}, IQR = {:.6e}",
            last.t,
            last.moments.variance,
            last.quantiles[3] - last.quantiles[1]
        );
    }
    out.finish("volatility", serde_json::to_value(&cfg).map_err(io::Error::other)?, diag)
}

#[derive(Serialize)]
struct SweepPoint {
    sigma_a2: f64,
    report: evolution::VolatilityReport,
}

fn cmd_compare_saddle(a: &CompareArgs) -> Result<(), CliError> {
    check_g(a.g)?;
    if a.sigma_sweep.is_empty() {
        return Err(CliError::Usage("--sigma-sweep needs at least one value".into()));
    }
    if let Some(v) = a.sigma_sweep.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(CliError::Usage(format!("--sigma-sweep values must be positive (got {v})")));
    }
    if !(a.g > 0.0) {
        return Err(CliError::Domain(format!("the saddle comparison needs g > 0 (g = {})", a.g)));
    }
    if a.steps < 1 {
        return Err(CliError::Usage("--steps must be at least 1".into()));
    }
    let points: Vec<SweepPoint> = a
        .sigma_sweep
        .par_iter()
        .map(|&s2| -> Result<SweepPoint, CliError> {
            let noise = NoiseModel::gaussian(s2.sqrt())
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let cfg = EvolutionConfig::with_default_grid(Recursion::Y, a.g, noise, a.steps)?;
            Ok(SweepPoint {
                sigma_a2: s2,
                report: evolution::steady_state_volatility(&cfg)?,
            })
        })
        .collect::<Result<_, _>>()?;

    let mut out = Outputs::new(&a.out)?;
    let rows: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            vec![
                p.sigma_a2,
                p.report.ratio.unwrap_or(f64::NAN),
                p.report.variance,
                p.report.saddle_variance.unwrap_or(f64::NAN),
                p.report.iqr,
                p.report.converged_at as f64,
                p.report.truncated_mass,
            ]
        })
        .collect();
    write_table_csv(
        &out.path("saddle.csv"),
        &[
            "sigma_a2",
            "ratio",
            "variance",
            "saddle_variance",
            "iqr",
            "converged_at",
            "truncated_mass",
        ],
        &rows,
    )?;
    write_json(&out.path("saddle.json"), &points)?;
    for p in &points {
        println!(
            "sigma_a^2 = {:<8} ratio = {:.6}",
            p.sigma_a2,
            p.report.ratio.unwrap_or(f64::NAN)
        );
    }
    let config = json!({ "g": a.g, "sigma_sweep": a.sigma_sweep, "horizon": a.steps });
    out.finish("compare-saddle", config, json!({ "points": points.len() }))
}

#[derive(Serialize)]
struct KsRow {
    t: usize,
    ks: f64,
    truncated_mass: f64,
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    check_g(a.model.g)?;
    if a.paths < 1 {
        return Err(CliError::Usage("--paths must be at least 1".into()));
    }
    if a.steps < 1 {
        return Err(CliError::Usage("--steps must be at least 1".into()));
    }
    let noise = noise_model(&a.model.noise)?;
    let against = match &a.against {
        Some(dir) => Some(load_against(dir)?),
        None => None,
    };
    let ens = montecarlo::simulate(a.model.g, &noise, a.steps, a.paths, a.seed)?;

    let mut out = Outputs::new(&a.out)?;
    write_json(&out.path("summary.json"), &ens.summary())?;
    if a.per_path {
        let n = ens.n_paths.min(MAX_EXPORTED_PATHS);
        let mut rows = Vec::with_capacity(n * ens.times.len());
        for p in 0..n {
            for &t in &ens.times {
                rows.push(vec![
                    p as f64,
                    t as f64,
                    ens.values(t, Variable::Z)?[p],
                    ens.values(t, Variable::Dz)?[p],
                ]);
            }
        }
        write_table_csv(&out.path("paths.csv"), &["path", "t", "z", "dz"], &rows)?;
    }
    let mut diag = json!({ "n_paths": ens.n_paths, "t_max": ens.t_max });
    if let Some((variable, pdfs)) = against {
        let rows: Vec<KsRow> = pdfs
            .iter()
            .filter(|(t, _)| *t <= a.steps)
            .map(|(t, p)| -> Result<KsRow, CliError> {
                Ok(KsRow {
                    t: *t,
                    ks: montecarlo::empirical_cdf_distance(&ens, *t, p, variable)?,
                    truncated_mass: p.truncated_mass(),
                })
            })
            .collect::<Result<_, _>>()?;
        if rows.is_empty() {
            return Err(CliError::Usage(
                "--against holds no densities within --steps".into(),
            ));
        }
        write_table_csv(
            &out.path("ks.csv"),
            &["t", "ks", "truncated_mass"],
            &rows
                .iter()
                .map(|r| vec![r.t as f64, r.ks, r.truncated_mass])
                .collect::<Vec<_>>(),
        )?;
        for r in &rows {
            println!("t = {:>5}  KS = {:.5}", r.t, r.ks);
        }
        let worst = rows.iter().map(|r| r.ks).fold(0.0, f64::max);
        diag["max_ks"] = json!(worst);
    }
    println!("simulate: {} paths, {} steps", ens.n_paths, ens.t_max);
    let config = json!({
        "g": a.model.g,
        "noise": noise.summary(),
        "paths": a.paths,
        "steps": a.steps,
        "seed": a.seed,
        "against": a.against,
    });
    out.finish("simulate", config, diag)
}

type Densities = Vec<(usize, crate::pdfgrid::GriddedPdf)>;

fn load_against(dir: &Path) -> Result<(Variable, Densities), CliError> {
    let candidates = [dir.to_path_buf(), dir.join("z"), dir.join("dz")];
    let Some(found) = candidates
        .iter()
        .find(|d| d.join(DensityIndex::FILE_NAME).is_file())
    else {
        return Err(CliError::Usage(format!(
            "--against: no {} in {} or its z/ subdirectory",
            DensityIndex::FILE_NAME,
            dir.display()
        )));
    };
    let (index, pdfs) = DensityIndex::load(found)?;
    let variable = match index.variable.as_str() {
        "z" => Variable::Z,
        "dz" => Variable::Dz,
        other => {
            return Err(CliError::Usage(format!(
                "--against: densities of '{other}' have no simulated counterpart"
            )))
        }
    };
    Ok((variable, pdfs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_flag() {
        let g = parse_grid("0, 5, 101").unwrap();
        assert_eq!((g.x_min, g.x_max, g.n_points), (0.0, 5.0, 101));
        assert!(parse_grid("0,5").is_err());
        assert!(parse_grid("5,0,100").is_err());
        assert!(parse_grid("0,5,3").is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["cumvol", "evolve", "--g", "0.2"]), 2);
        assert_eq!(run(["cumvol", "frobnicate"]), 2);
        assert_eq!(
            run(["cumvol", "compare-saddle", "--g", "0.1", "--sigma-sweep", "", "--out", "x"]),
            2
        );
    }

    #[test]
    fn error_classes() {
        let e: CliError = EvolutionError::NonPositiveDrift(0.0).into();
        assert_eq!(e.exit_code(), 4);
        let e: CliError = EvolutionError::MassDefect {
            t: 1,
            defect: 0.1,
            limit: 1e-3,
        }
        .into();
        assert_eq!(e.exit_code(), 3);
        let e: CliError = McError::BadArgs("x".into()).into();
        assert_eq!(e.exit_code(), 2);
    }
}
