//! Command-line front end.
//!
//! Exit codes: 0 success, 1 failed verification gate, 2 usage or
//! configuration error, 3 degenerate data.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generators::{calibrate_to_theta, make_family_matrix, sample_gaussian, AlternativeFamily, Seed};
use crate::matrix::CorrMatrix;
use crate::sim::{
    run_null, run_power_curve, verify_e_ii1, verify_identities, verify_kernels, verify_var_i, Check,
    SimConfig, VERSION,
};
use crate::statistics::{max_statistic, rao_score_test, CovMode, DataMatrix};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DEGENERATE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hidim", version, about = "Rao-score independence test for high-dimensional Gaussian data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test a data file (rows = samples, columns = variables) for independence.
    Test(TestArgs),
    /// Power curve over a grid of signal levels.
    Power(PowerArgs),
    /// Size and null-distribution calibration.
    Null(NullArgs),
    /// Check moment formulas against exact identities and Monte Carlo.
    #[command(alias = "verify-moments")]
    Verify(VerifyArgs),
    /// Sample a dataset from a calibrated alternative.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// CSV data file.
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "centered")]
    pub cov_mode: CovMode,
    /// First line holds column names.
    #[arg(long)]
    pub header: bool,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// JSON SimConfig; individual flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub cov_mode: Option<CovMode>,
    #[command(flatten)]
    pub workers: WorkerArgs,
}

#[derive(Debug, Args)]
pub struct WorkerArgs {
    /// Worker threads (defaults to the available cores).
    #[arg(long, env = "HIDIM_WORKERS")]
    pub workers: Option<usize>,
}

impl WorkerArgs {
    fn resolve(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    #[command(flatten)]
    pub common: ExperimentArgs,
    /// equicorrelation, sparse-pairs:K or banded:W.
    #[arg(long)]
    pub family: Option<AlternativeFamily>,
    /// Comma-separated signal levels, ascending.
    #[arg(long, value_delimiter = ',')]
    pub b_grid: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    /// Write the CSV (or JSON with --format json) here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NullArgs {
    #[command(flatten)]
    pub common: ExperimentArgs,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the standardized statistics as CSV here.
    #[arg(long)]
    pub z_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Which {
    All,
    Isserlis,
    Kernels,
    VarI,
    EIi1,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(value_enum, default_value = "all")]
    pub which: Which,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Correlation for the kernel and equicorrelation checks.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Monte Carlo replications per check.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub workers: WorkerArgs,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    /// Write the JSON rows here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value = "equicorrelation")]
    pub family: AlternativeFamily,
    /// Signal level; the matrix is calibrated to ‖R − I‖_F = b √(m/n).
    #[arg(long, conflicts_with = "rho")]
    pub b: Option<f64>,
    /// Use this family parameter directly instead of calibrating.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trial index selecting the random stream.
    #[arg(long, default_value_t = 0)]
    pub trial: u64,
    /// Data CSV path (standard output when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Correlation matrix JSON path (defaults to the data path with `.r.json`).
    #[arg(long)]
    pub r_out: Option<PathBuf>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::DegenerateColumn { .. } => EXIT_DEGENERATE,
        Error::Invariant(_) => EXIT_VERIFY_FAILED,
        _ => EXIT_USAGE,
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Test(a) => cmd_test(&a),
        Command::Power(a) => cmd_power(&a),
        Command::Null(a) => cmd_null(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Gen(a) => cmd_gen(&a),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)?;
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize)]
struct TestOutput<'a> {
    version: &'a str,
    cov_mode: CovMode,
    #[serde(flatten)]
    report: crate::statistics::TestReport,
    max_statistic: f64,
}

fn cmd_test(a: &TestArgs) -> Result<i32> {
    let file = fs::File::open(&a.data)?;
    let data = DataMatrix::from_csv(file, a.header)?;
    let report = rao_score_test(&data, a.alpha, a.cov_mode)?;
    let out = TestOutput {
        version: VERSION,
        cov_mode: a.cov_mode,
        report,
        max_statistic: max_statistic(&data, a.cov_mode)?,
    };
    let json = to_json(&out)?;
    if let Some(path) = &a.out {
        write_file(path, &json)?;
    }
    if a.format == Format::Table {
        let r = &out.report;
        println!("n = {}, m = {}, covariance = {:?}", r.n, r.m, a.cov_mode);
        println!("{:<16}{:>18.10}", "T", r.t_value);
        println!("{:<16}{:>18.10}", "T - m(m-1)/2n", r.centered);
        println!("{:<16}{:>18.10}", "z", r.z_value);
        println!("{:<16}{:>18.10}", "z_alpha", r.z_alpha);
        println!("{:<16}{:>18.10e}", "p-value", r.p_value);
        println!("{:<16}{:>18.10}", "max rho^2", out.max_statistic);
        println!(
            "{} independence at alpha = {}",
            if r.reject { "reject" } else { "do not reject" },
            r.alpha
        );
    } else {
        print!("{json}");
    }
    Ok(EXIT_OK)
}

fn load_config(common: &ExperimentArgs) -> Result<SimConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str::<SimConfig>(&text)?
        }
        None => SimConfig::default(),
    };
    if let Some(v) = common.m {
        cfg.m = v;
    }
    if let Some(v) = common.n {
        cfg.n = v;
    }
    if let Some(v) = common.trials {
        cfg.trials = v;
    }
    if let Some(v) = common.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = common.seed {
        cfg.seed = Seed(v);
    }
    if let Some(v) = common.cov_mode {
        cfg.cov_mode = v;
    }
    cfg.workers = common.workers.resolve();
    Ok(cfg)
}

fn cmd_power(a: &PowerArgs) -> Result<i32> {
    let mut cfg = load_config(&a.common)?;
    if let Some(f) = a.family {
        cfg.family = f;
    }
    if let Some(grid) = &a.b_grid {
        cfg.b_grid = grid.clone();
    }
    let report = run_power_curve(&cfg)?;
    let machine = match a.format {
        Format::Json => to_json(&report)?,
        _ => report.to_csv(),
    };
    if let Some(path) = &a.out {
        write_file(path, &machine)?;
    }
    if a.format == Format::Table {
        println!(
            "m = {}, n = {}, trials = {}, alpha = {}, family = {}, seed = {}",
            cfg.m, cfg.n, cfg.trials, cfg.alpha, cfg.family, cfg.seed.0
        );
        println!("{:>8} {:>10} {:>10} {:>10}", "b", "empirical", "stderr", "predicted");
        for p in &report.points {
            match (p.empirical_power, p.mc_stderr) {
                (Some(e), Some(s)) => {
                    println!("{:>8.4} {:>10.4} {:>10.4} {:>10.4}", p.b, e, s, p.predicted_power)
                }
                _ => println!(
                    "{:>8.4} {:>10} {:>10} {:>10.4}  skipped: {}",
                    p.b,
                    "-",
                    "-",
                    p.predicted_power,
                    p.skip_reason.as_deref().unwrap_or("")
                ),
            }
        }
        match report.max_abs_deviation() {
            Some(d) => println!("max |empirical - predicted| = {d:.4}"),
            None => println!("no grid point could be run"),
        }
        println!("note: {}", report.note);
    } else if a.out.is_none() {
        print!("{machine}");
    }
    Ok(EXIT_OK)
}

fn cmd_null(a: &NullArgs) -> Result<i32> {
    let cfg = load_config(&a.common)?;
    let mut report = run_null(&cfg)?;
    if let Some(path) = &a.z_out {
        report.write_z_samples(path)?;
    }
    let json = to_json(&report)?;
    if let Some(path) = &a.out {
        write_file(path, &json)?;
    }
    if a.format == Format::Table {
        println!(
            "m = {}, n = {}, trials = {}, alpha = {}, seed = {}",
            cfg.m, cfg.n, cfg.trials, cfg.alpha, cfg.seed.0
        );
        println!("empirical size = {:.4} (stderr {:.4})", report.empirical_size, report.mc_stderr);
        println!("KS distance of z to N(0,1) = {:.4}", report.ks_statistic);
    } else if a.out.is_none() {
        print!("{json}");
    }
    Ok(EXIT_OK)
}

fn family_matrix(m: usize, rho: f64) -> Result<CorrMatrix> {
    make_family_matrix(AlternativeFamily::Equicorrelation, rho, m)
}

fn collect_checks(a: &VerifyArgs) -> Result<Vec<Check>> {
    let seed = Seed(a.seed);
    let workers = a.workers.resolve();
    let mut rows = Vec::new();
    let want = |w: Which| a.which == Which::All || a.which == w;

    if want(Which::Isserlis) {
        rows.extend(verify_identities(seed)?);
    }
    if want(Which::Kernels) {
        let trials = a.trials.unwrap_or(100_000);
        let configs = match (a.rho, a.n) {
            (None, None) => vec![(0.0, 10), (0.5, 10), (0.7, 6)],
            (rho, n) => vec![(rho.unwrap_or(0.0), n.unwrap_or(10))],
        };
        for (rho, n) in configs {
            rows.extend(verify_kernels(rho, n, trials, seed, workers)?);
        }
    }
    if want(Which::VarI) {
        let (m, n) = (a.m.unwrap_or(5), a.n.unwrap_or(30));
        let trials = a.trials.unwrap_or(20_000);
        let rhos = match a.rho {
            Some(r) => vec![r],
            None => vec![0.0, 0.2],
        };
        for rho in rhos {
            rows.push(verify_var_i(&family_matrix(m, rho)?, n, trials, seed, workers)?);
        }
    }
    if want(Which::EIi1) {
        let trials = a.trials.unwrap_or(20_000);
        let n = a.n.unwrap_or(20);
        let configs = match (a.m, a.rho) {
            (None, None) => vec![(4, 0.0), (2, 0.5)],
            (m, rho) => vec![(m.unwrap_or(4), rho.unwrap_or(0.0))],
        };
        for (m, rho) in configs {
            rows.extend(verify_e_ii1(&family_matrix(m, rho)?, n, trials, seed, workers)?);
        }
    }
    Ok(rows)
}

fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    let rows = collect_checks(a)?;
    let json = to_json(&rows)?;
    if let Some(path) = &a.out {
        write_file(path, &json)?;
    }
    if a.format == Format::Table {
        println!("{:<48} {:>16} {:>16} {:>10} {:>6}", "check", "observed", "expected", "z / err", "pass");
        for r in &rows {
            let score = match (r.z_score, r.error) {
                (Some(z), _) => format!("{z:.3}"),
                (None, Some(e)) => format!("{e:.2e}"),
                _ => String::new(),
            };
            println!(
                "{:<48} {:>16.9e} {:>16.9e} {:>10} {:>6}",
                r.name,
                r.observed,
                r.expected,
                score,
                if r.pass { "ok" } else { "FAIL" }
            );
        }
    } else if a.out.is_none() {
        print!("{json}");
    }
    let failures: Vec<&Check> = rows.iter().filter(|r| !r.pass).collect();
    if failures.is_empty() {
        return Ok(EXIT_OK);
    }
    let mut err = std::io::stderr().lock();
    writeln!(err, "{} check(s) failed:", failures.len())?;
    for f in failures {
        writeln!(err, "  {}", f.name)?;
    }
    Ok(EXIT_VERIFY_FAILED)
}

fn cmd_gen(a: &GenArgs) -> Result<i32> {
    let r = match (a.b, a.rho) {
        (_, Some(rho)) => make_family_matrix(a.family, rho, a.m)?,
        (b, None) => calibrate_to_theta(a.family, b.unwrap_or(0.0), a.m, a.n)?,
    };
    if a.n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }
    let data = sample_gaussian(&r.cholesky()?, a.n, Seed(a.seed), a.trial);
    let csv = data.to_csv();
    let r_path = a
        .r_out
        .clone()
        .or_else(|| a.out.as_ref().map(|p| p.with_extension("r.json")));
    match &a.out {
        Some(path) => write_file(path, &csv)?,
        None => print!("{csv}"),
    }
    if let Some(path) = r_path {
        write_file(&path, &(r.to_json()? + "\n"))?;
    }
    Ok(EXIT_OK)
}
