//! Command-line front end. [`run_cli`] never exits the process; `main`
//! prints its output and exits with its code.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::json;

use crate::bootstrap::{bootstrap_test, BootstrapConfig, Tail};
use crate::error::Error;
use crate::io::{metro_fixture, parse_vector, read_csv, write_csv, FixtureSpec};
use crate::linalg::{sample_moments, spectral_decompose, DataMatrix};
use crate::mean_tests::TestMethod;
use crate::power::{mc_power, PowerConfig};
use crate::rmt::{mp_density, mp_edges, mp_stieltjes, KernelConfig};
use crate::shrinkage::{lw_shrink, stein_isotonized};

pub const EXIT_OK: i32 = 0;
pub const EXIT_COMPUTATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "eqshrink", version, about = "High-dimensional mean tests with equivariant shrinkage")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Test H0: μ = μ0 on a CSV data set.
    Test(TestArgs),
    /// Bootstrap p-value of a test statistic.
    Bootstrap(BootstrapArgs),
    /// Size-calibrated Monte-Carlo power under AR(1) covariance.
    SimulatePower(PowerArgs),
    /// Sample eigenvalues with Stein and Ledoit–Wolf shrunk values.
    Spectrum(SpectrumArgs),
    /// Marčenko–Pastur Stieltjes transform and density on the support.
    Mp(MpArgs),
    /// Synthetic data sets.
    #[command(subcommand)]
    Fixtures(FixturesCommand),
}

#[derive(Subcommand, Debug)]
enum FixturesCommand {
    /// Ridership-like CSV: n days by p stations.
    Gen(FixtureArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum MethodArg {
    Hotelling,
    Decomposite,
    DecompositeStein,
    Bs,
    Diag,
    Ridge,
    Composite,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum OutFormat {
    Json,
    Csv,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum TailArg {
    Lower,
    Upper,
    TwoSided,
}

impl From<TailArg> for Tail {
    fn from(t: TailArg) -> Self {
        match t {
            TailArg::Lower => Tail::Lower,
            TailArg::Upper => Tail::Upper,
            TailArg::TwoSided => Tail::TwoSided,
        }
    }
}

#[derive(Args, Debug)]
struct DataArgs {
    /// CSV file, rows are observations.
    #[arg(long)]
    input: PathBuf,
    /// Treat the first line as data rather than a header.
    #[arg(long)]
    no_header: bool,
    /// Hypothesised mean, comma separated (default 0).
    #[arg(long, allow_hyphen_values = true)]
    mu0: Option<String>,
}

#[derive(Args, Debug)]
struct StatArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Decomposite)]
    method: MethodArg,
    /// Ridge parameter of the ridge method.
    #[arg(long, default_value_t = 1.0)]
    ridge: f64,
    /// Block count of the composite method.
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = OutFormat::Json)]
    out: OutFormat,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    stat: StatArgs,
}

#[derive(Args, Debug)]
struct BootstrapArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    stat: StatArgs,
    /// Replicate count B.
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    /// Resample size as a fraction of n.
    #[arg(long, default_value_t = 0.95)]
    frac: f64,
    #[arg(long, value_enum, default_value_t = TailArg::Upper)]
    tail: TailArg,
    #[arg(long, required_unless_present = "nondeterministic")]
    seed: Option<u64>,
    /// Draw a fresh seed; it is reported in the output.
    #[arg(long)]
    nondeterministic: bool,
    /// Resample the data as given instead of centring it first.
    #[arg(long)]
    no_center: bool,
    /// Report (count + 1) / (B + 1).
    #[arg(long)]
    add_one: bool,
}

#[derive(Args, Debug)]
struct PowerArgs {
    #[arg(long, default_value_t = 20)]
    p: usize,
    #[arg(long, default_value_t = 60)]
    n: usize,
    /// AR(1) coefficient(s), comma separated.
    #[arg(long, allow_hyphen_values = true, default_value = "0.5")]
    rho: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Comma separated methods; bare `composite` and `ridge` use --k and --ridge.
    #[arg(long, default_value = "decomposite,composite")]
    methods: String,
    #[arg(long, default_value_t = 1.0)]
    ridge: f64,
    #[arg(long, required_unless_present = "nondeterministic")]
    seed: Option<u64>,
    #[arg(long)]
    nondeterministic: bool,
    #[arg(long, value_enum, default_value_t = OutFormat::Json)]
    out: OutFormat,
}

#[derive(Args, Debug)]
struct SpectrumArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    no_header: bool,
    /// Kernel bandwidth h (default n^{-1/3}).
    #[arg(long)]
    bandwidth: Option<f64>,
}

#[derive(Args, Debug)]
struct MpArgs {
    /// Ratio p/n in (0, 1).
    #[arg(long)]
    c: f64,
    /// Number of interior grid points.
    #[arg(long, default_value_t = 100)]
    points: usize,
}

#[derive(Args, Debug)]
struct FixtureArgs {
    #[arg(long, default_value_t = 250)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    p: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.6, allow_hyphen_values = true)]
    rho: f64,
    /// Relative growth of the station means over the period.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    growth: f64,
    /// Output path (stdout when absent).
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Exit code and captured streams of one invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliOutput {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

enum Failure {
    Usage(String),
    Computation(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::Computation(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Parses `args` (including the program name) and runs the subcommand.
///
/// Exit code 0 on success, 1 on a computation error, 2 on a usage error.
pub fn run_cli<I, T>(args: I) -> CliOutput
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let (stdout, stderr) = if code == EXIT_OK { (text, String::new()) } else { (String::new(), text) };
            return CliOutput { code, stdout, stderr };
        }
    };
    let mut stderr = String::new();
    let result = match cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Bootstrap(a) => cmd_bootstrap(a),
        Command::SimulatePower(a) => cmd_power(a),
        Command::Spectrum(a) => cmd_spectrum(a, &mut stderr),
        Command::Mp(a) => cmd_mp(a),
        Command::Fixtures(FixturesCommand::Gen(a)) => cmd_fixture(a),
    };
    match result {
        Ok(stdout) => CliOutput { code: EXIT_OK, stdout, stderr },
        Err(Failure::Usage(msg)) => CliOutput {
            code: EXIT_USAGE,
            stdout: String::new(),
            stderr: format!("error: {msg}\n\nFor more information, try '--help'.\n"),
        },
        Err(Failure::Computation(e)) => CliOutput {
            code: EXIT_COMPUTATION,
            stdout: String::new(),
            stderr: format!("error: {e}\n"),
        },
    }
}

fn resolve_method(m: MethodArg, ridge: f64, k: usize) -> CliResult<TestMethod> {
    Ok(match m {
        MethodArg::Hotelling => TestMethod::Hotelling,
        MethodArg::Decomposite => TestMethod::Decomposite,
        MethodArg::DecompositeStein => TestMethod::DecompositeStein,
        MethodArg::Bs => TestMethod::Bs,
        MethodArg::Diag => TestMethod::Diag,
        MethodArg::Ridge => {
            if !(ridge > 0.0 && ridge.is_finite()) {
                return Err(usage(format!("--ridge must be positive, got {ridge}")));
            }
            TestMethod::Ridge(ridge)
        }
        MethodArg::Composite => {
            if k == 0 {
                return Err(usage("--k must be at least 1"));
            }
            TestMethod::Composite(k)
        }
    })
}

fn check_alpha(alpha: f64) -> CliResult<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(usage(format!("--alpha must be in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn load(data: &DataArgs) -> CliResult<(DataMatrix, Option<Vec<f64>>)> {
    let x = read_csv(&data.input, !data.no_header)?;
    let mu0 = match &data.mu0 {
        Some(s) => {
            let v = parse_vector(s).map_err(|e| usage(format!("--mu0: {e}")))?;
            if v.len() != x.ncols() {
                return Err(usage(format!("--mu0 has {} entries, data has {} columns", v.len(), x.ncols())));
            }
            Some(v)
        }
        None => None,
    };
    Ok((x, mu0))
}

fn resolve_seed(seed: Option<u64>, nondeterministic: bool) -> u64 {
    match seed {
        Some(s) => s,
        None => {
            debug_assert!(nondeterministic);
            rand::random()
        }
    }
}

#[derive(Serialize)]
struct Report {
    method: String,
    statistic: f64,
    normalized: Option<f64>,
    p_value: Option<f64>,
    reject: Option<bool>,
    config: serde_json::Value,
    warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    details: Option<serde_json::Value>,
}

fn render_report(r: &Report, out: OutFormat) -> CliResult<String> {
    match out {
        OutFormat::Json => Ok(serde_json::to_string_pretty(r).map_err(|e| Error::InvalidInput(e.to_string()))? + "\n"),
        OutFormat::Csv => {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let mut s = String::from("method,statistic,normalized,p_value,reject\n");
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.method,
                r.statistic,
                opt(r.normalized),
                opt(r.p_value),
                r.reject.map(|b| b.to_string()).unwrap_or_default()
            );
            Ok(s)
        }
    }
}

fn cmd_test(a: TestArgs) -> CliResult<String> {
    check_alpha(a.stat.alpha)?;
    let method = resolve_method(a.stat.method, a.stat.ridge, a.stat.k)?;
    let (x, mu0) = load(&a.data)?;
    let shifted = match &mu0 {
        Some(m) => x.shifted(&DVector::from_column_slice(m))?,
        None => x,
    };
    let outcome = method.evaluate(&shifted, &KernelConfig::for_sample_size(shifted.nrows()))?;
    let report = Report {
        method: outcome.method.clone(),
        statistic: outcome.statistic,
        normalized: outcome.normalized,
        p_value: outcome.p_value,
        reject: outcome.p_value.map(|p| p <= a.stat.alpha),
        config: json!({
            "input": a.data.input.display().to_string(),
            "n": shifted.nrows(),
            "p": shifted.ncols(),
            "alpha": a.stat.alpha,
            "mu0": mu0,
        }),
        warnings: outcome.metadata.notes.clone(),
        details: Some(json!({
            "f_df": outcome.metadata.f_df,
            "blocks": outcome.metadata.blocks,
            "spectrum": outcome.metadata.spectrum,
        })),
    };
    render_report(&report, a.stat.out)
}

fn cmd_bootstrap(a: BootstrapArgs) -> CliResult<String> {
    check_alpha(a.stat.alpha)?;
    if !(a.frac > 0.0 && a.frac <= 1.0) {
        return Err(usage(format!("--frac must be in (0, 1], got {}", a.frac)));
    }
    if a.reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }
    let method = resolve_method(a.stat.method, a.stat.ridge, a.stat.k)?;
    let (x, mu0) = load(&a.data)?;
    let seed = resolve_seed(a.seed, a.nondeterministic);
    let cfg = BootstrapConfig {
        reps: a.reps,
        fraction: a.frac,
        seed,
        tail: a.tail.into(),
        method,
        mu0: mu0.clone(),
        center: !a.no_center,
        add_one: a.add_one,
    };
    let r = bootstrap_test(&x, &cfg)?;
    let mut warnings = Vec::new();
    if r.redraws > 0 {
        warnings.push(format!("{} degenerate resample(s) redrawn", r.redraws));
    }
    let report = Report {
        method: r.method.clone(),
        statistic: r.observed,
        normalized: None,
        p_value: Some(r.p_value),
        reject: Some(r.p_value <= a.stat.alpha),
        config: json!({
            "input": a.data.input.display().to_string(),
            "n": x.nrows(),
            "p": x.ncols(),
            "reps": a.reps,
            "frac": a.frac,
            "resample_size": r.resample_size,
            "tail": cfg.tail,
            "seed": seed,
            "center": cfg.center,
            "add_one": cfg.add_one,
            "alpha": a.stat.alpha,
            "mu0": mu0,
        }),
        warnings,
        details: Some(json!({ "quantiles": r.quantiles, "redraws": r.redraws })),
    };
    render_report(&report, a.stat.out)
}

fn parse_methods(list: &str, k: usize, ridge: f64) -> CliResult<Vec<TestMethod>> {
    list.split(',')
        .map(|s| match s.trim() {
            "composite" => resolve_method(MethodArg::Composite, ridge, k),
            "ridge" => resolve_method(MethodArg::Ridge, ridge, k),
            other => other.parse::<TestMethod>().map_err(|e| usage(e.to_string())),
        })
        .collect()
}

fn cmd_power(a: PowerArgs) -> CliResult<String> {
    check_alpha(a.alpha)?;
    let rhos = parse_vector(&a.rho).map_err(|e| usage(format!("--rho: {e}")))?;
    if let Some(r) = rhos.iter().find(|r| !(r.abs() < 1.0)) {
        return Err(usage(format!("--rho values must satisfy |rho| < 1, got {r}")));
    }
    let methods = parse_methods(&a.methods, a.k, a.ridge)?;
    let seed = resolve_seed(a.seed, a.nondeterministic);
    let mut rows = Vec::new();
    for rho in rhos {
        let mut cfg = PowerConfig::new(a.p, a.n, rho, seed);
        cfg.alpha = a.alpha;
        cfg.reps = a.reps;
        cfg.k = a.k;
        cfg.methods = methods.clone();
        rows.extend(mc_power(&cfg)?);
    }
    match a.out {
        OutFormat::Json => Ok(serde_json::to_string_pretty(&rows).map_err(|e| Error::InvalidInput(e.to_string()))? + "\n"),
        OutFormat::Csv => {
            let mut s = String::from("method,rho,p,n,rejection_rate,std_err,are_vs_composite\n");
            for r in rows {
                let are = r.are_vs_composite.map(|v| v.to_string()).unwrap_or_default();
                let _ = writeln!(s, "{},{},{},{},{},{},{}", r.method, r.rho, r.p, r.n, r.rejection_rate, r.std_err, are);
            }
            Ok(s)
        }
    }
}

fn cmd_spectrum(a: SpectrumArgs, stderr: &mut String) -> CliResult<String> {
    let x = read_csv(&a.input, !a.no_header)?;
    let n = x.nrows();
    let cfg = match a.bandwidth {
        Some(h) => KernelConfig::new(h).map_err(|e| usage(format!("--bandwidth: {e}")))?,
        None => KernelConfig::for_sample_size(n),
    };
    let (_, s) = sample_moments(&x)?;
    let lambda = spectral_decompose(&s)?.eigenvalues;
    let stein = stein_isotonized(lambda.as_slice(), n)?;
    let lw = lw_shrink(lambda.as_slice(), n, &cfg)?;
    for note in stein.adjustments.iter().map(|s| format!("stein: {s}")).chain(lw.adjustments.iter().map(|s| format!("lw: {s}"))) {
        let _ = writeln!(stderr, "warning: {note}");
    }
    let p = lambda.len();
    let m = DMatrix::from_fn(p, 4, |i, j| match j {
        0 => i as f64,
        1 => lambda[i],
        2 => stein.values[i],
        _ => lw.values[i],
    });
    csv_string(&["index", "lambda", "stein", "lw"], &m)
}

fn cmd_mp(a: MpArgs) -> CliResult<String> {
    if !(a.c > 0.0 && a.c < 1.0) {
        return Err(usage(format!("--c must be in (0, 1), got {}", a.c)));
    }
    if a.points == 0 {
        return Err(usage("--points must be at least 1"));
    }
    let model = mp_edges(a.c)?;
    let width = model.upper - model.lower;
    let mut m = DMatrix::zeros(a.points, 4);
    for i in 0..a.points {
        let x = model.lower + (i as f64 + 0.5) / a.points as f64 * width;
        let s = mp_stieltjes(x, &model)?;
        m[(i, 0)] = x;
        m[(i, 1)] = s.re;
        m[(i, 2)] = s.im;
        m[(i, 3)] = mp_density(x, &model);
    }
    csv_string(&["x", "re", "im", "density"], &m)
}

fn cmd_fixture(a: FixtureArgs) -> CliResult<String> {
    if !(a.rho.abs() < 1.0) {
        return Err(usage(format!("--rho must satisfy |rho| < 1, got {}", a.rho)));
    }
    let spec = FixtureSpec { n: a.n, p: a.p, seed: a.seed, rho: a.rho, growth: a.growth };
    let x = metro_fixture(&spec)?;
    let header: Vec<String> = (1..=a.p).map(|j| format!("station_{j:03}")).collect();
    match a.output {
        Some(path) => {
            let file = std::fs::File::create(&path).map_err(Error::from)?;
            write_csv(file, Some(&header), x.as_matrix())?;
            Ok(String::new())
        }
        None => {
            let mut buf = Vec::new();
            write_csv(&mut buf, Some(&header), x.as_matrix())?;
            Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
        }
    }
}

fn csv_string(header: &[&str], m: &DMatrix<f64>) -> CliResult<String> {
    let mut buf = Vec::new();
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    write_csv(&mut buf, Some(&header), m)?;
    Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
}
