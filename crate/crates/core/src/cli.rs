//! Command-line surface: `analyze`, `permlm` and `simulate`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::designs::DesignSpec;
use crate::error::{Error, Result};
use crate::estimators::{Adjustment, StatisticSpec, Studentization};
use crate::frt::{
    design_estimate, frt_p_value, invert_ci, CiOptions, FrtOptions, FrtResult, Sided,
};
use crate::io::{load_csv, to_json, ErrorJson, ReplicateHistogram, ReportJson, VERSION};
use crate::perm_lm::{perm_lm_p_value, PermLmSpec, Scheme};
use crate::sim::{builtin, run_scenario, RejectionTable, ScenarioConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const THREADS_ENV: &str = "RANDTEST_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "randtest",
    version,
    about = "Covariate-adjusted Fisher randomization tests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Randomization test of a treatment-effect statistic on a CSV file.
    Analyze(AnalyzeArgs),
    /// Permutation test of the ANCOVA treatment coefficient.
    Permlm(PermLmArgs),
    /// Repeated-sampling simulation of a named or file-based scenario.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DesignKind {
    Complete,
    Stratified,
    Cluster,
    Rem,
}

#[derive(Debug, Args)]
struct TestArgs {
    /// Monte Carlo replicates.
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Enumerate the full assignment space instead of sampling it.
    #[arg(long)]
    exact: bool,
    #[arg(long, default_value = "two", value_parser = ["one", "two"])]
    sided: String,
    /// Include a 20-bin histogram of the replicate statistics.
    #[arg(long)]
    histogram: bool,
}

impl TestArgs {
    fn options(&self) -> Result<FrtOptions> {
        let opts = if self.exact {
            FrtOptions::exact()
        } else {
            FrtOptions::monte_carlo(self.reps, self.seed)
        };
        Ok(opts.sided(self.sided.parse::<Sided>()?))
    }
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Input CSV with columns y, z and optional x1..xJ, stratum, cluster.
    data: PathBuf,
    #[arg(long, default_value = "l", value_parser = ["n", "r", "f", "l"], ignore_case = true)]
    stat: String,
    #[arg(long, default_value = "robust", value_parser = ["none", "classic", "robust"])]
    student: String,
    #[arg(long, value_enum, default_value_t = DesignKind::Complete)]
    design: DesignKind,
    /// Rerandomization threshold on the balance criterion.
    #[arg(long)]
    rem_a: Option<f64>,
    /// Covariates balanced by rerandomization, by name or 1-based index.
    #[arg(long, value_delimiter = ',')]
    rem_cols: Vec<String>,
    #[command(flatten)]
    test: TestArgs,
    /// Add the confidence interval obtained by inverting the test.
    #[arg(long)]
    ci: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Grid points for the confidence interval search.
    #[arg(long, default_value_t = 201)]
    ci_points: usize,
}

#[derive(Debug, Args)]
struct PermLmArgs {
    data: PathBuf,
    #[arg(long, default_value = "fl", value_parser = ["fl", "kennedy", "terbraak", "manly"])]
    scheme: String,
    #[arg(long, default_value = "robust", value_parser = ["none", "classic", "robust"])]
    student: String,
    #[command(flatten)]
    test: TestArgs,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Built-in scenario name or path to a JSON scenario file.
    scenario: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    reps: Option<usize>,
    /// Permutations per replication.
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    population_seed: Option<u64>,
    /// Comma-separated statistics such as `L/robust,N/none`.
    #[arg(long, value_delimiter = ',')]
    statistics: Vec<String>,
    /// Include every replication's p-values.
    #[arg(long)]
    p_values: bool,
}

#[derive(Debug, Serialize)]
struct SimulationReport {
    version: &'static str,
    command: &'static str,
    scenario: ScenarioConfig,
    seed: u64,
    tau: f64,
    table: RejectionTable,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_values: Option<Vec<Vec<f64>>>,
}

/// Result of one invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

enum Failure {
    Usage(String),
    Domain(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

fn attach_histogram(report: &mut ReportJson, res: &FrtResult, wanted: bool) {
    if wanted {
        report.histogram = ReplicateHistogram::new(&res.replicates);
    }
}

fn analyze(args: &AnalyzeArgs) -> std::result::Result<String, Failure> {
    let table = load_csv(&args.data)?;
    let data = &table.data;
    let spec = StatisticSpec::new(
        args.stat.parse::<Adjustment>()?,
        args.student.parse::<Studentization>()?,
    );
    let design = match args.design {
        DesignKind::Complete => DesignSpec::complete_for(data),
        DesignKind::Stratified => DesignSpec::stratified_for(data)?,
        DesignKind::Cluster => DesignSpec::cluster_for(data)?,
        DesignKind::Rem => {
            let a = args
                .rem_a
                .ok_or_else(|| Failure::Usage("--design rem requires --rem-a".into()))?;
            let cols = args
                .rem_cols
                .iter()
                .map(|c| table.covariate_index(c))
                .collect::<Result<Vec<usize>>>()?;
            DesignSpec::rem_for(data, a, &cols)?
        }
    };
    let opts = args.test.options()?;
    let res = frt_p_value(data, spec, &design, &opts)?;
    let estimate = design_estimate(data, spec.adjustment, &design)?;
    let mut report = ReportJson::new("analyze", &res, &estimate);
    attach_histogram(&mut report, &res, args.test.histogram);
    if args.ci {
        let ci = CiOptions {
            points: args.ci_points,
            ..CiOptions::new(args.alpha)
        };
        report.ci = Some(invert_ci(data, spec, &design, &opts, &ci)?);
    }
    Ok(to_json(&report)?)
}

fn permlm(args: &PermLmArgs) -> std::result::Result<String, Failure> {
    let table = load_csv(&args.data)?;
    let data = table.data.without_labels();
    let spec = PermLmSpec {
        scheme: args.scheme.parse::<Scheme>()?,
        studentization: args.student.parse::<Studentization>()?,
    };
    let res = perm_lm_p_value(&data, spec, &args.test.options()?)?;
    let estimate = design_estimate(&data, Adjustment::Fisher, &DesignSpec::complete_for(&data))?;
    let mut report = ReportJson::new("permlm", &res, &estimate);
    report.scheme = Some(spec.scheme.name().to_string());
    attach_histogram(&mut report, &res, args.test.histogram);
    Ok(to_json(&report)?)
}

fn load_scenario(name: &str) -> std::result::Result<ScenarioConfig, Failure> {
    let path = Path::new(name);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{name}: {e}")))?;
        return serde_json::from_str(&text).map_err(|e| {
            Failure::Domain(Error::InvalidInput(format!("scenario file {name}: {e}")))
        });
    }
    builtin(name).map_err(|e| Failure::Usage(e.to_string()))
}

fn simulate(args: &SimulateArgs) -> std::result::Result<String, Failure> {
    let mut cfg = load_scenario(&args.scenario)?;
    cfg.seed = args.seed;
    if let Some(r) = args.reps {
        cfg.reps = r;
    }
    if let Some(r) = args.permutations {
        cfg.permutations = r;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(s) = args.population_seed {
        cfg.population_seed = s;
    }
    if !args.statistics.is_empty() {
        cfg.statistics = args
            .statistics
            .iter()
            .map(|s| s.parse::<StatisticSpec>())
            .collect::<Result<_>>()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let out = run_scenario(&cfg)?;
    let report = SimulationReport {
        version: VERSION,
        command: "simulate",
        seed: cfg.seed,
        scenario: cfg,
        tau: out.tau,
        table: out.table,
        p_values: args.p_values.then_some(out.p_values),
    };
    Ok(to_json(&report)?)
}

fn failure_outcome(kind: &str, message: String, code: i32) -> Outcome {
    let body = to_json(&ErrorJson::new(kind, message.clone()))
        .unwrap_or_else(|_| "{\"error\":{\"kind\":\"Internal\",\"message\":\"\"}}\n".into());
    Outcome {
        code,
        stdout: body,
        stderr: format!("error: {message}\n"),
    }
}

fn thread_count() -> std::result::Result<Option<usize>, String> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            )),
        },
    }
}

/// Parses `args` (program name first) and runs the command. Success and
/// error reports are written to `stdout` as JSON.
pub fn run<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.to_string();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    Outcome {
                        code: EXIT_OK,
                        stdout: text,
                        stderr: String::new(),
                    }
                }
                _ => failure_outcome(
                    "UsageError",
                    text.trim_end().trim_start_matches("error: ").to_string(),
                    EXIT_USAGE,
                ),
            };
        }
    };
    let threads = match thread_count() {
        Ok(t) => t,
        Err(m) => return failure_outcome("UsageError", m, EXIT_USAGE),
    };
    let execute = || match &cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Permlm(a) => permlm(a),
        Command::Simulate(a) => simulate(a),
    };
    let result = match threads {
        None => execute(),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(execute),
            Err(e) => Err(Failure::Domain(Error::Io(e.to_string()))),
        },
    };
    match result {
        Ok(stdout) => Outcome {
            code: EXIT_OK,
            stdout,
            stderr: String::new(),
        },
        Err(Failure::Usage(m)) => failure_outcome("UsageError", m, EXIT_USAGE),
        Err(Failure::Domain(e)) => failure_outcome(e.kind(), e.to_string(), EXIT_DOMAIN),
    }
}
