//! Command-line front end. `run` returns the process exit code.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mixlqc::filter::QkFormula;
use mixlqc::harness::{ExperimentConfig, Method, MethodRun};

use crate::config::{parse_config, ConfigError};
use crate::output::{render_artifacts, summary_csv, write_atomic};
use crate::runner::run_parallel;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_FAILURES: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mixlqc", version, about = "Mixed stochastic/set-membership estimation and min-max LQ control experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Open-loop estimation comparison (KF, ESM, MIX).
    Estimate(RunArgs),
    /// Closed-loop control comparison (RCKF, RCESM, RCMIX).
    Control(RunArgs),
    /// Run a built-in table setup with no config file.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Output directory for CSV files.
    #[arg(long, default_value = "mixlqc-out")]
    pub out: PathBuf,
    /// Master seed (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Episodes per method (overrides the config).
    #[arg(long)]
    pub runs: Option<usize>,
    /// Update-step Minkowski parameter formula.
    #[arg(long, value_parser = ["corrected", "paper_literal"])]
    pub qk_formula: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON config; omitted keys take built-in defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated subset of methods, e.g. `kf,mix`.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ReproduceArgs {
    /// 1: estimation table (50 runs), 2: control table (100 runs).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub table: u8,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, thiserror::Error)]
enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] mixlqc::Error),
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing csv: {0}")]
    Csv(#[from] csv::Error),
}

impl AppError {
    fn exit_code(&self) -> i32 {
        match self {
            AppError::Run(_) => EXIT_FAILURES,
            _ => EXIT_CONFIG,
        }
    }
}

struct Plan {
    label: String,
    cfg: ExperimentConfig,
    methods: Vec<Method>,
    out: PathBuf,
}

fn apply_common(cfg: &mut ExperimentConfig, common: &CommonArgs) -> Result<(), AppError> {
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(runs) = common.runs {
        if runs == 0 {
            return Err(AppError::Usage("--runs must be at least 1".into()));
        }
        cfg.runs = runs;
    }
    if let Some(f) = &common.qk_formula {
        cfg.filter.qk_formula = f.parse::<QkFormula>()?;
    }
    Ok(())
}

fn select_methods(requested: &Option<Vec<String>>, allowed: [Method; 3]) -> Result<Vec<Method>, AppError> {
    let Some(names) = requested else {
        return Ok(allowed.to_vec());
    };
    let mut methods = Vec::new();
    for name in names {
        let m: Method = name.parse()?;
        if !allowed.contains(&m) {
            return Err(AppError::Usage(format!("method {m} is not available for this subcommand")));
        }
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    if methods.is_empty() {
        return Err(AppError::Usage("no methods selected".into()));
    }
    Ok(methods)
}

fn plan(command: &Command) -> Result<Plan, AppError> {
    match command {
        Command::Estimate(args) | Command::Control(args) => {
            let (label, allowed) = match command {
                Command::Estimate(_) => ("estimate", Method::ESTIMATION),
                _ => ("control", Method::CONTROL),
            };
            let mut cfg = match &args.config {
                Some(path) => parse_config(path)?,
                None => ExperimentConfig::default(),
            };
            apply_common(&mut cfg, &args.common)?;
            Ok(Plan {
                label: label.to_string(),
                cfg,
                methods: select_methods(&args.methods, allowed)?,
                out: args.common.out.clone(),
            })
        }
        Command::Reproduce(args) => {
            let mut cfg = ExperimentConfig::default();
            let methods = if args.table == 1 {
                Method::ESTIMATION
            } else {
                cfg.runs = 100;
                Method::CONTROL
            };
            apply_common(&mut cfg, &args.common)?;
            Ok(Plan {
                label: format!("table {}", args.table),
                cfg,
                methods: methods.to_vec(),
                out: args.common.out.clone(),
            })
        }
    }
}

fn write_outputs(out: &Path, runs: &[MethodRun], seed: u64) -> Result<(), AppError> {
    for (rel, contents) in render_artifacts(runs, seed)? {
        write_atomic(&out.join(rel), &contents)?;
    }
    Ok(())
}

/// Executes a parsed command line, writing the summary CSV to `stdout` and
/// diagnostics to `stderr`.
pub fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let plan = match plan(&cli.command) {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return e.exit_code();
        }
    };
    let started = Instant::now();
    let result = run_parallel(&plan.cfg, &plan.methods)
        .map_err(AppError::from)
        .and_then(|runs| {
            write_outputs(&plan.out, &runs, plan.cfg.seed)?;
            Ok(runs)
        });
    let runs = match result {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return e.exit_code();
        }
    };
    let metrics: Vec<_> = runs.iter().map(|r| r.metrics.clone()).collect();
    match summary_csv(&metrics, plan.cfg.seed) {
        Ok(s) => {
            let _ = stdout.write_all(s.as_bytes());
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_CONFIG;
        }
    }
    let _ = writeln!(
        stderr,
        "{}: {} runs x {} steps, seed {}, {:.2} s, csv in {}",
        plan.label,
        plan.cfg.runs,
        plan.cfg.steps,
        plan.cfg.seed,
        started.elapsed().as_secs_f64(),
        plan.out.display()
    );
    let mut code = EXIT_OK;
    for m in &metrics {
        if m.failed_episodes > 0 {
            let _ = writeln!(
                stderr,
                "{}: {} of {} episodes used a fallback",
                m.method, m.failed_episodes, m.runs
            );
        }
        if m.over_failure_budget() {
            code = EXIT_FAILURES;
        }
    }
    code
}

/// Parses `args` (including the program name) and runs.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli, stdout, stderr),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = stderr.write_all(rendered.as_bytes());
            } else {
                let _ = stdout.write_all(rendered.as_bytes());
            }
            code
        }
    }
}
