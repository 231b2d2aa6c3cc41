//! Batch runner: binds experiment configurations to the `plmx` pipelines and
//! writes CSV artifacts.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 for
//! configuration errors, 3 for numerical failures.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

/// Why a run did not succeed; each maps to one exit code.
#[derive(Clone, Debug, PartialEq)]
pub enum Failure {
    Check(String),
    Config(String),
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Check(_) => 1,
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    pub fn status(&self) -> &'static str {
        match self {
            Failure::Check(_) => "check-failed",
            Failure::Config(_) => "config-error",
            Failure::Numerical(_) => "numerical-failure",
        }
    }

    pub fn detail(&self) -> &str {
        match self {
            Failure::Check(s) | Failure::Config(s) | Failure::Numerical(s) => s,
        }
    }
}

impl From<plmx::Error> for Failure {
    fn from(e: plmx::Error) -> Self {
        use plmx::Error as E;
        match e {
            e if e.is_numerical() => Failure::Numerical(e.to_string()),
            e @ (E::InsufficientData(_) | E::WeightSum(_)) => Failure::Check(e.to_string()),
            e => Failure::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "plmx", version, about = "Experiments for the stochastic p-Laplace equation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Default, Args)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to PLMX_WORKERS, then the machine's parallelism.
    #[arg(long, env = "PLMX_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub eps_grid: Option<Vec<f64>>,
    /// `section.key=value`, applied after the file and before other flags.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Deterministic scalar flow against its closed form.
    RunOde(Common),
    /// Scalar SDE ensemble.
    RunSde(Common),
    /// Deterministic field evolution.
    RunPde(Common),
    /// Stochastic field ensemble.
    RunSpde(Common),
    /// Distance to the stationary law over time.
    DistanceCurve(Common),
    /// Mixing times, fits and bounds.
    MixingTime(Common),
    /// Decay experiments for each row of the convergence table.
    VerifyRates(Common),
    /// Both rate tables as CSV.
    EmitTables(Common),
    /// Mixture inequality on random instances.
    CheckDisintegration(Common),
    /// Continue a run-sde or run-spde ensemble from a checkpoint.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::RunOde(_) => "run-ode",
            Command::RunSde(_) => "run-sde",
            Command::RunPde(_) => "run-pde",
            Command::RunSpde(_) => "run-spde",
            Command::DistanceCurve(_) => "distance-curve",
            Command::MixingTime(_) => "mixing-time",
            Command::VerifyRates(_) => "verify-rates",
            Command::EmitTables(_) => "emit-tables",
            Command::CheckDisintegration(_) => "check-disintegration",
            Command::Resume { .. } => "resume",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::RunOde(c)
            | Command::RunSde(c)
            | Command::RunPde(c)
            | Command::RunSpde(c)
            | Command::DistanceCurve(c)
            | Command::MixingTime(c)
            | Command::VerifyRates(c)
            | Command::EmitTables(c)
            | Command::CheckDisintegration(c) => c,
            Command::Resume { common, .. } => common,
        }
    }
}

/// Key-value summary of a finished run plus any failed checks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    pub lines: Vec<(String, String)>,
    pub failed_checks: Vec<String>,
}

impl Summary {
    pub fn put(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    pub fn num(&mut self, key: &str, value: f64) {
        self.put(key, plmx::io::fmt_f64(value));
    }

    pub fn check(&mut self, name: &str, ok: bool, detail: impl std::fmt::Display) {
        self.put(&format!("check.{name}"), if ok { "pass".to_string() } else { format!("fail ({detail})") });
        if !ok {
            self.failed_checks.push(format!("{name}: {detail}"));
        }
    }
}

fn load_config(c: &Common) -> Result<config::ExperimentConfig, Failure> {
    let mut overrides = c.overrides.clone();
    if let Some(s) = c.seed {
        overrides.push(format!("ensemble.seed={s}"));
    }
    if let Some(o) = &c.out {
        overrides.push(format!("outputs.dir={}", toml::Value::String(o.display().to_string())));
    }
    if let Some(e) = &c.eps_grid {
        let list: Vec<String> = e.iter().map(|v| format!("{v:?}")).collect();
        overrides.push(format!("schedule.eps_grid=[{}]", list.join(",")));
    }
    config::load(c.config.as_deref(), &overrides)
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn write_summary(dir: &Path, command: &str, summary: &Summary, status: &str, reason: &str) -> std::io::Result<()> {
    let mut text = format!("command={command}\nstatus={status}\n");
    if !reason.is_empty() {
        text.push_str(&format!("reason={reason}\n"));
    }
    for (k, v) in &summary.lines {
        text.push_str(&format!("{k}={v}\n"));
    }
    std::fs::write(dir.join("summary.txt"), text)
}

/// Runs one invocation and returns the process exit code. Every outcome
/// prints a `status=... reason=...` line on stderr.
pub fn run(cli: Cli) -> i32 {
    let name = cli.command.name();
    let common = cli.command.common().clone();
    let cfg = match load_config(&common) {
        Ok(c) => c,
        Err(f) => return report(name, None, &Summary::default(), Some(&f)),
    };
    let out = cfg.outputs.dir.clone();
    if let Err(e) = std::fs::create_dir_all(&out) {
        let f = Failure::Config(format!("output directory {}: {e}", out.display()));
        return report(name, None, &Summary::default(), Some(&f));
    }
    if let Err(e) = toml::to_string(&cfg)
        .map_err(|e| std::io::Error::other(e.to_string()))
        .and_then(|t| std::fs::write(out.join("effective_config.toml"), t))
    {
        let f = Failure::Config(format!("cannot echo config: {e}"));
        return report(name, Some(&out), &Summary::default(), Some(&f));
    }
    let workers = common.workers.unwrap_or_else(default_workers);
    let result = plmx::exec::with_workers(workers, || commands::dispatch(&cli.command, &cfg));
    match result {
        Ok(summary) if summary.failed_checks.is_empty() => report(name, Some(&out), &summary, None),
        Ok(summary) => {
            let f = Failure::Check(summary.failed_checks.join("; "));
            report(name, Some(&out), &summary, Some(&f))
        }
        Err(f) => report(name, Some(&out), &Summary::default(), Some(&f)),
    }
}

fn report(command: &str, out: Option<&Path>, summary: &Summary, failure: Option<&Failure>) -> i32 {
    let (status, reason, code) = match failure {
        None => ("ok", String::new(), 0),
        Some(f) => (f.status(), f.detail().replace('\n', " "), f.exit_code()),
    };
    for (k, v) in &summary.lines {
        println!("{k}={v}");
    }
    eprintln!("status={status} command={command} reason=\"{}\"", reason.replace('"', "'"));
    if let Some(dir) = out {
        if write_summary(dir, command, summary, status, &reason).is_err() && code == 0 {
            eprintln!("status=config-error command={command} reason=\"cannot write summary.txt\"");
            return 2;
        }
    }
    code
}

/// Parses `args` (including the program name) and runs; parse errors exit 2.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            0
        }
        Err(e) => {
            let _ = e.print();
            eprintln!("status=config-error command=? reason=\"invalid command line\"");
            2
        }
    }
}
