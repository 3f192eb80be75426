//! Command-line front end.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::compare::{compare_csv, run_compare, CompareError, PolicyChoice};
use crate::config::{AppConfig, ConfigError};
use crate::recovery::{recovery_csv, recovery_table};
use crate::tuner::{train, TunerError};
use crate::vfs::{FileSystem, FsError};
use crate::workload::{parse_trace, replay_trace, run_simulation, trace_to_jsonl, WorkloadError};

#[derive(Debug, Parser)]
#[command(
    name = "apex",
    version,
    about = "Recovery-aware block allocation simulator"
)]
pub struct Cli {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory for report files.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Allocation policy for simulate, replay and recover.
    #[arg(long, global = true, value_enum)]
    pub policy: Option<PolicyArg>,
    /// Trace file: written by simulate, read by replay and recover.
    #[arg(long, global = true, value_name = "PATH")]
    pub trace: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Apex,
    FirstFit,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Learn coefficients with Q-learning.
    Train,
    /// Run the seeded workload and record its trace.
    Simulate,
    /// Re-execute a recorded trace.
    Replay,
    /// Recovery sweep across policies and secondary sizes.
    Compare,
    /// Recovery table for the deleted files of a run.
    Recover,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Simulate => "simulate",
            Command::Replay => "replay",
            Command::Compare => "compare",
            Command::Recover => "recover",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: config, flags or trace.
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<WorkloadError> for CliError {
    fn from(e: WorkloadError) -> Self {
        match e {
            WorkloadError::Invariant(_) => CliError::Internal(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<TunerError> for CliError {
    fn from(e: TunerError) -> Self {
        match e {
            TunerError::InvalidConfig(_) => CliError::Invalid(e.to_string()),
            TunerError::Workload(w) => w.into(),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<CompareError> for CliError {
    fn from(e: CompareError) -> Self {
        match e {
            CompareError::InvalidConfig(_) => CliError::Invalid(e.to_string()),
            CompareError::Fs(_) => CliError::Internal(e.to_string()),
        }
    }
}

impl From<FsError> for CliError {
    fn from(e: FsError) -> Self {
        CliError::Internal(e.to_string())
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Internal(format!("{}: {e}", path.display()))
}

/// `<command>-<seed>-<unix millis>`, with a counter suffix if that name is
/// already taken in `dir`.
fn output_stem(dir: &Path, command: &str, seed: u64) -> String {
    let millis = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis());
    let base = format!("{command}-{seed}-{millis}");
    let taken = |stem: &str| {
        std::fs::read_dir(dir)
            .map(|entries| {
                entries.flatten().any(|e| {
                    e.file_name()
                        .to_str()
                        .is_some_and(|n| n.starts_with(&format!("{stem}.")))
                })
            })
            .unwrap_or(false)
    };
    if !taken(&base) {
        return base;
    }
    (1..)
        .map(|n| format!("{base}-{n}"))
        .find(|s| !taken(s))
        .expect("unbounded")
}

struct Outputs {
    dir: PathBuf,
    stem: String,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path, command: &str, seed: u64) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            stem: output_stem(dir, command, seed),
            written: Vec::new(),
        })
    }

    fn write(&mut self, suffix: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.dir.join(format!("{}.{suffix}", self.stem));
        std::fs::write(&path, contents).map_err(|e| io_error(&path, e))?;
        self.written.push(path.clone());
        Ok(path)
    }

    fn listing(&self) -> String {
        self.written
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

fn load_config(cli: &Cli) -> Result<AppConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    if let Some(p) = cli.policy {
        let choice = match p {
            PolicyArg::Apex => "apex",
            PolicyArg::FirstFit => "first-fit",
            PolicyArg::Random => "random",
        };
        config = config.with_policy(choice.parse::<PolicyChoice>().map_err(CliError::Invalid)?);
    }
    if let Some(dir) = &cli.out {
        config.output_dir = dir.clone();
    }
    Ok(config)
}

fn fresh_fs(config: &AppConfig) -> Result<FileSystem, CliError> {
    Ok(FileSystem::new(
        config.geometry,
        config.policy.hyperparams(),
        config.policy.alloc_policy(),
    )?
    .with_linking(config.linking))
}

fn read_trace(path: &Path) -> Result<Vec<crate::workload::WorkloadOp>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Invalid(format!("cannot read trace {}: {e}", path.display())))?;
    Ok(parse_trace(&text)?)
}

fn check(fs: &FileSystem) -> Result<(), CliError> {
    fs.check_invariants()
        .map_err(|e| CliError::Internal(format!("invariant violated: {e}")))
}

/// Runs one command; returns the one-line summary for stdout.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let config = load_config(cli)?;
    let command = cli.command;
    let mut out = Outputs::new(&config.output_dir, command.name(), config.seed)?;
    let summary = match command {
        Command::Train => {
            let mut report = train(&config.train)?;
            report.config_hash = Some(config.hash.clone());
            out.write("json", &report.to_json())?;
            out.write("csv", &report.to_csv())?;
            let e = report.evaluation;
            let ratio = if e.initial_p > 0.0 {
                format!("{:.3}x", e.final_greedy_p / e.initial_p)
            } else {
                "n/a".to_string()
            };
            format!(
                "train: final {} best {} P {:.2} -> {:.2} ({ratio}), first-fit {:.2}",
                report.final_state, report.best_tuple, e.initial_p, e.final_greedy_p, e.first_fit_p
            )
        }
        Command::Simulate => {
            let mut fs = fresh_fs(&config)?;
            let mut outcome = run_simulation(&config.workload, &mut fs, &config.weights)?;
            check(&fs)?;
            outcome.report.config_hash = Some(config.hash.clone());
            out.write("json", &outcome.report.to_json())?;
            out.write("snapshot.json", &fs.snapshot().to_json())?;
            let trace_text = trace_to_jsonl(&outcome.trace);
            match &cli.trace {
                Some(path) => {
                    std::fs::write(path, &trace_text).map_err(|e| io_error(path, e))?;
                    out.written.push(path.clone());
                }
                None => {
                    out.write("trace.jsonl", &trace_text)?;
                }
            }
            let f = &outcome.report.final_state;
            format!(
                "simulate: {} ops, utilization {:.3}, weighted_rr {:.2}, P {:.2}",
                outcome.report.total_ops, f.utilization, f.weighted_rr, f.performance
            )
        }
        Command::Replay => {
            let path = cli
                .trace
                .as_ref()
                .ok_or_else(|| CliError::Invalid("replay needs --trace PATH".into()))?;
            let trace = read_trace(path)?;
            let mut fs = fresh_fs(&config)?;
            let mut report = replay_trace(&trace, &mut fs, &config.weights)?;
            check(&fs)?;
            report.seed = Some(config.seed);
            report.config_hash = Some(config.hash.clone());
            out.write("json", &report.to_json())?;
            out.write("snapshot.json", &fs.snapshot().to_json())?;
            format!(
                "replay: {} ops, weighted_rr {:.2}, P {:.2}",
                report.total_ops, report.final_state.weighted_rr, report.final_state.performance
            )
        }
        Command::Compare => {
            let rows = run_compare(&config.compare)?;
            out.write("csv", &compare_csv(&rows))?;
            let json = serde_json::json!({
                "seed": config.seed,
                "config_hash": config.hash,
                "rows": rows,
            });
            out.write(
                "json",
                &serde_json::to_string_pretty(&json).expect("rows serialize"),
            )?;
            format!("compare: {} cells", rows.len())
        }
        Command::Recover => {
            let mut fs = fresh_fs(&config)?;
            match &cli.trace {
                Some(path) => {
                    let trace = read_trace(path)?;
                    replay_trace(&trace, &mut fs, &config.weights)?;
                }
                None => {
                    run_simulation(&config.workload, &mut fs, &config.weights)?;
                }
            }
            check(&fs)?;
            let rows = recovery_table(&fs);
            out.write("csv", &recovery_csv(&rows))?;
            let json = serde_json::json!({
                "seed": config.seed,
                "config_hash": config.hash,
                "rows": rows,
            });
            out.write(
                "json",
                &serde_json::to_string_pretty(&json).expect("rows serialize"),
            )?;
            format!("recover: {} removed files", rows.len())
        }
    };
    Ok(format!("{summary}; wrote {}", out.listing()))
}
