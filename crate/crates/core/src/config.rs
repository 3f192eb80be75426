//! TOML run configuration.
//!
//! Every section and key is optional; omitted values take the library
//! defaults. Unknown keys are rejected so typos surface as errors.
//!
//! ```toml
//! seed = 7
//!
//! [disk]
//! rows = 16
//! cols = 16
//! block_size = 4096
//! neighborhood = "grid-row"     # "none", "contiguous:K"
//! linking = "literal"           # "inverted"
//!
//! [hyperparams]
//! lambda = 4
//! sigma = 7
//! rho = 1
//! mu = 9
//!
//! [policy]
//! kind = "apex"                 # "first-fit", "random"
//! seed = 0                      # random only
//!
//! [workload]
//! total_ops = 1000
//! max_file_blocks = 20
//! linked_percent = 20.0
//! linked_jitter = 5.0
//! min_utilization = 0.70
//! read_write = 0.70
//! create = 0.15
//! delete = 0.15
//!
//! [perf]
//! alpha = 1.0
//! beta = 0.0
//! aat_mode = "seek-cost"        # "timestamp-literal"
//!
//! [train]
//! oin_per_min = 200
//! min_budget = 500
//! epsilon_floor = 3e-5
//! # tau = 48.0
//! learning_rate = 0.1
//! discount = 0.9
//! mode = "q-learning"           # "hill-climb"
//! initial = [1, 1, 1, 1]
//! agent_seed = 0
//!
//! [compare]
//! primary_count = 5
//! primary_fraction = 0.5
//! secondary_fractions = [0.0, 0.40, 0.78]
//! max_secondary_file_blocks = 16
//! max_primary_reads = 8
//! policies = ["apex", "first-fit", "random"]
//! seed_count = 10               # seeds run from `seed` upward
//! threads = 0
//!
//! [output]
//! dir = "out"
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::compare::{CompareConfig, PolicyChoice};
use crate::disk::{hex, DiskGeometry, Hyperparams, Neighborhood};
use crate::recovery::{AatMode, PerfWeights};
use crate::tuner::{LearnerMode, TrainConfig, TrainSchedule};
use crate::vfs::LinkingRule;
use crate::workload::{OpMix, WorkloadConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    #[serde(default)]
    disk: RawDisk,
    #[serde(default)]
    hyperparams: RawHyperparams,
    #[serde(default)]
    policy: RawPolicy,
    #[serde(default)]
    workload: RawWorkload,
    #[serde(default)]
    perf: RawPerf,
    #[serde(default)]
    train: RawTrain,
    #[serde(default)]
    compare: RawCompare,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDisk {
    rows: Option<u32>,
    cols: Option<u32>,
    block_size: Option<usize>,
    neighborhood: Option<String>,
    linking: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHyperparams {
    lambda: Option<i32>,
    sigma: Option<i32>,
    rho: Option<i32>,
    mu: Option<i32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    kind: Option<String>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWorkload {
    total_ops: Option<u64>,
    max_file_blocks: Option<u32>,
    linked_percent: Option<f64>,
    linked_jitter: Option<f64>,
    min_utilization: Option<f64>,
    read_write: Option<f64>,
    create: Option<f64>,
    delete: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPerf {
    alpha: Option<f64>,
    beta: Option<f64>,
    aat_mode: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    oin_per_min: Option<u64>,
    min_budget: Option<u64>,
    epsilon_floor: Option<f64>,
    tau: Option<f64>,
    learning_rate: Option<f64>,
    discount: Option<f64>,
    mode: Option<String>,
    initial: Option<[i32; 4]>,
    agent_seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCompare {
    primary_count: Option<usize>,
    primary_fraction: Option<f64>,
    secondary_fractions: Option<Vec<f64>>,
    max_secondary_file_blocks: Option<usize>,
    max_primary_reads: Option<u32>,
    policies: Option<Vec<String>>,
    seed_count: Option<u64>,
    threads: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

/// Fully resolved and validated settings for every command.
#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub seed: u64,
    pub geometry: DiskGeometry,
    pub linking: LinkingRule,
    pub hyperparams: Hyperparams,
    pub policy: PolicyChoice,
    pub workload: WorkloadConfig,
    pub weights: PerfWeights,
    pub train: TrainConfig,
    pub compare: CompareConfig,
    pub output_dir: PathBuf,
    /// SHA-256 of the config text the settings came from.
    pub hash: String,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig::from_toml_str("").expect("defaults are valid")
    }
}

fn parse_neighborhood(s: &str) -> Result<Neighborhood, ConfigError> {
    match s {
        "grid-row" => Ok(Neighborhood::GridRow),
        "none" => Ok(Neighborhood::None),
        other => other
            .strip_prefix("contiguous:")
            .and_then(|k| k.parse().ok())
            .map(|k| Neighborhood::ContiguousK { k })
            .ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "disk.neighborhood `{other}` (expected grid-row, none or contiguous:K)"
                ))
            }),
    }
}

fn parse_linking(s: &str) -> Result<LinkingRule, ConfigError> {
    match s {
        "literal" => Ok(LinkingRule::Literal),
        "inverted" => Ok(LinkingRule::Inverted),
        other => Err(ConfigError::Invalid(format!(
            "disk.linking `{other}` (expected literal or inverted)"
        ))),
    }
}

fn check_coeffs(name: &str, hp: Hyperparams) -> Result<(), ConfigError> {
    if hp.in_training_range() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!(
            "{name} {hp} outside [{}, {}]",
            Hyperparams::MIN_COEFF,
            Hyperparams::MAX_COEFF
        )))
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        AppConfig::from_toml_str(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<inline>"),
            message: e.message().to_string(),
        })?;
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        let seed = raw.seed.unwrap_or(0);

        let base_geometry = DiskGeometry::default();
        let geometry = DiskGeometry {
            rows: raw.disk.rows.unwrap_or(base_geometry.rows),
            cols: raw.disk.cols.unwrap_or(base_geometry.cols),
            block_size: raw.disk.block_size.unwrap_or(base_geometry.block_size),
            neighborhood: match &raw.disk.neighborhood {
                Some(s) => parse_neighborhood(s)?,
                None => base_geometry.neighborhood,
            },
        };
        geometry.validate().map_err(|e| invalid(&e))?;
        let linking = match &raw.disk.linking {
            Some(s) => parse_linking(s)?,
            None => LinkingRule::default(),
        };

        let t = Hyperparams::TUNED;
        let h = &raw.hyperparams;
        let hyperparams = Hyperparams::new(
            h.lambda.unwrap_or(t.lambda),
            h.sigma.unwrap_or(t.sigma),
            h.rho.unwrap_or(t.rho),
            h.mu.unwrap_or(t.mu),
        );
        check_coeffs("hyperparams", hyperparams)?;

        let policy_seed = raw.policy.seed.unwrap_or(seed);
        let policy = match raw.policy.kind.as_deref().unwrap_or("apex") {
            "apex" => PolicyChoice::Apex { hyperparams },
            "first-fit" => PolicyChoice::FirstFit,
            "random" => PolicyChoice::Random { seed: policy_seed },
            other => {
                return Err(ConfigError::Invalid(format!(
                    "policy.kind `{other}` (expected apex, first-fit or random)"
                )))
            }
        };

        let wd = WorkloadConfig::default();
        let w = &raw.workload;
        let workload = WorkloadConfig {
            seed,
            max_file_blocks: w.max_file_blocks.unwrap_or(wd.max_file_blocks),
            linked_percent: w.linked_percent.unwrap_or(wd.linked_percent),
            linked_jitter: w.linked_jitter.unwrap_or(wd.linked_jitter),
            min_utilization: w.min_utilization.unwrap_or(wd.min_utilization),
            op_mix: OpMix {
                read_write: w.read_write.unwrap_or(wd.op_mix.read_write),
                create: w.create.unwrap_or(wd.op_mix.create),
                delete: w.delete.unwrap_or(wd.op_mix.delete),
            },
            total_ops: w.total_ops.unwrap_or(wd.total_ops),
        };
        workload.validate().map_err(|e| invalid(&e))?;

        let pd = PerfWeights::default();
        let aat_mode = match &raw.perf.aat_mode {
            Some(s) => s.parse::<AatMode>().map_err(|e| invalid(&e))?,
            None => pd.aat_mode,
        };
        let weights = PerfWeights::new(
            raw.perf.alpha.unwrap_or(pd.alpha),
            raw.perf.beta.unwrap_or(pd.beta),
            aat_mode,
        )
        .map_err(|e| invalid(&e))?;

        let td = TrainConfig::default();
        let sd = TrainSchedule::default();
        let tr = &raw.train;
        let mode = match tr.mode.as_deref() {
            None | Some("q-learning") => LearnerMode::QLearning,
            Some("hill-climb") => LearnerMode::HillClimb,
            Some(other) => {
                return Err(ConfigError::Invalid(format!(
                    "train.mode `{other}` (expected q-learning or hill-climb)"
                )))
            }
        };
        let initial = tr
            .initial
            .map(Hyperparams::from_array)
            .unwrap_or(td.initial);
        check_coeffs("train.initial", initial)?;
        let train = TrainConfig {
            geometry,
            linking,
            workload: workload.clone(),
            weights,
            schedule: TrainSchedule {
                oin_per_min: tr.oin_per_min.unwrap_or(sd.oin_per_min),
                min_budget: tr.min_budget.unwrap_or(sd.min_budget),
                epsilon_floor: tr.epsilon_floor.unwrap_or(sd.epsilon_floor),
                tau: tr.tau.or(sd.tau),
            },
            learning_rate: tr.learning_rate.unwrap_or(td.learning_rate),
            discount: tr.discount.unwrap_or(td.discount),
            mode,
            initial,
            agent_seed: tr.agent_seed.unwrap_or(seed),
        };
        train.validate().map_err(|e| invalid(&e))?;

        let cd = CompareConfig::default();
        let c = &raw.compare;
        let policies = match &c.policies {
            Some(names) => names
                .iter()
                .map(|n| {
                    n.parse::<PolicyChoice>().map(|p| match p {
                        PolicyChoice::Apex { .. } => PolicyChoice::Apex { hyperparams },
                        PolicyChoice::Random { .. } => PolicyChoice::Random { seed: policy_seed },
                        other => other,
                    })
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(ConfigError::Invalid)?,
            None => vec![
                PolicyChoice::Apex { hyperparams },
                PolicyChoice::FirstFit,
                PolicyChoice::Random { seed: policy_seed },
            ],
        };
        let seed_count = c.seed_count.unwrap_or(cd.seeds.len() as u64);
        let compare = CompareConfig {
            geometry,
            linking,
            primary_count: c.primary_count.unwrap_or(cd.primary_count),
            primary_fraction: c.primary_fraction.unwrap_or(cd.primary_fraction),
            secondary_fractions: c
                .secondary_fractions
                .clone()
                .unwrap_or(cd.secondary_fractions),
            max_secondary_file_blocks: c
                .max_secondary_file_blocks
                .unwrap_or(cd.max_secondary_file_blocks),
            max_primary_reads: c.max_primary_reads.unwrap_or(cd.max_primary_reads),
            policies,
            seeds: (seed..seed.saturating_add(seed_count)).collect(),
            threads: c.threads.unwrap_or(cd.threads),
        };
        compare.validate().map_err(|e| invalid(&e))?;

        Ok(AppConfig {
            seed,
            geometry,
            linking,
            hyperparams,
            policy,
            workload,
            weights,
            train,
            compare,
            output_dir: raw.output.dir.unwrap_or_else(|| PathBuf::from("out")),
            hash: hex(&Sha256::digest(text.as_bytes())),
        })
    }

    /// Replaces the seed everywhere it was inherited.
    pub fn with_seed(mut self, seed: u64) -> Self {
        let shift = seed.wrapping_sub(self.seed);
        self.seed = seed;
        self.workload.seed = seed;
        self.train.workload.seed = seed;
        self.train.agent_seed = self.train.agent_seed.wrapping_add(shift);
        let count = self.compare.seeds.len() as u64;
        self.compare.seeds = (seed..seed.saturating_add(count)).collect();
        self
    }

    pub fn with_policy(mut self, policy: PolicyChoice) -> Self {
        self.policy = match policy {
            PolicyChoice::Apex { .. } => PolicyChoice::Apex {
                hyperparams: self.hyperparams,
            },
            PolicyChoice::Random { .. } => PolicyChoice::Random { seed: self.seed },
            other => other,
        };
        self
    }
}
