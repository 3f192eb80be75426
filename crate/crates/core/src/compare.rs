//! Surveillance-style recovery comparison across allocation policies.
//!
//! Each cell creates a handful of equal "video" files, reads them a seeded
//! number of times, deletes them all, then writes secondary data covering a
//! fraction of the disk and measures how much of the videos is recoverable.

use std::fmt;
use std::str::FromStr;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::disk::{DiskGeometry, FileId, Hyperparams};
use crate::recovery::{recover_file, weighted_rr};
use crate::vfs::{AllocPolicy, FileSystem, FsError, LinkingRule, TypeClass};

#[derive(Debug, Error)]
pub enum CompareError {
    #[error("invalid compare config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Fs(#[from] FsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicyChoice {
    Apex { hyperparams: Hyperparams },
    FirstFit,
    Random { seed: u64 },
}

impl PolicyChoice {
    pub fn label(&self) -> &'static str {
        match self {
            PolicyChoice::Apex { .. } => "apex",
            PolicyChoice::FirstFit => "first-fit",
            PolicyChoice::Random { .. } => "random",
        }
    }

    pub fn alloc_policy(&self) -> AllocPolicy {
        match *self {
            PolicyChoice::Apex { .. } => AllocPolicy::Apex,
            PolicyChoice::FirstFit => AllocPolicy::FirstFit,
            PolicyChoice::Random { seed } => AllocPolicy::Random { seed },
        }
    }

    /// Coefficients the disk carries; baselines ignore them for allocation.
    pub fn hyperparams(&self) -> Hyperparams {
        match *self {
            PolicyChoice::Apex { hyperparams } => hyperparams,
            _ => Hyperparams::TUNED,
        }
    }

    /// Same policy with its randomness tied to an experiment seed.
    pub fn reseeded(&self, seed: u64) -> PolicyChoice {
        match *self {
            PolicyChoice::Random { seed: base } => PolicyChoice::Random {
                seed: base ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15),
            },
            other => other,
        }
    }

    fn order(&self) -> u8 {
        match self {
            PolicyChoice::Apex { .. } => 0,
            PolicyChoice::FirstFit => 1,
            PolicyChoice::Random { .. } => 2,
        }
    }
}

impl fmt::Display for PolicyChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Parses `apex`, `first-fit` or `random`; Apex gets the tuned coefficients
/// and Random seed 0 until overridden.
impl FromStr for PolicyChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "apex" => Ok(PolicyChoice::Apex {
                hyperparams: Hyperparams::TUNED,
            }),
            "first-fit" | "firstfit" => Ok(PolicyChoice::FirstFit),
            "random" => Ok(PolicyChoice::Random { seed: 0 }),
            other => Err(format!(
                "unknown policy `{other}` (expected apex, first-fit or random)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub geometry: DiskGeometry,
    pub linking: LinkingRule,
    pub primary_count: usize,
    /// Share of the disk the primary files occupy, metadata included.
    pub primary_fraction: f64,
    /// Secondary data sizes as shares of the disk.
    pub secondary_fractions: Vec<f64>,
    pub max_secondary_file_blocks: usize,
    /// Each primary file is read between 0 and this many times.
    pub max_primary_reads: u32,
    pub policies: Vec<PolicyChoice>,
    pub seeds: Vec<u64>,
    /// Worker threads; 0 picks the available parallelism.
    pub threads: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            geometry: DiskGeometry::default(),
            linking: LinkingRule::default(),
            primary_count: 5,
            primary_fraction: 0.5,
            secondary_fractions: vec![0.0, 0.40, 0.78],
            max_secondary_file_blocks: 16,
            max_primary_reads: 8,
            policies: vec![
                PolicyChoice::Apex {
                    hyperparams: Hyperparams::TUNED,
                },
                PolicyChoice::FirstFit,
                PolicyChoice::Random { seed: 0 },
            ],
            seeds: (0..10).collect(),
            threads: 0,
        }
    }
}

impl CompareConfig {
    pub fn validate(&self) -> Result<(), CompareError> {
        let bad = |m: &str| Err(CompareError::InvalidConfig(m.to_string()));
        self.geometry
            .validate()
            .map_err(|e| CompareError::InvalidConfig(e.to_string()))?;
        if self.primary_count == 0 {
            return bad("primary_count must be positive");
        }
        if !(self.primary_fraction > 0.0 && self.primary_fraction <= 1.0) {
            return bad("primary_fraction must lie in (0, 1]");
        }
        if self.primary_data_blocks() == 0 {
            return bad(
                "primary files would have no data blocks; enlarge the disk or the fraction",
            );
        }
        if self
            .secondary_fractions
            .iter()
            .any(|f| !(0.0..=1.0).contains(f))
        {
            return bad("secondary fractions must lie in [0, 1]");
        }
        if self.max_secondary_file_blocks == 0 {
            return bad("max_secondary_file_blocks must be positive");
        }
        if self.policies.is_empty() || self.seeds.is_empty() {
            return bad("at least one policy and one seed are required");
        }
        for p in &self.policies {
            if let PolicyChoice::Apex { hyperparams } = p {
                if !hyperparams.in_training_range() {
                    return bad("apex coefficients must lie in [1, 10]");
                }
            }
        }
        Ok(())
    }

    /// Data blocks per primary file.
    pub fn primary_data_blocks(&self) -> usize {
        let total = self.geometry.total_blocks() as f64;
        let per_file = (total * self.primary_fraction / self.primary_count as f64).floor() as usize;
        per_file.saturating_sub(1)
    }

    pub fn secondary_blocks(&self, fraction: f64) -> usize {
        (self.geometry.total_blocks() as f64 * fraction).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub policy: PolicyChoice,
    pub secondary_fraction: f64,
    pub secondary_blocks: usize,
    pub seed: u64,
    pub weighted_rr: f64,
    pub mean_rr: f64,
    pub per_file_rr: Vec<f64>,
}

pub const COMPARE_CSV_HEADER: &str =
    "policy,secondary_fraction,secondary_blocks,seed,weighted_rr,mean_rr,per_file_rr";

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from(COMPARE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let per_file: Vec<String> = r.per_file_rr.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.policy.label(),
            r.secondary_fraction,
            r.secondary_blocks,
            r.seed,
            r.weighted_rr,
            r.mean_rr,
            per_file.join(";")
        ));
    }
    out
}

/// Secondary file sizes in blocks (metadata included) summing to exactly
/// `budget`. The stream depends only on the seed, so a smaller budget yields
/// a prefix of a larger one with the last file cut short.
pub fn secondary_plan(seed: u64, max_file_blocks: usize, budget: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ec0_0da7);
    let mut plan = Vec::new();
    let mut left = budget;
    while left > 0 {
        let size = rng.random_range(1..=max_file_blocks) + 1;
        let take = size.min(left);
        plan.push(take);
        left -= take;
    }
    plan
}

/// One (policy, secondary size, seed) cell.
pub fn run_cell(
    config: &CompareConfig,
    policy: PolicyChoice,
    secondary_fraction: f64,
    seed: u64,
) -> Result<CompareRow, CompareError> {
    let policy = policy.reseeded(seed);
    let mut fs = FileSystem::new(config.geometry, policy.hyperparams(), policy.alloc_policy())?
        .with_linking(config.linking);
    let bs = config.geometry.block_size as u64;
    let data_bytes = config.primary_data_blocks() as u64 * bs;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut primaries: Vec<(String, FileId)> = Vec::with_capacity(config.primary_count);
    for i in 0..config.primary_count {
        fs.advance_clock();
        let path = format!("/video{i}.avi");
        let id = fs.create_file(&path, data_bytes, TypeClass::Partial)?;
        fs.spatial_pass();
        primaries.push((path, id));
    }
    for (path, _) in &primaries {
        for _ in 0..rng.random_range(0..=config.max_primary_reads) {
            fs.advance_clock();
            fs.read_file(path)?;
        }
    }
    for (path, _) in &primaries {
        fs.advance_clock();
        fs.delete_file(path)?;
        fs.spatial_pass();
    }

    let budget = config.secondary_blocks(secondary_fraction);
    for (i, blocks) in secondary_plan(seed, config.max_secondary_file_blocks, budget)
        .into_iter()
        .enumerate()
    {
        fs.advance_clock();
        let bytes = (blocks as u64 - 1) * bs;
        fs.create_file(&format!("/secondary{i:05}.dat"), bytes, TypeClass::Partial)?;
        fs.spatial_pass();
    }

    let per_file_rr: Vec<f64> = primaries
        .iter()
        .map(|(_, id)| {
            let file = fs.file(*id).expect("primary exists");
            recover_file(fs.disk(), file).map(|r| r.rr).unwrap_or(0.0)
        })
        .collect();
    let mean_rr = per_file_rr.iter().sum::<f64>() / per_file_rr.len() as f64;
    Ok(CompareRow {
        policy,
        secondary_fraction,
        secondary_blocks: budget,
        seed,
        weighted_rr: weighted_rr(&fs),
        mean_rr,
        per_file_rr,
    })
}

/// Every (policy, fraction, seed) cell, sorted by policy, fraction, seed.
pub fn run_compare(config: &CompareConfig) -> Result<Vec<CompareRow>, CompareError> {
    config.validate()?;
    let mut cells = Vec::new();
    for &policy in &config.policies {
        for &fraction in &config.secondary_fractions {
            for &seed in &config.seeds {
                cells.push((policy, fraction, seed));
            }
        }
    }
    let threads = match config.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(cells.len())
    .max(1);
    let chunk = cells.len().div_ceil(threads);
    let results: Vec<Result<CompareRow, CompareError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cells
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|&(p, f, s)| run_cell(config, p, f, s))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("compare worker panicked"))
            .collect()
    });
    let mut rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| {
        a.policy
            .order()
            .cmp(&b.policy.order())
            .then(a.secondary_fraction.total_cmp(&b.secondary_fraction))
            .then(a.seed.cmp(&b.seed))
    });
    Ok(rows)
}
