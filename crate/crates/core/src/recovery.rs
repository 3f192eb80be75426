//! Post-deletion recovery and the performance objective.
//!
//! A block of a deleted file survives while it is unused, still names the file
//! as its most recent parent and still holds the payload version the file
//! left behind. Recovery ratio (RR) per file class:
//!
//! * linked: 1 if every block survives, else 0;
//! * partial: surviving data bytes over file size, but only with the metadata
//!   block intact (0 otherwise).
//!
//! The objective combines the usage-weighted mean RR of removed files with an
//! access-time term over the files still in use:
//! `P = α · 100·Σ(RR·UF)/ΣUF − β · mean(AAT)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::disk::{BlockAddr, Disk, FileId};
use crate::vfs::{FileRecord, FileStatus, FileSystem, TypeClass};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecoveryError {
    #[error("file {0} is still in use")]
    FileInUse(FileId),
    #[error(
        "weights must satisfy 0 <= alpha, beta <= 1 and alpha + beta = 1 (got {alpha}, {beta})"
    )]
    InvalidWeights { alpha: f64, beta: f64 },
    #[error("unknown access-time mode {0:?}")]
    UnknownMode(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub file_id: FileId,
    pub surviving_blocks: Vec<BlockAddr>,
    pub metadata_intact: bool,
    pub recovered_bytes: u64,
    pub rr: f64,
}

/// How the access-time term is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AatMode {
    /// Mean logical tick of the last read/write (creation tick if none).
    TimestampLiteral,
    /// Mean normalized address-gap sum along each file's block list.
    #[default]
    SeekCost,
}

impl std::str::FromStr for AatMode {
    type Err = RecoveryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "timestamp-literal" | "timestamp" => Ok(AatMode::TimestampLiteral),
            "seek-cost" | "seek" => Ok(AatMode::SeekCost),
            other => Err(RecoveryError::UnknownMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfWeights {
    pub alpha: f64,
    pub beta: f64,
    pub aat_mode: AatMode,
}

impl Default for PerfWeights {
    fn default() -> Self {
        PerfWeights {
            alpha: 1.0,
            beta: 0.0,
            aat_mode: AatMode::SeekCost,
        }
    }
}

impl PerfWeights {
    pub fn new(alpha: f64, beta: f64, aat_mode: AatMode) -> Result<Self, RecoveryError> {
        let w = PerfWeights {
            alpha,
            beta,
            aat_mode,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), RecoveryError> {
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !in_unit(self.alpha)
            || !in_unit(self.beta)
            || (self.alpha + self.beta - 1.0).abs() > 1e-9
        {
            return Err(RecoveryError::InvalidWeights {
                alpha: self.alpha,
                beta: self.beta,
            });
        }
        Ok(())
    }
}

/// Whether position `position` of `file`'s block list still holds its data.
pub fn block_survives(disk: &Disk, file: &FileRecord, position: usize) -> bool {
    let Some(&addr) = file.block_list.get(position) else {
        return false;
    };
    let Some(block) = disk.blocks().get(addr as usize) else {
        return false;
    };
    !block.is_used()
        && block.mrpf.as_ref().map(|m| m.file_id) == Some(file.id)
        && file.final_epochs.get(position) == Some(&block.payload.version)
}

pub fn recover_file(disk: &Disk, file: &FileRecord) -> Result<RecoveryResult, RecoveryError> {
    if file.status == FileStatus::Used {
        return Err(RecoveryError::FileInUse(file.id));
    }
    let bs = disk.geometry().block_size as u64;
    let mut surviving = Vec::new();
    let mut recovered_bytes = 0u64;
    for (pos, &addr) in file.block_list.iter().enumerate() {
        if !block_survives(disk, file, pos) {
            continue;
        }
        surviving.push(addr);
        if pos > 0 {
            let start = (pos as u64 - 1) * bs;
            recovered_bytes += bs.min(file.size_bytes.saturating_sub(start));
        }
    }
    let metadata_intact = block_survives(disk, file, 0);
    let complete = surviving.len() == file.block_list.len() && !file.block_list.is_empty();
    let rr = match file.type_class {
        TypeClass::Linked => {
            if complete {
                1.0
            } else {
                0.0
            }
        }
        TypeClass::Partial => {
            if !metadata_intact {
                0.0
            } else if file.size_bytes == 0 {
                1.0
            } else {
                recovered_bytes as f64 / file.size_bytes as f64
            }
        }
    };
    Ok(RecoveryResult {
        file_id: file.id,
        surviving_blocks: surviving,
        metadata_intact,
        recovered_bytes,
        rr,
    })
}

/// `100 · Σ(rr·uf) / Σuf` over removed files, 0 when there are none.
pub fn weighted_rr(fs: &FileSystem) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for file in fs.removed_files() {
        let uf = file.uf_counter as f64;
        let rr = match file.status {
            FileStatus::Obsolete => 0.0,
            _ => recover_file(fs.disk(), file).map(|r| r.rr).unwrap_or(0.0),
        };
        num += rr * uf;
        den += uf;
    }
    if den == 0.0 {
        0.0
    } else {
        100.0 * num / den
    }
}

/// Normalized seek cost of one block list: gap sum over `(len−1)·total`.
pub fn seek_cost(block_list: &[BlockAddr], total_blocks: usize) -> f64 {
    if block_list.len() < 2 {
        return 0.0;
    }
    let gaps: u64 = block_list
        .windows(2)
        .map(|w| (w[1] as i64 - w[0] as i64).unsigned_abs())
        .sum();
    gaps as f64 / ((block_list.len() - 1) as f64 * total_blocks as f64)
}

pub fn access_time_term(fs: &FileSystem, mode: AatMode) -> f64 {
    let total = fs.disk().total_blocks();
    let mut sum = 0.0;
    let mut n = 0usize;
    for file in fs.live_files() {
        sum += match mode {
            AatMode::TimestampLiteral => file.last_access_tick as f64,
            AatMode::SeekCost => seek_cost(&file.block_list, total),
        };
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    pub weighted_rr: f64,
    pub access_time: f64,
    pub p: f64,
}

pub fn performance(fs: &FileSystem, weights: &PerfWeights) -> f64 {
    measure(fs, weights).p
}

/// Both objective terms and their combination.
pub fn measure(fs: &FileSystem, weights: &PerfWeights) -> Performance {
    let weighted_rr = weighted_rr(fs);
    let access_time = access_time_term(fs, weights.aat_mode);
    Performance {
        weighted_rr,
        access_time,
        p: weights.alpha * weighted_rr - weights.beta * access_time,
    }
}

/// One row of the recovery table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub file: String,
    pub file_id: FileId,
    pub type_class: TypeClass,
    pub status: FileStatus,
    pub uf: u32,
    pub surviving_blocks: usize,
    pub total_blocks: usize,
    pub metadata_intact: bool,
    pub rr: f64,
}

pub const RECOVERY_CSV_HEADER: &str =
    "file,file_id,type_class,status,uf,surviving_blocks,total_blocks,metadata_intact,rr";

/// Recovery table over every deleted or obsolete file.
pub fn recovery_table(fs: &FileSystem) -> Vec<RecoveryRow> {
    fs.removed_files()
        .map(|file| {
            let result = recover_file(fs.disk(), file).expect("removed files only");
            RecoveryRow {
                file: file.path.clone(),
                file_id: file.id,
                type_class: file.type_class,
                status: file.status,
                uf: file.uf_counter,
                surviving_blocks: result.surviving_blocks.len(),
                total_blocks: file.block_list.len(),
                metadata_intact: result.metadata_intact,
                rr: result.rr,
            }
        })
        .collect()
}

pub fn recovery_csv(rows: &[RecoveryRow]) -> String {
    let mut out = String::from(RECOVERY_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.file,
            r.file_id.0,
            serde_plain(&r.type_class),
            serde_plain(&r.status),
            r.uf,
            r.surviving_blocks,
            r.total_blocks,
            r.metadata_intact,
            r.rr
        ));
    }
    out
}

pub(crate) fn serde_plain<T: Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}
