//! Seeded file workload generator, simulation driver and trace replay.
//!
//! Every operation advances the logical clock by one, goes through the file
//! layer, then runs the obsolete sweep and one spatial pass. A run is fully
//! determined by its [`WorkloadConfig`] (seed included) and the starting file
//! system, and its trace replays to a bit-identical end state.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::recovery::{measure, recovery_table, PerfWeights, RecoveryRow};
use crate::vfs::{pattern_bytes, FileSystem, FsError, TypeClass};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid workload config: {0}")]
    InvalidConfig(String),
    #[error("trace line {line}: {message}")]
    MalformedTrace { line: usize, message: String },
    #[error("trace line {line}: tick {tick} does not follow {previous}")]
    TickOrder {
        line: usize,
        tick: u64,
        previous: u64,
    },
    #[error("trace line {line}: {source}")]
    Op {
        line: usize,
        #[source]
        source: FsError,
    },
    #[error("simulator invariant violated: {0}")]
    Invariant(String),
}

/// Probabilities of the three operation families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpMix {
    pub read_write: f64,
    pub create: f64,
    pub delete: f64,
}

impl Default for OpMix {
    fn default() -> Self {
        OpMix {
            read_write: 0.70,
            create: 0.15,
            delete: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub seed: u64,
    /// Largest data size of a created file, in blocks.
    pub max_file_blocks: u32,
    /// Mean share of linked files, in percent.
    pub linked_percent: f64,
    /// Half-width of the uniform jitter applied to `linked_percent` per draw.
    pub linked_jitter: f64,
    pub min_utilization: f64,
    pub op_mix: OpMix,
    pub total_ops: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            seed: 0,
            max_file_blocks: 20,
            linked_percent: 20.0,
            linked_jitter: 5.0,
            min_utilization: 0.70,
            op_mix: OpMix::default(),
            total_ops: 1000,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::InvalidConfig(m.to_string()));
        let mix = self.op_mix;
        if [mix.read_write, mix.create, mix.delete]
            .iter()
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return bad("op_mix probabilities must lie in [0, 1]");
        }
        if (mix.read_write + mix.create + mix.delete - 1.0).abs() > 1e-9 {
            return bad("op_mix must sum to 1");
        }
        if self.max_file_blocks == 0 {
            return bad("max_file_blocks must be positive");
        }
        if !(0.0..=100.0).contains(&self.linked_percent) || self.linked_jitter < 0.0 {
            return bad("linked_percent must lie in [0, 100] and jitter be non-negative");
        }
        if !(0.0..1.0).contains(&self.min_utilization) {
            return bad("min_utilization must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Create {
        path: String,
        size_blocks: u32,
        type_class: TypeClass,
    },
    Delete {
        path: String,
    },
    Read {
        path: String,
    },
    Write {
        path: String,
        offset: u64,
        len: u64,
    },
}

impl Action {
    pub fn path(&self) -> &str {
        match self {
            Action::Create { path, .. }
            | Action::Delete { path }
            | Action::Read { path }
            | Action::Write { path, .. } => path,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadOp {
    pub tick: u64,
    pub action: Action,
}

/// Rule that overrode the sampled operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enforcement {
    /// No live file to act on.
    ForcedCreate,
    /// A delete would have left utilization under the floor.
    RedirectedDelete,
    /// Create shrunk to fit the free space.
    ClampedCreate,
    /// Create impossible on a full disk; fell back to another family.
    FullDisk,
}

/// What the generator needs to know about the file system.
#[derive(Debug, Clone, PartialEq)]
pub struct LiveState {
    pub total_blocks: usize,
    pub used_blocks: usize,
    pub block_size: u64,
    /// `(path, data blocks, total blocks)` of every live file, in creation order.
    pub files: Vec<(String, u64, usize)>,
}

impl LiveState {
    pub fn of(fs: &FileSystem) -> Self {
        let bs = fs.disk().geometry().block_size as u64;
        LiveState {
            total_blocks: fs.disk().total_blocks(),
            used_blocks: fs.disk().used_count(),
            block_size: bs,
            files: fs
                .live_files()
                .map(|f| {
                    (
                        f.path.clone(),
                        f.size_bytes.div_ceil(bs),
                        f.block_list.len(),
                    )
                })
                .collect(),
        }
    }

    pub fn free_blocks(&self) -> usize {
        self.total_blocks - self.used_blocks
    }

    pub fn utilization(&self) -> f64 {
        self.used_blocks as f64 / self.total_blocks as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    ReadWrite,
    Create,
    Delete,
}

fn sample_family(rng: &mut ChaCha8Rng, mix: &OpMix) -> Family {
    let u: f64 = rng.random();
    if u < mix.read_write {
        Family::ReadWrite
    } else if u < mix.read_write + mix.create {
        Family::Create
    } else {
        Family::Delete
    }
}

/// Draws the next operation. `next_path` numbers newly created files.
pub fn generate_op(
    rng: &mut ChaCha8Rng,
    config: &WorkloadConfig,
    live: &LiveState,
    next_path: u64,
) -> (Action, Option<Enforcement>) {
    let mut enforcement = None;
    let mut family = sample_family(rng, &config.op_mix);
    if live.files.is_empty() {
        family = Family::Create;
        enforcement = Some(Enforcement::ForcedCreate);
    }
    let floor_ok = |blocks: usize| {
        (live.used_blocks - blocks) as f64 / live.total_blocks as f64 >= config.min_utilization
    };

    if family == Family::Delete {
        let target = rng.random_range(0..live.files.len());
        let (path, _, blocks) = &live.files[target];
        if floor_ok(*blocks) {
            return (Action::Delete { path: path.clone() }, enforcement);
        }
        family = Family::Create;
        enforcement = Some(Enforcement::RedirectedDelete);
    }

    if family == Family::Create {
        let free = live.free_blocks();
        if free > 0 {
            let mut size_blocks = rng.random_range(1..=config.max_file_blocks);
            let jitter = if config.linked_jitter > 0.0 {
                rng.random_range(-config.linked_jitter..=config.linked_jitter)
            } else {
                0.0
            };
            let p_linked = ((config.linked_percent + jitter) / 100.0).clamp(0.0, 1.0);
            let type_class = if rng.random_bool(p_linked) {
                TypeClass::Linked
            } else {
                TypeClass::Partial
            };
            if size_blocks as usize + 1 > free {
                size_blocks = (free - 1) as u32;
                enforcement = Some(Enforcement::ClampedCreate);
            }
            let ext = match type_class {
                TypeClass::Linked => "exe",
                TypeClass::Partial => "avi",
            };
            return (
                Action::Create {
                    path: format!("/f{next_path:06}.{ext}"),
                    size_blocks,
                    type_class,
                },
                enforcement,
            );
        }
        // full disk: free something if the floor allows, else fall through to I/O
        enforcement = Some(Enforcement::FullDisk);
        let target = rng.random_range(0..live.files.len());
        let (path, _, blocks) = &live.files[target];
        if floor_ok(*blocks) {
            return (Action::Delete { path: path.clone() }, enforcement);
        }
    }

    let target = rng.random_range(0..live.files.len());
    let (path, data_blocks, _) = &live.files[target];
    if rng.random_bool(0.5) {
        (Action::Read { path: path.clone() }, enforcement)
    } else {
        let (offset, len) = if *data_blocks == 0 {
            (0, 0)
        } else {
            let block = rng.random_range(0..*data_blocks);
            (block * live.block_size, live.block_size)
        };
        (
            Action::Write {
                path: path.clone(),
                offset,
                len,
            },
            enforcement,
        )
    }
}

/// Applies one operation at its tick, then the per-operation upkeep.
pub fn apply_op(fs: &mut FileSystem, op: &WorkloadOp) -> Result<(), FsError> {
    fs.set_clock(op.tick);
    let bs = fs.disk().geometry().block_size as u64;
    match &op.action {
        Action::Create {
            path,
            size_blocks,
            type_class,
        } => {
            fs.create_file(path, *size_blocks as u64 * bs, *type_class)?;
        }
        Action::Delete { path } => {
            fs.delete_file(path)?;
        }
        Action::Read { path } => {
            fs.read_file(path)?;
        }
        Action::Write { path, offset, len } => {
            let bytes = pattern_bytes(op.tick, *len as usize);
            fs.write_file(path, *offset, &bytes)?;
        }
    }
    fs.mark_obsolete_sweep();
    fs.spatial_pass();
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub create: u64,
    pub delete: u64,
    pub read: u64,
    pub write: u64,
    pub forced_create: u64,
    pub redirected_delete: u64,
    pub clamped_create: u64,
    pub full_disk: u64,
}

impl OpCounts {
    fn count(&mut self, action: &Action) {
        match action {
            Action::Create { .. } => self.create += 1,
            Action::Delete { .. } => self.delete += 1,
            Action::Read { .. } => self.read += 1,
            Action::Write { .. } => self.write += 1,
        }
    }

    fn count_enforcement(&mut self, e: Enforcement) {
        match e {
            Enforcement::ForcedCreate => self.forced_create += 1,
            Enforcement::RedirectedDelete => self.redirected_delete += 1,
            Enforcement::ClampedCreate => self.clamped_create += 1,
            Enforcement::FullDisk => self.full_disk += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.create + self.delete + self.read + self.write
    }
}

/// Stateful generator: owns the rng, the path counter and the trace.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: WorkloadConfig,
    rng: ChaCha8Rng,
    next_path: u64,
    trace: Vec<WorkloadOp>,
    counts: OpCounts,
    record_trace: bool,
}

impl Simulator {
    pub fn new(config: WorkloadConfig) -> Result<Self, WorkloadError> {
        config.validate()?;
        Ok(Simulator {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            next_path: 0,
            trace: Vec::new(),
            counts: OpCounts::default(),
            record_trace: true,
        })
    }

    /// Skip keeping the trace in memory (long training runs).
    pub fn without_trace(mut self) -> Self {
        self.record_trace = false;
        self
    }

    pub fn config(&self) -> &WorkloadConfig {
        &self.config
    }

    pub fn counts(&self) -> OpCounts {
        self.counts
    }

    pub fn trace(&self) -> &[WorkloadOp] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<WorkloadOp> {
        self.trace
    }

    /// Generates and applies one operation.
    pub fn step(&mut self, fs: &mut FileSystem) -> Result<WorkloadOp, WorkloadError> {
        let live = LiveState::of(fs);
        let (action, enforcement) = generate_op(&mut self.rng, &self.config, &live, self.next_path);
        if matches!(action, Action::Create { .. }) {
            self.next_path += 1;
        }
        let op = WorkloadOp {
            tick: fs.tick() + 1,
            action,
        };
        apply_op(fs, &op)
            .map_err(|e| WorkloadError::Invariant(format!("tick {}: {e}", op.tick)))?;
        self.counts.count(&op.action);
        if let Some(e) = enforcement {
            self.counts.count_enforcement(e);
        }
        if self.record_trace {
            self.trace.push(op.clone());
        }
        Ok(op)
    }

    pub fn run(&mut self, fs: &mut FileSystem, ops: u64) -> Result<(), WorkloadError> {
        for _ in 0..ops {
            self.step(fs)?;
        }
        Ok(())
    }
}

/// End-of-run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub format_version: u32,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    pub total_ops: u64,
    pub counts: OpCounts,
    pub final_state: FinalState,
    pub recovery: Vec<RecoveryRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalState {
    pub tick: u64,
    pub utilization: f64,
    pub used_blocks: usize,
    pub live_files: usize,
    pub deleted_files: usize,
    pub obsolete_files: usize,
    pub weighted_rr: f64,
    pub access_time: f64,
    pub performance: f64,
}

pub const SIM_REPORT_VERSION: u32 = 1;

impl SimReport {
    pub fn build(
        fs: &FileSystem,
        weights: &PerfWeights,
        counts: OpCounts,
        seed: Option<u64>,
    ) -> Self {
        let perf = measure(fs, weights);
        let recovery = recovery_table(fs);
        let obsolete = recovery
            .iter()
            .filter(|r| r.status == crate::vfs::FileStatus::Obsolete)
            .count();
        SimReport {
            format_version: SIM_REPORT_VERSION,
            seed,
            config_hash: None,
            total_ops: counts.total(),
            counts,
            final_state: FinalState {
                tick: fs.tick(),
                utilization: fs.disk().utilization(),
                used_blocks: fs.disk().used_count(),
                live_files: fs.live_count(),
                deleted_files: recovery.len() - obsolete,
                obsolete_files: obsolete,
                weighted_rr: perf.weighted_rr,
                access_time: perf.access_time,
                performance: perf.p,
            },
            recovery,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }
}

pub struct SimOutcome {
    pub report: SimReport,
    pub trace: Vec<WorkloadOp>,
}

/// Runs `config.total_ops` operations against `fs`.
pub fn run_simulation(
    config: &WorkloadConfig,
    fs: &mut FileSystem,
    weights: &PerfWeights,
) -> Result<SimOutcome, WorkloadError> {
    let mut sim = Simulator::new(config.clone())?;
    sim.run(fs, config.total_ops)?;
    let report = SimReport::build(fs, weights, sim.counts(), Some(config.seed));
    Ok(SimOutcome {
        report,
        trace: sim.into_trace(),
    })
}

/// Re-executes a recorded trace.
pub fn replay_trace(
    trace: &[WorkloadOp],
    fs: &mut FileSystem,
    weights: &PerfWeights,
) -> Result<SimReport, WorkloadError> {
    let mut counts = OpCounts::default();
    let mut previous = fs.tick();
    for (i, op) in trace.iter().enumerate() {
        let line = i + 1;
        if op.tick <= previous {
            return Err(WorkloadError::TickOrder {
                line,
                tick: op.tick,
                previous,
            });
        }
        previous = op.tick;
        apply_op(fs, op).map_err(|source| WorkloadError::Op { line, source })?;
        counts.count(&op.action);
    }
    Ok(SimReport::build(fs, weights, counts, None))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum TraceOpName {
    Create,
    Delete,
    Read,
    Write,
}

/// One JSON-lines trace record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceLine {
    tick: u64,
    op: TraceOpName,
    path: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    size_blocks: Option<u32>,
    #[serde(rename = "type", skip_serializing_if = "Option::is_none", default)]
    type_class: Option<TypeClass>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    offset: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    len: Option<u64>,
}

impl From<&WorkloadOp> for TraceLine {
    fn from(op: &WorkloadOp) -> Self {
        let mut line = TraceLine {
            tick: op.tick,
            op: TraceOpName::Read,
            path: op.action.path().to_string(),
            size_blocks: None,
            type_class: None,
            offset: None,
            len: None,
        };
        match &op.action {
            Action::Create {
                size_blocks,
                type_class,
                ..
            } => {
                line.op = TraceOpName::Create;
                line.size_blocks = Some(*size_blocks);
                line.type_class = Some(*type_class);
            }
            Action::Delete { .. } => line.op = TraceOpName::Delete,
            Action::Read { .. } => {}
            Action::Write { offset, len, .. } => {
                line.op = TraceOpName::Write;
                line.offset = Some(*offset);
                line.len = Some(*len);
            }
        }
        line
    }
}

impl TraceLine {
    fn into_op(self) -> Result<WorkloadOp, String> {
        let path = self.path;
        let action = match self.op {
            TraceOpName::Create => Action::Create {
                path,
                size_blocks: self.size_blocks.ok_or("create needs size_blocks")?,
                type_class: self.type_class.ok_or("create needs type")?,
            },
            TraceOpName::Delete => Action::Delete { path },
            TraceOpName::Read => Action::Read { path },
            TraceOpName::Write => Action::Write {
                path,
                offset: self.offset.ok_or("write needs offset")?,
                len: self.len.ok_or("write needs len")?,
            },
        };
        Ok(WorkloadOp {
            tick: self.tick,
            action,
        })
    }
}

pub fn trace_to_jsonl(trace: &[WorkloadOp]) -> String {
    let mut out = String::new();
    for op in trace {
        out.push_str(&serde_json::to_string(&TraceLine::from(op)).expect("serializable"));
        out.push('\n');
    }
    out
}

/// Parses a JSON-lines trace; blank lines are skipped and ticks must strictly
/// increase.
pub fn parse_trace(text: &str) -> Result<Vec<WorkloadOp>, WorkloadError> {
    let mut ops: Vec<WorkloadOp> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: TraceLine =
            serde_json::from_str(raw).map_err(|e| WorkloadError::MalformedTrace {
                line,
                message: e.to_string(),
            })?;
        let op = parsed
            .into_op()
            .map_err(|message| WorkloadError::MalformedTrace { line, message })?;
        if let Some(prev) = ops.last() {
            if op.tick <= prev.tick {
                return Err(WorkloadError::TickOrder {
                    line,
                    tick: op.tick,
                    previous: prev.tick,
                });
            }
        }
        ops.push(op);
    }
    Ok(ops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disk::{DiskGeometry, Hyperparams};
    use crate::vfs::{AllocPolicy, FileStatus};

    fn fs() -> FileSystem {
        FileSystem::new(
            DiskGeometry::default(),
            Hyperparams::TUNED,
            AllocPolicy::Apex,
        )
        .unwrap()
    }

    fn live(used: usize, files: usize) -> LiveState {
        LiveState {
            total_blocks: 256,
            used_blocks: used,
            block_size: 4096,
            files: (0..files).map(|i| (format!("/f{i}"), 4, 5)).collect(),
        }
    }

    #[test]
    fn config_validation() {
        let mut c = WorkloadConfig::default();
        c.validate().unwrap();
        c.op_mix.create = 0.2;
        assert!(c.validate().is_err());
        let c = WorkloadConfig {
            min_utilization: 1.0,
            ..WorkloadConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn empty_disk_forces_create() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (action, e) = generate_op(&mut rng, &WorkloadConfig::default(), &live(0, 0), 0);
            assert!(matches!(action, Action::Create { .. }));
            assert_eq!(e, Some(Enforcement::ForcedCreate));
        }
    }

    #[test]
    fn delete_under_floor_becomes_create() {
        let config = WorkloadConfig {
            op_mix: OpMix {
                read_write: 0.0,
                create: 0.0,
                delete: 1.0,
            },
            ..WorkloadConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // 0.65 utilization
        let (action, e) = generate_op(&mut rng, &config, &live(166, 10), 0);
        assert!(matches!(action, Action::Create { .. }));
        assert_eq!(e, Some(Enforcement::RedirectedDelete));
        // plenty of headroom: delete goes through
        let (action, e) = generate_op(&mut rng, &config, &live(250, 10), 0);
        assert!(matches!(action, Action::Delete { .. }));
        assert_eq!(e, None);
    }

    #[test]
    fn create_clamps_to_free_space() {
        let config = WorkloadConfig {
            op_mix: OpMix {
                read_write: 0.0,
                create: 1.0,
                delete: 0.0,
            },
            max_file_blocks: 20,
            ..WorkloadConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (action, _) = generate_op(&mut rng, &config, &live(253, 3), 9);
            let Action::Create {
                size_blocks, path, ..
            } = action
            else {
                panic!("expected create");
            };
            assert!(size_blocks <= 2);
            assert!(path.starts_with("/f000009."));
        }
        let (action, e) = generate_op(&mut rng, &config, &live(256, 3), 9);
        assert!(matches!(action, Action::Delete { .. }));
        assert_eq!(e, Some(Enforcement::FullDisk));
    }

    #[test]
    fn same_seed_same_ops() {
        let run = || {
            let mut fs = fs();
            let mut sim = Simulator::new(WorkloadConfig {
                seed: 42,
                ..WorkloadConfig::default()
            })
            .unwrap();
            sim.run(&mut fs, 300).unwrap();
            sim.into_trace()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mix_converges() {
        let config = WorkloadConfig {
            min_utilization: 0.0,
            ..WorkloadConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let state = live(100, 20);
        let (mut rw, mut c, mut d) = (0, 0, 0);
        let n = 20_000;
        for _ in 0..n {
            match generate_op(&mut rng, &config, &state, 0) {
                (Action::Read { .. } | Action::Write { .. }, None) => rw += 1,
                (Action::Create { .. }, None) => c += 1,
                (Action::Delete { .. }, None) => d += 1,
                (_, Some(e)) => panic!("unexpected enforcement {e:?}"),
            }
        }
        let f = |k: i32| k as f64 / n as f64;
        assert!((f(rw) - 0.70).abs() < 0.03);
        assert!((f(c) - 0.15).abs() < 0.03);
        assert!((f(d) - 0.15).abs() < 0.03);
    }

    #[test]
    fn linked_share_tracks_config() {
        let config = WorkloadConfig {
            op_mix: OpMix {
                read_write: 0.0,
                create: 1.0,
                delete: 0.0,
            },
            ..WorkloadConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 20_000;
        let linked = (0..n)
            .filter(|_| {
                matches!(
                    generate_op(&mut rng, &config, &live(0, 1), 0).0,
                    Action::Create {
                        type_class: TypeClass::Linked,
                        ..
                    }
                )
            })
            .count();
        assert!((linked as f64 / n as f64 - 0.20).abs() < 0.02);
    }

    #[test]
    fn zero_ops_reports_initial_state() {
        let mut fs = fs();
        let config = WorkloadConfig {
            total_ops: 0,
            ..WorkloadConfig::default()
        };
        let out = run_simulation(&config, &mut fs, &PerfWeights::default()).unwrap();
        assert!(out.trace.is_empty());
        assert_eq!(out.report.total_ops, 0);
        assert_eq!(out.report.final_state.performance, 0.0);
    }

    #[test]
    fn utilization_floor_holds_after_warmup() {
        let mut fs = fs();
        let mut sim = Simulator::new(WorkloadConfig {
            seed: 9,
            ..WorkloadConfig::default()
        })
        .unwrap();
        let mut warmed = false;
        for _ in 0..1000 {
            sim.step(&mut fs).unwrap();
            let u = fs.disk().utilization();
            if warmed {
                assert!(u >= 0.70, "utilization {u} at tick {}", fs.tick());
            }
            warmed |= u >= 0.70;
        }
        assert!(warmed);
        fs.check_invariants().unwrap();
    }

    #[test]
    fn trace_round_trip_and_replay() {
        let mut fs1 = fs();
        let config = WorkloadConfig {
            seed: 4,
            total_ops: 400,
            ..WorkloadConfig::default()
        };
        let out = run_simulation(&config, &mut fs1, &PerfWeights::default()).unwrap();
        let text = trace_to_jsonl(&out.trace);
        let parsed = parse_trace(&text).unwrap();
        assert_eq!(parsed, out.trace);
        let mut fs2 = fs();
        replay_trace(&parsed, &mut fs2, &PerfWeights::default()).unwrap();
        assert_eq!(fs1.snapshot().to_json(), fs2.snapshot().to_json());
    }

    #[test]
    fn trace_format_fields() {
        let op = WorkloadOp {
            tick: 3,
            action: Action::Write {
                path: "/a".into(),
                offset: 4096,
                len: 4096,
            },
        };
        assert_eq!(
            trace_to_jsonl(&[op]),
            "{\"tick\":3,\"op\":\"write\",\"path\":\"/a\",\"offset\":4096,\"len\":4096}\n"
        );
        let op = WorkloadOp {
            tick: 1,
            action: Action::Create {
                path: "/b.exe".into(),
                size_blocks: 2,
                type_class: TypeClass::Linked,
            },
        };
        assert_eq!(
            trace_to_jsonl(&[op]),
            "{\"tick\":1,\"op\":\"create\",\"path\":\"/b.exe\",\"size_blocks\":2,\"type\":\"linked\"}\n"
        );
    }

    #[test]
    fn malformed_traces_rejected() {
        let dup = "{\"tick\":1,\"op\":\"read\",\"path\":\"/a\"}\n{\"tick\":1,\"op\":\"read\",\"path\":\"/a\"}\n";
        assert!(matches!(
            parse_trace(dup),
            Err(WorkloadError::TickOrder { line: 2, .. })
        ));
        let bad = "{\"tick\":1,\"op\":\"create\",\"path\":\"/a\"}";
        assert!(matches!(
            parse_trace(bad),
            Err(WorkloadError::MalformedTrace { line: 1, .. })
        ));
        assert!(matches!(
            parse_trace("nope"),
            Err(WorkloadError::MalformedTrace { .. })
        ));
        let missing = parse_trace("{\"tick\":1,\"op\":\"delete\",\"path\":\"/ghost\"}").unwrap();
        assert!(matches!(
            replay_trace(&missing, &mut fs(), &PerfWeights::default()),
            Err(WorkloadError::Op {
                line: 1,
                source: FsError::NotFound(_)
            })
        ));
    }

    #[test]
    fn hand_written_trace() {
        let g = DiskGeometry::grid(2, 2);
        let mut fs = FileSystem::new(g, Hyperparams::TUNED, AllocPolicy::Apex).unwrap();
        let text = r#"{"tick":1,"op":"create","path":"/a.avi","size_blocks":2,"type":"partial"}
{"tick":2,"op":"write","path":"/a.avi","offset":4096,"len":10}
{"tick":3,"op":"delete","path":"/a.avi"}
"#;
        let report = replay_trace(
            &parse_trace(text).unwrap(),
            &mut fs,
            &PerfWeights::default(),
        )
        .unwrap();
        assert_eq!(fs.disk().used_count(), 0);
        assert_eq!(report.final_state.deleted_files, 1);
        assert_eq!(fs.files()[0].status, FileStatus::Deleted);
        assert_eq!(fs.files()[0].uf_counter, 2);
        assert_eq!(report.final_state.weighted_rr, 100.0);
    }
}
