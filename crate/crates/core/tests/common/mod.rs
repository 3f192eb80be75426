//! Brute-force oracles shared by the integration tests. Nothing here calls
//! into the engine's ranking, factor or recovery code; each oracle rebuilds
//! its answer from raw inputs such as block factors or the event log.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use apex::disk::{BlockAddr, Disk, DiskGeometry, FileId, Hyperparams, Neighborhood};
use apex::vfs::{AllocPolicy, FileRecord, FileSystem, FsEvent, LinkingRule, TypeClass};
use apex::workload::WorkloadConfig;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn neighbors(geometry: &DiskGeometry, addr: usize) -> Vec<usize> {
    let total = geometry.total_blocks();
    match geometry.neighborhood {
        Neighborhood::None => vec![],
        Neighborhood::GridRow => {
            let cols = geometry.cols as usize;
            (0..total)
                .filter(|&b| b != addr && b / cols == addr / cols)
                .collect()
        }
        Neighborhood::ContiguousK { k } => (0..total)
            .filter(|&b| b != addr && b.abs_diff(addr) <= k as usize)
            .collect(),
    }
}

fn lf_for(rule: LinkingRule, class: TypeClass) -> u8 {
    match (rule, class) {
        (LinkingRule::Literal, TypeClass::Linked) => 1,
        (LinkingRule::Literal, TypeClass::Partial) => 0,
        (LinkingRule::Inverted, TypeClass::Linked) => 0,
        (LinkingRule::Inverted, TypeClass::Partial) => 1,
    }
}

fn base(hp: &Hyperparams, hf: u64, uf: u64, lf: u8) -> f64 {
    hp.lambda as f64 * hf as f64 - hp.sigma as f64 * uf as f64 + hp.mu as f64 * lf as f64
}

#[derive(Debug, Clone)]
struct OracleBlock {
    used: bool,
    hf: u64,
    uf: u64,
    sf: f64,
    lf: u8,
    parent: Option<(FileId, Vec<BlockAddr>)>,
}

/// Tracks HF/UF/SF/LF by applying the transition rules to the event log.
pub struct FactorOracle {
    geometry: DiskGeometry,
    hp: Hyperparams,
    linking: LinkingRule,
    blocks: Vec<OracleBlock>,
    files: BTreeMap<FileId, Vec<BlockAddr>>,
    neighbor_lists: Vec<Vec<usize>>,
    cursor: usize,
}

impl FactorOracle {
    pub fn new(geometry: DiskGeometry, hp: Hyperparams, linking: LinkingRule) -> Self {
        let total = geometry.total_blocks();
        FactorOracle {
            geometry,
            hp,
            linking,
            blocks: vec![
                OracleBlock {
                    used: false,
                    hf: 0,
                    uf: 0,
                    sf: 0.0,
                    lf: 1,
                    parent: None,
                };
                total
            ],
            files: BTreeMap::new(),
            neighbor_lists: (0..total).map(|a| neighbors(&geometry, a)).collect(),
            cursor: 0,
        }
    }

    /// Applies every event not seen yet.
    pub fn consume(&mut self, events: &[FsEvent]) {
        for event in &events[self.cursor..] {
            self.apply(event);
        }
        self.cursor = events.len();
    }

    fn apply(&mut self, event: &FsEvent) {
        match event {
            FsEvent::Created {
                file,
                type_class,
                blocks,
                ..
            } => {
                let lf = lf_for(self.linking, *type_class);
                let mut overwritten = Vec::new();
                for &b in blocks {
                    let blk = &mut self.blocks[b as usize];
                    assert!(!blk.used, "oracle: block {b} claimed while used");
                    if let Some(parent) = blk.parent.take() {
                        overwritten.push((b, parent));
                    }
                    blk.used = true;
                    blk.hf = 1;
                    blk.uf = 1;
                    blk.sf = 0.0;
                    blk.lf = lf;
                    blk.parent = Some((*file, blocks.clone()));
                }
                for (b, (old_file, siblings)) in overwritten {
                    for s in siblings {
                        if s == b {
                            continue;
                        }
                        let sib = &mut self.blocks[s as usize];
                        let same = sib.parent.as_ref().map(|p| p.0) == Some(old_file);
                        if !sib.used && same {
                            sib.hf += 1;
                        }
                    }
                }
                self.files.insert(*file, blocks.clone());
            }
            FsEvent::Deleted { file, .. } => {
                for &b in &self.files[file] {
                    let blk = &mut self.blocks[b as usize];
                    blk.used = false;
                    blk.hf = 0;
                }
            }
            FsEvent::Accessed { file, .. } => {
                for &b in &self.files[file] {
                    self.blocks[b as usize].uf += 1;
                }
            }
            FsEvent::Wrote { .. } => {}
            FsEvent::SpatialPass { .. } => {
                if self.geometry.neighborhood == Neighborhood::None {
                    return;
                }
                let bases: Vec<f64> = self
                    .blocks
                    .iter()
                    .map(|b| base(&self.hp, b.hf, b.uf, b.lf))
                    .collect();
                for (a, blk) in self.blocks.iter_mut().enumerate() {
                    let n = &self.neighbor_lists[a];
                    blk.sf = if blk.used || n.is_empty() {
                        0.0
                    } else {
                        n.iter().map(|&j| bases[j]).sum::<f64>() / n.len() as f64
                    };
                }
            }
            FsEvent::HyperparamsChanged { hyperparams, .. } => self.hp = *hyperparams,
        }
    }

    /// First disagreement with the engine, if any.
    pub fn compare(&self, disk: &Disk) -> Result<(), String> {
        for (a, (mine, theirs)) in self.blocks.iter().zip(disk.blocks()).enumerate() {
            let f = &theirs.factors;
            if mine.used != theirs.is_used()
                || mine.hf != f.hf as u64
                || mine.uf != f.uf as u64
                || mine.lf != f.lf
                || (mine.sf - f.sf).abs() > 1e-9
            {
                return Err(format!(
                    "block {a}: oracle used={} hf={} uf={} sf={} lf={}, engine used={} {:?}",
                    mine.used,
                    mine.hf,
                    mine.uf,
                    mine.sf,
                    mine.lf,
                    theirs.is_used(),
                    f
                ));
            }
        }
        Ok(())
    }
}

/// Unused blocks sorted by (−PF, address) with PF recomputed from the raw
/// factors.
pub fn ranking_oracle(disk: &Disk) -> Vec<BlockAddr> {
    let hp = disk.hyperparams();
    let spatial = disk.geometry().neighborhood != Neighborhood::None;
    let mut scored: Vec<(f64, BlockAddr)> = disk
        .blocks()
        .iter()
        .enumerate()
        .filter(|(_, b)| !b.is_used())
        .map(|(a, b)| {
            let f = &b.factors;
            let mut pf = base(&hp, f.hf as u64, f.uf as u64, f.lf);
            if spatial {
                pf += hp.rho as f64 * f.sf;
            }
            (pf, a as BlockAddr)
        })
        .collect();
    scored.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
    scored.into_iter().map(|(_, a)| a).collect()
}

/// Recovery answer rebuilt from the event history alone.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRecovery {
    pub surviving: Vec<BlockAddr>,
    pub metadata_intact: bool,
    pub rr: f64,
}

/// A deleted file's block survives iff no file created after the deletion
/// claimed it.
pub fn recovery_oracle(events: &[FsEvent], file: &FileRecord, block_size: usize) -> OracleRecovery {
    let deleted_at = events
        .iter()
        .position(|e| matches!(e, FsEvent::Deleted { file: f, .. } if *f == file.id))
        .expect("file was deleted");
    let mut claimed = BTreeSet::new();
    for e in &events[deleted_at + 1..] {
        if let FsEvent::Created { blocks, .. } = e {
            claimed.extend(blocks.iter().copied());
        }
    }
    let alive: Vec<bool> = file
        .block_list
        .iter()
        .map(|b| !claimed.contains(b))
        .collect();
    let surviving: Vec<BlockAddr> = file
        .block_list
        .iter()
        .zip(&alive)
        .filter(|(_, &ok)| ok)
        .map(|(&b, _)| b)
        .collect();
    let metadata_intact = alive.first().copied().unwrap_or(false);
    let size = file.size_bytes as usize;
    let rr = match file.type_class {
        TypeClass::Linked => {
            if !alive.is_empty() && alive.iter().all(|&x| x) {
                1.0
            } else {
                0.0
            }
        }
        TypeClass::Partial => {
            if !metadata_intact {
                0.0
            } else if size == 0 {
                1.0
            } else {
                let mut bytes = 0usize;
                for (pos, &ok) in alive.iter().enumerate().skip(1) {
                    if ok {
                        let start = (pos - 1) * block_size;
                        bytes += block_size.min(size - start);
                    }
                }
                bytes as f64 / size as f64
            }
        }
    };
    OracleRecovery {
        surviving,
        metadata_intact,
        rr,
    }
}

/// |used| + |unused| equals the disk size and no block has two live owners.
pub fn conservation(fs: &FileSystem) -> Result<(), String> {
    let disk = fs.disk();
    let used = disk.blocks().iter().filter(|b| b.is_used()).count();
    let unused = disk.blocks().iter().filter(|b| !b.is_used()).count();
    if used + unused != disk.total_blocks()
        || used != disk.used_count()
        || unused != disk.unused_count()
    {
        return Err(format!(
            "used {used} + unused {unused} vs {} (engine {} / {})",
            disk.total_blocks(),
            disk.used_count(),
            disk.unused_count()
        ));
    }
    let mut owner = vec![None; disk.total_blocks()];
    let mut owned = 0;
    for f in fs.live_files() {
        for &b in &f.block_list {
            if let Some(other) = owner[b as usize].replace(f.id) {
                return Err(format!("block {b} owned by {other} and {}", f.id));
            }
            owned += 1;
        }
    }
    if owned != used {
        return Err(format!("{owned} owned blocks but {used} used"));
    }
    Ok(())
}

/// A randomized small disk, policy, coefficient set and workload.
#[derive(Debug, Clone)]
pub struct RandomRun {
    pub geometry: DiskGeometry,
    pub hp: Hyperparams,
    pub policy: AllocPolicy,
    pub linking: LinkingRule,
    pub workload: WorkloadConfig,
    pub ops: u64,
}

impl RandomRun {
    pub fn draw(seed: u64, max_blocks: usize, max_ops: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, cols) = loop {
            let r = rng.random_range(1..=16u32);
            let c = rng.random_range(2..=16u32);
            if (r * c) as usize <= max_blocks && r * c >= 8 {
                break (r, c);
            }
        };
        let neighborhood = match rng.random_range(0..3) {
            0 => Neighborhood::GridRow,
            1 => Neighborhood::ContiguousK {
                k: rng.random_range(1..=3),
            },
            _ => Neighborhood::None,
        };
        let geometry = DiskGeometry::grid(rows, cols)
            .with_neighborhood(neighborhood)
            .with_block_size([64, 512, 4096][rng.random_range(0..3)]);
        let coeff = |rng: &mut ChaCha8Rng| rng.random_range(1..=10);
        let hp = Hyperparams::new(
            coeff(&mut rng),
            coeff(&mut rng),
            coeff(&mut rng),
            coeff(&mut rng),
        );
        let policy = match rng.random_range(0..4) {
            0 => AllocPolicy::FirstFit,
            1 => AllocPolicy::Random { seed: rng.random() },
            _ => AllocPolicy::Apex,
        };
        let linking = if rng.random_bool(0.8) {
            LinkingRule::Literal
        } else {
            LinkingRule::Inverted
        };
        let max_file_blocks = rng.random_range(1..=(rows * cols / 3).max(1));
        let workload = WorkloadConfig {
            seed: rng.random(),
            max_file_blocks,
            linked_percent: rng.random_range(0.0..=100.0),
            min_utilization: rng.random_range(0.0..0.9),
            ..WorkloadConfig::default()
        };
        let ops = rng.random_range(1..=max_ops);
        RandomRun {
            geometry,
            hp,
            policy,
            linking,
            workload,
            ops,
        }
    }

    pub fn filesystem(&self) -> FileSystem {
        FileSystem::new(self.geometry, self.hp, self.policy)
            .unwrap()
            .with_linking(self.linking)
            .with_event_log()
    }
}
