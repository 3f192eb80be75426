//! In-memory block device model.
//!
//! A [`Disk`] owns every [`Block`] together with the two bookkeeping
//! collections the allocator works from: a priority-ordered index of unused
//! blocks and a membership set of used blocks. Both are kept coherent with the
//! per-block state after every public operation; [`Disk::check_invariants`]
//! verifies that by exhaustive scan.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::priority::{priority_factor, PriorityIndex};

/// Block address, `0..total_blocks`.
pub type BlockAddr = u32;

pub const DEFAULT_BLOCK_SIZE: usize = 4096;

/// Version of the JSON snapshot layout produced by [`Disk::snapshot`].
pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FileId(pub u64);

impl fmt::Display for FileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiskError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("block address {0} out of range")]
    OutOfRange(BlockAddr),
    #[error("block {addr} is already {state:?}")]
    AlreadyInState { addr: BlockAddr, state: BlockState },
    #[error("requested {requested} free blocks but only {available} are unused")]
    InsufficientFree { requested: usize, available: usize },
    #[error("write of {len} bytes at offset {offset} exceeds block size {block_size}")]
    WriteOutOfBlock {
        offset: usize,
        len: usize,
        block_size: usize,
    },
}

/// Which blocks count as physically adjacent for the spatial factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Neighborhood {
    /// Every other block in the same row (one row models one HDD sector group).
    GridRow,
    /// Blocks whose address differs by at most `k`.
    ContiguousK { k: u32 },
    /// Random-access media: no spatial term at all.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiskGeometry {
    pub rows: u32,
    pub cols: u32,
    pub block_size: usize,
    pub neighborhood: Neighborhood,
}

impl Default for DiskGeometry {
    fn default() -> Self {
        DiskGeometry::grid(16, 16)
    }
}

impl DiskGeometry {
    /// `rows × cols` grid of 4 KiB blocks with row neighborhoods.
    pub fn grid(rows: u32, cols: u32) -> Self {
        DiskGeometry {
            rows,
            cols,
            block_size: DEFAULT_BLOCK_SIZE,
            neighborhood: Neighborhood::GridRow,
        }
    }

    pub fn with_block_size(mut self, block_size: usize) -> Self {
        self.block_size = block_size;
        self
    }

    pub fn with_neighborhood(mut self, neighborhood: Neighborhood) -> Self {
        self.neighborhood = neighborhood;
        self
    }

    pub fn total_blocks(&self) -> usize {
        self.rows as usize * self.cols as usize
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.total_blocks() as u64 * self.block_size as u64
    }

    pub fn spatial_enabled(&self) -> bool {
        self.neighborhood != Neighborhood::None
    }

    pub fn validate(&self) -> Result<(), DiskError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(DiskError::InvalidGeometry(format!(
                "{}x{} grid has no blocks",
                self.rows, self.cols
            )));
        }
        if self.block_size == 0 {
            return Err(DiskError::InvalidGeometry(
                "block size must be positive".into(),
            ));
        }
        if let Neighborhood::ContiguousK { k: 0 } = self.neighborhood {
            return Err(DiskError::InvalidGeometry(
                "contiguous neighborhood needs k >= 1".into(),
            ));
        }
        if self.total_blocks() > u32::MAX as usize {
            return Err(DiskError::InvalidGeometry("too many blocks".into()));
        }
        Ok(())
    }

    /// Neighbors of `addr`, in ascending address order.
    pub fn neighbors(&self, addr: BlockAddr) -> Vec<BlockAddr> {
        let total = self.total_blocks() as u64;
        let a = addr as u64;
        match self.neighborhood {
            Neighborhood::None => Vec::new(),
            Neighborhood::GridRow => {
                let cols = self.cols as u64;
                let start = (a / cols) * cols;
                (start..start + cols)
                    .filter(|&n| n != a)
                    .map(|n| n as BlockAddr)
                    .collect()
            }
            Neighborhood::ContiguousK { k } => {
                let lo = a.saturating_sub(k as u64);
                let hi = (a + k as u64).min(total - 1);
                (lo..=hi)
                    .filter(|&n| n != a)
                    .map(|n| n as BlockAddr)
                    .collect()
            }
        }
    }
}

/// The four ranking coefficients (λ, σ, ρ, μ).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lambda: i32,
    pub sigma: i32,
    pub rho: i32,
    pub mu: i32,
}

impl Hyperparams {
    /// Reference coefficients used for Apex unless configured otherwise.
    pub const TUNED: Hyperparams = Hyperparams::new(4, 7, 1, 9);

    pub const MIN_COEFF: i32 = 1;
    pub const MAX_COEFF: i32 = 10;

    pub const fn new(lambda: i32, sigma: i32, rho: i32, mu: i32) -> Self {
        Hyperparams {
            lambda,
            sigma,
            rho,
            mu,
        }
    }

    pub fn to_array(self) -> [i32; 4] {
        [self.lambda, self.sigma, self.rho, self.mu]
    }

    pub fn from_array(a: [i32; 4]) -> Self {
        Hyperparams::new(a[0], a[1], a[2], a[3])
    }

    /// True when every coefficient lies in the training lattice `[1, 10]`.
    pub fn in_training_range(&self) -> bool {
        self.to_array()
            .iter()
            .all(|c| (Self::MIN_COEFF..=Self::MAX_COEFF).contains(c))
    }
}

impl fmt::Display for Hyperparams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.lambda, self.sigma, self.rho, self.mu
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockFactors {
    pub hf: u32,
    pub uf: u32,
    pub sf: f64,
    pub lf: u8,
}

impl Default for BlockFactors {
    fn default() -> Self {
        BlockFactors {
            hf: 0,
            uf: 0,
            sf: 0.0,
            lf: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockState {
    Used,
    Unused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    ToUsed,
    ToUnused,
}

/// Most recent parent file of a block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MrpfRecord {
    pub file_id: FileId,
    /// Every block allocated to the parent file at creation, this one included.
    pub siblings: Vec<BlockAddr>,
    /// Payload version the parent file last wrote to this block.
    pub content_epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Payload {
    /// Bumped on every write; never decreases.
    pub version: u64,
    /// Empty until first written, then exactly one block long.
    data: Vec<u8>,
}

impl Payload {
    pub fn bytes(&self) -> &[u8] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub index: BlockAddr,
    pub state: BlockState,
    pub factors: BlockFactors,
    pub mrpf: Option<MrpfRecord>,
    pub payload: Payload,
}

impl Block {
    fn fresh(index: BlockAddr) -> Self {
        Block {
            index,
            state: BlockState::Unused,
            factors: BlockFactors::default(),
            mrpf: None,
            payload: Payload::default(),
        }
    }

    pub fn is_used(&self) -> bool {
        self.state == BlockState::Used
    }
}

#[derive(Debug, Clone)]
pub struct Disk {
    geometry: DiskGeometry,
    blocks: Vec<Block>,
    pub(crate) unused: PriorityIndex,
    used: BTreeSet<BlockAddr>,
    hyperparams: Hyperparams,
    clock: u64,
}

impl Disk {
    pub fn new(geometry: DiskGeometry, hyperparams: Hyperparams) -> Result<Self, DiskError> {
        geometry.validate()?;
        let total = geometry.total_blocks();
        let blocks: Vec<Block> = (0..total as BlockAddr).map(Block::fresh).collect();
        let mut disk = Disk {
            geometry,
            blocks,
            unused: PriorityIndex::new(total),
            used: BTreeSet::new(),
            hyperparams,
            clock: 0,
        };
        for addr in 0..total as BlockAddr {
            let pf = disk.priority_of(addr);
            disk.unused.insert(addr, pf);
        }
        Ok(disk)
    }

    pub fn geometry(&self) -> &DiskGeometry {
        &self.geometry
    }

    pub fn hyperparams(&self) -> Hyperparams {
        self.hyperparams
    }

    /// Swaps the ranking coefficients and re-keys every unused block.
    pub fn set_hyperparams(&mut self, hp: Hyperparams) {
        if hp == self.hyperparams {
            return;
        }
        self.hyperparams = hp;
        let unused: Vec<BlockAddr> = self.unused.addresses().collect();
        for addr in unused {
            self.refresh_key(addr);
        }
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn advance_clock(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    pub(crate) fn set_clock(&mut self, tick: u64) {
        self.clock = tick;
    }

    pub fn total_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn used_count(&self) -> usize {
        self.used.len()
    }

    pub fn unused_count(&self) -> usize {
        self.unused.len()
    }

    pub fn utilization(&self) -> f64 {
        self.used.len() as f64 / self.blocks.len() as f64
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, addr: BlockAddr) -> Result<&Block, DiskError> {
        self.blocks
            .get(addr as usize)
            .ok_or(DiskError::OutOfRange(addr))
    }

    pub(crate) fn block_mut(&mut self, addr: BlockAddr) -> Result<&mut Block, DiskError> {
        self.blocks
            .get_mut(addr as usize)
            .ok_or(DiskError::OutOfRange(addr))
    }

    pub fn used_set(&self) -> &BTreeSet<BlockAddr> {
        &self.used
    }

    /// Unused addresses in allocation order (highest priority first).
    pub fn unused_ranked(&self) -> impl Iterator<Item = BlockAddr> + '_ {
        self.unused.addresses()
    }

    /// Priority key currently stored for an unused block.
    pub fn stored_key(&self, addr: BlockAddr) -> Option<f64> {
        self.unused.key_of(addr)
    }

    /// Freshly computed priority factor of any block.
    pub fn priority_of(&self, addr: BlockAddr) -> f64 {
        priority_factor(
            &self.blocks[addr as usize].factors,
            &self.hyperparams,
            self.geometry.spatial_enabled(),
        )
    }

    pub(crate) fn refresh_key(&mut self, addr: BlockAddr) {
        if self.blocks[addr as usize].state == BlockState::Unused {
            let pf = self.priority_of(addr);
            self.unused.update(addr, pf);
        }
    }

    /// Moves a block between the used and unused populations, applying the
    /// factor resets that go with each direction.
    pub fn transition(
        &mut self,
        addr: BlockAddr,
        direction: Transition,
    ) -> Result<BlockFactors, DiskError> {
        let block = self.block_mut(addr)?;
        match (direction, block.state) {
            (Transition::ToUsed, BlockState::Used) | (Transition::ToUnused, BlockState::Unused) => {
                return Err(DiskError::AlreadyInState {
                    addr,
                    state: block.state,
                });
            }
            _ => {}
        }
        match direction {
            Transition::ToUsed => {
                block.state = BlockState::Used;
                block.factors.hf = 1;
                block.factors.uf = 1;
                block.factors.sf = 0.0;
                let factors = block.factors;
                self.unused.remove(addr);
                self.used.insert(addr);
                Ok(factors)
            }
            Transition::ToUnused => {
                block.state = BlockState::Unused;
                block.factors.hf = 0;
                let factors = block.factors;
                self.used.remove(&addr);
                let pf = self.priority_of(addr);
                self.unused.insert(addr, pf);
                Ok(factors)
            }
        }
    }

    pub(crate) fn set_linking(&mut self, addr: BlockAddr, lf: u8) {
        debug_assert!(lf <= 1);
        self.blocks[addr as usize].factors.lf = lf;
        self.refresh_key(addr);
    }

    pub(crate) fn set_mrpf(&mut self, addr: BlockAddr, record: Option<MrpfRecord>) {
        self.blocks[addr as usize].mrpf = record;
    }

    /// Writes `bytes` at `offset` within one block and returns the new
    /// payload version.
    pub(crate) fn write_block(
        &mut self,
        addr: BlockAddr,
        offset: usize,
        bytes: &[u8],
    ) -> Result<u64, DiskError> {
        let block_size = self.geometry.block_size;
        if offset + bytes.len() > block_size {
            return Err(DiskError::WriteOutOfBlock {
                offset,
                len: bytes.len(),
                block_size,
            });
        }
        let block = self.block_mut(addr)?;
        if block.payload.data.is_empty() {
            block.payload.data = vec![0; block_size];
        }
        block.payload.data[offset..offset + bytes.len()].copy_from_slice(bytes);
        block.payload.version += 1;
        Ok(block.payload.version)
    }

    /// Block content, zero-filled when never written.
    pub fn read_block(&self, addr: BlockAddr) -> Result<Vec<u8>, DiskError> {
        let block = self.block(addr)?;
        if block.payload.data.is_empty() {
            Ok(vec![0; self.geometry.block_size])
        } else {
            Ok(block.payload.data.clone())
        }
    }

    /// Exhaustive consistency scan of the bookkeeping structures.
    pub fn check_invariants(&self) -> Result<(), String> {
        let total = self.blocks.len();
        if self.used.len() + self.unused.len() != total {
            return Err(format!(
                "partition broken: {} used + {} unused != {}",
                self.used.len(),
                self.unused.len(),
                total
            ));
        }
        for block in &self.blocks {
            let addr = block.index;
            let in_used = self.used.contains(&addr);
            let key = self.unused.key_of(addr);
            match block.state {
                BlockState::Used => {
                    if !in_used || key.is_some() {
                        return Err(format!("used block {addr} misfiled"));
                    }
                    if block.factors.sf != 0.0 {
                        return Err(format!("used block {addr} has sf {}", block.factors.sf));
                    }
                    if block.mrpf.is_none() {
                        return Err(format!("used block {addr} has no parent"));
                    }
                }
                BlockState::Unused => {
                    let Some(key) = key else {
                        return Err(format!("unused block {addr} missing from index"));
                    };
                    if in_used {
                        return Err(format!("unused block {addr} in used set"));
                    }
                    let fresh = self.priority_of(addr);
                    if (key - fresh).abs() > 1e-9 {
                        return Err(format!("stale key for {addr}: stored {key}, fresh {fresh}"));
                    }
                }
            }
            if block.factors.lf > 1 {
                return Err(format!("block {addr} has lf {}", block.factors.lf));
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> DiskSnapshot {
        DiskSnapshot {
            format_version: SNAPSHOT_FORMAT_VERSION,
            geometry: self.geometry,
            hyperparams: self.hyperparams,
            clock: self.clock,
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockSnapshot {
                    index: b.index,
                    state: b.state,
                    factors: b.factors,
                    mrpf: b.mrpf.clone(),
                    version: b.payload.version,
                    content_sha256: if b.payload.data.is_empty() {
                        None
                    } else {
                        Some(hex(&Sha256::digest(&b.payload.data)))
                    },
                })
                .collect(),
        }
    }
}

/// Serializable view of a disk. Payload bytes are represented by their digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiskSnapshot {
    pub format_version: u32,
    pub geometry: DiskGeometry,
    pub hyperparams: Hyperparams,
    pub clock: u64,
    pub blocks: Vec<BlockSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSnapshot {
    pub index: BlockAddr,
    pub state: BlockState,
    pub factors: BlockFactors,
    pub mrpf: Option<MrpfRecord>,
    pub version: u64,
    pub content_sha256: Option<String>,
}

impl DiskSnapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot is always serializable")
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
