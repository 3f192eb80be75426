//! File and directory layer over a [`Disk`].
//!
//! Every file occupies `ceil(size / block_size) + 1` blocks; the first entry
//! of its block list is a metadata block, the rest hold data. Deleted files
//! stay in the file table so recovery can be measured against them.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::disk::{
    BlockAddr, Disk, DiskError, DiskGeometry, DiskSnapshot, FileId, Hyperparams, MrpfRecord,
    Transition,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FsError {
    #[error("invalid path {0:?}")]
    InvalidPath(String),
    #[error("no such file or directory: {0}")]
    NotFound(String),
    #[error("path already exists: {0}")]
    AlreadyExists(String),
    #[error("parent directory missing for {0}")]
    MissingParent(String),
    #[error("{0} is not a file")]
    NotAFile(String),
    #[error("disk full: need {needed} blocks, {free} free")]
    DiskFull { needed: usize, free: usize },
    #[error("file {id} is {status:?}, not in use")]
    NotLive { id: FileId, status: FileStatus },
    #[error("range {offset}+{len} outside file of {size} bytes")]
    OutOfRange { offset: u64, len: u64, size: u64 },
    #[error(transparent)]
    Disk(#[from] DiskError),
}

/// How a file's content degrades when blocks are lost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TypeClass {
    /// Executables, objects, archives: one lost block ruins the whole file.
    Linked,
    /// Media and text: readable in part as long as the metadata survives.
    Partial,
}

const LINKED_EXTENSIONS: &[&str] = &[
    "exe", "o", "so", "a", "elf", "bin", "zip", "tar", "gz", "7z",
];

impl TypeClass {
    /// Classify by extension; anything not known to be linked is partial.
    pub fn from_path(path: &str) -> TypeClass {
        let name = path.rsplit('/').next().unwrap_or(path);
        match name.rsplit_once('.') {
            Some((_, ext)) if LINKED_EXTENSIONS.contains(&ext.to_ascii_lowercase().as_str()) => {
                TypeClass::Linked
            }
            _ => TypeClass::Partial,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileStatus {
    Used,
    Deleted,
    Obsolete,
}

/// LF value stamped on a block when a file of a given class claims it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkingRule {
    /// Partial lineage gets 0, linked lineage 1.
    #[default]
    Literal,
    /// Partial lineage gets 1, linked lineage 0.
    Inverted,
}

impl LinkingRule {
    pub fn lf_for(self, class: TypeClass) -> u8 {
        match (self, class) {
            (LinkingRule::Literal, TypeClass::Partial)
            | (LinkingRule::Inverted, TypeClass::Linked) => 0,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AllocPolicy {
    /// Highest Priority Factor first.
    Apex,
    /// Lowest address first.
    FirstFit,
    /// Uniform without replacement.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub id: FileId,
    pub path: String,
    pub type_class: TypeClass,
    pub status: FileStatus,
    /// `block_list[0]` is the metadata block.
    pub block_list: Vec<BlockAddr>,
    pub size_bytes: u64,
    pub uf_counter: u32,
    pub created_tick: u64,
    pub last_access_tick: u64,
    pub deleted_tick: Option<u64>,
    /// Payload version of each block at deletion time.
    pub final_epochs: Vec<u64>,
}

impl FileRecord {
    pub fn data_blocks(&self) -> &[BlockAddr] {
        self.block_list.get(1..).unwrap_or(&[])
    }

    pub fn metadata_block(&self) -> Option<BlockAddr> {
        self.block_list.first().copied()
    }
}

/// Node of the directory tree.
#[derive(Debug, Clone, PartialEq)]
pub struct PathNode {
    pub name: String,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Directory {
        children: BTreeMap<String, PathNode>,
    },
    File {
        file: FileId,
    },
}

impl PathNode {
    fn directory(name: &str) -> Self {
        PathNode {
            name: name.to_string(),
            kind: NodeKind::Directory {
                children: BTreeMap::new(),
            },
        }
    }

    fn children_mut(&mut self) -> Option<&mut BTreeMap<String, PathNode>> {
        match &mut self.kind {
            NodeKind::Directory { children } => Some(children),
            NodeKind::File { .. } => None,
        }
    }

    fn children(&self) -> Option<&BTreeMap<String, PathNode>> {
        match &self.kind {
            NodeKind::Directory { children } => Some(children),
            NodeKind::File { .. } => None,
        }
    }
}

/// Coarse record of what the file layer did, for replay oracles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum FsEvent {
    Created {
        tick: u64,
        file: FileId,
        type_class: TypeClass,
        blocks: Vec<BlockAddr>,
    },
    Deleted {
        tick: u64,
        file: FileId,
    },
    Accessed {
        tick: u64,
        file: FileId,
    },
    Wrote {
        tick: u64,
        file: FileId,
        blocks: Vec<BlockAddr>,
    },
    SpatialPass {
        tick: u64,
    },
    HyperparamsChanged {
        tick: u64,
        hyperparams: Hyperparams,
    },
}

#[derive(Debug, Clone)]
pub struct FileSystem {
    disk: Disk,
    root: PathNode,
    files: Vec<FileRecord>,
    live: BTreeSet<FileId>,
    /// Deleted files that still have at least one candidate block.
    pending_deleted: BTreeSet<FileId>,
    policy: AllocPolicy,
    policy_rng: Option<ChaCha8Rng>,
    linking: LinkingRule,
    events: Option<Vec<FsEvent>>,
}

fn split_path(path: &str) -> Result<Vec<&str>, FsError> {
    let rest = path
        .strip_prefix('/')
        .ok_or_else(|| FsError::InvalidPath(path.to_string()))?;
    if rest.is_empty() {
        return Ok(Vec::new());
    }
    let parts: Vec<&str> = rest.split('/').collect();
    if parts
        .iter()
        .any(|p| p.is_empty() || *p == "." || *p == "..")
    {
        return Err(FsError::InvalidPath(path.to_string()));
    }
    Ok(parts)
}

/// Deterministic filler bytes.
pub fn pattern_bytes(seed: u64, len: usize) -> Vec<u8> {
    let mut state = seed ^ 0x9e37_79b9_7f4a_7c15;
    let mut out = Vec::with_capacity(len + 8);
    while out.len() < len {
        // splitmix64
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        out.extend_from_slice(&z.to_le_bytes());
    }
    out.truncate(len);
    out
}

impl FileSystem {
    pub fn new(
        geometry: DiskGeometry,
        hp: Hyperparams,
        policy: AllocPolicy,
    ) -> Result<Self, FsError> {
        Ok(FileSystem::with_disk(Disk::new(geometry, hp)?, policy))
    }

    pub fn with_disk(disk: Disk, policy: AllocPolicy) -> Self {
        let policy_rng = match policy {
            AllocPolicy::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            _ => None,
        };
        FileSystem {
            disk,
            root: PathNode::directory("/"),
            files: Vec::new(),
            live: BTreeSet::new(),
            pending_deleted: BTreeSet::new(),
            policy,
            policy_rng,
            linking: LinkingRule::default(),
            events: None,
        }
    }

    pub fn with_linking(mut self, rule: LinkingRule) -> Self {
        self.linking = rule;
        self
    }

    /// Start recording [`FsEvent`]s.
    pub fn with_event_log(mut self) -> Self {
        self.events = Some(Vec::new());
        self
    }

    pub fn events(&self) -> &[FsEvent] {
        self.events.as_deref().unwrap_or(&[])
    }

    pub fn disk(&self) -> &Disk {
        &self.disk
    }

    /// Direct disk access for tests and tooling that bypass the file layer.
    pub fn disk_mut(&mut self) -> &mut Disk {
        &mut self.disk
    }

    pub fn policy(&self) -> AllocPolicy {
        self.policy
    }

    pub fn linking(&self) -> LinkingRule {
        self.linking
    }

    pub fn root(&self) -> &PathNode {
        &self.root
    }

    pub fn files(&self) -> &[FileRecord] {
        &self.files
    }

    pub fn file(&self, id: FileId) -> Option<&FileRecord> {
        self.files.get(id.0 as usize)
    }

    /// Files in use, in creation order.
    pub fn live_files(&self) -> impl Iterator<Item = &FileRecord> {
        self.live.iter().map(|id| &self.files[id.0 as usize])
    }

    pub fn live_count(&self) -> usize {
        self.live.len()
    }

    /// Deleted and obsolete files.
    pub fn removed_files(&self) -> impl Iterator<Item = &FileRecord> {
        self.files.iter().filter(|f| f.status != FileStatus::Used)
    }

    fn log(&mut self, event: FsEvent) {
        if let Some(events) = &mut self.events {
            events.push(event);
        }
    }

    pub fn tick(&self) -> u64 {
        self.disk.clock()
    }

    pub fn advance_clock(&mut self) -> u64 {
        self.disk.advance_clock()
    }

    pub(crate) fn set_clock(&mut self, tick: u64) {
        self.disk.set_clock(tick);
    }

    pub fn set_hyperparams(&mut self, hp: Hyperparams) {
        if hp != self.disk.hyperparams() {
            self.disk.set_hyperparams(hp);
            let tick = self.tick();
            self.log(FsEvent::HyperparamsChanged {
                tick,
                hyperparams: hp,
            });
        }
    }

    pub fn spatial_pass(&mut self) {
        self.disk.update_spatial_factors();
        let tick = self.tick();
        self.log(FsEvent::SpatialPass { tick });
    }

    fn lookup(&self, path: &str) -> Result<&PathNode, FsError> {
        let mut node = &self.root;
        for part in split_path(path)? {
            node = node
                .children()
                .and_then(|c| c.get(part))
                .ok_or_else(|| FsError::NotFound(path.to_string()))?;
        }
        Ok(node)
    }

    /// Parent directory children of `path` plus the final component.
    fn parent_dir_mut<'a>(
        &mut self,
        path: &'a str,
    ) -> Result<(&mut BTreeMap<String, PathNode>, &'a str), FsError> {
        let parts = split_path(path)?;
        let Some((name, dirs)) = parts.split_last() else {
            return Err(FsError::InvalidPath(path.to_string()));
        };
        let mut node = &mut self.root;
        for part in dirs {
            node = node
                .children_mut()
                .and_then(|c| c.get_mut(*part))
                .ok_or_else(|| FsError::MissingParent(path.to_string()))?;
        }
        let children = node
            .children_mut()
            .ok_or_else(|| FsError::MissingParent(path.to_string()))?;
        Ok((children, name))
    }

    pub fn create_dir(&mut self, path: &str) -> Result<(), FsError> {
        let (children, name) = self.parent_dir_mut(path)?;
        if children.contains_key(name) {
            return Err(FsError::AlreadyExists(path.to_string()));
        }
        children.insert(name.to_string(), PathNode::directory(name));
        Ok(())
    }

    pub fn resolve(&self, path: &str) -> Result<FileId, FsError> {
        match self.lookup(path)?.kind {
            NodeKind::File { file } => Ok(file),
            NodeKind::Directory { .. } => Err(FsError::NotAFile(path.to_string())),
        }
    }

    pub fn file_by_path(&self, path: &str) -> Result<&FileRecord, FsError> {
        let id = self.resolve(path)?;
        Ok(&self.files[id.0 as usize])
    }

    pub fn blocks_for_size(&self, size_bytes: u64) -> usize {
        let bs = self.disk.geometry().block_size as u64;
        size_bytes.div_ceil(bs) as usize + 1
    }

    fn choose_blocks(&mut self, count: usize) -> Result<Vec<BlockAddr>, FsError> {
        let chosen = match self.policy {
            AllocPolicy::Apex => self.disk.top_unused(count)?,
            AllocPolicy::FirstFit => self
                .disk
                .blocks()
                .iter()
                .filter(|b| !b.is_used())
                .take(count)
                .map(|b| b.index)
                .collect(),
            AllocPolicy::Random { .. } => {
                // Full shuffle so a smaller request takes a prefix of what a
                // larger one would have taken from the same state.
                let mut free: Vec<BlockAddr> = self
                    .disk
                    .blocks()
                    .iter()
                    .filter(|b| !b.is_used())
                    .map(|b| b.index)
                    .collect();
                let rng = self.policy_rng.as_mut().expect("random policy has an rng");
                free.shuffle(rng);
                free.truncate(count);
                free
            }
        };
        Ok(chosen)
    }

    /// Create a file filled with deterministic content.
    pub fn create_file(
        &mut self,
        path: &str,
        size_bytes: u64,
        type_class: TypeClass,
    ) -> Result<FileId, FsError> {
        let next_id = self.files.len() as u64;
        let data = pattern_bytes(next_id.wrapping_mul(0x1000_0001), size_bytes as usize);
        self.create_file_with(path, &data, type_class)
    }

    /// Allocates blocks per the policy, writes metadata and `data`, installs
    /// the lineage records, and raises HF on siblings of any block whose
    /// previous parent's data just got overwritten. Nothing changes on error.
    pub fn create_file_with(
        &mut self,
        path: &str,
        data: &[u8],
        type_class: TypeClass,
    ) -> Result<FileId, FsError> {
        let needed = self.blocks_for_size(data.len() as u64);
        let free = self.disk.unused_count();
        {
            let (children, name) = self.parent_dir_mut(path)?;
            if children.contains_key(name) {
                return Err(FsError::AlreadyExists(path.to_string()));
            }
        }
        if needed > free {
            return Err(FsError::DiskFull { needed, free });
        }

        let id = FileId(self.files.len() as u64);
        let blocks = self.choose_blocks(needed)?;
        let previous: Vec<(BlockAddr, MrpfRecord)> = blocks
            .iter()
            .filter_map(|&b| self.disk.blocks()[b as usize].mrpf.clone().map(|m| (b, m)))
            .collect();

        let lf = self.linking.lf_for(type_class);
        let bs = self.disk.geometry().block_size;
        let mut meta = Vec::with_capacity(32);
        meta.extend_from_slice(b"APXMETA\0");
        meta.extend_from_slice(&id.0.to_le_bytes());
        meta.extend_from_slice(&(data.len() as u64).to_le_bytes());
        meta.push(lf);
        meta.truncate(bs);

        for (i, &addr) in blocks.iter().enumerate() {
            self.disk.transition(addr, Transition::ToUsed)?;
            self.disk.set_linking(addr, lf);
            let version = if i == 0 {
                self.disk.write_block(addr, 0, &meta)?
            } else {
                let start = (i - 1) * bs;
                let end = (start + bs).min(data.len());
                self.disk.write_block(addr, 0, &data[start..end])?
            };
            self.disk.set_mrpf(
                addr,
                Some(MrpfRecord {
                    file_id: id,
                    siblings: blocks.clone(),
                    content_epoch: version,
                }),
            );
        }
        for (addr, lineage) in &previous {
            self.disk.propagate_overwrite(*addr, lineage);
        }

        let tick = self.tick();
        let (children, name) = self.parent_dir_mut(path)?;
        children.insert(
            name.to_string(),
            PathNode {
                name: name.to_string(),
                kind: NodeKind::File { file: id },
            },
        );
        self.files.push(FileRecord {
            id,
            path: path.to_string(),
            type_class,
            status: FileStatus::Used,
            block_list: blocks.clone(),
            size_bytes: data.len() as u64,
            uf_counter: 1,
            created_tick: tick,
            last_access_tick: tick,
            deleted_tick: None,
            final_epochs: Vec::new(),
        });
        self.live.insert(id);
        self.log(FsEvent::Created {
            tick,
            file: id,
            type_class,
            blocks,
        });
        Ok(id)
    }

    /// Logical delete: blocks return to the unused pool with their lineage
    /// intact; the record stays for recovery accounting.
    pub fn delete_file(&mut self, path: &str) -> Result<FileId, FsError> {
        let id = self.resolve(path)?;
        let (children, name) = self.parent_dir_mut(path)?;
        children.remove(name);
        let blocks = self.files[id.0 as usize].block_list.clone();
        let mut epochs = Vec::with_capacity(blocks.len());
        for &addr in &blocks {
            self.disk.transition(addr, Transition::ToUnused)?;
            epochs.push(self.disk.blocks()[addr as usize].payload.version);
        }
        let tick = self.tick();
        let file = &mut self.files[id.0 as usize];
        file.status = FileStatus::Deleted;
        file.deleted_tick = Some(tick);
        file.final_epochs = epochs;
        self.live.remove(&id);
        self.pending_deleted.insert(id);
        self.log(FsEvent::Deleted { tick, file: id });
        Ok(id)
    }

    /// Counts one read/write against a live file.
    pub fn record_file_access(&mut self, id: FileId) -> Result<(), FsError> {
        let file = self
            .files
            .get(id.0 as usize)
            .ok_or_else(|| FsError::NotFound(id.to_string()))?;
        if file.status != FileStatus::Used {
            return Err(FsError::NotLive {
                id,
                status: file.status,
            });
        }
        let blocks = file.block_list.clone();
        self.disk.record_block_access(&blocks)?;
        let tick = self.tick();
        let file = &mut self.files[id.0 as usize];
        file.uf_counter += 1;
        file.last_access_tick = tick;
        self.log(FsEvent::Accessed { tick, file: id });
        Ok(())
    }

    fn live(&self, path: &str) -> Result<FileId, FsError> {
        let id = self.resolve(path)?;
        let status = self.files[id.0 as usize].status;
        if status != FileStatus::Used {
            return Err(FsError::NotLive { id, status });
        }
        Ok(id)
    }

    pub fn read_file(&mut self, path: &str) -> Result<Vec<u8>, FsError> {
        let id = self.live(path)?;
        let file = &self.files[id.0 as usize];
        let mut out = Vec::with_capacity(file.size_bytes as usize);
        for &addr in file.data_blocks() {
            out.extend_from_slice(&self.disk.read_block(addr)?);
        }
        out.truncate(file.size_bytes as usize);
        self.record_file_access(id)?;
        Ok(out)
    }

    /// In-place write within the current file size.
    pub fn write_file(&mut self, path: &str, offset: u64, bytes: &[u8]) -> Result<(), FsError> {
        let id = self.live(path)?;
        let file = &self.files[id.0 as usize];
        let len = bytes.len() as u64;
        if offset
            .checked_add(len)
            .is_none_or(|end| end > file.size_bytes)
        {
            return Err(FsError::OutOfRange {
                offset,
                len,
                size: file.size_bytes,
            });
        }
        let bs = self.disk.geometry().block_size as u64;
        let data_blocks = file.data_blocks().to_vec();
        let mut touched = Vec::new();
        let mut pos = offset;
        let mut remaining = bytes;
        while !remaining.is_empty() {
            let block_idx = (pos / bs) as usize;
            let within = (pos % bs) as usize;
            let take = remaining.len().min(bs as usize - within);
            let addr = data_blocks[block_idx];
            let version = self.disk.write_block(addr, within, &remaining[..take])?;
            if let Some(m) = self.disk.block_mut(addr)?.mrpf.as_mut() {
                m.content_epoch = version;
            }
            touched.push(addr);
            remaining = &remaining[take..];
            pos += take as u64;
        }
        let tick = self.tick();
        self.log(FsEvent::Wrote {
            tick,
            file: id,
            blocks: touched,
        });
        self.record_file_access(id)
    }

    pub fn block_survives(&self, file: &FileRecord, position: usize) -> bool {
        crate::recovery::block_survives(&self.disk, file, position)
    }

    /// Deleted files with no surviving block become obsolete.
    pub fn mark_obsolete_sweep(&mut self) -> usize {
        let gone: Vec<FileId> = self
            .pending_deleted
            .iter()
            .copied()
            .filter(|id| {
                let file = &self.files[id.0 as usize];
                !(0..file.block_list.len()).any(|i| self.block_survives(file, i))
            })
            .collect();
        for id in &gone {
            self.pending_deleted.remove(id);
            self.files[id.0 as usize].status = FileStatus::Obsolete;
        }
        gone.len()
    }

    /// Ownership and lineage checks on top of [`Disk::check_invariants`].
    pub fn check_invariants(&self) -> Result<(), String> {
        self.disk.check_invariants()?;
        let mut owner: Vec<Option<FileId>> = vec![None; self.disk.total_blocks()];
        for file in self.live_files() {
            for &addr in &file.block_list {
                if let Some(other) = owner[addr as usize].replace(file.id) {
                    return Err(format!("block {addr} owned by {other} and {}", file.id));
                }
                let block = &self.disk.blocks()[addr as usize];
                if !block.is_used() {
                    return Err(format!("file {} lists unused block {addr}", file.id));
                }
                if block.mrpf.as_ref().map(|m| m.file_id) != Some(file.id) {
                    return Err(format!("block {addr} lineage does not name {}", file.id));
                }
            }
        }
        for &addr in self.disk.used_set() {
            if owner[addr as usize].is_none() {
                return Err(format!("used block {addr} has no live owner"));
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> FsSnapshot {
        FsSnapshot {
            disk: self.disk.snapshot(),
            files: self.files.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsSnapshot {
    pub disk: DiskSnapshot,
    pub files: Vec<FileRecord>,
}

impl FsSnapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot is always serializable")
    }
}
