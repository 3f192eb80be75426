//! Priority Factor computation, the factor update rules and the ranked index
//! of unused blocks.
//!
//! `PF = λ·HF − σ·UF + ρ·SF + μ·LF`. A higher PF means the block is handed out
//! to a new file sooner; low-PF blocks are the ones worth keeping around for
//! recovery.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use crate::disk::{
    BlockAddr, BlockFactors, BlockState, Disk, DiskError, FileId, Hyperparams, MrpfRecord,
    Neighborhood,
};

pub fn priority_factor(factors: &BlockFactors, hp: &Hyperparams, spatial_enabled: bool) -> f64 {
    let mut pf = hp.lambda as f64 * factors.hf as f64 - hp.sigma as f64 * factors.uf as f64
        + hp.mu as f64 * factors.lf as f64;
    if spatial_enabled {
        pf += hp.rho as f64 * factors.sf;
    }
    pf
}

/// PF without the block's own spatial contribution. This is what a block
/// contributes to its neighbors' spatial factor.
pub fn base_priority(factors: &BlockFactors, hp: &Hyperparams) -> f64 {
    priority_factor(factors, hp, false)
}

/// Something that changes block factors.
#[derive(Debug, Clone, PartialEq)]
pub enum FactorEvent {
    /// A block carrying `lineage` was claimed by another file.
    OverwriteOfSibling {
        overwritten: BlockAddr,
        lineage: MrpfRecord,
    },
    /// One read or write against a file holding these blocks.
    FileAccess {
        blocks: Vec<BlockAddr>,
    },
    SpatialPass,
}

#[derive(Debug, Clone, Copy)]
struct RankKey {
    pf: f64,
    addr: BlockAddr,
}

impl PartialEq for RankKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for RankKey {}

impl PartialOrd for RankKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for RankKey {
    // Highest PF first, then lowest address.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .pf
            .total_cmp(&self.pf)
            .then_with(|| self.addr.cmp(&other.addr))
    }
}

/// Max-priority index over unused blocks with keyed updates.
#[derive(Debug, Clone)]
pub struct PriorityIndex {
    order: BTreeSet<RankKey>,
    keys: Vec<Option<f64>>,
}

impl PriorityIndex {
    pub fn new(capacity: usize) -> Self {
        PriorityIndex {
            order: BTreeSet::new(),
            keys: vec![None; capacity],
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn key_of(&self, addr: BlockAddr) -> Option<f64> {
        self.keys.get(addr as usize).copied().flatten()
    }

    pub fn insert(&mut self, addr: BlockAddr, pf: f64) {
        if let Some(old) = self.keys[addr as usize].replace(pf) {
            self.order.remove(&RankKey { pf: old, addr });
        }
        self.order.insert(RankKey { pf, addr });
    }

    /// Re-keys an entry that is already present.
    pub fn update(&mut self, addr: BlockAddr, pf: f64) {
        match self.keys[addr as usize] {
            Some(old) if old.total_cmp(&pf) == Ordering::Equal => {}
            Some(_) => self.insert(addr, pf),
            None => {}
        }
    }

    pub fn remove(&mut self, addr: BlockAddr) -> Option<f64> {
        let old = self.keys[addr as usize].take()?;
        self.order.remove(&RankKey { pf: old, addr });
        Some(old)
    }

    /// Addresses from highest to lowest priority.
    pub fn addresses(&self) -> impl Iterator<Item = BlockAddr> + '_ {
        self.order.iter().map(|k| k.addr)
    }
}

impl Disk {
    /// The `count` highest-priority unused blocks, best first.
    pub fn top_unused(&self, count: usize) -> Result<Vec<BlockAddr>, DiskError> {
        if count > self.unused.len() {
            return Err(DiskError::InsufficientFree {
                requested: count,
                available: self.unused.len(),
            });
        }
        Ok(self.unused.addresses().take(count).collect())
    }

    pub fn apply_factor_event(&mut self, event: &FactorEvent) -> Result<(), DiskError> {
        match event {
            FactorEvent::OverwriteOfSibling {
                overwritten,
                lineage,
            } => {
                self.propagate_overwrite(*overwritten, lineage);
                Ok(())
            }
            FactorEvent::FileAccess { blocks } => self.record_block_access(blocks),
            FactorEvent::SpatialPass => {
                self.update_spatial_factors();
                Ok(())
            }
        }
    }

    /// Raises HF on the still-unused siblings of an overwritten block, using
    /// the lineage the block currently carries. No-op without lineage.
    pub fn record_overwrite_event(&mut self, overwritten: BlockAddr) -> Result<(), DiskError> {
        let Some(lineage) = self.block(overwritten)?.mrpf.clone() else {
            return Ok(());
        };
        self.propagate_overwrite(overwritten, &lineage);
        Ok(())
    }

    /// Siblings count only while unused and still descended from the same
    /// parent file; re-allocated ones are skipped.
    pub(crate) fn propagate_overwrite(&mut self, overwritten: BlockAddr, lineage: &MrpfRecord) {
        for &sibling in &lineage.siblings {
            if sibling == overwritten {
                continue;
            }
            let Some(block) = self.blocks().get(sibling as usize) else {
                continue;
            };
            let same_parent = block.mrpf.as_ref().map(|m| m.file_id) == Some(lineage.file_id);
            if block.state == BlockState::Unused && same_parent {
                self.block_mut(sibling).expect("in range").factors.hf += 1;
                self.refresh_key(sibling);
            }
        }
    }

    /// One file-level read/write: UF of every listed block goes up by one.
    pub fn record_block_access(&mut self, blocks: &[BlockAddr]) -> Result<(), DiskError> {
        for &addr in blocks {
            self.block(addr)?;
        }
        for &addr in blocks {
            self.block_mut(addr)?.factors.uf += 1;
            self.refresh_key(addr);
        }
        Ok(())
    }

    /// One synchronous spatial pass. Every unused block's SF becomes the mean
    /// base PF of its neighbors as they stood before the pass; used blocks get
    /// zero.
    pub fn update_spatial_factors(&mut self) {
        let geometry = *self.geometry();
        if !geometry.spatial_enabled() {
            return;
        }
        let hp = self.hyperparams();
        let base: Vec<f64> = self
            .blocks()
            .iter()
            .map(|b| base_priority(&b.factors, &hp))
            .collect();
        let total = base.len();
        let mut next_sf = vec![0.0; total];
        match geometry.neighborhood {
            Neighborhood::GridRow => {
                let cols = geometry.cols as usize;
                if cols > 1 {
                    for (row, chunk) in base.chunks(cols).enumerate() {
                        let sum: f64 = chunk.iter().sum();
                        for (c, &own) in chunk.iter().enumerate() {
                            next_sf[row * cols + c] = (sum - own) / (cols - 1) as f64;
                        }
                    }
                }
            }
            Neighborhood::ContiguousK { .. } => {
                for (addr, sf) in next_sf.iter_mut().enumerate() {
                    let n = geometry.neighbors(addr as BlockAddr);
                    if !n.is_empty() {
                        *sf = n.iter().map(|&j| base[j as usize]).sum::<f64>() / n.len() as f64;
                    }
                }
            }
            Neighborhood::None => unreachable!(),
        }
        for (addr, sf) in next_sf.into_iter().enumerate() {
            let addr = addr as BlockAddr;
            let block = self.block_mut(addr).expect("in range");
            block.factors.sf = if block.state == BlockState::Used {
                0.0
            } else {
                sf
            };
            self.refresh_key(addr);
        }
    }

    /// Parent file of an unused block, if its lineage is still present.
    pub fn lineage_of(&self, addr: BlockAddr) -> Option<FileId> {
        self.blocks()
            .get(addr as usize)
            .and_then(|b| b.mrpf.as_ref())
            .map(|m| m.file_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disk::{DiskGeometry, Transition};

    fn factors(hf: u32, uf: u32, sf: f64, lf: u8) -> BlockFactors {
        BlockFactors { hf, uf, sf, lf }
    }

    #[test]
    fn priority_factor_examples() {
        let hp = Hyperparams::TUNED;
        assert_eq!(priority_factor(&factors(1, 1, 0.0, 1), &hp, true), 6.0);
        assert_eq!(priority_factor(&factors(0, 0, 0.0, 0), &hp, true), 0.0);
        assert_eq!(priority_factor(&factors(3, 2, 5.0, 0), &hp, true), 3.0);
        assert_eq!(priority_factor(&factors(3, 2, 5.0, 0), &hp, false), -2.0);
    }

    #[test]
    fn index_orders_by_priority_then_address() {
        let mut idx = PriorityIndex::new(4);
        idx.insert(3, 1.0);
        idx.insert(1, 5.0);
        idx.insert(0, 1.0);
        idx.insert(2, 5.0);
        assert_eq!(idx.addresses().collect::<Vec<_>>(), vec![1, 2, 0, 3]);
        idx.update(3, 9.0);
        assert_eq!(idx.addresses().next(), Some(3));
        assert_eq!(idx.remove(3), Some(9.0));
        assert_eq!(idx.remove(3), None);
        assert_eq!(idx.len(), 3);
    }

    #[test]
    fn top_unused_on_fresh_disk_is_address_order() {
        let d = Disk::new(DiskGeometry::default(), Hyperparams::TUNED).unwrap();
        assert_eq!(d.top_unused(4).unwrap(), vec![0, 1, 2, 3]);
        assert!(matches!(
            d.top_unused(257),
            Err(DiskError::InsufficientFree {
                requested: 257,
                available: 256
            })
        ));
    }

    #[test]
    fn top_unused_finds_single_raised_block() {
        let mut d = Disk::new(DiskGeometry::default(), Hyperparams::TUNED).unwrap();
        d.block_mut(77).unwrap().factors.sf = 6.0;
        d.refresh_key(77);
        assert_eq!(d.stored_key(77), Some(15.0));
        assert_eq!(d.top_unused(1).unwrap(), vec![77]);
    }

    fn with_lineage(d: &mut Disk, file: u64, blocks: &[BlockAddr]) {
        for &b in blocks {
            d.set_mrpf(
                b,
                Some(MrpfRecord {
                    file_id: FileId(file),
                    siblings: blocks.to_vec(),
                    content_epoch: 0,
                }),
            );
        }
    }

    #[test]
    fn overwrite_raises_unused_siblings() {
        let mut d = Disk::new(DiskGeometry::grid(1, 4), Hyperparams::TUNED).unwrap();
        with_lineage(&mut d, 1, &[0, 1, 2]);
        d.record_overwrite_event(0).unwrap();
        let hf: Vec<u32> = d.blocks().iter().map(|b| b.factors.hf).collect();
        assert_eq!(hf, vec![0, 1, 1, 0]);
        assert_eq!(d.stored_key(1), Some(13.0));
        d.check_invariants().unwrap();
    }

    #[test]
    fn overwrite_without_siblings_or_lineage_is_noop() {
        let mut d = Disk::new(DiskGeometry::grid(1, 4), Hyperparams::TUNED).unwrap();
        d.record_overwrite_event(3).unwrap();
        with_lineage(&mut d, 1, &[0]);
        d.record_overwrite_event(0).unwrap();
        assert!(d.blocks().iter().all(|b| b.factors.hf == 0));
    }

    #[test]
    fn overwrite_skips_reallocated_sibling() {
        let mut d = Disk::new(DiskGeometry::grid(1, 4), Hyperparams::TUNED).unwrap();
        with_lineage(&mut d, 1, &[0, 1, 2]);
        // block 1 now belongs to file 2
        d.transition(1, Transition::ToUsed).unwrap();
        with_lineage(&mut d, 2, &[1]);
        d.record_overwrite_event(0).unwrap();
        assert_eq!(d.block(1).unwrap().factors.hf, 1);
        assert_eq!(d.block(2).unwrap().factors.hf, 1);
        // an unused sibling whose lineage changed is skipped too
        let mut d = Disk::new(DiskGeometry::grid(1, 4), Hyperparams::TUNED).unwrap();
        with_lineage(&mut d, 1, &[0, 1, 2]);
        with_lineage(&mut d, 3, &[2]);
        d.record_overwrite_event(0).unwrap();
        assert_eq!(d.block(1).unwrap().factors.hf, 1);
        assert_eq!(d.block(2).unwrap().factors.hf, 0);
    }

    #[test]
    fn spatial_pass_means_of_equal_neighbors() {
        let mut d = Disk::new(DiskGeometry::grid(1, 3), Hyperparams::TUNED).unwrap();
        d.update_spatial_factors();
        assert_eq!(d.block(1).unwrap().factors.sf, 9.0);
        assert_eq!(d.stored_key(1), Some(18.0));
    }

    #[test]
    fn spatial_pass_middle_of_row() {
        let mut d = Disk::new(DiskGeometry::grid(1, 3), Hyperparams::TUNED).unwrap();
        // right block: hf=2, uf=2, lf=1 gives 8 - 14 + 9 = 3
        d.block_mut(2).unwrap().factors = factors(2, 2, 0.0, 1);
        d.refresh_key(2);
        assert_eq!(d.priority_of(0), 9.0);
        assert_eq!(d.priority_of(2), 3.0);
        d.update_spatial_factors();
        assert_eq!(d.block(1).unwrap().factors.sf, 6.0);
        assert_eq!(d.priority_of(1), 15.0);
        d.check_invariants().unwrap();
    }

    #[test]
    fn spatial_pass_zeroes_used_blocks() {
        let mut d = Disk::new(DiskGeometry::grid(1, 3), Hyperparams::TUNED).unwrap();
        d.transition(1, Transition::ToUsed).unwrap();
        d.update_spatial_factors();
        assert_eq!(d.block(1).unwrap().factors.sf, 0.0);
        // neighbors of 0 are {1, 2}: base PFs 4-7+9 = 6 and 9
        assert_eq!(d.block(0).unwrap().factors.sf, 7.5);
    }

    #[test]
    fn spatial_pass_noop_without_neighborhood() {
        let g = DiskGeometry::grid(1, 3).with_neighborhood(Neighborhood::None);
        let mut d = Disk::new(g, Hyperparams::TUNED).unwrap();
        d.block_mut(0).unwrap().factors.hf = 4;
        d.refresh_key(0);
        d.update_spatial_factors();
        assert!(d.blocks().iter().all(|b| b.factors.sf == 0.0));
    }

    #[test]
    fn block_access_increments_uf() {
        let mut d = Disk::new(DiskGeometry::grid(1, 4), Hyperparams::TUNED).unwrap();
        d.apply_factor_event(&FactorEvent::FileAccess { blocks: vec![0, 2] })
            .unwrap();
        d.apply_factor_event(&FactorEvent::FileAccess { blocks: vec![0, 2] })
            .unwrap();
        let uf: Vec<u32> = d.blocks().iter().map(|b| b.factors.uf).collect();
        assert_eq!(uf, vec![2, 0, 2, 0]);
        assert!(d.record_block_access(&[0, 99]).is_err());
        assert_eq!(d.block(0).unwrap().factors.uf, 2);
    }
}
