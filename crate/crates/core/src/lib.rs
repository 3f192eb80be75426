//! Recoverability-aware block allocation.
//!
//! Free blocks are ranked by a Priority Factor built from four per-block
//! factors (history, usage, spatial, linking). New files take the
//! highest-ranked blocks, so the blocks of recently deleted, heavily used
//! files are overwritten last. Around the allocator sit a seeded workload
//! simulator and a tabular Q-learning tuner for the four ranking coefficients.

pub mod cli;
pub mod compare;
pub mod config;
pub mod disk;
pub mod priority;
pub mod recovery;
pub mod tuner;
pub mod vfs;
pub mod workload;

pub use compare::{CompareConfig, PolicyChoice};
pub use config::AppConfig;
pub use disk::{
    BlockAddr, BlockFactors, BlockState, Disk, DiskError, DiskGeometry, FileId, Hyperparams,
    MrpfRecord, Neighborhood, Transition,
};
pub use priority::{priority_factor, FactorEvent};
pub use recovery::{performance, recover_file, weighted_rr, PerfWeights};
pub use tuner::{train, TrainConfig, TrainReport};
pub use vfs::{
    AllocPolicy, FileRecord, FileStatus, FileSystem, FsError, FsEvent, LinkingRule, TypeClass,
};
pub use workload::{replay_trace, run_simulation, Simulator, WorkloadConfig};
