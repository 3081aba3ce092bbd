//! Pipeline-stage scheduling of computational DAGs.
//!
//! Assigns each node of a DAG to one of `n` pipeline stages so that every
//! edge points forward (or stays within a stage) and the largest per-stage
//! memory footprint is as small as possible. Three schedulers share one
//! schedule type: an exact branch-and-bound search, a list-scheduling
//! heuristic and a pointer-network policy trained by REINFORCE to imitate
//! the exact search.
//!
//! The crate is `no_std` with `alloc`; file formats, the CLI and the
//! parallel training driver live in the `pipesched` crate.

#![no_std]

extern crate alloc;

pub mod deploy;
pub mod embed;
pub mod error;
pub mod exact;
pub mod graph;
pub mod heuristic;
pub mod policy;
pub mod rl;
pub mod sampler;
pub mod schedule;

pub use deploy::{cost_model, gap_to_optimal, repair_schedule, CoStageRule, CostModel, RepairReport};
pub use embed::{embed_graph, GraphEmbedding};
pub use error::{EpisodeError, GraphError, PolicyError, RewardError, ScheduleError};
pub use exact::{brute_force_schedule, exact_schedule, exact_schedule_with, ExactConfig};
pub use graph::{ComputeDag, OpNode};
pub use heuristic::list_schedule;
pub use rl::{cosine_reward, seq_to_schedule, sequence_reward};
pub use sampler::{sample_dag, SamplerConfig};
pub use schedule::{label_sequence, Schedule, ScheduleObjective};
