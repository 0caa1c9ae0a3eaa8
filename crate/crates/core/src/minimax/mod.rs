//! Single-loop stochastic minimax solver for the penalized bilevel objective
//! `L1(λ, w) + α (L2(λ, w) − L2(λ, u))`, with randomized block-coordinate
//! updates on `u` and `w` and full updates on `λ`.

mod partition;
mod record;
mod schedule;
mod solver;

pub use partition::{make_partition, BlockPartition, PartitionStrategy};
pub use record::{RunRecord, RunRow};
pub use schedule::{AdamParams, Schedule, ScheduleMode, UpdateRule};
pub use solver::{run, run_with_observer, scalebio_step, Init, RunAborted, RunOptions, ScaleBiOState, StepReport};
