//! Desk-scale training: warmup + cosine schedule, AdamW, short/long batch
//! interleaving and staged runs.

mod data;
mod interleave;
mod optim;
mod schedule;
mod train;

pub use data::{FixedSequences, KvCurriculum, LossScope, SequenceSource};
pub use interleave::{batch_kind, interleave_batches, BatchKind};
pub use optim::AdamState;
pub use schedule::{lr_schedule, AdamW, TrainConfig};
pub use train::{cross_entropy, run_stages, train, train_stage, write_metrics_csv, Stage, StepMetrics};
