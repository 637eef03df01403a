//! Training loop, optimizers, checkpoints and evaluation drivers.

pub mod eval;
pub mod optim;
pub mod train;

pub use eval::{disentanglement, edit_clips, median, metrics_report, trajectory_r2, EditRecord, EditRun};
pub use optim::{warmup_scale, Adam};
pub use train::{
    batch_indices, latest_checkpoint, read_log, read_meta, train, CheckpointMeta, GeneratorPass, Networks, PreparedBatch, StepRecord, TrainOutcome,
    Trainer, LOG_FILE,
};
