//! Two-step training of the restoration network on procedural clips.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod optim;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use config::{LossKind, TrainConfig};
pub use data::{build_pairs, sample_batch, synthetic_clips, Augment, Batch, ClipPairs, PairDataset, CLIP_LEN};
pub use optim::AdamW;
pub use trainer::{
    evaluate, train_end_to_end, train_step1, train_step2, write_log_csv, EvalSummary, LogRow, RefChoice, TrainFailure,
    TrainRun,
};
