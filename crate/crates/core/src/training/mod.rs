//! Optimization: schedules, AdamW with parameter groups, clipping,
//! checkpoints and the training loop.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod optim;
pub mod schedule;
pub mod trainer;

pub use checkpoint::{check_config, Checkpoint, NamedTensor, FORMAT_VERSION, MAGIC};
pub use config::{BankMode, GroupLrs, TrainConfig};
pub use corpus::{DataConfig, TokenCorpus};
pub use optim::{clip_grad_norm, decay_set, grad_norm, is_decayed, AdamW, AppliedLr, ClipResult, Moments, StepAudit, ADAM_EPS};
pub use schedule::{lr_at_step, Schedule};
pub use trainer::{
    continue_train, load_for_continuation, read_metrics_csv, train, write_metrics_csv, MetricsRow, MetricsWriter,
    TrainResult, Trainer, METRICS_HEADER,
};
