//! Supervised force training: O(3) augmentation, warmup-cosine schedule and
//! AdamW with gradient clipping.

pub mod augment;
pub mod config;
pub mod optim;
pub mod train;

pub use augment::{augment, transform_system};
pub use config::{TrainConfig, WARMUP_START_LR};
pub use optim::{cosine_warmup_lr, AdamW, StepInfo};
pub use train::{batch_loss_and_grads, force_mae, train, MetricRow, TrainReport};
