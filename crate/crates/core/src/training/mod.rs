//! Synthetic data, augmentation, optimizer and the pretraining loop.

pub mod augment;
pub mod config;
pub mod optim;
pub mod pretrain;
pub mod synth;

pub use augment::{augment, AugmentConfig, AugmentParams};
pub use config::TrainConfig;
pub use optim::{optimizer_step, AdamW};
pub use pretrain::{pretrain, read_metrics, PretrainReport, StepMetrics};
pub use synth::{synth_dataset, SynthSpec};
