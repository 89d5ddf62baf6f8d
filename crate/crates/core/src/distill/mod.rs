//! Losses, optimiser, early stopping and the training phases.

mod config;
mod loss;
mod optim;
mod stopping;
mod train;

pub use config::DistillConfig;
pub use loss::{check_kd_params, cross_entropy, kd_total_loss, kl_divergence, softened_kl, PROBABILITY_TOLERANCE};
pub use optim::{adamw_step, AdamState, AdamW};
pub use stopping::{early_stopping_check, EarlyStopping, StopDecision};
pub use train::{distill_student, fit, train_baseline, train_teacher, Phase, TrainState};
