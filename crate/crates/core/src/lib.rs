//! Knowledge distillation from a ViT/32-style teacher into a MobileViT
//! student: layers, models, checkpoints, training, data, evaluation and
//! benchmarking.

mod error;
pub mod bench;
pub mod data;
pub mod distill;
pub mod eval;
pub mod models;
pub mod nn;

pub use error::{Error, Result};
