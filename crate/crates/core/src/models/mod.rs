//! Student (MobileViT-S/XS) and teacher (ViT, 32-pixel patches)
//! classifiers and their checkpoint format.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, read_checkpoint_header, save_checkpoint, CheckpointHeader, CheckpointMeta, EpochRecord, TensorEntry,
    FORMAT_VERSION, MAGIC,
};
pub use config::{scale_width, Arch, ModelConfig, ModelKind, StudentArch, TeacherArch, VitStage};
pub use network::{build_model, param_specs, Model, DEFAULT_CAM_LAYER, STUDENT_TAPS};
