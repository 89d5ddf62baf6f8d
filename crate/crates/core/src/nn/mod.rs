//! Layers shared by the student and teacher networks.
//!
//! Blocks are plain descriptions (names and widths). They declare their
//! parameters as [`ParamSpec`]s and read them back from a [`ParamStore`]
//! at forward time, so the same block runs on `f32` weights for training
//! and on `f64` copies for gradient checks.

mod attention;
mod conv;
mod mobilevit;
mod params;
mod patch;

pub use attention::{MultiHeadAttention, TransformerLayer};
pub use conv::{channel_norm, ConvNormAct, InvertedResidual};
pub use mobilevit::{MobileVitBlock, MobileVitConfig};
pub use params::{InitKind, ParamSpec, ParamStore};
pub use patch::PatchEmbed;

pub(crate) use attention::{layer_norm, layer_norm_specs, linear, linear_specs};
