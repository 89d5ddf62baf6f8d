//! Image folders, preprocessing, stratified splits, synthetic data and
//! seeded batching.

mod dataset;
mod folder;
mod image;
mod manifest;
mod synth;

pub use dataset::{Batch, Batches, Dataset};
pub use folder::{load_image_folder, write_image_folder, ImageFolder, SUPPORTED_EXTENSIONS};
pub use image::{preprocess, resize_bilinear, Image, Normalization};
pub use manifest::{split_dataset, split_sizes, DatasetManifest, Entry, Split, DEFAULT_FRACTIONS};
pub use synth::{synth_fire_dataset, synth_image, Hardness, SynthConfig};
