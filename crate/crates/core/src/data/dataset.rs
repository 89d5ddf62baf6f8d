//! In-memory preprocessed datasets and seeded mini-batching.

use mvkd_tensor::{Rng, Stream, Tensor};

use super::image::Image;
use super::manifest::{split_dataset, DatasetManifest, Split};
use crate::error::{Error, Result};

/// Every sample of a manifest, preprocessed to `[3, S, S]` and held in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    manifest: DatasetManifest,
    image_size: usize,
    pixels: Vec<f32>,
}

impl Dataset {
    /// `pixels` holds one `[3, S, S]` block per manifest entry, in order.
    pub fn new(manifest: DatasetManifest, image_size: usize, pixels: Vec<f32>) -> Result<Self> {
        let per = 3 * image_size * image_size;
        if pixels.len() != per * manifest.entries.len() {
            return Err(Error::InvalidDataset(format!(
                "{} values for {} images of {image_size}x{image_size}",
                pixels.len(),
                manifest.entries.len()
            )));
        }
        if let Some(e) = manifest.entries.iter().find(|e| e.label >= manifest.num_classes()) {
            return Err(Error::InvalidLabel {
                label: e.label,
                num_classes: manifest.num_classes(),
            });
        }
        Ok(Dataset {
            manifest,
            image_size,
            pixels,
        })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes()
    }

    pub fn len(&self) -> usize {
        self.manifest.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.entries.is_empty()
    }

    pub fn label(&self, i: usize) -> usize {
        self.manifest.entries[i].label
    }

    /// Planar `[3, S, S]` values of sample `i`.
    pub fn pixels(&self, i: usize) -> &[f32] {
        let per = 3 * self.image_size * self.image_size;
        &self.pixels[i * per..(i + 1) * per]
    }

    pub fn image(&self, i: usize) -> Image {
        Image {
            width: self.image_size,
            height: self.image_size,
            data: self.pixels(i).to_vec(),
        }
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.manifest.indices(split)
    }

    /// Same samples with split assignments from [`split_dataset`].
    pub fn split(&self, fractions: [f64; 3], seed: u64) -> Result<Dataset> {
        Ok(Dataset {
            manifest: split_dataset(&self.manifest, fractions, seed)?,
            image_size: self.image_size,
            pixels: self.pixels.clone(),
        })
    }

    /// Stack samples `ids` into `[b, 3, S, S]`.
    pub fn stack(&self, ids: &[usize]) -> Result<Tensor<f32>> {
        let s = self.image_size;
        let mut data = Vec::with_capacity(ids.len() * 3 * s * s);
        for &i in ids {
            data.extend_from_slice(self.pixels(i));
        }
        Ok(Tensor::from_vec(data, &[ids.len(), 3, s, s])?)
    }

    /// Mini-batches of `split` in a seeded per-epoch order; every sample
    /// appears exactly once and the last batch may be short.
    pub fn batches(&self, split: Split, batch_size: usize, seed: u64, epoch: u64) -> Result<Batches<'_>> {
        let mut order = self.split_ids(split, batch_size)?;
        Rng::new(seed).substream(Stream::Shuffle, &[epoch]).shuffle(&mut order);
        Ok(Batches::new(self, order, batch_size))
    }

    /// Mini-batches of `split` in entry order.
    pub fn batches_in_order(&self, split: Split, batch_size: usize) -> Result<Batches<'_>> {
        let order = self.split_ids(split, batch_size)?;
        Ok(Batches::new(self, order, batch_size))
    }

    fn split_ids(&self, split: Split, batch_size: usize) -> Result<Vec<usize>> {
        if batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be at least 1".into()));
        }
        let ids = self.indices(split);
        if ids.is_empty() {
            return Err(Error::EmptyDataset(format!("the {} split has no samples", split.as_str())));
        }
        Ok(ids)
    }
}

/// One mini-batch: stacked images, labels and the dataset positions used.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub ids: Vec<usize>,
}

pub struct Batches<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl<'a> Batches<'a> {
    fn new(data: &'a Dataset, order: Vec<usize>, batch_size: usize) -> Self {
        Batches {
            data,
            order,
            batch_size,
            next: 0,
        }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.order.len());
        let ids = self.order[self.next..end].to_vec();
        self.next = end;
        let labels = ids.iter().map(|&i| self.data.label(i)).collect();
        let images = self.data.stack(&ids).expect("stacked batch matches dataset geometry");
        Some(Batch { images, labels, ids })
    }
}
