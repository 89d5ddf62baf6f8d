//! Procedural fire-scene images.
//!
//! Every image is drawn from its own stream keyed by `(seed, class, index)`,
//! so any single sample can be regenerated without the others.

use std::f32::consts::TAU;

use mvkd_tensor::{Rng, Stream, StreamRng};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::image::resize_bilinear;
use super::manifest::DatasetManifest;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hardness {
    Easy,
    Hard,
}

impl Hardness {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Hardness::Easy),
            "hard" => Ok(Hardness::Hard),
            _ => Err(Error::InvalidParameter(format!("unknown hardness {s:?}; expected easy or hard"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_per_class: usize,
    /// 2 (fire / non-fire) or 12 (blob-layout archetypes).
    pub num_classes: usize,
    pub hardness: Hardness,
    pub image_size: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_per_class < 3 {
            return Err(Error::InvalidParameter(format!(
                "num_per_class must be at least 3, got {}",
                self.num_per_class
            )));
        }
        if self.num_classes != 2 && self.num_classes != 12 {
            return Err(Error::InvalidParameter(format!("num_classes must be 2 or 12, got {}", self.num_classes)));
        }
        if self.image_size < 8 {
            return Err(Error::InvalidParameter(format!("image_size must be at least 8, got {}", self.image_size)));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        if self.num_classes == 2 {
            vec!["fire".into(), "non_fire".into()]
        } else {
            (0..self.num_classes).map(|k| format!("layout_{k:02}")).collect()
        }
    }
}

/// `num_per_class` images per class, entries ordered by class then index,
/// all in the train split.
pub fn synth_fire_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let s = cfg.image_size;
    let mut pixels = Vec::with_capacity(cfg.num_classes * cfg.num_per_class * 3 * s * s);
    let mut samples = Vec::with_capacity(cfg.num_classes * cfg.num_per_class);
    for class in 0..cfg.num_classes {
        for index in 0..cfg.num_per_class {
            pixels.extend(synth_image(cfg, class, index));
            samples.push((format!("synth/{class}/{index:05}"), class));
        }
    }
    let mut manifest = DatasetManifest::unsplit(cfg.class_names(), samples);
    manifest.seed = cfg.seed;
    Dataset::new(manifest, s, pixels)
}

/// Planar `[3, S, S]` values of one sample.
pub fn synth_image(cfg: &SynthConfig, class: usize, index: usize) -> Vec<f32> {
    let mut rng = Rng::new(cfg.seed).substream(Stream::Data, &[class as u64, index as u64]);
    let mut canvas = Canvas::background(cfg.image_size, &mut rng);
    if cfg.num_classes == 2 {
        let fire = class == 0;
        match (fire, cfg.hardness) {
            (true, Hardness::Easy) => canvas.fire_cluster(&mut rng, 3..=6, (0.5, 1.0), 0.5),
            (true, Hardness::Hard) => canvas.fire_cluster(&mut rng, 2..=5, (0.4, 0.9), 0.5),
            (false, Hardness::Easy) => {}
            (false, Hardness::Hard) => canvas.warm_disk(&mut rng, (0.4, 0.9)),
        }
        if cfg.hardness == Hardness::Hard {
            canvas.add_noise(&mut rng, 0.04);
        }
    } else {
        canvas.layout(&mut rng, class, cfg.hardness);
    }
    canvas.finish()
}

fn uniform(rng: &mut StreamRng, low: f32, high: f32) -> f32 {
    rng.uniform_range(low as f64, high as f64) as f32
}

struct Canvas {
    size: usize,
    data: Vec<f32>,
}

impl Canvas {
    /// Dark, slightly tinted background with low-frequency texture and
    /// per-pixel noise.
    fn background(size: usize, rng: &mut StreamRng) -> Self {
        let base = uniform(rng, 0.06, 0.24);
        let tint: Vec<f32> = (0..3).map(|_| uniform(rng, -0.03, 0.03)).collect();
        const GRID: usize = 5;
        let coarse: Vec<f32> = (0..GRID * GRID).map(|_| 0.06 * rng.normal() as f32).collect();
        let texture = resize_bilinear(&coarse, 1, GRID, GRID, size, size);
        let hw = size * size;
        let mut data = vec![0.0; 3 * hw];
        for c in 0..3 {
            for i in 0..hw {
                data[c * hw + i] = base + tint[c] + texture[i] + 0.02 * rng.normal() as f32;
            }
        }
        Canvas { size, data }
    }

    fn add_rgb(&mut self, i: usize, rgb: [f32; 3]) {
        let hw = self.size * self.size;
        for (c, v) in rgb.into_iter().enumerate() {
            self.data[c * hw + i] += v;
        }
    }

    /// Warm colour with R > G > B, scaled by `intensity`.
    fn warm(rng: &mut StreamRng) -> [f32; 3] {
        [1.0, uniform(rng, 0.35, 0.7), uniform(rng, 0.02, 0.15)]
    }

    /// Additive cluster of Gaussian blobs with flickering intensity.
    fn fire_cluster(&mut self, rng: &mut StreamRng, count: std::ops::RangeInclusive<u64>, amp: (f32, f32), flicker: f32) {
        let s = self.size as f32;
        let cx = uniform(rng, 0.25, 0.75) * s;
        let cy = uniform(rng, 0.25, 0.75) * s;
        let n = count.start() + rng.below(count.end() - count.start() + 1);
        let blobs: Vec<(f32, f32, f32, f32)> = (0..n)
            .map(|_| {
                let x = cx + 0.08 * s * rng.normal() as f32;
                let y = cy + 0.08 * s * rng.normal() as f32;
                let sigma = uniform(rng, 0.04, 0.12) * s;
                (x, y, sigma, uniform(rng, amp.0, amp.1))
            })
            .collect();
        self.blobs(rng, &blobs, flicker);
    }

    fn blobs(&mut self, rng: &mut StreamRng, blobs: &[(f32, f32, f32, f32)], flicker: f32) {
        let colour = Self::warm(rng);
        let n = self.size;
        for py in 0..n {
            for px in 0..n {
                let (x, y) = (px as f32 + 0.5, py as f32 + 0.5);
                let mut intensity = 0.0;
                for &(bx, by, sigma, a) in blobs {
                    let d2 = (x - bx).powi(2) + (y - by).powi(2);
                    intensity += a * (-d2 / (2.0 * sigma * sigma)).exp();
                }
                if intensity < 1e-4 {
                    continue;
                }
                let jitter = (1.0 + flicker * rng.normal() as f32).max(0.0);
                let i = intensity * jitter;
                self.add_rgb(py * n + px, colour.map(|c| c * i));
            }
        }
    }

    /// Sharp-edged disk in a warm hue: the sunset / red-object distractor.
    fn warm_disk(&mut self, rng: &mut StreamRng, amp: (f32, f32)) {
        let s = self.size as f32;
        let cx = uniform(rng, 0.2, 0.8) * s;
        let cy = uniform(rng, 0.2, 0.8) * s;
        let r = uniform(rng, 0.08, 0.2) * s;
        let a = uniform(rng, amp.0, amp.1);
        let colour = Self::warm(rng).map(|c| c * a);
        let n = self.size;
        for py in 0..n {
            for px in 0..n {
                let (x, y) = (px as f32 + 0.5, py as f32 + 0.5);
                if (x - cx).powi(2) + (y - cy).powi(2) <= r * r {
                    self.add_rgb(py * n + px, colour);
                }
            }
        }
    }

    /// Class archetypes for the 12-class mode: 1 to 4 blobs arranged in a
    /// row, a column or a ring.
    fn layout(&mut self, rng: &mut StreamRng, class: usize, hardness: Hardness) {
        let count = 1 + class % 4;
        let arrangement = class / 4;
        let s = self.size as f32;
        let jitter = if hardness == Hardness::Hard { 0.06 } else { 0.03 };
        let cx = (0.5 + uniform(rng, -0.1, 0.1)) * s;
        let cy = (0.5 + uniform(rng, -0.1, 0.1)) * s;
        let spacing = 0.2 * s;
        let blobs: Vec<(f32, f32, f32, f32)> = (0..count)
            .map(|k| {
                let offset = k as f32 - (count as f32 - 1.0) / 2.0;
                let (dx, dy) = match arrangement {
                    0 => (offset * spacing, 0.0),
                    1 => (0.0, offset * spacing),
                    _ => {
                        let angle = TAU * k as f32 / count as f32;
                        let radius = if count == 1 { 0.0 } else { 0.18 * s };
                        (radius * angle.cos(), radius * angle.sin())
                    }
                };
                let x = cx + dx + jitter * s * rng.normal() as f32;
                let y = cy + dy + jitter * s * rng.normal() as f32;
                (x, y, uniform(rng, 0.04, 0.07) * s, uniform(rng, 0.5, 1.0))
            })
            .collect();
        self.blobs(rng, &blobs, 0.3);
        if hardness == Hardness::Hard {
            self.add_noise(rng, 0.04);
        }
    }

    fn add_noise(&mut self, rng: &mut StreamRng, std: f32) {
        self.data.iter_mut().for_each(|v| *v += std * rng.normal() as f32);
    }

    fn finish(mut self) -> Vec<f32> {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self.data
    }
}
