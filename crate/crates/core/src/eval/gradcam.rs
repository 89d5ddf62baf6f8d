use std::path::Path;

use mvkd_tensor::{Element, Tensor, TensorError};
use serde::{Deserialize, Serialize};

use crate::data::{resize_bilinear, Image};
use crate::error::{Error, Result};
use crate::models::Model;

/// A classifier that can expose an intermediate spatial feature map.
pub trait FeatureSource<F: Element> {
    fn num_classes(&self) -> usize;

    /// Logits `[1, K]` and the feature map `[1, C, h, w]` named `layer`,
    /// both attached to the same graph.
    fn logits_and_features(&self, x: &Tensor<F>, layer: &str) -> Result<(Tensor<F>, Tensor<F>)>;
}

impl<F: Element> FeatureSource<F> for Model<F> {
    fn num_classes(&self) -> usize {
        Model::num_classes(self)
    }

    fn logits_and_features(&self, x: &Tensor<F>, layer: &str) -> Result<(Tensor<F>, Tensor<F>)> {
        self.forward_tap(x, layer)
    }
}

/// Relevance map at input resolution, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
    pub target_class: usize,
    pub layer: String,
    pub source: Option<String>,
}

impl Heatmap {
    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }

    pub fn argmax(&self) -> usize {
        crate::eval::argmax(&self.values)
    }
}

/// Gradient-weighted class activation map of `target_class` for a single
/// image `[1, C, H, W]`: channel weights are the spatial mean of
/// `d logit / d A`, the map is `ReLU(sum_k w_k A_k)`, upsampled bilinearly
/// to `H x W` and divided by its maximum.
pub fn grad_cam<F: Element>(
    model: &impl FeatureSource<F>,
    image: &Tensor<F>,
    target_class: usize,
    layer: &str,
) -> Result<Heatmap> {
    let shape = image.shape();
    if shape.len() != 4 || shape[0] != 1 {
        return Err(Error::Tensor(TensorError::ShapeMismatch {
            op: "grad_cam",
            detail: format!("expected a single image [1, C, H, W], got {shape:?}"),
        }));
    }
    let num_classes = model.num_classes();
    if target_class >= num_classes {
        return Err(Error::InvalidLabel { label: target_class, num_classes });
    }
    let (height, width) = (shape[2], shape[3]);
    let x = image.detach().requires_grad_leaf();
    let (logits, features) = model.logits_and_features(&x, layer)?;
    let fs = features.shape().to_vec();
    if fs.len() != 4 || fs[0] != 1 {
        return Err(Error::InvalidTarget(format!("layer {layer:?} is not a spatial map: shape {fs:?}")));
    }
    let (c, h, w) = (fs[1], fs[2], fs[3]);
    let score = logits.narrow(1, target_class, 1)?.sum_all();
    let grad = if score.requires_grad() {
        score.grad_of(&[&features])?.pop().flatten()
    } else {
        None
    };
    let hw = h * w;
    let mut map = vec![0.0f64; hw];
    if let Some(grad) = grad {
        let a = features.data();
        for k in 0..c {
            let plane = k * hw..(k + 1) * hw;
            let weight = grad[plane.clone()].iter().map(|g| g.as_f64()).sum::<f64>() / hw as f64;
            for (m, v) in map.iter_mut().zip(&a[plane]) {
                *m += weight * v.as_f64();
            }
        }
    }
    let coarse: Vec<f32> = map.iter().map(|&v| v.max(0.0) as f32).collect();
    let mut values = resize_bilinear(&coarse, 1, h, w, height, width);
    let peak = values.iter().copied().fold(0.0f32, f32::max);
    if peak > 0.0 {
        values.iter_mut().for_each(|v| *v = (*v / peak).clamp(0.0, 1.0));
    } else {
        values.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(Heatmap { height, width, values, target_class, layer: layer.to_string(), source: None })
}

/// Black through red and yellow to white; each channel is non-decreasing.
pub fn hot_colormap(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    [(3.0 * v).min(1.0), (3.0 * v - 1.0).clamp(0.0, 1.0), (3.0 * v - 2.0).clamp(0.0, 1.0)]
}

pub const OVERLAY_ALPHA: f32 = 0.5;

/// The original on the left; on the right, the colormapped heatmap blended
/// over the grayscale original.
pub fn overlay(heatmap: &Heatmap, image: &Image) -> Result<Image> {
    if heatmap.width != image.width || heatmap.height != image.height {
        return Err(Error::Tensor(TensorError::ShapeMismatch {
            op: "overlay",
            detail: format!(
                "heatmap is {}x{} but image is {}x{}",
                heatmap.height, heatmap.width, image.height, image.width
            ),
        }));
    }
    let (w, h) = (image.width, image.height);
    let gray = image.grayscale();
    let out_w = 2 * w;
    let mut data = vec![0.0; 3 * h * out_w];
    for c in 0..3 {
        let src = image.channel(c);
        let dst = &mut data[c * h * out_w..(c + 1) * h * out_w];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                dst[y * out_w + x] = src[i];
                let hot = hot_colormap(heatmap.values[i])[c];
                dst[y * out_w + w + x] = OVERLAY_ALPHA * hot + (1.0 - OVERLAY_ALPHA) * gray[i];
            }
        }
    }
    Image::new(out_w, h, data)
}

pub fn render_overlay(heatmap: &Heatmap, image: &Image, path: impl AsRef<Path>) -> Result<()> {
    overlay(heatmap, image)?.write_ppm(path)
}
