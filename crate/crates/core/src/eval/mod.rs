//! Classification metrics and Grad-CAM explanations.

mod gradcam;
mod metrics;
mod predict;

pub use gradcam::{grad_cam, hot_colormap, overlay, render_overlay, FeatureSource, Heatmap, OVERLAY_ALPHA};
pub use metrics::{confusion_matrix, metrics, ClassMetrics, ConfusionMatrix, MetricsReport};
pub use predict::{accuracy, argmax, predict};
