//! Architecture hyperparameters for the student and teacher families.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    StudentS,
    StudentXs,
    TeacherVit32,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::StudentS, ModelKind::StudentXs, ModelKind::TeacherVit32];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::StudentS => "student_s",
            ModelKind::StudentXs => "student_xs",
            ModelKind::TeacherVit32 => "teacher_vit32",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnsupportedModel(s.to_string()))
    }

    pub fn is_student(self) -> bool {
        !matches!(self, ModelKind::TeacherVit32)
    }
}

/// One MobileViT stage: a strided inverted residual into `channels`,
/// followed by a MobileViT block of the given width and depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitStage {
    pub channels: usize,
    pub dim: usize,
    pub mlp_dim: usize,
    pub depth: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentArch {
    pub stem_channels: usize,
    pub expansion: usize,
    pub layer1_channels: usize,
    pub layer2_channels: usize,
    pub layer2_blocks: usize,
    pub vit_stages: Vec<VitStage>,
    pub exp_channels: usize,
    pub heads: usize,
    pub patch: usize,
    pub local_kernel: usize,
    pub fusion_kernel: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherArch {
    pub patch: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Student(StudentArch),
    Teacher(TeacherArch),
}

/// Complete description of a classifier: family, head size, input
/// resolution, the width multiplier it was derived with, and the resolved
/// per-stage widths and depths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub num_classes: usize,
    /// `(height, width)`.
    pub input_size: (usize, usize),
    pub scale: f64,
    pub arch: Arch,
}

/// Scale a width and round to a multiple of 4 (at least 4).
pub fn scale_width(width: usize, scale: f64) -> usize {
    let w = (width as f64 * scale / 4.0).round() as usize * 4;
    w.max(4)
}

impl ModelConfig {
    /// Reference widths scaled by `scale`. Students keep their reference
    /// depths; the teacher uses 12 layers at `scale >= 1` and 4 below.
    pub fn new(kind: ModelKind, num_classes: usize, input_size: (usize, usize), scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidConfig(format!("scale must be positive, got {scale}")));
        }
        let s = |w| scale_width(w, scale);
        let arch = match kind {
            ModelKind::StudentS | ModelKind::StudentXs => {
                let (widths, dims, exp) = if kind == ModelKind::StudentS {
                    ([16, 32, 64, 96, 128, 160], [144, 192, 240], 640)
                } else {
                    ([16, 32, 48, 64, 80, 96], [96, 120, 144], 384)
                };
                let depths = [2, 4, 3];
                Arch::Student(StudentArch {
                    stem_channels: s(widths[0]),
                    expansion: 4,
                    layer1_channels: s(widths[1]),
                    layer2_channels: s(widths[2]),
                    layer2_blocks: 3,
                    vit_stages: (0..3)
                        .map(|i| VitStage {
                            channels: s(widths[3 + i]),
                            dim: s(dims[i]),
                            mlp_dim: s(2 * dims[i]),
                            depth: depths[i],
                        })
                        .collect(),
                    exp_channels: s(exp),
                    heads: 4,
                    patch: 2,
                    local_kernel: 3,
                    fusion_kernel: 3,
                })
            }
            ModelKind::TeacherVit32 => {
                let heads = ((12.0 * scale).round() as usize).max(1);
                let dim = ((768.0 * scale / heads as f64).round() as usize).max(4) * heads;
                Arch::Teacher(TeacherArch {
                    patch: 32,
                    dim,
                    depth: if scale >= 1.0 { 12 } else { 4 },
                    heads,
                    mlp_dim: 4 * dim,
                })
            }
        };
        let cfg = ModelConfig {
            kind,
            num_classes,
            input_size,
            scale,
            arch,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn student_s(num_classes: usize, input_size: (usize, usize), scale: f64) -> Result<Self> {
        Self::new(ModelKind::StudentS, num_classes, input_size, scale)
    }

    pub fn student_xs(num_classes: usize, input_size: (usize, usize), scale: f64) -> Result<Self> {
        Self::new(ModelKind::StudentXs, num_classes, input_size, scale)
    }

    pub fn teacher_vit32(num_classes: usize, input_size: (usize, usize), scale: f64) -> Result<Self> {
        Self::new(ModelKind::TeacherVit32, num_classes, input_size, scale)
    }

    pub fn student(&self) -> Option<&StudentArch> {
        match &self.arch {
            Arch::Student(a) => Some(a),
            Arch::Teacher(_) => None,
        }
    }

    pub fn teacher(&self) -> Option<&TeacherArch> {
        match &self.arch {
            Arch::Teacher(a) => Some(a),
            Arch::Student(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        let (h, w) = self.input_size;
        if h == 0 || w == 0 {
            return bad("input size must be positive".into());
        }
        match (&self.arch, self.kind.is_student()) {
            (Arch::Student(a), true) => {
                let widths = [a.stem_channels, a.layer1_channels, a.layer2_channels, a.exp_channels, a.expansion, a.heads];
                if widths.contains(&0) || a.layer2_blocks == 0 || a.patch == 0 {
                    return bad("student widths, expansion, heads and patch must be positive".into());
                }
                if a.vit_stages.len() != 3 {
                    return bad(format!("student needs 3 MobileViT stages, got {}", a.vit_stages.len()));
                }
                if a.local_kernel % 2 == 0 || a.fusion_kernel % 2 == 0 {
                    return bad("MobileViT kernels must be odd".into());
                }
                // Five stride-2 stages: stem, layer2 and the three MobileViT stages.
                let mut side = (h, w);
                for stage in 0..5 {
                    if side.0 % 2 != 0 || side.1 % 2 != 0 {
                        return bad(format!("input {h}x{w} cannot be halved five times (stage {stage})"));
                    }
                    side = (side.0 / 2, side.1 / 2);
                    if stage >= 2 && (side.0 % a.patch != 0 || side.1 % a.patch != 0) {
                        return bad(format!(
                            "input {h}x{w}: feature map {}x{} not divisible by patch {}",
                            side.0, side.1, a.patch
                        ));
                    }
                }
                for v in &a.vit_stages {
                    if v.channels == 0 || v.dim == 0 || v.mlp_dim == 0 || v.dim % a.heads != 0 {
                        return bad(format!("invalid MobileViT stage {v:?} with {} heads", a.heads));
                    }
                }
            }
            (Arch::Teacher(a), false) => {
                if a.patch == 0 || h % a.patch != 0 || w % a.patch != 0 {
                    return bad(format!("input {h}x{w} not divisible by patch {}", a.patch));
                }
                if a.heads == 0 || a.dim == 0 || a.dim % a.heads != 0 || a.mlp_dim == 0 {
                    return bad(format!("invalid teacher widths {a:?}"));
                }
            }
            _ => return bad(format!("architecture does not match kind {}", self.kind.as_str())),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_widths_at_unit_scale() {
        let s = ModelConfig::student_s(12, (256, 256), 1.0).unwrap();
        let a = s.student().unwrap();
        assert_eq!(a.vit_stages.iter().map(|v| v.dim).collect::<Vec<_>>(), [144, 192, 240]);
        assert_eq!(a.exp_channels, 640);
        let t = ModelConfig::teacher_vit32(12, (224, 224), 1.0).unwrap();
        assert_eq!(t.teacher().unwrap(), &TeacherArch { patch: 32, dim: 768, depth: 12, heads: 12, mlp_dim: 3072 });
    }

    #[test]
    fn student_rejects_odd_final_map() {
        // 224 -> 7 at the last stage, which a 2x2 patch cannot tile.
        assert!(matches!(ModelConfig::student_s(2, (224, 224), 1.0), Err(Error::InvalidConfig(_))));
        assert!(ModelConfig::student_s(2, (64, 64), 0.25).is_ok());
    }

    #[test]
    fn teacher_rejects_indivisible_input() {
        assert!(matches!(ModelConfig::teacher_vit32(2, (100, 100), 0.25), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn kind_strings_roundtrip() {
        for k in ModelKind::ALL {
            assert_eq!(ModelKind::parse(k.as_str()).unwrap(), k);
            assert_eq!(serde_json::to_value(k).unwrap(), k.as_str());
        }
        assert!(matches!(ModelKind::parse("convnext"), Err(Error::UnsupportedModel(_))));
    }

    #[test]
    fn single_class_rejected() {
        assert!(ModelConfig::student_xs(1, (64, 64), 0.25).is_err());
    }
}
