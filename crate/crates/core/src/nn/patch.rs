//! Patch embedding with a class token and learned positions.

use mvkd_tensor::{Element, Tensor, TensorError};

use super::attention::LINEAR_STD;
use super::params::{InitKind, ParamSpec, ParamStore};
use crate::error::{Error, Result};

/// Splits a `[B, C, H, W]` image into `P x P` patches, projects each
/// flattened patch (channel-major, then rows, then columns) to `dim`,
/// prepends a class token and adds a learned position embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchEmbed {
    pub name: String,
    pub in_channels: usize,
    pub patch: usize,
    pub dim: usize,
    pub grid: (usize, usize),
}

impl PatchEmbed {
    pub fn new(name: impl Into<String>, in_channels: usize, input: (usize, usize), patch: usize, dim: usize) -> Result<Self> {
        if patch == 0 || input.0 % patch != 0 || input.1 % patch != 0 {
            return Err(TensorError::PatchMismatch {
                height: input.0,
                width: input.1,
                patch,
            }
            .into());
        }
        if dim == 0 || in_channels == 0 {
            return Err(Error::InvalidConfig("patch embedding needs positive widths".into()));
        }
        Ok(PatchEmbed {
            name: name.into(),
            in_channels,
            patch,
            dim,
            grid: (input.0 / patch, input.1 / patch),
        })
    }

    pub fn num_patches(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    /// Patch tokens plus the class token.
    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        let n = self.name.as_str();
        let trunc = InitKind::TruncNormal { std: LINEAR_STD };
        let fan_in = self.in_channels * self.patch * self.patch;
        out.push(ParamSpec::new(format!("{n}.proj.weight"), &[self.dim, fan_in], trunc));
        out.push(ParamSpec::new(format!("{n}.proj.bias"), &[self.dim], InitKind::Zeros));
        out.push(ParamSpec::new(format!("{n}.cls_token"), &[1, 1, self.dim], trunc));
        out.push(ParamSpec::new(format!("{n}.pos_embed"), &[1, self.num_tokens(), self.dim], trunc));
    }

    /// `[B, C, H, W] -> [B, 1 + N, dim]`, class token first.
    pub fn forward<F: Element>(&self, p: &ParamStore<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let (hp, wp) = self.grid;
        let b = match *x.shape() {
            [b, c, h, w] if c == self.in_channels && h == hp * self.patch && w == wp * self.patch => b,
            [_, _, h, w] if h % self.patch != 0 || w % self.patch != 0 => {
                return Err(TensorError::PatchMismatch {
                    height: h,
                    width: w,
                    patch: self.patch,
                }
                .into())
            }
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "patch_embed",
                    detail: format!(
                        "expected [B, {}, {}, {}], got {:?}",
                        self.in_channels,
                        hp * self.patch,
                        wp * self.patch,
                        x.shape()
                    ),
                }
                .into())
            }
        };
        let n = self.name.as_str();
        let (c, pp) = (self.in_channels, self.patch);
        let patches = x
            .reshape(&[b, c, hp, pp, wp, pp])?
            .permute(&[0, 2, 4, 1, 3, 5])?
            .reshape(&[b, self.num_patches(), c * pp * pp])?;
        let tokens = patches.linear(p.get(&format!("{n}.proj.weight"))?, Some(p.get(&format!("{n}.proj.bias"))?))?;
        let cls = p.get(&format!("{n}.cls_token"))?.broadcast_to(&[b, 1, self.dim])?;
        let seq = Tensor::concat(&[cls, tokens], 1)?;
        Ok(seq.add(p.get(&format!("{n}.pos_embed"))?)?)
    }
}
