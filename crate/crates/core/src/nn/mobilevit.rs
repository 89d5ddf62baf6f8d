//! Hybrid convolution/transformer block operating on unfolded patches.

use mvkd_tensor::{Activation, Element, Tensor, TensorError};

use super::attention::TransformerLayer;
use super::conv::ConvNormAct;
use super::params::{ParamSpec, ParamStore};
use crate::error::{Error, Result};

/// Width and depth of one [`MobileVitBlock`].
#[derive(Clone, Debug, PartialEq)]
pub struct MobileVitConfig {
    pub channels: usize,
    pub dim: usize,
    pub mlp_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub patch: usize,
    /// Kernel of the local representation conv (3 in the standard block).
    pub local_kernel: usize,
    /// Kernel of the fusion conv (3 in the standard block).
    pub fusion_kernel: usize,
}

/// Local conv, 1x1 projection to `dim`, unfold into `p x p` patches,
/// transformer layers across patches (one sequence per intra-patch pixel
/// position), fold, 1x1 projection back, concat with the input and fuse.
#[derive(Clone, Debug, PartialEq)]
pub struct MobileVitBlock {
    pub name: String,
    pub config: MobileVitConfig,
    local: ConvNormAct,
    proj_in: ConvNormAct,
    layers: Vec<TransformerLayer>,
    proj_out: ConvNormAct,
    fusion: ConvNormAct,
}

impl MobileVitBlock {
    pub fn new(name: impl Into<String>, config: MobileVitConfig) -> Result<Self> {
        let name = name.into();
        let c = &config;
        if c.patch == 0 || c.channels == 0 || c.local_kernel % 2 == 0 || c.fusion_kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!("invalid block config {c:?}")));
        }
        let silu = Some(Activation::Silu);
        let local = ConvNormAct::new(format!("{name}.local"), c.channels, c.channels, c.local_kernel, 1, silu);
        let proj_in = ConvNormAct::new(format!("{name}.proj_in"), c.channels, c.dim, 1, 1, None).plain();
        let layers = (0..c.depth)
            .map(|i| TransformerLayer::new(format!("{name}.transformer.{i}"), c.dim, c.heads, c.mlp_dim, Activation::Silu))
            .collect::<Result<Vec<_>>>()?;
        let proj_out = ConvNormAct::new(format!("{name}.proj_out"), c.dim, c.channels, 1, 1, silu);
        let fusion = ConvNormAct::new(format!("{name}.fusion"), 2 * c.channels, c.channels, c.fusion_kernel, 1, silu);
        Ok(MobileVitBlock {
            name,
            config,
            local,
            proj_in,
            layers,
            proj_out,
            fusion,
        })
    }

    pub fn transformer_layers(&self) -> &[TransformerLayer] {
        &self.layers
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.local.specs(out);
        self.proj_in.specs(out);
        self.layers.iter().for_each(|l| l.specs(out));
        self.proj_out.specs(out);
        self.fusion.specs(out);
    }

    pub fn forward<F: Element>(&self, p: &ParamStore<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let [b, _, h, w] = match *x.shape() {
            [b, c, h, w] if c == self.config.channels => [b, c, h, w],
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "mobilevit_block",
                    detail: format!("expected [B, {}, H, W], got {:?}", self.config.channels, x.shape()),
                }
                .into())
            }
        };
        let patch = self.config.patch;
        if h % patch != 0 || w % patch != 0 {
            return Err(TensorError::PatchMismatch { height: h, width: w, patch }.into());
        }
        let d = self.config.dim;
        let y = self.local.forward(p, x)?;
        let y = self.proj_in.forward(p, &y)?;
        // [B, N, P, d] -> [B*P, N, d]: one sequence over patches per pixel slot.
        let u = y.unfold_patches(patch)?;
        let (n, pp) = (u.shape()[1], u.shape()[2]);
        let mut t = u.permute(&[0, 2, 1, 3])?.reshape(&[b * pp, n, d])?;
        for layer in &self.layers {
            t = layer.forward(p, &t)?;
        }
        let y = t.reshape(&[b, pp, n, d])?.permute(&[0, 2, 1, 3])?.fold_patches(patch, h, w)?;
        let y = self.proj_out.forward(p, &y)?;
        let y = Tensor::concat(&[x.clone(), y], 1)?;
        self.fusion.forward(p, &y)
    }
}
