//! Multi-head self-attention and the pre-norm transformer encoder layer.

use mvkd_tensor::{Activation, Element, Tensor};

use super::params::{InitKind, ParamSpec, ParamStore};
use crate::error::{Error, Result};

pub(crate) const LINEAR_STD: f64 = 0.02;
const LN_EPS: f64 = 1e-5;

pub(crate) fn linear_specs(name: &str, input: usize, output: usize, out: &mut Vec<ParamSpec>) {
    out.push(ParamSpec::new(format!("{name}.weight"), &[output, input], InitKind::TruncNormal { std: LINEAR_STD }));
    out.push(ParamSpec::new(format!("{name}.bias"), &[output], InitKind::Zeros));
}

pub(crate) fn linear<F: Element>(p: &ParamStore<F>, name: &str, x: &Tensor<F>) -> Result<Tensor<F>> {
    let w = p.get(&format!("{name}.weight"))?;
    let b = p.get(&format!("{name}.bias"))?;
    Ok(x.linear(w, Some(b))?)
}

pub(crate) fn layer_norm_specs(name: &str, dim: usize, out: &mut Vec<ParamSpec>) {
    out.push(ParamSpec::new(format!("{name}.weight"), &[dim], InitKind::Ones));
    out.push(ParamSpec::new(format!("{name}.bias"), &[dim], InitKind::Zeros));
}

pub(crate) fn layer_norm<F: Element>(p: &ParamStore<F>, name: &str, x: &Tensor<F>) -> Result<Tensor<F>> {
    let g = p.get(&format!("{name}.weight"))?;
    let b = p.get(&format!("{name}.bias"))?;
    Ok(x.layer_norm(Some(g), Some(b), LN_EPS)?)
}

/// Scaled dot-product attention over `heads` heads with a fused `qkv`
/// projection (`[3d, d]`, rows ordered q, k, v) and an output projection.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadAttention {
    pub name: String,
    pub dim: usize,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(name: impl Into<String>, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim == 0 || dim % heads != 0 {
            return Err(Error::InvalidConfig(format!("{heads} heads do not divide embedding width {dim}")));
        }
        Ok(MultiHeadAttention {
            name: name.into(),
            dim,
            heads,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        linear_specs(&format!("{}.qkv", self.name), self.dim, 3 * self.dim, out);
        linear_specs(&format!("{}.out", self.name), self.dim, self.dim, out);
    }

    pub fn forward<F: Element>(&self, p: &ParamStore<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(self.forward_with_weights(p, x)?.0)
    }

    /// Output `[B, N, d]` and attention weights `[B, h, N, N]`.
    pub fn forward_with_weights<F: Element>(&self, p: &ParamStore<F>, x: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
        let (b, n) = match *x.shape() {
            [b, n, d] if d == self.dim => (b, n),
            _ => {
                return Err(mvkd_tensor::TensorError::ShapeMismatch {
                    op: "attention",
                    detail: format!("expected [B, N, {}], got {:?}", self.dim, x.shape()),
                }
                .into())
            }
        };
        let (h, dh) = (self.heads, self.head_dim());
        let qkv = linear(p, &format!("{}.qkv", self.name), x)?
            .reshape(&[b, n, 3, h, dh])?
            .permute(&[2, 0, 3, 1, 4])?;
        let part = |i: usize| -> Result<Tensor<F>> { Ok(qkv.narrow(0, i, 1)?.reshape(&[b, h, n, dh])?) };
        let (q, k, v) = (part(0)?, part(1)?, part(2)?);
        let scores = q.matmul(&k.transpose(-1, -2)?)?.mul_scalar(1.0 / (dh as f64).sqrt());
        let weights = scores.softmax(1.0)?;
        let context = weights.matmul(&v)?.permute(&[0, 2, 1, 3])?.reshape(&[b, n, self.dim])?;
        let out = linear(p, &format!("{}.out", self.name), &context)?;
        Ok((out, weights))
    }
}

/// `x + MHA(LN(x))`, then `h + MLP(LN(h))`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerLayer {
    pub name: String,
    pub dim: usize,
    pub mlp_dim: usize,
    pub act: Activation,
    pub attn: MultiHeadAttention,
}

impl TransformerLayer {
    pub fn new(name: impl Into<String>, dim: usize, heads: usize, mlp_dim: usize, act: Activation) -> Result<Self> {
        let name = name.into();
        if mlp_dim == 0 {
            return Err(Error::InvalidConfig("transformer MLP width must be positive".into()));
        }
        let attn = MultiHeadAttention::new(format!("{name}.attn"), dim, heads)?;
        Ok(TransformerLayer {
            name,
            dim,
            mlp_dim,
            act,
            attn,
        })
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        layer_norm_specs(&format!("{}.ln1", self.name), self.dim, out);
        self.attn.specs(out);
        layer_norm_specs(&format!("{}.ln2", self.name), self.dim, out);
        linear_specs(&format!("{}.fc1", self.name), self.dim, self.mlp_dim, out);
        linear_specs(&format!("{}.fc2", self.name), self.mlp_dim, self.dim, out);
    }

    pub fn forward<F: Element>(&self, p: &ParamStore<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let a = self.attn.forward(p, &layer_norm(p, &format!("{}.ln1", self.name), x)?)?;
        let h = x.add(&a)?;
        let m = layer_norm(p, &format!("{}.ln2", self.name), &h)?;
        let m = linear(p, &format!("{}.fc1", self.name), &m)?.activation(self.act);
        let m = linear(p, &format!("{}.fc2", self.name), &m)?;
        Ok(h.add(&m)?)
    }
}
