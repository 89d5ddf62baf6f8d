//! Convolutional building blocks.

use mvkd_tensor::{Activation, Element, Tensor};

use super::params::{InitKind, ParamSpec, ParamStore};
use crate::error::{Error, Result};

const NORM_EPS: f64 = 1e-5;

const NORM_GROUPS: usize = 4;

/// Group normalisation with as many groups as the largest divisor of `C` not
/// above 4, then a per-channel scale and shift. Statistics never
/// cross the batch axis, so a sample's output does not depend on its batch
/// mates.
pub fn channel_norm<F: Element>(x: &Tensor<F>, gamma: &Tensor<F>, beta: &Tensor<F>) -> Result<Tensor<F>> {
    let c = x.shape()[1];
    let groups = (1..=NORM_GROUPS.min(c)).rev().find(|g| c % g == 0).unwrap_or(1);
    Ok(x.group_norm(groups, gamma, beta, NORM_EPS)?)
}

/// `conv -> [norm] -> [activation]`, padding `kernel / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvNormAct {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub groups: usize,
    pub norm: bool,
    pub bias: bool,
    pub act: Option<Activation>,
}

impl ConvNormAct {
    /// Normalised, activated, bias-free convolution.
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, kernel: usize, stride: usize, act: Option<Activation>) -> Self {
        ConvNormAct {
            name: name.into(),
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride,
            groups: 1,
            norm: true,
            bias: false,
            act,
        }
    }

    pub fn depthwise(mut self) -> Self {
        self.groups = self.in_channels;
        self
    }

    /// Plain convolution: no norm, no activation, no bias.
    pub fn plain(mut self) -> Self {
        self.norm = false;
        self.act = None;
        self
    }

    pub fn weight_name(&self) -> String {
        format!("{}.conv.weight", self.name)
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        let cin_g = self.in_channels / self.groups;
        out.push(ParamSpec::new(
            self.weight_name(),
            &[self.out_channels, cin_g, self.kernel, self.kernel],
            InitKind::HeNormal {
                fan_in: cin_g * self.kernel * self.kernel,
            },
        ));
        if self.bias {
            out.push(ParamSpec::new(format!("{}.conv.bias", self.name), &[self.out_channels], InitKind::Zeros));
        }
        if self.norm {
            out.push(ParamSpec::new(format!("{}.norm.weight", self.name), &[self.out_channels], InitKind::Ones));
            out.push(ParamSpec::new(format!("{}.norm.bias", self.name), &[self.out_channels], InitKind::Zeros));
        }
    }

    pub fn forward<F: Element>(&self, p: &ParamStore<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let bias = if self.bias {
            Some(p.get(&format!("{}.conv.bias", self.name))?)
        } else {
            None
        };
        let mut y = x.conv2d(p.get(&self.weight_name())?, bias, self.stride, self.kernel / 2, self.groups)?;
        if self.norm {
            let g = p.get(&format!("{}.norm.weight", self.name))?;
            let b = p.get(&format!("{}.norm.bias", self.name))?;
            y = channel_norm(&y, g, b)?;
        }
        if let Some(act) = self.act {
            y = y.activation(act);
        }
        Ok(y)
    }
}

/// Inverted residual: 1x1 expand, 3x3 depthwise (strided), 1x1 linear
/// projection, with an identity skip when shapes allow.
#[derive(Clone, Debug, PartialEq)]
pub struct InvertedResidual {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub expansion: usize,
    expand: Option<ConvNormAct>,
    depthwise: ConvNormAct,
    project: ConvNormAct,
}

impl InvertedResidual {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, stride: usize, expansion: usize) -> Result<Self> {
        if !(stride == 1 || stride == 2) {
            return Err(Error::InvalidConfig(format!("inverted residual stride must be 1 or 2, got {stride}")));
        }
        if expansion == 0 || cin == 0 || cout == 0 {
            return Err(Error::InvalidConfig("inverted residual needs positive widths".into()));
        }
        let name = name.into();
        let hidden = cin * expansion;
        let expand = (expansion != 1).then(|| ConvNormAct::new(format!("{name}.expand"), cin, hidden, 1, 1, Some(Activation::Silu)));
        let depthwise = ConvNormAct::new(format!("{name}.dw"), hidden, hidden, 3, stride, Some(Activation::Silu)).depthwise();
        let project = ConvNormAct::new(format!("{name}.project"), hidden, cout, 1, 1, None);
        Ok(InvertedResidual {
            name,
            in_channels: cin,
            out_channels: cout,
            stride,
            expansion,
            expand,
            depthwise,
            project,
        })
    }

    pub fn has_residual(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvNormAct> {
        self.expand.iter().chain([&self.depthwise, &self.project])
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.layers().for_each(|l| l.specs(out));
    }

    pub fn forward<F: Element>(&self, p: &ParamStore<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut h = x.clone();
        for layer in self.layers() {
            h = layer.forward(p, &h)?;
        }
        if self.has_residual() {
            h = h.add(x)?;
        }
        Ok(h)
    }
}
