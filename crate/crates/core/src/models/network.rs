//! Student and teacher networks and the [`Model`] wrapper.

use mvkd_tensor::{Activation, Element, StreamRng, Tensor, TensorError};

use super::config::{ModelConfig, StudentArch, TeacherArch};
use crate::error::{Error, Result};
use crate::nn::{
    layer_norm, layer_norm_specs, linear, linear_specs, ConvNormAct, InvertedResidual, MobileVitBlock, MobileVitConfig,
    ParamSpec, ParamStore, PatchEmbed, TransformerLayer,
};

/// Feature map the student exposes for Grad-CAM by default: the output of
/// the last fusion convolution.
pub const DEFAULT_CAM_LAYER: &str = "layer5";

/// Named spatial feature maps of the student, in forward order.
pub const STUDENT_TAPS: [&str; 7] = ["stem", "layer1", "layer2", "layer3", "layer4", "layer5", "conv_exp"];

#[derive(Clone, Debug)]
enum Stage {
    Conv(ConvNormAct),
    Residual(InvertedResidual),
    Vit(MobileVitBlock),
}

impl Stage {
    fn specs(&self, out: &mut Vec<ParamSpec>) {
        match self {
            Stage::Conv(b) => b.specs(out),
            Stage::Residual(b) => b.specs(out),
            Stage::Vit(b) => b.specs(out),
        }
    }

    fn forward<F: Element>(&self, p: &ParamStore<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        match self {
            Stage::Conv(b) => b.forward(p, x),
            Stage::Residual(b) => b.forward(p, x),
            Stage::Vit(b) => b.forward(p, x),
        }
    }
}

/// Conv stem, inverted-residual stages, three MobileViT stages, 1x1
/// expansion conv, global average pooling and a linear classifier.
#[derive(Clone, Debug)]
struct Student {
    /// `(tap name, blocks)` in forward order.
    groups: Vec<(&'static str, Vec<Stage>)>,
    head_in: usize,
    num_classes: usize,
}

impl Student {
    fn new(a: &StudentArch, num_classes: usize) -> Result<Self> {
        let silu = Some(Activation::Silu);
        let mv2 = |name: String, cin, cout, stride| InvertedResidual::new(name, cin, cout, stride, a.expansion).map(Stage::Residual);
        let mut groups = vec![
            ("stem", vec![Stage::Conv(ConvNormAct::new("stem", 3, a.stem_channels, 3, 2, silu))]),
            ("layer1", vec![mv2("layer1.0".into(), a.stem_channels, a.layer1_channels, 1)?]),
        ];
        let mut layer2 = Vec::new();
        for i in 0..a.layer2_blocks {
            let (cin, stride) = if i == 0 { (a.layer1_channels, 2) } else { (a.layer2_channels, 1) };
            layer2.push(mv2(format!("layer2.{i}"), cin, a.layer2_channels, stride)?);
        }
        groups.push(("layer2", layer2));
        let mut cin = a.layer2_channels;
        for (tap, v) in ["layer3", "layer4", "layer5"].into_iter().zip(&a.vit_stages) {
            let down = mv2(format!("{tap}.0"), cin, v.channels, 2)?;
            let block = MobileVitBlock::new(
                format!("{tap}.1"),
                MobileVitConfig {
                    channels: v.channels,
                    dim: v.dim,
                    mlp_dim: v.mlp_dim,
                    depth: v.depth,
                    heads: a.heads,
                    patch: a.patch,
                    local_kernel: a.local_kernel,
                    fusion_kernel: a.fusion_kernel,
                },
            )?;
            groups.push((tap, vec![down, Stage::Vit(block)]));
            cin = v.channels;
        }
        groups.push(("conv_exp", vec![Stage::Conv(ConvNormAct::new("conv_exp", cin, a.exp_channels, 1, 1, silu))]));
        Ok(Student {
            groups,
            head_in: a.exp_channels,
            num_classes,
        })
    }

    fn specs(&self, out: &mut Vec<ParamSpec>) {
        for (_, blocks) in &self.groups {
            blocks.iter().for_each(|b| b.specs(out));
        }
        linear_specs("head", self.head_in, self.num_classes, out);
    }

    fn forward<F: Element>(&self, p: &ParamStore<F>, x: &Tensor<F>, tap: Option<&str>) -> Result<(Tensor<F>, Option<Tensor<F>>)> {
        let mut h = x.clone();
        let mut tapped = None;
        for (name, blocks) in &self.groups {
            for b in blocks {
                h = b.forward(p, &h)?;
            }
            if tap == Some(*name) {
                tapped = Some(h.clone());
            }
        }
        let logits = linear(p, "head", &h.global_avg_pool()?)?;
        Ok((logits, tapped))
    }
}

/// Patch embedding, pre-norm encoder, final layer norm and a linear head
/// on the class token.
#[derive(Clone, Debug)]
struct Teacher {
    embed: PatchEmbed,
    layers: Vec<TransformerLayer>,
    dim: usize,
    num_classes: usize,
}

impl Teacher {
    fn new(a: &TeacherArch, input: (usize, usize), num_classes: usize) -> Result<Self> {
        let embed = PatchEmbed::new("embed", 3, input, a.patch, a.dim)?;
        let layers = (0..a.depth)
            .map(|i| TransformerLayer::new(format!("encoder.{i}"), a.dim, a.heads, a.mlp_dim, Activation::Gelu))
            .collect::<Result<Vec<_>>>()?;
        Ok(Teacher {
            embed,
            layers,
            dim: a.dim,
            num_classes,
        })
    }

    fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.embed.specs(out);
        self.layers.iter().for_each(|l| l.specs(out));
        layer_norm_specs("norm", self.dim, out);
        linear_specs("head", self.dim, self.num_classes, out);
    }

    fn forward<F: Element>(&self, p: &ParamStore<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut h = self.embed.forward(p, x)?;
        for layer in &self.layers {
            h = layer.forward(p, &h)?;
        }
        let b = h.shape()[0];
        let cls = h.narrow(1, 0, 1)?.reshape(&[b, self.dim])?;
        linear(p, "head", &layer_norm(p, "norm", &cls)?)
    }
}

#[derive(Clone, Debug)]
enum Network {
    Student(Student),
    Teacher(Teacher),
}

impl Network {
    fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        match (cfg.student(), cfg.teacher()) {
            (Some(a), _) => Ok(Network::Student(Student::new(a, cfg.num_classes)?)),
            (_, Some(a)) => Ok(Network::Teacher(Teacher::new(a, cfg.input_size, cfg.num_classes)?)),
            _ => unreachable!("validated config has an architecture"),
        }
    }

    fn specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        match self {
            Network::Student(s) => s.specs(&mut out),
            Network::Teacher(t) => t.specs(&mut out),
        }
        out
    }
}

/// A classifier: its configuration, layer layout and parameters.
#[derive(Clone, Debug)]
pub struct Model<F: Element = f32> {
    config: ModelConfig,
    network: Network,
    params: ParamStore<F>,
}

/// Build a model with freshly initialised parameters drawn from `rng` in
/// declaration order.
pub fn build_model(cfg: &ModelConfig, rng: &mut StreamRng) -> Result<Model<f32>> {
    let network = Network::new(cfg)?;
    let params = ParamStore::initialise(&network.specs(), rng)?;
    Ok(Model {
        config: cfg.clone(),
        network,
        params,
    })
}

/// Parameter layout of a config without allocating any parameters.
pub fn param_specs(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    Ok(Network::new(cfg)?.specs())
}

impl<F: Element> Model<F> {
    /// Wrap existing parameters; names, order and shapes must match `cfg`.
    pub fn from_params(cfg: &ModelConfig, params: ParamStore<F>) -> Result<Self> {
        let network = Network::new(cfg)?;
        params.check_against(&network.specs())?;
        Ok(Model {
            config: cfg.clone(),
            network,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<F> {
        self.params
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        self.network.specs()
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    pub fn cast<G: Element>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            network: self.network.clone(),
            params: self.params.cast(),
        }
    }

    fn check_input(&self, x: &Tensor<F>) -> Result<()> {
        let (h, w) = self.config.input_size;
        match *x.shape() {
            [b, 3, xh, xw] if b >= 1 && xh == h && xw == w => Ok(()),
            _ => Err(TensorError::ShapeMismatch {
                op: "forward",
                detail: format!("expected [B, 3, {h}, {w}], got {:?}", x.shape()),
            }
            .into()),
        }
    }

    /// Raw logits `[B, num_classes]`. Neither family has stochastic layers,
    /// so `train_mode` does not change the computation.
    pub fn forward(&self, x: &Tensor<F>, train_mode: bool) -> Result<Tensor<F>> {
        let _ = train_mode;
        self.check_input(x)?;
        match &self.network {
            Network::Student(s) => Ok(s.forward(&self.params, x, None)?.0),
            Network::Teacher(t) => t.forward(&self.params, x),
        }
    }

    /// Names of spatial feature maps usable with [`forward_tap`](Self::forward_tap).
    pub fn tap_names(&self) -> &'static [&'static str] {
        match self.network {
            Network::Student(_) => &STUDENT_TAPS,
            Network::Teacher(_) => &[],
        }
    }

    /// Logits together with the intermediate feature map `layer`.
    pub fn forward_tap(&self, x: &Tensor<F>, layer: &str) -> Result<(Tensor<F>, Tensor<F>)> {
        self.check_input(x)?;
        let Network::Student(s) = &self.network else {
            return Err(Error::InvalidTarget(format!(
                "{} has no spatial feature maps",
                self.config.kind.as_str()
            )));
        };
        if !STUDENT_TAPS.contains(&layer) {
            return Err(Error::InvalidTarget(format!("unknown layer {layer:?}; expected one of {STUDENT_TAPS:?}")));
        }
        let (logits, tapped) = s.forward(&self.params, x, Some(layer))?;
        Ok((logits, tapped.expect("tap name was validated")))
    }
}
