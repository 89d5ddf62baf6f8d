//! Named parameter storage and declarative parameter specs.

use indexmap::IndexMap;
use mvkd_tensor::{Element, Init, StreamRng, Tensor};

use crate::error::{Error, Result};

/// How a parameter is initialised.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitKind {
    Zeros,
    Ones,
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    HeNormal { fan_in: usize },
    /// Normal with the given standard deviation, truncated at two sigma.
    TruncNormal { std: f64 },
}

/// Declared name, shape and initialiser of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: InitKind,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: InitKind) -> Self {
        ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    fn create<F: Element>(&self, rng: &mut StreamRng) -> Result<Tensor<F>> {
        let init = match self.init {
            InitKind::Zeros => Init::Zeros,
            InitKind::Ones => Init::Ones,
            InitKind::HeNormal { fan_in } => Init::Normal {
                mean: 0.0,
                std: (2.0 / fan_in as f64).sqrt(),
                rng,
            },
            InitKind::TruncNormal { std } => Init::TruncatedNormal { mean: 0.0, std, rng },
        };
        Ok(Tensor::create(&self.shape, init)?)
    }
}

/// Ordered map from parameter path to a trainable tensor.
///
/// Insertion order is the declaration order of the owning model, which is
/// also the order used by checkpoints and the optimiser.
#[derive(Clone, Debug)]
pub struct ParamStore<F: Element> {
    params: IndexMap<String, Tensor<F>>,
}

impl<F: Element> Default for ParamStore<F> {
    fn default() -> Self {
        ParamStore { params: IndexMap::new() }
    }
}

impl<F: Element> ParamStore<F> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Create every spec in order, drawing stochastic initialisers from `rng`.
    pub fn initialise(specs: &[ParamSpec], rng: &mut StreamRng) -> Result<Self> {
        let mut store = ParamStore::new();
        for spec in specs {
            store.insert(&spec.name, spec.create(rng)?)?;
        }
        Ok(store)
    }

    /// Register a tensor as a trainable leaf. Duplicate paths are rejected.
    pub fn insert(&mut self, name: &str, tensor: Tensor<F>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::InvalidConfig(format!("parameter {name:?} registered twice")));
        }
        self.params.insert(name.to_string(), tensor.detach().requires_grad_leaf());
        Ok(())
    }

    /// Register `tensor` without detaching it, so gradients reach whatever
    /// produced it. Used to differentiate through a model's parameters.
    pub fn insert_attached(&mut self, name: &str, tensor: Tensor<F>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::InvalidConfig(format!("parameter {name:?} registered twice")));
        }
        self.params.insert(name.to_string(), tensor);
        Ok(())
    }

    /// Swap in new values for an existing parameter of the same shape.
    pub fn replace(&mut self, name: &str, tensor: Tensor<F>) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown parameter {name:?}")))?;
        if slot.shape() != tensor.shape() {
            return Err(mvkd_tensor::TensorError::ShapeMismatch {
                op: "replace",
                detail: format!("{name}: {:?} vs {:?}", slot.shape(), tensor.shape()),
            }
            .into());
        }
        *slot = tensor.detach().requires_grad_leaf();
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::InvalidConfig(format!("missing parameter {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<F>> {
        self.params.values()
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&self) {
        self.params.values().for_each(Tensor::zero_grad);
    }

    /// Same parameters in another element type.
    pub fn cast<G: Element>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast::<G>().requires_grad_leaf()))
                .collect(),
        }
    }

    /// Check that names, order and shapes match `specs` exactly.
    pub fn check_against(&self, specs: &[ParamSpec]) -> Result<()> {
        if self.params.len() != specs.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} parameters, found {}",
                specs.len(),
                self.params.len()
            )));
        }
        for (spec, (name, t)) in specs.iter().zip(&self.params) {
            if &spec.name != name || spec.shape != t.shape() {
                return Err(Error::InvalidConfig(format!(
                    "parameter {name:?} {:?} does not match declared {:?} {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mvkd_tensor::{Rng, Stream};

    #[test]
    fn duplicate_paths_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.insert("a", Tensor::zeros(&[2]).unwrap()).unwrap();
        assert!(s.insert("a", Tensor::zeros(&[2]).unwrap()).is_err());
    }

    #[test]
    fn initialise_follows_spec_order() {
        let specs = vec![
            ParamSpec::new("w", &[3, 4], InitKind::HeNormal { fan_in: 4 }),
            ParamSpec::new("b", &[3], InitKind::Zeros),
            ParamSpec::new("g", &[3], InitKind::Ones),
        ];
        let mut rng = Rng::new(1).stream(Stream::Init);
        let s = ParamStore::<f32>::initialise(&specs, &mut rng).unwrap();
        assert_eq!(s.names().collect::<Vec<_>>(), ["w", "b", "g"]);
        assert_eq!(s.param_count(), 18);
        assert!(s.get("g").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(s.tensors().all(Tensor::requires_grad));
        s.check_against(&specs).unwrap();
    }

    #[test]
    fn replace_keeps_shape() {
        let mut s = ParamStore::<f32>::new();
        s.insert("a", Tensor::zeros(&[2]).unwrap()).unwrap();
        assert!(s.replace("a", Tensor::zeros(&[3]).unwrap()).is_err());
        s.replace("a", Tensor::ones(&[2]).unwrap()).unwrap();
        assert_eq!(s.get("a").unwrap().data(), &[1.0, 1.0]);
    }
}
