//! The [`Tensor`] type and the reverse-mode graph.
//!
//! A tensor is an immutable, reference-counted node. Operations on tensors
//! that require gradients record an [`Op`] holding their inputs and a
//! backward closure; [`Tensor::backward`] walks that graph in reverse
//! creation order. Node ids are allocated from a global counter, so an
//! op's output always has a larger id than each of its inputs and sorting
//! by id descending is a valid reverse topological order.

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::element::{DType, Element};
use crate::error::{Result, TensorError};
use crate::rng::StreamRng;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Run `f` without recording any operations on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(prev);
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Given the output gradient and which inputs need a gradient, returns one
/// gradient buffer per input (`None` where not needed).
pub(crate) type BackwardFn<F> = Box<dyn Fn(&[F], &[bool]) -> Vec<Option<Vec<F>>> + Send + Sync>;

pub(crate) struct Op<F: Element> {
    pub name: &'static str,
    pub inputs: Vec<Tensor<F>>,
    pub backward: BackwardFn<F>,
}

struct Node<F: Element> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<F>>,
    requires_grad: bool,
    retain_grad: AtomicBool,
    grad: Mutex<Option<Vec<F>>>,
    op: Option<Op<F>>,
}

/// Dense row-major N-dimensional array with optional gradient tracking.
pub struct Tensor<F: Element> {
    node: Arc<Node<F>>,
}

impl<F: Element> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor {
            node: Arc::clone(&self.node),
        }
    }
}

impl<F: Element> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.node.shape)
            .field("dtype", &F::DTYPE)
            .field("requires_grad", &self.node.requires_grad);
        if let Some(op) = &self.node.op {
            d.field("op", &op.name);
        }
        if self.numel() <= 16 {
            d.field("data", &self.node.data);
        }
        d.finish()
    }
}

/// Initialiser for [`Tensor::create`]. Stochastic variants draw from the
/// given stream in row-major order.
pub enum Init<'a> {
    Zeros,
    Ones,
    Constant(f64),
    Uniform {
        low: f64,
        high: f64,
        rng: &'a mut StreamRng,
    },
    Normal {
        mean: f64,
        std: f64,
        rng: &'a mut StreamRng,
    },
    /// Normal resampled until it lies within two standard deviations.
    TruncatedNormal {
        mean: f64,
        std: f64,
        rng: &'a mut StreamRng,
    },
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.contains(&0) {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: "every extent must be at least 1".into(),
        });
    }
    Ok(())
}

impl<F: Element> Tensor<F> {
    fn from_parts(shape: Vec<usize>, data: Arc<Vec<F>>, requires_grad: bool, op: Option<Op<F>>) -> Self {
        crate::heap::tune();
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                retain_grad: AtomicBool::new(false),
                grad: Mutex::new(None),
                op,
            }),
        }
    }

    /// Build a constant (leaf) tensor from a row-major buffer.
    pub fn from_vec(data: Vec<F>, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if numel_of(shape) != data.len() {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("buffer holds {} elements", data.len()),
            });
        }
        Ok(Self::from_parts(shape.to_vec(), Arc::new(data), false, None))
    }

    pub fn from_f64(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::from_vec(data.iter().map(|&v| F::of(v)).collect(), shape)
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_parts(vec![1], Arc::new(vec![F::of(v)]), false, None)
    }

    pub fn create(shape: &[usize], init: Init<'_>) -> Result<Self> {
        check_shape(shape)?;
        let n = numel_of(shape);
        let data: Vec<F> = match init {
            Init::Zeros => vec![F::zero(); n],
            Init::Ones => vec![F::one(); n],
            Init::Constant(c) => vec![F::of(c); n],
            Init::Uniform { low, high, rng } => {
                if !(low < high) {
                    return Err(TensorError::InvalidParameter(format!(
                        "uniform bounds require low < high, got [{low}, {high})"
                    )));
                }
                (0..n).map(|_| F::of(rng.uniform_range(low, high))).collect()
            }
            Init::Normal { mean, std, rng } => {
                if !(std >= 0.0) {
                    return Err(TensorError::InvalidParameter(format!("normal std must be >= 0, got {std}")));
                }
                (0..n).map(|_| F::of(mean + std * rng.normal())).collect()
            }
            Init::TruncatedNormal { mean, std, rng } => {
                if !(std >= 0.0) {
                    return Err(TensorError::InvalidParameter(format!("normal std must be >= 0, got {std}")));
                }
                (0..n)
                    .map(|_| loop {
                        let z = rng.normal();
                        if z.abs() <= 2.0 {
                            break F::of(mean + std * z);
                        }
                    })
                    .collect()
            }
        };
        Ok(Self::from_parts(shape.to_vec(), Arc::new(data), false, None))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::create(shape, Init::Zeros)
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::create(shape, Init::Ones)
    }

    /// Output of a recorded operation. The op is dropped when gradients are
    /// disabled or no input requires them.
    pub(crate) fn from_op(
        data: Arc<Vec<F>>,
        shape: Vec<usize>,
        name: &'static str,
        inputs: Vec<Tensor<F>>,
        backward: BackwardFn<F>,
    ) -> Self {
        let track = grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        let op = track.then(|| Op {
            name,
            inputs,
            backward,
        });
        Self::from_parts(shape, data, track, op)
    }

    /// Output of an operation that is not differentiable.
    pub(crate) fn untracked(data: Vec<F>, shape: Vec<usize>) -> Self {
        Self::from_parts(shape, Arc::new(data), false, None)
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<F>> {
        Arc::clone(&self.node.data)
    }

    /// Same buffer, new shape, no copy. Used by reshape.
    pub(crate) fn share_with_shape(&self, shape: Vec<usize>, name: &'static str) -> Self {
        Self::from_op(
            self.data_arc(),
            shape,
            name,
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        )
    }

    /// Leaf copy of this tensor that tracks gradients (a trainable parameter).
    pub fn requires_grad_leaf(&self) -> Self {
        Self::from_parts(self.shape().to_vec(), self.data_arc(), true, None)
    }

    /// Leaf copy cut from the graph.
    pub fn detach(&self) -> Self {
        Self::from_parts(self.shape().to_vec(), self.data_arc(), false, None)
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn dtype(&self) -> DType {
        F::DTYPE
    }

    pub fn data(&self) -> &[F] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.node.data.to_vec()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.node.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> F {
        assert_eq!(self.numel(), 1, "item() on a tensor of shape {:?}", self.shape());
        self.node.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.op.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.node.op.as_ref().map(|o| o.name)
    }

    /// Keep the gradient of this (non-leaf) tensor after backward.
    pub fn retain_grad(&self) {
        self.node.retain_grad.store(true, Ordering::Relaxed);
    }

    pub fn grad(&self) -> Option<Vec<F>> {
        self.node.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock poisoned") = None;
    }

    fn accumulate_grad(&self, g: &[F]) {
        let mut slot = self.node.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode differentiation from a scalar. Gradients accumulate into
    /// every reachable leaf that requires them (and into tensors flagged with
    /// [`retain_grad`](Self::retain_grad)); call `zero_grad` to reset.
    pub fn backward(&self) -> Result<()> {
        self.propagate(|node, g| {
            if node.is_leaf() || node.node.retain_grad.load(Ordering::Relaxed) {
                node.accumulate_grad(g);
            }
        })
    }

    /// Gradients of this scalar with respect to `wrt`, without writing to
    /// any tensor's `grad` slot. `None` where a target is unreachable.
    pub fn grad_of(&self, wrt: &[&Tensor<F>]) -> Result<Vec<Option<Vec<F>>>> {
        let mut found: Vec<Option<Vec<F>>> = vec![None; wrt.len()];
        self.propagate(|node, g| {
            for (slot, t) in found.iter_mut().zip(wrt) {
                if t.id() == node.id() {
                    *slot = Some(g.to_vec());
                }
            }
        })?;
        Ok(found)
    }

    /// Walk the graph in reverse, handing each node its total gradient.
    fn propagate(&self, mut visit: impl FnMut(&Tensor<F>, &[F])) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::InvalidBackward(format!(
                "loss must be a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(TensorError::InvalidBackward(
                "loss does not depend on any tensor that requires grad".into(),
            ));
        }

        let mut nodes: Vec<Tensor<F>> = Vec::new();
        let mut seen: HashMap<u64, ()> = HashMap::new();
        let mut stack = vec![self.clone()];
        seen.insert(self.id(), ());
        while let Some(t) = stack.pop() {
            if let Some(op) = &t.node.op {
                for inp in &op.inputs {
                    if inp.requires_grad() && seen.insert(inp.id(), ()).is_none() {
                        stack.push(inp.clone());
                    }
                }
            }
            nodes.push(t);
        }
        nodes.sort_unstable_by_key(|t| std::cmp::Reverse(t.id()));

        let mut grads: HashMap<u64, Vec<F>> = HashMap::new();
        grads.insert(self.id(), vec![F::one()]);
        for node in &nodes {
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            visit(node, &g);
            let Some(op) = &node.node.op else { continue };
            let needs: Vec<bool> = op.inputs.iter().map(|t| t.requires_grad()).collect();
            let input_grads = (op.backward)(&g, &needs);
            debug_assert_eq!(input_grads.len(), op.inputs.len(), "backward of {}", op.name);
            for ((inp, gi), need) in op.inputs.iter().zip(input_grads).zip(needs) {
                let Some(gi) = gi else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(gi.len(), inp.numel(), "grad size from {}", op.name);
                match grads.get_mut(&inp.id()) {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, &b)| *a += b),
                    None => {
                        grads.insert(inp.id(), gi);
                    }
                }
            }
        }
        Ok(())
    }

    /// Convert to another element type as a new constant leaf.
    pub fn cast<G: Element>(&self) -> Tensor<G> {
        Tensor::untracked(self.data().iter().map(|v| G::of(v.as_f64())).collect(), self.shape().to_vec())
    }
}

/// Row-major strides of a shape.
pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Resolve a possibly negative axis.
pub(crate) fn normalize_axis(axis: isize, rank: usize) -> Result<usize> {
    let r = rank as isize;
    let a = if axis < 0 { axis + r } else { axis };
    if a < 0 || a >= r {
        return Err(TensorError::InvalidAxis { axis, rank });
    }
    Ok(a as usize)
}
