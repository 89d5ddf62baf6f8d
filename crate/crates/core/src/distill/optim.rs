//! AdamW with decoupled weight decay.

use mvkd_tensor::{Element, Tensor, TensorError};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One AdamW update of `theta` in place, at step `t >= 1`:
/// `theta -= lr * wd * theta + lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adamw_step<F: Element>(theta: &mut [F], grad: &[F], m: &mut [f64], v: &mut [f64], hp: &AdamW, t: u64) -> Result<()> {
    if grad.len() != theta.len() || m.len() != theta.len() || v.len() != theta.len() {
        return Err(TensorError::ShapeMismatch {
            op: "adamw_step",
            detail: format!(
                "{} parameters, {} gradients, {}/{} moments",
                theta.len(),
                grad.len(),
                m.len(),
                v.len()
            ),
        }
        .into());
    }
    if t == 0 {
        return Err(Error::InvalidParameter("AdamW steps are counted from 1".into()));
    }
    let c1 = 1.0 - hp.beta1.powf(t as f64);
    let c2 = 1.0 - hp.beta2.powf(t as f64);
    for i in 0..theta.len() {
        let g = grad[i].as_f64();
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        let p = theta[i].as_f64();
        theta[i] = F::of(p - hp.lr * hp.weight_decay * p - hp.lr * m_hat / (v_hat.sqrt() + hp.eps));
    }
    Ok(())
}

/// First and second moments for every parameter of a store, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<F: Element>(params: &ParamStore<F>) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().map(|t| vec![0.0; t.numel()]).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Update every parameter from its accumulated gradient (missing
    /// gradients count as zero) and replace it with a fresh leaf.
    pub fn update<F: Element>(&mut self, params: &mut ParamStore<F>, hp: &AdamW) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adamw_step",
                detail: format!("optimiser tracks {} tensors, store has {}", self.m.len(), params.len()),
            }
            .into());
        }
        self.step += 1;
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for (k, name) in names.iter().enumerate() {
            let current = params.get(name)?;
            let grad = current.grad().unwrap_or_else(|| vec![F::zero(); current.numel()]);
            current.zero_grad();
            let mut theta = current.to_vec();
            adamw_step(&mut theta, &grad, &mut self.m[k], &mut self.v[k], hp, self.step)?;
            let shape = current.shape().to_vec();
            params.replace(name, Tensor::from_vec(theta, &shape)?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_closed_form() {
        let mut theta = [1.0f64];
        let (mut m, mut v) = ([0.0], [0.0]);
        adamw_step(&mut theta, &[1.0], &mut m, &mut v, &AdamW::new(1e-4, 1e-3), 1).unwrap();
        let expect = 1.0 - 1e-4 * (1.0 / (1.0 + 1e-8)) - 1e-4 * 1e-3 * 1.0;
        assert!((theta[0] - expect).abs() < 1e-15);
        assert!((theta[0] - 0.9998999).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let mut theta = [0.3f64, -2.0];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        for t in 1..=5 {
            adamw_step(&mut theta, &[0.0, 0.0], &mut m, &mut v, &AdamW::new(1e-2, 0.0), t).unwrap();
        }
        assert_eq!(theta, [0.3, -2.0]);
    }

    #[test]
    fn pure_decay_shrinks_geometrically() {
        let mut theta = [2.0f64];
        let (mut m, mut v) = ([0.0], [0.0]);
        let hp = AdamW::new(0.1, 0.5);
        for t in 1..=3 {
            adamw_step(&mut theta, &[0.0], &mut m, &mut v, &hp, t).unwrap();
        }
        assert!((theta[0] - 2.0 * 0.95f64.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn mismatched_lengths_and_step_zero() {
        let mut theta = [1.0f64, 2.0];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        let hp = AdamW::new(1e-3, 0.0);
        assert!(matches!(
            adamw_step(&mut theta, &[1.0], &mut m, &mut v, &hp, 1),
            Err(Error::Tensor(TensorError::ShapeMismatch { .. }))
        ));
        assert!(adamw_step(&mut theta, &[1.0, 1.0], &mut m, &mut v, &hp, 0).is_err());
    }
}
