//! Central finite-difference gradient checking.
//!
//! Used by test suites across the workspace; it only evaluates the function
//! forward and never touches the backward closures it is checking.

use crate::error::Result;
use crate::rng::StreamRng;
use crate::tensor::{no_grad, Tensor};

/// Denominator floor of the relative error: gradients smaller than this are
/// compared with an absolute tolerance of `floor * tolerance`.
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max over checked coordinates of `|analytic - numeric| / max(|a|, |n|, floor)`.
    pub max_rel_err: f64,
    /// `(input, element)` where the max was attained.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Which coordinates of each input to perturb.
pub enum Coverage<'a> {
    All,
    /// Up to `n` random coordinates per input.
    Sample(usize, &'a mut StreamRng),
}

/// Compare the analytic gradient of the scalar `f(inputs)` against central
/// differences with step `h`.
pub fn check_gradients<Func>(f: Func, inputs: &[Tensor<f64>], h: f64, coverage: Coverage<'_>) -> Result<GradCheckReport>
where
    Func: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|t| t.requires_grad_leaf()).collect();
    let loss = f(&leaves)?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut picks: Vec<Vec<usize>> = Vec::with_capacity(inputs.len());
    match coverage {
        Coverage::All => picks.extend(inputs.iter().map(|t| (0..t.numel()).collect())),
        Coverage::Sample(n, rng) => {
            for t in inputs {
                let mut idx = rng.permutation(t.numel());
                idx.truncate(n);
                idx.sort_unstable();
                picks.push(idx);
            }
        }
    }

    let eval = |which: usize, elem: usize, delta: f64| -> Result<f64> {
        no_grad(|| {
            let moved: Vec<Tensor<f64>> = inputs
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    if i == which {
                        let mut d = t.to_vec();
                        d[elem] += delta;
                        Tensor::from_vec(d, t.shape())
                    } else {
                        Ok(t.clone())
                    }
                })
                .collect::<Result<_>>()?;
            Ok(f(&moved)?.item())
        })
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for (which, elems) in picks.iter().enumerate() {
        for &elem in elems {
            let numeric = (eval(which, elem, h)? - eval(which, elem, -h)?) / (2.0 * h);
            let a = analytic[which][elem];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (which, elem);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
