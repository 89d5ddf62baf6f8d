use std::sync::Arc;

use super::walk;
use crate::element::Element;
use crate::error::{mismatch, Result};
use crate::tensor::{normalize_axis, strides_of, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReduceOp {
    Sum,
    Mean,
    /// Gradient flows to the first maximal element in row-major order.
    Max,
}

impl<F: Element> Tensor<F> {
    /// Reduce over `axes`. Reduced axes are kept with extent 1 when
    /// `keep_dims`, dropped otherwise (a full reduction yields shape `[1]`).
    pub fn reduce(&self, op: ReduceOp, axes: &[isize], keep_dims: bool) -> Result<Tensor<F>> {
        let rank = self.rank();
        let mut reduced = vec![false; rank];
        for &a in axes {
            let a = normalize_axis(a, rank)?;
            reduced[a] = true;
        }
        let kept_shape: Vec<usize> = self
            .shape()
            .iter()
            .zip(&reduced)
            .map(|(&e, &r)| if r { 1 } else { e })
            .collect();
        let out_shape: Vec<usize> = if keep_dims {
            kept_shape.clone()
        } else {
            let s: Vec<usize> = self
                .shape()
                .iter()
                .zip(&reduced)
                .filter(|(_, &r)| !r)
                .map(|(&e, _)| e)
                .collect();
            if s.is_empty() {
                vec![1]
            } else {
                s
            }
        };
        let out_n: usize = kept_shape.iter().product();
        let group = (self.numel() / out_n).max(1);
        let kept_strides = strides_of(&kept_shape);
        // input index -> output offset
        let map: Vec<usize> = self
            .shape()
            .iter()
            .zip(&reduced)
            .zip(&kept_strides)
            .map(|((_, &r), &s)| if r { 0 } else { s })
            .collect();
        let zero = vec![0; rank];
        let x = self.data();
        let suffix = reduced.windows(2).all(|w| !w[0] || w[1]);

        match op {
            ReduceOp::Sum | ReduceOp::Mean if suffix => {
                // Reduced axes are trailing: every output owns a contiguous run.
                let scale = if op == ReduceOp::Mean { F::of(1.0 / group as f64) } else { F::one() };
                let acc: Vec<F> = x.chunks(group).map(|c| c.iter().copied().sum::<F>() * scale).collect();
                Ok(Tensor::from_op(
                    Arc::new(acc),
                    out_shape,
                    if op == ReduceOp::Sum { "sum" } else { "mean" },
                    vec![self.clone()],
                    Box::new(move |g, _| {
                        let mut gx = Vec::with_capacity(g.len() * group);
                        for &v in g {
                            gx.extend(std::iter::repeat_n(v * scale, group));
                        }
                        vec![Some(gx)]
                    }),
                ))
            }
            ReduceOp::Sum | ReduceOp::Mean => {
                let mut acc = vec![F::zero(); out_n];
                walk(self.shape(), &map, &zero, |i, o, _| acc[o] += x[i]);
                let scale = if op == ReduceOp::Mean { F::of(1.0 / group as f64) } else { F::one() };
                if op == ReduceOp::Mean {
                    acc.iter_mut().for_each(|v| *v *= scale);
                }
                let in_shape = self.shape().to_vec();
                Ok(Tensor::from_op(
                    Arc::new(acc),
                    out_shape,
                    if op == ReduceOp::Sum { "sum" } else { "mean" },
                    vec![self.clone()],
                    Box::new(move |g, _| {
                        let n: usize = in_shape.iter().product();
                        let mut gx = vec![F::zero(); n];
                        walk(&in_shape, &map, &zero, |i, o, _| gx[i] = g[o] * scale);
                        vec![Some(gx)]
                    }),
                ))
            }
            ReduceOp::Max => {
                let mut best = vec![F::neg_infinity(); out_n];
                let mut arg = vec![usize::MAX; out_n];
                walk(self.shape(), &map, &zero, |i, o, _| {
                    if arg[o] == usize::MAX || x[i] > best[o] {
                        best[o] = x[i];
                        arg[o] = i;
                    }
                });
                let n = self.numel();
                Ok(Tensor::from_op(
                    Arc::new(best),
                    out_shape,
                    "max",
                    vec![self.clone()],
                    Box::new(move |g, _| {
                        let mut gx = vec![F::zero(); n];
                        for (o, &i) in arg.iter().enumerate() {
                            gx[i] += g[o];
                        }
                        vec![Some(gx)]
                    }),
                ))
            }
        }
    }

    pub fn sum(&self, axes: &[isize], keep_dims: bool) -> Result<Tensor<F>> {
        self.reduce(ReduceOp::Sum, axes, keep_dims)
    }

    pub fn mean(&self, axes: &[isize], keep_dims: bool) -> Result<Tensor<F>> {
        self.reduce(ReduceOp::Mean, axes, keep_dims)
    }

    pub fn max(&self, axes: &[isize], keep_dims: bool) -> Result<Tensor<F>> {
        self.reduce(ReduceOp::Max, axes, keep_dims)
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum_all(&self) -> Tensor<F> {
        let axes: Vec<isize> = (0..self.rank() as isize).collect();
        self.reduce(ReduceOp::Sum, &axes, false).expect("all axes are valid")
    }

    pub fn mean_all(&self) -> Tensor<F> {
        let axes: Vec<isize> = (0..self.rank() as isize).collect();
        self.reduce(ReduceOp::Mean, &axes, false).expect("all axes are valid")
    }

    /// `[B, C, H, W] -> [B, C]`, mean over the spatial axes.
    pub fn global_avg_pool(&self) -> Result<Tensor<F>> {
        if self.rank() != 4 {
            return Err(mismatch("global_avg_pool", format!("expected [B,C,H,W], got {:?}", self.shape())));
        }
        self.mean(&[2, 3], false)
    }
}
