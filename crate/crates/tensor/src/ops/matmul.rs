use std::sync::Arc;

use super::{broadcast_shape, broadcast_strides, walk};
use crate::element::{gemm, Element, MatRef};
use crate::error::{mismatch, Result};
use crate::tensor::Tensor;

impl<F: Element> Tensor<F> {
    /// Batched matrix product `[.., m, k] x [.., k, n] -> [.., m, n]` with
    /// broadcasting over the leading axes.
    pub fn matmul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        let (a, b) = (self, other);
        if a.rank() < 2 || b.rank() < 2 {
            return Err(mismatch("matmul", format!("operands must be at least 2-D: {:?} x {:?}", a.shape(), b.shape())));
        }
        let (ar, br) = (a.rank(), b.rank());
        let (m, k) = (a.shape()[ar - 2], a.shape()[ar - 1]);
        let (k2, n) = (b.shape()[br - 2], b.shape()[br - 1]);
        if k != k2 {
            return Err(mismatch("matmul", format!("inner dimensions differ: {:?} x {:?}", a.shape(), b.shape())));
        }
        let (a_batch, b_batch) = (&a.shape()[..ar - 2], &b.shape()[..br - 2]);
        let batch = broadcast_shape(a_batch, b_batch)
            .ok_or_else(|| mismatch("matmul", format!("batch axes do not broadcast: {:?} x {:?}", a.shape(), b.shape())))?;
        let nb: usize = batch.iter().product();
        let (sa, sb) = (broadcast_strides(a_batch, &batch), broadcast_strides(b_batch, &batch));
        let (mk, kn, mn) = (m * k, k * n, m * n);

        // A shared right operand lets the whole batch run as one tall product.
        let flat = b_batch.iter().product::<usize>() == 1 && a_batch == batch.as_slice();

        let mut out = vec![F::zero(); nb * mn];
        let (ad, bd) = (a.data(), b.data());
        if flat {
            gemm(nb * m, k, n, MatRef::row_major(ad, k), MatRef::row_major(bd, n), &mut out, F::zero());
        } else {
            walk(&batch, &sa, &sb, |i, oa, ob| {
                gemm(
                    m,
                    k,
                    n,
                    MatRef::row_major(&ad[oa * mk..(oa + 1) * mk], k),
                    MatRef::row_major(&bd[ob * kn..(ob + 1) * kn], n),
                    &mut out[i * mn..(i + 1) * mn],
                    F::zero(),
                );
            });
        }

        let mut shape = batch.clone();
        shape.extend([m, n]);
        let (a_arc, b_arc) = (a.data_arc(), b.data_arc());
        let (a_len, b_len) = (a.numel(), b.numel());
        Ok(Tensor::from_op(
            Arc::new(out),
            shape,
            "matmul",
            vec![a.clone(), b.clone()],
            Box::new(move |g, needs| {
                let mut ga = needs[0].then(|| vec![F::zero(); a_len]);
                let mut gb = needs[1].then(|| vec![F::zero(); b_len]);
                if flat {
                    let rows = nb * m;
                    if let Some(ga) = ga.as_mut() {
                        // dA = G · Bᵀ
                        gemm(rows, n, k, MatRef::row_major(g, n), MatRef::row_major(&b_arc, n).t(), ga, F::zero());
                    }
                    if let Some(gb) = gb.as_mut() {
                        // dB = Aᵀ · G
                        gemm(k, rows, n, MatRef::row_major(&a_arc, k).t(), MatRef::row_major(g, n), gb, F::zero());
                    }
                } else {
                    walk(&batch, &sa, &sb, |i, oa, ob| {
                        let gi = &g[i * mn..(i + 1) * mn];
                        if let Some(ga) = ga.as_mut() {
                            gemm(
                                m,
                                n,
                                k,
                                MatRef::row_major(gi, n),
                                MatRef::row_major(&b_arc[ob * kn..(ob + 1) * kn], n).t(),
                                &mut ga[oa * mk..(oa + 1) * mk],
                                F::one(),
                            );
                        }
                        if let Some(gb) = gb.as_mut() {
                            gemm(
                                k,
                                m,
                                n,
                                MatRef::row_major(&a_arc[oa * mk..(oa + 1) * mk], k).t(),
                                MatRef::row_major(gi, n),
                                &mut gb[ob * kn..(ob + 1) * kn],
                                F::one(),
                            );
                        }
                    });
                }
                vec![ga, gb]
            }),
        ))
    }

    /// `x · wᵀ + b` for `x: [.., in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&self, weight: &Tensor<F>, bias: Option<&Tensor<F>>) -> Result<Tensor<F>> {
        if weight.rank() != 2 {
            return Err(mismatch("linear", format!("weight must be [out, in], got {:?}", weight.shape())));
        }
        let y = self.matmul(&weight.transpose(0, 1)?)?;
        match bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }
}
