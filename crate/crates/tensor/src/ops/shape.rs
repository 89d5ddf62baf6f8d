use std::sync::Arc;

use super::{broadcast_shape, broadcast_strides, unbroadcast, walk};
use crate::element::Element;
use crate::error::{mismatch, Result, TensorError};
use crate::tensor::{normalize_axis, numel_of, strides_of, Tensor};

impl<F: Element> Tensor<F> {
    /// Same data, new shape. One extent may be `usize::MAX` to infer it.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<F>> {
        let mut shape = shape.to_vec();
        if let Some(pos) = shape.iter().position(|&e| e == usize::MAX) {
            let known: usize = shape.iter().filter(|&&e| e != usize::MAX).product();
            if known == 0 || self.numel() % known != 0 {
                return Err(mismatch("reshape", format!("cannot infer {:?} from {:?}", shape, self.shape())));
            }
            shape[pos] = self.numel() / known;
        }
        if shape.contains(&0) || numel_of(&shape) != self.numel() {
            return Err(mismatch("reshape", format!("{:?} -> {:?}", self.shape(), shape)));
        }
        Ok(self.share_with_shape(shape, "reshape"))
    }

    /// Reorder axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<F>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(mismatch("permute", format!("{:?} is not a permutation of rank {rank}", perm)));
        }
        let in_strides = strides_of(self.shape());
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let src: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let zero = vec![0; rank];
        let x = self.data();
        let mut out = vec![F::zero(); self.numel()];
        walk(&out_shape, &src, &zero, |i, o, _| out[i] = x[o]);
        let shape_for_bwd = out_shape.clone();
        let n = self.numel();
        Ok(Tensor::from_op(
            Arc::new(out),
            out_shape,
            "permute",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![F::zero(); n];
                walk(&shape_for_bwd, &src, &zero, |i, o, _| gx[o] = g[i]);
                vec![Some(gx)]
            }),
        ))
    }

    /// Swap two axes.
    pub fn transpose(&self, a: isize, b: isize) -> Result<Tensor<F>> {
        let (a, b) = (normalize_axis(a, self.rank())?, normalize_axis(b, self.rank())?);
        let mut perm: Vec<usize> = (0..self.rank()).collect();
        perm.swap(a, b);
        self.permute(&perm)
    }

    /// Materialise a broadcast to `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor<F>> {
        match broadcast_shape(self.shape(), shape) {
            Some(s) if s == shape => {}
            _ => {
                return Err(mismatch("broadcast_to", format!("{:?} -> {:?}", self.shape(), shape)));
            }
        }
        let s = broadcast_strides(self.shape(), shape);
        let zero = vec![0; shape.len()];
        let x = self.data();
        let mut out = vec![F::zero(); numel_of(shape)];
        walk(shape, &s, &zero, |i, o, _| out[i] = x[o]);
        let (in_shape, out_shape) = (self.shape().to_vec(), shape.to_vec());
        Ok(Tensor::from_op(
            Arc::new(out),
            shape.to_vec(),
            "broadcast_to",
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(unbroadcast(g.to_vec(), &out_shape, &in_shape))]),
        ))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(tensors: &[Tensor<F>], axis: isize) -> Result<Tensor<F>> {
        let first = tensors
            .first()
            .ok_or_else(|| mismatch("concat", "no tensors given"))?;
        let rank = first.rank();
        let axis = normalize_axis(axis, rank)?;
        for t in tensors {
            let compatible = t.rank() == rank
                && t.shape().iter().enumerate().all(|(d, &e)| d == axis || e == first.shape()[d]);
            if !compatible {
                return Err(mismatch("concat", format!("{:?} vs {:?} on axis {axis}", first.shape(), t.shape())));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let widths: Vec<usize> = tensors.iter().map(|t| t.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (t, &w) in tensors.iter().zip(&widths) {
                out.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = tensors.iter().map(|t| t.shape()[axis]).sum();
        Ok(Tensor::from_op(
            Arc::new(out),
            shape,
            "concat",
            tensors.to_vec(),
            Box::new(move |g, needs| {
                let mut start = 0;
                widths
                    .iter()
                    .zip(needs)
                    .map(|(&w, &need)| {
                        let s = start;
                        start += w;
                        need.then(|| {
                            let mut gi = Vec::with_capacity(outer * w);
                            for o in 0..outer {
                                gi.extend_from_slice(&g[o * total + s..o * total + s + w]);
                            }
                            gi
                        })
                    })
                    .collect()
            }),
        ))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: isize, start: usize, len: usize) -> Result<Tensor<F>> {
        let axis = normalize_axis(axis, self.rank())?;
        let extent = self.shape()[axis];
        if len == 0 || start + len > extent {
            return Err(mismatch("narrow", format!("[{start}, {}) on extent {extent}", start + len)));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let (row, w, off) = (extent * inner, len * inner, start * inner);
        let x = self.data();
        let mut out = Vec::with_capacity(outer * w);
        for o in 0..outer {
            out.extend_from_slice(&x[o * row + off..o * row + off + w]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let n = self.numel();
        Ok(Tensor::from_op(
            Arc::new(out),
            shape,
            "narrow",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![F::zero(); n];
                for o in 0..outer {
                    gx[o * row + off..o * row + off + w].copy_from_slice(&g[o * w..(o + 1) * w]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// `[B, C, H, W] -> [B, (H/p)(W/p), p*p, C]`: non-overlapping `p×p`
    /// patches in row-major patch order, pixels within a patch in row-major
    /// order.
    pub fn unfold_patches(&self, p: usize) -> Result<Tensor<F>> {
        let [b, c, h, w] = dims4(self, "unfold_patches")?;
        if p == 0 || h % p != 0 || w % p != 0 {
            return Err(TensorError::PatchMismatch {
                height: h,
                width: w,
                patch: p,
            });
        }
        let (hp, wp) = (h / p, w / p);
        self.reshape(&[b, c, hp, p, wp, p])?
            .permute(&[0, 2, 4, 3, 5, 1])?
            .reshape(&[b, hp * wp, p * p, c])
    }

    /// Inverse of [`unfold_patches`](Self::unfold_patches) for a map of
    /// spatial size `height × width`.
    pub fn fold_patches(&self, p: usize, height: usize, width: usize) -> Result<Tensor<F>> {
        if self.rank() != 4 {
            return Err(mismatch("fold_patches", format!("expected [B,N,P,C], got {:?}", self.shape())));
        }
        if p == 0 || height % p != 0 || width % p != 0 {
            return Err(TensorError::PatchMismatch {
                height,
                width,
                patch: p,
            });
        }
        let (b, n, pp, c) = (self.shape()[0], self.shape()[1], self.shape()[2], self.shape()[3]);
        let (hp, wp) = (height / p, width / p);
        if n != hp * wp || pp != p * p {
            return Err(mismatch(
                "fold_patches",
                format!("{:?} does not tile {height}x{width} with patch {p}", self.shape()),
            ));
        }
        self.reshape(&[b, hp, wp, p, p, c])?
            .permute(&[0, 5, 1, 3, 2, 4])?
            .reshape(&[b, c, height, width])
    }
}

pub(crate) fn dims4<F: Element>(t: &Tensor<F>, op: &'static str) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(mismatch(op, format!("expected a rank-4 tensor, got {:?}", t.shape()))),
    }
}
