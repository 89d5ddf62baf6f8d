//! Differentiable operations on [`Tensor`](crate::Tensor).

mod conv;
mod elementwise;
mod matmul;
mod nn;
mod reduce;
mod shape;

pub use elementwise::Activation;
pub use reduce::ReduceOp;

/// Walk every index of `shape` in row-major order, calling
/// `f(linear_index, offset_a, offset_b)` where the offsets are computed from
/// the per-axis strides `sa` and `sb` (zero for broadcast axes).
pub(crate) fn walk(shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = shape.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let n: usize = shape.iter().product();
    let last = shape[rank - 1];
    let (la, lb) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank - 1];
    let (mut oa, mut ob, mut i) = (0usize, 0usize, 0usize);
    while i < n {
        for j in 0..last {
            f(i + j, oa + j * la, ob + j * lb);
        }
        i += last;
        let mut d = rank - 1;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < shape[d] {
                break;
            }
            oa -= sa[d] * shape[d];
            ob -= sb[d] * shape[d];
            idx[d] = 0;
        }
    }
}

/// Strides of `input` when viewed with the (right-aligned) broadcast shape
/// `out`; broadcast axes get stride zero.
pub(crate) fn broadcast_strides(input: &[usize], out: &[usize]) -> Vec<usize> {
    let own = crate::tensor::strides_of(input);
    let offset = out.len() - input.len();
    (0..out.len())
        .map(|d| {
            if d < offset || input[d - offset] == 1 {
                0
            } else {
                own[d - offset]
            }
        })
        .collect()
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for d in 0..rank {
        let da = if d + a.len() >= rank { a[d + a.len() - rank] } else { 1 };
        let db = if d + b.len() >= rank { b[d + b.len() - rank] } else { 1 };
        out[d] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Sum a gradient of shape `out` down to `input` (inverse of broadcasting).
pub(crate) fn unbroadcast<F: crate::Element>(g: Vec<F>, out: &[usize], input: &[usize]) -> Vec<F> {
    if out == input {
        return g;
    }
    let n: usize = input.iter().product();
    let mut acc = vec![F::zero(); n];
    let s = broadcast_strides(input, out);
    let unit = vec![0; out.len()];
    walk(out, &s, &unit, |i, o, _| acc[o] += g[i]);
    acc
}
