use std::sync::Arc;

use crate::element::Element;
use crate::error::{mismatch, Result, TensorError};
use crate::tensor::Tensor;

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(TensorError::InvalidParameter(format!("temperature must be > 0, got {t}")));
    }
    Ok(())
}

fn last_dim<F: Element>(x: &Tensor<F>, op: &'static str) -> Result<usize> {
    match x.shape().last() {
        Some(&d) if d >= 1 => Ok(d),
        _ => Err(mismatch(op, "tensor has no trailing axis")),
    }
}

impl<F: Element> Tensor<F> {
    /// `softmax(z / temperature)` over the last axis, with max subtraction.
    pub fn softmax(&self, temperature: f64) -> Result<Tensor<F>> {
        check_temperature(temperature)?;
        let d = last_dim(self, "softmax")?;
        let inv_t = F::of(1.0 / temperature);
        let mut out = vec![F::zero(); self.numel()];
        for (row, dst) in self.data().chunks(d).zip(out.chunks_mut(d)) {
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for (o, &z) in dst.iter_mut().zip(row) {
                *o = ((z - m) * inv_t).exp();
                sum += *o;
            }
            dst.iter_mut().for_each(|o| *o /= sum);
        }
        let out = Arc::new(out);
        let y = Arc::clone(&out);
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            "softmax",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![F::zero(); g.len()];
                for ((gr, yr), dst) in g.chunks(d).zip(y.chunks(d)).zip(gx.chunks_mut(d)) {
                    let dot: F = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((o, &gi), &yi) in dst.iter_mut().zip(gr).zip(yr) {
                        *o = yi * (gi - dot) * inv_t;
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// `log softmax(z / temperature)` over the last axis.
    pub fn log_softmax(&self, temperature: f64) -> Result<Tensor<F>> {
        check_temperature(temperature)?;
        let d = last_dim(self, "log_softmax")?;
        let inv_t = F::of(1.0 / temperature);
        let mut out = vec![F::zero(); self.numel()];
        for (row, dst) in self.data().chunks(d).zip(out.chunks_mut(d)) {
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = row.iter().map(|&z| ((z - m) * inv_t).exp()).sum::<F>().ln();
            for (o, &z) in dst.iter_mut().zip(row) {
                *o = (z - m) * inv_t - lse;
            }
        }
        let out = Arc::new(out);
        let y = Arc::clone(&out);
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            "log_softmax",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![F::zero(); g.len()];
                for ((gr, yr), dst) in g.chunks(d).zip(y.chunks(d)).zip(gx.chunks_mut(d)) {
                    let total: F = gr.iter().copied().sum();
                    for ((o, &gi), &yi) in dst.iter_mut().zip(gr).zip(yr) {
                        *o = (gi - yi.exp() * total) * inv_t;
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Normalise over the last axis, then apply `gamma * x̂ + beta` when given.
    pub fn layer_norm(&self, gamma: Option<&Tensor<F>>, beta: Option<&Tensor<F>>, eps: f64) -> Result<Tensor<F>> {
        if !(eps > 0.0) {
            return Err(TensorError::InvalidParameter(format!("eps must be > 0, got {eps}")));
        }
        let d = last_dim(self, "layer_norm")?;
        for p in [gamma, beta].into_iter().flatten() {
            if p.shape() != [d] {
                return Err(mismatch("layer_norm", format!("affine parameter {:?} for width {d}", p.shape())));
            }
        }
        let rows = self.numel() / d;
        let eps = F::of(eps);
        let inv_d = F::of(1.0 / d as f64);
        let mut xhat = vec![F::zero(); self.numel()];
        let mut rstd = vec![F::zero(); rows];
        for (r, (row, dst)) in self.data().chunks(d).zip(xhat.chunks_mut(d)).enumerate() {
            let mean = row.iter().copied().sum::<F>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
            let rs = (var + eps).sqrt().recip();
            rstd[r] = rs;
            for (o, &v) in dst.iter_mut().zip(row) {
                *o = (v - mean) * rs;
            }
        }
        let out: Vec<F> = match (gamma, beta) {
            (None, None) => xhat.clone(),
            _ => {
                let gd = gamma.map(|g| g.data());
                let bd = beta.map(|b| b.data());
                xhat.iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let j = i % d;
                        let scaled = gd.map_or(v, |g| g[j] * v);
                        bd.map_or(scaled, |b| scaled + b[j])
                    })
                    .collect()
            }
        };

        let mut inputs = vec![self.clone()];
        let has_gamma = gamma.is_some();
        let has_beta = beta.is_some();
        inputs.extend(gamma.cloned());
        inputs.extend(beta.cloned());
        let gamma_data = gamma.map(|g| g.data_arc());
        Ok(Tensor::from_op(
            Arc::new(out),
            self.shape().to_vec(),
            "layer_norm",
            inputs,
            Box::new(move |g, needs| {
                let mut grads = Vec::with_capacity(needs.len());
                let gx = needs[0].then(|| {
                    let mut gx = vec![F::zero(); g.len()];
                    let mut dxhat = vec![F::zero(); d];
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let xr = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxhat[j] = gamma_data.as_ref().map_or(gr[j], |gm| gr[j] * gm[j]);
                        }
                        let m1 = dxhat.iter().copied().sum::<F>() * inv_d;
                        let m2 = dxhat.iter().zip(xr).map(|(&a, &b)| a * b).sum::<F>() * inv_d;
                        for j in 0..d {
                            gx[r * d + j] = rstd[r] * (dxhat[j] - m1 - xr[j] * m2);
                        }
                    }
                    gx
                });
                grads.push(gx);
                let mut k = 1;
                if has_gamma {
                    grads.push(needs[k].then(|| {
                        let mut gg = vec![F::zero(); d];
                        for (i, (&gi, &xi)) in g.iter().zip(xhat.iter()).enumerate() {
                            gg[i % d] += gi * xi;
                        }
                        gg
                    }));
                    k += 1;
                }
                if has_beta {
                    grads.push(needs[k].then(|| {
                        let mut gb = vec![F::zero(); d];
                        for (i, &gi) in g.iter().enumerate() {
                            gb[i % d] += gi;
                        }
                        gb
                    }));
                }
                grads
            }),
        ))
    }
}

impl<F: Element> Tensor<F> {
    /// Group normalisation of `[B, C, H, W]`: each sample's channels are split
    /// into `groups` contiguous groups normalised over `(C / groups) x H x W`,
    /// followed by a per-channel `gamma * x̂ + beta`.
    pub fn group_norm(&self, groups: usize, gamma: &Tensor<F>, beta: &Tensor<F>, eps: f64) -> Result<Tensor<F>> {
        let [batch, channels, height, width] = super::shape::dims4(self, "group_norm")?;
        if groups == 0 || channels % groups != 0 {
            return Err(mismatch("group_norm", format!("{groups} groups for {channels} channels")));
        }
        if gamma.shape() != [channels] || beta.shape() != [channels] {
            return Err(mismatch(
                "group_norm",
                format!("affine parameters {:?}/{:?} for {channels} channels", gamma.shape(), beta.shape()),
            ));
        }
        if !(eps > 0.0) {
            return Err(TensorError::InvalidParameter(format!("eps must be > 0, got {eps}")));
        }
        let hw = height * width;
        let m = channels / groups * hw;
        let rows = batch * groups;
        let eps = F::of(eps);
        let inv_m = F::of(1.0 / m as f64);
        let x = self.data();
        let (gd, bd) = (gamma.data(), beta.data());
        let mut xhat = vec![F::zero(); self.numel()];
        let mut out = vec![F::zero(); self.numel()];
        let mut rstd = vec![F::zero(); rows];
        for r in 0..rows {
            let src = &x[r * m..(r + 1) * m];
            let mean = src.iter().copied().sum::<F>() * inv_m;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_m;
            let rs = (var + eps).sqrt().recip();
            rstd[r] = rs;
            for (blk, chunk) in src.chunks(hw).enumerate() {
                let c = (r * m) / hw % channels + blk;
                let base = r * m + blk * hw;
                for (i, &v) in chunk.iter().enumerate() {
                    let xh = (v - mean) * rs;
                    xhat[base + i] = xh;
                    out[base + i] = gd[c] * xh + bd[c];
                }
            }
        }
        let gamma_data = gamma.data_arc();
        Ok(Tensor::from_op(
            Arc::new(out),
            self.shape().to_vec(),
            "group_norm",
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, needs| {
                let gx = needs[0].then(|| {
                    // dx̂ = g * gamma, staged in gx.
                    let mut gx: Vec<F> = g.to_vec();
                    for (blk, chunk) in gx.chunks_mut(hw).enumerate() {
                        let gm = gamma_data[blk % channels];
                        chunk.iter_mut().for_each(|v| *v *= gm);
                    }
                    for r in 0..rows {
                        let d = &mut gx[r * m..(r + 1) * m];
                        let xh = &xhat[r * m..(r + 1) * m];
                        let m1 = d.iter().copied().sum::<F>() * inv_m;
                        let m2 = d.iter().zip(xh).map(|(&a, &b)| a * b).sum::<F>() * inv_m;
                        let rs = rstd[r];
                        for (v, &x) in d.iter_mut().zip(xh) {
                            *v = rs * (*v - m1 - x * m2);
                        }
                    }
                    gx
                });
                let mut gg = vec![F::zero(); channels];
                let mut gb = vec![F::zero(); channels];
                if needs[1] || needs[2] {
                    for (blk, (gs, xs)) in g.chunks(hw).zip(xhat.chunks(hw)).enumerate() {
                        let c = blk % channels;
                        gg[c] += gs.iter().zip(xs).map(|(&a, &b)| a * b).sum::<F>();
                        gb[c] += gs.iter().copied().sum::<F>();
                    }
                }
                vec![gx, needs[1].then_some(gg), needs[2].then_some(gb)]
            }),
        ))
    }
}
