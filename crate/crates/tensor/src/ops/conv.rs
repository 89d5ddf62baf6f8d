use std::sync::Arc;

use super::shape::dims4;
use crate::element::{gemm, Element, MatRef};
use crate::error::{mismatch, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    out_channels: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    groups: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn cin_g(&self) -> usize {
        self.channels / self.groups
    }
    fn cout_g(&self) -> usize {
        self.out_channels / self.groups
    }
    fn k(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }
    fn out_hw(&self) -> usize {
        self.out_h * self.out_w
    }
    fn in_hw(&self) -> usize {
        self.height * self.width
    }
    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
    fn depthwise(&self) -> bool {
        self.cin_g() == 1 && self.cout_g() == 1
    }

    /// Output positions `lo..hi` whose source for tap `t` lies inside
    /// `0..extent`; the source of `o` is `o * stride + t - pad`.
    #[inline]
    fn valid(&self, t: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if t >= self.pad { 0 } else { (self.pad - t).div_ceil(s) };
        let hi = if extent + self.pad > t { ((extent + self.pad - t - 1) / s + 1).min(out_extent) } else { 0 };
        (lo, hi.max(lo))
    }
}

/// Expand one group of one image (`cin_g` channels) into columns `[K, out_hw]`.
fn im2col<F: Element>(geo: &Geometry, x: &[F], col: &mut [F]) {
    let ohw = geo.out_hw();
    let s = geo.stride;
    for c in 0..geo.cin_g() {
        let plane = &x[c * geo.in_hw()..(c + 1) * geo.in_hw()];
        for i in 0..geo.kh {
            let (ylo, yhi) = geo.valid(i, geo.height, geo.out_h);
            for j in 0..geo.kw {
                let (xlo, xhi) = geo.valid(j, geo.width, geo.out_w);
                let row = &mut col[((c * geo.kh + i) * geo.kw + j) * ohw..][..ohw];
                row.iter_mut().for_each(|v| *v = F::zero());
                for oy in ylo..yhi {
                    let src = &plane[(oy * s + i - geo.pad) * geo.width..][..geo.width];
                    let dst = &mut row[oy * geo.out_w..(oy + 1) * geo.out_w];
                    for ox in xlo..xhi {
                        dst[ox] = src[ox * s + j - geo.pad];
                    }
                }
            }
        }
    }
}

/// Scatter-add columns back onto one group of one image.
fn col2im<F: Element>(geo: &Geometry, col: &[F], gx: &mut [F]) {
    let ohw = geo.out_hw();
    let s = geo.stride;
    for c in 0..geo.cin_g() {
        let plane = &mut gx[c * geo.in_hw()..(c + 1) * geo.in_hw()];
        for i in 0..geo.kh {
            let (ylo, yhi) = geo.valid(i, geo.height, geo.out_h);
            for j in 0..geo.kw {
                let (xlo, xhi) = geo.valid(j, geo.width, geo.out_w);
                let row = &col[((c * geo.kh + i) * geo.kw + j) * ohw..][..ohw];
                for oy in ylo..yhi {
                    let dst = &mut plane[(oy * s + i - geo.pad) * geo.width..][..geo.width];
                    let src = &row[oy * geo.out_w..(oy + 1) * geo.out_w];
                    for ox in xlo..xhi {
                        dst[ox * s + j - geo.pad] += src[ox];
                    }
                }
            }
        }
    }
}

/// Dot product with four independent accumulators.
#[inline]
fn dot<F: Element>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: F = ra.iter().zip(rb).map(|(&x, &y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn depthwise_forward<F: Element>(geo: &Geometry, x: &[F], w: &[F], out: &mut [F]) {
    let taps = geo.kh * geo.kw;
    let s = geo.stride;
    for b in 0..geo.batch {
        for c in 0..geo.channels {
            let plane = &x[(b * geo.channels + c) * geo.in_hw()..][..geo.in_hw()];
            let kern = &w[c * taps..(c + 1) * taps];
            let dst = &mut out[(b * geo.channels + c) * geo.out_hw()..][..geo.out_hw()];
            dst.iter_mut().for_each(|v| *v = F::zero());
            for i in 0..geo.kh {
                let (ylo, yhi) = geo.valid(i, geo.height, geo.out_h);
                for j in 0..geo.kw {
                    let (xlo, xhi) = geo.valid(j, geo.width, geo.out_w);
                    let k = kern[i * geo.kw + j];
                    for oy in ylo..yhi {
                        let src = &plane[(oy * s + i - geo.pad) * geo.width..][..geo.width];
                        let row = &mut dst[oy * geo.out_w..(oy + 1) * geo.out_w];
                        if s == 1 {
                            let off = j as isize - geo.pad as isize;
                            let src = &src[(xlo as isize + off) as usize..(xhi as isize + off) as usize];
                            for (d, &v) in row[xlo..xhi].iter_mut().zip(src) {
                                *d += k * v;
                            }
                        } else {
                            for ox in xlo..xhi {
                                row[ox] += k * src[ox * s + j - geo.pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_backward<F: Element>(
    geo: &Geometry,
    x: &[F],
    w: &[F],
    g: &[F],
    mut gx: Option<&mut [F]>,
    mut gw: Option<&mut [F]>,
) {
    let taps = geo.kh * geo.kw;
    let s = geo.stride;
    for b in 0..geo.batch {
        for c in 0..geo.channels {
            let base_in = (b * geo.channels + c) * geo.in_hw();
            let plane = &x[base_in..base_in + geo.in_hw()];
            let kern = &w[c * taps..(c + 1) * taps];
            let gout = &g[(b * geo.channels + c) * geo.out_hw()..][..geo.out_hw()];
            for i in 0..geo.kh {
                let (ylo, yhi) = geo.valid(i, geo.height, geo.out_h);
                for j in 0..geo.kw {
                    let (xlo, xhi) = geo.valid(j, geo.width, geo.out_w);
                    let k = kern[i * geo.kw + j];
                    let mut acc = F::zero();
                    for oy in ylo..yhi {
                        let row_in = (oy * s + i - geo.pad) * geo.width;
                        let go = &gout[oy * geo.out_w..(oy + 1) * geo.out_w];
                        if let Some(gx) = gx.as_deref_mut() {
                            let dst = &mut gx[base_in + row_in..base_in + row_in + geo.width];
                            if s == 1 {
                                let lo = xlo + j - geo.pad;
                                for (d, &v) in dst[lo..lo + (xhi - xlo)].iter_mut().zip(&go[xlo..xhi]) {
                                    *d += v * k;
                                }
                            } else {
                                for ox in xlo..xhi {
                                    dst[ox * s + j - geo.pad] += go[ox] * k;
                                }
                            }
                        }
                        if gw.is_some() {
                            let src = &plane[row_in..row_in + geo.width];
                            if s == 1 {
                                let lo = xlo + j - geo.pad;
                                acc += dot(&go[xlo..xhi], &src[lo..lo + (xhi - xlo)]);
                            } else {
                                for ox in xlo..xhi {
                                    acc += go[ox] * src[ox * s + j - geo.pad];
                                }
                            }
                        }
                    }
                    if let Some(gw) = gw.as_deref_mut() {
                        gw[c * taps + i * geo.kw + j] += acc;
                    }
                }
            }
        }
    }
}

fn general_forward<F: Element>(geo: &Geometry, x: &[F], w: &[F], out: &mut [F]) {
    let (cin_g, cout_g, k, ohw) = (geo.cin_g(), geo.cout_g(), geo.k(), geo.out_hw());
    let mut col = if geo.pointwise() { Vec::new() } else { vec![F::zero(); k * ohw] };
    for b in 0..geo.batch {
        for grp in 0..geo.groups {
            let xin = &x[(b * geo.channels + grp * cin_g) * geo.in_hw()..][..cin_g * geo.in_hw()];
            let cols: &[F] = if geo.pointwise() {
                xin
            } else {
                im2col(geo, xin, &mut col);
                &col
            };
            let wg = &w[grp * cout_g * k..(grp + 1) * cout_g * k];
            let dst = &mut out[(b * geo.out_channels + grp * cout_g) * ohw..][..cout_g * ohw];
            gemm(cout_g, k, ohw, MatRef::row_major(wg, k), MatRef::row_major(cols, ohw), dst, F::zero());
        }
    }
}

fn general_backward<F: Element>(
    geo: &Geometry,
    x: &[F],
    w: &[F],
    g: &[F],
    mut gx: Option<&mut [F]>,
    mut gw: Option<&mut [F]>,
) {
    let (cin_g, cout_g, k, ohw) = (geo.cin_g(), geo.cout_g(), geo.k(), geo.out_hw());
    let mut col = if geo.pointwise() { Vec::new() } else { vec![F::zero(); k * ohw] };
    let mut gcol = vec![F::zero(); if geo.pointwise() { 0 } else { k * ohw }];
    for b in 0..geo.batch {
        for grp in 0..geo.groups {
            let in_off = (b * geo.channels + grp * cin_g) * geo.in_hw();
            let xin = &x[in_off..in_off + cin_g * geo.in_hw()];
            let gout = &g[(b * geo.out_channels + grp * cout_g) * ohw..][..cout_g * ohw];
            let wg = &w[grp * cout_g * k..(grp + 1) * cout_g * k];
            if let Some(gw) = gw.as_deref_mut() {
                let cols: &[F] = if geo.pointwise() {
                    xin
                } else {
                    im2col(geo, xin, &mut col);
                    &col
                };
                // dW_g += dY_g · colᵀ
                gemm(
                    cout_g,
                    ohw,
                    k,
                    MatRef::row_major(gout, ohw),
                    MatRef::row_major(cols, ohw).t(),
                    &mut gw[grp * cout_g * k..(grp + 1) * cout_g * k],
                    F::one(),
                );
            }
            if let Some(gx) = gx.as_deref_mut() {
                let gxin = &mut gx[in_off..in_off + cin_g * geo.in_hw()];
                if geo.pointwise() {
                    gemm(k, cout_g, ohw, MatRef::row_major(wg, k).t(), MatRef::row_major(gout, ohw), gxin, F::one());
                } else {
                    gemm(k, cout_g, ohw, MatRef::row_major(wg, k).t(), MatRef::row_major(gout, ohw), &mut gcol, F::zero());
                    col2im(geo, &gcol, gxin);
                }
            }
        }
    }
}

impl<F: Element> Tensor<F> {
    /// 2-D cross-correlation. `self: [B, C, H, W]`, `weight: [O, C/groups, kh, kw]`,
    /// `bias: [O]`; output `[B, O, (H+2p-kh)/s+1, (W+2p-kw)/s+1]`.
    pub fn conv2d(
        &self,
        weight: &Tensor<F>,
        bias: Option<&Tensor<F>>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Tensor<F>> {
        let [batch, channels, height, width] = dims4(self, "conv2d")?;
        let [out_channels, cin_g, kh, kw] = dims4(weight, "conv2d")?;
        if groups == 0 || stride == 0 || channels % groups != 0 || out_channels % groups != 0 || cin_g != channels / groups {
            return Err(mismatch(
                "conv2d",
                format!(
                    "input {:?} / weight {:?} incompatible with groups={groups}, stride={stride}",
                    self.shape(),
                    weight.shape()
                ),
            ));
        }
        if height + 2 * padding < kh || width + 2 * padding < kw {
            return Err(mismatch("conv2d", format!("kernel {kh}x{kw} larger than padded input {height}x{width}")));
        }
        if let Some(b) = bias {
            if b.shape() != [out_channels] {
                return Err(mismatch("conv2d", format!("bias {:?} for {out_channels} channels", b.shape())));
            }
        }
        let geo = Geometry {
            batch,
            channels,
            height,
            width,
            out_channels,
            kh,
            kw,
            stride,
            pad: padding,
            groups,
            out_h: (height + 2 * padding - kh) / stride + 1,
            out_w: (width + 2 * padding - kw) / stride + 1,
        };
        let mut out = vec![F::zero(); batch * out_channels * geo.out_hw()];
        if geo.depthwise() {
            depthwise_forward(&geo, self.data(), weight.data(), &mut out);
        } else {
            general_forward(&geo, self.data(), weight.data(), &mut out);
        }
        if let Some(b) = bias {
            let bd = b.data();
            for (i, plane) in out.chunks_mut(geo.out_hw()).enumerate() {
                let v = bd[i % out_channels];
                plane.iter_mut().for_each(|o| *o += v);
            }
        }

        let mut inputs = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        let (x_arc, w_arc) = (self.data_arc(), weight.data_arc());
        let (x_len, w_len) = (self.numel(), weight.numel());
        Ok(Tensor::from_op(
            Arc::new(out),
            vec![batch, out_channels, geo.out_h, geo.out_w],
            "conv2d",
            inputs,
            Box::new(move |g, needs| {
                let mut gx = needs[0].then(|| vec![F::zero(); x_len]);
                let mut gw = needs[1].then(|| vec![F::zero(); w_len]);
                if geo.depthwise() {
                    depthwise_backward(&geo, &x_arc, &w_arc, g, gx.as_deref_mut(), gw.as_deref_mut());
                } else {
                    general_backward(&geo, &x_arc, &w_arc, g, gx.as_deref_mut(), gw.as_deref_mut());
                }
                let mut grads = vec![gx, gw];
                if needs.len() == 3 {
                    grads.push(needs[2].then(|| {
                        let mut gb = vec![F::zero(); geo.out_channels];
                        for (i, plane) in g.chunks(geo.out_hw()).enumerate() {
                            gb[i % geo.out_channels] += plane.iter().copied().sum::<F>();
                        }
                        gb
                    }));
                }
                grads
            }),
        ))
    }
}
