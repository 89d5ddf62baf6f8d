use std::sync::Arc;

use super::{broadcast_shape, broadcast_strides, unbroadcast, walk};
use crate::element::Element;
use crate::error::{mismatch, Result};
use crate::tensor::Tensor;

/// Pointwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Silu,
    /// Exact (erf) form.
    Gelu,
}

struct BinaryGeometry<'a> {
    same: bool,
    out: &'a [usize],
    sa: &'a [usize],
    sb: &'a [usize],
}

impl BinaryGeometry<'_> {
    /// Per-output-element gradient contribution `f(g, a, b, out)`.
    fn grad<F: Element>(&self, f: &impl Fn(F, F, F, F) -> F, g: &[F], a: &[F], b: &[F], out: &[F]) -> Vec<F> {
        if self.same {
            g.iter()
                .zip(a.iter().zip(b))
                .zip(out)
                .map(|((&g, (&a, &b)), &o)| f(g, a, b, o))
                .collect()
        } else {
            let mut buf = vec![F::zero(); g.len()];
            walk(self.out, self.sa, self.sb, |i, oa, ob| buf[i] = f(g[i], a[oa], b[ob], out[i]));
            buf
        }
    }
}

/// `da` and `db` map `(grad_out, a, b, out)` to the gradient contribution.
fn binary<F, Fwd, Da, Db>(a: &Tensor<F>, b: &Tensor<F>, name: &'static str, fwd: Fwd, da: Da, db: Db) -> Result<Tensor<F>>
where
    F: Element,
    Fwd: Fn(F, F) -> F,
    Da: Fn(F, F, F, F) -> F + Send + Sync + 'static,
    Db: Fn(F, F, F, F) -> F + Send + Sync + 'static,
{
    let out_shape = broadcast_shape(a.shape(), b.shape())
        .ok_or_else(|| mismatch(name, format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape())))?;
    let n: usize = out_shape.iter().product();
    let same = a.shape() == b.shape();
    let (sa, sb) = if same {
        (Vec::new(), Vec::new())
    } else {
        (broadcast_strides(a.shape(), &out_shape), broadcast_strides(b.shape(), &out_shape))
    };
    let out: Vec<F> = if same {
        a.data().iter().zip(b.data()).map(|(&x, &y)| fwd(x, y)).collect()
    } else {
        let (ad, bd) = (a.data(), b.data());
        let mut out = vec![F::zero(); n];
        walk(&out_shape, &sa, &sb, |i, oa, ob| out[i] = fwd(ad[oa], bd[ob]));
        out
    };
    let out = Arc::new(out);
    let (ad, bd, od) = (a.data_arc(), b.data_arc(), Arc::clone(&out));
    let (a_shape, b_shape, o_shape) = (a.shape().to_vec(), b.shape().to_vec(), out_shape.clone());
    Ok(Tensor::from_op(
        out,
        out_shape,
        name,
        vec![a.clone(), b.clone()],
        Box::new(move |g, needs| {
            let geo = BinaryGeometry {
                same,
                out: &o_shape,
                sa: &sa,
                sb: &sb,
            };
            let ga = needs[0].then(|| unbroadcast(geo.grad(&da, g, &ad, &bd, &od), &o_shape, &a_shape));
            let gb = needs[1].then(|| unbroadcast(geo.grad(&db, g, &ad, &bd, &od), &o_shape, &b_shape));
            vec![ga, gb]
        }),
    ))
}

/// `dfdx` maps `(x, y)` to `dy/dx`.
fn unary<F: Element>(
    x: &Tensor<F>,
    name: &'static str,
    fwd: impl Fn(F) -> F,
    dfdx: impl Fn(F, F) -> F + Send + Sync + 'static,
) -> Tensor<F> {
    let out = Arc::new(x.data().iter().map(|&v| fwd(v)).collect::<Vec<F>>());
    let (xd, yd) = (x.data_arc(), Arc::clone(&out));
    Tensor::from_op(
        out,
        x.shape().to_vec(),
        name,
        vec![x.clone()],
        Box::new(move |g, _| vec![Some(g.iter().zip(xd.iter().zip(yd.iter())).map(|(&g, (&x, &y))| g * dfdx(x, y)).collect())]),
    )
}

#[inline]
fn sigmoid<F: Element>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
// 1 / sqrt(2*pi)
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gelu_f64(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2))
}

fn gelu_grad_f64(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * INV_SQRT_2));
    cdf + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

impl<F: Element> Tensor<F> {
    pub fn add(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        binary(self, other, "add", |a, b| a + b, |g, _, _, _| g, |g, _, _, _| g)
    }

    pub fn sub(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        binary(self, other, "sub", |a, b| a - b, |g, _, _, _| g, |g, _, _, _| -g)
    }

    pub fn mul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        binary(self, other, "mul", |a, b| a * b, |g, _, b, _| g * b, |g, a, _, _| g * a)
    }

    pub fn div(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        binary(self, other, "div", |a, b| a / b, |g, _, b, _| g / b, |g, a, b, _| -g * a / (b * b))
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor<F> {
        let c = F::of(c);
        let out = Arc::new(self.data().iter().map(|&v| v * c).collect::<Vec<F>>());
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            "mul_scalar",
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(g.iter().map(|&v| v * c).collect())]),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<F> {
        let c = F::of(c);
        let out = Arc::new(self.data().iter().map(|&v| v + c).collect::<Vec<F>>());
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            "add_scalar",
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        )
    }

    pub fn neg(&self) -> Tensor<F> {
        self.mul_scalar(-1.0)
    }

    pub fn square(&self) -> Tensor<F> {
        unary(self, "square", |x| x * x, |x, _| x + x)
    }

    pub fn exp(&self) -> Tensor<F> {
        unary(self, "exp", |x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<F> {
        unary(self, "ln", |x| x.ln(), |x, _| x.recip())
    }

    pub fn sqrt(&self) -> Tensor<F> {
        unary(self, "sqrt", |x| x.sqrt(), |_, y| F::of(0.5) / y)
    }

    pub fn tanh(&self) -> Tensor<F> {
        unary(self, "tanh", |x| x.tanh(), |_, y| F::one() - y * y)
    }

    pub fn sigmoid(&self) -> Tensor<F> {
        unary(self, "sigmoid", sigmoid, |_, y| y * (F::one() - y))
    }

    pub fn relu(&self) -> Tensor<F> {
        unary(
            self,
            "relu",
            |x| if x > F::zero() { x } else { F::zero() },
            |x, _| if x > F::zero() { F::one() } else { F::zero() },
        )
    }

    pub fn silu(&self) -> Tensor<F> {
        let sig: Vec<F> = self.data().iter().map(|&x| sigmoid(x)).collect();
        let out: Vec<F> = self.data().iter().zip(&sig).map(|(&x, &s)| x * s).collect();
        let xd = self.data_arc();
        Tensor::from_op(
            Arc::new(out),
            self.shape().to_vec(),
            "silu",
            vec![self.clone()],
            Box::new(move |g, _| {
                let gx = g
                    .iter()
                    .zip(xd.iter().zip(&sig))
                    .map(|(&g, (&x, &s))| g * s * (F::one() + x * (F::one() - s)))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn gelu(&self) -> Tensor<F> {
        unary(
            self,
            "gelu",
            |x| F::of(gelu_f64(x.as_f64())),
            |x, _| F::of(gelu_grad_f64(x.as_f64())),
        )
    }

    pub fn activation(&self, kind: Activation) -> Tensor<F> {
        match kind {
            Activation::Relu => self.relu(),
            Activation::Silu => self.silu(),
            Activation::Gelu => self.gelu(),
        }
    }
}
