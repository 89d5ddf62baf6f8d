//! Classification and distillation losses.

use mvkd_tensor::{Element, Tensor, TensorError};

use crate::error::{Error, Result};

/// Row sums of a probability tensor must be within this of 1.
pub const PROBABILITY_TOLERANCE: f64 = 1e-5;

fn batch_shape<F: Element>(t: &Tensor<F>, what: &'static str) -> Result<(usize, usize)> {
    match *t.shape() {
        [b, c] if b >= 1 && c >= 1 => Ok((b, c)),
        _ => Err(TensorError::ShapeMismatch {
            op: what,
            detail: format!("expected [B, C], got {:?}", t.shape()),
        }
        .into()),
    }
}

fn one_hot<F: Element>(labels: &[usize], batch: usize, classes: usize) -> Result<Tensor<F>> {
    if labels.len() != batch {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            detail: format!("{} labels for a batch of {batch}", labels.len()),
        }
        .into());
    }
    let mut data = vec![F::zero(); batch * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::InvalidLabel {
                label: l,
                num_classes: classes,
            });
        }
        data[i * classes + l] = F::one();
    }
    Ok(Tensor::from_vec(data, &[batch, classes])?)
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn cross_entropy<F: Element>(logits: &Tensor<F>, labels: &[usize]) -> Result<Tensor<F>> {
    let (b, c) = batch_shape(logits, "cross_entropy")?;
    let target = one_hot::<F>(labels, b, c)?;
    Ok(logits.log_softmax(1.0)?.mul(&target)?.sum_all().mul_scalar(-1.0 / b as f64))
}

fn check_rows<F: Element>(p: &Tensor<F>, c: usize, what: &str) -> Result<()> {
    for (r, row) in p.data().chunks(c).enumerate() {
        if row.iter().any(|v| !v.is_finite() || *v < F::zero()) {
            return Err(Error::InvalidDistribution(format!("{what} row {r} has negative or non-finite entries")));
        }
        let s: f64 = row.iter().map(|v| v.as_f64()).sum();
        if (s - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("{what} row {r} sums to {s}")));
        }
    }
    Ok(())
}

/// `sum_c p ln p` over all rows, with `0 ln 0 = 0`.
fn neg_entropy_sum<F: Element>(p: &[F]) -> f64 {
    p.iter().map(|v| v.as_f64()).filter(|&v| v > 0.0).map(|v| v * v.ln()).sum()
}

/// Mean over the batch of `KL(p_teacher || p_student) = sum_c p_t ln(p_t / p_s)`.
/// The teacher side is treated as a constant.
pub fn kl_divergence<F: Element>(p_teacher: &Tensor<F>, p_student: &Tensor<F>) -> Result<Tensor<F>> {
    let (b, c) = batch_shape(p_teacher, "kl_divergence")?;
    if p_student.shape() != p_teacher.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "kl_divergence",
            detail: format!("teacher {:?} vs student {:?}", p_teacher.shape(), p_student.shape()),
        }
        .into());
    }
    check_rows(p_teacher, c, "teacher")?;
    check_rows(p_student, c, "student")?;
    let pt = p_teacher.detach();
    // where p_t = 0 the term is 0 whatever p_s is; shift p_s to 1 there so
    // ln(p_s) stays finite and the product is an exact zero
    let shift: Vec<F> = pt.data().iter().map(|&v| if v > F::zero() { F::zero() } else { F::one() }).collect();
    let log_ps = p_student.add(&Tensor::from_vec(shift, &[b, c])?)?.ln();
    cross_term(&pt, &log_ps, b)
}

/// `(sum p_t ln p_t - sum p_t * log_ps) / b`.
fn cross_term<F: Element>(pt: &Tensor<F>, log_ps: &Tensor<F>, b: usize) -> Result<Tensor<F>> {
    let constant = neg_entropy_sum(pt.data()) / b as f64;
    Ok(pt.mul(log_ps)?.sum_all().mul_scalar(-1.0 / b as f64).add_scalar(constant))
}

/// `KL(softmax(teacher / T) || softmax(student / T))`, batch mean, computed
/// from log-probabilities of the student for stability.
pub fn softened_kl<F: Element>(student_logits: &Tensor<F>, teacher_logits: &Tensor<F>, temperature: f64) -> Result<Tensor<F>> {
    let (b, _) = batch_shape(student_logits, "kd_total_loss")?;
    if teacher_logits.shape() != student_logits.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "kd_total_loss",
            detail: format!("teacher {:?} vs student {:?}", teacher_logits.shape(), student_logits.shape()),
        }
        .into());
    }
    let pt = teacher_logits.detach().softmax(temperature)?.detach();
    let log_ps = student_logits.log_softmax(temperature)?;
    cross_term(&pt, &log_ps, b)
}

/// Validate a temperature and weight pair.
pub fn check_kd_params(temperature: f64, alpha: f64) -> Result<()> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidParameter(format!("temperature must be > 0, got {temperature}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("alpha must be in [0, 1], got {alpha}")));
    }
    Ok(())
}

/// `(1 - alpha) * CE(labels, student) + alpha * T² * KL(s_t || s_s)` where
/// the CE uses the unsoftened student and both KL sides use temperature `T`.
/// The teacher logits are detached.
pub fn kd_total_loss<F: Element>(
    student_logits: &Tensor<F>,
    teacher_logits: &Tensor<F>,
    labels: &[usize],
    temperature: f64,
    alpha: f64,
) -> Result<Tensor<F>> {
    check_kd_params(temperature, alpha)?;
    let ce = cross_entropy(student_logits, labels)?;
    let kl = softened_kl(student_logits, teacher_logits, temperature)?;
    Ok(ce.mul_scalar(1.0 - alpha).add(&kl.mul_scalar(alpha * temperature * temperature))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64], s: &[usize]) -> Tensor<f64> {
        Tensor::from_f64(v, s).unwrap()
    }

    #[test]
    fn certain_prediction_has_no_loss() {
        let l = cross_entropy(&t(&[40.0, -40.0], &[1, 2]), &[0]).unwrap().item();
        assert!(l.abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        for c in [2, 5, 12] {
            let l = cross_entropy(&t(&vec![0.3; 2 * c], &[2, c]), &[0, c - 1]).unwrap().item();
            assert!((l - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn label_out_of_range() {
        let err = cross_entropy(&t(&[0.0, 0.0], &[1, 2]), &[2]).unwrap_err();
        assert!(matches!(err, Error::InvalidLabel { label: 2, num_classes: 2 }));
    }

    #[test]
    fn zero_teacher_mass_contributes_nothing() {
        let pt = t(&[1.0, 0.0], &[1, 2]);
        let ps = t(&[0.5, 0.5], &[1, 2]);
        let kl = kl_divergence(&pt, &ps).unwrap().item();
        assert!((kl - 2f64.ln()).abs() < 1e-15);
        let ps0 = t(&[1.0, 0.0], &[1, 2]);
        assert_eq!(kl_divergence(&pt, &ps0).unwrap().item(), 0.0);
    }

    #[test]
    fn unnormalised_rows_are_rejected() {
        let good = t(&[0.5, 0.5], &[1, 2]);
        let bad = t(&[0.5, 0.6], &[1, 2]);
        assert!(matches!(kl_divergence(&bad, &good), Err(Error::InvalidDistribution(_))));
        assert!(matches!(kl_divergence(&good, &bad), Err(Error::InvalidDistribution(_))));
        let negative = t(&[1.5, -0.5], &[1, 2]);
        assert!(matches!(kl_divergence(&negative, &good), Err(Error::InvalidDistribution(_))));
    }

    #[test]
    fn kd_parameters_are_validated() {
        let z = t(&[0.0, 1.0], &[1, 2]);
        assert!(kd_total_loss(&z, &z, &[0], 0.0, 0.5).is_err());
        assert!(kd_total_loss(&z, &z, &[0], 2.0, 1.5).is_err());
    }
}
