use mvkd_tensor::{no_grad, Element};

use crate::data::{Dataset, Split};
use crate::error::Result;
use crate::models::Model;

/// Index of the largest value; the first one on ties.
pub fn argmax<F: Element>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `(true labels, predicted labels)` for every sample of `split`, in entry order.
pub fn predict(model: &Model, data: &Dataset, split: Split, batch_size: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for batch in data.batches_in_order(split, batch_size)? {
        let logits = no_grad(|| model.forward(&batch.images, false))?;
        let c = logits.shape()[1];
        pred.extend(logits.data().chunks(c).map(argmax));
        truth.extend(batch.labels);
    }
    Ok((truth, pred))
}

/// Fraction of `split` classified correctly.
pub fn accuracy(model: &Model, data: &Dataset, split: Split, batch_size: usize) -> Result<f64> {
    let (truth, pred) = predict(model, data, split, batch_size)?;
    let correct = truth.iter().zip(&pred).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / truth.len() as f64)
}
