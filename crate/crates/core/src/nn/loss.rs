use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean over rows of `-ln p[label]`, with `p` floored at [`PROB_FLOOR`].
///
/// `probs` is a row-major `labels.len() x classes` matrix of probability rows.
pub fn cross_entropy(probs: &[f64], classes: usize, labels: &[usize]) -> Result<f64> {
    if classes == 0 || probs.len() != labels.len() * classes {
        return Err(Error::Shape(format!(
            "{} probabilities for {} labels over {classes} classes",
            probs.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (row, &label) in probs.chunks_exact(classes).zip(labels) {
        if label >= classes {
            return Err(Error::Data(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        total -= row[label].max(PROB_FLOOR).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Gradient of `scale * sum_rows CE` with respect to the pre-softmax logits: `scale * (p - y)`.
pub(crate) fn softmax_ce_grad(
    probs: &[f64],
    classes: usize,
    labels: &[usize],
    scale: f64,
) -> Vec<f64> {
    let mut d = probs.to_vec();
    for (row, &label) in d.chunks_exact_mut(classes).zip(labels) {
        row[label] -= 1.0;
        row.iter_mut().for_each(|v| *v *= scale);
    }
    d
}

pub fn one_hot(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; labels.len() * classes];
    for (row, &label) in out.chunks_exact_mut(classes).zip(labels) {
        row[label] = 1.0;
    }
    out
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
