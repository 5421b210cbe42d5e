use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::losses::LossGrad;
use crate::types::{ClassLabel, LabelSpace};

/// Logit written into every unknown slot except the most probable one before
/// the softmax of a pseudo-unknown row.
pub const MASK_LOGIT: f64 = -1e4;

/// Numerically stable softmax of every row.
pub fn softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Most probable unknown slot of a logit row; ties go to the lowest slot.
pub fn argmax_unknown(row: ArrayView1<'_, f64>, space: &LabelSpace) -> Option<usize> {
    let start = space.known as usize;
    let end = space.total() as usize;
    (start..end).fold(None, |best, j| match best {
        Some(b) if row[b] >= row[j] => Some(b),
        _ => Some(j),
    })
}

/// Unknown-aware classification loss with its gradient w.r.t. the logits.
///
/// Logit rows are laid out as `[known classes | unknown slots | background]`.
/// Known and background rows use ordinary softmax cross-entropy. A row
/// labeled unknown is a pseudo-label: only its most probable unknown slot is
/// supervised, the other unknown slots are masked to [`MASK_LOGIT`] so they
/// drop out of the softmax and receive no gradient. The loss is the mean over
/// rows.
pub fn ucls_loss(
    logits: ArrayView2<'_, f64>,
    labels: &[ClassLabel],
    space: &LabelSpace,
) -> Result<LossGrad> {
    let (n, width) = logits.dim();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if width != space.logit_width() {
        return Err(Error::DimensionMismatch(format!(
            "logit width {width} != {} classes + background",
            space.total()
        )));
    }
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(((r, c), v)) = logits.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!("logit ({r}, {c}) = {v}")));
    }

    let scale = 1.0 / n as f64;
    let mut grad = Array2::zeros((n, width));
    let mut total = 0.0;
    for (i, label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let (target, masked) = match label {
            ClassLabel::Unknown(_) => {
                let best = argmax_unknown(row, space).ok_or_else(|| {
                    Error::InvalidConfig("pseudo-unknown row without unknown slots".into())
                })?;
                let mut masked = row.to_owned();
                for j in space.known as usize..space.total() as usize {
                    if j != best {
                        masked[j] = MASK_LOGIT;
                    }
                }
                (best, Some(masked))
            }
            other => (space.slot(*other)?, None),
        };
        let z = masked.as_ref().map_or(row, |m| m.view());
        let max = z.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - z[target];

        let mut g = grad.row_mut(i);
        for j in 0..width {
            let is_masked = masked.is_some()
                && j != target
                && (space.known as usize..space.total() as usize).contains(&j);
            if is_masked {
                continue;
            }
            let p = (z[j] - lse).exp();
            g[j] = scale * (p - if j == target { 1.0 } else { 0.0 });
        }
    }
    Ok(LossGrad {
        value: total * scale,
        grad,
    })
}

/// Row-wise softmax backward: gradient w.r.t. logits given the gradient
/// w.r.t. the probabilities.
pub fn softmax_backward(probs: ArrayView2<'_, f64>, grad_probs: ArrayView2<'_, f64>) -> Array2<f64> {
    let dot = (&probs * &grad_probs).sum_axis(Axis(1)).insert_axis(Axis(1));
    &probs * &(&grad_probs - &dot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    const SPACE: LabelSpace = LabelSpace { known: 2, unknown: 3 };

    #[test]
    fn confident_known_row_costs_nothing() {
        let logits = array![[60.0, 0.0, 0.0, 0.0, 0.0, 0.0]];
        let l = ucls_loss(logits.view(), &[ClassLabel::Known(0)], &SPACE).unwrap();
        assert!(l.value < 1e-20);
    }

    #[test]
    fn pseudo_row_uses_max_unknown_probability() {
        // known and background logits are 0; the surviving unknown logit u
        // satisfies e^u / (3 + e^u) = e^-1
        let u = (3.0 / (std::f64::consts::E - 1.0)).ln();
        let logits = array![[0.0, 0.0, u - 5.0, u, u - 2.0, 0.0]];
        let l = ucls_loss(logits.view(), &[ClassLabel::Unknown(2)], &SPACE).unwrap();
        assert!((l.value - 1.0).abs() < 1e-12, "{}", l.value);
        // masked slots get no gradient
        assert_eq!(l.grad[[0, 2]], 0.0);
        assert_eq!(l.grad[[0, 4]], 0.0);
        assert!(l.grad[[0, 3]] < 0.0);
    }

    #[test]
    fn rows_are_averaged() {
        let logits = array![[0.0; 6], [0.0; 6]];
        let one = ucls_loss(logits.slice(ndarray::s![0..1, ..]), &[ClassLabel::Background], &SPACE).unwrap();
        let two = ucls_loss(logits.view(), &[ClassLabel::Background, ClassLabel::Known(1)], &SPACE).unwrap();
        assert!((one.value - 6f64.ln()).abs() < 1e-12);
        assert!((two.value - 6f64.ln()).abs() < 1e-12);
        assert!((two.grad[[0, 5]] - 0.5 * (1.0 / 6.0 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let logits = Array2::<f64>::zeros((0, 6));
        assert_eq!(ucls_loss(logits.view(), &[], &SPACE), Err(Error::EmptyBatch));
        let logits = Array2::<f64>::zeros((1, 5));
        assert!(ucls_loss(logits.view(), &[ClassLabel::Background], &SPACE).is_err());
        let logits = array![[f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0]];
        assert!(ucls_loss(logits.view(), &[ClassLabel::Background], &SPACE).is_err());
        let logits = Array2::<f64>::zeros((1, 3));
        let no_unknown = LabelSpace::new(2, 0);
        assert!(ucls_loss(logits.view(), &[ClassLabel::Unknown(2)], &no_unknown).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax_rows(array![[1000.0, -3.0, 2.0], [0.1, 0.2, 0.3]].view());
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        let row = array![9.0, 9.0, 1.0, 1.0, 0.5, 9.0];
        assert_eq!(argmax_unknown(row.view(), &SPACE), Some(2));
    }
}
