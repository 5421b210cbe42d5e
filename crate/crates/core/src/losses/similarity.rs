use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ClassLabel;

/// Similarities are clamped to `[EPS, 1 - EPS]` before entering a log.
pub const SIMILARITY_EPS: f64 = 1e-6;

fn row_norms(e: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    let norms = e.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if let Some((row, _)) = norms.iter().enumerate().find(|(_, n)| !(**n > 0.0) || !n.is_finite()) {
        return Err(Error::ZeroNormRow { row });
    }
    Ok(norms)
}

fn normalized(e: ArrayView2<'_, f64>, norms: &Array1<f64>) -> Array2<f64> {
    &e / &norms.view().insert_axis(Axis(1))
}

/// Pairwise cosine similarity of the rows of `e`, without clamping.
pub fn cosine_similarity(e: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let norms = row_norms(e)?;
    let unit = normalized(e, &norms);
    let mut s = unit.dot(&unit.t());
    // exact symmetry and unit diagonal
    let n = s.nrows();
    let data = s.as_slice_mut().expect("product is contiguous");
    for i in 0..n {
        data[i * n + i] = 1.0;
        for j in 0..i {
            data[j * n + i] = data[i * n + j];
        }
    }
    Ok(s)
}

/// Cosine similarity matrix clamped to `[SIMILARITY_EPS, 1 - SIMILARITY_EPS]`.
/// Negative cosines become `SIMILARITY_EPS`, i.e. maximally dissimilar.
pub fn similarity_matrix(e: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    Ok(cosine_similarity(e)?.mapv(|v| v.clamp(SIMILARITY_EPS, 1.0 - SIMILARITY_EPS)))
}

/// Gradient w.r.t. the embeddings of a loss on the clamped similarity matrix,
/// given the gradient w.r.t. that matrix. Clamped entries pass no gradient.
pub fn similarity_backward(e: ArrayView2<'_, f64>, grad_s: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = e.nrows();
    if grad_s.dim() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "similarity gradient is {:?}, expected ({n}, {n})",
            grad_s.dim()
        )));
    }
    let norms = row_norms(e)?;
    let unit = normalized(e, &norms);
    let raw = unit.dot(&unit.t());
    let mut passed = Array2::<f64>::zeros((n, n));
    Zip::from(&mut passed).and(&grad_s).and(&raw).for_each(|p, &g, &s| {
        if s > SIMILARITY_EPS && s < 1.0 - SIMILARITY_EPS {
            *p = g;
        }
    });
    passed.diag_mut().fill(0.0);
    let h = &passed + &passed.t();
    // d s_ij / d e_i = (u_j - s_ij u_i) / |e_i|
    let hu = h.dot(&unit);
    let coef = (&h * &raw).sum_axis(Axis(1));
    let mut grad = hu - &(&unit * &coef.insert_axis(Axis(1)));
    grad /= &norms.insert_axis(Axis(1));
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairLabel {
    Positive,
    Negative,
    NotSelected,
}

impl PairLabel {
    /// Binary target of a selected pair.
    pub fn target(self) -> Option<f64> {
        match self {
            PairLabel::Positive => Some(1.0),
            PairLabel::Negative => Some(0.0),
            PairLabel::NotSelected => None,
        }
    }
}

/// Symmetric `n × n` matrix of pair labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLabelMatrix {
    n: usize,
    entries: Vec<PairLabel>,
}

impl PairLabelMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> PairLabel) -> Self {
        let mut entries = vec![PairLabel::NotSelected; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                entries[i * n + j] = v;
                entries[j * n + i] = v;
            }
        }
        Self { n, entries }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> PairLabel {
        self.entries[i * self.n + j]
    }

    /// Number of selected off-diagonal ordered pairs.
    pub fn selected_pairs(&self) -> usize {
        (0..self.n)
            .flat_map(|i| (0..self.n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.get(i, j) != PairLabel::NotSelected)
            .count()
    }
}

/// Pairs with equal labels (neither unknown) are positive, pairs with
/// different labels negative, unknown-unknown pairs are not selected.
pub fn supervised_label_matrix(labels: &[ClassLabel]) -> PairLabelMatrix {
    PairLabelMatrix::from_fn(labels.len(), |i, j| {
        let (a, b) = (labels[i], labels[j]);
        if a.is_unknown() && b.is_unknown() {
            PairLabel::NotSelected
        } else if a == b {
            PairLabel::Positive
        } else {
            PairLabel::Negative
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLoss {
    pub value: f64,
    /// Gradient w.r.t. every entry of the similarity matrix.
    pub grad: Array2<f64>,
    /// Ordered off-diagonal pairs that entered the mean. Zero means the
    /// loss is vacuous.
    pub selected: usize,
}

/// Mean binary cross-entropy between pair labels and similarities over the
/// selected off-diagonal pairs.
pub fn sim_loss(labels: &PairLabelMatrix, s: ArrayView2<'_, f64>) -> Result<SimLoss> {
    let n = labels.len();
    if s.dim() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "similarity matrix is {:?}, label matrix is {n}x{n}",
            s.dim()
        )));
    }
    let selected = labels.selected_pairs();
    let mut grad = Array2::zeros((n, n));
    if selected == 0 {
        log::debug!("similarity loss has no selected pairs");
        return Ok(SimLoss { value: 0.0, grad, selected });
    }
    let scale = 1.0 / selected as f64;
    let mut total = 0.0;
    // labels and similarities are symmetric: visit each unordered pair once
    let s = s.as_standard_layout();
    let sv = s.as_slice().expect("standard layout");
    for i in 0..n {
        for j in i + 1..n {
            let Some(m) = labels.entries[i * n + j].target() else { continue };
            let v = sv[i * n + j];
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::SimilarityOutOfRange { row: i, col: j, value: v });
            }
            let (term, g) = if m == 1.0 {
                (-v.ln(), -1.0 / v)
            } else {
                (-(1.0 - v).ln(), 1.0 / (1.0 - v))
            };
            total += term;
            grad[[i, j]] = scale * g;
            grad[[j, i]] = scale * g;
        }
    }
    Ok(SimLoss {
        value: 2.0 * total * scale,
        grad,
        selected,
    })
}

/// Linear upper/lower similarity thresholds driven by the adaptive
/// parameter λ: `high(λ) = high0 + high_slope·λ`, `low(λ) = low0 + low_slope·λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptiveThresholds {
    pub high0: f64,
    pub high_slope: f64,
    pub low0: f64,
    pub low_slope: f64,
}

impl Default for AdaptiveThresholds {
    fn default() -> Self {
        Self {
            high0: 0.95,
            high_slope: -1.0,
            low0: 0.455,
            low_slope: 0.1,
        }
    }
}

impl AdaptiveThresholds {
    pub fn high(&self, lambda: f64) -> f64 {
        self.high0 + self.high_slope * lambda
    }

    pub fn low(&self, lambda: f64) -> f64 {
        self.low0 + self.low_slope * lambda
    }

    /// Penalty on the width of the excluded band, `high(λ) - low(λ)`.
    pub fn penalty(&self, lambda: f64) -> f64 {
        self.high(lambda) - self.low(lambda)
    }

    /// d penalty / dλ (constant for linear thresholds).
    pub fn penalty_slope(&self) -> f64 {
        self.high_slope - self.low_slope
    }

    pub fn is_terminated(&self, lambda: f64) -> bool {
        self.high(lambda) <= self.low(lambda)
    }

    fn check_active(&self, lambda: f64) -> Result<()> {
        if self.is_terminated(lambda) {
            return Err(Error::SelfSupervisionTerminated {
                lambda,
                high: self.high(lambda),
                low: self.low(lambda),
            });
        }
        Ok(())
    }
}

/// Self-labels for unknown-unknown pairs: +1 above the upper threshold, -1
/// below the lower one, 0 in between and for every other pair.
pub fn self_label_matrix(
    s: ArrayView2<'_, f64>,
    labels: &[ClassLabel],
    lambda: f64,
    thresholds: &AdaptiveThresholds,
) -> Result<Array2<i8>> {
    thresholds.check_active(lambda)?;
    let n = labels.len();
    if s.dim() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "similarity matrix is {:?} for {n} labels",
            s.dim()
        )));
    }
    let (high, low) = (thresholds.high(lambda), thresholds.low(lambda));
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        if !(labels[i].is_unknown() && labels[j].is_unknown()) {
            0
        } else if s[[i, j]] > high {
            1
        } else if s[[i, j]] < low {
            -1
        } else {
            0
        }
    }))
}

/// Ground-truth pair labels merged with the self-labels of unknown pairs.
pub fn combined_label_matrix(self_labels: ArrayView2<'_, i8>, labels: &[ClassLabel]) -> Result<PairLabelMatrix> {
    let n = labels.len();
    if self_labels.dim() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "self-label matrix is {:?} for {n} labels",
            self_labels.dim()
        )));
    }
    let supervised = supervised_label_matrix(labels);
    Ok(PairLabelMatrix::from_fn(n, |i, j| match self_labels[[i, j]] {
        v if v > 0 => PairLabel::Positive,
        v if v < 0 => PairLabel::Negative,
        _ => supervised.get(i, j),
    }))
}

/// Similarity loss over the combined label matrix plus the threshold-band
/// penalty. The penalty does not depend on the similarities.
pub fn self_sim_loss(
    labels: &PairLabelMatrix,
    s: ArrayView2<'_, f64>,
    lambda: f64,
    thresholds: &AdaptiveThresholds,
) -> Result<SimLoss> {
    let mut out = sim_loss(labels, s)?;
    out.value += thresholds.penalty(lambda);
    Ok(out)
}

/// One gradient step on the penalty: `λ - η · d penalty / dλ`.
pub fn update_lambda(lambda: f64, eta: f64, thresholds: &AdaptiveThresholds) -> Result<f64> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::InvalidConfig(format!("lambda learning rate {eta} must be >= 0")));
    }
    Ok(lambda - eta * thresholds.penalty_slope())
}

/// Similarity loss evaluated directly on embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSimLoss {
    pub value: f64,
    /// Gradient w.r.t. the embeddings.
    pub grad: Array2<f64>,
    pub selected: usize,
}

/// `sim_loss` on the supervised label matrix, or `self_sim_loss` on the
/// combined one when `self_supervision = Some((λ, thresholds))`, together
/// with the gradient w.r.t. `e`. One pass over unordered pairs with no
/// `n × n` intermediates.
pub fn embedding_sim_loss(
    e: ArrayView2<'_, f64>,
    labels: &[ClassLabel],
    self_supervision: Option<(f64, &AdaptiveThresholds)>,
) -> Result<EmbeddingSimLoss> {
    let (n, d) = e.dim();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} embeddings for {} labels", labels.len())));
    }
    let band = match self_supervision {
        Some((lambda, t)) => {
            t.check_active(lambda)?;
            Some((t.high(lambda), t.low(lambda)))
        }
        None => None,
    };
    let norms = row_norms(e)?;
    let unit = normalized(e, &norms);
    let u = unit.as_slice().expect("fresh array is contiguous");
    let mut acc = vec![0.0; n * d];
    let mut total = 0.0;
    let mut selected = 0;
    for i in 0..n {
        for j in i + 1..n {
            let raw: f64 = (0..d).map(|k| u[i * d + k] * u[j * d + k]).sum();
            let v = raw.clamp(SIMILARITY_EPS, 1.0 - SIMILARITY_EPS);
            let (a, b) = (labels[i], labels[j]);
            let positive = if a.is_unknown() && b.is_unknown() {
                match band {
                    Some((high, _)) if v > high => true,
                    Some((_, low)) if v < low => false,
                    _ => continue,
                }
            } else {
                a == b
            };
            selected += 2;
            let (term, g) = if positive {
                (-v.ln(), -1.0 / v)
            } else {
                (-(1.0 - v).ln(), 1.0 / (1.0 - v))
            };
            total += term;
            if raw > SIMILARITY_EPS && raw < 1.0 - SIMILARITY_EPS {
                for k in 0..d {
                    let (ui, uj) = (u[i * d + k], u[j * d + k]);
                    acc[i * d + k] += g * (uj - raw * ui);
                    acc[j * d + k] += g * (ui - raw * uj);
                }
            }
        }
    }
    let penalty = match self_supervision {
        Some((lambda, t)) => t.penalty(lambda),
        None => 0.0,
    };
    if selected == 0 {
        return Ok(EmbeddingSimLoss {
            value: penalty,
            grad: Array2::zeros((n, d)),
            selected,
        });
    }
    let scale = 2.0 / selected as f64;
    let grad = Array2::from_shape_fn((n, d), |(i, k)| scale * acc[i * d + k] / norms[i]);
    Ok(EmbeddingSimLoss {
        value: scale * total + penalty,
        grad,
        selected,
    })
}
