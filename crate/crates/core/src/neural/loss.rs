use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use super::{ModelError, SegModel};
use crate::scalar::{sigmoid, Scalar};

/// Binary frame labels `C × T` plus a per-class annotation mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    pub values: Array2<u8>,
    /// `mask[c]` is true when class `c` is annotated for this sample.
    pub mask: Vec<bool>,
}

impl LabelMatrix {
    pub fn new(values: Array2<u8>, mask: Vec<bool>) -> Result<Self, ModelError> {
        if mask.len() != values.nrows() {
            return Err(ModelError::Labels(format!(
                "mask has {} entries for {} classes",
                mask.len(),
                values.nrows()
            )));
        }
        if let Some(v) = values.iter().find(|&&v| v > 1) {
            return Err(ModelError::Labels(format!("label value {v} is not binary")));
        }
        Ok(Self { values, mask })
    }

    pub fn fully_annotated(values: Array2<u8>) -> Result<Self, ModelError> {
        let c = values.nrows();
        Self::new(values, vec![true; c])
    }

    pub fn classes(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }

    pub fn annotated_cells(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count() * self.frames()
    }

    /// Frames `[start, start + len)`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Self {
        Self {
            values: self
                .values
                .slice(ndarray::s![.., start..start + len])
                .to_owned(),
            mask: self.mask.clone(),
        }
    }
}

/// Weights of the classification, reconstruction and sparsity terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: 1.0,
            gamma: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = [self.alpha, self.beta, self.gamma]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0);
        if !ok || self.alpha + self.beta + self.gamma <= 0.0 {
            return Err(ModelError::Config(format!(
                "loss weights must be non-negative with a positive sum, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn combine(&self, bce: f64, nmf: f64, l1: f64) -> f64 {
        self.alpha * bce + self.beta * nmf + self.gamma * l1
    }
}

/// Unweighted loss terms and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub bce: f64,
    pub nmf: f64,
    pub l1: f64,
}

impl LossBreakdown {
    pub fn new(weights: &LossWeights, bce: f64, nmf: f64, l1: f64) -> Self {
        Self {
            total: weights.combine(bce, nmf, l1),
            bce,
            nmf,
            l1,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.bce.is_finite() && self.nmf.is_finite() && self.l1.is_finite()
    }

    pub(crate) fn accumulate(&mut self, other: &Self, weight: f64) {
        self.total += weight * other.total;
        self.bce += weight * other.bce;
        self.nmf += weight * other.nmf;
        self.l1 += weight * other.l1;
    }
}

fn check_label_shape<T>(logits: &ArrayView2<T>, labels: &LabelMatrix) -> Result<(), ModelError> {
    if logits.dim() != labels.values.dim() {
        return Err(ModelError::Dimension(format!(
            "logits are {:?}, labels are {:?}",
            logits.dim(),
            labels.values.dim()
        )));
    }
    Ok(())
}

/// Stable per-cell BCE `max(l,0) − l·y + ln(1 + e^{−|l|})`.
#[inline]
fn bce_cell<T: Scalar>(logit: T, y: T) -> T {
    logit.max(T::zero()) - logit * y + (-logit.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy over annotated cells; zero when nothing is
/// annotated.
pub fn bce_masked<T: Scalar>(logits: ArrayView2<T>, labels: &LabelMatrix) -> Result<T, ModelError> {
    check_label_shape(&logits, labels)?;
    let n = labels.annotated_cells();
    if n == 0 {
        return Ok(T::zero());
    }
    let mut acc = T::zero();
    for (c, row) in logits.rows().into_iter().enumerate() {
        if !labels.mask[c] {
            continue;
        }
        for (&l, &y) in row.iter().zip(labels.values.row(c)) {
            acc = acc + bce_cell(l, T::lit(y as f64));
        }
    }
    Ok(acc / T::from_usize_lossy(n))
}

/// `scale · ∂BCE/∂logits`; masked rows are exactly zero.
pub(crate) fn bce_grad<T: Scalar>(logits: &Array2<T>, labels: &LabelMatrix, scale: T) -> Array2<T> {
    let mut grad = Array2::zeros(logits.raw_dim());
    let n = labels.annotated_cells();
    if n == 0 {
        return grad;
    }
    let factor = scale / T::from_usize_lossy(n);
    for (c, mut row) in grad.rows_mut().into_iter().enumerate() {
        if !labels.mask[c] {
            continue;
        }
        Zip::from(&mut row)
            .and(logits.row(c))
            .and(labels.values.row(c))
            .for_each(|g, &l, &y| *g = factor * (sigmoid(l) - T::lit(y as f64)));
    }
    grad
}

pub(crate) fn check_target<T: Scalar>(model: &SegModel<T>, x: &ArrayView2<T>, frames: usize) -> Result<(), ModelError> {
    let (f, t) = x.dim();
    if f != model.dictionary.freq_bins() || t != frames {
        return Err(ModelError::Dimension(format!(
            "spectrogram is {f}×{t}, expected {}×{frames}",
            model.dictionary.freq_bins()
        )));
    }
    Ok(())
}

pub(crate) fn loss_terms<T: Scalar>(
    model: &SegModel<T>,
    h: &Array2<T>,
    logits: &Array2<T>,
    x: ArrayView2<T>,
    labels: &LabelMatrix,
    weights: &LossWeights,
) -> Result<LossBreakdown, ModelError> {
    let bce = bce_masked(logits.view(), labels)?.as_f64();
    let wh = model.dictionary.values.dot(h);
    let mut nmf = T::zero();
    Zip::from(&x).and(&wh).for_each(|&a, &b| {
        let d = a - b;
        nmf = nmf + d * d;
    });
    let l1 = h.sum();
    Ok(LossBreakdown::new(weights, bce, nmf.as_f64(), l1.as_f64()))
}

/// `α·BCE + β·‖X − WH‖² + γ·‖H‖₁` for one sample, with each term.
pub fn total_loss<T: Scalar>(
    model: &SegModel<T>,
    s: ArrayView2<T>,
    x: ArrayView2<T>,
    labels: &LabelMatrix,
    weights: &LossWeights,
) -> Result<LossBreakdown, ModelError> {
    let out = model.forward(s)?;
    check_target(model, &x, out.h.ncols())?;
    loss_terms(model, &out.h, &out.logits, x, labels, weights)
}
