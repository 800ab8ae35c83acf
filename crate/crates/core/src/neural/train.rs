use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::loss_terms;
use super::{batch_gradients, Adam, AdamConfig, LabelMatrix, LossBreakdown, LossWeights, ModelError, SegModel};
use crate::eval::{decisions_from_logits, frame_counts, F1Report, FrameCounts};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub lr: f64,
    pub batch_size: usize,
    pub segment_seconds: f64,
    pub epochs: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            lr: 1e-3,
            batch_size: 16,
            segment_seconds: 4.0,
            epochs: 20,
            seed: 0,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.weights.validate()?;
        if !(self.lr > 0.0) || self.batch_size == 0 || !(self.segment_seconds > 0.0) {
            return Err(ModelError::Config(format!(
                "need lr > 0, batch_size >= 1, segment_seconds > 0; got lr={}, batch={}, segment={}",
                self.lr, self.batch_size, self.segment_seconds
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(ModelError::Config(format!(
                "threshold must be in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// One annotated clip: features `S`, reconstruction target `X`, labels.
#[derive(Debug, Clone)]
pub struct Example<T> {
    pub id: String,
    pub features: Array2<T>,
    pub target: Array2<T>,
    pub labels: LabelMatrix,
    pub hop_seconds: f64,
}

impl<T: Scalar> Example<T> {
    /// Aligns the three streams. A one-frame length difference is truncated
    /// away; anything larger is an error.
    pub fn new(
        id: impl Into<String>,
        features: Array2<T>,
        target: Array2<T>,
        labels: LabelMatrix,
        hop_seconds: f64,
    ) -> Result<Self, ModelError> {
        let id = id.into();
        let lens = [features.ncols(), target.ncols(), labels.frames()];
        let min = *lens.iter().min().unwrap();
        let max = *lens.iter().max().unwrap();
        if max - min > 1 {
            return Err(ModelError::Dimension(format!(
                "{id}: features/spectrogram/labels have {}/{}/{} frames",
                lens[0], lens[1], lens[2]
            )));
        }
        if min == 0 {
            return Err(ModelError::Dimension(format!("{id}: no frames")));
        }
        Ok(Self {
            features: features.slice(s![.., ..min]).to_owned(),
            target: target.slice(s![.., ..min]).to_owned(),
            labels: labels.slice_frames(0, min),
            id,
            hop_seconds,
        })
    }

    pub fn frames(&self) -> usize {
        self.features.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: usize,
    /// Mean over the epoch's training steps.
    pub train: LossBreakdown,
    pub dev: Option<LossBreakdown>,
    pub dev_f1: Vec<Option<f64>>,
    pub dev_macro_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters from the epoch with the best dev macro-F1 (last epoch when
    /// there is no dev set).
    pub best: SegModel<T>,
    pub last: SegModel<T>,
    pub best_epoch: usize,
    pub epochs: Vec<EpochMetrics>,
    pub step_losses: Vec<LossBreakdown>,
}

struct Chunk {
    example: usize,
    start: usize,
    labels: LabelMatrix,
    len: usize,
}

fn chunk_examples<T: Scalar>(examples: &[Example<T>], seg_frames: usize) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        let t = ex.frames();
        if t <= seg_frames {
            chunks.push(Chunk {
                example: i,
                start: 0,
                labels: ex.labels.clone(),
                len: t,
            });
            continue;
        }
        for start in (0..=t - seg_frames).step_by(seg_frames) {
            chunks.push(Chunk {
                example: i,
                start,
                labels: ex.labels.slice_frames(start, seg_frames),
                len: seg_frames,
            });
        }
    }
    chunks
}

/// Mean loss and pooled frame-level F1 over whole clips.
pub fn evaluate_examples<T: Scalar>(
    model: &SegModel<T>,
    examples: &[Example<T>],
    weights: &LossWeights,
    threshold: f64,
) -> Result<(LossBreakdown, F1Report), ModelError> {
    let mut loss = LossBreakdown::default();
    let mut counts: Vec<Option<FrameCounts>> = vec![None; model.arch.classes];
    if examples.is_empty() {
        return Ok((loss, F1Report::from_counts(&counts)));
    }
    let inv = 1.0 / examples.len() as f64;
    for ex in examples {
        let out = model.forward(ex.features.view())?;
        let l = loss_terms(model, &out.h, &out.logits, ex.target.view(), &ex.labels, weights)?;
        loss.accumulate(&l, inv);
        let dec = decisions_from_logits(out.logits.view(), threshold, ex.hop_seconds);
        let c = frame_counts(dec.binary.view(), &ex.labels)
            .map_err(|e| ModelError::Dimension(e.to_string()))?;
        for (acc, new) in counts.iter_mut().zip(c) {
            if let Some(n) = new {
                *acc = Some(acc.unwrap_or_default() + n);
            }
        }
    }
    Ok((loss, F1Report::from_counts(&counts)))
}

/// Mini-batch Adam on fixed-length chunks of the training clips, with
/// per-epoch dev evaluation and best-dev model retention.
pub fn train<T: Scalar>(
    model: SegModel<T>,
    train_set: &[Example<T>],
    dev_set: &[Example<T>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>, ModelError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let hop = train_set[0].hop_seconds;
    let seg_frames = ((cfg.segment_seconds / hop).round() as usize).max(1);
    let chunks = chunk_examples(train_set, seg_frames);
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut model = model;
    let mut adam = Adam::new(&model.params, AdamConfig::default());
    let lr = T::lit(cfg.lr);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step_losses = Vec::new();
    let mut best: Option<(f64, usize, SegModel<T>)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = LossBreakdown::default();
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        let inv = 1.0 / batches.len() as f64;
        for batch in &batches {
            let views: Vec<(ArrayView2<T>, ArrayView2<T>, &LabelMatrix)> = batch
                .iter()
                .map(|&ci| {
                    let c = &chunks[ci];
                    let ex = &train_set[c.example];
                    let cols = s![.., c.start..c.start + c.len];
                    (ex.features.slice(cols), ex.target.slice(cols), &c.labels)
                })
                .collect();
            let (loss, grads) = batch_gradients(&model, &views, &cfg.weights)?;
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss(step_losses.len() + 1));
            }
            adam.step(&mut model.params, &grads, lr);
            epoch_loss.accumulate(&loss, inv);
            step_losses.push(loss);
        }

        let (dev, dev_f1, dev_macro_f1) = if dev_set.is_empty() {
            (None, Vec::new(), None)
        } else {
            let (loss, report) = evaluate_examples(&model, dev_set, &cfg.weights, cfg.threshold)?;
            (Some(loss), report.f1_values(), report.macro_f1())
        };
        log::info!(
            "epoch {epoch}: train loss {:.4} (bce {:.4}, nmf {:.4}, l1 {:.4}), dev macro-F1 {:?}",
            epoch_loss.total,
            epoch_loss.bce,
            epoch_loss.nmf,
            epoch_loss.l1,
            dev_macro_f1
        );
        if let Some(score) = dev_macro_f1 {
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, epoch, model.clone()));
            }
        }
        epochs.push(EpochMetrics {
            epoch,
            steps: batches.len(),
            train: epoch_loss,
            dev,
            dev_f1,
            dev_macro_f1,
        });
    }

    let last_epoch = cfg.epochs;
    let (best_epoch, best_model) = match best {
        Some((_, e, m)) => (e, m),
        None => (last_epoch, model.clone()),
    };
    Ok(TrainOutcome {
        best: best_model,
        last: model,
        best_epoch,
        epochs,
        step_losses,
    })
}
