//! Frame decisions, segment extraction and frame-level F1 scoring.

use std::fmt::Write as _;
use std::ops::Add;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neural::{LabelMatrix, ModelError, SegModel};
use crate::scalar::{sigmoid, Scalar};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
const Z95: f64 = 1.96;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("threshold must be in (0, 1), got {0}")]
    Threshold(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Sigmoid probabilities and their thresholded decisions, `C × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDecisions {
    pub probs: Array2<f64>,
    pub binary: Array2<u8>,
    pub hop_seconds: f64,
}

/// `binary = probs > threshold`, strictly.
pub fn decisions_from_logits<T: Scalar>(logits: ArrayView2<T>, threshold: f64, hop_seconds: f64) -> FrameDecisions {
    let probs = logits.mapv(|l| sigmoid(l).as_f64());
    let binary = probs.mapv(|p| (p > threshold) as u8);
    FrameDecisions {
        probs,
        binary,
        hop_seconds,
    }
}

pub fn predict_frames<T: Scalar>(
    model: &SegModel<T>,
    s: ArrayView2<T>,
    threshold: f64,
    hop_seconds: f64,
) -> Result<FrameDecisions, EvalError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(EvalError::Threshold(threshold));
    }
    let out = model.forward(s)?;
    Ok(decisions_from_logits(out.logits.view(), threshold, hop_seconds))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub onset: f64,
    pub offset: f64,
    pub class: usize,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }
}

/// Sorted, non-overlapping segments for each class.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SegmentList {
    pub per_class: Vec<Vec<Segment>>,
}

impl SegmentList {
    pub fn is_empty(&self) -> bool {
        self.per_class.iter().all(|c| c.is_empty())
    }

    pub fn len(&self) -> usize {
        self.per_class.iter().map(|c| c.len()).sum()
    }

    /// `SEG <file-id> <onset> <duration> <class>` lines ordered by class then
    /// onset.
    pub fn to_lines(&self, file_id: &str, class_names: &[String]) -> String {
        let mut out = String::new();
        for (c, segs) in self.per_class.iter().enumerate() {
            let name = class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
            for seg in segs {
                let _ = writeln!(
                    out,
                    "SEG {file_id} {:.3} {:.3} {name}",
                    seg.onset,
                    seg.duration()
                );
            }
        }
        out
    }
}

/// Maximal runs of 1-frames become `[t·hop, (t+len)·hop)`; runs shorter than
/// `min_dur` seconds are dropped.
pub fn frames_to_segments(binary: ArrayView2<u8>, hop_seconds: f64, min_dur: f64) -> SegmentList {
    let mut per_class = Vec::with_capacity(binary.nrows());
    for (c, row) in binary.rows().into_iter().enumerate() {
        let mut segs = Vec::new();
        let mut start = None;
        let t_len = row.len();
        for t in 0..=t_len {
            let on = t < t_len && row[t] == 1;
            match (on, start) {
                (true, None) => start = Some(t),
                (false, Some(s)) => {
                    let seg = Segment {
                        onset: s as f64 * hop_seconds,
                        offset: t as f64 * hop_seconds,
                        class: c,
                    };
                    // tolerance absorbs hop rounding, e.g. 3·0.02 vs 0.06
                    if (t - s) as f64 * hop_seconds + 1e-9 >= min_dur {
                        segs.push(seg);
                    }
                    start = None;
                }
                _ => {}
            }
        }
        per_class.push(segs);
    }
    SegmentList { per_class }
}

/// Inverse of [`frames_to_segments`] with `min_dur = 0`.
pub fn rasterize(segments: &SegmentList, frames: usize, hop_seconds: f64) -> Array2<u8> {
    let mut out = Array2::zeros((segments.per_class.len(), frames));
    for (c, segs) in segments.per_class.iter().enumerate() {
        for seg in segs {
            let a = (seg.onset / hop_seconds).round() as usize;
            let b = ((seg.offset / hop_seconds).round() as usize).min(frames);
            for t in a..b {
                out[[c, t]] = 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FrameCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl FrameCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl Add for FrameCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Normal-approximation 95% half-width, `1.96·sqrt(f1(1−f1)/N)`.
    pub ci95: f64,
    pub n: u64,
    pub counts: FrameCounts,
}

impl ClassScore {
    pub fn from_counts(counts: FrameCounts) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(counts.tp, counts.tp + counts.fp);
        let recall = ratio(counts.tp, counts.tp + counts.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let n = counts.total();
        let ci95 = if n == 0 {
            0.0
        } else {
            Z95 * (f1 * (1.0 - f1) / n as f64).sqrt()
        };
        Self {
            precision,
            recall,
            f1,
            ci95,
            n,
            counts,
        }
    }
}

/// Per-class scores; `None` marks a class with no annotated frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub classes: Vec<Option<ClassScore>>,
}

impl F1Report {
    pub fn from_counts(counts: &[Option<FrameCounts>]) -> Self {
        Self {
            classes: counts
                .iter()
                .map(|c| c.filter(|c| c.total() > 0).map(ClassScore::from_counts))
                .collect(),
        }
    }

    pub fn f1_values(&self) -> Vec<Option<f64>> {
        self.classes.iter().map(|c| c.map(|s| s.f1)).collect()
    }

    /// Mean F1 over defined classes.
    pub fn macro_f1(&self) -> Option<f64> {
        let defined: Vec<f64> = self.classes.iter().flatten().map(|s| s.f1).collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    }

    /// `class,precision,recall,f1,ci95,N`; undefined classes are written with
    /// empty fields.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("class,precision,recall,f1,ci95,N\n");
        for (c, score) in self.classes.iter().enumerate() {
            let name = class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
            match score {
                Some(s) => {
                    let _ = writeln!(
                        out,
                        "{name},{:.6},{:.6},{:.6},{:.6},{}",
                        s.precision, s.recall, s.f1, s.ci95, s.n
                    );
                }
                None => {
                    let _ = writeln!(out, "{name},,,,,0");
                }
            }
        }
        out
    }
}

/// Confusion counts per class over annotated frames.
pub fn frame_counts(binary: ArrayView2<u8>, reference: &LabelMatrix) -> Result<Vec<Option<FrameCounts>>, EvalError> {
    if binary.dim() != reference.values.dim() {
        return Err(EvalError::Dimension(format!(
            "predictions are {:?}, reference is {:?}",
            binary.dim(),
            reference.values.dim()
        )));
    }
    Ok(binary
        .rows()
        .into_iter()
        .zip(reference.values.rows())
        .zip(&reference.mask)
        .map(|((pred, truth), &annotated)| {
            annotated.then(|| {
                let mut c = FrameCounts::default();
                for (&p, &y) in pred.iter().zip(truth.iter()) {
                    match (p == 1, y == 1) {
                        (true, true) => c.tp += 1,
                        (true, false) => c.fp += 1,
                        (false, true) => c.fn_ += 1,
                        (false, false) => c.tn += 1,
                    }
                }
                c
            })
        })
        .collect())
}

pub fn f1_with_ci(binary: ArrayView2<u8>, reference: &LabelMatrix) -> Result<F1Report, EvalError> {
    Ok(F1Report::from_counts(&frame_counts(binary, reference)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn strict_threshold_and_saturation() {
        let d = decisions_from_logits(array![[0.0f64, 10.0, -10.0]].view(), 0.5, 0.02);
        assert_eq!(d.probs[[0, 0]], 0.5);
        assert_eq!(d.binary, array![[0u8, 1, 0]]);
    }

    #[test]
    fn decisions_match_elementwise_oracle() {
        let logits = array![[0.3f32, -0.2, 1.5], [-4.0, 0.01, 0.0]];
        let d = decisions_from_logits(logits.view(), 0.6, 0.02);
        for ((c, t), &l) in logits.indexed_iter() {
            let p = 1.0 / (1.0 + (-(l as f64)).exp());
            assert!((d.probs[[c, t]] - p).abs() < 1e-7);
            assert_eq!(d.binary[[c, t]], (p > 0.6) as u8);
        }
    }

    #[test]
    fn one_run_becomes_one_segment() {
        let segs = frames_to_segments(array![[0u8, 1, 1, 1, 0]].view(), 0.02, 0.0);
        assert_eq!(segs.per_class[0].len(), 1);
        let s = segs.per_class[0][0];
        assert!((s.onset - 0.02).abs() < 1e-12 && (s.offset - 0.08).abs() < 1e-12);
        assert!(frames_to_segments(array![[0u8, 0, 0]].view(), 0.02, 0.0).is_empty());
    }

    #[test]
    fn min_duration_brute_force_over_length_three_patterns() {
        let hop = 0.02;
        for min_dur in [0.0, 0.03, 0.04, 0.05, 0.07] {
            for bits in 0u8..8 {
                let frames: Vec<u8> = (0..3).map(|i| (bits >> i) & 1).collect();
                // oracle: enumerate all maximal runs directly
                let mut expected = Vec::new();
                for a in 0..3 {
                    for b in a + 1..=3 {
                        let inside = frames[a..b].iter().all(|&f| f == 1);
                        let left_closed = a == 0 || frames[a - 1] == 0;
                        let right_closed = b == 3 || frames[b] == 0;
                        if inside && left_closed && right_closed && (b - a) as f64 * hop >= min_dur - 1e-9 {
                            expected.push((a, b));
                        }
                    }
                }
                let row = Array2::from_shape_vec((1, 3), frames.clone()).unwrap();
                let got: Vec<(usize, usize)> = frames_to_segments(row.view(), hop, min_dur).per_class[0]
                    .iter()
                    .map(|s| ((s.onset / hop).round() as usize, (s.offset / hop).round() as usize))
                    .collect();
                assert_eq!(got, expected, "pattern {frames:?}, min_dur {min_dur}");
            }
        }
        assert!(frames_to_segments(array![[1u8, 0, 1]].view(), 0.02, 0.03).is_empty());
    }

    #[test]
    fn segment_lines_format() {
        let segs = frames_to_segments(array![[0u8, 1, 1], [1, 0, 0]].view(), 0.02, 0.0);
        let names = vec!["speech".to_string(), "music".to_string()];
        assert_eq!(
            segs.to_lines("f1", &names),
            "SEG f1 0.020 0.040 speech\nSEG f1 0.000 0.020 music\n"
        );
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let truth = array![[1u8, 0, 1, 1], [0, 0, 1, 0]];
        let labels = LabelMatrix::fully_annotated(truth.clone()).unwrap();
        let r = f1_with_ci(truth.view(), &labels).unwrap();
        for s in r.classes.iter().flatten() {
            assert_eq!(s.f1, 1.0);
            assert_eq!(s.ci95, 0.0);
        }
    }

    #[test]
    fn closed_form_counts() {
        let s = ClassScore::from_counts(FrameCounts { tp: 1, fp: 1, fn_: 1, tn: 0 });
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));

        let s = ClassScore::from_counts(FrameCounts { tp: 80, fp: 10, fn_: 20, tn: 890 });
        let (p, r) = (80.0 / 90.0, 0.8);
        let f1 = 2.0 * p * r / (p + r);
        assert!((s.f1 - f1).abs() < 1e-12);
        assert!((s.f1 - 0.8421).abs() < 1e-4);
        assert!((s.ci95 - 0.0226).abs() < 1e-4);
        assert_eq!(s.n, 1000);
    }

    #[test]
    fn masked_class_is_undefined() {
        let labels = LabelMatrix::new(array![[1u8, 0], [1, 1]], vec![true, false]).unwrap();
        let r = f1_with_ci(array![[1u8, 0], [0, 0]].view(), &labels).unwrap();
        assert!(r.classes[0].is_some());
        assert!(r.classes[1].is_none());
        let csv = r.to_csv(&["a".into(), "b".into()]);
        assert!(csv.ends_with("b,,,,,0\n"), "{csv}");
    }

    proptest! {
        #[test]
        fn segment_round_trip_reproduces_frames(bits in prop::collection::vec(0u8..2, 1..60)) {
            let row = Array2::from_shape_vec((1, bits.len()), bits.clone()).unwrap();
            let segs = frames_to_segments(row.view(), 0.02, 0.0);
            prop_assert_eq!(rasterize(&segs, bits.len(), 0.02), row);
        }

        #[test]
        fn f1_is_invariant_to_frame_permutation(
            pairs in prop::collection::vec((0u8..2, 0u8..2), 1..80), seed in any::<u64>()
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut perm = pairs.clone();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let score = |ps: &[(u8, u8)]| {
                let pred = Array2::from_shape_fn((1, ps.len()), |(_, t)| ps[t].0);
                let truth = Array2::from_shape_fn((1, ps.len()), |(_, t)| ps[t].1);
                f1_with_ci(pred.view(), &LabelMatrix::fully_annotated(truth).unwrap()).unwrap()
            };
            prop_assert_eq!(score(&pairs), score(&perm));
        }
    }
}
