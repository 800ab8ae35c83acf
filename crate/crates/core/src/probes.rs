//! Linear probes on frozen activations.

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neural::{adam_step, AdamConfig, ModelError, SegModel};
use crate::nmf::Activations;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("probe task has no items")]
    Empty,
    #[error("probe task needs at least two classes, got {0}")]
    SingleClass(usize),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `H` of the model for features `S`; the model is only borrowed.
pub fn extract_frozen_h<T: Scalar>(
    model: &SegModel<T>,
    s: ArrayView2<T>,
) -> Result<Activations<T>, ProbeError> {
    let out = model.forward(s)?;
    Ok(Activations { values: out.h })
}

#[derive(Debug, Clone)]
pub struct ProbeTask<T> {
    pub name: String,
    pub class_count: usize,
    /// `(H, label)` with `H` of shape `K × T_i`.
    pub items: Vec<(Array2<T>, usize)>,
    pub pad_to: usize,
}

impl<T: Scalar> ProbeTask<T> {
    pub fn new(
        name: impl Into<String>,
        class_count: usize,
        items: Vec<(Array2<T>, usize)>,
        pad_to: usize,
    ) -> Result<Self, ProbeError> {
        let task = Self {
            name: name.into(),
            class_count,
            items,
            pad_to,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.class_count < 2 {
            return Err(ProbeError::SingleClass(self.class_count));
        }
        if self.pad_to == 0 {
            return Err(ProbeError::Invalid("pad_to must be >= 1".into()));
        }
        let k = self.items.first().map(|(h, _)| h.nrows());
        for (h, label) in &self.items {
            if *label >= self.class_count {
                return Err(ProbeError::Label {
                    label: *label,
                    classes: self.class_count,
                });
            }
            if Some(h.nrows()) != k {
                return Err(ProbeError::Dimension(format!(
                    "item with K={} in a task with K={}",
                    h.nrows(),
                    k.unwrap_or(0)
                )));
            }
        }
        Ok(())
    }

    pub fn components(&self) -> usize {
        self.items.first().map_or(0, |(h, _)| h.nrows())
    }

    /// Pooled K-vectors, one row per item.
    pub fn pooled(&self) -> Array2<T> {
        let k = self.components();
        let mut out = Array2::zeros((self.items.len(), k));
        for (i, (h, _)) in self.items.iter().enumerate() {
            out.row_mut(i).assign(&pad_and_pool(h.view(), self.pad_to));
        }
        out
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|(_, l)| *l).collect()
    }
}

/// Zero-pads or truncates `h` to `pad_to` frames, then averages over time.
pub fn pad_and_pool<T: Scalar>(h: ArrayView2<T>, pad_to: usize) -> Array1<T> {
    let used = h.ncols().min(pad_to);
    let inv = T::one() / T::from_usize_lossy(pad_to);
    h.rows()
        .into_iter()
        .map(|row| row.iter().take(used).fold(T::zero(), |a, &v| a + v) * inv)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 1e-2,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// `logits = weight · z + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeWeights<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> ProbeWeights<T> {
    pub fn logits(&self, z: &Array1<T>) -> Array1<T> {
        self.weight.dot(z) + &self.bias
    }

    pub fn predict(&self, z: &Array1<T>) -> usize {
        argmax(self.logits(z).as_slice().unwrap())
    }
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn softmax_in_place<T: Scalar>(v: &mut [T]) {
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        sum = sum + *x;
    }
    for x in v.iter_mut() {
        *x = *x / sum;
    }
}

/// Softmax cross-entropy with Adam on the pooled items.
pub fn train_probe<T: Scalar>(
    task: &ProbeTask<T>,
    cfg: &ProbeConfig,
) -> Result<ProbeWeights<T>, ProbeError> {
    task.validate()?;
    if task.items.is_empty() {
        return Err(ProbeError::Empty);
    }
    if !(cfg.lr > 0.0) || cfg.batch_size == 0 {
        return Err(ProbeError::Invalid("need lr > 0 and batch_size >= 1".into()));
    }
    let labels = task.labels();
    let mut present = vec![false; task.class_count];
    labels.iter().for_each(|&l| present[l] = true);
    let distinct = present.iter().filter(|&&p| p).count();
    if distinct < 2 {
        return Err(ProbeError::SingleClass(distinct));
    }

    let z = task.pooled();
    let (n, k, c) = (z.nrows(), z.ncols(), task.class_count);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bound = 1.0 / (k.max(1) as f64).sqrt();
    let mut w = ProbeWeights {
        weight: Array2::from_shape_simple_fn((c, k), || T::lit(rng.random_range(-bound..bound))),
        bias: Array1::zeros(c),
    };
    let adam = AdamConfig::default();
    let (mut mw, mut vw) = (vec![T::zero(); c * k], vec![T::zero(); c * k]);
    let (mut mb, mut vb) = (vec![T::zero(); c], vec![T::zero(); c]);
    let lr = T::lit(cfg.lr);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut gw = Array2::<T>::zeros((c, k));
            let mut gb = Array1::<T>::zeros(c);
            let inv = T::one() / T::from_usize_lossy(batch.len());
            for &i in batch {
                let zi = z.row(i).to_owned();
                let mut p = w.logits(&zi);
                softmax_in_place(p.as_slice_mut().unwrap());
                p[labels[i]] = p[labels[i]] - T::one();
                for a in 0..c {
                    let g = p[a] * inv;
                    gb[a] = gb[a] + g;
                    for b in 0..k {
                        gw[[a, b]] = gw[[a, b]] + g * zi[b];
                    }
                }
            }
            step += 1;
            adam_step(
                w.weight.as_slice_mut().unwrap(),
                gw.as_slice().unwrap(),
                &mut mw,
                &mut vw,
                step,
                lr,
                &adam,
            );
            adam_step(
                w.bias.as_slice_mut().unwrap(),
                gb.as_slice().unwrap(),
                &mut mb,
                &mut vb,
                step,
                lr,
                &adam,
            );
        }
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub uar: f64,
    /// `None` for classes absent from the evaluation set.
    pub recalls: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl ProbeResult {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Self {
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..confusion.len()).map(|i| confusion[i][i]).sum();
        let recalls: Vec<Option<f64>> = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let support: usize = row.iter().sum();
                (support > 0).then(|| row[i] as f64 / support as f64)
            })
            .collect();
        let defined: Vec<f64> = recalls.iter().flatten().copied().collect();
        if defined.len() < recalls.len() {
            log::warn!(
                "{} classes absent from the evaluation set; UAR averages the rest",
                recalls.len() - defined.len()
            );
        }
        let uar = exact_mean_ratio(&confusion).unwrap_or_else(|| {
            if defined.is_empty() {
                0.0
            } else {
                defined.iter().sum::<f64>() / defined.len() as f64
            }
        });
        let accuracy = if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        };
        Self {
            accuracy,
            uar,
            recalls,
            confusion,
        }
    }
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Mean of `hits_i / support_i` over classes with support, as one reduced
/// fraction so that equal rationals map to the same float.
fn exact_mean_ratio(confusion: &[Vec<usize>]) -> Option<f64> {
    let rows: Vec<(u128, u128)> = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| (row[i] as u128, row.iter().sum::<usize>() as u128))
        .filter(|&(_, s)| s > 0)
        .collect();
    if rows.is_empty() {
        return None;
    }
    let mut lcm: u128 = 1;
    for &(_, s) in &rows {
        lcm = lcm.checked_mul(s / gcd(lcm, s))?;
    }
    let mut num: u128 = 0;
    for &(h, s) in &rows {
        num = num.checked_add(h.checked_mul(lcm / s)?)?;
    }
    let den = lcm.checked_mul(rows.len() as u128)?;
    let g = gcd(num, den).max(1);
    let (num, den) = (num / g, den / g);
    const EXACT: u128 = 1 << 53;
    (num < EXACT && den < EXACT).then(|| num as f64 / den as f64)
}

pub fn eval_probe<T: Scalar>(
    weights: &ProbeWeights<T>,
    task: &ProbeTask<T>,
) -> Result<ProbeResult, ProbeError> {
    task.validate()?;
    if task.items.is_empty() {
        return Err(ProbeError::Empty);
    }
    if weights.weight.nrows() != task.class_count || weights.weight.ncols() != task.components() {
        return Err(ProbeError::Dimension(format!(
            "probe is {}×{}, task has {} classes and K={}",
            weights.weight.nrows(),
            weights.weight.ncols(),
            task.class_count,
            task.components()
        )));
    }
    let z = task.pooled();
    let predicted: Vec<usize> = z
        .rows()
        .into_iter()
        .map(|row| weights.predict(&row.to_owned()))
        .collect();
    Ok(ProbeResult::from_predictions(
        &task.labels(),
        &predicted,
        task.class_count,
    ))
}

/// Accuracy of always predicting the most frequent training label.
pub fn majority_baseline<T: Scalar>(train: &ProbeTask<T>, test: &ProbeTask<T>) -> ProbeResult {
    let mut counts = vec![0usize; train.class_count];
    train.items.iter().for_each(|(_, l)| counts[*l] += 1);
    let majority = argmax(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>());
    let truth = test.labels();
    ProbeResult::from_predictions(&truth, &vec![majority; truth.len()], test.class_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Two classes whose pooled activations differ in which half of the
    /// components is active.
    fn separable(n: usize, seed: u64, shuffle_labels: bool) -> ProbeTask<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 16;
        let mut items = Vec::new();
        for i in 0..n {
            let label = i % 2;
            let t = rng.random_range(20..60);
            let h = Array2::from_shape_fn((k, t), |(row, _)| {
                let on = (row < k / 2) == (label == 0);
                rng.random::<f64>() * if on { 1.0 } else { 0.2 }
            });
            items.push((h, label));
        }
        if shuffle_labels {
            let mut labels: Vec<usize> = items.iter().map(|(_, l)| *l).collect();
            labels.shuffle(&mut rng);
            items.iter_mut().zip(labels).for_each(|(it, l)| it.1 = l);
        }
        ProbeTask::new("separable", 2, items, 40).unwrap()
    }

    #[test]
    fn pooling_pads_with_zeros_and_truncates() {
        let h = ndarray::array![[1.0f64, 2.0, 3.0]];
        assert_eq!(pad_and_pool(h.view(), 6)[0], 1.0);
        assert_eq!(pad_and_pool(h.view(), 2)[0], 1.5);
    }

    #[test]
    fn separable_task_is_learned() {
        let w = train_probe(&separable(200, 1, false), &ProbeConfig::default()).unwrap();
        let r = eval_probe(&w, &separable(200, 2, false)).unwrap();
        assert!(r.accuracy > 0.95, "{}", r.accuracy);
    }

    #[test]
    fn training_is_deterministic() {
        let task = separable(60, 3, false);
        let cfg = ProbeConfig {
            epochs: 5,
            ..Default::default()
        };
        assert_eq!(train_probe(&task, &cfg).unwrap(), train_probe(&task, &cfg).unwrap());
    }

    #[test]
    fn single_class_rejected() {
        let items = vec![(Array2::<f64>::ones((3, 4)), 1), (Array2::ones((3, 4)), 1)];
        let task = ProbeTask::new("one", 2, items, 4).unwrap();
        assert!(matches!(
            train_probe(&task, &ProbeConfig::default()),
            Err(ProbeError::SingleClass(1))
        ));
        assert!(ProbeTask::<f64>::new("c1", 1, vec![], 4).is_err());
        assert!(ProbeTask::new("lbl", 2, vec![(Array2::<f64>::ones((3, 4)), 2)], 4).is_err());
    }

    #[test]
    fn result_closed_forms() {
        let perfect = ProbeResult::from_predictions(&[0, 1, 2], &[0, 1, 2], 3);
        assert_eq!((perfect.accuracy, perfect.uar), (1.0, 1.0));
        let r = ProbeResult::from_predictions(&[0, 0, 1, 1], &[0, 0, 1, 0], 2);
        assert_eq!(r.uar, 0.75);
        let absent = ProbeResult::from_predictions(&[0, 0], &[0, 1], 3);
        assert_eq!(absent.recalls, vec![Some(0.5), None, None]);
        assert_eq!(absent.uar, 0.5);
    }

    #[test]
    fn majority_baseline_matches_prior() {
        let mk = |labels: &[usize]| {
            ProbeTask::new(
                "m",
                3,
                labels.iter().map(|&l| (Array2::<f64>::zeros((2, 3)), l)).collect(),
                3,
            )
            .unwrap()
        };
        let r = majority_baseline(&mk(&[2, 2, 1]), &mk(&[2, 0, 2, 1, 2]));
        assert_eq!(r.accuracy, 3.0 / 5.0);
    }

    proptest! {
        #[test]
        fn confusion_matches_brute_force(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..200)
        ) {
            let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let r = ProbeResult::from_predictions(&truth, &pred, 4);
            let correct = pairs.iter().filter(|(a, b)| a == b).count();
            prop_assert_eq!(r.accuracy, correct as f64 / pairs.len() as f64);
            let mut recalls = Vec::new();
            for c in 0..4 {
                let support = truth.iter().filter(|&&t| t == c).count();
                prop_assert_eq!(r.confusion[c].iter().sum::<usize>(), support);
                if support > 0 {
                    let hit = pairs.iter().filter(|(a, b)| *a == c && *b == c).count();
                    recalls.push(hit as f64 / support as f64);
                }
            }
            let uar = recalls.iter().sum::<f64>() / recalls.len() as f64;
            prop_assert!((r.uar - uar).abs() < 1e-15);
        }

        #[test]
        fn uar_equals_accuracy_when_balanced(
            preds in proptest::collection::vec(0usize..3, 30)
        ) {
            let truth: Vec<usize> = (0..30).map(|i| i % 3).collect();
            let r = ProbeResult::from_predictions(&truth, &preds, 3);
            prop_assert_eq!(r.uar, r.accuracy);
        }
    }
}
