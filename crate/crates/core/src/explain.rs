//! Relevant-component extraction and the modularity / compactness counts.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nmf::Dictionary;
use crate::scalar::Scalar;

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_BAND: usize = 1;
pub const DEFAULT_COMPACT_LIMIT: usize = 20;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("activation matrix has no frames")]
    EmptyTime,
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("component {k} out of range for K={components}")]
    ComponentOutOfRange { k: usize, components: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// `z_k = mean_t H[k, t]`.
pub fn pool_time<T: Scalar>(h: ArrayView2<T>) -> Result<Vec<T>, ExplainError> {
    let t = h.ncols();
    if t == 0 {
        return Err(ExplainError::EmptyTime);
    }
    let inv = T::one() / T::from_usize_lossy(t);
    Ok(h.rows()
        .into_iter()
        .map(|row| row.iter().fold(T::zero(), |a, &v| a + v) * inv)
        .collect())
}

/// `r_k = z_k · θ_k` for the class row `θ`.
pub fn relevance<T: Scalar>(z: &[T], theta_row: &[T]) -> Result<Vec<T>, ExplainError> {
    if z.len() != theta_row.len() {
        return Err(ExplainError::Length(format!(
            "z has {} entries, theta row has {}",
            z.len(),
            theta_row.len()
        )));
    }
    Ok(z.iter().zip(theta_row).map(|(&a, &b)| a * b).collect())
}

/// Min-max normalization to [0, 1] followed by the strict test `r_norm > τ`.
/// A flat vector normalizes to all zeros.
pub fn binarize<T: Scalar>(r: &[T], tau: f64) -> (Vec<T>, Vec<u8>) {
    let lo = r.iter().copied().fold(T::infinity(), T::min);
    let hi = r.iter().copied().fold(T::neg_infinity(), T::max);
    let span = hi - lo;
    let r_norm: Vec<T> = if r.is_empty() || !(span > T::zero()) {
        vec![T::zero(); r.len()]
    } else {
        r.iter().map(|&v| (v - lo) / span).collect()
    };
    let tau = T::lit(tau);
    let b = r_norm.iter().map(|&v| (v > tau) as u8).collect();
    (r_norm, b)
}

/// How the raw relevance is turned into binary activity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RelevanceMode {
    /// Raw product → min-max → threshold.
    #[default]
    MinMax,
    /// Zero every `r_k ≤ τ` first, then min-max → threshold.
    Prefilter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceRecord {
    pub sample_id: String,
    pub class_id: usize,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub r_norm: Vec<f64>,
    pub b: Vec<u8>,
}

/// Builds the record for one sample from its activations and the `θ` row of
/// its reference class.
pub fn relevance_record<T: Scalar>(
    sample_id: impl Into<String>,
    class_id: usize,
    h: ArrayView2<T>,
    theta: ArrayView2<T>,
    tau: f64,
    mode: RelevanceMode,
) -> Result<RelevanceRecord, ExplainError> {
    if class_id >= theta.nrows() {
        return Err(ExplainError::Invalid(format!(
            "class {class_id} out of range for {} classes",
            theta.nrows()
        )));
    }
    let z = pool_time(h)?;
    let row: Vec<T> = theta.row(class_id).to_vec();
    let mut r = relevance(&z, &row)?;
    if mode == RelevanceMode::Prefilter {
        let t = T::lit(tau);
        r.iter_mut().filter(|v| **v <= t).for_each(|v| *v = T::zero());
    }
    let (r_norm, b) = binarize(&r, tau);
    Ok(RelevanceRecord {
        sample_id: sample_id.into(),
        class_id,
        z: z.iter().map(|v| v.as_f64()).collect(),
        r: r.iter().map(|v| v.as_f64()).collect(),
        r_norm: r_norm.iter().map(|v| v.as_f64()).collect(),
        b,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    /// `n_k`: samples for which component `k` is active.
    pub n: Vec<usize>,
    /// `m_i`: active components of sample `i`.
    pub m: Vec<usize>,
    pub inactive_ids: Vec<usize>,
    pub modular_ids: Vec<usize>,
    pub compact_fraction: f64,
    pub samples_per_class: usize,
    pub band: usize,
    pub compact_limit: usize,
}

/// Counts over a `samples × K` binary activity matrix.
///
/// A component is modular when `s − band ≤ n_k ≤ s + band` and it is active
/// for at least one sample; a sample is compact when `m_i ≤ compact_limit`.
pub fn component_report_from_matrix(
    b: ArrayView2<u8>,
    samples_per_class: usize,
    band: usize,
    compact_limit: usize,
) -> Result<ComponentReport, ExplainError> {
    if samples_per_class == 0 {
        return Err(ExplainError::Invalid("samples_per_class must be >= 1".into()));
    }
    let n: Vec<usize> = b
        .columns()
        .into_iter()
        .map(|c| c.iter().filter(|&&v| v == 1).count())
        .collect();
    let m: Vec<usize> = b
        .rows()
        .into_iter()
        .map(|r| r.iter().filter(|&&v| v == 1).count())
        .collect();
    let lo = samples_per_class.saturating_sub(band).max(1);
    let hi = samples_per_class + band;
    let inactive_ids = (0..n.len()).filter(|&k| n[k] == 0).collect();
    let modular_ids = (0..n.len()).filter(|&k| n[k] >= lo && n[k] <= hi).collect();
    let compact = m.iter().filter(|&&mi| mi <= compact_limit).count();
    let compact_fraction = if m.is_empty() {
        0.0
    } else {
        compact as f64 / m.len() as f64
    };
    Ok(ComponentReport {
        n,
        m,
        inactive_ids,
        modular_ids,
        compact_fraction,
        samples_per_class,
        band,
        compact_limit,
    })
}

pub fn component_report(
    records: &[RelevanceRecord],
    samples_per_class: usize,
    band: usize,
    compact_limit: usize,
) -> Result<ComponentReport, ExplainError> {
    let k = records.first().map_or(0, |r| r.b.len());
    if let Some(bad) = records.iter().find(|r| r.b.len() != k) {
        return Err(ExplainError::Length(format!(
            "record {} has K={}, expected {k}",
            bad.sample_id,
            bad.b.len()
        )));
    }
    let b = Array2::from_shape_fn((records.len(), k), |(i, j)| records[i].b[j]);
    component_report_from_matrix(b.view(), samples_per_class, band, compact_limit)
}

impl ComponentReport {
    /// `component,n_k,modular,inactive`.
    pub fn components_csv(&self) -> String {
        let mut out = String::from("component,n_k,modular,inactive\n");
        for (k, &nk) in self.n.iter().enumerate() {
            let _ = writeln!(
                out,
                "{k},{nk},{},{}",
                self.modular_ids.binary_search(&k).is_ok() as u8,
                (nk == 0) as u8
            );
        }
        out
    }

    /// `sample,class,m_i`.
    pub fn samples_csv(&self, records: &[RelevanceRecord], class_names: &[String]) -> String {
        let mut out = String::from("sample,class,m_i\n");
        for (rec, mi) in records.iter().zip(&self.m) {
            let name = class_names
                .get(rec.class_id)
                .cloned()
                .unwrap_or_else(|| rec.class_id.to_string());
            let _ = writeln!(out, "{},{name},{mi}", rec.sample_id);
        }
        out
    }
}

/// Column `k` of the dictionary on a Hz axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpectrum {
    pub component: usize,
    pub freqs_hz: Vec<f64>,
    pub weights: Vec<f64>,
    pub peak_hz: f64,
}

impl ComponentSpectrum {
    /// `hz,weight`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("hz,weight\n");
        for (f, w) in self.freqs_hz.iter().zip(&self.weights) {
            let _ = writeln!(out, "{f:.3},{w:.8}");
        }
        out
    }
}

pub fn component_spectrum<T: Scalar>(
    w: &Dictionary<T>,
    k: usize,
    n_fft: usize,
    sample_rate: u32,
) -> Result<ComponentSpectrum, ExplainError> {
    if k >= w.components() {
        return Err(ExplainError::ComponentOutOfRange {
            k,
            components: w.components(),
        });
    }
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let weights: Vec<f64> = w.values.column(k).iter().map(|v| v.as_f64()).collect();
    let freqs_hz = (0..weights.len()).map(|b| b as f64 * bin_hz).collect();
    let peak = (0..weights.len())
        .max_by(|&a, &b| weights[a].total_cmp(&weights[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    Ok(ComponentSpectrum {
        component: k,
        freqs_hz,
        weights,
        peak_hz: peak as f64 * bin_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pooling_cases() {
        assert_eq!(pool_time(array![[1.0f64, 3.0], [0.0, 2.0]].view()).unwrap(), vec![2.0, 1.0]);
        assert_eq!(pool_time(Array2::<f64>::zeros((3, 4)).view()).unwrap(), vec![0.0; 3]);
        assert!(matches!(
            pool_time(Array2::<f64>::zeros((3, 0)).view()),
            Err(ExplainError::EmptyTime)
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = Array2::from_shape_simple_fn((256, 200), || rng.random::<f64>());
        let z = pool_time(h.view()).unwrap();
        for k in 0..256 {
            let mut acc = 0.0;
            for t in 0..200 {
                acc += h[[k, t]];
            }
            assert!((z[k] - acc / 200.0).abs() < 1e-12);
        }
    }

    #[test]
    fn relevance_cases() {
        assert_eq!(relevance(&[2.0, 1.0], &[0.5, -1.0]).unwrap(), vec![1.0, -1.0]);
        assert_eq!(relevance(&[0.0, 0.0], &[0.5, -1.0]).unwrap(), vec![0.0, 0.0]);
        assert!(relevance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn binarize_cases() {
        assert_eq!(binarize(&[1.0, -1.0], 0.5), (vec![1.0, 0.0], vec![1, 0]));
        assert_eq!(binarize(&[3.0, 3.0, 3.0], 0.5).1, vec![0, 0, 0]);
        assert_eq!(binarize(&[0.0, 2.0, 4.0], 0.5), (vec![0.0, 0.5, 1.0], vec![0, 0, 1]));
    }

    #[test]
    fn prefilter_mode_differs_from_default() {
        let h = array![[1.0f64], [1.0], [1.0]];
        let theta = array![[0.2f64, 0.6, 1.0]];
        let a = relevance_record("s", 0, h.view(), theta.view(), 0.5, RelevanceMode::MinMax).unwrap();
        let b = relevance_record("s", 0, h.view(), theta.view(), 0.5, RelevanceMode::Prefilter).unwrap();
        assert_eq!(a.b, vec![0, 0, 1]);
        // 0.2 is zeroed first: [0, 0.6, 1] → [0, 0.6, 1]
        assert_eq!(b.b, vec![0, 1, 1]);
    }

    #[test]
    fn hand_counted_report() {
        let b = array![[1u8, 0], [1, 0], [0, 0]];
        let r = component_report_from_matrix(b.view(), 5, 1, 20).unwrap();
        assert_eq!(r.n, vec![2, 0]);
        assert_eq!(r.m, vec![1, 1, 0]);
        assert_eq!(r.inactive_ids, vec![1]);
        assert!(r.modular_ids.is_empty());
        assert_eq!(r.compact_fraction, 1.0);
    }

    #[test]
    fn all_zero_activity() {
        let r = component_report_from_matrix(Array2::<u8>::zeros((4, 3)).view(), 2, 1, 0).unwrap();
        assert_eq!(r.inactive_ids, vec![0, 1, 2]);
        assert_eq!(r.compact_fraction, 1.0);
        assert!(r.modular_ids.is_empty());
    }

    #[test]
    fn inconsistent_records_rejected() {
        let rec = |k| RelevanceRecord {
            sample_id: "x".into(),
            class_id: 0,
            z: vec![0.0; k],
            r: vec![0.0; k],
            r_norm: vec![0.0; k],
            b: vec![0; k],
        };
        assert!(component_report(&[rec(3), rec(4)], 1, 1, 1).is_err());
    }

    #[test]
    fn spectrum_axis_and_norm() {
        let mut values = Array2::<f64>::zeros((257, 2));
        values[[40, 1]] = 0.6;
        values[[41, 1]] = 0.8;
        values[[0, 0]] = 1.0;
        let w = Dictionary::new(values).unwrap();
        let s = component_spectrum(&w, 1, 512, 16_000).unwrap();
        let norm: f64 = s.weights.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert_eq!(s.peak_hz, 41.0 * 16_000.0 / 512.0);
        assert_eq!(s.freqs_hz[41], s.peak_hz);
        assert!(matches!(
            component_spectrum(&w, 2, 512, 16_000),
            Err(ExplainError::ComponentOutOfRange { .. })
        ));
        assert!(s.to_csv().starts_with("hz,weight\n0.000,"));
    }

    proptest! {
        #[test]
        fn counts_are_exchange_consistent(seed in any::<u64>(), rows in 1usize..20, cols in 1usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = Array2::from_shape_simple_fn((rows, cols), || rng.random_bool(0.3) as u8);
            let r = component_report_from_matrix(b.view(), 3, 1, 5).unwrap();
            prop_assert_eq!(r.n.iter().sum::<usize>(), r.m.iter().sum::<usize>());
        }

        #[test]
        fn binarize_ignores_positive_affine_maps(
            seed in any::<u64>(), a in 1e-3f64..10.0, c in -5.0f64..5.0
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r: Vec<f64> = (0..64).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let mapped: Vec<f64> = r.iter().map(|v| a * v + c).collect();
            prop_assert_eq!(binarize(&r, 0.5).1, binarize(&mapped, 0.5).1);
        }
    }
}
