//! Sparse NMF under the squared Euclidean divergence.
//!
//! The dictionary `W` (`F × K`) is kept column-normalized; the activations
//! `H` (`K × T`) absorb the scale. The objective is
//! `‖X − WH‖² + μ‖H‖₁`.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::Scalar;

/// Guard added to every multiplicative-update denominator.
pub const DENOM_GUARD: f64 = 1e-12;
/// Number of step halvings tried before a dictionary step is skipped.
const MAX_W_HALVINGS: u32 = 12;
const NSD_MAGIC: &[u8; 4] = b"NSD1";

#[derive(Debug, Error)]
pub enum NmfError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("numeric divergence at iteration {iteration}")]
    NumericDivergence { iteration: usize },
    #[error("dictionary file format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Non-negative frequency codebook, `F × K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary<T> {
    pub values: Array2<T>,
}

impl<T: Scalar> Dictionary<T> {
    pub fn new(values: Array2<T>) -> Result<Self, NmfError> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= T::zero())) {
            return Err(NmfError::Invalid(format!(
                "dictionary entries must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self { values })
    }

    pub fn freq_bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn components(&self) -> usize {
        self.values.ncols()
    }

    pub fn cast<U: Scalar>(&self) -> Dictionary<U> {
        Dictionary {
            values: self.values.mapv(|v| U::lit(v.as_f64())),
        }
    }
}

/// Non-negative activations, `K × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations<T> {
    pub values: Array2<T>,
}

impl<T: Scalar> Activations<T> {
    pub fn new(values: Array2<T>) -> Result<Self, NmfError> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= T::zero())) {
            return Err(NmfError::Invalid(format!(
                "activations must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self { values })
    }

    pub fn l1(&self) -> T {
        self.values.sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnmfConfig {
    pub components: usize,
    pub mu: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for SnmfConfig {
    fn default() -> Self {
        Self {
            components: 256,
            mu: 0.1,
            max_iters: 500,
            rel_tol: 1e-5,
            seed: 0,
        }
    }
}

impl SnmfConfig {
    pub fn validate(&self) -> Result<(), NmfError> {
        if self.components == 0 {
            return Err(NmfError::Invalid("K must be >= 1".into()));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(NmfError::Invalid(format!("mu must be >= 0, got {}", self.mu)));
        }
        if !(self.rel_tol > 0.0) {
            return Err(NmfError::Invalid(format!(
                "rel_tol must be > 0, got {}",
                self.rel_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SnmfResult<T> {
    pub dictionary: Dictionary<T>,
    pub activations: Activations<T>,
    /// Objective before the first iteration, then after every iteration.
    pub objective_trace: Vec<f64>,
    /// Iterations whose dictionary step was skipped because no damped step
    /// decreased the objective.
    pub skipped_w_steps: usize,
}

impl<T> SnmfResult<T> {
    pub fn iterations(&self) -> usize {
        self.objective_trace.len().saturating_sub(1)
    }
}

fn check_shapes<T>(x: &ArrayView2<T>, w: &Array2<T>, h: &Array2<T>) -> Result<(), NmfError> {
    let (f, t) = x.dim();
    let (fw, k) = w.dim();
    let (kh, th) = h.dim();
    if f != fw || k != kh || t != th {
        return Err(NmfError::Dimension(format!(
            "X is {f}×{t}, W is {fw}×{k}, H is {kh}×{th}"
        )));
    }
    Ok(())
}

/// Exact product `WH`.
pub fn reconstruct<T: Scalar>(w: &Dictionary<T>, h: &Activations<T>) -> Result<Array2<T>, NmfError> {
    if w.components() != h.values.nrows() {
        return Err(NmfError::Dimension(format!(
            "W has {} columns, H has {} rows",
            w.components(),
            h.values.nrows()
        )));
    }
    Ok(w.values.dot(&h.values))
}

/// `‖X − WH‖²`, summed over all entries.
pub fn nmf_loss<T: Scalar>(
    x: ArrayView2<T>,
    w: &Dictionary<T>,
    h: &Activations<T>,
) -> Result<T, NmfError> {
    check_shapes(&x, &w.values, &h.values)?;
    Ok(squared_residual(x, &w.values.dot(&h.values)))
}

fn squared_residual<T: Scalar>(x: ArrayView2<T>, wh: &Array2<T>) -> T {
    let mut acc = T::zero();
    Zip::from(&x).and(wh).for_each(|&a, &b| {
        let d = a - b;
        acc = acc + d * d;
    });
    acc
}

/// Sparse NMF objective `½‖X − WH‖² + μ‖H‖₁`, the function the
/// multiplicative updates with `μ` in the denominator actually descend.
pub fn snmf_objective<T: Scalar>(
    x: ArrayView2<T>,
    w: &Dictionary<T>,
    h: &Activations<T>,
    mu: T,
) -> Result<T, NmfError> {
    Ok(T::lit(0.5) * nmf_loss(x, w, h)? + mu * h.l1())
}

/// Multiplicative activation update `H ⊙ WᵀX ⊘ (WᵀWH + μ + δ)`.
pub fn update_h<T: Scalar>(
    x: ArrayView2<T>,
    w: &Dictionary<T>,
    h: &Activations<T>,
    mu: T,
) -> Result<Activations<T>, NmfError> {
    check_shapes(&x, &w.values, &h.values)?;
    let wt = w.values.t();
    let numer = wt.dot(&x);
    let denom = wt.dot(&w.values).dot(&h.values);
    let guard = mu + T::lit(DENOM_GUARD);
    let mut out = h.values.clone();
    Zip::from(&mut out)
        .and(&numer)
        .and(&denom)
        .for_each(|o, &n, &d| *o = *o * n / (d + guard));
    Ok(Activations { values: out })
}

fn multiplicative_w<T: Scalar>(x: ArrayView2<T>, w: &Array2<T>, h: &Array2<T>) -> Array2<T> {
    let numer = x.dot(&h.t());
    let denom = w.dot(&h.dot(&h.t()));
    let guard = T::lit(DENOM_GUARD);
    let mut out = w.clone();
    Zip::from(&mut out)
        .and(&numer)
        .and(&denom)
        .for_each(|o, &n, &d| *o = *o * n / (d + guard));
    out
}

/// Scales every non-zero column to unit L2 norm; returns the original norms
/// (1 for all-zero columns, which are left untouched).
pub fn normalize_columns<T: Scalar>(values: &mut Array2<T>) -> Vec<T> {
    values
        .axis_iter_mut(Axis(1))
        .map(|mut col| {
            let norm = col.iter().map(|&v| v * v).sum::<T>().sqrt();
            if norm > T::zero() {
                col.mapv_inplace(|v| v / norm);
                norm
            } else {
                T::one()
            }
        })
        .collect()
}

fn scale_rows<T: Scalar>(h: &Array2<T>, scales: &[T]) -> Array2<T> {
    let mut out = h.clone();
    for (mut row, &s) in out.axis_iter_mut(Axis(0)).zip(scales) {
        row.mapv_inplace(|v| v * s);
    }
    out
}

/// Multiplicative dictionary update `W ⊙ XHᵀ ⊘ (WHHᵀ + δ)` followed by
/// column normalization.
///
/// Returns the normalized dictionary and the pre-normalization column norms;
/// the caller multiplies row `k` of `H` by norm `k` to keep `WH` unchanged.
pub fn update_w<T: Scalar>(
    x: ArrayView2<T>,
    w: &Dictionary<T>,
    h: &Activations<T>,
) -> Result<(Dictionary<T>, Vec<T>), NmfError> {
    check_shapes(&x, &w.values, &h.values)?;
    let mut values = multiplicative_w(x, &w.values, &h.values);
    let norms = normalize_columns(&mut values);
    Ok((Dictionary { values }, norms))
}

fn uniform_open_closed<T: Scalar>(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<T> {
    // 1 - U[0,1) lies in (0, 1]
    Array2::from_shape_simple_fn(shape, || T::lit(1.0 - rng.random::<f64>()))
}

/// Seeded initialization: `W` uniform in (0, 1] then column-normalized, `H`
/// uniform in (0, 1].
pub fn init_factors<T: Scalar>(
    freq_bins: usize,
    frames: usize,
    components: usize,
    seed: u64,
) -> (Dictionary<T>, Activations<T>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = uniform_open_closed::<T>(&mut rng, (freq_bins, components));
    normalize_columns(&mut w);
    let h = uniform_open_closed::<T>(&mut rng, (components, frames));
    (Dictionary { values: w }, Activations { values: h })
}

/// Learns a sparse dictionary for `X` by alternating multiplicative updates.
///
/// Each iteration updates `H`, then tries the normalized dictionary step.
/// Because renormalization moves scale into `H` (and so into `μ‖H‖₁`), the
/// dictionary step is accepted only when the objective does not increase;
/// otherwise it is damped toward the current `W` by halving, and skipped
/// after [`MAX_W_HALVINGS`] attempts. With `μ = 0` the full step is always
/// taken up to rounding.
pub fn train_snmf<T: Scalar>(x: ArrayView2<T>, cfg: &SnmfConfig) -> Result<SnmfResult<T>, NmfError> {
    cfg.validate()?;
    if let Some(v) = x.iter().find(|v| !(v.is_finite() && **v >= T::zero())) {
        return Err(NmfError::Invalid(format!(
            "X must be finite and non-negative, found {v}"
        )));
    }
    let (f, t) = x.dim();
    let k = cfg.components;
    if t < k {
        log::warn!("training SNMF with T={t} frames < K={k} components");
    }
    let (mut w, mut h) = init_factors::<T>(f, t, k, cfg.seed);
    let mu = T::lit(cfg.mu);

    if x.iter().all(|v| *v == T::zero()) {
        return Ok(SnmfResult {
            dictionary: w,
            activations: Activations {
                values: Array2::zeros((k, t)),
            },
            objective_trace: vec![0.0],
            skipped_w_steps: 0,
        });
    }

    let mut current = snmf_objective(x, &w, &h, mu)?.as_f64();
    let mut trace = vec![current];
    let mut skipped = 0;

    for iteration in 1..=cfg.max_iters {
        h = update_h(x, &w, &h, mu)?;
        let after_h = snmf_objective(x, &w, &h, mu)?.as_f64();
        if !after_h.is_finite() {
            return Err(NmfError::NumericDivergence { iteration });
        }

        let raw = multiplicative_w(x, &w.values, &h.values);
        let mut accepted = None;
        for halving in 0..=MAX_W_HALVINGS {
            let mut cand = if halving == 0 {
                raw.clone()
            } else {
                let lambda = T::lit(0.5f64.powi(halving as i32));
                let mut c = w.values.clone();
                Zip::from(&mut c)
                    .and(&raw)
                    .for_each(|c, &r| *c = *c + lambda * (r - *c));
                c
            };
            let norms = normalize_columns(&mut cand);
            let cand_w = Dictionary { values: cand };
            let cand_h = Activations {
                values: scale_rows(&h.values, &norms),
            };
            let obj = snmf_objective(x, &cand_w, &cand_h, mu)?.as_f64();
            if !obj.is_finite() {
                return Err(NmfError::NumericDivergence { iteration });
            }
            if obj <= after_h {
                accepted = Some((cand_w, cand_h, obj));
                break;
            }
        }
        let next = match accepted {
            Some((cw, ch, obj)) => {
                w = cw;
                h = ch;
                obj
            }
            None => {
                skipped += 1;
                after_h
            }
        };

        trace.push(next);
        let decrease = if current > 0.0 {
            (current - next) / current
        } else {
            0.0
        };
        current = next;
        if decrease < cfg.rel_tol {
            break;
        }
    }

    Ok(SnmfResult {
        dictionary: w,
        activations: h,
        objective_trace: trace,
        skipped_w_steps: skipped,
    })
}

/// Metadata stored in the `NSD1` footer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DictionaryMeta {
    pub mu: f64,
    pub seed: u64,
}

/// `NSD1`: magic, F and K as u32, F·K f32 column-major, then a 16-byte
/// footer holding μ (f64) and the seed (u64). All little-endian.
pub fn encode_dictionary<T: Scalar>(dict: &Dictionary<T>, meta: DictionaryMeta) -> Result<Vec<u8>, NmfError> {
    let (f, k) = dict.values.dim();
    let f32_ = u32::try_from(f).map_err(|_| NmfError::Format(format!("F={f} exceeds u32")))?;
    let k32 = u32::try_from(k).map_err(|_| NmfError::Format(format!("K={k} exceeds u32")))?;
    let mut out = Vec::with_capacity(12 + 4 * f * k + 16);
    out.extend_from_slice(NSD_MAGIC);
    out.extend_from_slice(&f32_.to_le_bytes());
    out.extend_from_slice(&k32.to_le_bytes());
    for col in dict.values.columns() {
        for &v in col {
            out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    out.extend_from_slice(&meta.mu.to_le_bytes());
    out.extend_from_slice(&meta.seed.to_le_bytes());
    Ok(out)
}

/// Decodes an `NSD1` blob; returns the dictionary, its metadata and the
/// number of bytes consumed.
pub fn decode_dictionary<T: Scalar>(bytes: &[u8]) -> Result<(Dictionary<T>, DictionaryMeta, usize), NmfError> {
    if bytes.len() < 12 {
        return Err(NmfError::Format("truncated header".into()));
    }
    if &bytes[..4] != NSD_MAGIC {
        return Err(NmfError::Format(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let f = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let k = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = f
        .checked_mul(k)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| NmfError::Format(format!("F·K overflow for F={f}, K={k}")))?;
    let total = 12 + payload + 16;
    if bytes.len() < total {
        return Err(NmfError::Format(format!(
            "truncated payload: need {total} bytes, found {}",
            bytes.len()
        )));
    }
    let mut values = Array2::<T>::zeros((f, k));
    for (i, chunk) in bytes[12..12 + payload].chunks_exact(4).enumerate() {
        values[[i % f, i / f]] = T::lit(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    let footer = &bytes[12 + payload..total];
    let meta = DictionaryMeta {
        mu: f64::from_le_bytes(footer[..8].try_into().unwrap()),
        seed: u64::from_le_bytes(footer[8..].try_into().unwrap()),
    };
    Ok((Dictionary::new(values)?, meta, total))
}

pub fn write_dictionary<T: Scalar>(
    dict: &Dictionary<T>,
    meta: DictionaryMeta,
    path: impl AsRef<Path>,
) -> Result<(), NmfError> {
    fs::write(path, encode_dictionary(dict, meta)?)?;
    Ok(())
}

pub fn read_dictionary<T: Scalar>(path: impl AsRef<Path>) -> Result<(Dictionary<T>, DictionaryMeta), NmfError> {
    let bytes = fs::read(path)?;
    let (dict, meta, used) = decode_dictionary(&bytes)?;
    if used != bytes.len() {
        return Err(NmfError::Format(format!(
            "{} trailing bytes after dictionary",
            bytes.len() - used
        )));
    }
    Ok((dict, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_nonneg(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
        Array2::from_shape_simple_fn(shape, || rng.random::<f64>())
    }

    fn dict(values: Array2<f64>) -> Dictionary<f64> {
        Dictionary::new(values).unwrap()
    }

    fn acts(values: Array2<f64>) -> Activations<f64> {
        Activations::new(values).unwrap()
    }

    #[test]
    fn update_h_one_by_one_cases() {
        let x = array![[4.0]];
        let w = dict(array![[2.0]]);
        let h = acts(array![[1.0]]);
        let h1 = update_h(x.view(), &w, &h, 0.0).unwrap();
        assert!((h1.values[[0, 0]] - 2.0).abs() < 1e-12);
        let h2 = update_h(x.view(), &w, &h, 4.0).unwrap();
        assert!((h2.values[[0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_entries_are_absorbing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_nonneg(&mut rng, (6, 5));
        let mut wv = random_nonneg(&mut rng, (6, 3));
        wv[[2, 1]] = 0.0;
        let mut hv = random_nonneg(&mut rng, (3, 5));
        hv[[1, 4]] = 0.0;
        let (w, h) = (dict(wv), acts(hv));
        let h1 = update_h(x.view(), &w, &h, 0.1).unwrap();
        assert_eq!(h1.values[[1, 4]], 0.0);
        let (w1, _) = update_w(x.view(), &w, &h1).unwrap();
        assert_eq!(w1.values[[2, 1]], 0.0);
    }

    #[test]
    fn exact_factorization_is_a_fixed_point_of_update_w() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut wv = random_nonneg(&mut rng, (10, 3));
        normalize_columns(&mut wv);
        let hv = random_nonneg(&mut rng, (3, 12));
        let x = wv.dot(&hv);
        let (w1, norms) = update_w(x.view(), &dict(wv.clone()), &acts(hv)).unwrap();
        let change = (&w1.values - &wv).mapv(|v| v * v).sum().sqrt() / wv.mapv(|v| v * v).sum().sqrt();
        assert!(change < 1e-6, "relative change {change}");
        for n in norms {
            assert!((n - 1.0).abs() < 1e-6);
        }
        for col in w1.values.columns() {
            assert!((col.dot(&col).sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let x = Array2::<f64>::zeros((3, 4));
        let w = dict(Array2::zeros((3, 2)));
        let h = acts(Array2::zeros((3, 4)));
        assert!(matches!(update_h(x.view(), &w, &h, 0.0), Err(NmfError::Dimension(_))));
        assert!(matches!(update_w(x.view(), &w, &h), Err(NmfError::Dimension(_))));
        assert!(matches!(nmf_loss(x.view(), &w, &h), Err(NmfError::Dimension(_))));
        assert!(matches!(reconstruct(&w, &h), Err(NmfError::Dimension(_))));
    }

    #[test]
    fn reconstruct_hand_cases() {
        let w = dict(array![[1.0], [0.0]]);
        let h = acts(array![[3.0, 5.0]]);
        assert_eq!(reconstruct(&w, &h).unwrap(), array![[3.0, 5.0], [0.0, 0.0]]);
        let zero = acts(Array2::zeros((1, 2)));
        assert_eq!(reconstruct(&w, &zero).unwrap(), Array2::<f64>::zeros((2, 2)));
    }

    #[test]
    fn reconstruct_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(f, k, t) in &[(8, 4, 6), (64, 256, 256)] {
            let w = random_nonneg(&mut rng, (f, k));
            let h = random_nonneg(&mut rng, (k, t));
            let got = reconstruct(&dict(w.clone()), &acts(h.clone())).unwrap();
            for i in 0..f {
                for j in 0..t {
                    let mut acc = 0.0;
                    for l in 0..k {
                        acc += w[[i, l]] * h[[l, j]];
                    }
                    assert!((got[[i, j]] - acc).abs() <= 1e-6 * acc.abs().max(1e-12));
                }
            }
        }
    }

    #[test]
    fn nmf_loss_cases() {
        let w = dict(array![[1.0]]);
        let h = acts(array![[3.0]]);
        assert_eq!(nmf_loss(array![[0.0]].view(), &w, &h).unwrap(), 9.0);
        assert_eq!(nmf_loss(array![[3.0]].view(), &w, &h).unwrap(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (wv, hv, x) = (
            random_nonneg(&mut rng, (5, 2)),
            random_nonneg(&mut rng, (2, 7)),
            random_nonneg(&mut rng, (5, 7)),
        );
        let mut oracle = 0.0;
        for i in 0..5 {
            for j in 0..7 {
                let wh = wv[[i, 0]] * hv[[0, j]] + wv[[i, 1]] * hv[[1, j]];
                oracle += (x[[i, j]] - wh) * (x[[i, j]] - wh);
            }
        }
        let got = nmf_loss(x.view(), &dict(wv), &acts(hv)).unwrap();
        assert!((got - oracle).abs() < 1e-12 * oracle);
    }

    #[test]
    fn low_rank_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random_nonneg(&mut rng, (40, 4)).dot(&random_nonneg(&mut rng, (4, 60)));
        let cfg = SnmfConfig {
            components: 4,
            mu: 0.0,
            max_iters: 500,
            rel_tol: 1e-9,
            seed: 1,
        };
        let res = train_snmf(x.view(), &cfg).unwrap();
        let err = nmf_loss(x.view(), &res.dictionary, &res.activations).unwrap() / x.mapv(|v| v * v).sum();
        assert!(err < 0.01, "relative error {err}");
        assert_eq!(res.skipped_w_steps, 0);
    }

    #[test]
    fn sparsity_weight_shrinks_activations() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_nonneg(&mut rng, (30, 80));
        let run = |mu| {
            let cfg = SnmfConfig {
                components: 8,
                mu,
                max_iters: 200,
                rel_tol: 1e-7,
                seed: 2,
            };
            let res = train_snmf(x.view(), &cfg).unwrap();
            res.activations.l1() / res.activations.values.len() as f64
        };
        assert!(run(0.1) < run(0.0));
    }

    #[test]
    fn all_zero_input_is_trivial() {
        let x = Array2::<f64>::zeros((5, 6));
        let cfg = SnmfConfig {
            components: 2,
            ..SnmfConfig::default()
        };
        let res = train_snmf(x.view(), &cfg).unwrap();
        let (w0, _) = init_factors::<f64>(5, 6, 2, cfg.seed);
        assert_eq!(res.dictionary, w0);
        assert!(res.activations.values.iter().all(|&v| v == 0.0));
        assert_eq!(res.objective_trace, vec![0.0]);
    }

    #[test]
    fn invalid_config_and_input_rejected() {
        let x = Array2::<f64>::ones((2, 2));
        for cfg in [
            SnmfConfig { components: 0, ..SnmfConfig::default() },
            SnmfConfig { mu: -1.0, ..SnmfConfig::default() },
            SnmfConfig { rel_tol: 0.0, ..SnmfConfig::default() },
        ] {
            assert!(matches!(train_snmf(x.view(), &cfg), Err(NmfError::Invalid(_))));
        }
        let neg = array![[1.0, -1.0]];
        assert!(train_snmf(neg.view(), &SnmfConfig::default()).is_err());
    }

    #[test]
    fn dictionary_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.nsd");
        let d = Dictionary::new(array![[0.5f32, 1.0], [0.25, 0.0], [0.125, 2.0]]).unwrap();
        let meta = DictionaryMeta { mu: 0.1, seed: 42 };
        write_dictionary(&d, meta, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 12 + 4 * 6 + 16);
        let (back, m) = read_dictionary::<f32>(&p).unwrap();
        assert_eq!(back, d);
        assert_eq!(m, meta);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_dictionary::<f32>(&bad), Err(NmfError::Format(_))));
        assert!(decode_dictionary::<f32>(&bytes[..bytes.len() - 3]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn updates_preserve_nonnegativity_and_objective_is_monotone(
            seed in any::<u64>(), f in 2usize..12, t in 2usize..15, k in 1usize..5,
            mu in prop_oneof![Just(0.0), 0.0f64..1.0]
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_nonneg(&mut rng, (f, t));
            let cfg = SnmfConfig { components: k, mu, max_iters: 40, rel_tol: 1e-12, seed };
            let res = train_snmf(x.view(), &cfg).unwrap();
            prop_assert!(res.dictionary.values.iter().all(|&v| v >= 0.0));
            prop_assert!(res.activations.values.iter().all(|&v| v >= 0.0));
            for pair in res.objective_trace.windows(2) {
                prop_assert!(pair[1] <= pair[0] * (1.0 + 1e-9), "{:?}", pair);
            }
            for col in res.dictionary.values.columns() {
                prop_assert!((col.dot(&col).sqrt() - 1.0).abs() < 1e-6);
            }
        }
    }
}
