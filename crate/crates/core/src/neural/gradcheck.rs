//! Central finite-difference check of [`super::backward`] over every
//! trainable parameter.
//!
//! A parameter perturbation `p ± ε` is applied directly to the
//! pre-activation of the layer that owns `p`, which is exact because every
//! layer is affine in its own parameters. Many perturbations are then pushed
//! through the rest of the network together, side by side along the time
//! axis, so the downstream convolutions run as one wide matrix product.

use ndarray::{s, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::loss_terms;
use super::model::im2col;
use super::{backward, ForwardTrace, LabelMatrix, LossWeights, ModelError, SegModel};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Denominator floor of the relative error `|a − n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Times `eps` is divided by 10 when the two probes land on different
    /// sides of a ReLU kink.
    pub max_refinements: usize,
    /// Parameters per batched evaluation.
    pub batch: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            floor: 1e-6,
            max_refinements: 4,
            batch: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub weights: LossWeights,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    /// Parameters whose probes still straddled a kink after refinement.
    pub unresolved_kinks: usize,
}

type Terms = [f64; 3];

#[derive(Clone, Copy)]
enum Stage {
    Bottleneck,
    Layer(usize),
    OutConv,
    Theta,
}

struct Base<'a, T> {
    model: &'a SegModel<T>,
    trace: &'a ForwardTrace<T>,
    /// Bottleneck output.
    x0: Array2<T>,
    /// Sum of the outputs of blocks `0..b`.
    skip_prefix: Vec<Array2<T>>,
    x: ArrayView2<'a, T>,
    labels: &'a LabelMatrix,
}

/// Column `col` of the input seen by the affine map of `stage` (`None` for
/// a bias).
fn input_row<T: Scalar>(base: &Base<T>, stage: Stage, col: Option<usize>) -> Option<Array2<T>> {
    let col = col?;
    let src = match stage {
        Stage::Bottleneck => base.trace.input.row(col).to_owned(),
        Stage::Layer(idx) => {
            let conv = base.layer(idx);
            let cols = im2col(base.trace.layer_inputs[idx].view(), conv.taps, conv.dilation);
            cols.row(col).to_owned()
        }
        Stage::OutConv => base.trace.skip.row(col).to_owned(),
        Stage::Theta => base.trace.h.row(col).to_owned(),
    };
    Some(src.insert_axis(Axis(0)))
}

impl<T: Scalar> Base<'_, T> {
    fn layer(&self, idx: usize) -> &super::Conv1d<T> {
        let l = self.model.arch.layers_per_block();
        &self.model.params.blocks[idx / l][idx % l]
    }

    fn frames(&self) -> usize {
        self.trace.h.ncols()
    }

    /// Evaluates a batch of single-parameter perturbations of one tensor.
    /// `items` holds `(output row, input column or None for bias, delta)`.
    fn run(&self, stage: Stage, items: &[(usize, Option<usize>, T)]) -> Result<(Vec<Terms>, Vec<bool>), ModelError> {
        let t = self.frames();
        let n = items.len();
        let p = &self.model.params;
        let layers = self.model.arch.layers_per_block();
        let total = p.blocks.len() * layers;
        let tile = |a: &Array2<T>| {
            let mut out = Array2::zeros((a.nrows(), t * n));
            for i in 0..n {
                out.slice_mut(s![.., i * t..(i + 1) * t]).assign(a);
            }
            out
        };
        // perturbed affine output of the owning layer
        let base_out = match stage {
            Stage::Bottleneck => &self.x0,
            Stage::Layer(idx) => &self.trace.layer_pre[idx],
            Stage::OutConv => &self.trace.h_pre,
            Stage::Theta => &self.trace.logits,
        };
        let mut z = tile(base_out);
        let mut col_cache: Option<(usize, Array2<T>)> = None;
        for (i, &(row, col, delta)) in items.iter().enumerate() {
            let mut dst = z.slice_mut(s![row..row + 1, i * t..(i + 1) * t]);
            match col {
                None => dst.mapv_inplace(|v| v + delta),
                Some(c) => {
                    if col_cache.as_ref().map(|(k, _)| *k) != Some(c) {
                        col_cache = Some((c, input_row(self, stage, Some(c)).unwrap()));
                    }
                    let src = &col_cache.as_ref().unwrap().1;
                    dst.zip_mut_with(src, |d, &v| *d = *d + delta * v);
                }
            }
        }

        // items come in (+δ, −δ) pairs; a pair straddles a kink when any
        // recomputed pre-activation differs in sign between its two members
        let mut kinks = vec![false; n / 2];
        let record = |kinks: &mut Vec<bool>, z: &Array2<T>| {
            for (pair, flag) in kinks.iter_mut().enumerate() {
                if *flag {
                    continue;
                }
                let a = z.slice(s![.., 2 * pair * t..(2 * pair + 1) * t]);
                let b = z.slice(s![.., (2 * pair + 1) * t..(2 * pair + 2) * t]);
                *flag = a.iter().zip(b.iter()).any(|(&u, &v)| (u > T::zero()) != (v > T::zero()));
            }
        };

        let (h, logits) = match stage {
            Stage::Theta => (tile(&self.trace.h), z),
            _ => {
                let h_pre = if let Stage::OutConv = stage {
                    z
                } else {
                    let (mut x, start, mut skip) = match stage {
                        Stage::Layer(idx) => {
                            record(&mut kinks, &z);
                            let mut x = tile(&self.trace.layer_inputs[idx]);
                            x.zip_mut_with(&z, |a, &b| *a = *a + b.max(T::zero()));
                            let mut sk = tile(&self.skip_prefix[idx / layers]);
                            if idx % layers == layers - 1 {
                                sk += &x;
                            }
                            (x, idx + 1, sk)
                        }
                        _ => {
                            let zeros = Array2::zeros(z.raw_dim());
                            (z, 0, zeros)
                        }
                    };
                    for i in start..total {
                        let zi = segmented_conv(self.layer(i), &x, t);
                        record(&mut kinks, &zi);
                        x.zip_mut_with(&zi, |a, &b| *a = *a + b.max(T::zero()));
                        if i % layers == layers - 1 {
                            skip += &x;
                        }
                    }
                    p.out_conv.apply(&skip)
                };
                record(&mut kinks, &h_pre);
                let h = h_pre.mapv(|v| v.max(T::zero()));
                let logits = p.theta.dot(&h);
                (h, logits)
            }
        };

        let weights = LossWeights::default();
        let terms = (0..n)
            .map(|i| {
                let cols = s![.., i * t..(i + 1) * t];
                let l = loss_terms(
                    self.model,
                    &h.slice(cols).to_owned(),
                    &logits.slice(cols).to_owned(),
                    self.x,
                    self.labels,
                    &weights,
                )?;
                Ok([l.bce, l.nmf, l.l1])
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        Ok((terms, kinks))
    }
}

/// Same-padded convolution applied to each length-`t` segment of `x`
/// independently. Taps that fall entirely outside a segment are skipped.
fn segmented_conv<T: Scalar>(conv: &super::Conv1d<T>, x: &Array2<T>, t: usize) -> Array2<T> {
    let (ch, total) = x.dim();
    let half = conv.taps / 2;
    let live: Vec<usize> = (0..conv.taps)
        .filter(|&j| ((j as isize - half as isize) * conv.dilation as isize).unsigned_abs() < t)
        .collect();
    let (jlo, jhi) = (live[0], live[live.len() - 1] + 1);
    let mut cols = Array2::<T>::zeros(((jhi - jlo) * ch, total));
    for j in jlo..jhi {
        let off = (j as isize - half as isize) * conv.dilation as isize;
        let lo = (-off).max(0) as usize;
        let hi = (t as isize - off).clamp(0, t as isize) as usize;
        if lo >= hi {
            continue;
        }
        let rows = (j - jlo) * ch..(j - jlo + 1) * ch;
        for seg in 0..total / t {
            let base = seg * t;
            let src_lo = (base as isize + lo as isize + off) as usize;
            let src_hi = (base as isize + hi as isize + off) as usize;
            cols.slice_mut(s![rows.clone(), base + lo..base + hi])
                .assign(&x.slice(s![.., src_lo..src_hi]));
        }
    }
    let mut z = conv.weight.slice(s![.., jlo * ch..jhi * ch]).dot(&cols);
    for (mut row, &b) in z.axis_iter_mut(Axis(0)).zip(conv.bias.iter()) {
        row.mapv_inplace(|v| v + b);
    }
    z
}

struct Coord {
    tensor: usize,
    index: usize,
    stage: Stage,
    row: usize,
    col: Option<usize>,
}

fn coords<T: Scalar>(model: &SegModel<T>) -> Vec<Coord> {
    let p = &model.params;
    let mut out = Vec::with_capacity(p.len());
    let mut tensor = 0;
    let conv = |out: &mut Vec<Coord>, c: &super::Conv1d<T>, stage: Stage, tensor: &mut usize| {
        let cols = c.weight.ncols();
        for index in 0..c.weight.len() {
            out.push(Coord { tensor: *tensor, index, stage, row: index / cols, col: Some(index % cols) });
        }
        *tensor += 1;
        for index in 0..c.bias.len() {
            out.push(Coord { tensor: *tensor, index, stage, row: index, col: None });
        }
        *tensor += 1;
    };
    conv(&mut out, &p.bottleneck, Stage::Bottleneck, &mut tensor);
    for (idx, layer) in p.blocks.iter().flatten().enumerate() {
        conv(&mut out, layer, Stage::Layer(idx), &mut tensor);
    }
    conv(&mut out, &p.out_conv, Stage::OutConv, &mut tensor);
    let k = p.theta.ncols();
    for index in 0..p.theta.len() {
        out.push(Coord { tensor, index, stage: Stage::Theta, row: index / k, col: Some(index % k) });
    }
    out
}

/// Numeric partial derivatives of the three unweighted loss terms for a run
/// of coordinates that share a tensor.
fn probe_batch<T: Scalar>(
    base: &Base<T>,
    coords: &[Coord],
    eps: f64,
) -> Result<Vec<(Terms, bool)>, ModelError> {
    let h = T::lit(eps);
    let items: Vec<(usize, Option<usize>, T)> = coords
        .iter()
        .flat_map(|c| [(c.row, c.col, h), (c.row, c.col, -h)])
        .collect();
    let (terms, kinks) = base.run(coords[0].stage, &items)?;
    Ok(terms
        .chunks(2)
        .zip(kinks)
        .map(|(pair, kink)| {
            let (plus, minus) = (pair[0], pair[1]);
            let d = [
                (plus[0] - minus[0]) / (2.0 * eps),
                (plus[1] - minus[1]) / (2.0 * eps),
                (plus[2] - minus[2]) / (2.0 * eps),
            ];
            (d, kink)
        })
        .collect())
}

/// Compares analytic and numeric gradients for each weighting in `configs`.
/// One finite-difference sweep serves all weightings.
pub fn check_gradients<T: Scalar>(
    model: &SegModel<T>,
    s: ArrayView2<T>,
    x: ArrayView2<T>,
    labels: &LabelMatrix,
    configs: &[LossWeights],
    cfg: &GradCheckConfig,
) -> Result<Vec<GradCheckReport>, ModelError> {
    let trace = model.forward_trace(s)?;
    super::loss::check_target(model, &x, trace.h.ncols())?;
    let layers = model.arch.layers_per_block();
    let mut skip_prefix = vec![Array2::zeros(trace.skip.raw_dim())];
    for b in 1..model.params.blocks.len() {
        let mut next = skip_prefix[b - 1].clone();
        next += &trace.layer_inputs[b * layers];
        skip_prefix.push(next);
    }
    let base = Base {
        model,
        x0: model.params.bottleneck.apply(&trace.input),
        trace: &trace,
        skip_prefix,
        x,
        labels,
    };

    let all = coords(model);
    let mut groups: Vec<&[Coord]> = Vec::new();
    let mut start = 0;
    for i in 1..=all.len() {
        if i == all.len() || all[i].tensor != all[start].tensor || i - start == cfg.batch.max(1) {
            groups.push(&all[start..i]);
            start = i;
        }
    }
    let mut numeric: Vec<(Terms, bool)> = groups
        .par_iter()
        .map(|g| probe_batch(&base, g, cfg.eps))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut eps = cfg.eps;
    for _ in 0..cfg.max_refinements {
        let pending: Vec<usize> = (0..all.len()).filter(|&i| numeric[i].1).collect();
        if pending.is_empty() {
            break;
        }
        eps /= 10.0;
        let redone: Vec<(usize, (Terms, bool))> = pending
            .par_iter()
            .map(|&i| Ok((i, probe_batch(&base, std::slice::from_ref(&all[i]), eps)?[0])))
            .collect::<Result<Vec<_>, ModelError>>()?;
        for (i, r) in redone {
            numeric[i] = r;
        }
    }
    let unresolved = numeric.iter().filter(|(_, k)| *k).count();
    let names = model.params.names();

    configs
        .iter()
        .map(|w| {
            let (_, grads) = backward(model, s, x, labels, w)?;
            let analytic: Vec<f64> = grads
                .tensors()
                .iter()
                .flat_map(|t| t.iter().map(|v| v.as_f64()))
                .collect();
            let mut report = GradCheckReport {
                weights: *w,
                checked: all.len(),
                max_rel_error: 0.0,
                worst_param: String::new(),
                worst_analytic: 0.0,
                worst_numeric: 0.0,
                unresolved_kinks: unresolved,
            };
            for (j, ((d, _), &a)) in numeric.iter().zip(&analytic).enumerate() {
                let n = w.alpha * d[0] + w.beta * d[1] + w.gamma * d[2];
                let err = (a - n).abs() / a.abs().max(n.abs()).max(cfg.floor);
                if err > report.max_rel_error || j == 0 {
                    report.max_rel_error = err;
                    report.worst_param = format!("{}[{}]", names[all[j].tensor], all[j].index);
                    report.worst_analytic = a;
                    report.worst_numeric = n;
                }
            }
            Ok(report)
        })
        .collect()
}
