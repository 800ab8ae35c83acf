use ndarray::{Array2, ArrayView2, Axis, Zip};
use rayon::prelude::*;

use super::loss::{bce_grad, check_target, loss_terms};
use super::model::col2im;
use super::{LabelMatrix, LossBreakdown, LossWeights, ModelError, ParamSet, SegModel};
use crate::scalar::Scalar;

/// Exact gradients of [`super::total_loss`] for one sample.
///
/// The dictionary is frozen and receives no gradient.
pub fn backward<T: Scalar>(
    model: &SegModel<T>,
    s: ArrayView2<T>,
    x: ArrayView2<T>,
    labels: &LabelMatrix,
    weights: &LossWeights,
) -> Result<(LossBreakdown, ParamSet<T>), ModelError> {
    let tr = model.forward_trace(s)?;
    let frames = tr.h.ncols();
    check_target(model, &x, frames)?;
    if labels.values.dim() != tr.logits.dim() {
        return Err(ModelError::Dimension(format!(
            "labels are {:?}, logits are {:?}",
            labels.values.dim(),
            tr.logits.dim()
        )));
    }
    let loss = loss_terms(model, &tr.h, &tr.logits, x, labels, weights)?;
    let p = &model.params;
    let mut grads = p.zeros_like();

    // head: logits = θH
    let dlogits = bce_grad(&tr.logits, labels, T::lit(weights.alpha));
    for (c, mut row) in grads.theta.rows_mut().into_iter().enumerate() {
        let dl = dlogits.row(c);
        for (k, g) in row.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (&d, &h) in dl.iter().zip(tr.h.row(k)) {
                acc = acc + d * h;
            }
            *g = acc;
        }
    }
    let mut dh = p.theta.t().dot(&dlogits);
    if weights.beta != 0.0 {
        let w = &model.dictionary.values;
        let mut residual = w.dot(&tr.h);
        Zip::from(&mut residual).and(&x).for_each(|r, &xv| *r = *r - xv);
        // d/dH ‖X − WH‖² = 2Wᵀ(WH − X)
        let scale = T::lit(2.0 * weights.beta);
        dh.scaled_add(scale, &w.t().dot(&residual));
    }
    if weights.gamma != 0.0 {
        let g = T::lit(weights.gamma);
        dh.mapv_inplace(|v| v + g);
    }

    // H = relu(out_conv(skip))
    Zip::from(&mut dh).and(&tr.h_pre).for_each(|d, &z| {
        if z <= T::zero() {
            *d = T::zero();
        }
    });
    conv1x1_grads(&mut grads.out_conv, &dh, &tr.skip);
    let dskip = p.out_conv.weight.t().dot(&dh);

    // TCN blocks: x ← x + relu(conv(x)); skip = Σ block outputs
    let layers = model.arch.layers_per_block();
    let mut carry = Array2::<T>::zeros(dskip.raw_dim());
    for b in (0..p.blocks.len()).rev() {
        let mut dy = &dskip + &carry;
        for l in (0..layers).rev() {
            let idx = b * layers + l;
            let conv = &p.blocks[b][l];
            let mut dz = dy.clone();
            Zip::from(&mut dz).and(&tr.layer_pre[idx]).for_each(|d, &z| {
                if z <= T::zero() {
                    *d = T::zero();
                }
            });
            let cols = conv.columns(tr.layer_inputs[idx].view());
            let g = &mut grads.blocks[b][l];
            g.weight = dz.dot(&cols.t());
            g.bias = dz.sum_axis(Axis(1));
            let dcols = conv.weight.t().dot(&dz);
            dy += &col2im(&dcols, conv.in_channels(), conv.taps, conv.dilation);
        }
        carry = dy;
    }

    conv1x1_grads(&mut grads.bottleneck, &carry, &tr.input);

    for (name, tensor) in grads.names().into_iter().zip(grads.tensors()) {
        if tensor.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteGradient(name));
        }
    }
    Ok((loss, grads))
}

fn conv1x1_grads<T: Scalar>(g: &mut super::Conv1d<T>, dz: &Array2<T>, input: &Array2<T>) {
    g.weight = dz.dot(&input.t());
    g.bias = dz.sum_axis(Axis(1));
}

/// Mean loss and mean gradients over a batch of `(S, X, labels)` samples.
///
/// Samples are processed in parallel; the reduction runs in batch order so
/// the result does not depend on the thread count.
pub fn batch_gradients<T: Scalar>(
    model: &SegModel<T>,
    batch: &[(ArrayView2<T>, ArrayView2<T>, &LabelMatrix)],
    weights: &LossWeights,
) -> Result<(LossBreakdown, ParamSet<T>), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let per_sample: Vec<_> = batch
        .par_iter()
        .map(|(s, x, y)| backward(model, *s, *x, y, weights))
        .collect::<Result<_, _>>()?;
    let inv = 1.0 / batch.len() as f64;
    let mut loss = LossBreakdown::default();
    let mut iter = per_sample.into_iter();
    let (first_loss, mut grads) = iter.next().expect("non-empty batch");
    loss.accumulate(&first_loss, inv);
    for (l, g) in iter {
        loss.accumulate(&l, inv);
        grads.add_assign(&g);
    }
    grads.scale(T::lit(inv));
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{init_model, total_loss, Architecture};
    use crate::nmf::{init_factors, DictionaryMeta};
    use ndarray::s;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(c: usize) -> (SegModel<f64>, Array2<f64>, Array2<f64>, Array2<u8>) {
        let mut arch = Architecture::new(4, 6, c);
        arch.channels = 8;
        let (dict, _) = init_factors::<f64>(5, 1, 6, 3);
        let model = init_model(arch, dict, DictionaryMeta { mu: 0.1, seed: 3 }, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = Array2::from_shape_simple_fn((4, 12), || rng.random_range(-1.0..1.0));
        let x = Array2::from_shape_simple_fn((5, 12), || rng.random_range(0.0..1.0));
        let y = Array2::from_shape_simple_fn((c, 12), || rng.random_bool(0.5) as u8);
        (model, s, x, y)
    }

    #[test]
    fn masked_class_row_is_zero_and_others_match_reduced_problem() {
        let w = LossWeights { alpha: 1.0, beta: 0.0, gamma: 0.0 };
        let (model, s, x, y) = setup(3);
        let masked = LabelMatrix::new(y.clone(), vec![true, false, true]).unwrap();
        let (_, g) = backward(&model, s.view(), x.view(), &masked, &w).unwrap();
        assert!(g.theta.row(1).iter().all(|&v| v == 0.0));

        // the same problem with class 1 removed entirely
        let mut reduced = model.clone();
        reduced.arch.classes = 2;
        reduced.params.theta = ndarray::stack![
            ndarray::Axis(0),
            model.params.theta.row(0),
            model.params.theta.row(2)
        ];
        let y2 = ndarray::stack![ndarray::Axis(0), y.row(0), y.row(2)];
        let (_, g2) = backward(&reduced, s.view(), x.view(), &LabelMatrix::fully_annotated(y2).unwrap(), &w).unwrap();
        assert_eq!(g.theta.row(0), g2.theta.row(0));
        assert_eq!(g.theta.row(2), g2.theta.row(1));
    }

    #[test]
    fn batch_gradient_is_mean_of_samples() {
        let w = LossWeights::default();
        let (model, s, x, y) = setup(2);
        let labels = LabelMatrix::fully_annotated(y).unwrap();
        let a = (s.slice(s![.., ..6]), x.slice(s![.., ..6]), labels.slice_frames(0, 6));
        let b = (s.slice(s![.., 6..]), x.slice(s![.., 6..]), labels.slice_frames(6, 6));
        let batch = [(a.0, a.1, &a.2), (b.0, b.1, &b.2)];
        let (loss, g) = batch_gradients(&model, &batch, &w).unwrap();
        let (la, ga) = backward(&model, a.0, a.1, &a.2, &w).unwrap();
        let (lb, gb) = backward(&model, b.0, b.1, &b.2, &w).unwrap();
        assert!((loss.total - 0.5 * (la.total + lb.total)).abs() < 1e-12);
        for ((t, ta), tb) in g.tensors().iter().zip(ga.tensors()).zip(gb.tensors()) {
            for ((v, va), vb) in t.iter().zip(ta).zip(tb) {
                assert!((v - 0.5 * (va + vb)).abs() < 1e-12);
            }
        }
        assert!(batch_gradients(&model, &[], &w).is_err());
    }

    #[test]
    fn reported_loss_matches_total_loss() {
        let w = LossWeights::default();
        let (model, s, x, y) = setup(2);
        let labels = LabelMatrix::fully_annotated(y).unwrap();
        let (l, _) = backward(&model, s.view(), x.view(), &labels, &w).unwrap();
        let direct = total_loss(&model, s.view(), x.view(), &labels, &w).unwrap();
        assert_eq!(l, direct);
    }

    #[test]
    fn shape_errors() {
        let w = LossWeights::default();
        let (model, s, x, y) = setup(2);
        let labels = LabelMatrix::fully_annotated(y).unwrap();
        assert!(backward(&model, s.view(), x.slice(s![.., ..5]), &labels, &w).is_err());
        let short = labels.slice_frames(0, 5);
        assert!(backward(&model, s.view(), x.view(), &short, &w).is_err());
    }

    #[test]
    fn all_masked_without_penalties_has_zero_gradient() {
        let w = LossWeights { alpha: 1.0, beta: 0.0, gamma: 0.0 };
        let (model, s, x, y) = setup(2);
        let labels = LabelMatrix::new(y, vec![false, false]).unwrap();
        let (l, g) = backward(&model, s.view(), x.view(), &labels, &w).unwrap();
        assert_eq!(l.total, 0.0);
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn gradient_is_linear_in_alpha() {
        let (model, s, x, y) = setup(2);
        let labels = LabelMatrix::fully_annotated(y).unwrap();
        let one = LossWeights { alpha: 1.0, beta: 0.0, gamma: 0.0 };
        let two = LossWeights { alpha: 2.0, ..one };
        let (_, g1) = backward(&model, s.view(), x.view(), &labels, &one).unwrap();
        let (_, g2) = backward(&model, s.view(), x.view(), &labels, &two).unwrap();
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            for (u, v) in a.iter().zip(b) {
                assert_eq!(2.0 * u, *v);
            }
        }
    }

    #[test]
    fn degenerate_loss_compositions() {
        let (mut model, s, x, y) = setup(2);
        let w = LossWeights { alpha: 10.0, beta: 0.0, gamma: 0.1 };
        let labels = LabelMatrix::fully_annotated(y.clone()).unwrap();
        let a = total_loss(&model, s.view(), x.view(), &labels, &w).unwrap();
        let b = total_loss(&model, s.view(), (&x * 3.0).view(), &labels, &w).unwrap();
        assert_eq!(a.total, b.total);

        model.params = model.params.zeros_like();
        let w = LossWeights { alpha: 10.0, beta: 2.0, gamma: 0.0 };
        let masked = LabelMatrix::new(y, vec![false, false]).unwrap();
        let l = total_loss(&model, s.view(), x.view(), &masked, &w).unwrap();
        let sq: f64 = x.iter().map(|v| v * v).sum();
        assert!((l.total - 2.0 * sq).abs() < 1e-12);
    }
}
