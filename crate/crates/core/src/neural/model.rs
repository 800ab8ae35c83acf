use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelError;
use crate::nmf::{Dictionary, DictionaryMeta};
use crate::scalar::Scalar;

/// Shape of the encoder. Everything except `(input_dim, components, classes)`
/// is fixed by [`Architecture::new`]; the other fields exist so checkpoints
/// are self-describing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub components: usize,
    pub classes: usize,
    pub channels: usize,
    pub kernel: usize,
    pub blocks: usize,
    pub dilations: Vec<usize>,
}

impl Architecture {
    pub const CHANNELS: usize = 64;
    pub const KERNEL: usize = 3;
    pub const BLOCKS: usize = 3;
    pub const DILATIONS: [usize; 5] = [1, 2, 4, 8, 16];

    pub fn new(input_dim: usize, components: usize, classes: usize) -> Self {
        Self {
            input_dim,
            components,
            classes,
            channels: Self::CHANNELS,
            kernel: Self::KERNEL,
            blocks: Self::BLOCKS,
            dilations: Self::DILATIONS.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.components == 0 || self.classes == 0 {
            return Err(ModelError::Config(format!(
                "D, K and C must be >= 1, got D={}, K={}, C={}",
                self.input_dim, self.components, self.classes
            )));
        }
        if self.channels == 0 || self.kernel % 2 == 0 || self.dilations.iter().any(|&d| d == 0) {
            return Err(ModelError::Config(format!(
                "invalid convolution settings: channels={}, kernel={}, dilations={:?}",
                self.channels, self.kernel, self.dilations
            )));
        }
        Ok(())
    }

    pub fn layers_per_block(&self) -> usize {
        self.dilations.len()
    }

    pub fn parameter_count(&self) -> usize {
        let (d, k, c, ch, w) = (
            self.input_dim,
            self.components,
            self.classes,
            self.channels,
            self.kernel,
        );
        let bottleneck = ch * d + ch;
        let tcn = self.blocks * self.layers_per_block() * (ch * ch * w + ch);
        let out = k * ch + k;
        bottleneck + tcn + out + c * k
    }
}

/// 1-D convolution with same-length zero padding.
///
/// `weight` is `out × (taps·in)`; column `j·in + i` multiplies input channel
/// `i` shifted by `(j − taps/2)·dilation` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub taps: usize,
    pub dilation: usize,
}

impl<T: Scalar> Conv1d<T> {
    pub fn zeros(in_ch: usize, out_ch: usize, taps: usize, dilation: usize) -> Self {
        Self {
            weight: Array2::zeros((out_ch, taps * in_ch)),
            bias: Array1::zeros(out_ch),
            taps,
            dilation,
        }
    }

    fn uniform(in_ch: usize, out_ch: usize, taps: usize, dilation: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (1.0 / (in_ch * taps) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((out_ch, taps * in_ch), || {
            T::lit(rng.random_range(-bound..bound))
        });
        Self {
            weight,
            bias: Array1::zeros(out_ch),
            taps,
            dilation,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.ncols() / self.taps
    }

    pub fn out_channels(&self) -> usize {
        self.weight.nrows()
    }

    pub(crate) fn columns(&self, x: ArrayView2<T>) -> Array2<T> {
        im2col(x, self.taps, self.dilation)
    }

    pub(crate) fn apply(&self, cols: &Array2<T>) -> Array2<T> {
        let mut z = self.weight.dot(cols);
        for (mut row, &b) in z.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
            row.mapv_inplace(|v| v + b);
        }
        z
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        if self.taps == 1 {
            return self.apply(&x.to_owned());
        }
        self.apply(&self.columns(x))
    }
}

fn tap_offset(j: usize, taps: usize, dilation: usize) -> isize {
    (j as isize - (taps / 2) as isize) * dilation as isize
}

/// Valid destination frame range `[lo, hi)` for a shift of `off` frames.
fn shifted_range(frames: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (frames as isize - off).clamp(0, frames as isize) as usize;
    (lo.min(hi), hi)
}

pub(crate) fn im2col<T: Scalar>(x: ArrayView2<T>, taps: usize, dilation: usize) -> Array2<T> {
    let (c, t) = x.dim();
    let mut cols = Array2::zeros((taps * c, t));
    for j in 0..taps {
        let off = tap_offset(j, taps, dilation);
        let (lo, hi) = shifted_range(t, off);
        if lo < hi {
            let src_lo = (lo as isize + off) as usize;
            let src_hi = (hi as isize + off) as usize;
            cols.slice_mut(s![j * c..(j + 1) * c, lo..hi])
                .assign(&x.slice(s![.., src_lo..src_hi]));
        }
    }
    cols
}

/// Adjoint of [`im2col`].
pub(crate) fn col2im<T: Scalar>(cols: &Array2<T>, channels: usize, taps: usize, dilation: usize) -> Array2<T> {
    let t = cols.ncols();
    let mut x = Array2::zeros((channels, t));
    for j in 0..taps {
        let off = tap_offset(j, taps, dilation);
        let (lo, hi) = shifted_range(t, off);
        if lo < hi {
            let src_lo = (lo as isize + off) as usize;
            let src_hi = (hi as isize + off) as usize;
            let mut dst = x.slice_mut(s![.., src_lo..src_hi]);
            dst += &cols.slice(s![j * channels..(j + 1) * channels, lo..hi]);
        }
    }
    x
}

/// Trainable tensors. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub bottleneck: Conv1d<T>,
    /// `blocks[b][l]`: layer `l` of TCN block `b`.
    pub blocks: Vec<Vec<Conv1d<T>>>,
    pub out_conv: Conv1d<T>,
    /// `C × K`, no bias.
    pub theta: Array2<T>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn zeros(arch: &Architecture) -> Self {
        let ch = arch.channels;
        Self {
            bottleneck: Conv1d::zeros(arch.input_dim, ch, 1, 1),
            blocks: (0..arch.blocks)
                .map(|_| {
                    arch.dilations
                        .iter()
                        .map(|&d| Conv1d::zeros(ch, ch, arch.kernel, d))
                        .collect()
                })
                .collect(),
            out_conv: Conv1d::zeros(ch, arch.components, 1, 1),
            theta: Array2::zeros((arch.classes, arch.components)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let conv = |c: &Conv1d<T>| Conv1d {
            weight: Array2::zeros(c.weight.raw_dim()),
            bias: Array1::zeros(c.bias.len()),
            taps: c.taps,
            dilation: c.dilation,
        };
        Self {
            bottleneck: conv(&self.bottleneck),
            blocks: self.blocks.iter().map(|b| b.iter().map(conv).collect()).collect(),
            out_conv: conv(&self.out_conv),
            theta: Array2::zeros(self.theta.raw_dim()),
        }
    }

    /// Tensor names in serialization order.
    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["bottleneck.weight".to_string(), "bottleneck.bias".to_string()];
        for (b, block) in self.blocks.iter().enumerate() {
            for l in 0..block.len() {
                names.push(format!("block{b}.layer{l}.weight"));
                names.push(format!("block{b}.layer{l}.bias"));
            }
        }
        names.extend(["out.weight".into(), "out.bias".into(), "theta".into()]);
        names
    }

    /// Flat views of every tensor, in [`ParamSet::names`] order.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        let convs = std::iter::once(&self.bottleneck)
            .chain(self.blocks.iter().flatten())
            .chain(std::iter::once(&self.out_conv));
        for c in convs {
            out.push(c.weight.as_slice().expect("standard layout"));
            out.push(c.bias.as_slice().expect("standard layout"));
        }
        out.push(self.theta.as_slice().expect("standard layout"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        out.push(self.bottleneck.weight.as_slice_mut().expect("standard layout"));
        out.push(self.bottleneck.bias.as_slice_mut().expect("standard layout"));
        for block in &mut self.blocks {
            for layer in block {
                out.push(layer.weight.as_slice_mut().expect("standard layout"));
                out.push(layer.bias.as_slice_mut().expect("standard layout"));
            }
        }
        out.push(self.out_conv.weight.as_slice_mut().expect("standard layout"));
        out.push(self.out_conv.bias.as_slice_mut().expect("standard layout"));
        out.push(self.theta.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = *x + y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for a in self.tensors_mut() {
            for x in a.iter_mut() {
                *x = *x * factor;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        let conv = |c: &Conv1d<T>| Conv1d {
            weight: c.weight.mapv(|v| U::lit(v.as_f64())),
            bias: c.bias.mapv(|v| U::lit(v.as_f64())),
            taps: c.taps,
            dilation: c.dilation,
        };
        ParamSet {
            bottleneck: conv(&self.bottleneck),
            blocks: self.blocks.iter().map(|b| b.iter().map(conv).collect()).collect(),
            out_conv: conv(&self.out_conv),
            theta: self.theta.mapv(|v| U::lit(v.as_f64())),
        }
    }
}

/// Frozen per-dimension standardization applied to the input features.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm<T> {
    pub mean: Array1<T>,
    pub inv_std: Array1<T>,
}

impl<T: Scalar> InputNorm<T> {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: Array1::zeros(dim),
            inv_std: Array1::ones(dim),
        }
    }

    /// Mean and inverse standard deviation over all frames of all sequences.
    pub fn fit<'a>(dim: usize, seqs: impl IntoIterator<Item = ArrayView2<'a, T>>) -> Self {
        let mut sum = vec![0.0f64; dim];
        let mut sq = vec![0.0f64; dim];
        let mut n = 0usize;
        for seq in seqs {
            for col in seq.columns() {
                for (d, &v) in col.iter().enumerate() {
                    let v = v.as_f64();
                    sum[d] += v;
                    sq[d] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let inv_std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n as f64 - m * m).max(0.0);
                T::lit(1.0 / var.sqrt().max(1e-5))
            })
            .collect();
        Self {
            mean: mean.into_iter().map(T::lit).collect(),
            inv_std,
        }
    }

    pub fn apply(&self, s: ArrayView2<T>) -> Array2<T> {
        let mut out = s.to_owned();
        for ((mut row, &m), &k) in out.axis_iter_mut(Axis(0)).zip(&self.mean).zip(&self.inv_std) {
            row.mapv_inplace(|v| (v - m) * k);
        }
        out
    }
}

/// Frame classifier `logits = θ·Ψ(S)` whose latent `H = Ψ(S)` is tied to a
/// frozen NMF dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct SegModel<T> {
    pub arch: Architecture,
    pub input_norm: InputNorm<T>,
    pub params: ParamSet<T>,
    pub dictionary: Dictionary<T>,
    pub dictionary_meta: DictionaryMeta,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub(crate) input: Array2<T>,
    /// Input of each TCN layer, block-major.
    pub(crate) layer_inputs: Vec<Array2<T>>,
    /// Pre-activation of each TCN layer.
    pub(crate) layer_pre: Vec<Array2<T>>,
    pub(crate) skip: Array2<T>,
    pub(crate) h_pre: Array2<T>,
    pub h: Array2<T>,
    pub logits: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    /// Activations `H`, `K × T`, non-negative.
    pub h: Array2<T>,
    /// `θH`, `C × T`.
    pub logits: Array2<T>,
}

/// Seeded fan-in uniform initialization with zero biases.
pub fn init_model<T: Scalar>(
    arch: Architecture,
    dictionary: Dictionary<T>,
    dictionary_meta: DictionaryMeta,
    seed: u64,
) -> Result<SegModel<T>, ModelError> {
    arch.validate()?;
    if dictionary.components() != arch.components {
        return Err(ModelError::Dimension(format!(
            "dictionary has {} components, model expects K={}",
            dictionary.components(),
            arch.components
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ch = arch.channels;
    let bottleneck = Conv1d::uniform(arch.input_dim, ch, 1, 1, &mut rng);
    let blocks = (0..arch.blocks)
        .map(|_| {
            arch.dilations
                .iter()
                .map(|&d| Conv1d::uniform(ch, ch, arch.kernel, d, &mut rng))
                .collect()
        })
        .collect();
    let out_conv = Conv1d::uniform(ch, arch.components, 1, 1, &mut rng);
    let bound = (1.0 / arch.components as f64).sqrt();
    let theta = Array2::from_shape_simple_fn((arch.classes, arch.components), || {
        T::lit(rng.random_range(-bound..bound))
    });
    Ok(SegModel {
        input_norm: InputNorm::identity(arch.input_dim),
        arch,
        params: ParamSet {
            bottleneck,
            blocks,
            out_conv,
            theta,
        },
        dictionary,
        dictionary_meta,
    })
}

impl<T: Scalar> SegModel<T> {
    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn fit_input_norm<'a>(&mut self, seqs: impl IntoIterator<Item = ArrayView2<'a, T>>) {
        self.input_norm = InputNorm::fit(self.arch.input_dim, seqs);
    }

    pub fn cast<U: Scalar>(&self) -> SegModel<U> {
        SegModel {
            arch: self.arch.clone(),
            input_norm: InputNorm {
                mean: self.input_norm.mean.mapv(|v| U::lit(v.as_f64())),
                inv_std: self.input_norm.inv_std.mapv(|v| U::lit(v.as_f64())),
            },
            params: self.params.cast(),
            dictionary: self.dictionary.cast(),
            dictionary_meta: self.dictionary_meta,
        }
    }

    pub(crate) fn check_input(&self, s: &ArrayView2<T>) -> Result<(), ModelError> {
        let (d, t) = s.dim();
        if d != self.arch.input_dim {
            return Err(ModelError::Dimension(format!(
                "features have D={d}, model expects D={}",
                self.arch.input_dim
            )));
        }
        if t == 0 {
            return Err(ModelError::Dimension("feature sequence has no frames".into()));
        }
        Ok(())
    }

    pub fn forward_trace(&self, s: ArrayView2<T>) -> Result<ForwardTrace<T>, ModelError> {
        self.check_input(&s)?;
        let input = self.input_norm.apply(s);
        let p = &self.params;
        let mut x = p.bottleneck.apply(&input);
        let mut skip = Array2::<T>::zeros(x.raw_dim());
        let mut layer_inputs = Vec::with_capacity(p.blocks.len() * self.arch.layers_per_block());
        let mut layer_pre = Vec::with_capacity(layer_inputs.capacity());
        for block in &p.blocks {
            for layer in block {
                let z = layer.forward(x.view());
                let mut next = x.clone();
                next.zip_mut_with(&z, |a, &b| *a = *a + b.max(T::zero()));
                layer_inputs.push(std::mem::replace(&mut x, next));
                layer_pre.push(z);
            }
            skip += &x;
        }
        let h_pre = p.out_conv.apply(&skip);
        let h = h_pre.mapv(|v| v.max(T::zero()));
        let logits = p.theta.dot(&h);
        Ok(ForwardTrace {
            input,
            layer_inputs,
            layer_pre,
            skip,
            h_pre,
            h,
            logits,
        })
    }

    pub fn forward(&self, s: ArrayView2<T>) -> Result<ForwardOutput<T>, ModelError> {
        let tr = self.forward_trace(s)?;
        Ok(ForwardOutput {
            h: tr.h,
            logits: tr.logits,
        })
    }
}
