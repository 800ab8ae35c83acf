//! Explainable NMF-based multilabel audio segmentation.
//!
//! Features are encoded into non-negative activations `H` over a pre-trained
//! dictionary `W`; a bias-free linear map `Θ` turns `H` into per-class
//! logits. Everything numeric is generic over [`Scalar`] (`f32` or `f64`).

pub mod eval;
pub mod explain;
pub mod neural;
pub mod nmf;
pub mod probes;
pub mod scalar;
pub mod signal;

pub use scalar::Scalar;

pub type Dictionary32 = nmf::Dictionary<f32>;
pub type Dictionary64 = nmf::Dictionary<f64>;
pub type Activations32 = nmf::Activations<f32>;
pub type Activations64 = nmf::Activations<f64>;
pub type SegModel32 = neural::SegModel<f32>;
pub type SegModel64 = neural::SegModel<f64>;
pub type FeatureSequence32 = signal::FeatureSequence<f32>;
pub type FeatureSequence64 = signal::FeatureSequence<f64>;
pub type Spectrogram32 = signal::Spectrogram<f32>;
pub type Spectrogram64 = signal::Spectrogram<f64>;
pub type Example32 = neural::Example<f32>;
pub type Example64 = neural::Example<f64>;
