//! Audio ingestion, STFT magnitude, log-mel features and the `NSF1`
//! feature-file format.
//!
//! `NSF1` layout (all little-endian):
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 4     | magic `NSF1`                              |
//! | 4     | D (u32)                                   |
//! | 4     | T (u32)                                   |
//! | 8     | hop in seconds (f64)                      |
//! | 4·D·T | values as f32, frame-major (column-major) |

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::scalar::Scalar;

pub const SAMPLE_RATE: u32 = 16_000;
pub const LOG_EPSILON: f64 = 1e-10;
const NSF_MAGIC: &[u8; 4] = b"NSF1";
const NSF_HEADER_LEN: usize = 4 + 4 + 4 + 8;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("unsupported sample rate: {0} Hz (expected {SAMPLE_RATE} Hz)")]
    UnsupportedSampleRate(u32),
    #[error("unsupported channel count: {0} (expected mono)")]
    UnsupportedChannels(u16),
    #[error("unsupported codec: {0}")]
    UnsupportedCodec(String),
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("clip too short: {len} samples, window needs {win_len}")]
    ClipTooShort { len: usize, win_len: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("feature file format error: {0}")]
    Format(String),
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Mono audio at [`SAMPLE_RATE`], amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip<T> {
    pub samples: Vec<T>,
    pub sample_rate: u32,
}

impl<T: Scalar> AudioClip<T> {
    /// Wraps raw samples, rejecting non-finite values and foreign rates.
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self, SignalError> {
        if sample_rate != SAMPLE_RATE {
            return Err(SignalError::UnsupportedSampleRate(sample_rate));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(SignalError::NonFiniteSample(i));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn channel_count(&self) -> u16 {
        1
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Reads a 16 kHz mono WAV file (16-bit PCM or 32-bit float).
///
/// 16-bit samples are scaled by 1/32768.
pub fn load_audio<T: Scalar>(path: impl AsRef<Path>) -> Result<AudioClip<T>, SignalError> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(SignalError::UnsupportedSampleRate(spec.sample_rate));
    }
    if spec.channels != 1 {
        return Err(SignalError::UnsupportedChannels(spec.channels));
    }
    let samples: Vec<T> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| T::lit(v as f64 / 32768.0)))
            .collect::<Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| T::lit(v as f64)))
            .collect::<Result<_, _>>()?,
        (fmt, bits) => {
            return Err(SignalError::UnsupportedCodec(format!(
                "{bits}-bit {fmt:?} samples"
            )))
        }
    };
    AudioClip::new(samples, spec.sample_rate)
}

/// Writes a clip as 16-bit PCM, clamping to the representable range.
pub fn write_wav<T: Scalar>(clip: &AudioClip<T>, path: impl AsRef<Path>) -> Result<(), SignalError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &clip.samples {
        let q = (s.as_f64() * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q)?;
    }
    writer.finalize()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub n_fft: usize,
    pub win_len: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: 512,
            win_len: 400,
            hop: 320,
        }
    }
}

impl StftConfig {
    pub fn freq_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Number of frames produced for `len` samples (no boundary padding).
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.win_len {
            0
        } else {
            1 + (len - self.win_len) / self.hop
        }
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if self.hop == 0 || self.win_len == 0 || self.win_len > self.n_fft {
            return Err(SignalError::Config(format!(
                "need 0 < win_len <= n_fft and hop > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Non-negative magnitude spectrogram, `F × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T> {
    pub values: Array2<T>,
    pub hop_seconds: f64,
    pub sample_rate: u32,
    pub n_fft: usize,
}

impl<T: Scalar> Spectrogram<T> {
    pub fn freq_bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }

    pub fn bin_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / self.n_fft as f64
    }
}

/// Acoustic features `D × T` at a fixed framerate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence<T> {
    pub values: Array2<T>,
    pub hop_seconds: f64,
}

impl<T: Scalar> FeatureSequence<T> {
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }
}

/// Periodic Hann window of length `len`.
pub fn hann_window<T: Scalar>(len: usize) -> Vec<T> {
    (0..len)
        .map(|n| {
            let phase = 2.0 * std::f64::consts::PI * n as f64 / len as f64;
            T::lit(0.5 - 0.5 * phase.cos())
        })
        .collect()
}

/// Hann-windowed magnitude STFT without centering.
///
/// Each window is placed at the start of an `n_fft` buffer and zero-padded.
pub fn stft_magnitude<T: Scalar>(
    clip: &AudioClip<T>,
    cfg: &StftConfig,
) -> Result<Spectrogram<T>, SignalError> {
    cfg.validate()?;
    let len = clip.samples.len();
    if len < cfg.win_len {
        return Err(SignalError::ClipTooShort {
            len,
            win_len: cfg.win_len,
        });
    }
    let frames = cfg.frame_count(len);
    let bins = cfg.freq_bins();
    let window = hann_window::<T>(cfg.win_len);
    let fft = FftPlanner::<T>::new().plan_fft_forward(cfg.n_fft);
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::new(T::zero(), T::zero()); cfg.n_fft];
    let mut values = Array2::<T>::zeros((bins, frames));

    for t in 0..frames {
        let start = t * cfg.hop;
        for (n, slot) in buf.iter_mut().enumerate() {
            let re = if n < cfg.win_len {
                clip.samples[start + n] * window[n]
            } else {
                T::zero()
            };
            *slot = Complex::new(re, T::zero());
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (f, c) in buf.iter().take(bins).enumerate() {
            values[[f, t]] = (c.re * c.re + c.im * c.im).sqrt();
        }
    }

    Ok(Spectrogram {
        values,
        hop_seconds: cfg.hop as f64 / clip.sample_rate as f64,
        sample_rate: clip.sample_rate,
        n_fft: cfg.n_fft,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelConfig {
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            f_min: 0.0,
            f_max: SAMPLE_RATE as f64 / 2.0,
        }
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank, `n_mels × (n_fft/2 + 1)`, unnormalized.
pub fn mel_filterbank<T: Scalar>(
    n_fft: usize,
    sample_rate: u32,
    cfg: &MelConfig,
) -> Result<Array2<T>, SignalError> {
    let nyquist = sample_rate as f64 / 2.0;
    if cfg.n_mels == 0 {
        return Err(SignalError::Config("n_mels must be >= 1".into()));
    }
    if !(cfg.f_min >= 0.0 && cfg.f_min < cfg.f_max && cfg.f_max <= nyquist) {
        return Err(SignalError::Config(format!(
            "band limits must satisfy 0 <= f_min < f_max <= {nyquist}, got [{}, {}]",
            cfg.f_min, cfg.f_max
        )));
    }
    let bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut bank = Array2::<T>::zeros((cfg.n_mels, bins));
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for b in 0..bins {
            let hz = b as f64 * sample_rate as f64 / n_fft as f64;
            let w = if hz > left && hz <= center {
                (hz - left) / (center - left)
            } else if hz > center && hz < right {
                (right - hz) / (right - center)
            } else {
                0.0
            };
            bank[[m, b]] = T::lit(w);
        }
    }
    Ok(bank)
}

/// Mel filterbank on magnitudes followed by `ln(x + 1e-10)`.
pub fn log_mel<T: Scalar>(
    spec: &Spectrogram<T>,
    cfg: &MelConfig,
) -> Result<FeatureSequence<T>, SignalError> {
    let bank = mel_filterbank::<T>(spec.n_fft, spec.sample_rate, cfg)?;
    if bank.ncols() != spec.freq_bins() {
        return Err(SignalError::Config(format!(
            "spectrogram has {} bins, filterbank expects {}",
            spec.freq_bins(),
            bank.ncols()
        )));
    }
    let eps = T::lit(LOG_EPSILON);
    let values = bank.dot(&spec.values).mapv(|x| (x + eps).ln());
    Ok(FeatureSequence {
        values,
        hop_seconds: spec.hop_seconds,
    })
}

pub fn encode_features<T: Scalar>(seq: &FeatureSequence<T>) -> Result<Vec<u8>, SignalError> {
    let (d, t) = seq.values.dim();
    let d32 = u32::try_from(d).map_err(|_| SignalError::Format(format!("D={d} exceeds u32")))?;
    let t32 = u32::try_from(t).map_err(|_| SignalError::Format(format!("T={t} exceeds u32")))?;
    let mut out = Vec::with_capacity(NSF_HEADER_LEN + 4 * d * t);
    out.extend_from_slice(NSF_MAGIC);
    out.extend_from_slice(&d32.to_le_bytes());
    out.extend_from_slice(&t32.to_le_bytes());
    out.extend_from_slice(&seq.hop_seconds.to_le_bytes());
    for col in seq.values.columns() {
        for &v in col {
            let v = v.to_f32().unwrap_or(f32::NAN);
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_features<T: Scalar>(bytes: &[u8]) -> Result<FeatureSequence<T>, SignalError> {
    if bytes.len() < NSF_HEADER_LEN {
        return Err(SignalError::Format(format!(
            "truncated header: {} bytes",
            bytes.len()
        )));
    }
    if &bytes[..4] != NSF_MAGIC {
        return Err(SignalError::Format(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let d = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let hop_seconds = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let payload = d
        .checked_mul(t)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| SignalError::Format(format!("D·T overflow for D={d}, T={t}")))?;
    let body = &bytes[NSF_HEADER_LEN..];
    if body.len() < payload {
        return Err(SignalError::Format(format!(
            "truncated payload: expected {payload} bytes, found {}",
            body.len()
        )));
    }
    if body.len() > payload {
        return Err(SignalError::Format(format!(
            "{} trailing bytes after payload",
            body.len() - payload
        )));
    }
    let mut values = Array2::<T>::zeros((d, t));
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        values[[i % d, i / d]] = T::lit(v as f64);
    }
    Ok(FeatureSequence {
        values,
        hop_seconds,
    })
}

pub fn write_features<T: Scalar>(
    seq: &FeatureSequence<T>,
    path: impl AsRef<Path>,
) -> Result<(), SignalError> {
    fs::write(path, encode_features(seq)?)?;
    Ok(())
}

pub fn read_features<T: Scalar>(path: impl AsRef<Path>) -> Result<FeatureSequence<T>, SignalError> {
    decode_features(&fs::read(path)?)
}
