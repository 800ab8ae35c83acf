//! Deterministic four-class synthetic corpus.
//!
//! Each clip mixes independent on/off event streams in disjoint bands: a
//! low-pitched speech-like stream (AM harmonic stacks under formant
//! envelopes), a high-pitched second speaker gated by the overlap process,
//! sustained triads, and high-passed broadband noise. Labels are the stream
//! states at each frame centre.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use nmfseg::signal::{write_wav, AudioClip, StftConfig, SAMPLE_RATE};

use crate::labels::write_labels;
use crate::manifest::{Manifest, ManifestRow, Split};
use crate::CliError;

pub const CLASS_NAMES: [&str; 4] = ["speech", "overlap", "music", "noise"];
pub const SPEECH: usize = 0;
pub const OVERLAP: usize = 1;
pub const MUSIC: usize = 2;
pub const NOISE: usize = 3;

pub fn class_names() -> Vec<String> {
    CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Alternating renewal process; on and off durations are uniform on
/// `[0.5·mean, 1.5·mean]` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventProcess {
    pub mean_on: f64,
    pub mean_off: f64,
}

impl EventProcess {
    /// Long-run fraction of time spent on.
    pub fn duty(&self) -> f64 {
        self.mean_on / (self.mean_on + self.mean_off)
    }
}

/// Per-event RMS level range in dB re full scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelRange {
    pub lo_db: f64,
    pub hi_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub seed: u64,
    pub sample_rate: u32,
    pub clip_seconds: f64,
    pub train_seconds: f64,
    pub dev_seconds: f64,
    pub test_seconds: f64,
    pub stft: StftConfig,
    pub speech: EventProcess,
    /// Gates the second speaker; only counts while the main speaker is on.
    pub overlap: EventProcess,
    pub music: EventProcess,
    pub noise: EventProcess,
    pub speech_level: LevelRange,
    pub music_level: LevelRange,
    pub noise_level: LevelRange,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            sample_rate: SAMPLE_RATE,
            clip_seconds: 30.0,
            train_seconds: 20.0 * 60.0,
            dev_seconds: 5.0 * 60.0,
            test_seconds: 5.0 * 60.0,
            stft: StftConfig::default(),
            speech: EventProcess { mean_on: 2.5, mean_off: 2.0 },
            overlap: EventProcess { mean_on: 1.2, mean_off: 2.4 },
            music: EventProcess { mean_on: 4.0, mean_off: 4.0 },
            noise: EventProcess { mean_on: 2.5, mean_off: 2.5 },
            speech_level: LevelRange { lo_db: -24.0, hi_db: -18.0 },
            music_level: LevelRange { lo_db: -26.0, hi_db: -20.0 },
            noise_level: LevelRange { lo_db: -32.0, hi_db: -26.0 },
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.sample_rate != SAMPLE_RATE {
            return bad(format!("sample_rate must be {SAMPLE_RATE}, got {}", self.sample_rate));
        }
        let durations = [self.clip_seconds, self.train_seconds, self.dev_seconds, self.test_seconds];
        if durations.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return bad(format!("corpus durations must be > 0, got {durations:?}"));
        }
        if self.clip_seconds * (self.sample_rate as f64) < self.stft.win_len as f64 {
            return bad("clip shorter than one analysis window".into());
        }
        for (name, p) in self.processes() {
            if !(p.mean_on > 0.0 && p.mean_off > 0.0 && p.mean_on.is_finite() && p.mean_off.is_finite()) {
                return bad(format!("{name} event durations must be > 0, got {p:?}"));
            }
        }
        for (name, l) in [
            ("speech", self.speech_level),
            ("music", self.music_level),
            ("noise", self.noise_level),
        ] {
            if !(l.lo_db <= l.hi_db && l.hi_db < 0.0) {
                return bad(format!("{name} level range must satisfy lo <= hi < 0 dB, got {l:?}"));
            }
        }
        self.stft.validate().map_err(|e| CliError::Config(e.to_string()))
    }

    fn processes(&self) -> [(&'static str, EventProcess); 4] {
        [
            ("speech", self.speech),
            ("overlap", self.overlap),
            ("music", self.music),
            ("noise", self.noise),
        ]
    }

    pub fn clip_samples(&self) -> usize {
        (self.clip_seconds * self.sample_rate as f64).round() as usize
    }

    /// Expected fraction of labelled frames per class.
    pub fn expected_label_fractions(&self) -> [f64; 4] {
        [
            self.speech.duty(),
            self.speech.duty() * self.overlap.duty(),
            self.music.duty(),
            self.noise.duty(),
        ]
    }

    /// Clip ids and splits in generation order.
    pub fn clip_plan(&self) -> Vec<(String, Split)> {
        let mut plan = Vec::new();
        for (split, secs) in [
            (Split::Train, self.train_seconds),
            (Split::Dev, self.dev_seconds),
            (Split::Test, self.test_seconds),
        ] {
            let n = (secs / self.clip_seconds).ceil().max(1.0) as usize;
            for i in 0..n {
                plan.push((format!("{}_{i:03}", split.as_str()), split));
            }
        }
        plan
    }
}

/// One generated clip before it is written out.
#[derive(Debug, Clone)]
pub struct SynthClip {
    pub samples: Vec<f64>,
    /// `C × T` frame labels.
    pub labels: Array2<u8>,
}

type Intervals = Vec<(usize, usize)>;

fn db_to_amp(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

fn sample_intervals(rng: &mut ChaCha8Rng, p: EventProcess, n: usize, sr: f64) -> Intervals {
    let mut on = rng.random_bool(p.duty());
    let mut pos = 0usize;
    let mut out = Vec::new();
    while pos < n {
        let mean = if on { p.mean_on } else { p.mean_off };
        let len = ((rng.random_range(0.5..1.5) * mean * sr).round() as usize).max(1);
        let end = (pos + len).min(n);
        if on {
            out.push((pos, end));
        }
        pos = end;
        on = !on;
    }
    out
}

fn intersect(a: &Intervals, b: &Intervals) -> Intervals {
    let (mut i, mut j, mut out) = (0, 0, Vec::new());
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if lo < hi {
            out.push((lo, hi));
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// RBJ biquad, direct form I.
#[derive(Clone, Copy, Default)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    x: [f64; 2],
    y: [f64; 2],
}

impl Biquad {
    fn highpass(f0: f64, q: f64, sr: f64) -> Self {
        let w = 2.0 * PI * f0 / sr;
        let alpha = w.sin() / (2.0 * q);
        let c = w.cos();
        let a0 = 1.0 + alpha;
        Self {
            b: [(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0].map(|v| v / a0),
            a: [-2.0 * c, 1.0 - alpha].map(|v| v / a0),
            ..Self::default()
        }
    }

    fn run(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.b[1] * self.x[0] + self.b[2] * self.x[1]
            - self.a[0] * self.y[0]
            - self.a[1] * self.y[1];
        self.x = [x, self.x[0]];
        self.y = [y, self.y[0]];
        y
    }
}

/// Band edges in Hz. The primary speaker stays in `SPEECH_BAND`, the
/// overlapping one in `OVERLAP_BAND`, music-like partials inside `MUSIC_BAND`
/// and noise above `NOISE_CUTOFF`.
pub const SPEECH_BAND: (f64, f64) = (0.0, 1400.0);
pub const OVERLAP_BAND: (f64, f64) = (1500.0, 2300.0);
pub const MUSIC_BAND: (f64, f64) = (2400.0, 4200.0);
pub const NOISE_CUTOFF: f64 = 4600.0;

/// Primary speakers come from the low pool, overlapping ones from the high.
pub const LOW_F0: (f64, f64) = (90.0, 130.0);
pub const HIGH_F0: (f64, f64) = (220.0, 290.0);

/// (F1, F2) pairs.
const VOWELS: [[f64; 2]; 6] = [
    [730.0, 1090.0],
    [530.0, 1840.0],
    [270.0, 2290.0],
    [570.0, 840.0],
    [300.0, 870.0],
    [660.0, 1720.0],
];
/// Vowel formants are mapped proportionally from [0, FORMANT_SPAN] onto the
/// speaker's band.
const FORMANT_SPAN: f64 = 2400.0;
const FORMANT_GAIN: [f64; 2] = [1.0, 0.5];
const FORMANT_BW: [f64; 2] = [120.0, 160.0];
const FADE_SECONDS: f64 = 0.01;

fn fade(i: usize, len: usize, ramp: usize) -> f64 {
    let d = i.min(len - 1 - i);
    if d >= ramp {
        1.0
    } else {
        0.5 - 0.5 * (PI * d as f64 / ramp as f64).cos()
    }
}

/// Scales each interval of `stream` to an RMS drawn from `level`, with short
/// raised-cosine edges, and silences everything outside the intervals.
fn level_events(rng: &mut ChaCha8Rng, stream: &mut [f64], events: &Intervals, level: LevelRange, sr: f64) {
    let ramp = (FADE_SECONDS * sr) as usize;
    let mut prev_end = 0;
    for &(a, b) in events {
        stream[prev_end..a].fill(0.0);
        prev_end = b;
        let target = db_to_amp(rng.random_range(level.lo_db..=level.hi_db));
        let seg = &mut stream[a..b];
        let rms = (seg.iter().map(|v| v * v).sum::<f64>() / seg.len() as f64).sqrt();
        let g = if rms > 0.0 { target / rms } else { 0.0 };
        let len = seg.len();
        for (i, v) in seg.iter_mut().enumerate() {
            *v *= g * fade(i, len, ramp);
        }
    }
    stream[prev_end..].fill(0.0);
}

fn formant_gain(f: f64, formants: &[f64; 2]) -> f64 {
    (0..2)
        .map(|k| {
            let d = (f - formants[k]) / (0.5 * FORMANT_BW[k]);
            FORMANT_GAIN[k] / (1.0 + d * d)
        })
        .sum::<f64>()
        + 0.02
}

/// Voiced syllables: harmonics of a gliding pitch around `f0` inside `band`,
/// shaped by per-syllable vowel formants and amplitude-modulated at the
/// syllable rate.
fn speech_stream(
    rng: &mut ChaCha8Rng,
    n: usize,
    events: &Intervals,
    f0: f64,
    band: (f64, f64),
    sr: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let mut phase: f64 = rng.random();
    let mut amps = Vec::new();
    for &(a, b) in events {
        let mut pos = a;
        while pos < b {
            let len = ((rng.random_range(0.12..0.28) * sr) as usize).clamp(1, b - pos);
            let v = VOWELS[rng.random_range(0..VOWELS.len())]
                .map(|f| band.0 + f / FORMANT_SPAN * (band.1 - band.0));
            let (p0, p1) = (f0 * rng.random_range(0.92..1.08), f0 * rng.random_range(0.92..1.08));
            let vib_rate = rng.random_range(4.0..6.0);
            for i in 0..len {
                let tau = i as f64 / len as f64;
                let t = (pos + i) as f64 / sr;
                let pitch = (p0 + (p1 - p0) * tau) * (1.0 + 0.01 * (2.0 * PI * vib_rate * t).sin());
                phase = (phase + pitch / sr).fract();
                let harmonics = (band.1 / pitch) as usize;
                amps.clear();
                amps.extend((1..=harmonics).map(|h| {
                    let f = h as f64 * pitch;
                    if f >= band.0 {
                        formant_gain(f, &v)
                    } else {
                        0.0
                    }
                }));
                // sin(hθ) by the Chebyshev recurrence.
                let theta = 2.0 * PI * phase;
                let (s1, c1) = theta.sin_cos();
                let (mut prev, mut cur) = (0.0, s1);
                let mut y = 0.0;
                for &amp in &amps {
                    y += amp * cur;
                    let next = 2.0 * c1 * cur - prev;
                    prev = cur;
                    cur = next;
                }
                out[pos + i] = y * (0.55 + 0.45 * (PI * tau).sin());
            }
            pos += len;
        }
    }
    out
}

/// Triads rooted in C5–B5 whose partials are rendered only inside
/// [`MUSIC_BAND`]; `major` fixes the chord quality, otherwise it is drawn per
/// chord.
fn music_stream(rng: &mut ChaCha8Rng, n: usize, events: &Intervals, major: Option<bool>, sr: f64) -> Vec<f64> {
    let ramp = (FADE_SECONDS * sr) as usize;
    let mut out = vec![0.0; n];
    for &(a, b) in events {
        let mut pos = a;
        while pos < b {
            let len = ((rng.random_range(0.8..1.6) * sr) as usize).clamp(1, b - pos);
            let root = rng.random_range(72..84) as f64;
            let third = if major.unwrap_or_else(|| rng.random_bool(0.5)) { 4.0 } else { 3.0 };
            let mut partials: Vec<(f64, f64, f64)> = Vec::new();
            for m in [root, root + third, root + 7.0] {
                let f = 440.0 * 2f64.powf((m - 69.0) / 12.0);
                for h in 1..16 {
                    let fh = f * h as f64;
                    if fh >= MUSIC_BAND.0 && fh <= MUSIC_BAND.1 {
                        partials.push((fh / sr, 0.85f64.powi(h), rng.random()));
                    }
                }
            }
            for i in 0..len {
                let mut y = 0.0;
                for (step, amp, p) in partials.iter_mut() {
                    y += *amp * (2.0 * PI * *p).sin();
                    *p = (*p + *step).fract();
                }
                out[pos + i] = y * fade(i, len, ramp);
            }
            pos += len;
        }
    }
    out
}

fn white(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// White noise through an 8th-order Butterworth high-pass at [`NOISE_CUTOFF`].
fn noise_stream(rng: &mut ChaCha8Rng, n: usize, sr: f64) -> Vec<f64> {
    let mut stages = [0.5098, 0.6013, 0.9000, 2.5629].map(|q| Biquad::highpass(NOISE_CUTOFF, q, sr));
    white(rng, n)
        .into_iter()
        .map(|x| stages.iter_mut().fold(x, |acc, s| s.run(acc)))
        .collect()
}

fn frame_labels(intervals: &Intervals, frames: usize, stft: &StftConfig) -> Vec<u8> {
    let mut out = vec![0u8; frames];
    for &(a, b) in intervals {
        for (t, v) in out.iter_mut().enumerate() {
            let c = t * stft.hop + stft.win_len / 2;
            if c >= a && c < b {
                *v = 1;
            }
        }
    }
    out
}

/// Synthesizes clip `index` from its own stream of the corpus seed.
pub fn synthesize_clip(spec: &CorpusSpec, index: u64) -> SynthClip {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let sr = spec.sample_rate as f64;
    let n = spec.clip_samples();

    let speech = sample_intervals(&mut rng, spec.speech, n, sr);
    let gate = sample_intervals(&mut rng, spec.overlap, n, sr);
    let overlap = intersect(&speech, &gate);
    let music = sample_intervals(&mut rng, spec.music, n, sr);
    let noise = sample_intervals(&mut rng, spec.noise, n, sr);

    let f0a = rng.random_range(LOW_F0.0..LOW_F0.1);
    let f0b = rng.random_range(HIGH_F0.0..HIGH_F0.1);

    let mut a = speech_stream(&mut rng, n, &speech, f0a, SPEECH_BAND, sr);
    level_events(&mut rng, &mut a, &speech, spec.speech_level, sr);
    let mut b = speech_stream(&mut rng, n, &overlap, f0b, OVERLAP_BAND, sr);
    level_events(&mut rng, &mut b, &overlap, spec.speech_level, sr);
    let mut m = music_stream(&mut rng, n, &music, None, sr);
    level_events(&mut rng, &mut m, &music, spec.music_level, sr);
    let mut z = noise_stream(&mut rng, n, sr);
    level_events(&mut rng, &mut z, &noise, spec.noise_level, sr);

    let samples: Vec<f64> = (0..n)
        .map(|i| (a[i] + b[i] + m[i] + z[i]).clamp(-1.0, 1.0))
        .collect();

    let frames = spec.stft.frame_count(n);
    let mut labels = Array2::<u8>::zeros((CLASS_NAMES.len(), frames));
    for (c, iv) in [&speech, &overlap, &music, &noise].into_iter().enumerate() {
        for (t, v) in frame_labels(iv, frames, &spec.stft).into_iter().enumerate() {
            labels[[c, t]] = v;
        }
    }
    SynthClip { samples, labels }
}

/// Clip-level probe tasks on single-source clips.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeKind {
    /// Speech-like vs music-like vs noise.
    Source,
    /// Low vs high pitch pool of a single speaker.
    Register,
    /// Major vs minor triads.
    ChordQuality,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 3] = [ProbeKind::Source, ProbeKind::Register, ProbeKind::ChordQuality];

    pub fn name(&self) -> &'static str {
        match self {
            ProbeKind::Source => "source",
            ProbeKind::Register => "register",
            ProbeKind::ChordQuality => "chord_quality",
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            ProbeKind::Source => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeItem {
    pub samples: Vec<f64>,
    pub label: usize,
    pub train: bool,
}

/// `per_class` clips of each label; alternate rounds go to train and test.
pub fn probe_items(kind: ProbeKind, per_class: usize, seconds: f64, seed: u64) -> Vec<ProbeItem> {
    let sr = SAMPLE_RATE as f64;
    let n = (seconds * sr).round() as usize;
    let classes = kind.class_count();
    let level = CorpusSpec::default();
    (0..per_class * classes)
        .into_par_iter()
        .map(|i| {
            let label = i % classes;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ PROBE_SEED_SALT);
            rng.set_stream(((kind as u64) << 32) | i as u64);
            let all = vec![(0, n)];
            let (mut x, lv) = match (kind, label) {
                (ProbeKind::Source, 0) | (ProbeKind::Register, _) => {
                    let low = kind == ProbeKind::Register && label == 0 || kind == ProbeKind::Source && rng.random_bool(0.5);
                    let (lo, hi) = if low { LOW_F0 } else { HIGH_F0 };
                    let f0 = rng.random_range(lo..hi);
                    (speech_stream(&mut rng, n, &all, f0, SPEECH_BAND, sr), level.speech_level)
                }
                (ProbeKind::Source, 1) => (music_stream(&mut rng, n, &all, None, sr), level.music_level),
                (ProbeKind::Source, _) => (noise_stream(&mut rng, n, sr), level.noise_level),
                (ProbeKind::ChordQuality, l) => (music_stream(&mut rng, n, &all, Some(l == 0), sr), level.music_level),
            };
            level_events(&mut rng, &mut x, &all, lv, sr);
            ProbeItem {
                samples: x,
                label,
                train: (i / classes) % 2 == 0,
            }
        })
        .collect()
}

const PROBE_SEED_SALT: u64 = 0x5052_4f42_4553_0001;

/// Writes `audio/<id>.wav`, `labels/<id>.lab` and `manifest.csv` under
/// `out_dir`. Clips are synthesized in parallel from per-clip streams.
pub fn generate_corpus(spec: &CorpusSpec, out_dir: &Path) -> Result<Manifest, CliError> {
    spec.validate()?;
    let audio_dir = out_dir.join("audio");
    let label_dir = out_dir.join("labels");
    for d in [&audio_dir, &label_dir] {
        fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
    }
    let hop_seconds = spec.stft.hop as f64 / spec.sample_rate as f64;
    let plan = spec.clip_plan();
    let rows = plan
        .par_iter()
        .enumerate()
        .map(|(i, (id, split))| {
            let clip = synthesize_clip(spec, i as u64);
            let audio_rel = format!("audio/{id}.wav");
            let label_rel = format!("labels/{id}.lab");
            let audio = AudioClip::new(clip.samples, spec.sample_rate)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let audio_path = out_dir.join(&audio_rel);
            write_wav(&audio, &audio_path).map_err(|e| CliError::signal(&audio_path, e))?;
            write_labels(&out_dir.join(&label_rel), &clip.labels, None, hop_seconds)?;
            Ok(ManifestRow {
                clip_id: id.clone(),
                audio_path: audio_rel,
                feature_path: None,
                label_path: label_rel,
                split: *split,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let manifest = Manifest::new(rows, out_dir.to_path_buf())?;
    manifest.write(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_spec() -> CorpusSpec {
        CorpusSpec {
            clip_seconds: 6.0,
            train_seconds: 12.0,
            dev_seconds: 6.0,
            test_seconds: 6.0,
            seed: 5,
            ..CorpusSpec::default()
        }
    }

    #[test]
    fn same_seed_same_clip() {
        let s = short_spec();
        let a = synthesize_clip(&s, 1);
        let b = synthesize_clip(&s, 1);
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.labels, b.labels);
        let c = synthesize_clip(&s, 2);
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn overlap_implies_speech() {
        let s = short_spec();
        for i in 0..4 {
            let clip = synthesize_clip(&s, i);
            for t in 0..clip.labels.ncols() {
                if clip.labels[[OVERLAP, t]] == 1 {
                    assert_eq!(clip.labels[[SPEECH, t]], 1);
                }
            }
        }
    }

    #[test]
    fn label_shape_matches_frontend() {
        let s = short_spec();
        let clip = synthesize_clip(&s, 0);
        assert_eq!(clip.samples.len(), 96_000);
        assert_eq!(clip.labels.dim(), (4, s.stft.frame_count(96_000)));
        assert!(clip.samples.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn intersect_matches_pointwise_and() {
        let a = vec![(0, 5), (8, 12), (20, 30)];
        let b = vec![(3, 9), (11, 25)];
        assert_eq!(intersect(&a, &b), vec![(3, 5), (8, 9), (11, 12), (20, 25)]);
    }

    #[test]
    fn noise_energy_sits_above_four_khz_only_for_noise() {
        use nmfseg::signal::stft_magnitude;
        let s = CorpusSpec {
            noise: EventProcess { mean_on: 1e-3, mean_off: 1e6 },
            ..short_spec()
        };
        let clip = synthesize_clip(&s, 3);
        let audio = AudioClip::new(clip.samples, SAMPLE_RATE).unwrap();
        let spec = stft_magnitude::<f64>(&audio, &s.stft).unwrap();
        let hi: f64 = spec.values.slice(ndarray::s![140.., ..]).iter().map(|v| v * v).sum();
        let all: f64 = spec.values.iter().map(|v| v * v).sum();
        assert!(hi / all < 1e-4, "high-band share {}", hi / all);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = short_spec();
        s.clip_seconds = 0.0;
        assert!(s.validate().is_err());
        let mut s = short_spec();
        s.overlap.mean_on = -1.0;
        assert!(s.validate().is_err());
        let mut s = short_spec();
        s.sample_rate = 8000;
        assert!(s.validate().is_err());
    }
}
