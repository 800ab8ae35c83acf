//! Pipeline stages shared by the subcommands and the acceptance tests.

use std::path::Path;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::Serialize;

use nmfseg::eval::{decisions_from_logits, frame_counts, frames_to_segments, F1Report, FrameCounts};
use nmfseg::explain::{component_report, relevance_record, ComponentReport, RelevanceMode, RelevanceRecord};
use nmfseg::neural::{
    evaluate_examples, init_model, train, Architecture, Example, LossBreakdown, LossWeights,
    SegModel, TrainConfig, TrainOutcome,
};
use nmfseg::nmf::{train_snmf, Dictionary, DictionaryMeta, SnmfConfig, SnmfResult};
use nmfseg::probes::{eval_probe, majority_baseline, train_probe, ProbeConfig, ProbeResult, ProbeTask};
use nmfseg::signal::{load_audio, log_mel, read_features, stft_magnitude, AudioClip, MelConfig, StftConfig};

use crate::config::Config;
use crate::corpus::{self, CorpusSpec, CLASS_NAMES};
use crate::labels::read_labels;
use crate::manifest::{Manifest, Split};
use crate::CliError;

/// Working precision of the desk pipeline; checkpoints store f32 anyway.
pub type F = f32;

pub fn stft_config(cfg: &Config) -> StftConfig {
    StftConfig {
        n_fft: cfg.n_fft,
        win_len: cfg.win_len,
        hop: cfg.hop,
    }
}

pub fn mel_config(cfg: &Config) -> MelConfig {
    MelConfig {
        n_mels: cfg.n_mels,
        f_min: cfg.f_min,
        f_max: cfg.f_max,
    }
}

pub fn corpus_spec(cfg: &Config) -> CorpusSpec {
    CorpusSpec {
        seed: cfg.seed,
        clip_seconds: cfg.clip_seconds,
        train_seconds: cfg.train_minutes * 60.0,
        dev_seconds: cfg.dev_minutes * 60.0,
        test_seconds: cfg.test_minutes * 60.0,
        stft: stft_config(cfg),
        ..CorpusSpec::default()
    }
}

pub fn loss_weights(cfg: &Config) -> LossWeights {
    LossWeights {
        alpha: cfg.alpha,
        beta: cfg.beta,
        gamma: cfg.gamma,
    }
}

pub fn train_config(cfg: &Config) -> TrainConfig {
    TrainConfig {
        weights: loss_weights(cfg),
        lr: cfg.lr,
        batch_size: cfg.batch,
        segment_seconds: cfg.segment_seconds,
        epochs: cfg.epochs,
        seed: cfg.seed,
        threshold: cfg.threshold,
    }
}

pub fn parse_split(cfg: &Config) -> Result<Split, CliError> {
    cfg.split.parse().map_err(CliError::Config)
}

/// Log-mel features `S` and reconstruction target `X` for one clip.
pub fn audio_streams(audio: &AudioClip<F>, cfg: &Config) -> Result<(Array2<F>, Array2<F>), CliError> {
    let spec = stft_magnitude(audio, &stft_config(cfg)).map_err(|e| CliError::stage("stft", e))?;
    let feats = log_mel(&spec, &mel_config(cfg)).map_err(|e| CliError::stage("log-mel", e))?;
    let scale = cfg.recon_scale as F;
    let target = if cfg.recon_log {
        spec.values.mapv(|v| v.ln_1p() * scale)
    } else {
        spec.values.mapv(|v| v * scale)
    };
    Ok((feats.values, target))
}

fn load_example(m: &Manifest, idx: usize, cfg: &Config) -> Result<Example<F>, CliError> {
    let row = &m.rows[idx];
    let audio_path = m.resolve(&row.audio_path);
    if !audio_path.is_file() {
        return Err(CliError::MissingFile(audio_path));
    }
    let audio = load_audio::<F>(&audio_path).map_err(|e| CliError::signal(&audio_path, e))?;
    let (mut feats, target) = audio_streams(&audio, cfg)?;
    if let Some(rel) = &row.feature_path {
        let p = m.resolve(rel);
        let seq = read_features::<F>(&p).map_err(|e| CliError::signal(&p, e))?;
        if seq.dim() != cfg.n_mels {
            return Err(CliError::format(&p, format!("features have D={}, n_mels={}", seq.dim(), cfg.n_mels)));
        }
        feats = seq.values;
    }
    let label_path = m.resolve(&row.label_path);
    let lf = read_labels(&label_path)?;
    if lf.classes() != CLASS_NAMES.len() {
        return Err(CliError::format(&label_path, format!("expected {} classes", CLASS_NAMES.len())));
    }
    let hop = cfg.hop as f64 / audio.sample_rate as f64;
    if (lf.hop_seconds - hop).abs() > 1e-9 {
        return Err(CliError::format(&label_path, format!("hop {} s, features use {hop} s", lf.hop_seconds)));
    }
    let labels = lf.to_label_matrix(&label_path)?;
    Example::new(row.clip_id.clone(), feats, target, labels, hop)
        .map_err(|e| CliError::format(&label_path, e.to_string()))
}

/// All clips of one split, in manifest order.
pub fn load_split(m: &Manifest, split: Split, cfg: &Config) -> Result<Vec<Example<F>>, CliError> {
    let idx: Vec<usize> = (0..m.rows.len()).filter(|&i| m.rows[i].split == split).collect();
    idx.par_iter().map(|&i| load_example(m, i, cfg)).collect()
}

pub fn load_manifest(cfg: &Config) -> Result<Manifest, CliError> {
    Manifest::load(&cfg.data_dir.join("manifest.csv"))
}

/// Sparse NMF on every `dict_stride`-th training frame.
pub fn pretrain_dictionary(train: &[Example<F>], cfg: &Config) -> Result<SnmfResult<F>, CliError> {
    let stride = cfg.dict_stride.max(1);
    let views: Vec<ArrayView2<F>> = train.iter().map(|e| e.target.slice(s![.., ..;stride])).collect();
    if views.is_empty() {
        return Err(CliError::Config("no training clips for dictionary learning".into()));
    }
    let x = concatenate(Axis(1), &views).map_err(|e| CliError::stage("dictionary", e))?;
    let snmf = SnmfConfig {
        components: cfg.k,
        mu: cfg.mu,
        max_iters: cfg.dict_iters,
        rel_tol: cfg.dict_tol,
        seed: cfg.seed,
    };
    train_snmf(x.view(), &snmf).map_err(|e| CliError::stage("dictionary", e))
}

pub fn architecture(cfg: &Config) -> Architecture {
    let mut arch = Architecture::new(cfg.n_mels, cfg.k, CLASS_NAMES.len());
    arch.channels = cfg.channels;
    arch.blocks = cfg.blocks;
    arch.kernel = cfg.kernel;
    arch
}

pub fn train_model(
    dict: Dictionary<F>,
    meta: DictionaryMeta,
    train_set: &[Example<F>],
    dev_set: &[Example<F>],
    cfg: &Config,
) -> Result<TrainOutcome<F>, CliError> {
    if dict.freq_bins() != cfg.n_fft / 2 + 1 {
        return Err(CliError::Config(format!(
            "dictionary has {} bins, n_fft={} needs {}",
            dict.freq_bins(),
            cfg.n_fft,
            cfg.n_fft / 2 + 1
        )));
    }
    let mut model = init_model(architecture(cfg), dict, meta, cfg.seed).map_err(|e| CliError::stage("model", e))?;
    model.fit_input_norm(train_set.iter().map(|e| e.features.view()));
    train(model, train_set, dev_set, &train_config(cfg)).map_err(|e| CliError::stage("training", e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub loss: LossBreakdown,
    pub report: F1Report,
    /// Mean `‖H‖₁` per frame.
    pub h_l1_per_frame: f64,
}

pub fn evaluate(model: &SegModel<F>, examples: &[Example<F>], cfg: &Config) -> Result<Evaluation, CliError> {
    let (loss, report) = evaluate_examples(model, examples, &loss_weights(cfg), cfg.threshold)
        .map_err(|e| CliError::stage("evaluation", e))?;
    let mut l1 = 0.0;
    let mut frames = 0usize;
    for ex in examples {
        let out = model.forward(ex.features.view()).map_err(|e| CliError::stage("evaluation", e))?;
        l1 += out.h.iter().map(|&v| v as f64).sum::<f64>();
        frames += ex.frames();
    }
    Ok(Evaluation {
        loss,
        report,
        h_l1_per_frame: if frames == 0 { 0.0 } else { l1 / frames as f64 },
    })
}

/// Pooled frame counts with post-processing through segments (`min_dur`).
pub fn segment_and_score(
    model: &SegModel<F>,
    examples: &[Example<F>],
    cfg: &Config,
) -> Result<(String, F1Report), CliError> {
    let names = corpus::class_names();
    let mut lines = String::new();
    let mut counts: Vec<Option<FrameCounts>> = vec![None; CLASS_NAMES.len()];
    for ex in examples {
        let out = model.forward(ex.features.view()).map_err(|e| CliError::stage("segment", e))?;
        let dec = decisions_from_logits(out.logits.view(), cfg.threshold, ex.hop_seconds);
        let segs = frames_to_segments(dec.binary.view(), ex.hop_seconds, cfg.min_dur);
        lines.push_str(&segs.to_lines(&ex.id, &names));
        let binary = nmfseg::eval::rasterize(&segs, ex.frames(), ex.hop_seconds);
        let c = frame_counts(binary.view(), &ex.labels).map_err(|e| CliError::stage("segment", e))?;
        for (acc, new) in counts.iter_mut().zip(c) {
            if let Some(n) = new {
                *acc = Some(acc.unwrap_or_default() + n);
            }
        }
    }
    Ok((lines, F1Report::from_counts(&counts)))
}

/// Explanation samples: per class, the first `per_class` reference segments
/// of at least `min_frames` frames, in manifest order.
pub fn explain_records(
    model: &SegModel<F>,
    examples: &[Example<F>],
    per_class: usize,
    min_frames: usize,
    tau: f64,
) -> Result<Vec<RelevanceRecord>, CliError> {
    let mut records = Vec::new();
    let theta = model.params.theta.view();
    for c in 0..CLASS_NAMES.len() {
        let mut taken = 0;
        'clips: for ex in examples {
            if !ex.labels.mask[c] {
                continue;
            }
            let row = ex.labels.values.row(c);
            let mut t = 0;
            while t < row.len() {
                if row[t] == 0 {
                    t += 1;
                    continue;
                }
                let start = t;
                while t < row.len() && row[t] == 1 {
                    t += 1;
                }
                if t - start < min_frames {
                    continue;
                }
                let out = model
                    .forward(ex.features.slice(s![.., start..t]))
                    .map_err(|e| CliError::stage("explain", e))?;
                let id = format!("{}@{}", ex.id, start);
                let rec = relevance_record(id, c, out.h.view(), theta, tau, RelevanceMode::MinMax)
                    .map_err(|e| CliError::stage("explain", e))?;
                records.push(rec);
                taken += 1;
                if taken == per_class {
                    break 'clips;
                }
            }
        }
        if taken < per_class {
            log::warn!("class {} has only {taken} explanation samples", CLASS_NAMES[c]);
        }
    }
    Ok(records)
}

pub fn explain_report(records: &[RelevanceRecord], per_class: usize, cfg: &Config) -> Result<ComponentReport, CliError> {
    component_report(records, per_class, cfg.band, cfg.compact_limit).map_err(|e| CliError::stage("explain", e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeOutcome {
    pub task: String,
    pub classes: usize,
    pub train_items: usize,
    pub test_items: usize,
    pub probe: ProbeResult,
    pub majority: ProbeResult,
}

/// Trains and scores a probe on frozen `H` of the synthetic probe clips.
pub fn run_probes(model: &SegModel<F>, cfg: &Config) -> Result<Vec<ProbeOutcome>, CliError> {
    let pad_to = ((cfg.probe_seconds * nmfseg::signal::SAMPLE_RATE as f64 - cfg.win_len as f64) / cfg.hop as f64)
        .floor() as usize
        + 1;
    let probe_cfg = ProbeConfig {
        epochs: cfg.probe_epochs,
        lr: cfg.probe_lr,
        batch_size: cfg.probe_batch,
        seed: cfg.seed,
    };
    let mut outcomes = Vec::new();
    for task in corpus::ProbeKind::ALL {
        let items = corpus::probe_items(task, cfg.probe_clips, cfg.probe_seconds, cfg.seed);
        let encoded: Vec<(Array2<F>, usize, bool)> = items
            .par_iter()
            .map(|it| {
                let audio = AudioClip::new(it.samples.iter().map(|&v| v as F).collect(), nmfseg::signal::SAMPLE_RATE)
                    .map_err(|e| CliError::stage("probe", e))?;
                let (feats, _) = audio_streams(&audio, cfg)?;
                let out = model.forward(feats.view()).map_err(|e| CliError::stage("probe", e))?;
                Ok((out.h, it.label, it.train))
            })
            .collect::<Result<_, CliError>>()?;
        let (tr, te): (Vec<_>, Vec<_>) = encoded.into_iter().partition(|e| e.2);
        let strip = |v: Vec<(Array2<F>, usize, bool)>| v.into_iter().map(|(h, l, _)| (h, l)).collect::<Vec<_>>();
        let classes = task.class_count();
        let train_task = ProbeTask::new(task.name(), classes, strip(tr), pad_to).map_err(|e| CliError::stage("probe", e))?;
        let test_task = ProbeTask::new(task.name(), classes, strip(te), pad_to).map_err(|e| CliError::stage("probe", e))?;
        let weights = train_probe(&train_task, &probe_cfg).map_err(|e| CliError::stage("probe", e))?;
        let probe = eval_probe(&weights, &test_task).map_err(|e| CliError::stage("probe", e))?;
        outcomes.push(ProbeOutcome {
            task: task.name().to_string(),
            classes,
            train_items: train_task.items.len(),
            test_items: test_task.items.len(),
            majority: majority_baseline(&train_task, &test_task),
            probe,
        });
    }
    Ok(outcomes)
}

/// Mean annotated label fraction per class over a set of examples.
pub fn label_fractions(examples: &[Example<F>]) -> Vec<f64> {
    let mut on = vec![0usize; CLASS_NAMES.len()];
    let mut total = 0usize;
    for ex in examples {
        for (c, row) in ex.labels.values.rows().into_iter().enumerate() {
            on[c] += row.iter().filter(|&&v| v == 1).count();
        }
        total += ex.frames();
    }
    on.iter().map(|&n| n as f64 / total.max(1) as f64).collect()
}

pub fn ensure_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingFile(path.to_path_buf()))
    }
}
