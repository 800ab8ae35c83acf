use std::f64::consts::PI;

use nmfseg::explain::{component_report, component_spectrum, relevance_record, RelevanceMode};
use nmfseg::neural::{init_model, Architecture};
use nmfseg::nmf::{train_snmf, DictionaryMeta, SnmfConfig};
use nmfseg::signal::{load_audio, log_mel, stft_magnitude, write_wav, AudioClip, MelConfig, StftConfig, SAMPLE_RATE};
use nmfseg::Scalar;

/// Two alternating tones, 0.5 s each.
fn tones<T: Scalar>() -> AudioClip<T> {
    let sr = SAMPLE_RATE as f64;
    let samples = (0..SAMPLE_RATE as usize * 2)
        .map(|i| {
            let t = i as f64 / sr;
            let f = if (t * 2.0) as usize % 2 == 0 { 500.0 } else { 3000.0 };
            T::lit(0.3 * (2.0 * PI * f * t).sin())
        })
        .collect();
    AudioClip::new(samples, SAMPLE_RATE).unwrap()
}

fn run<T: Scalar>() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tones.wav");
    write_wav(&tones::<T>(), &path).unwrap();
    let clip = load_audio::<T>(&path).unwrap();
    let spec = stft_magnitude(&clip, &StftConfig::default()).unwrap();
    let feats = log_mel(&spec, &MelConfig { n_mels: 16, ..Default::default() }).unwrap();
    assert_eq!(spec.frames(), feats.frames());

    let cfg = SnmfConfig {
        components: 2,
        mu: 0.01,
        max_iters: 200,
        rel_tol: 1e-8,
        seed: 0,
    };
    let res = train_snmf(spec.values.view(), &cfg).unwrap();
    let worst = res.objective_trace.windows(2).map(|w| (w[1] - w[0]) / w[0]).fold(f64::MIN, f64::max);
    let tol = (64.0 * T::epsilon().as_f64()).max(1e-9);
    assert!(worst <= tol, "objective rose by {worst:e}");
    let mut peaks: Vec<f64> = (0..2)
        .map(|k| component_spectrum(&res.dictionary, k, spec.n_fft, SAMPLE_RATE).unwrap().peak_hz)
        .collect();
    peaks.sort_by(f64::total_cmp);
    assert!((peaks[0] - 500.0).abs() < 40.0 && (peaks[1] - 3000.0).abs() < 40.0, "{peaks:?}");

    let mut arch = Architecture::new(16, 2, 1);
    arch.channels = 4;
    let mut model = init_model(arch, res.dictionary, DictionaryMeta { mu: 0.01, seed: 0 }, 1).unwrap();
    model.fit_input_norm([feats.values.view()]);
    let out = model.forward(feats.values.view()).unwrap();
    assert_eq!(out.h.dim(), (2, feats.frames()));
    assert!(out.h.iter().all(|v| *v >= T::zero()));

    let rec = relevance_record("tones", 0, out.h.view(), model.params.theta.view(), 0.5, RelevanceMode::MinMax).unwrap();
    let report = component_report(&[rec], 1, 0, 2).unwrap();
    assert_eq!(report.n.len(), 2);
    assert_eq!(report.compact_fraction, 1.0);
}

#[test]
fn audio_to_explanation_f32() {
    run::<f32>();
}

#[test]
fn audio_to_explanation_f64() {
    run::<f64>();
}
