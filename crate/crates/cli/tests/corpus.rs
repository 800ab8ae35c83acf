use nmfseg_cli::corpus::{synthesize_clip, CorpusSpec, CLASS_NAMES, OVERLAP, SPEECH};

#[test]
fn label_durations_match_event_process_expectations() {
    let spec = CorpusSpec {
        seed: 3,
        ..CorpusSpec::default()
    };
    // 24 clips of 30 s: 12 minutes.
    let clips: Vec<_> = (0..24).map(|i| synthesize_clip(&spec, i)).collect();
    let frames: usize = clips.iter().map(|c| c.labels.ncols()).sum();
    assert!(frames as f64 * spec.stft.hop as f64 / spec.sample_rate as f64 >= 600.0);
    let expected = spec.expected_label_fractions();
    for (c, name) in CLASS_NAMES.iter().enumerate() {
        let on: usize = clips.iter().map(|clip| clip.labels.row(c).iter().filter(|&&v| v == 1).count()).sum();
        let got = on as f64 / frames as f64;
        let rel = (got - expected[c]).abs() / expected[c];
        assert!(rel < 0.10, "{name}: {got:.4} vs expected {:.4}", expected[c]);
    }
}

#[test]
fn overlap_frames_always_carry_speech() {
    let spec = CorpusSpec::default();
    for i in 0..4 {
        let clip = synthesize_clip(&spec, i);
        let (s, o) = (clip.labels.row(SPEECH), clip.labels.row(OVERLAP));
        assert!(s.iter().zip(o).all(|(&s, &o)| o == 0 || s == 1));
    }
}
