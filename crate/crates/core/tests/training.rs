use ndarray::Array2;
use nmfseg::neural::{encode_model, init_model, train, Architecture, Example, LabelMatrix, LossWeights, TrainConfig};
use nmfseg::nmf::{init_factors, DictionaryMeta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Class 0 is on when feature 0 is high, class 1 when feature 1 is high.
fn examples(n: usize, seed: u64) -> Vec<Example<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let t = 60;
            let mut labels = Array2::<u8>::zeros((2, t));
            let mut s = Array2::<f32>::zeros((3, t));
            for c in 0..2 {
                let mut on = rng.random_bool(0.5);
                for f in 0..t {
                    if rng.random_bool(0.1) {
                        on = !on;
                    }
                    labels[[c, f]] = on as u8;
                    s[[c, f]] = if on { 1.0 } else { 0.0 } + rng.random_range(-0.2..0.2);
                }
            }
            for f in 0..t {
                s[[2, f]] = rng.random_range(-1.0..1.0);
            }
            let x = Array2::from_shape_fn((4, t), |(b, f)| labels[[b % 2, f]] as f32 * 0.5);
            Example::new(format!("ex{i}"), s, x, LabelMatrix::fully_annotated(labels).unwrap(), 0.02).unwrap()
        })
        .collect()
}

fn model() -> nmfseg::neural::SegModel<f32> {
    let mut arch = Architecture::new(3, 12, 2);
    arch.channels = 16;
    let (dict, _) = init_factors::<f32>(4, 1, 12, 0);
    init_model(arch, dict, DictionaryMeta { mu: 0.1, seed: 0 }, 3).unwrap()
}

fn cfg() -> TrainConfig {
    TrainConfig {
        weights: LossWeights { alpha: 10.0, beta: 0.01, gamma: 0.001 },
        lr: 3e-3,
        batch_size: 4,
        segment_seconds: 0.4,
        epochs: 40,
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn dev_bce_strictly_decreases_over_first_three_epochs() {
    let (tr, dev) = (examples(16, 1), examples(4, 2));
    let mut c = cfg();
    c.epochs = 3;
    let out = train(model(), &tr, &dev, &c).unwrap();
    let bce: Vec<f64> = out.epochs.iter().map(|e| e.dev.unwrap().bce).collect();
    assert!(bce[1] < bce[0] && bce[2] < bce[1], "{bce:?}");
    assert!(out.step_losses.iter().all(|l| l.is_finite()));
}

#[test]
fn classification_alone_segments_the_toy_corpus() {
    let (tr, dev) = (examples(16, 1), examples(4, 2));
    let mut c = cfg();
    c.weights = LossWeights { alpha: 1.0, beta: 0.0, gamma: 0.0 };
    c.epochs = 5;
    let out = train(model(), &tr, &dev, &c).unwrap();
    let best = out.epochs[out.best_epoch - 1].dev_macro_f1.unwrap();
    assert!(best > 0.9, "{best}");
}

#[test]
fn training_is_reproducible_bit_for_bit() {
    let (tr, dev) = (examples(8, 1), examples(2, 2));
    let mut c = cfg();
    c.epochs = 2;
    let a = train(model(), &tr, &dev, &c).unwrap();
    let b = train(model(), &tr, &dev, &c).unwrap();
    assert_eq!(encode_model(&a.best).unwrap(), encode_model(&b.best).unwrap());
    assert_eq!(a.epochs, b.epochs);
}

#[test]
fn empty_training_set_is_an_error() {
    assert!(train(model(), &[], &[], &cfg()).is_err());
}
