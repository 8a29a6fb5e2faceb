use ctpnet_core::model::{Model, ModelConfig};
use ctpnet_core::raster::{Mask, Rect, RgbImage};
use ctpnet_core::synth::{synthesize, DocumentSample, SynthConfig};
use ctpnet_core::train::{prepare_batch, split_dataset, train, train_step, TrainConfig, TrainEvent};
use ctpnet_core::tensor::Sgd;
use ctpnet_core::Error;
use proptest::prelude::*;

fn samples(n: u64, side: usize) -> Vec<DocumentSample> {
    let cfg = SynthConfig { width: side, height: side, ..SynthConfig::default() };
    (0..n)
        .map(|i| {
            let f = synthesize(&cfg, i, 21).unwrap();
            DocumentSample::new(i, f.noisy, f.mask, f.recipe).unwrap()
        })
        .collect()
}

fn small_run(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig { learning_rate: lr, batch_size: 2, epochs, validate_every: epochs, input_size: (32, 32), seed: 4, checkpoint_path: None }
}

fn tiny32(seed: u64) -> Model<f32> {
    Model::build(&ModelConfig::tiny().with_input_size(32, 32), seed).unwrap()
}

proptest! {
    #[test]
    fn split_is_a_partition(n in 10usize..300, s in any::<u64>()) {
        let (train, val, test) = split_dataset((0..n).collect::<Vec<_>>(), s).unwrap();
        prop_assert_eq!(val.len(), n / 10);
        prop_assert_eq!(test.len(), n / 10);
        prop_assert_eq!(train.len(), n - 2 * (n / 10));
        let mut all: Vec<usize> = train.iter().chain(&val).chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn split_depends_only_on_the_seed(n in 10usize..100, s in any::<u64>()) {
        let a = split_dataset((0..n).collect::<Vec<_>>(), s).unwrap();
        let b = split_dataset((0..n).collect::<Vec<_>>(), s).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn split_of_eighty_gives_sixty_four_for_training() {
    let (a, b, c) = split_dataset((0..80).collect::<Vec<u32>>(), 3).unwrap();
    assert_eq!((a.len(), b.len(), c.len()), (64, 8, 8));
}

#[test]
fn prepare_batch_at_native_size_is_a_rescale() {
    let s = samples(2, 32);
    let (t, m) = prepare_batch(&s, (32, 32)).unwrap();
    assert_eq!(t.shape(), &[2, 3, 32, 32]);
    for (n, sample) in s.iter().enumerate() {
        for y in 0..32 {
            for x in 0..32 {
                let px = sample.image.pixel(x, y);
                for (c, &channel) in px.iter().enumerate() {
                    let v = t.data()[((n * 3 + c) * 32 + y) * 32 + x];
                    assert_eq!(v, (channel as f64 / 255.0) as f32);
                }
            }
        }
        assert_eq!(&m[n * 1024..(n + 1) * 1024], sample.mask.data());
    }
}

#[test]
fn prepare_batch_halving_keeps_masks_binary() {
    let img = RgbImage::filled(64, 48, [255, 0, 51]);
    let mask = Mask::from_rect(64, 48, Rect::new(16, 8, 32, 24)).unwrap();
    let recipe = samples(1, 32).remove(0).recipe;
    let s = DocumentSample::new(0, img, mask, recipe).unwrap();
    let (t, m) = prepare_batch(&[s], (24, 32)).unwrap();
    assert_eq!(t.shape(), &[1, 3, 24, 32]);
    assert!(t.data()[..768].iter().all(|&v| v == 1.0));
    assert!(t.data()[768..1536].iter().all(|&v| v == 0.0));
    assert!(t.data()[1536..].iter().all(|&v| (v - 0.2).abs() < 1e-6));
    assert!(m.iter().all(|&v| v <= 1));
    assert_eq!(m.iter().filter(|&&v| v == 1).count(), 16 * 12);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let data = samples(4, 32);
    let model = tiny32(1);
    let before: Vec<_> = model.params().iter().map(|p| p.value.clone()).collect();
    let out = train(model, &data, &[], &small_run(2, 0.0), &mut |_| {}).unwrap();
    for (p, b) in out.model.params().iter().zip(&before) {
        assert_eq!(&p.value, b);
    }
    assert_eq!(out.history.step_loss.len(), 4);
}

#[test]
fn same_seed_gives_identical_history() {
    let data = samples(4, 32);
    let run = || train(tiny32(2), &data, &data[..2], &small_run(2, 0.05), &mut |_| {}).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.history.step_loss, b.history.step_loss);
    assert_eq!(a.history.epoch_loss, b.history.epoch_loss);
    for (p, q) in a.model.params().iter().zip(b.model.params()) {
        assert_eq!(p.value, q.value);
    }
}

#[test]
fn full_batch_loss_decreases_step_by_step() {
    let data = samples(4, 32);
    let (images, masks) = prepare_batch(&data, (32, 32)).unwrap();
    let mut model = tiny32(3);
    let sgd = Sgd::new(0.05).unwrap();
    let losses: Vec<f64> = (0..6).map(|_| train_step(&mut model, &sgd, &images, &masks).unwrap()).collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

#[test]
fn observer_sees_epochs_validations_and_best() {
    let data = samples(4, 32);
    let cfg = TrainConfig { validate_every: 1, ..small_run(3, 0.05) };
    let (mut epochs, mut validations, mut bests) = (Vec::new(), 0, 0);
    let out = train(tiny32(5), &data, &data[..2], &cfg, &mut |e| match e {
        TrainEvent::EpochEnd { epoch, loss } => {
            assert!(loss.is_finite());
            epochs.push(epoch);
        }
        TrainEvent::Validated { .. } => validations += 1,
        TrainEvent::NewBest { .. } => bests += 1,
    })
    .unwrap();
    assert_eq!(epochs, vec![1, 2, 3]);
    assert_eq!(validations, 3);
    assert!(bests >= 1);
    assert_eq!(out.history.validations.len(), 3);
    let best = out.best.unwrap();
    let max_f1 = out.history.validations.iter().map(|v| v.report.overall.f1).fold(f64::MIN, f64::max);
    assert_eq!(best.f1, max_f1);
}

#[test]
fn mismatched_input_size_and_empty_set_are_errors() {
    let data = samples(2, 32);
    let cfg = TrainConfig { input_size: (64, 64), ..small_run(1, 0.1) };
    assert!(matches!(train(tiny32(0), &data, &[], &cfg, &mut |_| {}), Err(Error::Config(_))));
    assert!(matches!(train(tiny32(0), &[], &[], &small_run(1, 0.1), &mut |_| {}), Err(Error::Empty(_))));
}

#[test]
fn huge_learning_rate_is_reported_as_divergence() {
    let data = samples(4, 32);
    let r = train(tiny32(6), &data, &[], &small_run(5, 1e12), &mut |_| {});
    assert!(matches!(r, Err(Error::Diverged { .. })), "{r:?}");
}
