use ctpnet_core::metrics::{
    auc, categorize, confusion_counts, evaluate, f1_iou_mcc, ratio_fake, ConfusionCounts, EvalOptions, MetricsReport,
    SampleScores, Scores,
};
use ctpnet_core::model::{Model, ModelConfig};
use ctpnet_core::raster::{Mask, RgbImage};
use ctpnet_core::seed;
use ctpnet_core::synth::{synthesize, DocumentSample, SynthConfig};
use ctpnet_core::Error;
use proptest::prelude::*;
use rand::Rng;

fn pairwise_auc(prob: &[f64], gt: &[u8]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &gi) in gt.iter().enumerate() {
        for (j, &gj) in gt.iter().enumerate() {
            if gi == 1 && gj == 0 {
                pairs += 1.0;
                num += if prob[i] > prob[j] {
                    1.0
                } else if prob[i] == prob[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / pairs
}

#[test]
fn auc_equals_pairwise_oracle_on_every_small_mask() {
    let mut rng = seed::rng(1);
    for n in 2..=12usize {
        for bits in 1..(1u32 << n) - 1 {
            let gt: Vec<u8> = (0..n).map(|i| ((bits >> i) & 1) as u8).collect();
            // a coarse grid makes ties common
            let prob: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64 / 4.0).collect();
            let got = auc(&prob, &gt).unwrap();
            assert!((got - pairwise_auc(&prob, &gt)).abs() < 1e-12, "{gt:?} {prob:?}");
        }
    }
}

#[test]
fn six_pixel_case() {
    let prob = [0.9, 0.4, 0.4, 0.7, 0.1, 0.4];
    let gt = [1, 0, 1, 0, 0, 1];
    assert!((auc(&prob, &gt).unwrap() - pairwise_auc(&prob, &gt)).abs() < 1e-12);
}

#[test]
fn auc_boundary_cases() {
    assert_eq!(auc(&[0.1, 0.2, 0.7, 0.8], &[0, 0, 1, 1]).unwrap(), 1.0);
    assert_eq!(auc(&[0.5; 6], &[0, 1, 1, 0, 0, 1]).unwrap(), 0.5);
    assert_eq!(auc(&[0.5; 3], &[0, 0, 0]).unwrap_err(), Error::SingleClass);
    assert!(auc(&[0.5, f64::NAN], &[0, 1]).is_err());
    assert!(auc(&[0.5], &[0, 1]).is_err());
}

fn direct(tp: u64, fp: u64, tn: u64, fn_: u64) -> (f64, f64, f64) {
    let f = |x: u64| x as f64;
    let f1 = if 2 * tp + fp + fn_ == 0 { 0.0 } else { 2.0 * f(tp) / (2.0 * f(tp) + f(fp) + f(fn_)) };
    let iou = if tp + fp + fn_ == 0 { 0.0 } else { f(tp) / (f(tp) + f(fp) + f(fn_)) };
    let d = (f(tp) + f(fp)) * (f(tp) + f(fn_)) * (f(tn) + f(fp)) * (f(tn) + f(fn_));
    let mcc = if d == 0.0 { 0.0 } else { (f(tp) * f(tn) - f(fp) * f(fn_)) / d.sqrt() };
    (f1, iou, mcc)
}

#[test]
fn scores_equal_direct_formulas_on_random_tuples() {
    let mut rng = seed::rng(2);
    for i in 0..1000 {
        let hi = if i % 3 == 0 { 5 } else { 100_000 };
        let c = ConfusionCounts {
            tp: rng.random_range(0..hi),
            fp: rng.random_range(0..hi),
            tn: rng.random_range(0..hi),
            fn_: rng.random_range(0..hi),
        };
        let s = f1_iou_mcc(c);
        let (f1, iou, mcc) = direct(c.tp, c.fp, c.tn, c.fn_);
        assert_eq!((s.f1, s.iou, s.mcc), (f1, iou, mcc), "{c:?}");
    }
}

#[test]
fn score_examples() {
    let s = f1_iou_mcc(ConfusionCounts { tp: 2, fp: 1, tn: 96, fn_: 1 });
    assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
    assert!((s.iou - 0.5).abs() < 1e-15);
    assert!((s.mcc - 191.0 / 291.0).abs() < 1e-15, "{}", s.mcc);

    let perfect = confusion_counts(&[1, 0, 1, 1], &[1, 0, 1, 1]).unwrap();
    assert_eq!(f1_iou_mcc(perfect), Scores { f1: 1.0, iou: 1.0, mcc: 1.0 });

    let gt = [1, 1, 0, 0, 1];
    let inverted: Vec<u8> = gt.iter().map(|v| 1 - v).collect();
    let c = confusion_counts(&inverted, &gt).unwrap();
    assert_eq!((c.tp, c.tn), (0, 0));
    let c = confusion_counts(&gt, &gt).unwrap();
    assert_eq!((c.fp, c.fn_), (0, 0));
    let c = confusion_counts(&[1, 0, 0, 0], &[1, 1, 0, 0]).unwrap();
    assert_eq!(c, ConfusionCounts { tp: 1, fp: 0, tn: 2, fn_: 1 });
    assert_eq!(f1_iou_mcc(confusion_counts(&[0; 5], &gt).unwrap()), Scores { f1: 0.0, iou: 0.0, mcc: 0.0 });

    assert!(confusion_counts(&[0, 1], &[0]).is_err());
    assert_eq!(confusion_counts(&[0, 2], &[0, 1]).unwrap_err(), Error::NonBinary);
}

proptest! {
    #[test]
    fn confusion_totals_and_score_ranges(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..200)) {
        let (pred, gt): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let c = confusion_counts(&pred, &gt).unwrap();
        prop_assert_eq!(c.total(), pred.len() as u64);
        let s = f1_iou_mcc(c);
        prop_assert!((0.0..=1.0).contains(&s.f1) && (0.0..=1.0).contains(&s.iou));
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s.mcc));
    }

    #[test]
    fn finding_a_forged_pixel_never_lowers_f1_or_iou(tp in 0u64..500, fp in 0u64..500, tn in 0u64..500, fn_ in 1u64..500) {
        let before = f1_iou_mcc(ConfusionCounts { tp, fp, tn, fn_ });
        let after = f1_iou_mcc(ConfusionCounts { tp: tp + 1, fp, tn, fn_: fn_ - 1 });
        prop_assert!(after.f1 >= before.f1 && after.iou >= before.iou);
    }

    #[test]
    fn auc_lies_in_unit_interval(v in prop::collection::vec((0.0f64..1.0, 0u8..2), 2..64)) {
        let (prob, gt): (Vec<f64>, Vec<u8>) = v.into_iter().unzip();
        match auc(&prob, &gt) {
            Ok(a) => prop_assert!((0.0..=1.0).contains(&a)),
            Err(e) => prop_assert_eq!(e, Error::SingleClass),
        }
    }

    #[test]
    fn categories_are_total_on_valid_masks(bits in prop::collection::vec(0u8..2, 1..300)) {
        match ratio_fake(&bits) {
            Ok(r) => prop_assert!((1..=4).contains(&categorize(r))),
            Err(e) => {
                prop_assert_eq!(e, Error::AllFake);
                prop_assert!(bits.iter().all(|&b| b == 1));
            }
        }
    }
}

/// Mask of `total` pixels with `fake` forged ones.
fn mask_with(fake: usize, total: usize) -> Vec<u8> {
    (0..total).map(|i| u8::from(i < fake)).collect()
}

#[test]
fn constructed_ratios_fall_in_their_bins() {
    // fake / authentic = 5%, 10%, 15%, 60%
    let cases = [(5, 105), (10, 110), (15, 115), (60, 160)];
    let cats: Vec<u8> = cases.iter().map(|&(f, t)| categorize(ratio_fake(&mask_with(f, t)).unwrap())).collect();
    assert_eq!(cats, vec![1, 1, 2, 4]);
    assert!((ratio_fake(&mask_with(10, 110)).unwrap() - 0.1).abs() < 1e-15);
}

#[test]
fn ratio_examples() {
    assert_eq!(ratio_fake(&[0; 9]).unwrap(), 0.0);
    assert!((ratio_fake(&mask_with(25, 100)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(ratio_fake(&mask_with(50, 100)).unwrap(), 1.0);
    assert_eq!(ratio_fake(&[1, 1]).unwrap_err(), Error::AllFake);
    assert_eq!([0.0, 0.05, 0.1, 0.1000001, 0.2, 0.5, 0.6].map(categorize), [1, 1, 1, 2, 2, 3, 4]);
}

fn scored(id: u64, category: u8, f1: f64, auc: Option<f64>) -> SampleScores {
    SampleScores { id, category, counts: ConfusionCounts::default(), scores: Scores { f1, iou: f1 / 2.0, mcc: -f1 }, auc }
}

#[test]
fn aggregation_is_the_sample_mean() {
    let r = MetricsReport::from_samples(vec![scored(0, 1, 0.2, Some(0.6)), scored(1, 1, 0.6, None), scored(2, 3, 1.0, Some(0.9))], None);
    assert_eq!(r.overall.n_samples, 3);
    assert!((r.overall.f1 - 0.6).abs() < 1e-15);
    assert!((r.overall.iou - 0.3).abs() < 1e-15);
    assert_eq!(r.overall.auc_samples, 2);
    assert!((r.overall.auc.unwrap() - 0.75).abs() < 1e-15);
    assert_eq!(r.per_category.map(|a| a.n_samples), [2, 0, 1, 0]);
    assert!((r.per_category[0].f1 - 0.4).abs() < 1e-15);
    assert_eq!(r.per_category[1].auc, None);
    assert_eq!(r.auc(), r.overall.auc);
    let pooled = MetricsReport::from_samples(vec![scored(0, 1, 0.2, Some(0.6))], Some(0.1));
    assert_eq!(pooled.auc(), Some(0.1));
}

#[test]
fn evaluation_report_tracks_sample_categories() {
    let cfg = SynthConfig { width: 64, height: 64, ..SynthConfig::default() };
    let samples: Vec<DocumentSample> = (0..6)
        .map(|i| {
            let f = synthesize(&cfg, i, 3).unwrap();
            DocumentSample::new(i, f.noisy, f.mask, f.recipe).unwrap()
        })
        .collect();
    let model = Model::<f32>::build(&ModelConfig::tiny(), 4).unwrap();
    let r = evaluate(&model, &samples, EvalOptions { pooled_auc: true, batch_size: 4 }).unwrap();
    assert_eq!(r.samples.len(), 6);
    for (s, d) in r.samples.iter().zip(&samples) {
        assert_eq!((s.id, s.category), (d.id, d.category));
        assert_eq!(s.counts.total(), 64 * 64);
    }
    for k in 1..=4u8 {
        assert_eq!(r.per_category[k as usize - 1].n_samples, samples.iter().filter(|s| s.category == k).count());
    }
    assert!(r.pooled_auc.is_some());
    assert!(matches!(evaluate(&model, &[], EvalOptions::default()), Err(Error::Empty(_))));
}

#[test]
fn a_perfect_prediction_scores_one() {
    // Constant image: the model's mask is spatially uniform, so pick the
    // truth to match whatever it predicts.
    let model = Model::<f32>::build(&ModelConfig::tiny(), 5).unwrap();
    let img = RgbImage::filled(64, 64, [200, 200, 200]);
    let (t, _) = ctpnet_core::train::prepare_batch(
        &[DocumentSample::new(0, img.clone(), Mask::empty(64, 64), probe_recipe()).unwrap()],
        (64, 64),
    )
    .unwrap();
    let pred = model.predict_mask(&t).unwrap();
    let mask = Mask::new(64, 64, pred.mask.clone()).unwrap();
    let sample = DocumentSample::new(0, img, mask, probe_recipe()).unwrap();
    let r = evaluate(&model, &[sample], EvalOptions::default()).unwrap();
    let s = &r.samples[0];
    assert_eq!(s.counts.fp + s.counts.fn_, 0);
    if s.counts.tp > 0 {
        assert_eq!((s.scores.f1, s.scores.iou), (1.0, 1.0));
    }
}

fn probe_recipe() -> ctpnet_core::synth::ForgeryRecipe {
    synthesize(&SynthConfig::default(), 0, 0).unwrap().recipe
}
