use ctpnet_core::metrics::{evaluate, EvalOptions};
use ctpnet_core::model::{Model, ModelConfig};
use ctpnet_core::robustness::{perturb, robustness_sweep, sweep_point, PerturbKind, Perturbation, SweepGrid};
use ctpnet_core::synth::{synthesize, DocumentSample, SynthConfig};
use proptest::prelude::*;

fn samples(n: u64) -> Vec<DocumentSample> {
    let cfg = SynthConfig { width: 64, height: 64, ..SynthConfig::default() };
    (0..n)
        .map(|i| {
            let f = synthesize(&cfg, i, 8).unwrap();
            DocumentSample::new(i, f.noisy, f.mask, f.recipe).unwrap()
        })
        .collect()
}

fn p(kind: PerturbKind, factor: f64) -> Perturbation {
    Perturbation { kind, factor, seed: 1 }
}

#[test]
fn unit_factors_are_identities() {
    for s in samples(5) {
        for q in [p(PerturbKind::Resize, 1.0), p(PerturbKind::Crop, 1.0), p(PerturbKind::GaussNoise, 0.0)] {
            assert_eq!(perturb(&s, q).unwrap(), s, "{q:?}");
        }
    }
}

#[test]
fn halving_resizes_image_and_mask() {
    let s = samples(1).remove(0);
    let r = perturb(&s, p(PerturbKind::Resize, 0.5)).unwrap();
    assert_eq!((r.image.width(), r.image.height()), (32, 32));
    assert_eq!((r.mask.width(), r.mask.height()), (32, 32));
    assert!(r.mask.data().iter().all(|&v| v <= 1));
}

#[test]
fn crop_keeps_a_centred_window() {
    let s = samples(1).remove(0);
    let r = perturb(&s, p(PerturbKind::Crop, 0.5)).unwrap();
    assert_eq!((r.image.width(), r.image.height()), (32, 32));
    assert_eq!(r.image.pixel(0, 0), s.image.pixel(16, 16));
    assert_eq!(r.mask.data()[0], s.mask.data()[16 * 64 + 16]);
}

#[test]
fn noise_leaves_the_mask_alone() {
    let s = samples(1).remove(0);
    let r = perturb(&s, p(PerturbKind::GaussNoise, 25.0)).unwrap();
    assert_eq!(r.mask, s.mask);
    assert_eq!((r.ratio_fake, r.category), (s.ratio_fake, s.category));
    assert_ne!(r.image, s.image);
    assert_eq!(r, perturb(&s, p(PerturbKind::GaussNoise, 25.0)).unwrap());
}

#[test]
fn out_of_range_factors_are_rejected() {
    let s = samples(1).remove(0);
    for q in [
        p(PerturbKind::Resize, 0.0),
        p(PerturbKind::Resize, 0.05),
        p(PerturbKind::Crop, 1.2),
        p(PerturbKind::GaussNoise, -2.0),
        p(PerturbKind::GaussNoise, f64::NAN),
    ] {
        assert!(perturb(&s, q).is_err(), "{q:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn geometric_perturbations_keep_masks_binary_and_consistent(
        id in 0u64..50,
        resize in 0.25f64..2.0,
        crop in 0.5f64..1.0,
    ) {
        let cfg = SynthConfig { width: 64, height: 48, ..SynthConfig::default() };
        let f = synthesize(&cfg, id, 3).unwrap();
        let s = DocumentSample::new(id, f.noisy, f.mask, f.recipe).unwrap();
        for q in [p(PerturbKind::Resize, resize), p(PerturbKind::Crop, crop)] {
            let r = perturb(&s, q).unwrap();
            prop_assert_eq!((r.image.width(), r.image.height()), (r.mask.width(), r.mask.height()));
            prop_assert!(r.mask.data().iter().all(|&v| v <= 1));
            let fake = r.mask.forged_count();
            let authentic = r.mask.data().len() - fake;
            if authentic == 0 {
                prop_assert_eq!(r.ratio_fake, f64::INFINITY);
                prop_assert_eq!(r.category, 4);
            } else {
                prop_assert!((r.ratio_fake - fake as f64 / authentic as f64).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn sweep_has_one_row_per_grid_point_in_order() {
    let data = samples(3);
    let model = Model::<f32>::build(&ModelConfig::tiny(), 2).unwrap();
    let grid = SweepGrid {
        entries: vec![(PerturbKind::Resize, vec![1.0, 0.5]), (PerturbKind::GaussNoise, vec![0.0, 10.0])],
    };
    let rows = robustness_sweep(&model, &data, &grid, 7, EvalOptions::default()).unwrap();
    let points: Vec<_> = rows.iter().map(|r| (r.kind, r.factor)).collect();
    assert_eq!(points, grid.points());
    assert_eq!(rows.len(), 4);

    let baseline = evaluate(&model, &data, EvalOptions::default()).unwrap();
    assert_eq!(rows[0].report, baseline);
    assert_eq!(rows[2].report, baseline);
    assert_eq!(rows, robustness_sweep(&model, &data, &grid, 7, EvalOptions::default()).unwrap());
    let again = sweep_point(&model, &data, PerturbKind::GaussNoise, 10.0, 7, EvalOptions::default()).unwrap();
    assert_eq!(again, rows[3]);
}

#[test]
fn default_grid_and_empty_inputs() {
    assert_eq!(SweepGrid::default().points().len(), 12);
    let model = Model::<f32>::build(&ModelConfig::tiny(), 2).unwrap();
    let empty = SweepGrid { entries: vec![] };
    assert!(robustness_sweep(&model, &samples(1), &empty, 0, EvalOptions::default()).is_err());
    assert!(robustness_sweep(&model, &[], &SweepGrid::default(), 0, EvalOptions::default()).is_err());
}

#[test]
fn kind_names_parse_back() {
    for k in [PerturbKind::Resize, PerturbKind::Crop, PerturbKind::GaussNoise] {
        assert_eq!(PerturbKind::parse(k.name()), Some(k));
    }
    assert_eq!(PerturbKind::parse("blur"), None);
}
