use ctpnet_core::model::{Mode, Model, ModelConfig};
use ctpnet_core::{seed, Tensor};
use rand::Rng;

fn image(n: usize, h: usize, w: usize, s: u64) -> Tensor<f32> {
    let mut rng = seed::rng(s);
    Tensor::from_fn([n, 3, h, w], |_| rng.random_range(0.0..1.0))
}

fn shape_of(pass: &ctpnet_core::model::Pass<f32>, v: ctpnet_core::Var) -> Vec<usize> {
    pass.graph.value(v).shape().to_vec()
}

#[test]
fn stream_and_decoder_shapes() {
    for (cfg_name, base) in [("tiny", ModelConfig::tiny()), ("desk", ModelConfig::default())] {
        for size in [16, 32, 64, 128] {
            let cfg = base.clone().with_input_size(size, size);
            let model = Model::<f32>::build(&cfg, 1).unwrap();
            let mut pass = model.begin(Mode::Eval);
            let x = model.input(&mut pass, &image(2, size, size, 2)).unwrap();
            let cts = model.cts_forward(&mut pass, x).unwrap();
            let its = model.its_forward(&mut pass, x).unwrap();
            let expect = vec![2, cfg.fusion_channels, size / 8, size / 8];
            assert_eq!(shape_of(&pass, cts), expect, "{cfg_name} {size}");
            assert_eq!(shape_of(&pass, its), expect, "{cfg_name} {size}");
            let fused = model.fuse(&mut pass, cts, its).unwrap();
            let logits = model.fln_forward(&mut pass, fused).unwrap();
            assert_eq!(shape_of(&pass, logits), vec![2, 2, size, size]);
            assert!(pass.graph.value(logits).is_finite());
        }
    }
}

#[test]
fn non_square_inputs() {
    let cfg = ModelConfig::tiny().with_input_size(24, 40);
    let model = Model::<f32>::build(&cfg, 1).unwrap();
    let pred = model.predict_mask(&image(1, 24, 40, 3)).unwrap();
    assert_eq!(pred.prob.shape(), &[1, 24, 40]);
    assert_eq!(pred.mask.len(), 24 * 40);
}

#[test]
fn image_stream_keeps_full_resolution_through_two_transposes() {
    let model = Model::<f32>::build(&ModelConfig::default(), 3).unwrap();
    let mut pass = model.begin(Mode::Train);
    let x = model.input(&mut pass, &image(2, 64, 64, 4)).unwrap();
    let stages = model.its_stages(&mut pass, x).unwrap();
    let sizes: Vec<usize> = stages.iter().map(|&v| shape_of(&pass, v)[2]).collect();
    assert_eq!(sizes, vec![64, 64, 32, 16, 8]);
}

#[test]
fn rejects_indivisible_input() {
    let model = Model::<f32>::build(&ModelConfig::tiny(), 1).unwrap();
    let mut pass = model.begin(Mode::Eval);
    assert!(model.input(&mut pass, &image(1, 60, 64, 1)).is_err());
    assert!(model.input(&mut pass, &Tensor::zeros([1, 1, 64, 64])).is_err());
}

#[test]
fn zero_image_gives_zero_character_features() {
    let model = Model::<f32>::build(&ModelConfig::default(), 5).unwrap();
    let mut pass = model.begin(Mode::Eval);
    let x = model.input(&mut pass, &Tensor::zeros([1, 3, 64, 64])).unwrap();
    let cts = model.cts_forward(&mut pass, x).unwrap();
    assert!(pass.graph.value(cts).data().iter().all(|&v| v == 0.0));
}

#[test]
fn feature_enhanced_block_follows_the_recurrence() {
    // n = 3: f1 = H1(f0), f2 = H2(f1 + f0), f3 = H3(f2 + f1)
    let model = Model::<f64>::build(&ModelConfig::default(), 6).unwrap();
    let layers = model.feb_layers(0);
    assert_eq!(layers.len(), 3);
    let c = model.config().feb_channels[0];
    let mut rng = seed::rng(7);
    let f0 = Tensor::from_fn([2, c, 16, 16], |_| rng.random_range(-1.0..1.0));

    let mut pass = model.begin(Mode::Train);
    let x = pass.graph.constant(f0.clone());
    let out = model.feature_enhanced_block(&mut pass, x, layers).unwrap();
    let got = pass.graph.value(out).clone();

    let mut pass = model.begin(Mode::Train);
    let f0v = pass.graph.constant(f0);
    let f1 = model.conv_bn_relu(&mut pass, f0v, &layers[0]).unwrap();
    let s1 = pass.graph.add(f1, f0v).unwrap();
    let f2 = model.conv_bn_relu(&mut pass, s1, &layers[1]).unwrap();
    let s2 = pass.graph.add(f2, f1).unwrap();
    let f3 = model.conv_bn_relu(&mut pass, s2, &layers[2]).unwrap();
    let want = pass.graph.value(f3);

    assert_eq!(got.shape(), want.shape());
    assert!(got.data().iter().zip(want.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn single_layer_block_is_one_conv_bn_relu() {
    let cfg = ModelConfig { feb_layers: [1, 1, 1], ..ModelConfig::tiny() };
    let model = Model::<f64>::build(&cfg, 8).unwrap();
    let f0 = Tensor::from_fn([1, cfg.feb_channels[1], 8, 8], |i| (i as f64 * 0.3).cos());
    let mut pass = model.begin(Mode::Train);
    let x = pass.graph.constant(f0);
    let a = model.feature_enhanced_block(&mut pass, x, model.feb_layers(1)).unwrap();
    let b = model.conv_bn_relu(&mut pass, x, &model.feb_layers(1)[0]).unwrap();
    assert_eq!(pass.graph.value(a), pass.graph.value(b));
}

#[test]
fn dense_block_channel_arithmetic() {
    let cfg = ModelConfig::tiny();
    let model = Model::<f32>::build(&cfg, 9).unwrap();
    let layers = model.ddb_layers(0);
    assert_eq!((layers.len(), cfg.ddb_growth), (2, 4));
    let c0 = cfg.its_transpose_channels[2];
    let mut pass = model.begin(Mode::Train);
    let x = pass.graph.constant(Tensor::from_fn([1, c0, 12, 12], |i| (i % 5) as f32));
    let out = model.dense_block(&mut pass, x, layers).unwrap();
    assert_eq!(shape_of(&pass, out), vec![1, c0 + 2 * 4, 12, 12]);
    // the second layer sees the block input plus the first layer's growth
    let first = model.conv_bn_relu(&mut pass, x, &layers[0]).unwrap();
    let cat = pass.graph.concat_channels(&[x, first]).unwrap();
    assert_eq!(shape_of(&pass, cat)[1], c0 + 4);
    assert!(model.conv_bn_relu(&mut pass, cat, &layers[1]).is_ok());
    assert!(model.conv_bn_relu(&mut pass, x, &layers[1]).is_err());
}

#[test]
fn transpose_layer_contracts() {
    let cfg = ModelConfig::tiny();
    let model = Model::<f32>::build(&cfg, 10).unwrap();
    // layer 0 keeps the size with stride-1 max pooling, layer 2 halves it
    let c_in0 = cfg.feb_channels[0];
    let mut pass = model.begin(Mode::Eval);
    let x = pass.graph.constant(Tensor::from_fn([1, c_in0, 32, 32], |i| (i as f32 * 0.01).sin()));
    let y = model.transpose_layer(&mut pass, x, model.its_transpose(0)).unwrap();
    assert_eq!(shape_of(&pass, y), vec![1, cfg.its_transpose_channels[0], 32, 32]);

    let c_in2 = cfg.feb_channels[2];
    let x = pass.graph.constant(Tensor::from_fn([1, c_in2, 32, 32], |i| (i % 3) as f32));
    let y = model.transpose_layer(&mut pass, x, model.its_transpose(2)).unwrap();
    assert_eq!(shape_of(&pass, y), vec![1, cfg.its_transpose_channels[2], 16, 16]);
    let odd = pass.graph.constant(Tensor::zeros([1, c_in2, 15, 16]));
    assert!(model.transpose_layer(&mut pass, odd, model.its_transpose(2)).is_err());

    // spatially constant in, spatially constant out
    let per_channel: Vec<f32> = (0..c_in0).map(|c| c as f32 * 0.5 - 1.0).collect();
    let x = pass.graph.constant(Tensor::from_fn([1, c_in0, 8, 8], |i| per_channel[i / 64]));
    let y = model.transpose_layer(&mut pass, x, model.its_transpose(0)).unwrap();
    for plane in pass.graph.value(y).data().chunks(64) {
        assert!(plane.iter().all(|&v| v == plane[0]));
    }
}

#[test]
fn fusion_is_symmetric_addition() {
    let model = Model::<f32>::build(&ModelConfig::tiny(), 11).unwrap();
    let mut pass = model.begin(Mode::Eval);
    let a = pass.graph.constant(Tensor::from_fn([1, 32, 8, 8], |i| i as f32));
    let b = pass.graph.constant(Tensor::from_fn([1, 32, 8, 8], |i| (i as f32).sqrt()));
    let z = pass.graph.constant(Tensor::zeros([1, 32, 8, 8]));
    let ab = model.fuse(&mut pass, a, b).unwrap();
    let ba = model.fuse(&mut pass, b, a).unwrap();
    let a0 = model.fuse(&mut pass, a, z).unwrap();
    assert_eq!(pass.graph.value(ab), pass.graph.value(ba));
    assert_eq!(pass.graph.value(a0), pass.graph.value(a));
    let wrong = pass.graph.constant(Tensor::zeros([1, 16, 8, 8]));
    assert!(model.fuse(&mut pass, a, wrong).is_err());
}

#[test]
fn predictions_are_probabilities_with_matching_masks() {
    let model = Model::<f32>::build(&ModelConfig::tiny(), 12).unwrap();
    let pred = model.predict_mask(&image(2, 64, 64, 13)).unwrap();
    assert_eq!(pred.prob.shape(), &[2, 64, 64]);
    for (&p, &m) in pred.prob.data().iter().zip(&pred.mask) {
        assert!((0.0..=1.0).contains(&p));
        assert_eq!(m, u8::from(p > 0.5));
    }
}

#[test]
fn build_and_forward_are_deterministic() {
    let cfg = ModelConfig::tiny();
    let a = Model::<f32>::build(&cfg, 14).unwrap();
    let b = Model::<f32>::build(&cfg, 14).unwrap();
    let c = Model::<f32>::build(&cfg, 15).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
    assert!(a.parameter_count() > 0);
    let x = image(1, 64, 64, 16);
    assert_eq!(a.predict_mask(&x).unwrap().prob, b.predict_mask(&x).unwrap().prob);
}

#[test]
fn checkpoint_round_trip_gives_identical_forward() {
    let mut model = Model::<f32>::build(&ModelConfig::tiny(), 17).unwrap();
    // move the running statistics off their initial values
    let mut pass = model.begin(Mode::Train);
    let logits = model.forward(&mut pass, &image(2, 64, 64, 18)).unwrap();
    let _ = logits;
    model.update_running_stats(&pass);

    let bytes = model.to_checkpoint_bytes();
    let loaded = Model::<f32>::from_checkpoint_bytes(&bytes).unwrap();
    assert_eq!(loaded.config(), model.config());
    assert_eq!(loaded.to_checkpoint_bytes(), bytes);
    let x = image(1, 64, 64, 19);
    let (p, q) = (model.predict_mask(&x).unwrap(), loaded.predict_mask(&x).unwrap());
    assert!(p.prob.data().iter().zip(q.prob.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}
