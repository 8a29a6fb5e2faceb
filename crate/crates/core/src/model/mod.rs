//! The two-stream localization network.
//!
//! ```text
//! image ─┬─ character texture stream ─────────────┐
//!        │  conv/max-pool stack, /8                (+) ─ decoder ─ logits [N,2,H,W]
//!        └─ image texture stream ─────────────────┘
//!           feature-enhanced blocks, dilated dense
//!           blocks, transpose layers, /8
//! ```
//!
//! Parameters live in one flat list in declaration order; layers refer to
//! them by index. A forward pass binds that list into a [`Graph`] through a
//! [`Pass`].

mod checkpoint;
mod config;

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(any(feature = "std", test)))]
use num_traits::Float;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Error, Result};
use crate::real::Real;
use crate::seed;
use crate::tensor::{
    BatchStats, BnMode, Conv2dOpts, ConvTransposeOpts, Gradients, Graph, Param, Pool2d, PoolMode, Tensor, Var,
};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const DECONV_KERNEL: usize = 4;
pub const DILATION: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, gradients tracked.
    Train,
    /// Running statistics, no gradients.
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct Conv {
    weight: usize,
    bias: usize,
    opts: Conv2dOpts,
}

#[derive(Clone, Debug)]
pub struct Deconv {
    weight: usize,
    bias: usize,
    opts: ConvTransposeOpts,
}

#[derive(Clone, Debug)]
pub struct Norm {
    gamma: usize,
    beta: usize,
    stats: usize,
}

/// 3x3 convolution, batch normalization, ReLU.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    conv: Conv,
    norm: Norm,
}

/// Batch normalization, ReLU, 1x1 convolution, pooling.
#[derive(Clone, Debug)]
pub struct TransposeLayer {
    norm: Norm,
    conv: Conv,
    pool: Pool2d,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransposePool {
    /// Kernel-2 max pooling at stride 1; keeps the resolution.
    MaxS1,
    /// Kernel-2 average pooling at stride 2; halves the resolution.
    AvgS2,
}

impl TransposePool {
    fn pool(self) -> Pool2d {
        match self {
            TransposePool::MaxS1 => Pool2d::max_same(),
            TransposePool::AvgS2 => Pool2d::halving(PoolMode::Avg),
        }
    }
}

#[derive(Clone, Debug)]
struct Layout {
    cts: Vec<Conv>,
    stem: ConvBnRelu,
    febs: Vec<Vec<ConvBnRelu>>,
    ddbs: Vec<Vec<ConvBnRelu>>,
    its_transposes: Vec<TransposeLayer>,
    deconvs: Vec<Deconv>,
    fln_dense: Vec<Vec<ConvBnRelu>>,
    fln_transposes: Vec<TransposeLayer>,
    head: Conv,
}

struct Builder<T> {
    params: Vec<Param<T>>,
    stats: Vec<RunningStats<T>>,
    rng: seed::Rng,
}

impl<T: Real> Builder<T> {
    fn kaiming(&mut self, shape: [usize; 4], fan_in: usize) -> usize {
        let std = (2.0 / fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("finite std");
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| T::from_f64(dist.sample(rng)));
        self.push(t)
    }

    fn push(&mut self, t: Tensor<T>) -> usize {
        self.params.push(Param::new(t));
        self.params.len() - 1
    }

    fn conv(&mut self, cin: usize, cout: usize, k: usize, opts: Conv2dOpts) -> Conv {
        let weight = self.kaiming([cout, cin, k, k], cin * k * k);
        let bias = self.push(Tensor::zeros([cout]));
        Conv { weight, bias, opts }
    }

    fn deconv(&mut self, cin: usize, cout: usize) -> Deconv {
        let opts = ConvTransposeOpts::doubling();
        let k = DECONV_KERNEL;
        // each output pixel sees (k / stride)^2 taps per input channel
        let fan_in = cin * (k / opts.stride) * (k / opts.stride);
        let weight = self.kaiming([cin, cout, k, k], fan_in);
        let bias = self.push(Tensor::zeros([cout]));
        Deconv { weight, bias, opts }
    }

    fn norm(&mut self, c: usize) -> Norm {
        let gamma = self.push(Tensor::full([c], T::one()));
        let beta = self.push(Tensor::zeros([c]));
        self.stats.push(RunningStats { mean: Tensor::zeros([c]), var: Tensor::full([c], T::one()) });
        Norm { gamma, beta, stats: self.stats.len() - 1 }
    }

    fn conv_bn_relu(&mut self, cin: usize, cout: usize, dilation: usize) -> ConvBnRelu {
        ConvBnRelu { conv: self.conv(cin, cout, 3, Conv2dOpts::same3x3(dilation)), norm: self.norm(cout) }
    }

    fn transpose(&mut self, cin: usize, cout: usize, pool: TransposePool) -> TransposeLayer {
        TransposeLayer { norm: self.norm(cin), conv: self.conv(cin, cout, 1, Conv2dOpts::default()), pool: pool.pool() }
    }

    /// Returns the layers and the output width `cin + layers * growth`.
    fn dense(&mut self, cin: usize, layers: usize, growth: usize, dilation: usize) -> (Vec<ConvBnRelu>, usize) {
        let block = (0..layers).map(|i| self.conv_bn_relu(cin + i * growth, growth, dilation)).collect();
        (block, cin + layers * growth)
    }
}

/// Network parameters, running statistics and the layer layout.
#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    params: Vec<Param<T>>,
    stats: Vec<RunningStats<T>>,
    layout: Layout,
}

/// One forward pass: the graph plus the parameter bindings and any batch
/// statistics observed in train mode.
pub struct Pass<T> {
    pub graph: Graph<T>,
    params: Vec<Var>,
    mode: Mode,
    batch_stats: Vec<Option<BatchStats<T>>>,
}

impl<T: Real> Pass<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Graph handles of the model parameters, in declaration order.
    pub fn param_vars(&self) -> &[Var] {
        &self.params
    }
}

/// Output of [`Model::predict_mask`].
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T> {
    /// Forged-class probability, `[N, H, W]`.
    pub prob: Tensor<T>,
    /// `prob > 0.5`, one byte per pixel in `N, H, W` order.
    pub mask: Vec<u8>,
}

impl<T: Real> Model<T> {
    /// Kaiming-normal convolution weights, zero biases, unit BN scale; fully
    /// determined by `seed`.
    pub fn build(config: &ModelConfig, seed_value: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder { params: Vec::new(), stats: Vec::new(), rng: seed::rng(seed_value) };
        let c = config;

        let mut cts = Vec::with_capacity(6);
        let mut cin = 3;
        for &cout in &c.cts_channels {
            cts.push(b.conv(cin, cout, 3, Conv2dOpts::same3x3(1)));
            cin = cout;
        }

        let stem = b.conv_bn_relu(3, c.feb_channels[0], 1);
        let mut febs = Vec::with_capacity(3);
        let mut its_transposes = Vec::with_capacity(5);
        for i in 0..3 {
            let width = c.feb_channels[i];
            febs.push((0..c.feb_layers[i]).map(|_| b.conv_bn_relu(width, width, 1)).collect());
            let pool = if i < 2 { TransposePool::MaxS1 } else { TransposePool::AvgS2 };
            its_transposes.push(b.transpose(width, c.its_transpose_channels[i], pool));
        }
        let mut ddbs = Vec::with_capacity(2);
        for i in 0..2 {
            let (block, width) = b.dense(c.its_transpose_channels[2 + i], c.ddb_layers, c.ddb_growth, DILATION);
            ddbs.push(block);
            its_transposes.push(b.transpose(width, c.its_transpose_channels[3 + i], TransposePool::AvgS2));
        }

        let mut deconvs = Vec::with_capacity(3);
        let mut fln_dense = Vec::with_capacity(2);
        let mut fln_transposes = Vec::with_capacity(2);
        let mut width = c.fusion_channels;
        for i in 0..3 {
            deconvs.push(b.deconv(width, c.fln_deconv_channels[i]));
            width = c.fln_deconv_channels[i];
            if i < 2 {
                let (block, w) = b.dense(width, c.ddb_layers, c.ddb_growth, 1);
                fln_dense.push(block);
                fln_transposes.push(b.transpose(w, c.fln_transpose_channels[i], TransposePool::MaxS1));
                width = c.fln_transpose_channels[i];
            }
        }
        let head = b.conv(width, 2, 1, Conv2dOpts::default());

        let layout = Layout { cts, stem, febs, ddbs, its_transposes, deconvs, fln_dense, fln_transposes, head };
        Ok(Self { config: config.clone(), params: b.params, stats: b.stats, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats<T>] {
        &self.stats
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Same weights in another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.iter().map(|p| Param::new(p.value.cast())).collect(),
            stats: self.stats.iter().map(|s| RunningStats { mean: s.mean.cast(), var: s.var.cast() }).collect(),
            layout: self.layout.clone(),
        }
    }

    pub fn begin(&self, mode: Mode) -> Pass<T> {
        let mut graph = Graph::new();
        let params = self.params.iter().map(|p| graph.leaf(p.value.clone(), mode == Mode::Train)).collect();
        Pass { graph, params, mode, batch_stats: vec![None; self.stats.len()] }
    }

    /// Logits `[N, 2, H, W]` for an image batch `[N, 3, H, W]`.
    pub fn forward(&self, pass: &mut Pass<T>, image: &Tensor<T>) -> Result<Var> {
        let x = self.input(pass, image)?;
        let cts = self.cts_forward(pass, x)?;
        let its = self.its_forward(pass, x)?;
        let fused = self.fuse(pass, cts, its)?;
        self.fln_forward(pass, fused)
    }

    /// Places an image batch on the graph after checking its geometry.
    pub fn input(&self, pass: &mut Pass<T>, image: &Tensor<T>) -> Result<Var> {
        let [_, c, h, w] = image.dims4("model input")?;
        if c != 3 {
            return Err(shape_err("model input", alloc::format!("expected 3 channels, got {c}")));
        }
        if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
            return Err(shape_err("model input", alloc::format!("{h}x{w} is not divisible by 8")));
        }
        Ok(pass.graph.constant(image.clone()))
    }

    /// Character texture stream: six 3x3 conv + ReLU layers; max pooling after
    /// every conv except the third, stride 1 for the first two pools and
    /// stride 2 for the last three.
    pub fn cts_forward(&self, pass: &mut Pass<T>, image: Var) -> Result<Var> {
        let mut x = image;
        for (i, conv) in self.layout.cts.iter().enumerate() {
            x = self.conv(pass, x, conv)?;
            x = pass.graph.relu(x)?;
            x = match i {
                0 | 1 => pass.graph.pool2d(x, Pool2d::max_same())?,
                2 => x,
                _ => pass.graph.pool2d(x, Pool2d::halving(PoolMode::Max))?,
            };
        }
        Ok(x)
    }

    /// Image texture stream; returns the output of the last transpose layer.
    pub fn its_forward(&self, pass: &mut Pass<T>, image: Var) -> Result<Var> {
        Ok(self.its_stages(pass, image)?[4])
    }

    /// Outputs of the five image-stream transpose layers, in order.
    pub fn its_stages(&self, pass: &mut Pass<T>, image: Var) -> Result<[Var; 5]> {
        let l = &self.layout;
        let mut x = self.conv_bn_relu(pass, image, &l.stem)?;
        let mut outs = [x; 5];
        for i in 0..3 {
            x = self.feature_enhanced_block(pass, x, &l.febs[i])?;
            x = self.transpose_layer(pass, x, &l.its_transposes[i])?;
            outs[i] = x;
        }
        for i in 0..2 {
            x = self.dense_block(pass, x, &l.ddbs[i])?;
            x = self.transpose_layer(pass, x, &l.its_transposes[3 + i])?;
            outs[3 + i] = x;
        }
        Ok(outs)
    }

    pub fn fuse(&self, pass: &mut Pass<T>, cts: Var, its: Var) -> Result<Var> {
        pass.graph.add(cts, its)
    }

    /// Decoder: three x2 deconvolutions interleaved with dense blocks and
    /// stride-1 transpose layers, then a 1x1 convolution to two classes.
    pub fn fln_forward(&self, pass: &mut Pass<T>, fused: Var) -> Result<Var> {
        let l = &self.layout;
        let mut x = fused;
        for (i, deconv) in l.deconvs.iter().enumerate() {
            x = self.deconv(pass, x, deconv)?;
            x = pass.graph.relu(x)?;
            if i < 2 {
                x = self.dense_block(pass, x, &l.fln_dense[i])?;
                x = self.transpose_layer(pass, x, &l.fln_transposes[i])?;
            }
        }
        self.conv(pass, x, &l.head)
    }

    /// `f_i = H_i(f_{i-1} + f_{i-2})` with `f_{-1} = 0`; returns `f_n`.
    pub fn feature_enhanced_block(&self, pass: &mut Pass<T>, f0: Var, layers: &[ConvBnRelu]) -> Result<Var> {
        let shape = pass.graph.value(f0).shape().to_vec();
        let (mut prev2, mut prev1): (Option<Var>, Var) = (None, f0);
        for layer in layers {
            let input = match prev2 {
                Some(p) => pass.graph.add(prev1, p)?,
                None => prev1,
            };
            let out = self.conv_bn_relu(pass, input, layer)?;
            if pass.graph.value(out).shape() != shape.as_slice() {
                return Err(shape_err("feature_enhanced_block", "layer changed the feature shape"));
            }
            prev2 = Some(prev1);
            prev1 = out;
        }
        Ok(prev1)
    }

    /// Each layer consumes the concatenation of the block input and all
    /// earlier layer outputs; returns that full concatenation.
    pub fn dense_block(&self, pass: &mut Pass<T>, f0: Var, layers: &[ConvBnRelu]) -> Result<Var> {
        let mut features = vec![f0];
        for layer in layers {
            let input = if features.len() == 1 { f0 } else { pass.graph.concat_channels(&features)? };
            features.push(self.conv_bn_relu(pass, input, layer)?);
        }
        if features.len() == 1 {
            return Ok(f0);
        }
        pass.graph.concat_channels(&features)
    }

    pub fn transpose_layer(&self, pass: &mut Pass<T>, x: Var, layer: &TransposeLayer) -> Result<Var> {
        let [_, _, h, w] = pass.graph.value(x).dims4("transpose_layer")?;
        if layer.pool.stride == 2 && (h % 2 != 0 || w % 2 != 0) {
            return Err(shape_err("transpose_layer", alloc::format!("odd spatial size {h}x{w} under stride-2 pooling")));
        }
        let x = self.norm(pass, x, &layer.norm)?;
        let x = pass.graph.relu(x)?;
        let x = self.conv(pass, x, &layer.conv)?;
        pass.graph.pool2d(x, layer.pool)
    }

    pub fn conv_bn_relu(&self, pass: &mut Pass<T>, x: Var, layer: &ConvBnRelu) -> Result<Var> {
        let x = self.conv(pass, x, &layer.conv)?;
        let x = self.norm(pass, x, &layer.norm)?;
        pass.graph.relu(x)
    }

    fn conv(&self, pass: &mut Pass<T>, x: Var, c: &Conv) -> Result<Var> {
        pass.graph.conv2d(x, pass.params[c.weight], pass.params[c.bias], c.opts)
    }

    fn deconv(&self, pass: &mut Pass<T>, x: Var, d: &Deconv) -> Result<Var> {
        pass.graph.conv_transpose2d(x, pass.params[d.weight], pass.params[d.bias], d.opts)
    }

    fn norm(&self, pass: &mut Pass<T>, x: Var, n: &Norm) -> Result<Var> {
        let eps = T::from_f64(BN_EPS);
        let (gamma, beta) = (pass.params[n.gamma], pass.params[n.beta]);
        match pass.mode {
            Mode::Train => {
                let (y, stats) = pass.graph.batch_norm(x, gamma, beta, BnMode::Train { eps })?;
                pass.batch_stats[n.stats] = stats;
                Ok(y)
            }
            Mode::Eval => {
                let s = &self.stats[n.stats];
                let mode = BnMode::Infer { eps, mean: s.mean.data(), var: s.var.data() };
                Ok(pass.graph.batch_norm(x, gamma, beta, mode)?.0)
            }
        }
    }

    /// Layers of feature-enhanced block `i` (0..3).
    pub fn feb_layers(&self, i: usize) -> &[ConvBnRelu] {
        &self.layout.febs[i]
    }

    /// Layers of image-stream dilated dense block `i` (0..2).
    pub fn ddb_layers(&self, i: usize) -> &[ConvBnRelu] {
        &self.layout.ddbs[i]
    }

    /// Image-stream transpose layer `i` (0..5).
    pub fn its_transpose(&self, i: usize) -> &TransposeLayer {
        &self.layout.its_transposes[i]
    }

    /// Copy parameter gradients out of a finished backward sweep.
    pub fn absorb_grads(&mut self, pass: &Pass<T>, grads: &mut Gradients<T>) -> Result<()> {
        for (p, v) in self.params.iter_mut().zip(&pass.params) {
            let g = grads.take(*v).ok_or(Error::MissingGradient(v.index()))?;
            p.accumulate(&g)?;
        }
        Ok(())
    }

    /// Fold the batch statistics of a train-mode pass into the running
    /// averages.
    pub fn update_running_stats(&mut self, pass: &Pass<T>) {
        let m = T::from_f64(BN_MOMENTUM);
        let keep = T::one() - m;
        for (run, batch) in self.stats.iter_mut().zip(&pass.batch_stats) {
            let Some(b) = batch else { continue };
            for (r, &v) in run.mean.data_mut().iter_mut().zip(&b.mean) {
                *r = keep * *r + m * v;
            }
            for (r, &v) in run.var.data_mut().iter_mut().zip(&b.var) {
                *r = keep * *r + m * v;
            }
        }
    }

    /// Eval-mode forward, channel softmax, forged-class probability and the
    /// strict `> 0.5` mask.
    pub fn predict_mask(&self, image: &Tensor<T>) -> Result<Prediction<T>> {
        let mut pass = self.begin(Mode::Eval);
        let logits = self.forward(&mut pass, image)?;
        prediction_from_logits(&mut pass.graph, logits)
    }
}

/// Forged-class (channel 1) probability and `> 0.5` mask from 2-class logits.
pub fn prediction_from_logits<T: Real>(graph: &mut Graph<T>, logits: Var) -> Result<Prediction<T>> {
    let [n, c, h, w] = graph.value(logits).dims4("predict_mask")?;
    if c != 2 {
        return Err(shape_err("predict_mask", alloc::format!("expected 2 classes, got {c}")));
    }
    let probs = graph.softmax_channels(logits)?;
    let p = graph.value(probs).data();
    let hw = h * w;
    let half = T::from_f64(0.5);
    let mut prob = Vec::with_capacity(n * hw);
    for i in 0..n {
        prob.extend_from_slice(&p[(2 * i + 1) * hw..(2 * i + 2) * hw]);
    }
    let mask = prob.iter().map(|&v| (v > half) as u8).collect();
    Ok(Prediction { prob: Tensor::new([n, h, w], prob)?, mask })
}
