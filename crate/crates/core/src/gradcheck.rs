//! Central finite-difference verification of the tape.
//!
//! Every differentiable op is exercised on small random `f64` inputs; the
//! analytic gradient from [`Graph::backward`] must agree with
//! `(f(x + h) - f(x - h)) / 2h` per element.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::model::{Mode, Model, ModelConfig};
use crate::seed;
use crate::tensor::{BnMode, Conv2dOpts, ConvTransposeOpts, Graph, Pool2d, PoolMode, Tensor, Var};

/// Finite-difference step for op checks.
pub const OP_STEP: f64 = 1e-3;
/// Relative tolerance for op checks.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Finite-difference step for the whole-model check.
pub const MODEL_STEP: f64 = 1e-6;
/// Relative tolerance for the whole-model check.
pub const MODEL_TOLERANCE: f64 = 1e-3;
/// Fraction of sampled parameters that must pass the whole-model check.
pub const MODEL_PASS_FRACTION: f64 = 0.99;
/// Gradients smaller than this are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub type LossFn<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'a;

/// Largest relative error over every element of every input.
pub fn max_relative_error(inputs: &[Tensor<f64>], loss: &LossFn<'_>, step: f64) -> Result<f64> {
    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = loss(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = loss(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).expect("leaf gradient").data().to_vec();
        for (j, &a) in analytic.iter().enumerate() {
            let orig = probe[k].data()[j];
            probe[k].data_mut()[j] = orig + step;
            let up = eval(&probe)?;
            probe[k].data_mut()[j] = orig - step;
            let down = eval(&probe)?;
            probe[k].data_mut()[j] = orig;
            worst = worst.max(relative_error(a, (up - down) / (2.0 * step)));
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn normal(rng: &mut seed::Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero so the ReLU kink is never straddled.
fn off_zero(rng: &mut seed::Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) { m } else { -m }
    })
}

/// Pairwise-distinct values (gaps >= 0.04) so no max-pool window is near a tie.
fn distinct(rng: &mut seed::Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Tensor::from_fn(shape.to_vec(), |i| order[i] as f64 * 0.05 - 1.0 + rng.random_range(0.0..0.005))
}

struct Case {
    inputs: Vec<Tensor<f64>>,
    weights: Option<Tensor<f64>>,
}

type Forward = fn(&mut Graph<f64>, &[Var], &Case) -> Result<Var>;

fn run_case(case: &Case, forward: Forward) -> Result<f64> {
    let loss = |g: &mut Graph<f64>, vars: &[Var]| -> Result<Var> {
        let y = forward(g, vars, case)?;
        match &case.weights {
            Some(w) => g.weighted_sum(y, w),
            None => Ok(y),
        }
    };
    max_relative_error(&case.inputs, &loss, OP_STEP)
}

fn weights_for(rng: &mut seed::Rng, shape: &[usize]) -> Option<Tensor<f64>> {
    Some(normal(rng, shape))
}

fn conv_case(rng: &mut seed::Rng, opts: Conv2dOpts, k: usize) -> Case {
    let n = rng.random_range(1..=2);
    let c = rng.random_range(1..=2);
    let out_c = rng.random_range(1..=2);
    let size = rng.random_range(5..=6);
    let x = normal(rng, &[n, c, size, size]);
    let kern = normal(rng, &[out_c, c, k, k]);
    let bias = normal(rng, &[out_c]);
    let ho = crate::tensor::conv_out_size(size, k, opts).expect("valid geometry");
    let weights = weights_for(rng, &[n, out_c, ho, ho]);
    Case { inputs: vec![x, kern, bias], weights }
}

/// One finite-difference pass per op family over `instances` random cases.
pub fn op_suite(instances: usize, seed_value: u64) -> Result<Vec<CheckReport>> {
    type Builder = fn(&mut seed::Rng) -> Case;
    let checks: Vec<(&str, Builder, Forward)> = vec![
        (
            "relu",
            |rng| {
                let x = off_zero(rng, &[2, 2, 3, 3]);
                let weights = weights_for(rng, &[2, 2, 3, 3]);
                Case { inputs: vec![x], weights }
            },
            |g, v, _| g.relu(v[0]),
        ),
        (
            "add",
            |rng| {
                let shape = [1, 3, 4, 4];
                let inputs = vec![normal(rng, &shape), normal(rng, &shape)];
                Case { inputs, weights: weights_for(rng, &shape) }
            },
            |g, v, _| g.add(v[0], v[1]),
        ),
        (
            "concat_channels",
            |rng| {
                let inputs = vec![normal(rng, &[2, 1, 3, 3]), normal(rng, &[2, 2, 3, 3])];
                Case { inputs, weights: weights_for(rng, &[2, 3, 3, 3]) }
            },
            |g, v, _| g.concat_channels(&[v[0], v[1]]),
        ),
        ("conv2d", |rng| conv_case(rng, Conv2dOpts::same3x3(1), 3), |g, v, _| {
            g.conv2d(v[0], v[1], v[2], Conv2dOpts::same3x3(1))
        }),
        ("conv2d_stride2", |rng| conv_case(rng, Conv2dOpts::new(2, 1, 1), 3), |g, v, _| {
            g.conv2d(v[0], v[1], v[2], Conv2dOpts::new(2, 1, 1))
        }),
        ("conv2d_dilated", |rng| conv_case(rng, Conv2dOpts::same3x3(2), 3), |g, v, _| {
            g.conv2d(v[0], v[1], v[2], Conv2dOpts::same3x3(2))
        }),
        ("conv2d_1x1", |rng| conv_case(rng, Conv2dOpts::default(), 1), |g, v, _| {
            g.conv2d(v[0], v[1], v[2], Conv2dOpts::default())
        }),
        (
            "conv_transpose2d",
            |rng| {
                let (c, k) = (rng.random_range(1..=2), rng.random_range(1..=2));
                let x = normal(rng, &[1, c, 3, 3]);
                let kern = normal(rng, &[c, k, 4, 4]);
                let bias = normal(rng, &[k]);
                Case { inputs: vec![x, kern, bias], weights: weights_for(rng, &[1, k, 6, 6]) }
            },
            |g, v, _| g.conv_transpose2d(v[0], v[1], v[2], ConvTransposeOpts::doubling()),
        ),
        (
            "max_pool_same",
            |rng| {
                let x = distinct(rng, &[1, 2, 5, 5]);
                Case { inputs: vec![x], weights: weights_for(rng, &[1, 2, 5, 5]) }
            },
            |g, v, _| g.pool2d(v[0], Pool2d::max_same()),
        ),
        (
            "max_pool_halving",
            |rng| {
                let x = distinct(rng, &[2, 2, 4, 4]);
                Case { inputs: vec![x], weights: weights_for(rng, &[2, 2, 2, 2]) }
            },
            |g, v, _| g.pool2d(v[0], Pool2d::halving(PoolMode::Max)),
        ),
        (
            "avg_pool_halving",
            |rng| {
                let x = normal(rng, &[2, 2, 4, 4]);
                Case { inputs: vec![x], weights: weights_for(rng, &[2, 2, 2, 2]) }
            },
            |g, v, _| g.pool2d(v[0], Pool2d::halving(PoolMode::Avg)),
        ),
        (
            "avg_pool_padded",
            |rng| {
                let x = normal(rng, &[1, 2, 5, 5]);
                Case { inputs: vec![x], weights: weights_for(rng, &[1, 2, 3, 3]) }
            },
            |g, v, _| g.pool2d(v[0], Pool2d::new(PoolMode::Avg, 3, 2, 1)),
        ),
        (
            "batch_norm_train",
            |rng| {
                let shape = [2, 3, 3, 3];
                let inputs = vec![normal(rng, &shape), normal(rng, &[3]), normal(rng, &[3])];
                Case { inputs, weights: weights_for(rng, &shape) }
            },
            |g, v, _| Ok(g.batch_norm(v[0], v[1], v[2], BnMode::Train { eps: 1e-5 })?.0),
        ),
        (
            "batch_norm_infer",
            |rng| {
                let shape = [2, 2, 3, 3];
                let inputs = vec![normal(rng, &shape), normal(rng, &[2]), normal(rng, &[2])];
                Case { inputs, weights: weights_for(rng, &shape) }
            },
            |g, v, _| {
                let mode = BnMode::Infer { eps: 1e-5, mean: &[0.3, -0.2], var: &[0.5, 1.7] };
                Ok(g.batch_norm(v[0], v[1], v[2], mode)?.0)
            },
        ),
        (
            "softmax_channels",
            |rng| {
                let shape = [2, 2, 4, 4];
                Case { inputs: vec![normal(rng, &shape)], weights: weights_for(rng, &shape) }
            },
            |g, v, _| g.softmax_channels(v[0]),
        ),
        (
            "cross_entropy",
            |rng| {
                let x = normal(rng, &[2, 2, 4, 4]);
                Case { inputs: vec![x], weights: None }
            },
            |g, v, _| {
                let target: Vec<u8> = (0..32).map(|i| ((i * 7 + 3) % 5 % 2) as u8).collect();
                g.cross_entropy(v[0], &target)
            },
        ),
        (
            "sum",
            |rng| Case { inputs: vec![normal(rng, &[3, 4])], weights: None },
            |g, v, _| g.sum(v[0]),
        ),
    ];

    let mut reports = Vec::with_capacity(checks.len());
    for (idx, (name, build, forward)) in checks.into_iter().enumerate() {
        let mut rng = seed::rng(seed::derive(seed_value, idx as u64));
        let mut worst = 0.0f64;
        for _ in 0..instances {
            let case = build(&mut rng);
            debug_assert!(case.inputs.iter().map(Tensor::numel).sum::<usize>() <= 200);
            worst = worst.max(run_case(&case, forward)?);
        }
        reports.push(CheckReport {
            name: name.into(),
            instances,
            worst,
            tolerance: OP_TOLERANCE,
            passed: worst <= OP_TOLERANCE,
        });
    }
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckReport {
    pub sampled: usize,
    pub within_tolerance: usize,
    pub worst: f64,
}

impl ModelCheckReport {
    pub fn pass_fraction(&self) -> f64 {
        self.within_tolerance as f64 / self.sampled.max(1) as f64
    }

    pub fn passed(&self) -> bool {
        self.pass_fraction() >= MODEL_PASS_FRACTION
    }

    pub fn summary(&self) -> String {
        format!(
            "{}/{} sampled parameters within {:e} (worst {:.3e})",
            self.within_tolerance, self.sampled, MODEL_TOLERANCE, self.worst
        )
    }
}

/// Finite-difference check of the full network: one `3 x size x size` image,
/// a random binary target, cross-entropy loss, batch statistics in train
/// mode. `samples` parameter entries are drawn uniformly.
pub fn model_check(config: &ModelConfig, size: usize, samples: usize, seed_value: u64) -> Result<ModelCheckReport> {
    let model = Model::<f64>::build(config, seed::derive(seed_value, 1))?;
    let mut rng = seed::rng(seed::derive(seed_value, 2));
    let image = Tensor::from_fn([1, 3, size, size], |_| rng.random_range(0.0..1.0));
    let target: Vec<u8> = (0..size * size).map(|_| rng.random_bool(0.3) as u8).collect();

    let loss_of = |m: &Model<f64>| -> Result<f64> {
        let mut pass = m.begin(Mode::Train);
        let logits = m.forward(&mut pass, &image)?;
        let loss = pass.graph.cross_entropy(logits, &target)?;
        Ok(pass.graph.value(loss).data()[0])
    };

    let mut pass = model.begin(Mode::Train);
    let logits = model.forward(&mut pass, &image)?;
    let loss = pass.graph.cross_entropy(logits, &target)?;
    let grads = pass.graph.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = pass
        .param_vars()
        .iter()
        .map(|v| grads.get(*v).expect("param gradient").clone())
        .collect();

    let total: usize = analytic.iter().map(Tensor::numel).sum();
    let mut picks: Vec<usize> = (0..total).collect();
    picks.shuffle(&mut rng);
    picks.truncate(samples);
    picks.sort_unstable();

    let mut probe = model.clone();
    let mut report = ModelCheckReport { sampled: picks.len(), within_tolerance: 0, worst: 0.0 };
    for flat in picks {
        let (mut p, mut j) = (0, flat);
        while j >= analytic[p].numel() {
            j -= analytic[p].numel();
            p += 1;
        }
        let orig = probe.params()[p].value.data()[j];
        probe.params_mut()[p].value.data_mut()[j] = orig + MODEL_STEP;
        let up = loss_of(&probe)?;
        probe.params_mut()[p].value.data_mut()[j] = orig - MODEL_STEP;
        let down = loss_of(&probe)?;
        probe.params_mut()[p].value.data_mut()[j] = orig;
        let err = relative_error(analytic[p].data()[j], (up - down) / (2.0 * MODEL_STEP));
        report.worst = report.worst.max(err);
        if err <= MODEL_TOLERANCE {
            report.within_tolerance += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-12, 0.0) < 1e-5);
    }

    #[test]
    fn suite_passes_on_a_few_instances() {
        for r in op_suite(2, 7).unwrap() {
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu(x) with x straddling zero at the FD step: numerical slope 0.5
        let x = Tensor::new([1], vec![0.0]).unwrap();
        let loss = |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.relu(v[0])?;
            g.sum(y)
        };
        assert!(max_relative_error(&[x], &loss, 1e-3).unwrap() > 0.4);
    }
}
