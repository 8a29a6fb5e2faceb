//! Dataset splitting, batch assembly and the SGD training loop.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalOptions, MetricsReport};
use crate::model::{Mode, Model};
use crate::seed;
use crate::synth::DocumentSample;
use crate::tensor::{Sgd, Tensor};

/// Shuffle and cut into train / validation / test at 8:1:1. Validation and
/// test each get `n / 10` items; the remainder goes to training.
pub fn split_dataset<T>(samples: Vec<T>, seed_value: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let n = samples.len();
    if n < 10 {
        return Err(Error::Invalid(format!("need at least 10 samples to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed_value));
    let mut slots: Vec<Option<T>> = samples.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<T> { idx.iter().map(|&i| slots[i].take().expect("index used once")).collect() };
    let tenth = n / 10;
    let val = take(&order[..tenth]);
    let test = take(&order[tenth..2 * tenth]);
    let train = take(&order[2 * tenth..]);
    Ok((train, val, test))
}

/// Resize a set of samples to `(height, width)`: images bilinearly into
/// `[N, 3, h, w]` scaled to `[0, 1]`, masks by nearest neighbour into one
/// byte per pixel.
pub fn prepare_batch(samples: &[DocumentSample], size: (usize, usize)) -> Result<(Tensor<f32>, Vec<u8>)> {
    let (h, w) = size;
    let hw = h * w;
    let mut images = Vec::with_capacity(samples.len() * 3 * hw);
    let mut masks = Vec::with_capacity(samples.len() * hw);
    for s in samples {
        let rgb = s.image.resample_f64(w, h)?;
        for c in 0..3 {
            images.extend(rgb[c..].iter().step_by(3).map(|&v| (v / 255.0) as f32));
        }
        masks.extend_from_slice(s.mask.resize_nearest(w, h)?.data());
    }
    Ok((Tensor::new([samples.len(), 3, h, w], images)?, masks))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Validate after every this many epochs.
    pub validate_every: usize,
    /// `(height, width)` fed to the network.
    pub input_size: (usize, usize),
    pub seed: u64,
    /// Where the caller should keep the best-validation model.
    pub checkpoint_path: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 6,
            epochs: 200,
            validate_every: 10,
            input_size: (64, 64),
            seed: 0,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        // lr = 0 is accepted for parameter-preserving dry runs
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be finite and >= 0", self.learning_rate));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.validate_every == 0 {
            return bad("batch_size, epochs and validate_every must be positive".into());
        }
        if self.validate_every > self.epochs {
            return bad(format!("validate_every {} exceeds epochs {}", self.validate_every, self.epochs));
        }
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return bad(format!("input size {h}x{w} must be a positive multiple of 8"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Validation {
    /// 1-based epoch after which validation ran.
    pub epoch: usize,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    /// Mean minibatch loss of each epoch.
    pub epoch_loss: Vec<f64>,
    /// Loss of every optimizer step, in order.
    pub step_loss: Vec<f64>,
    pub validations: Vec<Validation>,
}

/// Progress notifications from [`train`].
pub enum TrainEvent<'a> {
    EpochEnd { epoch: usize, loss: f64 },
    Validated { epoch: usize, report: &'a MetricsReport },
    /// Validation F1 improved; `model` is the new best.
    NewBest { epoch: usize, f1: f64, model: &'a Model<f32> },
}

#[derive(Clone, Debug)]
pub struct BestModel {
    pub epoch: usize,
    pub f1: f64,
    pub model: Model<f32>,
}

#[derive(Clone, Debug)]
pub struct Trained {
    /// Parameters after the last epoch.
    pub model: Model<f32>,
    /// Highest validation F1 seen, if validation ran.
    pub best: Option<BestModel>,
    pub history: TrainHistory,
}

/// One forward / backward / update on a prepared batch. Returns the loss
/// measured before the update.
pub fn train_step(model: &mut Model<f32>, sgd: &Sgd, images: &Tensor<f32>, masks: &[u8]) -> Result<f64> {
    let mut pass = model.begin(Mode::Train);
    let logits = model.forward(&mut pass, images)?;
    let loss = pass.graph.cross_entropy(logits, masks)?;
    let value = pass.graph.value(loss).item().map_or(f64::NAN, |v| v as f64);
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "cross_entropy" });
    }
    let mut grads = pass.graph.backward(loss)?;
    model.absorb_grads(&pass, &mut grads)?;
    sgd.step(model.params_mut())?;
    model.update_running_stats(&pass);
    Ok(value)
}

/// Plain minibatch SGD. Each epoch visits the training set in an order
/// drawn from `(seed, epoch)`; validation runs every `validate_every`
/// epochs and the best-F1 model is retained.
pub fn train(
    mut model: Model<f32>,
    train_set: &[DocumentSample],
    val_set: &[DocumentSample],
    config: &TrainConfig,
    observer: &mut dyn FnMut(TrainEvent<'_>),
) -> Result<Trained> {
    config.validate()?;
    if model.config().input_size != config.input_size {
        return Err(Error::Config(format!(
            "model expects {:?} inputs, training config asks for {:?}",
            model.config().input_size,
            config.input_size
        )));
    }
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let sgd = Sgd::new(config.learning_rate)?;
    let (h, w) = config.input_size;
    let hw = h * w;
    let (all_images, all_masks) = prepare_batch(train_set, config.input_size)?;
    let per_image = 3 * hw;

    let mut history = TrainHistory::default();
    let mut best: Option<BestModel> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng(seed::derive(config.seed, epoch as u64)));
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(config.batch_size) {
            let mut images = Vec::with_capacity(chunk.len() * per_image);
            let mut masks = Vec::with_capacity(chunk.len() * hw);
            for &i in chunk {
                images.extend_from_slice(&all_images.data()[i * per_image..(i + 1) * per_image]);
                masks.extend_from_slice(&all_masks[i * hw..(i + 1) * hw]);
            }
            let images = Tensor::new([chunk.len(), 3, h, w], images)?;
            let step = history.step_loss.len() + 1;
            let loss = train_step(&mut model, &sgd, &images, &masks).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged { epoch, step, loss: f64::NAN },
                other => other,
            })?;
            history.step_loss.push(loss);
            sum += loss;
            steps += 1;
        }
        let mean = sum / steps as f64;
        history.epoch_loss.push(mean);
        observer(TrainEvent::EpochEnd { epoch, loss: mean });

        if epoch % config.validate_every == 0 && !val_set.is_empty() {
            let report = evaluate(&model, val_set, EvalOptions::default())?;
            observer(TrainEvent::Validated { epoch, report: &report });
            let f1 = report.overall.f1;
            if best.as_ref().is_none_or(|b| f1 > b.f1) {
                let snapshot = BestModel { epoch, f1, model: model.clone() };
                observer(TrainEvent::NewBest { epoch, f1, model: &snapshot.model });
                best = Some(snapshot);
            }
            history.validations.push(Validation { epoch, report });
        }
    }
    Ok(Trained { model, best, history })
}
