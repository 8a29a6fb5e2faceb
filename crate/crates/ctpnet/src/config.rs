//! Flat `key = value` configuration with command-line overrides.
//!
//! ```text
//! # comments and blank lines are ignored
//! model = tiny
//! input_size = 64
//! learning_rate = 0.05
//! noise_sigma = 0, 8
//! jpeg_quality = none
//! recapture_scale = 0.4, 0.7
//! grid = resize:0.5,1.0;crop:0.8;gauss_noise:0,25
//! ```

use std::path::Path;
use std::str::FromStr;

use ctpnet_core::metrics::EvalOptions;
use ctpnet_core::model::ModelConfig;
use ctpnet_core::robustness::{PerturbKind, SweepGrid};
use ctpnet_core::synth::SynthConfig;
use ctpnet_core::train::TrainConfig;

use crate::error::{AppError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelPreset {
    Tiny,
    Desk,
}

impl ModelPreset {
    pub fn config(self) -> ModelConfig {
        match self {
            ModelPreset::Tiny => ModelConfig::tiny(),
            ModelPreset::Desk => ModelConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub grid: SweepGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            seed: train.seed,
            synth: SynthConfig::default(),
            model: ModelConfig::default().with_input_size(train.input_size.0, train.input_size.1),
            train,
            eval: EvalOptions::default(),
            grid: SweepGrid::default(),
        }
    }
}

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> AppError {
    AppError::Config(format!("{key} = {value:?}: {why}"))
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e| bad(key, value, e))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(|v| num(key, v)).collect()
}

fn pair<T: FromStr + Copy>(key: &str, value: &str) -> Result<(T, T)>
where
    T::Err: std::fmt::Display,
{
    match list::<T>(key, value)?.as_slice() {
        [a] => Ok((*a, *a)),
        [a, b] => Ok((*a, *b)),
        _ => Err(bad(key, value, "expected one or two comma-separated values")),
    }
}

/// `"64"` for a square input or `"HxW"`, returned as `(height, width)`.
pub fn parse_size(value: &str) -> Result<(usize, usize)> {
    let v = value.trim();
    match v.split_once(['x', 'X']) {
        Some((h, w)) => Ok((num("input_size", h)?, num("input_size", w)?)),
        None => {
            let n = num("input_size", v)?;
            Ok((n, n))
        }
    }
}

/// `kind:f1,f2;kind:f3`, for example `resize:0.5,1;gauss_noise:0,25`.
pub fn parse_grid(value: &str) -> Result<SweepGrid> {
    let mut entries = Vec::new();
    for part in value.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (kind, factors) = part.split_once(':').ok_or_else(|| bad("grid", part, "expected kind:factors"))?;
        let kind = PerturbKind::parse(kind.trim()).ok_or_else(|| bad("grid", kind, "unknown perturbation"))?;
        entries.push((kind, list("grid", factors)?));
    }
    if entries.is_empty() {
        return Err(bad("grid", value, "no grid points"));
    }
    Ok(SweepGrid { entries })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

impl RunConfig {
    /// Apply one setting. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => {
                self.seed = num(key, v)?;
                self.train.seed = self.seed;
            }
            "width" => self.synth.width = num(key, v)?,
            "height" => self.synth.height = num(key, v)?,
            "splice_fraction" => self.synth.splice_fraction = num(key, v)?,
            "category_mix" => {
                self.synth.category_mix =
                    list::<f64>(key, v)?.try_into().map_err(|_| bad(key, v, "expected four weights"))?;
            }
            "min_ratio" => self.synth.min_ratio = num(key, v)?,
            "noise_sigma" => self.synth.noise_sigma = pair(key, v)?,
            "jpeg_quality" => {
                self.synth.jpeg_quality = if v == "none" { None } else { Some(pair(key, v)?) };
            }
            "recapture_scale" => {
                self.synth.recapture_scale = if v == "none" { None } else { Some(pair(key, v)?) };
            }
            "model" => {
                let preset = match v {
                    "tiny" => ModelPreset::Tiny,
                    "desk" | "default" => ModelPreset::Desk,
                    _ => return Err(bad(key, v, "expected tiny or desk")),
                };
                let (h, w) = self.model.input_size;
                self.model = preset.config().with_input_size(h, w);
            }
            "input_size" => self.set_input_size(parse_size(v)?),
            "learning_rate" => self.train.learning_rate = num(key, v)?,
            "batch_size" => self.train.batch_size = num(key, v)?,
            "epochs" => self.train.epochs = num(key, v)?,
            "validate_every" => self.train.validate_every = num(key, v)?,
            "checkpoint_path" => self.train.checkpoint_path = Some(v.to_owned()),
            "pooled_auc" => self.eval.pooled_auc = parse_bool(key, v)?,
            "eval_batch_size" => self.eval.batch_size = num(key, v)?,
            "grid" => self.grid = parse_grid(v)?,
            other => return Err(AppError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn set_input_size(&mut self, (h, w): (usize, usize)) {
        self.model.input_size = (h, w);
        self.train.input_size = (h, w);
    }

    /// Apply a `key=value` override string.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv.split_once('=').ok_or_else(|| AppError::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k, v)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| AppError::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v).map_err(|e| match e {
                AppError::Config(m) => AppError::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Checks every section; all failures map to config errors.
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.eval.batch_size == 0 {
            return Err(AppError::Config("eval_batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_text() {
        let mut c = RunConfig::default();
        c.apply_text(
            "# desk run\nmodel = tiny\ninput_size = 32x48\nlearning_rate=0.05 # scaled\n\njpeg_quality = none\nnoise_sigma = 2\ngrid = crop:0.8,1;noise:5\n",
        )
        .unwrap();
        assert_eq!(c.model, ModelConfig::tiny().with_input_size(32, 48));
        assert_eq!(c.train.input_size, (32, 48));
        assert_eq!(c.train.learning_rate, 0.05);
        assert_eq!(c.synth.jpeg_quality, None);
        assert_eq!(c.synth.noise_sigma, (2.0, 2.0));
        c.set("recapture_scale", "0.5").unwrap();
        assert_eq!(c.synth.recapture_scale, Some((0.5, 0.5)));
        c.set("recapture_scale", "none").unwrap();
        assert_eq!(c.synth.recapture_scale, None);
        assert_eq!(c.grid.points(), vec![(PerturbKind::Crop, 0.8), (PerturbKind::Crop, 1.0), (PerturbKind::GaussNoise, 5.0)]);
    }

    #[test]
    fn preset_keeps_input_size() {
        let mut c = RunConfig::default();
        c.set("input_size", "16").unwrap();
        c.set("model", "tiny").unwrap();
        assert_eq!(c.model.input_size, (16, 16));
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let mut c = RunConfig::default();
        assert!(matches!(c.apply_text("nope = 1"), Err(AppError::Config(m)) if m.contains("line 1")));
        assert!(c.apply_text("epochs").is_err());
        assert!(c.set("epochs", "ten").is_err());
        assert!(c.set("category_mix", "1,2").is_err());
        assert!(c.apply_override("seed").is_err());
    }
}
