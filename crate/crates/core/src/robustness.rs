//! Post-processing perturbations and AUC sweeps over them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(any(feature = "std", test)))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalOptions, MetricsReport};
use crate::model::Model;
use crate::raster::centered_window;
use crate::seed;
use crate::synth::{add_gaussian_noise, DocumentSample};

/// Smallest side length a perturbed sample may have.
pub const MIN_SIDE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PerturbKind {
    /// Scale both sides by the factor.
    Resize,
    /// Keep a centred window, the factor being the kept fraction per side.
    Crop,
    /// Gaussian noise with the factor as sigma.
    GaussNoise,
}

impl PerturbKind {
    pub fn name(self) -> &'static str {
        match self {
            PerturbKind::Resize => "resize",
            PerturbKind::Crop => "crop",
            PerturbKind::GaussNoise => "gauss_noise",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "resize" => Some(PerturbKind::Resize),
            "crop" => Some(PerturbKind::Crop),
            "gauss_noise" | "noise" | "sigma" => Some(PerturbKind::GaussNoise),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Perturbation {
    pub kind: PerturbKind,
    pub factor: f64,
    pub seed: u64,
}

impl Perturbation {
    pub fn validate(&self) -> Result<()> {
        let f = self.factor;
        let ok = f.is_finite()
            && match self.kind {
                PerturbKind::Resize => f > 0.0,
                PerturbKind::Crop => f > 0.0 && f <= 1.0,
                PerturbKind::GaussNoise => f >= 0.0,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("{} factor {f} out of range", self.kind.name())))
        }
    }
}

fn check_side(w: usize, h: usize) -> Result<()> {
    if w < MIN_SIDE || h < MIN_SIDE {
        return Err(Error::Invalid(format!("perturbed size {w}x{h} below {MIN_SIDE} pixels per side")));
    }
    Ok(())
}

/// Apply `p` to a sample. Geometric perturbations move the mask along with
/// the image; noise leaves the mask alone. Ratio and category are
/// recomputed from the resulting mask.
pub fn perturb(sample: &DocumentSample, p: Perturbation) -> Result<DocumentSample> {
    p.validate()?;
    let (w, h) = (sample.image.width(), sample.image.height());
    let (image, mask) = match p.kind {
        PerturbKind::Resize => {
            let nw = (w as f64 * p.factor).round() as usize;
            let nh = (h as f64 * p.factor).round() as usize;
            check_side(nw, nh)?;
            (sample.image.resize_bilinear(nw, nh)?, sample.mask.resize_nearest(nw, nh)?)
        }
        PerturbKind::Crop => {
            let r = centered_window(w, h, p.factor);
            check_side(r.width, r.height)?;
            (sample.image.crop(r)?, sample.mask.crop(r)?)
        }
        PerturbKind::GaussNoise => (add_gaussian_noise(&sample.image, p.factor, p.seed)?, sample.mask.clone()),
    };
    DocumentSample::new(sample.id, image, mask, sample.recipe.clone())
}

/// Perturbation kinds and the factors to try for each.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub entries: Vec<(PerturbKind, Vec<f64>)>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            entries: vec![
                (PerturbKind::Resize, vec![0.5, 0.75, 1.0, 1.25, 1.5]),
                (PerturbKind::Crop, vec![0.6, 0.8, 1.0]),
                (PerturbKind::GaussNoise, vec![0.0, 5.0, 10.0, 25.0]),
            ],
        }
    }
}

impl SweepGrid {
    /// Every `(kind, factor)` pair in table order.
    pub fn points(&self) -> Vec<(PerturbKind, f64)> {
        self.entries.iter().flat_map(|(k, fs)| fs.iter().map(move |&f| (*k, f))).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub kind: PerturbKind,
    pub factor: f64,
    pub report: MetricsReport,
}

impl SweepRow {
    pub fn auc(&self) -> Option<f64> {
        self.report.auc()
    }
}

/// Perturb every sample (seeded per sample id) and evaluate the model.
pub fn sweep_point(
    model: &Model<f32>,
    samples: &[DocumentSample],
    kind: PerturbKind,
    factor: f64,
    seed_value: u64,
    opts: EvalOptions,
) -> Result<SweepRow> {
    let perturbed = samples
        .iter()
        .map(|s| perturb(s, Perturbation { kind, factor, seed: seed::derive(seed_value, s.id) }))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepRow { kind, factor, report: evaluate(model, &perturbed, opts)? })
}

/// One row per grid point, in grid order.
pub fn robustness_sweep(
    model: &Model<f32>,
    samples: &[DocumentSample],
    grid: &SweepGrid,
    seed_value: u64,
    opts: EvalOptions,
) -> Result<Vec<SweepRow>> {
    let points = grid.points();
    if samples.is_empty() || points.is_empty() {
        return Err(Error::Empty("sweep samples or grid"));
    }
    points.into_iter().map(|(k, f)| sweep_point(model, samples, k, f, seed_value, opts)).collect()
}
