//! Pixel-level localization scores.
//!
//! Forged pixels are the positive class throughout. Scores whose
//! denominator vanishes are reported as 0.

use alloc::vec::Vec;

#[cfg(not(any(feature = "std", test)))]
use num_traits::Float;

use crate::error::{shape_err, Error, Result};
use crate::model::Model;
use crate::synth::DocumentSample;
use crate::train::prepare_batch;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_binary(values: &[u8]) -> Result<()> {
    if values.iter().any(|&v| v > 1) {
        Err(Error::NonBinary)
    } else {
        Ok(())
    }
}

pub fn confusion_counts(pred: &[u8], gt: &[u8]) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(shape_err("confusion_counts", alloc::format!("{} predicted vs {} truth pixels", pred.len(), gt.len())));
    }
    check_binary(pred)?;
    check_binary(gt)?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// F1, IoU and MCC of one confusion table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub f1: f64,
    pub iou: f64,
    pub mcc: f64,
}

fn ratio_or_zero(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn f1_iou_mcc(c: ConfusionCounts) -> Scores {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let f1 = ratio_or_zero(2.0 * tp, 2.0 * tp + fp + fn_);
    let iou = ratio_or_zero(tp, tp + fp + fn_);
    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = ratio_or_zero(tp * tn - fp * fn_, den);
    Scores { f1, iou, mcc }
}

/// ROC AUC as the Mann-Whitney statistic: the share of (forged, authentic)
/// pixel pairs ranked correctly, ties counting one half.
///
/// Fails with [`Error::SingleClass`] when `gt` holds only one class.
pub fn auc(prob: &[f64], gt: &[u8]) -> Result<f64> {
    if prob.len() != gt.len() {
        return Err(shape_err("auc", alloc::format!("{} scores vs {} truth pixels", prob.len(), gt.len())));
    }
    check_binary(gt)?;
    if prob.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite { op: "auc" });
    }
    let positives = gt.iter().filter(|&&g| g == 1).count();
    let negatives = gt.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }

    let mut order: Vec<usize> = (0..prob.len()).collect();
    order.sort_unstable_by(|&a, &b| prob[a].total_cmp(&prob[b]));

    // Sum of 1-based average ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && prob[order[j]] == prob[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let tied_pos = order[i..j].iter().filter(|&&k| gt[k] == 1).count();
        rank_sum += avg_rank * tied_pos as f64;
        i = j;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// Forged pixel count over authentic pixel count.
pub fn ratio_fake(mask: &[u8]) -> Result<f64> {
    check_binary(mask)?;
    let fake = mask.iter().filter(|&&v| v == 1).count();
    let authentic = mask.len() - fake;
    if authentic == 0 {
        return Err(Error::AllFake);
    }
    Ok(fake as f64 / authentic as f64)
}

/// Fake-area category 1..=4; upper bin edges are inclusive.
pub fn categorize(ratio: f64) -> u8 {
    if ratio <= 0.10 {
        1
    } else if ratio <= 0.20 {
        2
    } else if ratio <= 0.50 {
        3
    } else {
        4
    }
}

/// Scores of one evaluated sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleScores {
    pub id: u64,
    pub category: u8,
    pub counts: ConfusionCounts,
    pub scores: Scores,
    /// `None` when the ground truth has a single class.
    pub auc: Option<f64>,
}

/// Macro averages over a group of samples.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Aggregate {
    pub n_samples: usize,
    pub f1: f64,
    pub iou: f64,
    pub mcc: f64,
    /// Mean over the samples whose AUC is defined.
    pub auc: Option<f64>,
    pub auc_samples: usize,
}

impl Aggregate {
    pub fn of<'a>(samples: impl IntoIterator<Item = &'a SampleScores>) -> Self {
        let mut a = Aggregate::default();
        let mut auc_sum = 0.0;
        for s in samples {
            a.n_samples += 1;
            a.f1 += s.scores.f1;
            a.iou += s.scores.iou;
            a.mcc += s.scores.mcc;
            if let Some(v) = s.auc {
                auc_sum += v;
                a.auc_samples += 1;
            }
        }
        if a.n_samples > 0 {
            let n = a.n_samples as f64;
            a.f1 /= n;
            a.iou /= n;
            a.mcc /= n;
        }
        if a.auc_samples > 0 {
            a.auc = Some(auc_sum / a.auc_samples as f64);
        }
        a
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub overall: Aggregate,
    /// Index `k` holds category `k + 1`.
    pub per_category: [Aggregate; 4],
    /// AUC over all pixels of all samples at once, when requested.
    pub pooled_auc: Option<f64>,
    pub samples: Vec<SampleScores>,
}

impl MetricsReport {
    pub fn from_samples(samples: Vec<SampleScores>, pooled_auc: Option<f64>) -> Self {
        let overall = Aggregate::of(&samples);
        let per_category =
            core::array::from_fn(|k| Aggregate::of(samples.iter().filter(|s| s.category as usize == k + 1)));
        Self { overall, per_category, pooled_auc, samples }
    }

    /// Headline AUC: pooled when computed, otherwise the per-image mean.
    pub fn auc(&self) -> Option<f64> {
        self.pooled_auc.or(self.overall.auc)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    pub pooled_auc: bool,
    /// Samples per forward pass.
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { pooled_auc: false, batch_size: 8 }
    }
}

/// Predict every sample at the model input size and score it against the
/// nearest-resized ground truth.
pub fn evaluate(model: &Model<f32>, samples: &[DocumentSample], opts: EvalOptions) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let size = model.config().input_size;
    let hw = size.0 * size.1;
    let mut scored = Vec::with_capacity(samples.len());
    let mut pooled_prob = Vec::new();
    let mut pooled_gt = Vec::new();
    for chunk in samples.chunks(opts.batch_size.max(1)) {
        let (images, masks) = prepare_batch(chunk, size)?;
        let pred = model.predict_mask(&images)?;
        for (i, sample) in chunk.iter().enumerate() {
            let gt = &masks[i * hw..(i + 1) * hw];
            let prob: Vec<f64> = pred.prob.data()[i * hw..(i + 1) * hw].iter().map(|&p| p as f64).collect();
            let counts = confusion_counts(&pred.mask[i * hw..(i + 1) * hw], gt)?;
            let auc = match auc(&prob, gt) {
                Ok(v) => Some(v),
                Err(Error::SingleClass) => None,
                Err(e) => return Err(e),
            };
            if opts.pooled_auc {
                pooled_prob.extend_from_slice(&prob);
                pooled_gt.extend_from_slice(gt);
            }
            scored.push(SampleScores {
                id: sample.id,
                category: sample.category,
                counts,
                scores: f1_iou_mcc(counts),
                auc,
            });
        }
    }
    let pooled = if opts.pooled_auc {
        match auc(&pooled_prob, &pooled_gt) {
            Ok(v) => Some(v),
            Err(Error::SingleClass) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(MetricsReport::from_samples(scored, pooled))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_enumeration() {
        let c = confusion_counts(&[1, 0, 0, 0], &[1, 1, 0, 0]).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 0, tn: 2, fn_: 1 });
    }

    #[test]
    fn degenerate_scores_are_zero() {
        let c = confusion_counts(&[0, 0, 0, 0], &[1, 1, 0, 0]).unwrap();
        assert_eq!(f1_iou_mcc(c), Scores { f1: 0.0, iou: 0.0, mcc: 0.0 });
    }

    #[test]
    fn auc_edge_cases() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 4], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert_eq!(auc(&[0.3; 2], &[1, 1]).unwrap_err(), Error::SingleClass);
    }

    #[test]
    fn ratio_and_bins() {
        let mut m = [0u8; 100];
        m[..25].fill(1);
        assert!((ratio_fake(&m).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(ratio_fake(&[1, 1]).unwrap_err(), Error::AllFake);
        assert_eq!([0.0, 0.05, 0.10, 0.15, 0.2, 0.5, 0.6].map(categorize), [1, 1, 1, 2, 2, 3, 4]);
    }
}
