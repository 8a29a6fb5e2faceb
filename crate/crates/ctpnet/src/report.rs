//! Line-delimited report files and plain-text tables.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ctpnet_core::metrics::{Aggregate, MetricsReport, SampleScores};
use ctpnet_core::robustness::SweepRow;
use ctpnet_core::train::TrainHistory;
use serde::Serialize;

use crate::error::{AppError, Result};

pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(AppError::io(path))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(&r).expect("report records always serialize");
        writeln!(out, "{line}").map_err(AppError::io(path))?;
    }
    out.flush().map_err(AppError::io(path))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ReportRecord {
    Sample {
        id: u64,
        category: u8,
        f1: f64,
        iou: f64,
        mcc: f64,
        auc: Option<f64>,
        tp: u64,
        fp: u64,
        tn: u64,
        #[serde(rename = "fn")]
        fn_: u64,
    },
    Category {
        category: u8,
        n_samples: usize,
        f1: f64,
        iou: f64,
        mcc: f64,
        auc: Option<f64>,
    },
    Overall {
        n_samples: usize,
        f1: f64,
        iou: f64,
        mcc: f64,
        auc: Option<f64>,
        pooled_auc: Option<f64>,
    },
}

fn sample_record(s: &SampleScores) -> ReportRecord {
    ReportRecord::Sample {
        id: s.id,
        category: s.category,
        f1: s.scores.f1,
        iou: s.scores.iou,
        mcc: s.scores.mcc,
        auc: s.auc,
        tp: s.counts.tp,
        fp: s.counts.fp,
        tn: s.counts.tn,
        fn_: s.counts.fn_,
    }
}

/// Per-sample lines, then one line per category, then the overall line.
pub fn report_records(report: &MetricsReport) -> Vec<ReportRecord> {
    let mut out: Vec<ReportRecord> = report.samples.iter().map(sample_record).collect();
    for (k, a) in report.per_category.iter().enumerate() {
        out.push(ReportRecord::Category {
            category: k as u8 + 1,
            n_samples: a.n_samples,
            f1: a.f1,
            iou: a.iou,
            mcc: a.mcc,
            auc: a.auc,
        });
    }
    let o = &report.overall;
    out.push(ReportRecord::Overall {
        n_samples: o.n_samples,
        f1: o.f1,
        iou: o.iou,
        mcc: o.mcc,
        auc: o.auc,
        pooled_auc: report.pooled_auc,
    });
    out
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn table_row(out: &mut String, label: &str, a: &Aggregate) {
    let _ = writeln!(
        out,
        "{label:<10} {:>5} {:>8.4} {:>8.4} {:>8.4} {:>8}",
        a.n_samples,
        a.f1,
        a.iou,
        a.mcc,
        fmt_opt(a.auc)
    );
}

pub fn format_table(report: &MetricsReport) -> String {
    let mut out = format!("{:<10} {:>5} {:>8} {:>8} {:>8} {:>8}\n", "subset", "n", "f1", "iou", "mcc", "auc");
    for (k, a) in report.per_category.iter().enumerate() {
        table_row(&mut out, &format!("cat{}", k + 1), a);
    }
    table_row(&mut out, "overall", &report.overall);
    if let Some(p) = report.pooled_auc {
        let _ = writeln!(out, "pooled auc {p:.4}");
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum HistoryRecord {
    Epoch { epoch: usize, loss: f64 },
    Validation { epoch: usize, f1: f64, iou: f64, mcc: f64, auc: Option<f64> },
}

/// Epoch lines with validation lines interleaved after their epoch.
pub fn history_records(history: &TrainHistory) -> Vec<HistoryRecord> {
    let mut out = Vec::new();
    let mut vals = history.validations.iter().peekable();
    for (i, &loss) in history.epoch_loss.iter().enumerate() {
        let epoch = i + 1;
        out.push(HistoryRecord::Epoch { epoch, loss });
        while let Some(v) = vals.next_if(|v| v.epoch == epoch) {
            let o = &v.report.overall;
            out.push(HistoryRecord::Validation { epoch, f1: o.f1, iou: o.iou, mcc: o.mcc, auc: v.report.auc() });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRecord {
    pub kind: &'static str,
    pub factor: f64,
    pub auc: Option<f64>,
    pub f1: f64,
    pub iou: f64,
    pub mcc: f64,
    pub n_samples: usize,
}

impl From<&SweepRow> for SweepRecord {
    fn from(row: &SweepRow) -> Self {
        let o = &row.report.overall;
        Self {
            kind: row.kind.name(),
            factor: row.factor,
            auc: row.auc(),
            f1: o.f1,
            iou: o.iou,
            mcc: o.mcc,
            n_samples: o.n_samples,
        }
    }
}

pub fn format_sweep_table(rows: &[SweepRow]) -> String {
    let mut out = format!("{:<12} {:>7} {:>8} {:>8} {:>8} {:>8}\n", "kind", "factor", "auc", "f1", "iou", "mcc");
    for r in rows.iter().map(SweepRecord::from) {
        let _ = writeln!(
            out,
            "{:<12} {:>7} {:>8} {:>8.4} {:>8.4} {:>8.4}",
            r.kind,
            r.factor,
            fmt_opt(r.auc),
            r.f1,
            r.iou,
            r.mcc
        );
    }
    out
}
