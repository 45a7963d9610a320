//! Frame-based detection scores.
//!
//! Per frame `k`, with `TP_k`, `FP_k`, `FN_k` counted over classes:
//! substitutions `S_k = min(FN_k, FP_k)`, deletions `D_k = max(0, FN_k - FP_k)`,
//! insertions `I_k = max(0, FP_k - FN_k)`. Totals are summed over all frames
//! (micro aggregation); `F1 = 2TP / (2TP + FP + FN)` and
//! `ER = (S + D + I) / N` with `N` the number of active reference cells.

use std::fmt::Write;

use super::roll::EventRoll;
use crate::error::{Result, SedError};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricsReport {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub substitutions: u64,
    pub deletions: u64,
    pub insertions: u64,
    pub n_ref: u64,
}

impl MetricsReport {
    /// Zero when there is nothing to score (`2TP + FP + FN == 0`).
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    /// Undefined (`None`) when the reference has no active cells.
    pub fn error_rate(&self) -> Option<f64> {
        (self.n_ref > 0).then(|| {
            (self.substitutions + self.deletions + self.insertions) as f64 / self.n_ref as f64
        })
    }

    pub fn precision(&self) -> f64 {
        let d = self.tp + self.fp;
        if d == 0 {
            0.0
        } else {
            self.tp as f64 / d as f64
        }
    }

    pub fn recall(&self) -> f64 {
        let d = self.tp + self.fn_;
        if d == 0 {
            0.0
        } else {
            self.tp as f64 / d as f64
        }
    }

    /// Sums the tallies of two reports (micro aggregation across recordings).
    pub fn merge(&self, other: &MetricsReport) -> MetricsReport {
        MetricsReport {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            substitutions: self.substitutions + other.substitutions,
            deletions: self.deletions + other.deletions,
            insertions: self.insertions + other.insertions,
            n_ref: self.n_ref + other.n_ref,
        }
    }

    fn add_frame(&mut self, reference: &[bool], estimate: &[bool]) {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (&r, &e) in reference.iter().zip(estimate) {
            match (r, e) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        self.tp += tp;
        self.fp += fp;
        self.fn_ += fn_;
        self.substitutions += fn_.min(fp);
        self.deletions += fn_.saturating_sub(fp);
        self.insertions += fp.saturating_sub(fn_);
        self.n_ref += tp + fn_;
    }
}

fn check_shapes(reference: &EventRoll, estimate: &EventRoll) -> Result<()> {
    if reference.n_frames() != estimate.n_frames() || reference.n_classes() != estimate.n_classes() {
        return Err(SedError::Data(format!(
            "reference roll is {}x{} but estimate is {}x{}",
            reference.n_frames(),
            reference.n_classes(),
            estimate.n_frames(),
            estimate.n_classes()
        )));
    }
    Ok(())
}

pub fn frame_metrics(reference: &EventRoll, estimate: &EventRoll) -> Result<MetricsReport> {
    check_shapes(reference, estimate)?;
    let mut report = MetricsReport::default();
    for f in 0..reference.n_frames() {
        report.add_frame(reference.frame(f), estimate.frame(f));
    }
    Ok(report)
}

/// Frame metrics after OR-pooling both rolls over segments of
/// `segment_seconds` (rounded to whole frames, at least one).
pub fn segment_metrics(
    reference: &EventRoll,
    estimate: &EventRoll,
    segment_seconds: f64,
    frame_hop_seconds: f64,
) -> Result<MetricsReport> {
    check_shapes(reference, estimate)?;
    if !(segment_seconds > 0.0 && frame_hop_seconds > 0.0) {
        return Err(SedError::Config("segment and hop lengths must be positive".into()));
    }
    let frames = ((segment_seconds / frame_hop_seconds).round() as usize).max(1);
    frame_metrics(&reference.max_pool(frames), &estimate.max_pool(frames))
}

/// One report per class column (for macro-style summaries).
pub fn per_class_metrics(reference: &EventRoll, estimate: &EventRoll) -> Result<Vec<MetricsReport>> {
    check_shapes(reference, estimate)?;
    Ok((0..reference.n_classes())
        .map(|c| {
            let mut report = MetricsReport::default();
            for f in 0..reference.n_frames() {
                report.add_frame(&[reference.get(f, c)], &[estimate.get(f, c)]);
            }
            report
        })
        .collect())
}

pub const REPORT_HEADER: &str = "tp,fp,fn,substitutions,deletions,insertions,n_ref,f1_percent,er_percent";

/// Header plus one data row; an undefined error rate is written as `nan`.
pub fn report_csv(report: &MetricsReport) -> String {
    let mut out = String::new();
    writeln!(out, "{REPORT_HEADER}").unwrap();
    let er = report
        .error_rate()
        .map_or_else(|| "nan".to_string(), |e| format!("{:.1}", e * 100.0));
    writeln!(
        out,
        "{},{},{},{},{},{},{},{:.1},{}",
        report.tp,
        report.fp,
        report.fn_,
        report.substitutions,
        report.deletions,
        report.insertions,
        report.n_ref,
        report.f1() * 100.0,
        er
    )
    .unwrap();
    out
}
