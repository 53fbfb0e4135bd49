//! Accuracy delta, the quality score and report-table assembly.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::quantization::Int8Mode;

/// Difference in percentage points.
pub fn accuracy_delta(accuracy: f64, baseline_accuracy: f64) -> f64 {
    accuracy - baseline_accuracy
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `(s + 8/p) / 2`, in `[0, 1)` for valid inputs.
pub fn compression_term(sparsity: f64, precision_bits: u32) -> f64 {
    (sparsity + 8.0 / precision_bits as f64) / 2.0
}

/// `Q = ((s + 8/p) / 2) * tanh(Δacc) * sigmoid(r)`.
///
/// `delta_acc` is in raw percentage points (e.g. `-0.37`), `sparsity` a
/// fraction and `reduction` the plain size ratio.
pub fn quality_metric(
    sparsity: f64,
    precision_bits: u32,
    reduction: f64,
    delta_acc: f64,
) -> Result<f64> {
    if !matches!(precision_bits, 8 | 16 | 32) {
        return Err(Error::InvalidConfig(format!(
            "precision {precision_bits} not in {{8, 16, 32}}"
        )));
    }
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::BadSparsity(sparsity));
    }
    if !(reduction > 0.0 && reduction.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "reduction factor {reduction} must be positive"
        )));
    }
    if !delta_acc.is_finite() {
        return Err(Error::InvalidConfig(format!("accuracy delta {delta_acc}")));
    }
    Ok(compression_term(sparsity, precision_bits) * delta_acc.tanh() * sigmoid(reduction))
}

/// One cell of a sparsity × precision sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressionRecord {
    pub sparsity: f64,
    pub precision_bits: u32,
    /// Set for 8-bit cells only.
    pub int8_mode: Option<Int8Mode>,
    pub size_bytes: u64,
    pub accuracy: f64,
    /// `None` marks the baseline row, together with the two below.
    pub reduction_factor: Option<f64>,
    pub accuracy_delta: Option<f64>,
    pub quality: Option<f64>,
}

impl CompressionRecord {
    pub fn baseline(size_bytes: u64, accuracy: f64) -> Self {
        Self {
            sparsity: 0.0,
            precision_bits: 32,
            int8_mode: None,
            size_bytes,
            accuracy,
            reduction_factor: None,
            accuracy_delta: None,
            quality: None,
        }
    }

    /// Derives reduction factor, accuracy delta and quality against a baseline.
    pub fn compressed(
        sparsity: f64,
        precision_bits: u32,
        int8_mode: Option<Int8Mode>,
        size_bytes: u64,
        accuracy: f64,
        baseline: &CompressionRecord,
    ) -> Result<Self> {
        let r = crate::sizing::reduction_factor(baseline.size_bytes, size_bytes)?;
        let delta = accuracy_delta(accuracy, baseline.accuracy);
        let q = quality_metric(sparsity, precision_bits, r, delta)?;
        Ok(Self {
            sparsity,
            precision_bits,
            int8_mode,
            size_bytes,
            accuracy,
            reduction_factor: Some(r),
            accuracy_delta: Some(delta),
            quality: Some(q),
        })
    }

    pub fn is_baseline(&self) -> bool {
        self.quality.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowFlag {
    Best,
    Worst,
}

impl RowFlag {
    pub fn label(self) -> &'static str {
        match self {
            RowFlag::Best => "best",
            RowFlag::Worst => "worst",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub record: CompressionRecord,
    pub flag: Option<RowFlag>,
}

/// Orders rows by (sparsity asc, precision desc) and flags the max-Q and
/// min-Q rows (first in order on ties; a lone scored row is `Best`).
pub fn build_report_table(records: &[CompressionRecord]) -> Result<Vec<ReportRow>> {
    let baselines = records.iter().filter(|r| r.is_baseline()).count();
    if baselines != 1 {
        return Err(Error::Report(format!(
            "expected exactly one baseline record, found {baselines}"
        )));
    }
    let mut rows: Vec<ReportRow> = records
        .iter()
        .cloned()
        .map(|record| ReportRow { record, flag: None })
        .collect();
    rows.sort_by(|a, b| {
        a.record
            .sparsity
            .total_cmp(&b.record.sparsity)
            .then(b.record.precision_bits.cmp(&a.record.precision_bits))
    });
    let scored = || {
        rows.iter()
            .enumerate()
            .filter_map(|(i, r)| r.record.quality.map(|q| (i, q)))
    };
    let pick = |better: fn(f64, f64) -> bool| {
        scored().fold(None, |acc: Option<(usize, f64)>, (i, q)| match acc {
            Some((_, best)) if !better(q, best) => acc,
            _ => Some((i, q)),
        })
    };
    let best = pick(|q, b| q.total_cmp(&b) == Ordering::Greater);
    let worst = pick(|q, b| q.total_cmp(&b) == Ordering::Less);
    if let Some((i, _)) = worst {
        rows[i].flag = Some(RowFlag::Worst);
    }
    if let Some((i, _)) = best {
        rows[i].flag = Some(RowFlag::Best);
    }
    Ok(rows)
}

/// Sparsity as a short decimal (`0`, `0.5`, `0.99`).
pub fn fmt_sparsity(s: f64) -> String {
    let text = format!("{s:.4}");
    let text = text.trim_end_matches('0').trim_end_matches('.');
    if text.is_empty() {
        "0".into()
    } else {
        text.to_string()
    }
}

pub fn fmt_opt(v: Option<f64>, decimals: usize) -> String {
    match v {
        Some(v) => format!("{v:.decimals$}"),
        None => "-".into(),
    }
}
