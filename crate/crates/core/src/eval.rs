//! Accuracy bookkeeping, subset re-voting and the accuracy Z-test.
//!
//! Accuracy is measured over available predictions only; instances nobody
//! predicted are counted separately. Two accuracies pooled over `k` runs of
//! about `n` predictions each are compared with
//!
//! ```text
//! Var = p (1 - p) / (k n)
//! SE  = sqrt(Var_a + Var_b - 2 rho sqrt(Var_a Var_b))
//! z   = (p_a - p_b) / SE
//! ```
//!
//! and the null hypothesis `p_a <= p_b` is rejected when `z >= 1.645`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::ensemble::{majority_vote, RunRecord};
use crate::error::{Error, Result};

/// One-sided 95% critical value of the standard normal.
pub const Z_CRITICAL: f64 = 1.645;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub correct: u64,
    pub available: u64,
    pub unavailable: u64,
}

impl AccuracyReport {
    pub fn p_hat(&self) -> Option<f64> {
        (self.available > 0).then(|| self.correct as f64 / self.available as f64)
    }
}

/// Ensemble accuracy of `record`.
pub fn accuracy(record: &RunRecord) -> Result<AccuracyReport> {
    let mut report = AccuracyReport {
        correct: 0,
        available: 0,
        unavailable: 0,
    };
    for row in &record.rows {
        match row.ensemble {
            Some(label) => {
                report.available += 1;
                report.correct += (label == row.label) as u64;
            }
            None => report.unavailable += 1,
        }
    }
    if report.available == 0 {
        return Err(Error::NoAvailablePredictions);
    }
    Ok(report)
}

/// Accuracy pooled over `k` runs with `n` available predictions on average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyEstimate {
    pub p_hat: f64,
    pub n: f64,
    pub k: usize,
}

impl AccuracyEstimate {
    pub fn new(p_hat: f64, k: usize, n: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_hat) {
            return Err(Error::Config(format!("accuracy {p_hat} outside [0, 1]")));
        }
        if k == 0 || n.is_nan() || n < 1.0 {
            return Err(Error::Config(format!(
                "need k >= 1 and n >= 1, got k = {k}, n = {n}"
            )));
        }
        Ok(AccuracyEstimate { p_hat, n, k })
    }

    pub fn pooled(reports: &[AccuracyReport]) -> Result<Self> {
        let available: u64 = reports.iter().map(|r| r.available).sum();
        if available == 0 {
            return Err(Error::NoAvailablePredictions);
        }
        let correct: u64 = reports.iter().map(|r| r.correct).sum();
        Self::new(
            correct as f64 / available as f64,
            reports.len(),
            available as f64 / reports.len() as f64,
        )
    }

    pub fn variance(&self) -> f64 {
        variance_of_mean(self.p_hat, self.k, self.n)
    }
}

pub fn variance_of_mean(p_hat: f64, k: usize, n: f64) -> f64 {
    p_hat * (1.0 - p_hat) / (k as f64 * n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisTestResult {
    pub p_a: f64,
    pub p_b: f64,
    pub d: f64,
    pub var_a: f64,
    pub var_b: f64,
    pub rho: f64,
    pub se: f64,
    pub z: f64,
    /// One-sided p-value `P(Z >= z)`.
    pub p_value: f64,
    pub critical: f64,
    pub rejected: bool,
}

/// Tests `H0: p_a <= p_b` against `H1: p_a > p_b`.
pub fn z_test(
    a: &AccuracyEstimate,
    b: &AccuracyEstimate,
    rho: f64,
) -> Result<HypothesisTestResult> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!("correlation {rho} outside [-1, 1]")));
    }
    let (var_a, var_b) = (a.variance(), b.variance());
    let se = (var_a + var_b - 2.0 * rho * (var_a * var_b).sqrt())
        .max(0.0)
        .sqrt();
    if se == 0.0 {
        return Err(Error::DegenerateTest);
    }
    let d = a.p_hat - b.p_hat;
    let z = d / se;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(HypothesisTestResult {
        p_a: a.p_hat,
        p_b: b.p_hat,
        d,
        var_a,
        var_b,
        rho,
        se,
        z,
        p_value: normal.sf(z),
        critical: Z_CRITICAL,
        rejected: z >= Z_CRITICAL,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    /// Bit `i` selects the record's `i`-th pipeline column.
    pub mask: u64,
    pub size: usize,
    pub correct: u64,
    pub available: u64,
    pub unavailable: u64,
    pub accuracy: Option<f64>,
}

/// Re-votes every non-empty subset of pipelines from the recorded
/// per-pipeline predictions. `sizes` restricts the subset sizes; empty means
/// all. Results are ordered by mask.
pub fn subset_analysis(record: &RunRecord, sizes: &[usize]) -> Result<Vec<SubsetResult>> {
    let p = record.pipeline_ids.len();
    if p == 0 || p > 20 {
        return Err(Error::RecordMismatch(format!(
            "subset analysis supports 1 to 20 pipelines, record has {p}"
        )));
    }
    if let Some(row) = record.rows.iter().find(|r| r.predictions.len() != p) {
        return Err(Error::RecordMismatch(format!(
            "row {} has {} pipeline columns, expected {p}",
            row.timestamp,
            row.predictions.len()
        )));
    }
    let mut results = Vec::new();
    for mask in 1u64..(1 << p) {
        let size = mask.count_ones() as usize;
        if !sizes.is_empty() && !sizes.contains(&size) {
            continue;
        }
        let columns: Vec<usize> = (0..p).filter(|i| mask >> i & 1 == 1).collect();
        let (mut correct, mut available) = (0u64, 0u64);
        for row in &record.rows {
            if let Some(label) = majority_vote(&row.votes(&record.pipeline_ids, &columns)) {
                available += 1;
                correct += (label == row.label) as u64;
            }
        }
        results.push(SubsetResult {
            mask,
            size,
            correct,
            available,
            unavailable: record.rows.len() as u64 - available,
            accuracy: (available > 0).then(|| correct as f64 / available as f64),
        });
    }
    Ok(results)
}

/// Writes `size,mask,pipelines,accuracy,unavailable` rows; pipelines are the
/// selected ids joined by `+`.
pub fn write_subsets_csv<W: Write>(writer: W, ids: &[u32], results: &[SubsetResult]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["size", "mask", "pipelines", "accuracy", "unavailable"])?;
    for r in results {
        let members: Vec<String> = (0..ids.len())
            .filter(|i| r.mask >> i & 1 == 1)
            .map(|i| ids[i].to_string())
            .collect();
        out.write_record([
            r.size.to_string(),
            r.mask.to_string(),
            members.join("+"),
            r.accuracy
                .map_or_else(|| "NA".to_string(), |a| format!("{a:?}")),
            r.unavailable.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
