//! Length metrics (EM, LC, LD, CR), ROUGE, and grouped reports.
//!
//! - EM: share of summaries whose length equals the target.
//! - LC: share within `T · target` of the target, boundary included.
//! - LD: mean absolute deviation from the target.
//! - CR: mean of `target / observed`.

mod rouge;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::LengthMeasure;
use crate::numeric::compensated_sum;

pub use rouge::{rouge, RougeScores};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no records to aggregate")]
    Empty,
    #[error("record {0} has an observed length of zero")]
    ZeroObserved(usize),
    #[error("text has no words")]
    EmptyText,
    #[error("tolerance must be non-negative")]
    NegativeTolerance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub doc_id: String,
    pub strategy: String,
    pub measure: LengthMeasure,
    pub target: usize,
    pub observed: usize,
    pub candidate_text: String,
    pub reference_text: Option<String>,
}

fn mean_of(records: &[EvalRecord], f: impl Fn(&EvalRecord) -> f64) -> Result<f64, MetricError> {
    if records.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(compensated_sum(records.iter().map(f)) / records.len() as f64)
}

pub fn exact_match(records: &[EvalRecord]) -> Result<f64, MetricError> {
    mean_of(records, |r| f64::from(u8::from(r.observed == r.target)))
}

pub fn length_compliance(records: &[EvalRecord], tolerance: f64) -> Result<f64, MetricError> {
    if tolerance < 0.0 {
        return Err(MetricError::NegativeTolerance);
    }
    mean_of(records, |r| {
        f64::from(u8::from(r.observed.abs_diff(r.target) as f64 <= tolerance * r.target as f64))
    })
}

pub fn length_deviation(records: &[EvalRecord]) -> Result<f64, MetricError> {
    mean_of(records, |r| r.observed.abs_diff(r.target) as f64)
}

pub fn compression_rate(records: &[EvalRecord]) -> Result<f64, MetricError> {
    if let Some(i) = records.iter().position(|r| r.observed == 0) {
        return Err(MetricError::ZeroObserved(i));
    }
    mean_of(records, |r| r.target as f64 / r.observed as f64)
}

/// One aggregated row per (strategy, measure, target).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub strategy: String,
    pub measure: LengthMeasure,
    pub target: usize,
    pub n: usize,
    pub em: f64,
    pub lc: f64,
    pub ld: f64,
    /// Absent when some summary in the group is empty.
    pub cr: Option<f64>,
    pub rouge1: Option<f64>,
    pub rouge2: Option<f64>,
    #[serde(rename = "rougeL")]
    pub rouge_l: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub tolerance: f64,
    pub rouge_stemming: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { tolerance: crate::prompting::DEFAULT_TOLERANCE, rouge_stemming: false }
    }
}

pub const CSV_HEADER: &str = "strategy,measure,target,n,em,lc,ld,cr,rouge1,rouge2,rougeL";

/// Group records and compute every metric; rows are ordered by strategy
/// name, measure and target. ROUGE averages over records with a
/// reference and a non-empty candidate.
pub fn aggregate(records: &[EvalRecord], opts: &ReportOptions) -> Result<Vec<MetricReport>, MetricError> {
    let mut groups: BTreeMap<(&str, usize, usize), Vec<EvalRecord>> = BTreeMap::new();
    for r in records {
        let m = LengthMeasure::ALL.iter().position(|&m| m == r.measure).unwrap_or(usize::MAX);
        groups.entry((&r.strategy, m, r.target)).or_default().push(r.clone());
    }
    groups
        .into_values()
        .map(|g| {
            let scores: Vec<RougeScores> = g
                .iter()
                .filter_map(|r| rouge(&r.candidate_text, r.reference_text.as_deref()?, opts.rouge_stemming).ok())
                .collect();
            let avg = |f: fn(&RougeScores) -> f64| {
                (!scores.is_empty()).then(|| compensated_sum(scores.iter().map(f)) / scores.len() as f64)
            };
            Ok(MetricReport {
                strategy: g[0].strategy.clone(),
                measure: g[0].measure,
                target: g[0].target,
                n: g.len(),
                em: exact_match(&g)?,
                lc: length_compliance(&g, opts.tolerance)?,
                ld: length_deviation(&g)?,
                cr: compression_rate(&g).ok(),
                rouge1: avg(|s| s.rouge1),
                rouge2: avg(|s| s.rouge2),
                rouge_l: avg(|s| s.rouge_l),
            })
        })
        .collect()
}

fn fmt_num(x: f64) -> String {
    format!("{x:.6}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn to_csv(rows: &[MetricReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let fields = [
            csv_field(&r.strategy),
            r.measure.as_str().to_string(),
            r.target.to_string(),
            r.n.to_string(),
            fmt_num(r.em),
            fmt_num(r.lc),
            fmt_num(r.ld),
            fmt_opt(r.cr),
            fmt_opt(r.rouge1),
            fmt_opt(r.rouge2),
            fmt_opt(r.rouge_l),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}
