//! Batch evaluation: dataset ingestion, context-budget truncation and
//! resumable sweeps over measure × target × strategy.

mod config;
mod sweep;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendError;
use crate::calibration::CalibrationError;
use crate::measures::{TokenizerError, TokenizerHandle};
use crate::metrics::MetricError;
use crate::prompting::PromptError;
use crate::strategy::StrategyError;

pub use config::{BackendConfig, Budget, RunConfig, StrategyEntry, SweepEntry};
pub use sweep::{cell_key, load_results, sweep, write_reports, CellOutcome, ResultRow, SweepSummary};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("context budget of {budget} tokens minus a reserve of {reserve} leaves no room after {overhead} prompt tokens")]
    BudgetTooSmall { budget: usize, reserve: usize, overhead: usize },
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "id")]
    pub doc_id: String,
    pub text: String,
    #[serde(default)]
    pub reference: Option<String>,
}

fn normalize(text: &str) -> String {
    text.replace("\r\n", "\n").trim().to_string()
}

/// Read a JSON-lines dataset of `{"id", "text", "reference"?}` objects.
/// Blank lines are ignored; with `skip_bad`, malformed lines are dropped
/// with a warning instead of aborting.
pub fn ingest(path: &Path, skip_bad: bool) -> Result<Vec<Document>, HarnessError> {
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    parse_dataset(&raw, skip_bad)
}

pub fn parse_dataset(raw: &str, skip_bad: bool) -> Result<Vec<Document>, HarnessError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Document>(line)
            .map_err(|e| e.to_string())
            .and_then(|mut d| {
                d.text = normalize(&d.text);
                d.reference = d.reference.map(|r| normalize(&r)).filter(|r| !r.is_empty());
                if d.text.is_empty() {
                    Err("document text is empty".to_string())
                } else {
                    Ok(d)
                }
            });
        match parsed {
            Ok(d) => {
                if !seen.insert(d.doc_id.clone()) {
                    return Err(HarnessError::DuplicateId(d.doc_id));
                }
                docs.push(d);
            }
            Err(message) if skip_bad => tracing::warn!(line = i + 1, "skipping malformed line: {message}"),
            Err(message) => return Err(HarnessError::Malformed { line: i + 1, message }),
        }
    }
    if docs.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    Ok(docs)
}

/// Trim `text` at a word boundary so that `overhead` plus its tokens fit
/// into `budget.context_budget - budget.reserve_tokens`. Texts that already
/// fit are returned unchanged.
pub fn truncate_to_budget(
    text: &str,
    overhead: usize,
    budget: &Budget,
    tokenizer: &TokenizerHandle,
) -> Result<String, HarnessError> {
    let too_small = || HarnessError::BudgetTooSmall {
        budget: budget.context_budget,
        reserve: budget.reserve_tokens,
        overhead,
    };
    let limit = budget
        .context_budget
        .checked_sub(budget.reserve_tokens)
        .and_then(|v| v.checked_sub(overhead))
        .filter(|&v| v > 0)
        .ok_or_else(too_small)?;
    if tokenizer.count(text) <= limit {
        return Ok(text.to_string());
    }
    let spans: Vec<(usize, usize)> = crate::measures::word_spans(text).collect();
    let piece = |k: usize| -> &str {
        if budget.head_trim {
            &text[spans[spans.len() - k].0..]
        } else {
            &text[..spans[k - 1].1]
        }
    };
    // Largest k whose k-word piece fits.
    let (mut lo, mut hi) = (0usize, spans.len());
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if tokenizer.count(piece(mid)) <= limit {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    if lo == 0 {
        return Err(too_small());
    }
    Ok(piece(lo).to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn budget(context_budget: usize, reserve_tokens: usize) -> Budget {
        Budget { context_budget, reserve_tokens, head_trim: false }
    }

    #[test]
    fn ingest_valid_lines() {
        let raw = "{\"id\":\"a\",\"text\":\"one\"}\n\n{\"id\":\"b\",\"text\":\" two\\r\\nlines \",\"reference\":\"r\"}\n{\"id\":\"c\",\"text\":\"three\"}\n";
        let docs = parse_dataset(raw, false).unwrap();
        assert_eq!(docs.len(), 3);
        assert_eq!(docs[1].text, "two\nlines");
        assert_eq!(docs[1].reference.as_deref(), Some("r"));
    }

    #[test]
    fn ingest_errors() {
        let dup = "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}";
        match parse_dataset(dup, false) {
            Err(HarnessError::DuplicateId(id)) => assert_eq!(id, "a"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_dataset("", false), Err(HarnessError::EmptyDataset)));
        assert_eq!(HarnessError::EmptyDataset.to_string(), "empty dataset");
        let bad = "{\"id\":\"a\",\"text\":\"x\"}\nnot json\n{\"id\":\"b\",\"text\":\"   \"}";
        assert!(matches!(parse_dataset(bad, false), Err(HarnessError::Malformed { line: 2, .. })));
        assert_eq!(parse_dataset(bad, true).unwrap().len(), 1);
    }

    #[test]
    fn truncation_keeps_fitting_documents() {
        let tok = TokenizerHandle::mock_ws();
        let text = "ten tokens of text, more or less here.";
        assert_eq!(truncate_to_budget(text, 100, &budget(8192, 1024), &tok).unwrap(), text);
    }

    #[test]
    fn truncation_respects_the_budget_identity() {
        let tok = TokenizerHandle::mock_ws();
        let text = vec!["word"; 8000].join(" ");
        assert_eq!(tok.count(&text), 8000);
        let out = truncate_to_budget(&text, 68, &budget(8192, 1024), &tok).unwrap();
        assert_eq!(tok.count(&out), 8192 - 1024 - 68);
        assert!(text.starts_with(&out) && out.ends_with("word"));

        let head = Budget { head_trim: true, ..budget(100, 10) };
        let text = format!("start {}", vec!["tail"; 200].join(" "));
        let out = truncate_to_budget(&text, 10, &head, &tok).unwrap();
        assert!(text.ends_with(&out) && out.starts_with("tail"));
        assert_eq!(tok.count(&out), 80);
    }

    #[test]
    fn truncation_fails_without_room() {
        let tok = TokenizerHandle::mock_ws();
        assert!(matches!(
            truncate_to_budget("text", 250, &budget(200, 0), &tok),
            Err(HarnessError::BudgetTooSmall { .. })
        ));
        assert!(truncate_to_budget("abcdefghijklmnop", 5, &budget(7, 0), &tok).is_err());
    }
}
