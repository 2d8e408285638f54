//! Resumable sweeps.
//!
//! Output layout under `output_dir`:
//!
//! - `cells/<key>.json`: full trace of one (document, measure, target, strategy) cell
//! - `manifest.jsonl`: one line per finished cell; `done` cells are skipped on rerun
//! - `results.jsonl`: one row per successful cell, in canonical order
//! - `report.json`, `report.csv`: metrics grouped by strategy, measure and target

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{info, warn};

use super::{io_err, truncate_to_budget, Budget, Document, HarnessError, RunConfig, StrategyEntry};
use crate::backend::{Backend, BackendError};
use crate::calibration::CalibrationProfile;
use crate::measures::{LengthMeasure, TokenizerHandle};
use crate::metrics::{aggregate, to_csv, EvalRecord, MetricReport, ReportOptions};
use crate::prompting::{PromptRenderer, TargetSpec};
use crate::strategy::{PartialRun, RunResult, Runner, StrategyError};

const MAX_RETRUNCATIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub key: String,
    pub doc_id: String,
    pub strategy: String,
    pub measure: LengthMeasure,
    pub target: usize,
    pub seed: u64,
    pub status: CellStatus,
    /// Document tokens dropped by truncation.
    pub truncated: bool,
    pub record: Option<EvalRecord>,
    pub result: Option<RunResult>,
    pub partial: Option<PartialRun>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    #[serde(flatten)]
    pub record: EvalRecord,
    pub compliant: bool,
    pub working_measure: LengthMeasure,
    pub working_target: usize,
    pub backend_calls: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub cells: usize,
    pub executed: usize,
    pub resumed: usize,
    pub failed: Vec<String>,
    pub output_dir: PathBuf,
}

#[derive(Deserialize, Serialize)]
struct ManifestLine {
    key: String,
    status: CellStatus,
}

/// Stable identifier of a cell.
pub fn cell_key(doc_id: &str, measure: LengthMeasure, target: usize, strategy: &str, seed: u64) -> String {
    let mut h = Sha256::new();
    for part in [doc_id, measure.as_str(), &target.to_string(), strategy, &seed.to_string()] {
        h.update(part.as_bytes());
        h.update([0]);
    }
    h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), HarnessError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_manifest(path: &Path) -> Result<HashMap<String, CellStatus>, HarnessError> {
    let mut out = HashMap::new();
    let Ok(raw) = fs::read_to_string(path) else {
        return Ok(out);
    };
    for line in raw.lines().filter(|l| !l.trim().is_empty()) {
        // A torn final line from an interrupted run is ignored.
        if let Ok(m) = serde_json::from_str::<ManifestLine>(line) {
            out.insert(m.key, m.status);
        }
    }
    Ok(out)
}

struct Context<'a> {
    backend: &'a dyn Backend,
    renderer: PromptRenderer,
    profile: CalibrationProfile,
    tokenizer: TokenizerHandle,
    config: &'a RunConfig,
    cells_dir: PathBuf,
    manifest: Mutex<fs::File>,
    manifest_path: PathBuf,
    done: HashMap<String, CellStatus>,
}

impl Context<'_> {
    fn prompt_overhead(&self, doc: &str, spec: &TargetSpec) -> Result<usize, HarnessError> {
        let plan = self.renderer.render_initial(doc, spec, true)?;
        let total: usize = plan.messages.iter().map(|m| self.tokenizer.count(&m.content)).sum();
        Ok(total.saturating_sub(self.tokenizer.count(doc)))
    }

    fn run_cell(&self, doc: &Document, spec: &TargetSpec, entry: &StrategyEntry, key: String) -> Result<CellOutcome, HarnessError> {
        let label = entry.label();
        let mut outcome = CellOutcome {
            key,
            doc_id: doc.doc_id.clone(),
            strategy: label.clone(),
            measure: spec.measure,
            target: spec.target,
            seed: self.config.backend.seed(),
            status: CellStatus::Failed,
            truncated: false,
            record: None,
            result: None,
            partial: None,
            error: None,
        };
        let runner = Runner {
            backend: self.backend,
            renderer: &self.renderer,
            profile: &self.profile,
            tokenizer: &self.tokenizer,
            params: self.config.params.clone(),
        };
        let plan = entry.plan();
        let overhead = self.prompt_overhead(&doc.text, spec)?;
        let mut budget: Budget = self.config.budget();
        for attempt in 0..=MAX_RETRUNCATIONS {
            let text = truncate_to_budget(&doc.text, overhead, &budget, &self.tokenizer)?;
            outcome.truncated = text.len() < doc.text.len();
            match runner.run(&text, spec, &plan) {
                Ok(result) => {
                    outcome.record = Some(EvalRecord {
                        doc_id: doc.doc_id.clone(),
                        strategy: label,
                        measure: spec.measure,
                        target: spec.target,
                        observed: result.final_candidate.lengths.get(spec.measure),
                        candidate_text: result.final_candidate.text.clone(),
                        reference_text: doc.reference.clone(),
                    });
                    outcome.result = Some(result);
                    outcome.status = CellStatus::Done;
                    break;
                }
                Err(StrategyError::Backend { source: BackendError::ContextOverflow(msg), partial }) if attempt < MAX_RETRUNCATIONS => {
                    let available = (budget.context_budget - budget.reserve_tokens).saturating_sub(overhead);
                    warn!(doc = %doc.doc_id, "context overflow, shrinking document budget: {msg}");
                    budget.context_budget -= (available / 10).max(1);
                    outcome.partial = Some(*partial);
                }
                Err(StrategyError::Backend { source, partial }) => {
                    outcome.error = Some(source.to_string());
                    outcome.partial = Some(*partial);
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(outcome)
    }

    fn cell(&self, doc: &Document, spec: &TargetSpec, entry: &StrategyEntry) -> Result<(CellOutcome, bool), HarnessError> {
        let key = cell_key(&doc.doc_id, spec.measure, spec.target, &entry.label(), self.config.backend.seed());
        let path = self.cells_dir.join(format!("{key}.json"));
        if self.done.get(&key) == Some(&CellStatus::Done) {
            if let Ok(raw) = fs::read_to_string(&path) {
                if let Ok(outcome) = serde_json::from_str::<CellOutcome>(&raw) {
                    return Ok((outcome, false));
                }
            }
        }
        let outcome = self.run_cell(doc, spec, entry, key)?;
        write_atomic(&path, &(serde_json::to_string_pretty(&outcome)? + "\n"))?;
        let line = serde_json::to_string(&ManifestLine { key: outcome.key.clone(), status: outcome.status.clone() })?;
        let mut f = self.manifest.lock().unwrap_or_else(|e| e.into_inner());
        writeln!(f, "{line}").and_then(|_| f.flush()).map_err(io_err(&self.manifest_path))?;
        Ok((outcome, true))
    }

    fn document(&self, doc: &Document) -> Result<Vec<(CellOutcome, bool)>, HarnessError> {
        let mut out = Vec::new();
        for entry in &self.config.sweep {
            for &target in &entry.targets {
                let spec = TargetSpec::with_tolerance(entry.measure, target, self.config.tolerance)?;
                for strategy in &self.config.strategies {
                    out.push(self.cell(doc, &spec, strategy)?);
                }
            }
        }
        Ok(out)
    }
}

/// Run every cell of the configured sweep, skipping cells a previous run
/// finished, and write the result rows and reports.
pub fn sweep(config: &RunConfig) -> Result<SweepSummary, HarnessError> {
    config.validate()?;
    let docs = super::ingest(&config.dataset, config.skip_bad)?;
    let tokenizer = TokenizerHandle::load(&config.tokenizer)?;
    let backend = config.backend.build(&tokenizer, config.trace)?;
    let out_dir = &config.output_dir;
    let cells_dir = out_dir.join("cells");
    fs::create_dir_all(&cells_dir).map_err(io_err(&cells_dir))?;
    let manifest_path = out_dir.join("manifest.jsonl");
    let done = read_manifest(&manifest_path)?;
    let manifest = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&manifest_path)
        .map_err(io_err(&manifest_path))?;

    let ctx = Context {
        backend: backend.as_ref(),
        renderer: config.renderer()?,
        profile: config.load_profile()?,
        tokenizer,
        config,
        cells_dir,
        manifest: Mutex::new(manifest),
        manifest_path,
        done,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let per_doc: Vec<Vec<(CellOutcome, bool)>> =
        pool.install(|| docs.par_iter().map(|d| ctx.document(d)).collect::<Result<_, _>>())?;

    let mut summary = SweepSummary { output_dir: out_dir.clone(), ..SweepSummary::default() };
    let mut rows = Vec::new();
    for (outcome, executed) in per_doc.into_iter().flatten() {
        summary.cells += 1;
        if executed {
            summary.executed += 1;
        } else {
            summary.resumed += 1;
        }
        match (&outcome.record, &outcome.result) {
            (Some(record), Some(result)) => rows.push(ResultRow {
                record: record.clone(),
                compliant: result.compliant,
                working_measure: result.working_measure,
                working_target: result.working_target,
                backend_calls: result.backend_calls,
            }),
            _ => summary.failed.push(outcome.key.clone()),
        }
    }

    let mut results = String::new();
    for row in &rows {
        results.push_str(&serde_json::to_string(row)?);
        results.push('\n');
    }
    write_atomic(&out_dir.join("results.jsonl"), &results)?;
    let records: Vec<EvalRecord> = rows.into_iter().map(|r| r.record).collect();
    let opts = ReportOptions { tolerance: config.tolerance, rouge_stemming: config.rouge_stemming };
    if !records.is_empty() {
        write_reports(out_dir, &records, &opts)?;
    }
    info!(cells = summary.cells, executed = summary.executed, resumed = summary.resumed, failed = summary.failed.len(), "sweep finished");
    Ok(summary)
}

/// Read the rows of a `results.jsonl` file, or of `<dir>/results.jsonl`.
pub fn load_results(path: &Path) -> Result<Vec<EvalRecord>, HarnessError> {
    let file = if path.is_dir() { path.join("results.jsonl") } else { path.to_path_buf() };
    let raw = fs::read_to_string(&file).map_err(io_err(&file))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<ResultRow>(l)
                .map(|r| r.record)
                .map_err(|e| HarnessError::Malformed { line: i + 1, message: e.to_string() })
        })
        .collect()
}

/// Write `report.json` and `report.csv`; returns the rows.
pub fn write_reports(dir: &Path, records: &[EvalRecord], opts: &ReportOptions) -> Result<Vec<MetricReport>, HarnessError> {
    let rows = aggregate(records, opts)?;
    write_atomic(&dir.join("report.json"), &(serde_json::to_string_pretty(&rows)? + "\n"))?;
    write_atomic(&dir.join("report.csv"), &to_csv(&rows))?;
    Ok(rows)
}
