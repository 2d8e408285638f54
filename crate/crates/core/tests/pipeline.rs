//! End-to-end sweeps: resume, failure bookkeeping, truncation and reports.

use std::fs;
use std::path::Path;

use lenctl_core::harness::{cell_key, load_results, sweep, write_reports, CellOutcome, RunConfig};
use lenctl_core::measures::LengthMeasure;
use lenctl_core::metrics::{aggregate, to_csv, ReportOptions};
use serde_json::{json, Value};

fn write_dataset(dir: &Path) {
    let docs = [
        json!({"id": "harbour", "text": "A storm closed the harbour for two days. Ferries resumed on Friday after crews cleared debris from the piers.", "reference": "A storm closed the harbour; ferries resumed Friday."}),
        json!({"id": "library", "text": "The city library extended its opening hours. Volunteers will staff the reading rooms on weekends.", "reference": "The library now opens longer, with volunteers on weekends."}),
        json!({"id": "school", "text": "Pupils planted forty trees along the river. Teachers plan to measure their growth every month.", "reference": "Pupils planted trees by the river."}),
    ];
    let body: String = docs.iter().map(|d| d.to_string() + "\n").collect();
    fs::write(dir.join("docs.jsonl"), body).unwrap();
}

fn config(dir: &Path, backend: Value, extra: Value) -> RunConfig {
    write_dataset(dir);
    let mut v = json!({
        "dataset": "docs.jsonl",
        "output_dir": "out",
        "backend": backend,
        "sweep": [{"measure": "words", "targets": [20, 40]}, {"measure": "sentences", "targets": [2]}],
        "strategies": [{"name": "baseline"}, {"name": "sf", "n": 4}, {"name": "sr", "n": 2, "r": 2}],
    });
    v.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    let path = dir.join("run.json");
    fs::write(&path, v.to_string()).unwrap();
    RunConfig::load(&path).unwrap()
}

fn biased() -> Value {
    json!({"kind": "mock", "seed": 3, "profile": {"mode": "biased", "bias": [{"target": 1.0, "mean_ratio": 0.8, "sd_ratio": 0.15}], "revision_gain": 0.8, "revision_sigma": 0.05}})
}

#[test]
fn rerun_resumes_every_finished_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), biased(), json!({}));
    let first = sweep(&cfg).unwrap();
    assert_eq!((first.cells, first.executed, first.resumed), (27, 27, 0));
    assert!(first.failed.is_empty());
    let out = dir.path().join("out");
    let results = fs::read_to_string(out.join("results.jsonl")).unwrap();
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();

    // Drop two cells from disk: only they run again.
    let victims = [
        cell_key("library", LengthMeasure::Words, 40, "sf", 3),
        cell_key("school", LengthMeasure::Sentences, 2, "sr", 3),
    ];
    for k in &victims {
        fs::remove_file(out.join("cells").join(format!("{k}.json"))).unwrap();
    }
    let second = sweep(&cfg).unwrap();
    assert_eq!((second.executed, second.resumed), (2, 25));
    assert_eq!(fs::read_to_string(out.join("results.jsonl")).unwrap(), results);
    assert_eq!(fs::read_to_string(out.join("report.csv")).unwrap(), csv);

    let third = sweep(&cfg).unwrap();
    assert_eq!((third.executed, third.resumed), (0, 27));
}

#[test]
fn report_can_be_rebuilt_from_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), biased(), json!({"rouge_stemming": true}));
    sweep(&cfg).unwrap();
    let out = dir.path().join("out");
    let records = load_results(&out).unwrap();
    assert_eq!(records.len(), 27);
    let opts = ReportOptions { tolerance: 0.10, rouge_stemming: true };
    let rows = aggregate(&records, &opts).unwrap();
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| r.n == 3 && r.rouge1.is_some()));
    assert_eq!(to_csv(&rows), fs::read_to_string(out.join("report.csv")).unwrap());

    let copy = dir.path().join("copy");
    fs::create_dir(&copy).unwrap();
    write_reports(&copy, &records, &opts).unwrap();
    assert_eq!(fs::read(copy.join("report.json")).unwrap(), fs::read(out.join("report.json")).unwrap());
}

#[test]
fn unreachable_backend_marks_cells_failed_and_reruns_them() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = json!({"kind": "http", "url": format!("http://127.0.0.1:{port}/v1/chat/completions"), "model": "m", "max_attempts": 1, "timeout_secs": 2});
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), backend, json!({"workers": 1}));
    let first = sweep(&cfg).unwrap();
    assert_eq!(first.failed.len(), 27);
    let out = dir.path().join("out");
    assert_eq!(fs::read_to_string(out.join("results.jsonl")).unwrap(), "");
    assert!(!out.join("report.csv").exists());

    let any = fs::read_dir(out.join("cells")).unwrap().next().unwrap().unwrap().path();
    let cell: CellOutcome = serde_json::from_str(&fs::read_to_string(any).unwrap()).unwrap();
    assert!(cell.record.is_none() && cell.result.is_none());
    assert!(cell.error.is_some());
    assert_eq!(cell.partial.unwrap().backend_calls, 0);

    let second = sweep(&cfg).unwrap();
    assert_eq!((second.executed, second.resumed), (27, 0));
}

#[test]
fn long_documents_are_truncated_to_the_budget() {
    let dir = tempfile::tempdir().unwrap();
    let obedient = json!({"kind": "mock", "profile": {"mode": "obedient"}});
    let cfg = config(dir.path(), obedient, json!({"context_budget": 200, "reserve_tokens": 40}));
    let long = json!({"id": "long", "text": vec!["Rain fell all week."; 200].join(" ")});
    fs::write(&cfg.dataset, long.to_string() + "\n").unwrap();
    let summary = sweep(&cfg).unwrap();
    assert!(summary.failed.is_empty());
    let cells: Vec<CellOutcome> = fs::read_dir(dir.path().join("out/cells"))
        .unwrap()
        .map(|e| serde_json::from_str(&fs::read_to_string(e.unwrap().path()).unwrap()).unwrap())
        .collect();
    assert_eq!(cells.len(), 9);
    assert!(cells.iter().all(|c| c.truncated && c.result.as_ref().unwrap().compliant));
}
