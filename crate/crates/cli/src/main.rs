//! lenctl: length-controlled summarization from the command line.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lenctl_core::backend::{Backend, BiasCurve, GenerationParams, HttpBackend, HttpConfig, MockBackend, MockProfile};
use lenctl_core::calibration::{self, CalibrationProfile, CalibrationSample, FactorAveraging};
use lenctl_core::harness::{self, RunConfig};
use lenctl_core::measures::{LengthMeasure, TokenizerHandle};
use lenctl_core::metrics::{self, ReportOptions};
use lenctl_core::prompting::{PromptRenderer, Quantifier, Templates, TargetSpec, DEFAULT_TOLERANCE};
use lenctl_core::strategy::{Recipe, Runner, StrategyPlan, DEFAULT_REVISIONS, DEFAULT_SAMPLES};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "lenctl", version, about = "Length-controlled summarization over chat-completion backends")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Summarize one document with a length strategy
    Summarize(SummarizeArgs),
    /// Run a measure × target × strategy sweep described by a JSON config
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Print request and response JSON of HTTP calls to stderr
        #[arg(long)]
        trace: bool,
    },
    /// Derive a calibration profile from summaries
    Calibrate(CalibrateArgs),
    /// Aggregate a results directory into a metric report
    Report {
        /// Sweep output directory or results.jsonl file
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        #[arg(long)]
        rouge_stemming: bool,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Http,
    MockObedient,
    MockBiased,
}

#[derive(Args, Debug)]
struct SummarizeArgs {
    /// Document to summarize; `-` reads stdin
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, required_unless_present = "quantifier")]
    measure: Option<LengthMeasure>,
    #[arg(long, required_unless_present = "quantifier")]
    target: Option<usize>,
    /// Qualitative request (short, concise, brief, ...) instead of a numeric target
    #[arg(long, conflicts_with_all = ["measure", "target"])]
    quantifier: Option<Quantifier>,
    #[arg(long, default_value = "baseline")]
    strategy: Recipe,
    /// Samples per step for SF and SR
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    n: usize,
    /// Revision budget for AR and SR
    #[arg(long, default_value_t = DEFAULT_REVISIONS)]
    revisions: usize,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    no_prefill: bool,
    #[arg(long, value_enum, default_value_t = BackendKind::Http)]
    backend: BackendKind,
    #[arg(long, default_value = "http://localhost:8000/v1/chat/completions")]
    url: String,
    #[arg(long, default_value = "default")]
    model: String,
    /// Environment variable holding the API key
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = lenctl_core::backend::DEFAULT_TEMPERATURE)]
    temperature: f64,
    /// Calibration profile JSON; the shipped default otherwise
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    templates: Option<PathBuf>,
    /// `mock-ws` or a tokenizer.json path
    #[arg(long, default_value = "mock-ws")]
    tokenizer: String,
    #[arg(long)]
    trace: bool,
    /// Print the full run trace as JSON
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// JSON lines with `text` and optionally the word `target` it was generated for
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "mock-ws")]
    tokenizer: String,
    /// Ratio of summed counts instead of the mean of per-summary ratios
    #[arg(long)]
    pooled: bool,
    #[arg(long)]
    corpus: Option<String>,
}

fn read_input(path: &Path) -> Result<String> {
    if path == Path::new("-") {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
    }
}

fn summarize(a: SummarizeArgs) -> Result<()> {
    let document = read_input(&a.input)?;
    let tokenizer = TokenizerHandle::load(&a.tokenizer)?;
    let profile = match &a.profile {
        Some(p) => CalibrationProfile::load(p)?,
        None => CalibrationProfile::builtin(),
    };
    let templates = match &a.templates {
        Some(p) => Templates::load(p)?,
        None => Templates::default(),
    };
    let renderer = PromptRenderer::new(templates, false);
    let backend: Box<dyn Backend> = match a.backend {
        BackendKind::Http => Box::new(HttpBackend::new(HttpConfig {
            url: a.url.clone(),
            model: a.model.clone(),
            api_key_env: a.api_key_env.clone(),
            trace: a.trace,
            ..HttpConfig::default()
        })?),
        BackendKind::MockObedient => Box::new(MockBackend::new(MockProfile::obedient(), a.seed, tokenizer.clone())?),
        BackendKind::MockBiased => Box::new(MockBackend::new(
            MockProfile::biased(BiasCurve::baseline_words(), 0.8, 0.05),
            a.seed,
            tokenizer.clone(),
        )?),
    };
    let params = GenerationParams { temperature: a.temperature, ..GenerationParams::default() };
    let runner = Runner { backend: backend.as_ref(), renderer: &renderer, profile: &profile, tokenizer: &tokenizer, params };

    if let Some(q) = a.quantifier {
        let c = runner.run_qualitative(&document, q, !a.no_prefill)?;
        if a.json {
            println!("{}", serde_json::to_string_pretty(&c)?);
        } else {
            println!("{}", c.text);
        }
        return Ok(());
    }
    let (Some(measure), Some(target)) = (a.measure, a.target) else {
        bail!("--measure and --target are required without --quantifier");
    };
    let spec = TargetSpec::with_tolerance(measure, target, a.tolerance)?;
    let plan = StrategyPlan { epsilon: a.epsilon, prefill: !a.no_prefill, ..a.strategy.plan(a.n, a.revisions) };
    let result = runner.run(&document, &spec, &plan)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&result)?);
    } else {
        println!("{}", result.final_candidate.text);
        eprintln!(
            "{} {}: {} (working target {} {}, {} sample(s), {})",
            result.final_candidate.lengths.get(measure),
            measure,
            if result.compliant { "compliant" } else { "not compliant" },
            result.working_target,
            result.working_measure,
            result.backend_calls,
            a.strategy,
        );
    }
    Ok(())
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let tokenizer = TokenizerHandle::load(&a.tokenizer)?;
    let raw = read_input(&a.input)?;
    let mut samples = Vec::new();
    for (i, line) in raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line).with_context(|| format!("line {}", i + 1))?;
        let Some(text) = v.get("text").and_then(|t| t.as_str()) else {
            bail!("line {}: missing `text`", i + 1);
        };
        let target = v.get("target").and_then(|t| t.as_u64()).map(|t| t as usize);
        samples.push(CalibrationSample::measure(text, &tokenizer, target));
    }
    let averaging = if a.pooled { FactorAveraging::Pooled } else { FactorAveraging::PerSummary };
    let corpus = a.corpus.unwrap_or_else(|| a.input.display().to_string());
    let profile = calibration::calibrate(&samples, averaging, &corpus)?;
    profile.save(&a.out)?;
    eprintln!(
        "{} summaries: mu_w = {:.4}, mu_t = {:.4}, ta = {:?}",
        samples.len(),
        profile.mu_w,
        profile.mu_t,
        profile.ta_coeffs
    );
    Ok(())
}

fn run() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Summarize(a) => summarize(a)?,
        Command::Sweep { config, trace } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.trace |= trace;
            let summary = harness::sweep(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if !summary.failed.is_empty() {
                eprintln!("{} cell(s) failed; rerun to retry them", summary.failed.len());
                return Ok(ExitCode::from(2));
            }
        }
        Command::Calibrate(a) => calibrate(a)?,
        Command::Report { input, format, tolerance, rouge_stemming } => {
            let records = harness::load_results(&input)?;
            let rows = metrics::aggregate(&records, &ReportOptions { tolerance, rouge_stemming })?;
            match format {
                Format::Csv => print!("{}", metrics::to_csv(&rows)),
                Format::Json => println!("{}", serde_json::to_string_pretty(&json!(rows))?),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
