//! Sweep configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, HarnessError};
use crate::backend::{Backend, GenerationParams, HttpBackend, HttpConfig, MockBackend, MockProfile};
use crate::calibration::CalibrationProfile;
use crate::measures::{LengthMeasure, TokenizerHandle};
use crate::prompting::{PromptRenderer, Templates, DEFAULT_TOLERANCE};
use crate::strategy::{Recipe, StrategyPlan, DEFAULT_REVISIONS, DEFAULT_SAMPLES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    Mock {
        profile: MockProfile,
        #[serde(default)]
        seed: u64,
    },
    Http(HttpConfig),
}

impl BackendConfig {
    pub fn build(&self, tokenizer: &TokenizerHandle, trace: bool) -> Result<Box<dyn Backend>, HarnessError> {
        Ok(match self {
            BackendConfig::Mock { profile, seed } => Box::new(MockBackend::new(profile.clone(), *seed, tokenizer.clone())?),
            BackendConfig::Http(c) => Box::new(HttpBackend::new(HttpConfig { trace: c.trace || trace, ..c.clone() })?),
        })
    }

    /// Seed recorded in cell keys.
    pub fn seed(&self) -> u64 {
        match self {
            BackendConfig::Mock { seed, .. } => *seed,
            BackendConfig::Http(_) => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budget {
    pub context_budget: usize,
    pub reserve_tokens: usize,
    pub head_trim: bool,
}

impl Default for Budget {
    fn default() -> Self {
        Self { context_budget: 8192, reserve_tokens: crate::backend::DEFAULT_MAX_NEW_TOKENS, head_trim: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub measure: LengthMeasure,
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyEntry {
    pub name: Recipe,
    /// Report label; defaults to the recipe name.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub r: Option<usize>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub prefill: Option<bool>,
    #[serde(default)]
    pub keep_best_overall: bool,
    #[serde(default)]
    pub ta_min_target: Option<usize>,
}

impl StrategyEntry {
    pub fn new(name: Recipe) -> Self {
        Self {
            name,
            label: None,
            n: None,
            r: None,
            epsilon: None,
            prefill: None,
            keep_best_overall: false,
            ta_min_target: None,
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.name.to_string())
    }

    pub fn plan(&self) -> StrategyPlan {
        let base = self.name.plan(self.n.unwrap_or(DEFAULT_SAMPLES), self.r.unwrap_or(DEFAULT_REVISIONS));
        StrategyPlan {
            epsilon: self.epsilon,
            prefill: self.prefill.unwrap_or(base.prefill),
            keep_best_overall: self.keep_best_overall,
            ta_min_target: self.ta_min_target,
            ..base
        }
    }
}

fn default_tokenizer() -> String {
    crate::measures::MOCK_WS_ID.to_string()
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

fn default_context_budget() -> usize {
    Budget::default().context_budget
}

fn default_reserve() -> usize {
    Budget::default().reserve_tokens
}

fn default_workers() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub backend: BackendConfig,
    /// `mock-ws` or a path to a `tokenizer.json`.
    #[serde(default = "default_tokenizer")]
    pub tokenizer: String,
    /// Calibration profile; the shipped default when absent.
    #[serde(default)]
    pub profile: Option<PathBuf>,
    #[serde(default)]
    pub templates: Option<PathBuf>,
    #[serde(default)]
    pub strict_template: bool,
    pub sweep: Vec<SweepEntry>,
    pub strategies: Vec<StrategyEntry>,
    #[serde(default)]
    pub params: GenerationParams,
    #[serde(default = "default_context_budget")]
    pub context_budget: usize,
    #[serde(default = "default_reserve")]
    pub reserve_tokens: usize,
    #[serde(default)]
    pub head_trim: bool,
    pub output_dir: PathBuf,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub rouge_stemming: bool,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub skip_bad: bool,
    #[serde(default)]
    pub trace: bool,
}

impl RunConfig {
    /// Parse a config file; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let raw = fs::read_to_string(path).map_err(io_err(path))?;
        let mut c: Self = serde_json::from_str(&raw)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut c.dataset);
        fix(&mut c.output_dir);
        c.profile.as_mut().map(fix);
        c.templates.as_mut().map(fix);
        if c.tokenizer != crate::measures::MOCK_WS_ID && Path::new(&c.tokenizer).is_relative() {
            c.tokenizer = base.join(&c.tokenizer).display().to_string();
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.reserve_tokens >= self.context_budget {
            return bad(format!(
                "reserve_tokens ({}) must be below context_budget ({})",
                self.reserve_tokens, self.context_budget
            ));
        }
        if self.sweep.is_empty() || self.sweep.iter().any(|s| s.targets.is_empty() || s.targets.contains(&0)) {
            return bad("sweep needs at least one measure with positive targets".into());
        }
        if self.strategies.is_empty() {
            return bad("no strategies configured".into());
        }
        let mut labels: Vec<String> = self.strategies.iter().map(StrategyEntry::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return bad("strategy labels must be unique".into());
        }
        if !(0.0..1.0).contains(&self.tolerance) {
            return bad("tolerance must lie in [0, 1)".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        Ok(())
    }

    pub fn budget(&self) -> Budget {
        Budget { context_budget: self.context_budget, reserve_tokens: self.reserve_tokens, head_trim: self.head_trim }
    }

    pub fn load_profile(&self) -> Result<CalibrationProfile, HarnessError> {
        Ok(match &self.profile {
            Some(p) => CalibrationProfile::load(p)?,
            None => CalibrationProfile::builtin(),
        })
    }

    pub fn renderer(&self) -> Result<PromptRenderer, HarnessError> {
        let templates = match &self.templates {
            Some(p) => Templates::load(p)?,
            None => Templates::default(),
        };
        Ok(PromptRenderer::new(templates, self.strict_template))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(
            &path,
            r#"{"dataset": "docs.jsonl", "output_dir": "out",
                "backend": {"kind": "mock", "profile": {"mode": "obedient"}},
                "sweep": [{"measure": "words", "targets": [50]}],
                "strategies": [{"name": "sf", "n": 5}, {"name": "la-ar"}]}"#,
        )
        .unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.dataset, dir.path().join("docs.jsonl"));
        assert_eq!(c.budget(), Budget { context_budget: 8192, reserve_tokens: 1024, head_trim: false });
        assert_eq!(c.tokenizer, "mock-ws");
        assert_eq!(c.strategies[0].plan().samples_n, 5);
        let p = c.strategies[1].plan();
        assert!(p.use_la && p.max_revisions == 1);
    }

    #[test]
    fn invalid_configs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let base = r#""dataset": "d", "output_dir": "o", "backend": {"kind": "mock", "profile": {"mode": "obedient"}},
                      "sweep": [{"measure": "words", "targets": [50]}]"#;
        for tail in [
            r#", "strategies": [{"name": "sf"}], "context_budget": 1000, "reserve_tokens": 1000"#,
            r#", "strategies": []"#,
            r#", "strategies": [{"name": "sf"}, {"name": "sf"}]"#,
            r#", "strategies": [{"name": "bogus"}]"#,
            r#", "strategies": [{"name": "sf"}], "unknown": 1"#,
        ] {
            fs::write(&path, format!("{{{base}{tail}}}")).unwrap();
            assert!(RunConfig::load(&path).is_err(), "{tail}");
        }
    }
}
