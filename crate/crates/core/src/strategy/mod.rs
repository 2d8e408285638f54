//! Length-control pipelines over a [`Backend`].
//!
//! A [`StrategyPlan`] is a set of flags: length approximation (LA), target
//! adjustment (TA), sample filtering (SF, `samples_n > 1`), automated
//! revision (AR, `max_revisions > 0`) and sampled revisions (SR). Named
//! recipes such as `la-sf-ar` resolve to flag combinations.
//!
//! Selection and compliance always use the caller's original measure and
//! target, even when LA/TA changed what was put in the prompt.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, Completion, GenerationParams};
use crate::calibration::{self, CalibrationError, CalibrationProfile};
use crate::measures::{self, LengthMeasure, LengthVector, TokenizerHandle};
use crate::prompting::{PromptError, PromptPlan, PromptRenderer, Quantifier, TargetSpec};

pub const DEFAULT_SAMPLES: usize = 3;
pub const DEFAULT_REVISIONS: usize = 1;

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("invalid strategy plan: {0}")]
    Plan(String),
    #[error("unknown strategy `{0}`")]
    UnknownRecipe(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("backend failed after {} completed step(s): {source}", partial.attempts.len())]
    Backend { source: BackendError, partial: Box<PartialRun> },
}

/// What was done before a backend failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialRun {
    pub attempts: Vec<Attempt>,
    pub backend_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyPlan {
    pub use_la: bool,
    pub use_ta: bool,
    pub samples_n: usize,
    pub max_revisions: usize,
    pub sampled_revisions: bool,
    /// Compliance fraction; defaults to the target tolerance (0 for structural measures).
    pub epsilon: Option<f64>,
    pub prefill: bool,
    /// Finalize the best candidate of the whole trace instead of the newest one.
    pub keep_best_overall: bool,
    /// Apply TA only to word targets at or above this value.
    pub ta_min_target: Option<usize>,
}

impl Default for StrategyPlan {
    fn default() -> Self {
        Self {
            use_la: false,
            use_ta: false,
            samples_n: 1,
            max_revisions: 0,
            sampled_revisions: false,
            epsilon: None,
            prefill: true,
            keep_best_overall: false,
            ta_min_target: None,
        }
    }
}

/// Named strategy combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    Baseline,
    La,
    Ta,
    Sf,
    Ar,
    Sr,
    LaSf,
    LaTa,
    LaTaSf,
    LaAr,
    SfAr,
    LaSfAr,
    LaSr,
    TaSf,
}

impl Recipe {
    pub const ALL: [Recipe; 14] = [
        Recipe::Baseline,
        Recipe::La,
        Recipe::Ta,
        Recipe::Sf,
        Recipe::Ar,
        Recipe::Sr,
        Recipe::LaSf,
        Recipe::LaTa,
        Recipe::LaTaSf,
        Recipe::LaAr,
        Recipe::SfAr,
        Recipe::LaSfAr,
        Recipe::LaSr,
        Recipe::TaSf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Recipe::Baseline => "baseline",
            Recipe::La => "la",
            Recipe::Ta => "ta",
            Recipe::Sf => "sf",
            Recipe::Ar => "ar",
            Recipe::Sr => "sr",
            Recipe::LaSf => "la-sf",
            Recipe::LaTa => "la-ta",
            Recipe::LaTaSf => "la-ta-sf",
            Recipe::LaAr => "la-ar",
            Recipe::SfAr => "sf-ar",
            Recipe::LaSfAr => "la-sf-ar",
            Recipe::LaSr => "la-sr",
            Recipe::TaSf => "ta-sf",
        }
    }

    /// Flags for this recipe with `n` samples and `r` revisions where used.
    pub fn plan(self, n: usize, r: usize) -> StrategyPlan {
        let name = self.as_str();
        let has = |part: &str| name.split('-').any(|p| p == part);
        let sr = has("sr");
        StrategyPlan {
            use_la: has("la"),
            use_ta: has("ta"),
            samples_n: if has("sf") || sr { n } else { 1 },
            max_revisions: if has("ar") || sr { r } else { 0 },
            sampled_revisions: sr,
            ..StrategyPlan::default()
        }
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Recipe {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Recipe::ALL
            .into_iter()
            .find(|r| r.as_str() == key)
            .ok_or_else(|| StrategyError::UnknownRecipe(s.to_string()))
    }
}

impl StrategyPlan {
    pub fn epsilon_for(&self, spec: &TargetSpec) -> f64 {
        self.epsilon.unwrap_or(if spec.measure.is_structural() { 0.0 } else { spec.tolerance })
    }

    pub fn validate(&self, spec: &TargetSpec) -> Result<(), StrategyError> {
        let bad = |m: &str| Err(StrategyError::Plan(m.to_string()));
        if self.samples_n == 0 {
            return bad("samples_n must be at least 1");
        }
        if self.sampled_revisions && self.max_revisions == 0 {
            return bad("sampled revisions need max_revisions ≥ 1");
        }
        if let Some(e) = self.epsilon {
            if !(0.0..1.0).contains(&e) {
                return bad("epsilon must lie in [0, 1)");
            }
        }
        if self.use_la && !matches!(spec.measure, LengthMeasure::Characters | LengthMeasure::Tokens) {
            return Err(StrategyError::Plan(format!("LA does not apply to {} targets", spec.measure)));
        }
        if self.use_ta && !(self.use_la || spec.measure == LengthMeasure::Words) {
            return Err(StrategyError::Plan(format!("TA needs a word target, got {}", spec.measure)));
        }
        Ok(())
    }
}

pub fn is_compliant(length: usize, target: usize, epsilon: f64) -> bool {
    length.abs_diff(target) as f64 <= epsilon * target as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub lengths: LengthVector,
    pub backend_id: String,
    pub latency_ms: u64,
}

impl Candidate {
    pub fn from_completion(c: Completion, tokenizer: &TokenizerHandle) -> Self {
        Self {
            lengths: measures::length_vector(&c.text, tokenizer),
            text: c.text,
            backend_id: c.backend_id,
            latency_ms: c.latency.as_millis() as u64,
        }
    }

    pub fn deviation(&self, spec: &TargetSpec) -> usize {
        self.lengths.get(spec.measure).abs_diff(spec.target)
    }
}

/// Index of the candidate closest to the target; the earliest wins ties.
///
/// # Panics
/// On an empty list.
pub fn select_best<'a>(candidates: &'a [Candidate], spec: &TargetSpec) -> (usize, &'a Candidate) {
    candidates
        .iter()
        .enumerate()
        .min_by_key(|(i, c)| (c.deviation(spec), *i))
        .expect("select_best needs at least one candidate")
}

/// Measure and target actually written into the initial prompt.
pub fn resolve_working_target(
    spec: &TargetSpec,
    plan: &StrategyPlan,
    profile: &CalibrationProfile,
) -> Result<(LengthMeasure, usize), StrategyError> {
    plan.validate(spec)?;
    let (mut measure, mut target) = (spec.measure, spec.target);
    if plan.use_la {
        target = calibration::approximate_target(target, measure, profile)?;
        measure = LengthMeasure::Words;
    }
    if plan.use_ta && plan.ta_min_target.is_none_or(|min| target >= min) {
        target = calibration::adjust_target(target, profile);
    }
    Ok((measure, target))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepKind {
    Initial,
    Revision { round: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub step: StepKind,
    pub candidates: Vec<Candidate>,
    pub selected: usize,
}

impl Attempt {
    pub fn chosen(&self) -> &Candidate {
        &self.candidates[self.selected]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    #[serde(rename = "final")]
    pub final_candidate: Candidate,
    pub attempts: Vec<Attempt>,
    pub backend_calls: usize,
    pub working_measure: LengthMeasure,
    pub working_target: usize,
    pub epsilon: f64,
    /// Judged against the original spec.
    pub compliant: bool,
}

/// Everything a run needs besides the document and the request.
pub struct Runner<'a> {
    pub backend: &'a dyn Backend,
    pub renderer: &'a PromptRenderer,
    pub profile: &'a CalibrationProfile,
    pub tokenizer: &'a TokenizerHandle,
    pub params: GenerationParams,
}

impl Runner<'_> {
    fn sample(
        &self,
        plan: &PromptPlan,
        n: usize,
        attempts: &[Attempt],
        calls: usize,
    ) -> Result<Vec<Candidate>, StrategyError> {
        match self.backend.generate(plan, &self.params.with_n(n)) {
            Ok(out) => Ok(out.into_iter().map(|c| Candidate::from_completion(c, self.tokenizer)).collect()),
            Err(source) => Err(StrategyError::Backend {
                source,
                partial: Box::new(PartialRun { attempts: attempts.to_vec(), backend_calls: calls }),
            }),
        }
    }

    pub fn run(&self, document: &str, spec: &TargetSpec, plan: &StrategyPlan) -> Result<RunResult, StrategyError> {
        let (working_measure, working_target) = resolve_working_target(spec, plan, self.profile)?;
        if plan.max_revisions > 0 && !self.backend.supports_revision() {
            return Err(StrategyError::Plan(format!("backend {} cannot revise", self.backend.id())));
        }
        let epsilon = plan.epsilon_for(spec);
        let working = TargetSpec { measure: working_measure, target: working_target, tolerance: spec.tolerance };
        let prompt = self.renderer.render_initial(document, &working, plan.prefill)?;

        let mut attempts = Vec::new();
        let mut calls = 0;
        let candidates = self.sample(&prompt, plan.samples_n, &attempts, calls)?;
        calls += plan.samples_n;
        let (selected, _) = select_best(&candidates, spec);
        attempts.push(Attempt { step: StepKind::Initial, candidates, selected });

        for round in 1..=plan.max_revisions {
            let current = attempts.last().expect("initial step present").chosen();
            let length = current.lengths.get(spec.measure);
            if is_compliant(length, spec.target, epsilon) {
                break;
            }
            let prompt = self.renderer.render_revision(document, &current.text, length, spec)?;
            let n = if plan.sampled_revisions { plan.samples_n } else { 1 };
            let candidates = self.sample(&prompt, n, &attempts, calls)?;
            calls += n;
            let (selected, _) = select_best(&candidates, spec);
            attempts.push(Attempt { step: StepKind::Revision { round }, candidates, selected });
        }

        let final_candidate = if plan.keep_best_overall {
            let all: Vec<Candidate> = attempts.iter().flat_map(|a| a.candidates.iter().cloned()).collect();
            select_best(&all, spec).1.clone()
        } else {
            attempts.last().expect("initial step present").chosen().clone()
        };
        let compliant = is_compliant(final_candidate.lengths.get(spec.measure), spec.target, epsilon);
        Ok(RunResult {
            final_candidate,
            attempts,
            backend_calls: calls,
            working_measure,
            working_target,
            epsilon,
            compliant,
        })
    }

    /// One generation with a qualitative length request.
    pub fn run_qualitative(&self, document: &str, quantifier: Quantifier, prefill: bool) -> Result<Candidate, StrategyError> {
        let prompt = self.renderer.render_qualitative(document, quantifier, prefill)?;
        let mut out = self.sample(&prompt, 1, &[], 0)?;
        Ok(out.remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockBackend, MockProfile};
    use proptest::prelude::*;

    fn cand(len: usize) -> Candidate {
        Candidate {
            text: String::new(),
            lengths: LengthVector { words: len, ..LengthVector::default() },
            backend_id: "t".into(),
            latency_ms: 0,
        }
    }

    fn words(t: usize) -> TargetSpec {
        TargetSpec::new(LengthMeasure::Words, t).unwrap()
    }

    const DOC: &str = "The committee met on Tuesday to discuss the budget. Several members raised concerns about rising costs. A final vote was postponed until next month.";

    #[test]
    fn compliance_boundary() {
        assert!(is_compliant(110, 100, 0.10));
        assert!(is_compliant(90, 100, 0.10));
        assert!(!is_compliant(111, 100, 0.10));
        assert!(is_compliant(100, 100, 0.0));
        assert!(!is_compliant(101, 100, 0.0));
    }

    #[test]
    fn selection_examples() {
        let c: Vec<_> = [45, 52, 61].map(cand).into();
        assert_eq!(select_best(&c, &words(50)).0, 1);
        let c: Vec<_> = [48, 52].map(cand).into();
        assert_eq!(select_best(&c, &words(50)).0, 0);
    }

    #[test]
    fn recipes_resolve_to_flags() {
        let p = Recipe::LaTaSf.plan(5, 2);
        assert!(p.use_la && p.use_ta && p.samples_n == 5 && p.max_revisions == 0 && !p.sampled_revisions);
        let p = Recipe::Sr.plan(4, 3);
        assert!(p.sampled_revisions && p.samples_n == 4 && p.max_revisions == 3 && !p.use_la);
        let p = Recipe::SfAr.plan(4, 2);
        assert!(p.samples_n == 4 && p.max_revisions == 2 && !p.sampled_revisions);
        let p = Recipe::LaAr.plan(4, 2);
        assert!(p.use_la && p.samples_n == 1 && p.max_revisions == 2);
        assert_eq!(Recipe::Baseline.plan(4, 2), StrategyPlan::default());
        for r in Recipe::ALL {
            assert_eq!(r.as_str().parse::<Recipe>().unwrap(), r);
        }
        assert!("la-xx".parse::<Recipe>().is_err());
    }

    #[test]
    fn working_target_resolution() {
        let p = CalibrationProfile::builtin();
        let chars = TargetSpec::new(LengthMeasure::Characters, 300).unwrap();
        assert_eq!(resolve_working_target(&chars, &Recipe::LaTa.plan(1, 0), &p).unwrap(), (LengthMeasure::Words, 48));
        let toks = TargetSpec::new(LengthMeasure::Tokens, 100).unwrap();
        assert_eq!(resolve_working_target(&toks, &Recipe::La.plan(1, 0), &p).unwrap(), (LengthMeasure::Words, 80));
        assert_eq!(resolve_working_target(&words(50), &StrategyPlan::default(), &p).unwrap(), (LengthMeasure::Words, 50));
        assert_eq!(resolve_working_target(&words(200), &Recipe::Ta.plan(1, 0), &p).unwrap(), (LengthMeasure::Words, 250));
        let gated = StrategyPlan { ta_min_target: Some(100), ..Recipe::Ta.plan(1, 0) };
        assert_eq!(resolve_working_target(&words(50), &gated, &p).unwrap().1, 50);
        assert_eq!(resolve_working_target(&words(150), &gated, &p).unwrap().1, 188);

        assert!(resolve_working_target(&words(50), &Recipe::La.plan(1, 0), &p).is_err());
        assert!(resolve_working_target(&chars, &Recipe::Ta.plan(1, 0), &p).is_err());
        let sents = TargetSpec::new(LengthMeasure::Sentences, 3).unwrap();
        assert!(resolve_working_target(&sents, &Recipe::La.plan(1, 0), &p).is_err());
    }

    #[test]
    fn structural_measures_default_to_exact_compliance() {
        let s = TargetSpec::new(LengthMeasure::Sentences, 5).unwrap();
        assert_eq!(StrategyPlan::default().epsilon_for(&s), 0.0);
        assert_eq!(StrategyPlan::default().epsilon_for(&words(5)), 0.10);
        let p = StrategyPlan { epsilon: Some(0.2), ..StrategyPlan::default() };
        assert_eq!(p.epsilon_for(&s), 0.2);
    }

    fn run_with(backend: &dyn Backend, spec: &TargetSpec, plan: &StrategyPlan) -> RunResult {
        let renderer = PromptRenderer::default();
        let profile = CalibrationProfile::builtin();
        let tokenizer = TokenizerHandle::mock_ws();
        let runner = Runner { backend, renderer: &renderer, profile: &profile, tokenizer: &tokenizer, params: GenerationParams::default() };
        runner.run(DOC, spec, plan).unwrap()
    }

    #[test]
    fn obedient_mock_is_compliant_with_no_revisions() {
        let backend = MockBackend::obedient(TokenizerHandle::mock_ws());
        let r = run_with(&backend, &words(40), &Recipe::SfAr.plan(3, 2));
        assert!(r.compliant);
        assert_eq!(r.backend_calls, 3);
        assert_eq!(r.attempts.len(), 1);
        assert_eq!(r.final_candidate.lengths.words, 40);
    }

    #[test]
    fn gain_one_revision_converges_in_one_step() {
        let profile = MockProfile::scripted(["one two three"]);
        let scripted = MockBackend::new(profile, 1, TokenizerHandle::mock_ws()).unwrap();
        // Scripted start is far from 40 words; the gain-1 mock then lands on target.
        struct Chain<'a>(&'a MockBackend, MockBackend);
        impl Backend for Chain<'_> {
            fn id(&self) -> &str {
                "chain"
            }
            fn generate(&self, plan: &PromptPlan, params: &GenerationParams) -> Result<Vec<Completion>, BackendError> {
                match plan.intent {
                    crate::prompting::PlanIntent::Revision { .. } => self.1.generate(plan, params),
                    _ => self.0.generate(plan, params),
                }
            }
            fn supports_revision(&self) -> bool {
                true
            }
        }
        let backend = Chain(&scripted, MockBackend::obedient(TokenizerHandle::mock_ws()));
        let r = run_with(&backend, &words(40), &Recipe::Ar.plan(1, 3));
        assert!(r.compliant);
        assert_eq!(r.attempts.len(), 2);
        assert_eq!(r.backend_calls, 2);
        assert_eq!(r.final_candidate.lengths.words, 40);
    }

    #[test]
    fn la_selection_uses_original_measure() {
        // Candidate 0 is closer in words to the LA target, candidate 1 in characters.
        let spec = TargetSpec::new(LengthMeasure::Characters, 300).unwrap();
        let a = Candidate { lengths: LengthVector { words: 48, characters: 360, ..LengthVector::default() }, ..cand(0) };
        let b = Candidate { lengths: LengthVector { words: 40, characters: 305, ..LengthVector::default() }, ..cand(0) };
        assert_eq!(select_best(&[a, b], &spec).0, 1);
    }

    #[test]
    fn qualitative_run_returns_script() {
        let backend = MockBackend::new(MockProfile::scripted(["A B C"]), 0, TokenizerHandle::mock_ws()).unwrap();
        let renderer = PromptRenderer::default();
        let profile = CalibrationProfile::builtin();
        let tokenizer = TokenizerHandle::mock_ws();
        let runner = Runner { backend: &backend, renderer: &renderer, profile: &profile, tokenizer: &tokenizer, params: GenerationParams::default() };
        let c = runner.run_qualitative(DOC, Quantifier::Short, true).unwrap();
        assert_eq!(c.text, "A B C");
        assert!("tiny".parse::<Quantifier>().is_err());
    }

    #[test]
    fn backend_failure_keeps_partial_trace() {
        struct FailOnRevision(MockBackend);
        impl Backend for FailOnRevision {
            fn id(&self) -> &str {
                "f"
            }
            fn generate(&self, plan: &PromptPlan, params: &GenerationParams) -> Result<Vec<Completion>, BackendError> {
                match plan.intent {
                    crate::prompting::PlanIntent::Revision { .. } => {
                        Err(BackendError::Transport { attempts: 3, message: "down".into() })
                    }
                    _ => self.0.generate(plan, params),
                }
            }
            fn supports_revision(&self) -> bool {
                true
            }
        }
        let mock = MockBackend::new(MockProfile::scripted(["too short"]), 0, TokenizerHandle::mock_ws()).unwrap();
        let renderer = PromptRenderer::default();
        let profile = CalibrationProfile::builtin();
        let tokenizer = TokenizerHandle::mock_ws();
        let backend = FailOnRevision(mock);
        let runner = Runner { backend: &backend, renderer: &renderer, profile: &profile, tokenizer: &tokenizer, params: GenerationParams::default() };
        match runner.run(DOC, &words(40), &Recipe::Ar.plan(1, 2)) {
            Err(StrategyError::Backend { partial, .. }) => {
                assert_eq!(partial.attempts.len(), 1);
                assert_eq!(partial.backend_calls, 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn keep_best_overall_picks_global_best() {
        let mock = MockBackend::new(MockProfile::scripted(["a b c d e f g h i", "a b"]), 0, TokenizerHandle::mock_ws()).unwrap();
        let spec = words(12);
        let newest = run_with(&mock, &spec, &Recipe::Ar.plan(1, 1));
        assert_eq!(newest.final_candidate.lengths.words, 2);
        let mock = MockBackend::new(MockProfile::scripted(["a b c d e f g h i", "a b"]), 0, TokenizerHandle::mock_ws()).unwrap();
        let best = run_with(&mock, &spec, &StrategyPlan { keep_best_overall: true, ..Recipe::Ar.plan(1, 1) });
        assert_eq!(best.final_candidate.lengths.words, 9);
        assert!(!best.compliant);
    }

    proptest! {
        #[test]
        fn select_best_matches_exhaustive_scan(lens in prop::collection::vec(0usize..200, 1..64), target in 1usize..200) {
            let c: Vec<_> = lens.iter().copied().map(cand).collect();
            let spec = words(target);
            let mut best = 0;
            for i in 1..lens.len() {
                if lens[i].abs_diff(target) < lens[best].abs_diff(target) {
                    best = i;
                }
            }
            prop_assert_eq!(select_best(&c, &spec).0, best);
        }

        #[test]
        fn calls_are_bounded(n in 1usize..5, r in 0usize..4, sr in any::<bool>(), seed in 0u64..1000) {
            let profile = MockProfile::biased(crate::backend::BiasCurve::baseline_words(), 0.5, 0.05);
            let backend = MockBackend::new(profile, seed, TokenizerHandle::mock_ws()).unwrap();
            let plan = StrategyPlan { samples_n: n, max_revisions: r, sampled_revisions: sr && r > 0, ..StrategyPlan::default() };
            let res = run_with(&backend, &words(150), &plan);
            prop_assert!(res.backend_calls <= n * (1 + r));
            let requested: usize = res.attempts.iter().map(|a| a.candidates.len()).sum();
            prop_assert_eq!(res.backend_calls, requested);
            // No step after the first compliant one.
            for a in &res.attempts[..res.attempts.len() - 1] {
                prop_assert!(!is_compliant(a.chosen().lengths.words, 150, 0.10));
            }
            if !plan.sampled_revisions {
                prop_assert_eq!(res.backend_calls, n + res.attempts.len() - 1);
            }
        }
    }
}
