//! Seeded mock backends.
//!
//! - `obedient`: every completion has exactly the requested length, and a
//!   revision lands exactly on the target.
//! - `biased`: initial lengths are drawn as
//!   `round(target · (mean_ratio + sd_ratio · z))` with `z ~ N(0, 1)` and the
//!   ratios interpolated from a [`BiasCurve`]; a revision moves the length by
//!   `revision_gain · (target − previous)` plus `revision_sigma · target · z`.
//! - `scripted`: returns the configured texts in order, cycling.
//!
//! Each sample is seeded from `(seed, plan fingerprint, sample index)`, so
//! results do not depend on call order or on how many runs are in flight.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::synth::{synthesize, vocabulary};
use super::{Backend, BackendError, Completion, GenerationParams};
use crate::measures::{LengthMeasure, TokenizerHandle};
use crate::numeric::round_half_up;
use crate::prompting::{PlanIntent, PromptPlan, Quantifier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockMode {
    Obedient,
    Biased,
    Scripted,
}

/// Output-length statistics of a model at one requested target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasPoint {
    pub target: f64,
    /// Mean observed length divided by the target.
    pub mean_ratio: f64,
    /// Standard deviation of the observed length divided by the target.
    pub sd_ratio: f64,
}

impl BiasPoint {
    pub fn from_stats(target: f64, mean: f64, sd: f64) -> Self {
        Self { target, mean_ratio: mean / target, sd_ratio: sd / target }
    }
}

/// Piecewise-linear relative bias over the requested target; constant
/// beyond the first and last points. Empty means unbiased.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BiasRepr", into = "Vec<BiasPoint>")]
pub struct BiasCurve {
    points: Vec<BiasPoint>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum BiasRepr {
    Preset(String),
    Points(Vec<BiasPoint>),
}

impl TryFrom<BiasRepr> for BiasCurve {
    type Error = String;

    fn try_from(repr: BiasRepr) -> Result<Self, Self::Error> {
        match repr {
            BiasRepr::Preset(name) => match name.as_str() {
                "unbiased" => Ok(BiasCurve::default()),
                "baseline-words" => Ok(BiasCurve::baseline_words()),
                other => Err(format!("unknown bias preset `{other}`")),
            },
            BiasRepr::Points(points) => BiasCurve::new(points),
        }
    }
}

impl From<BiasCurve> for Vec<BiasPoint> {
    fn from(c: BiasCurve) -> Self {
        c.points
    }
}

impl BiasCurve {
    pub fn new(mut points: Vec<BiasPoint>) -> Result<Self, String> {
        if points.iter().any(|p| !(p.target > 0.0 && p.mean_ratio > 0.0 && p.sd_ratio >= 0.0)) {
            return Err("bias points need target > 0, mean_ratio > 0, sd_ratio >= 0".into());
        }
        points.sort_by(|a, b| a.target.total_cmp(&b.target));
        Ok(Self { points })
    }

    pub fn constant(point: BiasPoint) -> Self {
        Self { points: vec![point] }
    }

    /// Word-measure baseline statistics (mean ± sd of observed words at
    /// 50/100/150/200-word requests) observed for LLaMA 3 on YTSeg.
    pub fn baseline_words() -> Self {
        Self {
            points: vec![
                BiasPoint::from_stats(50.0, 49.6, 4.9),
                BiasPoint::from_stats(100.0, 97.9, 7.6),
                BiasPoint::from_stats(150.0, 136.9, 13.7),
                BiasPoint::from_stats(200.0, 169.8, 23.6),
            ],
        }
    }

    /// `(mean_ratio, sd_ratio)` at `target`.
    pub fn at(&self, target: f64) -> (f64, f64) {
        let (Some(first), Some(last)) = (self.points.first(), self.points.last()) else {
            return (1.0, 0.0);
        };
        if target <= first.target {
            return (first.mean_ratio, first.sd_ratio);
        }
        if target >= last.target {
            return (last.mean_ratio, last.sd_ratio);
        }
        let hi = self.points.iter().position(|p| p.target >= target).unwrap_or(self.points.len() - 1);
        let (a, b) = (self.points[hi - 1], self.points[hi]);
        let t = (target - a.target) / (b.target - a.target);
        (
            a.mean_ratio + t * (b.mean_ratio - a.mean_ratio),
            a.sd_ratio + t * (b.sd_ratio - a.sd_ratio),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockProfile {
    pub mode: MockMode,
    #[serde(default)]
    pub bias: BiasCurve,
    #[serde(default = "one")]
    pub revision_gain: f64,
    #[serde(default)]
    pub revision_sigma: f64,
    #[serde(default)]
    pub script: Vec<String>,
}

fn one() -> f64 {
    1.0
}

impl MockProfile {
    pub fn obedient() -> Self {
        Self {
            mode: MockMode::Obedient,
            bias: BiasCurve::default(),
            revision_gain: 1.0,
            revision_sigma: 0.0,
            script: Vec::new(),
        }
    }

    pub fn biased(bias: BiasCurve, revision_gain: f64, revision_sigma: f64) -> Self {
        Self { mode: MockMode::Biased, bias, revision_gain, revision_sigma, script: Vec::new() }
    }

    pub fn scripted<S: Into<String>>(script: impl IntoIterator<Item = S>) -> Self {
        Self {
            mode: MockMode::Scripted,
            script: script.into_iter().map(Into::into).collect(),
            ..Self::obedient()
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(0.0..=1.0).contains(&self.revision_gain) {
            return Err(BackendError::Config(format!(
                "revision_gain must lie in [0, 1], got {}",
                self.revision_gain
            )));
        }
        if self.revision_sigma < 0.0 || !self.revision_sigma.is_finite() {
            return Err(BackendError::Config("revision_sigma must be non-negative".into()));
        }
        if self.mode == MockMode::Scripted && self.script.is_empty() {
            return Err(BackendError::Config("scripted mock needs at least one script entry".into()));
        }
        Ok(())
    }
}

/// Word-count statistics per qualitative quantifier (mean, sd).
fn quantifier_words(q: Quantifier) -> (f64, f64) {
    match q {
        Quantifier::Short => (127.2, 44.9),
        Quantifier::Concise => (133.4, 48.1),
        Quantifier::Brief => (136.1, 50.1),
        Quantifier::Moderate => (161.8, 52.3),
        Quantifier::MediumLength => (185.2, 54.8),
        Quantifier::Comprehensive => (272.7, 72.2),
        Quantifier::Verbose => (335.6, 92.3),
        Quantifier::Long => (343.0, 83.9),
    }
}

pub struct MockBackend {
    id: String,
    profile: MockProfile,
    seed: u64,
    tokenizer: TokenizerHandle,
    script_cursor: AtomicUsize,
}

impl MockBackend {
    pub fn new(profile: MockProfile, seed: u64, tokenizer: TokenizerHandle) -> Result<Self, BackendError> {
        profile.validate()?;
        let id = match profile.mode {
            MockMode::Obedient => "mock-obedient",
            MockMode::Biased => "mock-biased",
            MockMode::Scripted => "mock-scripted",
        }
        .to_string();
        Ok(Self { id, profile, seed, tokenizer, script_cursor: AtomicUsize::new(0) })
    }

    pub fn obedient(tokenizer: TokenizerHandle) -> Self {
        Self::new(MockProfile::obedient(), 0, tokenizer).expect("obedient profile is valid")
    }

    pub fn profile(&self) -> &MockProfile {
        &self.profile
    }

    fn sample_seed(&self, base: u64, plan: &PromptPlan, index: usize) -> u64 {
        let mut h = Sha256::new();
        h.update(base.to_le_bytes());
        for m in &plan.messages {
            h.update(m.role.to_string().as_bytes());
            h.update([0u8]);
            h.update(m.content.as_bytes());
            h.update([0u8]);
        }
        h.update((index as u64).to_le_bytes());
        let digest = h.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }

    fn sample_length(&self, intent: &PlanIntent, rng: &mut ChaCha8Rng) -> (LengthMeasure, usize) {
        let z: f64 = StandardNormal.sample(rng);
        let obedient = self.profile.mode == MockMode::Obedient;
        match *intent {
            PlanIntent::Initial { measure, target } => {
                if obedient {
                    return (measure, target);
                }
                let (mean, sd) = self.profile.bias.at(target as f64);
                (measure, clamp_length(target as f64 * (mean + sd * z)))
            }
            PlanIntent::Revision { measure, target, previous_length } => {
                if obedient {
                    return (measure, target);
                }
                let prev = previous_length as f64;
                let moved = prev + self.profile.revision_gain * (target as f64 - prev);
                (measure, clamp_length(moved + self.profile.revision_sigma * target as f64 * z))
            }
            PlanIntent::Qualitative { quantifier } => {
                let (mean, sd) = quantifier_words(quantifier);
                let z = if obedient { 0.0 } else { z };
                (LengthMeasure::Words, clamp_length(mean + sd * z))
            }
        }
    }
}

fn clamp_length(x: f64) -> usize {
    round_half_up(x).max(1.0) as usize
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, plan: &PromptPlan, params: &GenerationParams) -> Result<Vec<Completion>, BackendError> {
        if params.n == 0 {
            return Err(BackendError::ZeroSamples);
        }
        let echo = plan.echo_text();
        let base = params.seed.unwrap_or(self.seed);
        let vocab = vocabulary(&plan.document);
        let mut out = Vec::with_capacity(params.n);
        for i in 0..params.n {
            let body = if self.profile.mode == MockMode::Scripted {
                let k = self.script_cursor.fetch_add(1, Ordering::Relaxed);
                self.profile.script[k % self.profile.script.len()].clone()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(self.sample_seed(base, plan, i));
                let (measure, length) = self.sample_length(&plan.intent, &mut rng);
                let full = synthesize(measure, length, &vocab, &mut rng, &self.tokenizer);
                // The model continues after the prefill, so the echoed part is not regenerated.
                full.strip_prefix(echo).map(str::to_string).unwrap_or(full)
            };
            out.push(Completion {
                text: format!("{echo}{body}"),
                backend_id: self.id.clone(),
                latency: Duration::ZERO,
                token_usage: None,
            });
        }
        Ok(out)
    }

    fn supports_revision(&self) -> bool {
        true
    }
}
