//! Conversion factors between measures and the target-adjustment cubic.
//!
//! Character and token targets are approximated as word targets by
//! multiplying with `alpha = 1 / mu`, where `mu` is the mean number of
//! characters (or tokens) per word. Word targets are then optionally passed
//! through a cubic that maps the desired output length to the length one
//! has to request from a model with a systematic length bias.

mod fit;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::{self, LengthMeasure, TokenizerHandle};
use crate::numeric::round_half_up;

pub const PROFILE_VERSION: u32 = 1;

const DEFAULT_PROFILE: &str = include_str!("../../profiles/default.json");

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("no calibration samples")]
    NoSamples,
    #[error("sample {0} has zero words")]
    ZeroWords(usize),
    #[error("cannot approximate {0} targets as words")]
    UnsupportedMeasure(LengthMeasure),
    #[error("target must be at least 1")]
    ZeroTarget,
    #[error("cubic fit needs at least 4 distinct desired lengths, got {0}")]
    RankDeficient(usize),
    #[error("invalid profile: {0}")]
    Invariant(String),
    #[error("profile schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("profile file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub corpus: String,
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationProfile {
    pub version: u32,
    /// Mean characters per word.
    pub mu_w: f64,
    /// Mean tokens per word.
    pub mu_t: f64,
    pub alpha_c_to_w: f64,
    pub alpha_t_to_w: f64,
    /// `(a, b, c, d)` of `W' = a + b·W + c·W² + d·W³`.
    pub ta_coeffs: [f64; 4],
    pub provenance: Provenance,
}

impl Default for CalibrationProfile {
    fn default() -> Self {
        Self::builtin()
    }
}

impl CalibrationProfile {
    /// The shipped profile, measured on LLaMA 3 summaries of YTSeg transcripts.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_PROFILE).expect("embedded profile is valid")
    }

    /// Build a profile from measured means; the factors are their reciprocals.
    pub fn from_factors(mu_w: f64, mu_t: f64, ta_coeffs: [f64; 4], provenance: Provenance) -> Result<Self, CalibrationError> {
        let p = Self {
            version: PROFILE_VERSION,
            mu_w,
            mu_t,
            alpha_c_to_w: 1.0 / mu_w,
            alpha_t_to_w: 1.0 / mu_t,
            ta_coeffs,
            provenance,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        let bad = |m: String| Err(CalibrationError::Invariant(m));
        if self.version != PROFILE_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        if !(self.mu_w.is_finite() && self.mu_w > 1.0) {
            return bad(format!("mu_w must exceed 1, got {}", self.mu_w));
        }
        if !(self.mu_t.is_finite() && self.mu_t > 0.0) {
            return bad(format!("mu_t must be positive, got {}", self.mu_t));
        }
        for (name, mu, alpha) in [("c", self.mu_w, self.alpha_c_to_w), ("t", self.mu_t, self.alpha_t_to_w)] {
            if ((mu * alpha) - 1.0).abs() > 1e-12 {
                return bad(format!("alpha_{name}_to_w · mu is {} rather than 1", mu * alpha));
            }
        }
        if self.ta_coeffs.iter().any(|c| !c.is_finite()) {
            return bad("ta_coeffs must be finite".into());
        }
        Ok(())
    }

    pub fn from_json(raw: &str) -> Result<Self, CalibrationError> {
        let p: Self = serde_json::from_str(raw)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, CalibrationError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), CalibrationError> {
        self.validate()?;
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

pub fn load_profile(path: &Path) -> Result<CalibrationProfile, CalibrationError> {
    CalibrationProfile::load(path)
}

pub fn save_profile(profile: &CalibrationProfile, path: &Path) -> Result<(), CalibrationError> {
    profile.save(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub words: usize,
    pub characters: usize,
    pub tokens: usize,
    /// Target that was requested when the summary was generated.
    pub requested_target: Option<usize>,
    /// Length actually produced, in the measure of the request.
    pub observed_length: Option<usize>,
}

impl CalibrationSample {
    /// Count a summary; for word-target runs `observed_length` is its word count.
    pub fn measure(text: &str, tokenizer: &TokenizerHandle, requested_words: Option<usize>) -> Self {
        let words = measures::count_words(text);
        Self {
            words,
            characters: measures::count_characters(text),
            tokens: tokenizer.count(text),
            requested_target: requested_words,
            observed_length: requested_words.map(|_| words),
        }
    }
}

/// How per-summary ratios are combined into a mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorAveraging {
    /// Mean of per-summary ratios.
    #[default]
    PerSummary,
    /// Ratio of the summed counts.
    Pooled,
}

/// Returns `(mu_w, mu_t)`.
pub fn derive_factors(samples: &[CalibrationSample], averaging: FactorAveraging) -> Result<(f64, f64), CalibrationError> {
    if samples.is_empty() {
        return Err(CalibrationError::NoSamples);
    }
    if let Some(i) = samples.iter().position(|s| s.words == 0) {
        return Err(CalibrationError::ZeroWords(i));
    }
    let n = samples.len() as f64;
    Ok(match averaging {
        FactorAveraging::PerSummary => {
            let cw = crate::numeric::compensated_sum(samples.iter().map(|s| s.characters as f64 / s.words as f64));
            let tw = crate::numeric::compensated_sum(samples.iter().map(|s| s.tokens as f64 / s.words as f64));
            (cw / n, tw / n)
        }
        FactorAveraging::Pooled => {
            let words: usize = samples.iter().map(|s| s.words).sum();
            let chars: usize = samples.iter().map(|s| s.characters).sum();
            let tokens: usize = samples.iter().map(|s| s.tokens).sum();
            (chars as f64 / words as f64, tokens as f64 / words as f64)
        }
    })
}

/// Word target equivalent to a character or token target.
pub fn approximate_target(target: usize, from: LengthMeasure, profile: &CalibrationProfile) -> Result<usize, CalibrationError> {
    if target == 0 {
        return Err(CalibrationError::ZeroTarget);
    }
    let alpha = match from {
        LengthMeasure::Characters => profile.alpha_c_to_w,
        LengthMeasure::Tokens => profile.alpha_t_to_w,
        other => return Err(CalibrationError::UnsupportedMeasure(other)),
    };
    Ok(clamp_round(target as f64 * alpha))
}

/// Fit the request length as a cubic in the desired output length.
///
/// Each pair is `(requested_target, observed_length)`: a model that was
/// asked for `requested_target` words and produced `observed_length` words
/// shows what must be requested to obtain `observed_length`.
pub fn fit_target_adjustment(pairs: &[(f64, f64)]) -> Result<[f64; 4], CalibrationError> {
    let xs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let c = fit::polyfit(&xs, &ys, 3).ok_or_else(|| {
        let mut d = xs.clone();
        d.sort_by(f64::total_cmp);
        d.dedup();
        CalibrationError::RankDeficient(d.len())
    })?;
    Ok([c[0], c[1], c[2], c[3]])
}

pub fn eval_cubic(coeffs: &[f64; 4], w: f64) -> f64 {
    let [a, b, c, d] = *coeffs;
    a + w * (b + w * (c + w * d))
}

/// Adjusted word target to request for a desired `w_target`.
pub fn adjust_target(w_target: usize, profile: &CalibrationProfile) -> usize {
    clamp_round(eval_cubic(&profile.ta_coeffs, w_target as f64))
}

fn clamp_round(x: f64) -> usize {
    let r = round_half_up(x);
    if r.is_finite() && r >= 1.0 {
        r as usize
    } else {
        1
    }
}

/// Factors plus (when requested targets are present) a fitted cubic.
/// Without target pairs the adjustment is the identity.
pub fn calibrate(samples: &[CalibrationSample], averaging: FactorAveraging, corpus: &str) -> Result<CalibrationProfile, CalibrationError> {
    let (mu_w, mu_t) = derive_factors(samples, averaging)?;
    let pairs: Vec<(f64, f64)> = samples
        .iter()
        .filter_map(|s| Some((s.requested_target? as f64, s.observed_length? as f64)))
        .collect();
    let ta = if pairs.is_empty() { [0.0, 1.0, 0.0, 0.0] } else { fit_target_adjustment(&pairs)? };
    CalibrationProfile::from_factors(
        mu_w,
        mu_t,
        ta,
        Provenance { corpus: corpus.to_string(), samples: Some(samples.len()) },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(words: usize, characters: usize, tokens: usize) -> CalibrationSample {
        CalibrationSample { words, characters, tokens, requested_target: None, observed_length: None }
    }

    #[test]
    fn default_profile_constants() {
        let p = CalibrationProfile::builtin();
        assert!((p.alpha_c_to_w - 0.158477).abs() < 1e-9);
        assert!((p.alpha_t_to_w - 0.798047).abs() < 1e-9);
        assert!((p.mu_w - 6.31).abs() < 1e-3);
        assert_eq!(p.ta_coeffs, [23.7904, 4.3e-5, 1.226e-2, -3.3e-5]);
    }

    #[test]
    fn single_sample_factors() {
        let (w, t) = derive_factors(&[sample(10, 63, 8)], FactorAveraging::PerSummary).unwrap();
        assert!((w - 6.3).abs() < 1e-12 && (t - 0.8).abs() < 1e-12);
    }

    #[test]
    fn per_summary_vs_pooled() {
        let s = [sample(10, 60, 12), sample(30, 198, 36)];
        let (w, _) = derive_factors(&s, FactorAveraging::PerSummary).unwrap();
        assert!((w - 6.3).abs() < 1e-12);
        let (w, t) = derive_factors(&s, FactorAveraging::Pooled).unwrap();
        assert!((w - 258.0 / 40.0).abs() < 1e-12 && (t - 1.2).abs() < 1e-12);
    }

    #[test]
    fn factor_errors() {
        assert!(matches!(derive_factors(&[], FactorAveraging::PerSummary), Err(CalibrationError::NoSamples)));
        assert!(matches!(
            derive_factors(&[sample(3, 10, 4), sample(0, 0, 0)], FactorAveraging::Pooled),
            Err(CalibrationError::ZeroWords(1))
        ));
    }

    #[test]
    fn approximation_examples() {
        let p = CalibrationProfile::builtin();
        assert_eq!(approximate_target(300, LengthMeasure::Characters, &p).unwrap(), 48);
        assert_eq!(approximate_target(500, LengthMeasure::Characters, &p).unwrap(), 79);
        assert_eq!(approximate_target(50, LengthMeasure::Tokens, &p).unwrap(), 40);
        assert_eq!(approximate_target(1, LengthMeasure::Characters, &p).unwrap(), 1);
        assert!(matches!(
            approximate_target(3, LengthMeasure::Sentences, &p),
            Err(CalibrationError::UnsupportedMeasure(LengthMeasure::Sentences))
        ));
        assert!(approximate_target(0, LengthMeasure::Tokens, &p).is_err());
    }

    #[test]
    fn adjustment_examples() {
        let p = CalibrationProfile::builtin();
        let got: Vec<usize> = [50, 100, 150, 200].iter().map(|&w| adjust_target(w, &p)).collect();
        assert_eq!(got, [50, 113, 188, 250]);
        // 48.39 rounds down.
        assert_eq!(adjust_target(48, &p), 48);
    }

    #[test]
    fn identity_pairs_recover_identity() {
        let pairs: Vec<(f64, f64)> = (10..60).map(|w| (w as f64, w as f64)).collect();
        let c = fit_target_adjustment(&pairs).unwrap();
        for (got, want) in c.iter().zip([0.0, 1.0, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-6, "{c:?}");
        }
    }

    #[test]
    fn four_points_interpolate() {
        let truth = [3.0, -0.5, 0.02, 1e-4];
        let pairs: Vec<(f64, f64)> = [5.0, 40.0, 90.0, 170.0].iter().map(|&x| (eval_cubic(&truth, x), x)).collect();
        let c = fit_target_adjustment(&pairs).unwrap();
        for &(y, x) in &pairs {
            assert!((eval_cubic(&c, x) - y).abs() < 1e-6);
        }
    }

    #[test]
    fn too_few_distinct_targets() {
        let pairs = [(50.0, 45.0), (55.0, 45.0), (100.0, 90.0), (150.0, 130.0), (151.0, 130.0)];
        assert!(matches!(fit_target_adjustment(&pairs), Err(CalibrationError::RankDeficient(3))));
    }

    #[test]
    fn profile_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let p = CalibrationProfile::builtin();
        save_profile(&p, &path).unwrap();
        assert_eq!(load_profile(&path).unwrap(), p);

        fs::write(&path, "{\"version\": 1, \"mu_w\": 6.3").unwrap();
        assert!(matches!(load_profile(&path), Err(CalibrationError::Schema(_))));
        let mut bad = serde_json::to_value(&p).unwrap();
        bad["alpha_c_to_w"] = serde_json::json!(0.2);
        fs::write(&path, bad.to_string()).unwrap();
        assert!(matches!(load_profile(&path), Err(CalibrationError::Invariant(_))));
        bad["alpha_c_to_w"] = serde_json::json!(p.alpha_c_to_w);
        bad["extra"] = serde_json::json!(1);
        fs::write(&path, bad.to_string()).unwrap();
        assert!(matches!(load_profile(&path), Err(CalibrationError::Schema(_))));
    }

    #[test]
    fn calibrate_fits_pairs_when_present() {
        let truth = [10.0, 0.9, 1e-3, 0.0];
        let samples: Vec<CalibrationSample> = (1..=12)
            .map(|i| {
                let w = 20 * i;
                CalibrationSample {
                    requested_target: Some(round_half_up(eval_cubic(&truth, w as f64)) as usize),
                    observed_length: Some(w),
                    ..sample(w, w * 6, w * 5 / 4)
                }
            })
            .collect();
        let p = calibrate(&samples, FactorAveraging::PerSummary, "unit").unwrap();
        assert!((p.mu_w - 6.0).abs() < 1e-12);
        assert_eq!(p.provenance.samples, Some(12));
        assert!((eval_cubic(&p.ta_coeffs, 100.0) - eval_cubic(&truth, 100.0)).abs() < 1.0);
        let plain: Vec<_> = samples.iter().map(|s| CalibrationSample { requested_target: None, ..*s }).collect();
        assert_eq!(calibrate(&plain, FactorAveraging::Pooled, "u").unwrap().ta_coeffs, [0.0, 1.0, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn approximation_is_monotone(t in 1usize..5000, dt in 0usize..500) {
            let p = CalibrationProfile::builtin();
            for m in [LengthMeasure::Characters, LengthMeasure::Tokens] {
                prop_assert!(approximate_target(t, m, &p).unwrap() <= approximate_target(t + dt, m, &p).unwrap());
            }
        }

        #[test]
        fn persistence_changes_no_decision(mu_w in 1.01f64..20.0, mu_t in 0.05f64..5.0, t in 1usize..3000) {
            let p = CalibrationProfile::from_factors(mu_w, mu_t, [1.0, 1.1, 1e-3, -1e-6], Provenance { corpus: "x".into(), samples: None }).unwrap();
            let q = CalibrationProfile::from_json(&serde_json::to_string(&p).unwrap()).unwrap();
            prop_assert_eq!(&p, &q);
            prop_assert_eq!(adjust_target(t, &p), adjust_target(t, &q));
            prop_assert_eq!(
                approximate_target(t, LengthMeasure::Characters, &p).unwrap(),
                approximate_target(t, LengthMeasure::Characters, &q).unwrap()
            );
        }
    }
}
