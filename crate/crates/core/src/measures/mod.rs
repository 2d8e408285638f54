//! Length measures and the counting functions behind them.
//!
//! Every other module (prompt feedback, candidate selection, revision
//! triggering, metrics) counts through [`count`], so all of them agree on
//! what "50 words" means.

mod sentences;
mod tokenizer;

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use sentences::{split_sentences, SentenceSpan};
pub use tokenizer::{BpeTokenizer, TokenizerError, TokenizerHandle, MOCK_WS_ID};

/// The bullet symbol counted by [`LengthMeasure::BulletPoints`].
pub const BULLET: char = '\u{2022}';

static WORD_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\w+").expect("static regex"));

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MeasureError {
    #[error("the tokens measure requires a tokenizer")]
    MissingTokenizer,
    #[error("unknown length measure `{0}`")]
    UnknownMeasure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthMeasure {
    Words,
    Characters,
    Tokens,
    Sentences,
    BulletPoints,
}

impl LengthMeasure {
    pub const ALL: [LengthMeasure; 5] = [
        LengthMeasure::Words,
        LengthMeasure::Characters,
        LengthMeasure::Tokens,
        LengthMeasure::Sentences,
        LengthMeasure::BulletPoints,
    ];

    /// Sentences and bullet points describe document structure rather than
    /// a fine-grained unit count.
    pub fn is_structural(self) -> bool {
        matches!(self, LengthMeasure::Sentences | LengthMeasure::BulletPoints)
    }

    pub fn is_granular(self) -> bool {
        !self.is_structural()
    }

    /// Stable identifier used in configs, CSV output and the CLI.
    pub fn as_str(self) -> &'static str {
        match self {
            LengthMeasure::Words => "words",
            LengthMeasure::Characters => "characters",
            LengthMeasure::Tokens => "tokens",
            LengthMeasure::Sentences => "sentences",
            LengthMeasure::BulletPoints => "bullet_points",
        }
    }

    pub fn plural_noun(self) -> &'static str {
        match self {
            LengthMeasure::Words => "words",
            LengthMeasure::Characters => "characters",
            LengthMeasure::Tokens => "tokens",
            LengthMeasure::Sentences => "sentences",
            LengthMeasure::BulletPoints => "bullet points",
        }
    }

    pub fn singular_noun(self) -> &'static str {
        match self {
            LengthMeasure::Words => "word",
            LengthMeasure::Characters => "character",
            LengthMeasure::Tokens => "token",
            LengthMeasure::Sentences => "sentence",
            LengthMeasure::BulletPoints => "bullet point",
        }
    }
}

impl fmt::Display for LengthMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LengthMeasure {
    type Err = MeasureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "words" | "word" => Ok(LengthMeasure::Words),
            "characters" | "character" | "chars" | "char" => Ok(LengthMeasure::Characters),
            "tokens" | "token" => Ok(LengthMeasure::Tokens),
            "sentences" | "sentence" | "sents" => Ok(LengthMeasure::Sentences),
            "bullet_points" | "bullet_point" | "bullets" | "bps" => Ok(LengthMeasure::BulletPoints),
            _ => Err(MeasureError::UnknownMeasure(s.to_string())),
        }
    }
}

/// Per-measure lengths of one text.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LengthVector {
    pub words: usize,
    pub characters: usize,
    pub tokens: usize,
    pub sentences: usize,
    pub bullet_points: usize,
}

impl LengthVector {
    pub fn get(&self, measure: LengthMeasure) -> usize {
        match measure {
            LengthMeasure::Words => self.words,
            LengthMeasure::Characters => self.characters,
            LengthMeasure::Tokens => self.tokens,
            LengthMeasure::Sentences => self.sentences,
            LengthMeasure::BulletPoints => self.bullet_points,
        }
    }
}

/// Maximal runs of Unicode word characters (letters, digits, underscore).
pub fn words(text: &str) -> impl Iterator<Item = &str> {
    WORD_RE.find_iter(text).map(|m| m.as_str())
}

/// Byte ranges of the words of `text`.
pub fn word_spans(text: &str) -> impl Iterator<Item = (usize, usize)> + '_ {
    WORD_RE.find_iter(text).map(|m| (m.start(), m.end()))
}

pub fn count_words(text: &str) -> usize {
    WORD_RE.find_iter(text).count()
}

/// Unicode scalar values, not bytes or grapheme clusters.
pub fn count_characters(text: &str) -> usize {
    text.chars().count()
}

pub fn count_sentences(text: &str) -> usize {
    split_sentences(text).len()
}

pub fn count_bullet_points(text: &str) -> usize {
    text.chars().filter(|&c| c == BULLET).count()
}

pub fn count(
    text: &str,
    measure: LengthMeasure,
    tokenizer: Option<&TokenizerHandle>,
) -> Result<usize, MeasureError> {
    Ok(match measure {
        LengthMeasure::Words => count_words(text),
        LengthMeasure::Characters => count_characters(text),
        LengthMeasure::Tokens => tokenizer
            .ok_or(MeasureError::MissingTokenizer)?
            .count(text),
        LengthMeasure::Sentences => count_sentences(text),
        LengthMeasure::BulletPoints => count_bullet_points(text),
    })
}

pub fn length_vector(text: &str, tokenizer: &TokenizerHandle) -> LengthVector {
    LengthVector {
        words: count_words(text),
        characters: count_characters(text),
        tokens: tokenizer.count(text),
        sentences: count_sentences(text),
        bullet_points: count_bullet_points(text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_counts_zero_everywhere() {
        let tok = TokenizerHandle::mock_ws();
        assert_eq!(length_vector("", &tok), LengthVector::default());
    }

    #[test]
    fn bullet_points_count_only_u2022() {
        assert_eq!(count("• Point one\n• Point two", LengthMeasure::BulletPoints, None), Ok(2));
        assert_eq!(count("- one\n* two", LengthMeasure::BulletPoints, None), Ok(0));
    }

    #[test]
    fn characters_are_scalar_values() {
        assert_eq!(count("Hello, world!", LengthMeasure::Characters, None), Ok(13));
        assert_eq!(count("naïve •", LengthMeasure::Characters, None), Ok(7));
    }

    #[test]
    fn abbreviation_does_not_end_sentence() {
        assert_eq!(count("Dr. Smith arrived. He left.", LengthMeasure::Sentences, None), Ok(2));
    }

    #[test]
    fn words_follow_word_character_runs() {
        assert_eq!(count_words(""), 0);
        assert_eq!(count_words("well-known state_of_art 3.5"), 5);
        assert_eq!(count_words("Über café, naïve!"), 3);
        assert_eq!(count_words("don't"), 2);
    }

    #[test]
    fn tokens_need_a_tokenizer() {
        assert_eq!(
            count("hi", LengthMeasure::Tokens, None),
            Err(MeasureError::MissingTokenizer)
        );
    }

    #[test]
    fn length_vector_of_single_bullet() {
        let v = length_vector("• Hi there.", &TokenizerHandle::mock_ws());
        assert_eq!((v.bullet_points, v.sentences, v.words), (1, 1, 2));
    }

    #[test]
    fn measure_names_parse() {
        for m in LengthMeasure::ALL {
            assert_eq!(m.as_str().parse::<LengthMeasure>(), Ok(m));
        }
        assert_eq!("chars".parse(), Ok(LengthMeasure::Characters));
        assert_eq!("bullet-points".parse(), Ok(LengthMeasure::BulletPoints));
        assert!("lines".parse::<LengthMeasure>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn characters_are_additive(a in ".{0,40}", b in ".{0,40}") {
                let joined = format!("{a}{b}");
                prop_assert_eq!(count_characters(&joined), count_characters(&a) + count_characters(&b));
            }

            #[test]
            fn punctuation_wrapping_keeps_word_count(t in "\\PC{0,60}", pre in "[ .,;:!?()\"'-]{0,5}", post in "[ .,;:!?()\"'-]{0,5}") {
                let wrapped = format!("{pre}{t}{post}");
                prop_assert_eq!(count_words(&wrapped), count_words(&t));
            }

            #[test]
            fn bullet_count_matches_scan(t in "[a-z •\u{2022}\n.]{0,80}") {
                let oracle = t.chars().filter(|c| *c == '\u{2022}').count();
                prop_assert_eq!(count_bullet_points(&t), oracle);
            }

            #[test]
            fn counting_is_pure(t in "\\PC{0,80}") {
                let tok = TokenizerHandle::mock_ws();
                prop_assert_eq!(length_vector(&t, &tok), length_vector(&t, &tok));
            }

            #[test]
            fn characters_at_least_words(t in "\\PC{1,80}") {
                prop_assert!(count_characters(&t) >= count_words(&t));
            }
        }
    }
}
