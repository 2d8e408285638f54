//! Text synthesis for the mock backend: produce a summary-like text whose
//! length in a given measure is exactly the requested value.
//!
//! Words are drawn from the source document when it offers enough 5–6
//! letter words, otherwise from a fixed lorem list with the same length
//! profile. Keeping word lengths in that narrow band gives roughly 6.3
//! characters per word including separators, so character targets
//! approximated through words land close to the requested value.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::measures::{self, LengthMeasure, TokenizerHandle, BULLET};

const LOREM: &[&str] = &[
    "lorem", "ipsum", "dolor", "magna", "augue", "nulla", "justo", "porta", "fusce", "vitae",
    "risus", "felis", "massa", "metus", "lacus", "purus", "neque", "dapes", "tempor", "mauris",
    "sapien", "tellus", "turpis", "cursus",
];

const MIN_DOC_VOCAB: usize = 24;

pub(crate) fn vocabulary(document: &str) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let words: Vec<String> = measures::words(document)
        .filter(|w| w.chars().all(char::is_alphabetic) && (5..=6).contains(&w.chars().count()))
        .map(str::to_lowercase)
        .filter(|w| seen.insert(w.clone()))
        .collect();
    if words.len() >= MIN_DOC_VOCAB {
        words
    } else {
        LOREM.iter().map(|w| w.to_string()).collect()
    }
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    chars
        .next()
        .map(|c| c.to_uppercase().chain(chars).collect())
        .unwrap_or_default()
}

struct Writer<'a> {
    vocab: &'a [String],
    rng: &'a mut ChaCha8Rng,
}

impl Writer<'_> {
    fn word(&mut self) -> &str {
        let i = self.rng.random_range(0..self.vocab.len());
        &self.vocab[i]
    }

    fn sentence(&mut self, words: usize) -> String {
        let mut out = String::new();
        for i in 0..words {
            if i == 0 {
                out.push_str(&capitalize(self.word()));
            } else {
                out.push(' ');
                let w = self.word().to_string();
                out.push_str(&w);
            }
        }
        out.push('.');
        out
    }

    /// Exactly `n` words, split into sentences of 8–14 words.
    fn words(&mut self, n: usize) -> String {
        let mut sentences = Vec::new();
        let mut left = n;
        while left > 0 {
            let k = self.rng.random_range(8..=14).min(left);
            sentences.push(self.sentence(k));
            left -= k;
        }
        sentences.join(" ")
    }

    fn characters(&mut self, n: usize) -> String {
        let source = self.words(n / 4 + 4);
        let mut out: String = source.chars().take(n).collect();
        if out.ends_with(' ') {
            out.pop();
            out.push('.');
        }
        out
    }

    /// Greedy fill up to `n` tokens; exact whenever a word costing the
    /// remaining budget exists in the vocabulary.
    fn tokens(&mut self, n: usize, tokenizer: &TokenizerHandle) -> String {
        let mut by_len: Vec<&str> = self.vocab.iter().map(String::as_str).collect();
        by_len.sort_by_key(|w| (w.len(), *w));
        by_len.push("a");
        let mut text = String::new();
        loop {
            let current = tokenizer.count(&text);
            if current >= n {
                break;
            }
            let next = self.word().to_string();
            let sep = if text.is_empty() { "" } else { " " };
            let fits = |w: &str| tokenizer.count(&format!("{text}{sep}{w}")) <= n;
            let Some(chosen) = std::iter::once(next.as_str())
                .chain(by_len.iter().copied())
                .find(|w| fits(w))
                .map(str::to_string)
            else {
                break;
            };
            let chosen = if text.is_empty() { capitalize(&chosen) } else { chosen };
            text.push_str(sep);
            text.push_str(&chosen);
        }
        if !text.is_empty() && tokenizer.count(&format!("{text}.")) <= n {
            text.push('.');
        }
        text
    }

    fn sentences(&mut self, n: usize) -> String {
        (0..n)
            .map(|_| {
                let k = self.rng.random_range(10..=20);
                self.sentence(k)
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn bullets(&mut self, n: usize) -> String {
        (0..n)
            .map(|_| {
                let k = self.rng.random_range(8..=16);
                format!("{BULLET} {}", self.sentence(k))
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub(crate) fn synthesize(
    measure: LengthMeasure,
    length: usize,
    vocab: &[String],
    rng: &mut ChaCha8Rng,
    tokenizer: &TokenizerHandle,
) -> String {
    let mut w = Writer { vocab, rng };
    match measure {
        LengthMeasure::Words => w.words(length),
        LengthMeasure::Characters => w.characters(length),
        LengthMeasure::Tokens => w.tokens(length, tokenizer),
        LengthMeasure::Sentences => w.sentences(length),
        LengthMeasure::BulletPoints => w.bullets(length),
    }
}
