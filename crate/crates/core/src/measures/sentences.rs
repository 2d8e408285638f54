//! Rule-based sentence segmentation.
//!
//! A sentence ends at a run of terminators (`.`, `!`, `?`, `…`; a run such as
//! `...` or `?!` acts as one terminator), optionally followed by closing
//! quotes or brackets, when the next non-whitespace character starts a new
//! sentence: an uppercase letter, a digit, an opening quote or bracket, or a
//! bullet symbol. A lone `.` after a known abbreviation never ends a sentence.
//! Text without any terminator is a single sentence.

/// Lowercased abbreviations (without their final period) that do not end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "gen", "col", "lt", "sgt", "capt",
    "rev", "hon", "gov", "sen", "rep", "vs", "e.g", "i.e", "cf", "approx", "no", "fig", "vol",
    "pp", "ca", "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov",
    "dec",
];

const OPENERS: &[char] = &['"', '\'', '\u{201C}', '\u{2018}', '\u{00AB}', '(', '[', '{'];
const CLOSERS: &[char] = &['"', '\'', '\u{201D}', '\u{2019}', '\u{00BB}', ')', ']', '}'];

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '\u{2026}')
}

fn starts_sentence(c: char) -> bool {
    c.is_uppercase() || c.is_numeric() || OPENERS.contains(&c) || c == super::BULLET
}

/// One sentence as a byte range into the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SentenceSpan<'a> {
    pub start: usize,
    pub end: usize,
    pub text: &'a str,
}

fn preceded_by_abbreviation(text: &str, period_at: usize) -> bool {
    let before = &text[..period_at];
    let word_start = before
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_whitespace())
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(0);
    let word = before[word_start..].trim_start_matches(|c: char| OPENERS.contains(&c));
    !word.is_empty() && ABBREVIATIONS.contains(&word.to_lowercase().as_str())
}

pub fn split_sentences(text: &str) -> Vec<SentenceSpan<'_>> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let byte_at = |i: usize| chars.get(i).map_or(text.len(), |&(b, _)| b);
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    let mut i = 0;

    while i < chars.len() {
        let (_, c) = chars[i];
        if start.is_none() {
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            start = Some(i);
        }
        if !is_terminator(c) {
            i += 1;
            continue;
        }

        let run_start = i;
        while i < chars.len() && is_terminator(chars[i].1) {
            i += 1;
        }
        let single_period = i - run_start == 1 && c == '.';
        while i < chars.len() && CLOSERS.contains(&chars[i].1) {
            i += 1;
        }
        let end = i;

        let mut next = i;
        while next < chars.len() && chars[next].1.is_whitespace() {
            next += 1;
        }
        let boundary = next > end
            && next < chars.len()
            && starts_sentence(chars[next].1)
            && !(single_period && preceded_by_abbreviation(text, byte_at(run_start)));
        if boundary {
            let s = byte_at(start.take().unwrap_or(run_start));
            let e = byte_at(end);
            spans.push(SentenceSpan { start: s, end: e, text: &text[s..e] });
            i = next;
        }
    }

    if let Some(s) = start {
        let s = byte_at(s);
        let e = s + text[s..].trim_end().len();
        if e > s {
            spans.push(SentenceSpan { start: s, end: e, text: &text[s..e] });
        }
    }
    spans
}
