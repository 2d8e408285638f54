//! Token counting.
//!
//! Two tokenizers are available: a byte-pair-encoding model loaded from a
//! `tokenizer.json` definition (vocabulary + merge rules), and the built-in
//! `mock-ws` tokenizer for tests. Counts never include begin/end-of-sequence
//! markers a post-processor would add, so the empty string is 0 tokens.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

pub const MOCK_WS_ID: &str = "mock-ws";

/// Word-character runs longer than this are split into several mock tokens.
const MOCK_SUBWORD_CHARS: usize = 5;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("reading tokenizer definition {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing tokenizer definition: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported tokenizer definition: {0}")]
    Unsupported(String),
}

/// Shared, immutable tokenizer. Cloning is cheap.
#[derive(Clone)]
pub struct TokenizerHandle {
    id: Arc<str>,
    kind: Arc<Kind>,
}

enum Kind {
    MockWs,
    Bpe(BpeTokenizer),
}

impl fmt::Debug for TokenizerHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TokenizerHandle").field("id", &self.id).finish()
    }
}

impl TokenizerHandle {
    /// Whitespace/punctuation splitter: every punctuation character is one
    /// token and a run of `n` word characters costs `ceil(n / 5)` tokens.
    pub fn mock_ws() -> Self {
        Self { id: MOCK_WS_ID.into(), kind: Arc::new(Kind::MockWs) }
    }

    pub fn from_bpe(id: impl Into<String>, bpe: BpeTokenizer) -> Self {
        Self { id: id.into().into(), kind: Arc::new(Kind::Bpe(bpe)) }
    }

    /// `mock-ws` selects the built-in mock; anything else is a path to a
    /// `tokenizer.json` file.
    pub fn load(source: &str) -> Result<Self, TokenizerError> {
        if source == MOCK_WS_ID {
            return Ok(Self::mock_ws());
        }
        let bpe = BpeTokenizer::from_file(Path::new(source))?;
        Ok(Self::from_bpe(source, bpe))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn count(&self, text: &str) -> usize {
        match &*self.kind {
            Kind::MockWs => mock_ws_count(text),
            Kind::Bpe(bpe) => bpe.count(text),
        }
    }
}

fn mock_ws_count(text: &str) -> usize {
    let mut tokens = 0;
    let mut run = 0usize;
    for c in text.chars() {
        if c.is_alphanumeric() || c == '_' {
            run += 1;
            continue;
        }
        tokens += run.div_ceil(MOCK_SUBWORD_CHARS);
        run = 0;
        if !c.is_whitespace() {
            tokens += 1;
        }
    }
    tokens + run.div_ceil(MOCK_SUBWORD_CHARS)
}

/// GPT-2 byte-to-unicode table used by byte-level BPE vocabularies.
static BYTE_CHARS: LazyLock<[char; 256]> = LazyLock::new(|| {
    let mut table = ['\0'; 256];
    let mut extra = 0u32;
    for b in 0..=255u8 {
        let printable = (b'!'..=b'~').contains(&b) || (0xA1..=0xAC).contains(&b) || b >= 0xAE;
        table[b as usize] = if printable {
            char::from(b)
        } else {
            extra += 1;
            char::from_u32(255 + extra).expect("valid code point")
        };
    }
    table
});

const GPT2_PATTERN: &str =
    r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+";
const TRAILING_WS_LOOKAHEAD: &str = r"\s+(?!\S)|";

/// Regex splitter. The `\s+(?!\S)` alternative is not expressible without
/// lookaround, so it is emulated: a whitespace-only match followed by
/// non-whitespace gives its last character back to the next piece.
#[derive(Debug)]
struct Splitter {
    re: Regex,
    emulate_lookahead: bool,
}

impl Splitter {
    fn new(pattern: &str) -> Result<Self, TokenizerError> {
        let emulate_lookahead = pattern.contains(TRAILING_WS_LOOKAHEAD);
        let pattern = pattern.replace(TRAILING_WS_LOOKAHEAD, "");
        let re = Regex::new(&pattern)
            .map_err(|e| TokenizerError::Unsupported(format!("split pattern: {e}")))?;
        Ok(Self { re, emulate_lookahead })
    }

    fn split<'t>(&self, text: &'t str) -> Vec<&'t str> {
        let mut pieces = Vec::new();
        let mut pos = 0;
        while pos < text.len() {
            let Some(m) = self.re.find_at(text, pos) else { break };
            let mut end = m.end();
            if m.start() > pos {
                // Isolated behaviour keeps unmatched gaps as their own piece.
                pieces.push(&text[pos..m.start()]);
            }
            let piece = m.as_str();
            if self.emulate_lookahead
                && piece.chars().all(char::is_whitespace)
                && piece.chars().count() > 1
                && text[end..].chars().next().is_some_and(|c| !c.is_whitespace())
            {
                end -= piece.chars().next_back().map_or(0, char::len_utf8);
            }
            if end == m.start() {
                end = m.start() + text[m.start()..].chars().next().map_or(1, char::len_utf8);
            }
            pieces.push(&text[m.start()..end]);
            pos = end;
        }
        if pos < text.len() {
            pieces.push(&text[pos..]);
        }
        pieces
    }
}

#[derive(Debug)]
enum PreTokenizer {
    ByteLevel { add_prefix_space: bool, splitter: Option<Splitter> },
    Whitespace(Splitter),
}

/// Byte-pair-encoding tokenizer read from a `tokenizer.json` definition.
#[derive(Debug)]
pub struct BpeTokenizer {
    vocab: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
    pre: PreTokenizer,
    ignore_merges: bool,
    added: Option<Regex>,
}

#[derive(Deserialize)]
struct Definition {
    #[serde(default)]
    added_tokens: Vec<AddedToken>,
    #[serde(default)]
    normalizer: Option<Value>,
    #[serde(default)]
    pre_tokenizer: Option<Value>,
    model: ModelDef,
}

#[derive(Deserialize)]
struct AddedToken {
    content: String,
}

#[derive(Deserialize)]
struct ModelDef {
    #[serde(rename = "type", default)]
    kind: Option<String>,
    vocab: HashMap<String, u32>,
    merges: Vec<Value>,
    #[serde(default)]
    ignore_merges: bool,
}

impl BpeTokenizer {
    pub fn from_file(path: &Path) -> Result<Self, TokenizerError> {
        let raw = std::fs::read_to_string(path).map_err(|source| TokenizerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&raw)
    }

    pub fn from_json(raw: &str) -> Result<Self, TokenizerError> {
        let def: Definition = serde_json::from_str(raw)?;
        if let Some(kind) = def.model.kind.as_deref() {
            if kind != "BPE" {
                return Err(TokenizerError::Unsupported(format!("model type {kind}")));
            }
        }
        if def.normalizer.as_ref().is_some_and(|n| !n.is_null()) {
            return Err(TokenizerError::Unsupported("normalizers".into()));
        }

        let mut ranks = HashMap::with_capacity(def.model.merges.len());
        for (rank, merge) in def.model.merges.iter().enumerate() {
            let pair = match merge {
                Value::String(s) => s
                    .split_once(' ')
                    .map(|(a, b)| (a.to_string(), b.to_string())),
                Value::Array(parts) => match parts.as_slice() {
                    [Value::String(a), Value::String(b)] => Some((a.clone(), b.clone())),
                    _ => None,
                },
                _ => None,
            }
            .ok_or_else(|| TokenizerError::Unsupported(format!("merge entry {merge}")))?;
            ranks.entry(pair).or_insert(rank);
        }

        let pre = parse_pre_tokenizer(def.pre_tokenizer.as_ref())?;

        let added = if def.added_tokens.is_empty() {
            None
        } else {
            let mut contents: Vec<&str> = def.added_tokens.iter().map(|t| t.content.as_str()).collect();
            contents.sort_by_key(|c| std::cmp::Reverse(c.len()));
            let alt = contents.iter().map(|c| regex::escape(c)).collect::<Vec<_>>().join("|");
            Some(Regex::new(&alt).map_err(|e| TokenizerError::Unsupported(e.to_string()))?)
        };

        Ok(Self { vocab: def.model.vocab, ranks, pre, ignore_merges: def.model.ignore_merges, added })
    }

    pub fn count(&self, text: &str) -> usize {
        let Some(added) = &self.added else {
            return self.count_plain(text);
        };
        let mut total = 0;
        let mut pos = 0;
        for m in added.find_iter(text) {
            total += self.count_plain(&text[pos..m.start()]) + 1;
            pos = m.end();
        }
        total + self.count_plain(&text[pos..])
    }

    fn count_plain(&self, text: &str) -> usize {
        if text.is_empty() {
            return 0;
        }
        match &self.pre {
            PreTokenizer::ByteLevel { add_prefix_space, splitter } => {
                let owned;
                let text = if *add_prefix_space && !text.starts_with(' ') {
                    owned = format!(" {text}");
                    owned.as_str()
                } else {
                    text
                };
                let pieces = match splitter {
                    Some(s) => s.split(text),
                    None => vec![text],
                };
                pieces
                    .into_iter()
                    .map(|p| {
                        let symbols = p.bytes().map(|b| BYTE_CHARS[b as usize].to_string()).collect();
                        self.merge_count(symbols)
                    })
                    .sum()
            }
            PreTokenizer::Whitespace(splitter) => splitter
                .split(text)
                .into_iter()
                .filter(|p| !p.trim().is_empty())
                .map(|p| self.merge_count(p.chars().map(String::from).collect()))
                .sum(),
        }
    }

    fn merge_count(&self, mut symbols: Vec<String>) -> usize {
        if self.ignore_merges && symbols.len() > 1 {
            let joined: String = symbols.concat();
            if self.vocab.contains_key(&joined) {
                return 1;
            }
        }
        loop {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, i)))
                .min();
            let Some((rank, _)) = best else { break };
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len()
                    && self.ranks.get(&(symbols[i].clone(), symbols[i + 1].clone())) == Some(&rank)
                {
                    merged.push(format!("{}{}", symbols[i], symbols[i + 1]));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols.len()
    }
}

fn parse_pre_tokenizer(value: Option<&Value>) -> Result<PreTokenizer, TokenizerError> {
    let unsupported = |what: &str| TokenizerError::Unsupported(format!("pre-tokenizer {what}"));
    let Some(value) = value.filter(|v| !v.is_null()) else {
        return Ok(PreTokenizer::ByteLevel { add_prefix_space: false, splitter: None });
    };
    let kind = value.get("type").and_then(Value::as_str).unwrap_or_default();
    match kind {
        "ByteLevel" => {
            let add_prefix_space = value.get("add_prefix_space").and_then(Value::as_bool).unwrap_or(false);
            let use_regex = value.get("use_regex").and_then(Value::as_bool).unwrap_or(true);
            let splitter = use_regex.then(|| Splitter::new(GPT2_PATTERN)).transpose()?;
            Ok(PreTokenizer::ByteLevel { add_prefix_space, splitter })
        }
        "Whitespace" => Ok(PreTokenizer::Whitespace(Splitter::new(r"\w+|[^\w\s]+")?)),
        "WhitespaceSplit" => Ok(PreTokenizer::Whitespace(Splitter::new(r"\S+")?)),
        "Sequence" => {
            let steps = value
                .get("pretokenizers")
                .and_then(Value::as_array)
                .ok_or_else(|| unsupported("Sequence without pretokenizers"))?;
            // The common layout is Split(regex) followed by ByteLevel(use_regex = false).
            match steps.as_slice() {
                [split, byte_level]
                    if split.get("type").and_then(Value::as_str) == Some("Split")
                        && byte_level.get("type").and_then(Value::as_str) == Some("ByteLevel") =>
                {
                    let pattern = split
                        .pointer("/pattern/Regex")
                        .and_then(Value::as_str)
                        .ok_or_else(|| unsupported("Split without a Regex pattern"))?;
                    if split.get("invert").and_then(Value::as_bool).unwrap_or(false) {
                        return Err(unsupported("inverted Split"));
                    }
                    let add_prefix_space =
                        byte_level.get("add_prefix_space").and_then(Value::as_bool).unwrap_or(false);
                    Ok(PreTokenizer::ByteLevel { add_prefix_space, splitter: Some(Splitter::new(pattern)?) })
                }
                [only] => parse_pre_tokenizer(Some(only)),
                _ => Err(unsupported("sequence layout")),
            }
        }
        other => Err(unsupported(other)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_ws_rules() {
        let t = TokenizerHandle::mock_ws();
        assert_eq!(t.count(""), 0);
        assert_eq!(t.count("   "), 0);
        assert_eq!(t.count("hello"), 1);
        assert_eq!(t.count("summary"), 2);
        assert_eq!(t.count("Hello, world!"), 4);
        assert_eq!(t.count("a b c"), 3);
        assert_eq!(t.id(), MOCK_WS_ID);
    }

    #[test]
    fn byte_table_is_bijective() {
        let mut seen: Vec<char> = BYTE_CHARS.to_vec();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 256);
        assert_eq!(BYTE_CHARS[b' ' as usize], '\u{0120}');
        assert_eq!(BYTE_CHARS[b'a' as usize], 'a');
    }

    #[test]
    fn lookahead_emulation_matches_gpt2_split() {
        let s = Splitter::new(GPT2_PATTERN).unwrap();
        assert_eq!(s.split("Hello  world"), vec!["Hello", " ", " world"]);
        assert_eq!(s.split("it's 42!"), vec!["it", "'s", " 42", "!"]);
        assert_eq!(s.split("end  "), vec!["end", "  "]);
    }

    fn tiny() -> BpeTokenizer {
        let def = serde_json::json!({
            "added_tokens": [{"id": 9, "content": "<|eot|>", "special": true}],
            "normalizer": null,
            "pre_tokenizer": {"type": "ByteLevel", "add_prefix_space": false, "use_regex": true},
            "model": {
                "type": "BPE",
                "vocab": {"h": 0, "e": 1, "l": 2, "o": 3, "Ġ": 4, "he": 5, "ll": 6, "hell": 7, "hello": 8, "Ġhello": 10},
                "merges": ["h e", "l l", "he ll", "hell o", ["Ġ", "hello"]]
            }
        });
        BpeTokenizer::from_json(&def.to_string()).unwrap()
    }

    #[test]
    fn bpe_merges_by_rank() {
        let bpe = tiny();
        assert_eq!(bpe.count(""), 0);
        assert_eq!(bpe.count("hello"), 1);
        assert_eq!(bpe.count("hello hello"), 2);
        assert_eq!(bpe.count("hel"), 2);
        assert_eq!(bpe.count("olleh"), 4);
        assert_eq!(bpe.count("hello<|eot|>"), 2);
    }

    #[test]
    fn rejects_unknown_models() {
        let def = serde_json::json!({"model": {"type": "Unigram", "vocab": {}, "merges": []}});
        assert!(matches!(
            BpeTokenizer::from_json(&def.to_string()),
            Err(TokenizerError::Unsupported(_))
        ));
    }
}
