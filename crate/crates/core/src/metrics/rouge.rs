//! ROUGE-1, ROUGE-2 and summary-level ROUGE-L F1.
//!
//! Both texts are lowercased and split with the word rule of the measures
//! module. Optional Snowball (English) stemming is applied per token.

use std::collections::HashMap;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::measures;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScores {
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
}

fn tokens(text: &str, stemmer: Option<&Stemmer>) -> Vec<String> {
    measures::words(text)
        .map(|w| {
            let lower = w.to_lowercase();
            match stemmer {
                Some(s) => s.stem(&lower).into_owned(),
                None => lower,
            }
        })
        .collect()
}

fn f1(overlap: usize, cand: usize, reference: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand as f64;
    let r = overlap as f64 / reference as f64;
    2.0 * p * r / (p + r)
}

fn ngram_counts(toks: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for g in toks.windows(n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

fn ngram_f1(cand: &[String], reference: &[String], n: usize) -> f64 {
    let (c, r) = (ngram_counts(cand, n), ngram_counts(reference, n));
    let total_c: usize = c.values().sum();
    let total_r: usize = r.values().sum();
    if total_c == 0 && total_r == 0 {
        // Both too short for any n-gram: identical sequences agree fully.
        return if cand == reference { 1.0 } else { 0.0 };
    }
    let overlap: usize = c.iter().map(|(g, k)| (*k).min(r.get(g).copied().unwrap_or(0))).sum();
    f1(overlap, total_c, total_r)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge(candidate: &str, reference: &str, stemming: bool) -> Result<RougeScores, MetricError> {
    let stemmer = stemming.then(|| Stemmer::create(Algorithm::English));
    let c = tokens(candidate, stemmer.as_ref());
    let r = tokens(reference, stemmer.as_ref());
    if c.is_empty() || r.is_empty() {
        return Err(MetricError::EmptyText);
    }
    Ok(RougeScores {
        rouge1: ngram_f1(&c, &r, 1),
        rouge2: ngram_f1(&c, &r, 2),
        rouge_l: f1(lcs_len(&c, &r), c.len(), r.len()),
    })
}
