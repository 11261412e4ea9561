//! Reference-based and referenceless generation metrics.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::FluencyLM;
use crate::text::{TokenId, TokenSeq, Vocab, BOS, EOS, PAD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BleuSmoothing {
    /// Zero precisions are raised to `epsilon`.
    FloorEpsilon,
    /// `(matches + 1) / (total + 1)` for orders above one.
    AddOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BleuConfig {
    pub max_n: usize,
    pub smoothing: BleuSmoothing,
    pub epsilon: f64,
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig {
            max_n: 4,
            smoothing: BleuSmoothing::FloorEpsilon,
            epsilon: 1e-9,
        }
    }
}

fn ngram_counts(seq: &[TokenId], n: usize) -> HashMap<&[TokenId], usize> {
    let mut counts = HashMap::new();
    if n > 0 && seq.len() >= n {
        for w in seq.windows(n) {
            *counts.entry(w).or_default() += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and the candidate n-gram total.
fn clipped_overlap(candidate: &[TokenId], reference: &[TokenId], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let matches = cand
        .iter()
        .map(|(g, c)| (*c).min(refc.get(g).copied().unwrap_or(0)))
        .sum();
    (matches, candidate.len().saturating_sub(n - 1))
}

/// Sentence-level BLEU.
///
/// Orders run from 1 to `min(max_n, |candidate|)`, so a sentence always scores
/// 1 against itself. The brevity penalty is `exp(min(0, 1 - |ref| / |cand|))`.
pub fn bleu(candidate: &TokenSeq, reference: &TokenSeq, config: &BleuConfig) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    if config.max_n < 1 {
        return Err(Error::Config("BLEU max_n must be >= 1".into()));
    }
    let (c, r) = (candidate.ids(), reference.ids());
    if c.is_empty() {
        return Ok(0.0);
    }
    let orders = config.max_n.min(c.len());
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let (m, total) = clipped_overlap(c, r, n);
        let p = match config.smoothing {
            BleuSmoothing::FloorEpsilon => (m as f64 / total as f64).max(config.epsilon),
            BleuSmoothing::AddOne if n > 1 => (m as f64 + 1.0) / (total as f64 + 1.0),
            BleuSmoothing::AddOne => m as f64 / total as f64,
        };
        if p == 0.0 {
            return Ok(0.0);
        }
        log_sum += p.ln();
    }
    let bp = (1.0 - r.len() as f64 / c.len() as f64).min(0.0).exp();
    Ok(bp * (log_sum / orders as f64).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(hits: usize, cand_total: usize, ref_total: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (precision, recall) = (ratio(hits, cand_total), ratio(hits, ref_total));
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        RougeScore {
            precision,
            recall,
            f1,
        }
    }
}

pub fn rouge_n(candidate: &TokenSeq, reference: &TokenSeq, n: usize) -> RougeScore {
    assert!(n >= 1, "ROUGE-N requires n >= 1");
    let (hits, cand_total) = clipped_overlap(candidate.ids(), reference.ids(), n);
    let ref_total = reference.len().saturating_sub(n - 1);
    RougeScore::from_counts(hits, cand_total, ref_total)
}

pub fn lcs_len(a: &[TokenId], b: &[TokenId]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &TokenSeq, reference: &TokenSeq) -> RougeScore {
    let lcs = lcs_len(candidate.ids(), reference.ids());
    RougeScore::from_counts(lcs, candidate.len(), reference.len())
}

/// `exp(-logprob / |seq|)`.
pub fn perplexity(lm: &FluencyLM, seq: &TokenSeq) -> Result<f64> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok((-lm.logprob(seq) / seq.len() as f64).exp())
}

/// `exp(logprob / |seq|)` when normalized (the reciprocal of perplexity),
/// otherwise the raw sequence probability.
pub fn fluency_score(lm: &FluencyLM, seq: &TokenSeq, normalized: bool) -> Result<f64> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let lp = lm.logprob(seq);
    Ok(if normalized {
        (lp / seq.len() as f64).exp()
    } else {
        lp.exp()
    })
}

/// Signed word polarities in `[-1, 1]`; unknown words weigh 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SentimentLexicon {
    weights: HashMap<String, f64>,
}

impl SentimentLexicon {
    pub fn new<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut weights = HashMap::new();
        for (tok, w) in entries {
            let tok = tok.into();
            if !w.is_finite() || !(-1.0..=1.0).contains(&w) {
                return Err(Error::format(
                    "lexicon",
                    format!("weight {w} for {tok:?} outside [-1, 1]"),
                ));
            }
            weights.insert(tok.to_lowercase(), w);
        }
        Ok(SentimentLexicon { weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weight(&self, token: &str) -> f64 {
        self.weights.get(token).copied().unwrap_or(0.0)
    }

    /// Mean polarity over the sequence, ignoring PAD, BOS and EOS. Empty: 0.
    pub fn mean_polarity(&self, vocab: &Vocab, seq: &TokenSeq) -> f64 {
        let words: Vec<f64> = seq
            .ids()
            .iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS))
            .map(|&id| vocab.token(id).map_or(0.0, |t| self.weight(t)))
            .collect();
        if words.is_empty() {
            0.0
        } else {
            words.iter().sum::<f64>() / words.len() as f64
        }
    }

    /// One `token<TAB>weight` entry per line; blank lines and `#` comments skipped.
    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::format("lexicon", e.to_string()))?;
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (tok, w) = line.split_once('\t').ok_or_else(|| {
                Error::format(
                    "lexicon",
                    format!("line {}: expected token<TAB>weight", i + 1),
                )
            })?;
            let w: f64 = w.trim().parse().map_err(|_| {
                Error::format("lexicon", format!("line {}: bad weight {w:?}", i + 1))
            })?;
            entries.push((tok.to_string(), w));
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Mean polarity of the candidate minus mean polarity of the source.
pub fn sentiment_delta(
    lex: &SentimentLexicon,
    vocab: &Vocab,
    source: &TokenSeq,
    candidate: &TokenSeq,
) -> f64 {
    lex.mean_polarity(vocab, candidate) - lex.mean_polarity(vocab, source)
}
