//! Candidate-set construction and multi-dimensional re-ranking.
//!
//! Each candidate `y` for source `x` is scored by the product
//! `p(strategies | y, x) * p(x | y) * p(y)`: strategy consistency from the
//! classifier bank, BLEU of the candidate against the *source*, and fluency
//! under the language model. Without a strategy set (the unconstrained
//! setting) the first factor is dropped.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::classify::{strategy_consistency, StrategyBank};
use crate::decode::{
    beam_decode, greedy_decode, sample_decode, DecodeConfig, DecodeMethod, Generation,
};
use crate::error::{Error, Result};
use crate::hash::derive_seed;
use crate::metrics::{bleu, fluency_score, BleuConfig};
use crate::models::{ConditionalModel, FluencyLM};
use crate::text::{StrategySet, TokenSeq, Vocab, MAX_SEQ_LEN};

/// Lower bound applied to every factor before multiplication.
pub const FACTOR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidateConfig {
    pub beam_sizes: Vec<usize>,
    pub top_k_values: Vec<usize>,
    pub top_p_values: Vec<f64>,
    pub typical_taus: Vec<f64>,
    pub include_greedy: bool,
    /// Contribute every beam hypothesis instead of only the top one.
    pub all_beam_hypotheses: bool,
    pub seed: u64,
    pub max_len: usize,
    pub temperature: f64,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        CandidateConfig {
            beam_sizes: vec![4, 5, 6],
            top_k_values: vec![30, 40, 50, 60],
            top_p_values: vec![0.80, 0.85, 0.90, 0.95],
            typical_taus: vec![0.20, 0.95],
            include_greedy: true,
            all_beam_hypotheses: false,
            seed: 0,
            max_len: MAX_SEQ_LEN,
            temperature: 1.0,
        }
    }
}

impl CandidateConfig {
    pub fn greedy_only() -> Self {
        CandidateConfig {
            beam_sizes: vec![],
            top_k_values: vec![],
            top_p_values: vec![],
            typical_taus: vec![],
            ..Default::default()
        }
    }

    fn sampling_methods(&self) -> Vec<DecodeMethod> {
        self.top_k_values
            .iter()
            .map(|&k| DecodeMethod::TopK(k))
            .chain(self.top_p_values.iter().map(|&p| DecodeMethod::TopP(p)))
            .chain(self.typical_taus.iter().map(|&t| DecodeMethod::Typical(t)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.include_greedy && self.beam_sizes.is_empty() && self.sampling_methods().is_empty()
        {
            return Err(Error::Config("no candidate generator is enabled".into()));
        }
        for b in &self.beam_sizes {
            DecodeConfig {
                method: DecodeMethod::Beam(*b),
                max_len: self.max_len,
                ..Default::default()
            }
            .validate()?;
        }
        for m in self.sampling_methods() {
            DecodeConfig {
                method: m,
                max_len: self.max_len,
                temperature: self.temperature,
                ..Default::default()
            }
            .validate()?;
        }
        Ok(())
    }
}

/// Every generation in configuration order: greedy, beams, top-k, top-p, typical.
pub fn raw_candidates<M: ConditionalModel + ?Sized>(
    model: &M,
    source: &TokenSeq,
    strategies: Option<&StrategySet>,
    config: &CandidateConfig,
) -> Result<Vec<Generation>> {
    config.validate()?;
    let mut out = Vec::new();
    if config.include_greedy {
        out.push(greedy_decode(model, source, strategies, config.max_len));
    }
    for &b in &config.beam_sizes {
        let beams = beam_decode(model, source, strategies, b, config.max_len, false);
        let take = if config.all_beam_hypotheses {
            beams.len()
        } else {
            1
        };
        out.extend(beams.into_iter().take(take));
    }
    for (i, method) in config.sampling_methods().into_iter().enumerate() {
        let cfg = DecodeConfig {
            method,
            max_len: config.max_len,
            seed: derive_seed(config.seed, &[i as u64]),
            temperature: config.temperature,
            length_normalize: false,
        };
        out.push(sample_decode(model, source, strategies, &cfg)?);
    }
    Ok(out)
}

/// [`raw_candidates`] with exact duplicates removed, first occurrence kept.
pub fn generate_candidates<M: ConditionalModel + ?Sized>(
    model: &M,
    source: &TokenSeq,
    strategies: Option<&StrategySet>,
    config: &CandidateConfig,
) -> Result<Vec<Generation>> {
    let mut seen = std::collections::HashSet::new();
    Ok(raw_candidates(model, source, strategies, config)?
        .into_iter()
        .filter(|g| seen.insert(g.tokens.clone()))
        .collect())
}

/// Which factors enter the final score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorMask {
    pub strategy: bool,
    pub similarity: bool,
    pub fluency: bool,
}

impl Default for FactorMask {
    fn default() -> Self {
        FactorMask {
            strategy: true,
            similarity: true,
            fluency: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub generation: Generation,
    pub text: String,
    /// Present only in the controlled setting.
    pub strategy_score: Option<f64>,
    pub similarity_score: f64,
    pub fluency: f64,
    /// Product of the floored factors selected by the mask.
    pub final_score: f64,
    pub factors_used: FactorMask,
    /// Set for an empty candidate.
    pub degenerate: bool,
}

impl Candidate {
    pub fn factor_count(&self) -> usize {
        [
            self.factors_used.strategy,
            self.factors_used.similarity,
            self.factors_used.fluency,
        ]
        .iter()
        .filter(|b| **b)
        .count()
    }
}

/// Scores candidates for one source.
#[derive(Debug, Clone, Copy)]
pub struct Scorer<'a> {
    pub vocab: &'a Vocab,
    pub bank: Option<&'a StrategyBank>,
    pub lm: &'a FluencyLM,
    pub bleu: BleuConfig,
    /// Length-normalized fluency (`1/PPL`) instead of the raw sequence probability.
    pub normalized_fluency: bool,
    pub mask: FactorMask,
}

impl<'a> Scorer<'a> {
    pub fn new(vocab: &'a Vocab, bank: Option<&'a StrategyBank>, lm: &'a FluencyLM) -> Self {
        Scorer {
            vocab,
            bank,
            lm,
            bleu: BleuConfig::default(),
            normalized_fluency: true,
            mask: FactorMask::default(),
        }
    }

    pub fn score(
        &self,
        index: usize,
        generation: Generation,
        source: &TokenSeq,
        source_text: &str,
        strategies: Option<&StrategySet>,
    ) -> Result<Candidate> {
        let content = generation.content();
        let text = self.vocab.detokenize(&content)?;
        let degenerate = content.is_empty();
        let strategy_score = match strategies {
            Some(set) => {
                let bank = self.bank.ok_or(Error::Untrained)?;
                Some(strategy_consistency(bank, source_text, &text, set)?)
            }
            None => None,
        };
        let similarity_score = bleu(&content, source, &self.bleu)?;
        let fluency = if degenerate {
            FACTOR_FLOOR
        } else {
            fluency_score(self.lm, &content.with_eos(), self.normalized_fluency)?
        };
        let factors_used = FactorMask {
            strategy: self.mask.strategy && strategy_score.is_some(),
            ..self.mask
        };
        let mut final_score = 1.0;
        if let Some(s) = strategy_score.filter(|_| factors_used.strategy) {
            final_score *= s.max(FACTOR_FLOOR);
        }
        if factors_used.similarity {
            final_score *= similarity_score.max(FACTOR_FLOOR);
        }
        if factors_used.fluency {
            final_score *= fluency.max(FACTOR_FLOOR);
        }
        Ok(Candidate {
            index,
            generation,
            text,
            strategy_score,
            similarity_score,
            fluency,
            final_score,
            factors_used,
            degenerate,
        })
    }

    pub fn score_all(
        &self,
        generations: Vec<Generation>,
        source: &TokenSeq,
        source_text: &str,
        strategies: Option<&StrategySet>,
    ) -> Result<Vec<Candidate>> {
        generations
            .into_iter()
            .enumerate()
            .map(|(i, g)| self.score(i, g, source, source_text, strategies))
            .collect()
    }
}

/// Free-function form of [`Scorer::score`] with default options.
#[allow(clippy::too_many_arguments)]
pub fn score_candidate(
    generation: Generation,
    source: &TokenSeq,
    source_text: &str,
    strategies: Option<&StrategySet>,
    bank: Option<&StrategyBank>,
    lm: &FluencyLM,
    vocab: &Vocab,
    bleu_cfg: &BleuConfig,
) -> Result<Candidate> {
    Scorer {
        bleu: *bleu_cfg,
        ..Scorer::new(vocab, bank, lm)
    }
    .score(0, generation, source, source_text, strategies)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankResult {
    pub winner: Candidate,
    /// Sorted by final score, descending.
    pub all: Vec<Candidate>,
    pub tie_note: Option<String>,
}

/// Sorts by final score; ties go to the higher similarity, then the lower index.
pub fn rerank(mut candidates: Vec<Candidate>) -> Result<RerankResult> {
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    candidates.sort_by(|a, b| {
        b.final_score
            .total_cmp(&a.final_score)
            .then_with(|| b.similarity_score.total_cmp(&a.similarity_score))
            .then_with(|| a.index.cmp(&b.index))
    });
    let tie_note = match candidates.get(1) {
        Some(second) if second.final_score == candidates[0].final_score => Some(format!(
            "candidates {} and {} tie on final score; resolved by similarity then index",
            candidates[0].index, second.index
        )),
        _ => None,
    };
    Ok(RerankResult {
        winner: candidates[0].clone(),
        all: candidates,
        tie_note,
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| v.to_string())
}

/// Per-candidate factor breakdown, one row per candidate.
pub fn write_trace(
    id: &str,
    result: &RerankResult,
    mut w: impl Write,
    header: bool,
) -> std::io::Result<()> {
    if header {
        writeln!(
            w,
            "id\tcandidate\tmethod\tstrategy\tsimilarity\tfluency\tfinal\twinner\ttext"
        )?;
    }
    for c in &result.all {
        writeln!(
            w,
            "{id}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            c.index,
            c.generation.method_tag,
            fmt_opt(c.strategy_score.filter(|_| c.factors_used.strategy)),
            if c.factors_used.similarity {
                c.similarity_score.to_string()
            } else {
                "-".into()
            },
            if c.factors_used.fluency {
                c.fluency.to_string()
            } else {
                "-".into()
            },
            c.final_score,
            u8::from(c.index == result.winner.index),
            c.text
        )?;
    }
    Ok(())
}
