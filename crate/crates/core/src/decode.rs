//! Greedy search, beam search and the per-step stochastic filters.
//!
//! Every decoder reads one [`TokenDistribution`] per step from a
//! [`ConditionalModel`] and stops at EOS or after `max_len` tokens. The
//! recorded log-probability of a generation is always measured under the
//! model's unfiltered distribution, so generations from different methods are
//! comparable.
//!
//! ```
//! use reframe::decode::filter_top_k;
//! use reframe::models::TokenDistribution;
//!
//! let d = TokenDistribution::new(vec![0.5, 0.3, 0.2]).unwrap();
//! let kept = filter_top_k(&d, 2);
//! for (p, want) in kept.probs().iter().zip([0.625, 0.375, 0.0]) {
//!     assert!((p - want).abs() < 1e-12);
//! }
//! ```

use std::cmp::Ordering;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ConditionalModel, TokenDistribution};
use crate::text::{StrategySet, TokenId, TokenSeq, EOS, MAX_SEQ_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMethod {
    Greedy,
    Beam(usize),
    /// Sampling from the full (temperature-adjusted) distribution.
    Sample,
    TopK(usize),
    TopP(f64),
    Typical(f64),
}

impl DecodeMethod {
    pub fn is_sampling(&self) -> bool {
        !matches!(self, DecodeMethod::Greedy | DecodeMethod::Beam(_))
    }
}

impl fmt::Display for DecodeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeMethod::Greedy => write!(f, "greedy"),
            DecodeMethod::Beam(b) => write!(f, "beam{b}"),
            DecodeMethod::Sample => write!(f, "sample"),
            DecodeMethod::TopK(k) => write!(f, "top_k{k}"),
            DecodeMethod::TopP(p) => write!(f, "top_p{p}"),
            DecodeMethod::Typical(t) => write!(f, "typical{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub method: DecodeMethod,
    pub max_len: usize,
    pub seed: u64,
    pub temperature: f64,
    /// Rank beam hypotheses by mean rather than summed log-probability.
    pub length_normalize: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            method: DecodeMethod::Greedy,
            max_len: MAX_SEQ_LEN,
            seed: 0,
            temperature: 1.0,
            length_normalize: false,
        }
    }
}

impl DecodeConfig {
    pub fn sampling(method: DecodeMethod, max_len: usize, seed: u64) -> Self {
        DecodeConfig {
            method,
            max_len,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self.method {
            DecodeMethod::Beam(0) => return bad("beam width must be >= 1".into()),
            DecodeMethod::TopK(0) => return bad("top-k requires k >= 1".into()),
            DecodeMethod::TopP(p) if !(p > 0.0 && p <= 1.0) => {
                return bad(format!("top-p requires 0 < p <= 1, got {p}"))
            }
            DecodeMethod::Typical(t) if !(t > 0.0 && t <= 1.0) => {
                return bad(format!("typical sampling requires 0 < tau <= 1, got {t}"))
            }
            _ => {}
        }
        if self.max_len < 1 {
            return bad("max_len must be >= 1".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be > 0, got {}", self.temperature));
        }
        Ok(())
    }
}

/// One decoded sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: TokenSeq,
    /// Sum of chosen-step log-probabilities under the unfiltered model.
    pub logprob: f64,
    pub method_tag: String,
}

impl Generation {
    /// Tokens without the terminating EOS.
    pub fn content(&self) -> TokenSeq {
        self.tokens.without_eos()
    }
}

pub fn greedy_decode<M: ConditionalModel + ?Sized>(
    model: &M,
    source: &TokenSeq,
    strategies: Option<&StrategySet>,
    max_len: usize,
) -> Generation {
    let mut tokens = TokenSeq::new();
    let mut logprob = 0.0;
    while tokens.len() < max_len {
        let d = model.next_distribution(source, strategies, &tokens);
        let tok = d.argmax();
        logprob += d.prob(tok).ln();
        tokens.push(tok);
        if tok == EOS {
            break;
        }
    }
    Generation {
        tokens,
        logprob,
        method_tag: DecodeMethod::Greedy.to_string(),
    }
}

struct Hyp {
    tokens: Vec<TokenId>,
    logprob: f64,
}

impl Hyp {
    fn score(&self, length_normalize: bool) -> f64 {
        if length_normalize && !self.tokens.is_empty() {
            self.logprob / self.tokens.len() as f64
        } else {
            self.logprob
        }
    }
}

fn rank(a: &Hyp, b: &Hyp, length_normalize: bool) -> Ordering {
    b.score(length_normalize)
        .total_cmp(&a.score(length_normalize))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Length-synchronous beam search over summed log-probabilities.
///
/// Hypotheses that emit EOS leave the beam and are frozen. The result holds at
/// most `width` generations ordered by score (descending), then by token ids.
pub fn beam_decode<M: ConditionalModel + ?Sized>(
    model: &M,
    source: &TokenSeq,
    strategies: Option<&StrategySet>,
    width: usize,
    max_len: usize,
    length_normalize: bool,
) -> Vec<Generation> {
    assert!(width >= 1, "beam width must be >= 1");
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        logprob: 0.0,
    }];
    let mut finished: Vec<Hyp> = Vec::new();
    for _ in 0..max_len {
        // (parent, token, logprob); children of distinct parents are distinct,
        // so the ordering below is total
        let mut pool: Vec<(usize, TokenId, f64)> =
            Vec::with_capacity(live.len() * model.vocab_size());
        for (i, h) in live.iter().enumerate() {
            let prefix = TokenSeq::from(h.tokens.clone());
            let d = model.next_distribution(source, strategies, &prefix);
            pool.extend(
                d.support()
                    .map(|tok| (i, tok, h.logprob + d.prob(tok).ln())),
            );
        }
        let len = live[0].tokens.len() + 1;
        let cmp = |a: &(usize, TokenId, f64), b: &(usize, TokenId, f64)| {
            let (sa, sb) = if length_normalize {
                (a.2 / len as f64, b.2 / len as f64)
            } else {
                (a.2, b.2)
            };
            sb.total_cmp(&sa)
                .then_with(|| live[a.0].tokens.cmp(&live[b.0].tokens))
                .then_with(|| a.1.cmp(&b.1))
        };
        if pool.len() > width {
            pool.select_nth_unstable_by(width - 1, cmp);
            pool.truncate(width);
        }
        pool.sort_by(cmp);
        let next: Vec<Hyp> = pool
            .into_iter()
            .map(|(i, tok, logprob)| {
                let mut tokens = Vec::with_capacity(len);
                tokens.extend_from_slice(&live[i].tokens);
                tokens.push(tok);
                Hyp { tokens, logprob }
            })
            .collect();
        live.clear();
        for h in next {
            if h.tokens.last() == Some(&EOS) {
                finished.push(h);
            } else {
                live.push(h);
            }
        }
        if live.is_empty() {
            break;
        }
    }
    finished.extend(live);
    finished.sort_by(|a, b| rank(a, b, length_normalize));
    finished.truncate(width);
    let tag = DecodeMethod::Beam(width).to_string();
    finished
        .into_iter()
        .map(|h| Generation {
            tokens: TokenSeq::from(h.tokens),
            logprob: h.logprob,
            method_tag: tag.clone(),
        })
        .collect()
}

/// Token ids ordered by probability descending, lowest id first on ties.
fn by_probability(dist: &TokenDistribution) -> Vec<TokenId> {
    let p = dist.probs();
    let mut ids: Vec<TokenId> = dist.support().collect();
    ids.sort_by(|&a, &b| p[b as usize].total_cmp(&p[a as usize]).then(a.cmp(&b)));
    ids
}

/// Keeps `kept` (in selection order) and renormalizes; returns the input
/// unchanged when the whole support survives.
fn restrict(dist: &TokenDistribution, kept: &[TokenId]) -> TokenDistribution {
    if kept.len() == dist.support().count() {
        return dist.clone();
    }
    let mass: f64 = kept.iter().map(|&t| dist.prob(t)).sum();
    let mut probs = vec![0.0; dist.len()];
    for &t in kept {
        probs[t as usize] = dist.prob(t) / mass;
    }
    TokenDistribution::from_raw(probs)
}

/// Smallest prefix of `order` whose cumulative mass reaches `threshold`.
fn mass_prefix(dist: &TokenDistribution, order: &[TokenId], threshold: f64) -> usize {
    let mut cum = 0.0;
    for (i, &t) in order.iter().enumerate() {
        cum += dist.prob(t);
        if cum >= threshold {
            return i + 1;
        }
    }
    order.len()
}

pub fn filter_top_k(dist: &TokenDistribution, k: usize) -> TokenDistribution {
    assert!(k >= 1, "top-k requires k >= 1");
    let order = by_probability(dist);
    restrict(dist, &order[..k.min(order.len())])
}

pub fn filter_top_p(dist: &TokenDistribution, p: f64) -> TokenDistribution {
    assert!(p > 0.0 && p <= 1.0, "top-p requires 0 < p <= 1");
    let order = by_probability(dist);
    let n = mass_prefix(dist, &order, p);
    restrict(dist, &order[..n])
}

/// Locally typical filtering: keeps the tokens whose surprisal is closest to
/// the entropy until `tau` of the mass is covered.
pub fn filter_typical(dist: &TokenDistribution, tau: f64) -> TokenDistribution {
    assert!(
        tau > 0.0 && tau <= 1.0,
        "typical sampling requires 0 < tau <= 1"
    );
    let h = dist.entropy();
    let dev = |t: TokenId| (-dist.prob(t).ln() - h).abs();
    let mut order: Vec<TokenId> = dist.support().collect();
    order.sort_by(|&a, &b| dev(a).total_cmp(&dev(b)).then(a.cmp(&b)));
    let n = mass_prefix(dist, &order, tau);
    restrict(dist, &order[..n])
}

/// `probs ∝ p^(1/T)`; identity at `T = 1`.
pub fn apply_temperature(dist: &TokenDistribution, temperature: f64) -> TokenDistribution {
    if temperature == 1.0 {
        return dist.clone();
    }
    let max_ln = dist.prob(dist.argmax()).ln();
    let weights = dist
        .probs()
        .iter()
        .map(|&p| {
            if p > 0.0 {
                ((p.ln() - max_ln) / temperature).exp()
            } else {
                0.0
            }
        })
        .collect();
    TokenDistribution::from_weights(weights).expect("argmax keeps weight 1")
}

pub fn apply_filter(dist: &TokenDistribution, method: DecodeMethod) -> TokenDistribution {
    match method {
        DecodeMethod::TopK(k) => filter_top_k(dist, k),
        DecodeMethod::TopP(p) => filter_top_p(dist, p),
        DecodeMethod::Typical(t) => filter_typical(dist, t),
        _ => dist.clone(),
    }
}

/// Inverse-CDF draw over token-id order.
pub fn sample_index(dist: &TokenDistribution, u: f64) -> TokenId {
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in dist.probs().iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last = i;
            if u < cum {
                return i as TokenId;
            }
        }
    }
    last as TokenId
}

/// Ancestral sampling with temperature and the configured filter.
pub fn sample_decode<M: ConditionalModel + ?Sized>(
    model: &M,
    source: &TokenSeq,
    strategies: Option<&StrategySet>,
    config: &DecodeConfig,
) -> Result<Generation> {
    config.validate()?;
    if !config.method.is_sampling() {
        return Err(Error::Config(format!(
            "{} is not a sampling method",
            config.method
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tokens = TokenSeq::new();
    let mut logprob = 0.0;
    while tokens.len() < config.max_len {
        let d = model.next_distribution(source, strategies, &tokens);
        let filtered = apply_filter(&apply_temperature(&d, config.temperature), config.method);
        let tok = sample_index(&filtered, rng.gen::<f64>());
        logprob += d.prob(tok).ln();
        tokens.push(tok);
        if tok == EOS {
            break;
        }
    }
    Ok(Generation {
        tokens,
        logprob,
        method_tag: config.method.to_string(),
    })
}

/// Dispatches on the configured method; beam search yields its top hypothesis.
pub fn decode<M: ConditionalModel + ?Sized>(
    model: &M,
    source: &TokenSeq,
    strategies: Option<&StrategySet>,
    config: &DecodeConfig,
) -> Result<Generation> {
    config.validate()?;
    match config.method {
        DecodeMethod::Greedy => Ok(greedy_decode(model, source, strategies, config.max_len)),
        DecodeMethod::Beam(b) => Ok(beam_decode(
            model,
            source,
            strategies,
            b,
            config.max_len,
            config.length_normalize,
        )
        .into_iter()
        .next()
        .expect("beam search returns at least one hypothesis")),
        _ => sample_decode(model, source, strategies, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(p: &[f64]) -> TokenDistribution {
        TokenDistribution::new(p.to_vec()).unwrap()
    }

    fn close(d: &TokenDistribution, want: &[f64]) -> bool {
        d.len() == want.len()
            && d.probs()
                .iter()
                .zip(want)
                .all(|(a, b)| (a - b).abs() < 1e-12)
    }

    /// Deterministic chain: BOS -> 4 -> 5 -> EOS over a 6-token vocabulary.
    struct Chain;

    impl ConditionalModel for Chain {
        fn vocab_size(&self) -> usize {
            6
        }
        fn next_distribution(
            &self,
            _: &TokenSeq,
            _: Option<&StrategySet>,
            prefix: &TokenSeq,
        ) -> TokenDistribution {
            let next = match prefix.last() {
                None => 4,
                Some(4) => 5,
                _ => EOS,
            };
            let mut p = vec![0.0; 6];
            p[next as usize] = 1.0;
            TokenDistribution::new(p).unwrap()
        }
    }

    struct AlwaysEos;

    impl ConditionalModel for AlwaysEos {
        fn vocab_size(&self) -> usize {
            4
        }
        fn next_distribution(
            &self,
            _: &TokenSeq,
            _: Option<&StrategySet>,
            _: &TokenSeq,
        ) -> TokenDistribution {
            dist(&[0.0, 0.0, 1.0, 0.0])
        }
    }

    #[test]
    fn greedy_on_always_eos() {
        let g = greedy_decode(&AlwaysEos, &TokenSeq::new(), None, 10);
        assert_eq!(g.tokens.ids(), &[EOS]);
        assert!(g.content().is_empty());
        assert_eq!(g.logprob, 0.0);
    }

    #[test]
    fn greedy_follows_chain() {
        let g = greedy_decode(&Chain, &TokenSeq::new(), None, 10);
        assert_eq!(g.content().ids(), &[4, 5]);
        let g = greedy_decode(&Chain, &TokenSeq::new(), None, 1);
        assert_eq!(g.tokens.ids(), &[4]);
    }

    #[test]
    fn top_k_cases() {
        let d = dist(&[0.5, 0.3, 0.2]);
        assert_eq!(filter_top_k(&d, 3), d);
        assert_eq!(filter_top_k(&d, 10), d);
        assert!(close(&filter_top_k(&d, 2), &[0.625, 0.375, 0.0]));
        assert_eq!(filter_top_k(&d, 1).probs(), &[1.0, 0.0, 0.0]);
        // tie on 0.4: lowest id wins
        assert_eq!(
            filter_top_k(&dist(&[0.2, 0.4, 0.4]), 1).probs(),
            &[0.0, 1.0, 0.0]
        );
    }

    #[test]
    fn top_p_cases() {
        let d = dist(&[0.5, 0.3, 0.2]);
        assert_eq!(filter_top_p(&d, 1.0), d);
        assert!(close(&filter_top_p(&d, 0.7), &[0.625, 0.375, 0.0]));
        assert_eq!(filter_top_p(&d, 0.4).probs(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn typical_on_uniform_keeps_id_order() {
        let d = dist(&[0.25; 4]);
        assert_eq!(filter_typical(&d, 0.5).probs(), &[0.5, 0.5, 0.0, 0.0]);
        assert_eq!(filter_typical(&d, 1.0), d);
    }

    #[test]
    fn typical_hand_computed() {
        // H = -(2 * 0.4 ln 0.4 + 0.2 ln 0.2) = 1.05492...
        // deviations: |0.91629 - H| = 0.13863 for both 0.4s, |1.60944 - H| = 0.55452
        let d = dist(&[0.4, 0.4, 0.2]);
        let h = -(2.0 * 0.4 * 0.4f64.ln() + 0.2 * 0.2f64.ln());
        assert!((d.entropy() - h).abs() < 1e-15);
        assert_eq!(filter_typical(&d, 0.3).probs(), &[1.0, 0.0, 0.0]);
        assert_eq!(filter_typical(&d, 0.8).probs(), &[0.5, 0.5, 0.0]);
        assert_eq!(filter_typical(&d, 0.81), d);
    }

    #[test]
    fn temperature() {
        let d = dist(&[0.5, 0.3, 0.2]);
        assert_eq!(apply_temperature(&d, 1.0), d);
        let sharp = apply_temperature(&d, 0.5);
        let z = 0.25 + 0.09 + 0.04;
        for (got, w) in sharp.probs().iter().zip([0.25, 0.09, 0.04]) {
            assert!((got - w / z).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_rejects_non_sampling_method() {
        let cfg = DecodeConfig::default();
        assert!(sample_decode(&Chain, &TokenSeq::new(), None, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        for m in [
            DecodeMethod::Beam(0),
            DecodeMethod::TopK(0),
            DecodeMethod::TopP(0.0),
            DecodeMethod::TopP(1.5),
            DecodeMethod::Typical(0.0),
        ] {
            assert!(DecodeConfig {
                method: m,
                ..Default::default()
            }
            .validate()
            .is_err());
        }
        assert!(DecodeConfig {
            max_len: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(DecodeConfig {
            temperature: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
