use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ConditionalModel, TokenDistribution};
use crate::error::{Error, Result};
use crate::hash::StableHasher;
use crate::text::{StrategySet, TokenId, TokenSeq, BOS, PAD, UNK};

pub const DEFAULT_BUCKETS: usize = 4096;

const MAGIC: &[u8; 8] = b"RFPOLICY";
const VERSION: u32 = 1;
const CONTEXT_SEED: u64 = 0xc0_47e7;
const NO_SOURCE: u32 = u32::MAX;
const SUPPRESSED_LOGIT: f64 = -20.0;

/// A table of logits indexed by hashed context bucket and next token.
///
/// The context of step `t` is `(strategy set, last source token, y_{t-1})`,
/// hashed into one of `buckets` rows; the next-token distribution is the
/// softmax of that row.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    buckets: usize,
    vocab_size: usize,
    theta: Vec<f64>,
}

impl TabularPolicy {
    /// All-zero logits, i.e. the uniform policy.
    pub fn new(buckets: usize, vocab_size: usize) -> Self {
        assert!(buckets > 0 && vocab_size > 0);
        TabularPolicy {
            buckets,
            vocab_size,
            theta: vec![0.0; buckets * vocab_size],
        }
    }

    /// Starting point for training a generator: uniform over ordinary tokens,
    /// with PAD, BOS and UNK pushed far down (still finite).
    pub fn for_generation(buckets: usize, vocab_size: usize) -> Self {
        let mut p = Self::new(buckets, vocab_size);
        for row in p.theta.chunks_mut(vocab_size) {
            for id in [PAD, BOS, UNK] {
                if let Some(x) = row.get_mut(id as usize) {
                    *x = SUPPRESSED_LOGIT;
                }
            }
        }
        p
    }

    /// Logits drawn uniformly from `[-scale, scale]`.
    pub fn random(buckets: usize, vocab_size: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::new(buckets, vocab_size);
        for x in &mut p.theta {
            *x = rng.gen_range(-scale..=scale);
        }
        p
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn row(&self, bucket: usize) -> &[f64] {
        &self.theta[bucket * self.vocab_size..(bucket + 1) * self.vocab_size]
    }

    pub fn context_bucket(
        &self,
        source: &TokenSeq,
        strategies: Option<&StrategySet>,
        prev: TokenId,
    ) -> usize {
        let mut h = StableHasher::new(CONTEXT_SEED);
        h.write(
            strategies
                .map(StrategySet::canonical)
                .unwrap_or_default()
                .as_bytes(),
        );
        h.write(&[0xff]);
        h.write_u32(source.last().unwrap_or(NO_SOURCE));
        h.write_u32(prev);
        (h.finish() % self.buckets as u64) as usize
    }

    /// Context bucket of every step of `target`.
    pub fn contexts(
        &self,
        source: &TokenSeq,
        strategies: Option<&StrategySet>,
        target: &TokenSeq,
    ) -> Vec<usize> {
        let mut prev = BOS;
        target
            .ids()
            .iter()
            .map(|&tok| {
                let b = self.context_bucket(source, strategies, prev);
                prev = tok;
                b
            })
            .collect()
    }

    fn log_softmax_at(&self, bucket: usize, tok: TokenId) -> f64 {
        let row = self.row(bucket);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        row[tok as usize] - lse
    }

    /// `sum_t log p(target_t | context_t)`.
    pub fn logprob(
        &self,
        source: &TokenSeq,
        strategies: Option<&StrategySet>,
        target: &TokenSeq,
    ) -> f64 {
        self.contexts(source, strategies, target)
            .into_iter()
            .zip(target.ids())
            .map(|(b, &tok)| self.log_softmax_at(b, tok))
            .sum()
    }

    /// Gradient of [`logprob`](Self::logprob) with respect to the logits.
    ///
    /// For each step, row `ctx` receives `1{j = target} - p(j | ctx)`.
    pub fn logprob_grad(
        &self,
        source: &TokenSeq,
        strategies: Option<&StrategySet>,
        target: &TokenSeq,
    ) -> PolicyGrad {
        let mut grad = PolicyGrad::new(self.vocab_size);
        for (b, &tok) in self
            .contexts(source, strategies, target)
            .into_iter()
            .zip(target.ids())
        {
            let p = TokenDistribution::softmax(self.row(b));
            let row = grad.row_mut(b);
            for (g, q) in row.iter_mut().zip(p.probs()) {
                *g -= q;
            }
            row[tok as usize] += 1.0;
        }
        grad
    }

    /// `theta <- theta - learning_rate * grad`.
    pub fn descend(&mut self, grad: &PolicyGrad, learning_rate: f64) {
        for (&b, row) in &grad.rows {
            let start = b * self.vocab_size;
            for (x, g) in self.theta[start..start + self.vocab_size]
                .iter_mut()
                .zip(row)
            {
                *x -= learning_rate * g;
            }
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.buckets as u64).to_le_bytes())?;
        w.write_all(&(self.vocab_size as u64).to_le_bytes())?;
        for x in &self.theta {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |m: &str| Error::format("policy", m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(|_| bad("truncated header"))?;
        if u32::from_le_bytes(b4) != VERSION {
            return Err(bad("unsupported version"));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
        let buckets = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
        let vocab_size = u64::from_le_bytes(b8) as usize;
        if buckets == 0 || vocab_size == 0 {
            return Err(bad("empty table"));
        }
        let mut theta = Vec::with_capacity(buckets * vocab_size);
        for _ in 0..buckets * vocab_size {
            r.read_exact(&mut b8).map_err(|_| bad("truncated table"))?;
            theta.push(f64::from_le_bytes(b8));
        }
        if r.read(&mut b8).map_err(|e| bad(&e.to_string()))? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(TabularPolicy {
            buckets,
            vocab_size,
            theta,
        })
    }
}

impl ConditionalModel for TabularPolicy {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_distribution(
        &self,
        source: &TokenSeq,
        strategies: Option<&StrategySet>,
        prefix: &TokenSeq,
    ) -> TokenDistribution {
        let prev = prefix.last().unwrap_or(BOS);
        TokenDistribution::softmax(self.row(self.context_bucket(source, strategies, prev)))
    }
}

/// Sparse gradient over policy rows; untouched rows are implicitly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad {
    vocab_size: usize,
    rows: BTreeMap<usize, Vec<f64>>,
}

impl PolicyGrad {
    pub fn new(vocab_size: usize) -> Self {
        PolicyGrad {
            vocab_size,
            rows: BTreeMap::new(),
        }
    }

    pub fn row_mut(&mut self, bucket: usize) -> &mut Vec<f64> {
        let n = self.vocab_size;
        self.rows.entry(bucket).or_insert_with(|| vec![0.0; n])
    }

    pub fn get(&self, bucket: usize, token: TokenId) -> f64 {
        self.rows.get(&bucket).map_or(0.0, |r| r[token as usize])
    }

    pub fn rows(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows.iter().map(|(b, r)| (*b, r.as_slice()))
    }

    pub fn touched(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn scale(&mut self, c: f64) {
        for row in self.rows.values_mut() {
            for g in row {
                *g *= c;
            }
        }
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.scale(c);
        self
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, other: &PolicyGrad, c: f64) {
        for (&b, row) in &other.rows {
            for (g, o) in self.row_mut(b).iter_mut().zip(row) {
                *g += c * o;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.rows
            .values()
            .flatten()
            .fold(0.0, |m: f64, g| m.max(g.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.rows.values().flatten().all(|g| g.is_finite())
    }
}
