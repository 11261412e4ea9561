use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::check_smoothing;
use super::ngram::{context, Counts};
use crate::error::{Error, Result};
use crate::text::{TokenId, TokenSeq};

const MAGIC: &str = "reframe-lm v1";

/// Unconditional add-delta n-gram language model used for fluency and perplexity.
///
/// Probabilities come from the longest observed context (BOS-padded), backing
/// off one token at a time down to unigram counts. Training sequences are
/// terminated with EOS; scored sequences are taken as given.
#[derive(Debug, Clone, PartialEq)]
pub struct FluencyLM {
    order: usize,
    delta: f64,
    vocab_size: usize,
    // levels[m] holds contexts of length m
    levels: Vec<BTreeMap<Vec<TokenId>, Counts>>,
}

impl FluencyLM {
    pub fn fit(corpus: &[TokenSeq], vocab_size: usize, order: usize, delta: f64) -> Result<Self> {
        check_smoothing(order, delta)?;
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut lm = Self::uniform(vocab_size, order, delta)?;
        for seq in corpus {
            let seq = seq.with_eos();
            for (t, &tok) in seq.ids().iter().enumerate() {
                if tok as usize >= vocab_size {
                    return Err(Error::InvalidTokenId {
                        id: tok,
                        size: vocab_size,
                    });
                }
                let ctx = context(&seq.ids()[..t], order);
                for m in 0..order {
                    let key = ctx[ctx.len() - m..].to_vec();
                    lm.levels[m].entry(key).or_default().add(tok);
                }
            }
        }
        Ok(lm)
    }

    /// A model with no counts: every token has probability `1/|V|`.
    pub fn uniform(vocab_size: usize, order: usize, delta: f64) -> Result<Self> {
        check_smoothing(order, delta)?;
        Ok(FluencyLM {
            order,
            delta,
            vocab_size,
            levels: vec![BTreeMap::new(); order],
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// `p(tok | history)`.
    pub fn prob(&self, history: &[TokenId], tok: TokenId) -> f64 {
        let ctx = context(history, self.order);
        let v = self.vocab_size as f64;
        for m in (0..self.order).rev() {
            if let Some(c) = self.levels[m].get(&ctx[ctx.len() - m..]) {
                let hits = c.by_token.get(&tok).copied().unwrap_or(0) as f64;
                return (hits + self.delta) / (c.total as f64 + self.delta * v);
            }
        }
        1.0 / v
    }

    /// `sum_t log p(seq_t | seq_<t)`; zero for the empty sequence.
    pub fn logprob(&self, seq: &TokenSeq) -> f64 {
        (0..seq.len())
            .map(|t| self.prob(&seq.ids()[..t], seq.ids()[t]).ln())
            .sum()
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "order {}", self.order)?;
        writeln!(w, "delta {}", self.delta)?;
        writeln!(w, "vocab_size {}", self.vocab_size)?;
        for (m, level) in self.levels.iter().enumerate() {
            for (ctx, counts) in level {
                let ctx = if ctx.is_empty() {
                    "-".to_string()
                } else {
                    ctx.iter()
                        .map(|i| i.to_string())
                        .collect::<Vec<_>>()
                        .join(",")
                };
                write!(w, "{m} {ctx} {}", counts.total)?;
                for (t, c) in &counts.by_token {
                    write!(w, " {t}:{c}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let bad = |m: &str| Error::format("language model", m.to_string());
        let lines: Vec<String> = r
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| bad(&e.to_string()))?;
        if lines.len() < 4 || lines[0] != MAGIC {
            return Err(bad("missing header"));
        }
        let field = |i: usize, key: &str| -> Result<String> {
            lines[i]
                .strip_prefix(key)
                .and_then(|s| s.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("expected {key}")))
        };
        let order: usize = field(1, "order")?.parse().map_err(|_| bad("order"))?;
        let delta: f64 = field(2, "delta")?.parse().map_err(|_| bad("delta"))?;
        let vocab_size: usize = field(3, "vocab_size")?
            .parse()
            .map_err(|_| bad("vocab_size"))?;
        let mut lm = Self::uniform(vocab_size, order, delta)?;
        for line in &lines[4..] {
            let mut f = line.split(' ');
            let m: usize = f
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("level"))?;
            let ctx_field = f.next().ok_or_else(|| bad("context"))?;
            let ctx: Vec<TokenId> = if ctx_field == "-" {
                Vec::new()
            } else {
                ctx_field
                    .split(',')
                    .map(|s| s.parse().map_err(|_| bad("context id")))
                    .collect::<Result<_>>()?
            };
            if m >= order || ctx.len() != m {
                return Err(bad("context length does not match level"));
            }
            let total = f
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("total"))?;
            let mut by_token = BTreeMap::new();
            for pair in f {
                let (t, c) = pair.split_once(':').ok_or_else(|| bad("count"))?;
                by_token.insert(
                    t.parse().map_err(|_| bad("count"))?,
                    c.parse().map_err(|_| bad("count"))?,
                );
            }
            lm.levels[m].insert(ctx, Counts { total, by_token });
        }
        Ok(lm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(ids: &[TokenId]) -> TokenSeq {
        TokenSeq::from(ids.to_vec())
    }

    #[test]
    fn unigram_mode_prefers_frequent_token() {
        let lm = FluencyLM::fit(&[s(&[4, 4, 4])], 6, 1, 0.1).unwrap();
        let pa = lm.prob(&[], 4);
        assert!((0..6).filter(|&t| t != 4).all(|t| lm.prob(&[], t) < pa));
        // 3 a's + EOS = 4 events
        assert!((pa - 3.1 / (4.0 + 0.6)).abs() < 1e-15);
    }

    #[test]
    fn appending_a_token_decreases_logprob() {
        let lm = FluencyLM::fit(&[s(&[4, 5]), s(&[5, 4])], 6, 2, 0.1).unwrap();
        let mut seq = TokenSeq::new();
        assert_eq!(lm.logprob(&seq), 0.0);
        let mut last = 0.0;
        for t in [4, 5, 4, 4, 2] {
            seq.push(t);
            let lp = lm.logprob(&seq);
            assert!(lp < last);
            last = lp;
        }
    }

    #[test]
    fn uniform_model() {
        let lm = FluencyLM::uniform(8, 3, 0.1).unwrap();
        assert!((lm.logprob(&s(&[4, 5, 6])) + 3.0 * 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn text_dump_round_trip() {
        let lm = FluencyLM::fit(&[s(&[4, 5, 6]), s(&[5, 4])], 7, 3, 0.3).unwrap();
        let mut buf = Vec::new();
        lm.write_to(&mut buf).unwrap();
        assert_eq!(FluencyLM::read_from(&buf[..]).unwrap(), lm);
    }
}
