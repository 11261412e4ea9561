use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::{check_smoothing, ConditionalModel, TokenDistribution};
use crate::error::{Error, Result};
use crate::hash::StableHasher;
use crate::text::{ReframeInstance, StrategySet, TokenId, TokenSeq, BOS};

const MAGIC: &str = "reframe-ngram v1";
const SOURCE_HASH_SEED: u64 = 0x5eed_0f50;

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Counts {
    pub(crate) total: u64,
    pub(crate) by_token: BTreeMap<TokenId, u64>,
}

impl Counts {
    pub(crate) fn add(&mut self, tok: TokenId) {
        self.total += 1;
        *self.by_token.entry(tok).or_default() += 1;
    }

    pub(crate) fn smoothed(&self, vocab_size: usize, delta: f64) -> TokenDistribution {
        let denom = self.total as f64 + delta * vocab_size as f64;
        let mut probs = vec![delta / denom; vocab_size];
        for (&t, &c) in &self.by_token {
            probs[t as usize] = (c as f64 + delta) / denom;
        }
        TokenDistribution::from_raw(probs)
    }

    fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        write!(w, "{}", self.total)?;
        for (t, c) in &self.by_token {
            write!(w, " {t}:{c}")?;
        }
        Ok(())
    }

    fn parse<'a>(mut fields: impl Iterator<Item = &'a str>) -> Result<Self> {
        let bad = || Error::format("n-gram", "malformed count list");
        let total = fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let mut by_token = BTreeMap::new();
        for f in fields {
            let (t, c) = f.split_once(':').ok_or_else(bad)?;
            by_token.insert(t.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?);
        }
        Ok(Counts { total, by_token })
    }
}

type FullKey = (u8, u64, Vec<TokenId>);

/// Add-delta smoothed n-gram model conditioned on the strategies and the source.
///
/// Lookup backs off from `(strategies, source hash, prefix n-gram)` to the prefix
/// n-gram alone and then to global target-token frequencies, taking the first
/// level whose context has been observed.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramConditionalModel {
    order: usize,
    delta: f64,
    vocab_size: usize,
    full: BTreeMap<FullKey, Counts>,
    prefix: BTreeMap<Vec<TokenId>, Counts>,
    global: Counts,
}

pub(crate) fn context(prefix: &[TokenId], order: usize) -> Vec<TokenId> {
    let n = order - 1;
    let mut ctx = vec![BOS; n.saturating_sub(prefix.len())];
    ctx.extend_from_slice(&prefix[prefix.len().saturating_sub(n)..]);
    ctx
}

fn source_hash(source: &TokenSeq) -> u64 {
    let mut h = StableHasher::new(SOURCE_HASH_SEED);
    for &id in source.ids() {
        h.write_u32(id);
    }
    h.finish()
}

impl NGramConditionalModel {
    pub fn fit(
        pairs: &[ReframeInstance],
        vocab_size: usize,
        order: usize,
        delta: f64,
    ) -> Result<Self> {
        check_smoothing(order, delta)?;
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut model = NGramConditionalModel {
            order,
            delta,
            vocab_size,
            full: BTreeMap::new(),
            prefix: BTreeMap::new(),
            global: Counts::default(),
        };
        for inst in pairs {
            let src = source_hash(&inst.source);
            let target = inst.reference.with_eos();
            for (t, &tok) in target.ids().iter().enumerate() {
                if tok as usize >= vocab_size {
                    return Err(Error::InvalidTokenId {
                        id: tok,
                        size: vocab_size,
                    });
                }
                let ctx = context(&target.ids()[..t], order);
                // the strategy-free key serves unconstrained queries
                for bits in [inst.strategies.bits(), 0] {
                    model
                        .full
                        .entry((bits, src, ctx.clone()))
                        .or_default()
                        .add(tok);
                }
                model.prefix.entry(ctx).or_default().add(tok);
                model.global.add(tok);
            }
        }
        Ok(model)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "order {}", self.order)?;
        writeln!(w, "delta {}", self.delta)?;
        writeln!(w, "vocab_size {}", self.vocab_size)?;
        write!(w, "global ")?;
        self.global.write(&mut w)?;
        writeln!(w)?;
        for ((bits, src, ctx), counts) in &self.full {
            write!(w, "full {bits} {src} {} ", join_ids(ctx))?;
            counts.write(&mut w)?;
            writeln!(w)?;
        }
        for (ctx, counts) in &self.prefix {
            write!(w, "prefix {} ", join_ids(ctx))?;
            counts.write(&mut w)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let bad = |m: &str| Error::format("n-gram", m.to_string());
        let mut lines = r.lines();
        let mut next = || -> Result<Option<String>> {
            lines.next().transpose().map_err(|e| bad(&e.to_string()))
        };
        if next()?.as_deref() != Some(MAGIC) {
            return Err(bad("missing header"));
        }
        let mut header = |key: &str| -> Result<String> {
            let line = next()?.ok_or_else(|| bad("truncated header"))?;
            line.strip_prefix(key)
                .and_then(|s| s.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("expected {key}")))
        };
        let order: usize = header("order")?.parse().map_err(|_| bad("order"))?;
        let delta: f64 = header("delta")?.parse().map_err(|_| bad("delta"))?;
        let vocab_size: usize = header("vocab_size")?
            .parse()
            .map_err(|_| bad("vocab_size"))?;
        let global = Counts::parse(header("global")?.split(' '))?;
        check_smoothing(order, delta)?;
        let mut model = NGramConditionalModel {
            order,
            delta,
            vocab_size,
            full: BTreeMap::new(),
            prefix: BTreeMap::new(),
            global,
        };
        while let Some(line) = next()? {
            let mut f = line.split(' ');
            match f.next() {
                Some("full") => {
                    let bits = f
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad("bits"))?;
                    let src = f
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad("hash"))?;
                    let ctx = parse_ids(f.next().ok_or_else(|| bad("context"))?)?;
                    model.full.insert((bits, src, ctx), Counts::parse(f)?);
                }
                Some("prefix") => {
                    let ctx = parse_ids(f.next().ok_or_else(|| bad("context"))?)?;
                    model.prefix.insert(ctx, Counts::parse(f)?);
                }
                _ => return Err(bad("unknown record")),
            }
        }
        Ok(model)
    }
}

fn join_ids(ids: &[TokenId]) -> String {
    if ids.is_empty() {
        "-".to_string()
    } else {
        ids.iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn parse_ids(s: &str) -> Result<Vec<TokenId>> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| {
            x.parse()
                .map_err(|_| Error::format("n-gram", "bad context id"))
        })
        .collect()
}

impl ConditionalModel for NGramConditionalModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_distribution(
        &self,
        source: &TokenSeq,
        strategies: Option<&StrategySet>,
        prefix: &TokenSeq,
    ) -> TokenDistribution {
        let ctx = context(prefix.ids(), self.order);
        let bits = strategies.map_or(0, StrategySet::bits);
        let key = (bits, source_hash(source), ctx);
        let counts = self
            .full
            .get(&key)
            .or_else(|| self.prefix.get(&key.2))
            .unwrap_or(&self.global);
        counts.smoothed(self.vocab_size, self.delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{Strategy, Vocab, EOS};

    fn corpus(lines: &[(&str, &str)]) -> (Vocab, Vec<ReframeInstance>) {
        let texts: Vec<&str> = lines.iter().flat_map(|(a, b)| [*a, *b]).collect();
        let vocab = Vocab::build(&texts, 1).unwrap();
        let set = StrategySet::single(Strategy::Optimism);
        let insts = lines
            .iter()
            .map(|(a, b)| ReframeInstance::new(a, b, set, &vocab).unwrap())
            .collect();
        (vocab, insts)
    }

    #[test]
    fn config_errors() {
        let (v, c) = corpus(&[("bad day", "good day")]);
        assert!(NGramConditionalModel::fit(&c, v.len(), 0, 0.1).is_err());
        assert!(NGramConditionalModel::fit(&c, v.len(), 2, 0.0).is_err());
        assert!(NGramConditionalModel::fit(&[], v.len(), 2, 0.1).is_err());
    }

    #[test]
    fn unigram_mode_is_most_frequent_reference_token() {
        let (v, c) = corpus(&[("so bad", "good good good day")]);
        let m = NGramConditionalModel::fit(&c, v.len(), 1, 0.1).unwrap();
        let d = m.next_distribution(&c[0].source, None, &TokenSeq::new());
        assert_eq!(d.argmax(), v.id("good").unwrap());
        assert_eq!(m.global.by_token.get(&EOS).copied().unwrap_or(0), 1);
    }

    #[test]
    fn unseen_context_backs_off_to_global() {
        let (v, c) = corpus(&[("so bad", "good day"), ("bad luck", "good luck")]);
        let m = NGramConditionalModel::fit(&c, v.len(), 2, 0.1).unwrap();
        let unseen_prefix = TokenSeq::from(vec![v.id("bad").unwrap()]);
        let d = m.next_distribution(&TokenSeq::from(vec![UNK_ID]), None, &unseen_prefix);
        // 6 target events: good day EOS good luck EOS
        let denom = 6.0 + 0.1 * v.len() as f64;
        assert!((d.prob(v.id("good").unwrap()) - 2.1 / denom).abs() < 1e-15);
        assert!((d.prob(EOS) - 2.1 / denom).abs() < 1e-15);
        assert!((d.prob(v.id("day").unwrap()) - 1.1 / denom).abs() < 1e-15);
    }

    const UNK_ID: TokenId = crate::text::UNK;

    #[test]
    fn text_dump_round_trip() {
        let (v, c) = corpus(&[("so bad", "good day"), ("bad luck", "good luck")]);
        let m = NGramConditionalModel::fit(&c, v.len(), 3, 0.25).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = NGramConditionalModel::read_from(&buf[..]).unwrap();
        assert_eq!(back, m);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(buf, again);
    }
}
