//! Tokenization, vocabulary and the shared domain types.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Default sequence length limit, counted in word tokens.
pub const MAX_SEQ_LEN: usize = 80;

pub fn is_reserved(id: TokenId) -> bool {
    id <= UNK
}

/// Lowercases and splits text into word and punctuation tokens.
///
/// Punctuation characters become single-character tokens. An apostrophe
/// between two alphanumeric characters stays inside the word ("don't").
pub fn normalize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut out = Vec::new();
    let mut word = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() {
            flush(&mut word, &mut out);
        } else if c.is_alphanumeric() || is_inner_apostrophe(&chars, i) {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            out.push(c.to_string());
        }
    }
    flush(&mut word, &mut out);
    out
}

fn is_inner_apostrophe(chars: &[char], i: usize) -> bool {
    matches!(chars[i], '\'' | '\u{2019}')
        && i > 0
        && i + 1 < chars.len()
        && chars[i - 1].is_alphanumeric()
        && chars[i + 1].is_alphanumeric()
}

fn flush(word: &mut String, out: &mut Vec<String>) {
    if !word.is_empty() {
        out.push(std::mem::take(word));
    }
}

/// A dense token vocabulary whose first four ids are reserved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::format(
                    "vocabulary",
                    format!("duplicate token {t:?}"),
                ));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Builds a vocabulary from raw text lines.
    ///
    /// Tokens seen at least `min_count` times follow the reserved ids, ordered by
    /// descending frequency and then alphabetically.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_count: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for line in corpus {
            for tok in normalize(line.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count.max(1) && !RESERVED.contains(&t.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn tokenize(&self, text: &str) -> TokenSeq {
        TokenSeq(
            normalize(text)
                .iter()
                .map(|t| self.id(t).unwrap_or(UNK))
                .collect(),
        )
    }

    /// Joins surface forms with single spaces, dropping reserved tokens.
    pub fn detokenize(&self, seq: &TokenSeq) -> Result<String> {
        let mut words = Vec::with_capacity(seq.len());
        for &id in seq.ids() {
            let tok = self.token(id).ok_or(Error::InvalidTokenId {
                id,
                size: self.len(),
            })?;
            if !is_reserved(id) {
                words.push(tok);
            }
        }
        Ok(words.join(" "))
    }

    /// One token per line; the first four lines are the reserved tokens.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in r.lines() {
            let line = line.map_err(|e| Error::format("vocabulary", e.to_string()))?;
            tokens.push(line);
        }
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED.iter()).any(|(a, b)| a != b)
        {
            return Err(Error::format("vocabulary", "missing reserved-token header"));
        }
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Free-function form of [`Vocab::build`].
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], min_count: usize) -> Result<Vocab> {
    Vocab::build(corpus, min_count)
}

pub fn tokenize(text: &str, vocab: &Vocab) -> TokenSeq {
    vocab.tokenize(text)
}

pub fn detokenize(seq: &TokenSeq, vocab: &Vocab) -> Result<String> {
    vocab.detokenize(seq)
}

/// A tokenized sentence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenSeq(Vec<TokenId>);

impl TokenSeq {
    pub fn new() -> Self {
        TokenSeq(Vec::new())
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> Option<TokenId> {
        self.0.last().copied()
    }

    pub fn push(&mut self, id: TokenId) {
        self.0.push(id);
    }

    pub fn ends_with_eos(&self) -> bool {
        self.last() == Some(EOS)
    }

    /// The sequence with a single trailing EOS removed, if present.
    pub fn content(&self) -> &[TokenId] {
        match self.0.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.0,
        }
    }

    pub fn without_eos(&self) -> TokenSeq {
        TokenSeq(self.content().to_vec())
    }

    /// The sequence terminated by exactly one EOS.
    pub fn with_eos(&self) -> TokenSeq {
        let mut ids = self.content().to_vec();
        ids.push(EOS);
        TokenSeq(ids)
    }

    pub fn truncated(&self, max_len: usize) -> TokenSeq {
        TokenSeq(self.0.iter().copied().take(max_len).collect())
    }

    pub fn into_ids(self) -> Vec<TokenId> {
        self.0
    }

    /// Checks the id range, interior PAD and trailing EOS invariants.
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        for (i, &id) in self.0.iter().enumerate() {
            if id as usize >= vocab_size {
                return Err(Error::InvalidTokenId {
                    id,
                    size: vocab_size,
                });
            }
            if id == PAD {
                return Err(Error::format("token sequence", "interior PAD"));
            }
            if id == EOS && i + 1 != self.0.len() {
                return Err(Error::format("token sequence", "EOS before the end"));
            }
        }
        Ok(())
    }
}

impl From<Vec<TokenId>> for TokenSeq {
    fn from(ids: Vec<TokenId>) -> Self {
        TokenSeq(ids)
    }
}

impl FromIterator<TokenId> for TokenSeq {
    fn from_iter<I: IntoIterator<Item = TokenId>>(iter: I) -> Self {
        TokenSeq(iter.into_iter().collect())
    }
}

/// The six reframing strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    GrowthMindset,
    Impermanence,
    Neutralizing,
    Optimism,
    SelfAffirmation,
    Thankfulness,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::GrowthMindset,
        Strategy::Impermanence,
        Strategy::Neutralizing,
        Strategy::Optimism,
        Strategy::SelfAffirmation,
        Strategy::Thankfulness,
    ];

    /// Canonical surface name, as used in auxiliary questions and files.
    pub fn surface(self) -> &'static str {
        match self {
            Strategy::GrowthMindset => "growth mindset",
            Strategy::Impermanence => "impermanence",
            Strategy::Neutralizing => "neutralizing",
            Strategy::Optimism => "optimism",
            Strategy::SelfAffirmation => "self-affirmation",
            Strategy::Thankfulness => "thankfulness",
        }
    }

    /// Short label used in file names and column headers.
    pub fn slug(self) -> &'static str {
        match self {
            Strategy::GrowthMindset => "growth",
            Strategy::Impermanence => "impermanence",
            Strategy::Neutralizing => "neutralizing",
            Strategy::Optimism => "optimism",
            Strategy::SelfAffirmation => "self_affirmation",
            Strategy::Thankfulness => "thankfulness",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }

    /// Parses a label, accepting the common spellings found in distributed
    /// copies of the dataset ("growth", "self_affirmation", ...).
    pub fn parse(label: &str) -> Result<Self> {
        let key: String = label
            .trim()
            .to_lowercase()
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect();
        Ok(match key.as_str() {
            "growth" | "growthmindset" => Strategy::GrowthMindset,
            "impermanence" => Strategy::Impermanence,
            "neutralizing" | "neutralising" => Strategy::Neutralizing,
            "optimism" => Strategy::Optimism,
            "selfaffirmation" => Strategy::SelfAffirmation,
            "thankfulness" => Strategy::Thankfulness,
            _ => return Err(Error::UnknownStrategy(label.trim().to_string())),
        })
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.surface())
    }
}

/// A non-empty set of strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StrategySet(u8);

impl StrategySet {
    pub fn new(strategies: impl IntoIterator<Item = Strategy>) -> Result<Self> {
        let mask = strategies.into_iter().fold(0u8, |m, s| m | s.bit());
        if mask == 0 {
            return Err(Error::EmptyStrategySet);
        }
        Ok(StrategySet(mask))
    }

    pub fn single(s: Strategy) -> Self {
        StrategySet(s.bit())
    }

    /// Parses a comma-separated label list. Brackets and quotes, as in
    /// `"['growth', 'optimism']"`, are ignored.
    pub fn parse(labels: &str) -> Result<Self> {
        let cleaned: String = labels
            .chars()
            .filter(|c| !matches!(c, '[' | ']' | '\'' | '"'))
            .collect();
        let parsed = cleaned
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(Strategy::parse)
            .collect::<Result<Vec<_>>>()?;
        Self::new(parsed)
    }

    pub fn contains(&self, s: Strategy) -> bool {
        self.0 & s.bit() != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = Strategy> + '_ {
        Strategy::ALL.into_iter().filter(|s| self.contains(*s))
    }

    /// Canonical comma-joined surface names in declaration order.
    pub fn canonical(&self) -> String {
        self.iter()
            .map(Strategy::slug)
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn bits(&self) -> u8 {
        self.0
    }
}

impl fmt::Display for StrategySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

/// One training or evaluation example: source, reference reframe and the
/// strategies used to produce the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ReframeInstance {
    pub source: TokenSeq,
    pub reference: TokenSeq,
    pub strategies: StrategySet,
    pub raw_source: String,
    pub raw_reference: String,
}

impl ReframeInstance {
    pub fn new(
        raw_source: &str,
        raw_reference: &str,
        strategies: StrategySet,
        vocab: &Vocab,
    ) -> Result<Self> {
        let source = vocab.tokenize(raw_source).truncated(MAX_SEQ_LEN);
        let reference = vocab.tokenize(raw_reference).truncated(MAX_SEQ_LEN);
        if source.is_empty() || reference.is_empty() {
            return Err(Error::EmptySequence);
        }
        Ok(ReframeInstance {
            source,
            reference,
            strategies,
            raw_source: raw_source.to_string(),
            raw_reference: raw_reference.to_string(),
        })
    }
}
