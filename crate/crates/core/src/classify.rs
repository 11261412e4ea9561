//! Binary text-pair classifiers and the datasets they are trained on.
//!
//! Three roles share one model: per-strategy consistency classifiers fed with
//! auxiliary questions, the sentiment-change classifier behind the positive
//! sentiment reward, and the reframing-relation (RTQE) scorer. Each is a
//! logistic regression over hashed word uni- and bigrams of the input text.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::{derive_seed, StableHasher};
use crate::text::{normalize, ReframeInstance, Strategy, StrategySet};

pub const DEFAULT_DIM: usize = 1 << 18;
pub const DEFAULT_HASH_SEED: u64 = 0x7061_6972;

const MAGIC: &[u8; 8] = b"RFPAIRCL";
const VERSION: u32 = 1;
const MARGIN_CLAMP: f64 = 30.0;
const SEPARATOR: &str = "[SEP]";

/// `"Is the strategy {strategy} used in the conversion from {original} to {reframe} ?"`
///
/// Distinct inputs can collide when the texts themselves contain `" to "`:
/// `("a to b", "c")` and `("a", "b to c")` produce the same question.
pub fn build_auxiliary_question(strategy: Strategy, original: &str, reframe: &str) -> String {
    format!(
        "Is the strategy {} used in the conversion from {original} to {reframe} ?",
        strategy.surface()
    )
}

/// Pair encoding for the sentiment and RTQE classifiers.
pub fn encode_pair(first: &str, second: &str) -> String {
    format!("{first} {SEPARATOR} {second}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPair {
    pub text: String,
    pub label: bool,
}

impl LabeledPair {
    pub fn new(text: impl Into<String>, label: bool) -> Self {
        LabeledPair {
            text: text.into(),
            label,
        }
    }
}

/// One binary dataset per strategy: positive iff the strategy was used.
pub fn split_strategy_dataset(corpus: &[ReframeInstance], strategy: Strategy) -> Vec<LabeledPair> {
    corpus
        .iter()
        .map(|inst| {
            LabeledPair::new(
                build_auxiliary_question(strategy, &inst.raw_source, &inst.raw_reference),
                inst.strategies.contains(strategy),
            )
        })
        .collect()
}

/// One positive `(x, y)` and two negatives per instance: `(x, x)` and
/// `(x, y_j)` with `j != i` drawn uniformly.
pub fn build_rtqe_dataset(corpus: &[ReframeInstance], seed: u64) -> Result<Vec<LabeledPair>> {
    if corpus.len() < 2 {
        return Err(Error::Config(
            "RTQE construction needs at least two instances".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(corpus.len() * 3);
    for (i, inst) in corpus.iter().enumerate() {
        let mut j = rng.gen_range(0..corpus.len() - 1);
        if j >= i {
            j += 1;
        }
        out.push(LabeledPair::new(
            encode_pair(&inst.raw_source, &inst.raw_reference),
            true,
        ));
        out.push(LabeledPair::new(
            encode_pair(&inst.raw_source, &inst.raw_source),
            false,
        ));
        out.push(LabeledPair::new(
            encode_pair(&inst.raw_source, &corpus[j].raw_reference),
            false,
        ));
    }
    Ok(out)
}

/// Sentiment-change pairs encoded as `generated [SEP] source`: the reference
/// reframe is positive, the unchanged source is negative.
pub fn build_sentiment_dataset(corpus: &[ReframeInstance]) -> Vec<LabeledPair> {
    corpus
        .iter()
        .flat_map(|inst| {
            [
                LabeledPair::new(encode_pair(&inst.raw_reference, &inst.raw_source), true),
                LabeledPair::new(encode_pair(&inst.raw_source, &inst.raw_source), false),
            ]
        })
        .collect()
}

/// `label<TAB>text` with `positive` / `negative` labels.
pub fn write_pairs(pairs: &[LabeledPair], mut w: impl Write) -> std::io::Result<()> {
    for p in pairs {
        let text: String = p
            .text
            .chars()
            .map(|c| {
                if matches!(c, '\t' | '\n' | '\r') {
                    ' '
                } else {
                    c
                }
            })
            .collect();
        writeln!(
            w,
            "{}\t{text}",
            if p.label { "positive" } else { "negative" }
        )?;
    }
    Ok(())
}

pub fn read_pairs(r: impl BufRead) -> Result<Vec<LabeledPair>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::format("dataset", e.to_string()))?;
        let bad = || {
            Error::format(
                "dataset",
                format!("line {}: expected label<TAB>text", i + 1),
            )
        };
        let (label, text) = line.split_once('\t').ok_or_else(bad)?;
        let label = match label {
            "positive" => true,
            "negative" => false,
            _ => return Err(bad()),
        };
        if text.is_empty() {
            return Err(bad());
        }
        out.push(LabeledPair::new(text, label));
    }
    Ok(out)
}

/// Sparse, L2-normalized hashed uni- and bigram counts.
pub fn hashed_features(text: &str, dim: usize, seed: u64) -> Vec<(usize, f64)> {
    let words = normalize(text);
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    let mut bump = |parts: &[&str]| {
        let mut h = StableHasher::new(seed);
        h.write(&[parts.len() as u8]);
        for p in parts {
            h.write(p.as_bytes());
            h.write(&[0]);
        }
        *counts
            .entry((h.finish() % dim as u64) as usize)
            .or_default() += 1.0;
    };
    for w in &words {
        bump(&[w]);
    }
    for pair in words.windows(2) {
        bump(&[&pair[0], &pair[1]]);
    }
    let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
    counts.into_iter().map(|(j, c)| (j, c / norm)).collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    pub dim: usize,
    pub hash_seed: u64,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        ClassifierParams {
            epochs: 10,
            learning_rate: 0.5,
            l2: 1e-6,
            seed: 0,
            dim: DEFAULT_DIM,
            hash_seed: DEFAULT_HASH_SEED,
        }
    }
}

/// Logistic regression over hashed pair features.
#[derive(Debug, Clone, PartialEq)]
pub struct PairClassifier {
    dim: usize,
    hash_seed: u64,
    threshold: f64,
    weights: Vec<f64>,
    bias: f64,
    trained: bool,
}

impl PairClassifier {
    pub fn untrained(dim: usize, hash_seed: u64) -> Self {
        assert!(dim > 0);
        PairClassifier {
            dim,
            hash_seed,
            threshold: 0.5,
            weights: vec![0.0; dim],
            bias: 0.0,
            trained: false,
        }
    }

    /// Builds a trained model from explicit parameters.
    pub fn from_parts(weights: Vec<f64>, bias: f64, hash_seed: u64) -> Self {
        PairClassifier {
            dim: weights.len(),
            hash_seed,
            threshold: 0.5,
            weights,
            bias,
            trained: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hash_seed(&self) -> u64 {
        self.hash_seed
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn features(&self, text: &str) -> Vec<(usize, f64)> {
        hashed_features(text, self.dim, self.hash_seed)
    }

    pub fn margin(&self, text: &str) -> f64 {
        self.bias
            + self
                .features(text)
                .iter()
                .map(|&(j, x)| self.weights[j] * x)
                .sum::<f64>()
    }

    /// Logistic score in `(0, 1)`.
    pub fn score(&self, text: &str) -> Result<f64> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        Ok(sigmoid(
            self.margin(text).clamp(-MARGIN_CLAMP, MARGIN_CLAMP),
        ))
    }

    /// Mean binary cross-entropy over `data`.
    pub fn log_loss(&self, data: &[LabeledPair]) -> Result<f64> {
        let mut total = 0.0;
        for p in data {
            let s = self.score(&p.text)?;
            total -= if p.label { s.ln() } else { (1.0 - s).ln() };
        }
        Ok(total / data.len().max(1) as f64)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&self.hash_seed.to_le_bytes())?;
        w.write_all(&self.threshold.to_le_bytes())?;
        w.write_all(&[u8::from(self.trained)])?;
        w.write_all(&self.bias.to_le_bytes())?;
        for x in &self.weights {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = || Error::format("classifier", "truncated or malformed file");
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad())?;
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(|_| bad())?;
        if &magic != MAGIC || u32::from_le_bytes(b4) != VERSION {
            return Err(bad());
        }
        let mut b8 = [0u8; 8];
        let mut next = |r: &mut dyn Read| -> Result<[u8; 8]> {
            r.read_exact(&mut b8).map_err(|_| bad())?;
            Ok(b8)
        };
        let dim = u64::from_le_bytes(next(&mut r)?) as usize;
        let hash_seed = u64::from_le_bytes(next(&mut r)?);
        let threshold = f64::from_le_bytes(next(&mut r)?);
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag).map_err(|_| bad())?;
        let bias = f64::from_le_bytes(next(&mut r)?);
        if dim == 0 {
            return Err(bad());
        }
        let mut weights = Vec::with_capacity(dim);
        for _ in 0..dim {
            weights.push(f64::from_le_bytes(next(&mut r)?));
        }
        Ok(PairClassifier {
            dim,
            hash_seed,
            threshold,
            weights,
            bias,
            trained: flag[0] != 0,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f =
            std::fs::File::open(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Logistic regression by SGD on log-loss, visiting examples in a fresh seeded
/// permutation each epoch. L2 decay is applied through a lazy weight scale so
/// that updates stay sparse.
pub fn train_pair_classifier(
    data: &[LabeledPair],
    params: &ClassifierParams,
) -> Result<PairClassifier> {
    if !(data.iter().any(|p| p.label) && data.iter().any(|p| !p.label)) {
        return Err(Error::SingleClass);
    }
    if !(params.learning_rate > 0.0 && params.l2 >= 0.0 && params.learning_rate * params.l2 < 1.0) {
        return Err(Error::Config(
            "classifier needs learning_rate > 0 and 0 <= learning_rate * l2 < 1".into(),
        ));
    }
    let mut model = PairClassifier::untrained(params.dim, params.hash_seed);
    let feats: Vec<Vec<(usize, f64)>> = data.iter().map(|p| model.features(&p.text)).collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut v = vec![0.0; params.dim];
    let mut scale = 1.0;
    let mut bias = 0.0;
    let decay = 1.0 - params.learning_rate * params.l2;
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let x = &feats[i];
            let z = scale * x.iter().map(|&(j, xj)| v[j] * xj).sum::<f64>() + bias;
            let g = sigmoid(z) - if data[i].label { 1.0 } else { 0.0 };
            scale *= decay;
            if scale < 1e-9 {
                v.iter_mut().for_each(|w| *w *= scale);
                scale = 1.0;
            }
            for &(j, xj) in x {
                v[j] -= params.learning_rate * g * xj / scale;
            }
            bias -= params.learning_rate * g;
        }
    }
    model.weights = v.into_iter().map(|w| w * scale).collect();
    model.bias = bias;
    model.trained = true;
    Ok(model)
}

pub fn classify_pair(model: &PairClassifier, text: &str) -> Result<f64> {
    model.score(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEval {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ClassifierEval {
    pub fn from_confusion(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassifierEval {
            precision,
            recall,
            f1,
            accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
            tp,
            fp,
            fn_,
            tn,
        }
    }
}

pub fn eval_classifier(
    model: &PairClassifier,
    test: &[LabeledPair],
    threshold: f64,
) -> Result<ClassifierEval> {
    if test.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for p in test {
        match (model.score(&p.text)? >= threshold, p.label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(ClassifierEval::from_confusion(tp, fp, fn_, tn))
}

/// One consistency classifier per strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyBank {
    classifiers: BTreeMap<Strategy, PairClassifier>,
}

impl StrategyBank {
    pub fn new(classifiers: BTreeMap<Strategy, PairClassifier>) -> Result<Self> {
        for s in Strategy::ALL {
            match classifiers.get(&s) {
                Some(c) if c.is_trained() => {}
                _ => return Err(Error::Untrained),
            }
        }
        Ok(StrategyBank { classifiers })
    }

    /// Trains the six classifiers independently, each on its own split.
    pub fn train(corpus: &[ReframeInstance], params: &ClassifierParams) -> Result<Self> {
        let mut classifiers = BTreeMap::new();
        for s in Strategy::ALL {
            let data = split_strategy_dataset(corpus, s);
            let p = ClassifierParams {
                seed: derive_seed(params.seed, &[s as u64]),
                ..*params
            };
            classifiers.insert(s, train_pair_classifier(&data, &p)?);
        }
        Self::new(classifiers)
    }

    pub fn get(&self, s: Strategy) -> &PairClassifier {
        &self.classifiers[&s]
    }

    pub fn file_name(s: Strategy) -> String {
        format!("strategy-{}.clf", s.slug())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for (s, c) in &self.classifiers {
            c.save(&dir.join(Self::file_name(*s)))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut classifiers = BTreeMap::new();
        for s in Strategy::ALL {
            classifiers.insert(s, PairClassifier::load(&dir.join(Self::file_name(s)))?);
        }
        Self::new(classifiers)
    }
}

/// Geometric mean of the per-strategy auxiliary-question scores.
pub fn strategy_consistency(
    bank: &StrategyBank,
    original: &str,
    candidate: &str,
    strategies: &StrategySet,
) -> Result<f64> {
    if strategies.is_empty() {
        return Err(Error::EmptyStrategySet);
    }
    let mut log_sum = 0.0;
    for s in strategies.iter() {
        log_sum += bank
            .get(s)
            .score(&build_auxiliary_question(s, original, candidate))?
            .ln();
    }
    Ok((log_sum / strategies.len() as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auxiliary_question_template() {
        assert_eq!(
            build_auxiliary_question(Strategy::Optimism, "o", "r"),
            "Is the strategy optimism used in the conversion from o to r ?"
        );
        assert_eq!(
            build_auxiliary_question(Strategy::Thankfulness, "", ""),
            "Is the strategy thankfulness used in the conversion from  to  ?"
        );
    }

    #[test]
    fn auxiliary_question_collision_with_delimiter() {
        let a = build_auxiliary_question(Strategy::Optimism, "a to b", "c");
        let b = build_auxiliary_question(Strategy::Optimism, "a", "b to c");
        assert_eq!(a, b);
    }

    #[test]
    fn untrained_model_errors() {
        let m = PairClassifier::untrained(16, 0);
        assert!(matches!(m.score("x"), Err(Error::Untrained)));
    }

    #[test]
    fn single_class_data_is_rejected() {
        let data = vec![LabeledPair::new("a", true), LabeledPair::new("b", true)];
        assert!(matches!(
            train_pair_classifier(&data, &ClassifierParams::default()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn zero_epochs_scores_one_half() {
        let data = vec![
            LabeledPair::new("good", true),
            LabeledPair::new("bad", false),
        ];
        let m = train_pair_classifier(
            &data,
            &ClassifierParams {
                epochs: 0,
                dim: 64,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(m.score("anything at all").unwrap(), 0.5);
    }

    #[test]
    fn sigmoid_symmetry() {
        let m = PairClassifier::from_parts(vec![0.3, -1.2, 2.0, 0.7], 0.1, 3);
        let neg =
            PairClassifier::from_parts(m.weights().iter().map(|w| -w).collect(), -m.bias(), 3);
        for t in ["a b c", "hello there", "x"] {
            let s = m.score(t).unwrap() + neg.score(t).unwrap();
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn confusion_matrix_metrics() {
        let e = ClassifierEval::from_confusion(3, 1, 2, 4);
        assert_eq!(e.precision, 0.75);
        assert_eq!(e.recall, 0.6);
        assert!((e.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(e.accuracy, 0.7);
    }

    #[test]
    fn pair_file_round_trip() {
        let pairs = vec![
            LabeledPair::new("a [SEP] b", true),
            LabeledPair::new("c", false),
        ];
        let mut buf = Vec::new();
        write_pairs(&pairs, &mut buf).unwrap();
        assert_eq!(read_pairs(&buf[..]).unwrap(), pairs);
        assert!(read_pairs(&b"maybe\tx\n"[..]).is_err());
    }

    #[test]
    fn features_are_unit_norm() {
        let f = hashed_features("the cat sat on the mat", 1024, 1);
        let n: f64 = f.iter().map(|(_, x)| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
        assert!(hashed_features("", 16, 1).is_empty());
    }
}
