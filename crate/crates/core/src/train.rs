//! Reward-augmented training of a [`TabularPolicy`].
//!
//! Three losses are combined as `alpha * l_cls + beta * l_cont + gamma * l_lm`:
//!
//! * `l_cls = -ln p(positive | y', x)` from the sentiment-change classifier on
//!   the greedy output `y'`;
//! * `l_cont = log p(y^s) * (bleu(y', y) - bleu(y^s, y))`, the self-critical
//!   content reward with the greedy output as baseline;
//! * `l_lm = -log p(y | x)`, the negative log-likelihood of the reference.
//!
//! Rewards are constants with respect to the parameters. The sentiment term
//! reaches the parameters through the same self-critical estimator, with the
//! classifier score standing in for BLEU.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::classify::{encode_pair, PairClassifier};
use crate::decode::{greedy_decode, sample_decode, DecodeConfig, DecodeMethod, Generation};
use crate::error::{Error, Result};
use crate::hash::derive_seed;
use crate::metrics::{bleu, BleuConfig};
use crate::models::{ConditionalModel, PolicyGrad, TabularPolicy};
use crate::text::{ReframeInstance, StrategySet, TokenSeq, Vocab, MAX_SEQ_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            alpha: 1.0,
            beta: 0.2,
            gamma: 1.0,
        }
    }
}

impl RewardWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = RewardWeights { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.alpha, self.beta, self.gamma];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(
                "reward weights must be finite and >= 0".into(),
            ));
        }
        if ws.iter().all(|w| *w == 0.0) {
            return Err(Error::Config("reward weights are all zero".into()));
        }
        Ok(())
    }

    pub fn combine(&self, l_cls: f64, l_cont: f64, l_lm: f64) -> f64 {
        self.alpha * l_cls + self.beta * l_cont + self.gamma * l_lm
    }
}

/// Which strategy conditioning the policy is trained under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    Controlled,
    Unconstrained,
    /// One controlled and one unconstrained step per instance.
    Both,
}

impl Conditioning {
    fn variants(self, set: &StrategySet) -> Vec<Option<&StrategySet>> {
        match self {
            Conditioning::Controlled => vec![Some(set)],
            Conditioning::Unconstrained => vec![None],
            Conditioning::Both => vec![Some(set), None],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub weights: RewardWeights,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub samples_per_instance: usize,
    pub max_len: usize,
    pub conditioning: Conditioning,
    pub bleu: BleuConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: RewardWeights::default(),
            epochs: 30,
            learning_rate: 0.5,
            seed: 0,
            samples_per_instance: 1,
            max_len: MAX_SEQ_LEN,
            conditioning: Conditioning::Controlled,
            bleu: BleuConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        // zero is allowed: it freezes the parameters
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(
                "learning_rate must be finite and >= 0".into(),
            ));
        }
        if self.samples_per_instance < 1 || self.max_len < 1 {
            return Err(Error::Config(
                "samples_per_instance and max_len must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepLosses {
    pub l_cls: f64,
    pub l_cont: f64,
    pub l_lm: f64,
    pub l_final: f64,
}

impl StepLosses {
    fn is_finite(&self) -> bool {
        [self.l_cls, self.l_cont, self.l_lm, self.l_final]
            .iter()
            .all(|x| x.is_finite())
    }
}

/// Everything a training step needs besides the policy.
#[derive(Debug, Clone, Copy)]
pub struct RewardContext<'a> {
    pub vocab: &'a Vocab,
    pub sentiment: &'a PairClassifier,
    pub bleu: BleuConfig,
    pub max_len: usize,
}

/// `-ln p(positive | generated, source)`.
pub fn loss_sentiment(clf: &PairClassifier, source: &str, generated: &str) -> Result<f64> {
    Ok(-clf.score(&encode_pair(generated, source))?.ln())
}

/// A weighted sum of sequence log-probabilities with frozen sequences and
/// coefficients: the differentiable surrogate behind a training step.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub source: TokenSeq,
    pub strategies: Option<StrategySet>,
    pub terms: Vec<(f64, TokenSeq)>,
}

impl Surrogate {
    pub fn new(source: TokenSeq, strategies: Option<StrategySet>) -> Self {
        Surrogate {
            source,
            strategies,
            terms: Vec::new(),
        }
    }

    pub fn push(&mut self, coef: f64, target: TokenSeq) {
        if coef != 0.0 && !target.is_empty() {
            self.terms.push((coef, target));
        }
    }

    pub fn value(&self, policy: &TabularPolicy) -> f64 {
        self.terms
            .iter()
            .map(|(c, t)| c * policy.logprob(&self.source, self.strategies.as_ref(), t))
            .sum()
    }

    pub fn gradient(&self, policy: &TabularPolicy) -> PolicyGrad {
        let mut grad = PolicyGrad::new(policy.vocab_size());
        for (c, t) in &self.terms {
            grad.add_scaled(
                &policy.logprob_grad(&self.source, self.strategies.as_ref(), t),
                *c,
            );
        }
        grad
    }

    /// The part of [`value`](Self::value) that depends on row `bucket`.
    fn value_at_row(&self, policy: &TabularPolicy, bucket: usize) -> f64 {
        let row = policy.row(bucket);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        self.terms
            .iter()
            .map(|(c, t)| {
                policy
                    .contexts(&self.source, self.strategies.as_ref(), t)
                    .into_iter()
                    .zip(t.ids())
                    .filter(|(b, _)| *b == bucket)
                    .map(|(_, &tok)| c * (row[tok as usize] - lse))
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Output of the self-critical content loss.
#[derive(Debug, Clone)]
pub struct ScstOutcome {
    pub value: f64,
    pub grad: PolicyGrad,
    pub greedy: Generation,
    pub sample: Generation,
    /// `bleu(y', y) - bleu(y^s, y)`.
    pub reward_diff: f64,
}

fn ancestral(
    policy: &TabularPolicy,
    source: &TokenSeq,
    strategies: Option<&StrategySet>,
    max_len: usize,
    seed: u64,
) -> Result<Generation> {
    sample_decode(
        policy,
        source,
        strategies,
        &DecodeConfig::sampling(DecodeMethod::Sample, max_len, seed),
    )
}

pub fn loss_scst(
    policy: &TabularPolicy,
    inst: &ReframeInstance,
    strategies: Option<&StrategySet>,
    seed: u64,
    bleu_cfg: &BleuConfig,
    max_len: usize,
) -> Result<ScstOutcome> {
    let greedy = greedy_decode(policy, &inst.source, strategies, max_len);
    let sample = ancestral(policy, &inst.source, strategies, max_len, seed)?;
    let reward_diff = bleu(&greedy.content(), &inst.reference, bleu_cfg)?
        - bleu(&sample.content(), &inst.reference, bleu_cfg)?;
    let lp = policy.logprob(&inst.source, strategies, &sample.tokens);
    let grad = if reward_diff == 0.0 {
        PolicyGrad::new(policy.vocab_size())
    } else {
        policy
            .logprob_grad(&inst.source, strategies, &sample.tokens)
            .scaled(reward_diff)
    };
    Ok(ScstOutcome {
        value: lp * reward_diff,
        grad,
        greedy,
        sample,
        reward_diff,
    })
}

/// Reference negative log-likelihood, the reference terminated by EOS.
pub fn loss_lm(
    policy: &TabularPolicy,
    inst: &ReframeInstance,
    strategies: Option<&StrategySet>,
) -> (f64, PolicyGrad) {
    let target = inst.reference.with_eos();
    let value = -policy.logprob(&inst.source, strategies, &target);
    let grad = policy
        .logprob_grad(&inst.source, strategies, &target)
        .scaled(-1.0);
    (value, grad)
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub losses: StepLosses,
    pub grad: PolicyGrad,
    pub surrogate: Surrogate,
}

/// Losses and the combined gradient for one instance.
pub fn combined_step(
    policy: &TabularPolicy,
    inst: &ReframeInstance,
    strategies: Option<&StrategySet>,
    ctx: &RewardContext<'_>,
    weights: &RewardWeights,
    seed: u64,
    samples: usize,
) -> Result<StepOutcome> {
    let samples = samples.max(1);
    let greedy = greedy_decode(policy, &inst.source, strategies, ctx.max_len);
    let greedy_text = ctx.vocab.detokenize(&greedy.content())?;
    let score_pair = |text: &str| ctx.sentiment.score(&encode_pair(text, &inst.raw_source));
    let greedy_score = score_pair(&greedy_text)?;
    let greedy_bleu = bleu(&greedy.content(), &inst.reference, &ctx.bleu)?;
    let l_cls = -greedy_score.ln();

    let mut surrogate = Surrogate::new(inst.source.clone(), strategies.copied());
    let mut l_cont = 0.0;
    for s in 0..samples {
        let sample = ancestral(
            policy,
            &inst.source,
            strategies,
            ctx.max_len,
            derive_seed(seed, &[s as u64]),
        )?;
        let content = sample.content();
        let cont_coef =
            (greedy_bleu - bleu(&content, &inst.reference, &ctx.bleu)?) / samples as f64;
        l_cont += policy.logprob(&inst.source, strategies, &sample.tokens) * cont_coef;
        let cls_coef = if weights.alpha == 0.0 {
            0.0
        } else {
            (greedy_score - score_pair(&ctx.vocab.detokenize(&content)?)?) / samples as f64
        };
        surrogate.push(
            weights.alpha * cls_coef + weights.beta * cont_coef,
            sample.tokens,
        );
    }
    let target = inst.reference.with_eos();
    let l_lm = -policy.logprob(&inst.source, strategies, &target);
    surrogate.push(-weights.gamma, target);

    let losses = StepLosses {
        l_cls,
        l_cont,
        l_lm,
        l_final: weights.combine(l_cls, l_cont, l_lm),
    };
    Ok(StepOutcome {
        losses,
        grad: surrogate.gradient(policy),
        surrogate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub losses: StepLosses,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Row 0 is measured at the initial parameters; row `e` is the mean over
    /// the steps of epoch `e`.
    pub trace: Vec<EpochLosses>,
}

impl TrainReport {
    pub fn write_tsv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "epoch\tl_cls\tl_cont\tl_lm\tl_final")?;
        for row in &self.trace {
            let l = &row.losses;
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                row.epoch, l.l_cls, l.l_cont, l.l_lm, l.l_final
            )?;
        }
        Ok(())
    }
}

fn mean(losses: &[StepLosses]) -> StepLosses {
    let n = losses.len().max(1) as f64;
    let sum = |f: fn(&StepLosses) -> f64| losses.iter().map(f).sum::<f64>() / n;
    StepLosses {
        l_cls: sum(|l| l.l_cls),
        l_cont: sum(|l| l.l_cont),
        l_lm: sum(|l| l.l_lm),
        l_final: sum(|l| l.l_final),
    }
}

/// Plain gradient descent, one update per instance (and conditioning) in
/// corpus order.
pub fn train_policy(
    policy: &mut TabularPolicy,
    corpus: &[ReframeInstance],
    vocab: &Vocab,
    sentiment: &PairClassifier,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let ctx = RewardContext {
        vocab,
        sentiment,
        bleu: config.bleu,
        max_len: config.max_len,
    };
    let mut report = TrainReport::default();
    for epoch in 0..=config.epochs {
        let mut steps = Vec::new();
        for (i, inst) in corpus.iter().enumerate() {
            for (c, strategies) in config
                .conditioning
                .variants(&inst.strategies)
                .into_iter()
                .enumerate()
            {
                let seed = derive_seed(config.seed, &[epoch as u64, i as u64, c as u64]);
                let out = combined_step(
                    policy,
                    inst,
                    strategies,
                    &ctx,
                    &config.weights,
                    seed,
                    config.samples_per_instance,
                )?;
                if !out.losses.is_finite() || !out.grad.all_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        instance: i,
                        detail: format!("{:?}", out.losses),
                    });
                }
                if epoch > 0 {
                    policy.descend(&out.grad, config.learning_rate);
                }
                steps.push(out.losses);
            }
        }
        report.trace.push(EpochLosses {
            epoch,
            losses: mean(&steps),
        });
    }
    Ok(report)
}

/// Entries smaller than this are compared absolutely; central differences
/// cannot resolve them.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

/// Largest relative disagreement between `analytic` and central finite
/// differences of the surrogate, over every parameter `analytic` touches.
pub fn compare_gradient(
    policy: &TabularPolicy,
    surrogate: &Surrogate,
    analytic: &PolicyGrad,
    epsilon: f64,
) -> f64 {
    let mut probe = policy.clone();
    let v = policy.vocab_size();
    let mut worst: f64 = 0.0;
    for (bucket, row) in analytic.rows() {
        for (j, &a) in row.iter().enumerate() {
            let idx = bucket * v + j;
            let orig = probe.theta()[idx];
            probe.theta_mut()[idx] = orig + epsilon;
            let plus = surrogate.value_at_row(&probe, bucket);
            probe.theta_mut()[idx] = orig - epsilon;
            let minus = surrogate.value_at_row(&probe, bucket);
            probe.theta_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let scale = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    worst
}

/// Checks the surrogate's own analytic gradient against finite differences.
pub fn gradient_check(policy: &TabularPolicy, surrogate: &Surrogate, epsilon: f64) -> f64 {
    assert!(epsilon > 0.0, "epsilon must be > 0");
    compare_gradient(policy, surrogate, &surrogate.gradient(policy), epsilon)
}
