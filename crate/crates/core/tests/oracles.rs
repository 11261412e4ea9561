//! Independent re-implementations checked against the library.

mod common;

use common::*;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reframe::decode::{beam_decode, filter_top_k, filter_top_p, filter_typical, greedy_decode};
use reframe::metrics::{
    bleu, lcs_len, perplexity, rouge_l, rouge_n, sentiment_delta, BleuConfig, SentimentLexicon,
};
use reframe::models::{
    ConditionalModel, FluencyLM, NGramConditionalModel, TabularPolicy, TokenDistribution,
};
use reframe::text::{ReframeInstance, Strategy, StrategySet, TokenId, TokenSeq, Vocab, BOS, EOS};

fn seq(ids: &[TokenId]) -> TokenSeq {
    TokenSeq::from(ids.to_vec())
}

// ---------------------------------------------------------------- metrics

#[test]
fn golden_metric_file() {
    let cases = golden();
    assert_eq!(cases.len(), 10);
    let (lm_vocab, lm) = golden_lm();
    for g in &cases {
        let v = Vocab::build(&[g.candidate.as_str(), g.reference.as_str()], 1).unwrap();
        let (c, r) = (v.tokenize(&g.candidate), v.tokenize(&g.reference));
        let close = |a: f64, b: f64, what: &str| {
            assert!(
                (a - b).abs() < 1e-12,
                "{what} {:?}: {a} vs {b}",
                g.candidate
            )
        };
        close(
            bleu(&c, &r, &BleuConfig::default()).unwrap(),
            g.bleu,
            "bleu",
        );
        close(rouge_n(&c, &r, 1).f1, g.rouge1, "rouge1");
        close(rouge_n(&c, &r, 2).f1, g.rouge2, "rouge2");
        close(rouge_l(&c, &r).f1, g.rouge_l, "rougeL");
        let p = perplexity(&lm, &lm_vocab.tokenize(&g.candidate).with_eos()).unwrap();
        close(p, g.ppl, "ppl");
    }
}

#[test]
fn bleu_the_cat_sat() {
    let v = Vocab::build(&["the cat sat down"], 1).unwrap();
    let (c, r) = (v.tokenize("the cat sat"), v.tokenize("the cat sat down"));
    let got = bleu(&c, &r, &BleuConfig::default()).unwrap();
    // all three precisions are 1; BP = exp(1 - 4/3)
    assert!((got - (-1.0f64 / 3.0).exp()).abs() < 1e-12);
    assert!((got - counting_bleu(c.ids(), r.ids())).abs() < 1e-12);
}

#[test]
fn bleu_matches_counting_oracle_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let lc = rng.gen_range(1..10);
        let lr = rng.gen_range(1..10);
        let c: Vec<TokenId> = (0..lc).map(|_| rng.gen_range(4..9)).collect();
        let r: Vec<TokenId> = (0..lr).map(|_| rng.gen_range(4..9)).collect();
        let got = bleu(&seq(&c), &seq(&r), &BleuConfig::default()).unwrap();
        assert!((got - counting_bleu(&c, &r)).abs() < 1e-12, "{c:?} {r:?}");
    }
}

#[test]
fn rouge_bigram_six_tokens() {
    // candidate bigrams: ab bc cd da ab; reference bigrams: ab bd dc ca ae
    // only one "ab" can be matched, so P = R = 1/5
    let c = seq(&[4, 5, 6, 7, 4, 5]);
    let r = seq(&[4, 5, 7, 6, 4, 8]);
    let s = rouge_n(&c, &r, 2);
    assert_eq!((s.precision, s.recall), (0.2, 0.2));
    assert!((s.f1 - 0.2).abs() < 1e-15);
}

#[test]
fn lcs_abcd_acbd() {
    let (a, b) = (seq(&[4, 5, 6, 7]), seq(&[4, 6, 5, 7]));
    assert_eq!(lcs_len(a.ids(), b.ids()), 3);
    let s = rouge_l(&a, &b);
    assert_eq!((s.precision, s.recall), (0.75, 0.75));
}

#[test]
fn bigram_lm_count_table() {
    // a=4 b=5 c=6 d=7, |V| = 8, delta = 0.1
    // events with EOS: BOS->a x3, BOS->b, BOS->d; a->b x2, a->c; b->EOS, b->c x2; c->EOS x3; d->EOS
    let corpus = [
        seq(&[4, 5]),
        seq(&[4, 6]),
        seq(&[5, 6]),
        seq(&[4, 5, 6]),
        seq(&[7]),
    ];
    let lm = FluencyLM::fit(&corpus, 8, 2, 0.1).unwrap();
    let table: [(&[TokenId], TokenId, f64); 9] = [
        (&[], 4, 3.1 / 5.8),
        (&[], 5, 1.1 / 5.8),
        (&[], 6, 0.1 / 5.8),
        (&[4], 5, 2.1 / 3.8),
        (&[4], 6, 1.1 / 3.8),
        (&[5], EOS, 1.1 / 3.8),
        (&[5], 6, 2.1 / 3.8),
        (&[6], EOS, 3.1 / 3.8),
        (&[7], EOS, 1.1 / 1.8),
    ];
    for (h, t, want) in table {
        assert!((lm.prob(h, t) - want).abs() < 1e-15, "p({t} | {h:?})");
    }
    // unseen context backs off to unigram counts: 15 events, a occurs 3 times
    assert!((lm.prob(&[EOS], 4) - 3.1 / 15.8).abs() < 1e-15);
    // chain rule over a b EOS
    let ppl = perplexity(&lm, &seq(&[4, 5, EOS])).unwrap();
    let p: f64 = (3.1 / 5.8) * (2.1 / 3.8) * (1.1 / 3.8);
    assert!((ppl - p.powf(-1.0 / 3.0)).abs() < 1e-12);
}

#[test]
fn sentiment_mixed_case() {
    let lex = SentimentLexicon::new([
        ("good", 0.8),
        ("bad", -0.6),
        ("happy", 0.9),
        ("sad", -0.7),
        ("okay", 0.2),
        ("awful", -1.0),
    ])
    .unwrap();
    let v = Vocab::build(&["good day okay bad sad awful"], 1).unwrap();
    let cand = v.tokenize("good day okay bad");
    let src = v.tokenize("sad awful day");
    // (0.8 + 0 + 0.2 - 0.6) / 4 - (-0.7 - 1.0 + 0) / 3
    let want = 0.4 / 4.0 + 1.7 / 3.0;
    assert!((sentiment_delta(&lex, &v, &src, &cand) - want).abs() < 1e-12);
    assert_eq!(sentiment_delta(&lex, &v, &src, &src), 0.0);
}

// ---------------------------------------------------------------- n-gram model

const PAIRS: [(&str, &str, &str); 20] = [
    ("i lost my keys", "i will find my keys", "optimism"),
    ("i failed the test", "i can study more", "growth"),
    ("my day was bad", "my day was a lesson", "growth"),
    ("it is raining", "the rain will stop", "impermanence"),
    ("i am tired", "i can rest soon", "optimism"),
    ("work was long", "work is done now", "impermanence"),
    ("i missed the bus", "i had a nice walk", "neutralizing"),
    ("my phone broke", "my phone can be fixed", "optimism"),
    ("i am sick", "i am thankful for rest", "thankfulness"),
    (
        "nobody called me",
        "i am fine on my own",
        "self_affirmation",
    ),
    ("i lost the game", "i can play again", "growth,optimism"),
    ("the food was cold", "the food was fine", "neutralizing"),
    ("my boss yelled", "my boss gave feedback", "growth"),
    ("i am bad at math", "i am learning math", "self_affirmation"),
    ("it is so hot", "the heat will pass", "impermanence"),
    ("i spilled my tea", "i can make more tea", "neutralizing"),
    ("i feel alone", "i am thankful for my dog", "thankfulness"),
    ("i am tired", "i am grateful for my bed", "thankfulness"),
    ("the test was hard", "the test is over now", "impermanence"),
    ("my plan failed", "i can make a new plan", "growth"),
];

fn toy_pairs() -> (Vocab, Vec<ReframeInstance>) {
    let texts: Vec<&str> = PAIRS.iter().flat_map(|(a, b, _)| [*a, *b]).collect();
    let v = Vocab::build(&texts, 1).unwrap();
    let insts = PAIRS
        .iter()
        .map(|(a, b, s)| ReframeInstance::new(a, b, StrategySet::parse(s).unwrap(), &v).unwrap())
        .collect();
    (v, insts)
}

/// Add-delta counts gathered by scanning every pair at query time.
fn ngram_oracle(
    insts: &[ReframeInstance],
    v: usize,
    delta: f64,
    source: &TokenSeq,
    strategies: Option<&StrategySet>,
    prev: TokenId,
) -> Vec<f64> {
    let events = |keep: &dyn Fn(&ReframeInstance) -> bool, ctx: Option<TokenId>| {
        let mut c: BTreeMap<TokenId, f64> = BTreeMap::new();
        let mut total = 0.0;
        for inst in insts.iter().filter(|i| keep(i)) {
            let t = inst.reference.with_eos();
            for (k, &tok) in t.ids().iter().enumerate() {
                let before = if k == 0 { BOS } else { t.ids()[k - 1] };
                if ctx.is_none_or(|x| x == before) {
                    *c.entry(tok).or_default() += 1.0;
                    total += 1.0;
                }
            }
        }
        (c, total)
    };
    let same_source = |i: &ReframeInstance| {
        i.source == *source && strategies.is_none_or(|s| *s == i.strategies)
    };
    let mut level = events(&same_source, Some(prev));
    if level.1 == 0.0 {
        level = events(&|_| true, Some(prev));
    }
    if level.1 == 0.0 {
        level = events(&|_| true, None);
    }
    let (c, total) = level;
    (0..v as TokenId)
        .map(|t| (c.get(&t).copied().unwrap_or(0.0) + delta) / (total + delta * v as f64))
        .collect()
}

#[test]
fn ngram_order_two_matches_hand_counts() {
    let (v, insts) = toy_pairs();
    let delta = 0.1;
    let m = NGramConditionalModel::fit(&insts, v.len(), 2, delta).unwrap();
    let mut queries = Vec::new();
    for inst in &insts {
        let t = inst.reference.with_eos();
        for k in 0..t.len() {
            queries.push((
                inst.source.clone(),
                Some(inst.strategies),
                seq(&t.ids()[..k]),
            ));
            queries.push((inst.source.clone(), None, seq(&t.ids()[..k])));
        }
        // a strategy set never seen with this source
        queries.push((
            inst.source.clone(),
            Some(StrategySet::single(Strategy::Thankfulness)),
            seq(&[]),
        ));
    }
    // unseen source and an unseen previous token
    queries.push((v.tokenize("completely new words"), None, v.tokenize("i")));
    queries.push((v.tokenize("i am tired"), None, seq(&[EOS])));
    for (src, set, prefix) in &queries {
        let got = m.next_distribution(src, set.as_ref(), prefix);
        let prev = prefix.last().unwrap_or(BOS);
        let want = ngram_oracle(&insts, v.len(), delta, src, set.as_ref(), prev);
        for (a, b) in got.probs().iter().zip(&want) {
            assert!((a - b).abs() < 1e-15, "{src:?} {set:?} {prefix:?}");
        }
    }
}

// ---------------------------------------------------------------- filters

#[test]
fn filters_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let d = random_distribution(&mut rng);
        let k = rng.gen_range(1..=d.len() + 1);
        let q = rng.gen_range(0.01..=1.0);
        let tau = rng.gen_range(0.01..=1.0);
        assert_eq!(
            filter_top_k(&d, k).probs(),
            &brute_top_k(d.probs(), k)[..],
            "{d:?} k={k}"
        );
        assert_eq!(
            filter_top_p(&d, q).probs(),
            &brute_top_p(d.probs(), q)[..],
            "{d:?} p={q}"
        );
        assert_eq!(
            filter_typical(&d, tau).probs(),
            &brute_typical(d.probs(), tau)[..],
            "{d:?} tau={tau}"
        );
    }
}

// ---------------------------------------------------------------- beam search

/// Next-token distribution depends only on the position.
struct Positional(Vec<TokenDistribution>);

impl ConditionalModel for Positional {
    fn vocab_size(&self) -> usize {
        self.0[0].len()
    }
    fn next_distribution(
        &self,
        _: &TokenSeq,
        _: Option<&StrategySet>,
        prefix: &TokenSeq,
    ) -> TokenDistribution {
        self.0[prefix.len()].clone()
    }
}

#[test]
fn beam_eight_is_true_top_eight_on_positional_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        // EOS only at the last step, so every sequence has exactly three tokens
        let m = Positional(
            (0..3)
                .map(|step| {
                    let w = (0..4)
                        .map(|t| {
                            if t == EOS && step < 2 {
                                0.0
                            } else {
                                rng.gen::<f64>() + 0.01
                            }
                        })
                        .collect();
                    TokenDistribution::from_weights(w).unwrap()
                })
                .collect(),
        );
        let beams = beam_decode(&m, &TokenSeq::new(), None, 8, 3, false);
        let truth = enumerate(&m, 3);
        assert_eq!(beams.len(), 8);
        for (b, t) in beams.iter().zip(&truth) {
            assert_eq!(b.tokens.ids(), &t.0[..]);
            assert!((b.logprob - t.1).abs() < 1e-12);
        }
    }
}

#[test]
fn wide_beam_is_exhaustive_on_random_policies() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..200 {
        let v = rng.gen_range(3..=5);
        let max_len = rng.gen_range(1..=4);
        let p = TabularPolicy::random(16, v, 3.0, case);
        let width = v.pow(max_len as u32);
        let best = beam_decode(&p, &TokenSeq::new(), None, width, max_len, false);
        let truth = enumerate(&p, max_len);
        assert_eq!(best[0].tokens.ids(), &truth[0].0[..], "case {case}");
        assert!((best[0].logprob - truth[0].1).abs() < 1e-12);
        let g = greedy_decode(&p, &TokenSeq::new(), None, max_len);
        assert!(g.logprob <= truth[0].1 + 1e-12);
    }
}
