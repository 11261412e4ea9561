//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use reframe::models::{ConditionalModel, FluencyLM, TokenDistribution};
use reframe::text::{TokenId, TokenSeq, Vocab, EOS};

pub struct Golden {
    pub candidate: String,
    pub reference: String,
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub ppl: f64,
}

pub fn golden() -> Vec<Golden> {
    include_str!("../data/metrics_golden.tsv")
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            let n = |i: usize| f[i].parse::<f64>().unwrap();
            Golden {
                candidate: f[0].into(),
                reference: f[1].into(),
                bleu: n(2),
                rouge1: n(3),
                rouge2: n(4),
                rouge_l: n(5),
                ppl: n(6),
            }
        })
        .collect()
}

pub const LM_CORPUS: [&str; 5] = [
    "the cat sat",
    "the cat ran",
    "a dog sat",
    "the dog sat down",
    "a cat",
];

pub fn golden_lm() -> (Vocab, FluencyLM) {
    let vocab = Vocab::build(&LM_CORPUS, 1).unwrap();
    let corpus: Vec<TokenSeq> = LM_CORPUS.iter().map(|s| vocab.tokenize(s)).collect();
    let lm = FluencyLM::fit(&corpus, vocab.len(), 2, 0.1).unwrap();
    (vocab, lm)
}

/// Clipped precision for every order and the brevity penalty, counted with
/// nested loops instead of hash maps.
pub fn counting_bleu(c: &[TokenId], r: &[TokenId]) -> f64 {
    let orders = c.len().min(4);
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let cand: Vec<&[TokenId]> = c.windows(n).collect();
        let refs: Vec<&[TokenId]> = r.windows(n).collect();
        let mut used = vec![false; refs.len()];
        let mut hits = 0;
        for g in &cand {
            if let Some(j) = (0..refs.len()).find(|&j| !used[j] && refs[j] == *g) {
                used[j] = true;
                hits += 1;
            }
        }
        log_sum += (hits as f64 / cand.len() as f64).max(1e-9).ln();
    }
    let bp = if c.len() >= r.len() {
        1.0
    } else {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    };
    bp * (log_sum / orders as f64).exp()
}

pub fn rank_order(p: &[f64], key: impl Fn(usize) -> f64) -> Vec<usize> {
    // selection sort on (key asc, id asc) over the support
    let mut left: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for j in 1..left.len() {
            let (a, b) = (key(left[j]), key(left[best]));
            if a < b || (a == b && left[j] < left[best]) {
                best = j;
            }
        }
        out.push(left.remove(best));
    }
    out
}

pub fn keep_prefix(p: &[f64], order: &[usize], n: usize) -> Vec<f64> {
    if n == order.len() {
        return p.to_vec();
    }
    let mut mass = 0.0;
    for &i in &order[..n] {
        mass += p[i];
    }
    let mut out = vec![0.0; p.len()];
    for &i in &order[..n] {
        out[i] = p[i] / mass;
    }
    out
}

pub fn covering(p: &[f64], order: &[usize], threshold: f64) -> usize {
    let mut cum = 0.0;
    for (n, &i) in order.iter().enumerate() {
        cum += p[i];
        if cum >= threshold {
            return n + 1;
        }
    }
    order.len()
}

pub fn brute_top_k(p: &[f64], k: usize) -> Vec<f64> {
    let order = rank_order(p, |i| -p[i]);
    keep_prefix(p, &order, k.min(order.len()))
}

pub fn brute_top_p(p: &[f64], q: f64) -> Vec<f64> {
    let order = rank_order(p, |i| -p[i]);
    keep_prefix(p, &order, covering(p, &order, q))
}

pub fn brute_typical(p: &[f64], tau: f64) -> Vec<f64> {
    let h: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
    let order = rank_order(p, |i| (-p[i].ln() - h).abs());
    keep_prefix(p, &order, covering(p, &order, tau))
}

pub fn random_distribution(rng: &mut ChaCha8Rng) -> TokenDistribution {
    let n = rng.gen_range(1..12);
    // small integer weights produce exact ties; some entries are zero
    let w: Vec<f64> = if rng.gen_bool(0.5) {
        (0..n).map(|_| rng.gen_range(0..4) as f64).collect()
    } else {
        (0..n)
            .map(|_| {
                if rng.gen_bool(0.1) {
                    0.0
                } else {
                    rng.gen::<f64>()
                }
            })
            .collect()
    };
    if w.iter().all(|&x| x == 0.0) {
        return TokenDistribution::uniform(n);
    }
    TokenDistribution::from_weights(w).unwrap()
}

/// Every finished sequence: ends in EOS, or reaches `max_len` without one.
pub fn enumerate<M: ConditionalModel>(m: &M, max_len: usize) -> Vec<(Vec<TokenId>, f64)> {
    let mut out = Vec::new();
    let mut stack = vec![(Vec::new(), 0.0)];
    while let Some((toks, lp)) = stack.pop() {
        let d = m.next_distribution(&TokenSeq::new(), None, &TokenSeq::from(toks.clone()));
        for t in d.support() {
            let mut next: Vec<TokenId> = toks.clone();
            next.push(t);
            let lp2 = lp + d.prob(t).ln();
            if t == EOS || next.len() == max_len {
                out.push((next, lp2));
            } else {
                stack.push((next, lp2));
            }
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}
