use crate::error::{Error, Result};
use crate::text::TokenId;

const SUM_TOLERANCE: f64 = 1e-9;

/// A probability distribution over the vocabulary at one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    probs: Vec<f64>,
}

impl TokenDistribution {
    /// Validates non-negativity, at least one positive entry and unit mass.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Distribution(
                "entries must be finite and >= 0".into(),
            ));
        }
        if !probs.iter().any(|p| *p > 0.0) {
            return Err(Error::Distribution("no positive entry".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Distribution(format!("entries sum to {sum}")));
        }
        Ok(TokenDistribution { probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::Distribution(format!("weights sum to {sum}")));
        }
        Self::new(weights.into_iter().map(|w| w / sum).collect())
    }

    /// Numerically stable softmax of a logit row.
    pub fn softmax(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        TokenDistribution {
            probs: exps.into_iter().map(|e| e / sum).collect(),
        }
    }

    pub fn uniform(size: usize) -> Self {
        assert!(size > 0, "uniform distribution over an empty vocabulary");
        TokenDistribution {
            probs: vec![1.0 / size as f64; size],
        }
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        debug_assert!(Self::new(probs.clone()).is_ok());
        TokenDistribution { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.probs.get(id as usize).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Highest-probability token, lowest id on ties.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best as TokenId
    }

    pub fn support(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, _)| i as TokenId)
    }

    /// Shannon entropy in nats over the support.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }
}
