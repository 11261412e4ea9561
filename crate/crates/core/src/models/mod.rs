//! The conditional sequence-model contract and its desk-scale carriers.
//!
//! A [`ConditionalModel`] maps `(source, strategies, prefix)` to a distribution
//! over the next target token. Any model that honors that contract can be
//! decoded, trained or re-ranked by the rest of the crate; the hidden-state
//! machinery of a neural encoder/decoder stays behind the trait.

mod distribution;
mod lm;
mod ngram;
mod policy;

pub use distribution::TokenDistribution;
pub use lm::FluencyLM;
pub use ngram::NGramConditionalModel;
pub use policy::{PolicyGrad, TabularPolicy, DEFAULT_BUCKETS};

use crate::text::{StrategySet, TokenSeq};

/// Add-delta smoothing constant used when none is configured.
pub const DEFAULT_DELTA: f64 = 0.1;

pub trait ConditionalModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn next_distribution(
        &self,
        source: &TokenSeq,
        strategies: Option<&StrategySet>,
        prefix: &TokenSeq,
    ) -> TokenDistribution;
}

impl<M: ConditionalModel + ?Sized> ConditionalModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_distribution(
        &self,
        source: &TokenSeq,
        strategies: Option<&StrategySet>,
        prefix: &TokenSeq,
    ) -> TokenDistribution {
        (**self).next_distribution(source, strategies, prefix)
    }
}

pub(crate) fn check_smoothing(order: usize, delta: f64) -> crate::Result<()> {
    if order < 1 {
        return Err(crate::Error::Config(format!(
            "n-gram order must be >= 1, got {order}"
        )));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(crate::Error::Config(format!(
            "smoothing delta must be > 0, got {delta}"
        )));
    }
    Ok(())
}
