//! Positive text reframing toolkit.
//!
//! The crate covers the whole generation pipeline at desk scale:
//!
//! * [`text`]: tokenization, vocabulary and the shared domain types;
//! * [`models`]: the conditional sequence-model contract with an n-gram model,
//!   a trainable tabular softmax policy and an n-gram fluency LM;
//! * [`decode`]: greedy, beam, top-k, top-p and typical decoding;
//! * [`metrics`]: BLEU, ROUGE-1/2/L, perplexity, fluency and sentiment delta;
//! * [`classify`]: hashed logistic pair classifiers and their datasets;
//! * [`train`]: sentiment, self-critical content and LM losses with analytic
//!   gradients;
//! * [`rerank`]: candidate generation and product-of-factors re-ranking;
//! * [`corpus`], [`config`] and [`pipeline`]: ingestion and the end-to-end
//!   train / generate / evaluate / ablate commands.

pub mod classify;
pub mod config;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod hash;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod rerank;
pub mod text;
pub mod train;

pub use error::{Error, Result};
