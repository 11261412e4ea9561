//! Guide chapters compiled as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/text-and-models.md")]
pub mod text_and_models {}
#[doc = include_str!("../../../book/src/decoding.md")]
pub mod decoding {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/classifiers.md")]
pub mod classifiers {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/reranking.md")]
pub mod reranking {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
