//! Discovering public value expressions (PVEs) in large sentence corpora.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`corpus`]: document ingestion, sentence segmentation, the sentence store.
//! - [`keywords`]: tiered keyword lexicon, matching, tier-weighted sampling.
//! - [`framework`]: labeling framework (definitions, heuristics, exemplars) and
//!   prompt assembly.
//! - [`annotator`]: GLM clients, response parsing, caching, cost estimation.
//! - [`rationale_eval`]: BLEU-based diversity/faithfulness and LDA topics.
//! - [`distill`]: dataset construction, hashed-feature linear classifier,
//!   evaluation and random baselines, corpus-scale prediction.
//! - [`review`]: human validation queues, judgments and agreement statistics.
//! - [`pipeline`]: run configuration, stage manifests and orchestration.

pub mod annotator;
pub mod corpus;
pub mod distill;
pub mod framework;
pub mod hashing;
pub mod jsonl;
pub mod keywords;
pub mod label;
pub mod pipeline;
pub mod rationale_eval;
pub mod review;

pub use label::Label;
pub use rationale_eval::tokenize::{tokenize, TokenSeq};
