//! Rationale quality: BLEU similarity, diversity/faithfulness, and LDA themes.

pub mod bleu;
pub mod diversity;
pub mod lda;
pub mod tokenize;

pub use bleu::{bleu, BleuConfig, Smoothing};
pub use diversity::{
    diversity_report, faithfulness, generated_pairwise_diversity, provided_pairwise_diversity,
    DiversityReport,
};
pub use lda::{lda_fit, top_words, LdaConfig, TopicModel};
