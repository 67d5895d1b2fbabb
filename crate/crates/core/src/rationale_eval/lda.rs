//! Latent Dirichlet allocation fitted by collapsed Gibbs sampling.

use super::tokenize::TokenSeq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

/// Default English stopword list applied before fitting.
pub const STOPWORDS: &[&str] = &[
    "a",
    "about",
    "above",
    "after",
    "again",
    "against",
    "all",
    "also",
    "am",
    "an",
    "and",
    "any",
    "are",
    "as",
    "at",
    "be",
    "because",
    "been",
    "before",
    "being",
    "below",
    "between",
    "both",
    "but",
    "by",
    "can",
    "could",
    "did",
    "do",
    "does",
    "doing",
    "down",
    "during",
    "each",
    "either",
    "few",
    "for",
    "from",
    "further",
    "had",
    "has",
    "have",
    "having",
    "he",
    "her",
    "here",
    "hers",
    "herself",
    "him",
    "himself",
    "his",
    "how",
    "however",
    "i",
    "if",
    "in",
    "into",
    "is",
    "it",
    "its",
    "itself",
    "just",
    "let",
    "may",
    "me",
    "might",
    "more",
    "most",
    "must",
    "my",
    "myself",
    "no",
    "nor",
    "not",
    "now",
    "of",
    "off",
    "on",
    "once",
    "one",
    "only",
    "or",
    "other",
    "our",
    "ours",
    "ourselves",
    "out",
    "over",
    "own",
    "s",
    "same",
    "she",
    "should",
    "so",
    "some",
    "such",
    "t",
    "than",
    "that",
    "the",
    "their",
    "theirs",
    "them",
    "themselves",
    "then",
    "there",
    "therefore",
    "these",
    "they",
    "this",
    "those",
    "through",
    "thus",
    "to",
    "too",
    "under",
    "until",
    "up",
    "upon",
    "us",
    "very",
    "was",
    "we",
    "were",
    "what",
    "when",
    "where",
    "whether",
    "which",
    "while",
    "who",
    "whom",
    "why",
    "will",
    "with",
    "within",
    "without",
    "would",
    "yet",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub k: usize,
    pub iterations: usize,
    /// Document-topic prior; `None` means `50 / k`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub seed: u64,
    /// Terms appearing in fewer documents are dropped.
    pub min_df: usize,
    pub remove_stopwords: bool,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            k: 10,
            iterations: 1000,
            alpha: None,
            beta: 0.01,
            seed: 0,
            min_df: 2,
            remove_stopwords: true,
        }
    }
}

impl LdaConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.k as f64)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LdaError {
    #[error("at least two topics are required (k = {0})")]
    TooFewTopics(usize),
    #[error("no documents given")]
    NoDocuments,
    #[error("vocabulary is empty after filtering")]
    EmptyVocabulary,
    #[error("alpha and beta must be positive")]
    BadPrior,
    #[error("m must be in 1..={vocab} (got {m})")]
    BadTopWordCount { m: usize, vocab: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub k: usize,
    pub vocabulary: Vec<String>,
    /// `k x V`, rows sum to 1.
    pub topic_word: Vec<Vec<f64>>,
    /// `D x k`, rows sum to 1.
    pub doc_topic: Vec<Vec<f64>>,
    /// Tokens assigned to each topic in the final state.
    pub topic_counts: Vec<u64>,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub iterations: usize,
}

/// Sorted vocabulary after stopword and document-frequency filtering.
pub fn build_vocabulary(docs: &[TokenSeq], cfg: &LdaConfig) -> Vec<String> {
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        let uniq: BTreeSet<&str> = doc.iter().map(String::as_str).collect();
        for t in uniq {
            *df.entry(t).or_default() += 1;
        }
    }
    df.into_iter()
        .filter(|&(t, n)| n >= cfg.min_df && !(cfg.remove_stopwords && STOPWORDS.contains(&t)))
        .map(|(t, _)| t.to_string())
        .collect()
}

pub fn lda_fit(docs: &[TokenSeq], cfg: &LdaConfig) -> Result<TopicModel, LdaError> {
    let k = cfg.k;
    if k < 2 {
        return Err(LdaError::TooFewTopics(k));
    }
    if docs.is_empty() {
        return Err(LdaError::NoDocuments);
    }
    let alpha = cfg.alpha();
    let beta = cfg.beta;
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(LdaError::BadPrior);
    }
    let vocabulary = build_vocabulary(docs, cfg);
    let index: HashMap<&str, usize> = vocabulary
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let words: Vec<Vec<usize>> = docs
        .iter()
        .map(|d| {
            d.iter()
                .filter_map(|t| index.get(t.as_str()).copied())
                .collect()
        })
        .collect();
    if words.iter().all(Vec::is_empty) {
        return Err(LdaError::EmptyVocabulary);
    }
    let v = vocabulary.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut doc_counts = vec![vec![0u64; k]; words.len()];
    let mut word_counts = vec![vec![0u64; v]; k];
    let mut topic_counts = vec![0u64; k];
    let mut assignments: Vec<Vec<usize>> = Vec::with_capacity(words.len());
    for (d, doc) in words.iter().enumerate() {
        let z: Vec<usize> = doc.iter().map(|_| rng.gen_range(0..k)).collect();
        for (&w, &t) in doc.iter().zip(&z) {
            doc_counts[d][t] += 1;
            word_counts[t][w] += 1;
            topic_counts[t] += 1;
        }
        assignments.push(z);
    }

    let v_beta = v as f64 * beta;
    let mut weights = vec![0.0f64; k];
    for _ in 0..cfg.iterations {
        for (d, doc) in words.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let old = assignments[d][i];
                doc_counts[d][old] -= 1;
                word_counts[old][w] -= 1;
                topic_counts[old] -= 1;

                let mut total = 0.0;
                for t in 0..k {
                    total += (doc_counts[d][t] as f64 + alpha) * (word_counts[t][w] as f64 + beta)
                        / (topic_counts[t] as f64 + v_beta);
                    weights[t] = total;
                }
                let u = rng.gen::<f64>() * total;
                let new = weights.iter().position(|&c| u < c).unwrap_or(k - 1);

                assignments[d][i] = new;
                doc_counts[d][new] += 1;
                word_counts[new][w] += 1;
                topic_counts[new] += 1;
            }
        }
    }

    let topic_word = (0..k)
        .map(|t| {
            let denom = topic_counts[t] as f64 + v_beta;
            normalize(
                word_counts[t]
                    .iter()
                    .map(|&c| (c as f64 + beta) / denom)
                    .collect(),
            )
        })
        .collect();
    let k_alpha = k as f64 * alpha;
    let doc_topic = words
        .iter()
        .zip(&doc_counts)
        .map(|(doc, counts)| {
            let denom = doc.len() as f64 + k_alpha;
            normalize(counts.iter().map(|&c| (c as f64 + alpha) / denom).collect())
        })
        .collect();

    Ok(TopicModel {
        k,
        vocabulary,
        topic_word,
        doc_topic,
        topic_counts,
        alpha,
        beta,
        seed: cfg.seed,
        iterations: cfg.iterations,
    })
}

// The closed-form estimates already sum to 1 analytically; dividing by the
// float sum removes accumulated rounding.
fn normalize(mut row: Vec<f64>) -> Vec<f64> {
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= s);
    row
}

/// The `m` most probable terms of each topic; ties go to the
/// lexicographically smaller term.
pub fn top_words(model: &TopicModel, m: usize) -> Result<Vec<Vec<String>>, LdaError> {
    let vocab = model.vocabulary.len();
    if m == 0 || m > vocab {
        return Err(LdaError::BadTopWordCount { m, vocab });
    }
    Ok(model
        .topic_word
        .iter()
        .map(|row| {
            let mut idx: Vec<usize> = (0..vocab).collect();
            idx.sort_by(|&a, &b| {
                row[b]
                    .total_cmp(&row[a])
                    .then_with(|| model.vocabulary[a].cmp(&model.vocabulary[b]))
            });
            idx.into_iter()
                .take(m)
                .map(|i| model.vocabulary[i].clone())
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub topic_id: usize,
    pub top_words: Vec<String>,
    /// Share of corpus tokens assigned to the topic.
    pub weight: f64,
}

pub fn topic_report(model: &TopicModel, m: usize) -> Result<Vec<TopicSummary>, LdaError> {
    let total: u64 = model.topic_counts.iter().sum();
    let words = top_words(model, m.min(model.vocabulary.len()))?;
    Ok(words
        .into_iter()
        .enumerate()
        .map(|(topic_id, top_words)| TopicSummary {
            topic_id,
            top_words,
            weight: model.topic_counts[topic_id] as f64 / total.max(1) as f64,
        })
        .collect())
}
