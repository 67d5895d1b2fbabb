//! Sentence-level BLEU between two token sequences.
//!
//! `score = BP * exp(sum_n w_n * ln p_n)` where `p_n` is the clipped n-gram
//! precision of the candidate against a single reference and
//! `BP = 1` if `c >= r`, else `exp(1 - r/c)`. Without smoothing, any zero
//! precision with a positive weight makes the score exactly 0.

use super::tokenize::TokenSeq;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "epsilon")]
pub enum Smoothing {
    #[default]
    None,
    /// Replace a zero match count by `epsilon` before dividing.
    Epsilon(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    max_order: usize,
    weights: Vec<f64>,
    #[serde(default)]
    smoothing: Smoothing,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BleuConfigError {
    #[error("max_order must be at least 1")]
    ZeroOrder,
    #[error("expected {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("weights must be non-negative and sum to 1 (sum = {0})")]
    BadWeights(f64),
    #[error("smoothing epsilon must be positive")]
    BadEpsilon,
}

impl BleuConfig {
    /// Uniform weights `1/N`, no smoothing.
    pub fn uniform(max_order: usize) -> Result<Self, BleuConfigError> {
        if max_order == 0 {
            return Err(BleuConfigError::ZeroOrder);
        }
        Self::new(
            max_order,
            vec![1.0 / max_order as f64; max_order],
            Smoothing::None,
        )
    }

    pub fn new(
        max_order: usize,
        weights: Vec<f64>,
        smoothing: Smoothing,
    ) -> Result<Self, BleuConfigError> {
        let cfg = BleuConfig {
            max_order,
            weights,
            smoothing,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BleuConfigError> {
        if self.max_order == 0 {
            return Err(BleuConfigError::ZeroOrder);
        }
        if self.weights.len() != self.max_order {
            return Err(BleuConfigError::WeightCount {
                expected: self.max_order,
                got: self.weights.len(),
            });
        }
        let sum: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| w.is_nan() || *w < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(BleuConfigError::BadWeights(sum));
        }
        if let Smoothing::Epsilon(e) = self.smoothing {
            if e.is_nan() || e <= 0.0 {
                return Err(BleuConfigError::BadEpsilon);
            }
        }
        Ok(())
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig::uniform(4).expect("order 4 is valid")
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and total candidate n-grams of order `n`.
pub fn clipped_matches(candidate: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let matched = cand
        .iter()
        .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, candidate.len().saturating_sub(n - 1))
}

/// BLEU of `candidate` against `reference`, in `[0, 1]`. An empty input
/// scores 0 and logs a warning.
pub fn bleu(candidate: &TokenSeq, reference: &TokenSeq, cfg: &BleuConfig) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        log::warn!("bleu called with an empty sequence; scoring 0");
        return 0.0;
    }
    let mut log_sum = 0.0;
    for (i, &w) in cfg.weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let (matched, total) = clipped_matches(candidate, reference, i + 1);
        let numerator = match (matched, cfg.smoothing) {
            (0, Smoothing::Epsilon(eps)) if total > 0 => eps,
            (m, _) => m as f64,
        };
        if numerator == 0.0 || total == 0 {
            return 0.0;
        }
        log_sum += w * (numerator / total as f64).ln();
    }
    let c = candidate.len() as f64;
    let r = reference.len() as f64;
    let bp = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    (bp * log_sum.exp()).clamp(0.0, 1.0)
}
