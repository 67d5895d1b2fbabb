//! Token and cost budgeting ahead of a run.
//!
//! Tokens are estimated as `ceil(chars / 4)`; this is a budget figure, not
//! billing truth.

use crate::framework::{assemble_prompt, FrameworkSpec};
use serde::{Deserialize, Serialize};

pub const DEFAULT_COMPLETION_TOKENS: u64 = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Prices {
    /// Currency units per 1,000 prompt tokens.
    pub prompt_per_1k: f64,
    /// Currency units per 1,000 completion tokens.
    pub completion_per_1k: f64,
    /// Expected rationale length per call.
    pub completion_tokens: u64,
}

impl Default for Prices {
    fn default() -> Self {
        Prices {
            prompt_per_1k: 0.03,
            completion_per_1k: 0.06,
            completion_tokens: DEFAULT_COMPLETION_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub n_calls: u64,
    pub est_prompt_tokens: u64,
    pub est_completion_tokens: u64,
    pub est_cost: f64,
}

impl CostEstimate {
    pub fn total_tokens(&self) -> u64 {
        self.est_prompt_tokens + self.est_completion_tokens
    }
}

pub fn token_estimate(chars: usize) -> u64 {
    chars.div_ceil(4) as u64
}

/// The lower median by character count; `None` for an empty list.
pub fn median_length_sentence<'a>(sentences: &[&'a str]) -> Option<&'a str> {
    let mut sorted = sentences.to_vec();
    sorted.sort_by(|a, b| a.chars().count().cmp(&b.chars().count()).then(a.cmp(b)));
    sorted.get(sorted.len().saturating_sub(1) / 2).copied()
}

/// Estimates the cost of annotating `n_sentences`, sizing the prompt with
/// `representative` (typically [`median_length_sentence`] of the sample).
pub fn estimate_cost(
    n_sentences: u64,
    spec: &FrameworkSpec,
    representative: &str,
    prices: &Prices,
) -> CostEstimate {
    let per_call = token_estimate(assemble_prompt(spec, representative).char_count());
    let est_prompt_tokens = n_sentences * per_call;
    let est_completion_tokens = n_sentences * prices.completion_tokens;
    let est_cost = est_prompt_tokens as f64 / 1000.0 * prices.prompt_per_1k
        + est_completion_tokens as f64 / 1000.0 * prices.completion_per_1k;
    CostEstimate {
        n_calls: n_sentences,
        est_prompt_tokens,
        est_completion_tokens,
        est_cost,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framework::default_framework;

    #[test]
    fn zero_sentences_cost_nothing() {
        let est = estimate_cost(0, &default_framework(), "A sentence.", &Prices::default());
        assert_eq!(est.total_tokens(), 0);
        assert_eq!(est.est_cost, 0.0);
    }

    #[test]
    fn blended_price_arithmetic() {
        // 10,000 calls at ~4,000 tokens each, priced at a blended 0.03 per 1K.
        let spec = default_framework();
        let base = token_estimate(assemble_prompt(&spec, "").char_count());
        let prices = Prices {
            prompt_per_1k: 0.03,
            completion_per_1k: 0.03,
            completion_tokens: 4000 - base,
        };
        let est = estimate_cost(10_000, &spec, "", &prices);
        assert_eq!(est.total_tokens(), 40_000_000);
        assert!((est.est_cost - 1200.0).abs() < 1e-6);
    }

    #[test]
    fn token_estimate_rounds_up() {
        assert_eq!(token_estimate(0), 0);
        assert_eq!(token_estimate(1), 1);
        assert_eq!(token_estimate(8), 2);
        assert_eq!(token_estimate(9), 3);
    }

    #[test]
    fn median_sentence() {
        assert_eq!(median_length_sentence(&[]), None);
        assert_eq!(median_length_sentence(&["aaa", "a", "aa"]), Some("aa"));
        assert_eq!(
            median_length_sentence(&["aaaa", "a", "aa", "aaa"]),
            Some("aa")
        );
    }
}
