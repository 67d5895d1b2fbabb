//! Diversity and faithfulness statistics over rationales, grouped by label.
//!
//! Lower BLEU means more diverse. BLEU is asymmetric, so pairwise statistics
//! average over ordered pairs `(i, j)` with `i != j`. Per-pair scores are
//! sorted before summation so every statistic is independent of input order.

use super::bleu::{bleu, BleuConfig};
use super::tokenize::TokenSeq;
use crate::Label;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub type Grouped = BTreeMap<Label, Vec<TokenSeq>>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiversityError {
    #[error("no provided rationales for category {0}")]
    NoProvided(Label),
}

fn order_free_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean BLEU over ordered pairs, or `None` with fewer than two items.
pub fn mean_pairwise_bleu(items: &[TokenSeq], cfg: &BleuConfig) -> Option<f64> {
    if items.len() < 2 {
        return None;
    }
    let n = items.len();
    let scores: Vec<f64> = (0..n * n)
        .into_par_iter()
        .filter(|k| k / n != k % n)
        .map(|k| bleu(&items[k / n], &items[k % n], cfg))
        .collect();
    Some(order_free_mean(scores))
}

fn pairwise_by_label(groups: &Grouped, cfg: &BleuConfig, what: &str) -> BTreeMap<Label, f64> {
    groups
        .iter()
        .filter_map(|(&label, items)| {
            let v = mean_pairwise_bleu(items, cfg);
            if v.is_none() {
                log::warn!("{what}: category {label} has fewer than two rationales; omitted");
            }
            v.map(|v| (label, v))
        })
        .collect()
}

/// Mean pairwise similarity among the rationales supplied as exemplars.
pub fn provided_pairwise_diversity(provided: &Grouped, cfg: &BleuConfig) -> BTreeMap<Label, f64> {
    pairwise_by_label(provided, cfg, "provided pairwise")
}

/// Mean pairwise similarity among generated rationales.
pub fn generated_pairwise_diversity(generated: &Grouped, cfg: &BleuConfig) -> BTreeMap<Label, f64> {
    pairwise_by_label(generated, cfg, "generated pairwise")
}

/// For each category: the mean, over generated rationales, of the maximum
/// BLEU against any same-category provided rationale.
pub fn faithfulness(
    generated: &Grouped,
    provided: &Grouped,
    cfg: &BleuConfig,
) -> Result<BTreeMap<Label, f64>, DiversityError> {
    let mut out = BTreeMap::new();
    for (&label, gen) in generated {
        if gen.is_empty() {
            continue;
        }
        let refs = provided
            .get(&label)
            .filter(|r| !r.is_empty())
            .ok_or(DiversityError::NoProvided(label))?;
        let maxima: Vec<f64> = gen
            .par_iter()
            .map(|g| refs.iter().map(|r| bleu(g, r, cfg)).fold(0.0, f64::max))
            .collect();
        out.insert(label, order_free_mean(maxima));
    }
    Ok(out)
}

/// One row of the diversity report. Statistics that cannot be computed
/// (too few rationales) are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryDiversity {
    pub provided_pairwise: Option<f64>,
    pub gen_vs_provided_max_avg: Option<f64>,
    pub generated_pairwise: Option<f64>,
    pub n_provided: usize,
    pub n_generated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub categories: BTreeMap<Label, CategoryDiversity>,
}

pub fn diversity_report(
    provided: &Grouped,
    generated: &Grouped,
    cfg: &BleuConfig,
) -> Result<DiversityReport, DiversityError> {
    let pp = provided_pairwise_diversity(provided, cfg);
    let gp = generated_pairwise_diversity(generated, cfg);
    let ff = faithfulness(generated, provided, cfg)?;
    let count = |g: &Grouped, l: Label| g.get(&l).map_or(0, Vec::len);
    let categories = Label::ALL
        .iter()
        .map(|&l| {
            (
                l,
                CategoryDiversity {
                    provided_pairwise: pp.get(&l).copied(),
                    gen_vs_provided_max_avg: ff.get(&l).copied(),
                    generated_pairwise: gp.get(&l).copied(),
                    n_provided: count(provided, l),
                    n_generated: count(generated, l),
                },
            )
        })
        .collect();
    Ok(DiversityReport { categories })
}
