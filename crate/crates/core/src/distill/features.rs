//! Hashed bag of unigrams and bigrams.
//!
//! Feature keys are `"u:" + token` and `"b:" + left + " " + right`, hashed
//! with 64-bit FNV-1a and reduced modulo `2^bits`. Counts are summed per
//! index (collisions add up) and the vector is L2-normalized.

use crate::hashing::fnv1a64;
use crate::tokenize;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const DEFAULT_BITS: u8 = 18;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub dim: usize,
    /// `(index, weight)` sorted by index, weights non-zero.
    pub entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }
}

fn index(key: &str, mask: u64) -> u32 {
    (fnv1a64(key.as_bytes()) & mask) as u32
}

pub fn raw_counts(text: &str, bits: u8) -> BTreeMap<u32, f64> {
    let mask = (1u64 << bits) - 1;
    let tokens = tokenize(text);
    let mut counts = BTreeMap::new();
    for t in tokens.iter() {
        *counts.entry(index(&format!("u:{t}"), mask)).or_insert(0.0) += 1.0;
    }
    for w in tokens.windows(2) {
        *counts
            .entry(index(&format!("b:{} {}", w[0], w[1]), mask))
            .or_insert(0.0) += 1.0;
    }
    counts
}

pub fn featurize(text: &str, bits: u8) -> FeatureVector {
    assert!((1..=31).contains(&bits), "feature bits must be in 1..=31");
    let counts = raw_counts(text, bits);
    let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
    FeatureVector {
        dim: 1usize << bits,
        entries: counts.into_iter().map(|(i, c)| (i, c / norm)).collect(),
    }
}
