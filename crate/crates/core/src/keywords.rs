//! Tiered keyword lexicon, sentence matching and tier-weighted sampling.
//!
//! Tiers run from 1 (ambiguous, high-volume terms) to 4 (high-precision
//! terms). A sentence matching several keywords takes the highest tier among
//! them, and sampling rates are applied per tier.
//!
//! Sampling draws exactly one uniform number per record, in `sent_id` order,
//! from ChaCha8 (`rand_chacha`) seeded with the plan's 64-bit seed via
//! `seed_from_u64`. A record is kept when its draw is below its tier's rate.
//! The stream is specified by the ChaCha algorithm, so samples are identical
//! across platforms, and raising a rate can only add records.

use crate::corpus::{self, CorpusError, Sentence};
use crate::hashing;
use crate::tokenize;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

pub const TIERS: std::ops::RangeInclusive<u8> = 1..=4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Keyword {
    /// Lowercased, whitespace-normalized term of one to three words.
    pub term: String,
    pub tier: u8,
    tokens: Vec<String>,
}

impl Keyword {
    pub fn new(term: &str, tier: u8) -> Result<Self, String> {
        let term = term
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase();
        let words = term.split(' ').filter(|w| !w.is_empty()).count();
        if !(1..=3).contains(&words) {
            return Err(format!(
                "term {term:?} has {words} tokens (expected 1 to 3)"
            ));
        }
        if !TIERS.contains(&tier) {
            return Err(format!("tier {tier} outside 1..=4"));
        }
        let tokens = tokenize(&term).into_inner();
        if tokens.is_empty() {
            return Err(format!("term {term:?} has no word characters"));
        }
        Ok(Keyword { term, tier, tokens })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone)]
pub struct KeywordSet {
    keywords: Vec<Keyword>,
    source: Option<PathBuf>,
    content_hash: String,
    by_first_token: HashMap<String, Vec<usize>>,
}

#[derive(Debug, thiserror::Error)]
pub enum KeywordError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: expected header \"term,tier\"")]
    BadHeader { path: String },
    #[error("{path}:{line}: {message}")]
    Row {
        path: String,
        line: u64,
        message: String,
    },
    #[error("keyword set is empty")]
    Empty,
    #[error("duplicate term {0:?}")]
    Duplicate(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl KeywordSet {
    pub fn new(keywords: Vec<Keyword>) -> Result<Self, KeywordError> {
        let mut hasher_input = String::new();
        for k in &keywords {
            hasher_input.push_str(&format!("{},{}\n", k.term, k.tier));
        }
        Self::build(keywords, None, hashing::sha256_hex(hasher_input.as_bytes()))
    }

    fn build(
        keywords: Vec<Keyword>,
        source: Option<PathBuf>,
        content_hash: String,
    ) -> Result<Self, KeywordError> {
        if keywords.is_empty() {
            return Err(KeywordError::Empty);
        }
        let mut seen = HashSet::new();
        let mut by_first_token: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, k) in keywords.iter().enumerate() {
            if !seen.insert(k.term.clone()) {
                return Err(KeywordError::Duplicate(k.term.clone()));
            }
            by_first_token
                .entry(k.tokens[0].clone())
                .or_default()
                .push(i);
        }
        Ok(KeywordSet {
            keywords,
            source,
            content_hash,
            by_first_token,
        })
    }

    pub fn keywords(&self) -> &[Keyword] {
        &self.keywords
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    /// SHA-256 of the lexicon file (or of the canonical `term,tier` listing
    /// for sets built in memory).
    pub fn content_hash(&self) -> &str {
        &self.content_hash
    }
}

/// Loads a `term,tier` CSV. Lines starting with `#` are ignored.
pub fn load_keywords(path: &Path) -> Result<KeywordSet, KeywordError> {
    let display = path.display().to_string();
    let bytes = fs::read(path).map_err(|source| KeywordError::Io {
        path: display.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let header = reader.headers()?.clone();
    if header.len() != 2 || &header[0] != "term" || &header[1] != "tier" {
        return Err(KeywordError::BadHeader { path: display });
    }
    let mut keywords = Vec::new();
    let mut seen: HashMap<String, u64> = HashMap::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let row_err = |message: String| KeywordError::Row {
            path: display.clone(),
            line,
            message,
        };
        if rec.len() != 2 {
            return Err(row_err(format!("expected 2 fields, got {}", rec.len())));
        }
        let tier: u8 = rec[1]
            .parse()
            .map_err(|_| row_err(format!("tier {:?} is not an integer in 1..=4", &rec[1])))?;
        let kw = Keyword::new(&rec[0], tier).map_err(row_err)?;
        if let Some(first) = seen.insert(kw.term.clone(), line) {
            return Err(row_err(format!(
                "duplicate term {:?} (first on line {first})",
                kw.term
            )));
        }
        keywords.push(kw);
    }
    KeywordSet::build(
        keywords,
        Some(path.to_path_buf()),
        hashing::sha256_hex(&bytes),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub sent_id: String,
    pub tier: u8,
    /// Matched terms in lexicon order.
    pub terms: Vec<String>,
}

/// Keywords whose token sequence occurs contiguously in `text`.
pub fn matching_keywords<'a>(text: &str, ks: &'a KeywordSet) -> Vec<&'a Keyword> {
    let tokens = tokenize(text);
    let mut hits: Vec<usize> = Vec::new();
    for (pos, tok) in tokens.iter().enumerate() {
        if let Some(candidates) = ks.by_first_token.get(tok) {
            for &i in candidates {
                let kt = &ks.keywords[i].tokens;
                if tokens[pos..].starts_with(kt) {
                    hits.push(i);
                }
            }
        }
    }
    hits.sort_unstable();
    hits.dedup();
    hits.into_iter().map(|i| &ks.keywords[i]).collect()
}

pub fn match_sentence(sentence: &Sentence, ks: &KeywordSet) -> Option<MatchRecord> {
    let hits = matching_keywords(&sentence.text, ks);
    let tier = hits.iter().map(|k| k.tier).max()?;
    Some(MatchRecord {
        sent_id: sentence.sent_id.clone(),
        tier,
        terms: hits.iter().map(|k| k.term.clone()).collect(),
    })
}

const FILTER_CHUNK: usize = 8192;

/// Matches every sentence in the store; records come back sorted by `sent_id`.
pub fn filter_corpus(store: &Path, ks: &KeywordSet) -> Result<Vec<MatchRecord>, KeywordError> {
    let mut out = Vec::new();
    let mut chunk = Vec::with_capacity(FILTER_CHUNK);
    let flush = |chunk: &mut Vec<Sentence>, out: &mut Vec<MatchRecord>| {
        out.par_extend(chunk.par_iter().filter_map(|s| match_sentence(s, ks)));
        chunk.clear();
    };
    corpus::for_each_sentence(store, |s| {
        chunk.push(s);
        if chunk.len() == FILTER_CHUNK {
            flush(&mut chunk, &mut out);
        }
        Ok(())
    })?;
    flush(&mut chunk, &mut out);
    out.sort_by(|a, b| a.sent_id.cmp(&b.sent_id));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Independent Bernoulli draw per record.
    #[default]
    Bernoulli,
    /// Exactly `round(rate * n_tier)` records per tier: those with the
    /// smallest draws.
    ExactCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    /// Inclusion rate for tiers 1 to 4.
    pub rates: [f64; 4],
    pub seed: u64,
    #[serde(default)]
    pub mode: SampleMode,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("rate for tier {0} is missing")]
    MissingTier(u8),
    #[error("unknown tier {0:?}")]
    UnknownTier(String),
    #[error("rate for tier {tier} is {rate}, outside [0, 1]")]
    RateOutOfRange { tier: u8, rate: f64 },
}

impl SamplePlan {
    /// Rates used for the reference annotation sample.
    pub const DEFAULT_RATES: [f64; 4] = [0.045, 0.14, 0.65, 1.0];

    pub fn new(rates: [f64; 4], seed: u64) -> Result<Self, PlanError> {
        let plan = SamplePlan {
            rates,
            seed,
            mode: SampleMode::Bernoulli,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Builds a plan from a `{"1": r1, ..., "4": r4}` map.
    pub fn from_map(rates: &BTreeMap<String, f64>, seed: u64) -> Result<Self, Vec<PlanError>> {
        let mut errors = Vec::new();
        for key in rates.keys() {
            if !matches!(key.as_str(), "1" | "2" | "3" | "4") {
                errors.push(PlanError::UnknownTier(key.clone()));
            }
        }
        let mut out = [0.0; 4];
        for tier in TIERS {
            match rates.get(&tier.to_string()) {
                Some(&r) => out[tier as usize - 1] = r,
                None => errors.push(PlanError::MissingTier(tier)),
            }
        }
        let plan = SamplePlan {
            rates: out,
            seed,
            mode: SampleMode::Bernoulli,
        };
        if let Err(e) = plan.validate() {
            errors.push(e);
        }
        if errors.is_empty() {
            Ok(plan)
        } else {
            Err(errors)
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        for (i, &rate) in self.rates.iter().enumerate() {
            if !(0.0..=1.0).contains(&rate) {
                return Err(PlanError::RateOutOfRange {
                    tier: i as u8 + 1,
                    rate,
                });
            }
        }
        Ok(())
    }

    pub fn rate(&self, tier: u8) -> f64 {
        self.rates[tier as usize - 1]
    }
}

/// Draws the tier-weighted sample; returns selected ids sorted.
pub fn sample_by_tier(records: &[MatchRecord], plan: &SamplePlan) -> Vec<String> {
    let mut ordered: Vec<&MatchRecord> = records.iter().collect();
    ordered.sort_by(|a, b| a.sent_id.cmp(&b.sent_id));
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let draws: Vec<f64> = ordered.iter().map(|_| rng.gen::<f64>()).collect();

    let selected: Vec<&MatchRecord> = match plan.mode {
        SampleMode::Bernoulli => ordered
            .iter()
            .zip(&draws)
            .filter(|(r, &u)| u < plan.rate(r.tier))
            .map(|(r, _)| *r)
            .collect(),
        SampleMode::ExactCount => {
            let mut by_tier: BTreeMap<u8, Vec<(f64, &MatchRecord)>> = BTreeMap::new();
            for (r, &u) in ordered.iter().zip(&draws) {
                by_tier.entry(r.tier).or_default().push((u, r));
            }
            let mut picked = Vec::new();
            for (tier, mut items) in by_tier {
                let n = (plan.rate(tier) * items.len() as f64).round() as usize;
                items.sort_by(|a, b| {
                    a.0.total_cmp(&b.0)
                        .then_with(|| a.1.sent_id.cmp(&b.1.sent_id))
                });
                picked.extend(items.into_iter().take(n).map(|(_, r)| r));
            }
            picked
        }
    };
    let mut ids: Vec<String> = selected.into_iter().map(|r| r.sent_id.clone()).collect();
    ids.sort();
    ids
}
