//! Human validation of GLM annotations: review batches, a judgment journal,
//! and agreement statistics.
//!
//! Judgments are appended to a JSONL journal and replayed on open, so the
//! in-memory index and all statistics can be rebuilt from the journal alone.
//! Batches are derived deterministically from `(annotations, n, seed)`.

pub mod agreement;

pub use agreement::{agreement, agreement_between, AgreementStats};

use crate::annotator::{Annotation, Clock, SystemClock};
use crate::hashing::sha256_hex;
use crate::jsonl::{self, JsonlError};
use crate::Label;
use parking_lot::Mutex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

/// Name used for the GLM side of agreement pairs.
pub const GLM: &str = "glm";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub sent_id: String,
    pub text: String,
    pub glm_label: Label,
    pub glm_rationale: String,
    pub batch_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub annotator_id: String,
    pub sent_id: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub ts: String,
}

/// A judgment as submitted; the label is still raw text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRequest {
    pub annotator_id: String,
    pub sent_id: String,
    pub label: String,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub judged_by: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub batch_id: String,
    /// Each annotator against the GLM labels.
    pub vs_glm: Vec<AgreementStats>,
    /// Annotator pairs with at least one shared judged item.
    pub pairwise: Vec<AgreementStats>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("unknown batch {0}")]
    UnknownBatch(String),
    #[error("sent_id {0} is not in any review batch")]
    NotFound(String),
    #[error("{annotator_id} already judged {sent_id}")]
    Conflict {
        annotator_id: String,
        sent_id: String,
    },
    #[error("{0}")]
    BadRequest(String),
    #[error("requested {requested} items but only {available} annotations are available")]
    TooMany { requested: usize, available: usize },
    #[error("duplicate annotation for {0}")]
    DuplicateAnnotation(String),
    #[error("journal {path}: {source}")]
    Journal {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

#[derive(Debug, Clone)]
struct Source {
    text: String,
    label: Label,
    rationale: String,
}

pub struct ReviewStore {
    sources: BTreeMap<String, Source>,
    batches: BTreeMap<String, Vec<String>>,
    /// First batch each item was enqueued in.
    item_batch: BTreeMap<String, String>,
    judgments: BTreeMap<(String, String), Judgment>,
    journal: Option<(String, Mutex<File>)>,
    clock: Arc<dyn Clock>,
}

impl ReviewStore {
    /// `annotated` pairs each annotation with its sentence text.
    pub fn new(annotated: Vec<(Annotation, String)>) -> Result<Self, ReviewError> {
        let mut sources = BTreeMap::new();
        for (a, text) in annotated {
            let src = Source {
                text,
                label: a.label,
                rationale: a.rationale,
            };
            if sources.insert(a.sent_id.clone(), src).is_some() {
                return Err(ReviewError::DuplicateAnnotation(a.sent_id));
            }
        }
        Ok(ReviewStore {
            sources,
            batches: BTreeMap::new(),
            item_batch: BTreeMap::new(),
            judgments: BTreeMap::new(),
            journal: None,
            clock: Arc::new(SystemClock),
        })
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Replays `path` (if present) and appends future judgments to it.
    /// Duplicate journal entries keep the first.
    pub fn with_journal(mut self, path: &Path) -> Result<Self, ReviewError> {
        if path.exists() {
            jsonl::for_each(path, |_, j: Judgment| {
                self.judgments
                    .entry((j.annotator_id.clone(), j.sent_id.clone()))
                    .or_insert(j);
                Ok(())
            })?;
        }
        let display = path.display().to_string();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| ReviewError::Journal {
                path: display.clone(),
                source,
            })?;
        self.journal = Some((display, Mutex::new(file)));
        Ok(self)
    }

    pub fn available(&self) -> usize {
        self.sources.len()
    }

    /// Seeded uniform sample of `n` annotations without replacement.
    /// The batch id is the first 16 hex digits of the SHA-256 of the sorted
    /// sent_ids joined by newlines.
    pub fn enqueue_sample(&mut self, n: usize, seed: u64) -> Result<String, ReviewError> {
        let ids: Vec<&String> = self.sources.keys().collect();
        if n > ids.len() {
            return Err(ReviewError::TooMany {
                requested: n,
                available: ids.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<String> = rand::seq::index::sample(&mut rng, ids.len(), n)
            .into_iter()
            .map(|i| ids[i].clone())
            .collect();
        picked.sort();
        let id = sha256_hex(picked.join("\n").as_bytes())[..16].to_string();
        for s in &picked {
            self.item_batch
                .entry(s.clone())
                .or_insert_with(|| id.clone());
        }
        self.batches.insert(id.clone(), picked);
        Ok(id)
    }

    pub fn batch_ids(&self) -> Vec<&str> {
        self.batches.keys().map(String::as_str).collect()
    }

    fn batch(&self, batch_id: &str) -> Result<&Vec<String>, ReviewError> {
        self.batches
            .get(batch_id)
            .ok_or_else(|| ReviewError::UnknownBatch(batch_id.to_string()))
    }

    pub fn item(&self, sent_id: &str) -> Option<ReviewItem> {
        let batch_id = self.item_batch.get(sent_id)?;
        let s = self.sources.get(sent_id)?;
        Some(ReviewItem {
            sent_id: sent_id.to_string(),
            text: s.text.clone(),
            glm_label: s.label,
            glm_rationale: s.rationale.clone(),
            batch_id: batch_id.clone(),
        })
    }

    fn judged(&self, annotator: &str, sent_id: &str) -> bool {
        self.judgments
            .contains_key(&(annotator.to_string(), sent_id.to_string()))
    }

    /// Lowest-sent_id item of the batch this annotator has not judged.
    pub fn next_item(
        &self,
        annotator_id: &str,
        batch_id: &str,
    ) -> Result<Option<ReviewItem>, ReviewError> {
        let batch = self.batch(batch_id)?;
        Ok(batch
            .iter()
            .find(|s| !self.judged(annotator_id, s))
            .and_then(|s| self.item(s))
            .map(|mut it| {
                it.batch_id = batch_id.to_string();
                it
            }))
    }

    /// Validates, journals, then indexes a judgment. The first judgment per
    /// `(annotator_id, sent_id)` wins.
    pub fn submit_judgment(&mut self, req: JudgmentRequest) -> Result<Judgment, ReviewError> {
        let annotator_id = req.annotator_id.trim().to_string();
        if annotator_id.is_empty() {
            return Err(ReviewError::BadRequest("annotator_id is empty".into()));
        }
        let label = Label::resolve(&req.label)
            .ok_or_else(|| ReviewError::BadRequest(format!("unknown label {:?}", req.label)))?;
        if !self.item_batch.contains_key(&req.sent_id) {
            return Err(ReviewError::NotFound(req.sent_id));
        }
        if self.judged(&annotator_id, &req.sent_id) {
            return Err(ReviewError::Conflict {
                annotator_id,
                sent_id: req.sent_id,
            });
        }
        let j = Judgment {
            annotator_id,
            sent_id: req.sent_id,
            label,
            note: req.note.filter(|n| !n.trim().is_empty()),
            ts: self
                .clock
                .now()
                .to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        };
        if let Some((path, file)) = &self.journal {
            let mut line = serde_json::to_vec(&j).expect("judgment serializes");
            line.push(b'\n');
            let mut f = file.lock();
            f.write_all(&line)
                .and_then(|_| f.sync_data())
                .map_err(|source| ReviewError::Journal {
                    path: path.clone(),
                    source,
                })?;
        }
        self.judgments
            .insert((j.annotator_id.clone(), j.sent_id.clone()), j.clone());
        Ok(j)
    }

    pub fn judgments(&self) -> impl Iterator<Item = &Judgment> {
        self.judgments.values()
    }

    pub fn progress(&self, batch_id: &str) -> Result<Progress, ReviewError> {
        let batch = self.batch(batch_id)?;
        let members: BTreeSet<&str> = batch.iter().map(String::as_str).collect();
        let mut judged_by = BTreeMap::new();
        for j in self.judgments.values() {
            if members.contains(j.sent_id.as_str()) {
                *judged_by.entry(j.annotator_id.clone()).or_insert(0) += 1;
            }
        }
        Ok(Progress {
            total: batch.len(),
            judged_by,
        })
    }

    /// Labels per annotator restricted to the batch.
    fn labels_in(&self, batch: &[String]) -> BTreeMap<String, BTreeMap<String, Label>> {
        let members: BTreeSet<&str> = batch.iter().map(String::as_str).collect();
        let mut out: BTreeMap<String, BTreeMap<String, Label>> = BTreeMap::new();
        for j in self.judgments.values() {
            if members.contains(j.sent_id.as_str()) {
                out.entry(j.annotator_id.clone())
                    .or_default()
                    .insert(j.sent_id.clone(), j.label);
            }
        }
        out
    }

    pub fn stats(&self, batch_id: &str) -> Result<BatchStats, ReviewError> {
        let batch = self.batch(batch_id)?;
        let glm: BTreeMap<String, Label> = batch
            .iter()
            .map(|s| (s.clone(), self.sources[s].label))
            .collect();
        let by_annotator = self.labels_in(batch);
        let vs_glm = by_annotator
            .iter()
            .map(|(a, labels)| agreement_between(a, labels, GLM, &glm))
            .collect();
        let names: Vec<&String> = by_annotator.keys().collect();
        let mut pairwise = Vec::new();
        for (i, a) in names.iter().enumerate() {
            for b in &names[i + 1..] {
                let s = agreement_between(a, &by_annotator[*a], b, &by_annotator[*b]);
                if s.n_compared > 0 {
                    pairwise.push(s);
                }
            }
        }
        Ok(BatchStats {
            batch_id: batch_id.to_string(),
            vs_glm,
            pairwise,
        })
    }
}
