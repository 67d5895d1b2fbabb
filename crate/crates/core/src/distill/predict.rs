//! Corpus-scale prediction and evaluation of internal or external models.

use super::linear::LinearModel;
use super::metrics::{evaluate, EvalReport};
use super::LabeledDataset;
use crate::corpus::{self, CorpusError, Sentence};
use crate::jsonl::{self, JsonlError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sent_id: String,
    pub label: String,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum PredictError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(
        "{path}: write failed after {records} records (durable through byte {offset}): {source}"
    )]
    Write {
        path: String,
        /// Bytes flushed before the failure; a resume can truncate here.
        offset: u64,
        records: usize,
        #[source]
        source: io::Error,
    },
}

fn predict_one(model: &LinearModel, s: &Sentence) -> Prediction {
    let (best, probs) = model.predict(&s.text);
    Prediction {
        sent_id: s.sent_id.clone(),
        label: model.classes[best].clone(),
        scores: model.classes.iter().cloned().zip(probs).collect(),
    }
}

struct Sink {
    w: BufWriter<File>,
    offset: u64,
    records: usize,
}

impl Sink {
    fn write_chunk(&mut self, preds: &[Prediction]) -> io::Result<()> {
        let mut bytes = Vec::new();
        for p in preds {
            serde_json::to_writer(&mut bytes, p)?;
            bytes.push(b'\n');
        }
        self.w.write_all(&bytes)?;
        self.w.flush()?;
        self.offset += bytes.len() as u64;
        self.records += preds.len();
        Ok(())
    }
}

/// Writes one prediction per store sentence to `out`, in store order
/// (sorted by `sent_id`). Sentences are processed in parallel chunks, so
/// memory stays bounded by the chunk size.
pub fn predict_batch(model: &LinearModel, store: &Path, out: &Path) -> Result<usize, PredictError> {
    let display = out.display().to_string();
    let write_err = |sink: &Sink, source| PredictError::Write {
        path: display.clone(),
        offset: sink.offset,
        records: sink.records,
        source,
    };
    let file = File::create(out).map_err(|source| PredictError::Write {
        path: display.clone(),
        offset: 0,
        records: 0,
        source,
    })?;
    let mut sink = Sink {
        w: BufWriter::new(file),
        offset: 0,
        records: 0,
    };
    let mut buffer: Vec<Sentence> = Vec::with_capacity(CHUNK);
    let mut failure: Option<io::Error> = None;
    let flush = |buffer: &mut Vec<Sentence>, sink: &mut Sink| -> io::Result<()> {
        let preds: Vec<Prediction> = buffer.par_iter().map(|s| predict_one(model, s)).collect();
        buffer.clear();
        sink.write_chunk(&preds)
    };
    let streamed = corpus::for_each_sentence(store, |s| {
        buffer.push(s);
        if buffer.len() == CHUNK {
            if let Err(e) = flush(&mut buffer, &mut sink) {
                let kind = e.kind();
                failure = Some(e);
                return Err(JsonlError::Io {
                    path: display.clone(),
                    source: io::Error::from(kind),
                });
            }
        }
        Ok(())
    });
    if let Some(e) = failure {
        return Err(write_err(&sink, e));
    }
    streamed?;
    if !buffer.is_empty() {
        flush(&mut buffer, &mut sink).map_err(|e| write_err(&sink, e))?;
    }
    Ok(sink.records)
}

/// Evaluates `model` on the eval split of `ds`.
pub fn evaluate_model(model: &LinearModel, ds: &LabeledDataset) -> EvalReport {
    let eval = ds.eval();
    let truth: Vec<usize> = eval.iter().map(|i| i.class).collect();
    let pred: Vec<usize> = eval.par_iter().map(|i| model.predict(&i.text).0).collect();
    evaluate(&truth, &pred, ds.task.classes())
}

#[derive(Debug, Deserialize)]
struct ExternalRecord {
    sent_id: String,
    label: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ExternalError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("{missing} eval ids have no prediction, e.g. {}", .examples.join(", "))]
    Missing {
        missing: usize,
        examples: Vec<String>,
    },
}

/// Scores a `{sent_id, label}` JSONL file from an external classifier on the
/// eval split of `ds`. Labels may be class names or any label alias.
pub fn import_external_predictions(
    path: &Path,
    ds: &LabeledDataset,
) -> Result<EvalReport, ExternalError> {
    let mut preds: HashMap<String, usize> = HashMap::new();
    let mut bad = None;
    jsonl::for_each(path, |line, r: ExternalRecord| {
        match ds.task.resolve_class(&r.label) {
            Some(c) => {
                preds.insert(r.sent_id, c);
            }
            None if bad.is_none() => bad = Some((line, r.label)),
            None => {}
        }
        Ok(())
    })?;
    if let Some((line, label)) = bad {
        return Err(ExternalError::UnknownLabel { line, label });
    }
    let eval = ds.eval();
    let missing: Vec<String> = eval
        .iter()
        .filter(|i| !preds.contains_key(&i.sent_id))
        .map(|i| i.sent_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(ExternalError::Missing {
            missing: missing.len(),
            examples: missing.into_iter().take(20).collect(),
        });
    }
    let truth: Vec<usize> = eval.iter().map(|i| i.class).collect();
    let pred: Vec<usize> = eval.iter().map(|i| preds[&i.sent_id]).collect();
    Ok(evaluate(&truth, &pred, ds.task.classes()))
}

#[cfg(test)]
mod tests {
    use super::super::{build_dataset, Task, TrainConfig};
    use super::*;
    use crate::corpus::{write_store, Section};
    use crate::Label;

    fn store_of(n: usize, dir: &Path) -> std::path::PathBuf {
        let sentences: Vec<Sentence> = (0..n)
            .map(|i| Sentence {
                sent_id: corpus::sentence_id(&format!("P{i:05}"), Section::Abstract, 0),
                doc_id: format!("P{i:05}"),
                section: Section::Abstract,
                ordinal: 0,
                text: format!("Sentence number {i} about safety."),
            })
            .collect();
        let path = dir.join("store.jsonl");
        write_store(&path, &sentences).unwrap();
        path
    }

    fn model() -> LinearModel {
        LinearModel::zeros(
            Task::ThreeClass,
            TrainConfig {
                bits: 6,
                ..TrainConfig::default()
            },
        )
    }

    #[test]
    fn predicts_every_sentence_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let store = store_of(5000, dir.path());
        let out = dir.path().join("pred.jsonl");
        assert_eq!(predict_batch(&model(), &store, &out).unwrap(), 5000);
        let preds: Vec<Prediction> = jsonl::read_all(&out).unwrap();
        assert_eq!(preds.len(), 5000);
        assert!(preds.windows(2).all(|w| w[0].sent_id < w[1].sent_id));
        // Zero model: all scores tie, the first class wins.
        assert!(preds.iter().all(|p| p.label == "D_PVE"));
        assert!((preds[0].scores.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_store_gives_no_records() {
        let dir = tempfile::tempdir().unwrap();
        let store = store_of(0, dir.path());
        let out = dir.path().join("pred.jsonl");
        assert_eq!(predict_batch(&model(), &store, &out).unwrap(), 0);
    }

    #[test]
    fn missing_store_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err =
            predict_batch(&model(), &dir.path().join("nope"), &dir.path().join("o")).unwrap_err();
        assert!(matches!(
            err,
            PredictError::Corpus(CorpusError::MissingStore(_))
        ));
    }

    fn dataset() -> LabeledDataset {
        let rows: Vec<(String, String, Label)> = (0..30)
            .map(|i| {
                let l = [Label::DirectPve, Label::ContextualPve, Label::NoPve][i % 3];
                (format!("s{i:02}"), format!("t{i}"), l)
            })
            .collect();
        build_dataset(&rows, Task::ThreeClass, 0.5, 1).unwrap()
    }

    #[test]
    fn external_gold_predictions_score_one() {
        let ds = dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ext.jsonl");
        let mut body = String::new();
        for it in &ds.items {
            let label = ["Direct PVE", "c-pve", "NO_PVE"][it.class];
            body.push_str(&format!(
                "{{\"sent_id\":\"{}\",\"label\":\"{label}\"}}\n",
                it.sent_id
            ));
        }
        std::fs::write(&path, body).unwrap();
        let r = import_external_predictions(&path, &ds).unwrap();
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.n_eval, 15);
    }

    #[test]
    fn external_missing_ids_listed() {
        let ds = dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ext.jsonl");
        let eval = ds.eval();
        let body: String = eval[1..]
            .iter()
            .map(|it| format!("{{\"sent_id\":\"{}\",\"label\":\"NO_PVE\"}}\n", it.sent_id))
            .collect();
        std::fs::write(&path, body).unwrap();
        match import_external_predictions(&path, &ds) {
            Err(ExternalError::Missing { missing, examples }) => {
                assert_eq!(missing, 1);
                assert_eq!(examples, vec![eval[0].sent_id.clone()]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
