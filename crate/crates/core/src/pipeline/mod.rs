//! End-to-end orchestration of the pipeline stages over a work directory.
//!
//! Stages always run in canonical order. Each writes its outputs into the
//! workdir plus `manifests/<stage>.json`; a stage whose manifest still
//! matches its inputs, parameters and outputs is skipped.
//!
//! Workdir layout:
//!
//! | stage | outputs |
//! |---|---|
//! | ingest | `corpus.jsonl`, `ingest_report.json` |
//! | filter | `matches.jsonl` |
//! | sample | `sample.txt` |
//! | annotate | `annotations.jsonl`, `annotations.log.jsonl`, `annotation_failures.jsonl` |
//! | eval-rationales | `diversity.json` |
//! | topics | `topics.json` |
//! | train | `dataset.json`, `model.json` |
//! | eval | `eval.json` |
//! | predict | `predictions.jsonl` |

pub mod config;
pub mod manifest;
pub mod steps;

pub use config::{validate_config, ConfigError, RunConfig};
pub use manifest::Manifest;

use crate::annotator::{
    Annotation, AnnotationCache, Annotator, Clock, GlmClient, ManualClock, SystemClock,
};
use crate::corpus::{self, InputFormat, Sentence};
use crate::distill::{predict_batch, train_linear, LabeledDataset, LinearModel};
use crate::hashing::sha256_file;
use crate::jsonl;
use crate::keywords::{filter_corpus, load_keywords, sample_by_tier, MatchRecord};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Filter,
    Sample,
    Annotate,
    EvalRationales,
    Topics,
    Train,
    Eval,
    Predict,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Filter,
        Stage::Sample,
        Stage::Annotate,
        Stage::EvalRationales,
        Stage::Topics,
        Stage::Train,
        Stage::Eval,
        Stage::Predict,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Filter => "filter",
            Stage::Sample => "sample",
            Stage::Annotate => "annotate",
            Stage::EvalRationales => "eval-rationales",
            Stage::Topics => "topics",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Predict => "predict",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

pub const CORPUS: &str = "corpus.jsonl";
pub const INGEST_REPORT: &str = "ingest_report.json";
pub const MATCHES: &str = "matches.jsonl";
pub const SAMPLE: &str = "sample.txt";
pub const ANNOTATIONS: &str = "annotations.jsonl";
pub const ANNOTATION_LOG: &str = "annotations.log.jsonl";
pub const ANNOTATION_FAILURES: &str = "annotation_failures.jsonl";
pub const DIVERSITY: &str = "diversity.json";
pub const TOPICS: &str = "topics.json";
pub const DATASET: &str = "dataset.json";
pub const MODEL: &str = "model.json";
pub const EVAL: &str = "eval.json";
pub const PREDICTIONS: &str = "predictions.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub status: StageStatus,
    pub summary: Value,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage} needs {missing}; run stage `{run_first}` first")]
    MissingUpstream {
        stage: Stage,
        missing: String,
        run_first: Stage,
    },
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String },
}

fn fail(stage: Stage) -> impl Fn(&dyn fmt::Display) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        message: e.to_string(),
    }
}

#[derive(Default, Clone)]
pub struct RunOptions {
    /// Replaces the configured GLM client (mock or live).
    pub client: Option<Arc<dyn GlmClient>>,
    /// Clock for annotation timestamps and pacing. Defaults to a fixed
    /// virtual clock for offline clients and the system clock otherwise.
    pub clock: Option<Arc<dyn Clock>>,
    /// Rerun stages even when their manifests match.
    pub force: bool,
}

/// Runs `stages` (any subset, any order) in canonical order.
pub fn run_pipeline(
    config: &RunConfig,
    stages: &[Stage],
    options: &RunOptions,
) -> Result<Vec<StageSummary>, PipelineError> {
    let errors = config.validate();
    if !errors.is_empty() {
        return Err(ConfigError::Invalid(errors).into());
    }
    let workdir = config.workdir();
    std::fs::create_dir_all(workdir.join("manifests")).map_err(|e| ConfigError::Io {
        path: workdir.display().to_string(),
        source: e,
    })?;
    let mut requested: Vec<Stage> = stages.to_vec();
    requested.sort();
    requested.dedup();
    let runner = Runner {
        cfg: config,
        workdir,
        options,
    };
    requested.into_iter().map(|s| runner.run_stage(s)).collect()
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    workdir: PathBuf,
    options: &'a RunOptions,
}

/// An input artifact with the stage that produces it, if any.
struct Input {
    name: &'static str,
    path: PathBuf,
    producer: Option<Stage>,
}

impl Runner<'_> {
    fn work(&self, name: &str) -> PathBuf {
        self.workdir.join(name)
    }

    fn upstream(&self, name: &'static str, producer: Stage) -> Input {
        Input {
            name,
            path: self.work(name),
            producer: Some(producer),
        }
    }

    fn external(name: &'static str, path: PathBuf) -> Input {
        Input {
            name,
            path,
            producer: None,
        }
    }

    fn inputs(&self, stage: Stage) -> Vec<Input> {
        let mut v = match stage {
            Stage::Ingest => vec![Self::external("documents", self.cfg.corpus_input())],
            Stage::Filter => vec![
                self.upstream(CORPUS, Stage::Ingest),
                Self::external("keywords", self.cfg.keywords_path()),
            ],
            Stage::Sample => vec![self.upstream(MATCHES, Stage::Filter)],
            Stage::Annotate => vec![
                self.upstream(SAMPLE, Stage::Sample),
                self.upstream(CORPUS, Stage::Ingest),
            ],
            Stage::EvalRationales | Stage::Topics => {
                vec![self.upstream(ANNOTATIONS, Stage::Annotate)]
            }
            Stage::Train => vec![
                self.upstream(ANNOTATIONS, Stage::Annotate),
                self.upstream(CORPUS, Stage::Ingest),
            ],
            Stage::Eval => vec![
                self.upstream(MODEL, Stage::Train),
                self.upstream(DATASET, Stage::Train),
            ],
            Stage::Predict => vec![
                self.upstream(MODEL, Stage::Train),
                self.upstream(CORPUS, Stage::Ingest),
            ],
        };
        if matches!(stage, Stage::Annotate | Stage::EvalRationales) {
            if let Some(p) = self.cfg.framework_path() {
                v.push(Self::external("framework", p));
            }
        }
        if stage == Stage::Annotate {
            if let Some(p) = self.cfg.mock_path() {
                v.push(Self::external("glm_mock", p));
            }
        }
        v
    }

    fn params(&self, stage: Stage) -> Value {
        let cfg = self.cfg;
        let framework = if cfg.framework_path().is_none() {
            json!(crate::framework::default_framework().content_hash())
        } else {
            Value::Null
        };
        match stage {
            Stage::Ingest => json!({"format": "jsonl"}),
            Stage::Filter => json!({}),
            Stage::Sample => {
                json!({"rates": cfg.sample.rates, "seed": cfg.sample.seed, "mode": cfg.sample.mode})
            }
            Stage::Annotate => json!({
                "model": cfg.glm.config.model,
                "temperature": cfg.glm.config.temperature,
                "default_framework": framework,
                "client_override": self.options.client.is_some(),
            }),
            Stage::EvalRationales => {
                json!({"bleu_order": cfg.eval.bleu_order, "default_framework": framework})
            }
            Stage::Topics => json!({
                "lda": cfg.lda_config(),
                "label": cfg.topics.label,
                "top_words": cfg.topics.top_words,
            }),
            Stage::Train => json!({
                "task": cfg.task,
                "split_ratio": cfg.split_ratio,
                "split_seed": cfg.seeds.split,
                "train": cfg.train_config(),
            }),
            Stage::Eval => {
                json!({"baseline_seed": cfg.seeds.baseline, "trials": cfg.eval.baseline_trials})
            }
            Stage::Predict => json!({}),
        }
    }

    fn run_stage(&self, stage: Stage) -> Result<StageSummary, PipelineError> {
        let mut hashes = BTreeMap::new();
        for input in self.inputs(stage) {
            if !input.path.is_file() {
                return Err(match input.producer {
                    Some(run_first) => PipelineError::MissingUpstream {
                        stage,
                        missing: input.path.display().to_string(),
                        run_first,
                    },
                    None => fail(stage)(&format!("{} does not exist", input.path.display())),
                });
            }
            let h = sha256_file(&input.path).map_err(|e| fail(stage)(&e))?;
            hashes.insert(input.name.to_string(), h);
        }
        let params = self.params(stage);
        let manifest_path = self.workdir.join("manifests").join(format!("{stage}.json"));
        if !self.options.force {
            if let Some(m) = Manifest::load(&manifest_path) {
                if m.matches(&self.workdir, &hashes, &params) {
                    log::info!("{stage}: up to date, skipped");
                    return Ok(StageSummary {
                        stage,
                        status: StageStatus::Skipped,
                        summary: m.summary,
                    });
                }
            }
        }

        log::info!("{stage}: running");
        let (outputs, summary) = self.execute(stage)?;
        let mut out_hashes = BTreeMap::new();
        for rel in outputs {
            let h = sha256_file(&self.work(rel)).map_err(|e| fail(stage)(&e))?;
            out_hashes.insert(rel.to_string(), h);
        }
        let manifest = Manifest {
            stage: stage.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: hashes,
            params,
            outputs: out_hashes,
            summary: summary.clone(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        };
        manifest.save(&manifest_path).map_err(|e| fail(stage)(&e))?;
        Ok(StageSummary {
            stage,
            status: StageStatus::Ran,
            summary,
        })
    }

    fn execute(&self, stage: Stage) -> Result<(Vec<&'static str>, Value), PipelineError> {
        let f = fail(stage);
        match stage {
            Stage::Ingest => {
                let report = corpus::ingest_documents(
                    &self.cfg.corpus_input(),
                    InputFormat::Jsonl,
                    &self.work(CORPUS),
                )
                .map_err(|e| f(&e))?;
                for err in &report.errors {
                    log::warn!("ingest: line {}: {}", err.line, err.message);
                }
                write_json(&self.work(INGEST_REPORT), &report).map_err(|e| f(&e))?;
                let summary = json!({
                    "n_documents": report.stats.n_documents,
                    "n_sentences": report.stats.n_sentences,
                    "errors": report.errors.len(),
                });
                Ok((vec![CORPUS, INGEST_REPORT], summary))
            }
            Stage::Filter => {
                let ks = load_keywords(&self.cfg.keywords_path()).map_err(|e| f(&e))?;
                let records = filter_corpus(&self.work(CORPUS), &ks).map_err(|e| f(&e))?;
                jsonl::write_all(&self.work(MATCHES), &records).map_err(|e| f(&e))?;
                Ok((vec![MATCHES], json!({"n_matches": records.len()})))
            }
            Stage::Sample => {
                let plan = self.cfg.sample_plan().map_err(|e| f(&e.join("; ")))?;
                let records: Vec<MatchRecord> =
                    jsonl::read_all(&self.work(MATCHES)).map_err(|e| f(&e))?;
                let ids = sample_by_tier(&records, &plan);
                write_ids(&self.work(SAMPLE), &ids).map_err(|e| f(&e))?;
                Ok((
                    vec![SAMPLE],
                    json!({"n_matches": records.len(), "n_selected": ids.len()}),
                ))
            }
            Stage::Annotate => self.annotate(),
            Stage::EvalRationales => {
                let spec = self.cfg.framework().map_err(|e| f(&e))?;
                let annotations: Vec<Annotation> =
                    jsonl::read_all(&self.work(ANNOTATIONS)).map_err(|e| f(&e))?;
                let bleu = self.cfg.bleu_config().map_err(|e| f(&e))?;
                let report =
                    steps::rationale_diversity(&spec, &annotations, &bleu).map_err(|e| f(&e))?;
                write_json(&self.work(DIVERSITY), &report).map_err(|e| f(&e))?;
                Ok((vec![DIVERSITY], json!({"n_generated": annotations.len()})))
            }
            Stage::Topics => {
                let annotations: Vec<Annotation> =
                    jsonl::read_all(&self.work(ANNOTATIONS)).map_err(|e| f(&e))?;
                let lda = self.cfg.lda_config();
                let report = steps::rationale_topics(
                    &annotations,
                    self.cfg.topics.label,
                    &lda,
                    self.cfg.topics.top_words,
                )
                .map_err(|e| f(&e))?;
                write_json(&self.work(TOPICS), &report).map_err(|e| f(&e))?;
                Ok((
                    vec![TOPICS],
                    json!({"n_documents": report["n_documents"], "k": lda.k}),
                ))
            }
            Stage::Train => {
                let ds = self.dataset()?;
                let train = ds.train();
                let cfg = self.cfg.train_config();
                let model = train_linear(ds.task, &train, &cfg).map_err(|e| f(&e))?;
                write_json(&self.work(DATASET), &ds).map_err(|e| f(&e))?;
                model.save(&self.work(MODEL)).map_err(|e| f(&e))?;
                let summary = json!({
                    "task": ds.task,
                    "n_train": train.len(),
                    "n_eval": ds.eval().len(),
                    "final_loss": model.epoch_losses.last(),
                });
                Ok((vec![DATASET, MODEL], summary))
            }
            Stage::Eval => {
                let model = LinearModel::load(&self.work(MODEL)).map_err(|e| f(&e))?;
                let ds: LabeledDataset = read_json(&self.work(DATASET)).map_err(|e| f(&e))?;
                let (report, out) = steps::evaluation(
                    &model,
                    &ds,
                    self.cfg.seeds.baseline,
                    self.cfg.eval.baseline_trials,
                );
                write_json(&self.work(EVAL), &out).map_err(|e| f(&e))?;
                let summary = json!({
                    "n_eval": report.n_eval,
                    "macro_f1": report.macro_f1,
                    "accuracy": report.accuracy,
                });
                Ok((vec![EVAL], summary))
            }
            Stage::Predict => {
                let model = LinearModel::load(&self.work(MODEL)).map_err(|e| f(&e))?;
                let n = predict_batch(&model, &self.work(CORPUS), &self.work(PREDICTIONS))
                    .map_err(|e| f(&e))?;
                Ok((vec![PREDICTIONS], json!({"n_predictions": n})))
            }
        }
    }

    fn annotate(&self) -> Result<(Vec<&'static str>, Value), PipelineError> {
        let f = fail(Stage::Annotate);
        let spec = self.cfg.framework().map_err(|e| f(&e))?;
        let ids = read_ids(&self.work(SAMPLE)).map_err(|e| f(&e))?;
        let sentences = load_sentences(&self.work(CORPUS), &ids).map_err(|e| f(&e))?;

        let (client, offline): (Arc<dyn GlmClient>, bool) =
            match (&self.options.client, self.cfg.mock_client()) {
                (Some(c), _) => (c.clone(), true),
                (None, Some(mock)) => (Arc::new(mock.map_err(|e| f(&e))?), true),
                (None, None) => {
                    let live = self.cfg.glm.config.clone().with_env();
                    (Arc::new(live.http_client().map_err(|e| f(&e))?), false)
                }
            };
        let clock: Arc<dyn Clock> = match &self.options.clock {
            Some(c) => c.clone(),
            None if offline => Arc::new(ManualClock::epoch()),
            None => Arc::new(SystemClock),
        };
        let annotator = Annotator::with_clock(client, self.cfg.glm.config.clone(), clock);
        let cache = AnnotationCache::open(&self.work(ANNOTATION_LOG)).map_err(|e| f(&e))?;
        let outcome = annotator.annotate_batch(&sentences, &spec, &cache);
        for fi in &outcome.failures {
            log::warn!("annotate: {}", fi.reason);
        }
        jsonl::write_all(&self.work(ANNOTATIONS), &outcome.annotations).map_err(|e| f(&e))?;
        jsonl::write_all(&self.work(ANNOTATION_FAILURES), &outcome.failures).map_err(|e| f(&e))?;
        let mut by_label = BTreeMap::new();
        for a in &outcome.annotations {
            *by_label.entry(a.label).or_insert(0usize) += 1;
        }
        let summary = json!({
            "done": outcome.summary.done,
            "cached": outcome.summary.cached,
            "failed": outcome.summary.failed,
            "by_label": by_label,
        });
        Ok((
            vec![ANNOTATIONS, ANNOTATION_LOG, ANNOTATION_FAILURES],
            summary,
        ))
    }

    fn dataset(&self) -> Result<LabeledDataset, PipelineError> {
        let f = fail(Stage::Train);
        let annotations: Vec<Annotation> =
            jsonl::read_all(&self.work(ANNOTATIONS)).map_err(|e| f(&e))?;
        let cfg = self.cfg;
        steps::labeled_dataset(
            annotations,
            &self.work(CORPUS),
            cfg.task,
            cfg.split_ratio,
            cfg.seeds.split,
        )
        .map_err(|e| f(&e))
    }
}

/// Reads the sentences named in `ids` from a store, in store order.
pub fn load_sentences(store: &Path, ids: &[String]) -> Result<Vec<Sentence>, String> {
    let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
    let mut out = Vec::with_capacity(ids.len());
    corpus::for_each_sentence(store, |s| {
        if wanted.contains(s.sent_id.as_str()) {
            out.push(s);
        }
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    if out.len() != wanted.len() {
        let found: HashSet<&str> = out.iter().map(|s| s.sent_id.as_str()).collect();
        let missing: Vec<&str> = wanted.difference(&found).copied().take(20).collect();
        return Err(format!(
            "ids not in the sentence store: {}",
            missing.join(", ")
        ));
    }
    Ok(out)
}

/// One sent_id per line.
pub fn write_ids(path: &Path, ids: &[String]) -> std::io::Result<()> {
    let mut text = ids.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    std::fs::write(path, text)
}

pub fn read_ids(path: &Path) -> std::io::Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests;
