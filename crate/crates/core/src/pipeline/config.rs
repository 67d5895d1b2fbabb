//! The run configuration file and its validation.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Every seed is explicit; there is no implicit entropy anywhere.

use crate::annotator::{GlmConfig, MockClient, Prices};
use crate::distill::{Task, TrainConfig};
use crate::framework::{default_framework, load_framework, FrameworkSpec};
use crate::keywords::{load_keywords, SampleMode, SamplePlan};
use crate::rationale_eval::{BleuConfig, LdaConfig};
use crate::Label;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Input documents (JSONL).
    pub corpus: PathBuf,
    /// Lexicon CSV with header `term,tier`.
    pub keywords: PathBuf,
    /// Framework JSON; the shipped default when absent.
    #[serde(default)]
    pub framework: Option<PathBuf>,
    pub workdir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    /// Keys "1" to "4".
    pub rates: BTreeMap<String, f64>,
    pub seed: u64,
    #[serde(default)]
    pub mode: SampleMode,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GlmSection {
    #[serde(flatten)]
    pub config: GlmConfig,
    /// Mock fixture; when set, no network calls are made.
    #[serde(default)]
    pub mock: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub split: u64,
    pub train: u64,
    pub topics: u64,
    pub baseline: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicsSection {
    pub k: usize,
    pub iterations: usize,
    /// Restrict to rationales with this label; all labels when null.
    pub label: Option<Label>,
    pub top_words: usize,
    pub alpha: Option<f64>,
    pub beta: f64,
    pub min_df: usize,
}

impl Default for TopicsSection {
    fn default() -> Self {
        let lda = LdaConfig::default();
        TopicsSection {
            k: lda.k,
            iterations: lda.iterations,
            label: Some(Label::DirectPve),
            top_words: 10,
            alpha: lda.alpha,
            beta: lda.beta,
            min_df: lda.min_df,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub bleu_order: usize,
    pub baseline_trials: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            bleu_order: 4,
            baseline_trials: 1000,
        }
    }
}

fn default_split_ratio() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub sample: SampleSection,
    #[serde(default)]
    pub glm: GlmSection,
    pub task: Task,
    pub seeds: Seeds,
    #[serde(default)]
    pub prices: Prices,
    #[serde(default = "default_split_ratio")]
    pub split_ratio: f64,
    /// `seed` here is ignored in favour of `seeds.train`.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub topics: TopicsSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {source}")]
    Schema {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

impl RunConfig {
    /// Parses the file without semantic validation.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: display.clone(),
            source,
        })?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Schema {
                path: display,
                source,
            })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn corpus_input(&self) -> PathBuf {
        self.resolve(&self.paths.corpus)
    }

    pub fn keywords_path(&self) -> PathBuf {
        self.resolve(&self.paths.keywords)
    }

    pub fn framework_path(&self) -> Option<PathBuf> {
        self.paths.framework.as_deref().map(|p| self.resolve(p))
    }

    pub fn workdir(&self) -> PathBuf {
        self.resolve(&self.paths.workdir)
    }

    pub fn mock_path(&self) -> Option<PathBuf> {
        self.glm.mock.as_deref().map(|p| self.resolve(p))
    }

    pub fn framework(&self) -> Result<FrameworkSpec, String> {
        match self.framework_path() {
            Some(p) => load_framework(&p).map_err(|e| e.to_string()),
            None => Ok(default_framework()),
        }
    }

    pub fn sample_plan(&self) -> Result<SamplePlan, Vec<String>> {
        SamplePlan::from_map(&self.sample.rates, self.sample.seed)
            .map(|mut p| {
                p.mode = self.sample.mode;
                p
            })
            .map_err(|errs| {
                errs.into_iter()
                    .map(|e| format!("sample.rates: {e}"))
                    .collect()
            })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seeds.train,
            ..self.train.clone()
        }
    }

    pub fn lda_config(&self) -> LdaConfig {
        LdaConfig {
            k: self.topics.k,
            iterations: self.topics.iterations,
            alpha: self.topics.alpha,
            beta: self.topics.beta,
            seed: self.seeds.topics,
            min_df: self.topics.min_df,
            remove_stopwords: true,
        }
    }

    pub fn bleu_config(&self) -> Result<BleuConfig, String> {
        BleuConfig::uniform(self.eval.bleu_order).map_err(|e| format!("eval.bleu_order: {e}"))
    }

    pub fn mock_client(&self) -> Option<Result<MockClient, String>> {
        self.mock_path().map(|p| {
            let text = std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
            MockClient::from_json(&text).map_err(|e| format!("{}: {e}", p.display()))
        })
    }

    /// Every schema and referential problem, without touching the network.
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        let mut require_file = |what: &str, p: PathBuf| {
            if !p.is_file() {
                errors.push(format!("{what}: {} does not exist", p.display()));
                false
            } else {
                true
            }
        };
        require_file("paths.corpus", self.corpus_input());
        let keywords_ok = require_file("paths.keywords", self.keywords_path());
        let framework_ok = self
            .framework_path()
            .is_none_or(|p| require_file("paths.framework", p));
        let mock_ok = self.mock_path().is_none_or(|p| require_file("glm.mock", p));

        if keywords_ok {
            if let Err(e) = load_keywords(&self.keywords_path()) {
                errors.push(format!("paths.keywords: {e}"));
            }
        }
        if framework_ok {
            if let Err(e) = self.framework() {
                errors.push(format!("paths.framework: {e}"));
            }
        }
        if mock_ok {
            if let Some(Err(e)) = self.mock_client() {
                errors.push(format!("glm.mock: {e}"));
            }
        }
        if let Err(errs) = self.sample_plan() {
            errors.extend(errs);
        }
        errors.extend(self.glm.config.validate());
        errors.extend(self.train.validate());
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            errors.push(format!(
                "split_ratio {} must lie strictly between 0 and 1",
                self.split_ratio
            ));
        }
        if self.topics.k < 2 {
            errors.push("topics.k must be at least 2".into());
        }
        if self.topics.top_words == 0 {
            errors.push("topics.top_words must be at least 1".into());
        }
        if self.topics.beta.is_nan()
            || self.topics.beta <= 0.0
            || self.topics.alpha.is_some_and(|a| a.is_nan() || a <= 0.0)
        {
            errors.push("topics.alpha and topics.beta must be positive".into());
        }
        if let Err(e) = self.bleu_config() {
            errors.push(e);
        }
        if self.eval.baseline_trials == 0 {
            errors.push("eval.baseline_trials must be at least 1".into());
        }
        if !(self.prices.prompt_per_1k >= 0.0 && self.prices.completion_per_1k >= 0.0) {
            errors.push("prices must be non-negative".into());
        }
        errors
    }
}

/// Loads and validates `path`, reporting every problem at once.
pub fn validate_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let cfg = RunConfig::load(path)?;
    let errors = cfg.validate();
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(errors))
    }
}
