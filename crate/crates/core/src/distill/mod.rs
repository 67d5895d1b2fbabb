//! Distillation of GLM labels into a local classifier.
//!
//! [`build_dataset`] turns annotations into a stratified train/eval split,
//! [`train_linear`] fits a hashed bag-of-n-grams softmax regression,
//! [`evaluate`] computes per-class and macro metrics, and [`predict_batch`]
//! streams predictions over a sentence store. External classifiers plug in
//! through [`import_external_predictions`].

pub mod features;
pub mod linear;
pub mod metrics;
pub mod predict;

pub use features::{featurize, FeatureVector, DEFAULT_BITS};
pub use linear::{
    loss_and_gradient, train_linear, Gradient, LinearModel, ModelFileError, TrainConfig, TrainError,
};
pub use metrics::{evaluate, random_baseline, BaselineMode, ClassMetrics, EvalReport};
pub use predict::{
    evaluate_model, import_external_predictions, predict_batch, ExternalError, PredictError,
    Prediction,
};

use crate::Label;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "3class", alias = "three_class")]
    ThreeClass,
    #[serde(rename = "2class", alias = "two_class")]
    TwoClass,
}

const THREE: &[&str] = &["D_PVE", "C_PVE", "NO_PVE"];
const TWO: &[&str] = &["PVE", "NO_PVE"];

impl Task {
    /// Class names in index order.
    pub fn classes(self) -> &'static [&'static str] {
        match self {
            Task::ThreeClass => THREE,
            Task::TwoClass => TWO,
        }
    }

    pub fn n_classes(self) -> usize {
        self.classes().len()
    }

    /// Class index of a GLM label; the two-class task merges D_PVE and C_PVE.
    pub fn class_of(self, label: Label) -> usize {
        match self {
            Task::ThreeClass => label.index(),
            Task::TwoClass => usize::from(!label.is_pve()),
        }
    }

    /// Resolves a class name, or any label alias mapped through [`Self::class_of`].
    pub fn resolve_class(self, raw: &str) -> Option<usize> {
        if let Some(i) = self
            .classes()
            .iter()
            .position(|c| c.eq_ignore_ascii_case(raw.trim()))
        {
            return Some(i);
        }
        if self == Task::TwoClass && crate::label::normalize_alias(raw) == "pve" {
            return Some(0);
        }
        Label::resolve(raw).map(|l| self.class_of(l))
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::ThreeClass => "3class",
            Task::TwoClass => "2class",
        })
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "3class" | "three_class" | "3" => Ok(Task::ThreeClass),
            "2class" | "two_class" | "2" => Ok(Task::TwoClass),
            other => Err(format!(
                "unknown task {other:?} (expected 3class or 2class)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledItem {
    pub sent_id: String,
    pub text: String,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub task: Task,
    /// Sorted by `sent_id`.
    pub items: Vec<LabeledItem>,
    pub split: BTreeMap<String, Split>,
}

impl LabeledDataset {
    pub fn part(&self, which: Split) -> Vec<&LabeledItem> {
        self.items
            .iter()
            .filter(|i| self.split.get(&i.sent_id) == Some(&which))
            .collect()
    }

    pub fn train(&self) -> Vec<&LabeledItem> {
        self.part(Split::Train)
    }

    pub fn eval(&self) -> Vec<&LabeledItem> {
        self.part(Split::Eval)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("split_ratio {0} must lie strictly between 0 and 1")]
    BadRatio(f64),
    #[error("class {0} has no examples")]
    MissingClass(String),
    #[error("duplicate sent_id {0}")]
    Duplicate(String),
    #[error("eval split is empty; lower split_ratio or add data")]
    EmptyEval,
    #[error("train split is empty; raise split_ratio or add data")]
    EmptyTrain,
}

/// Builds a stratified split: each class is shuffled with a seeded ChaCha8
/// stream and cut so that per-class train counts follow the largest
/// remainder apportionment of `round(n * split_ratio)`.
pub fn build_dataset(
    labeled: &[(String, String, Label)],
    task: Task,
    split_ratio: f64,
    seed: u64,
) -> Result<LabeledDataset, DatasetError> {
    if !(split_ratio > 0.0 && split_ratio < 1.0) {
        return Err(DatasetError::BadRatio(split_ratio));
    }
    let mut items: Vec<LabeledItem> = labeled
        .iter()
        .map(|(sent_id, text, label)| LabeledItem {
            sent_id: sent_id.clone(),
            text: text.clone(),
            class: task.class_of(*label),
        })
        .collect();
    items.sort_by(|a, b| a.sent_id.cmp(&b.sent_id));
    if let Some(w) = items.windows(2).find(|w| w[0].sent_id == w[1].sent_id) {
        return Err(DatasetError::Duplicate(w[0].sent_id.clone()));
    }

    let k = task.n_classes();
    let mut by_class: Vec<Vec<&str>> = vec![Vec::new(); k];
    for it in &items {
        by_class[it.class].push(&it.sent_id);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(DatasetError::MissingClass(task.classes()[c].to_string()));
    }

    let n = items.len();
    let quotas = largest_remainder(
        &by_class.iter().map(Vec::len).collect::<Vec<_>>(),
        split_ratio,
        (n as f64 * split_ratio).round() as usize,
    );
    let n_train: usize = quotas.iter().sum();
    if n_train == n {
        return Err(DatasetError::EmptyEval);
    }
    if n_train == 0 {
        return Err(DatasetError::EmptyTrain);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = BTreeMap::new();
    for (ids, quota) in by_class.iter_mut().zip(quotas) {
        ids.shuffle(&mut rng);
        for (i, id) in ids.iter().enumerate() {
            let which = if i < quota { Split::Train } else { Split::Eval };
            split.insert(id.to_string(), which);
        }
    }
    Ok(LabeledDataset { task, items, split })
}

fn largest_remainder(sizes: &[usize], ratio: f64, total: usize) -> Vec<usize> {
    let exact: Vec<f64> = sizes.iter().map(|&s| s as f64 * ratio).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut remaining = total.saturating_sub(quotas.iter().sum());
    for &c in order.iter().cycle().take(sizes.len() * 2) {
        if remaining == 0 {
            break;
        }
        if quotas[c] < sizes[c] {
            quotas[c] += 1;
            remaining -= 1;
        }
    }
    quotas
}
