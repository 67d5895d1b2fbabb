//! Multinomial logistic regression over hashed features, trained by
//! mini-batch SGD with an L2 penalty.
//!
//! The objective is the mean cross-entropy plus `l2 / 2 * |W|^2` (bias not
//! penalized). Weights are held as `scale * V` during training so the L2
//! shrinkage of each step costs O(1) instead of O(classes * dim). The step
//! size for epoch `e` (0-based) is `learning_rate / (1 + lr_decay * e)`.

use super::features::{featurize, FeatureVector, DEFAULT_BITS};
use super::{LabeledItem, Task};
use crate::hashing::sha256_hex;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MODEL_FORMAT: &str = "valuelens-linear";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub bits: u8,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            bits: DEFAULT_BITS,
            epochs: 20,
            learning_rate: 0.5,
            lr_decay: 0.1,
            l2: 1e-6,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if !(1..=24).contains(&self.bits) {
            errors.push(format!("train.bits {} outside 1..=24", self.bits));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            errors.push("train.learning_rate must be positive".into());
        }
        if self.lr_decay.is_nan() || self.lr_decay < 0.0 {
            errors.push("train.lr_decay must be non-negative".into());
        }
        if self.l2.is_nan() || self.l2 < 0.0 || self.l2 * self.learning_rate >= 1.0 {
            errors.push("train.l2 must be non-negative with l2 * learning_rate < 1".into());
        }
        if self.batch_size == 0 {
            errors.push("train.batch_size must be at least 1".into());
        }
        errors
    }

    pub fn hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub task: Task,
    pub classes: Vec<String>,
    pub bits: u8,
    /// Row-major `classes x 2^bits`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub config: TrainConfig,
    /// Full training-set objective after each epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("train split is empty")]
    EmptyTrain,
    #[error("invalid training config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(task: Task, config: TrainConfig) -> Self {
        let k = task.n_classes();
        LinearModel {
            task,
            classes: task.classes().iter().map(|c| c.to_string()).collect(),
            bits: config.bits,
            weights: vec![0.0; k << config.bits],
            bias: vec![0.0; k],
            config,
            epoch_losses: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        1 << self.bits
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn logits(&self, x: &FeatureVector) -> Vec<f64> {
        let dim = self.dim();
        (0..self.n_classes())
            .map(|c| {
                let row = &self.weights[c * dim..(c + 1) * dim];
                self.bias[c]
                    + x.entries
                        .iter()
                        .map(|&(i, v)| row[i as usize] * v)
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn probabilities(&self, x: &FeatureVector) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn featurize(&self, text: &str) -> FeatureVector {
        featurize(text, self.bits)
    }

    /// Class probabilities for `text` and the argmax class (lowest index on ties).
    pub fn predict(&self, text: &str) -> (usize, Vec<f64>) {
        let p = self.probabilities(&self.featurize(text));
        (argmax(&p), p)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Objective and its exact gradient over `examples`.
pub fn loss_and_gradient(
    model: &LinearModel,
    examples: &[(FeatureVector, usize)],
) -> (f64, Gradient) {
    let dim = model.dim();
    let k = model.n_classes();
    let n = examples.len().max(1) as f64;
    let l2 = model.config.l2;
    let mut grad = Gradient {
        weights: model.weights.iter().map(|w| l2 * w).collect(),
        bias: vec![0.0; k],
    };
    let mut loss = 0.0;
    for (x, y) in examples {
        let p = model.probabilities(x);
        loss -= p[*y].ln();
        for (c, pc) in p.iter().enumerate() {
            let d = (pc - f64::from(c == *y)) / n;
            grad.bias[c] += d;
            for &(i, v) in &x.entries {
                grad.weights[c * dim + i as usize] += d * v;
            }
        }
    }
    let penalty = 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
    (loss / n + penalty, grad)
}

pub fn train_linear(
    task: Task,
    train: &[&LabeledItem],
    config: &TrainConfig,
) -> Result<LinearModel, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    let errors = config.validate();
    if !errors.is_empty() {
        return Err(TrainError::Config(errors));
    }
    let examples: Vec<(FeatureVector, usize)> = train
        .par_iter()
        .map(|it| (featurize(&it.text, config.bits), it.class))
        .collect();
    fit(LinearModel::zeros(task, config.clone()), &examples)
}

/// Runs SGD from `model` over pre-featurized `examples`.
pub fn fit(
    mut model: LinearModel,
    examples: &[(FeatureVector, usize)],
) -> Result<LinearModel, TrainError> {
    let cfg = model.config.clone();
    let dim = model.dim();
    let k = model.n_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut scale = 1.0f64;
    let mut updates: Vec<(usize, f64)> = Vec::new();

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate / (1.0 + cfg.lr_decay * epoch as f64);
        order.shuffle(&mut rng);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            updates.clear();
            let mut bias_step = vec![0.0; k];
            let mut batch_loss = 0.0;
            let m = chunk.len() as f64;
            for &idx in chunk {
                let (x, y) = &examples[idx];
                let logits: Vec<f64> = (0..k)
                    .map(|c| {
                        let row = &model.weights[c * dim..(c + 1) * dim];
                        model.bias[c]
                            + scale
                                * x.entries
                                    .iter()
                                    .map(|&(i, v)| row[i as usize] * v)
                                    .sum::<f64>()
                    })
                    .collect();
                let p = softmax(&logits);
                batch_loss -= p[*y].ln();
                for c in 0..k {
                    let d = (p[c] - f64::from(c == *y)) / m;
                    bias_step[c] += d;
                    for &(i, v) in &x.entries {
                        updates.push((c * dim + i as usize, d * v));
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch });
            }
            scale *= 1.0 - lr * cfg.l2;
            for &(j, g) in &updates {
                model.weights[j] -= lr * g / scale;
            }
            for (b, step) in model.bias.iter_mut().zip(&bias_step) {
                *b -= lr * step;
            }
            if scale < 1e-6 {
                model.weights.iter_mut().for_each(|w| *w *= scale);
                scale = 1.0;
            }
        }
        if scale != 1.0 {
            model.weights.iter_mut().for_each(|w| *w *= scale);
            scale = 1.0;
        }
        let loss = objective(&model, examples);
        if !loss.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                batch: usize::MAX,
            });
        }
        model.epoch_losses.push(loss);
    }
    Ok(model)
}

fn objective(model: &LinearModel, examples: &[(FeatureVector, usize)]) -> f64 {
    let n = examples.len().max(1) as f64;
    let ce: f64 = examples
        .par_iter()
        .map(|(x, y)| -model.probabilities(x)[*y].ln())
        .collect::<Vec<_>>()
        .iter()
        .sum();
    let penalty = 0.5 * model.config.l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
    ce / n + penalty
}

#[derive(Debug, thiserror::Error)]
pub enum ModelFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    task: Task,
    classes: Vec<String>,
    bits: u8,
    bias: Vec<f64>,
    /// Per class, the non-zero `(index, weight)` pairs.
    weights: Vec<Vec<(u32, f64)>>,
    config: TrainConfig,
    config_hash: String,
    epoch_losses: Vec<f64>,
}

impl LinearModel {
    pub fn to_json(&self) -> String {
        let dim = self.dim();
        let weights = (0..self.n_classes())
            .map(|c| {
                self.weights[c * dim..(c + 1) * dim]
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(i, w)| (i as u32, *w))
                    .collect()
            })
            .collect();
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            task: self.task,
            classes: self.classes.clone(),
            bits: self.bits,
            bias: self.bias.clone(),
            weights,
            config: self.config.clone(),
            config_hash: self.config.hash(),
            epoch_losses: self.epoch_losses.clone(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, String> {
        let f: ModelFile = serde_json::from_str(json).map_err(|e| e.to_string())?;
        if f.format != MODEL_FORMAT || f.version != MODEL_VERSION {
            return Err(format!(
                "unsupported model format {} v{}",
                f.format, f.version
            ));
        }
        let expected: Vec<String> = f.task.classes().iter().map(|c| c.to_string()).collect();
        if f.classes != expected
            || f.bias.len() != expected.len()
            || f.weights.len() != expected.len()
        {
            return Err("class order does not match the task".into());
        }
        if !(1..=24).contains(&f.bits) {
            return Err(format!("bits {} out of range", f.bits));
        }
        let dim = 1usize << f.bits;
        let mut weights = vec![0.0; dim * expected.len()];
        for (c, row) in f.weights.iter().enumerate() {
            for &(i, w) in row {
                if i as usize >= dim || !w.is_finite() {
                    return Err(format!("bad weight entry ({i}, {w}) for class {c}"));
                }
                weights[c * dim + i as usize] = w;
            }
        }
        if f.bias.iter().any(|b| !b.is_finite()) {
            return Err("non-finite bias".into());
        }
        Ok(LinearModel {
            task: f.task,
            classes: f.classes,
            bits: f.bits,
            weights,
            bias: f.bias,
            config: f.config,
            epoch_losses: f.epoch_losses,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelFileError> {
        std::fs::write(path, self.to_json()).map_err(|source| ModelFileError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelFileError> {
        let display = path.display().to_string();
        let json = std::fs::read_to_string(path).map_err(|source| ModelFileError::Io {
            path: display.clone(),
            source,
        })?;
        Self::from_json(&json).map_err(|message| ModelFileError::Invalid {
            path: display,
            message,
        })
    }
}
