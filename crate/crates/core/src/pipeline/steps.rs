//! Stage computations shared by the pipeline runner and standalone commands.

use crate::annotator::Annotation;
use crate::corpus;
use crate::distill::{
    build_dataset, evaluate_model, random_baseline, BaselineMode, EvalReport, LabeledDataset,
    LinearModel, Task,
};
use crate::framework::FrameworkSpec;
use crate::rationale_eval::diversity::{DiversityReport, Grouped};
use crate::rationale_eval::lda::topic_report;
use crate::rationale_eval::{diversity_report, lda_fit, BleuConfig, LdaConfig};
use crate::{tokenize, Label};
use serde_json::{json, Value};
use std::collections::HashSet;
use std::path::Path;

/// Diversity and faithfulness of generated rationales against the
/// framework's exemplar rationales.
pub fn rationale_diversity(
    spec: &FrameworkSpec,
    annotations: &[Annotation],
    bleu: &BleuConfig,
) -> Result<DiversityReport, String> {
    let mut provided = Grouped::new();
    for e in &spec.exemplars {
        provided
            .entry(e.label)
            .or_default()
            .push(tokenize(&e.assistant_turn(&spec.cot_trigger)));
    }
    let mut generated = Grouped::new();
    for a in annotations {
        generated
            .entry(a.label)
            .or_default()
            .push(tokenize(&a.rationale));
    }
    diversity_report(&provided, &generated, bleu).map_err(|e| e.to_string())
}

/// LDA topics over the rationales of `label` (all labels when `None`).
pub fn rationale_topics(
    annotations: &[Annotation],
    label: Option<Label>,
    lda: &LdaConfig,
    top_words: usize,
) -> Result<Value, String> {
    let docs: Vec<_> = annotations
        .iter()
        .filter(|a| label.is_none_or(|l| l == a.label))
        .map(|a| tokenize(&a.rationale))
        .collect();
    let model = lda_fit(&docs, lda).map_err(|e| e.to_string())?;
    let topics = topic_report(&model, top_words).map_err(|e| e.to_string())?;
    Ok(json!({
        "label": label,
        "k": lda.k,
        "alpha": lda.alpha(),
        "beta": lda.beta,
        "iterations": lda.iterations,
        "seed": lda.seed,
        "n_documents": docs.len(),
        "vocabulary_size": model.vocabulary.len(),
        "topics": topics,
    }))
}

/// Joins annotations with their sentence texts and splits them.
/// Annotations whose sentence is absent from `store` are dropped.
pub fn labeled_dataset(
    annotations: Vec<Annotation>,
    store: &Path,
    task: Task,
    ratio: f64,
    seed: u64,
) -> Result<LabeledDataset, String> {
    let ids: HashSet<String> = annotations.iter().map(|a| a.sent_id.clone()).collect();
    let texts = corpus::lookup_texts(store, &ids).map_err(|e| e.to_string())?;
    let rows: Vec<(String, String, Label)> = annotations
        .into_iter()
        .filter_map(|a| {
            texts
                .get(&a.sent_id)
                .map(|t| (a.sent_id, t.clone(), a.label))
        })
        .collect();
    build_dataset(&rows, task, ratio, seed).map_err(|e| e.to_string())
}

/// Model report on the eval split next to uniform and biased random
/// baselines.
pub fn evaluation(
    model: &LinearModel,
    ds: &LabeledDataset,
    baseline_seed: u64,
    trials: usize,
) -> (EvalReport, Value) {
    let report = evaluate_model(model, ds);
    let truth: Vec<usize> = ds.eval().iter().map(|i| i.class).collect();
    let classes = ds.task.classes();
    let out = json!({
        "task": ds.task,
        "model": report,
        "baselines": {
            "uniform": random_baseline(&truth, classes, BaselineMode::Uniform, baseline_seed, trials),
            "biased": random_baseline(&truth, classes, BaselineMode::Biased, baseline_seed, trials),
        },
    });
    (report, out)
}
