//! Subcommand implementations.

use crate::*;
use anyhow::Context;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use valuelens::annotator::{
    estimate_cost, median_length_sentence, Annotation, AnnotationCache, Annotator, Clock,
    CostEstimate, GlmClient, GlmConfig, ManualClock, MockClient, Prices, SystemClock,
};
use valuelens::corpus::{self, InputFormat};
use valuelens::distill::{
    import_external_predictions, predict_batch, train_linear, LabeledDataset, LinearModel,
    TrainConfig,
};
use valuelens::framework::{default_framework, load_framework, FrameworkSpec};
use valuelens::jsonl;
use valuelens::keywords::{filter_corpus, load_keywords, sample_by_tier, MatchRecord, SamplePlan};
use valuelens::pipeline::{
    self, read_ids, run_pipeline, steps, validate_config, RunConfig, RunOptions, Stage,
};
use valuelens::rationale_eval::{BleuConfig, LdaConfig};
use valuelens::review::ReviewStore;

type Outcome = Result<(), Failure>;

fn need<T>(value: Option<T>, flag: &str) -> Result<T, Failure> {
    value.ok_or_else(|| Failure::invalid(format!("{flag} is required in standalone mode")))
}

fn print(value: &impl serde::Serialize) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("serializable")
    );
}

/// Writes `value` to `out` as JSON, or prints it when `out` is absent.
fn emit(value: &impl serde::Serialize, out: Option<&Path>) -> Outcome {
    match out {
        Some(p) => {
            pipeline::write_json(p, value).with_context(|| format!("writing {}", p.display()))?;
            log::info!("wrote {}", p.display());
        }
        None => print(value),
    }
    Ok(())
}

fn absolute(p: PathBuf) -> Result<PathBuf, Failure> {
    std::path::absolute(&p).map_err(|e| Failure::invalid(format!("{}: {e}", p.display())))
}

/// `annotations.jsonl` -> `annotations.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::invalid("--config is required"))?;
    validate_config(path).map_err(config_failure)
}

fn run_stages(cfg: &RunConfig, stages: &[Stage], force: bool) -> Outcome {
    let options = RunOptions {
        force,
        ..RunOptions::default()
    };
    let summaries = run_pipeline(cfg, stages, &options)?;
    print(&summaries);
    Ok(())
}

/// Config mode: run `stage` after applying `overrides`.
fn staged(cli: &Cli, stage: Stage, overrides: impl FnOnce(&mut RunConfig) -> Outcome) -> Outcome {
    if cli.config.is_none() {
        return Err(Failure::invalid(format!(
            "{stage}: pass --config or the standalone input flags (see --help)"
        )));
    }
    let mut cfg = load_config(cli)?;
    overrides(&mut cfg)?;
    run_stages(&cfg, &[stage], cli.force)
}

pub fn dispatch(cli: Cli) -> Outcome {
    match &cli.command {
        Command::Ingest(a) => ingest(&cli, a),
        Command::Filter(a) => filter(&cli, a),
        Command::Sample(a) => sample(&cli, a),
        Command::Annotate(a) => annotate(&cli, a),
        Command::EvalRationales(a) => eval_rationales(&cli, a),
        Command::Topics(a) => topics(&cli, a),
        Command::Train(a) => train(&cli, a),
        Command::Eval(a) => eval(&cli, a),
        Command::Predict(a) => predict(&cli, a),
        Command::EvalExternal(a) => eval_external(&cli, a),
        Command::ServeReview(a) => serve_review(&cli, a),
        Command::CostEstimate(a) => cost_estimate(&cli, a),
        Command::ValidateConfig => {
            let cfg = load_config(&cli)?;
            print(&json!({"ok": true, "workdir": cfg.workdir()}));
            Ok(())
        }
        Command::Run(a) => {
            let cfg = load_config(&cli)?;
            let stages = a.stages.clone().unwrap_or_else(|| Stage::ALL.to_vec());
            run_stages(&cfg, &stages, cli.force)
        }
    }
}

fn ingest(cli: &Cli, a: &IngestArgs) -> Outcome {
    let Some(input) = &a.input else {
        return staged(cli, Stage::Ingest, |_| Ok(()));
    };
    let out = need(a.out.as_ref(), "--out")?;
    let report =
        corpus::ingest_documents(input, InputFormat::Jsonl, out).context("ingest failed")?;
    for err in &report.errors {
        log::warn!("line {}: {}", err.line, err.message);
    }
    print(&report);
    Ok(())
}

fn filter(cli: &Cli, a: &FilterArgs) -> Outcome {
    let Some(keywords) = &a.keywords else {
        return staged(cli, Stage::Filter, |_| Ok(()));
    };
    let corpus = need(a.corpus.as_ref(), "--corpus")?;
    let out = need(a.out.as_ref(), "--out")?;
    let ks = load_keywords(keywords).map_err(Failure::invalid)?;
    let records = filter_corpus(corpus, &ks).context("filter failed")?;
    jsonl::write_all(out, &records).with_context(|| format!("writing {}", out.display()))?;
    print(&json!({"n_keywords": ks.keywords().len(), "n_matches": records.len()}));
    Ok(())
}

fn rates_array(rates: &[f64]) -> Result<[f64; 4], Failure> {
    rates
        .try_into()
        .map_err(|_| Failure::invalid(format!("--rates needs 4 values, got {}", rates.len())))
}

fn sample(cli: &Cli, a: &SampleArgs) -> Outcome {
    let Some(matches) = &a.matches else {
        return staged(cli, Stage::Sample, |cfg| {
            if let Some(seed) = a.seed {
                cfg.sample.seed = seed;
            }
            if let Some(rates) = &a.rates {
                let rates = rates_array(rates)?;
                cfg.sample.rates = (1..=4).map(|t| (t.to_string(), rates[t - 1])).collect();
            }
            Ok(())
        });
    };
    let rates = match &a.rates {
        Some(r) => rates_array(r)?,
        None => SamplePlan::DEFAULT_RATES,
    };
    let seed = need(a.seed, "--seed")?;
    let out = need(a.out.as_ref(), "--out")?;
    let plan = SamplePlan::new(rates, seed).map_err(Failure::invalid)?;
    let records: Vec<MatchRecord> = jsonl::read_all(matches).map_err(anyhow::Error::from)?;
    let ids = sample_by_tier(&records, &plan);
    pipeline::write_ids(out, &ids).with_context(|| format!("writing {}", out.display()))?;
    print(&json!({"n_matches": records.len(), "n_selected": ids.len()}));
    Ok(())
}

fn framework_or_default(path: Option<&Path>) -> Result<FrameworkSpec, Failure> {
    match path {
        Some(p) => load_framework(p).map_err(Failure::invalid),
        None => Ok(default_framework()),
    }
}

fn cost_report(spec: &FrameworkSpec, texts: &[&str], prices: &Prices) -> Value {
    let representative = median_length_sentence(texts).unwrap_or("");
    let est: CostEstimate = estimate_cost(texts.len() as u64, spec, representative, prices);
    json!({
        "n_calls": est.n_calls,
        "est_prompt_tokens": est.est_prompt_tokens,
        "est_completion_tokens": est.est_completion_tokens,
        "est_total_tokens": est.total_tokens(),
        "est_cost": est.est_cost,
        "prices": prices,
    })
}

fn sample_texts(sample: &Path, store: &Path) -> Result<Vec<String>, Failure> {
    let ids = read_ids(sample).with_context(|| format!("reading {}", sample.display()))?;
    let sentences =
        pipeline::load_sentences(store, &ids).map_err(|e| Failure::Runtime(anyhow::anyhow!(e)))?;
    Ok(sentences.into_iter().map(|s| s.text).collect())
}

fn print_cost(spec: &FrameworkSpec, sample: &Path, store: &Path, prices: &Prices) -> Outcome {
    let texts = sample_texts(sample, store)?;
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    print(&cost_report(spec, &refs, prices));
    Ok(())
}

fn config_cost(cli: &Cli, framework: Option<&Path>) -> Outcome {
    let cfg = load_config(cli)?;
    let spec = match framework {
        Some(p) => framework_or_default(Some(p))?,
        None => cfg.framework().map_err(Failure::invalid)?,
    };
    let workdir = cfg.workdir();
    let sample = workdir.join(pipeline::SAMPLE);
    if !sample.is_file() {
        return Err(Failure::invalid(format!(
            "{} does not exist; run stage `sample` first",
            sample.display()
        )));
    }
    print_cost(&spec, &sample, &workdir.join(pipeline::CORPUS), &cfg.prices)
}

fn cost_estimate(cli: &Cli, a: &CostArgs) -> Outcome {
    match &a.sample {
        Some(sample) => {
            let spec = framework_or_default(a.framework.as_deref())?;
            let store = need(a.corpus.as_ref(), "--corpus")?;
            print_cost(&spec, sample, store, &Prices::default())
        }
        None => config_cost(cli, a.framework.as_deref()),
    }
}

fn annotate(cli: &Cli, a: &AnnotateArgs) -> Outcome {
    let Some(sample) = &a.sample else {
        if a.dry_run_cost {
            return config_cost(cli, a.framework.as_deref());
        }
        return staged(cli, Stage::Annotate, |cfg| {
            if let Some(m) = &a.mock {
                cfg.glm.mock = Some(absolute(m.clone())?);
            }
            if let Some(f) = &a.framework {
                cfg.paths.framework = Some(absolute(f.clone())?);
            }
            if let Some(m) = &a.model {
                cfg.glm.config.model = m.clone();
            }
            if let Some(n) = a.max_concurrent {
                cfg.glm.config.max_concurrent = n;
            }
            Ok(())
        });
    };
    let spec = framework_or_default(a.framework.as_deref())?;
    let store = need(a.corpus.as_ref(), "--corpus")?;
    if a.dry_run_cost {
        return print_cost(&spec, sample, store, &Prices::default());
    }
    let out = need(a.out.as_ref(), "--out")?;

    let mut config = GlmConfig::default().with_env();
    if let Some(m) = &a.model {
        config.model = m.clone();
    }
    if let Some(n) = a.max_concurrent {
        config.max_concurrent = n;
    }
    let (client, clock): (Arc<dyn GlmClient>, Arc<dyn Clock>) = match &a.mock {
        Some(path) => {
            let raw = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let mock = MockClient::from_json(&raw)
                .map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
            (Arc::new(mock), Arc::new(ManualClock::epoch()))
        }
        None => {
            let errors = config.validate();
            if !errors.is_empty() {
                return Err(Failure::invalid(errors.join("; ")));
            }
            (
                Arc::new(
                    config
                        .http_client()
                        .map_err(|e| Failure::Runtime(anyhow::anyhow!(e)))?,
                ),
                Arc::new(SystemClock),
            )
        }
    };

    let ids = read_ids(sample).with_context(|| format!("reading {}", sample.display()))?;
    let sentences =
        pipeline::load_sentences(store, &ids).map_err(|e| Failure::Runtime(anyhow::anyhow!(e)))?;
    let cache =
        AnnotationCache::open(&sibling(out, "log.jsonl")).context("opening annotation cache")?;
    let annotator = Annotator::with_clock(client, config, clock);
    let outcome = annotator.annotate_batch(&sentences, &spec, &cache);
    for f in &outcome.failures {
        log::warn!("{}", f.reason);
    }
    jsonl::write_all(out, &outcome.annotations)
        .with_context(|| format!("writing {}", out.display()))?;
    let failures = sibling(out, "failures.jsonl");
    jsonl::write_all(&failures, &outcome.failures)
        .with_context(|| format!("writing {}", failures.display()))?;
    print(&outcome.summary);
    Ok(())
}

fn read_annotations(path: &Path) -> Result<Vec<Annotation>, Failure> {
    Ok(jsonl::read_all(path).map_err(anyhow::Error::from)?)
}

fn eval_rationales(cli: &Cli, a: &EvalRationalesArgs) -> Outcome {
    let Some(annotations) = &a.annotations else {
        return staged(cli, Stage::EvalRationales, |cfg| {
            if let Some(f) = &a.framework {
                cfg.paths.framework = Some(absolute(f.clone())?);
            }
            cfg.eval.bleu_order = a.bleu_order;
            Ok(())
        });
    };
    let spec = framework_or_default(a.framework.as_deref())?;
    let bleu = BleuConfig::uniform(a.bleu_order).map_err(Failure::invalid)?;
    let annotations = read_annotations(annotations)?;
    let report =
        steps::rationale_diversity(&spec, &annotations, &bleu).map_err(|e| anyhow::anyhow!(e))?;
    emit(&report, a.out.as_deref())
}

fn topics(cli: &Cli, a: &TopicsArgs) -> Outcome {
    let label = a.label.as_deref().map(parse_label_filter).transpose()?;
    let Some(annotations) = &a.annotations else {
        return staged(cli, Stage::Topics, |cfg| {
            if let Some(l) = label {
                cfg.topics.label = l;
            }
            if let Some(k) = a.k {
                cfg.topics.k = k;
            }
            if let Some(s) = a.seed {
                cfg.seeds.topics = s;
            }
            if let Some(n) = a.iterations {
                cfg.topics.iterations = n;
            }
            if let Some(m) = a.top_words {
                cfg.topics.top_words = m;
            }
            Ok(())
        });
    };
    let defaults = LdaConfig::default();
    let lda = LdaConfig {
        k: a.k.unwrap_or(defaults.k),
        iterations: a.iterations.unwrap_or(defaults.iterations),
        seed: need(a.seed, "--seed")?,
        ..defaults
    };
    let label = label.unwrap_or(Some(valuelens::Label::DirectPve));
    let annotations = read_annotations(annotations)?;
    let report = steps::rationale_topics(&annotations, label, &lda, a.top_words.unwrap_or(10))
        .map_err(|e| anyhow::anyhow!(e))?;
    emit(&report, a.out.as_deref())
}

fn train(cli: &Cli, a: &TrainArgs) -> Outcome {
    let Some(annotations) = &a.annotations else {
        return staged(cli, Stage::Train, |cfg| {
            if let Some(t) = a.task {
                cfg.task = t;
            }
            if let Some(s) = a.seed {
                cfg.seeds.train = s;
            }
            if let Some(s) = a.split_seed {
                cfg.seeds.split = s;
            }
            if let Some(r) = a.split_ratio {
                cfg.split_ratio = r;
            }
            if let Some(e) = a.epochs {
                cfg.train.epochs = e;
            }
            Ok(())
        });
    };
    let store = need(a.corpus.as_ref(), "--corpus")?;
    let out = need(a.out.as_ref(), "--out")?;
    let seed = need(a.seed, "--seed")?;
    let task = a.task.unwrap_or(valuelens::distill::Task::ThreeClass);
    let mut tc = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    let annotations = read_annotations(annotations)?;
    let ds = steps::labeled_dataset(
        annotations,
        store,
        task,
        a.split_ratio.unwrap_or(0.9),
        a.split_seed.unwrap_or(seed),
    )
    .map_err(Failure::invalid)?;
    let train = ds.train();
    let model = train_linear(task, &train, &tc).map_err(Failure::invalid)?;
    model.save(out).context("saving model")?;
    let dataset = a
        .dataset
        .clone()
        .unwrap_or_else(|| sibling(out, "dataset.json"));
    pipeline::write_json(&dataset, &ds)
        .with_context(|| format!("writing {}", dataset.display()))?;
    print(&json!({
        "task": task,
        "n_train": train.len(),
        "n_eval": ds.eval().len(),
        "final_loss": model.epoch_losses.last(),
        "model": out,
        "dataset": dataset,
    }));
    Ok(())
}

fn read_dataset(path: &Path) -> Result<LabeledDataset, Failure> {
    pipeline::read_json(path).map_err(|e| Failure::Runtime(anyhow::anyhow!(e)))
}

fn eval(cli: &Cli, a: &EvalArgs) -> Outcome {
    let Some(model_path) = &a.model else {
        return staged(cli, Stage::Eval, |cfg| {
            cfg.eval.baseline_trials = a.trials;
            Ok(())
        });
    };
    let dataset = match &a.dataset {
        Some(d) => d.clone(),
        None => sibling(model_path, "dataset.json"),
    };
    let model = LinearModel::load(model_path).context("loading model")?;
    let ds = read_dataset(&dataset)?;
    let (_, out) = steps::evaluation(&model, &ds, a.baseline_seed, a.trials);
    emit(&out, a.out.as_deref())
}

fn predict(cli: &Cli, a: &PredictArgs) -> Outcome {
    let Some(model_path) = &a.model else {
        return staged(cli, Stage::Predict, |_| Ok(()));
    };
    let store = need(a.corpus.as_ref(), "--corpus")?;
    let out = need(a.out.as_ref(), "--out")?;
    let model = LinearModel::load(model_path).context("loading model")?;
    let n = predict_batch(&model, store, out).context("prediction failed")?;
    print(&json!({"n_predictions": n, "out": out}));
    Ok(())
}

fn eval_external(cli: &Cli, a: &EvalExternalArgs) -> Outcome {
    let dataset = match &a.dataset {
        Some(d) => d.clone(),
        None => load_config(cli)?.workdir().join(pipeline::DATASET),
    };
    let ds = read_dataset(&dataset)?;
    let report = import_external_predictions(&a.predictions, &ds).map_err(Failure::invalid)?;
    print(&report);
    Ok(())
}

fn serve_review(cli: &Cli, a: &ServeReviewArgs) -> Outcome {
    let token = need(a.token.clone(), "--token (or VALUELENS_REVIEW_TOKEN)")?;
    if token.is_empty() {
        return Err(Failure::invalid("the review token must not be empty"));
    }
    let (annotations, store, journal) = match &a.annotations {
        Some(ann) => {
            let store = need(a.corpus.clone(), "--corpus")?;
            let journal = a
                .journal
                .clone()
                .unwrap_or_else(|| sibling(ann, "judgments.jsonl"));
            (ann.clone(), store, journal)
        }
        None => {
            let workdir = load_config(cli)?.workdir();
            let journal = a
                .journal
                .clone()
                .unwrap_or_else(|| workdir.join("judgments.jsonl"));
            (
                workdir.join(pipeline::ANNOTATIONS),
                workdir.join(pipeline::CORPUS),
                journal,
            )
        }
    };
    let annotations = read_annotations(&annotations)?;
    let ids = annotations.iter().map(|a| a.sent_id.clone()).collect();
    let texts: BTreeMap<String, String> =
        corpus::lookup_texts(&store, &ids).context("reading sentence store")?;
    let mut paired = Vec::with_capacity(annotations.len());
    for ann in annotations {
        match texts.get(&ann.sent_id) {
            Some(t) => {
                let t = t.clone();
                paired.push((ann, t));
            }
            None => log::warn!("{} is not in the sentence store; skipped", ann.sent_id),
        }
    }
    let mut review = ReviewStore::new(paired).map_err(Failure::invalid)?;
    let size = a.batch_size.min(review.available());
    let batch = review
        .enqueue_sample(size, a.seed)
        .map_err(Failure::invalid)?;
    let review = review
        .with_journal(&journal)
        .context("opening judgment journal")?;
    log::info!("batch {batch}: {size} items; journal {}", journal.display());

    let addr = std::net::SocketAddr::new(a.host, a.port);
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    let state = valuelens_review::AppState::new(review, &token);
    runtime
        .block_on(valuelens_review::serve(addr, state))
        .with_context(|| format!("serving on {addr}"))?;
    Ok(())
}
