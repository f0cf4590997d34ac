use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use flare_core::answer::EngineConfig;
use flare_core::classifier::{check_alpha, save_weights, WEIGHTS_VERSION};
use flare_core::corpus::{ingest_corpus, ingest_qa, QaSet};
use flare_core::evaluator::{
    run_policy, sweep_alpha, write_csv, write_query_log, EvalOptions, FailureMode, Policy,
    DEFAULT_ALPHA_GRID,
};
use flare_core::labeler::{
    label_combined, label_cost_dataset, label_reliability_dataset, write_exclusions,
    write_labels,
};
use flare_core::retriever::{InvertedIndex, INDEX_FORMAT, INDEX_VERSION};
use flare_core::{Error, Strategy};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::commands::{build_answerer, train_labels, write_file, Collection};
use crate::{AnswererKind, Hyper, LabelKind};

/// Every option may also come from `--config`; flags win over the file.
#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineArgs {
    /// JSON file whose keys mirror these flags (snake_case).
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Questions used for labeling and training.
    #[arg(long)]
    qa: Option<PathBuf>,
    /// Held-out questions for evaluation. Without it the QA set is split.
    #[arg(long)]
    eval_qa: Option<PathBuf>,
    /// Share of the QA set used for training when no --eval-qa is given.
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long, value_enum)]
    answerer: Option<AnswererKind>,
    #[arg(long)]
    oracle: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    alphas: Option<Vec<f64>>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    hash_seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Four-class label space.
    #[arg(long)]
    unanswerable: bool,
    #[arg(long)]
    skip_failures: bool,
}

/// Fully resolved settings, recorded in the manifest.
#[derive(Debug, Serialize)]
struct Settings {
    corpus: PathBuf,
    qa: PathBuf,
    eval_qa: Option<PathBuf>,
    train_fraction: f64,
    answerer: AnswererKind,
    oracle: Option<PathBuf>,
    endpoint: Option<String>,
    max_in_flight: usize,
    out_dir: PathBuf,
    k: usize,
    max_steps: usize,
    alphas: Vec<f64>,
    dim: usize,
    hash_seed: u64,
    lr: f64,
    l2: f64,
    batch_size: usize,
    epochs: usize,
    seed: u64,
    unanswerable: bool,
    skip_failures: bool,
}

fn read_config(path: &Path) -> Result<PipelineArgs> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg: PipelineArgs = serde_json::from_str(&text)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    // Relative paths in a config file are relative to the file itself.
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [
        &mut cfg.corpus,
        &mut cfg.qa,
        &mut cfg.eval_qa,
        &mut cfg.oracle,
        &mut cfg.out_dir,
    ]
    .into_iter()
    .flatten()
    {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

fn resolve(flags: PipelineArgs) -> Result<Settings> {
    let file = match &flags.config {
        Some(path) => read_config(path)?,
        None => PipelineArgs::default(),
    };
    macro_rules! pick {
        ($field:ident) => {
            flags.$field.or(file.$field)
        };
    }
    let required = |v: Option<PathBuf>, flag: &str| {
        v.ok_or_else(|| Error::invalid(format!("--{flag} is required")))
    };
    let s = Settings {
        corpus: required(pick!(corpus), "corpus")?,
        qa: required(pick!(qa), "qa")?,
        eval_qa: pick!(eval_qa),
        train_fraction: pick!(train_fraction).unwrap_or(0.5),
        answerer: pick!(answerer).unwrap_or(AnswererKind::Mock),
        oracle: pick!(oracle),
        endpoint: pick!(endpoint),
        max_in_flight: pick!(max_in_flight).unwrap_or(flare_core::http::DEFAULT_MAX_IN_FLIGHT),
        out_dir: required(pick!(out_dir), "out-dir")?,
        k: pick!(k).unwrap_or(flare_core::retriever::DEFAULT_TOP_K),
        max_steps: pick!(max_steps).unwrap_or(flare_core::answer::DEFAULT_MAX_STEPS),
        alphas: pick!(alphas).unwrap_or_else(|| DEFAULT_ALPHA_GRID.to_vec()),
        dim: pick!(dim).unwrap_or(flare_core::classifier::DEFAULT_DIMENSION),
        hash_seed: pick!(hash_seed).unwrap_or(flare_core::classifier::DEFAULT_HASH_SEED),
        lr: pick!(lr).unwrap_or(0.1),
        l2: pick!(l2).unwrap_or(1e-4),
        batch_size: pick!(batch_size).unwrap_or(64),
        epochs: pick!(epochs).unwrap_or(20),
        seed: pick!(seed).unwrap_or(42),
        unanswerable: flags.unanswerable || file.unanswerable,
        skip_failures: flags.skip_failures || file.skip_failures,
    };
    if !(s.train_fraction > 0.0 && s.train_fraction < 1.0) {
        return Err(Error::invalid("train fraction must be in (0,1)").into());
    }
    for &a in &s.alphas {
        check_alpha(a)?;
    }
    Ok(s)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn split(qa: &QaSet, fraction: f64) -> Result<(QaSet, QaSet)> {
    let n = ((qa.len() as f64) * fraction).round() as usize;
    let (train, eval) = qa.examples().split_at(n.clamp(1, qa.len().saturating_sub(1)));
    Ok((
        QaSet::from_examples(train.to_vec())?,
        QaSet::from_examples(eval.to_vec())?,
    ))
}

pub fn run(args: PipelineArgs) -> Result<()> {
    let s = resolve(args)?;
    let out = &s.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let hyper = Hyper {
        dim: s.dim,
        hash_seed: s.hash_seed,
        lr: s.lr,
        l2: s.l2,
        batch_size: s.batch_size,
        epochs: s.epochs,
        seed: s.seed,
    };
    hyper.feature_config()?;

    // ingest
    let corpus = ingest_corpus(&s.corpus).context("ingest")?;
    let qa = ingest_qa(&s.qa).context("ingest")?;
    let (train_qa, eval_qa) = match &s.eval_qa {
        Some(path) => (qa, ingest_qa(path).context("ingest")?),
        None => {
            if qa.len() < 2 {
                return Err(Error::validation("need at least two questions to split").into());
            }
            split(&qa, s.train_fraction)?
        }
    };
    let all_qa = QaSet::from_examples(
        train_qa.iter().chain(eval_qa.iter()).cloned().collect(),
    )
    .context("train and eval questions must have distinct ids")?;
    write_file(&out.join("corpus.jsonl"), |w| corpus.write_jsonl(w))?;
    write_file(&out.join("train_qa.jsonl"), |w| train_qa.write_jsonl(w))?;
    write_file(&out.join("eval_qa.jsonl"), |w| eval_qa.write_jsonl(w))?;

    // index
    let index_path = out.join("index.json");
    InvertedIndex::build(&corpus)
        .and_then(|index| index.save(&index_path))
        .context("index")?;
    let collection = Collection::open(&out.join("corpus.jsonl"), Some(&index_path))?;
    let retriever = collection.retriever();

    let answerer = build_answerer(
        s.answerer,
        s.oracle.as_deref(),
        s.endpoint.as_deref(),
        s.max_in_flight,
        &all_qa,
    )?;
    let engine = EngineConfig {
        k: s.k,
        max_steps: s.max_steps,
    };

    // label
    let cost = label_cost_dataset(&train_qa, answerer.as_ref(), &retriever, engine, s.unanswerable);
    let reliability = label_reliability_dataset(&train_qa);
    let combined = label_combined(&cost.labels, &reliability);
    write_file(&out.join("labels_cost.jsonl"), |w| write_labels(w, &cost.labels))?;
    write_file(&out.join("exclusions.jsonl"), |w| write_exclusions(w, &cost.exclusions))?;
    write_file(&out.join("labels_reliability.jsonl"), |w| write_labels(w, &reliability))?;
    write_file(&out.join("labels_combined.jsonl"), |w| write_labels(w, &combined))?;
    info!(
        "labels: {} cost ({} excluded), {} reliability",
        cost.labels.len(),
        cost.exclusions.len(),
        reliability.len()
    );

    // train
    let coc = train_labels(&cost.labels, &train_qa, LabelKind::Cost, s.unanswerable, &hyper)
        .context("train cost-optimized classifier")?;
    let roc = train_labels(&reliability, &train_qa, LabelKind::Reliability, s.unanswerable, &hyper)
        .context("train reliability-optimized classifier")?;
    let adaptive = train_labels(&combined, &train_qa, LabelKind::Combined, s.unanswerable, &hyper)
        .context("train combined classifier")?;
    save_weights(&coc, out.join("coc.weights"))?;
    save_weights(&roc, out.join("roc.weights"))?;
    save_weights(&adaptive, out.join("adaptive_rag.weights"))?;

    // evaluate
    let options = EvalOptions {
        engine,
        on_failure: if s.skip_failures {
            FailureMode::Skip
        } else {
            FailureMode::Abort
        },
    };
    let sweep = sweep_alpha(&eval_qa, &coc, &roc, &s.alphas, answerer.as_ref(), &retriever, options)
        .context("sweep")?;
    let mut baselines = Vec::new();
    for policy in Strategy::EXECUTABLE
        .into_iter()
        .map(Policy::Static)
        .chain([Policy::AdaptiveRag(adaptive)])
    {
        baselines.push(
            run_policy(&policy, &eval_qa, answerer.as_ref(), &retriever, options)
                .with_context(|| format!("evaluate {}", policy.name()))?,
        );
    }
    let sweep_records: Vec<_> = sweep.iter().map(|r| r.record.clone()).collect();
    let baseline_records: Vec<_> = baselines.iter().map(|r| r.record.clone()).collect();
    write_file(&out.join("sweep.csv"), |w| write_csv(w, &sweep_records))?;
    write_file(&out.join("baselines.csv"), |w| write_csv(w, &baseline_records))?;
    let log: Vec<_> = sweep
        .iter()
        .chain(&baselines)
        .flat_map(|r| r.log.iter().cloned())
        .collect();
    write_file(&out.join("query_log.jsonl"), |w| write_query_log(w, &log))?;

    for r in baseline_records.iter().chain(&sweep_records) {
        println!("{}", r.table_row());
    }

    // manifest
    let mut inputs = BTreeMap::new();
    for (name, path) in [
        ("corpus", Some(&s.corpus)),
        ("qa", Some(&s.qa)),
        ("eval_qa", s.eval_qa.as_ref()),
        ("oracle", s.oracle.as_ref()),
    ] {
        if let Some(path) = path {
            inputs.insert(name, json!({"path": path, "sha256": sha256_file(path)?}));
        }
    }
    let mut artifacts = BTreeMap::new();
    for name in [
        "corpus.jsonl",
        "train_qa.jsonl",
        "eval_qa.jsonl",
        "index.json",
        "labels_cost.jsonl",
        "exclusions.jsonl",
        "labels_reliability.jsonl",
        "labels_combined.jsonl",
        "coc.weights",
        "roc.weights",
        "adaptive_rag.weights",
        "sweep.csv",
        "baselines.csv",
        "query_log.jsonl",
    ] {
        artifacts.insert(name, sha256_file(&out.join(name))?);
    }
    let manifest = json!({
        "tool": "flare",
        "version": env!("CARGO_PKG_VERSION"),
        "settings": s,
        "formats": {
            "index": {"format": INDEX_FORMAT, "version": INDEX_VERSION},
            "weights": {"version": WEIGHTS_VERSION},
        },
        "counts": {
            "documents": corpus.len(),
            "train_questions": train_qa.len(),
            "eval_questions": eval_qa.len(),
            "cost_labels": cost.labels.len(),
            "exclusions": cost.exclusions.len(),
        },
        "inputs": inputs,
        "artifacts": artifacts,
    });
    write_file(&out.join("manifest.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest)?;
        std::io::Write::write_all(w, b"\n")
    })?;
    Ok(())
}
