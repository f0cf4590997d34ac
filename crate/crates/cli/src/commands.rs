use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use flare_core::answer::{execute, Answerer, EngineConfig};
use flare_core::classifier::{
    check_alpha, load_weights, save_weights, train as fit, ClassifierWeights, FeatureConfig,
    InterpolatedClassifier, Router, TrainParams,
};
use flare_core::corpus::{ingest_corpus, ingest_qa, Corpus, QaSet};
use flare_core::evaluator::{
    run_policy, sweep_alpha, write_csv, write_query_log, EvalOptions, FailureMode, PolicyRun,
    Policy,
};
use flare_core::http::HttpAnswerer;
use flare_core::labeler::{
    label_combined, label_cost_dataset, label_reliability_dataset, read_labels,
    training_examples, write_exclusions, write_labels, LabeledExample,
};
use flare_core::oracle::load_oracle;
use flare_core::retriever::{Bm25Retriever, InvertedIndex};
use flare_core::synthetic::{generate, SyntheticConfig};
use flare_core::{Error, Strategy};
use log::info;

use crate::{
    AnswerSource, AnswererKind, EvalCommand, EvalCommon, Hyper, IndexCommand, IngestArgs,
    LabelArgs, LabelKind, RouteArgs, SynthArgs, TrainArgs,
};

/// Create `path` (and its parent directory) and hand a buffered writer to `f`.
pub(crate) fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    f(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn ingest(args: IngestArgs) -> Result<()> {
    if args.corpus.is_none() && args.qa.is_none() {
        return Err(Error::invalid("nothing to ingest: pass --corpus and/or --qa").into());
    }
    if let Some(path) = &args.corpus {
        let corpus = ingest_corpus(path)?;
        write_file(&args.out.join("corpus.jsonl"), |w| corpus.write_jsonl(w))?;
        println!("corpus\t{}", corpus.len());
    }
    if let Some(path) = &args.qa {
        let qa = ingest_qa(path)?;
        write_file(&args.out.join("qa.jsonl"), |w| qa.write_jsonl(w))?;
        println!("qa\t{}", qa.len());
    }
    Ok(())
}

pub fn index(cmd: IndexCommand) -> Result<()> {
    match cmd {
        IndexCommand::Build { corpus, out } => {
            let corpus = ingest_corpus(&corpus)?;
            let index = InvertedIndex::build(&corpus)?;
            index.save(&out)?;
            println!("indexed {} documents, {} terms", index.num_docs(), index.terms().count());
        }
        IndexCommand::Search { index, query, k } => {
            let index = InvertedIndex::load(&index)?;
            for hit in index.search(&query, k) {
                println!("{}\t{:.6}", hit.doc_id, hit.score);
            }
        }
    }
    Ok(())
}

/// Corpus plus its index, loaded or built.
pub(crate) struct Collection {
    pub corpus: Corpus,
    pub index: InvertedIndex,
}

impl Collection {
    pub fn open(corpus: &Path, index: Option<&Path>) -> Result<Self> {
        let corpus = ingest_corpus(corpus)?;
        let index = match index {
            Some(p) => {
                let index = InvertedIndex::load(p)?;
                if index.num_docs() != corpus.len() {
                    return Err(Error::validation(format!(
                        "index covers {} documents but the corpus has {}",
                        index.num_docs(),
                        corpus.len()
                    ))
                    .into());
                }
                index
            }
            None => InvertedIndex::build(&corpus)?,
        };
        Ok(Collection { corpus, index })
    }

    pub fn retriever(&self) -> Bm25Retriever<'_> {
        Bm25Retriever::new(&self.index, &self.corpus)
    }
}

pub(crate) fn build_answerer(
    kind: AnswererKind,
    oracle: Option<&Path>,
    endpoint: Option<&str>,
    max_in_flight: usize,
    qa: &QaSet,
) -> Result<Box<dyn Answerer>> {
    match kind {
        AnswererKind::Mock => {
            let path = oracle.ok_or_else(|| Error::invalid("oracle required for mock answerer"))?;
            Ok(Box::new(load_oracle(path, qa)?))
        }
        AnswererKind::Http => {
            let answerer = match endpoint {
                Some(url) => HttpAnswerer::new(
                    url,
                    std::env::var(flare_core::http::TOKEN_ENV).ok().filter(|t| !t.is_empty()),
                    max_in_flight,
                ),
                None => HttpAnswerer::from_env(max_in_flight).ok_or_else(|| {
                    Error::invalid(format!(
                        "http answerer needs --endpoint or ${}",
                        flare_core::http::URL_ENV
                    ))
                })?,
            };
            info!("answering via {}", answerer.url());
            Ok(Box::new(answerer))
        }
    }
}

impl AnswerSource {
    fn engine(&self) -> EngineConfig {
        EngineConfig {
            k: self.k,
            max_steps: self.max_steps,
        }
    }

    fn answerer(&self, qa: &QaSet) -> Result<Box<dyn Answerer>> {
        build_answerer(
            self.answerer,
            self.oracle.as_deref(),
            self.endpoint.as_deref(),
            self.max_in_flight,
            qa,
        )
    }

    fn collection(&self) -> Result<Collection> {
        let corpus = self
            .corpus
            .as_deref()
            .ok_or_else(|| Error::invalid("--corpus is required"))?;
        Collection::open(corpus, self.index.as_deref())
    }
}

pub fn label(args: LabelArgs) -> Result<()> {
    let qa = ingest_qa(&args.qa)?;
    let reliability = || label_reliability_dataset(&qa);
    let cost = |args: &LabelArgs| -> Result<Vec<LabeledExample>> {
        if let Some(path) = &args.cost_labels {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            return Ok(read_labels(std::io::BufReader::new(file))?);
        }
        let answerer = args.source.answerer(&qa)?;
        let collection = args.source.collection()?;
        let labeling = label_cost_dataset(
            &qa,
            answerer.as_ref(),
            &collection.retriever(),
            args.source.engine(),
            args.unanswerable,
        );
        let exclusions = args
            .exclusions
            .clone()
            .unwrap_or_else(|| sidecar(&args.out, ".exclusions.jsonl"));
        write_file(&exclusions, |w| write_exclusions(w, &labeling.exclusions))?;
        eprintln!(
            "{} labeled, {} excluded ({})",
            labeling.labels.len(),
            labeling.exclusions.len(),
            exclusions.display()
        );
        Ok(labeling.labels)
    };
    let labels = match args.kind {
        LabelKind::Cost => cost(&args)?,
        LabelKind::Reliability => reliability(),
        LabelKind::Combined => label_combined(&cost(&args)?, &reliability()),
    };
    write_file(&args.out, |w| write_labels(w, &labels))?;
    Ok(())
}

impl Hyper {
    pub(crate) fn feature_config(&self) -> Result<FeatureConfig> {
        Ok(FeatureConfig::new(self.dim, self.hash_seed)?)
    }

    pub(crate) fn params(&self, permit_absent: Vec<Strategy>) -> TrainParams {
        TrainParams {
            learning_rate: self.lr,
            l2: self.l2,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            permit_absent,
            ..TrainParams::default()
        }
    }
}

/// Reliability labels never contain no-retrieval (or unanswerable) examples.
pub(crate) fn permitted_absent(mode: LabelKind) -> Vec<Strategy> {
    match mode {
        LabelKind::Reliability => vec![Strategy::NoRetrieval, Strategy::Unanswerable],
        LabelKind::Cost | LabelKind::Combined => vec![Strategy::Unanswerable],
    }
}

pub(crate) fn train_labels(
    labels: &[LabeledExample],
    qa: &QaSet,
    mode: LabelKind,
    unanswerable: bool,
    hyper: &Hyper,
) -> Result<ClassifierWeights> {
    let fc = hyper.feature_config()?;
    let examples = training_examples(labels, qa, &fc)?;
    let model = fit(
        &examples,
        Strategy::classes(unanswerable),
        fc,
        &hyper.params(permitted_absent(mode)),
    )?;
    if let Some(last) = model.loss_history.last() {
        info!("trained on {} examples, final batch loss {last:.4}", examples.len());
    }
    Ok(model.weights)
}

pub fn train(args: TrainArgs) -> Result<()> {
    let qa = ingest_qa(&args.qa)?;
    let file = File::open(&args.labels).map_err(|e| Error::io(&args.labels, e))?;
    let labels = read_labels(std::io::BufReader::new(file))?;
    let weights = train_labels(&labels, &qa, args.mode, args.unanswerable, &args.hyper)?;
    save_weights(&weights, &args.out)?;
    if let Some(path) = &args.json {
        write_file(path, |w| {
            serde_json::to_writer_pretty(&mut *w, &weights.to_json())?;
            w.write_all(b"\n")
        })?;
    }
    Ok(())
}

/// Binary weights, or the JSON export when the file ends in `.json`.
pub(crate) fn read_weights(path: &Path) -> Result<ClassifierWeights> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        Ok(ClassifierWeights::from_json(&value)?)
    } else {
        Ok(load_weights(path, None)?)
    }
}

fn interpolated(coc: &Path, roc: &Path, alpha: f64) -> Result<InterpolatedClassifier> {
    check_alpha(alpha)?;
    let coc = read_weights(coc).with_context(|| format!("loading {}", coc.display()))?;
    let roc = read_weights(roc).with_context(|| format!("loading {}", roc.display()))?;
    Ok(InterpolatedClassifier::new(coc, roc, alpha)?)
}

pub fn route(args: RouteArgs) -> Result<()> {
    let classifier = interpolated(&args.coc, &args.roc, args.alpha)?;
    let decision = classifier.route(&args.query);
    let classes = classifier.effective().classes();
    println!("strategy\t{}", decision.strategy);
    if decision.predicted != decision.strategy {
        println!("predicted\t{}", decision.predicted);
    }
    for ((class, logit), p) in classes.iter().zip(&decision.logits).zip(&decision.probabilities) {
        println!("{class}\tlogit={logit:.6}\tp={p:.6}");
    }
    if !args.execute {
        return Ok(());
    }

    let qa = match &args.qa {
        Some(path) => ingest_qa(path)?,
        None if args.source.answerer == AnswererKind::Mock => {
            return Err(Error::invalid("--qa is required to execute with the mock answerer").into())
        }
        None => QaSet::from_examples(Vec::new())?,
    };
    let query_id = match &args.query_id {
        Some(id) => id.clone(),
        None => match qa.iter().find(|ex| ex.question == args.query) {
            Some(ex) => ex.id.clone(),
            None if args.source.answerer == AnswererKind::Mock => {
                return Err(Error::invalid("query not in the QA set; pass --query-id").into())
            }
            None => "query".to_string(),
        },
    };
    let answerer = args.source.answerer(&qa)?;
    let collection = args.source.collection()?;
    let trace = execute(
        decision.strategy,
        answerer.as_ref(),
        &collection.retriever(),
        &query_id,
        &args.query,
        args.source.engine(),
    )
    .map_err(Error::from)?;
    for (i, step) in trace.steps.iter().enumerate() {
        println!("step {}\t{}\t{}", i + 1, step.query, step.doc_ids.join(","));
    }
    println!("answer\t{}", trace.answer);
    println!("steps\t{}", trace.steps_used());
    Ok(())
}

pub(crate) fn write_runs(csv: &Path, log: &Path, runs: &[PolicyRun]) -> Result<()> {
    let records: Vec<_> = runs.iter().map(|r| r.record.clone()).collect();
    write_file(csv, |w| write_csv(w, &records))?;
    let rows: Vec<_> = runs.iter().flat_map(|r| r.log.iter().cloned()).collect();
    write_file(log, |w| write_query_log(w, &rows))?;
    for r in &records {
        println!("{}", r.table_row());
    }
    Ok(())
}

impl EvalCommon {
    fn options(&self) -> EvalOptions {
        EvalOptions {
            engine: self.source.engine(),
            on_failure: if self.skip_failures {
                FailureMode::Skip
            } else {
                FailureMode::Abort
            },
        }
    }

    fn log_path(&self) -> PathBuf {
        self.log.clone().unwrap_or_else(|| sidecar(&self.out, ".log.jsonl"))
    }
}

fn parse_policy(
    name: &str,
    weights: Option<&Path>,
    coc: Option<&Path>,
    roc: Option<&Path>,
    alpha: Option<f64>,
) -> Result<Policy> {
    if let Some(s) = name.strip_prefix("static:") {
        return Ok(Policy::Static(s.parse::<Strategy>()?));
    }
    match name {
        "adaptive_rag" => {
            let path = weights.ok_or_else(|| Error::invalid("adaptive_rag needs --weights"))?;
            Ok(Policy::AdaptiveRag(read_weights(path)?))
        }
        "flare" => match (coc, roc, alpha) {
            (Some(coc), Some(roc), Some(alpha)) => Ok(Policy::Flare(interpolated(coc, roc, alpha)?)),
            _ => Err(Error::invalid("flare needs --coc, --roc and --alpha").into()),
        },
        other => Err(Error::invalid(format!("unknown policy {other:?}")).into()),
    }
}

pub fn eval(cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Run(args) => {
            let policy = parse_policy(
                &args.policy,
                args.weights.as_deref(),
                args.coc.as_deref(),
                args.roc.as_deref(),
                args.alpha,
            )?;
            let common = &args.common;
            let qa = ingest_qa(&common.qa)?;
            let answerer = common.source.answerer(&qa)?;
            let collection = common.source.collection()?;
            let run = run_policy(
                &policy,
                &qa,
                answerer.as_ref(),
                &collection.retriever(),
                common.options(),
            )?;
            write_runs(&common.out, &common.log_path(), &[run])
        }
        EvalCommand::Sweep(args) => {
            for &a in &args.alphas {
                check_alpha(a)?;
            }
            let coc = read_weights(&args.coc)?;
            let roc = read_weights(&args.roc)?;
            let common = &args.common;
            let qa = ingest_qa(&common.qa)?;
            let answerer = common.source.answerer(&qa)?;
            let collection = common.source.collection()?;
            let runs = sweep_alpha(
                &qa,
                &coc,
                &roc,
                &args.alphas,
                answerer.as_ref(),
                &collection.retriever(),
                common.options(),
            )?;
            write_runs(&common.out, &common.log_path(), &runs)
        }
    }
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let bench = generate(&SyntheticConfig {
        num_queries: args.n,
        seed: args.seed,
        unanswerable_share: args.unanswerable_share,
        ..SyntheticConfig::default()
    });
    let oracle = bench.oracle()?;
    write_file(&args.out.join("corpus.jsonl"), |w| bench.corpus.write_jsonl(w))?;
    write_file(&args.out.join("qa.jsonl"), |w| bench.qa.write_jsonl(w))?;
    write_file(&args.out.join("oracle.jsonl"), |w| oracle.write_jsonl(w))?;
    println!(
        "wrote {} documents, {} questions to {}",
        bench.corpus.len(),
        bench.qa.len(),
        args.out.display()
    );
    Ok(())
}
