//! Accuracy / retrieval-cost evaluation of routing policies.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::answer::{execute, AnswerTrace, Answerer, EngineConfig};
use crate::classifier::{check_alpha, ClassifierWeights, InterpolatedClassifier, Router};
use crate::corpus::{Origin, QaExample, QaSet};
use crate::error::{Error, Result};
use crate::retriever::Retriever;
use crate::strategy::Strategy;

pub const DEFAULT_ALPHA_GRID: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
pub const CSV_HEADER: &str = "policy,alpha,accuracy,mean_steps,total_steps,n";

/// Lowercase, turn every non-alphanumeric character into a space, collapse runs
/// of whitespace.
pub fn normalize_answer(text: &str) -> String {
    let mapped: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True iff some normalized gold answer occurs in the normalized prediction.
pub fn judge(answer: &str, gold_answers: &[String]) -> bool {
    let answer = normalize_answer(answer);
    gold_answers.iter().any(|g| {
        let g = normalize_answer(g);
        !g.is_empty() && answer.contains(&g)
    })
}

/// Retrieval cost of a trace: the number of retrieval calls it made.
pub fn cost_of(trace: &AnswerTrace) -> usize {
    trace.steps_used()
}

pub fn format_alpha(alpha: f64) -> String {
    let short = format!("{alpha:.1}");
    if short.parse::<f64>().ok() == Some(alpha) {
        short
    } else {
        format!("{alpha}")
    }
}

pub enum Policy {
    Static(Strategy),
    /// One classifier trained on combined labels.
    AdaptiveRag(ClassifierWeights),
    Flare(InterpolatedClassifier),
}

impl Policy {
    pub fn name(&self) -> String {
        match self {
            Policy::Static(s) => format!("static:{}", s.short_name()),
            Policy::AdaptiveRag(_) => "adaptive_rag".to_string(),
            Policy::Flare(c) => format!("flare:alpha={}", format_alpha(c.alpha())),
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            Policy::Flare(c) => Some(c.alpha()),
            _ => None,
        }
    }

    /// Strategy chosen for a question, plus the raw predicted class.
    pub fn decide(&self, question: &str) -> (Strategy, Strategy) {
        match self {
            Policy::Static(s) => (*s, *s),
            Policy::AdaptiveRag(w) => {
                let d = w.route(question);
                (d.strategy, d.predicted)
            }
            Policy::Flare(c) => {
                let d = c.route(question);
                (d.strategy, d.predicted)
            }
        }
    }
}

impl fmt::Debug for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FailureMode {
    /// Abort the run on the first answerer failure.
    #[default]
    Abort,
    /// Log the failure and leave the query out of the aggregates.
    Skip,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    pub engine: EngineConfig,
    pub on_failure: FailureMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Tally {
    pub n: usize,
    pub correct: usize,
    pub total_steps: u64,
}

impl Tally {
    fn add(&mut self, correct: bool, steps: usize) {
        self.n += 1;
        self.correct += correct as usize;
        self.total_steps += steps as u64;
    }

    pub fn accuracy(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.correct as f64 / self.n as f64
        }
    }

    pub fn mean_steps(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.total_steps as f64 / self.n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub policy: String,
    pub alpha: Option<f64>,
    pub overall: Tally,
    pub per_origin: BTreeMap<Origin, Tally>,
    /// Queries left out after answerer failures (skip mode only).
    pub skipped: usize,
}

impl EvalRecord {
    pub fn accuracy(&self) -> f64 {
        self.overall.accuracy()
    }

    pub fn mean_steps(&self) -> f64 {
        self.overall.mean_steps()
    }

    pub fn total_steps(&self) -> u64 {
        self.overall.total_steps
    }

    pub fn n(&self) -> usize {
        self.overall.n
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.3},{:.1},{},{}",
            self.policy,
            self.alpha.map(format_alpha).unwrap_or_default(),
            self.accuracy(),
            self.mean_steps(),
            self.total_steps(),
            self.n()
        )
    }

    /// `label & acc & steps` with the same precision as the CSV.
    pub fn table_row(&self) -> String {
        let label = match self.alpha {
            Some(a) => format!("α={}", format_alpha(a)),
            None => self.policy.clone(),
        };
        format!("{label} & {:.3} & {:.1}", self.accuracy(), self.mean_steps())
    }
}

pub fn write_csv<W: Write>(mut out: W, records: &[EvalRecord]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Sort by policy name, then alpha.
pub fn sort_records(records: &mut [EvalRecord]) {
    records.sort_by(|a, b| {
        a.policy.cmp(&b.policy).then(
            a.alpha
                .unwrap_or(-1.0)
                .total_cmp(&b.alpha.unwrap_or(-1.0)),
        )
    });
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryLog {
    pub query_id: String,
    pub policy: String,
    pub decision: Strategy,
    pub steps: usize,
    pub correct: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn write_query_log<W: Write>(mut out: W, log: &[QueryLog]) -> std::io::Result<()> {
    for row in log {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub record: EvalRecord,
    pub log: Vec<QueryLog>,
}

enum Outcome {
    Done { decision: Strategy, steps: usize, correct: bool },
    Failed { decision: Strategy, reason: String },
}

fn run_one(
    policy: &Policy,
    example: &QaExample,
    answerer: &dyn Answerer,
    retriever: &dyn Retriever,
    engine: EngineConfig,
) -> Outcome {
    let (strategy, predicted) = policy.decide(&example.question);
    match execute(strategy, answerer, retriever, &example.id, &example.question, engine) {
        Ok(trace) => Outcome::Done {
            decision: predicted,
            steps: cost_of(&trace),
            correct: judge(&trace.answer, &example.gold_answers),
        },
        Err(e) => Outcome::Failed {
            decision: predicted,
            reason: e.to_string(),
        },
    }
}

/// Route, execute, judge, and cost-account every query in `qa`.
pub fn run_policy(
    policy: &Policy,
    qa: &QaSet,
    answerer: &dyn Answerer,
    retriever: &dyn Retriever,
    options: EvalOptions,
) -> Result<PolicyRun> {
    let outcomes: Vec<Outcome> = qa
        .examples()
        .par_iter()
        .map(|ex| run_one(policy, ex, answerer, retriever, options.engine))
        .collect();

    let name = policy.name();
    let mut record = EvalRecord {
        policy: name.clone(),
        alpha: policy.alpha(),
        overall: Tally::default(),
        per_origin: BTreeMap::new(),
        skipped: 0,
    };
    let mut log = Vec::with_capacity(outcomes.len());
    for (ex, outcome) in qa.examples().iter().zip(outcomes) {
        match outcome {
            Outcome::Done {
                decision,
                steps,
                correct,
            } => {
                record.overall.add(correct, steps);
                record
                    .per_origin
                    .entry(ex.origin)
                    .or_default()
                    .add(correct, steps);
                log.push(QueryLog {
                    query_id: ex.id.clone(),
                    policy: name.clone(),
                    decision,
                    steps,
                    correct,
                    error: None,
                });
            }
            Outcome::Failed { decision, reason } => match options.on_failure {
                FailureMode::Abort => {
                    return Err(Error::Transport(format!("{}: {reason}", ex.id)));
                }
                FailureMode::Skip => {
                    warn!("{name}: skipping {}: {reason}", ex.id);
                    record.skipped += 1;
                    log.push(QueryLog {
                        query_id: ex.id.clone(),
                        policy: name.clone(),
                        decision,
                        steps: 0,
                        correct: false,
                        error: Some(reason),
                    });
                }
            },
        }
    }
    Ok(PolicyRun { record, log })
}

/// One flare run per alpha, in ascending alpha order.
pub fn sweep_alpha(
    qa: &QaSet,
    coc: &ClassifierWeights,
    roc: &ClassifierWeights,
    grid: &[f64],
    answerer: &dyn Answerer,
    retriever: &dyn Retriever,
    options: EvalOptions,
) -> Result<Vec<PolicyRun>> {
    for &a in grid {
        check_alpha(a)?;
    }
    let mut alphas = grid.to_vec();
    alphas.sort_by(f64::total_cmp);
    alphas
        .into_iter()
        .map(|alpha| {
            let classifier = InterpolatedClassifier::new(coc.clone(), roc.clone(), alpha)?;
            run_policy(&Policy::Flare(classifier), qa, answerer, retriever, options)
        })
        .collect()
}
