//! Training labels for the routing classifiers.
//!
//! Cost labels come from running every strategy and keeping the cheapest one
//! that answers correctly; queries no strategy answers are excluded (or marked
//! unanswerable in four-class mode). Reliability labels depend only on where
//! the question came from.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::answer::{execute, AnswerTrace, Answerer, EngineConfig, ExecutionError};
use crate::classifier::{featurize, FeatureConfig, TrainingExample};
use crate::corpus::{jsonl_lines, parse_line, Origin, QaExample, QaSet};
use crate::error::{Error, Result};
use crate::evaluator::judge;
use crate::retriever::Retriever;
use crate::strategy::Strategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Cost,
    Reliability,
    Combined,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Cost => "cost",
            LabelSource::Reliability => "reliability",
            LabelSource::Combined => "combined",
        }
    }
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cost" => Ok(LabelSource::Cost),
            "reliability" => Ok(LabelSource::Reliability),
            "combined" => Ok(LabelSource::Combined),
            other => Err(Error::invalid(format!("unknown label source {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub query_id: String,
    pub label: Strategy,
    pub source: LabelSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub query_id: String,
    pub reason: String,
}

/// Which strategies answered a query correctly, with the trace of each run.
#[derive(Debug, Clone)]
pub struct StrategyEvaluation {
    pub query_id: String,
    pub correct: BTreeSet<Strategy>,
    pub traces: Vec<AnswerTrace>,
}

pub fn evaluate_strategies(
    answerer: &dyn Answerer,
    retriever: &dyn Retriever,
    example: &QaExample,
    engine: EngineConfig,
) -> Result<StrategyEvaluation, ExecutionError> {
    let mut correct = BTreeSet::new();
    let mut traces = Vec::with_capacity(3);
    for s in Strategy::EXECUTABLE {
        let trace = execute(s, answerer, retriever, &example.id, &example.question, engine)?;
        if judge(&trace.answer, &example.gold_answers) {
            correct.insert(s);
        }
        traces.push(trace);
    }
    Ok(StrategyEvaluation {
        query_id: example.id.clone(),
        correct,
        traces,
    })
}

/// Cheapest correct strategy. An empty set gives `None` (exclude), or
/// `Unanswerable` when the four-class label space is on.
pub fn label_cost(correct: &BTreeSet<Strategy>, four_class: bool) -> Option<Strategy> {
    correct
        .iter()
        .copied()
        .filter(|s| s.cost_rank().is_some())
        .min_by_key(|s| s.cost_rank())
        .or(if four_class {
            Some(Strategy::Unanswerable)
        } else {
            None
        })
}

pub fn label_reliability(example: &QaExample) -> Strategy {
    match example.origin {
        Origin::SingleHop => Strategy::SingleStep,
        Origin::MultiHop => Strategy::MultiStep,
    }
}

#[derive(Debug, Clone, Default)]
pub struct CostLabeling {
    pub labels: Vec<LabeledExample>,
    pub exclusions: Vec<Exclusion>,
}

pub const REASON_NO_CORRECT_STRATEGY: &str = "no strategy produced a correct answer";

/// Evaluate every query under all three strategies and label by cost.
/// Output is ordered by query id.
pub fn label_cost_dataset(
    qa: &QaSet,
    answerer: &dyn Answerer,
    retriever: &dyn Retriever,
    engine: EngineConfig,
    four_class: bool,
) -> CostLabeling {
    let evaluated: Vec<(String, Result<BTreeSet<Strategy>, String>)> = qa
        .examples()
        .par_iter()
        .map(|ex| {
            let result = evaluate_strategies(answerer, retriever, ex, engine)
                .map(|e| e.correct)
                .map_err(|e| format!("unevaluated: {e}"));
            (ex.id.clone(), result)
        })
        .collect();

    let sorted: BTreeMap<String, _> = evaluated.into_iter().collect();
    let mut out = CostLabeling::default();
    for (query_id, result) in sorted {
        match result {
            Ok(correct) => match label_cost(&correct, four_class) {
                Some(label) => out.labels.push(LabeledExample {
                    query_id,
                    label,
                    source: LabelSource::Cost,
                }),
                None => out.exclusions.push(Exclusion {
                    query_id,
                    reason: REASON_NO_CORRECT_STRATEGY.to_string(),
                }),
            },
            Err(reason) => {
                info!("excluding {query_id}: {reason}");
                out.exclusions.push(Exclusion { query_id, reason });
            }
        }
    }
    out
}

/// Reliability labels in input order.
pub fn label_reliability_dataset(qa: &QaSet) -> Vec<LabeledExample> {
    qa.iter()
        .map(|ex| LabeledExample {
            query_id: ex.id.clone(),
            label: label_reliability(ex),
            source: LabelSource::Reliability,
        })
        .collect()
}

/// Union of both label sets, ordered by query id. Where a query carries both,
/// the cost label wins.
pub fn label_combined(
    cost: &[LabeledExample],
    reliability: &[LabeledExample],
) -> Vec<LabeledExample> {
    let mut merged: BTreeMap<&str, Strategy> = BTreeMap::new();
    for l in reliability {
        merged.insert(&l.query_id, l.label);
    }
    for l in cost {
        merged.insert(&l.query_id, l.label);
    }
    merged
        .into_iter()
        .map(|(id, label)| LabeledExample {
            query_id: id.to_string(),
            label,
            source: LabelSource::Combined,
        })
        .collect()
}

fn write_jsonl<W: Write, T: Serialize>(mut out: W, rows: &[T]) -> std::io::Result<()> {
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_labels<W: Write>(out: W, labels: &[LabeledExample]) -> std::io::Result<()> {
    write_jsonl(out, labels)
}

pub fn write_exclusions<W: Write>(out: W, exclusions: &[Exclusion]) -> std::io::Result<()> {
    write_jsonl(out, exclusions)
}

pub fn read_labels<R: BufRead>(reader: R) -> Result<Vec<LabeledExample>> {
    let mut labels = Vec::new();
    let mut seen = BTreeSet::new();
    for (line_no, line) in jsonl_lines(reader) {
        let line = line.map_err(|e| Error::validation(format!("line {line_no}: {e}")))?;
        let l: LabeledExample = parse_line(line_no, &line)?;
        if !seen.insert(l.query_id.clone()) {
            return Err(Error::validation(format!(
                "duplicate id {} at line {line_no}",
                l.query_id
            )));
        }
        labels.push(l);
    }
    Ok(labels)
}

/// Pair each label with its question's features.
pub fn training_examples(
    labels: &[LabeledExample],
    qa: &QaSet,
    config: &FeatureConfig,
) -> Result<Vec<TrainingExample>> {
    labels
        .iter()
        .map(|l| {
            let ex = qa.get(&l.query_id).ok_or_else(|| {
                Error::validation(format!("{}: label refers to unknown query", l.query_id))
            })?;
            Ok(TrainingExample {
                features: featurize(config, &ex.question),
                label: l.label,
            })
        })
        .collect()
}
