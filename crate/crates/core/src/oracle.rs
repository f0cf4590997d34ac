//! Deterministic mock answerer driven by a per-query behavior table.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::answer::{AnswerError, AnswerMode, AnswerRequest, Answerer, Reply};
use crate::corpus::{jsonl_lines, open, parse_line, QaSet};
use crate::error::{Error, Result};
use crate::evaluator::judge;
use crate::strategy::Strategy;

/// Scripted behavior for one query.
///
/// The canned answer for a strategy contains a gold answer exactly when that
/// strategy is in `correct_under`. In multi-step mode the script supplies the
/// follow-up queries in order; once it runs out the multi-step answer is
/// returned as final.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleBehavior {
    pub query_id: String,
    pub correct_under: BTreeSet<Strategy>,
    pub no_retrieval: String,
    pub single_step: String,
    pub multi_step: String,
    pub multi_step_script: Vec<String>,
}

impl OracleBehavior {
    pub fn answer_for(&self, strategy: Strategy) -> &str {
        match strategy.executed() {
            Strategy::NoRetrieval => &self.no_retrieval,
            Strategy::SingleStep => &self.single_step,
            _ => &self.multi_step,
        }
    }

    /// Check the correctness invariant against the gold answers.
    pub fn validate(&self, gold: &[String]) -> Result<()> {
        for s in Strategy::EXECUTABLE {
            let correct = judge(self.answer_for(s), gold);
            if correct != self.correct_under.contains(&s) {
                return Err(Error::validation(format!(
                    "{}: {} answer {} a gold answer but correct_under says otherwise",
                    self.query_id,
                    s,
                    if correct { "contains" } else { "lacks" }
                )));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CannedAnswers {
    no_retrieval: String,
    single_step: String,
    multi_step: String,
}

#[derive(Serialize, Deserialize)]
struct BehaviorRecord {
    query_id: String,
    correct_under: Vec<String>,
    answers: CannedAnswers,
    #[serde(default)]
    multi_step_script: Vec<String>,
}

impl BehaviorRecord {
    fn into_behavior(self) -> Result<OracleBehavior> {
        let mut correct_under = BTreeSet::new();
        for s in &self.correct_under {
            let strategy: Strategy = s.parse()?;
            if strategy.cost_rank().is_none() {
                return Err(Error::validation(format!(
                    "{}: correct_under may only name executable strategies",
                    self.query_id
                )));
            }
            correct_under.insert(strategy);
        }
        Ok(OracleBehavior {
            query_id: self.query_id,
            correct_under,
            no_retrieval: self.answers.no_retrieval,
            single_step: self.answers.single_step,
            multi_step: self.answers.multi_step,
            multi_step_script: self.multi_step_script,
        })
    }

    fn from_behavior(b: &OracleBehavior) -> Self {
        BehaviorRecord {
            query_id: b.query_id.clone(),
            correct_under: b
                .correct_under
                .iter()
                .map(|s| s.as_str().to_string())
                .collect(),
            answers: CannedAnswers {
                no_retrieval: b.no_retrieval.clone(),
                single_step: b.single_step.clone(),
                multi_step: b.multi_step.clone(),
            },
            multi_step_script: b.multi_step_script.clone(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockOracle {
    behaviors: HashMap<String, OracleBehavior>,
}

impl MockOracle {
    /// Build from behaviors, validating each against the QA set's gold answers.
    pub fn new(behaviors: Vec<OracleBehavior>, qa: &QaSet) -> Result<Self> {
        let mut map = HashMap::with_capacity(behaviors.len());
        for b in behaviors {
            let example = qa.get(&b.query_id).ok_or_else(|| {
                Error::validation(format!("{}: no such query in the QA set", b.query_id))
            })?;
            b.validate(&example.gold_answers)?;
            if map.contains_key(&b.query_id) {
                return Err(Error::validation(format!(
                    "{}: duplicate oracle behavior",
                    b.query_id
                )));
            }
            map.insert(b.query_id.clone(), b);
        }
        Ok(MockOracle { behaviors: map })
    }

    pub fn read_jsonl<R: BufRead>(reader: R, qa: &QaSet) -> Result<Self> {
        let mut behaviors = Vec::new();
        for (line_no, line) in jsonl_lines(reader) {
            let line = line.map_err(|e| Error::validation(format!("line {line_no}: {e}")))?;
            let record: BehaviorRecord = parse_line(line_no, &line)?;
            behaviors.push(record.into_behavior()?);
        }
        Self::new(behaviors, qa)
    }

    /// Write behaviors sorted by query id.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let sorted: BTreeMap<_, _> = self.behaviors.iter().collect();
        for b in sorted.values() {
            serde_json::to_writer(&mut out, &BehaviorRecord::from_behavior(b))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn behavior(&self, query_id: &str) -> Option<&OracleBehavior> {
        self.behaviors.get(query_id)
    }

    pub fn len(&self) -> usize {
        self.behaviors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.behaviors.is_empty()
    }
}

/// Load an oracle JSONL file and validate it against `qa`.
pub fn load_oracle(path: impl AsRef<Path>, qa: &QaSet) -> Result<MockOracle> {
    MockOracle::read_jsonl(open(path.as_ref())?, qa)
}

impl Answerer for MockOracle {
    fn respond(&self, request: &AnswerRequest<'_>) -> Result<Reply, AnswerError> {
        let b = self
            .behavior(request.query_id)
            .ok_or_else(|| AnswerError::MissingBehavior(request.query_id.to_string()))?;
        Ok(match request.mode {
            AnswerMode::Direct => Reply::Final(b.no_retrieval.clone()),
            AnswerMode::SingleStep => Reply::Final(b.single_step.clone()),
            AnswerMode::MultiStep { step } => match b.multi_step_script.get(step) {
                Some(next) => Reply::NextQuery(next.clone()),
                None => Reply::Final(b.multi_step.clone()),
            },
            AnswerMode::Finalize => Reply::Final(b.multi_step.clone()),
        })
    }
}
