//! Strategy execution against a pluggable answerer.
//!
//! The answerer sees one request shape for every strategy: the question, the
//! passages gathered so far, and the mode it is being called in. It replies
//! either with a final answer or, in multi-step mode, with the next query to
//! retrieve for. The trace records every retrieval call; its length is the
//! cost of answering.

use serde::Serialize;
use thiserror::Error;

use crate::retriever::{Passage, Retriever, DEFAULT_TOP_K};
use crate::strategy::Strategy;

pub const DEFAULT_MAX_STEPS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerMode {
    /// Answer from parametric knowledge only.
    Direct,
    /// Answer conditioned on one round of retrieved passages.
    SingleStep,
    /// Iterative mode; `step` counts retrieval calls made so far minus one.
    MultiStep { step: usize },
    /// The step budget is spent: produce the best answer from what was gathered.
    Finalize,
}

#[derive(Debug, Clone, Copy)]
pub struct AnswerRequest<'a> {
    pub query_id: &'a str,
    pub question: &'a str,
    pub passages: &'a [Passage],
    /// Intermediate queries emitted so far in multi-step mode.
    pub reasoning: &'a [String],
    pub mode: AnswerMode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Final(String),
    NextQuery(String),
}

impl Reply {
    pub fn into_text(self) -> String {
        match self {
            Reply::Final(s) | Reply::NextQuery(s) => s,
        }
    }
}

/// Failure to obtain a reply. Never interpreted as a wrong answer.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AnswerError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("no oracle behavior for query {0}")]
    MissingBehavior(String),
    #[error("malformed answerer response: {0}")]
    Protocol(String),
}

pub trait Answerer: Send + Sync {
    fn respond(&self, request: &AnswerRequest<'_>) -> Result<Reply, AnswerError>;
}

impl<T: Answerer + ?Sized> Answerer for &T {
    fn respond(&self, request: &AnswerRequest<'_>) -> Result<Reply, AnswerError> {
        (**self).respond(request)
    }
}

impl<T: Answerer + ?Sized> Answerer for Box<T> {
    fn respond(&self, request: &AnswerRequest<'_>) -> Result<Reply, AnswerError> {
        (**self).respond(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalStep {
    pub query: String,
    pub doc_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnswerTrace {
    pub query_id: String,
    pub strategy: Strategy,
    pub answer: String,
    pub steps: Vec<RetrievalStep>,
}

impl AnswerTrace {
    pub fn steps_used(&self) -> usize {
        self.steps.len()
    }
}

/// An answerer failure, with whatever trace had been built before it.
#[derive(Debug, Clone, Error)]
#[error("{source}")]
pub struct ExecutionError {
    pub partial: Option<AnswerTrace>,
    #[source]
    pub source: AnswerError,
}

impl ExecutionError {
    fn bare(source: AnswerError) -> Self {
        ExecutionError {
            partial: None,
            source,
        }
    }
}

impl From<ExecutionError> for crate::error::Error {
    fn from(e: ExecutionError) -> Self {
        crate::error::Error::Transport(e.source.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    pub k: usize,
    pub max_steps: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            k: DEFAULT_TOP_K,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

pub fn answer_no_retrieval(
    answerer: &dyn Answerer,
    query_id: &str,
    question: &str,
) -> Result<AnswerTrace, ExecutionError> {
    let reply = answerer
        .respond(&AnswerRequest {
            query_id,
            question,
            passages: &[],
            reasoning: &[],
            mode: AnswerMode::Direct,
        })
        .map_err(ExecutionError::bare)?;
    Ok(AnswerTrace {
        query_id: query_id.to_string(),
        strategy: Strategy::NoRetrieval,
        answer: reply.into_text(),
        steps: Vec::new(),
    })
}

pub fn answer_single_step(
    answerer: &dyn Answerer,
    retriever: &dyn Retriever,
    query_id: &str,
    question: &str,
    k: usize,
) -> Result<AnswerTrace, ExecutionError> {
    let passages = retriever.retrieve(question, k);
    let step = RetrievalStep {
        query: question.to_string(),
        doc_ids: passages.iter().map(|p| p.doc_id.clone()).collect(),
    };
    let reply = answerer.respond(&AnswerRequest {
        query_id,
        question,
        passages: &passages,
        reasoning: &[],
        mode: AnswerMode::SingleStep,
    });
    let mut trace = AnswerTrace {
        query_id: query_id.to_string(),
        strategy: Strategy::SingleStep,
        answer: String::new(),
        steps: vec![step],
    };
    match reply {
        Ok(r) => {
            trace.answer = r.into_text();
            Ok(trace)
        }
        Err(source) => Err(ExecutionError {
            partial: Some(trace),
            source,
        }),
    }
}

/// Interleave retrieval and reasoning until the answerer commits to a final
/// answer or `max_steps` retrieval calls have been made.
pub fn answer_multi_step(
    answerer: &dyn Answerer,
    retriever: &dyn Retriever,
    query_id: &str,
    question: &str,
    k: usize,
    max_steps: usize,
) -> Result<AnswerTrace, ExecutionError> {
    let mut trace = AnswerTrace {
        query_id: query_id.to_string(),
        strategy: Strategy::MultiStep,
        answer: String::new(),
        steps: Vec::new(),
    };
    let mut context: Vec<Passage> = Vec::new();
    let mut reasoning: Vec<String> = Vec::new();
    let mut current = question.to_string();

    for step in 0..max_steps.max(1) {
        let passages = retriever.retrieve(&current, k);
        trace.steps.push(RetrievalStep {
            query: current.clone(),
            doc_ids: passages.iter().map(|p| p.doc_id.clone()).collect(),
        });
        for p in passages {
            if !context.iter().any(|c| c.doc_id == p.doc_id) {
                context.push(p);
            }
        }
        let reply = answerer.respond(&AnswerRequest {
            query_id,
            question,
            passages: &context,
            reasoning: &reasoning,
            mode: AnswerMode::MultiStep { step },
        });
        match reply {
            Ok(Reply::Final(answer)) => {
                trace.answer = answer;
                return Ok(trace);
            }
            Ok(Reply::NextQuery(next)) => {
                reasoning.push(next.clone());
                current = next;
            }
            Err(source) => {
                return Err(ExecutionError {
                    partial: Some(trace),
                    source,
                })
            }
        }
    }

    match answerer.respond(&AnswerRequest {
        query_id,
        question,
        passages: &context,
        reasoning: &reasoning,
        mode: AnswerMode::Finalize,
    }) {
        Ok(reply) => {
            trace.answer = reply.into_text();
            Ok(trace)
        }
        Err(source) => Err(ExecutionError {
            partial: Some(trace),
            source,
        }),
    }
}

/// Run `strategy` for one query. `Unanswerable` runs as no-retrieval.
pub fn execute(
    strategy: Strategy,
    answerer: &dyn Answerer,
    retriever: &dyn Retriever,
    query_id: &str,
    question: &str,
    config: EngineConfig,
) -> Result<AnswerTrace, ExecutionError> {
    match strategy.executed() {
        Strategy::NoRetrieval => answer_no_retrieval(answerer, query_id, question),
        Strategy::SingleStep => answer_single_step(answerer, retriever, query_id, question, config.k),
        Strategy::MultiStep => answer_multi_step(
            answerer,
            retriever,
            query_id,
            question,
            config.k,
            config.max_steps,
        ),
        Strategy::Unanswerable => unreachable!("executed() never yields Unanswerable"),
    }
}
