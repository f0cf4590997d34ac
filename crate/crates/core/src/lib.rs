//! Adaptive retrieval routing with a user-controlled cost/accuracy knob.
//!
//! Two linear query classifiers are trained over hashed n-gram features: one
//! on cost labels (the cheapest strategy that answers a training query
//! correctly) and one on reliability labels (single-hop questions get one
//! retrieval step, multi-hop questions get the iterative loop). At query time
//! their weights are blended, `(1 - alpha) * cost + alpha * reliability`, and
//! the blended classifier picks between no retrieval, single-step retrieval,
//! and multi-step retrieval.

pub mod answer;
pub mod classifier;
pub mod corpus;
pub mod error;
pub mod evaluator;
pub mod http;
pub mod labeler;
pub mod oracle;
pub mod retriever;
pub mod strategy;
pub mod synthetic;

pub use answer::{AnswerTrace, Answerer, EngineConfig};
pub use classifier::{ClassifierWeights, FeatureConfig, InterpolatedClassifier, Router};
pub use corpus::{Corpus, Document, Origin, QaExample, QaSet};
pub use error::{Error, Result};
pub use retriever::{Bm25Retriever, InvertedIndex, Retriever};
pub use strategy::Strategy;
