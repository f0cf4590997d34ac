//! Deterministic synthetic benchmark: corpus, questions, and oracle
//! behaviors with a controlled mix of query complexity.
//!
//! Every question has a required strategy: the cheapest one under which the
//! oracle answers it. Single-hop questions need either no retrieval or one
//! retrieval step and draw their wording from eight templates with
//! requirement-dependent frequencies, so each template is only a noisy hint of
//! the requirement (and some hints are weaker than others). Multi-hop
//! questions need the iterative loop and use their own templates. The wording
//! noise is what makes the cost-trained router imperfect while the
//! origin-trained router stays reliable.

use std::collections::{BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Document, Origin, QaExample, QaSet};
use crate::error::Result;
use crate::evaluator::judge;
use crate::oracle::{MockOracle, OracleBehavior};
use crate::strategy::Strategy;

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "tu", "sa", "vor", "el", "dan", "ri", "po", "ne", "sha", "qui",
    "bar", "tel", "go", "zu", "fen", "ya", "mor", "ti", "cas", "wen",
];

/// Single-hop templates with their frequency among questions answerable
/// without retrieval and among questions that need one lookup.
const SINGLE_HOP_TEMPLATES: &[(&str, f64, f64)] = &[
    ("What is the capital of {e}?", 0.35, 0.02),
    ("What language is spoken in {e}?", 0.25, 0.05),
    ("What currency is used in {e}?", 0.15, 0.08),
    ("On which continent is {e}?", 0.05, 0.10),
    ("Who founded the company {e}?", 0.05, 0.20),
    ("In which year was the museum {e} established?", 0.05, 0.20),
    ("Who designed the bridge {e}?", 0.05, 0.175),
    ("Who was the first mayor of the town {e}?", 0.05, 0.175),
];

const MULTI_HOP_TEMPLATES: &[&str] = &[
    "Where was the founder of {e} born, given the founder also led {f}?",
    "Who is the spouse of the director of {e} and the producer of {f}?",
    "Which was established earlier, {e} or the institution that acquired {f}?",
    "What nationality is the architect who designed both {e} and {f}?",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_queries: usize,
    pub seed: u64,
    /// Share answerable without retrieval.
    pub no_retrieval_share: f64,
    /// Share needing exactly one retrieval step.
    pub single_step_share: f64,
    /// Share no strategy answers; taken out of the multi-step share.
    pub unanswerable_share: f64,
    pub id_prefix: String,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_queries: 1000,
            seed: 42,
            no_retrieval_share: 0.3,
            single_step_share: 0.4,
            unanswerable_share: 0.0,
            id_prefix: "syn".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub corpus: Corpus,
    pub qa: QaSet,
    pub behaviors: Vec<OracleBehavior>,
    /// Required (cheapest correct) strategy per question, `None` if unanswerable.
    pub required: Vec<Option<Strategy>>,
}

impl SyntheticBenchmark {
    pub fn oracle(&self) -> Result<MockOracle> {
        MockOracle::new(self.behaviors.clone(), &self.qa)
    }

    /// First `n` questions and the rest.
    pub fn split(&self, n: usize) -> Result<(QaSet, QaSet)> {
        let n = n.min(self.qa.len());
        let (a, b) = self.qa.examples().split_at(n);
        Ok((
            QaSet::from_examples(a.to_vec())?,
            QaSet::from_examples(b.to_vec())?,
        ))
    }
}

struct Names {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl Names {
    fn fresh(&mut self) -> String {
        loop {
            let parts = self.rng.random_range(2..=4);
            let mut name = String::new();
            for _ in 0..parts {
                name.push_str(SYLLABLES.choose(&mut self.rng).unwrap());
            }
            let mut chars = name.chars();
            let name: String = chars
                .next()
                .map(|c| c.to_ascii_uppercase())
                .into_iter()
                .chain(chars)
                .collect();
            if self.used.insert(name.clone()) {
                return name;
            }
        }
    }

    /// A fresh name whose normalized form neither contains nor is contained in `gold`.
    fn distractor(&mut self, gold: &str) -> String {
        loop {
            let name = self.fresh();
            let (a, b) = (name.to_lowercase(), gold.to_lowercase());
            if !a.contains(&b) && !b.contains(&a) {
                return name;
            }
        }
    }
}

fn shares(config: &SyntheticConfig) -> Vec<Option<Strategy>> {
    let n = config.num_queries;
    let count = |share: f64| (share * n as f64).round() as usize;
    let no = count(config.no_retrieval_share).min(n);
    let single = count(config.single_step_share).min(n - no);
    let unanswerable = count(config.unanswerable_share).min(n - no - single);
    let multi = n - no - single - unanswerable;
    let mut out = Vec::with_capacity(n);
    out.extend(std::iter::repeat_n(Some(Strategy::NoRetrieval), no));
    out.extend(std::iter::repeat_n(Some(Strategy::SingleStep), single));
    out.extend(std::iter::repeat_n(Some(Strategy::MultiStep), multi));
    out.extend(std::iter::repeat_n(None, unanswerable));
    out
}

pub fn generate(config: &SyntheticConfig) -> SyntheticBenchmark {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut names = Names {
        rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15),
        used: HashSet::new(),
    };
    let mut required = shares(config);
    required.shuffle(&mut rng);

    let mut docs = Vec::new();
    let mut examples = Vec::new();
    let mut behaviors = Vec::new();
    let width = config.num_queries.max(1).to_string().len().max(4);

    for (i, req) in required.iter().enumerate() {
        let id = format!("{}{:0width$}", config.id_prefix, i + 1);
        let subject = names.fresh();
        let gold = names.fresh();
        // Unanswerable questions are worded as multi-hop ones.
        let multi_hop = matches!(req, Some(Strategy::MultiStep) | None);

        let (question, origin, hops) = if multi_hop {
            let other = names.fresh();
            let t = MULTI_HOP_TEMPLATES.choose(&mut rng).unwrap();
            let q = t.replace("{e}", &subject).replace("{f}", &other);
            docs.push(Document {
                id: format!("doc-{id}-b"),
                title: other.clone(),
                text: format!("{other} is linked to {subject} through a shared founder."),
            });
            (q, Origin::MultiHop, rng.random_range(2..=4))
        } else {
            let direct = *req == Some(Strategy::NoRetrieval);
            let (t, _, _) = SINGLE_HOP_TEMPLATES
                .choose_weighted(&mut rng, |&(_, no, lookup)| if direct { no } else { lookup })
                .expect("template weights are positive");
            let q = t.replace("{e}", &subject);
            (q, Origin::SingleHop, rng.random_range(1..=2))
        };

        docs.push(Document {
            id: format!("doc-{id}"),
            title: subject.clone(),
            text: format!("{subject} is documented in the records. The answer concerning {subject} is {gold}."),
        });

        let mut script = Vec::with_capacity(hops);
        for h in 0..hops {
            let bridge = names.fresh();
            script.push(format!("{subject} connects to {bridge} at hop {}.", h + 1));
            docs.push(Document {
                id: format!("doc-{id}-h{}", h + 1),
                title: bridge.clone(),
                text: format!("{bridge} is an intermediate fact about {subject}."),
            });
        }

        let correct_under: BTreeSet<Strategy> = match req {
            None => BTreeSet::new(),
            Some(r) => Strategy::EXECUTABLE
                .into_iter()
                .filter(|s| s.cost_rank() >= r.cost_rank())
                .collect(),
        };
        let mut answer = |s: Strategy| {
            if correct_under.contains(&s) {
                format!("The answer is {gold}.")
            } else {
                format!("I believe it is {}.", names.distractor(&gold))
            }
        };
        let behavior = OracleBehavior {
            query_id: id.clone(),
            no_retrieval: answer(Strategy::NoRetrieval),
            single_step: answer(Strategy::SingleStep),
            multi_step: answer(Strategy::MultiStep),
            correct_under,
            multi_step_script: script,
        };
        debug_assert!(behavior.validate(std::slice::from_ref(&gold)).is_ok());

        examples.push(QaExample {
            id,
            question,
            gold_answers: vec![gold],
            origin,
            dataset: match origin {
                Origin::SingleHop => "synthetic_single".to_string(),
                Origin::MultiHop => "synthetic_multi".to_string(),
            },
        });
        behaviors.push(behavior);
    }

    SyntheticBenchmark {
        corpus: Corpus::from_documents(docs).expect("generated ids are unique"),
        qa: QaSet::from_examples(examples).expect("generated ids are unique"),
        behaviors,
        required,
    }
}

/// QA set and oracle where each question's `correct_under` is an independent
/// uniformly random subset of the three strategies (including the empty set).
pub fn random_oracle_set(num_queries: usize, seed: u64) -> SyntheticBenchmark {
    let mut bench = generate(&SyntheticConfig {
        num_queries,
        seed,
        ..SyntheticConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut names = Names {
        rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(2)),
        used: bench.qa.iter().flat_map(|e| e.gold_answers.clone()).collect(),
    };
    for (b, ex) in bench.behaviors.iter_mut().zip(bench.qa.examples()) {
        let gold = &ex.gold_answers[0];
        let mask: u8 = rng.random_range(0..8);
        b.correct_under = Strategy::EXECUTABLE
            .into_iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, s)| s)
            .collect();
        let mut answer = |s: Strategy| {
            if b.correct_under.contains(&s) {
                format!("It is {gold}.")
            } else {
                format!("Perhaps {}.", names.distractor(gold))
            }
        };
        b.no_retrieval = answer(Strategy::NoRetrieval);
        b.single_step = answer(Strategy::SingleStep);
        b.multi_step = answer(Strategy::MultiStep);
        debug_assert!(judge(&b.no_retrieval, &ex.gold_answers) == b.correct_under.contains(&Strategy::NoRetrieval));
    }
    bench.required = bench
        .behaviors
        .iter()
        .map(|b| b.correct_under.iter().next().copied())
        .collect();
    bench
}
