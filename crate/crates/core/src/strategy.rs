use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Retrieval strategy. Variants are declared in classifier class order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    NoRetrieval,
    SingleStep,
    MultiStep,
    /// Only present when the four-class label space is enabled. Never executed.
    Unanswerable,
}

impl Strategy {
    /// The three executable strategies, cheapest first.
    pub const EXECUTABLE: [Strategy; 3] = [
        Strategy::NoRetrieval,
        Strategy::SingleStep,
        Strategy::MultiStep,
    ];

    /// Relative retrieval cost: 0 < 1 < 2. `None` for `Unanswerable`.
    pub fn cost_rank(self) -> Option<u8> {
        match self {
            Strategy::NoRetrieval => Some(0),
            Strategy::SingleStep => Some(1),
            Strategy::MultiStep => Some(2),
            Strategy::Unanswerable => None,
        }
    }

    /// Class list for a classifier, with or without the unanswerable class.
    pub fn classes(with_unanswerable: bool) -> Vec<Strategy> {
        let mut c = Self::EXECUTABLE.to_vec();
        if with_unanswerable {
            c.push(Strategy::Unanswerable);
        }
        c
    }

    /// What actually runs when this class is predicted: unanswerable falls
    /// back to the cheapest strategy.
    pub fn executed(self) -> Strategy {
        match self {
            Strategy::Unanswerable => Strategy::NoRetrieval,
            s => s,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::NoRetrieval => "no_retrieval",
            Strategy::SingleStep => "single_step",
            Strategy::MultiStep => "multi_step",
            Strategy::Unanswerable => "unanswerable",
        }
    }

    /// Short name used in policy strings (`static:no`).
    pub fn short_name(self) -> &'static str {
        match self {
            Strategy::NoRetrieval => "no",
            Strategy::SingleStep => "single",
            Strategy::MultiStep => "multi",
            Strategy::Unanswerable => "unanswerable",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "no_retrieval" | "no" => Ok(Strategy::NoRetrieval),
            "single_step" | "single" => Ok(Strategy::SingleStep),
            "multi_step" | "multi" => Ok(Strategy::MultiStep),
            "unanswerable" => Ok(Strategy::Unanswerable),
            other => Err(Error::validation(format!("unknown strategy {other:?}"))),
        }
    }
}
