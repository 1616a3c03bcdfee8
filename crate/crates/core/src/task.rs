use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The six task families a training or evaluation dataset can belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Clustering,
    PairClassification,
    Reranking,
    Retrieval,
    Sts,
}

impl Task {
    /// Report column order.
    pub const ALL: [Task; 6] = [
        Task::Classification,
        Task::Clustering,
        Task::PairClassification,
        Task::Reranking,
        Task::Retrieval,
        Task::Sts,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Classification => "classification",
            Task::Clustering => "clustering",
            Task::PairClassification => "pair_classification",
            Task::Reranking => "reranking",
            Task::Retrieval => "retrieval",
            Task::Sts => "sts",
        }
    }

    /// Short column header used in report tables.
    pub fn column(self) -> &'static str {
        match self {
            Task::Classification => "Class.",
            Task::Clustering => "Cluster.",
            Task::PairClassification => "Pair.",
            Task::Reranking => "Rerank.",
            Task::Retrieval => "Retr.",
            Task::Sts => "STS",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown task `{s}`"))
    }
}
