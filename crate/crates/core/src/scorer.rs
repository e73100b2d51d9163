//! Re-ranker scores for a candidate list.
//!
//! The neural cross-encoder lives outside this crate: scores either come
//! from a precomputed TSV table or from a relevance-aware oracle used for
//! synthetic experiments.

use std::collections::HashMap;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Qrels;
use crate::index::CandidateSet;
use crate::vecmath::min_max_normalize;

/// Scores the candidates of one query. Output is aligned with
/// `candidates.entries` and every value is finite.
pub trait RerankerScorer: Send + Sync {
    fn score(&self, candidates: &CandidateSet) -> Result<Vec<f64>>;
}

/// `(query_id, doc_id) -> score`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    scores: HashMap<String, HashMap<String, f64>>,
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a score; a second score for the same pair is an error.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, score: f64) -> Result<()> {
        let docs = self.scores.entry(query_id.to_string()).or_default();
        if docs.insert(doc_id.to_string(), score).is_some() {
            return Err(Error::InvalidConfig(format!(
                "duplicate score for ({query_id}, {doc_id})"
            )));
        }
        Ok(())
    }

    pub fn get(&self, query_id: &str, doc_id: &str) -> Option<f64> {
        self.scores.get(query_id)?.get(doc_id).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parses `query_id<TAB>doc_id<TAB>score` lines.
    pub fn from_tsv<R: BufRead>(input: R) -> Result<Self> {
        let mut table = Self::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [query_id, doc_id, score] = fields[..] else {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            };
            let score: f64 = score.trim().parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("invalid score {score:?}"),
            })?;
            if !score.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "score is not finite".into(),
                });
            }
            table.insert(query_id, doc_id, score).map_err(|e| Error::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
        }
        Ok(table)
    }
}

/// What a [`FileScorer`] does when a pair is absent from its table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    Error,
    RetrieverScore,
}

impl FromStr for MissingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error" => Ok(Self::Error),
            "retriever_score" | "retriever-score" => Ok(Self::RetrieverScore),
            other => Err(Error::InvalidConfig(format!("unknown missing policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FileScorer {
    table: ScoreTable,
    policy: MissingPolicy,
}

impl FileScorer {
    pub fn new(table: ScoreTable, policy: MissingPolicy) -> Self {
        Self { table, policy }
    }
}

impl RerankerScorer for FileScorer {
    fn score(&self, candidates: &CandidateSet) -> Result<Vec<f64>> {
        candidates
            .entries
            .iter()
            .map(|c| match (self.table.get(&candidates.query_id, &c.doc_id), self.policy) {
                (Some(s), _) => Ok(s),
                (None, MissingPolicy::RetrieverScore) => Ok(c.score),
                (None, MissingPolicy::Error) => Err(Error::MissingScore {
                    query_id: candidates.query_id.clone(),
                    doc_id: c.doc_id.clone(),
                }),
            })
            .collect()
    }
}

/// Synthetic teacher: min-max normalized retriever score plus
/// `margin * grade`. With a margin above 1 every judged-relevant candidate
/// outranks every unjudged one, while non-relevant candidates keep the
/// retriever's relative order.
#[derive(Debug, Clone)]
pub struct OracleScorer {
    qrels: Qrels,
    margin: f64,
}

impl OracleScorer {
    pub fn new(qrels: Qrels, margin: f64) -> Result<Self> {
        if !(margin >= 0.0 && margin.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "oracle margin must be a non-negative number, got {margin}"
            )));
        }
        Ok(Self { qrels, margin })
    }
}

impl RerankerScorer for OracleScorer {
    fn score(&self, candidates: &CandidateSet) -> Result<Vec<f64>> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let base = min_max_normalize(&candidates.scores());
        Ok(candidates
            .entries
            .iter()
            .zip(base)
            .map(|(c, b)| {
                let grade = self.qrels.grade(&candidates.query_id, &c.doc_id);
                b + self.margin * f64::from(grade)
            })
            .collect())
    }
}
