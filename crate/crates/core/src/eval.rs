//! TREC-style evaluation: qrels and run files, Recall@K, nDCG@K, MRR@K,
//! and a paired t-test between two runs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::index::CandidateSet;

/// Graded relevance judgments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    judgments: BTreeMap<String, HashMap<String, u32>>,
}

impl Qrels {
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) {
        self.judgments
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade);
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|d| d.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn query(&self, query_id: &str) -> Option<&HashMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    /// Documents with grade ≥ 1, sorted by id.
    pub fn relevant(&self, query_id: &str) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .judgments
            .get(query_id)
            .into_iter()
            .flatten()
            .filter(|(_, g)| **g > 0)
            .map(|(d, _)| d.as_str())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    /// Parses whitespace-separated `query_id iteration doc_id grade` lines.
    pub fn parse<R: BufRead>(input: R) -> Result<Self> {
        let mut qrels = Self::default();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let [query_id, _iteration, doc_id, grade] = fields[..] else {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: format!("qrels line needs 4 fields, found {}", fields.len()),
                });
            };
            let grade: i64 = grade.parse().map_err(|_| Error::Parse {
                line: n + 1,
                msg: format!("invalid relevance grade {grade:?}"),
            })?;
            // Negative grades mark judged non-relevant documents.
            qrels.insert(query_id, doc_id, grade.max(0) as u32);
        }
        Ok(qrels)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for (q, docs) in &self.judgments {
            let mut docs: Vec<_> = docs.iter().collect();
            docs.sort_unstable();
            for (d, g) in docs {
                writeln!(out, "{q} 0 {d} {g}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedDoc {
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
}

/// A ranked list per query, ordered by the explicit rank column.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    pub queries: BTreeMap<String, Vec<RankedDoc>>,
}

impl Run {
    pub fn from_candidates<'a, I>(sets: I) -> Self
    where
        I: IntoIterator<Item = &'a CandidateSet>,
    {
        let mut run = Self::default();
        for set in sets {
            run.queries.insert(
                set.query_id.clone(),
                set.entries
                    .iter()
                    .enumerate()
                    .map(|(i, c)| RankedDoc {
                        doc_id: c.doc_id.clone(),
                        rank: i + 1,
                        score: c.score,
                    })
                    .collect(),
            );
        }
        run
    }

    pub fn ranked_ids(&self, query_id: &str) -> Vec<&str> {
        self.queries
            .get(query_id)
            .into_iter()
            .flatten()
            .map(|d| d.doc_id.as_str())
            .collect()
    }

    /// Parses `query_id Q0 doc_id rank score tag` lines. Ranks must be
    /// unique per query and scores must not increase with rank.
    pub fn parse<R: BufRead>(input: R) -> Result<Self> {
        let mut queries: BTreeMap<String, Vec<(RankedDoc, usize)>> = BTreeMap::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = n + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let [query_id, _q0, doc_id, rank, score, _tag] = fields[..] else {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("run line needs 6 fields, found {}", fields.len()),
                });
            };
            let rank: usize = rank.parse().ok().filter(|r| *r >= 1).ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("invalid rank {rank:?}"),
            })?;
            let score: f64 = score.parse().ok().filter(|s: &f64| s.is_finite()).ok_or_else(|| {
                Error::Parse {
                    line: lineno,
                    msg: format!("invalid score {score:?}"),
                }
            })?;
            queries.entry(query_id.to_string()).or_default().push((
                RankedDoc {
                    doc_id: doc_id.to_string(),
                    rank,
                    score,
                },
                lineno,
            ));
        }
        let mut run = Self::default();
        for (query_id, mut docs) in queries {
            docs.sort_by_key(|(d, _)| d.rank);
            let mut seen = HashSet::new();
            for (i, (doc, line)) in docs.iter().enumerate() {
                if !seen.insert(doc.doc_id.as_str()) {
                    return Err(Error::Parse {
                        line: *line,
                        msg: format!("document {:?} listed twice for query {query_id:?}", doc.doc_id),
                    });
                }
                if i > 0 {
                    let (prev, _) = &docs[i - 1];
                    if prev.rank == doc.rank {
                        return Err(Error::Parse {
                            line: *line,
                            msg: format!("rank {} repeated for query {query_id:?}", doc.rank),
                        });
                    }
                    if doc.score > prev.score {
                        return Err(Error::Parse {
                            line: *line,
                            msg: format!(
                                "score {} at rank {} exceeds score {} at rank {}",
                                doc.score, doc.rank, prev.score, prev.rank
                            ),
                        });
                    }
                }
            }
            run.queries
                .insert(query_id, docs.into_iter().map(|(d, _)| d).collect());
        }
        Ok(run)
    }
}

/// Writes one ranked list in TREC run format. Ranks restart at 1 and
/// scores print with six decimals.
pub fn write_run_lines<W: Write>(out: &mut W, set: &CandidateSet, tag: &str) -> Result<()> {
    for (i, c) in set.entries.iter().enumerate() {
        writeln!(
            out,
            "{} Q0 {} {} {:.6} {}",
            set.query_id,
            c.doc_id,
            i + 1,
            c.score,
            tag
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Recall(usize),
    Ndcg(usize),
    Mrr(usize),
}

impl Metric {
    pub const DEFAULT_SET: [Metric; 4] = [
        Metric::Recall(100),
        Metric::Ndcg(10),
        Metric::Mrr(100),
        Metric::Recall(20),
    ];

    /// Metric value for one ranked list, or `None` when the query has no
    /// relevant documents.
    pub fn compute(&self, ranked: &[&str], judgments: Option<&HashMap<String, u32>>) -> Option<f64> {
        let empty = HashMap::new();
        let judgments = judgments.unwrap_or(&empty);
        match *self {
            Metric::Recall(k) => recall_at_k(ranked, judgments, k),
            Metric::Ndcg(k) => ndcg_at_k(ranked, judgments, k),
            Metric::Mrr(k) => mrr_at_k(ranked, judgments, k),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Recall(k) => write!(f, "recall@{k}"),
            Metric::Ndcg(k) => write!(f, "ndcg@{k}"),
            Metric::Mrr(k) => write!(f, "mrr@{k}"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unknown metric {s:?}"));
        let (name, k) = s.trim().split_once('@').ok_or_else(bad)?;
        let k: usize = k.parse().ok().filter(|k| *k >= 1).ok_or_else(bad)?;
        match name.to_ascii_lowercase().as_str() {
            "recall" => Ok(Metric::Recall(k)),
            "ndcg" => Ok(Metric::Ndcg(k)),
            "mrr" | "recip_rank" => Ok(Metric::Mrr(k)),
            _ => Err(bad()),
        }
    }
}

fn relevant_count(judgments: &HashMap<String, u32>) -> usize {
    judgments.values().filter(|g| **g > 0).count()
}

pub fn recall_at_k(ranked: &[&str], judgments: &HashMap<String, u32>, k: usize) -> Option<f64> {
    let total = relevant_count(judgments);
    if total == 0 {
        return None;
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|d| judgments.get(**d).is_some_and(|g| *g > 0))
        .count();
    Some(hits as f64 / total as f64)
}

/// Exponential gain `2^grade - 1`, discount `1 / log2(rank + 1)`.
pub fn ndcg_at_k(ranked: &[&str], judgments: &HashMap<String, u32>, k: usize) -> Option<f64> {
    if relevant_count(judgments) == 0 {
        return None;
    }
    let gain = |g: u32| 2f64.powi(g as i32) - 1.0;
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain(judgments.get(*d).copied().unwrap_or(0)) * discount(i))
        .sum();
    let mut grades: Vec<u32> = judgments.values().copied().filter(|g| *g > 0).collect();
    grades.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| gain(*g) * discount(i))
        .sum();
    Some(dcg / idcg)
}

pub fn mrr_at_k(ranked: &[&str], judgments: &HashMap<String, u32>, k: usize) -> Option<f64> {
    if relevant_count(judgments) == 0 {
        return None;
    }
    Some(
        ranked
            .iter()
            .take(k)
            .position(|d| judgments.get(*d).is_some_and(|g| *g > 0))
            .map_or(0.0, |i| 1.0 / (i + 1) as f64),
    )
}

/// Result of a two-sided paired t-test on `a - b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    /// Set when the differences have zero variance but non-zero mean; `t`
    /// is then infinite and `p` is reported as 0 (below 1e-12).
    pub degenerate: bool,
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "paired t-test needs at least 2 pairs, got {n}"
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if diffs.iter().all(|d| *d == 0.0) {
        return Ok(TTest {
            t: 0.0,
            p: 1.0,
            df,
            degenerate: false,
        });
    }
    if var == 0.0 {
        return Ok(TTest {
            t: mean.signum() * f64::INFINITY,
            p: 0.0,
            df,
            degenerate: true,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest {
        t,
        p,
        df,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub metric: String,
    pub compared_with: String,
    pub t: f64,
    pub p: f64,
    pub p_below_1e12: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_query: BTreeMap<String, BTreeMap<String, f64>>,
    pub aggregate: BTreeMap<String, f64>,
    pub n_queries: usize,
    /// Run queries whose qrels list no relevant document.
    pub excluded_no_relevant: Vec<String>,
    /// Run queries absent from the qrels file.
    pub missing_from_qrels: usize,
    pub significance: Option<Significance>,
}

impl EvalReport {
    pub fn metric(&self, metric: Metric) -> Option<f64> {
        self.aggregate.get(&metric.to_string()).copied()
    }

    /// Per-query values of `metric` in query-id order.
    pub fn per_query_values(&self, metric: Metric) -> Vec<f64> {
        let key = metric.to_string();
        self.per_query.values().filter_map(|m| m.get(&key).copied()).collect()
    }
}

/// Evaluates `run` against `qrels`. When `compare` is given, a paired t-test
/// on the first metric is run over the included queries (a query missing
/// from `compare` scores 0 there).
pub fn evaluate(
    run: &Run,
    qrels: &Qrels,
    metrics: &[Metric],
    compare: Option<(&str, &Run)>,
) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for query_id in run.queries.keys() {
        let Some(judgments) = qrels.query(query_id) else {
            report.missing_from_qrels += 1;
            continue;
        };
        if relevant_count(judgments) == 0 {
            report.excluded_no_relevant.push(query_id.clone());
            continue;
        }
        let ranked = run.ranked_ids(query_id);
        let values = metrics
            .iter()
            .filter_map(|m| m.compute(&ranked, Some(judgments)).map(|v| (m.to_string(), v)))
            .collect();
        report.per_query.insert(query_id.clone(), values);
    }
    report.n_queries = report.per_query.len();
    for m in metrics {
        let values = report.per_query_values(*m);
        let mean = if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        report.aggregate.insert(m.to_string(), mean);
    }
    if let (Some((name, other)), Some(first)) = (compare, metrics.first()) {
        if report.n_queries >= 2 {
            let ours = report.per_query_values(*first);
            let theirs: Vec<f64> = report
                .per_query
                .keys()
                .map(|q| {
                    first
                        .compute(&other.ranked_ids(q), qrels.query(q))
                        .unwrap_or(0.0)
                })
                .collect();
            let test = paired_t_test(&ours, &theirs)?;
            report.significance = Some(Significance {
                metric: first.to_string(),
                compared_with: name.to_string(),
                t: test.t,
                p: test.p,
                p_below_1e12: test.p < 1e-12,
            });
        }
    }
    Ok(report)
}
