//! Re-ranker relevance feedback.
//!
//! The re-ranker's scores over the retrieved candidates define a teacher
//! distribution. The query vector is moved by plain gradient descent on
//! `KL(teacher ‖ retriever)` where the retriever distribution is the softmax
//! of query–passage dot products, then used for a second retrieval.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{write_run_lines, Qrels};
use crate::index::{rank_order, Candidate, CandidateSet, DenseIndex};
use crate::scorer::RerankerScorer;
use crate::vecmath::{
    check_temperature, dot_unchecked, min_max_normalize, softmax, KlObjective, ScoreDistribution,
    ScoreTransform,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeedbackConfig {
    /// Candidates retrieved and re-ranked per round.
    pub k: usize,
    /// Gradient steps per round.
    pub n: usize,
    pub alpha: f64,
    /// Temperature of the re-ranker softmax.
    pub t_ce: f64,
    /// Temperature of the retriever softmax.
    pub t_ret: f64,
    /// Min-max normalize both score sets before their softmax.
    pub normalize: bool,
    pub rounds: usize,
    /// Recompute the retriever min-max map at every step instead of
    /// freezing it at the starting query.
    pub renormalize_each_step: bool,
    /// Keep the loss at every step in the trace.
    pub record_losses: bool,
    /// Length of the emitted runs; `None` means `k`. The re-ranker always
    /// sees the top `k` of a retrieval of `max(k, depth)` rows.
    pub depth: Option<usize>,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self {
            k: 100,
            n: 1000,
            alpha: 0.001,
            t_ce: 2.0,
            t_ret: 1.0,
            normalize: true,
            rounds: 1,
            renormalize_each_step: true,
            record_losses: false,
            depth: None,
        }
    }
}

impl FeedbackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be positive".into()));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("rounds must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.depth == Some(0) {
            return Err(Error::InvalidConfig("depth must be positive".into()));
        }
        check_temperature(self.t_ce)?;
        check_temperature(self.t_ret)?;
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.depth.unwrap_or(self.k)
    }
}

/// Wall-clock milliseconds per pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DistillTimings {
    pub first_retrieval_ms: f64,
    pub rerank_ms: f64,
    pub distill_ms: f64,
    pub second_retrieval_ms: f64,
}

impl DistillTimings {
    pub fn total_ms(&self) -> f64 {
        self.first_retrieval_ms + self.rerank_ms + self.distill_ms + self.second_retrieval_ms
    }

    fn add(&mut self, other: &Self) {
        self.first_retrieval_ms += other.first_retrieval_ms;
        self.rerank_ms += other.rerank_ms;
        self.distill_ms += other.distill_ms;
        self.second_retrieval_ms += other.second_retrieval_ms;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackTrace {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Loss before each step plus the final loss (`n + 1` values).
    pub per_step_losses: Option<Vec<f64>>,
    pub updated_query: Vec<f32>,
    pub stage_timings: DistillTimings,
}

/// Re-ranker distribution: softmax of (optionally min-max normalized)
/// scores at temperature `t_ce`.
pub fn teacher_distribution(reranker_scores: &[f64], cfg: &FeedbackConfig) -> Result<ScoreDistribution> {
    if reranker_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidConfig("re-ranker scores must be finite".into()));
    }
    if cfg.normalize {
        softmax(&min_max_normalize(reranker_scores), cfg.t_ce)
    } else {
        softmax(reranker_scores, cfg.t_ce)
    }
}

/// Retriever distribution of `query` over `passages`.
pub fn retriever_distribution<P: AsRef<[f32]>>(
    query: &[f32],
    passages: &[P],
    cfg: &FeedbackConfig,
) -> Result<ScoreDistribution> {
    let k = passages.len();
    // The target only affects the loss, not the distribution.
    let placeholder = ScoreDistribution::from_probs(vec![1.0 / k as f64; k])?;
    let (mut objective, q) = objective_at(query, passages, &placeholder, cfg)?;
    objective.loss(&q);
    ScoreDistribution::from_probs(objective.last_distribution().to_vec())
}

fn objective_at<P: AsRef<[f32]>>(
    query: &[f32],
    passages: &[P],
    target: &ScoreDistribution,
    cfg: &FeedbackConfig,
) -> Result<(KlObjective, Vec<f64>)> {
    let transform = match (cfg.normalize, cfg.renormalize_each_step) {
        (false, _) => ScoreTransform::Identity,
        (true, true) => ScoreTransform::MinMax,
        (true, false) => {
            let scores: Vec<f64> = passages
                .iter()
                .map(|p| dot_unchecked(query, p.as_ref()))
                .collect();
            ScoreTransform::frozen_min_max(&scores)
        }
    };
    let objective = KlObjective::new(target, passages, cfg.t_ret, transform)?;
    if query.len() != objective.dim() {
        return Err(Error::DimensionMismatch {
            expected: objective.dim(),
            actual: query.len(),
        });
    }
    Ok((objective, query.iter().map(|x| f64::from(*x)).collect()))
}

/// Gradient descent of the query toward `target`.
pub fn distill_to_target<P: AsRef<[f32]>>(
    query: &[f32],
    passages: &[P],
    target: &ScoreDistribution,
    cfg: &FeedbackConfig,
) -> Result<FeedbackTrace> {
    cfg.validate()?;
    let started = Instant::now();
    let (mut objective, mut q) = objective_at(query, passages, target, cfg)?;
    let mut grad = vec![0.0; q.len()];
    let mut losses = cfg.record_losses.then(|| Vec::with_capacity(cfg.n + 1));
    let mut initial_loss = None;
    for step in 0..cfg.n {
        let loss = objective.loss_and_gradient(&q, &mut grad);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        initial_loss.get_or_insert(loss);
        if let Some(l) = losses.as_mut() {
            l.push(loss);
        }
        for (x, g) in q.iter_mut().zip(&grad) {
            *x -= cfg.alpha * g;
        }
    }
    let final_loss = objective.loss(&q);
    if !final_loss.is_finite() || q.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { step: cfg.n });
    }
    if let Some(l) = losses.as_mut() {
        l.push(final_loss);
    }
    let updated_query = if cfg.n == 0 {
        query.to_vec()
    } else {
        q.iter().map(|x| *x as f32).collect()
    };
    Ok(FeedbackTrace {
        initial_loss: initial_loss.unwrap_or(final_loss),
        final_loss,
        per_step_losses: losses,
        updated_query,
        stage_timings: DistillTimings {
            distill_ms: started.elapsed().as_secs_f64() * 1e3,
            ..Default::default()
        },
    })
}

/// Distills re-ranker scores for `candidates` into an updated query.
pub fn distill(
    query: &[f32],
    candidates: &CandidateSet,
    reranker_scores: &[f64],
    cfg: &FeedbackConfig,
    index: &DenseIndex,
) -> Result<FeedbackTrace> {
    if reranker_scores.len() != candidates.len() {
        return Err(Error::DimensionMismatch {
            expected: candidates.len(),
            actual: reranker_scores.len(),
        });
    }
    if query.len() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            actual: query.len(),
        });
    }
    let target = teacher_distribution(reranker_scores, cfg)?;
    distill_to_target(query, &index.candidate_vectors(candidates), &target, cfg)
}

/// Everything one query produces.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackOutcome {
    /// First retrieval with the original query.
    pub baseline: CandidateSet,
    /// Final retrieval with the updated query, ranked by retriever score.
    pub feedback_run: CandidateSet,
    /// Re-ranker order over every candidate scored in any round, then
    /// unseen feedback candidates; truncated to the run depth.
    pub merged_run: CandidateSet,
    pub traces: Vec<FeedbackTrace>,
    /// Per-round timings. Rounds after the first report zero first-retrieval
    /// time: their candidates come from the previous round's second
    /// retrieval.
    pub timings: Vec<DistillTimings>,
    pub final_query: Vec<f32>,
}

impl FeedbackOutcome {
    pub fn total_timings(&self) -> DistillTimings {
        let mut total = DistillTimings::default();
        for t in &self.timings {
            total.add(t);
        }
        total
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Retrieve → rerank → distill → retrieve, repeated `cfg.rounds` times.
pub fn run_feedback(
    query_id: &str,
    query: &[f32],
    index: &DenseIndex,
    scorer: &dyn RerankerScorer,
    cfg: &FeedbackConfig,
) -> Result<FeedbackOutcome> {
    cfg.validate()?;
    let depth = cfg.depth();
    let reach = depth.max(cfg.k);
    let t = Instant::now();
    let mut retrieved = index.search(query_id, query, reach)?;
    let mut first_ms = ms_since(t);
    let baseline = truncated(&retrieved, depth);

    let mut current = query.to_vec();
    let mut scored: HashMap<String, (f64, usize)> = HashMap::new();
    let mut traces = Vec::with_capacity(cfg.rounds);
    let mut timings = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let candidates = truncated(&retrieved, cfg.k);
        let t = Instant::now();
        let scores = scorer.score(&candidates)?;
        let rerank_ms = ms_since(t);
        if scores.len() != candidates.len() {
            return Err(Error::DimensionMismatch {
                expected: candidates.len(),
                actual: scores.len(),
            });
        }
        for (c, s) in candidates.entries.iter().zip(&scores) {
            scored.insert(c.doc_id.clone(), (*s, c.row));
        }

        let mut trace = distill(&current, &candidates, &scores, cfg, index)?;
        current.clone_from(&trace.updated_query);

        let t = Instant::now();
        retrieved = index.search(query_id, &current, reach)?;
        let round = DistillTimings {
            first_retrieval_ms: first_ms,
            rerank_ms,
            distill_ms: trace.stage_timings.distill_ms,
            second_retrieval_ms: ms_since(t),
        };
        trace.stage_timings = round;
        timings.push(round);
        traces.push(trace);
        first_ms = 0.0;
    }

    let feedback_run = truncated(&retrieved, depth);
    let merged_run = merge(query_id, &scored, &feedback_run, depth);
    Ok(FeedbackOutcome {
        baseline,
        feedback_run,
        merged_run,
        traces,
        timings,
        final_query: current,
    })
}

fn truncated(set: &CandidateSet, len: usize) -> CandidateSet {
    CandidateSet {
        query_id: set.query_id.clone(),
        entries: set.entries.iter().take(len).cloned().collect(),
    }
}

fn merge(
    query_id: &str,
    scored: &HashMap<String, (f64, usize)>,
    feedback_run: &CandidateSet,
    len: usize,
) -> CandidateSet {
    let mut entries: Vec<Candidate> = scored
        .iter()
        .map(|(doc_id, (score, row))| Candidate {
            doc_id: doc_id.clone(),
            score: *score,
            row: *row,
        })
        .collect();
    entries.sort_by(|a, b| rank_order(a.score, &a.doc_id, b.score, &b.doc_id));
    entries.truncate(len);
    // Unscored tail entries get scores strictly below every re-ranker score
    // so the score column stays consistent with the ranks.
    let floor = entries.last().map_or(0.0, |c| c.score);
    let tail = feedback_run
        .entries
        .iter()
        .filter(|c| !scored.contains_key(&c.doc_id))
        .take(len - entries.len())
        .enumerate()
        .map(|(i, c)| Candidate {
            doc_id: c.doc_id.clone(),
            score: floor - (i + 1) as f64,
            row: c.row,
        })
        .collect::<Vec<_>>();
    entries.extend(tail);
    CandidateSet {
        query_id: query_id.to_string(),
        entries,
    }
}

/// Mean cosine similarity between `query` and the judged-relevant entries of
/// `candidates`; `None` when no candidate is relevant.
pub fn positive_alignment(
    query: &[f32],
    candidates: &CandidateSet,
    qrels: &Qrels,
    index: &DenseIndex,
) -> Option<f64> {
    let qn = dot_unchecked(query, query).sqrt();
    let cosines: Vec<f64> = candidates
        .entries
        .iter()
        .filter(|c| qrels.grade(&candidates.query_id, &c.doc_id) > 0)
        .map(|c| {
            let p = index.row(c.row);
            let denom = qn * dot_unchecked(p, p).sqrt();
            if denom > 0.0 {
                dot_unchecked(query, p) / denom
            } else {
                0.0
            }
        })
        .collect();
    (!cosines.is_empty()).then(|| cosines.iter().sum::<f64>() / cosines.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BatchOptions {
    /// Worker threads; 0 picks the rayon default.
    pub threads: usize,
    pub fail_fast: bool,
}

#[derive(Debug)]
pub struct QueryFailure {
    pub query_id: String,
    pub error: Error,
}

/// Results of a batch, ordered by query id.
#[derive(Debug, Default)]
pub struct BatchOutput {
    pub outcomes: Vec<(String, FeedbackOutcome)>,
    pub failures: Vec<QueryFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub stage: String,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

impl BatchOutput {
    pub fn write_run<W: Write>(&self, out: &mut W, which: RunKind, tag: &str) -> Result<()> {
        for (_, o) in &self.outcomes {
            let set = match which {
                RunKind::Baseline => &o.baseline,
                RunKind::Feedback => &o.feedback_run,
                RunKind::Merged => &o.merged_run,
            };
            write_run_lines(out, set, tag)?;
        }
        Ok(())
    }

    /// Per-stage latency summary over queries; each query contributes the
    /// sum of its rounds.
    pub fn timing_table(&self) -> Vec<TimingRow> {
        if self.outcomes.is_empty() {
            return Vec::new();
        }
        let totals: Vec<DistillTimings> = self.outcomes.iter().map(|(_, o)| o.total_timings()).collect();
        type Stage = (&'static str, fn(&DistillTimings) -> f64);
        let stages: [Stage; 5] = [
            ("first_retrieval", |t| t.first_retrieval_ms),
            ("rerank", |t| t.rerank_ms),
            ("distill", |t| t.distill_ms),
            ("second_retrieval", |t| t.second_retrieval_ms),
            ("total", DistillTimings::total_ms),
        ];
        stages
            .iter()
            .map(|(name, get)| {
                let mut v: Vec<f64> = totals.iter().map(get).collect();
                v.sort_by(f64::total_cmp);
                TimingRow {
                    stage: (*name).to_string(),
                    mean_ms: v.iter().sum::<f64>() / v.len() as f64,
                    p50_ms: nearest_rank(&v, 0.50),
                    p95_ms: nearest_rank(&v, 0.95),
                }
            })
            .collect()
    }

    pub fn write_timing_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "stage,mean_ms,p50_ms,p95_ms")?;
        for row in self.timing_table() {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6}",
                row.stage, row.mean_ms, row.p50_ms, row.p95_ms
            )?;
        }
        Ok(())
    }
}

fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    Baseline,
    Feedback,
    Merged,
}

/// Runs [`run_feedback`] for every query. Queries are processed in
/// parallel; the output order is by query id whatever the scheduling.
pub fn batch_feedback(
    queries: &[(String, Vec<f32>)],
    index: &DenseIndex,
    scorer: &dyn RerankerScorer,
    cfg: &FeedbackConfig,
    opts: BatchOptions,
) -> Result<BatchOutput> {
    cfg.validate()?;
    let mut seen = HashSet::new();
    for (id, _) in queries {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    let mut order: Vec<&(String, Vec<f32>)> = queries.iter().collect();
    order.sort_by(|a, b| a.0.cmp(&b.0));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let results: Vec<Result<FeedbackOutcome>> = pool.install(|| {
        order
            .par_iter()
            .map(|(id, q)| run_feedback(id, q, index, scorer, cfg))
            .collect()
    });

    let mut out = BatchOutput::default();
    for ((id, _), result) in order.into_iter().zip(results) {
        match result {
            Ok(o) => out.outcomes.push((id.clone(), o)),
            Err(e) if opts.fail_fast => return Err(e),
            Err(error) => out.failures.push(QueryFailure {
                query_id: id.clone(),
                error,
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::{FileScorer, MissingPolicy, OracleScorer, ScoreTable};

    fn two_basis() -> DenseIndex {
        DenseIndex::build([("p1", vec![1.0, 0.0]), ("p2", vec![0.0, 1.0])]).unwrap()
    }

    fn small_index() -> DenseIndex {
        DenseIndex::build((0..12).map(|i| {
            let a = i as f32 * 0.5;
            (format!("d{i:02}"), vec![a.cos(), a.sin(), 0.1 * i as f32])
        }))
        .unwrap()
    }

    #[test]
    fn defaults_match_published_setting() {
        let c = FeedbackConfig::default();
        assert_eq!((c.k, c.n, c.rounds), (100, 1000, 1));
        assert_eq!((c.alpha, c.t_ce, c.t_ret), (0.001, 2.0, 1.0));
        assert!(c.normalize && c.renormalize_each_step && !c.record_losses);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            FeedbackConfig { k: 0, ..Default::default() },
            FeedbackConfig { rounds: 0, ..Default::default() },
            FeedbackConfig { alpha: 0.0, ..Default::default() },
            FeedbackConfig { t_ce: -1.0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn zero_steps_is_identity() {
        let index = two_basis();
        let cands = index.search("q", &[0.3, 0.2], 2).unwrap();
        let cfg = FeedbackConfig { n: 0, ..Default::default() };
        let trace = distill(&[0.3, 0.2], &cands, &[5.0, 1.0], &cfg, &index).unwrap();
        assert_eq!(trace.updated_query, vec![0.3f32, 0.2]);
        assert_eq!(trace.initial_loss, trace.final_loss);
    }

    #[test]
    fn trace_length_is_n_plus_one() {
        let index = two_basis();
        let cands = index.search("q", &[0.3, 0.2], 2).unwrap();
        let cfg = FeedbackConfig { n: 17, record_losses: true, ..Default::default() };
        let trace = distill(&[0.3, 0.2], &cands, &[5.0, 1.0], &cfg, &index).unwrap();
        assert_eq!(trace.per_step_losses.unwrap().len(), 18);
    }

    #[test]
    fn uniform_fixed_point_with_defaults() {
        // Equal retriever and re-ranker scores give uniform distributions on
        // both sides.
        let index = DenseIndex::build([("a", vec![1.0, 0.0]), ("b", vec![1.0, 0.5])]).unwrap();
        let query = [0.7f32, 0.0];
        let cands = index.search("q", &query, 2).unwrap();
        let trace = distill(&query, &cands, &[3.0, 3.0], &FeedbackConfig::default(), &index).unwrap();
        assert_eq!(trace.updated_query, query.to_vec());
    }

    #[test]
    fn non_finite_step_is_reported() {
        let index = DenseIndex::build([("a", vec![1e30, 0.0]), ("b", vec![0.0, 1e30])]).unwrap();
        let cands = index.search("q", &[1.0, 0.0], 2).unwrap();
        let cfg = FeedbackConfig { normalize: false, alpha: 1e300, n: 5, ..Default::default() };
        let err = distill(&[1.0, 0.0], &cands, &[0.0, 10.0], &cfg, &index).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    }

    #[test]
    fn misaligned_scores_rejected() {
        let index = two_basis();
        let cands = index.search("q", &[1.0, 0.0], 2).unwrap();
        assert!(distill(&[1.0, 0.0], &cands, &[1.0], &FeedbackConfig::default(), &index).is_err());
    }

    #[test]
    fn frozen_normalization_also_descends() {
        let index = small_index();
        let query = [0.2f32, 0.9, 0.1];
        let cands = index.search("q", &query, 8).unwrap();
        let scores: Vec<f64> = (0..8).map(|i| if i == 5 { 10.0 } else { 0.0 }).collect();
        let cfg = FeedbackConfig { renormalize_each_step: false, n: 200, alpha: 0.01, ..Default::default() };
        let trace = distill(&query, &cands, &scores, &cfg, &index).unwrap();
        assert!(trace.final_loss < trace.initial_loss);
    }

    #[test]
    fn zero_steps_pipeline_is_plain_rerank() {
        let index = small_index();
        let query = vec![0.5f32, 0.5, 0.2];
        let mut table = ScoreTable::new();
        for (i, id) in index.ids().iter().enumerate() {
            table.insert("q", id, ((i * 7) % 5) as f64).unwrap();
        }
        let scorer = FileScorer::new(table, MissingPolicy::Error);
        let cfg = FeedbackConfig { k: 6, n: 0, ..Default::default() };
        let out = run_feedback("q", &query, &index, &scorer, &cfg).unwrap();
        assert_eq!(out.feedback_run, out.baseline);
        let scores = scorer.score(&out.baseline).unwrap();
        let mut expect: Vec<(f64, String)> = out
            .baseline
            .entries
            .iter()
            .zip(scores)
            .map(|(c, s)| (s, c.doc_id.clone()))
            .collect();
        expect.sort_by(|a, b| rank_order(a.0, &a.1, b.0, &b.1));
        let got: Vec<&str> = out.merged_run.doc_ids().collect();
        let want: Vec<&str> = expect.iter().map(|(_, d)| d.as_str()).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn merged_run_puts_scored_first() {
        let index = small_index();
        let mut qrels = Qrels::default();
        qrels.insert("q", "d07", 1);
        let scorer = OracleScorer::new(qrels, 10.0).unwrap();
        let cfg = FeedbackConfig { k: 4, n: 50, alpha: 0.05, rounds: 2, ..Default::default() };
        let out = run_feedback("q", &[1.0, 0.0, 0.0], &index, &scorer, &cfg).unwrap();
        assert_eq!(out.merged_run.len(), 4);
        assert_eq!(out.traces.len(), 2);
        assert_eq!(out.timings[1].first_retrieval_ms, 0.0);
    }

    #[test]
    fn depth_extends_runs_beyond_k() {
        let index = small_index();
        let mut qrels = Qrels::default();
        qrels.insert("q", "d01", 1);
        let scorer = OracleScorer::new(qrels, 10.0).unwrap();
        let cfg = FeedbackConfig { k: 3, depth: Some(8), n: 20, alpha: 0.05, ..Default::default() };
        let out = run_feedback("q", &[1.0, 0.0, 0.0], &index, &scorer, &cfg).unwrap();
        assert_eq!((out.baseline.len(), out.feedback_run.len(), out.merged_run.len()), (8, 8, 8));
        assert_eq!(out.merged_run.entries[0].doc_id, "d01");
        // Three re-ranked entries, then the unscored feedback tail.
        let scored: Vec<&str> = out.merged_run.doc_ids().take(3).collect();
        for c in &out.merged_run.entries[3..] {
            assert!(!scored.contains(&c.doc_id.as_str()));
        }
        let scores = out.merged_run.scores();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]), "{scores:?}");
    }

    #[test]
    fn batch_orders_by_query_id_and_counts_failures() {
        let index = small_index();
        let scorer = FileScorer::new(ScoreTable::new(), MissingPolicy::Error);
        let queries = vec![
            ("b".to_string(), vec![1.0, 0.0, 0.0]),
            ("a".to_string(), vec![0.0, 1.0, 0.0]),
        ];
        let cfg = FeedbackConfig { k: 3, n: 0, ..Default::default() };
        let out = batch_feedback(&queries, &index, &scorer, &cfg, BatchOptions::default()).unwrap();
        assert_eq!(out.failures.len(), 2);
        assert_eq!(out.failures[0].query_id, "a");
        let strict = BatchOptions { fail_fast: true, ..Default::default() };
        assert!(batch_feedback(&queries, &index, &scorer, &cfg, strict).is_err());
    }

    #[test]
    fn empty_batch_has_header_only_timings() {
        let index = small_index();
        let scorer = FileScorer::new(ScoreTable::new(), MissingPolicy::Error);
        let out = batch_feedback(&[], &index, &scorer, &FeedbackConfig::default(), BatchOptions::default()).unwrap();
        let mut csv = Vec::new();
        out.write_timing_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "stage,mean_ms,p50_ms,p95_ms\n");
        let mut run = Vec::new();
        out.write_run(&mut run, RunKind::Feedback, "t").unwrap();
        assert!(run.is_empty());
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 0.5), 10.0);
        assert_eq!(nearest_rank(&v, 0.95), 19.0);
        assert_eq!(nearest_rank(&[3.0], 0.95), 3.0);
    }
}
