//! Shared fixtures for the refeed benchmarks.

use refeed::{CandidateSet, DenseIndex, FeedbackConfig, SynthDataset, SynthSpec};

pub struct Fixture {
    pub data: SynthDataset,
    pub index: DenseIndex,
    pub query: Vec<f32>,
    pub candidates: CandidateSet,
    pub reranker_scores: Vec<f64>,
}

/// Default-sized synthetic corpus (no difficulty check) with the first
/// query's top-`k` candidates and oracle-like re-ranker scores.
pub fn fixture(n_passages: usize, dim: usize, k: usize) -> Fixture {
    let spec = SynthSpec {
        n_passages,
        dim,
        n_queries: 20,
        recall_band: None,
        ..Default::default()
    };
    let data = spec.generate().expect("synthetic corpus");
    let index = data.index().expect("index");
    let query = data.queries[0].vector.clone();
    let candidates = index.search(&data.queries[0].id, &query, k).expect("search");
    let reranker_scores = candidates
        .entries
        .iter()
        .map(|c| c.score + 10.0 * f64::from(data.qrels.grade(&candidates.query_id, &c.doc_id)))
        .collect();
    Fixture { data, index, query, candidates, reranker_scores }
}

pub fn config(k: usize, n: usize) -> FeedbackConfig {
    FeedbackConfig { k, n, ..Default::default() }
}
