//! Seeded synthetic retrieval benchmark.
//!
//! Passages are noisy copies of unit-norm cluster centers. Each query gets
//! a private group of positives around an anchor displaced from its
//! cluster center, and the query itself sits halfway between center and
//! anchor, so dot-product retrieval ranks some positives below cluster
//! neighbours. All vectors are L2-normalized.
//!
//! Randomness: every entity draws from its own ChaCha8 stream, seeded with
//! the spec seed and selected by `set_stream((kind << 48) | index)`. Output
//! is therefore independent of generation order and thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{recall_at_k, Qrels};
use crate::index::{write_jsonl, DenseIndex, EmbeddingRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub dim: usize,
    /// Total corpus size, positives included.
    pub n_passages: usize,
    pub n_queries: usize,
    pub positives_per_query: usize,
    pub clusters: usize,
    /// Norm of the Gaussian noise added to a center for background passages.
    pub cluster_spread: f64,
    /// Distance from a cluster center to a query's positive anchor.
    pub query_offset: f64,
    /// Norm of the Gaussian noise around the anchor for positives.
    pub positive_spread: f64,
    /// Accepted range of baseline Recall@100; `None` disables the check.
    pub recall_band: Option<[f64; 2]>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 20231207,
            dim: 64,
            n_passages: 10_000,
            n_queries: 200,
            positives_per_query: 5,
            clusters: 50,
            cluster_spread: 0.8,
            query_offset: 1.2,
            positive_spread: 1.5,
            recall_band: Some([0.4, 0.8]),
        }
    }
}

#[derive(Clone, Copy)]
#[repr(u64)]
enum Stream {
    Center = 1,
    Background = 2,
    Query = 3,
    Positive = 4,
}

fn rng_for(seed: u64, kind: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((kind as u64) << 48) | index);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// `base + scale * z / sqrt(dim)` with `z` standard normal.
fn jitter(base: &[f64], scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = scale / (base.len() as f64).sqrt();
    base.iter()
        .zip(gaussian(rng, base.len()))
        .map(|(b, z)| b + s * z)
        .collect()
}

fn to_f32(v: Vec<f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    pub passages: Vec<EmbeddingRecord>,
    pub queries: Vec<EmbeddingRecord>,
    pub qrels: Qrels,
    pub baseline_recall_at_100: f64,
    pub baseline_recall_at_500: f64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let positives = self.n_queries * self.positives_per_query;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.dim == 0 || self.clusters == 0 || self.n_queries == 0 || self.positives_per_query == 0 {
            return bad("dim, clusters, n_queries and positives_per_query must be positive".into());
        }
        if positives > self.n_passages {
            return bad(format!(
                "{positives} positives do not fit in {} passages",
                self.n_passages
            ));
        }
        for (name, v) in [
            ("cluster_spread", self.cluster_spread),
            ("query_offset", self.query_offset),
            ("positive_spread", self.positive_spread),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative number"));
            }
        }
        if let Some([lo, hi]) = self.recall_band {
            if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
                return bad(format!("invalid recall band [{lo}, {hi}]"));
            }
        }
        Ok(())
    }

    pub fn doc_id(i: usize) -> String {
        format!("d{i:06}")
    }

    pub fn query_id(i: usize) -> String {
        format!("q{i:04}")
    }

    /// Generates the dataset and measures its baseline recall. Fails when
    /// the measured Recall@100 lies outside `recall_band`.
    pub fn generate(&self) -> Result<SynthDataset> {
        self.validate()?;
        let dim = self.dim;
        let centers: Vec<Vec<f64>> = (0..self.clusters)
            .into_par_iter()
            .map(|c| unit(gaussian(&mut rng_for(self.seed, Stream::Center, c as u64), dim)))
            .collect();

        let n_background = self.n_passages - self.n_queries * self.positives_per_query;
        let background: Vec<Vec<f32>> = (0..n_background)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_for(self.seed, Stream::Background, i as u64);
                to_f32(unit(jitter(&centers[i % self.clusters], self.cluster_spread, &mut rng)))
            })
            .collect();

        let per_query: Vec<(Vec<f32>, Vec<Vec<f32>>)> = (0..self.n_queries)
            .into_par_iter()
            .map(|q| {
                let mut rng = rng_for(self.seed, Stream::Query, q as u64);
                let center = &centers[rng.random_range(0..self.clusters)];
                let direction = unit(gaussian(&mut rng, dim));
                let anchor: Vec<f64> = center
                    .iter()
                    .zip(&direction)
                    .map(|(c, u)| c + self.query_offset * u)
                    .collect();
                let query: Vec<f64> = center.iter().zip(&anchor).map(|(c, a)| 0.5 * (c + a)).collect();
                let positives = (0..self.positives_per_query)
                    .map(|j| {
                        let key = (q * self.positives_per_query + j) as u64;
                        let mut rng = rng_for(self.seed, Stream::Positive, key);
                        to_f32(unit(jitter(&anchor, self.positive_spread, &mut rng)))
                    })
                    .collect();
                (to_f32(unit(query)), positives)
            })
            .collect();

        let mut passages: Vec<EmbeddingRecord> = background
            .into_iter()
            .enumerate()
            .map(|(i, vector)| EmbeddingRecord {
                id: Self::doc_id(i),
                vector,
            })
            .collect();
        let mut queries = Vec::with_capacity(self.n_queries);
        let mut qrels = Qrels::default();
        for (q, (vector, positives)) in per_query.into_iter().enumerate() {
            let query_id = Self::query_id(q);
            for vector in positives {
                let id = Self::doc_id(passages.len());
                qrels.insert(&query_id, &id, 1);
                passages.push(EmbeddingRecord { id, vector });
            }
            queries.push(EmbeddingRecord { id: query_id, vector });
        }

        let index = DenseIndex::build(passages.iter().map(|r| (r.id.clone(), r.vector.clone())))?;
        let (r100, r500) = baseline_recall(&index, &queries, &qrels)?;
        if let Some([lo, hi]) = self.recall_band {
            if !(lo..=hi).contains(&r100) {
                return Err(Error::InfeasibleBand { recall: r100, lo, hi });
            }
        }
        Ok(SynthDataset {
            spec: self.clone(),
            passages,
            queries,
            qrels,
            baseline_recall_at_100: r100,
            baseline_recall_at_500: r500,
        })
    }
}

fn baseline_recall(index: &DenseIndex, queries: &[EmbeddingRecord], qrels: &Qrels) -> Result<(f64, f64)> {
    let per_query: Vec<(f64, f64)> = queries
        .par_iter()
        .map(|q| -> Result<(f64, f64)> {
            let hits = index.search(&q.id, &q.vector, 500)?;
            let ranked: Vec<&str> = hits.doc_ids().collect();
            let judged = qrels.query(&q.id).cloned().unwrap_or_default();
            Ok((
                recall_at_k(&ranked, &judged, 100).unwrap_or(0.0),
                recall_at_k(&ranked, &judged, 500).unwrap_or(0.0),
            ))
        })
        .collect::<Result<_>>()?;
    let n = per_query.len().max(1) as f64;
    Ok((
        per_query.iter().map(|p| p.0).sum::<f64>() / n,
        per_query.iter().map(|p| p.1).sum::<f64>() / n,
    ))
}

impl SynthDataset {
    pub fn index(&self) -> Result<DenseIndex> {
        DenseIndex::build(self.passages.iter().map(|r| (r.id.clone(), r.vector.clone())))
    }

    pub fn query_pairs(&self) -> Vec<(String, Vec<f32>)> {
        self.queries.iter().map(|q| (q.id.clone(), q.vector.clone())).collect()
    }

    pub fn embeddings_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_jsonl(&mut out, &self.passages).expect("in-memory write");
        out
    }

    pub fn queries_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_jsonl(&mut out, &self.queries).expect("in-memory write");
        out
    }

    pub fn qrels_text(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.qrels.write(&mut out).expect("in-memory write");
        out
    }
}
