//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the library's kernels.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

/// Left-to-right `f64` sum of exact `f32` products.
pub fn seq_dot(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for i in 0..a.len() {
        acc += a[i] as f64 * b[i] as f64;
    }
    acc
}

/// Neumaier-compensated dot product.
pub fn compensated_dot(a: &[f32], b: &[f32]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let term = *x as f64 * *y as f64;
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn dot_f64_f32(q: &[f64], p: &[f32]) -> f64 {
    q.iter().zip(p).map(|(a, b)| a * *b as f64).sum()
}

/// `KL(target ‖ softmax(g(q·P)/t))` written out directly.
pub fn kl_loss(q: &[f64], passages: &[Vec<f32>], target: &[f64], t: f64, normalize: bool) -> f64 {
    let mut s: Vec<f64> = passages.iter().map(|p| dot_f64_f32(q, p)).collect();
    if normalize {
        let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for v in &mut s {
            *v = if hi > lo { (*v - lo) / (hi - lo) } else { 0.5 };
        }
    }
    let z: Vec<f64> = s.iter().map(|v| v / t).collect();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
    target
        .iter()
        .zip(&z)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, v)| p * (p.ln() - (v - log_sum)))
        .sum()
}

pub fn central_difference(
    q: &[f64],
    passages: &[Vec<f32>],
    target: &[f64],
    t: f64,
    normalize: bool,
    eps: f64,
) -> Vec<f64> {
    (0..q.len())
        .map(|j| {
            let mut plus = q.to_vec();
            let mut minus = q.to_vec();
            plus[j] += eps;
            minus[j] -= eps;
            (kl_loss(&plus, passages, target, t, normalize)
                - kl_loss(&minus, passages, target, t, normalize))
                / (2.0 * eps)
        })
        .collect()
}

/// Largest componentwise difference relative to the largest reference
/// component.
pub fn max_relative_error(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    got.iter()
        .zip(want)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}

pub struct GradientInstance {
    pub query: Vec<f32>,
    pub passages: Vec<Vec<f32>>,
    pub target: Vec<f64>,
    pub temperature: f64,
    pub normalize: bool,
}

/// Random loss instance with dim ≤ 64 and K ≤ 32. Min-max instances keep a
/// clear gap around the extreme scores so finite differences do not cross a
/// change of argmin/argmax.
pub fn gradient_instance(rng: &mut ChaCha8Rng) -> GradientInstance {
    loop {
        let dim = rng.random_range(1..=64);
        let k = rng.random_range(2..=32);
        let normalize = rng.random_bool(0.5);
        let query = gaussian(rng, dim);
        let passages: Vec<Vec<f32>> = (0..k).map(|_| gaussian(rng, dim)).collect();
        let logits: Vec<f64> = (0..k).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut target: Vec<f64> = logits.iter().map(|v| v.exp()).collect();
        if rng.random_bool(0.3) {
            let zero = rng.random_range(0..k);
            target[zero] = 0.0;
        }
        let total: f64 = target.iter().sum();
        target.iter_mut().for_each(|p| *p /= total);
        let temperature = rng.random_range(0.5..3.0);

        if normalize {
            let q: Vec<f64> = query.iter().map(|x| *x as f64).collect();
            let mut s: Vec<f64> = passages.iter().map(|p| dot_f64_f32(&q, p)).collect();
            if k < 3 {
                continue;
            }
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let range = s[k - 1] - s[0];
            if s[1] - s[0] < 1e-2 * range || s[k - 1] - s[k - 2] < 1e-2 * range || range < 1e-3 {
                continue;
            }
        }
        return GradientInstance { query, passages, target, temperature, normalize };
    }
}

/// Scores every row, sorts all of them by (score desc, id asc) and keeps `k`.
pub fn full_sort_top_k(rows: &[(String, Vec<f32>)], query: &[f32], k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = rows
        .iter()
        .map(|(id, v)| (id.clone(), seq_dot(query, v)))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

pub struct SearchInstance {
    pub rows: Vec<(String, Vec<f32>)>,
    pub query: Vec<f32>,
    pub k: usize,
}

/// Random corpus with duplicated rows and small-integer coordinates so that
/// equal scores are common; ids are shuffled against row order.
pub fn search_instance(rng: &mut ChaCha8Rng) -> SearchInstance {
    let n = rng.random_range(1..=60);
    let dim = rng.random_range(1..=16);
    let integer = rng.random_bool(0.5);
    let mut vectors: Vec<Vec<f32>> = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 && rng.random_bool(0.25) {
            let src = rng.random_range(0..i);
            vectors.push(vectors[src].clone());
        } else if integer {
            vectors.push((0..dim).map(|_| rng.random_range(-2..=2) as f32).collect());
        } else {
            vectors.push(gaussian(rng, dim));
        }
    }
    let mut labels: Vec<usize> = (0..n).collect();
    labels.shuffle(rng);
    let rows = labels
        .into_iter()
        .zip(vectors)
        .map(|(l, v)| (format!("p{l:03}"), v))
        .collect();
    let query = if integer {
        (0..dim).map(|_| rng.random_range(-2..=2) as f32).collect()
    } else {
        gaussian(rng, dim)
    };
    let k = rng.random_range(1..=n + 10);
    SearchInstance { rows, query, k }
}

pub fn is_relevant(judgments: &HashMap<String, u32>, doc: &str) -> bool {
    judgments.get(doc).is_some_and(|g| *g > 0)
}

pub fn recall(ranked: &[&str], judgments: &HashMap<String, u32>, k: usize) -> Option<f64> {
    let total = judgments.values().filter(|g| **g > 0).count();
    if total == 0 {
        return None;
    }
    let hits = ranked.iter().take(k).filter(|d| is_relevant(judgments, d)).count();
    Some(hits as f64 / total as f64)
}

pub fn mrr(ranked: &[&str], judgments: &HashMap<String, u32>, k: usize) -> Option<f64> {
    judgments.values().any(|g| *g > 0).then(|| {
        ranked
            .iter()
            .take(k)
            .position(|d| is_relevant(judgments, d))
            .map_or(0.0, |i| 1.0 / (i as f64 + 1.0))
    })
}

fn dcg(grades: &[u32], k: usize) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| (2f64.powi(*g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// Best DCG over every way of filling the first `k` slots from the
/// remaining grade counts.
fn best_dcg(counts: &mut [usize; 4], pos: usize, k: usize) -> f64 {
    if pos == k {
        return 0.0;
    }
    let mut best = 0.0f64;
    for g in 1..4 {
        if counts[g] == 0 {
            continue;
        }
        counts[g] -= 1;
        let gain = (2f64.powi(g as i32) - 1.0) / ((pos + 2) as f64).log2();
        best = best.max(gain + best_dcg(counts, pos + 1, k));
        counts[g] += 1;
    }
    best
}

/// nDCG with the ideal DCG found by exhaustive search over arrangements of
/// the judged relevant grades (1..=3).
pub fn ndcg(ranked: &[&str], judgments: &HashMap<String, u32>, k: usize) -> Option<f64> {
    let mut counts = [0usize; 4];
    for g in judgments.values().filter(|g| **g > 0) {
        assert!(*g <= 3, "oracle handles grades up to 3");
        counts[*g as usize] += 1;
    }
    if counts.iter().sum::<usize>() == 0 {
        return None;
    }
    let ideal = best_dcg(&mut counts, 0, k);
    let got: Vec<u32> = ranked
        .iter()
        .take(k)
        .map(|d| judgments.get(*d).copied().unwrap_or(0))
        .collect();
    Some(dcg(&got, k) / ideal)
}

pub struct MetricInstance {
    pub ranked: Vec<String>,
    pub judgments: HashMap<String, u32>,
}

/// Small random ranking over a pool of 14 documents with up to six judged
/// relevant ones (some possibly unretrieved) and some zero grades.
pub fn metric_instance(rng: &mut ChaCha8Rng) -> MetricInstance {
    let mut pool: Vec<String> = (0..14).map(|i| format!("doc{i}")).collect();
    pool.shuffle(rng);
    let len = rng.random_range(0..=pool.len());
    let ranked = pool[..len].to_vec();
    pool.shuffle(rng);
    let n_rel = rng.random_range(0..=6);
    let n_zero = rng.random_range(0..=3);
    let mut judgments = HashMap::new();
    for d in &pool[..n_rel] {
        judgments.insert(d.clone(), rng.random_range(1..=3));
    }
    for d in &pool[n_rel..n_rel + n_zero] {
        judgments.insert(d.clone(), 0);
    }
    MetricInstance { ranked, judgments }
}
