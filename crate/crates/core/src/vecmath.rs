//! Numerical kernels shared by retrieval and distillation.
//!
//! Stored vectors are `f32`; every reduction (dot products, softmax sums,
//! losses, gradients) runs in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability vector over a candidate list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreDistribution(Vec<f64>);

impl ScoreDistribution {
    /// Validates that `probs` is a probability vector (entries in `[0, 1]`,
    /// sum within `1e-9` of one).
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidConfig("empty distribution".into()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig(
                "distribution entries must lie in [0, 1]".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "distribution sums to {total}, not 1"
            )));
        }
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Dot product accumulated in `f64`.
pub fn dot(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(dot_unchecked(a, b))
}

/// Same accumulation order as [`dot`]; callers guarantee equal lengths.
#[inline]
pub(crate) fn dot_unchecked(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += f64::from(*x) * f64::from(*y);
    }
    acc
}

#[inline]
pub(crate) fn dot_f64(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Index of the first minimum and first maximum.
pub(crate) fn arg_min_max(values: &[f64]) -> (usize, usize) {
    let mut lo = 0;
    let mut hi = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[lo] {
            lo = i;
        }
        if *v > values[hi] {
            hi = i;
        }
    }
    (lo, hi)
}

/// Affine rescale to `[0, 1]`. A constant input maps to all `0.5`.
pub fn min_max_normalize(scores: &[f64]) -> Vec<f64> {
    let mut out = scores.to_vec();
    min_max_in_place(&mut out);
    out
}

pub(crate) fn min_max_in_place(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let (lo, hi) = arg_min_max(values);
    let min = values[lo];
    let range = values[hi] - min;
    if range > 0.0 {
        for v in values.iter_mut() {
            *v = (*v - min) / range;
        }
    } else {
        values.fill(0.5);
    }
}

/// Temperature softmax with max-shift.
pub fn softmax(scores: &[f64], temperature: f64) -> Result<ScoreDistribution> {
    check_temperature(temperature)?;
    if scores.is_empty() {
        return Err(Error::InvalidConfig("softmax of an empty score vector".into()));
    }
    let mut probs = scores.to_vec();
    softmax_in_place(&mut probs, temperature);
    Ok(ScoreDistribution(probs))
}

pub(crate) fn check_temperature(temperature: f64) -> Result<()> {
    if temperature > 0.0 && temperature.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "temperature must be positive and finite, got {temperature}"
        )))
    }
}

/// Overwrites `values` with their softmax and returns `ln Σ exp(v/T - m)`,
/// the log-partition relative to the shift.
pub(crate) fn softmax_in_place(values: &mut [f64], temperature: f64) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for v in values.iter_mut() {
        *v /= temperature;
        if *v > max {
            max = *v;
        }
    }
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
    total.ln()
}

/// `KL(p ‖ q)` in nats, with `0 · ln(0/q) = 0`.
pub fn kl_divergence(p: &ScoreDistribution, q: &ScoreDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    Ok(p.0
        .iter()
        .zip(&q.0)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum())
}

/// How retriever scores are mapped before the retriever softmax.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreTransform {
    /// Raw dot products.
    Identity,
    /// Min-max normalization recomputed from the current scores. The argmin
    /// and argmax rows are held fixed when differentiating.
    MinMax,
    /// `offset + scale * s`, typically a min-max map frozen at the starting
    /// query.
    Affine { offset: f64, scale: f64 },
}

impl ScoreTransform {
    /// Freezes min-max normalization at `scores`.
    pub fn frozen_min_max(scores: &[f64]) -> Self {
        let (lo, hi) = arg_min_max(scores);
        let range = scores[hi] - scores[lo];
        if range > 0.0 {
            Self::Affine {
                offset: -scores[lo] / range,
                scale: 1.0 / range,
            }
        } else {
            Self::Affine {
                offset: 0.5,
                scale: 0.0,
            }
        }
    }
}

/// KL loss of the retriever distribution against a fixed target, with its
/// analytic gradient in the query vector.
///
/// Passages are copied into a dense `f64` matrix once so the inner loop of
/// the optimizer never converts or allocates.
#[derive(Debug, Clone)]
pub struct KlObjective {
    passages: Vec<f64>,
    dim: usize,
    target: Vec<f64>,
    target_entropy: f64,
    temperature: f64,
    transform: ScoreTransform,
    scores: Vec<f64>,
    probs: Vec<f64>,
}

impl KlObjective {
    pub fn new<P: AsRef<[f32]>>(
        target: &ScoreDistribution,
        passages: &[P],
        temperature: f64,
        transform: ScoreTransform,
    ) -> Result<Self> {
        check_temperature(temperature)?;
        if passages.is_empty() {
            return Err(Error::InvalidConfig("no candidate passages".into()));
        }
        if target.len() != passages.len() {
            return Err(Error::DimensionMismatch {
                expected: passages.len(),
                actual: target.len(),
            });
        }
        let dim = passages[0].as_ref().len();
        let mut matrix = Vec::with_capacity(dim * passages.len());
        for p in passages {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: p.len(),
                });
            }
            matrix.extend(p.iter().map(|x| f64::from(*x)));
        }
        let target_entropy = target
            .probs()
            .iter()
            .filter(|t| **t > 0.0)
            .map(|t| t * t.ln())
            .sum();
        Ok(Self {
            passages: matrix,
            dim,
            target: target.probs().to_vec(),
            target_entropy,
            temperature,
            transform,
            scores: vec![0.0; passages.len()],
            probs: vec![0.0; passages.len()],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn candidates(&self) -> usize {
        self.target.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.passages[i * self.dim..(i + 1) * self.dim]
    }

    /// Retriever distribution at `query` (valid after [`Self::loss`] or
    /// [`Self::loss_and_gradient`]).
    pub fn last_distribution(&self) -> &[f64] {
        &self.probs
    }

    /// Computes transformed scores and the softmax; returns the argmin/argmax
    /// rows and range for the min-max transform.
    fn forward(&mut self, query: &[f64]) -> (f64, Option<(usize, usize, f64)>) {
        for i in 0..self.scores.len() {
            let s = dot_f64(&self.passages[i * self.dim..(i + 1) * self.dim], query);
            self.scores[i] = s;
        }
        let mut pivots = None;
        match self.transform {
            ScoreTransform::Identity => {}
            ScoreTransform::MinMax => {
                let (lo, hi) = arg_min_max(&self.scores);
                let min = self.scores[lo];
                let range = self.scores[hi] - min;
                if range > 0.0 {
                    for s in &mut self.scores {
                        *s = (*s - min) / range;
                    }
                    pivots = Some((lo, hi, range));
                } else {
                    self.scores.fill(0.5);
                }
            }
            ScoreTransform::Affine { offset, scale } => {
                for s in &mut self.scores {
                    *s = offset + scale * *s;
                }
            }
        }
        self.probs.copy_from_slice(&self.scores);
        let log_partition = softmax_in_place(&mut self.probs, self.temperature);
        // ln q_i = z_i - max(z) - log_partition
        let max_z = self
            .scores
            .iter()
            .fold(f64::NEG_INFINITY, |m, s| m.max(*s / self.temperature));
        let mut cross = 0.0;
        for (t, s) in self.target.iter().zip(&self.scores) {
            if *t > 0.0 {
                cross += t * (s / self.temperature - max_z - log_partition);
            }
        }
        (self.target_entropy - cross, pivots)
    }

    pub fn loss(&mut self, query: &[f64]) -> f64 {
        self.forward(query).0
    }

    /// Returns the loss and writes `∂L/∂query` into `grad`.
    pub fn loss_and_gradient(&mut self, query: &[f64], grad: &mut [f64]) -> f64 {
        let (loss, pivots) = self.forward(query);
        grad.fill(0.0);
        let chain = match self.transform {
            ScoreTransform::Identity => 1.0,
            ScoreTransform::Affine { scale, .. } => scale,
            ScoreTransform::MinMax => match pivots {
                Some((_, _, range)) => 1.0 / range,
                None => return loss,
            },
        };
        if chain == 0.0 {
            return loss;
        }
        // Σ_i (q_i - t_i) ∂z_i/∂Q, with Σ_i (q_i - t_i) = 0 folding the argmin
        // row out of the min-max term.
        let mut weighted_norm = 0.0;
        for i in 0..self.target.len() {
            let w = self.probs[i] - self.target[i];
            if w == 0.0 {
                continue;
            }
            weighted_norm += w * self.scores[i];
            let row = &self.passages[i * self.dim..(i + 1) * self.dim];
            for (g, p) in grad.iter_mut().zip(row) {
                *g += w * p;
            }
        }
        if let Some((lo, hi, _)) = pivots {
            if weighted_norm != 0.0 {
                let (lo_row, hi_row) = (self.row(lo).to_vec(), self.row(hi).to_vec());
                for ((g, a), b) in grad.iter_mut().zip(hi_row).zip(lo_row) {
                    *g -= weighted_norm * (a - b);
                }
            }
        }
        let factor = chain / self.temperature;
        for g in grad.iter_mut() {
            *g *= factor;
        }
        loss
    }
}

/// Gradient of `KL(target ‖ softmax(g(Q·P)/T))` with respect to the query,
/// where `g` is min-max normalization when `normalize` is set.
pub fn kl_gradient<P: AsRef<[f32]>>(
    target: &ScoreDistribution,
    query: &[f32],
    passages: &[P],
    temperature: f64,
    normalize: bool,
) -> Result<Vec<f64>> {
    let transform = if normalize {
        ScoreTransform::MinMax
    } else {
        ScoreTransform::Identity
    };
    let mut objective = KlObjective::new(target, passages, temperature, transform)?;
    if query.len() != objective.dim() {
        return Err(Error::DimensionMismatch {
            expected: objective.dim(),
            actual: query.len(),
        });
    }
    let q: Vec<f64> = query.iter().map(|x| f64::from(*x)).collect();
    let mut grad = vec![0.0; q.len()];
    objective.loss_and_gradient(&q, &mut grad);
    Ok(grad)
}
