use rand::Rng;

use crate::error::{invalid, Result};

use super::rng::RngStream;
use super::vocab::TokenId;

const SUM_TOLERANCE: f64 = 1e-9;

/// A categorical distribution over a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist {
    probs: Vec<f64>,
}

impl ProbDist {
    /// Validates non-negativity and unit mass (within `1e-9`).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("distribution has no entries"));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(invalid(format!("probability {p} is negative or non-finite")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(invalid(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(size: usize) -> Self {
        Self { probs: vec![1.0 / size as f64; size] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, t: TokenId) -> f64 {
        self.probs[t.index()]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        entropy_of(&self.probs)
    }
}

/// Sampling temperature, strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Temperature(f64);

impl Temperature {
    pub const ONE: Temperature = Temperature(1.0);

    pub fn new(t: f64) -> Result<Self> {
        if !(t.is_finite() && t > 0.0) {
            return Err(invalid(format!("temperature must be positive and finite, got {t}")));
        }
        Ok(Self(t))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// `probs[v] ∝ exp(logits[v] / t)`, stabilized by subtracting the max logit.
///
/// As `t → 0⁺` the result tends to the argmax one-hot (ties share mass).
pub fn softmax_with_temperature(logits: &[f64], t: f64) -> Result<ProbDist> {
    let t = Temperature::new(t)?;
    if logits.is_empty() {
        return Err(invalid("empty logit vector"));
    }
    if let Some(l) = logits.iter().find(|l| !l.is_finite()) {
        return Err(invalid(format!("non-finite logit {l}")));
    }
    Ok(ProbDist { probs: softmax_unchecked(logits, t.get()) })
}

pub(crate) fn softmax_unchecked(logits: &[f64], t: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|l| ((l - max) / t).exp()).collect();
    let z: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= z);
    probs
}

/// Shannon entropy in nats, with `0 · ln 0 = 0`.
pub fn shannon_entropy(dist: &ProbDist) -> f64 {
    entropy_of(dist.probs())
}

fn entropy_of(probs: &[f64]) -> f64 {
    let h: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    // rounding can leave a tiny negative value for one-hot inputs
    h.max(0.0)
}

/// Inverse-CDF draw. Zero-probability tokens are never returned.
pub fn sample_categorical(dist: &ProbDist, rng: &mut RngStream) -> TokenId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in dist.probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last_positive = i;
        if u < acc {
            return TokenId(i as u32);
        }
    }
    TokenId(last_positive as u32)
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    TokenId(best as u32)
}
