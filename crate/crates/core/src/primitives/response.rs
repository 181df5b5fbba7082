use crate::error::{invalid, Result};

use super::vocab::TokenId;

/// One generated token sequence with its sampling record.
///
/// `log_probs` are under the (tempered) behavior policy that produced each
/// token, `entropies` are the Shannon entropy of the step distribution, both
/// in nats. The first `reused_prefix_len` positions were inherited from a
/// trunk rather than sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    tokens: Vec<TokenId>,
    log_probs: Vec<f64>,
    entropies: Vec<f64>,
    reused_prefix_len: usize,
    terminated_by_eos: bool,
}

impl Response {
    pub fn new(
        tokens: Vec<TokenId>,
        log_probs: Vec<f64>,
        entropies: Vec<f64>,
        reused_prefix_len: usize,
        terminated_by_eos: bool,
    ) -> Result<Self> {
        if tokens.is_empty() {
            return Err(invalid("response must contain at least one token"));
        }
        if tokens.len() != log_probs.len() || tokens.len() != entropies.len() {
            return Err(invalid(format!(
                "length mismatch: {} tokens, {} log-probs, {} entropies",
                tokens.len(),
                log_probs.len(),
                entropies.len()
            )));
        }
        if reused_prefix_len > tokens.len() {
            return Err(invalid("reused prefix longer than response"));
        }
        if log_probs.iter().any(|&lp| lp.is_nan() || lp > 0.0) {
            return Err(invalid("log-probabilities must be <= 0"));
        }
        if entropies.iter().any(|&h| h.is_nan() || h < 0.0) {
            return Err(invalid("entropies must be >= 0"));
        }
        Ok(Self { tokens, log_probs, entropies, reused_prefix_len, terminated_by_eos })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn entropies(&self) -> &[f64] {
        &self.entropies
    }

    pub fn reused_prefix_len(&self) -> usize {
        self.reused_prefix_len
    }

    pub fn terminated_by_eos(&self) -> bool {
        self.terminated_by_eos
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false for a constructed response; present for clippy.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens this response actually sampled.
    pub fn generated_len(&self) -> usize {
        self.tokens.len() - self.reused_prefix_len
    }

    /// Mean per-token entropy.
    pub fn mean_entropy(&self) -> f64 {
        self.entropies.iter().sum::<f64>() / self.entropies.len() as f64
    }
}
