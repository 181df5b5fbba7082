//! Synthetic digit-sum prompts with exactly computable answers.
//!
//! A prompt is `d₁ + d₂ + … + d_k =` and its answer is `(Σ dᵢ) mod m`,
//! rendered as a single digit.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::labeling::extract_answer;
use crate::policy::{sample_response, Decoding, PolicyParams};
use crate::primitives::{RngStream, TokenId, Vocabulary};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[default]
    DigitSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    #[serde(default)]
    pub kind: TaskKind,
    pub num_terms: usize,
    #[serde(default = "default_modulus")]
    pub modulus: u32,
    pub num_prompts: usize,
    pub prior_strength: f64,
    /// Standard deviation of the answer-context logit noise.
    #[serde(default = "default_prior_noise")]
    pub prior_noise: f64,
    /// Distinct generation positions the policy can tell apart.
    pub response_len_budget: usize,
}

fn default_modulus() -> u32 {
    10
}

fn default_prior_noise() -> f64 {
    TaskSpec::DEFAULT_PRIOR_NOISE
}

impl TaskSpec {
    pub const DEFAULT_PRIOR_NOISE: f64 = 1.7;
    pub const HARD_MODE_PRIOR: f64 = 0.15;

    pub fn digit_sum(num_terms: usize, num_prompts: usize, prior_strength: f64) -> Self {
        Self {
            kind: TaskKind::DigitSum,
            num_terms,
            modulus: 10,
            num_prompts,
            prior_strength,
            prior_noise: Self::DEFAULT_PRIOR_NOISE,
            response_len_budget: 2 * num_terms + 6,
        }
    }

    /// Low prior competence: early votes agree rarely.
    pub fn hard_mode(num_terms: usize, num_prompts: usize) -> Self {
        Self::digit_sum(num_terms, num_prompts, Self::HARD_MODE_PRIOR)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_terms == 0 {
            return Err(invalid("num_terms must be at least 1"));
        }
        if self.num_prompts == 0 {
            return Err(invalid("num_prompts must be at least 1"));
        }
        if !(2..=10).contains(&self.modulus) {
            return Err(invalid("modulus must lie in 2..=10 so answers are one digit"));
        }
        if !(0.0..=1.0).contains(&self.prior_strength) {
            return Err(invalid("prior_strength must lie in [0, 1]"));
        }
        if !(self.prior_noise >= 0.0 && self.prior_noise.is_finite()) {
            return Err(invalid("prior_noise must be finite and non-negative"));
        }
        if self.response_len_budget < 2 * self.num_terms + 3 {
            return Err(invalid(format!(
                "response_len_budget must be at least {} to hold restatement, pivot, answer and EOS",
                2 * self.num_terms + 3
            )));
        }
        Ok(())
    }

    /// Number of distinct prompts, saturating.
    pub fn prompt_space(&self) -> usize {
        10usize.checked_pow(self.num_terms as u32).unwrap_or(usize::MAX)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    pub prompts: Vec<Vec<TokenId>>,
    pub truths: Vec<String>,
}

impl PromptSet {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    /// `(prompt, true digit)` pairs for seeding a prior.
    pub fn labeled(&self) -> Vec<(Vec<TokenId>, u32)> {
        self.prompts
            .iter()
            .zip(&self.truths)
            .map(|(p, t)| (p.clone(), t.parse().expect("truths are single digits")))
            .collect()
    }
}

fn prompt_from_index(mut idx: usize, terms: usize) -> Vec<TokenId> {
    let mut digits = vec![0u32; terms];
    for d in digits.iter_mut().rev() {
        *d = (idx % 10) as u32;
        idx /= 10;
    }
    let mut out = Vec::with_capacity(2 * terms);
    for (i, d) in digits.into_iter().enumerate() {
        if i > 0 {
            out.push(Vocabulary::PLUS);
        }
        out.push(TokenId(d));
    }
    out.push(Vocabulary::EQUALS);
    out
}

/// Distinct prompts drawn without replacement, listed in index order. A
/// request for the whole space returns it exhaustively.
pub fn build_prompt_set(spec: &TaskSpec, rng: &mut RngStream) -> Result<PromptSet> {
    spec.validate()?;
    let space = spec.prompt_space();
    if spec.num_prompts > space {
        return Err(Error::SizeExceeded { requested: spec.num_prompts, available: space });
    }
    let mut picks: Vec<usize> = if spec.num_prompts == space {
        (0..space).collect()
    } else {
        index::sample(rng, space, spec.num_prompts).into_vec()
    };
    picks.sort_unstable();
    let prompts: Vec<Vec<TokenId>> = picks.iter().map(|&i| prompt_from_index(i, spec.num_terms)).collect();
    let truths = prompts.iter().map(|p| true_answer(p, spec)).collect::<Result<Vec<_>>>()?;
    Ok(PromptSet { prompts, truths })
}

/// `(Σ digits) mod modulus` for a well-formed prompt.
pub fn true_answer(prompt: &[TokenId], spec: &TaskSpec) -> Result<String> {
    let malformed = || invalid(format!("malformed prompt {prompt:?}"));
    let (last, body) = prompt.split_last().ok_or_else(malformed)?;
    if *last != Vocabulary::EQUALS || body.len() != 2 * spec.num_terms - 1 {
        return Err(malformed());
    }
    let mut sum = 0u32;
    for (i, &t) in body.iter().enumerate() {
        if i % 2 == 0 {
            if t.0 >= Vocabulary::DIGITS {
                return Err(malformed());
            }
            sum += t.0;
        } else if t != Vocabulary::PLUS {
            return Err(malformed());
        }
    }
    Ok((sum % spec.modulus).to_string())
}

/// Fraction of prompts whose greedy response carries the true answer.
pub fn pass_at_1(params: &PolicyParams, prompts: &PromptSet, vocab: &Vocabulary, max_len: usize) -> Result<f64> {
    if prompts.is_empty() {
        return Err(invalid("empty prompt set"));
    }
    // greedy decoding never touches the stream
    let mut rng = RngStream::new(0, 0);
    let mut hits = 0usize;
    for (p, truth) in prompts.prompts.iter().zip(&prompts.truths) {
        let r = sample_response(params, p, max_len, Decoding::Greedy, &mut rng)?;
        if extract_answer(&r, vocab).as_deref() == Some(truth.as_str()) {
            hits += 1;
        }
    }
    Ok(hits as f64 / prompts.len() as f64)
}
