//! Group-relative advantages, the two shaping rules, and the clipped
//! surrogate loss with its exact gradient.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::labeling::RewardVector;
use crate::policy::{log_prob, response_contexts, PolicyGradient, PolicyParams};
use crate::primitives::{Response, TokenId};

/// Mean of the per-token entropies.
pub fn response_entropy(response: &Response) -> Result<f64> {
    if response.is_empty() {
        return Err(invalid("empty response"));
    }
    Ok(response.mean_entropy())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapingMode {
    #[default]
    None,
    Clip,
    Res,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapingConfig {
    #[serde(default)]
    pub mode: ShapingMode,
    #[serde(default = "default_clip_bound")]
    pub clip_bound: f64,
    #[serde(default = "default_res_clip")]
    pub res_deviation_clip: f64,
}

fn default_clip_bound() -> f64 {
    2.0
}

fn default_res_clip() -> f64 {
    0.2
}

impl Default for ShapingConfig {
    fn default() -> Self {
        Self { mode: ShapingMode::None, clip_bound: 2.0, res_deviation_clip: 0.2 }
    }
}

impl ShapingConfig {
    pub fn with_mode(mode: ShapingMode) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_bound > 0.0 && self.clip_bound.is_finite()) {
            return Err(invalid("clip_bound must be positive"));
        }
        if !(self.res_deviation_clip > 0.0 && self.res_deviation_clip.is_finite()) {
            return Err(invalid("res_deviation_clip must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrpoConfig {
    #[serde(default = "default_eps")]
    pub clip_eps: f64,
}

fn default_eps() -> f64 {
    0.2
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self { clip_eps: 0.2 }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(invalid(format!("clip_eps must lie in (0, 1), got {}", self.clip_eps)));
        }
        Ok(())
    }
}

/// One advantage per response, broadcast to each of its tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageVector {
    pub per_response: Vec<f64>,
    pub shaped_by: ShapingMode,
}

impl AdvantageVector {
    pub fn len(&self) -> usize {
        self.per_response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_response.is_empty()
    }
}

/// `(R_i − μ) / σ` with population statistics. A group with `σ = 0` carries
/// no signal and gets all-zero advantages.
pub fn group_advantages(rewards: &RewardVector) -> Result<AdvantageVector> {
    let g = rewards.len();
    if g < 2 {
        return Err(invalid(format!("group-relative advantages need at least 2 responses, got {g}")));
    }
    let n = g as f64;
    let mean = rewards.values.iter().sum::<f64>() / n;
    let var = rewards.values.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let per_response = if sd == 0.0 {
        vec![0.0; g]
    } else {
        rewards.values.iter().map(|r| (r - mean) / sd).collect()
    };
    Ok(AdvantageVector { per_response, shaped_by: ShapingMode::None })
}

/// Elementwise clamp to `[−β, β]`.
pub fn shape_clip(adv: &AdvantageVector, bound: f64) -> AdvantageVector {
    AdvantageVector {
        per_response: adv.per_response.iter().map(|a| a.clamp(-bound, bound)).collect(),
        shaped_by: ShapingMode::Clip,
    }
}

/// Relative-entropy scaling: `Y_i = 1 + clip((H̄ − H_i)/H̄, −dc, dc)`,
/// output `Y_i · A_i`. Low-entropy (confident) responses are amplified.
///
/// Returns the shaped vector and whether the group was degenerate (`H̄ = 0`),
/// in which case the advantages pass through unchanged.
pub fn shape_res(adv: &AdvantageVector, entropies: &[f64], deviation_clip: f64) -> Result<(AdvantageVector, bool)> {
    if entropies.len() != adv.len() {
        return Err(invalid(format!("{} entropies for {} advantages", entropies.len(), adv.len())));
    }
    if entropies.iter().any(|&h| h.is_nan() || h < 0.0) {
        return Err(invalid("entropies must be non-negative"));
    }
    let mean = group_mean(entropies);
    if mean == 0.0 {
        let mut out = adv.clone();
        out.shaped_by = ShapingMode::Res;
        return Ok((out, true));
    }
    let per_response = adv
        .per_response
        .iter()
        .zip(entropies)
        .map(|(a, h)| (1.0 + ((mean - h) / mean).clamp(-deviation_clip, deviation_clip)) * a)
        .collect();
    Ok((AdvantageVector { per_response, shaped_by: ShapingMode::Res }, false))
}

// Exact for constant input, so equal entropies give factors of exactly 1.
fn group_mean(xs: &[f64]) -> f64 {
    match xs.first() {
        Some(&x0) if xs.iter().all(|&x| x == x0) => x0,
        _ => xs.iter().sum::<f64>() / xs.len().max(1) as f64,
    }
}

/// The multipliers `Y_i` used by [`shape_res`].
///
/// ```
/// assert_eq!(ettrl::advantage::res_factors(&[0.5, 1.5], 0.2), vec![1.2, 0.8]);
/// ```
pub fn res_factors(entropies: &[f64], deviation_clip: f64) -> Vec<f64> {
    let mean = group_mean(entropies);
    if mean == 0.0 {
        return vec![1.0; entropies.len()];
    }
    entropies.iter().map(|h| 1.0 + ((mean - h) / mean).clamp(-deviation_clip, deviation_clip)).collect()
}

/// Applies exactly one shaping rule. Returns the degenerate-group flag from
/// [`shape_res`] (always false for the other modes).
pub fn shape(adv: &AdvantageVector, entropies: &[f64], config: &ShapingConfig) -> Result<(AdvantageVector, bool)> {
    match config.mode {
        ShapingMode::None => Ok((adv.clone(), false)),
        ShapingMode::Clip => Ok((shape_clip(adv, config.clip_bound), false)),
        ShapingMode::Res => shape_res(adv, entropies, config.res_deviation_clip),
    }
}

/// Everything the surrogate needs for one prompt's training group.
///
/// Behavior log-probabilities are the ones recorded in each response.
#[derive(Debug, Clone, Copy)]
pub struct GrpoBatch<'a> {
    pub prompt: &'a [TokenId],
    pub responses: &'a [Response],
    pub advantages: &'a AdvantageVector,
    pub temperature: f64,
}

impl GrpoBatch<'_> {
    fn validate(&self) -> Result<()> {
        if self.responses.is_empty() {
            return Err(invalid("empty training group"));
        }
        if self.responses.len() != self.advantages.len() {
            return Err(invalid(format!(
                "{} responses but {} advantages",
                self.responses.len(),
                self.advantages.len()
            )));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(invalid("temperature must be positive"));
        }
        Ok(())
    }
}

fn surrogate_term(ratio: f64, adv: f64, eps: f64) -> (f64, bool) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

/// `−(1/G) Σ_i (1/|o_i|) Σ_t min(r·A, clip(r, 1−ε, 1+ε)·A)`, no KL term.
pub fn grpo_loss(params: &PolicyParams, batch: &GrpoBatch<'_>, eps: f64) -> Result<f64> {
    batch.validate()?;
    let t = batch.temperature;
    let mut total = 0.0;
    for (resp, &adv) in batch.responses.iter().zip(&batch.advantages.per_response) {
        let ctxs = response_contexts(params, batch.prompt, resp.tokens());
        let mut sum = 0.0;
        for ((ctx, &tok), &old) in ctxs.iter().zip(resp.tokens()).zip(resp.log_probs()) {
            let ratio = (log_prob(params, ctx, tok, t) - old).exp();
            sum += surrogate_term(ratio, adv, eps).0;
        }
        total += sum / resp.len() as f64;
    }
    Ok(-total / batch.responses.len() as f64)
}

/// Exact gradient of [`grpo_loss`] with respect to the logit table. A token
/// whose clipped term is the active minimum contributes nothing.
pub fn grpo_gradient(params: &PolicyParams, batch: &GrpoBatch<'_>, eps: f64) -> Result<PolicyGradient> {
    batch.validate()?;
    let t = batch.temperature;
    let g = batch.responses.len() as f64;
    let mut grad = PolicyGradient::new();
    for (resp, &adv) in batch.responses.iter().zip(&batch.advantages.per_response) {
        if adv == 0.0 {
            continue;
        }
        let ctxs = response_contexts(params, batch.prompt, resp.tokens());
        let weight = -adv / (g * resp.len() as f64);
        for ((ctx, &tok), &old) in ctxs.iter().zip(resp.tokens()).zip(resp.log_probs()) {
            let ratio = (log_prob(params, ctx, tok, t) - old).exp();
            if !surrogate_term(ratio, adv, eps).1 {
                continue;
            }
            // ∇ r = r · (e_tok − π_T) / T
            let mut row = params.step_probs(ctx, t);
            row.iter_mut().for_each(|p| *p = -*p / t);
            row[tok.index()] += 1.0 / t;
            grad.add_row(*ctx, &row, weight * ratio);
        }
    }
    Ok(grad)
}
