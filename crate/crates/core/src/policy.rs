//! Tabular autoregressive softmax policy.
//!
//! The conditioning context of a step is reduced to a [`ContextKey`]: a digest
//! of the prompt, the previously generated token, and the (clamped) step
//! index. Each key owns one logit vector; keys that were never written read as
//! zeros, i.e. the uniform distribution. Because every step distribution is a
//! plain softmax over a stored vector, log-probabilities and their gradients
//! are exact.

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::primitives::{
    argmax, sample_categorical, ProbDist, Response, RngStream, Temperature, TokenId, Vocabulary,
};
use crate::primitives::softmax_unchecked;

/// 64-bit FNV-1a over the little-endian token ids.
pub fn prompt_fingerprint(prompt: &[TokenId]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for t in prompt {
        for b in t.0.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContextKey {
    pub prompt_fingerprint: u64,
    /// `None` is the start-of-response sentinel.
    pub last_token: Option<TokenId>,
    pub position_bucket: u32,
}

impl ContextKey {
    /// Key for generating position `prefix.len()` after `prefix`.
    pub fn for_step(prompt_fingerprint: u64, prefix: &[TokenId], bucket_count: u32) -> Self {
        let pos = prefix.len() as u32;
        Self {
            prompt_fingerprint,
            last_token: prefix.last().copied(),
            position_bucket: pos.min(bucket_count.saturating_sub(1)),
        }
    }
}

/// How to pick each token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoding {
    /// Argmax at every step (lowest id on ties). Records untempered
    /// log-probabilities and entropies.
    Greedy,
    Sample(Temperature),
}

impl Decoding {
    pub fn sample(t: f64) -> Result<Self> {
        Ok(Decoding::Sample(Temperature::new(t)?))
    }

    fn temperature(self) -> f64 {
        match self {
            Decoding::Greedy => 1.0,
            Decoding::Sample(t) => t.get(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    vocab_size: usize,
    bucket_count: u32,
    logits: BTreeMap<ContextKey, Vec<f64>>,
}

impl PolicyParams {
    /// The uniform policy.
    pub fn uniform(vocab_size: usize, bucket_count: u32) -> Self {
        assert!(vocab_size >= 2 && bucket_count >= 1);
        Self { vocab_size, bucket_count, logits: BTreeMap::new() }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn bucket_count(&self) -> u32 {
        self.bucket_count
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn logits(&self, ctx: &ContextKey) -> Option<&[f64]> {
        self.logits.get(ctx).map(Vec::as_slice)
    }

    pub fn set_logits(&mut self, ctx: ContextKey, logits: Vec<f64>) -> Result<()> {
        if logits.len() != self.vocab_size {
            return Err(invalid(format!(
                "logit vector has {} entries, vocabulary has {}",
                logits.len(),
                self.vocab_size
            )));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NumericFault("non-finite logit".into()));
        }
        self.logits.insert(ctx, logits);
        Ok(())
    }

    /// Entries in key order.
    pub fn entries(&self) -> impl Iterator<Item = (&ContextKey, &[f64])> {
        self.logits.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn key_for(&self, prompt_fingerprint: u64, prefix: &[TokenId]) -> ContextKey {
        ContextKey::for_step(prompt_fingerprint, prefix, self.bucket_count)
    }

    pub(crate) fn step_probs(&self, ctx: &ContextKey, t: f64) -> Vec<f64> {
        match self.logits.get(ctx) {
            Some(l) => softmax_unchecked(l, t),
            None => vec![1.0 / self.vocab_size as f64; self.vocab_size],
        }
    }

    /// `logits[k] -= lr * grad[k]` for every key in `grad`. Validates the
    /// whole gradient before touching any entry.
    pub fn apply_gradient(&mut self, grad: &PolicyGradient, lr: f64) -> Result<()> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(invalid(format!("learning rate must be positive, got {lr}")));
        }
        for (k, g) in &grad.entries {
            if g.len() != self.vocab_size {
                return Err(invalid("gradient row has the wrong width"));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NumericFault(format!("non-finite gradient at {k:?}")));
            }
        }
        for (k, g) in &grad.entries {
            let row = self.logits.entry(*k).or_insert_with(|| vec![0.0; g.len()]);
            for (l, d) in row.iter_mut().zip(g) {
                *l -= lr * d;
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::NumericFault(format!("logits overflowed at {k:?}")));
            }
        }
        Ok(())
    }
}

/// Sparse gradient with respect to the logit table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyGradient {
    entries: BTreeMap<ContextKey, Vec<f64>>,
}

impl PolicyGradient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, ctx: &ContextKey) -> Option<&[f64]> {
        self.entries.get(ctx).map(Vec::as_slice)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&ContextKey, &[f64])> {
        self.entries.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `self[ctx] += scale * row`.
    pub fn add_row(&mut self, ctx: ContextKey, row: &[f64], scale: f64) {
        let acc = self.entries.entry(ctx).or_insert_with(|| vec![0.0; row.len()]);
        for (a, r) in acc.iter_mut().zip(row) {
            *a += scale * r;
        }
    }

    pub fn accumulate(&mut self, other: &PolicyGradient, scale: f64) {
        for (k, row) in &other.entries {
            self.add_row(*k, row, scale);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.values().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Tempered step distribution; unseen contexts are uniform.
pub fn next_token_distribution(params: &PolicyParams, ctx: &ContextKey, t: f64) -> Result<ProbDist> {
    Temperature::new(t)?;
    ProbDist::new(params.step_probs(ctx, t))
}

fn entropy(probs: &[f64]) -> f64 {
    probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum::<f64>().max(0.0)
}

struct Builder {
    tokens: Vec<TokenId>,
    log_probs: Vec<f64>,
    entropies: Vec<f64>,
}

fn generate(
    params: &PolicyParams,
    fingerprint: u64,
    mut out: Builder,
    max_len: usize,
    decoding: Decoding,
    rng: &mut RngStream,
) -> (Builder, bool) {
    let t = decoding.temperature();
    while out.tokens.len() < max_len {
        let ctx = params.key_for(fingerprint, &out.tokens);
        let probs = params.step_probs(&ctx, t);
        let tok = match decoding {
            Decoding::Greedy => argmax(&probs),
            Decoding::Sample(_) => {
                // probs came from a softmax so they are a valid distribution
                let dist = ProbDist::new(probs.clone()).expect("softmax output is normalized");
                sample_categorical(&dist, rng)
            }
        };
        out.log_probs.push(probs[tok.index()].ln().min(0.0));
        out.entropies.push(entropy(&probs));
        out.tokens.push(tok);
        if tok == Vocabulary::EOS {
            return (out, true);
        }
    }
    (out, false)
}

/// Autoregressive generation until `EOS` or `max_len` tokens.
pub fn sample_response(
    params: &PolicyParams,
    prompt: &[TokenId],
    max_len: usize,
    decoding: Decoding,
    rng: &mut RngStream,
) -> Result<Response> {
    if prompt.is_empty() {
        return Err(invalid("empty prompt"));
    }
    if max_len == 0 {
        return Err(invalid("max_len must be at least 1"));
    }
    let fp = prompt_fingerprint(prompt);
    let empty = Builder { tokens: Vec::new(), log_probs: Vec::new(), entropies: Vec::new() };
    let (b, eos) = generate(params, fp, empty, max_len, decoding, rng);
    Response::new(b.tokens, b.log_probs, b.entropies, 0, eos)
}

/// Regenerates from position `prefix_len` of `trunk`, keeping the trunk's
/// tokens and sampling records for positions before it bit-for-bit.
pub fn continue_response(
    params: &PolicyParams,
    prompt: &[TokenId],
    trunk: &Response,
    prefix_len: usize,
    max_len: usize,
    decoding: Decoding,
    rng: &mut RngStream,
) -> Result<Response> {
    if prompt.is_empty() {
        return Err(invalid("empty prompt"));
    }
    if prefix_len >= max_len {
        return Err(invalid(format!("prefix length {prefix_len} must be below max_len {max_len}")));
    }
    if prefix_len > trunk.len() {
        return Err(invalid("prefix longer than trunk"));
    }
    if trunk.tokens()[..prefix_len].contains(&Vocabulary::EOS) {
        return Err(invalid("prefix contains end-of-sequence"));
    }
    let fp = prompt_fingerprint(prompt);
    let start = Builder {
        tokens: trunk.tokens()[..prefix_len].to_vec(),
        log_probs: trunk.log_probs()[..prefix_len].to_vec(),
        entropies: trunk.entropies()[..prefix_len].to_vec(),
    };
    let (b, eos) = generate(params, fp, start, max_len, decoding, rng);
    Response::new(b.tokens, b.log_probs, b.entropies, prefix_len, eos)
}

/// Per-position context keys of a response to `prompt`.
pub fn response_contexts(params: &PolicyParams, prompt: &[TokenId], tokens: &[TokenId]) -> Vec<ContextKey> {
    let fp = prompt_fingerprint(prompt);
    (0..tokens.len()).map(|i| params.key_for(fp, &tokens[..i])).collect()
}

/// `log π_T(token | ctx)` under the current parameters.
pub fn log_prob(params: &PolicyParams, ctx: &ContextKey, token: TokenId, t: f64) -> f64 {
    let logits = params.logits(ctx);
    match logits {
        None => -(params.vocab_size as f64).ln(),
        Some(l) => {
            let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = l.iter().map(|x| ((x - max) / t).exp()).sum::<f64>().ln();
            (l[token.index()] - max) / t - lse
        }
    }
}

/// `∇_logits log π_T(token | ctx) = (e_token − π_T(·|ctx)) / T`, at key `ctx`.
pub fn grad_log_prob(params: &PolicyParams, ctx: &ContextKey, token: TokenId, t: f64) -> PolicyGradient {
    let mut row = params.step_probs(ctx, t);
    row.iter_mut().for_each(|p| *p = -*p / t);
    row[token.index()] += 1.0 / t;
    let mut g = PolicyGradient::new();
    g.add_row(*ctx, &row, 1.0);
    g
}

/// Prior competence for [`init_with_prior`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    /// Sampling probability (T = 1) of the correct digit in each answer context.
    pub strength: f64,
    /// Standard deviation of Gaussian noise added to answer-context logits.
    pub noise: f64,
    /// Logit given to the preferred token of each scaffold context.
    pub format_logit: f64,
}

impl PriorSpec {
    pub const DEFAULT_FORMAT_LOGIT: f64 = 8.0;

    pub fn new(strength: f64, noise: f64) -> Self {
        Self { strength, noise, format_logit: Self::DEFAULT_FORMAT_LOGIT }
    }
}

/// Logit on the correct digit that gives it probability `p0` at T = 1 when
/// every other entry is zero. Below chance the context stays uniform.
pub fn calibrated_logit(p0: f64, vocab_size: usize) -> f64 {
    let chance = 1.0 / vocab_size as f64;
    if p0 <= chance {
        return 0.0;
    }
    let p = p0.min(1.0 - 1e-7);
    (p * (vocab_size as f64 - 1.0) / (1.0 - p)).ln()
}

/// Builds the starting policy for a set of `(prompt, true digit)` pairs.
///
/// The policy writes a response as the restated prompt, one connector
/// token, the answer digit and `EOS`:
///
/// ```text
/// 3 + 4 + 5 =   so   2   <eos>
/// └restated┘  pivot answer
/// ```
///
/// Restatement, pivot and `EOS` contexts prefer their token with logit
/// `format_logit` (connectors share the pivot mass). The answer context
/// behind each connector puts [`calibrated_logit`] on the true digit and
/// receives independent `N(0, noise²)` noise on every entry, so different
/// pivots lead to differently-biased answer distributions.
pub fn init_with_prior(
    tasks: &[(Vec<TokenId>, u32)],
    vocab: &Vocabulary,
    bucket_count: u32,
    prior: &PriorSpec,
    rng: &mut RngStream,
) -> Result<PolicyParams> {
    if !(0.0..=1.0).contains(&prior.strength) {
        return Err(invalid(format!("prior strength {} outside [0, 1]", prior.strength)));
    }
    if !(prior.noise >= 0.0 && prior.noise.is_finite()) {
        return Err(invalid("prior noise must be finite and non-negative"));
    }
    let v = vocab.size();
    let connectors: Vec<TokenId> = vocab.connectors().collect();
    if connectors.is_empty() {
        return Err(invalid("the answer scaffold needs at least one connector token"));
    }
    let mut params = PolicyParams::uniform(v, bucket_count);
    let answer_logit = calibrated_logit(prior.strength, v);
    let one_hot = |tok: TokenId, value: f64| {
        let mut row = vec![0.0; v];
        row[tok.index()] = value;
        row
    };

    for (prompt, truth) in tasks {
        let fp = prompt_fingerprint(prompt);
        let mut prefix: Vec<TokenId> = Vec::new();
        for &tok in prompt {
            params.set_logits(params.key_for(fp, &prefix), one_hot(tok, prior.format_logit))?;
            prefix.push(tok);
        }
        let mut pivot = vec![0.0; v];
        for &c in &connectors {
            pivot[c.index()] = prior.format_logit;
        }
        params.set_logits(params.key_for(fp, &prefix), pivot)?;

        let answer = vocab.digit(*truth);
        for &c in &connectors {
            let mut row = one_hot(answer, answer_logit);
            if prior.noise > 0.0 {
                for x in row.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *x += prior.noise * z;
                }
            }
            prefix.push(c);
            params.set_logits(params.key_for(fp, &prefix), row)?;
            prefix.pop();
        }

        prefix.push(connectors[0]);
        for d in 0..Vocabulary::DIGITS {
            prefix.push(vocab.digit(d));
            params.set_logits(params.key_for(fp, &prefix), one_hot(Vocabulary::EOS, prior.format_logit))?;
            prefix.pop();
        }
    }
    Ok(params)
}
