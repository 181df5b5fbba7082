//! Rollout engines: fully parallel sampling and entropy-fork trees.
//!
//! A tree samples one trunk, picks its `N` most uncertain positions, and
//! regrows `B` branches from each of them. A branch keeps the trunk tokens
//! strictly before its fork position and re-decides the fork token itself.
//! Only the trunk forks, so a tree always has `1 + B·N` leaves when the trunk
//! offers at least `N` eligible positions.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::policy::{continue_response, sample_response, Decoding, PolicyParams};
use crate::primitives::{Response, RngStream, TokenId};

/// Per-position uncertainty used to rank fork candidates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForkScore {
    /// Shannon entropy of the step distribution.
    #[default]
    Entropy,
    /// Surprisal `−log π(y_t)` of the token that was sampled.
    Surprisal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EtmrParams {
    pub trees: usize,
    pub forks: usize,
    pub branches: usize,
    pub score: ForkScore,
}

impl EtmrParams {
    pub fn new(trees: usize, forks: usize, branches: usize) -> Self {
        Self { trees, forks, branches, score: ForkScore::Entropy }
    }

    fn validate(&self) -> Result<()> {
        if self.trees == 0 {
            return Err(invalid("ETMR needs at least one tree"));
        }
        if self.branches == 0 {
            return Err(invalid("ETMR needs at least one branch per fork"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutSource {
    Parallel,
    Etmr(EtmrParams),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetStats {
    pub leaves: usize,
    /// Newly sampled tokens; inherited prefixes are not counted.
    pub tokens_generated: usize,
    /// Tokens a parallel rollout with the same leaves would have sampled.
    pub tokens_parallel_equiv: usize,
}

impl BudgetStats {
    pub fn of(responses: &[Response]) -> Self {
        Self {
            leaves: responses.len(),
            tokens_generated: responses.iter().map(Response::generated_len).sum(),
            tokens_parallel_equiv: responses.iter().map(Response::len).sum(),
        }
    }

    pub fn measured_ratio(&self) -> f64 {
        self.tokens_generated as f64 / self.tokens_parallel_equiv as f64
    }

    pub fn merge(&mut self, other: &BudgetStats) {
        self.leaves += other.leaves;
        self.tokens_generated += other.tokens_generated;
        self.tokens_parallel_equiv += other.tokens_parallel_equiv;
    }
}

/// The leaves sampled for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    prompt: Vec<TokenId>,
    responses: Vec<Response>,
    source: RolloutSource,
    budget: BudgetStats,
}

impl RolloutGroup {
    pub fn new(prompt: Vec<TokenId>, responses: Vec<Response>, source: RolloutSource) -> Result<Self> {
        if responses.is_empty() {
            return Err(invalid("rollout group must be non-empty"));
        }
        let budget = BudgetStats::of(&responses);
        Ok(Self { prompt, responses, source, budget })
    }

    pub fn prompt(&self) -> &[TokenId] {
        &self.prompt
    }

    pub fn responses(&self) -> &[Response] {
        &self.responses
    }

    pub fn source(&self) -> RolloutSource {
        self.source
    }

    pub fn budget(&self) -> BudgetStats {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Keeps the listed leaves, in the given order. The budget still
    /// describes the rollout that produced the group.
    pub fn select(&self, indices: &[usize]) -> RolloutGroup {
        RolloutGroup {
            prompt: self.prompt.clone(),
            responses: indices.iter().map(|&i| self.responses[i].clone()).collect(),
            source: self.source,
            budget: self.budget,
        }
    }
}

/// `G` independent samples, each from substream `i` of `rng`.
pub fn parallel_rollout(
    params: &PolicyParams,
    prompt: &[TokenId],
    group_size: usize,
    max_len: usize,
    decoding: Decoding,
    rng: &RngStream,
) -> Result<RolloutGroup> {
    if group_size == 0 {
        return Err(invalid("group size must be at least 1"));
    }
    let responses = (0..group_size)
        .map(|i| sample_response(params, prompt, max_len, decoding, &mut rng.substream(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    RolloutGroup::new(prompt.to_vec(), responses, RolloutSource::Parallel)
}

fn fork_scores(trunk: &Response, score: ForkScore) -> Vec<f64> {
    match score {
        ForkScore::Entropy => trunk.entropies().to_vec(),
        ForkScore::Surprisal => trunk.log_probs().iter().map(|lp| -lp).collect(),
    }
}

/// Positions of the `n` highest-scoring trunk tokens in ascending order.
/// A terminating `EOS` is never a candidate; ties go to the earlier position.
pub fn select_fork_points(trunk: &Response, n: usize, score: ForkScore) -> Vec<usize> {
    let scores = fork_scores(trunk, score);
    let eligible = if trunk.terminated_by_eos() { trunk.len() - 1 } else { trunk.len() };
    let mut order: Vec<usize> = (0..eligible).collect();
    // stable sort keeps earlier positions first among equal scores
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(n);
    order.sort_unstable();
    order
}

/// One entropy-fork tree.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTree {
    pub trunk: Response,
    /// `(position, score)` for each fork, ascending by position.
    pub fork_points: Vec<(usize, f64)>,
    /// Branches tagged with the fork position they grew from.
    pub branches: Vec<(usize, Response)>,
}

impl RolloutTree {
    pub fn leaves(&self) -> impl Iterator<Item = &Response> {
        std::iter::once(&self.trunk).chain(self.branches.iter().map(|(_, r)| r))
    }

    pub fn leaf_count(&self) -> usize {
        1 + self.branches.len()
    }
}

#[allow(clippy::too_many_arguments)]
/// Samples a trunk on `rng.substream(0)` and branches on
/// `rng.substream_path([1 + fork, branch])`.
pub fn grow_tree(
    params: &PolicyParams,
    prompt: &[TokenId],
    forks: usize,
    branches: usize,
    score: ForkScore,
    max_len: usize,
    decoding: Decoding,
    rng: &RngStream,
) -> Result<RolloutTree> {
    let trunk = sample_response(params, prompt, max_len, decoding, &mut rng.substream(0))?;
    let scores = fork_scores(&trunk, score);
    let positions = select_fork_points(&trunk, forks, score);
    let mut grown = Vec::with_capacity(positions.len() * branches);
    for (f, &pos) in positions.iter().enumerate() {
        for b in 0..branches {
            let mut branch_rng = rng.substream_path(&[1 + f as u64, b as u64]);
            let leaf = continue_response(params, prompt, &trunk, pos, max_len, decoding, &mut branch_rng)?;
            grown.push((pos, leaf));
        }
    }
    let fork_points = positions.iter().map(|&p| (p, scores[p])).collect();
    Ok(RolloutTree { trunk, fork_points, branches: grown })
}

/// Entropy-fork tree majority rollout: `M` trees, each contributing its trunk
/// and branches as leaves.
pub fn etmr_trees(
    params: &PolicyParams,
    prompt: &[TokenId],
    etmr: &EtmrParams,
    max_len: usize,
    decoding: Decoding,
    rng: &RngStream,
) -> Result<Vec<RolloutTree>> {
    etmr.validate()?;
    (0..etmr.trees)
        .map(|i| {
            grow_tree(params, prompt, etmr.forks, etmr.branches, etmr.score, max_len, decoding, &rng.substream(i as u64))
        })
        .collect()
}

pub fn etmr_rollout(
    params: &PolicyParams,
    prompt: &[TokenId],
    etmr: &EtmrParams,
    max_len: usize,
    decoding: Decoding,
    rng: &RngStream,
) -> Result<RolloutGroup> {
    let trees = etmr_trees(params, prompt, etmr, max_len, decoding, rng)?;
    let leaves: Vec<Response> = trees.iter().flat_map(|t| t.leaves().cloned()).collect();
    RolloutGroup::new(prompt.to_vec(), leaves, RolloutSource::Etmr(*etmr))
}

/// `M · (1 + B·N)`.
pub fn leaf_count(trees: usize, forks: usize, branches: usize) -> usize {
    trees * (1 + branches * forks)
}

/// Expected tokens sampled by one tree when forks sit at `k/(N+1)` of the
/// way through a response of mean length `len`: `len · (1 + B·N/2)`.
pub fn expected_tree_tokens(len: f64, forks: usize, branches: usize) -> f64 {
    let n = forks as f64;
    let fraction_sum: f64 = (1..=forks).map(|k| k as f64 / (n + 1.0)).sum();
    len * (1.0 + branches as f64 * fraction_sum)
}

/// `(1 + B·N/2) / (1 + B·N)`: tree tokens over parallel tokens, same leaves.
///
/// ```
/// use ettrl::rollout::{expected_token_ratio, leaf_count};
/// assert_eq!(leaf_count(12, 2, 2), 60);
/// assert!((expected_token_ratio(2, 2) - 0.6).abs() < 1e-12);
/// ```
pub fn expected_token_ratio(forks: usize, branches: usize) -> f64 {
    let bn = (branches * forks) as f64;
    (1.0 + 0.5 * bn) / (1.0 + bn)
}

pub fn measured_token_ratio(group: &RolloutGroup) -> f64 {
    group.budget().measured_ratio()
}
