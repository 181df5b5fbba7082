//! The test-time training loop.
//!
//! Random streams, all derived from `RngStream::new(seed, 0)`:
//!
//! | path            | use                              |
//! |-----------------|----------------------------------|
//! | `[1]`           | prompt sampling                  |
//! | `[2]`           | prior noise                      |
//! | `[3, e, j, 0]`  | rollout for prompt `j`, episode `e` |
//! | `[3, e, j, 1]`  | downsampling for the same group  |
//!
//! Rollouts for different prompts run concurrently against a frozen copy of
//! the policy. Updates are then applied one prompt at a time in prompt order.
//! Every context key carries its prompt's fingerprint, so one prompt's update
//! never touches another prompt's rows and the result is identical to a
//! fully sequential pass.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rayon::prelude::*;

use crate::advantage::{group_advantages, response_entropy, shape, grpo_gradient, GrpoBatch};
use crate::error::{Error, Result};
use crate::labeling::{
    extract_answer, majority_vote, reward_accuracy, rewards_ground_truth, rewards_min_entropy, rewards_ttrl,
    Answer, RewardMode, RewardVector,
};
use crate::policy::{init_with_prior, Decoding, PolicyGradient, PolicyParams, PriorSpec};
use crate::primitives::{RngStream, Vocabulary};
use crate::rollout::{etmr_rollout, parallel_rollout, BudgetStats, RolloutGroup};
use crate::tasks::{build_prompt_set, pass_at_1, PromptSet};

use super::checkpoint::{save_checkpoint, Checkpoint};
use super::config::{DownsampleStrategy, ExperimentConfig, RolloutMode};
use super::metrics::{emit_metrics, EpisodeMetrics, MetricsSink, Summary};

const PROMPT_STREAM: u64 = 1;
const PRIOR_STREAM: u64 = 2;
const EPISODE_STREAM: u64 = 3;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// Everything that changes from one episode to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub params: PolicyParams,
    pub next_episode: u64,
    pub seed: u64,
}

/// A configured run: the prompt set, its starting policy and the truths used
/// for diagnostics.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    vocab: Vocabulary,
    prompts: PromptSet,
    /// Truths used for metrics and `ground_truth` rewards. Normally equal to
    /// `prompts.truths`; replaceable for isolation audits.
    diagnostics: PromptSet,
}

struct PromptOutcome {
    gradient: PolicyGradient,
    budget: BudgetStats,
    majority_ratio: f64,
    label_correct: bool,
    reward_accuracy: f64,
    entropy_sum: f64,
    responses: usize,
    positive_advantage: Option<f64>,
    degenerate: bool,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let root = RngStream::new(config.seed, 0);
        let prompts = build_prompt_set(&config.task, &mut root.substream(PROMPT_STREAM))?;
        Ok(Self { config, vocab: Vocabulary::default(), diagnostics: prompts.clone(), prompts })
    }

    /// Replaces the truths seen by metrics and by `ground_truth` rewards.
    pub fn with_diagnostic_truths(mut self, truths: Vec<String>) -> Result<Self> {
        if truths.len() != self.prompts.len() {
            return Err(Error::InvalidArgument(format!(
                "{} truths for {} prompts",
                truths.len(),
                self.prompts.len()
            )));
        }
        self.diagnostics.truths = truths;
        Ok(self)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// The prior policy, before any update.
    pub fn initial_state(&self) -> Result<TrainingState> {
        let task = &self.config.task;
        let root = RngStream::new(self.config.seed, 0);
        let params = init_with_prior(
            &self.prompts.labeled(),
            &self.vocab,
            task.response_len_budget as u32,
            &PriorSpec::new(task.prior_strength, task.prior_noise),
            &mut root.substream(PRIOR_STREAM),
        )?;
        Ok(TrainingState { params, next_episode: 0, seed: self.config.seed })
    }

    /// Accepts a loaded checkpoint if it belongs to this run.
    pub fn resume(&self, checkpoint: Checkpoint) -> Result<TrainingState> {
        let state = checkpoint.state;
        if state.seed != self.config.seed {
            return Err(Error::InvalidConfig(format!(
                "checkpoint seed {} differs from config seed {}",
                state.seed, self.config.seed
            )));
        }
        let task = &self.config.task;
        if state.params.vocab_size() != self.vocab.size()
            || state.params.bucket_count() != task.response_len_budget as u32
        {
            return Err(Error::InvalidConfig("checkpoint policy shape does not match the config".into()));
        }
        Ok(state)
    }

    /// Greedy pass@1 against the diagnostic truths.
    pub fn evaluate(&self, params: &PolicyParams) -> Result<f64> {
        pass_at_1(params, &self.diagnostics, &self.vocab, self.config.max_len)
    }

    fn decoding(&self) -> Result<Decoding> {
        Decoding::sample(self.config.temperature)
    }

    fn rollout(&self, params: &PolicyParams, j: usize, rng: &RngStream) -> Result<RolloutGroup> {
        let prompt = &self.prompts.prompts[j];
        let c = &self.config;
        match c.rollout_mode {
            RolloutMode::Parallel => parallel_rollout(params, prompt, c.g_vote, c.max_len, self.decoding()?, rng),
            RolloutMode::Etmr => etmr_rollout(params, prompt, &c.etmr(), c.max_len, self.decoding()?, rng),
        }
    }

    fn prompt_outcome(&self, params: &PolicyParams, j: usize, episode_rng: &RngStream) -> Result<PromptOutcome> {
        let c = &self.config;
        let group = self.rollout(params, j, &episode_rng.substream_path(&[j as u64, 0]))?;
        let answers: Vec<Answer> = group.responses().iter().map(|r| extract_answer(r, &self.vocab)).collect();
        // the label comes from the full group, before any downsampling
        let vote = majority_vote(&answers)?;
        let truth = &self.diagnostics.truths[j];
        let true_rewards = rewards_ground_truth(&answers, truth);
        let vote_rewards = rewards_ttrl(&answers, &vote.label);
        let rewards = match c.reward_mode {
            RewardMode::TtrlVote => vote_rewards.clone(),
            RewardMode::GroundTruth => true_rewards.clone(),
            RewardMode::MinEntropy => rewards_min_entropy(group.responses(), c.min_entropy_beta)?,
        };
        let judged = if rewards.mode.is_binary() { &rewards } else { &vote_rewards };
        let accuracy = reward_accuracy(judged, &true_rewards)?;

        let mut ds_rng = episode_rng.substream_path(&[j as u64, 1]);
        let keep = downsample_indices(group.len(), c.g_train, c.downsample, &rewards, &mut ds_rng);
        let train = group.select(&keep);
        let train_rewards = rewards.select(&keep);
        let adv = group_advantages(&train_rewards)?;

        let positives: Vec<f64> = adv
            .per_response
            .iter()
            .zip(&train_rewards.values)
            .filter(|&(&a, &r)| if train_rewards.mode.is_binary() { r > 0.0 } else { a > 0.0 })
            .map(|(&a, _)| a)
            .collect();
        let positive_advantage =
            (!positives.is_empty()).then(|| positives.iter().sum::<f64>() / positives.len() as f64);

        let entropies = train.responses().iter().map(response_entropy).collect::<Result<Vec<_>>>()?;
        let (shaped, degenerate) = shape(&adv, &entropies, &c.shaping)?;
        let batch = GrpoBatch {
            prompt: train.prompt(),
            responses: train.responses(),
            advantages: &shaped,
            temperature: c.temperature,
        };
        let gradient = grpo_gradient(params, &batch, c.grpo.clip_eps)?;

        Ok(PromptOutcome {
            gradient,
            budget: group.budget(),
            majority_ratio: vote.majority_ratio,
            label_correct: vote.label.as_deref() == Some(truth.as_str()),
            reward_accuracy: accuracy,
            entropy_sum: group.responses().iter().map(|r| r.mean_entropy()).sum(),
            responses: group.len(),
            positive_advantage,
            degenerate,
        })
    }

    /// One pass over the prompt set with one update per prompt. On error the
    /// state is left untouched.
    pub fn run_episode(&self, state: &mut TrainingState) -> Result<EpisodeMetrics> {
        if state.seed != self.config.seed {
            return Err(Error::InvalidConfig("state seed differs from config seed".into()));
        }
        let e = state.next_episode;
        let episode_rng = RngStream::new(state.seed, 0).substream_path(&[EPISODE_STREAM, e]);
        let frozen = &state.params;
        let outcomes = (0..self.prompts.len())
            .into_par_iter()
            .map(|j| self.prompt_outcome(frozen, j, &episode_rng))
            .collect::<Result<Vec<_>>>()?;

        let lr = self.config.lr_at(e as usize);
        let mut params = state.params.clone();
        for o in &outcomes {
            params.apply_gradient(&o.gradient, lr)?;
        }
        let pass = self.evaluate(&params)?;

        let n = outcomes.len() as f64;
        let mut budget = BudgetStats::default();
        outcomes.iter().for_each(|o| budget.merge(&o.budget));
        let positives: Vec<f64> = outcomes.iter().filter_map(|o| o.positive_advantage).collect();
        let metrics = EpisodeMetrics {
            episode: e,
            majority_ratio_mean: outcomes.iter().map(|o| o.majority_ratio).sum::<f64>() / n,
            label_accuracy: outcomes.iter().filter(|o| o.label_correct).count() as f64 / n,
            reward_accuracy_mean: outcomes.iter().map(|o| o.reward_accuracy).sum::<f64>() / n,
            pass_at_1: pass,
            mean_response_entropy: outcomes.iter().map(|o| o.entropy_sum).sum::<f64>()
                / outcomes.iter().map(|o| o.responses).sum::<usize>() as f64,
            tokens_generated: budget.tokens_generated as u64,
            measured_token_ratio: budget.measured_ratio(),
            mean_positive_advantage: if positives.is_empty() {
                0.0
            } else {
                positives.iter().sum::<f64>() / positives.len() as f64
            },
            degenerate_res_groups: outcomes.iter().filter(|o| o.degenerate).count() as u64,
        };
        state.params = params;
        state.next_episode = e + 1;
        Ok(metrics)
    }

    /// Runs the remaining episodes from `state`, writing the metrics stream,
    /// the summary and the final checkpoint into `out_dir`.
    pub fn train_from(&self, mut state: TrainingState, out_dir: &Path) -> Result<TrainReport> {
        std::fs::create_dir_all(out_dir).map_err(|source| Error::Io { path: out_dir.into(), source })?;
        let metrics_path = out_dir.join(METRICS_FILE);
        let file = File::create(&metrics_path).map_err(|source| Error::Io { path: metrics_path.clone(), source })?;
        let mut sink = MetricsSink::new(BufWriter::new(file));

        let initial_pass_at_1 = self.evaluate(&state.params)?;
        let mut records = Vec::new();
        while state.next_episode < self.config.episodes as u64 {
            let m = self.run_episode(&mut state)?;
            emit_metrics(&m, &mut sink)?;
            records.push(m);
        }
        drop(sink);

        let last = records.last();
        let summary = Summary {
            episodes: records.len() as u64,
            initial_pass_at_1,
            final_pass_at_1: last.map_or(initial_pass_at_1, |m| m.pass_at_1),
            total_tokens_generated: records.iter().map(|m| m.tokens_generated).sum(),
            mean_token_ratio: (!records.is_empty())
                .then(|| records.iter().map(|m| m.measured_token_ratio).sum::<f64>() / records.len() as f64),
            final_majority_ratio_mean: last.map(|m| m.majority_ratio_mean),
            final_label_accuracy: last.map(|m| m.label_accuracy),
        };
        let summary_path = out_dir.join(SUMMARY_FILE);
        let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
        std::fs::write(&summary_path, text).map_err(|source| Error::Io { path: summary_path, source })?;

        let checkpoint_path = out_dir.join(CHECKPOINT_FILE);
        save_checkpoint(&state, &self.config.to_json(), &checkpoint_path)?;

        Ok(TrainReport { summary, metrics: records, state, out_dir: out_dir.to_path_buf() })
    }
}

/// What [`train`] leaves behind, also written under `out_dir`.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub summary: Summary,
    pub metrics: Vec<EpisodeMetrics>,
    pub state: TrainingState,
    pub out_dir: PathBuf,
}

impl TrainReport {
    pub fn metrics_path(&self) -> PathBuf {
        self.out_dir.join(METRICS_FILE)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out_dir.join(CHECKPOINT_FILE)
    }
}

/// Fresh run of `config` from its prior.
pub fn train(config: &ExperimentConfig, out_dir: &Path) -> Result<TrainReport> {
    let exp = Experiment::new(config.clone())?;
    let state = exp.initial_state()?;
    exp.train_from(state, out_dir)
}

/// Sorted indices of the responses kept for training. Groups no larger than
/// `keep` pass through whole.
///
/// Stratified sampling keeps the positive/negative split of a binary reward
/// vector (rounded to nearest); continuous rewards fall back to uniform.
pub fn downsample_indices(
    len: usize,
    keep: usize,
    strategy: DownsampleStrategy,
    rewards: &RewardVector,
    rng: &mut RngStream,
) -> Vec<usize> {
    if len <= keep {
        return (0..len).collect();
    }
    let mut picked = match strategy {
        DownsampleStrategy::StratifiedByReward if rewards.mode.is_binary() => {
            let (pos, neg): (Vec<usize>, Vec<usize>) = (0..len).partition(|&i| rewards.values[i] > 0.0);
            let want_pos = ((keep * pos.len()) as f64 / len as f64).round() as usize;
            let want_pos = want_pos.clamp(keep.saturating_sub(neg.len()), pos.len().min(keep));
            let mut out: Vec<usize> = index::sample(rng, pos.len(), want_pos).into_iter().map(|i| pos[i]).collect();
            out.extend(index::sample(rng, neg.len(), keep - want_pos).into_iter().map(|i| neg[i]));
            out
        }
        _ => index::sample(rng, len, keep).into_vec(),
    };
    picked.sort_unstable();
    picked
}

/// Uniform subset of `keep` responses without replacement.
pub fn downsample_group(group: &RolloutGroup, keep: usize, rng: &mut RngStream) -> Result<RolloutGroup> {
    if keep == 0 {
        return Err(Error::InvalidArgument("G_train must be at least 1".into()));
    }
    let n = group.len();
    let idx = if n <= keep { (0..n).collect() } else {
        let mut v = index::sample(rng, n, keep).into_vec();
        v.sort_unstable();
        v
    };
    Ok(group.select(&idx))
}
