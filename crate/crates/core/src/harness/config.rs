use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::advantage::{GrpoConfig, ShapingConfig};
use crate::error::{Error, Result};
use crate::labeling::RewardMode;
use crate::rollout::{leaf_count, EtmrParams, ForkScore};
use crate::tasks::TaskSpec;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    #[default]
    Parallel,
    Etmr,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownsampleStrategy {
    /// Uniform without replacement.
    #[default]
    Uniform,
    /// Keeps the reward mix of the full group (binary rewards only).
    StratifiedByReward,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from `lr` to `floor · lr` over the configured episodes.
    Cosine { floor: f64 },
}

/// Every knob of a run. Unknown keys are rejected when parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    pub rollout_mode: RolloutMode,
    /// Responses sampled per prompt for voting (parallel mode).
    #[serde(rename = "G_vote")]
    pub g_vote: usize,
    /// Responses kept per prompt for the gradient step.
    #[serde(rename = "G_train")]
    pub g_train: usize,
    #[serde(rename = "M")]
    pub trees: usize,
    #[serde(rename = "N")]
    pub forks: usize,
    #[serde(rename = "B")]
    pub branches: usize,
    pub fork_score: ForkScore,
    pub temperature: f64,
    pub episodes: usize,
    pub max_len: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub reward_mode: RewardMode,
    pub min_entropy_beta: f64,
    pub shaping: ShapingConfig,
    pub grpo: GrpoConfig,
    pub downsample: DownsampleStrategy,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let task = TaskSpec::digit_sum(3, 50, 0.3);
        Self {
            max_len: task.response_len_budget,
            task,
            rollout_mode: RolloutMode::Parallel,
            g_vote: 64,
            g_train: 32,
            trees: 12,
            forks: 2,
            branches: 2,
            fork_score: ForkScore::Entropy,
            temperature: 0.6,
            episodes: 40,
            lr: Self::DEFAULT_LR,
            lr_schedule: LrSchedule::Constant,
            reward_mode: RewardMode::TtrlVote,
            min_entropy_beta: 1.0,
            shaping: ShapingConfig::default(),
            grpo: GrpoConfig::default(),
            downsample: DownsampleStrategy::Uniform,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub const DEFAULT_LR: f64 = 0.5;

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.into(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn etmr(&self) -> EtmrParams {
        EtmrParams { trees: self.trees, forks: self.forks, branches: self.branches, score: self.fork_score }
    }

    /// Leaves each rollout produces for one prompt.
    pub fn leaves_per_prompt(&self) -> usize {
        match self.rollout_mode {
            RolloutMode::Parallel => self.g_vote,
            RolloutMode::Etmr => leaf_count(self.trees, self.forks, self.branches),
        }
    }

    pub fn lr_at(&self, episode: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine { floor } => {
                let total = self.episodes.max(1) as f64;
                let progress = (episode as f64 / total).min(1.0);
                let scale = floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
                self.lr * scale
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.task.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        self.shaping.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        self.grpo.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if self.g_vote == 0 || self.trees == 0 || self.branches == 0 || self.max_len == 0 {
            return bad("G_vote, M, B and max_len must be at least 1".into());
        }
        if self.g_train < 2 {
            return bad(format!("G_train must be at least 2 for group normalization, got {}", self.g_train));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if let LrSchedule::Cosine { floor } = self.lr_schedule {
            if !(0.0..=1.0).contains(&floor) {
                return bad("cosine floor must lie in [0, 1]".into());
            }
        }
        if !(self.min_entropy_beta.is_finite() && self.min_entropy_beta > 0.0) {
            return bad("min_entropy_beta must be positive".into());
        }
        let leaves = self.leaves_per_prompt();
        if leaves < self.g_train {
            return bad(format!("rollout yields {leaves} leaves per prompt, fewer than G_train = {}", self.g_train));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_protocol() {
        let c = ExperimentConfig::default();
        assert_eq!((c.g_vote, c.g_train), (64, 32));
        assert_eq!((c.trees, c.forks, c.branches), (12, 2, 2));
        assert_eq!(c.temperature, 0.6);
        assert_eq!(c.shaping.clip_bound, 2.0);
        assert_eq!(c.shaping.res_deviation_clip, 0.2);
        assert_eq!(c.grpo.clip_eps, 0.2);
        c.validate().unwrap();
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let c = ExperimentConfig { rollout_mode: RolloutMode::Etmr, seed: 17, ..Default::default() };
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        let text = c.to_json().replacen('{', "{\"bogus\": 1,", 1);
        assert!(matches!(ExperimentConfig::from_json(&text), Err(Error::InvalidConfig(_))));
        let nested = r#"{"shaping": {"mode": "clip", "extra": 2}}"#;
        assert!(ExperimentConfig::from_json(nested).is_err());
        let partial = ExperimentConfig::from_json(r#"{"episodes": 3, "M": 16}"#).unwrap();
        assert_eq!(partial.episodes, 3);
        assert_eq!(partial.trees, 16);
    }

    #[test]
    fn leaf_budget_invariant() {
        let c = ExperimentConfig { rollout_mode: RolloutMode::Etmr, trees: 4, forks: 1, branches: 1, ..Default::default() };
        assert!(c.validate().is_err());
        let p = ExperimentConfig { g_vote: 16, ..Default::default() };
        assert!(p.validate().is_err());
        let t = ExperimentConfig { temperature: 0.0, ..Default::default() };
        assert!(t.validate().is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let c = ExperimentConfig { lr: 2.0, episodes: 10, lr_schedule: LrSchedule::Cosine { floor: 0.1 }, ..Default::default() };
        assert!((c.lr_at(0) - 2.0).abs() < 1e-12);
        assert!((c.lr_at(10) - 0.2).abs() < 1e-12);
        assert!(c.lr_at(5) < 2.0 && c.lr_at(5) > 0.2);
    }
}
