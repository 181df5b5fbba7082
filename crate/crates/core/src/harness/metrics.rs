//! Line-delimited episode records and the run summary.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One record per episode. Field order here is the on-disk key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeMetrics {
    pub episode: u64,
    /// Mean over prompts of the vote's majority ratio.
    pub majority_ratio_mean: f64,
    /// Fraction of prompts whose vote label is the true answer.
    pub label_accuracy: f64,
    /// Mean over prompts of the agreement between learner rewards and true
    /// rewards (vote rewards stand in when the learner reward is continuous).
    pub reward_accuracy_mean: f64,
    /// Greedy pass@1 after this episode's updates.
    pub pass_at_1: f64,
    pub mean_response_entropy: f64,
    pub tokens_generated: u64,
    pub measured_token_ratio: f64,
    /// Mean unshaped advantage over positively rewarded training responses.
    pub mean_positive_advantage: f64,
    /// Groups where relative-entropy shaping fell back to identity.
    pub degenerate_res_groups: u64,
}

impl EpisodeMetrics {
    fn check_ranges(&self) -> std::result::Result<(), String> {
        let fractions = [
            ("majority_ratio_mean", self.majority_ratio_mean),
            ("label_accuracy", self.label_accuracy),
            ("reward_accuracy_mean", self.reward_accuracy_mean),
            ("pass_at_1", self.pass_at_1),
        ];
        for (name, v) in fractions {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if !(self.measured_token_ratio > 0.0 && self.measured_token_ratio <= 1.0) {
            return Err(format!("measured_token_ratio = {} outside (0, 1]", self.measured_token_ratio));
        }
        if self.mean_response_entropy.is_nan() || self.mean_response_entropy < 0.0 {
            return Err("mean_response_entropy must be non-negative".into());
        }
        Ok(())
    }
}

/// Run-level results written next to the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub episodes: u64,
    pub initial_pass_at_1: f64,
    pub final_pass_at_1: f64,
    pub total_tokens_generated: u64,
    /// `None` when no episode ran.
    pub mean_token_ratio: Option<f64>,
    pub final_majority_ratio_mean: Option<f64>,
    pub final_label_accuracy: Option<f64>,
}

/// Destination for episode records. Each write is flushed so an aborted run
/// leaves every completed episode on disk.
pub struct MetricsSink<W: Write> {
    inner: W,
}

impl<W: Write> MetricsSink<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// Writes `metrics` as one JSON object followed by `\n`.
pub fn emit_metrics<W: Write>(metrics: &EpisodeMetrics, sink: &mut MetricsSink<W>) -> Result<()> {
    let line = serde_json::to_string(metrics).expect("metrics serialize");
    sink.inner.write_all(line.as_bytes()).map_err(Error::WriteFailure)?;
    sink.inner.write_all(b"\n").map_err(Error::WriteFailure)?;
    sink.inner.flush().map_err(Error::WriteFailure)
}

/// Parses and schema-checks one record: every key present, no extras,
/// fractions in range.
pub fn parse_metrics_record(line: &str) -> Result<EpisodeMetrics> {
    let m: EpisodeMetrics =
        serde_json::from_str(line).map_err(|e| Error::InvalidArgument(format!("metrics record: {e}")))?;
    m.check_ranges().map_err(|e| Error::InvalidArgument(format!("metrics record: {e}")))?;
    Ok(m)
}

pub fn read_metrics_file(path: &Path) -> Result<Vec<EpisodeMetrics>> {
    let io = |source| Error::Io { path: path.into(), source };
    let file = std::fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(io)?;
        if !line.is_empty() {
            out.push(parse_metrics_record(&line)?);
        }
    }
    Ok(out)
}
