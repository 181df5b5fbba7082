//! Answer extraction, majority-vote pseudo-labels and reward estimators.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::primitives::{Response, Vocabulary};

/// Extracted answer; `None` when the response holds no digit.
pub type Answer = Option<String>;

/// The last digit token of the response, rendered as text.
pub fn extract_answer(response: &Response, vocab: &Vocabulary) -> Answer {
    response
        .tokens()
        .iter()
        .rev()
        .find_map(|&t| vocab.digit_value(t))
        .map(|d| d.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoteResult {
    pub label: Answer,
    pub counts: BTreeMap<String, usize>,
    /// `counts[label] / total`, where `total` includes unextractable answers.
    pub majority_ratio: f64,
    pub extractable_count: usize,
    pub total: usize,
}

/// Plurality over extractable answers, smallest answer text on ties.
///
/// ```
/// use ettrl::labeling::majority_vote;
/// let v = majority_vote(&[Some("3".into()), None, Some("3".into()), Some("1".into())]).unwrap();
/// assert_eq!(v.label.as_deref(), Some("3"));
/// assert_eq!(v.majority_ratio, 0.5);
/// ```
pub fn majority_vote(answers: &[Answer]) -> Result<VoteResult> {
    if answers.is_empty() {
        return Err(invalid("cannot vote over an empty answer list"));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for a in answers.iter().flatten() {
        *counts.entry(a.clone()).or_default() += 1;
    }
    let extractable_count = counts.values().sum();
    // BTreeMap iterates in ascending key order, so the first maximum wins ties
    let mut best: Option<(&String, usize)> = None;
    for (k, &c) in &counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((k, c));
        }
    }
    let (label, top) = match best {
        Some((k, c)) => (Some(k.clone()), c),
        None => (None, 0),
    };
    Ok(VoteResult {
        label,
        majority_ratio: top as f64 / answers.len() as f64,
        counts,
        extractable_count,
        total: answers.len(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    GroundTruth,
    #[default]
    TtrlVote,
    MinEntropy,
}

impl RewardMode {
    pub fn is_binary(self) -> bool {
        !matches!(self, RewardMode::MinEntropy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardVector {
    pub values: Vec<f64>,
    pub mode: RewardMode,
}

impl RewardVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> RewardVector {
        RewardVector { values: indices.iter().map(|&i| self.values[i]).collect(), mode: self.mode }
    }
}

fn indicator(answers: &[Answer], target: Option<&str>, mode: RewardMode) -> RewardVector {
    let values = answers
        .iter()
        .map(|a| match (a.as_deref(), target) {
            (Some(a), Some(t)) if a == t => 1.0,
            _ => 0.0,
        })
        .collect();
    RewardVector { values, mode }
}

/// 1 where the answer matches the vote label, else 0.
pub fn rewards_ttrl(answers: &[Answer], label: &Answer) -> RewardVector {
    indicator(answers, label.as_deref(), RewardMode::TtrlVote)
}

/// 1 where the answer matches the true answer, else 0.
pub fn rewards_ground_truth(answers: &[Answer], truth: &str) -> RewardVector {
    indicator(answers, Some(truth), RewardMode::GroundTruth)
}

/// `−β · mean token entropy` per response.
pub fn rewards_min_entropy(responses: &[Response], beta: f64) -> Result<RewardVector> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(invalid(format!("min-entropy beta must be positive, got {beta}")));
    }
    let values = responses.iter().map(|r| -beta * r.mean_entropy()).collect();
    Ok(RewardVector { values, mode: RewardMode::MinEntropy })
}

/// Fraction of positions where the estimated binary reward equals the true one.
pub fn reward_accuracy(estimated: &RewardVector, truth: &RewardVector) -> Result<f64> {
    if estimated.len() != truth.len() {
        return Err(invalid(format!("length mismatch: {} vs {}", estimated.len(), truth.len())));
    }
    if estimated.is_empty() {
        return Err(invalid("empty reward vectors"));
    }
    if !estimated.mode.is_binary() || !truth.mode.is_binary() {
        return Err(invalid("reward accuracy needs binary rewards"));
    }
    let agree = estimated.values.iter().zip(&truth.values).filter(|(a, b)| a == b).count();
    Ok(agree as f64 / estimated.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::TokenId;
    use proptest::prelude::*;

    fn a(s: &str) -> Answer {
        Some(s.to_string())
    }

    fn resp(tokens: &[TokenId], eos: bool) -> Response {
        let n = tokens.len();
        Response::new(tokens.to_vec(), vec![-0.1; n], vec![0.1; n], 0, eos).unwrap()
    }

    #[test]
    fn extraction_takes_last_digit() {
        let v = Vocabulary::default();
        assert_eq!(extract_answer(&resp(&[TokenId(7), Vocabulary::EOS], true), &v), a("7"));
        assert_eq!(
            extract_answer(&resp(&[Vocabulary::PLUS, Vocabulary::EQUALS, Vocabulary::EOS], true), &v),
            None
        );
        assert_eq!(extract_answer(&resp(&[TokenId(3), TokenId(5), TokenId(9)], false), &v), a("9"));
        let with_connector = resp(&[TokenId(4), TokenId(13), Vocabulary::EOS], true);
        assert_eq!(extract_answer(&with_connector, &v), a("4"));
    }

    #[test]
    fn voting_examples() {
        let v = majority_vote(&[a("7"), a("7"), a("3")]).unwrap();
        assert_eq!(v.label, a("7"));
        assert!((v.majority_ratio - 2.0 / 3.0).abs() < 1e-15);

        let tie = majority_vote(&[a("5"), a("3")]).unwrap();
        assert_eq!(tie.label, a("3"));
        assert_eq!(tie.majority_ratio, 0.5);

        let absent = majority_vote(&[None, a("5"), a("5"), a("3")]).unwrap();
        assert_eq!(absent.label, a("5"));
        assert_eq!(absent.majority_ratio, 0.5);
        assert_eq!(absent.extractable_count, 3);

        let none = majority_vote(&[None, None]).unwrap();
        assert_eq!(none.label, None);
        assert_eq!(none.majority_ratio, 0.0);

        assert!(majority_vote(&[]).is_err());
    }

    #[test]
    fn reward_examples() {
        let answers = [a("7"), a("7"), a("3")];
        assert_eq!(rewards_ttrl(&answers, &a("7")).values, vec![1.0, 1.0, 0.0]);
        assert_eq!(rewards_ttrl(&answers, &None).values, vec![0.0; 3]);
        let same = vec![a("2"); 4];
        let vote = majority_vote(&same).unwrap();
        assert_eq!(vote.majority_ratio, 1.0);
        assert_eq!(rewards_ttrl(&same, &vote.label).values, vec![1.0; 4]);

        assert_eq!(rewards_ground_truth(&[a("4"), a("4")], "4").values, vec![1.0, 1.0]);
        assert_eq!(rewards_ground_truth(&[a("4"), a("9")], "4").values, vec![1.0, 0.0]);
        assert_eq!(rewards_ground_truth(&[None], "4").values, vec![0.0]);
    }

    #[test]
    fn min_entropy_examples() {
        let r = Response::new(vec![TokenId(1)], vec![-0.1], vec![2.0], 0, false).unwrap();
        assert_eq!(rewards_min_entropy(&[r], 0.5).unwrap().values, vec![-1.0]);
        let flat = Response::new(vec![TokenId(1); 3], vec![0.0; 3], vec![0.0; 3], 0, false).unwrap();
        assert_eq!(rewards_min_entropy(std::slice::from_ref(&flat), 1.0).unwrap().values, vec![0.0]);
        let ln2 = Response::new(vec![TokenId(1); 2], vec![-0.7; 2], vec![2f64.ln(); 2], 0, false).unwrap();
        let v = rewards_min_entropy(&[ln2], 1.0).unwrap().values[0];
        assert!((v + std::f64::consts::LN_2).abs() < 1e-12);
        assert!(rewards_min_entropy(&[flat], 0.0).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let est = RewardVector { values: vec![1.0, 0.0, 0.0], mode: RewardMode::TtrlVote };
        let truth = RewardVector { values: vec![0.0, 0.0, 0.0], mode: RewardMode::GroundTruth };
        assert!((reward_accuracy(&est, &truth).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(reward_accuracy(&est, &est).unwrap(), 1.0);
        let short = RewardVector { values: vec![0.0], mode: RewardMode::GroundTruth };
        assert!(reward_accuracy(&est, &short).is_err());

        // wrong label "3" against truth "7": the "5" response is a lucky hit
        let answers = [a("3"), a("5"), a("7")];
        let est = rewards_ttrl(&answers, &a("3"));
        let truth = rewards_ground_truth(&answers, "7");
        assert_eq!(est.values, vec![1.0, 0.0, 0.0]);
        assert_eq!(truth.values, vec![0.0, 0.0, 1.0]);
        assert!((reward_accuracy(&est, &truth).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    fn answer_strategy() -> impl Strategy<Value = Answer> {
        prop_oneof![Just(None), (0u32..10).prop_map(|d| Some(d.to_string()))]
    }

    proptest! {
        #[test]
        fn vote_is_permutation_invariant(
            answers in prop::collection::vec(answer_strategy(), 1..40),
            seed in any::<u64>(),
        ) {
            let base = majority_vote(&answers).unwrap();
            let mut shuffled = answers.clone();
            // deterministic Fisher-Yates from the seed
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (s >> 33) as usize % (i + 1);
                shuffled.swap(i, j);
            }
            let other = majority_vote(&shuffled).unwrap();
            prop_assert_eq!(base.label, other.label);
            prop_assert_eq!(base.majority_ratio, other.majority_ratio);
        }

        #[test]
        fn every_response_gets_one_reward(answers in prop::collection::vec(answer_strategy(), 1..40)) {
            let vote = majority_vote(&answers).unwrap();
            let est = rewards_ttrl(&answers, &vote.label);
            let gt = rewards_ground_truth(&answers, "4");
            prop_assert_eq!(est.len(), answers.len());
            prop_assert_eq!(gt.len(), answers.len());
            prop_assert!(est.values.iter().chain(&gt.values).all(|&v| v == 0.0 || v == 1.0));
        }
    }
}
