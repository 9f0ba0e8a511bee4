//! Ranking metrics and the format-gated multi-view reward.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranking::{FormatStatus, PassageId, RankedList};

/// Graded labels for one query. Unjudged ids have grade 0.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueryJudgments(HashMap<PassageId, u32>);

impl QueryJudgments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, id: impl Into<String>, grade: u32) {
        self.0.insert(id.into(), grade);
    }

    pub fn grade(&self, id: &str) -> u32 {
        self.0.get(id).copied().unwrap_or(0)
    }

    pub fn is_relevant(&self, id: &str) -> bool {
        self.grade(id) > 0
    }

    pub fn relevant_count(&self) -> usize {
        self.0.values().filter(|&&g| g > 0).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Positive grades, highest first.
    fn ideal_gains(&self) -> Vec<u32> {
        let mut grades: Vec<u32> = self.0.values().copied().filter(|&g| g > 0).collect();
        grades.sort_unstable_by(|a, b| b.cmp(a));
        grades
    }
}

impl<S: Into<String>> FromIterator<(S, u32)> for QueryJudgments {
    fn from_iter<I: IntoIterator<Item = (S, u32)>>(iter: I) -> Self {
        Self(iter.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

/// Judgments for a whole query set, keyed by qid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelevanceJudgments(BTreeMap<String, QueryJudgments>);

impl RelevanceJudgments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, qid: impl Into<String>, id: impl Into<String>, grade: u32) {
        self.0.entry(qid.into()).or_default().set(id, grade);
    }

    pub fn query(&self, qid: &str) -> Option<&QueryJudgments> {
        self.0.get(qid)
    }

    pub fn insert_query(&mut self, qid: impl Into<String>, judgments: QueryJudgments) {
        self.0.insert(qid.into(), judgments);
    }

    pub fn contains(&self, qid: &str) -> bool {
        self.0.contains_key(qid)
    }

    pub fn qids(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

/// Discount for 1-based rank `r`.
fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// NDCG@k with exponential gain. Zero when nothing is relevant.
pub fn ndcg_at_k<'a, I>(ranked: I, judgments: &QueryJudgments, k: usize) -> f64
where
    I: IntoIterator<Item = &'a str>,
{
    let ideal: f64 = judgments
        .ideal_gains()
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| gain(g) * discount(i + 1))
        .sum();
    if ideal == 0.0 {
        return 0.0;
    }
    let dcg: f64 = ranked
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, id)| gain(judgments.grade(id)) * discount(i + 1))
        .sum();
    dcg / ideal
}

/// Fraction of all relevant ids that appear in the first `k`.
pub fn recall_at_k<'a, I>(ranked: I, judgments: &QueryJudgments, k: usize) -> f64
where
    I: IntoIterator<Item = &'a str>,
{
    let total = judgments.relevant_count();
    if total == 0 {
        return 0.0;
    }
    let mut seen = HashSet::new();
    let hits = ranked
        .into_iter()
        .take(k)
        .filter(|id| judgments.is_relevant(id) && seen.insert(*id))
        .count();
    hits as f64 / total as f64
}

/// Truncated rank-biased overlap between two permutations of the same ids.
///
/// `(1 - p) * sum_{d=1..L} p^(d-1) * |A[..d] ∩ B[..d]| / d`, which tops out
/// at `1 - p^L` for identical lists.
pub fn rbo(rollout: &RankedList, gold: &RankedList, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("rbo persistence must be in (0,1), got {p}")));
    }
    if !rollout.is_permutation_of(gold.ids()) {
        return Err(Error::invalid(
            "rbo requires two rankings over the same id set",
        ));
    }
    let mut in_a: HashSet<&str> = HashSet::with_capacity(rollout.len());
    let mut in_b: HashSet<&str> = HashSet::with_capacity(gold.len());
    let mut overlap = 0usize;
    let mut weight = 1.0;
    let mut sum = 0.0;
    for (d, (a, b)) in rollout.iter().zip(gold.iter()).enumerate() {
        if a == b {
            overlap += 1;
        } else {
            if in_b.contains(a) {
                overlap += 1;
            }
            if in_a.contains(b) {
                overlap += 1;
            }
        }
        in_a.insert(a);
        in_b.insert(b);
        sum += weight * overlap as f64 / (d + 1) as f64;
        weight *= p;
    }
    Ok((1.0 - p) * sum)
}

/// Weights for the multi-view reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Weight on Recall@k.
    pub phi: f64,
    /// Weight on RBO against the gold list.
    pub gamma: f64,
    /// RBO persistence.
    pub p: f64,
    pub k: usize,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            phi: 0.2,
            gamma: 0.1,
            p: 0.9,
            k: 10,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi >= 0.0 && self.gamma >= 0.0) {
            return Err(Error::invalid("phi and gamma must be non-negative"));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::invalid("rbo persistence must be in (0,1)"));
        }
        if self.k == 0 {
            return Err(Error::invalid("metric cutoff must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub ndcg: f64,
    pub recall: f64,
    pub rbo: f64,
    pub r_m: f64,
    #[serde(rename = "final")]
    pub final_reward: f64,
    pub format_status: FormatStatus,
}

/// `NDCG@k + phi * Recall@k + gamma * RBO`, with `final_reward` set as if
/// the format were good. Use [`score_rollout`] to apply gating.
pub fn multi_view_reward(
    rollout: &RankedList,
    judgments: &QueryJudgments,
    gold: &RankedList,
    params: &RewardParams,
) -> Result<RewardBreakdown> {
    params.validate()?;
    let ndcg = ndcg_at_k(rollout.iter(), judgments, params.k);
    let recall = recall_at_k(rollout.iter(), judgments, params.k);
    let rbo = rbo(rollout, gold, params.p)?;
    let r_m = ndcg + params.phi * recall + params.gamma * rbo;
    Ok(RewardBreakdown {
        ndcg,
        recall,
        rbo,
        r_m,
        final_reward: r_m,
        format_status: FormatStatus::BothGood,
    })
}

/// Format gate: the metric reward only counts when both formats are good.
pub fn final_reward(status: FormatStatus, r_m: f64) -> f64 {
    match status {
        FormatStatus::BothGood => r_m,
        FormatStatus::OutputOnly => 0.0,
        FormatStatus::Bad => -1.0,
    }
}

/// Full reward for one rollout whose ranking has already been extracted.
pub fn score_rollout(
    status: FormatStatus,
    rollout: &RankedList,
    judgments: &QueryJudgments,
    gold: &RankedList,
    params: &RewardParams,
) -> Result<RewardBreakdown> {
    let mut breakdown = multi_view_reward(rollout, judgments, gold, params)?;
    breakdown.format_status = status;
    breakdown.final_reward = final_reward(status, breakdown.r_m);
    Ok(breakdown)
}
