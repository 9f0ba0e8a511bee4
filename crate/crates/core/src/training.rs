//! Supervised and GRPO objectives evaluated over recorded token log-probabilities.
//!
//! Nothing here touches model weights. Callers supply per-token log-probs
//! gathered elsewhere and get back loss values that match what a trainer
//! would optimize.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor on the group standard deviation used for advantage normalization.
pub const ADVANTAGE_STD_FLOOR: f64 = 1e-8;

/// Log-probabilities of generated tokens. Every entry is finite and `<= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TokenLogProbs(Vec<f64>);

impl TokenLogProbs {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v > 0.0)
        {
            return Err(Error::invalid(format!(
                "token log-prob {i} is {v}; expected a finite value <= 0"
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for TokenLogProbs {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<TokenLogProbs> for Vec<f64> {
    fn from(lp: TokenLogProbs) -> Self {
        lp.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SftLoss {
    pub sum: f64,
    pub mean: f64,
}

/// Negative log-likelihood of a label sequence.
pub fn sft_nll(label_logprobs: &TokenLogProbs) -> Result<SftLoss> {
    if label_logprobs.is_empty() {
        return Err(Error::invalid("sft loss needs at least one token"));
    }
    let sum = -label_logprobs.values().iter().sum::<f64>();
    Ok(SftLoss {
        sum,
        mean: sum / label_logprobs.len() as f64,
    })
}

/// Standardizes rewards within a group using the population std.
/// Zero-variance groups get all-zero advantages.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= ADVANTAGE_STD_FLOOR {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

/// Per-token KL estimate `exp(ref - pol) - (ref - pol) - 1`, always `>= 0`.
pub fn kl_token(policy_lp: f64, ref_lp: f64) -> f64 {
    let d = ref_lp - policy_lp;
    // exp_m1 keeps precision when d is tiny
    d.exp_m1() - d
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub reward: f64,
    pub policy: TokenLogProbs,
    pub reference: TokenLogProbs,
    /// Ratio denominator when it differs from the reference (e.g. a
    /// pre-update policy snapshot). Defaults to `reference`.
    pub behavior: Option<TokenLogProbs>,
    advantage: Option<f64>,
}

impl Rollout {
    pub fn new(reward: f64, policy: TokenLogProbs, reference: TokenLogProbs) -> Result<Self> {
        if policy.len() != reference.len() {
            return Err(Error::invalid(format!(
                "policy has {} tokens but reference has {}",
                policy.len(),
                reference.len()
            )));
        }
        if policy.is_empty() {
            return Err(Error::invalid("rollout has no tokens"));
        }
        Ok(Self {
            reward,
            policy,
            reference,
            behavior: None,
            advantage: None,
        })
    }

    pub fn with_behavior(mut self, behavior: TokenLogProbs) -> Result<Self> {
        if behavior.len() != self.policy.len() {
            return Err(Error::invalid(format!(
                "behavior log-probs have {} tokens, policy has {}",
                behavior.len(),
                self.policy.len()
            )));
        }
        self.behavior = Some(behavior);
        Ok(self)
    }

    /// Sets a precomputed advantage instead of deriving it from the group.
    pub fn with_advantage(mut self, advantage: f64) -> Self {
        self.advantage = Some(advantage);
        self
    }

    pub fn advantage(&self) -> Option<f64> {
        self.advantage
    }

    fn ratio_denominator(&self) -> &TokenLogProbs {
        self.behavior.as_ref().unwrap_or(&self.reference)
    }
}

/// Rollouts sampled for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    rollouts: Vec<Rollout>,
}

impl RolloutGroup {
    pub fn new(rollouts: Vec<Rollout>) -> Result<Self> {
        if rollouts.is_empty() {
            return Err(Error::invalid("rollout group is empty"));
        }
        Ok(Self { rollouts })
    }

    pub fn rollouts(&self) -> &[Rollout] {
        &self.rollouts
    }

    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.rollouts.iter().map(|r| r.reward).collect()
    }

    /// Fills every rollout's advantage from the group's rewards.
    pub fn compute_advantages(&mut self) -> &mut Self {
        let adv = group_advantages(&self.rewards());
        for (r, a) in self.rollouts.iter_mut().zip(adv) {
            r.advantage = Some(a);
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrpoParams {
    /// Clip half-width on the likelihood ratio.
    pub epsilon: f64,
    /// KL penalty weight.
    pub beta: f64,
}

impl Default for GrpoParams {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            beta: 0.001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrpoLoss {
    pub loss: f64,
    pub surrogate: f64,
    pub kl: f64,
}

/// Clipped surrogate term for one token.
pub fn clipped_term(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// `loss = -surrogate + beta * kl`, each averaged per sequence then per group.
pub fn grpo_loss(group: &RolloutGroup, params: &GrpoParams) -> Result<GrpoLoss> {
    if params.epsilon.is_nan() || params.epsilon <= 0.0 || params.beta.is_nan() || params.beta < 0.0 {
        return Err(Error::invalid("grpo needs epsilon > 0 and beta >= 0"));
    }
    let g = group.len() as f64;
    let mut surrogate = 0.0;
    let mut kl = 0.0;
    for (i, r) in group.rollouts().iter().enumerate() {
        let adv = r.advantage.ok_or_else(|| {
            Error::invalid(format!("rollout {i} has no advantage; call compute_advantages"))
        })?;
        let denom = r.ratio_denominator();
        let n = r.policy.len() as f64;
        let mut seq_surrogate = 0.0;
        let mut seq_kl = 0.0;
        for t in 0..r.policy.len() {
            let pol = r.policy.values()[t];
            let ratio = (pol - denom.values()[t]).exp();
            seq_surrogate += clipped_term(ratio, adv, params.epsilon);
            seq_kl += kl_token(pol, r.reference.values()[t]);
        }
        surrogate += seq_surrogate / n;
        kl += seq_kl / n;
    }
    surrogate /= g;
    kl /= g;
    Ok(GrpoLoss {
        loss: -surrogate + params.beta * kl,
        surrogate,
        kl,
    })
}

/// One line of a rollout log-prob file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub group: String,
    pub reward: f64,
    pub policy_logprobs: Vec<f64>,
    pub ref_logprobs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub old_logprobs: Option<Vec<f64>>,
}

impl RolloutRecord {
    pub fn into_rollout(self) -> Result<Rollout> {
        let rollout = Rollout::new(
            self.reward,
            TokenLogProbs::new(self.policy_logprobs)?,
            TokenLogProbs::new(self.ref_logprobs)?,
        )?;
        match self.old_logprobs {
            Some(old) => rollout.with_behavior(TokenLogProbs::new(old)?),
            None => Ok(rollout),
        }
    }
}

/// Reads line-delimited [`RolloutRecord`]s and groups them by `group`.
/// Blank lines are skipped; errors carry the 1-based line number.
pub fn read_rollout_groups<R: BufRead>(
    reader: R,
    source: &str,
) -> Result<BTreeMap<String, RolloutGroup>> {
    let mut grouped: BTreeMap<String, Vec<Rollout>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RolloutRecord = serde_json::from_str(&line)
            .map_err(|e| Error::load(source, i + 1, e.to_string()))?;
        let group = rec.group.clone();
        let rollout = rec
            .into_rollout()
            .map_err(|e| Error::load(source, i + 1, e.to_string()))?;
        grouped.entry(group).or_default().push(rollout);
    }
    grouped
        .into_iter()
        .map(|(k, v)| Ok((k, RolloutGroup::new(v)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(v: &[f64]) -> TokenLogProbs {
        TokenLogProbs::new(v.to_vec()).unwrap()
    }

    #[test]
    fn sft_cases() {
        let l = sft_nll(&lp(&[-1.0, -2.0, -3.0])).unwrap();
        assert_eq!((l.sum, l.mean), (6.0, 2.0));
        assert_eq!(sft_nll(&lp(&[0.0])).unwrap().sum, 0.0);
        let half = 0.5f64.ln();
        let l = sft_nll(&lp(&[half; 4])).unwrap();
        assert!((l.sum - 4.0 * 2f64.ln()).abs() < 1e-12);
        assert!((l.sum - 2.7726).abs() < 1e-4);
        assert!(sft_nll(&lp(&[])).is_err());
    }

    #[test]
    fn logprob_validation() {
        assert!(TokenLogProbs::new(vec![0.1]).is_err());
        assert!(TokenLogProbs::new(vec![f64::NAN]).is_err());
        assert!(TokenLogProbs::new(vec![f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn advantage_cases() {
        assert_eq!(group_advantages(&[1.0; 4]), vec![0.0; 4]);
        assert_eq!(group_advantages(&[0.0, 1.0]), vec![-1.0, 1.0]);
        assert_eq!(group_advantages(&[0.7]), vec![0.0]);
    }

    #[test]
    fn kl_cases() {
        assert_eq!(kl_token(-1.0, -1.0), 0.0);
        let v = kl_token(-1.0, -2.0);
        assert!((v - (-1f64).exp()).abs() < 1e-15);
    }

    fn group_of(advantage_rewards: &[f64], policy: &[f64], reference: &[f64]) -> RolloutGroup {
        let rollouts = advantage_rewards
            .iter()
            .map(|&r| Rollout::new(r, lp(policy), lp(reference)).unwrap())
            .collect();
        RolloutGroup::new(rollouts).unwrap()
    }

    #[test]
    fn identical_policy_gives_negative_advantage() {
        let mut g = group_of(&[0.0, 1.0], &[-0.5, -1.5], &[-0.5, -1.5]);
        g.compute_advantages();
        // advantages are -1 and 1, so the mean surrogate is 0
        let out = grpo_loss(&g, &GrpoParams::default()).unwrap();
        assert_eq!(out.kl, 0.0);
        assert!(out.loss.abs() < 1e-15);
    }

    #[test]
    fn constant_advantage_without_divergence() {
        let mut g = group_of(&[0.3, 0.3], &[-0.5, -1.5], &[-0.5, -1.5]);
        for r in &mut g.rollouts {
            r.advantage = Some(0.75);
        }
        let out = grpo_loss(&g, &GrpoParams::default()).unwrap();
        assert!((out.loss + 0.75).abs() < 1e-12);
        assert_eq!(out.kl, 0.0);
    }

    #[test]
    fn missing_advantages_rejected() {
        let g = group_of(&[0.3], &[-0.5], &[-0.5]);
        assert!(grpo_loss(&g, &GrpoParams::default()).is_err());
    }

    #[test]
    fn positive_advantage_clips_large_ratio() {
        let eps = 0.2;
        let ratio = 1.0 + 2.0 * eps;
        assert!((clipped_term(ratio, 1.0, eps) - (1.0 + eps)).abs() < 1e-15);
        let mut g = RolloutGroup::new(vec![Rollout::new(
            1.0,
            lp(&[ratio.ln() - 1.0]),
            lp(&[-1.0]),
        )
        .unwrap()])
        .unwrap();
        g.rollouts[0].advantage = Some(1.0);
        let out = grpo_loss(&g, &GrpoParams { epsilon: eps, beta: 0.0 }).unwrap();
        assert!((out.surrogate - (1.0 + eps)).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(Rollout::new(0.0, lp(&[-1.0]), lp(&[-1.0, -2.0])).is_err());
        let r = Rollout::new(0.0, lp(&[-1.0]), lp(&[-1.0])).unwrap();
        assert!(r.with_behavior(lp(&[-1.0, -1.0])).is_err());
    }

    #[test]
    fn behavior_logprobs_replace_ratio_denominator() {
        let r = Rollout::new(0.0, lp(&[-1.0]), lp(&[-2.0]))
            .unwrap()
            .with_behavior(lp(&[-1.0]))
            .unwrap();
        let mut g = RolloutGroup::new(vec![r]).unwrap();
        g.rollouts[0].advantage = Some(1.0);
        let out = grpo_loss(&g, &GrpoParams { epsilon: 0.2, beta: 1.0 }).unwrap();
        // ratio is 1 against the behavior policy; KL still uses the reference
        assert!((out.surrogate - 1.0).abs() < 1e-15);
        assert!((out.kl - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn rollout_file_groups_records() {
        let data = r#"{"group":"g1","reward":1.0,"policy_logprobs":[-0.1],"ref_logprobs":[-0.1]}

{"group":"g1","reward":0.0,"policy_logprobs":[-0.2],"ref_logprobs":[-0.3],"old_logprobs":[-0.2]}
{"group":"g0","reward":0.5,"policy_logprobs":[-0.2,-0.4],"ref_logprobs":[-0.3,-0.1]}
"#;
        let groups = read_rollout_groups(data.as_bytes(), "mem").unwrap();
        assert_eq!(groups.keys().collect::<Vec<_>>(), ["g0", "g1"]);
        assert_eq!(groups["g1"].len(), 2);
        assert!(groups["g1"].rollouts()[1].behavior.is_some());

        let bad = r#"{"group":"g","reward":1.0,"policy_logprobs":[0.5],"ref_logprobs":[-0.1]}"#;
        let err = read_rollout_groups(bad.as_bytes(), "mem").unwrap_err();
        assert!(err.to_string().starts_with("mem:1:"), "{err}");
    }
}
