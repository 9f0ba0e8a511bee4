use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{score_rollout, RewardBreakdown, RewardParams};
use crate::ranking::{parse_ranking, parse_response_for_window, PassageId, RepairReport};
use crate::synthesis::SynthesisRecord;
use crate::training::group_advantages;
use crate::window::ranking_text;

/// One sampled policy response for a labelled training list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutInput {
    pub group: String,
    pub qid: String,
    pub response: String,
    /// Passage order the rollout was prompted with. Defaults to the record's order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passages: Option<Vec<PassageId>>,
}

/// Output line of the reward command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub group: String,
    pub qid: String,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<RewardBreakdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repaired: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn read_rollouts<R: BufRead>(reader: R, source: &str) -> Result<Vec<RolloutInput>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::load(source, i + 1, e.to_string()))?);
    }
    Ok(out)
}

fn score_one(
    rollout: &RolloutInput,
    labels: &HashMap<&str, &SynthesisRecord>,
    params: &RewardParams,
) -> Result<(RewardBreakdown, RepairReport)> {
    let record = labels
        .get(rollout.qid.as_str())
        .ok_or_else(|| Error::invalid(format!("no labelled list for qid {}", rollout.qid)))?;
    let record_ids = record.passage_ids();
    let ids = match &rollout.passages {
        Some(ids) => {
            let mut a = ids.clone();
            let mut b = record_ids.clone();
            a.sort();
            b.sort();
            if a != b {
                return Err(Error::invalid(format!(
                    "rollout passages do not match the labelled list for {}",
                    rollout.qid
                )));
            }
            ids.clone()
        }
        None => record_ids,
    };
    let parsed = parse_response_for_window(&rollout.response, ids.len());
    let (ranking, repair) = parse_ranking(ranking_text(&parsed.answer, &rollout.response), &ids);
    let breakdown = score_rollout(parsed.format_status, &ranking, &record.judgments(), &record.gold, params)?;
    Ok((breakdown, repair))
}

/// Scores every rollout and adds group-relative advantages. A rollout that
/// cannot be scored becomes an error record and is left out of its group.
pub fn cmd_reward(
    rollouts: &[RolloutInput],
    records: &[SynthesisRecord],
    params: &RewardParams,
) -> Result<Vec<RewardRecord>> {
    params.validate()?;
    let labels: HashMap<&str, &SynthesisRecord> = records.iter().map(|r| (r.qid.as_str(), r)).collect();
    let mut out: Vec<RewardRecord> = rollouts
        .iter()
        .map(|r| {
            let mut rec = RewardRecord {
                group: r.group.clone(),
                qid: r.qid.clone(),
                breakdown: None,
                repaired: None,
                advantage: None,
                error: None,
            };
            match score_one(r, &labels, params) {
                Ok((b, repair)) => {
                    rec.breakdown = Some(b);
                    rec.repaired = Some(!repair.is_clean());
                }
                Err(e) => {
                    log::warn!("rollout in group {} for {}: {e}", r.group, r.qid);
                    rec.error = Some(e.to_string());
                }
            }
            rec
        })
        .collect();

    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in out.iter().enumerate() {
        if r.breakdown.is_some() {
            groups.entry(r.group.as_str()).or_default().push(i);
        }
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();
    for members in groups {
        let rewards: Vec<f64> = members
            .iter()
            .map(|&i| out[i].breakdown.as_ref().map_or(0.0, |b| b.final_reward))
            .collect();
        for (&i, a) in members.iter().zip(group_advantages(&rewards)) {
            out[i].advantage = Some(a);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::{format_ranking, RankedList};
    use crate::synthesis::{Domain, RecordPassage};

    fn record() -> SynthesisRecord {
        let ids: Vec<String> = (1..=20).map(|i| format!("p{i}")).collect();
        SynthesisRecord {
            qid: "q".into(),
            query: "x".into(),
            domain: Domain::Coding,
            passages: ids.iter().map(|id| RecordPassage { id: id.clone(), text: "t".into() }).collect(),
            pointwise: ids.iter().enumerate().map(|(i, id)| (id.clone(), u8::from(i < 2))).collect(),
            think: String::new(),
            gold: RankedList::new(ids).unwrap(),
            consistency: 1.0,
        }
    }

    fn rollout(group: &str, response: String) -> RolloutInput {
        RolloutInput {
            group: group.into(),
            qid: "q".into(),
            response,
            passages: None,
        }
    }

    #[test]
    fn gold_rollout_and_gates() {
        let order: Vec<usize> = (1..=20).collect();
        let good = format!("<think>ok</think><answer>{}</answer>", format_ranking(&order));
        let out = cmd_reward(
            &[
                rollout("g", good),
                rollout("g", "<think>t</think><answer>[2] [1]</answer>".into()),
                rollout("g", "nonsense".into()),
            ],
            &[record()],
            &RewardParams::default(),
        )
        .unwrap();
        let finals: Vec<f64> = out.iter().map(|r| r.breakdown.unwrap().final_reward).collect();
        let expected = 1.0 + 0.2 + 0.1 * (1.0 - 0.9f64.powi(20));
        assert!((finals[0] - expected).abs() < 1e-12);
        assert_eq!(finals[1..], [0.0, -1.0]);
        let adv: f64 = out.iter().map(|r| r.advantage.unwrap()).sum();
        assert!(adv.abs() < 1e-12);
    }

    #[test]
    fn identical_rewards_zero_advantage() {
        let out = cmd_reward(
            &[rollout("g", "x".into()), rollout("g", "y".into())],
            &[record()],
            &RewardParams::default(),
        )
        .unwrap();
        assert!(out.iter().all(|r| r.advantage == Some(0.0)));
    }

    #[test]
    fn mismatch_is_record_level() {
        let mut bad = rollout("g", "x".into());
        bad.passages = Some(vec!["p1".into(), "zz".into()]);
        let mut unknown = rollout("h", "x".into());
        unknown.qid = "missing".into();
        let out = cmd_reward(&[bad, unknown, rollout("g", "x".into())], &[record()], &RewardParams::default()).unwrap();
        assert!(out[0].error.as_deref().unwrap().contains("do not match"));
        assert!(out[1].error.is_some());
        assert_eq!(out[2].advantage, Some(0.0));
        let line = serde_json::to_string(&out[2]).unwrap();
        assert!(line.contains(r#""final":-1.0"#), "{line}");
    }

    #[test]
    fn custom_prompt_order_maps_indices() {
        let mut ids: Vec<String> = (1..=20).map(|i| format!("p{i}")).collect();
        ids.reverse();
        let mut r = rollout("g", format!("<think>t</think><answer>{}</answer>", format_ranking(&(1..=20).rev().collect::<Vec<_>>())));
        r.passages = Some(ids);
        let out = cmd_reward(&[r], &[record()], &RewardParams::default()).unwrap();
        assert_eq!(out[0].breakdown.unwrap().ndcg, 1.0);
    }
}
