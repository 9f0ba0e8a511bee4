//! Scores a group of rollouts against a labelled list, then evaluates the
//! GRPO objective on made-up token log-probs carrying those rewards.

use listrank::harness::{cmd_reward, RolloutInput};
use listrank::metrics::RewardParams;
use listrank::ranking::{format_ranking, RankedList};
use listrank::synthesis::{Domain, RecordPassage, SynthesisRecord};
use listrank::training::{grpo_loss, GrpoParams, Rollout, RolloutGroup, TokenLogProbs};

fn main() -> listrank::Result<()> {
    let ids: Vec<String> = (1..=8).map(|i| format!("p{i}")).collect();
    let record = SynthesisRecord {
        qid: "q1".into(),
        query: "which passages explain the proof?".into(),
        domain: Domain::MathTheorem,
        passages: ids.iter().map(|id| RecordPassage { id: id.clone(), text: format!("text of {id}") }).collect(),
        pointwise: ids.iter().enumerate().map(|(i, id)| (id.clone(), u8::from(i % 3 == 0))).collect(),
        think: "p1, p4 and p7 state the lemma.".into(),
        gold: RankedList::new(["p1", "p4", "p7", "p2", "p3", "p5", "p6", "p8"])?,
        consistency: 1.0,
    };
    let responses = [
        format!("<think>following the lemma</think><answer>{}</answer>", format_ranking(&[1, 4, 7, 2, 3, 5, 6, 8])),
        format!("<think>roughly</think><answer>{}</answer>", format_ranking(&[2, 1, 3, 4, 5, 6, 7, 8])),
        "<think>partial</think><answer>[1] > [4]</answer>".to_string(),
        "p1 first, probably".to_string(),
    ];
    let rollouts: Vec<RolloutInput> = responses
        .iter()
        .map(|r| RolloutInput { group: "g1".into(), qid: "q1".into(), response: r.clone(), passages: None })
        .collect();
    let scored = cmd_reward(&rollouts, &[record], &RewardParams::default())?;
    println!("{:<10} {:>7} {:>7} {:>7} {:>8} {:>9}", "status", "ndcg", "recall", "rbo", "final", "advantage");
    for s in &scored {
        let b = s.breakdown.expect("all rollouts reference the record");
        println!(
            "{:<10} {:>7.4} {:>7.4} {:>7.4} {:>+8.4} {:>+9.4}",
            b.format_status.to_string(),
            b.ndcg,
            b.recall,
            b.rbo,
            b.final_reward,
            s.advantage.unwrap_or(0.0)
        );
    }

    let rollouts = scored
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let shift = 0.05 * i as f64;
            Rollout::new(
                s.breakdown.unwrap().final_reward,
                TokenLogProbs::new(vec![-0.4 - shift, -1.1, -0.2 - shift])?,
                TokenLogProbs::new(vec![-0.5, -1.0, -0.3])?,
            )
        })
        .collect::<listrank::Result<Vec<_>>>()?;
    let mut group = RolloutGroup::new(rollouts)?;
    group.compute_advantages();
    let loss = grpo_loss(&group, &GrpoParams::default())?;
    println!("\ngrpo: loss={:.6} surrogate={:.6} kl={:.6}", loss.loss, loss.surrogate, loss.kl);
    Ok(())
}
