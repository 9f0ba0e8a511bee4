//! NDCG, Recall, RBO and the gated reward on small hand-made lists.

use listrank::metrics::{final_reward, multi_view_reward, ndcg_at_k, rbo, recall_at_k, QueryJudgments, RewardParams};
use listrank::ranking::{FormatStatus, RankedList};

fn main() -> listrank::Result<()> {
    let ids: Vec<String> = (1..=20).map(|i| format!("p{i}")).collect();
    let at = |ranks: [usize; 2]| -> QueryJudgments { ranks.iter().map(|r| (ids[r - 1].clone(), 1)).collect() };

    // Two relevant passages: one near the top and one just outside the cutoff,
    // versus both just inside it.
    for ranks in [[2, 11], [9, 10]] {
        let j = at(ranks);
        println!(
            "relevant at {:?}: ndcg@10={:.4} recall@10={:.2}",
            ranks,
            ndcg_at_k(ids.iter().map(String::as_str), &j, 10),
            recall_at_k(ids.iter().map(String::as_str), &j, 10)
        );
    }

    let gold = RankedList::new(ids.clone())?;
    let mut swapped = ids.clone();
    swapped.swap(0, 1);
    let swapped = RankedList::new(swapped)?;
    println!("\nrbo(gold, gold)    = {:.6}", rbo(&gold, &gold, 0.9)?);
    println!("rbo(swapped, gold) = {:.6}", rbo(&swapped, &gold, 0.9)?);

    let j: QueryJudgments = ids[..3].iter().map(|id| (id.clone(), 1)).collect();
    let params = RewardParams::default();
    let r = multi_view_reward(&gold, &j, &gold, &params)?;
    println!("\nperfect rollout: ndcg={:.4} recall={:.4} rbo={:.4} r_m={:.4}", r.ndcg, r.recall, r.rbo, r.r_m);
    for status in [FormatStatus::BothGood, FormatStatus::OutputOnly, FormatStatus::Bad] {
        println!("  {status:<10} -> final {:+.4}", final_reward(status, r.r_m));
    }
    Ok(())
}
