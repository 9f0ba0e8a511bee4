//! Reranks a synthetic dataset with several mock backends and compares NDCG@10.

use listrank::backend::{Gateway, MockBackend};
use listrank::harness::{cmd_rerank, synthetic_bundle, RerankOptions};
use listrank::metrics::ndcg_at_k;

fn main() -> listrank::Result<()> {
    let bundle = synthetic_bundle(20, 100, 11);
    let baseline: f64 = bundle
        .baseline()
        .iter()
        .map(|(q, l)| ndcg_at_k(l.iter(), bundle.qrels.query(q).unwrap(), 10))
        .sum::<f64>()
        / bundle.run.len() as f64;
    println!("{:<14} mean ndcg@10 = {baseline:.4}", "retriever");

    let backends = [
        ("identity", MockBackend::identity()),
        ("reverse", MockBackend::reverse()),
        ("noisy oracle", MockBackend::noisy_oracle(3, 0.3, bundle.qrels.clone())),
        ("oracle", MockBackend::oracle(bundle.qrels.clone())),
    ];
    for (label, mock) in backends {
        let gateway = Gateway::mock(mock);
        let (_, report) = cmd_rerank(&bundle, &gateway, &RerankOptions::default())?;
        println!(
            "{label:<14} mean ndcg@10 = {:.4}  calls = {}  format failures = {}",
            report.mean_ndcg().unwrap_or(0.0),
            report.total_calls(),
            report.format_failures()
        );
    }
    Ok(())
}
