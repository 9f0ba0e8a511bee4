//! Builds training records with a noisy mock teacher and applies the
//! consistency filter.

use listrank::backend::{Gateway, MockBackend, RetryPolicy};
use listrank::harness::synthetic_inputs;
use listrank::synthesis::{self_consistency_filter, SynthesisConfig, Synthesizer, DEFAULT_ALPHA};

fn main() {
    let (inputs, hidden) = synthetic_inputs(40, 30, 6, 5);
    let teacher = MockBackend::noisy_oracle(9, 0.9, hidden);
    let gateway = Gateway::new(teacher, RetryPolicy::none(), 8);
    let synth = Synthesizer::new(&gateway, SynthesisConfig { seed: 1, ..SynthesisConfig::default() });
    let (records, report) = synth.run(&inputs);
    println!("produced {} records, skipped {}", report.produced, report.skipped.len());
    if let Some(r) = records.first() {
        println!(
            "first record: qid={} domain={} passages={} positives={} consistency={:.4}",
            r.qid,
            r.domain,
            r.passages.len(),
            r.pointwise.values().filter(|&&v| v == 1).count(),
            r.consistency
        );
    }
    for alpha in [0.0, 0.6, 0.8] {
        let (kept, _) = self_consistency_filter(records.clone(), alpha);
        println!("alpha={alpha:.1} keeps {}", kept.len());
    }
    let (kept, filter) = self_consistency_filter(records, DEFAULT_ALPHA);
    println!("\n{filter}");
    println!("kept {} records", kept.len());
}
