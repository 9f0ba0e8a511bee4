//! Seconds-per-query table for a mock backend over a synthetic dataset.

use listrank::backend::{Gateway, MockBackend};
use listrank::harness::{cmd_latency, synthetic_bundle, RerankOptions};

fn main() -> listrank::Result<()> {
    let bundle = synthetic_bundle(10, 100, 2);
    let gateway = Gateway::mock(MockBackend::identity());
    let report = cmd_latency(&bundle, &gateway, &RerankOptions::default(), 3)?;
    println!("{report}\n");
    for line in report.to_lines().iter().rev().take(5).rev() {
        println!("{line}");
    }
    Ok(())
}
