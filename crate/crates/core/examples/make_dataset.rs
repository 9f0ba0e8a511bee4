//! Writes a synthetic dataset and a synthesis candidates file for trying the CLI.
//!
//! cargo run --example make_dataset -- <dir>

use std::io::Write;
use std::path::PathBuf;

use listrank::harness::{synthetic_bundle, synthetic_inputs, write_bundle, write_qrels};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "demo-data".into()));
    std::fs::create_dir_all(&dir)?;
    let paths = write_bundle(&synthetic_bundle(20, 100, 1), &dir)?;

    let (inputs, hidden) = synthetic_inputs(25, 30, 6, 1);
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("candidates.jsonl"))?);
    for i in &inputs {
        serde_json::to_writer(&mut w, i)?;
        writeln!(w)?;
    }
    w.flush()?;
    write_qrels(std::fs::File::create(dir.join("teacher_qrels.txt"))?, &hidden)?;

    println!("corpus     {}", paths.corpus.display());
    println!("queries    {}", paths.queries.display());
    println!("run        {}", paths.run.display());
    println!("qrels      {}", paths.qrels.unwrap().display());
    println!("candidates {}", dir.join("candidates.jsonl").display());
    println!("teacher    {}", dir.join("teacher_qrels.txt").display());
    Ok(())
}
