//! Seeded synthetic datasets for demos, tests and smoke runs.

use std::io::Write;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::dataset::{write_run, DatasetBundle, DatasetPaths};
use crate::error::{Error, Result};
use crate::metrics::RelevanceJudgments;
use crate::ranking::{CandidateList, Passage, Query};
use crate::synthesis::{CandidateInput, Domain, SynthesisInput, HARD_SOURCE};

/// `queries` queries with `candidates` retrieved passages each. Between one
/// and five passages per query are relevant (grades 1 or 2), placed at
/// random ranks so the retriever order is imperfect.
pub fn synthetic_bundle(queries: usize, candidates: usize, seed: u64) -> DatasetBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = DatasetBundle::default();
    for q in 0..queries {
        let qid = format!("q{q:03}");
        let ids: Vec<String> = (0..candidates).map(|i| format!("{qid}-d{i:03}")).collect();
        for (i, id) in ids.iter().enumerate() {
            let text = format!("Passage {i} retrieved for query {q}. Topic token t{}.", rng.random_range(0..1000));
            b.corpus
                .insert(Passage::new(id.clone(), text).expect("non-empty id"))
                .expect("unique ids");
        }
        let relevant = rng.random_range(1..=5.min(candidates.max(1)));
        for id in ids.choose_multiple(&mut rng, relevant) {
            b.qrels.set(&qid, id.clone(), rng.random_range(1..=2));
        }
        b.queries
            .insert(qid.clone(), Query::new(qid.clone(), format!("synthetic question number {q}")).expect("non-empty"));
        b.run.insert(
            qid.clone(),
            CandidateList::from_ids(qid, ids.iter().map(String::as_str)).expect("unique ids"),
        );
    }
    b
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes a bundle as `corpus.jsonl`, `queries.jsonl`, `run.txt` and `qrels.txt` under `dir`.
pub fn write_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<DatasetPaths> {
    let paths = DatasetPaths {
        corpus: dir.join("corpus.jsonl"),
        queries: dir.join("queries.jsonl"),
        run: dir.join("run.txt"),
        qrels: Some(dir.join("qrels.txt")),
    };

    let mut w = create(&paths.corpus)?;
    let mut ids: Vec<_> = bundle.run.values().flat_map(|c| c.entries().iter().map(|e| e.id.clone())).collect();
    ids.sort();
    ids.dedup();
    for id in ids {
        let text = bundle.corpus.text(&id).unwrap_or_default();
        writeln!(w, "{}", json!({"id": id, "text": text})).map_err(|e| Error::io(&paths.corpus, e))?;
    }
    w.flush().map_err(|e| Error::io(&paths.corpus, e))?;

    let mut w = create(&paths.queries)?;
    for q in bundle.queries.values() {
        writeln!(w, "{}", json!({"qid": q.qid, "text": q.text})).map_err(|e| Error::io(&paths.queries, e))?;
    }
    w.flush().map_err(|e| Error::io(&paths.queries, e))?;

    let mut w = create(&paths.run)?;
    write_run(&mut w, &bundle.baseline(), "synthetic")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&paths.run, e))?;

    let qrels_path = paths.qrels.clone().expect("set above");
    let mut w = create(&qrels_path)?;
    write_qrels(&mut w, &bundle.qrels).map_err(|e| Error::io(&qrels_path, e))?;
    Ok(paths)
}

pub fn write_qrels<W: Write>(mut w: W, qrels: &RelevanceJudgments) -> std::io::Result<()> {
    for qid in qrels.qids() {
        let mut rows: Vec<_> = qrels.query(qid).into_iter().flat_map(|j| j.iter()).collect();
        rows.sort();
        for (id, grade) in rows {
            writeln!(w, "{qid} 0 {id} {grade}")?;
        }
    }
    w.flush()
}

/// Candidates-file inputs plus the hidden judgments a mock teacher answers
/// from. Each query gets a pool of `pool` passages, a few of them relevant,
/// and `hard` search-result passages tagged for hard-negative selection.
pub fn synthetic_inputs(queries: usize, pool: usize, hard: usize, seed: u64) -> (Vec<SynthesisInput>, RelevanceJudgments) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut judgments = RelevanceJudgments::new();
    let mut inputs = Vec::with_capacity(queries);
    for q in 0..queries {
        let qid = format!("s{q:03}");
        let domain = Domain::ALL[q % Domain::ALL.len()];
        let mut candidates: Vec<CandidateInput> = (0..pool)
            .map(|i| CandidateInput {
                id: format!("{qid}-p{i:02}"),
                text: format!("Pool passage {i} for {qid}."),
                source: Some("pool".into()),
                label: None,
            })
            .collect();
        let relevant = rng.random_range(1..=4.min(pool.max(1)));
        let picked: Vec<usize> = rand::seq::index::sample(&mut rng, pool, relevant).into_vec();
        for &i in &picked {
            judgments.set(&qid, candidates[i].id.clone(), 1);
            if domain == Domain::WebSearch {
                candidates[i].label = Some(1);
            }
        }
        if domain == Domain::WebSearch {
            for c in candidates.iter_mut().filter(|c| c.label.is_none()) {
                c.label = Some(0);
            }
        }
        candidates.extend((0..hard).map(|i| CandidateInput {
            id: format!("{qid}-h{i:02}"),
            text: format!("Search result {i} for {qid}, on topic but unhelpful."),
            source: Some(HARD_SOURCE.into()),
            label: None,
        }));
        inputs.push(SynthesisInput {
            qid: qid.clone(),
            query: format!("synthetic {domain} question {q}"),
            domain,
            gold_answer: format!("answer {q}"),
            candidates,
            documents: Vec::new(),
        });
    }
    (inputs, judgments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::load_dataset;

    #[test]
    fn seeded_and_loadable() {
        let a = synthetic_bundle(3, 30, 7);
        let b = synthetic_bundle(3, 30, 7);
        assert_eq!(a.baseline(), b.baseline());
        assert_eq!(a.qrels, b.qrels);
        let dir = tempfile::tempdir().unwrap();
        let paths = write_bundle(&a, dir.path()).unwrap();
        let back = load_dataset(&paths, 100).unwrap();
        assert_eq!(back.baseline(), a.baseline());
        assert_eq!(back.qrels, a.qrels);
        assert_eq!(back.corpus.len(), 90);
    }

    #[test]
    fn inputs_have_relevant_pool_passages() {
        let (inputs, j) = synthetic_inputs(10, 30, 5, 1);
        assert_eq!(inputs.len(), 10);
        for i in &inputs {
            assert_eq!(i.candidates.len(), 35);
            assert!(j.query(&i.qid).unwrap().relevant_count() >= 1);
        }
    }
}
