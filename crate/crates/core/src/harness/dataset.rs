use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::RelevanceJudgments;
use crate::ranking::{Candidate, CandidateList, Corpus, Passage, PassageId, Query, RankedList};

/// One row of a six-column run file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub qid: String,
    pub docid: PassageId,
    pub rank: u32,
    pub score: f64,
    pub tag: String,
    /// 1-based line in the source file.
    pub line: usize,
}

#[derive(Debug, Clone, Deserialize)]
struct CorpusLine {
    id: String,
    text: String,
    #[serde(default)]
    title: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct QueryLine {
    qid: String,
    text: String,
    #[serde(default)]
    rewritten: Option<String>,
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Yields `(line_number, line)` for non-blank lines.
fn numbered_lines<'a, R: BufRead + 'a>(
    reader: R,
    source: &'a str,
) -> impl Iterator<Item = Result<(usize, String)>> + 'a {
    reader
        .lines()
        .enumerate()
        .map(move |(i, l)| l.map(|l| (i + 1, l)).map_err(|e| Error::io(source, e)))
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty()))
}

/// `{"id", "text", "title"?}` per line. A title is prepended to the text.
pub fn read_corpus<R: BufRead>(reader: R, source: &str) -> Result<Corpus> {
    let mut corpus = Corpus::new();
    for item in numbered_lines(reader, source) {
        let (n, line) = item?;
        let rec: CorpusLine = serde_json::from_str(&line).map_err(|e| Error::load(source, n, e.to_string()))?;
        let text = match rec.title {
            Some(t) if !t.trim().is_empty() => format!("{t}\n{}", rec.text),
            _ => rec.text,
        };
        Passage::new(rec.id, text)
            .and_then(|p| corpus.insert(p))
            .map_err(|e| Error::load(source, n, e.to_string()))?;
    }
    Ok(corpus)
}

/// `{"qid", "text", "rewritten"?}` per line.
pub fn read_queries<R: BufRead>(reader: R, source: &str) -> Result<BTreeMap<String, Query>> {
    let mut queries = BTreeMap::new();
    for item in numbered_lines(reader, source) {
        let (n, line) = item?;
        let rec: QueryLine = serde_json::from_str(&line).map_err(|e| Error::load(source, n, e.to_string()))?;
        let mut q = Query::new(rec.qid, rec.text).map_err(|e| Error::load(source, n, e.to_string()))?;
        q.rewritten = rec.rewritten;
        if queries.contains_key(&q.qid) {
            return Err(Error::load(source, n, format!("duplicate qid {}", q.qid)));
        }
        queries.insert(q.qid.clone(), q);
    }
    Ok(queries)
}

/// Six whitespace-separated columns: `qid Q0 docid rank score tag`.
/// Rows come back grouped by qid and sorted by rank.
pub fn read_run<R: BufRead>(reader: R, source: &str) -> Result<BTreeMap<String, Vec<RunRow>>> {
    let mut out: BTreeMap<String, Vec<RunRow>> = BTreeMap::new();
    let mut seen_rank: HashSet<(String, u32)> = HashSet::new();
    let mut seen_doc: HashSet<(String, String)> = HashSet::new();
    for item in numbered_lines(reader, source) {
        let (n, line) = item?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        let bad = |m: String| Error::load(source, n, m);
        if cols.len() != 6 {
            return Err(bad(format!("expected 6 columns, found {}", cols.len())));
        }
        if cols[1] != "Q0" {
            return Err(bad(format!("second column must be Q0, found {:?}", cols[1])));
        }
        let rank: u32 = cols[3].parse().map_err(|_| bad(format!("bad rank {:?}", cols[3])))?;
        let score: f64 = cols[4]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| bad(format!("bad score {:?}", cols[4])))?;
        let qid = cols[0].to_string();
        if !seen_rank.insert((qid.clone(), rank)) {
            return Err(bad(format!("duplicate rank {rank} for query {qid}")));
        }
        if !seen_doc.insert((qid.clone(), cols[2].to_string())) {
            return Err(bad(format!("duplicate docid {} for query {qid}", cols[2])));
        }
        out.entry(qid.clone()).or_default().push(RunRow {
            qid,
            docid: cols[2].to_string(),
            rank,
            score,
            tag: cols[5].to_string(),
            line: n,
        });
    }
    for rows in out.values_mut() {
        rows.sort_by_key(|r| r.rank);
    }
    Ok(out)
}

/// Four whitespace-separated columns: `qid 0 docid grade`.
pub fn read_qrels<R: BufRead>(reader: R, source: &str) -> Result<RelevanceJudgments> {
    let mut qrels = RelevanceJudgments::new();
    for item in numbered_lines(reader, source) {
        let (n, line) = item?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(Error::load(source, n, format!("expected 4 columns, found {}", cols.len())));
        }
        let grade: i64 = cols[3]
            .parse()
            .map_err(|_| Error::load(source, n, format!("bad grade {:?}", cols[3])))?;
        // negative grades are treated as non-relevant, as trec_eval does
        qrels.set(cols[0], cols[2], grade.clamp(0, i64::from(u32::MAX)) as u32);
    }
    Ok(qrels)
}

/// Writes ranked lists as a run with score `1/rank`, queries in qid order.
pub fn write_run<W: Write>(mut writer: W, runs: &BTreeMap<String, RankedList>, tag: &str) -> std::io::Result<()> {
    for (qid, list) in runs {
        for (i, id) in list.iter().enumerate() {
            let rank = i + 1;
            writeln!(writer, "{qid} Q0 {id} {rank} {} {tag}", 1.0 / rank as f64)?;
        }
    }
    Ok(())
}

/// Ranked ids per query from a run, ignoring scores.
pub fn run_rankings(rows: &BTreeMap<String, Vec<RunRow>>) -> BTreeMap<String, Vec<PassageId>> {
    rows.iter()
        .map(|(q, rs)| (q.clone(), rs.iter().map(|r| r.docid.clone()).collect()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub run: PathBuf,
    pub qrels: Option<PathBuf>,
}

/// Corpus, queries, first-stage candidates and (optionally) judgments.
#[derive(Debug, Clone, Default)]
pub struct DatasetBundle {
    pub corpus: Corpus,
    pub queries: BTreeMap<String, Query>,
    pub run: BTreeMap<String, CandidateList>,
    pub qrels: RelevanceJudgments,
}

impl DatasetBundle {
    /// Retriever order for every query, i.e. the no-op rerank.
    pub fn baseline(&self) -> BTreeMap<String, RankedList> {
        self.run.iter().map(|(q, c)| (q.clone(), c.ranked())).collect()
    }
}

/// Reads and cross-checks a dataset. Each query keeps its `top_n` best candidates.
pub fn load_dataset(paths: &DatasetPaths, top_n: usize) -> Result<DatasetBundle> {
    let src = |p: &Path| p.display().to_string();
    let corpus = read_corpus(open(&paths.corpus)?, &src(&paths.corpus))?;
    let queries = read_queries(open(&paths.queries)?, &src(&paths.queries))?;
    let rows = read_run(open(&paths.run)?, &src(&paths.run))?;
    let qrels = match &paths.qrels {
        Some(p) => {
            let qrels = read_qrels(open(p)?, &src(p))?;
            check_qrels_qids(open(p)?, &src(p), &queries)?;
            qrels
        }
        None => RelevanceJudgments::new(),
    };
    let run = build_candidates(rows, &corpus, &queries, top_n, &src(&paths.run))?;
    Ok(DatasetBundle {
        corpus,
        queries,
        run,
        qrels,
    })
}

/// Builds candidate lists, checking every run row against corpus and queries.
pub fn build_candidates(
    rows: BTreeMap<String, Vec<RunRow>>,
    corpus: &Corpus,
    queries: &BTreeMap<String, Query>,
    top_n: usize,
    source: &str,
) -> Result<BTreeMap<String, CandidateList>> {
    let mut run = BTreeMap::new();
    for (qid, rows) in rows {
        if let Some(r) = rows.iter().find(|r| !corpus.contains(&r.docid)) {
            return Err(Error::load(source, r.line, format!("docid {} not found in corpus", r.docid)));
        }
        if !queries.contains_key(&qid) {
            return Err(Error::load(source, rows[0].line, format!("qid {qid} not found in queries")));
        }
        let top: Vec<&RunRow> = rows.iter().take(top_n).collect();
        let entries: Vec<Candidate> = top
            .iter()
            .map(|r| Candidate {
                id: r.docid.clone(),
                score: r.score,
            })
            .collect();
        let list = match CandidateList::new(qid.clone(), entries) {
            Ok(l) => l,
            Err(_) => {
                // rank order wins over scores that disagree with it
                log::warn!("{source}: scores for {qid} are not monotone in rank; using 1/rank");
                CandidateList::from_ids(qid.clone(), top.iter().map(|r| r.docid.as_str()))?
            }
        };
        run.insert(qid, list);
    }
    Ok(run)
}

fn check_qrels_qids<R: BufRead>(reader: R, source: &str, queries: &BTreeMap<String, Query>) -> Result<()> {
    for item in numbered_lines(reader, source) {
        let (n, line) = item?;
        if let Some(qid) = line.split_whitespace().next() {
            if !queries.contains_key(qid) {
                return Err(Error::load(source, n, format!("qid {qid} not found in queries")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_row_format() {
        let rows = read_run("q1 Q0 d9 1 12.3 sys\n".as_bytes(), "run").unwrap();
        let r = &rows["q1"][0];
        assert_eq!((r.docid.as_str(), r.rank, r.score, r.tag.as_str()), ("d9", 1, 12.3, "sys"));
    }

    #[test]
    fn run_rows_sorted_by_rank() {
        let text = "q1 Q0 b 2 1.0 x\n\nq1 Q0 a 1 2.0 x\n";
        let rows = read_run(text.as_bytes(), "run").unwrap();
        assert_eq!(run_rankings(&rows)["q1"], vec!["a", "b"]);
    }

    #[test]
    fn run_errors_name_line() {
        let err = read_run("q1 Q0 a 1 1 x\nq1 Q0 b 1 0.5 x\n".as_bytes(), "run.txt").unwrap_err();
        assert!(err.to_string().starts_with("run.txt:2: duplicate rank"), "{err}");
        let err = read_run("q1 Q0 a 1 x\n".as_bytes(), "run.txt").unwrap_err();
        assert!(err.to_string().starts_with("run.txt:1: expected 6 columns"));
        let err = read_run("q1 Q1 a 1 1 x\n".as_bytes(), "run.txt").unwrap_err();
        assert!(err.to_string().contains("Q0"));
        let err = read_run("q1 Q0 a one 1 x\n".as_bytes(), "run.txt").unwrap_err();
        assert!(err.to_string().contains("bad rank"));
    }

    #[test]
    fn qrels_format() {
        let q = read_qrels("q1 0 d9 1\nq1 0 d3 -1\n".as_bytes(), "qrels").unwrap();
        assert_eq!(q.query("q1").unwrap().grade("d9"), 1);
        assert_eq!(q.query("q1").unwrap().grade("d3"), 0);
        assert!(read_qrels("q1 d9 1\n".as_bytes(), "qrels").is_err());
    }

    #[test]
    fn missing_docid_reports_line() {
        let corpus: Corpus = [Passage::new("a", "x").unwrap()].into_iter().collect();
        let queries = read_queries(r#"{"qid":"q1","text":"t"}"#.as_bytes(), "queries").unwrap();
        let rows = read_run("q1 Q0 a 1 2 x\nq1 Q0 zz 2 1 x\n".as_bytes(), "run").unwrap();
        let err = build_candidates(rows, &corpus, &queries, 100, "run").unwrap_err();
        assert_eq!(err.to_string(), "run:2: docid zz not found in corpus");
    }

    #[test]
    fn top_n_truncates() {
        let corpus: Corpus = ["a", "b", "c"].iter().map(|i| Passage::new(*i, "x").unwrap()).collect();
        let queries = read_queries(r#"{"qid":"q1","text":"t"}"#.as_bytes(), "queries").unwrap();
        let rows = read_run("q1 Q0 a 1 3 x\nq1 Q0 b 2 2 x\nq1 Q0 c 3 1 x\n".as_bytes(), "run").unwrap();
        let run = build_candidates(rows, &corpus, &queries, 2, "run").unwrap();
        assert_eq!(run["q1"].ranked().ids(), ["a", "b"]);
    }

    #[test]
    fn corpus_title_is_prepended() {
        let c = read_corpus(r#"{"id":"d","title":"T","text":"body"}"#.as_bytes(), "c").unwrap();
        assert_eq!(c.text("d"), Some("T\nbody"));
        let err = read_corpus("{\"id\":\"d\",\"text\":\"a\"}\n{\"id\":\"d\",\"text\":\"b\"}".as_bytes(), "c")
            .unwrap_err();
        assert!(err.to_string().starts_with("c:2:"));
    }

    #[test]
    fn written_run_reads_back() {
        let mut runs = BTreeMap::new();
        runs.insert("q1".to_string(), RankedList::new(["b", "a", "c"]).unwrap());
        let mut buf = Vec::new();
        write_run(&mut buf, &runs, "listrank").unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("q1 Q0 b 1 1 listrank"));
        let rows = read_run(text.as_bytes(), "out").unwrap();
        assert_eq!(run_rankings(&rows)["q1"], vec!["b", "a", "c"]);
    }
}
