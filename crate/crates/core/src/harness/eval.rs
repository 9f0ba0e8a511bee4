use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::report::{field, format_kv, number, parse_kv};
use crate::error::{Error, Result};
use crate::metrics::{ndcg_at_k, RelevanceJudgments};
use crate::ranking::PassageId;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub k: usize,
    /// Per-query NDCG@k in qid order.
    pub rows: Vec<(String, f64)>,
    /// Mean over `rows`; `None` when nothing was judged.
    pub mean: Option<f64>,
    /// Run qids with no judgments, left out of the mean.
    pub excluded: Vec<String>,
}

impl EvalReport {
    fn metric(&self) -> String {
        format!("ndcg@{}", self.k)
    }

    pub fn to_lines(&self) -> Vec<String> {
        let metric = self.metric();
        let mut lines: Vec<String> = self
            .rows
            .iter()
            .map(|(q, v)| {
                format_kv(&[
                    ("scope", "query".into()),
                    ("qid", q.clone()),
                    ("metric", metric.clone()),
                    ("value", v.to_string()),
                ])
            })
            .collect();
        if let Some(mean) = self.mean {
            lines.push(format_kv(&[
                ("scope", "summary".into()),
                ("metric", metric.clone()),
                ("value", mean.to_string()),
            ]));
        }
        lines.push(format_kv(&[
            ("scope", "summary".into()),
            ("metric", "evaluated".into()),
            ("value", self.rows.len().to_string()),
        ]));
        lines.push(format_kv(&[
            ("scope", "summary".into()),
            ("metric", "excluded".into()),
            ("value", self.excluded.len().to_string()),
        ]));
        lines.extend(self.excluded.iter().map(|q| {
            format_kv(&[("scope", "excluded".into()), ("qid", q.clone())])
        }));
        lines
    }

    pub fn from_lines<'a, I: IntoIterator<Item = &'a str>>(lines: I) -> Result<Self> {
        let mut k = None;
        let mut rows = Vec::new();
        let mut mean = None;
        let mut excluded = Vec::new();
        for line in lines {
            let m = parse_kv(line)?;
            match field(&m, "scope")? {
                "query" => {
                    k = Some(parse_cutoff(field(&m, "metric")?)?);
                    rows.push((field(&m, "qid")?.to_string(), number(&m, "value")?));
                }
                "summary" => {
                    let metric = field(&m, "metric")?;
                    if metric.starts_with("ndcg@") {
                        k = Some(parse_cutoff(metric)?);
                        mean = Some(number(&m, "value")?);
                    }
                }
                "excluded" => excluded.push(field(&m, "qid")?.to_string()),
                other => return Err(Error::invalid(format!("unknown scope {other}"))),
            }
        }
        Ok(Self {
            k: k.ok_or_else(|| Error::invalid("report has no ndcg lines"))?,
            rows,
            mean,
            excluded,
        })
    }
}

fn parse_cutoff(metric: &str) -> Result<usize> {
    metric
        .strip_prefix("ndcg@")
        .and_then(|k| k.parse().ok())
        .ok_or_else(|| Error::invalid(format!("unknown metric {metric}")))
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|(q, _)| q.len()).max().unwrap_or(0).max(4);
        let metric = self.metric();
        writeln!(f, "{:<width$}  {:>10}", "qid", metric)?;
        for (q, v) in &self.rows {
            writeln!(f, "{q:<width$}  {v:>10.4}")?;
        }
        match self.mean {
            Some(m) => write!(f, "{:<width$}  {m:>10.4}", "mean")?,
            None => write!(f, "{:<width$}  {:>10}", "mean", "n/a")?,
        }
        if !self.excluded.is_empty() {
            write!(f, "\n{} unjudged queries excluded", self.excluded.len())?;
        }
        Ok(())
    }
}

/// Per-query and mean NDCG@k of `run` against `qrels`.
pub fn cmd_eval(run: &BTreeMap<String, Vec<PassageId>>, qrels: &RelevanceJudgments, k: usize) -> EvalReport {
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for (qid, ranked) in run {
        match qrels.query(qid) {
            Some(j) => rows.push((qid.clone(), ndcg_at_k(ranked.iter().map(String::as_str), j, k))),
            None => excluded.push(qid.clone()),
        }
    }
    let mean = (!rows.is_empty()).then(|| rows.iter().map(|(_, v)| v).sum::<f64>() / rows.len() as f64);
    EvalReport {
        k,
        rows,
        mean,
        excluded,
    }
}
