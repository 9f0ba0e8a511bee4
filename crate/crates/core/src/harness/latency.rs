use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use serde::Serialize;

use super::dataset::DatasetBundle;
use super::report::{field, format_kv, number, parse_kv};
use super::rerank::{LatencyStats, RerankOptions};
use crate::backend::Gateway;
use crate::error::{Error, Result};
use crate::window::{Reranker, RerankError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryLatency {
    pub qid: String,
    /// One wall-clock sample per repeat.
    pub samples: Vec<f64>,
    /// Backend calls per repeat.
    pub calls: usize,
    /// Output tokens per repeat, when the backend reports usage.
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub repeats: usize,
    pub queries: Vec<QueryLatency>,
}

impl LatencyReport {
    pub fn samples(&self) -> Vec<f64> {
        self.queries.iter().flat_map(|q| q.samples.iter().copied()).collect()
    }

    pub fn stats(&self) -> LatencyStats {
        LatencyStats::from_samples(&self.samples())
    }

    pub fn total_calls(&self) -> usize {
        self.queries.iter().map(|q| q.calls).sum::<usize>() * self.repeats
    }

    pub fn total_completion_tokens(&self) -> Option<u64> {
        self.queries
            .iter()
            .map(|q| q.completion_tokens.map(|t| t * self.repeats as u64))
            .sum()
    }

    pub fn to_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        for q in &self.queries {
            let line = |metric: &str, value: String| {
                format_kv(&[
                    ("scope", "query".into()),
                    ("qid", q.qid.clone()),
                    ("metric", metric.into()),
                    ("value", value),
                ])
            };
            for (i, s) in q.samples.iter().enumerate() {
                lines.push(format!("{} repeat={i}", line("secs", s.to_string())));
            }
            lines.push(line("calls", q.calls.to_string()));
            if let Some(t) = q.completion_tokens {
                lines.push(line("completion_tokens", t.to_string()));
            }
        }
        let stats = self.stats();
        for (metric, value) in [
            ("repeats", self.repeats.to_string()),
            ("mean_secs", stats.mean.to_string()),
            ("p50_secs", stats.p50.to_string()),
            ("p95_secs", stats.p95.to_string()),
            ("calls", self.total_calls().to_string()),
        ] {
            lines.push(format_kv(&[
                ("scope", "summary".into()),
                ("metric", metric.into()),
                ("value", value),
            ]));
        }
        lines
    }

    /// Rebuilds a report from [`LatencyReport::to_lines`] output. Summary
    /// lines are derived values and only `repeats` is read back.
    pub fn from_lines<'a, I: IntoIterator<Item = &'a str>>(lines: I) -> Result<Self> {
        let mut repeats = None;
        let mut queries: Vec<QueryLatency> = Vec::new();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        for line in lines {
            let m = parse_kv(line)?;
            let metric = field(&m, "metric")?;
            if field(&m, "scope")? == "summary" {
                if metric == "repeats" {
                    repeats = Some(number(&m, "value")? as usize);
                }
                continue;
            }
            let qid = field(&m, "qid")?.to_string();
            let slot = *index.entry(qid.clone()).or_insert_with(|| {
                queries.push(QueryLatency {
                    qid,
                    samples: Vec::new(),
                    calls: 0,
                    completion_tokens: None,
                });
                queries.len() - 1
            });
            let value = number(&m, "value")?;
            match metric {
                "secs" => queries[slot].samples.push(value),
                "calls" => queries[slot].calls = value as usize,
                "completion_tokens" => queries[slot].completion_tokens = Some(value as u64),
                other => return Err(Error::invalid(format!("unknown metric {other}"))),
            }
        }
        Ok(Self {
            repeats: repeats.ok_or_else(|| Error::invalid("missing repeats line"))?,
            queries,
        })
    }
}

impl fmt::Display for LatencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.stats();
        writeln!(f, "{:<22} {:>12}", "queries", self.queries.len())?;
        writeln!(f, "{:<22} {:>12}", "repeats", self.repeats)?;
        writeln!(f, "{:<22} {:>12.6}", "mean secs/query", s.mean)?;
        writeln!(f, "{:<22} {:>12.6}", "p50 secs/query", s.p50)?;
        writeln!(f, "{:<22} {:>12.6}", "p95 secs/query", s.p95)?;
        write!(f, "{:<22} {:>12}", "backend calls", self.total_calls())?;
        if let Some(t) = self.total_completion_tokens() {
            write!(f, "\n{:<22} {:>12}", "output tokens", t)?;
        }
        Ok(())
    }
}

/// Times each query `repeats` times. Queries run one at a time so a sample
/// is the end-to-end cost of reranking a single query.
pub fn cmd_latency(
    bundle: &DatasetBundle,
    gateway: &Gateway,
    options: &RerankOptions,
    repeats: usize,
) -> Result<LatencyReport> {
    if repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    let reranker = Reranker::new(gateway, options.window)?.with_max_passage_chars(options.max_passage_chars);
    let mut queries = Vec::new();
    for (qid, candidates) in &bundle.run {
        let query = &bundle.queries[qid];
        let mut row = QueryLatency {
            qid: qid.clone(),
            samples: Vec::with_capacity(repeats),
            calls: 0,
            completion_tokens: None,
        };
        for _ in 0..repeats {
            let started = Instant::now();
            match reranker.rerank_query(query, candidates, &bundle.corpus) {
                Ok((_, trace)) => {
                    row.samples.push(started.elapsed().as_secs_f64());
                    row.calls = trace.calls();
                    row.completion_tokens = trace.completion_tokens();
                }
                Err(e) if options.strict => return Err(Error::Invalid(e.to_string())),
                Err(e) => {
                    log::warn!("{e}; latency sample dropped");
                    if let RerankError::Backend { partial, .. } = e {
                        row.calls = partial.calls();
                    }
                }
            }
        }
        queries.push(row);
    }
    Ok(LatencyReport { repeats, queries })
}
