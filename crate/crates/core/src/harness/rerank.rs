use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use serde::Serialize;

use super::dataset::DatasetBundle;
use super::report::format_kv;
use crate::backend::Gateway;
use crate::error::Result;
use crate::metrics::ndcg_at_k;
use crate::ranking::{RankedList, RepairReport};
use crate::util::ordered_map;
use crate::window::{Reranker, RerankError, TraceLog, WindowParams};

/// Tag written in the last column of output runs.
pub const RUN_TAG: &str = "listrank";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RerankOptions {
    pub window: WindowParams,
    /// Abort on the first failed query instead of keeping its retriever order.
    pub strict: bool,
    pub max_passage_chars: Option<usize>,
}


#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryReport {
    pub qid: String,
    /// `None` for queries without judgments.
    pub ndcg: Option<f64>,
    pub latency_secs: f64,
    pub calls: usize,
    pub attempts: u32,
    pub format_failures: usize,
    pub repaired_windows: usize,
    pub repairs: RepairReport,
    pub completion_tokens: Option<u64>,
    /// Set when the query fell back to retriever order.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub backend: String,
    pub queries: Vec<QueryReport>,
}

impl RunReport {
    fn judged(&self) -> impl Iterator<Item = f64> + '_ {
        self.queries.iter().filter_map(|q| q.ndcg)
    }

    /// Arithmetic mean of per-query NDCG@10 over judged queries.
    pub fn mean_ndcg(&self) -> Option<f64> {
        let n = self.judged().count();
        (n > 0).then(|| self.judged().sum::<f64>() / n as f64)
    }

    pub fn unjudged(&self) -> usize {
        self.queries.iter().filter(|q| q.ndcg.is_none()).count()
    }

    pub fn failed(&self) -> usize {
        self.queries.iter().filter(|q| q.error.is_some()).count()
    }

    pub fn total_calls(&self) -> usize {
        self.queries.iter().map(|q| q.calls).sum()
    }

    pub fn total_attempts(&self) -> u32 {
        self.queries.iter().map(|q| q.attempts).sum()
    }

    pub fn format_failures(&self) -> usize {
        self.queries.iter().map(|q| q.format_failures).sum()
    }

    pub fn repairs(&self) -> RepairReport {
        let mut total = RepairReport::default();
        for q in &self.queries {
            total.add(&q.repairs);
        }
        total
    }

    pub fn repaired_windows(&self) -> usize {
        self.queries.iter().map(|q| q.repaired_windows).sum()
    }

    pub fn latencies(&self) -> Vec<f64> {
        self.queries.iter().map(|q| q.latency_secs).collect()
    }

    pub fn to_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        for q in &self.queries {
            let mut push = |metric: &str, value: String| {
                lines.push(format_kv(&[
                    ("scope", "query".into()),
                    ("qid", q.qid.clone()),
                    ("metric", metric.into()),
                    ("value", value),
                ]))
            };
            if let Some(v) = q.ndcg {
                push("ndcg@10", v.to_string());
            }
            push("latency_secs", q.latency_secs.to_string());
            push("calls", q.calls.to_string());
            push("attempts", q.attempts.to_string());
            push("format_failures", q.format_failures.to_string());
            push("repaired_windows", q.repaired_windows.to_string());
            if q.error.is_some() {
                push("failed", "1".into());
            }
        }
        let lat = LatencyStats::from_samples(&self.latencies());
        let mut summary = vec![
            ("queries", self.queries.len().to_string()),
            ("unjudged", self.unjudged().to_string()),
            ("failed", self.failed().to_string()),
            ("calls", self.total_calls().to_string()),
            ("attempts", self.total_attempts().to_string()),
            ("format_failures", self.format_failures().to_string()),
            ("repaired_windows", self.repaired_windows().to_string()),
            ("latency_mean_secs", lat.mean.to_string()),
            ("latency_p50_secs", lat.p50.to_string()),
            ("latency_p95_secs", lat.p95.to_string()),
        ];
        if let Some(m) = self.mean_ndcg() {
            summary.insert(0, ("ndcg@10", m.to_string()));
        }
        for (metric, value) in summary {
            lines.push(format_kv(&[
                ("scope", "summary".into()),
                ("metric", metric.into()),
                ("value", value),
            ]));
        }
        lines
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.queries.iter().map(|q| q.qid.len()).max().unwrap_or(0).max(4);
        writeln!(
            f,
            "{:<width$}  {:>8}  {:>9}  {:>5}  {:>8}  {:>8}",
            "qid", "ndcg@10", "secs", "calls", "badfmt", "repaired"
        )?;
        for q in &self.queries {
            let ndcg = q.ndcg.map_or("-".to_string(), |v| format!("{v:.4}"));
            let mark = if q.error.is_some() { "  (failed, retriever order)" } else { "" };
            writeln!(
                f,
                "{:<width$}  {ndcg:>8}  {:>9.4}  {:>5}  {:>8}  {:>8}{mark}",
                q.qid, q.latency_secs, q.calls, q.format_failures, q.repaired_windows
            )?;
        }
        let lat = LatencyStats::from_samples(&self.latencies());
        let mean = self.mean_ndcg().map_or("-".to_string(), |v| format!("{v:.4}"));
        writeln!(f, "{:<width$}  {mean:>8}  {:>9.4}  {:>5}", "mean", lat.mean, self.total_calls())?;
        write!(
            f,
            "backend={} queries={} unjudged={} failed={} p50={:.4}s p95={:.4}s",
            self.backend,
            self.queries.len(),
            self.unjudged(),
            self.failed(),
            lat.p50,
            lat.p95
        )
    }
}

/// Mean and nearest-rank percentiles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LatencyStats {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let pct = |p: f64| {
            let rank = (p * sorted.len() as f64).ceil() as usize;
            sorted[rank.clamp(1, sorted.len()) - 1]
        };
        Self {
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p50: pct(0.5),
            p95: pct(0.95),
        }
    }
}

fn query_report(bundle: &DatasetBundle, qid: &str, list: &RankedList, trace: &TraceLog, secs: f64) -> QueryReport {
    QueryReport {
        qid: qid.to_string(),
        ndcg: bundle.qrels.query(qid).map(|j| ndcg_at_k(list.iter(), j, 10)),
        latency_secs: secs,
        calls: trace.calls(),
        attempts: trace.attempts(),
        format_failures: trace.format_failures(),
        repaired_windows: trace.repaired_windows(),
        repairs: trace.repairs(),
        completion_tokens: trace.completion_tokens(),
        error: None,
    }
}

/// Reranks every query in the bundle, in parallel up to the gateway's bound.
/// Results are assembled in qid order, so output does not depend on scheduling.
pub fn cmd_rerank(
    bundle: &DatasetBundle,
    gateway: &Gateway,
    options: &RerankOptions,
) -> Result<(BTreeMap<String, RankedList>, RunReport)> {
    let reranker = Reranker::new(gateway, options.window)?.with_max_passage_chars(options.max_passage_chars);
    let jobs: Vec<(&String, _)> = bundle.run.iter().collect();
    let outcomes = ordered_map(&jobs, gateway.concurrency(), |(qid, candidates)| {
        let query = &bundle.queries[qid.as_str()];
        let started = Instant::now();
        let result = reranker.rerank_query(query, candidates, &bundle.corpus);
        (result, started.elapsed().as_secs_f64())
    });

    let mut runs = BTreeMap::new();
    let mut reports = Vec::new();
    for ((qid, candidates), (result, secs)) in jobs.into_iter().zip(outcomes) {
        match result {
            Ok((list, trace)) => {
                reports.push(query_report(bundle, qid, &list, &trace, secs));
                runs.insert(qid.clone(), list);
            }
            Err(e) if options.strict => return Err(rerank_failure(e)),
            Err(e) => {
                log::warn!("{e}; keeping retriever order");
                let list = candidates.ranked();
                let trace = match &e {
                    RerankError::Backend { partial, .. } => partial.clone(),
                    RerankError::Input { .. } => TraceLog::default(),
                };
                let mut report = query_report(bundle, qid, &list, &trace, secs);
                report.error = Some(e.to_string());
                reports.push(report);
                runs.insert(qid.clone(), list);
            }
        }
    }
    Ok((
        runs,
        RunReport {
            backend: gateway.backend_name().to_string(),
            queries: reports,
        },
    ))
}

fn rerank_failure(e: RerankError) -> crate::Error {
    match e {
        RerankError::Backend { source, .. } => (*source).into(),
        other => crate::Error::Invalid(other.to_string()),
    }
}
