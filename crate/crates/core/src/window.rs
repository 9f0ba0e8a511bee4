//! Back-to-front sliding-window reranking.
//!
//! Windows of `w` passages are ranked from the tail of the list toward the
//! head, each one overlapping the previous by `w - s`, so a relevant passage
//! near the bottom can climb all the way to rank 1 in a single pass.

use std::ops::Range;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatMessage, ChatRequest, Gateway, RequestContext, Task, Usage};
use crate::error::{Error, Result};
use crate::prompt::{rerank_passage_block, PromptTemplate};
use crate::ranking::{
    parse_ranking, parse_response_for_window, CandidateList, Corpus, FormatStatus, PassageId, Query,
    RankedList, RepairReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowParams {
    /// Only the top `n` candidates are reranked.
    pub n: usize,
    /// Window size.
    pub w: usize,
    /// Step between consecutive window starts.
    pub s: usize,
}

impl Default for WindowParams {
    fn default() -> Self {
        Self { n: 100, w: 20, s: 10 }
    }
}

impl WindowParams {
    pub fn new(n: usize, w: usize, s: usize) -> Result<Self> {
        let p = Self { n, w, s };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("list bound n must be at least 1"));
        }
        if self.s == 0 || self.s > self.w {
            return Err(Error::invalid(format!(
                "step must satisfy 1 <= s <= w (s={}, w={})",
                self.s, self.w
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WindowPlan {
    pub ranges: Vec<Range<usize>>,
}

impl WindowPlan {
    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

/// Window ranges for a list of `list_len` items, back of the list first.
/// The last window is clamped to start at 0 so every index is covered.
pub fn plan_windows(params: &WindowParams, list_len: usize) -> Result<WindowPlan> {
    params.validate()?;
    if list_len == 0 {
        return Err(Error::invalid("cannot plan windows over an empty list"));
    }
    if list_len <= params.w {
        return Ok(WindowPlan {
            ranges: std::iter::once(0..list_len).collect(),
        });
    }
    let mut ranges = Vec::new();
    let mut start = list_len - params.w;
    loop {
        ranges.push(start..(start + params.w).min(list_len));
        if start == 0 {
            break;
        }
        start = start.saturating_sub(params.s);
    }
    Ok(WindowPlan { ranges })
}

/// Replaces `list[range]` with `window_result`, which must permute that slice.
pub fn apply_window(
    list: &RankedList,
    range: Range<usize>,
    window_result: &RankedList,
) -> Result<RankedList> {
    let ids = list.ids();
    if range.end > ids.len() || range.start > range.end {
        return Err(Error::invalid(format!(
            "window {range:?} out of bounds for list of {}",
            ids.len()
        )));
    }
    if !window_result.is_permutation_of(&ids[range.clone()]) {
        return Err(Error::invalid(format!(
            "window result is not a permutation of positions {range:?}"
        )));
    }
    let mut out: Vec<PassageId> = Vec::with_capacity(ids.len());
    out.extend_from_slice(&ids[..range.start]);
    out.extend(window_result.ids().iter().cloned());
    out.extend_from_slice(&ids[range.end..]);
    RankedList::new(out)
}

/// What happened in one window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowTrace {
    pub start: usize,
    pub end: usize,
    pub raw: String,
    pub format_status: FormatStatus,
    pub repair: RepairReport,
    pub duration: Duration,
    pub attempts: u32,
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TraceLog {
    pub qid: String,
    pub windows: Vec<WindowTrace>,
}

impl TraceLog {
    pub fn calls(&self) -> usize {
        self.windows.len()
    }

    pub fn attempts(&self) -> u32 {
        self.windows.iter().map(|w| w.attempts).sum()
    }

    pub fn format_failures(&self) -> usize {
        self.windows
            .iter()
            .filter(|w| w.format_status != FormatStatus::BothGood)
            .count()
    }

    /// Windows whose answer needed any repair.
    pub fn repaired_windows(&self) -> usize {
        self.windows.iter().filter(|w| !w.repair.is_clean()).count()
    }

    pub fn repairs(&self) -> RepairReport {
        let mut total = RepairReport::default();
        for w in &self.windows {
            total.add(&w.repair);
        }
        total
    }

    pub fn completion_tokens(&self) -> Option<u64> {
        self.windows
            .iter()
            .map(|w| w.usage.map(|u| u.completion_tokens))
            .sum()
    }
}

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("query {qid}: {source}")]
    Backend {
        qid: String,
        #[source]
        source: Box<BackendError>,
        /// Windows completed before the failure.
        partial: TraceLog,
    },
    #[error("query {qid}: {message}")]
    Input { qid: String, message: String },
}

impl RerankError {
    pub fn qid(&self) -> &str {
        match self {
            RerankError::Backend { qid, .. } | RerankError::Input { qid, .. } => qid,
        }
    }
}

/// Sliding-window driver over a shared [`Gateway`].
#[derive(Debug, Clone)]
pub struct Reranker<'g> {
    gateway: &'g Gateway,
    params: WindowParams,
    template: PromptTemplate,
    max_passage_chars: Option<usize>,
}

impl<'g> Reranker<'g> {
    pub fn new(gateway: &'g Gateway, params: WindowParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            gateway,
            params,
            template: PromptTemplate::rerank(),
            max_passage_chars: None,
        })
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = template;
        self
    }

    /// Clip each passage to this many characters in prompts. Off by default.
    pub fn with_max_passage_chars(mut self, max: Option<usize>) -> Self {
        self.max_passage_chars = max;
        self
    }

    pub fn params(&self) -> &WindowParams {
        &self.params
    }

    /// Prompt for one window, numbering passages locally from 1.
    pub fn build_prompt(&self, query: &Query, texts: &[&str]) -> String {
        let num = texts.len().to_string();
        let block = rerank_passage_block(texts.iter().copied(), self.max_passage_chars);
        self.template
            .render(&[("num", &num), ("query", &query.text), ("passages", &block)])
    }

    /// One sliding-window pass over the top `n` candidates; the tail beyond
    /// `n` keeps retriever order.
    pub fn rerank_query(
        &self,
        query: &Query,
        candidates: &CandidateList,
        corpus: &Corpus,
    ) -> std::result::Result<(RankedList, TraceLog), RerankError> {
        let qid = query.qid.clone();
        let input_err = |message: String| RerankError::Input {
            qid: qid.clone(),
            message,
        };
        if candidates.is_empty() {
            return Err(input_err("no candidates to rerank".into()));
        }
        let mut list = candidates.ranked();
        let head = list.len().min(self.params.n);
        let plan = plan_windows(&self.params, head).map_err(|e| input_err(e.to_string()))?;
        let mut trace = TraceLog {
            qid: qid.clone(),
            windows: Vec::with_capacity(plan.len()),
        };

        for (i, range) in plan.ranges.iter().enumerate() {
            let window_ids: Vec<PassageId> = list.ids()[range.clone()].to_vec();
            let texts = window_ids
                .iter()
                .map(|id| {
                    corpus
                        .text(id)
                        .ok_or_else(|| input_err(format!("passage {id} missing from corpus")))
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let request = ChatRequest::new(
                format!("{qid}#w{i}"),
                vec![ChatMessage::user(self.build_prompt(query, &texts))],
            )
            .with_context(RequestContext {
                task: Task::Rerank,
                qid: qid.clone(),
                passage_ids: window_ids.clone(),
            });

            let started = Instant::now();
            let completion = match self.gateway.complete(&request) {
                Ok(c) => c,
                Err(source) => {
                    return Err(RerankError::Backend {
                        qid,
                        source: Box::new(source),
                        partial: trace,
                    })
                }
            };
            let raw = completion.response.text;
            let parsed = parse_response_for_window(&raw, window_ids.len());
            let answer = ranking_text(&parsed.answer, &raw);
            let (window_result, repair) = parse_ranking(answer, &window_ids);
            if parsed.format_status != FormatStatus::BothGood {
                log::debug!("{}: window {range:?} was {}", qid, parsed.format_status);
            }
            list = apply_window(&list, range.clone(), &window_result)
                .expect("repaired window is always a permutation of its slice");
            trace.windows.push(WindowTrace {
                start: range.start,
                end: range.end,
                raw,
                format_status: parsed.format_status,
                repair,
                duration: started.elapsed(),
                attempts: completion.attempts,
                usage: completion.response.usage,
            });
        }
        Ok((list, trace))
    }
}

/// Answer body if tagged, else whatever follows `</think>`, else the raw text.
pub(crate) fn ranking_text<'a>(answer: &'a Option<String>, raw: &'a str) -> &'a str {
    match answer {
        Some(a) => a,
        None => raw.rsplit_once("</think>").map_or(raw, |(_, tail)| tail),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::metrics::{ndcg_at_k, RelevanceJudgments};

    fn starts(plan: &WindowPlan) -> Vec<usize> {
        plan.ranges.iter().map(|r| r.start).collect()
    }

    #[test]
    fn default_plan_has_nine_windows() {
        let plan = plan_windows(&WindowParams::default(), 100).unwrap();
        assert_eq!(starts(&plan), vec![80, 70, 60, 50, 40, 30, 20, 10, 0]);
        assert_eq!(plan.ranges[0], 80..100);
        assert_eq!(plan.ranges[8], 0..20);
    }

    #[test]
    fn short_list_gets_one_window() {
        let plan = plan_windows(&WindowParams::default(), 10).unwrap();
        assert_eq!(plan.ranges, vec![0..10]);
    }

    #[test]
    fn small_window_variant() {
        let plan = plan_windows(&WindowParams::new(100, 10, 5).unwrap(), 100).unwrap();
        assert_eq!(plan.len(), 19);
        assert_eq!(starts(&plan), (0..=90).rev().step_by(5).collect::<Vec<_>>());
    }

    #[test]
    fn last_window_is_clamped() {
        let plan = plan_windows(&WindowParams::new(100, 20, 10).unwrap(), 25).unwrap();
        assert_eq!(plan.ranges, vec![5..25, 0..20]);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(WindowParams::new(100, 10, 11).is_err());
        assert!(WindowParams::new(100, 10, 0).is_err());
        assert!(WindowParams::new(0, 10, 5).is_err());
        assert!(plan_windows(&WindowParams::default(), 0).is_err());
    }

    fn rl(ids: &[&str]) -> RankedList {
        RankedList::new(ids.iter().copied()).unwrap()
    }

    #[test]
    fn apply_window_splices() {
        let out = apply_window(&rl(&["a", "b", "c", "d"]), 2..4, &rl(&["d", "c"])).unwrap();
        assert_eq!(out, rl(&["a", "b", "d", "c"]));
        let same = apply_window(&rl(&["a", "b", "c"]), 0..2, &rl(&["a", "b"])).unwrap();
        assert_eq!(same, rl(&["a", "b", "c"]));
        assert!(apply_window(&rl(&["a", "b", "c"]), 0..2, &rl(&["c", "a"])).is_err());
        assert!(apply_window(&rl(&["a", "b"]), 1..3, &rl(&["b"])).is_err());
    }

    fn fixture(len: usize) -> (Query, CandidateList, Corpus) {
        let ids: Vec<String> = (0..len).map(|i| format!("d{i}")).collect();
        let corpus = ids
            .iter()
            .map(|id| crate::ranking::Passage::new(id.clone(), format!("text of {id}")).unwrap())
            .collect();
        (
            Query::new("q1", "what?").unwrap(),
            CandidateList::from_ids("q1", ids).unwrap(),
            corpus,
        )
    }

    #[test]
    fn identity_backend_keeps_order() {
        let (q, cands, corpus) = fixture(100);
        let gw = Gateway::mock(MockBackend::identity());
        let (out, trace) = Reranker::new(&gw, WindowParams::default())
            .unwrap()
            .rerank_query(&q, &cands, &corpus)
            .unwrap();
        assert_eq!(out, cands.ranked());
        assert_eq!(trace.calls(), 9);
        assert_eq!(trace.format_failures(), 0);
    }

    #[test]
    fn oracle_promotes_last_passage_to_top() {
        let (q, cands, corpus) = fixture(100);
        let mut j = RelevanceJudgments::new();
        j.set("q1", "d99", 1);
        let gw = Gateway::mock(MockBackend::oracle(j.clone()));
        let (out, _) = Reranker::new(&gw, WindowParams::default())
            .unwrap()
            .rerank_query(&q, &cands, &corpus)
            .unwrap();
        assert_eq!(out.ids()[0], "d99");
        assert_eq!(ndcg_at_k(out.iter(), j.query("q1").unwrap(), 10), 1.0);
    }

    #[test]
    fn tail_beyond_n_is_untouched() {
        let (q, cands, corpus) = fixture(30);
        let gw = Gateway::mock(MockBackend::reverse());
        let params = WindowParams::new(10, 10, 5).unwrap();
        let (out, trace) = Reranker::new(&gw, params)
            .unwrap()
            .rerank_query(&q, &cands, &corpus)
            .unwrap();
        assert_eq!(trace.calls(), 1);
        assert_eq!(&out.ids()[10..], &cands.ranked().ids()[10..]);
        assert_eq!(out.ids()[0], "d9");
    }

    #[test]
    fn malformed_windows_still_produce_a_permutation() {
        let (q, cands, corpus) = fixture(45);
        for mode in crate::backend::MalformedMode::ALL {
            let gw = Gateway::mock(MockBackend::malformed(mode));
            let (out, trace) = Reranker::new(&gw, WindowParams::default())
                .unwrap()
                .rerank_query(&q, &cands, &corpus)
                .unwrap();
            assert!(out.is_permutation_of(cands.ranked().ids()));
            assert_eq!(trace.format_failures(), trace.calls());
        }
    }

    #[test]
    fn missing_passage_is_an_input_error() {
        let (q, cands, _) = fixture(5);
        let gw = Gateway::mock(MockBackend::identity());
        let err = Reranker::new(&gw, WindowParams::default())
            .unwrap()
            .rerank_query(&q, &cands, &Corpus::new())
            .unwrap_err();
        assert!(matches!(err, RerankError::Input { .. }));
    }

    #[test]
    fn backend_failure_carries_partial_trace() {
        use crate::backend::{Backend, BackendErrorKind, ChatResponse, RetryPolicy};
        use std::sync::atomic::{AtomicUsize, Ordering};

        struct DiesAfter(AtomicUsize, MockBackend);
        impl Backend for DiesAfter {
            fn name(&self) -> &str {
                "dies"
            }
            fn send(&self, r: &ChatRequest) -> std::result::Result<ChatResponse, BackendError> {
                if self.0.fetch_add(1, Ordering::SeqCst) >= 2 {
                    return Err(BackendError::new(BackendErrorKind::Status(400), "bad"));
                }
                self.1.send(r)
            }
        }

        let (q, cands, corpus) = fixture(100);
        let gw = Gateway::new(
            DiesAfter(AtomicUsize::new(0), MockBackend::identity()),
            RetryPolicy::none(),
            1,
        );
        let err = Reranker::new(&gw, WindowParams::default())
            .unwrap()
            .rerank_query(&q, &cands, &corpus)
            .unwrap_err();
        match err {
            RerankError::Backend { partial, source, .. } => {
                assert_eq!(partial.calls(), 2);
                assert_eq!(source.request_id, "q1#w2");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn prompts_use_original_query_and_local_numbering() {
        let gw = Gateway::mock(MockBackend::identity());
        let r = Reranker::new(&gw, WindowParams::default()).unwrap();
        let mut q = Query::new("q", "original").unwrap();
        q.rewritten = Some("rewritten".into());
        let prompt = r.build_prompt(&q, &["alpha", "beta"]);
        assert!(prompt.contains("[1]: alpha\n\n[2]: beta"));
        assert!(prompt.contains("search query: original."));
        assert!(!prompt.contains("rewritten"));
    }

    #[test]
    fn ranking_text_fallbacks() {
        assert_eq!(ranking_text(&Some("[1]".into()), "x"), "[1]");
        assert_eq!(ranking_text(&None, "<think>[9]</think>[2] > [1]"), "[2] > [1]");
        assert_eq!(ranking_text(&None, "[2] > [1]"), "[2] > [1]");
    }
}
