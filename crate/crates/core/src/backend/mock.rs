//! Deterministic in-process backends.

use std::str::FromStr;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Backend, BackendError, ChatRequest, ChatResponse, RequestContext, Task};
use crate::metrics::RelevanceJudgments;
use crate::ranking::format_ranking;
use crate::util::stable_hash;

/// Broken response shapes emitted by [`MockKind::Malformed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MalformedMode {
    /// Ranking text with no tags at all.
    NoTags,
    /// Answer tags without a think block.
    NoThink,
    /// Tags present, answer is prose.
    Prose,
    /// Tags present, only the first half of the window is ranked.
    Partial,
    /// Tags present, every index repeated.
    Duplicates,
    /// Tags present, indices beyond the window.
    OutOfRange,
    Empty,
}

impl MalformedMode {
    pub const ALL: [MalformedMode; 7] = [
        MalformedMode::NoTags,
        MalformedMode::NoThink,
        MalformedMode::Prose,
        MalformedMode::Partial,
        MalformedMode::Duplicates,
        MalformedMode::OutOfRange,
        MalformedMode::Empty,
    ];

    fn render(self, m: usize) -> String {
        let identity: Vec<usize> = (1..=m).collect();
        match self {
            MalformedMode::NoTags => format_ranking(&identity),
            MalformedMode::NoThink => format!("<answer>{}</answer>", format_ranking(&identity)),
            MalformedMode::Prose => {
                "<think>hmm</think><answer>The first passage looks best.</answer>".into()
            }
            MalformedMode::Partial => format!(
                "<think>partial</think><answer>{}</answer>",
                format_ranking(&identity[..m / 2])
            ),
            MalformedMode::Duplicates => {
                let doubled: Vec<usize> = identity.iter().flat_map(|&k| [k, k]).collect();
                format!("<think>dup</think><answer>{}</answer>", format_ranking(&doubled))
            }
            MalformedMode::OutOfRange => {
                let shifted: Vec<usize> = identity.iter().map(|k| k + m).collect();
                format!("<think>oob</think><answer>{}</answer>", format_ranking(&shifted))
            }
            MalformedMode::Empty => String::new(),
        }
    }
}

impl FromStr for MalformedMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "no-tags" => MalformedMode::NoTags,
            "no-think" => MalformedMode::NoThink,
            "prose" => MalformedMode::Prose,
            "partial" => MalformedMode::Partial,
            "duplicates" => MalformedMode::Duplicates,
            "out-of-range" => MalformedMode::OutOfRange,
            "empty" => MalformedMode::Empty,
            other => return Err(format!("unknown malformed mode {other:?}")),
        })
    }
}

#[derive(Debug, Clone)]
pub enum MockKind {
    /// Keeps the presented order.
    Identity,
    Reverse,
    /// Ranks by hidden grade, highest first, ties in presented order.
    Oracle(Arc<RelevanceJudgments>),
    /// Seeded adjacent swaps over identity order, or over oracle order
    /// when judgments are given.
    Noisy {
        seed: u64,
        swap_rate: f64,
        judgments: Option<Arc<RelevanceJudgments>>,
    },
    Malformed(MalformedMode),
}

/// Test double answering from [`RequestContext`] alone.
///
/// Rerank and label tasks get `<think>..</think><answer>[i] > [j] ..</answer>`.
/// Selection tasks get `[i] [j]` or `None`; oracles select relevant passages
/// as positives and unjudged or zero-grade passages as hard negatives.
#[derive(Debug, Clone)]
pub struct MockBackend {
    kind: MockKind,
    name: String,
}

impl MockBackend {
    pub fn new(kind: MockKind) -> Self {
        let name = match &kind {
            MockKind::Identity => "mock:identity".to_string(),
            MockKind::Reverse => "mock:reverse".to_string(),
            MockKind::Oracle(_) => "mock:oracle".to_string(),
            MockKind::Noisy { seed, swap_rate, .. } => format!("mock:noisy({seed},{swap_rate})"),
            MockKind::Malformed(mode) => format!("mock:malformed({mode:?})"),
        };
        Self { kind, name }
    }

    pub fn identity() -> Self {
        Self::new(MockKind::Identity)
    }

    pub fn reverse() -> Self {
        Self::new(MockKind::Reverse)
    }

    pub fn oracle(judgments: impl Into<Arc<RelevanceJudgments>>) -> Self {
        Self::new(MockKind::Oracle(judgments.into()))
    }

    pub fn noisy(seed: u64, swap_rate: f64) -> Self {
        Self::new(MockKind::Noisy {
            seed,
            swap_rate,
            judgments: None,
        })
    }

    pub fn noisy_oracle(seed: u64, swap_rate: f64, judgments: impl Into<Arc<RelevanceJudgments>>) -> Self {
        Self::new(MockKind::Noisy {
            seed,
            swap_rate,
            judgments: Some(judgments.into()),
        })
    }

    pub fn malformed(mode: MalformedMode) -> Self {
        Self::new(MockKind::Malformed(mode))
    }

    pub fn kind(&self) -> &MockKind {
        &self.kind
    }

    /// Local 1-based indices in the order this mock would rank them.
    fn order(&self, ctx: &RequestContext) -> Vec<usize> {
        let m = ctx.passage_ids.len();
        let identity: Vec<usize> = (1..=m).collect();
        match &self.kind {
            MockKind::Identity | MockKind::Malformed(_) => identity,
            MockKind::Reverse => identity.into_iter().rev().collect(),
            MockKind::Oracle(j) => oracle_order(ctx, j),
            MockKind::Noisy {
                seed,
                swap_rate,
                judgments,
            } => {
                let mut order = match judgments {
                    Some(j) => oracle_order(ctx, j),
                    None => identity,
                };
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ context_hash(ctx));
                for i in 0..order.len().saturating_sub(1) {
                    if rng.random::<f64>() < *swap_rate {
                        order.swap(i, i + 1);
                    }
                }
                order
            }
        }
    }

    fn judgments(&self) -> Option<&RelevanceJudgments> {
        match &self.kind {
            MockKind::Oracle(j) => Some(j),
            MockKind::Noisy {
                judgments: Some(j), ..
            } => Some(j),
            _ => None,
        }
    }

    fn select(&self, ctx: &RequestContext, want_relevant: bool) -> String {
        if let MockKind::Malformed(_) = self.kind {
            return "I could not decide which passages matter.".into();
        }
        let Some(j) = self.judgments() else {
            return "None".into();
        };
        let q = j.query(&ctx.qid);
        let picked: Vec<String> = ctx
            .passage_ids
            .iter()
            .enumerate()
            .filter(|(_, id)| q.is_some_and(|q| q.is_relevant(id)) == want_relevant)
            .map(|(i, _)| format!("[{}]", i + 1))
            .collect();
        if picked.is_empty() {
            "None".into()
        } else {
            picked.join(" ")
        }
    }

    fn respond(&self, ctx: &RequestContext) -> String {
        match ctx.task {
            Task::SelectPositives => self.select(ctx, true),
            Task::SelectHardNegatives => self.select(ctx, false),
            Task::Rerank | Task::ListwiseLabel => {
                if let MockKind::Malformed(mode) = self.kind {
                    return mode.render(ctx.passage_ids.len());
                }
                format!(
                    "<think>Compared {} passages for query {}.</think><answer>{}</answer>",
                    ctx.passage_ids.len(),
                    ctx.qid,
                    format_ranking(&self.order(ctx))
                )
            }
        }
    }
}

fn oracle_order(ctx: &RequestContext, judgments: &RelevanceJudgments) -> Vec<usize> {
    let mut order: Vec<usize> = (1..=ctx.passage_ids.len()).collect();
    if let Some(q) = judgments.query(&ctx.qid) {
        // stable sort keeps presented order among equal grades
        order.sort_by_key(|&k| std::cmp::Reverse(q.grade(&ctx.passage_ids[k - 1])));
    }
    order
}

fn context_hash(ctx: &RequestContext) -> u64 {
    stable_hash(std::iter::once(ctx.qid.as_str()).chain(ctx.passage_ids.iter().map(String::as_str)))
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let ctx = request
            .context
            .as_ref()
            .ok_or_else(|| BackendError::protocol("mock backends need a request context"))?;
        Ok(ChatResponse::text(self.respond(ctx)))
    }
}

/// Fails the first `failures` attempts with a transport error, then delegates.
#[derive(Debug)]
pub struct FlakyBackend<B> {
    inner: B,
    failures: u32,
    seen: AtomicU32,
}

impl<B: Backend> FlakyBackend<B> {
    pub fn new(inner: B, failures: u32) -> Self {
        Self {
            inner,
            failures,
            seen: AtomicU32::new(0),
        }
    }

    pub fn attempts_seen(&self) -> u32 {
        self.seen.load(Ordering::SeqCst)
    }
}

impl<B: Backend> Backend for FlakyBackend<B> {
    fn name(&self) -> &str {
        "mock:flaky"
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let n = self.seen.fetch_add(1, Ordering::SeqCst);
        if n < self.failures {
            return Err(BackendError::transport(format!("injected failure {}", n + 1)));
        }
        if request.context.is_none() {
            return Ok(ChatResponse::text("ok"));
        }
        self.inner.send(request)
    }
}
