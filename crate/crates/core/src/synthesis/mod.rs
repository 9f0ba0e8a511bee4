//! Teacher-labelled training lists and self-consistency filtering.
//!
//! For each query the pipeline:
//!
//! 1. splits any attached documents into passages,
//! 2. asks the teacher which pool passages are positives,
//! 3. asks which search-result passages are hard negatives,
//! 4. assembles a shuffled list of at most 20 passages with binary labels,
//! 5. asks the teacher to rank that list (without the gold answer),
//! 6. scores how well the teacher's ranking agrees with its own labels.
//!
//! [`self_consistency_filter`] then drops records whose agreement is below
//! a threshold.

mod split;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use split::split_document;

use crate::backend::{BackendError, ChatMessage, ChatRequest, Gateway, RequestContext, Task};
use crate::error::{Error, Result};
use crate::metrics::{ndcg_at_k, QueryJudgments};
use crate::prompt::{self, clip, selection_passage_block, PromptTemplate};
use crate::ranking::{parse_ranking, parse_response, scan_indices, Passage, PassageId, Query, RankedList, RepairReport};
use crate::util::{ordered_map, stable_hash};

/// Training lists never exceed this many passages.
pub const DEFAULT_LIST_CAP: usize = 20;
/// Candidate pool size shown to the teacher for positive selection.
pub const DEFAULT_POOL_SIZE: usize = 40;
/// Records whose consistency falls below this are filtered out.
pub const DEFAULT_ALPHA: f64 = 0.4;
/// Cutoff of the NDCG used as the consistency score.
pub const CONSISTENCY_CUTOFF: usize = 10;

/// Source tag marking search-result passages that go through hard-negative selection.
pub const HARD_SOURCE: &str = "hard";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    ComplexQa,
    Coding,
    MathProblem,
    MathTheorem,
    WebSearch,
}

impl Domain {
    pub const ALL: [Domain; 5] = [
        Domain::ComplexQa,
        Domain::Coding,
        Domain::MathProblem,
        Domain::MathTheorem,
        Domain::WebSearch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::ComplexQa => "complex-qa",
            Domain::Coding => "coding",
            Domain::MathProblem => "math-problem",
            Domain::MathTheorem => "math-theorem",
            Domain::WebSearch => "web-search",
        }
    }

    /// Category heading used in filter reports.
    pub fn category(self) -> &'static str {
        match self {
            Domain::ComplexQa => "Complex QA",
            Domain::Coding => "Coding",
            Domain::MathProblem | Domain::MathTheorem => "Math",
            Domain::WebSearch => "Web Search",
        }
    }

    fn positives_template(self) -> &'static str {
        match self {
            Domain::ComplexQa | Domain::WebSearch => prompt::POSITIVES_COMPLEX_QA,
            Domain::Coding => prompt::POSITIVES_CODING,
            Domain::MathProblem => prompt::POSITIVES_MATH_PROBLEM,
            Domain::MathTheorem => prompt::POSITIVES_MATH_THEOREM,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateInput {
    pub id: PassageId,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    /// Pre-annotated relevance, used instead of teacher selection for web-search queries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentInput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub text: String,
}

/// One line of the candidates file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisInput {
    pub qid: String,
    pub query: String,
    pub domain: Domain,
    #[serde(default)]
    pub gold_answer: String,
    #[serde(default)]
    pub candidates: Vec<CandidateInput>,
    /// Whole documents, split into passages before selection.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub documents: Vec<DocumentInput>,
}

impl SynthesisInput {
    /// Candidates plus passages split from documents, ids checked for uniqueness.
    pub fn passages(&self, max_segment_chars: Option<usize>) -> Result<Vec<Passage>> {
        let mut out = Vec::new();
        for c in &self.candidates {
            let mut p = Passage::new(c.id.clone(), c.text.clone())?;
            p.source = c.source.clone();
            out.push(p);
        }
        for (d, doc) in self.documents.iter().enumerate() {
            for (j, text) in split_document(&doc.text, max_segment_chars).into_iter().enumerate() {
                let mut p = Passage::new(format!("{}:doc{d}:{j}", self.qid), text)?;
                p.source = doc.source.clone();
                out.push(p);
            }
        }
        let mut seen = HashSet::new();
        if let Some(dup) = out.iter().find(|p| !seen.insert(p.id.as_str())) {
            return Err(Error::invalid(format!("duplicate passage id {} in {}", dup.id, self.qid)));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListwiseLabel {
    pub think: String,
    pub gold: RankedList,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordPassage {
    pub id: PassageId,
    pub text: String,
}

/// One line of the records file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRecord {
    pub qid: String,
    pub query: String,
    pub domain: Domain,
    /// Training list in prompt order.
    pub passages: Vec<RecordPassage>,
    pub pointwise: BTreeMap<PassageId, u8>,
    pub think: String,
    pub gold: RankedList,
    pub consistency: f64,
}

impl SynthesisRecord {
    pub fn passage_ids(&self) -> Vec<PassageId> {
        self.passages.iter().map(|p| p.id.clone()).collect()
    }

    pub fn judgments(&self) -> QueryJudgments {
        self.pointwise
            .iter()
            .map(|(id, &l)| (id.clone(), u32::from(l)))
            .collect()
    }

    /// NDCG@10 of the gold list against the pointwise labels.
    pub fn compute_consistency(&self) -> f64 {
        ndcg_at_k(self.gold.iter(), &self.judgments(), CONSISTENCY_CUTOFF)
    }

    pub fn validate(&self) -> Result<()> {
        let ids = self.passage_ids();
        if ids.len() > DEFAULT_LIST_CAP {
            return Err(Error::invalid(format!(
                "record {} has {} passages (cap {DEFAULT_LIST_CAP})",
                self.qid,
                ids.len()
            )));
        }
        if self.gold.is_empty() || !self.gold.is_permutation_of(&ids) {
            return Err(Error::invalid(format!(
                "record {}: gold list is not a permutation of its passages",
                self.qid
            )));
        }
        if let Some(id) = self.pointwise.keys().find(|id| !ids.contains(id)) {
            return Err(Error::invalid(format!("record {}: label for unknown passage {id}", self.qid)));
        }
        if !(0.0..=1.0).contains(&self.consistency) {
            return Err(Error::invalid(format!(
                "record {}: consistency {} outside [0,1]",
                self.qid, self.consistency
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub cap: usize,
    pub pool_size: usize,
    pub seed: u64,
    /// Clip passages in teacher prompts. Off by default.
    pub max_passage_chars: Option<usize>,
    /// Re-split document segments longer than this.
    pub max_segment_chars: Option<usize>,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            cap: DEFAULT_LIST_CAP,
            pool_size: DEFAULT_POOL_SIZE,
            seed: 0,
            max_passage_chars: None,
            max_segment_chars: Some(2000),
        }
    }
}

/// Ids picked by the teacher, plus anything odd about its reply.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Selection {
    pub ids: Vec<PassageId>,
    pub warnings: Vec<String>,
}

/// Reads a `[2] [4]` / `None` selection reply over `m` passages.
/// Returns distinct 1-based indices in reply order.
pub fn parse_selection(text: &str, m: usize) -> (Vec<usize>, Vec<String>) {
    let body = text.rsplit_once("</think>").map_or(text, |(_, tail)| tail);
    let mut warnings = Vec::new();
    let tokens = scan_indices(body);
    if tokens.is_empty() {
        if body.trim().trim_matches('"').eq_ignore_ascii_case("none") || body.contains("None") {
            return (Vec::new(), warnings);
        }
        warnings.push(format!("unparseable selection reply: {:?}", clip(body.trim(), Some(80))));
        return (Vec::new(), warnings);
    }
    let mut picked = Vec::new();
    for k in tokens {
        if k == 0 || k > m as u64 {
            warnings.push(format!("selection index [{k}] outside 1..={m}"));
            continue;
        }
        let k = k as usize;
        if !picked.contains(&k) {
            picked.push(k);
        }
    }
    (picked, warnings)
}

/// Ordered training list with binary labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingList {
    pub ids: Vec<PassageId>,
    pub pointwise: BTreeMap<PassageId, u8>,
    pub warnings: Vec<String>,
}

/// Fills up to `cap` slots with all positives, then hard negatives, then
/// randomly drawn negatives, and shuffles the result.
pub fn assemble_training_list<R: Rng>(
    positives: &[PassageId],
    hard_negatives: &[PassageId],
    negatives: &[PassageId],
    cap: usize,
    rng: &mut R,
) -> Result<TrainingList> {
    let pos: HashSet<&str> = positives.iter().map(String::as_str).collect();
    let hard: HashSet<&str> = hard_negatives.iter().map(String::as_str).collect();
    let neg: HashSet<&str> = negatives.iter().map(String::as_str).collect();
    if pos.len() != positives.len() || hard.len() != hard_negatives.len() || neg.len() != negatives.len() {
        return Err(Error::invalid("selection sets contain duplicate ids"));
    }
    if !pos.is_disjoint(&hard) || !pos.is_disjoint(&neg) || !hard.is_disjoint(&neg) {
        return Err(Error::invalid("positive, hard-negative and negative sets must be disjoint"));
    }
    if positives.is_empty() {
        return Err(Error::invalid("no positives; record is unusable"));
    }
    if cap == 0 {
        return Err(Error::invalid("list cap must be at least 1"));
    }

    let mut warnings = Vec::new();
    let mut ids: Vec<PassageId> = positives.iter().take(cap).cloned().collect();
    if positives.len() > cap {
        warnings.push(format!("{} positives truncated to cap {cap}", positives.len()));
    }
    let room = cap - ids.len();
    ids.extend(hard_negatives.iter().take(room).cloned());
    let room = cap - ids.len();
    ids.extend(negatives.choose_multiple(rng, room).cloned());
    ids.shuffle(rng);

    let pointwise = ids
        .iter()
        .map(|id| (id.clone(), u8::from(pos.contains(id.as_str()))))
        .collect();
    Ok(TrainingList {
        ids,
        pointwise,
        warnings,
    })
}

#[derive(Debug, Error)]
pub enum LabelError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("teacher returned an empty response")]
    Empty,
    #[error("training list is empty")]
    EmptyList,
}

/// Why a query produced no record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Skipped {
    pub qid: String,
    pub domain: Domain,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SynthesisReport {
    pub produced: usize,
    pub skipped: Vec<Skipped>,
    pub warnings: Vec<String>,
    pub repairs: RepairReport,
}

/// Teacher-driven record builder over a shared gateway.
#[derive(Debug)]
pub struct Synthesizer<'g> {
    gateway: &'g Gateway,
    config: SynthesisConfig,
}

impl<'g> Synthesizer<'g> {
    pub fn new(gateway: &'g Gateway, config: SynthesisConfig) -> Self {
        Self { gateway, config }
    }

    pub fn config(&self) -> &SynthesisConfig {
        &self.config
    }

    fn selection_request(
        &self,
        task: Task,
        template: &str,
        query: &Query,
        gold_answer: &str,
        candidates: &[Passage],
    ) -> ChatRequest {
        let block = selection_passage_block(
            candidates.iter().map(|p| p.text.as_str()),
            self.config.max_passage_chars,
        );
        let text = PromptTemplate::new(template).render(&[
            ("query", &query.text),
            ("answer", gold_answer),
            ("passages", &block),
        ]);
        let tag = if task == Task::SelectPositives { "pos" } else { "hard" };
        ChatRequest::new(format!("{}#{tag}", query.qid), vec![ChatMessage::user(text)]).with_context(
            RequestContext {
                task,
                qid: query.qid.clone(),
                passage_ids: candidates.iter().map(|p| p.id.clone()).collect(),
            },
        )
    }

    fn select(
        &self,
        task: Task,
        template: &str,
        query: &Query,
        gold_answer: &str,
        candidates: &[Passage],
    ) -> std::result::Result<Selection, BackendError> {
        let mut warnings = Vec::new();
        let candidates = if candidates.len() > self.config.pool_size {
            warnings.push(format!(
                "{}: {} candidates truncated to pool size {}",
                query.qid,
                candidates.len(),
                self.config.pool_size
            ));
            &candidates[..self.config.pool_size]
        } else {
            candidates
        };
        if candidates.is_empty() {
            return Ok(Selection { ids: Vec::new(), warnings });
        }
        let request = self.selection_request(task, template, query, gold_answer, candidates);
        let reply = self.gateway.complete(&request)?.response.text;
        let (picked, parse_warnings) = parse_selection(&reply, candidates.len());
        warnings.extend(parse_warnings.into_iter().map(|w| format!("{}: {w}", query.qid)));
        let ids = picked.into_iter().map(|k| candidates[k - 1].id.clone()).collect();
        Ok(Selection { ids, warnings })
    }

    /// Positive selection with the domain's prompt; the gold answer is shown.
    pub fn select_positives(
        &self,
        query: &Query,
        gold_answer: &str,
        domain: Domain,
        candidates: &[Passage],
    ) -> std::result::Result<Selection, BackendError> {
        self.select(Task::SelectPositives, domain.positives_template(), query, gold_answer, candidates)
    }

    /// Hard-negative selection; anything already in `positives` is dropped.
    pub fn select_hard_negatives(
        &self,
        query: &Query,
        gold_answer: &str,
        candidates: &[Passage],
        positives: &[PassageId],
    ) -> std::result::Result<Selection, BackendError> {
        let mut sel = self.select(Task::SelectHardNegatives, prompt::HARD_NEGATIVES, query, gold_answer, candidates)?;
        let before = sel.ids.len();
        sel.ids.retain(|id| !positives.contains(id));
        if sel.ids.len() < before {
            sel.warnings.push(format!(
                "{}: dropped {} hard negative(s) already selected as positives",
                query.qid,
                before - sel.ids.len()
            ));
        }
        Ok(sel)
    }

    /// Multi-turn ranking prompt over the training list. The gold answer is
    /// deliberately not part of it.
    pub fn label_messages(&self, query: &Query, list: &[Passage]) -> Vec<ChatMessage> {
        let num = list.len().to_string();
        let vars = [("num", num.as_str()), ("query", query.text.as_str())];
        let mut messages = vec![
            ChatMessage::user(PromptTemplate::new(prompt::LABEL_INTRO).render(&vars)),
            ChatMessage::assistant(prompt::LABEL_ACK),
        ];
        for (i, p) in list.iter().enumerate() {
            messages.push(ChatMessage::user(format!(
                "[{}] {}",
                i + 1,
                clip(&p.text, self.config.max_passage_chars)
            )));
            messages.push(ChatMessage::assistant(format!("Received passage [{}].", i + 1)));
        }
        messages.push(ChatMessage::user(PromptTemplate::new(prompt::LABEL_FINAL).render(&vars)));
        messages
    }

    pub fn generate_listwise_label(
        &self,
        query: &Query,
        list: &[Passage],
    ) -> std::result::Result<(ListwiseLabel, RepairReport), LabelError> {
        if list.is_empty() {
            return Err(LabelError::EmptyList);
        }
        let ids: Vec<PassageId> = list.iter().map(|p| p.id.clone()).collect();
        let request = ChatRequest::new(format!("{}#label", query.qid), self.label_messages(query, list))
            .with_context(RequestContext {
                task: Task::ListwiseLabel,
                qid: query.qid.clone(),
                passage_ids: ids.clone(),
            });
        let response = self.gateway.complete(&request)?.response;
        if response.text.trim().is_empty() {
            return Err(LabelError::Empty);
        }
        let parsed = parse_response(&response.text);
        let think = response
            .reasoning
            .clone()
            .or(parsed.think.clone())
            .unwrap_or_default()
            .trim()
            .to_string();
        let body = crate::window::ranking_text(&parsed.answer, &response.text);
        let (gold, repair) = parse_ranking(body, &ids);
        if !repair.is_clean() {
            log::info!("{}: teacher ranking repaired {repair:?}", query.qid);
        }
        Ok((ListwiseLabel { think, gold }, repair))
    }

    /// Runs every stage for one input. Deterministic given the seed and a
    /// deterministic backend.
    pub fn synthesize_one(
        &self,
        input: &SynthesisInput,
    ) -> (std::result::Result<SynthesisRecord, Skipped>, Vec<String>, RepairReport) {
        let mut warnings = Vec::new();
        let skip = |reason: String| Skipped {
            qid: input.qid.clone(),
            domain: input.domain,
            reason,
        };
        let result = (|| {
            let query = Query::new(input.qid.clone(), input.query.clone()).map_err(|e| skip(e.to_string()))?;
            let passages = input
                .passages(self.config.max_segment_chars)
                .map_err(|e| skip(e.to_string()))?;
            let (hard_pool, mut pool): (Vec<Passage>, Vec<Passage>) = passages
                .into_iter()
                .partition(|p| p.source.as_deref() == Some(HARD_SOURCE));
            if pool.len() > self.config.pool_size {
                warnings.push(format!(
                    "{}: {} pool passages truncated to {}",
                    input.qid,
                    pool.len(),
                    self.config.pool_size
                ));
                pool.truncate(self.config.pool_size);
            }

            let labelled = input.domain == Domain::WebSearch
                && input.candidates.iter().any(|c| c.label.is_some());
            let positives: Vec<PassageId> = if labelled {
                let relevant: HashSet<&str> = input
                    .candidates
                    .iter()
                    .filter(|c| c.label.unwrap_or(0) > 0)
                    .map(|c| c.id.as_str())
                    .collect();
                pool.iter()
                    .filter(|p| relevant.contains(p.id.as_str()))
                    .map(|p| p.id.clone())
                    .collect()
            } else {
                let sel = self
                    .select_positives(&query, &input.gold_answer, input.domain, &pool)
                    .map_err(|e| skip(format!("positive selection failed: {e}")))?;
                warnings.extend(sel.warnings);
                sel.ids
            };
            if positives.is_empty() {
                return Err(skip("no positives selected".into()));
            }

            let hard = if hard_pool.is_empty() {
                Vec::new()
            } else {
                let sel = self
                    .select_hard_negatives(&query, &input.gold_answer, &hard_pool, &positives)
                    .map_err(|e| skip(format!("hard negative selection failed: {e}")))?;
                warnings.extend(sel.warnings);
                sel.ids
            };
            let negatives: Vec<PassageId> = pool
                .iter()
                .map(|p| p.id.clone())
                .filter(|id| !positives.contains(id))
                .collect();

            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ stable_hash([input.qid.as_str()]));
            let list = assemble_training_list(&positives, &hard, &negatives, self.config.cap, &mut rng)
                .map_err(|e| skip(e.to_string()))?;
            warnings.extend(list.warnings.iter().map(|w| format!("{}: {w}", input.qid)));

            let by_id: BTreeMap<&str, &Passage> =
                pool.iter().chain(hard_pool.iter()).map(|p| (p.id.as_str(), p)).collect();
            let list_passages: Vec<Passage> = list.ids.iter().map(|id| by_id[id.as_str()].clone()).collect();
            let (label, repair) = self
                .generate_listwise_label(&query, &list_passages)
                .map_err(|e| skip(format!("listwise labelling failed: {e}")))?;

            let mut record = SynthesisRecord {
                qid: input.qid.clone(),
                query: input.query.clone(),
                domain: input.domain,
                passages: list_passages
                    .into_iter()
                    .map(|p| RecordPassage { id: p.id, text: p.text })
                    .collect(),
                pointwise: list.pointwise,
                think: label.think,
                gold: label.gold,
                consistency: 0.0,
            };
            record.consistency = record.compute_consistency();
            Ok((record, repair))
        })();
        match result {
            Ok((record, repair)) => (Ok(record), warnings, repair),
            Err(skipped) => (Err(skipped), warnings, RepairReport::default()),
        }
    }

    /// Processes inputs concurrently up to the gateway's bound. Output keeps input order.
    pub fn run(&self, inputs: &[SynthesisInput]) -> (Vec<SynthesisRecord>, SynthesisReport) {
        let outcomes = ordered_map(inputs, self.gateway.concurrency(), |input| self.synthesize_one(input));
        let mut records = Vec::new();
        let mut report = SynthesisReport::default();
        for (outcome, warnings, repair) in outcomes {
            for w in &warnings {
                log::warn!("{w}");
            }
            report.warnings.extend(warnings);
            report.repairs.add(&repair);
            match outcome {
                Ok(r) => records.push(r),
                Err(s) => {
                    log::warn!("skipping {}: {}", s.qid, s.reason);
                    report.skipped.push(s);
                }
            }
        }
        report.produced = records.len();
        (records, report)
    }
}

/// Keep rule: only records strictly below `alpha` are dropped.
pub fn keeps(consistency: f64, alpha: f64) -> bool {
    consistency >= alpha
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DomainCounts {
    pub kept: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterReport {
    pub alpha: f64,
    pub per_domain: BTreeMap<Domain, DomainCounts>,
}

impl FilterReport {
    pub fn kept(&self) -> usize {
        self.per_domain.values().map(|c| c.kept).sum()
    }

    pub fn dropped(&self) -> usize {
        self.per_domain.values().map(|c| c.dropped).sum()
    }
}

impl fmt::Display for FilterReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:<14} {:>8} {:>8}", "Category", "Domain", "Kept", "Dropped")?;
        for (domain, c) in &self.per_domain {
            writeln!(
                f,
                "{:<12} {:<14} {:>8} {:>8}",
                domain.category(),
                domain.as_str(),
                c.kept,
                c.dropped
            )?;
        }
        write!(
            f,
            "{:<12} {:<14} {:>8} {:>8}",
            "Total",
            format!("alpha={}", self.alpha),
            self.kept(),
            self.dropped()
        )
    }
}

/// Keeps records whose stored consistency is at least `alpha`.
pub fn self_consistency_filter(
    records: Vec<SynthesisRecord>,
    alpha: f64,
) -> (Vec<SynthesisRecord>, FilterReport) {
    let mut report = FilterReport {
        alpha,
        per_domain: BTreeMap::new(),
    };
    let kept = records
        .into_iter()
        .filter(|r| {
            let keep = keeps(r.consistency, alpha);
            let counts = report.per_domain.entry(r.domain).or_default();
            if keep {
                counts.kept += 1;
            } else {
                counts.dropped += 1;
            }
            keep
        })
        .collect();
    (kept, report)
}

fn read_jsonl<T, R>(reader: R, source: &str, check: impl Fn(&T) -> Result<()>) -> Result<Vec<T>>
where
    T: serde::de::DeserializeOwned,
    R: BufRead,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: T = serde_json::from_str(&line).map_err(|e| Error::load(source, i + 1, e.to_string()))?;
        check(&value).map_err(|e| Error::load(source, i + 1, e.to_string()))?;
        out.push(value);
    }
    Ok(out)
}

pub fn read_inputs<R: BufRead>(reader: R, source: &str) -> Result<Vec<SynthesisInput>> {
    read_jsonl(reader, source, |_: &SynthesisInput| Ok(()))
}

/// Reads a records file, validating every record.
pub fn read_records<R: BufRead>(reader: R, source: &str) -> Result<Vec<SynthesisRecord>> {
    read_jsonl(reader, source, SynthesisRecord::validate)
}

pub fn write_records<W: Write>(mut writer: W, records: &[SynthesisRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::metrics::RelevanceJudgments;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn fill_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = assemble_training_list(&ids("p", 3), &ids("h", 5), &ids("n", 30), 20, &mut rng).unwrap();
        assert_eq!(l.ids.len(), 20);
        for p in ids("p", 3).iter().chain(&ids("h", 5)) {
            assert!(l.ids.contains(p));
        }
        assert_eq!(l.pointwise.values().filter(|&&v| v == 1).count(), 3);
        assert!(l.warnings.is_empty());
    }

    #[test]
    fn too_many_positives_truncated() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = assemble_training_list(&ids("p", 25), &[], &ids("n", 5), 20, &mut rng).unwrap();
        assert_eq!(l.ids.len(), 20);
        assert!(l.ids.iter().all(|id| id.starts_with('p')));
        assert_eq!(l.warnings.len(), 1);
    }

    #[test]
    fn exhaustion_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = assemble_training_list(&ids("p", 1), &[], &ids("n", 3), 20, &mut rng).unwrap();
        assert_eq!(l.ids.len(), 4);
        assert!(assemble_training_list(&[], &[], &ids("n", 3), 20, &mut rng).is_err());
        assert!(assemble_training_list(&ids("p", 1), &ids("p", 1), &[], 20, &mut rng).is_err());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            assemble_training_list(&ids("p", 3), &ids("h", 2), &ids("n", 30), 20, &mut rng)
                .unwrap()
                .ids
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn selection_parsing() {
        assert_eq!(parse_selection("[2] [4]", 20), (vec![2, 4], vec![]));
        assert_eq!(parse_selection("None", 20), (vec![], vec![]));
        assert_eq!(parse_selection("\"None\"", 20), (vec![], vec![]));
        let (picked, warnings) = parse_selection("[99]", 20);
        assert!(picked.is_empty());
        assert_eq!(warnings.len(), 1);
        let (picked, warnings) = parse_selection("no idea", 20);
        assert!(picked.is_empty());
        assert_eq!(warnings.len(), 1);
        assert_eq!(parse_selection("<think>[7]</think>[1] [1] [3]", 5).0, vec![1, 3]);
    }

    fn oracle_gateway() -> Gateway {
        let mut j = RelevanceJudgments::new();
        j.set("q", "c2", 1);
        j.set("q", "c4", 1);
        Gateway::mock(MockBackend::oracle(j))
    }

    fn passages(n: usize) -> Vec<Passage> {
        (1..=n)
            .map(|i| Passage::new(format!("c{i}"), format!("passage {i}")).unwrap())
            .collect()
    }

    #[test]
    fn positives_map_back_to_candidates() {
        let gw = oracle_gateway();
        let s = Synthesizer::new(&gw, SynthesisConfig::default());
        let q = Query::new("q", "query").unwrap();
        let sel = s.select_positives(&q, "answer", Domain::Coding, &passages(5)).unwrap();
        assert_eq!(sel.ids, vec!["c2", "c4"]);
    }

    #[test]
    fn hard_negatives_exclude_positives() {
        let gw = oracle_gateway();
        let s = Synthesizer::new(&gw, SynthesisConfig::default());
        let q = Query::new("q", "query").unwrap();
        // the oracle calls c1, c3 hard negatives; pretend c1 was already positive
        let sel = s
            .select_hard_negatives(&q, "answer", &passages(3), &["c1".to_string()])
            .unwrap();
        assert_eq!(sel.ids, vec!["c3"]);
        assert_eq!(sel.warnings.len(), 1);
    }

    #[test]
    fn label_prompt_omits_gold_answer() {
        let gw = oracle_gateway();
        let s = Synthesizer::new(&gw, SynthesisConfig::default());
        let q = Query::new("q", "the query").unwrap();
        let msgs = s.label_messages(&q, &passages(2));
        assert_eq!(msgs.len(), 2 + 4 + 1);
        assert_eq!(msgs[1].content, "Okay, please provide the passages.");
        assert_eq!(msgs[2].content, "[1] passage 1");
        assert_eq!(msgs[3].content, "Received passage [1].");
        assert!(msgs[6].content.starts_with("Search Query: the query. Rank the 2 passages above"));
    }

    #[test]
    fn label_repairs_partial_ranking() {
        let gw = Gateway::mock(MockBackend::malformed(crate::backend::MalformedMode::Partial));
        let s = Synthesizer::new(&gw, SynthesisConfig::default());
        let q = Query::new("q", "query").unwrap();
        let (label, repair) = s.generate_listwise_label(&q, &passages(6)).unwrap();
        assert_eq!(label.gold.len(), 6);
        assert_eq!(repair.appended, 3);
    }

    #[test]
    fn empty_teacher_reply_skips() {
        let gw = Gateway::mock(MockBackend::malformed(crate::backend::MalformedMode::Empty));
        let s = Synthesizer::new(&gw, SynthesisConfig::default());
        let q = Query::new("q", "query").unwrap();
        assert!(matches!(s.generate_listwise_label(&q, &passages(3)), Err(LabelError::Empty)));
    }

    fn record(consistency: f64, domain: Domain) -> SynthesisRecord {
        SynthesisRecord {
            qid: "q".into(),
            query: "x".into(),
            domain,
            passages: vec![RecordPassage { id: "a".into(), text: "t".into() }],
            pointwise: [("a".to_string(), 1)].into_iter().collect(),
            think: String::new(),
            gold: RankedList::new(["a"]).unwrap(),
            consistency,
        }
    }

    #[test]
    fn filter_boundary() {
        let recs = vec![
            record(0.39, Domain::Coding),
            record(0.40, Domain::Coding),
            record(0.41, Domain::WebSearch),
        ];
        let (kept, report) = self_consistency_filter(recs, DEFAULT_ALPHA);
        assert_eq!(kept.iter().map(|r| r.consistency).collect::<Vec<_>>(), vec![0.40, 0.41]);
        assert_eq!(report.per_domain[&Domain::Coding], DomainCounts { kept: 1, dropped: 1 });
        assert_eq!(report.kept(), 2);
        assert!(report.to_string().contains("Coding"));
    }

    #[test]
    fn filter_extremes() {
        let recs: Vec<_> = [0.0, 0.5, 1.0].iter().map(|&c| record(c, Domain::MathProblem)).collect();
        assert_eq!(self_consistency_filter(recs.clone(), 0.0).0.len(), 3);
        assert_eq!(self_consistency_filter(recs, 1.01).0.len(), 0);
    }

    #[test]
    fn record_validation() {
        assert!(record(0.5, Domain::Coding).validate().is_ok());
        let mut bad = record(0.5, Domain::Coding);
        bad.gold = RankedList::new(["b"]).unwrap();
        assert!(bad.validate().is_err());
        assert!(record(1.5, Domain::Coding).validate().is_err());
    }

    #[test]
    fn records_round_trip_through_jsonl() {
        let recs = vec![record(0.5, Domain::MathTheorem)];
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        let line = String::from_utf8(buf.clone()).unwrap();
        assert!(line.starts_with(r#"{"qid":"q","query":"x","domain":"math-theorem","passages":"#));
        assert_eq!(read_records(buf.as_slice(), "mem").unwrap(), recs);
    }
}
