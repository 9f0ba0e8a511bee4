//! Domain types and parsing of structured model responses into rankings.
//!
//! A listwise model answers with `<think>...</think><answer>[2] > [1] > ...</answer>`.
//! Two readers exist for the answer body:
//!
//! * [`validate_answer_grammar`] is strict and is what format gating uses.
//! * [`parse_ranking`] is lenient and always produces a permutation of the
//!   window, repairing whatever the model got wrong.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque passage identifier.
pub type PassageId = String;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: PassageId,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl Passage {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::invalid("passage id must be non-empty"));
        }
        Ok(Self {
            id,
            text: text.into(),
            source: None,
        })
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = Some(source.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub qid: String,
    pub text: String,
    /// Alternate phrasing used only on the retrieval side. Reranking never reads it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewritten: Option<String>,
}

impl Query {
    pub fn new(qid: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let (qid, text) = (qid.into(), text.into());
        if qid.is_empty() {
            return Err(Error::invalid("query id must be non-empty"));
        }
        if text.is_empty() {
            return Err(Error::invalid(format!("query {qid} has empty text")));
        }
        Ok(Self {
            qid,
            text,
            rewritten: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: PassageId,
    pub score: f64,
}

/// Retriever output for one query, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateList {
    qid: String,
    entries: Vec<Candidate>,
}

impl CandidateList {
    /// Validates uniqueness and non-increasing scores.
    pub fn new(qid: impl Into<String>, entries: Vec<Candidate>) -> Result<Self> {
        let qid = qid.into();
        let mut seen = HashSet::with_capacity(entries.len());
        for c in &entries {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate candidate {} for query {qid}",
                    c.id
                )));
            }
        }
        if let Some(w) = entries.windows(2).find(|w| w[1].score > w[0].score) {
            return Err(Error::invalid(format!(
                "candidate scores for query {qid} increase at {} ({} > {})",
                w[1].id, w[1].score, w[0].score
            )));
        }
        Ok(Self { qid, entries })
    }

    /// Builds a list from ids alone, scoring by reciprocal rank.
    pub fn from_ids<I, S>(qid: impl Into<String>, ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entries = ids
            .into_iter()
            .enumerate()
            .map(|(i, id)| Candidate {
                id: id.into(),
                score: 1.0 / (i as f64 + 1.0),
            })
            .collect();
        Self::new(qid, entries)
    }

    pub fn qid(&self) -> &str {
        &self.qid
    }

    pub fn entries(&self) -> &[Candidate] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn truncate(&mut self, n: usize) {
        self.entries.truncate(n);
    }

    pub fn ranked(&self) -> RankedList {
        RankedList(self.entries.iter().map(|c| c.id.clone()).collect())
    }
}

/// An ordered sequence of distinct passage ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct RankedList(Vec<PassageId>);

impl RankedList {
    pub fn new<I, S>(ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate id {id} in ranked list")));
            }
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[PassageId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.0.iter().position(|x| x == id)
    }

    /// True when both lists hold the same id set.
    pub fn is_permutation_of(&self, other: &[PassageId]) -> bool {
        if self.0.len() != other.len() {
            return false;
        }
        let mine: HashSet<&str> = self.iter().collect();
        other.iter().all(|id| mine.contains(id.as_str()))
    }

    pub fn into_inner(self) -> Vec<PassageId> {
        self.0
    }
}

impl TryFrom<Vec<String>> for RankedList {
    type Error = Error;

    fn try_from(ids: Vec<String>) -> Result<Self> {
        Self::new(ids)
    }
}

impl From<RankedList> for Vec<String> {
    fn from(list: RankedList) -> Self {
        list.0
    }
}

/// Passage texts by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus(HashMap<PassageId, Passage>);

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a passage, rejecting an id that is already present.
    pub fn insert(&mut self, passage: Passage) -> Result<()> {
        if self.0.contains_key(&passage.id) {
            return Err(Error::invalid(format!("duplicate passage id {}", passage.id)));
        }
        self.0.insert(passage.id.clone(), passage);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.0.get(id)
    }

    pub fn text(&self, id: &str) -> Option<&str> {
        self.0.get(id).map(|p| p.text.as_str())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.0.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<Passage> for Corpus {
    /// Later duplicates replace earlier ones; use [`Corpus::insert`] to reject them.
    fn from_iter<I: IntoIterator<Item = Passage>>(iter: I) -> Self {
        Self(iter.into_iter().map(|p| (p.id.clone(), p)).collect())
    }
}

/// Outcome of the two-level format check applied to a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FormatStatus {
    /// Both tag pairs present and the answer satisfies the strict grammar.
    BothGood,
    /// Both tag pairs present, answer body malformed or incomplete.
    OutputOnly,
    Bad,
}

impl fmt::Display for FormatStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FormatStatus::BothGood => "BothGood",
            FormatStatus::OutputOnly => "OutputOnly",
            FormatStatus::Bad => "Bad",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub raw: String,
    pub think: Option<String>,
    pub answer: Option<String>,
    pub format_status: FormatStatus,
}

/// Content between the first `open` tag and the first `close` tag after it.
fn extract_tag<'a>(raw: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = raw.find(open)? + open.len();
    let end = raw[start..].find(close)?;
    Some(&raw[start..start + end])
}

/// Parses a response without knowing the window size.
///
/// The answer counts as well-formed when its indices form a complete
/// permutation of `1..=t` where `t` is the number of tokens. Use
/// [`parse_response_for_window`] whenever the window size is known.
pub fn parse_response(raw: &str) -> ModelResponse {
    classify(raw, None)
}

/// Parses a response produced for a window of `m` passages.
pub fn parse_response_for_window(raw: &str, m: usize) -> ModelResponse {
    classify(raw, Some(m))
}

fn classify(raw: &str, m: Option<usize>) -> ModelResponse {
    let think = extract_tag(raw, "<think>", "</think>").map(str::to_owned);
    let answer = extract_tag(raw, "<answer>", "</answer>").map(str::to_owned);
    let format_status = match (&think, &answer) {
        (Some(_), Some(a)) => {
            let m = m.unwrap_or_else(|| scan_indices(a).len());
            if validate_answer_grammar(a, m) {
                FormatStatus::BothGood
            } else {
                FormatStatus::OutputOnly
            }
        }
        _ => FormatStatus::Bad,
    };
    ModelResponse {
        raw: raw.to_owned(),
        think,
        answer,
        format_status,
    }
}

/// Strict answer check: `[i] > [j] > ...` covering every index in `1..=m` once.
pub fn validate_answer_grammar(answer: &str, m: usize) -> bool {
    let bytes = answer.trim().as_bytes();
    if bytes.is_empty() || m == 0 {
        return false;
    }
    let mut seen = vec![false; m];
    let mut pos = 0;
    let mut count = 0;
    loop {
        let Some((k, next)) = read_bracketed(bytes, pos) else {
            return false;
        };
        if k == 0 || k > m as u64 || seen[(k - 1) as usize] {
            return false;
        }
        seen[(k - 1) as usize] = true;
        count += 1;
        pos = skip_ws(bytes, next);
        if pos == bytes.len() {
            break;
        }
        if bytes[pos] != b'>' {
            return false;
        }
        pos = skip_ws(bytes, pos + 1);
    }
    count == m
}

fn skip_ws(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
        pos += 1;
    }
    pos
}

/// Reads `[digits]` starting exactly at `pos`.
fn read_bracketed(bytes: &[u8], pos: usize) -> Option<(u64, usize)> {
    if bytes.get(pos) != Some(&b'[') {
        return None;
    }
    let digits_start = pos + 1;
    let mut end = digits_start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == digits_start || bytes.get(end) != Some(&b']') {
        return None;
    }
    let value = bytes[digits_start..end]
        .iter()
        .fold(0u64, |acc, d| acc.saturating_mul(10).saturating_add(u64::from(d - b'0')));
    Some((value, end + 1))
}

/// Every `[k]` token in order of appearance, wherever it occurs.
pub fn scan_indices(text: &str) -> Vec<u64> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        if bytes[pos] == b'[' {
            if let Some((k, next)) = read_bracketed(bytes, pos) {
                out.push(k);
                pos = next;
                continue;
            }
        }
        pos += 1;
    }
    out
}

/// Counts of the fixes applied while turning an answer into a permutation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairReport {
    pub out_of_range: usize,
    pub duplicates: usize,
    pub appended: usize,
    /// No usable index was found; the window order was kept as is.
    pub full_repair: bool,
}

impl RepairReport {
    pub fn is_clean(&self) -> bool {
        self.out_of_range == 0 && self.duplicates == 0 && self.appended == 0 && !self.full_repair
    }

    pub fn add(&mut self, other: &RepairReport) {
        self.out_of_range += other.out_of_range;
        self.duplicates += other.duplicates;
        self.appended += other.appended;
        self.full_repair |= other.full_repair;
    }
}

/// Lenient extraction of a ranking over `window_ids` from an answer body.
///
/// Repairs, in order: drop indices outside `1..=m`, drop repeated indices
/// (first occurrence wins), append the missing ones in window order.
pub fn parse_ranking(answer: &str, window_ids: &[PassageId]) -> (RankedList, RepairReport) {
    let m = window_ids.len();
    let mut report = RepairReport::default();
    let mut used = vec![false; m];
    let mut order = Vec::with_capacity(m);
    for k in scan_indices(answer) {
        if k == 0 || k > m as u64 {
            report.out_of_range += 1;
            continue;
        }
        let idx = (k - 1) as usize;
        if used[idx] {
            report.duplicates += 1;
            continue;
        }
        used[idx] = true;
        order.push(idx);
    }
    if order.is_empty() && m > 0 {
        report.full_repair = true;
    }
    for (idx, taken) in used.iter().enumerate() {
        if !taken {
            order.push(idx);
            report.appended += 1;
        }
    }
    let ids = order.into_iter().map(|i| window_ids[i].clone()).collect();
    (RankedList(ids), report)
}

/// Renders local indices `1..=m` in the given order as `[a] > [b] > ...`.
pub fn format_ranking(indices: &[usize]) -> String {
    indices
        .iter()
        .map(|k| format!("[{k}]"))
        .collect::<Vec<_>>()
        .join(" > ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn well_formed_response() {
        let r = parse_response("<think>x</think><answer>[2] > [1]</answer>");
        assert_eq!(r.think.as_deref(), Some("x"));
        assert_eq!(r.answer.as_deref(), Some("[2] > [1]"));
        assert_eq!(r.format_status, FormatStatus::BothGood);
    }

    #[test]
    fn tags_with_garbage_answer_are_output_only() {
        let r = parse_response("<think>x</think><answer>hello</answer>");
        assert_eq!(r.format_status, FormatStatus::OutputOnly);
    }

    #[test]
    fn missing_tags_are_bad() {
        assert_eq!(parse_response("no tags at all").format_status, FormatStatus::Bad);
        assert_eq!(parse_response("").format_status, FormatStatus::Bad);
        let only_answer = parse_response("<answer>[1]</answer>");
        assert_eq!(only_answer.format_status, FormatStatus::Bad);
        assert_eq!(only_answer.answer.as_deref(), Some("[1]"));
        let unclosed = parse_response("<think>x<answer>[1]</answer>");
        assert_eq!(unclosed.format_status, FormatStatus::Bad);
    }

    #[test]
    fn first_tag_pair_wins() {
        let r = parse_response(
            "<think>a</think><think>b</think><answer>[1] > [2]</answer><answer>[2]</answer>",
        );
        assert_eq!(r.think.as_deref(), Some("a"));
        assert_eq!(r.answer.as_deref(), Some("[1] > [2]"));
    }

    #[test]
    fn window_size_makes_subset_answers_output_only() {
        let raw = "<think>t</think><answer>[1]</answer>";
        assert_eq!(parse_response(raw).format_status, FormatStatus::BothGood);
        assert_eq!(
            parse_response_for_window(raw, 2).format_status,
            FormatStatus::OutputOnly
        );
    }

    #[test]
    fn exact_permutation_needs_no_repair() {
        let (list, report) = parse_ranking("[2] > [1] > [3]", &ids(&["a", "b", "c"]));
        assert_eq!(list.ids(), ids(&["b", "a", "c"]).as_slice());
        assert!(report.is_clean());
    }

    #[test]
    fn repair_rules_apply_in_order() {
        let (list, report) = parse_ranking("[2] > [2] > [9]", &ids(&["a", "b", "c"]));
        assert_eq!(list.ids(), ids(&["b", "a", "c"]).as_slice());
        assert_eq!(
            report,
            RepairReport {
                out_of_range: 1,
                duplicates: 1,
                appended: 2,
                full_repair: false
            }
        );
    }

    #[test]
    fn empty_answer_falls_back_to_identity() {
        let (list, report) = parse_ranking("", &ids(&["a", "b"]));
        assert_eq!(list.ids(), ids(&["a", "b"]).as_slice());
        assert!(report.full_repair);
        assert_eq!(report.appended, 2);
    }

    #[test]
    fn zero_index_is_out_of_range() {
        let (list, report) = parse_ranking("[0] > [1]", &ids(&["a"]));
        assert_eq!(list.ids(), ids(&["a"]).as_slice());
        assert_eq!(report.out_of_range, 1);
    }

    #[test]
    fn huge_index_saturates_instead_of_overflowing() {
        let (_, report) = parse_ranking("[99999999999999999999999999]", &ids(&["a"]));
        assert_eq!(report.out_of_range, 1);
    }

    #[test]
    fn grammar_cases() {
        assert!(validate_answer_grammar("[2] > [1]", 2));
        assert!(validate_answer_grammar("  [2]>[1]\n", 2));
        assert!(!validate_answer_grammar("[2] > [2]", 2));
        assert!(!validate_answer_grammar("[1]", 2));
        assert!(!validate_answer_grammar("[1] > [3]", 2));
        assert!(!validate_answer_grammar("[1] [2]", 2));
        assert!(!validate_answer_grammar("[1] > [2] >", 2));
        assert!(!validate_answer_grammar("[ 1] > [2]", 2));
        assert!(!validate_answer_grammar("", 0));
        assert!(!validate_answer_grammar("1 > 2", 2));
    }

    #[test]
    fn ranked_list_rejects_duplicates() {
        assert!(RankedList::new(["a", "a"]).is_err());
        let parsed: std::result::Result<RankedList, _> = serde_json::from_str(r#"["a","a"]"#);
        assert!(parsed.is_err());
    }

    #[test]
    fn candidate_list_invariants() {
        let ok = CandidateList::from_ids("q", ["a", "b", "c"]).unwrap();
        assert_eq!(ok.ranked().ids(), ids(&["a", "b", "c"]).as_slice());
        assert!(CandidateList::from_ids("q", ["a", "a"]).is_err());
        let rising = vec![
            Candidate { id: "a".into(), score: 1.0 },
            Candidate { id: "b".into(), score: 2.0 },
        ];
        assert!(CandidateList::new("q", rising).is_err());
    }

    #[test]
    fn empty_identifiers_rejected() {
        assert!(Passage::new("", "t").is_err());
        assert!(Query::new("", "t").is_err());
        assert!(Query::new("q", "").is_err());
    }
}
