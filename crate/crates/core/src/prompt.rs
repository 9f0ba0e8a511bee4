//! Prompt templates with `{name}` placeholders.

use std::path::Path;

use crate::error::{Error, Result};

pub const RERANK_TEMPLATE: &str = include_str!("../templates/rerank.txt");
pub const POSITIVES_COMPLEX_QA: &str = include_str!("../templates/positives_complex_qa.txt");
pub const POSITIVES_CODING: &str = include_str!("../templates/positives_coding.txt");
pub const POSITIVES_MATH_PROBLEM: &str = include_str!("../templates/positives_math_problem.txt");
pub const POSITIVES_MATH_THEOREM: &str = include_str!("../templates/positives_math_theorem.txt");
pub const HARD_NEGATIVES: &str = include_str!("../templates/hard_negatives.txt");
pub const LABEL_INTRO: &str = include_str!("../templates/label_intro.txt");
pub const LABEL_FINAL: &str = include_str!("../templates/label_final.txt");

/// Assistant turn acknowledging the intro in the multi-turn label prompt.
pub const LABEL_ACK: &str = "Okay, please provide the passages.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Self {
        let mut text = text.into();
        while text.ends_with('\n') {
            text.pop();
        }
        Self { text }
    }

    /// The listwise rerank prompt used at inference and training time.
    pub fn rerank() -> Self {
        Self::new(RERANK_TEMPLATE)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(text))
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Substitutes `{key}` placeholders in one pass. Substituted values are
    /// never rescanned, and unknown placeholders are left as they are.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.text.len() * 2);
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let hit = after.find('}').and_then(|close| {
                let key = &after[..close];
                vars.iter()
                    .find(|(k, _)| *k == key)
                    .map(|(_, v)| (*v, close))
            });
            match hit {
                Some((value, close)) => {
                    out.push_str(value);
                    rest = &after[close + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

/// Truncates to at most `max_chars` characters when a limit is set.
pub fn clip(text: &str, max_chars: Option<usize>) -> &str {
    match max_chars {
        Some(n) => match text.char_indices().nth(n) {
            Some((byte, _)) => &text[..byte],
            None => text,
        },
        None => text,
    }
}

/// `[1]: text\n\n[2]: text ...` for the rerank prompt.
pub fn rerank_passage_block<'a, I>(texts: I, max_chars: Option<usize>) -> String
where
    I: IntoIterator<Item = &'a str>,
{
    texts
        .into_iter()
        .enumerate()
        .map(|(i, t)| format!("[{}]: {}", i + 1, clip(t, max_chars)))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// `Passage [1]: text\n\nPassage [2]: text ...` for selection prompts.
pub fn selection_passage_block<'a, I>(texts: I, max_chars: Option<usize>) -> String
where
    I: IntoIterator<Item = &'a str>,
{
    texts
        .into_iter()
        .enumerate()
        .map(|(i, t)| format!("Passage [{}]: {}", i + 1, clip(t, max_chars)))
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_single_pass() {
        let t = PromptTemplate::new("Q: {query} N={num} {unknown} {");
        let out = t.render(&[("query", "{num}"), ("num", "3")]);
        assert_eq!(out, "Q: {num} N=3 {unknown} {");
    }

    #[test]
    fn rerank_template_has_expected_slots() {
        let t = PromptTemplate::rerank();
        let out = t.render(&[("num", "2"), ("query", "why?"), ("passages", "[1]: a\n\n[2]: b")]);
        assert!(out.starts_with("You are RankLLM"));
        assert!(out.contains("I will provide you with 2 passages"));
        assert!(out.contains("[1]: a\n\n[2]: b\n\nSearch Query: why?. Rank the 2 passages above"));
        assert!(out.ends_with("e.g., [2] > [1]."));
        assert!(!out.contains('{'));
    }

    #[test]
    fn all_templates_fill_completely() {
        for t in [
            POSITIVES_COMPLEX_QA,
            POSITIVES_CODING,
            POSITIVES_MATH_PROBLEM,
            POSITIVES_MATH_THEOREM,
            HARD_NEGATIVES,
            LABEL_INTRO,
            LABEL_FINAL,
        ] {
            let out = PromptTemplate::new(t).render(&[
                ("query", "q"),
                ("answer", "a"),
                ("passages", "p"),
                ("num", "1"),
            ]);
            assert!(!out.contains('{'), "{out}");
        }
    }

    #[test]
    fn clip_respects_char_boundaries() {
        assert_eq!(clip("héllo", Some(2)), "hé");
        assert_eq!(clip("hi", Some(10)), "hi");
        assert_eq!(clip("hi", None), "hi");
    }

    #[test]
    fn passage_blocks() {
        assert_eq!(rerank_passage_block(["a", "b"], None), "[1]: a\n\n[2]: b");
        assert_eq!(
            selection_passage_block(["a", "b"], Some(0)),
            "Passage [1]: \n\nPassage [2]: "
        );
    }
}
