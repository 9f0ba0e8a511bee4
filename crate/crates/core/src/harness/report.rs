//! Flat `key=value` report lines, one metric per line.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Joins pairs as `k=v k=v`. Keys and values must not contain whitespace or `=`.
pub fn format_kv(pairs: &[(&str, String)]) -> String {
    pairs
        .iter()
        .map(|(k, v)| {
            debug_assert!(!v.contains(char::is_whitespace) && !v.contains('='), "{v:?}");
            format!("{k}={v}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn parse_kv(line: &str) -> Result<BTreeMap<String, String>> {
    line.split_whitespace()
        .map(|tok| {
            tok.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::invalid(format!("not a key=value pair: {tok:?}")))
        })
        .collect()
}

/// Pulls a required field out of a parsed line.
pub(crate) fn field<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::invalid(format!("missing field {key}")))
}

pub(crate) fn number(map: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    let v = field(map, key)?;
    v.parse()
        .map_err(|_| Error::invalid(format!("field {key} is not a number: {v:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let line = format_kv(&[("qid", "q1".into()), ("value", 0.1f64.to_string())]);
        assert_eq!(line, "qid=q1 value=0.1");
        let m = parse_kv(&line).unwrap();
        assert_eq!(number(&m, "value").unwrap(), 0.1);
        assert!(parse_kv("oops").is_err());
        assert!(field(&m, "nope").is_err());
    }
}
