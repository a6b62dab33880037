//! Minimal `key = value` text documents with `#` comments.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for KvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for KvError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvEntry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Strip a trailing `#` comment and surrounding whitespace.
pub fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => line[..i].trim(),
        None => line.trim(),
    }
}

/// Parse every non-blank line as `key = value`. Duplicate keys are rejected.
pub fn parse(text: &str) -> Result<Vec<KvEntry>, KvError> {
    let mut out: Vec<KvEntry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| KvError { line: i + 1, message: format!("expected `key = value`, found `{line}`") })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(KvError { line: i + 1, message: "empty key".into() });
        }
        if out.iter().any(|e| e.key == key) {
            return Err(KvError { line: i + 1, message: format!("duplicate key `{key}`") });
        }
        out.push(KvEntry { line: i + 1, key: key.to_string(), value: value.trim().to_string() });
    }
    Ok(out)
}

/// Parse a value with a line-numbered error.
pub fn parse_value<T: std::str::FromStr>(entry: &KvEntry) -> Result<T, KvError> {
    entry.value.parse().map_err(|_| KvError {
        line: entry.line,
        message: format!("invalid value `{}` for `{}`", entry.value, entry.key),
    })
}
