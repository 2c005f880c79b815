//! Flat `key = value` text shared by run configs, bench suites and the preset
//! registry.
//!
//! ```text
//! # comment
//! steps = 500
//! [optimizer]          # later keys are read as optimizer.<key>
//! name = adamw
//! ```
//!
//! A `[section]` header prefixes every following key until the next header;
//! `[]` clears the prefix. Keys may also be dotted directly. Values run to the
//! end of the line with surrounding whitespace and any `#` comment removed.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// A parsed section: its header (empty for the preamble) and its entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub header: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

fn is_key(s: &str) -> bool {
    !s.is_empty()
        && s.split('.').all(|part| {
            !part.is_empty()
                && part
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        })
}

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(head, _)| head).trim()
}

/// Parses text into sections without prefixing keys.
pub fn parse_sections(text: &str) -> Result<Vec<Section>> {
    let mut sections = vec![Section {
        header: String::new(),
        line: 0,
        entries: Vec::new(),
    }];
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = strip_comment(raw);
        if body.is_empty() {
            continue;
        }
        if let Some(rest) = body.strip_prefix('[') {
            let header = rest.strip_suffix(']').ok_or_else(|| Error::Parse {
                line,
                message: format!("unterminated section header '{body}'"),
            })?;
            let header = header.trim();
            if !header.is_empty() && !is_key(header) {
                return Err(Error::Parse {
                    line,
                    message: format!("invalid section name '{header}'"),
                });
            }
            sections.push(Section {
                header: header.to_string(),
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| Error::Parse {
            line,
            message: format!("expected 'key = value', found '{body}'"),
        })?;
        let key = key.trim();
        if !is_key(key) {
            return Err(Error::Parse {
                line,
                message: format!("invalid key '{key}'"),
            });
        }
        let value = value.trim();
        if value.is_empty() {
            return Err(Error::Parse {
                line,
                message: format!("missing value for '{key}'"),
            });
        }
        sections.last_mut().expect("preamble exists").entries.push(Entry {
            line,
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(sections)
}

/// Parses text into fully qualified entries (`section.key`).
pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for section in parse_sections(text)? {
        for e in section.entries {
            let key = if section.header.is_empty() {
                e.key
            } else {
                format!("{}.{}", section.header, e.key)
            };
            out.push(Entry { key, ..e });
        }
    }
    Ok(out)
}

/// Splits a command-line `KEY=VALUE` override.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override '{s}' is not KEY=VALUE")))?;
    let (k, v) = (k.trim(), v.trim());
    if !is_key(k) || v.is_empty() {
        return Err(Error::config(format!("override '{s}' is not KEY=VALUE")));
    }
    Ok((k.to_string(), v.to_string()))
}

pub fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::config(format!("{key}: expected a finite number, got '{value}'")))
}

pub fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse::<u64>()
        .map_err(|_| Error::config(format!("{key}: expected a nonnegative integer, got '{value}'")))
}

pub fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| Error::config(format!("{key}: expected a nonnegative integer, got '{value}'")))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true or false, got '{value}'"))),
    }
}

/// Comma-separated list with empty items dropped.
pub fn parse_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}
