//! Indicator-of-compromise extraction from log lines.

use std::collections::HashSet;
use std::fmt;
use std::net::Ipv4Addr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IocKind {
    Cve,
    Ipv4,
    Hostname,
    Cwe,
}

impl IocKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IocKind::Cve => "cve",
            IocKind::Ipv4 => "ipv4",
            IocKind::Hostname => "hostname",
            IocKind::Cwe => "cwe",
        }
    }
}

impl fmt::Display for IocKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IocEntry {
    pub kind: IocKind,
    /// Normalized value: upper-case CVE/CWE ids, lower-case hostnames,
    /// dotted-quad addresses without leading zeros.
    pub value: String,
    /// Zero-based index of the first log line containing the indicator.
    pub source_line: usize,
}

struct Patterns {
    cve: Regex,
    cwe: Regex,
    ipv4: Regex,
    hostname: Regex,
}

fn patterns() -> &'static Patterns {
    static PATTERNS: OnceLock<Patterns> = OnceLock::new();
    PATTERNS.get_or_init(|| Patterns {
        cve: Regex::new(r"(?i)\bcve-\d{4}-\d{4,7}\b").unwrap(),
        cwe: Regex::new(r"(?i)\bcwe-\d+\b").unwrap(),
        ipv4: Regex::new(r"\b\d{1,3}\.\d{1,3}\.\d{1,3}\.\d{1,3}\b").unwrap(),
        hostname: Regex::new(
            r"\b(?:[A-Za-z0-9](?:[A-Za-z0-9-]{0,61}[A-Za-z0-9])?\.)+[A-Za-z]{2,24}\b",
        )
        .unwrap(),
    })
}

/// Normalizes `raw` for `kind`, returning `None` if it is not valid syntax.
pub fn normalize(kind: IocKind, raw: &str) -> Option<String> {
    let raw = raw.trim();
    match kind {
        IocKind::Cve | IocKind::Cwe => {
            let upper = raw.to_ascii_uppercase();
            is_valid(kind, &upper).then_some(upper)
        }
        IocKind::Ipv4 => {
            let octets: Option<Vec<u8>> = raw.split('.').map(|o| o.parse::<u8>().ok()).collect();
            match octets.as_deref() {
                Some([a, b, c, d]) if raw.split('.').all(|o| !o.is_empty() && o.len() <= 3) => {
                    Some(Ipv4Addr::new(*a, *b, *c, *d).to_string())
                }
                _ => None,
            }
        }
        IocKind::Hostname => {
            let lower = raw.to_ascii_lowercase();
            is_valid(kind, &lower).then_some(lower)
        }
    }
}

/// Syntax check for a normalized value.
pub fn is_valid(kind: IocKind, value: &str) -> bool {
    static ANCHORED: OnceLock<[Regex; 4]> = OnceLock::new();
    let [cve, cwe, ipv4, host] = ANCHORED.get_or_init(|| {
        [
            Regex::new(r"^CVE-\d{4}-\d{4,7}$").unwrap(),
            Regex::new(r"^CWE-\d+$").unwrap(),
            Regex::new(r"^(25[0-5]|2[0-4]\d|1\d\d|[1-9]?\d)(\.(25[0-5]|2[0-4]\d|1\d\d|[1-9]?\d)){3}$").unwrap(),
            Regex::new(r"^(?:[a-z0-9](?:[a-z0-9-]{0,61}[a-z0-9])?\.)+[a-z]{2,24}$").unwrap(),
        ]
    });
    match kind {
        IocKind::Cve => cve.is_match(value),
        IocKind::Cwe => cwe.is_match(value),
        IocKind::Ipv4 => ipv4.is_match(value),
        IocKind::Hostname => value.len() <= 253 && host.is_match(value),
    }
}

/// A dotted-quad match must not be part of a longer dotted run such as a
/// version string `1.2.3.4.5`.
fn isolated(line: &str, start: usize, end: usize) -> bool {
    let bytes = line.as_bytes();
    let dotted_digit_before = start >= 2 && bytes[start - 1] == b'.' && bytes[start - 2].is_ascii_digit();
    let dotted_digit_after = end + 1 < bytes.len() && bytes[end] == b'.' && bytes[end + 1].is_ascii_digit();
    !(dotted_digit_before || dotted_digit_after)
}

/// Extracts every syntactically valid indicator from `logs`, deduplicated
/// by kind and normalized value, in order of first occurrence.
pub fn extract_iocs<S: AsRef<str>>(logs: &[S]) -> Vec<IocEntry> {
    let p = patterns();
    let mut seen: HashSet<(IocKind, String)> = HashSet::new();
    let mut out = Vec::new();
    for (line_no, line) in logs.iter().enumerate() {
        let line = line.as_ref();
        let mut found: Vec<(usize, IocKind, String)> = Vec::new();
        for m in p.cve.find_iter(line) {
            found.push((m.start(), IocKind::Cve, m.as_str().to_string()));
        }
        for m in p.cwe.find_iter(line) {
            found.push((m.start(), IocKind::Cwe, m.as_str().to_string()));
        }
        for m in p.ipv4.find_iter(line) {
            if isolated(line, m.start(), m.end()) {
                found.push((m.start(), IocKind::Ipv4, m.as_str().to_string()));
            }
        }
        for m in p.hostname.find_iter(line) {
            found.push((m.start(), IocKind::Hostname, m.as_str().to_string()));
        }
        found.sort_by_key(|(pos, kind, _)| (*pos, *kind));
        for (_, kind, raw) in found {
            let Some(value) = normalize(kind, &raw) else {
                continue;
            };
            if seen.insert((kind, value.clone())) {
                out.push(IocEntry {
                    kind,
                    value,
                    source_line: line_no,
                });
            }
        }
    }
    out
}
