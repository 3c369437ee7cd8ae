use std::collections::HashMap;
use std::path::Path;

use super::ioc::{normalize, IocEntry, IocKind};
use super::RetrievalError;

/// Local advisory store: normalized indicator value to advisory text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeBase {
    entries: HashMap<String, String>,
}

/// Canonical key for a raw value whatever its kind.
fn normalize_key(raw: &str) -> String {
    [IocKind::Cve, IocKind::Cwe, IocKind::Ipv4, IocKind::Hostname]
        .into_iter()
        .find_map(|kind| normalize(kind, raw))
        .unwrap_or_else(|| raw.trim().to_ascii_lowercase())
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_map<I, K, V>(entries: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: Into<String>,
    {
        KnowledgeBase {
            entries: entries
                .into_iter()
                .map(|(k, v)| (normalize_key(k.as_ref()), v.into()))
                .collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, RetrievalError> {
        let raw: HashMap<String, String> =
            serde_json::from_str(text).map_err(|e| RetrievalError::KnowledgeBase(e.to_string()))?;
        Ok(Self::from_map(raw))
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RetrievalError::KnowledgeBase(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, ioc: &IocEntry) -> Option<&str> {
        let key = normalize(ioc.kind, &ioc.value).unwrap_or_else(|| normalize_key(&ioc.value));
        self.entries.get(&key).map(String::as_str)
    }
}

pub fn kb_lookup<'a>(kb: &'a KnowledgeBase, ioc: &IocEntry) -> Option<&'a str> {
    kb.lookup(ioc)
}
