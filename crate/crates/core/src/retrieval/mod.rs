//! Retrieval-augmented enrichment: pull indicators of compromise out of the
//! incident logs and attach advisory text for them from a local
//! knowledgebase and, optionally, a remote threat-intel endpoint.

mod ioc;
mod kb;
pub mod remote;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Incident;

pub use ioc::{extract_iocs, is_valid, normalize, IocEntry, IocKind};
pub use kb::{kb_lookup, KnowledgeBase};
pub use remote::{HttpThreatIntel, ThreatIntelSource};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("knowledgebase error: {0}")]
    KnowledgeBase(String),
    #[error("remote lookup failed: {0}")]
    Remote(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnrichmentSource {
    LocalKb,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentEntry {
    pub ioc: IocEntry,
    pub source: EnrichmentSource,
    pub content: String,
    pub retrieved_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrichWarning {
    pub ioc: IocEntry,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enriched {
    pub incident: Incident,
    pub warnings: Vec<EnrichWarning>,
}

pub struct RemoteOptions<'a> {
    pub source: &'a dyn ThreatIntelSource,
    /// Concurrent lookups in flight.
    pub parallelism: usize,
}

fn lookup_all(remote: &RemoteOptions<'_>, iocs: &[IocEntry]) -> Vec<Result<Option<String>, RetrievalError>> {
    let workers = remote.parallelism.max(1).min(iocs.len());
    if workers <= 1 {
        return iocs.iter().map(|i| remote.source.lookup(i)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots = Mutex::new(vec![None; iocs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(ioc) = iocs.get(k) else { break };
                let r = remote.source.lookup(ioc);
                slots.lock().expect("lookup slots poisoned")[k] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("lookup slots poisoned")
        .into_iter()
        .map(|r| r.expect("every lookup ran"))
        .collect()
}

/// Returns a copy of `incident` with indicators extracted from its logs and
/// advisory entries appended: knowledgebase hits first, then remote hits,
/// each in indicator order. Entries already present (same indicator and
/// source) are not duplicated. Remote failures become warnings.
pub fn enrich(incident: &Incident, kb: &KnowledgeBase, remote: Option<&RemoteOptions<'_>>) -> Enriched {
    let mut out = incident.clone();
    for found in extract_iocs(&incident.logs) {
        if !out
            .iocs
            .iter()
            .any(|i| i.kind == found.kind && i.value == found.value)
        {
            out.iocs.push(found);
        }
    }
    let present = |entries: &[EnrichmentEntry], ioc: &IocEntry, source: EnrichmentSource| {
        entries
            .iter()
            .any(|e| e.source == source && e.ioc.kind == ioc.kind && e.ioc.value == ioc.value)
    };
    let now = Utc::now();
    let mut warnings = Vec::new();

    let kb_hits: Vec<EnrichmentEntry> = out
        .iocs
        .iter()
        .filter(|ioc| !present(&out.enrichment, ioc, EnrichmentSource::LocalKb))
        .filter_map(|ioc| {
            kb.lookup(ioc)
                .filter(|text| !text.trim().is_empty())
                .map(|text| EnrichmentEntry {
                    ioc: ioc.clone(),
                    source: EnrichmentSource::LocalKb,
                    content: text.to_string(),
                    retrieved_at: now,
                })
        })
        .collect();
    out.enrichment.extend(kb_hits);

    if let Some(remote) = remote {
        let pending: Vec<IocEntry> = out
            .iocs
            .iter()
            .filter(|ioc| !present(&out.enrichment, ioc, EnrichmentSource::Remote))
            .cloned()
            .collect();
        for (ioc, result) in pending.iter().zip(lookup_all(remote, &pending)) {
            match result {
                Ok(Some(content)) if !content.trim().is_empty() => out.enrichment.push(EnrichmentEntry {
                    ioc: ioc.clone(),
                    source: EnrichmentSource::Remote,
                    content,
                    retrieved_at: now,
                }),
                Ok(_) => {}
                Err(e) => {
                    tracing::warn!(ioc = %ioc.value, error = %e, "remote enrichment failed");
                    warnings.push(EnrichWarning {
                        ioc: ioc.clone(),
                        message: e.to_string(),
                    });
                }
            }
        }
    }
    Enriched { incident: out, warnings }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn incident(logs: &[&str]) -> Incident {
        Incident {
            id: "r".into(),
            system_description: "two subnets".into(),
            logs: logs.iter().map(|s| s.to_string()).collect(),
            summary: None,
            iocs: vec![],
            enrichment: vec![],
            ground_truth: None,
        }
    }

    struct FlakyRemote;

    impl ThreatIntelSource for FlakyRemote {
        fn lookup(&self, ioc: &IocEntry) -> Result<Option<String>, RetrievalError> {
            match ioc.kind {
                IocKind::Ipv4 => Err(RetrievalError::Remote("timeout".into())),
                _ => Ok(Some(format!("remote intel for {}", ioc.value))),
            }
        }
    }

    #[test]
    fn kb_hit_produces_local_entry() {
        let kb = KnowledgeBase::from_map([("CVE-2021-44228", "Apply targeted log4j mitigations")]);
        let inc = incident(&["jndi lookup exploiting cve-2021-44228 from 10.0.0.5"]);
        let e = enrich(&inc, &kb, None);
        assert_eq!(e.incident.enrichment.len(), 1);
        assert_eq!(e.incident.enrichment[0].source, EnrichmentSource::LocalKb);
        assert_eq!(e.incident.enrichment[0].ioc.value, "CVE-2021-44228");
        assert_eq!(e.incident.iocs.len(), 2);
        assert!(inc.iocs.is_empty(), "original untouched");
    }

    #[test]
    fn no_iocs_leaves_enrichment_unchanged() {
        let kb = KnowledgeBase::from_map([("CVE-2021-44228", "x")]);
        let inc = incident(&["nothing interesting here"]);
        let e = enrich(&inc, &kb, None);
        assert_eq!(e.incident, inc);
    }

    #[test]
    fn empty_kb_without_remote() {
        let inc = incident(&["alert from 147.32.84.165"]);
        let e = enrich(&inc, &KnowledgeBase::new(), None);
        assert_eq!(e.incident.iocs.len(), 1);
        assert!(e.incident.enrichment.is_empty());
    }

    #[test]
    fn idempotent_without_remote() {
        let kb = KnowledgeBase::from_map([("CVE-2021-44228", "x"), ("147.32.84.165", "infected host")]);
        let inc = incident(&["cve-2021-44228 on 147.32.84.165", "c2 at 222.88.205.195"]);
        let once = enrich(&inc, &kb, None).incident;
        let twice = enrich(&once, &kb, None).incident;
        assert_eq!(once, twice);
        assert_eq!(once.logs, inc.logs);
        assert_eq!(once.system_description, inc.system_description);
    }

    #[test]
    fn remote_failures_degrade_to_warnings() {
        let kb = KnowledgeBase::from_map([("CVE-2021-44228", "kb text")]);
        let inc = incident(&["cve-2021-44228 from 10.1.1.1", "dns evil.example.com"]);
        let remote = RemoteOptions { source: &FlakyRemote, parallelism: 4 };
        let e = enrich(&inc, &kb, Some(&remote));
        let sources: Vec<(EnrichmentSource, &str)> = e
            .incident
            .enrichment
            .iter()
            .map(|x| (x.source, x.ioc.value.as_str()))
            .collect();
        assert_eq!(
            sources,
            vec![
                (EnrichmentSource::LocalKb, "CVE-2021-44228"),
                (EnrichmentSource::Remote, "CVE-2021-44228"),
                (EnrichmentSource::Remote, "evil.example.com"),
            ]
        );
        assert_eq!(e.warnings.len(), 1);
        assert_eq!(e.warnings[0].ioc.value, "10.1.1.1");
    }
}
