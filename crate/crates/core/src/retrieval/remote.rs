use std::time::Duration;

use serde::Deserialize;

use super::ioc::IocEntry;
use super::RetrievalError;

/// Environment variable holding the threat-intel base URL.
pub const BASE_URL_ENV: &str = "IRPLAN_TI_BASE_URL";
/// Environment variable holding the threat-intel API key.
pub const API_KEY_ENV: &str = "IRPLAN_TI_API_KEY";

/// A remote source of advisory text for an indicator.
pub trait ThreatIntelSource: Send + Sync {
    /// `Ok(None)` means the source has nothing for this indicator.
    fn lookup(&self, ioc: &IocEntry) -> Result<Option<String>, RetrievalError>;
}

#[derive(Deserialize)]
struct IndicatorReply {
    #[serde(default)]
    content: Option<String>,
}

/// `GET {base_url}/indicator/{kind}/{value}` returning `{"content": "..."}`.
/// A 404 means no data.
pub struct HttpThreatIntel {
    base_url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpThreatIntel {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Result<Self, RetrievalError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| RetrievalError::Remote(e.to_string()))?;
        Ok(HttpThreatIntel {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            client,
        })
    }

    /// Reads [`BASE_URL_ENV`] and [`API_KEY_ENV`]; `None` when no base URL is set.
    pub fn from_env() -> Result<Option<Self>, RetrievalError> {
        match std::env::var(BASE_URL_ENV) {
            Ok(url) if !url.trim().is_empty() => {
                let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
                Self::new(url, key, Duration::from_secs(5)).map(Some)
            }
            _ => Ok(None),
        }
    }

    pub fn url_for(&self, ioc: &IocEntry) -> String {
        format!("{}/indicator/{}/{}", self.base_url, ioc.kind, ioc.value)
    }
}

impl ThreatIntelSource for HttpThreatIntel {
    fn lookup(&self, ioc: &IocEntry) -> Result<Option<String>, RetrievalError> {
        let mut request = self.client.get(self.url_for(ioc));
        if let Some(key) = &self.api_key {
            request = request.header("X-API-Key", key);
        }
        let response = request.send().map_err(|e| RetrievalError::Remote(e.to_string()))?;
        let status = response.status();
        if status == reqwest::StatusCode::NOT_FOUND {
            return Ok(None);
        }
        if !status.is_success() {
            return Err(RetrievalError::Remote(format!("status {status}")));
        }
        let reply: IndicatorReply = response.json().map_err(|e| RetrievalError::Remote(e.to_string()))?;
        Ok(reply.content.filter(|c| !c.trim().is_empty()))
    }
}
