use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use irplan_core::evaluation::incident_seed;
use irplan_core::llm::{ChatTransport, HttpChat, LlmConfig, LlmResponseModel, Recorder, Replayer};
use irplan_core::model::{build_synthetic, ResponseModel, SyntheticConfig};
use irplan_core::{Incident, PlannerConfig};

/// Contents of the `--config` file. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub planner: PlannerConfig,
    pub llm: LlmConfig,
    pub synthetic: SyntheticConfig,
}

impl AppConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn load_or_default(path: Option<&Path>) -> anyhow::Result<Self> {
        path.map(Self::load).transpose().map(Option::unwrap_or_default)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Synthetic,
    Llm,
}

/// How the LLM backend reaches a model.
#[derive(Debug, Clone, Default)]
pub struct LlmWiring {
    /// Serve replies from this fixture instead of the network.
    pub replay: Option<PathBuf>,
    /// Append every live exchange to this fixture.
    pub record: Option<PathBuf>,
}

pub fn synthetic_for(base: &SyntheticConfig, incident: &Incident) -> SyntheticConfig {
    SyntheticConfig {
        seed: incident_seed(base.seed, &incident.id),
        ..base.clone()
    }
}

pub fn llm_model(config: &LlmConfig, wiring: &LlmWiring) -> anyhow::Result<Arc<dyn ResponseModel>> {
    let transport: Arc<dyn ChatTransport> = match (&wiring.replay, &wiring.record) {
        (Some(_), Some(_)) => bail!("--replay and --record are mutually exclusive"),
        (Some(path), None) => Arc::new(Replayer::load(path)?),
        (None, record) => {
            let http = HttpChat::new(config)?;
            match record {
                Some(path) => {
                    let secrets = config
                        .api_key
                        .iter()
                        .map(|k| k.expose().to_string())
                        .chain(std::env::var(irplan_core::llm::API_KEY_ENV).ok())
                        .collect();
                    Arc::new(Recorder::create(http, path, secrets)?)
                }
                None => Arc::new(http),
            }
        }
    };
    Ok(Arc::new(LlmResponseModel::new(transport, config)))
}

/// The response model for one incident.
pub fn model_for(
    kind: BackendKind,
    app: &AppConfig,
    wiring: &LlmWiring,
    incident: &Incident,
) -> anyhow::Result<Arc<dyn ResponseModel>> {
    match kind {
        BackendKind::Synthetic => Ok(Arc::new(build_synthetic(&synthetic_for(&app.synthetic, incident))?)),
        BackendKind::Llm => llm_model(&app.llm, wiring),
    }
}
