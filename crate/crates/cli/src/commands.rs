//! Implementations behind the `irplan` subcommands. Each returns the bytes
//! it would print so callers decide where they go.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use serde::Serialize;

use irplan_core::evaluation::{
    emit_report, run_corpus, CorpusModel, EvaluationError, GroundTruthLabeler, LabelTable, ModelFactory, ReportFormat,
    StepLabeler, SyntheticLabeler,
};
use irplan_core::hallucination::{
    confidence_table, estimate_from_samples, joint_bound_table, BoundRow, HallucinationEstimate, HallucinationOracle,
    LabelFile,
};
use irplan_core::model::build_synthetic;
use irplan_core::retrieval::{enrich, HttpThreatIntel, KnowledgeBase, RemoteOptions};
use irplan_core::stream::{RandomStream, StreamPurpose};
use irplan_core::verify::{self, to_csv};
use irplan_core::{plan, Incident, PlannerConfig};

use crate::config::{llm_model, model_for, synthetic_for, AppConfig, BackendKind, LlmWiring};

pub fn read_incident(path: &Path) -> anyhow::Result<Incident> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let incident: Incident = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    incident.validate()?;
    Ok(incident)
}

pub fn load_kb(path: Option<&Path>) -> anyhow::Result<KnowledgeBase> {
    match path {
        Some(p) => Ok(KnowledgeBase::load(p)?),
        None => Ok(KnowledgeBase::new()),
    }
}

/// Enriches from the knowledgebase and, when configured in the
/// environment, the remote threat-intel source.
pub fn enrich_incident(incident: &Incident, kb: &KnowledgeBase) -> anyhow::Result<Incident> {
    let remote = HttpThreatIntel::from_env()?;
    let options = remote.as_ref().map(|source| RemoteOptions {
        source,
        parallelism: 4,
    });
    let enriched = enrich(incident, kb, options.as_ref());
    for w in &enriched.warnings {
        tracing::warn!(kind = %w.ioc.kind, value = %w.ioc.value, "{}", w.message);
    }
    Ok(enriched.incident)
}

pub fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable");
    out.push(b'\n');
    out
}

pub struct PlanArgs {
    pub incident: PathBuf,
    pub backend: BackendKind,
    pub kb: Option<PathBuf>,
    pub llm: LlmWiring,
}

pub fn run_plan(app: &AppConfig, args: &PlanArgs) -> anyhow::Result<Vec<u8>> {
    let incident = read_incident(&args.incident)?;
    let kb = load_kb(args.kb.as_deref())?;
    let incident = enrich_incident(&incident, &kb)?;
    let model = model_for(args.backend, app, &args.llm, &incident)?;
    let result = plan(model.as_ref(), &incident, app.planner.clone())?;
    Ok(json(&result))
}

#[derive(Debug, Clone, Copy)]
pub enum VerifyKind {
    ValueBound { trials: usize, max_lambda: f64, slack: f64 },
    FilterCondition { models: usize, n_candidates: usize },
    Estimation { actions: usize, hallucinated: usize, samples: usize, epsilon: f64, trials: usize },
}

/// Summary JSON, plus per-trial CSV rows when the check has them.
pub fn run_verify(kind: VerifyKind, seed: u64) -> anyhow::Result<(Vec<u8>, Option<Vec<u8>>)> {
    match kind {
        VerifyKind::ValueBound { trials, max_lambda, slack } => {
            let s = verify::lemma1_suite(trials, max_lambda, slack, seed);
            let csv = to_csv(&s.rows);
            Ok((json(&serde_json::json!({
                "trials": s.trials,
                "solvable": s.solvable,
                "held": s.held,
                "worst_excess": s.worst_excess,
            })), Some(csv)))
        }
        VerifyKind::FilterCondition { models, n_candidates } => {
            let s = verify::prop1_suite(models, n_candidates, seed)?;
            let csv = to_csv(&s.rows);
            Ok((json(&serde_json::json!({
                "models_drawn": s.models_drawn,
                "models_accepted": s.models_accepted,
                "eligible": s.eligible,
                "selected_non_hallucinated": s.selected_non_hallucinated,
            })), Some(csv)))
        }
        VerifyKind::Estimation { actions, hallucinated, samples, epsilon, trials } => {
            if hallucinated > actions {
                bail!("{hallucinated} hallucinated actions out of {actions}");
            }
            let s = verify::prop2_trials(actions, hallucinated, samples, epsilon, trials, seed)?;
            Ok((json(&s), None))
        }
    }
}

pub struct EstimateArgs {
    pub backend: BackendKind,
    pub incident: Option<PathBuf>,
    pub samples: usize,
    pub confidence: f64,
    pub n: usize,
    pub labels: Option<PathBuf>,
    pub llm: LlmWiring,
}

#[derive(Debug, Serialize)]
pub struct EstimateOutput {
    pub estimate: HallucinationEstimate,
    pub table: Vec<BoundRow>,
}

const TABLE_EPSILONS: [f64; 3] = [0.1, 0.2, 0.3];
const TABLE_MAX_L: usize = 100;
const TABLE_BASES: [f64; 3] = [0.3, 0.4, 0.5];
const TABLE_MAX_N: usize = 10;

pub fn run_estimate(app: &AppConfig, args: &EstimateArgs, seed: u64) -> anyhow::Result<Vec<u8>> {
    let incident = match &args.incident {
        Some(p) => read_incident(p)?,
        None => verify::blank_incident(),
    };
    let mut stream = RandomStream::derive(seed, StreamPurpose::Estimate, &[]);
    let estimate = match args.backend {
        BackendKind::Synthetic => {
            let model = build_synthetic(&synthetic_for(&app.synthetic, &incident))?;
            let labels = args.labels.as_deref().map(LabelFile::load).transpose()?;
            let oracle: &dyn HallucinationOracle = match &labels {
                Some(l) => l,
                None => &model,
            };
            estimate_from_samples(&model, oracle, &incident, args.samples, args.confidence, &mut stream)?
        }
        BackendKind::Llm => {
            let Some(path) = &args.labels else {
                bail!("the llm backend needs --labels to judge proposals");
            };
            let labels = LabelFile::load(path)?;
            let model = llm_model(&app.llm, &args.llm)?;
            estimate_from_samples(model.as_ref(), &labels, &incident, args.samples, args.confidence, &mut stream)?
        }
    };
    let mut table = confidence_table(&TABLE_EPSILONS, TABLE_MAX_L);
    table.extend(joint_bound_table(&TABLE_BASES, TABLE_MAX_N));
    Ok(json(&EstimateOutput {
        estimate: estimate.with_joint_bound(args.n),
        table,
    }))
}

/// Builds every corpus model from the configured backend. Synthetic runs are
/// labelled by the model itself unless a table is given; LLM runs use the
/// table or the incident's ground truth.
pub struct CliFactory<'a> {
    pub backend: BackendKind,
    pub app: &'a AppConfig,
    pub llm: &'a LlmWiring,
    pub labels: Option<Arc<LabelTable>>,
}

impl ModelFactory for CliFactory<'_> {
    fn build(&self, incident: &Incident) -> Result<CorpusModel, EvaluationError> {
        let err = |e: anyhow::Error| EvaluationError::Model(format!("{e:#}"));
        match self.backend {
            BackendKind::Synthetic => {
                let model = Arc::new(
                    build_synthetic(&synthetic_for(&self.app.synthetic, incident))
                        .map_err(|e| EvaluationError::Model(e.to_string()))?,
                );
                let labeler: Arc<dyn StepLabeler> = match &self.labels {
                    Some(t) => t.clone(),
                    None => Arc::new(SyntheticLabeler(model.clone())),
                };
                Ok(CorpusModel { model, labeler })
            }
            BackendKind::Llm => {
                let model = llm_model(&self.app.llm, self.llm).map_err(err)?;
                let labeler: Arc<dyn StepLabeler> = match &self.labels {
                    Some(t) => t.clone(),
                    None => Arc::new(GroundTruthLabeler),
                };
                Ok(CorpusModel { model, labeler })
            }
        }
    }
}

pub struct EvaluateArgs {
    pub corpus: PathBuf,
    pub seeds: Vec<u64>,
    pub format: ReportFormat,
    pub backend: BackendKind,
    pub labels: Option<PathBuf>,
    pub llm: LlmWiring,
}

pub fn run_evaluate(app: &AppConfig, args: &EvaluateArgs) -> anyhow::Result<Vec<u8>> {
    let labels = args.labels.as_deref().map(LabelTable::load).transpose()?.map(Arc::new);
    let factory = CliFactory {
        backend: args.backend,
        app,
        llm: &args.llm,
        labels,
    };
    let report = run_corpus(&args.corpus, &factory, &app.planner, &args.seeds)?;
    for f in &report.failures {
        tracing::warn!(dataset = %f.dataset, file = %f.file, seed = ?f.seed, "{}", f.message);
    }
    Ok(emit_report(&report, args.format))
}

/// Sequential and parallel round times for `1..=max_n` candidates, as CSV.
pub fn run_bench_scaling(latency: Duration, max_n: usize) -> anyhow::Result<Vec<u8>> {
    let mut rows = Vec::with_capacity(2 * max_n);
    for n in 1..=max_n {
        for parallel in [false, true] {
            rows.push(verify::scaling_round(latency, n, parallel)?);
        }
    }
    Ok(to_csv(&rows))
}

/// Planner settings with command-line overrides applied.
pub fn planner_with(base: &PlannerConfig, n: Option<usize>, m: Option<usize>, seed: Option<u64>, exact: bool) -> PlannerConfig {
    PlannerConfig {
        n_candidates: n.unwrap_or(base.n_candidates),
        m_samples: m.unwrap_or(base.m_samples),
        seed: seed.unwrap_or(base.seed),
        exact_expectation: exact || base.exact_expectation,
        ..base.clone()
    }
}
