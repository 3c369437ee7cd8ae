//! Plan scoring against ground truth and the corpus runner.
//!
//! Every executed step costs one time unit; a step labelled unnecessary
//! costs two. A plan that hit the step cap is failed but still contributes
//! its truncated length.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{Incident, PlanResult, RecoveryState};
use crate::model::{build_synthetic, ResponseModel, SyntheticConfig, SyntheticModel};
use crate::planner::{plan, PlannerConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluationError {
    #[error("{labels} labels for {steps} steps")]
    LabelMismatch { labels: usize, steps: usize },
    #[error("no label for step {step}: {action}")]
    MissingLabel { step: usize, action: String },
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error("model construction failed: {0}")]
    Model(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepLabel {
    /// The true recovery state changes under this step.
    pub effective: bool,
    pub unnecessary: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanScore {
    pub recovery_time: u64,
    pub ineffective_fraction: f64,
    pub failed: bool,
}

pub fn score_plan(plan: &PlanResult, labels: &[StepLabel]) -> Result<PlanScore, EvaluationError> {
    if labels.len() != plan.steps.len() {
        return Err(EvaluationError::LabelMismatch {
            labels: labels.len(),
            steps: plan.steps.len(),
        });
    }
    let recovery_time = labels.iter().map(|l| if l.unnecessary { 2 } else { 1 }).sum();
    let ineffective = labels.iter().filter(|l| !l.effective).count();
    let ineffective_fraction = if labels.is_empty() {
        0.0
    } else {
        ineffective as f64 / labels.len() as f64
    };
    Ok(PlanScore {
        recovery_time,
        ineffective_fraction,
        failed: plan.truncated,
    })
}

/// Produces one label per executed step of a plan.
pub trait StepLabeler: Send + Sync {
    fn labels(&self, incident: &Incident, plan: &PlanResult) -> Result<Vec<StepLabel>, EvaluationError>;
}

/// Labels from the synthetic model's true dynamics and unnecessary flags.
/// Actions the model does not know are ineffective.
pub struct SyntheticLabeler(pub Arc<SyntheticModel>);

impl StepLabeler for SyntheticLabeler {
    fn labels(&self, _incident: &Incident, plan: &PlanResult) -> Result<Vec<StepLabel>, EvaluationError> {
        Ok(plan
            .steps
            .iter()
            .map(|step| StepLabel {
                effective: self.0.changes_true_state(&step.action, step.state_before),
                unnecessary: self.0.resolve(&step.action).is_some_and(|id| self.0.unnecessary[id]),
            })
            .collect())
    }
}

/// Labels from the incident's ground-truth plan: a step whose text matches a
/// ground-truth action is effective when it completes a stage still open in
/// `state_before`; a matched step that completes nothing is unnecessary.
pub struct GroundTruthLabeler;

impl StepLabeler for GroundTruthLabeler {
    fn labels(&self, incident: &Incident, plan: &PlanResult) -> Result<Vec<StepLabel>, EvaluationError> {
        let truth = incident
            .ground_truth
            .as_ref()
            .ok_or_else(|| EvaluationError::Corpus(format!("incident {} has no ground truth", incident.id)))?;
        plan.steps
            .iter()
            .enumerate()
            .map(|(k, step)| {
                let action = truth
                    .actions
                    .iter()
                    .find(|a| a.text.trim() == step.action.text.trim())
                    .ok_or_else(|| EvaluationError::MissingLabel {
                        step: k,
                        action: step.action.text.clone(),
                    })?;
                let effective = action.stage_effects.iter().any(|s| !step.state_before.get(*s));
                Ok(StepLabel {
                    effective,
                    unnecessary: !effective,
                })
            })
            .collect()
    }
}

/// Operator-supplied labels keyed by action text, for free-text backends.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelTable(pub HashMap<String, StepLabel>);

impl LabelTable {
    pub fn load(path: &Path) -> Result<Self, EvaluationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EvaluationError::Corpus(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| EvaluationError::Corpus(format!("{}: {e}", path.display())))
    }
}

impl StepLabeler for LabelTable {
    fn labels(&self, _incident: &Incident, plan: &PlanResult) -> Result<Vec<StepLabel>, EvaluationError> {
        plan.steps
            .iter()
            .enumerate()
            .map(|(k, step)| {
                self.0
                    .get(step.action.text.trim())
                    .copied()
                    .ok_or_else(|| EvaluationError::MissingLabel {
                        step: k,
                        action: step.action.text.clone(),
                    })
            })
            .collect()
    }
}

/// Replays an incident's ground-truth actions in order, applying their
/// stage effects, as a plan.
pub fn ground_truth_plan(incident: &Incident) -> Option<PlanResult> {
    let truth = incident.ground_truth.as_ref()?;
    let mut state = RecoveryState::INITIAL;
    let steps = truth
        .actions
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let before = state;
            state = a.stage_effects.iter().fold(state, |s, stage| s.with(*stage, true));
            crate::domain::TrajectoryStep {
                time_index: k,
                state_before: before,
                action: crate::domain::ResponseAction {
                    text: a.text.clone(),
                    synthetic_id: None,
                    unnecessary: None,
                },
                state_after: state,
                q_estimate: None,
                selected_index: None,
                candidates: vec![],
            }
        })
        .collect();
    Some(PlanResult {
        steps,
        reached_terminal: state.is_terminal(),
        truncated: false,
        seed: 0,
    })
}

/// A model to plan an incident with, plus the labeler that scores it.
pub struct CorpusModel {
    pub model: Arc<dyn ResponseModel>,
    pub labeler: Arc<dyn StepLabeler>,
}

pub trait ModelFactory: Sync {
    fn build(&self, incident: &Incident) -> Result<CorpusModel, EvaluationError>;
}

/// One synthetic model per incident, seeded from the base seed and the
/// incident id so every seed of a run sees the same dynamics.
pub struct SyntheticFactory {
    pub base: SyntheticConfig,
}

pub fn incident_seed(base: u64, incident_id: &str) -> u64 {
    let digest = Sha256::digest(incident_id.as_bytes());
    base ^ u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl ModelFactory for SyntheticFactory {
    fn build(&self, incident: &Incident) -> Result<CorpusModel, EvaluationError> {
        let config = SyntheticConfig {
            seed: incident_seed(self.base.seed, &incident.id),
            ..self.base.clone()
        };
        let model = Arc::new(build_synthetic(&config).map_err(|e| EvaluationError::Model(e.to_string()))?);
        Ok(CorpusModel {
            model: model.clone(),
            labeler: Arc::new(SyntheticLabeler(model)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub dataset: String,
    pub incident_id: String,
    pub seed: u64,
    #[serde(flatten)]
    pub score: PlanScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MeanStd { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetAggregate {
    pub dataset: String,
    pub count: usize,
    pub recovery_time: MeanStd,
    pub ineffective_fraction: MeanStd,
    pub failed: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusFailure {
    pub dataset: String,
    pub file: String,
    pub seed: Option<u64>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub rows: Vec<ScoreRow>,
    pub aggregates: Vec<DatasetAggregate>,
    pub failures: Vec<CorpusFailure>,
}

/// Per-dataset aggregates, in dataset name order.
pub fn aggregate(rows: &[ScoreRow]) -> Vec<DatasetAggregate> {
    let mut by_dataset: BTreeMap<&str, Vec<&ScoreRow>> = BTreeMap::new();
    for row in rows {
        by_dataset.entry(&row.dataset).or_default().push(row);
    }
    by_dataset
        .into_iter()
        .map(|(dataset, rows)| {
            let metric = |f: fn(&PlanScore) -> f64| MeanStd::of(&rows.iter().map(|r| f(&r.score)).collect::<Vec<_>>());
            DatasetAggregate {
                dataset: dataset.to_string(),
                count: rows.len(),
                recovery_time: metric(|s| s.recovery_time as f64),
                ineffective_fraction: metric(|s| s.ineffective_fraction),
                failed: metric(|s| if s.failed { 1.0 } else { 0.0 }),
            }
        })
        .collect()
}

impl CorpusReport {
    pub fn from_rows(rows: Vec<ScoreRow>, failures: Vec<CorpusFailure>) -> Self {
        CorpusReport {
            aggregates: aggregate(&rows),
            rows,
            failures,
        }
    }
}

/// `manifest.json` in the corpus directory maps incident file names to
/// dataset tags.
pub fn read_manifest(corpus_dir: &Path) -> Result<BTreeMap<String, String>, EvaluationError> {
    let path = corpus_dir.join("manifest.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| EvaluationError::Corpus(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| EvaluationError::Corpus(format!("{}: {e}", path.display())))
}

enum Cell {
    Row(ScoreRow),
    Failure(CorpusFailure),
}

fn plan_and_score(
    dataset: &str,
    file: &str,
    incident: &Incident,
    built: &CorpusModel,
    config: &PlannerConfig,
    seed: u64,
) -> Cell {
    let failure = |message: String| {
        Cell::Failure(CorpusFailure {
            dataset: dataset.to_string(),
            file: file.to_string(),
            seed: Some(seed),
            message,
        })
    };
    let config = PlannerConfig { seed, ..config.clone() };
    let result = match plan(built.model.as_ref(), incident, config) {
        Ok(r) => r,
        Err(e) => return failure(e.to_string()),
    };
    let score = built
        .labeler
        .labels(incident, &result)
        .and_then(|labels| score_plan(&result, &labels));
    match score {
        Ok(score) => Cell::Row(ScoreRow {
            dataset: dataset.to_string(),
            incident_id: incident.id.clone(),
            seed,
            score,
        }),
        Err(e) => failure(e.to_string()),
    }
}

/// Plans every manifest incident once per seed and scores the plans.
/// Failures are recorded and the run continues. Rows come out in manifest
/// order, then seed order, whatever the worker count.
pub fn run_corpus(
    corpus_dir: &Path,
    factory: &dyn ModelFactory,
    config: &PlannerConfig,
    seeds: &[u64],
) -> Result<CorpusReport, EvaluationError> {
    let manifest = read_manifest(corpus_dir)?;
    let mut failures = Vec::new();
    let mut jobs: Vec<(String, String, Incident, Arc<CorpusModel>)> = Vec::new();
    for (file, dataset) in &manifest {
        let path: PathBuf = corpus_dir.join(file);
        let loaded = std::fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|t| Incident::from_json(&t).map_err(|e| e.to_string()))
            .and_then(|i| factory.build(&i).map(|m| (i, m)).map_err(|e| e.to_string()));
        match loaded {
            Ok((incident, built)) => jobs.push((dataset.clone(), file.clone(), incident, Arc::new(built))),
            Err(message) => failures.push(CorpusFailure {
                dataset: dataset.clone(),
                file: file.clone(),
                seed: None,
                message,
            }),
        }
    }

    let cells: Vec<(usize, u64)> = (0..jobs.len())
        .flat_map(|j| seeds.iter().map(move |s| (j, *s)))
        .collect();
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(cells.len())
        .max(1);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Cell>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(j, seed)) = cells.get(k) else { break };
                let (dataset, file, incident, built) = &jobs[j];
                let cell = plan_and_score(dataset, file, incident, built, config, seed);
                results.lock().expect("results poisoned")[k] = Some(cell);
            });
        }
    });

    let mut rows = Vec::with_capacity(cells.len());
    for cell in results.into_inner().expect("results poisoned").into_iter().flatten() {
        match cell {
            Cell::Row(r) => rows.push(r),
            Cell::Failure(f) => failures.push(f),
        }
    }
    Ok(CorpusReport::from_rows(rows, failures))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

pub fn emit_report(report: &CorpusReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => serde_json::to_vec_pretty(report).expect("report serializes"),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["dataset", "incident_id", "seed", "recovery_time", "ineffective_pct", "failed"])
                .expect("in-memory write");
            for r in &report.rows {
                w.write_record([
                    r.dataset.clone(),
                    r.incident_id.clone(),
                    r.seed.to_string(),
                    r.score.recovery_time.to_string(),
                    format!("{}", r.score.ineffective_fraction * 100.0),
                    r.score.failed.to_string(),
                ])
                .expect("in-memory write");
            }
            w.into_inner().expect("in-memory flush")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ResponseAction, TrajectoryStep};

    fn plan_of(n: usize, truncated: bool) -> PlanResult {
        let steps = (0..n)
            .map(|k| TrajectoryStep {
                time_index: k,
                state_before: RecoveryState::INITIAL,
                action: ResponseAction::new(format!("a{k}")).unwrap(),
                state_after: RecoveryState::INITIAL,
                q_estimate: None,
                selected_index: None,
                candidates: vec![],
            })
            .collect();
        PlanResult {
            steps,
            reached_terminal: false,
            truncated,
            seed: 0,
        }
    }

    const GOOD: StepLabel = StepLabel { effective: true, unnecessary: false };
    const WASTE: StepLabel = StepLabel { effective: false, unnecessary: true };

    #[test]
    fn six_effective_steps() {
        let s = score_plan(&plan_of(6, false), &[GOOD; 6]).unwrap();
        assert_eq!(s.recovery_time, 6);
        assert_eq!(s.ineffective_fraction, 0.0);
        assert!(!s.failed);
    }

    #[test]
    fn unnecessary_step_costs_two() {
        let mut labels = vec![GOOD; 6];
        labels.insert(3, WASTE);
        let s = score_plan(&plan_of(7, false), &labels).unwrap();
        assert_eq!(s.recovery_time, 8);
        assert!((s.ineffective_fraction - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn truncated_is_failed() {
        assert!(score_plan(&plan_of(2, true), &[GOOD; 2]).unwrap().failed);
    }

    #[test]
    fn label_count_must_match() {
        assert_eq!(
            score_plan(&plan_of(2, false), &[GOOD; 3]),
            Err(EvaluationError::LabelMismatch { labels: 3, steps: 2 })
        );
    }

    fn row(dataset: &str, id: &str, seed: u64, rt: u64, inef: f64, failed: bool) -> ScoreRow {
        ScoreRow {
            dataset: dataset.into(),
            incident_id: id.into(),
            seed,
            score: PlanScore { recovery_time: rt, ineffective_fraction: inef, failed },
        }
    }

    #[test]
    fn aggregates_by_hand() {
        // three incidents, one dataset: times 6, 8, 10
        let rows = vec![
            row("ctu", "a", 0, 6, 0.0, false),
            row("ctu", "b", 0, 8, 0.25, false),
            row("ctu", "c", 0, 10, 0.5, true),
        ];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].recovery_time.mean, 8.0);
        assert!((agg[0].recovery_time.std - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((agg[0].ineffective_fraction.mean - 0.25).abs() < 1e-12);
        assert!((agg[0].failed.mean - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn constant_rows_have_zero_std() {
        let rows: Vec<_> = (0..5).map(|s| row("d", "x", s, 7, 0.1, false)).collect();
        let agg = aggregate(&rows);
        assert_eq!(agg[0].recovery_time, MeanStd { mean: 7.0, std: 0.0 });
    }

    #[test]
    fn empty_report_csv_is_header_only() {
        let bytes = emit_report(&CorpusReport::default(), ReportFormat::Csv);
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "dataset,incident_id,seed,recovery_time,ineffective_pct,failed\n"
        );
    }

    #[test]
    fn json_round_trip() {
        let report = CorpusReport::from_rows(vec![row("a", "x", 1, 9, 1.0 / 3.0, true)], vec![]);
        let bytes = emit_report(&report, ReportFormat::Json);
        let back: CorpusReport = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn label_table_requires_every_action() {
        let mut table = LabelTable::default();
        table.0.insert("a0".into(), GOOD);
        let inc = Incident {
            id: "i".into(),
            system_description: String::new(),
            logs: vec![],
            summary: None,
            iocs: vec![],
            enrichment: vec![],
            ground_truth: None,
        };
        assert!(table.labels(&inc, &plan_of(1, false)).is_ok());
        assert!(matches!(
            table.labels(&inc, &plan_of(2, false)),
            Err(EvaluationError::MissingLabel { step: 1, .. })
        ));
    }
}
