//! Empirical hallucination-rate estimation with Hoeffding confidence.
//!
//! From `L` labelled proposals the empirical rate `h̄` satisfies
//! `P(h >= h̄ + eps) <= exp(-2 eps^2 L)`. With `h <= h̄ + eps`, the chance
//! that all `N` candidates are hallucinated is at most `(h̄ + eps)^N`.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Incident, RecoveryState, ResponseAction};
use crate::model::{ModelError, QueryContext, ResponseModel, SyntheticModel};
use crate::stream::RandomStream;

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("no hallucination label for action {0:?}")]
    MissingLabel(String),
    #[error("invalid estimation parameter: {0}")]
    Parameter(String),
    #[error("could not read label file: {0}")]
    LabelFile(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Ground-truth source deciding whether a proposed action is hallucinated.
pub trait HallucinationOracle: Send + Sync {
    fn is_hallucinated(&self, action: &ResponseAction) -> Result<bool, EstimateError>;
}

impl HallucinationOracle for SyntheticModel {
    fn is_hallucinated(&self, action: &ResponseAction) -> Result<bool, EstimateError> {
        self.resolve(action)
            .map(|id| self.hallucinated[id])
            .ok_or_else(|| EstimateError::MissingLabel(action.text.clone()))
    }
}

/// Externally supplied labels keyed by exact action text.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelFile {
    pub labels: HashMap<String, bool>,
}

impl LabelFile {
    pub fn load(path: &Path) -> Result<Self, EstimateError> {
        let text = std::fs::read_to_string(path).map_err(|e| EstimateError::LabelFile(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| EstimateError::LabelFile(e.to_string()))
    }
}

impl HallucinationOracle for LabelFile {
    fn is_hallucinated(&self, action: &ResponseAction) -> Result<bool, EstimateError> {
        self.labels
            .get(action.text.trim())
            .copied()
            .ok_or_else(|| EstimateError::MissingLabel(action.text.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HallucinationEstimate {
    pub sample_count: usize,
    pub hallucinated_count: usize,
    pub empirical_rate: f64,
    pub epsilon: f64,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_bound_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_bound: Option<f64>,
    /// Set when `h̄ + eps > 1` and the joint bound was clamped to 1.
    #[serde(default)]
    pub vacuous: bool,
}

impl HallucinationEstimate {
    pub fn from_counts(
        sample_count: usize,
        hallucinated_count: usize,
        confidence: f64,
    ) -> Result<Self, EstimateError> {
        if sample_count == 0 || hallucinated_count > sample_count {
            return Err(EstimateError::Parameter(format!(
                "{hallucinated_count} hallucinated out of {sample_count} samples"
            )));
        }
        let epsilon = required_epsilon(sample_count, confidence)?;
        Ok(HallucinationEstimate {
            sample_count,
            hallucinated_count,
            empirical_rate: hallucinated_count as f64 / sample_count as f64,
            epsilon,
            confidence: 1.0 - hoeffding_failure_bound(epsilon, sample_count),
            joint_bound_n: None,
            joint_bound: None,
            vacuous: false,
        })
    }

    pub fn with_joint_bound(mut self, n: usize) -> Self {
        let bound = joint_bound(self.empirical_rate, self.epsilon, n);
        self.joint_bound_n = Some(n);
        self.joint_bound = Some(bound.value);
        self.vacuous = bound.vacuous;
        self
    }
}

/// `exp(-2 eps^2 L)`, the probability that the true rate exceeds the
/// empirical one by at least `eps`.
pub fn hoeffding_failure_bound(epsilon: f64, l: usize) -> f64 {
    (-2.0 * epsilon * epsilon * l as f64).exp()
}

/// `1 - exp(-2 eps^2 L)`.
pub fn hoeffding_confidence(epsilon: f64, l: usize) -> f64 {
    -(-2.0 * epsilon * epsilon * l as f64).exp_m1()
}

/// Smallest `eps` reaching `confidence` with `L` samples.
pub fn required_epsilon(l: usize, confidence: f64) -> Result<f64, EstimateError> {
    if l == 0 {
        return Err(EstimateError::Parameter("sample count must be positive".into()));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(EstimateError::Parameter(format!("confidence {confidence} not in (0, 1)")));
    }
    Ok(((1.0 / (1.0 - confidence)).ln() / (2.0 * l as f64)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointBound {
    pub value: f64,
    pub vacuous: bool,
}

/// `(h̄ + eps)^N`, clamped to 1 (and flagged) when the base exceeds 1.
pub fn joint_bound(h_bar: f64, epsilon: f64, n: usize) -> JointBound {
    let base = h_bar + epsilon;
    if base > 1.0 {
        return JointBound { value: 1.0, vacuous: true };
    }
    JointBound {
        value: base.powi(n as i32),
        vacuous: false,
    }
}

/// Draws `L` proposals at the initial state and labels each with `oracle`.
pub fn estimate_from_samples(
    model: &dyn ResponseModel,
    oracle: &dyn HallucinationOracle,
    incident: &Incident,
    l: usize,
    confidence: f64,
    stream: &mut RandomStream,
) -> Result<HallucinationEstimate, EstimateError> {
    if l == 0 {
        return Err(EstimateError::Parameter("sample count must be positive".into()));
    }
    let ctx = QueryContext::new(incident);
    let actions = model.propose_actions(RecoveryState::INITIAL, &ctx, l, stream)?;
    let mut hallucinated = 0;
    for action in &actions {
        hallucinated += usize::from(oracle.is_hallucinated(action)?);
    }
    HallucinationEstimate::from_counts(actions.len(), hallucinated, confidence)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub axis: String,
    pub x: usize,
    pub series: f64,
    pub value: f64,
}

/// Confidence curves `1 - exp(-2 eps^2 L)` for `L = 1..=max_l`, one series
/// per `eps`.
pub fn confidence_table(epsilons: &[f64], max_l: usize) -> Vec<BoundRow> {
    epsilons
        .iter()
        .flat_map(|eps| {
            (1..=max_l).map(move |l| BoundRow {
                axis: "L".into(),
                x: l,
                series: *eps,
                value: hoeffding_confidence(*eps, l),
            })
        })
        .collect()
}

/// Joint-bound curves `base^N` for `N = 1..=max_n`, one series per base
/// `h̄ + eps`.
pub fn joint_bound_table(bases: &[f64], max_n: usize) -> Vec<BoundRow> {
    bases
        .iter()
        .flat_map(|base| {
            (1..=max_n).map(move |n| BoundRow {
                axis: "N".into(),
                x: n,
                series: *base,
                value: joint_bound(*base, 0.0, n).value,
            })
        })
        .collect()
}
