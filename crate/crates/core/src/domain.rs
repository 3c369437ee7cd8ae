//! Value types shared by every part of the planner: recovery states,
//! incidents, response actions, trajectories and plans.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::CandidateEvaluation;
use crate::retrieval::{EnrichmentEntry, IocEntry};

/// Number of distinct recovery states.
pub const STATE_COUNT: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("state index {0} is out of range [0, 63]")]
    IndexOutOfRange(usize),
    #[error("response action text must not be empty")]
    EmptyAction,
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("invalid incident: {0}")]
    InvalidIncident(String),
}

/// One of the six response stages, in canonical order.
///
/// The ordinal is also the bit position inside a state index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Containment,
    Assessment,
    Preservation,
    Eviction,
    Hardening,
    Restoration,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Containment,
        Stage::Assessment,
        Stage::Preservation,
        Stage::Eviction,
        Stage::Hardening,
        Stage::Restoration,
    ];

    pub fn bit(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Containment => "containment",
            Stage::Assessment => "assessment",
            Stage::Preservation => "preservation",
            Stage::Eviction => "eviction",
            Stage::Hardening => "hardening",
            Stage::Restoration => "restoration",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Six completion flags tracking response progress.
///
/// Encodes to a dense index in `[0, 63]` with containment as the
/// least-significant bit and restoration as the most-significant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveryState {
    pub containment: bool,
    pub assessment: bool,
    pub preservation: bool,
    pub eviction: bool,
    pub hardening: bool,
    pub restoration: bool,
}

impl RecoveryState {
    pub const INITIAL: RecoveryState = RecoveryState {
        containment: false,
        assessment: false,
        preservation: false,
        eviction: false,
        hardening: false,
        restoration: false,
    };

    pub const TERMINAL: RecoveryState = RecoveryState {
        containment: true,
        assessment: true,
        preservation: true,
        eviction: true,
        hardening: true,
        restoration: true,
    };

    pub fn from_index(index: usize) -> Result<Self, DomainError> {
        if index >= STATE_COUNT {
            return Err(DomainError::IndexOutOfRange(index));
        }
        let bit = |b: u8| index & (1 << b) != 0;
        Ok(RecoveryState {
            containment: bit(0),
            assessment: bit(1),
            preservation: bit(2),
            eviction: bit(3),
            hardening: bit(4),
            restoration: bit(5),
        })
    }

    pub fn index(&self) -> usize {
        Stage::ALL
            .iter()
            .filter(|stage| self.get(**stage))
            .fold(0, |acc, stage| acc | (1 << stage.bit()))
    }

    pub fn get(&self, stage: Stage) -> bool {
        match stage {
            Stage::Containment => self.containment,
            Stage::Assessment => self.assessment,
            Stage::Preservation => self.preservation,
            Stage::Eviction => self.eviction,
            Stage::Hardening => self.hardening,
            Stage::Restoration => self.restoration,
        }
    }

    pub fn with(mut self, stage: Stage, value: bool) -> Self {
        match stage {
            Stage::Containment => self.containment = value,
            Stage::Assessment => self.assessment = value,
            Stage::Preservation => self.preservation = value,
            Stage::Eviction => self.eviction = value,
            Stage::Hardening => self.hardening = value,
            Stage::Restoration => self.restoration = value,
        }
        self
    }

    pub fn is_terminal(&self) -> bool {
        Stage::ALL.iter().all(|stage| self.get(*stage))
    }

    pub fn completed(&self) -> usize {
        Stage::ALL.iter().filter(|stage| self.get(**stage)).count()
    }

    /// Canonical compact JSON, keys in stage order.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("recovery state serializes")
    }

    pub fn all() -> impl Iterator<Item = RecoveryState> {
        (0..STATE_COUNT).map(|i| RecoveryState::from_index(i).expect("in range"))
    }
}

impl fmt::Display for RecoveryState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bits: Vec<&str> = Stage::ALL
            .iter()
            .map(|s| if self.get(*s) { "1" } else { "0" })
            .collect();
        write!(f, "({})", bits.join(","))
    }
}

pub fn state_from_index(index: usize) -> Result<RecoveryState, DomainError> {
    RecoveryState::from_index(index)
}

pub fn is_terminal(state: &RecoveryState) -> bool {
    state.is_terminal()
}

/// A proposed response action. Free-form text; the synthetic backend also
/// tags it with the index into its action table.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResponseAction {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unnecessary: Option<bool>,
}

impl ResponseAction {
    pub fn new(text: impl Into<String>) -> Result<Self, DomainError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DomainError::EmptyAction);
        }
        Ok(ResponseAction {
            text,
            synthetic_id: None,
            unnecessary: None,
        })
    }

    pub fn synthetic(text: impl Into<String>, id: usize, unnecessary: bool) -> Self {
        ResponseAction {
            text: text.into(),
            synthetic_id: Some(id),
            unnecessary: Some(unnecessary),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthAction {
    pub text: String,
    pub stage_effects: BTreeSet<Stage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthPlan {
    pub actions: Vec<GroundTruthAction>,
    pub length: usize,
}

impl GroundTruthPlan {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.length == 0 || self.length != self.actions.len() {
            return Err(DomainError::InvalidIncident(format!(
                "ground truth length {} does not match {} actions",
                self.length,
                self.actions.len()
            )));
        }
        let covered: BTreeSet<Stage> = self
            .actions
            .iter()
            .flat_map(|a| a.stage_effects.iter().copied())
            .collect();
        if covered.len() != Stage::ALL.len() {
            return Err(DomainError::InvalidIncident(
                "ground truth plan does not cover all six stages".into(),
            ));
        }
        Ok(())
    }
}

/// Logs, system description and retrieved enrichment for one incident.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub id: String,
    pub system_description: String,
    pub logs: Vec<String>,
    #[serde(default)]
    pub summary: Option<String>,
    #[serde(default)]
    pub iocs: Vec<IocEntry>,
    #[serde(default)]
    pub enrichment: Vec<EnrichmentEntry>,
    #[serde(default)]
    pub ground_truth: Option<GroundTruthPlan>,
}

impl Incident {
    pub fn from_json(text: &str) -> Result<Self, DomainError> {
        let incident: Incident = serde_json::from_str(text)
            .map_err(|e| DomainError::InvalidIncident(e.to_string()))?;
        incident.validate()?;
        Ok(incident)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.id.trim().is_empty() {
            return Err(DomainError::InvalidIncident("empty id".into()));
        }
        if let Some(plan) = &self.ground_truth {
            plan.validate()?;
        }
        Ok(())
    }

    /// Whether the incident carries enough evidence to plan against.
    pub fn is_plannable(&self) -> bool {
        !self.logs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub time_index: usize,
    pub state_before: RecoveryState,
    pub action: ResponseAction,
    pub state_after: RecoveryState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_estimate: Option<f64>,
    /// Sample index of the executed candidate; `None` for operator overrides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_index: Option<usize>,
    /// Every candidate evaluated at this step, in sampled order.
    #[serde(default)]
    pub candidates: Vec<CandidateEvaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub steps: Vec<TrajectoryStep>,
    pub reached_terminal: bool,
    pub truncated: bool,
    pub seed: u64,
}

impl PlanResult {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn final_state(&self) -> RecoveryState {
        self.steps
            .last()
            .map(|s| s.state_after)
            .unwrap_or(RecoveryState::INITIAL)
    }

    /// Checks the structural invariants every plan must satisfy.
    pub fn validate(&self) -> Result<(), DomainError> {
        for (k, step) in self.steps.iter().enumerate() {
            if step.time_index != k {
                return Err(DomainError::InvalidPlan(format!(
                    "step {k} has time index {}",
                    step.time_index
                )));
            }
            if let Some(next) = self.steps.get(k + 1) {
                if next.state_before != step.state_after {
                    return Err(DomainError::InvalidPlan(format!(
                        "state discontinuity between steps {k} and {}",
                        k + 1
                    )));
                }
            }
            if let Some(q) = step.q_estimate {
                if !(q.is_finite() && q >= 0.0) {
                    return Err(DomainError::InvalidPlan(format!("step {k} has q estimate {q}")));
                }
            }
        }
        let ends_terminal = match self.steps.last() {
            Some(step) => step.state_after.is_terminal(),
            None => self.reached_terminal,
        };
        if self.reached_terminal != ends_terminal {
            return Err(DomainError::InvalidPlan(
                "reached_terminal disagrees with the final state".into(),
            ));
        }
        if self.truncated && self.reached_terminal {
            return Err(DomainError::InvalidPlan(
                "a plan cannot be both truncated and terminal".into(),
            ));
        }
        Ok(())
    }
}
