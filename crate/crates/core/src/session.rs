//! Operator-driven planning: the planner proposes and ranks candidates, a
//! person accepts one or types an override, and the trajectory advances one
//! step per decision.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Incident, PlanResult, RecoveryState, ResponseAction, TrajectoryStep};
use crate::model::ResponseModel;
use crate::planner::{CandidateEvaluation, PlanError, Planner, PlannerConfig};
use crate::retrieval::{enrich, KnowledgeBase, RemoteOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("no session {0}")]
    NotFound(String),
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("session cannot take this decision: {0}")]
    Conflict(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    AwaitingDecision,
    Terminal,
    Truncated,
    Error,
}

/// Exactly one of the two fields must be set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDecision {
    /// Position in the ranked `pending_candidates`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub override_action_text: Option<String>,
}

impl StepDecision {
    pub fn candidate(index: usize) -> Self {
        StepDecision {
            candidate_index: Some(index),
            override_action_text: None,
        }
    }

    pub fn override_text(text: impl Into<String>) -> Self {
        StepDecision {
            candidate_index: None,
            override_action_text: Some(text.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub incident: Incident,
    pub config: PlannerConfig,
    pub current_state: RecoveryState,
    pub steps: Vec<TrajectoryStep>,
    /// Candidates for the next step, best estimate first; ties keep sampled order.
    pub pending_candidates: Vec<CandidateEvaluation>,
    pub status: SessionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Non-fatal problems, such as failed remote enrichment lookups.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Orders candidates by estimate, keeping sampled order on ties.
pub fn rank_candidates(mut evaluations: Vec<CandidateEvaluation>) -> Vec<CandidateEvaluation> {
    evaluations.sort_by(|a, b| a.q_estimate.total_cmp(&b.q_estimate));
    evaluations
}

pub fn create_session(
    id: impl Into<String>,
    incident: &Incident,
    config: PlannerConfig,
    model: &dyn ResponseModel,
    kb: &KnowledgeBase,
    remote: Option<&RemoteOptions<'_>>,
) -> Result<Session, SessionError> {
    incident
        .validate()
        .map_err(|e| SessionError::Validation(e.to_string()))?;
    config.validate().map_err(|e| SessionError::Validation(e.to_string()))?;
    let enriched = enrich(incident, kb, remote);
    let mut session = Session {
        id: id.into(),
        incident: enriched.incident,
        config,
        current_state: RecoveryState::INITIAL,
        steps: Vec::new(),
        pending_candidates: Vec::new(),
        status: SessionStatus::AwaitingDecision,
        error: None,
        warnings: enriched
            .warnings
            .into_iter()
            .map(|w| format!("enrichment of {}: {}", w.ioc.value, w.message))
            .collect(),
    };
    if !session.incident.is_plannable() {
        // nothing observed, nothing to respond to
        session.status = SessionStatus::Terminal;
        return Ok(session);
    }
    session.refresh(model);
    Ok(session)
}

impl Session {
    fn history(&self) -> Vec<ResponseAction> {
        self.steps.iter().map(|s| s.action.clone()).collect()
    }

    fn fail(&mut self, err: PlanError) {
        self.status = SessionStatus::Error;
        self.pending_candidates.clear();
        self.error = Some(err.to_string());
    }

    /// Recomputes status and, when a decision is due, the candidate set.
    fn refresh(&mut self, model: &dyn ResponseModel) {
        self.pending_candidates.clear();
        if self.current_state.is_terminal() {
            self.status = SessionStatus::Terminal;
            return;
        }
        if self.steps.len() >= self.config.max_plan_steps {
            self.status = SessionStatus::Truncated;
            return;
        }
        let planner = match Planner::new(model, &self.incident, self.config.clone()) {
            Ok(p) => p,
            Err(e) => return self.fail(e),
        };
        match planner.decide(self.steps.len(), self.current_state, &self.history()) {
            Ok(decision) => {
                self.pending_candidates = rank_candidates(decision.evaluations);
                self.status = SessionStatus::AwaitingDecision;
                self.error = None;
            }
            Err(e) => self.fail(e),
        }
    }

    /// Executes the chosen candidate or an operator override and moves to
    /// the next decision point.
    pub fn step(&mut self, decision: &StepDecision, model: &dyn ResponseModel) -> Result<(), SessionError> {
        if self.status != SessionStatus::AwaitingDecision {
            return Err(SessionError::Conflict(format!("session is {:?}", self.status)));
        }
        let t = self.steps.len();
        let history = self.history();
        let planner = Planner::new(model, &self.incident, self.config.clone())
            .map_err(|e| SessionError::Validation(e.to_string()))?;
        let (chosen, selected_index) = match (decision.candidate_index, &decision.override_action_text) {
            (Some(i), None) => {
                let eval = self.pending_candidates.get(i).cloned().ok_or_else(|| {
                    SessionError::Validation(format!(
                        "candidate index {i} out of range for {} candidates",
                        self.pending_candidates.len()
                    ))
                })?;
                let sample_index = eval.sample_index;
                (eval, Some(sample_index))
            }
            (None, Some(text)) => {
                let action = ResponseAction::new(text.clone()).map_err(|e| SessionError::Validation(e.to_string()))?;
                match planner.evaluate_override(t, self.current_state, &action, &history) {
                    Ok(eval) => (eval, None),
                    Err(e) => {
                        self.fail(e);
                        return Ok(());
                    }
                }
            }
            _ => {
                return Err(SessionError::Validation(
                    "give exactly one of candidate_index and override_action_text".into(),
                ))
            }
        };
        let next = match planner.advance(t, self.current_state, &chosen.action, &history) {
            Ok(s) => s,
            Err(e) => {
                self.fail(e);
                return Ok(());
            }
        };
        let mut candidates = std::mem::take(&mut self.pending_candidates);
        candidates.sort_by_key(|c| c.sample_index);
        self.steps.push(TrajectoryStep {
            time_index: t,
            state_before: self.current_state,
            action: chosen.action,
            state_after: next,
            q_estimate: Some(chosen.q_estimate),
            selected_index,
            candidates,
        });
        self.current_state = next;
        self.refresh(model);
        Ok(())
    }

    /// The trajectory so far as a validated plan.
    pub fn export(&self) -> Result<PlanResult, SessionError> {
        let plan = PlanResult {
            steps: self.steps.clone(),
            reached_terminal: self.current_state.is_terminal(),
            truncated: self.status == SessionStatus::Truncated,
            seed: self.config.seed,
        };
        plan.validate().map_err(|e| SessionError::Validation(e.to_string()))?;
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_synthetic, SyntheticConfig, SyntheticModel};
    use crate::planner::plan;

    fn incident() -> Incident {
        Incident {
            id: "s".into(),
            system_description: "lab".into(),
            logs: vec!["beacon from 147.32.84.165".into()],
            summary: None,
            iocs: vec![],
            enrichment: vec![],
            ground_truth: None,
        }
    }

    fn model() -> SyntheticModel {
        build_synthetic(&SyntheticConfig {
            seed: 11,
            n_actions: 6,
            ..Default::default()
        })
        .unwrap()
    }

    fn config() -> PlannerConfig {
        PlannerConfig {
            seed: 4,
            n_candidates: 3,
            m_samples: 4,
            ..Default::default()
        }
    }

    #[test]
    fn accepting_top_candidate_matches_batch_plan() {
        let m = model();
        let mut s = create_session("a", &incident(), config(), &m, &KnowledgeBase::new(), None).unwrap();
        assert_eq!(s.pending_candidates.len(), 3);
        while s.status == SessionStatus::AwaitingDecision {
            s.step(&StepDecision::candidate(0), &m).unwrap();
        }
        let batch = plan(&m, &s.incident, config()).unwrap();
        assert_eq!(s.export().unwrap(), batch);
    }

    #[test]
    fn candidates_are_ranked_and_deterministic() {
        let m = model();
        let a = create_session("a", &incident(), config(), &m, &KnowledgeBase::new(), None).unwrap();
        let b = create_session("b", &incident(), config(), &m, &KnowledgeBase::new(), None).unwrap();
        assert_eq!(a.pending_candidates, b.pending_candidates);
        let q: Vec<f64> = a.pending_candidates.iter().map(|c| c.q_estimate).collect();
        assert!(q.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn rank_is_stable_on_ties() {
        let eval = |i: usize, q: f64| CandidateEvaluation {
            sample_index: i,
            action: ResponseAction::new(format!("a{i}")).unwrap(),
            q_estimate: q,
            rollout_lengths: vec![],
            censored_count: 0,
        };
        let ranked = rank_candidates(vec![eval(0, 4.0), eval(1, 3.0), eval(2, 3.0)]);
        let order: Vec<usize> = ranked.iter().map(|c| c.sample_index).collect();
        assert_eq!(order, [1, 2, 0]);
    }

    #[test]
    fn identity_override_keeps_state() {
        let m = model();
        let halluc = m.hallucinated.iter().position(|h| *h).unwrap();
        let mut s = create_session("a", &incident(), config(), &m, &KnowledgeBase::new(), None).unwrap();
        let before = s.current_state;
        s.step(&StepDecision::override_text(m.actions[halluc].text.clone()), &m).unwrap();
        assert_eq!(s.current_state, before);
        assert_eq!(s.steps[0].selected_index, None);
        assert!(s.steps[0].q_estimate.is_some());
    }

    #[test]
    fn bad_decisions() {
        let m = model();
        let mut s = create_session("a", &incident(), config(), &m, &KnowledgeBase::new(), None).unwrap();
        assert!(matches!(s.step(&StepDecision::candidate(9), &m), Err(SessionError::Validation(_))));
        assert!(matches!(s.step(&StepDecision::default(), &m), Err(SessionError::Validation(_))));
        assert!(matches!(s.step(&StepDecision::override_text("  "), &m), Err(SessionError::Validation(_))));
        while s.status == SessionStatus::AwaitingDecision {
            s.step(&StepDecision::candidate(0), &m).unwrap();
        }
        assert!(matches!(s.step(&StepDecision::candidate(0), &m), Err(SessionError::Conflict(_))));
    }

    #[test]
    fn empty_incident_is_terminal() {
        let m = model();
        let inc = Incident { logs: vec![], ..incident() };
        let s = create_session("a", &inc, config(), &m, &KnowledgeBase::new(), None).unwrap();
        assert_eq!(s.status, SessionStatus::Terminal);
        assert!(s.pending_candidates.is_empty());
    }

    #[test]
    fn enrichment_applied() {
        let m = model();
        let kb = KnowledgeBase::from_map([("147.32.84.165", "known infected host")]);
        let s = create_session("a", &incident(), config(), &m, &kb, None).unwrap();
        assert_eq!(s.incident.enrichment.len(), 1);
    }
}
