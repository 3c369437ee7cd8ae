//! Rollout planner.
//!
//! At each step the planner samples `N` candidate actions, estimates each
//! candidate's expected recovery time-to-go (`Q~`) from `M` simulated
//! trajectories, executes the argmin and advances the predicted state.
//!
//! Randomness: proposals at step `t` use stream `(seed, Propose, t)`,
//! candidate `i` uses `(seed, Evaluate, t, i)` and the state update uses
//! `(seed, Advance, t)`. Parallel and sequential evaluation therefore give
//! identical plans.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, AnalysisError, ValueVector};
use crate::domain::{Incident, PlanResult, RecoveryState, ResponseAction, TrajectoryStep};
use crate::model::{ModelError, QueryContext, ResponseModel};
use crate::stream::{RandomStream, StreamPurpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub n_candidates: usize,
    pub m_samples: usize,
    pub max_rollout_depth: usize,
    pub max_plan_steps: usize,
    pub exact_expectation: bool,
    pub seed: u64,
    /// Upper bound on candidates evaluated concurrently; 1 is sequential.
    pub max_parallel: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            n_candidates: 3,
            m_samples: 3,
            max_rollout_depth: 32,
            max_plan_steps: 64,
            exact_expectation: false,
            seed: 0,
            max_parallel: 4,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        let fields = [
            ("n_candidates", self.n_candidates),
            ("m_samples", self.m_samples),
            ("max_rollout_depth", self.max_rollout_depth),
            ("max_plan_steps", self.max_plan_steps),
            ("max_parallel", self.max_parallel),
        ];
        for (name, value) in fields {
            if value == 0 {
                return Err(PlanError::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEvaluation {
    /// Position of the candidate in the sampled set.
    pub sample_index: usize,
    pub action: ResponseAction,
    pub q_estimate: f64,
    /// Simulated recovery times; empty in exact-expectation mode.
    pub rollout_lengths: Vec<f64>,
    pub censored_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rollout {
    pub length: usize,
    pub censored: bool,
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid planner configuration: {0}")]
    Config(String),
    #[error("exact-expectation mode requires a backend that exposes its kernels")]
    Capability,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("planning aborted at step {step}: {source}")]
    Aborted {
        step: usize,
        source: Box<PlanError>,
        partial: Box<PlanResult>,
    },
}

impl PlanError {
    pub fn partial(&self) -> Option<&PlanResult> {
        match self {
            PlanError::Aborted { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

/// Simulates one trajectory from `state` starting with `action`, drawing
/// fresh actions from the model after every predicted transition.
///
/// Returns the number of actions until the predicted state is terminal,
/// or `depth_budget` (censored) when the budget runs out first.
pub fn rollout_recovery_time(
    model: &dyn ResponseModel,
    state: RecoveryState,
    action: &ResponseAction,
    ctx: &QueryContext<'_>,
    depth_budget: usize,
    stream: &mut RandomStream,
) -> Result<Rollout, ModelError> {
    if state.is_terminal() {
        return Err(ModelError::TerminalState);
    }
    let mut history = ctx.history.to_vec();
    let mut current = state;
    let mut next_action = action.clone();
    for depth in 1..=depth_budget {
        let sub = QueryContext::with_history(ctx.incident, &history);
        let next = model.predict_next_state(current, &next_action, &sub, stream)?;
        if next.is_terminal() {
            return Ok(Rollout { length: depth, censored: false });
        }
        if depth == depth_budget {
            break;
        }
        history.push(next_action);
        let sub = QueryContext::with_history(ctx.incident, &history);
        next_action = model
            .propose_actions(next, &sub, 1, stream)?
            .pop()
            .ok_or_else(|| ModelError::Transport("model returned no action".into()))?;
        current = next;
    }
    Ok(Rollout {
        length: depth_budget,
        censored: true,
    })
}

/// Index of the smallest estimate; ties go to the earliest candidate.
pub fn select_action(q_estimates: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, q) in q_estimates.iter().enumerate() {
        match best {
            Some((_, b)) if *q >= b => {}
            _ => best = Some((i, *q)),
        }
    }
    best.map(|(i, _)| i)
}

/// Outcome of one propose/evaluate/select round.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub evaluations: Vec<CandidateEvaluation>,
    pub selected: usize,
}

impl Decision {
    pub fn selected_evaluation(&self) -> &CandidateEvaluation {
        &self.evaluations[self.selected]
    }
}

pub struct Planner<'a> {
    model: &'a dyn ResponseModel,
    incident: &'a Incident,
    config: PlannerConfig,
    model_values: Option<ValueVector>,
}

impl<'a> Planner<'a> {
    pub fn new(
        model: &'a dyn ResponseModel,
        incident: &'a Incident,
        config: PlannerConfig,
    ) -> Result<Self, PlanError> {
        config.validate()?;
        let model_values = if config.exact_expectation {
            let exact = model.exact_kernels().ok_or(PlanError::Capability)?;
            let chain = analysis::induced_chain(exact.kernels, exact.proposal)?;
            Some(analysis::solve_time_to_go(&chain)?)
        } else {
            None
        };
        Ok(Planner {
            model,
            incident,
            config,
            model_values,
        })
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    /// Time-to-go the model predicts, available in exact mode.
    pub fn model_values(&self) -> Option<&ValueVector> {
        self.model_values.as_ref()
    }

    pub fn propose(
        &self,
        t: usize,
        state: RecoveryState,
        history: &[ResponseAction],
    ) -> Result<Vec<ResponseAction>, PlanError> {
        let mut stream = RandomStream::derive(self.config.seed, StreamPurpose::Propose, &[t as u64]);
        let ctx = QueryContext::with_history(self.incident, history);
        let actions = self
            .model
            .propose_actions(state, &ctx, self.config.n_candidates, &mut stream)?;
        if actions.len() != self.config.n_candidates {
            return Err(ModelError::Transport(format!(
                "asked for {} actions, got {}",
                self.config.n_candidates,
                actions.len()
            ))
            .into());
        }
        Ok(actions)
    }

    /// Estimates `Q~(state, action)` using `stream` for any sampling.
    pub fn estimate_q(
        &self,
        state: RecoveryState,
        action: &ResponseAction,
        history: &[ResponseAction],
        stream: &mut RandomStream,
    ) -> Result<CandidateEvaluation, PlanError> {
        if state.is_terminal() {
            return Err(ModelError::TerminalState.into());
        }
        if let Some(values) = &self.model_values {
            let exact = self.model.exact_kernels().ok_or(PlanError::Capability)?;
            let s = state.index();
            let successor = match self.model.kernel_index(action) {
                Some(a) => values.expectation(exact.kernels[a].row(s)),
                None => values.get(s),
            };
            return Ok(CandidateEvaluation {
                sample_index: 0,
                action: action.clone(),
                q_estimate: 1.0 + successor,
                rollout_lengths: vec![],
                censored_count: 0,
            });
        }
        let ctx = QueryContext::with_history(self.incident, history);
        let mut lengths = Vec::with_capacity(self.config.m_samples);
        let mut censored = 0;
        for _ in 0..self.config.m_samples {
            let r = rollout_recovery_time(
                self.model,
                state,
                action,
                &ctx,
                self.config.max_rollout_depth,
                stream,
            )?;
            censored += usize::from(r.censored);
            lengths.push(r.length as f64);
        }
        let q = lengths.iter().sum::<f64>() / lengths.len() as f64;
        Ok(CandidateEvaluation {
            sample_index: 0,
            action: action.clone(),
            q_estimate: q,
            rollout_lengths: lengths,
            censored_count: censored,
        })
    }

    fn evaluate_one(
        &self,
        t: usize,
        state: RecoveryState,
        sample_index: usize,
        action: &ResponseAction,
        history: &[ResponseAction],
    ) -> Result<CandidateEvaluation, PlanError> {
        let mut stream = RandomStream::derive(
            self.config.seed,
            StreamPurpose::Evaluate,
            &[t as u64, sample_index as u64],
        );
        let mut eval = self.estimate_q(state, action, history, &mut stream)?;
        eval.sample_index = sample_index;
        Ok(eval)
    }

    /// Evaluates `(sample_index, action)` pairs; results follow input order.
    pub fn evaluate_indexed(
        &self,
        t: usize,
        state: RecoveryState,
        candidates: &[(usize, ResponseAction)],
        history: &[ResponseAction],
    ) -> Result<Vec<CandidateEvaluation>, PlanError> {
        let workers = self.config.max_parallel.min(candidates.len());
        if workers <= 1 {
            return candidates
                .iter()
                .map(|(i, a)| self.evaluate_one(t, state, *i, a, history))
                .collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<CandidateEvaluation, PlanError>>>> =
            Mutex::new((0..candidates.len()).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::Relaxed);
                    let Some((i, action)) = candidates.get(k) else {
                        break;
                    };
                    let result = self.evaluate_one(t, state, *i, action, history);
                    slots.lock().expect("evaluation slots poisoned")[k] = Some(result);
                });
            }
        });
        slots
            .into_inner()
            .expect("evaluation slots poisoned")
            .into_iter()
            .map(|r| r.expect("every candidate evaluated"))
            .collect()
    }

    pub fn evaluate_candidates(
        &self,
        t: usize,
        state: RecoveryState,
        candidates: &[ResponseAction],
        history: &[ResponseAction],
    ) -> Result<Vec<CandidateEvaluation>, PlanError> {
        let indexed: Vec<(usize, ResponseAction)> = candidates.iter().cloned().enumerate().collect();
        self.evaluate_indexed(t, state, &indexed, history)
    }

    /// Q~ for an action supplied from outside the candidate set.
    pub fn evaluate_override(
        &self,
        t: usize,
        state: RecoveryState,
        action: &ResponseAction,
        history: &[ResponseAction],
    ) -> Result<CandidateEvaluation, PlanError> {
        let mut stream = RandomStream::derive(self.config.seed, StreamPurpose::Override, &[t as u64]);
        self.estimate_q(state, action, history, &mut stream)
    }

    pub fn decide(
        &self,
        t: usize,
        state: RecoveryState,
        history: &[ResponseAction],
    ) -> Result<Decision, PlanError> {
        let candidates = self.propose(t, state, history)?;
        let evaluations = self.evaluate_candidates(t, state, &candidates, history)?;
        let qs: Vec<f64> = evaluations.iter().map(|e| e.q_estimate).collect();
        let selected = select_action(&qs).expect("at least one candidate");
        Ok(Decision { evaluations, selected })
    }

    /// Predicts the state after executing `action` at step `t`.
    pub fn advance(
        &self,
        t: usize,
        state: RecoveryState,
        action: &ResponseAction,
        history: &[ResponseAction],
    ) -> Result<RecoveryState, PlanError> {
        let mut stream = RandomStream::derive(self.config.seed, StreamPurpose::Advance, &[t as u64]);
        let ctx = QueryContext::with_history(self.incident, history);
        Ok(self.model.predict_next_state(state, action, &ctx, &mut stream)?)
    }

    pub fn plan(&self) -> Result<PlanResult, PlanError> {
        self.plan_from(RecoveryState::INITIAL)
    }

    pub fn plan_from(&self, initial: RecoveryState) -> Result<PlanResult, PlanError> {
        let mut result = PlanResult {
            steps: Vec::new(),
            reached_terminal: initial.is_terminal(),
            truncated: false,
            seed: self.config.seed,
        };
        let mut state = initial;
        let mut history: Vec<ResponseAction> = Vec::new();
        let abort = |step: usize, err: PlanError, partial: &PlanResult| PlanError::Aborted {
            step,
            source: Box::new(err),
            partial: Box::new(partial.clone()),
        };
        while !state.is_terminal() {
            let t = result.steps.len();
            if t >= self.config.max_plan_steps {
                result.truncated = true;
                break;
            }
            let decision = self
                .decide(t, state, &history)
                .map_err(|e| abort(t, e, &result))?;
            let chosen = decision.selected_evaluation().clone();
            let next = self
                .advance(t, state, &chosen.action, &history)
                .map_err(|e| abort(t, e, &result))?;
            history.push(chosen.action.clone());
            result.steps.push(TrajectoryStep {
                time_index: t,
                state_before: state,
                action: chosen.action,
                state_after: next,
                q_estimate: Some(chosen.q_estimate),
                selected_index: Some(chosen.sample_index),
                candidates: decision.evaluations,
            });
            state = next;
        }
        result.reached_terminal = state.is_terminal();
        Ok(result)
    }
}

pub fn plan(
    model: &dyn ResponseModel,
    incident: &Incident,
    config: PlannerConfig,
) -> Result<PlanResult, PlanError> {
    Planner::new(model, incident, config)?.plan()
}
