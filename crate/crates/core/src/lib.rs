//! Incident-response planning with a queryable response model: a
//! look-ahead planner that scores candidate actions by simulated recovery
//! time, the value analysis behind it, hallucination estimation, log
//! enrichment and plan evaluation.

pub mod analysis;
pub mod domain;
pub mod evaluation;
pub mod hallucination;
pub mod llm;
pub mod model;
pub mod planner;
pub mod retrieval;
pub mod session;
pub mod stream;
pub mod verify;

pub use analysis::{FilterConditionReport, ValueVector};
pub use domain::{
    GroundTruthAction, GroundTruthPlan, Incident, PlanResult, RecoveryState, ResponseAction, Stage, TrajectoryStep,
};
pub use model::{
    ModelError, Proposal, QueryContext, ResponseModel, SyntheticConfig, SyntheticModel, TransitionKernel,
};
pub use planner::{plan, CandidateEvaluation, PlanError, Planner, PlannerConfig};
pub use stream::{RandomStream, StreamPurpose};
pub use session::{Session, SessionError, SessionStatus, StepDecision};
