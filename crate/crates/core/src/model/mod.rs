//! The queryable response model: proposes candidate actions for a recovery
//! state and predicts the state an action leads to.

mod kernel;
pub mod stub;
pub mod synthetic;

use thiserror::Error;

use crate::domain::{Incident, RecoveryState, ResponseAction};
use crate::stream::RandomStream;

pub use kernel::{Proposal, TransitionKernel, ROW_SUM_TOLERANCE};
pub use stub::FixedLatencyModel;
pub use synthetic::{build_synthetic, label_hallucinated, SyntheticAction, SyntheticConfig, SyntheticModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("cannot query the model at the terminal state")]
    TerminalState,
    #[error("invalid transition kernel: {0}")]
    InvalidKernel(String),
    #[error("invalid proposal distribution: {0}")]
    InvalidProposal(String),
    #[error("infeasible synthetic configuration: {0}")]
    Construction(String),
    #[error("model transport failure: {0}")]
    Transport(String),
    #[error("could not obtain a state prediction: {0}")]
    Prediction(String),
    #[error("backend configuration error: {0}")]
    Configuration(String),
}

/// Everything a model may condition on besides the recovery state.
#[derive(Debug, Clone, Copy)]
pub struct QueryContext<'a> {
    pub incident: &'a Incident,
    /// Actions already taken (executed or simulated) in this trajectory.
    pub history: &'a [ResponseAction],
}

impl<'a> QueryContext<'a> {
    pub fn new(incident: &'a Incident) -> Self {
        QueryContext {
            incident,
            history: &[],
        }
    }

    pub fn with_history(incident: &'a Incident, history: &'a [ResponseAction]) -> Self {
        QueryContext { incident, history }
    }
}

/// Model-side dynamics for backends that can expose them exactly.
#[derive(Debug, Clone, Copy)]
pub struct ExactKernels<'a> {
    pub kernels: &'a [TransitionKernel],
    pub proposal: &'a Proposal,
}

/// A response model. Implementations are deterministic given the random
/// stream and must tolerate concurrent queries.
pub trait ResponseModel: Send + Sync {
    /// Samples `n` actions i.i.d. from the model's proposal at `state`.
    fn propose_actions(
        &self,
        state: RecoveryState,
        ctx: &QueryContext<'_>,
        n: usize,
        stream: &mut RandomStream,
    ) -> Result<Vec<ResponseAction>, ModelError>;

    /// Samples the state the model predicts after taking `action` at `state`.
    fn predict_next_state(
        &self,
        state: RecoveryState,
        action: &ResponseAction,
        ctx: &QueryContext<'_>,
        stream: &mut RandomStream,
    ) -> Result<RecoveryState, ModelError>;

    /// Exact model kernels, when the backend has them.
    fn exact_kernels(&self) -> Option<ExactKernels<'_>> {
        None
    }

    /// Row of [`ExactKernels::kernels`] that `action` maps to. `None` means
    /// the action has no known effect and is treated as the identity.
    fn kernel_index(&self, _action: &ResponseAction) -> Option<usize> {
        None
    }

    fn exposes_exact_kernels(&self) -> bool {
        self.exact_kernels().is_some()
    }
}

impl<T: ResponseModel + ?Sized> ResponseModel for std::sync::Arc<T> {
    fn propose_actions(
        &self,
        state: RecoveryState,
        ctx: &QueryContext<'_>,
        n: usize,
        stream: &mut RandomStream,
    ) -> Result<Vec<ResponseAction>, ModelError> {
        (**self).propose_actions(state, ctx, n, stream)
    }

    fn predict_next_state(
        &self,
        state: RecoveryState,
        action: &ResponseAction,
        ctx: &QueryContext<'_>,
        stream: &mut RandomStream,
    ) -> Result<RecoveryState, ModelError> {
        (**self).predict_next_state(state, action, ctx, stream)
    }

    fn exact_kernels(&self) -> Option<ExactKernels<'_>> {
        (**self).exact_kernels()
    }

    fn kernel_index(&self, action: &ResponseAction) -> Option<usize> {
        (**self).kernel_index(action)
    }
}
