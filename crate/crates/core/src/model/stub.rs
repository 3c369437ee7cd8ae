use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use super::{ModelError, QueryContext, ResponseModel};
use crate::domain::{RecoveryState, ResponseAction};
use crate::stream::RandomStream;

/// Stand-in for a remote model with a fixed per-query latency. Every
/// prediction jumps straight to the terminal state, so a rollout costs
/// exactly one query.
#[derive(Debug)]
pub struct FixedLatencyModel {
    latency: Duration,
    queries: AtomicUsize,
}

impl FixedLatencyModel {
    pub fn new(latency: Duration) -> Self {
        FixedLatencyModel {
            latency,
            queries: AtomicUsize::new(0),
        }
    }

    pub fn query_count(&self) -> usize {
        self.queries.load(Ordering::Relaxed)
    }
}

impl ResponseModel for FixedLatencyModel {
    fn propose_actions(
        &self,
        state: RecoveryState,
        _ctx: &QueryContext<'_>,
        n: usize,
        _stream: &mut RandomStream,
    ) -> Result<Vec<ResponseAction>, ModelError> {
        if state.is_terminal() {
            return Err(ModelError::TerminalState);
        }
        Ok((0..n)
            .map(|i| ResponseAction::new(format!("stub action {i}")).expect("non-empty"))
            .collect())
    }

    fn predict_next_state(
        &self,
        state: RecoveryState,
        _action: &ResponseAction,
        _ctx: &QueryContext<'_>,
        _stream: &mut RandomStream,
    ) -> Result<RecoveryState, ModelError> {
        if state.is_terminal() {
            return Err(ModelError::TerminalState);
        }
        self.queries.fetch_add(1, Ordering::Relaxed);
        std::thread::sleep(self.latency);
        Ok(RecoveryState::TERMINAL)
    }
}
