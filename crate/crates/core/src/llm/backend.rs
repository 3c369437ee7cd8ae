use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::client::{ChatRequest, ChatTransport};
use super::prompt::{build_prompt, clean_action_text, parse_state_reply, PromptBundle, TaskInstruction};
use super::{LlmConfig, LlmError};
use crate::domain::{RecoveryState, ResponseAction};
use crate::model::{ModelError, QueryContext, ResponseModel};
use crate::stream::RandomStream;

impl From<LlmError> for ModelError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::Configuration(m) => ModelError::Configuration(m),
            LlmError::Parse => ModelError::Prediction(e.to_string()),
            other => ModelError::Transport(other.to_string()),
        }
    }
}

/// Response model backed by a chat-completions endpoint.
///
/// Sampling happens server side at the configured temperature, so the
/// random stream passed by the planner is not consumed; determinism comes
/// from replaying recorded exchanges.
pub struct LlmResponseModel {
    transport: Arc<dyn ChatTransport>,
    model_name: String,
    temperature: f64,
    max_retries: u32,
    unparsed_predictions: AtomicUsize,
}

impl LlmResponseModel {
    pub fn new(transport: Arc<dyn ChatTransport>, config: &LlmConfig) -> Self {
        LlmResponseModel {
            transport,
            model_name: config.model_name.clone(),
            temperature: config.temperature,
            max_retries: config.max_retries,
            unparsed_predictions: AtomicUsize::new(0),
        }
    }

    /// Predictions that fell back to "no change" because no reply parsed.
    pub fn unparsed_predictions(&self) -> usize {
        self.unparsed_predictions.load(Ordering::Relaxed)
    }

    fn request(&self, prompt: &PromptBundle) -> ChatRequest {
        ChatRequest {
            model: self.model_name.clone(),
            messages: prompt.messages(),
            temperature: self.temperature,
        }
    }
}

impl ResponseModel for LlmResponseModel {
    fn propose_actions(
        &self,
        state: RecoveryState,
        ctx: &QueryContext<'_>,
        n: usize,
        _stream: &mut RandomStream,
    ) -> Result<Vec<ResponseAction>, ModelError> {
        if state.is_terminal() {
            return Err(ModelError::TerminalState);
        }
        let prompt = build_prompt(TaskInstruction::GenerateAction, ctx.incident, state, ctx.history, None);
        let request = self.request(&prompt);
        let mut actions = Vec::with_capacity(n);
        while actions.len() < n {
            let mut text = None;
            for _ in 0..=self.max_retries {
                if let Some(t) = clean_action_text(&self.transport.complete(&request)?) {
                    text = Some(t);
                    break;
                }
            }
            let text = text.ok_or_else(|| ModelError::Prediction("model returned no action text".into()))?;
            actions.push(ResponseAction::new(text).expect("cleaned text is non-empty"));
        }
        Ok(actions)
    }

    fn predict_next_state(
        &self,
        state: RecoveryState,
        action: &ResponseAction,
        ctx: &QueryContext<'_>,
        _stream: &mut RandomStream,
    ) -> Result<RecoveryState, ModelError> {
        if state.is_terminal() {
            return Err(ModelError::TerminalState);
        }
        let prompt = build_prompt(TaskInstruction::PredictState, ctx.incident, state, ctx.history, Some(action));
        let request = self.request(&prompt);
        for _ in 0..=self.max_retries {
            let reply = self.transport.complete(&request)?;
            if let Ok(next) = parse_state_reply(&reply) {
                return Ok(next);
            }
        }
        self.unparsed_predictions.fetch_add(1, Ordering::Relaxed);
        tracing::warn!(action = %action.text, "no parsable state prediction; assuming no change");
        Ok(state)
    }
}
