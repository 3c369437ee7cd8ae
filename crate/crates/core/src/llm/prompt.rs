use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::client::ChatMessage;
use super::LlmError;
use crate::domain::{Incident, RecoveryState, ResponseAction, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskInstruction {
    GenerateAction,
    PredictState,
}

const SYSTEM_PREAMBLE: &str = "You are an expert incident responder. You track recovery progress as six \
stages: containment, assessment, preservation, eviction, hardening and restoration. A stage is true once \
the response actions taken so far have completed it.";

const GENERATE_INSTRUCTION: &str = "Propose the single next response action that brings the recovery \
closest to completion. Reply with the action only.";

const PREDICT_INSTRUCTION: &str = "Predict the recovery state after the action above is executed. Reply \
with only a JSON object with the boolean keys \"containment\", \"assessment\", \"preservation\", \
\"eviction\", \"hardening\" and \"restoration\".";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_preamble: String,
    pub incident_block: String,
    pub state_block: String,
    pub history_block: String,
    pub task_instruction: TaskInstruction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_action: Option<String>,
}

impl PromptBundle {
    pub fn user_message(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.incident_block);
        out.push_str("\n\nCurrent recovery state: ");
        out.push_str(&self.state_block);
        out.push_str("\n\n");
        out.push_str(&self.history_block);
        if let Some(action) = &self.candidate_action {
            out.push_str("\n\nAction to execute:\n");
            out.push_str(action);
        }
        out.push_str("\n\n");
        out.push_str(match self.task_instruction {
            TaskInstruction::GenerateAction => GENERATE_INSTRUCTION,
            TaskInstruction::PredictState => PREDICT_INSTRUCTION,
        });
        out
    }

    pub fn messages(&self) -> Vec<ChatMessage> {
        vec![
            ChatMessage::new("system", self.system_preamble.clone()),
            ChatMessage::new("user", self.user_message()),
        ]
    }
}

fn incident_block(incident: &Incident) -> String {
    let mut out = format!("System description:\n{}\n\nLogs:\n", incident.system_description.trim());
    for line in &incident.logs {
        out.push_str(line);
        out.push('\n');
    }
    if let Some(summary) = &incident.summary {
        out.push_str("\nIncident summary:\n");
        out.push_str(summary.trim());
        out.push('\n');
    }
    if !incident.enrichment.is_empty() {
        out.push_str("\nThreat intelligence:\n");
        for e in &incident.enrichment {
            out.push_str(&format!("- {} {}: {}\n", e.ioc.kind, e.ioc.value, e.content.trim()));
        }
    }
    out.trim_end().to_string()
}

fn history_block(history: &[ResponseAction]) -> String {
    if history.is_empty() {
        return "Actions taken so far: none.".into();
    }
    let mut out = String::from("Actions taken so far:");
    for (i, a) in history.iter().enumerate() {
        out.push_str(&format!("\n{}. {}", i + 1, a.text.trim()));
    }
    out
}

/// Deterministic prompt for one of the two instruction kinds.
/// `candidate` is required for state prediction and ignored otherwise.
pub fn build_prompt(
    task: TaskInstruction,
    incident: &Incident,
    state: RecoveryState,
    history: &[ResponseAction],
    candidate: Option<&ResponseAction>,
) -> PromptBundle {
    PromptBundle {
        system_preamble: SYSTEM_PREAMBLE.into(),
        incident_block: incident_block(incident),
        state_block: state.to_canonical_json(),
        history_block: history_block(history),
        task_instruction: task,
        candidate_action: match task {
            TaskInstruction::PredictState => candidate.map(|a| a.text.clone()),
            TaskInstruction::GenerateAction => None,
        },
    }
}

/// First JSON object in `reply` that carries all six stage keys as booleans.
pub fn parse_state_reply(reply: &str) -> Result<RecoveryState, LlmError> {
    for (start, _) in reply.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&reply[start..]).into_iter::<Value>();
        let Some(Ok(Value::Object(map))) = stream.next() else {
            continue;
        };
        let flags: Option<Vec<bool>> = Stage::ALL
            .iter()
            .map(|s| map.get(s.name()).and_then(Value::as_bool))
            .collect();
        if let Some(flags) = flags {
            let state = Stage::ALL
                .iter()
                .zip(flags)
                .fold(RecoveryState::INITIAL, |st, (s, v)| st.with(*s, v));
            return Ok(state);
        }
    }
    Err(LlmError::Parse)
}

/// Reply text with fenced code blocks and `<think>` sections removed.
pub fn clean_action_text(reply: &str) -> Option<String> {
    static FENCES: OnceLock<[Regex; 2]> = OnceLock::new();
    let [fence, think] = FENCES.get_or_init(|| {
        [
            Regex::new(r"(?s)```.*?(```|$)").unwrap(),
            Regex::new(r"(?is)<think>.*?(</think>|$)").unwrap(),
        ]
    });
    let without_think = think.replace_all(reply, "");
    let cleaned = fence.replace_all(&without_think, "");
    let text = cleaned.trim();
    (!text.is_empty()).then(|| text.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn incident() -> Incident {
        Incident {
            id: "ctu".into(),
            system_description: "Two subnetworks behind one switch.".into(),
            logs: vec!["[**] ET TROJAN alert 147.32.84.165 -> 222.88.205.195:443".into()],
            summary: None,
            iocs: vec![],
            enrichment: vec![],
            ground_truth: None,
        }
    }

    #[test]
    fn generate_prompt_embeds_initial_state_once() {
        let p = build_prompt(TaskInstruction::GenerateAction, &incident(), RecoveryState::INITIAL, &[], None);
        let user = p.user_message();
        let json = RecoveryState::INITIAL.to_canonical_json();
        assert_eq!(user.matches(&json).count(), 1);
        assert!(user.contains("\"containment\":false"));
    }

    #[test]
    fn predict_prompt_contains_action_verbatim() {
        let a = ResponseAction::new("Disconnect 147.32.84.165 and block 222.88.205.195 at the switch").unwrap();
        let p = build_prompt(TaskInstruction::PredictState, &incident(), RecoveryState::INITIAL, &[], Some(&a));
        assert!(p.user_message().contains(&a.text));
        assert!(p.user_message().contains("JSON object"));
    }

    #[test]
    fn prompts_are_deterministic() {
        let h = vec![ResponseAction::new("isolate").unwrap()];
        let s = RecoveryState::from_index(5).unwrap();
        let a = build_prompt(TaskInstruction::GenerateAction, &incident(), s, &h, None);
        let b = build_prompt(TaskInstruction::GenerateAction, &incident(), s, &h, None);
        assert_eq!(a.user_message().as_bytes(), b.user_message().as_bytes());
        assert_eq!(a, b);
    }

    #[test]
    fn parse_exact_object() {
        let reply = r#"{"containment": true, "assessment": true, "preservation": true, "eviction": true, "hardening": true, "restoration": true}"#;
        assert_eq!(parse_state_reply(reply).unwrap(), RecoveryState::TERMINAL);
    }

    #[test]
    fn parse_after_reasoning() {
        // shape of a reply that thinks out loud before answering
        let reply = "The server was isolated, so containment holds {tentatively}. Assessment is also done.\n\
            Final answer:\n```json\n{\"containment\": true, \"assessment\": true, \"preservation\": false,\n \
            \"eviction\": false, \"hardening\": false, \"restoration\": false}\n```";
        let s = parse_state_reply(reply).unwrap();
        assert_eq!(s.index(), 0b11);
    }

    #[test]
    fn parse_rejects_missing_key() {
        let reply = r#"{"containment": true, "assessment": true, "preservation": true, "eviction": true, "hardening": true}"#;
        assert_eq!(parse_state_reply(reply), Err(LlmError::Parse));
        assert_eq!(parse_state_reply("no json at all"), Err(LlmError::Parse));
    }

    #[test]
    fn parse_inverts_canonical_encoding() {
        for s in RecoveryState::all() {
            assert_eq!(parse_state_reply(&s.to_canonical_json()).unwrap(), s);
        }
    }

    #[test]
    fn action_cleaning() {
        let reply = "<think>the host is beaconing</think>\nIsolate host 147.32.84.165.\n```\nreasoning\n```";
        assert_eq!(clean_action_text(reply).as_deref(), Some("Isolate host 147.32.84.165."));
        assert_eq!(clean_action_text("```only code```"), None);
    }
}
