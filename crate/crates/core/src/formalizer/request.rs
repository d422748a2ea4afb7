use crate::backend::{CompletionRequest, DEFAULT_MAX_OUTPUT_TOKENS, DEFAULT_MODEL};
use crate::session::PromptSession;

use super::exemplar::FewShotExemplar;

pub const SYSTEM_TEXT: &str = "You translate programming prompts into propositional-logic constraints. \
Follow the format of the example exactly: for every new prompt Pi, list each constraint on its own line as \
\"Ck: <description>\", then write \"We can formalize Pi as: Pi → (Ca ∧ ... ∧ Cz)\". Reuse a label when a \
constraint is unchanged and mint a new label when it changes. After each prompt after the first, add \
\"Logical Relationship Between Pi-1 and Pi\" with \"-- Semantic Refinement:\" and \"-- Core Continuation:\" lines.";

/// Appended to the system text when the first reply could not be parsed.
pub const REASK_TEXT: &str = "Your previous reply did not follow the required format. Reply again with exactly \
one \"We can formalize Pi as:\" line per prompt, in order, using only the conjunction ∧ over labels that each \
have their own \"Ck: <description>\" line.";

pub const PROMPTS_MARKER: &str = "prompts";
pub const TERMINAL_MARKER: &str = "formalization:";

/// Model selection and sampling settings shared by every request of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSettings {
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings { model_id: DEFAULT_MODEL.to_string(), temperature: 0.0, max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS }
    }
}

/// Builds the extraction request for a whole session: the exemplar block,
/// then `prompts`, one `Pk <text>` line per prompt, and the terminal
/// `formalization:` line.
pub fn build_request(exemplar: &FewShotExemplar, session: &PromptSession, settings: &ModelSettings) -> CompletionRequest {
    let mut user_text = exemplar.render();
    user_text.push_str(PROMPTS_MARKER);
    user_text.push('\n');
    for prompt in &session.prompts {
        user_text.push_str(&format!("P{} {}\n", prompt.index, prompt.text));
    }
    user_text.push_str(TERMINAL_MARKER);

    CompletionRequest {
        system_text: SYSTEM_TEXT.to_string(),
        user_text,
        model_id: settings.model_id.clone(),
        temperature: settings.temperature,
        max_output_tokens: settings.max_output_tokens,
    }
}

/// The follow-up request sent after an unparseable reply.
pub fn build_reask(request: &CompletionRequest) -> CompletionRequest {
    CompletionRequest { system_text: format!("{}\n\n{}", request.system_text, REASK_TEXT), ..request.clone() }
}

/// Recovers the prompt texts from a request built by [`build_request`].
///
/// Markers are line-anchored: the tail after the exemplar must start with a
/// `prompts` line and end with a `formalization:` line, and prompt `k` starts
/// at the first line beginning with `Pk ` after prompt `k-1`.
pub fn split_request_prompts(exemplar: &FewShotExemplar, user_text: &str) -> Option<Vec<String>> {
    let tail = user_text.strip_prefix(&exemplar.render())?;
    let body = tail.strip_prefix(PROMPTS_MARKER)?.strip_prefix('\n')?;
    let body = body.strip_suffix(TERMINAL_MARKER)?.strip_suffix('\n')?;

    let mut prompts: Vec<String> = Vec::new();
    for line in body.split('\n') {
        let tag = format!("P{} ", prompts.len() + 1);
        if let Some(text) = line.strip_prefix(&tag) {
            prompts.push(text.to_string());
        } else {
            let last = prompts.last_mut()?;
            last.push('\n');
            last.push_str(line);
        }
    }
    (!prompts.is_empty()).then_some(prompts)
}
