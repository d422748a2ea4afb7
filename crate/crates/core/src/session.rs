//! Prompt sessions: the data model, JSONL ingestion, and text helpers.
//!
//! One JSONL record per prompt:
//!
//! ```text
//! {"session_id": "s1", "user_id": "u1", "task_id": "1", "index": 1, "text": "...", "outcome": "success"}
//! ```
//!
//! `outcome` is only required on the last record of a session. An optional
//! boolean `success` marks an individual prompt as having produced working
//! code; it feeds the prompt-reduction analysis.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Failure,
    Unknown,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Success => "success",
            Outcome::Failure => "failure",
            Outcome::Unknown => "unknown",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    /// 1-based position within the session.
    pub index: usize,
    /// Prompt text exactly as ingested.
    pub text: String,
    pub word_count: usize,
    /// Per-prompt success marker, when the log carries one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<bool>,
}

impl PromptRecord {
    pub fn new(index: usize, text: impl Into<String>) -> Self {
        let text = text.into();
        let word_count = count_words(&text);
        PromptRecord { index, text, word_count, success: None }
    }

    pub fn with_success(mut self, success: bool) -> Self {
        self.success = Some(success);
        self
    }

    pub fn normalized_text(&self) -> String {
        normalize_text(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSession {
    pub session_id: String,
    pub user_id: String,
    pub task_id: String,
    pub prompts: Vec<PromptRecord>,
    pub outcome: Outcome,
}

impl PromptSession {
    /// Builds a session from prompt texts, numbering them from 1.
    pub fn from_texts<S: Into<String>>(
        session_id: impl Into<String>,
        user_id: impl Into<String>,
        task_id: impl Into<String>,
        texts: impl IntoIterator<Item = S>,
        outcome: Outcome,
    ) -> Self {
        PromptSession {
            session_id: session_id.into(),
            user_id: user_id.into(),
            task_id: task_id.into(),
            prompts: texts
                .into_iter()
                .enumerate()
                .map(|(i, t)| PromptRecord::new(i + 1, t))
                .collect(),
            outcome,
        }
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    /// Per-prompt success flags.
    ///
    /// Explicit `success` markers win. Without any marker, a successful
    /// session counts its last prompt as the successful one.
    pub fn success_flags(&self) -> Vec<bool> {
        if self.prompts.iter().any(|p| p.success.is_some()) {
            return self.prompts.iter().map(|p| p.success.unwrap_or(false)).collect();
        }
        let last = self.prompts.len();
        self.prompts
            .iter()
            .map(|p| self.outcome == Outcome::Success && p.index == last)
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: field `{field}` is invalid: {reason}")]
    InvalidField { line: usize, field: &'static str, reason: String },
    #[error("line {line}: duplicate prompt index {index} in session {session_id}")]
    DuplicateIndex { line: usize, session_id: String, index: usize },
    #[error("line {line}: session {session_id} changes its {field} mid-session")]
    InconsistentSession { line: usize, session_id: String, field: &'static str },
    #[error("session {session_id}: prompt indices are not contiguous from 1 (missing {missing})")]
    NonContiguous { session_id: String, missing: usize },
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    session_id: Option<String>,
    user_id: Option<String>,
    task_id: Option<String>,
    index: Option<i64>,
    text: Option<String>,
    outcome: Option<String>,
    success: Option<bool>,
}

struct Pending {
    user_id: String,
    task_id: String,
    prompts: BTreeMap<usize, (usize, PromptRecord, Option<Outcome>)>,
}

/// Reads a session JSONL file.
///
/// Sessions come back ordered by `(task_id, session_id)`; prompts follow
/// their `index` field regardless of line order. Blank lines are skipped.
pub fn load_sessions(path: impl AsRef<Path>) -> Result<Vec<PromptSession>, LoadError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| LoadError::Io { path: path.display().to_string(), source })?;
    read_sessions(BufReader::new(file)).map_err(|e| match e {
        LoadError::Io { source, .. } => LoadError::Io { path: path.display().to_string(), source },
        other => other,
    })
}

/// Same as [`load_sessions`] over any buffered reader.
pub fn read_sessions(reader: impl BufRead) -> Result<Vec<PromptSession>, LoadError> {
    let mut pending: HashMap<String, Pending> = HashMap::new();

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| LoadError::Io { path: String::new(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|source| LoadError::Malformed { line: lineno, source })?;

        let missing = |field| LoadError::MissingField { line: lineno, field };
        let session_id = raw.session_id.ok_or_else(|| missing("session_id"))?;
        let user_id = raw.user_id.ok_or_else(|| missing("user_id"))?;
        let task_id = raw.task_id.ok_or_else(|| missing("task_id"))?;
        let index = raw.index.ok_or_else(|| missing("index"))?;
        let text = raw.text.ok_or_else(|| missing("text"))?;
        if index < 1 {
            return Err(LoadError::InvalidField {
                line: lineno,
                field: "index",
                reason: format!("{index} is not a positive integer"),
            });
        }
        let index = index as usize;
        let outcome = raw
            .outcome
            .map(|o| parse_outcome(&o).ok_or(LoadError::InvalidField { line: lineno, field: "outcome", reason: o }))
            .transpose()?;

        let entry = pending.entry(session_id.clone()).or_insert_with(|| Pending {
            user_id: user_id.clone(),
            task_id: task_id.clone(),
            prompts: BTreeMap::new(),
        });
        if entry.user_id != user_id {
            return Err(LoadError::InconsistentSession { line: lineno, session_id, field: "user_id" });
        }
        if entry.task_id != task_id {
            return Err(LoadError::InconsistentSession { line: lineno, session_id, field: "task_id" });
        }
        if entry.prompts.contains_key(&index) {
            return Err(LoadError::DuplicateIndex { line: lineno, session_id, index });
        }
        let mut record = PromptRecord::new(index, text);
        record.success = raw.success;
        entry.prompts.insert(index, (lineno, record, outcome));
    }

    let mut sessions = Vec::with_capacity(pending.len());
    for (session_id, p) in pending {
        if let Some(missing) = (1..=p.prompts.len()).find(|i| !p.prompts.contains_key(i)) {
            return Err(LoadError::NonContiguous { session_id, missing });
        }
        let (last_line, _, last_outcome) = p.prompts.values().next_back().expect("non-empty by construction");
        let outcome = last_outcome.ok_or(LoadError::MissingField { line: *last_line, field: "outcome" })?;
        sessions.push(PromptSession {
            session_id,
            user_id: p.user_id,
            task_id: p.task_id,
            prompts: p.prompts.into_values().map(|(_, r, _)| r).collect(),
            outcome,
        });
    }
    sessions.sort_by(|a, b| (&a.task_id, &a.session_id).cmp(&(&b.task_id, &b.session_id)));
    Ok(sessions)
}

fn parse_outcome(s: &str) -> Option<Outcome> {
    match s {
        "success" => Some(Outcome::Success),
        "failure" => Some(Outcome::Failure),
        "unknown" => Some(Outcome::Unknown),
        _ => None,
    }
}

/// Strips surrounding whitespace and collapses internal whitespace runs to a
/// single space. Case and punctuation are left alone.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Number of maximal non-whitespace runs; `a_b_c` is one word.
pub fn count_words(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Distinct users per task, keyed by task id.
pub fn users_per_task(sessions: &[PromptSession]) -> BTreeMap<String, usize> {
    let mut users: BTreeMap<&str, std::collections::BTreeSet<&str>> = BTreeMap::new();
    for s in sessions {
        users.entry(&s.task_id).or_default().insert(&s.user_id);
    }
    users.into_iter().map(|(t, u)| (t.to_string(), u.len())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(s: &str) -> Result<Vec<PromptSession>, LoadError> {
        read_sessions(s.as_bytes())
    }

    #[test]
    fn one_session_three_prompts() {
        let input = r#"{"session_id":"s","user_id":"u","task_id":"1","index":1,"text":"a"}
{"session_id":"s","user_id":"u","task_id":"1","index":2,"text":"b c"}
{"session_id":"s","user_id":"u","task_id":"1","index":3,"text":"d","outcome":"failure"}
"#;
        let sessions = read(input).unwrap();
        assert_eq!(sessions.len(), 1);
        assert_eq!(sessions[0].prompts.len(), 3);
        assert_eq!(sessions[0].prompts[1].word_count, 2);
        assert_eq!(sessions[0].outcome, Outcome::Failure);
    }

    #[test]
    fn prompt_order_follows_index_field() {
        let input = r#"{"session_id":"s","user_id":"u","task_id":"1","index":2,"text":"second","outcome":"success"}
{"session_id":"s","user_id":"u","task_id":"1","index":1,"text":"first"}"#;
        let s = &read(input).unwrap()[0];
        assert_eq!(s.prompts[0].text, "first");
        assert_eq!(s.prompts[1].text, "second");
        assert_eq!(s.outcome, Outcome::Success);
    }

    #[test]
    fn ordering_by_task_then_session() {
        let input = r#"{"session_id":"b","user_id":"u","task_id":"2","index":1,"text":"x","outcome":"unknown"}
{"session_id":"z","user_id":"u","task_id":"1","index":1,"text":"x","outcome":"unknown"}
{"session_id":"a","user_id":"v","task_id":"2","index":1,"text":"x","outcome":"unknown"}"#;
        let ids: Vec<_> = read(input).unwrap().into_iter().map(|s| s.session_id).collect();
        assert_eq!(ids, ["z", "a", "b"]);
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        assert!(read("").unwrap().is_empty());
        assert!(read("\n  \n").unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let input = "{\"session_id\":\"s\",\"user_id\":\"u\",\"task_id\":\"1\",\"index\":1,\"text\":\"a\",\"outcome\":\"success\"}\n{not json";
        match read(input) {
            Err(LoadError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_index_rejected() {
        let input = r#"{"session_id":"s","user_id":"u","task_id":"1","index":1,"text":"a"}
{"session_id":"s","user_id":"u","task_id":"1","index":1,"text":"b","outcome":"success"}"#;
        assert!(matches!(read(input), Err(LoadError::DuplicateIndex { line: 2, index: 1, .. })));
    }

    #[test]
    fn missing_field_named() {
        let input = r#"{"session_id":"s","user_id":"u","index":1,"text":"a","outcome":"success"}"#;
        assert!(matches!(read(input), Err(LoadError::MissingField { line: 1, field: "task_id" })));
        let input = r#"{"session_id":"s","user_id":"u","task_id":"1","index":1,"text":"a"}"#;
        assert!(matches!(read(input), Err(LoadError::MissingField { line: 1, field: "outcome" })));
    }

    #[test]
    fn gaps_and_bad_values_rejected() {
        let input = r#"{"session_id":"s","user_id":"u","task_id":"1","index":2,"text":"a","outcome":"success"}"#;
        assert!(matches!(read(input), Err(LoadError::NonContiguous { missing: 1, .. })));
        let input = r#"{"session_id":"s","user_id":"u","task_id":"1","index":0,"text":"a","outcome":"success"}"#;
        assert!(matches!(read(input), Err(LoadError::InvalidField { field: "index", .. })));
        let input = r#"{"session_id":"s","user_id":"u","task_id":"1","index":1,"text":"a","outcome":"maybe"}"#;
        assert!(matches!(read(input), Err(LoadError::InvalidField { field: "outcome", .. })));
        let input = r#"{"session_id":"s","user_id":"u","task_id":"1","index":1,"text":"a"}
{"session_id":"s","user_id":"w","task_id":"1","index":2,"text":"a","outcome":"success"}"#;
        assert!(matches!(read(input), Err(LoadError::InconsistentSession { field: "user_id", .. })));
    }

    #[test]
    fn text_preserved_byte_exactly() {
        let input = r#"{"session_id":"s","user_id":"u","task_id":"1","index":1,"text":"  spaced\tout  ","outcome":"success"}"#;
        let s = &read(input).unwrap()[0];
        assert_eq!(s.prompts[0].text, "  spaced\tout  ");
        assert_eq!(s.prompts[0].normalized_text(), "spaced out");
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_text("  write  me a function "), "write me a function");
        assert_eq!(normalize_text("it is stupid"), "it is stupid");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("Keep, CASE!\n\n and\u{3000}punct."), "Keep, CASE! and punct.");
    }

    #[test]
    fn word_count_examples() {
        assert_eq!(count_words("count the zeros"), 3);
        assert_eq!(count_words("write_me_a_python_function_counter"), 1);
        assert_eq!(count_words(""), 0);
        assert_eq!(count_words("   "), 0);
    }

    #[test]
    fn success_flags_default_to_last_prompt() {
        let s = PromptSession::from_texts("s", "u", "1", ["a", "b"], Outcome::Success);
        assert_eq!(s.success_flags(), [false, true]);
        let s = PromptSession::from_texts("s", "u", "1", ["a", "b"], Outcome::Failure);
        assert_eq!(s.success_flags(), [false, false]);
        let mut s = PromptSession::from_texts("s", "u", "1", ["a", "b", "c"], Outcome::Success);
        s.prompts[1].success = Some(true);
        assert_eq!(s.success_flags(), [false, true, false]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalize_idempotent_and_word_preserving(s in "[ a-zA-Z_\\t\\n\u{a0}\u{2003}.,]{0,40}") {
                let once = normalize_text(&s);
                prop_assert_eq!(normalize_text(&once), once.clone());
                prop_assert_eq!(count_words(&once), count_words(&s));
            }
        }
    }
}
