//! Few-shot constraint extraction.
//!
//! A whole session goes to the model in one request: the exemplar block,
//! followed by the session's prompts. The reply is parsed back into one
//! [`Formalization`] per prompt.

mod exemplar;
mod parse;
mod request;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError};
use crate::logic::{AtomSet, Label, Refinement};
use crate::session::PromptSession;

pub use exemplar::{ExemplarError, FewShotExemplar};
pub use parse::{parse_response, ParseError, ParsedResponse};
pub use request::{build_reask, build_request, split_request_prompts, ModelSettings, REASK_TEXT, SYSTEM_TEXT};

/// The constraints assigned to one prompt.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Formalization {
    pub prompt_index: usize,
    pub atoms: AtomSet,
    /// `(old, new)`: `old` in the previous prompt evolved into `new` here.
    pub refinements: BTreeSet<Refinement>,
    /// Atoms declared unchanged since the previous prompt.
    pub continuations: BTreeSet<Label>,
    /// The reply lines this formalization was parsed from.
    pub raw: String,
}

/// A session with one formalization per prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormalizedSession {
    pub session: PromptSession,
    pub formalizations: Vec<Formalization>,
    pub descriptions: BTreeMap<Label, String>,
}

impl FormalizedSession {
    /// Pairs each prompt with its formalization.
    pub fn steps(&self) -> impl Iterator<Item = (&crate::session::PromptRecord, &Formalization)> + '_ {
        self.session.prompts.iter().zip(&self.formalizations)
    }

    pub fn atom_counts(&self) -> Vec<usize> {
        self.formalizations.iter().map(|f| f.atoms.len()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormalizeOutcome {
    Formalized(FormalizedSession),
    /// The reply could not be parsed even after one re-ask.
    Unformalized { session_id: String, reason: String },
}

impl FormalizeOutcome {
    pub fn formalized(self) -> Option<FormalizedSession> {
        match self {
            FormalizeOutcome::Formalized(fs) => Some(fs),
            FormalizeOutcome::Unformalized { .. } => None,
        }
    }
}

/// Extracts constraints for every prompt of `session`.
///
/// Backend failures propagate. A reply that does not parse triggers one
/// re-ask with a stricter instruction; if that also fails the session is
/// reported as [`FormalizeOutcome::Unformalized`].
pub fn formalize_session(
    session: &PromptSession,
    exemplar: &FewShotExemplar,
    settings: &ModelSettings,
    backend: &dyn Backend,
) -> Result<FormalizeOutcome, BackendError> {
    if session.prompts.is_empty() {
        return Ok(FormalizeOutcome::Unformalized {
            session_id: session.session_id.clone(),
            reason: "session has no prompts".to_string(),
        });
    }
    let request = build_request(exemplar, session, settings);
    let first = backend.complete(&request)?;
    let first_error = match attach(session, &first.text) {
        Ok(fs) => return Ok(FormalizeOutcome::Formalized(fs)),
        Err(e) => e,
    };
    log::info!("session {}: reply did not parse ({first_error}); re-asking", session.session_id);

    let second = backend.complete(&build_reask(&request))?;
    match attach(session, &second.text) {
        Ok(fs) => Ok(FormalizeOutcome::Formalized(fs)),
        Err(e) => {
            log::warn!("session {} excluded: {e}", session.session_id);
            Ok(FormalizeOutcome::Unformalized { session_id: session.session_id.clone(), reason: e.to_string() })
        }
    }
}

fn attach(session: &PromptSession, reply: &str) -> Result<FormalizedSession, ParseError> {
    let parsed = parse_response(reply, session.prompts.len())?;
    Ok(FormalizedSession { session: session.clone(), formalizations: parsed.formalizations, descriptions: parsed.descriptions })
}

/// One line of the formalized-session JSONL output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormalizedRecord {
    pub session_id: String,
    pub index: usize,
    pub atoms: Vec<Label>,
    pub descriptions: BTreeMap<Label, String>,
    pub refinements: Vec<(Label, Label)>,
    pub continuations: Vec<Label>,
    pub raw: String,
}

impl FormalizedRecord {
    pub fn from_step(fs: &FormalizedSession, f: &Formalization) -> Self {
        FormalizedRecord {
            session_id: fs.session.session_id.clone(),
            index: f.prompt_index,
            atoms: f.atoms.iter().copied().collect(),
            descriptions: f
                .atoms
                .iter()
                .filter_map(|l| fs.descriptions.get(l).map(|d| (*l, d.clone())))
                .collect(),
            refinements: f.refinements.iter().copied().collect(),
            continuations: f.continuations.iter().copied().collect(),
            raw: f.raw.clone(),
        }
    }
}

pub fn write_formalized_jsonl(mut out: impl Write, sessions: &[FormalizedSession]) -> std::io::Result<()> {
    for fs in sessions {
        for f in &fs.formalizations {
            serde_json::to_writer(&mut out, &FormalizedRecord::from_step(fs, f))?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum FormalizedLoadError {
    #[error("read error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: session {session_id} is not in the session corpus")]
    UnknownSession { line: usize, session_id: String },
    #[error("session {session_id}: formalizations cover {found} of {expected} prompts")]
    Incomplete { session_id: String, expected: usize, found: usize },
    #[error("session {session_id}: {label} has conflicting descriptions")]
    Conflict { session_id: String, label: Label },
}

type Grouped = (BTreeMap<usize, Formalization>, BTreeMap<Label, String>);

/// Joins formalized JSONL records back onto their sessions.
///
/// Sessions without records (unformalized ones) are skipped; the result keeps
/// the order of `sessions`.
pub fn read_formalized(
    reader: impl BufRead,
    sessions: &[PromptSession],
) -> Result<Vec<FormalizedSession>, FormalizedLoadError> {
    let known: HashMap<&str, &PromptSession> = sessions.iter().map(|s| (s.session_id.as_str(), s)).collect();
    let mut grouped: HashMap<String, Grouped> = HashMap::new();

    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FormalizedRecord =
            serde_json::from_str(&line).map_err(|source| FormalizedLoadError::Malformed { line: i + 1, source })?;
        if !known.contains_key(rec.session_id.as_str()) {
            return Err(FormalizedLoadError::UnknownSession { line: i + 1, session_id: rec.session_id });
        }
        let entry = grouped.entry(rec.session_id.clone()).or_default();
        for (label, d) in rec.descriptions {
            match entry.1.get(&label) {
                Some(existing) if *existing != d => {
                    return Err(FormalizedLoadError::Conflict { session_id: rec.session_id, label })
                }
                _ => {
                    entry.1.insert(label, d);
                }
            }
        }
        entry.0.insert(
            rec.index,
            Formalization {
                prompt_index: rec.index,
                atoms: rec.atoms.into_iter().collect(),
                refinements: rec.refinements.into_iter().collect(),
                continuations: rec.continuations.into_iter().collect(),
                raw: rec.raw,
            },
        );
    }

    let mut out = Vec::new();
    for session in sessions {
        let Some((steps, descriptions)) = grouped.remove(&session.session_id) else {
            continue;
        };
        let complete = steps.len() == session.prompts.len() && steps.keys().copied().eq(1..=session.prompts.len());
        if !complete {
            return Err(FormalizedLoadError::Incomplete {
                session_id: session.session_id.clone(),
                expected: session.prompts.len(),
                found: steps.len(),
            });
        }
        out.push(FormalizedSession { session: session.clone(), formalizations: steps.into_values().collect(), descriptions });
    }
    Ok(out)
}
