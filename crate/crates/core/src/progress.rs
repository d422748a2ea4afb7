//! Distance from each student prompt to one or more known-good solution
//! prompts.
//!
//! Student prompts and solutions are formalized together in one request so
//! their labels share a namespace. Every student prompt is then compared
//! with every solution and the smallest distance is kept.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::backend::{Backend, BackendError};
use crate::formalizer::{formalize_session, FewShotExemplar, FormalizeOutcome, FormalizedSession, ModelSettings};
use crate::logic::{diff_size, AtomSet, DiffMode, Label, Refinement};
use crate::session::PromptSession;

pub const DEFAULT_CHURN_THRESHOLD: usize = 3;
/// Number of consecutive prompts with non-decreasing distance that counts
/// as stagnation.
pub const STAGNATION_WINDOW: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProgressTrace {
    pub session_id: String,
    pub diff_mode: DiffMode,
    /// Atoms of each solution, in the order the solutions were given.
    pub solution_atoms: Vec<AtomSet>,
    /// `(prompt_index, D)`, with D the minimum over solutions.
    pub distances: Vec<(usize, usize)>,
    /// `distances_per_solution[j][p]` is the distance of prompt `p + 1` to solution `j`.
    pub distances_per_solution: Vec<Vec<usize>>,
    /// `(prompt_index, diff size to the previous prompt)`, from prompt 2 on.
    pub churn: Vec<(usize, usize)>,
}

impl ProgressTrace {
    pub fn distance_values(&self) -> Vec<usize> {
        self.distances.iter().map(|&(_, d)| d).collect()
    }
}

#[derive(Debug, Error)]
pub enum ProgressError {
    #[error("at least one solution prompt is required")]
    NoSolutions,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("session {session_id}: joint extraction failed: {reason}")]
    Unformalized { session_id: String, reason: String },
    #[error("session {session_id}: solution S{solution} produced no constraints")]
    EmptySolution { session_id: String, solution: usize },
    #[error("joint session has {found} prompts, expected at least {expected}")]
    ShortJoint { expected: usize, found: usize },
}

/// Joint extraction result and the trace derived from it.
#[derive(Debug, Clone)]
pub struct ProgressReport {
    pub trace: ProgressTrace,
    /// Student prompts followed by the solutions, as formalized.
    pub joint: FormalizedSession,
    pub student_count: usize,
}

/// Formalizes the session's prompts followed by `solutions` in one call and
/// measures each student prompt against every solution.
pub fn measure_progress(
    session: &PromptSession,
    solutions: &[String],
    exemplar: &FewShotExemplar,
    settings: &ModelSettings,
    backend: &dyn Backend,
    mode: DiffMode,
) -> Result<ProgressReport, ProgressError> {
    if solutions.is_empty() {
        return Err(ProgressError::NoSolutions);
    }
    let joint = joint_session(session, solutions);
    let fs = match formalize_session(&joint, exemplar, settings, backend)? {
        FormalizeOutcome::Formalized(fs) => fs,
        FormalizeOutcome::Unformalized { reason, .. } => {
            return Err(ProgressError::Unformalized { session_id: session.session_id.clone(), reason })
        }
    };
    let trace = trace_from_joint(&fs, session.prompts.len(), mode)?;
    Ok(ProgressReport { trace, joint: fs, student_count: session.prompts.len() })
}

/// The session with the solution texts appended as extra prompts.
pub fn joint_session(session: &PromptSession, solutions: &[String]) -> PromptSession {
    let texts = session.prompts.iter().map(|p| p.text.clone()).chain(solutions.iter().cloned());
    PromptSession::from_texts(&session.session_id, &session.user_id, &session.task_id, texts, session.outcome)
}

/// Builds the trace from a joint formalization whose first `students`
/// entries are the student prompts and the rest are solutions.
///
/// In linked mode a solution's own declared refinements (reversed, since the
/// solution is the `from` side) are the only links used.
pub fn trace_from_joint(fs: &FormalizedSession, students: usize, mode: DiffMode) -> Result<ProgressTrace, ProgressError> {
    let total = fs.formalizations.len();
    if total <= students {
        return Err(ProgressError::ShortJoint { expected: students + 1, found: total });
    }
    let session_id = fs.session.session_id.clone();
    let (student_fs, solution_fs) = fs.formalizations.split_at(students);
    if let Some(j) = solution_fs.iter().position(|f| f.atoms.is_empty()) {
        return Err(ProgressError::EmptySolution { session_id, solution: j + 1 });
    }

    let distances_per_solution: Vec<Vec<usize>> = solution_fs
        .iter()
        .map(|s| {
            let links: BTreeSet<Refinement> = s.refinements.iter().map(|&(old, new)| (new, old)).collect();
            student_fs.iter().map(|p| diff_size(&s.atoms, &p.atoms, &links, mode)).collect()
        })
        .collect();

    let distances = (0..students)
        .map(|p| {
            let d = distances_per_solution.iter().map(|row| row[p]).min().expect("solutions non-empty");
            (student_fs[p].prompt_index, d)
        })
        .collect();

    let churn = student_fs
        .windows(2)
        .map(|w| (w[1].prompt_index, diff_size(&w[0].atoms, &w[1].atoms, &w[1].refinements, mode)))
        .collect();

    Ok(ProgressTrace {
        session_id,
        diff_mode: mode,
        solution_atoms: solution_fs.iter().map(|f| f.atoms.clone()).collect(),
        distances,
        distances_per_solution,
        churn,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trigger {
    /// The constraint set changed by at least the churn threshold.
    Churn { size: usize },
    /// Distance to the solution has not decreased over the last
    /// [`STAGNATION_WINDOW`] prompts. A heuristic, not taken from data.
    Stagnation,
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Trigger::Churn { size } => write!(f, "churn({size})"),
            Trigger::Stagnation => f.write_str("stagnation"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct InterventionPoint {
    pub prompt_index: usize,
    #[serde(flatten)]
    pub trigger: Trigger,
}

/// Prompt indices worth a tutor's attention, in index order.
///
/// A stagnation point is the last prompt of a window of
/// [`STAGNATION_WINDOW`] prompts whose distances never decrease, provided
/// the distance there is not already zero.
pub fn detect_intervention_points(trace: &ProgressTrace, churn_threshold: usize) -> Vec<InterventionPoint> {
    let mut points: Vec<InterventionPoint> = trace
        .churn
        .iter()
        .filter(|&&(_, size)| size >= churn_threshold)
        .map(|&(prompt_index, size)| InterventionPoint { prompt_index, trigger: Trigger::Churn { size } })
        .collect();

    points.extend(
        trace
            .distances
            .windows(STAGNATION_WINDOW)
            .filter(|w| w.windows(2).all(|p| p[0].1 <= p[1].1) && w[STAGNATION_WINDOW - 1].1 > 0)
            .map(|w| InterventionPoint { prompt_index: w[STAGNATION_WINDOW - 1].0, trigger: Trigger::Stagnation }),
    );
    points.sort();
    points
}

/// Writes the 0/1 label-membership matrix of a joint formalization. Rows are
/// `P1..Pn` for student prompts and `S1..` for solutions.
pub fn write_radar_csv<W: Write>(w: W, report: &ProgressReport) -> csv::Result<()> {
    let labels: BTreeSet<Label> = report.joint.formalizations.iter().flat_map(|f| f.atoms.iter().copied()).collect();
    let mut out = csv::Writer::from_writer(w);
    out.write_record(std::iter::once("prompt".to_string()).chain(labels.iter().map(Label::to_string)))?;
    for (i, f) in report.joint.formalizations.iter().enumerate() {
        let row = if i < report.student_count { format!("P{}", i + 1) } else { format!("S{}", i + 1 - report.student_count) };
        let cells = labels.iter().map(|l| if f.atoms.contains(l) { "1" } else { "0" }.to_string());
        out.write_record(std::iter::once(row).chain(cells))?;
    }
    out.flush()?;
    Ok(())
}
