//! How constraint sets change from one prompt to the next.
//!
//! Each consecutive pair falls into exactly one class, decided by a ladder
//! where the first matching rung wins:
//!
//! 1. the normalized texts are equal: [`TransitionClass::Resubmission`];
//! 2. the atom sets are equal: [`TransitionClass::Rewording`];
//! 3. the new set strictly contains the old one: [`TransitionClass::AddingConstraints`];
//! 4. anything else: [`TransitionClass::ModifyingConstraints`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formalizer::{Formalization, FormalizedSession};
use crate::logic::{diff_size, is_superset, raw_diff, DiffMode, Strictness};
use crate::session::{normalize_text, Outcome, PromptRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TransitionClass {
    AddingConstraints,
    ModifyingConstraints,
    Rewording,
    Resubmission,
}

impl TransitionClass {
    pub const ALL: [TransitionClass; 4] = [
        TransitionClass::AddingConstraints,
        TransitionClass::ModifyingConstraints,
        TransitionClass::Rewording,
        TransitionClass::Resubmission,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransitionClass::AddingConstraints => "adding_constraints",
            TransitionClass::ModifyingConstraints => "modifying_constraints",
            TransitionClass::Rewording => "rewording",
            TransitionClass::Resubmission => "resubmission",
        }
    }
}

impl fmt::Display for TransitionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransitionRecord {
    pub session_id: String,
    pub task_id: String,
    pub from_index: usize,
    pub to_index: usize,
    pub class: TransitionClass,
    pub diff_size_linked: usize,
    pub diff_size_raw: usize,
}

impl TransitionRecord {
    pub fn diff_size(&self, mode: DiffMode) -> usize {
        match mode {
            DiffMode::Raw => self.diff_size_raw,
            DiffMode::Linked => self.diff_size_linked,
        }
    }
}

/// Classifies the step from `prev` to `curr`.
///
/// The linked diff uses the refinements declared on `curr` that connect an
/// atom of `prev` to an atom of `curr`.
pub fn classify_transition(
    session_id: &str,
    task_id: &str,
    prev: (&PromptRecord, &Formalization),
    curr: (&PromptRecord, &Formalization),
) -> TransitionRecord {
    let (prev_prompt, prev_f) = prev;
    let (curr_prompt, curr_f) = curr;
    debug_assert_eq!(curr_prompt.index, prev_prompt.index + 1);

    let class = if normalize_text(&prev_prompt.text) == normalize_text(&curr_prompt.text) {
        TransitionClass::Resubmission
    } else if prev_f.atoms == curr_f.atoms {
        TransitionClass::Rewording
    } else if is_superset(&prev_f.atoms, &curr_f.atoms, Strictness::Strict) {
        TransitionClass::AddingConstraints
    } else {
        TransitionClass::ModifyingConstraints
    };

    TransitionRecord {
        session_id: session_id.to_string(),
        task_id: task_id.to_string(),
        from_index: prev_prompt.index,
        to_index: curr_prompt.index,
        class,
        diff_size_linked: diff_size(&prev_f.atoms, &curr_f.atoms, &curr_f.refinements, DiffMode::Linked),
        diff_size_raw: raw_diff(&prev_f.atoms, &curr_f.atoms).size,
    }
}

/// One record per consecutive prompt pair, in order.
pub fn classify_session(fs: &FormalizedSession) -> Vec<TransitionRecord> {
    let steps: Vec<_> = fs.steps().collect();
    steps
        .windows(2)
        .map(|w| classify_transition(&fs.session.session_id, &fs.session.task_id, w[0], w[1]))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ReductionRelation {
    Identical,
    Fewer,
    More,
    /// Same number of atoms, different atoms.
    Ambiguous,
}

impl ReductionRelation {
    pub fn name(self) -> &'static str {
        match self {
            ReductionRelation::Identical => "identical",
            ReductionRelation::Fewer => "fewer",
            ReductionRelation::More => "more",
            ReductionRelation::Ambiguous => "ambiguous",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReductionFinding {
    pub session_id: String,
    pub original_index: usize,
    pub reduced_index: usize,
    pub relation: ReductionRelation,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("session {session_id}: {flags} success flags for {prompts} prompts")]
pub struct FlagLengthMismatch {
    pub session_id: String,
    pub flags: usize,
    pub prompts: usize,
}

/// Compares the first successful prompt with every later, strictly shorter
/// successful prompt.
pub fn analyze_reduction(fs: &FormalizedSession, success_flags: &[bool]) -> Result<Vec<ReductionFinding>, FlagLengthMismatch> {
    if success_flags.len() != fs.session.prompts.len() {
        return Err(FlagLengthMismatch {
            session_id: fs.session.session_id.clone(),
            flags: success_flags.len(),
            prompts: fs.session.prompts.len(),
        });
    }
    let Some(first) = success_flags.iter().position(|&s| s) else {
        return Ok(Vec::new());
    };
    let original_prompt = &fs.session.prompts[first];
    let original = &fs.formalizations[first].atoms;

    let findings = (first + 1..fs.session.prompts.len())
        .filter(|&i| success_flags[i] && fs.session.prompts[i].word_count < original_prompt.word_count)
        .map(|i| {
            let reduced = &fs.formalizations[i].atoms;
            let relation = if reduced == original {
                ReductionRelation::Identical
            } else if reduced.len() < original.len() {
                ReductionRelation::Fewer
            } else if reduced.len() > original.len() {
                ReductionRelation::More
            } else {
                ReductionRelation::Ambiguous
            };
            ReductionFinding {
                session_id: fs.session.session_id.clone(),
                original_index: original_prompt.index,
                reduced_index: fs.session.prompts[i].index,
                relation,
            }
        })
        .collect();
    Ok(findings)
}

/// Relation counts for a reduction table.
pub fn tally_reductions(findings: &[ReductionFinding]) -> BTreeMap<ReductionRelation, usize> {
    let mut counts: BTreeMap<ReductionRelation, usize> = [
        ReductionRelation::Identical,
        ReductionRelation::Fewer,
        ReductionRelation::More,
        ReductionRelation::Ambiguous,
    ]
    .into_iter()
    .map(|r| (r, 0))
    .collect();
    for f in findings {
        *counts.entry(f.relation).or_default() += 1;
    }
    counts
}

/// Which sessions a per-task report includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cohort {
    All,
    /// Users with a successful session in every task of the corpus.
    #[default]
    FinishedAll,
}

impl std::str::FromStr for Cohort {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Cohort::All),
            "finished-all" => Ok(Cohort::FinishedAll),
            other => Err(format!("unknown cohort {other:?} (expected all or finished-all)")),
        }
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cohort::All => "all",
            Cohort::FinishedAll => "finished-all",
        })
    }
}

/// Users that succeeded on every task present in `corpus`.
pub fn finished_all_users(corpus: &[FormalizedSession]) -> BTreeSet<String> {
    let tasks: BTreeSet<&str> = corpus.iter().map(|fs| fs.session.task_id.as_str()).collect();
    let mut solved: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for fs in corpus.iter().filter(|fs| fs.session.outcome == Outcome::Success) {
        solved.entry(&fs.session.user_id).or_default().insert(&fs.session.task_id);
    }
    solved
        .into_iter()
        .filter(|(_, t)| *t == tasks)
        .map(|(u, _)| u.to_string())
        .collect()
}

pub fn select_cohort(corpus: &[FormalizedSession], cohort: Cohort) -> Vec<&FormalizedSession> {
    match cohort {
        Cohort::All => corpus.iter().collect(),
        Cohort::FinishedAll => {
            let users = finished_all_users(corpus);
            corpus.iter().filter(|fs| users.contains(&fs.session.user_id)).collect()
        }
    }
}

/// Per-step class counts for one task: row `k` counts the transitions into
/// prompt `k` across sessions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Heatmap {
    pub task_id: String,
    pub rows: BTreeMap<usize, [usize; 4]>,
}

pub fn heatmap(task_id: &str, transitions: &[TransitionRecord]) -> Heatmap {
    let mut rows: BTreeMap<usize, [usize; 4]> = BTreeMap::new();
    for t in transitions.iter().filter(|t| t.task_id == task_id) {
        let col = TransitionClass::ALL.iter().position(|c| *c == t.class).expect("class is in ALL");
        rows.entry(t.to_index).or_default()[col] += 1;
    }
    Heatmap { task_id: task_id.to_string(), rows }
}
