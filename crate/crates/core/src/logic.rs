//! Constraint-set algebra.
//!
//! A prompt's formalization is a conjunction of independent atoms, so the
//! algebra reduces to finite-set operations over constraint labels. The diff
//! comes in two flavours: the plain symmetric difference, and a
//! refinement-linked variant in which an atom that "evolved" into another one
//! counts as a single change instead of a removal plus an addition.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Constraint label of the form `C<k>`, `k >= 1`.
///
/// Labels order numerically, so `C2 < C10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Label(u32);

impl Label {
    pub fn new(k: u32) -> Option<Self> {
        (k >= 1).then_some(Label(k))
    }

    pub fn number(self) -> u32 {
        self.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid constraint label {0:?}: expected C<k> with k a positive integer without leading zeros")]
pub struct LabelParseError(pub String);

impl FromStr for Label {
    type Err = LabelParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || LabelParseError(s.to_string());
        let digits = s.strip_prefix('C').ok_or_else(err)?;
        if digits.is_empty() || digits.starts_with('0') || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let k: u32 = digits.parse().map_err(|_| err())?;
        Label::new(k).ok_or_else(err)
    }
}

impl TryFrom<String> for Label {
    type Error = LabelParseError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Label> for String {
    fn from(label: Label) -> Self {
        label.to_string()
    }
}

/// A refinement link: `old` in the earlier set evolved into `new` in the later one.
pub type Refinement = (Label, Label);

/// The constraint set of one prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AtomSet(BTreeSet<Label>);

impl AtomSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: Label) -> bool {
        self.0.insert(label)
    }

    pub fn contains(&self, label: &Label) -> bool {
        self.0.contains(label)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Label> + '_ {
        self.0.iter()
    }

    pub fn labels(&self) -> &BTreeSet<Label> {
        &self.0
    }

    pub fn is_subset(&self, other: &AtomSet) -> bool {
        self.0.is_subset(&other.0)
    }
}

impl FromIterator<Label> for AtomSet {
    fn from_iter<I: IntoIterator<Item = Label>>(iter: I) -> Self {
        AtomSet(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a AtomSet {
    type Item = &'a Label;
    type IntoIter = std::collections::btree_set::Iter<'a, Label>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl fmt::Display for AtomSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, label) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{label}")?;
        }
        write!(f, "}}")
    }
}

/// Which diff to report where only one number is wanted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffMode {
    /// Plain symmetric difference.
    Raw,
    /// Symmetric difference where each declared refinement counts once.
    #[default]
    Linked,
}

impl FromStr for DiffMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(DiffMode::Raw),
            "linked" => Ok(DiffMode::Linked),
            other => Err(format!("unknown diff mode {other:?} (expected raw or linked)")),
        }
    }
}

impl fmt::Display for DiffMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiffMode::Raw => "raw",
            DiffMode::Linked => "linked",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct DiffResult {
    pub added: BTreeSet<Label>,
    pub removed: BTreeSet<Label>,
    pub renamed: BTreeSet<Refinement>,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiffError {
    #[error("refinement {old}->{new}: {old} is not in the source set")]
    OldNotInSource { old: Label, new: Label },
    #[error("refinement {old}->{new}: {new} is not in the target set")]
    NewNotInTarget { old: Label, new: Label },
}

/// Diff `from` against `to`, linking the given refinements.
///
/// A refinement pair is counted as a rename only when both endpoints are
/// otherwise unmatched (`old` left the set and `new` entered it) and neither
/// endpoint was already consumed by an earlier pair. Pairs that do not qualify
/// are ignored; pairs whose endpoints are not in the respective sets are an
/// error.
pub fn diff(from: &AtomSet, to: &AtomSet, refinements: &BTreeSet<Refinement>) -> Result<DiffResult, DiffError> {
    for &(old, new) in refinements {
        if !from.contains(&old) {
            return Err(DiffError::OldNotInSource { old, new });
        }
        if !to.contains(&new) {
            return Err(DiffError::NewNotInTarget { old, new });
        }
    }

    let mut removed: BTreeSet<Label> = from.0.difference(&to.0).copied().collect();
    let mut added: BTreeSet<Label> = to.0.difference(&from.0).copied().collect();
    let mut renamed = BTreeSet::new();
    for &(old, new) in refinements {
        if removed.contains(&old) && added.contains(&new) {
            removed.remove(&old);
            added.remove(&new);
            renamed.insert((old, new));
        }
    }

    let size = added.len() + removed.len() + renamed.len();
    Ok(DiffResult { added, removed, renamed, size })
}

/// Refinement-free diff; this is the Hamming distance between the
/// characteristic vectors of the two sets.
pub fn raw_diff(from: &AtomSet, to: &AtomSet) -> DiffResult {
    diff(from, to, &BTreeSet::new()).expect("empty refinement set cannot violate preconditions")
}

/// Keeps only the refinement pairs that satisfy `diff`'s precondition.
pub fn applicable_refinements(
    from: &AtomSet,
    to: &AtomSet,
    refinements: &BTreeSet<Refinement>,
) -> BTreeSet<Refinement> {
    refinements
        .iter()
        .filter(|(old, new)| from.contains(old) && to.contains(new))
        .copied()
        .collect()
}

/// Diff size under `mode`, silently dropping refinements that do not apply.
pub fn diff_size(from: &AtomSet, to: &AtomSet, refinements: &BTreeSet<Refinement>, mode: DiffMode) -> usize {
    match mode {
        DiffMode::Raw => raw_diff(from, to).size,
        DiffMode::Linked => {
            let usable = applicable_refinements(from, to, refinements);
            diff(from, to, &usable).expect("filtered refinements satisfy preconditions").size
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    #[default]
    Strict,
    NonStrict,
}

/// True iff `sup` contains every atom of `sub` (and, when strict, at least one more).
pub fn is_superset(sub: &AtomSet, sup: &AtomSet, strictness: Strictness) -> bool {
    let contained = sub.is_subset(sup);
    match strictness {
        Strictness::Strict => contained && sup.len() > sub.len(),
        Strictness::NonStrict => contained,
    }
}
