//! Few-shot exemplar: two consecutive prompts, their formalizations, and the
//! logical relationship between them.
//!
//! The on-disk format is the rendered block itself:
//!
//! ```text
//! Prompt 1 (P1) <text>
//! Formalization of P1
//! C1: <description>
//! ...
//! We can formalize P1 as: P1 → (C1 ∧ ...)
//! Prompt 2 (P2) <text>
//! Formalization of P2
//! ...
//! We can formalize P2 as: P2 → (...)
//! Logical Relationship Between P1 and P2
//! -- Semantic Refinement: <...>
//! -- Core Continuation: <...>
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::parse::parse_response;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotExemplar {
    pub prompt_texts: [String; 2],
    /// Body of each "Formalization of Pk" section, ending with its
    /// "We can formalize Pk as:" line.
    pub formalization_texts: [String; 2],
    /// The "-- Semantic Refinement:" and "-- Core Continuation:" lines.
    pub relationship_text: String,
}

#[derive(Debug, Error)]
pub enum ExemplarError {
    #[error("cannot read exemplar {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("exemplar is missing the `{0}` marker")]
    MissingMarker(String),
    #[error("exemplar formalization for P{0} lacks a \"We can formalize P{0}\" line")]
    MissingFormalizeLine(usize),
    #[error("exemplar relationship section needs both \"Semantic Refinement\" and \"Core Continuation\" lines")]
    IncompleteRelationship,
    #[error("exemplar formalizations do not parse: {0}")]
    Unparseable(String),
}

const DEFAULT_EXEMPLAR: &str = "\
Prompt 1 (P1) Write me a Python function that counts the number of '0's in the list.
Formalization of P1
C1: A Python function is written.
C2: The function counts the number of '0' (as a string) in the list.
C3: The input to the function is a valid list.
We can formalize P1 as: P1 → (C1 ∧ C2 ∧ C3)
Prompt 2 (P2) Write me a Python function that counts the number of 0 in the list.
Formalization of P2
C1: A Python function is written.
C4: The function counts the number of 0 (as an integer) in the list.
C3: The input to the function is a valid list.
We can formalize P2 as: P2 → (C1 ∧ C4 ∧ C3)
Logical Relationship Between P1 and P2
-- Semantic Refinement: C2 evolves from counting '0' (string) to C4 counting 0 (integer).
-- Core Continuation: C1 ∧ C3: The existence of a Python function and the assumption of a valid list remain unchanged.
";

impl Default for FewShotExemplar {
    /// The counting-zeros pair used for introductory Python tasks.
    fn default() -> Self {
        Self::parse(DEFAULT_EXEMPLAR).expect("built-in exemplar is well formed")
    }
}

impl FewShotExemplar {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExemplarError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ExemplarError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ExemplarError> {
        let lines: Vec<&str> = text.lines().collect();
        let find = |marker: &str, from: usize| -> Result<usize, ExemplarError> {
            lines[from..]
                .iter()
                .position(|l| l.trim_start().starts_with(marker))
                .map(|p| p + from)
                .ok_or_else(|| ExemplarError::MissingMarker(marker.to_string()))
        };

        let p1 = find("Prompt 1 (P1)", 0)?;
        let f1 = find("Formalization of P1", p1 + 1)?;
        let p2 = find("Prompt 2 (P2)", f1 + 1)?;
        let f2 = find("Formalization of P2", p2 + 1)?;
        let rel = find("Logical Relationship Between P1 and P2", f2 + 1)?;

        let prompt_text = |start: usize, end: usize, marker: &str| {
            let first = lines[start].trim_start()[marker.len()..].trim_start();
            std::iter::once(first).chain(lines[start + 1..end].iter().copied()).collect::<Vec<_>>().join("\n")
        };
        let block = |start: usize, end: usize| lines[start..end].join("\n").trim().to_string();

        let exemplar = FewShotExemplar {
            prompt_texts: [prompt_text(p1, f1, "Prompt 1 (P1)"), prompt_text(p2, f2, "Prompt 2 (P2)")],
            formalization_texts: [block(f1 + 1, p2), block(f2 + 1, rel)],
            relationship_text: block(rel + 1, lines.len()),
        };
        exemplar.validate()?;
        Ok(exemplar)
    }

    pub fn validate(&self) -> Result<(), ExemplarError> {
        for (i, f) in self.formalization_texts.iter().enumerate() {
            if !f.contains(&format!("We can formalize P{}", i + 1)) {
                return Err(ExemplarError::MissingFormalizeLine(i + 1));
            }
        }
        if !self.relationship_text.contains("Semantic Refinement") || !self.relationship_text.contains("Core Continuation")
        {
            return Err(ExemplarError::IncompleteRelationship);
        }
        let as_response = format!(
            "{}\n{}\nLogical Relationship Between P1 and P2\n{}",
            self.formalization_texts[0], self.formalization_texts[1], self.relationship_text
        );
        parse_response(&as_response, 2).map_err(|e| ExemplarError::Unparseable(e.to_string()))?;
        Ok(())
    }

    /// The exemplar block as it appears at the head of every request.
    pub fn render(&self) -> String {
        format!(
            "Prompt 1 (P1) {}\nFormalization of P1\n{}\nPrompt 2 (P2) {}\nFormalization of P2\n{}\nLogical Relationship Between P1 and P2\n{}\n",
            self.prompt_texts[0],
            self.formalization_texts[0],
            self.prompt_texts[1],
            self.formalization_texts[1],
            self.relationship_text
        )
    }

    /// SHA-256 of the rendered block, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.render().as_bytes()))
    }
}
