//! Parser for the model's semi-structured formalization reply.
//!
//! Recognized, line-anchored elements:
//!
//! * `Ck: <description>` lines bind labels to descriptions (several may share a line);
//! * `We can formalize Pi as: Pi → (Ca ∧ ... ∧ Cz)` closes the block for prompt `i`;
//! * `Logical Relationship Between Pi and Pj` routes the following relationship lines to prompt `j`;
//! * `-- Semantic Refinement: Ca evolves from ... to Cb ...` declares `Ca` evolving into `Cb`;
//! * `-- Core Continuation: Ca ∧ Cb: ...` declares unchanged atoms.
//!
//! Conjunctions accept `∧`, `/\`, `^` and `AND` (any case); implications accept
//! `→`, `->` and `implies`. Disjunction and negation are rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::logic::{AtomSet, Label, Refinement};
use crate::session::normalize_text;

use super::Formalization;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("expected {expected} formalization blocks, found {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("P{prompt} uses {label} but no line describes it")]
    UnknownLabel { label: Label, prompt: usize },
    #[error("{label} is described twice: {first:?} vs {second:?}")]
    LabelConflict { label: Label, first: String, second: String },
    #[error("line {line_no}: {reason}: {line:?}")]
    Syntax { line_no: usize, line: String, reason: String },
}

/// Formalizations in prompt order plus the label descriptions of the reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedResponse {
    pub formalizations: Vec<Formalization>,
    pub descriptions: BTreeMap<Label, String>,
}

struct Patterns {
    formalize: Regex,
    header: Regex,
    relationship: Regex,
    description: Regex,
    evolves: Regex,
    label: Regex,
    prefix: Regex,
}

fn patterns() -> &'static Patterns {
    static PATTERNS: OnceLock<Patterns> = OnceLock::new();
    PATTERNS.get_or_init(|| Patterns {
        formalize: Regex::new(r"(?i)we\s+can\s+formalize\s+P_?(\d+)\s+as\s*:(.*)$").unwrap(),
        header: Regex::new(r"(?i)formalization\s+of\s+P_?(\d+)").unwrap(),
        relationship: Regex::new(r"(?i)logical\s+relationship\s+between\s+P_?(\d+)\s+and\s+P_?(\d+)").unwrap(),
        description: Regex::new(r"\bC(\d+)\s*:").unwrap(),
        evolves: Regex::new(r"(?i)\bevolves\s+from\b").unwrap(),
        label: Regex::new(r"\bC(\d+)\b").unwrap(),
        prefix: Regex::new(r"(?i)^P_?(\d+)\s*(→|->|implies\b)").unwrap(),
    })
}

#[derive(Default)]
struct Block {
    atoms: AtomSet,
    refinements: BTreeSet<Refinement>,
    continuations: BTreeSet<Label>,
    raw: Vec<String>,
    relation_lines: Vec<(usize, String)>,
}

enum Relation {
    Refinement(Vec<Refinement>),
    Continuation(Vec<Label>),
}

/// Parses a reply expected to formalize `expected_prompt_count` prompts.
pub fn parse_response(text: &str, expected_prompt_count: usize) -> Result<ParsedResponse, ParseError> {
    let pats = patterns();
    let mut descriptions: BTreeMap<Label, String> = BTreeMap::new();
    let mut blocks: BTreeMap<usize, Block> = BTreeMap::new();
    let mut found = 0usize;
    let mut pending_raw: Vec<String> = Vec::new();
    let mut relation_target: Option<usize> = None;
    let mut last_formalized: Option<usize> = None;
    let mut relations: Vec<(usize, usize, String, Relation)> = Vec::new();

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let syntax = |reason: &str| ParseError::Syntax { line_no, line: line.to_string(), reason: reason.to_string() };
        let clean = strip_decoration(line);
        if clean.is_empty() {
            continue;
        }

        if let Some(caps) = pats.formalize.captures(clean) {
            let index = parse_index(&caps[1]).ok_or_else(|| syntax("prompt number out of range"))?;
            let atoms = parse_expression(&caps[2], index).map_err(|reason| syntax(&reason))?;
            found += 1;
            if blocks.contains_key(&index) {
                return Err(syntax("prompt formalized twice"));
            }
            let block = blocks.entry(index).or_default();
            block.atoms = atoms;
            block.raw = std::mem::take(&mut pending_raw);
            block.raw.push(line.trim().to_string());
            last_formalized = Some(index);
            relation_target = None;
            continue;
        }

        if let Some(caps) = pats.relationship.captures(clean) {
            relation_target = Some(parse_index(&caps[2]).ok_or_else(|| syntax("prompt number out of range"))?);
            continue;
        }

        let lower = clean.to_lowercase();
        if lower.contains("semantic refinement") || lower.contains("core continuation") {
            let target = relation_target.or(last_formalized).ok_or_else(|| syntax("relationship before any prompt"))?;
            let relation = if lower.contains("semantic refinement") {
                Relation::Refinement(parse_refinements(clean).map_err(|r| syntax(&r))?)
            } else {
                Relation::Continuation(parse_continuation(clean).map_err(|r| syntax(&r))?)
            };
            relations.push((line_no, target, line.to_string(), relation));
            continue;
        }

        if pats.header.is_match(clean) && !starts_with_label(clean) {
            pending_raw.clear();
            pending_raw.push(line.trim().to_string());
            continue;
        }

        if starts_with_label(clean) {
            for (label, description) in split_descriptions(clean).map_err(|r| syntax(&r))? {
                bind_description(&mut descriptions, label, description)?;
            }
        }
        pending_raw.push(line.trim().to_string());
    }

    if found != expected_prompt_count || (1..=expected_prompt_count).any(|k| !blocks.contains_key(&k)) {
        return Err(ParseError::CountMismatch { expected: expected_prompt_count, found });
    }

    for (index, block) in &blocks {
        if let Some(label) = block.atoms.iter().find(|l| !descriptions.contains_key(l)) {
            return Err(ParseError::UnknownLabel { label: *label, prompt: *index });
        }
    }

    for (line_no, target, line, relation) in relations {
        let syntax = |reason: String| ParseError::Syntax { line_no, line: line.clone(), reason };
        let atoms = blocks
            .get(&target)
            .map(|b| b.atoms.clone())
            .ok_or_else(|| syntax(format!("relationship refers to unknown prompt P{target}")))?;
        match relation {
            Relation::Refinement(pairs) if pairs.is_empty() => {}
            Relation::Refinement(pairs) => {
                let previous = target
                    .checked_sub(1)
                    .and_then(|p| blocks.get(&p))
                    .map(|b| b.atoms.clone())
                    .ok_or_else(|| syntax(format!("refinement on P{target} has no preceding prompt")))?;
                for (old, new) in pairs {
                    if !previous.contains(&old) {
                        return Err(syntax(format!("{old} is not a constraint of P{}", target - 1)));
                    }
                    if !atoms.contains(&new) {
                        return Err(syntax(format!("{new} is not a constraint of P{target}")));
                    }
                    blocks.get_mut(&target).unwrap().refinements.insert((old, new));
                }
            }
            Relation::Continuation(labels) => {
                for label in labels {
                    if !atoms.contains(&label) {
                        return Err(syntax(format!("{label} is not a constraint of P{target}")));
                    }
                    blocks.get_mut(&target).unwrap().continuations.insert(label);
                }
            }
        }
        blocks.get_mut(&target).unwrap().relation_lines.push((line_no, line.trim().to_string()));
    }

    let formalizations = blocks
        .into_iter()
        .map(|(index, mut block)| {
            block.raw.extend(block.relation_lines.into_iter().map(|(_, l)| l));
            Formalization {
                prompt_index: index,
                atoms: block.atoms,
                refinements: block.refinements,
                continuations: block.continuations,
                raw: block.raw.join("\n"),
            }
        })
        .collect();
    Ok(ParsedResponse { formalizations, descriptions })
}

fn strip_decoration(line: &str) -> &str {
    line.trim()
        .trim_start_matches(|c: char| matches!(c, '*' | '#' | '>' | '•' | '-') || c.is_whitespace())
        .trim_end_matches('*')
        .trim()
}

fn starts_with_label(clean: &str) -> bool {
    let p = patterns();
    p.description.find(clean).is_some_and(|m| m.start() == 0)
}

fn parse_index(digits: &str) -> Option<usize> {
    digits.parse::<usize>().ok().filter(|&k| k >= 1)
}

fn parse_label(digits: &str) -> Result<Label, String> {
    format!("C{digits}").parse::<Label>().map_err(|e| e.to_string())
}

fn bind_description(
    descriptions: &mut BTreeMap<Label, String>,
    label: Label,
    description: String,
) -> Result<(), ParseError> {
    match descriptions.get(&label) {
        Some(existing) if comparable(existing) != comparable(&description) => Err(ParseError::LabelConflict {
            label,
            first: existing.clone(),
            second: description,
        }),
        Some(_) => Ok(()),
        None => {
            descriptions.insert(label, description);
            Ok(())
        }
    }
}

fn comparable(description: &str) -> String {
    normalize_text(description).trim_end_matches('.').to_string()
}

/// Splits `C1: foo. C2: bar.` into its bindings.
fn split_descriptions(clean: &str) -> Result<Vec<(Label, String)>, String> {
    let p = patterns();
    let marks: Vec<_> = p.description.captures_iter(clean).collect();
    let mut out = Vec::with_capacity(marks.len());
    for (i, caps) in marks.iter().enumerate() {
        let whole = caps.get(0).unwrap();
        let end = marks.get(i + 1).map(|c| c.get(0).unwrap().start()).unwrap_or(clean.len());
        let description = normalize_text(&clean[whole.end()..end]);
        if description.is_empty() {
            return Err(format!("empty description for C{}", &caps[1]));
        }
        out.push((parse_label(&caps[1])?, description));
    }
    Ok(out)
}

fn parse_refinements(clean: &str) -> Result<Vec<Refinement>, String> {
    let p = patterns();
    let body = after_colon(clean, "refinement");
    let mut pairs = Vec::new();
    let mut cursor = 0;
    for m in p.evolves.find_iter(body) {
        let before = &body[cursor..m.start()];
        let after = &body[m.end()..];
        let old = p.label.captures_iter(before).last();
        let new = p.label.captures(after);
        match (old, new) {
            (Some(old), Some(new)) => {
                let new_match = new.get(0).unwrap();
                pairs.push((parse_label(&old[1])?, parse_label(&new[1])?));
                cursor = m.end() + new_match.end();
            }
            _ => {
                log::debug!("refinement without two labels ignored: {body:?}");
                cursor = m.end();
            }
        }
    }
    Ok(pairs)
}

fn parse_continuation(clean: &str) -> Result<Vec<Label>, String> {
    let p = patterns();
    let body = after_colon(clean, "continuation");
    let head = body.split(':').next().unwrap_or("");
    let scope = if p.label.is_match(head) { head } else { body };
    p.label.captures_iter(scope).map(|c| parse_label(&c[1])).collect()
}

fn after_colon<'a>(clean: &'a str, keyword: &str) -> &'a str {
    let lower = clean.to_lowercase();
    let start = lower.find(keyword).map(|i| i + keyword.len()).unwrap_or(0);
    let rest = &clean[start..];
    rest.strip_prefix(':').or_else(|| rest.trim_start().strip_prefix(':')).unwrap_or(rest)
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Label(Label),
    And,
    Open,
    Close,
    Top,
}

/// Parses `Pi → (Ca ∧ ...)` (the implication prefix is optional) into a set.
fn parse_expression(expr: &str, index: usize) -> Result<AtomSet, String> {
    let p = patterns();
    let mut body = expr.trim_matches(|c: char| matches!(c, '$' | '`' | '*') || c.is_whitespace());
    body = body.strip_suffix('.').unwrap_or(body).trim();

    if let Some(caps) = p.prefix.captures(body) {
        let k = parse_index(&caps[1]).ok_or("prompt number out of range")?;
        if k != index {
            return Err(format!("formalization of P{index} names P{k}"));
        }
        body = body[caps.get(0).unwrap().end()..].trim();
    } else if body.starts_with(['P', 'p']) {
        return Err("missing or unsupported implication token".to_string());
    }
    if body.is_empty() {
        return Err("empty logical expression".to_string());
    }

    let tokens = tokenize(body)?;
    let mut pos = 0;
    let mut atoms = AtomSet::new();
    parse_conjunction(&tokens, &mut pos, &mut atoms)?;
    if pos != tokens.len() {
        return Err("unbalanced parentheses".to_string());
    }
    Ok(atoms)
}

fn tokenize(body: &str) -> Result<Vec<Token>, String> {
    let mut tokens = Vec::new();
    let mut chars = body.char_indices().peekable();
    while let Some(&(i, c)) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '(' => {
                tokens.push(Token::Open);
                chars.next();
            }
            ')' => {
                tokens.push(Token::Close);
                chars.next();
            }
            '∧' | '^' => {
                tokens.push(Token::And);
                chars.next();
            }
            '⊤' => {
                tokens.push(Token::Top);
                chars.next();
            }
            '/' => {
                chars.next();
                match chars.next() {
                    Some((_, '\\')) => tokens.push(Token::And),
                    _ => return Err("stray '/' in expression".to_string()),
                }
            }
            c if c.is_alphanumeric() || c == '_' => {
                let mut end = i;
                while let Some(&(j, d)) = chars.peek() {
                    if d.is_alphanumeric() || d == '_' {
                        end = j + d.len_utf8();
                        chars.next();
                    } else {
                        break;
                    }
                }
                let word = &body[i..end];
                if word.eq_ignore_ascii_case("and") {
                    tokens.push(Token::And);
                } else if word.eq_ignore_ascii_case("true") {
                    tokens.push(Token::Top);
                } else if let Some(digits) = word.strip_prefix('C') {
                    tokens.push(Token::Label(parse_label(digits)?));
                } else if word.eq_ignore_ascii_case("or") || word.eq_ignore_ascii_case("not") {
                    return Err(format!("only conjunctions are supported, found {word:?}"));
                } else {
                    return Err(format!("unexpected word {word:?}"));
                }
            }
            '∨' | '¬' | '~' | '!' | '|' | '\\' => {
                return Err(format!("only conjunctions are supported, found {c:?}"));
            }
            other => return Err(format!("unexpected character {other:?}")),
        }
    }
    Ok(tokens)
}

/// conj := term (AND term)* ; term := LABEL | ⊤ | '(' conj? ')'
fn parse_conjunction(tokens: &[Token], pos: &mut usize, atoms: &mut AtomSet) -> Result<(), String> {
    parse_term(tokens, pos, atoms)?;
    while tokens.get(*pos) == Some(&Token::And) {
        *pos += 1;
        parse_term(tokens, pos, atoms)?;
    }
    match tokens.get(*pos) {
        None | Some(Token::Close) => Ok(()),
        Some(_) => Err("expected a conjunction between atoms".to_string()),
    }
}

fn parse_term(tokens: &[Token], pos: &mut usize, atoms: &mut AtomSet) -> Result<(), String> {
    match tokens.get(*pos) {
        Some(Token::Label(label)) => {
            atoms.insert(*label);
            *pos += 1;
            Ok(())
        }
        Some(Token::Top) => {
            *pos += 1;
            Ok(())
        }
        Some(Token::Open) => {
            *pos += 1;
            if tokens.get(*pos) == Some(&Token::Close) {
                *pos += 1;
                return Ok(());
            }
            parse_conjunction(tokens, pos, atoms)?;
            if tokens.get(*pos) != Some(&Token::Close) {
                return Err("missing ')'".to_string());
            }
            *pos += 1;
            Ok(())
        }
        Some(Token::And) => Err("conjunction without left operand".to_string()),
        Some(Token::Close) => Err("unexpected ')'".to_string()),
        None => Err("conjunction without right operand".to_string()),
    }
}
