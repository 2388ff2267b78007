//! The policy bank: reusable command-script units that extend what the
//! generator can call.
//!
//! A policy file has three parts separated by tag lines:
//!
//! ```text
//! import time
//! #BODY
//! def handover(robot):
//!     ...
//! # HINT
//! # define function: give me the held item
//! def give_me_the_held_item(robot):
//!     handover(robot)
//! # end of function
//! ```
//!
//! Only the hint block (and the imports) are shown to the model; the body is
//! bound into the interpreter so that generated code can call it.

mod recording;
mod registry;

use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

use crate::script::ast::{Expr, Stmt};
use crate::script::{is_module, parse_program, ParseError, Program};

pub use recording::RecordingSession;
pub use registry::{load_registry, EntryError, PolicyRegistry, RegistryEntry};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("missing {0} tag")]
    MissingTag(&'static str),
    #[error("{0} tag appears more than once")]
    DuplicateTag(&'static str),
    #[error("#HINT tag must come after #BODY")]
    TagOrder,
    #[error("line {line}: expected an import statement, found '{text}'")]
    BadImport { line: usize, text: String },
    #[error("module '{0}' is not available to policies")]
    ImportNotAllowed(String),
    #[error("body: {0}")]
    Body(ParseError),
    #[error("body defines no functions")]
    EmptyBody,
    #[error("hint block: {0}")]
    MalformedHint(String),
    #[error("alias function '{found}' does not match the hint (expected '{expected}')")]
    AliasMismatch { expected: String, found: String },
    #[error("entry function '{0}' is not defined in the body")]
    EntryMissing(String),
    #[error("invalid name: {0}")]
    InvalidName(String),
    #[error("function '{function}' is defined by both '{first}' and '{second}'")]
    Conflict { function: String, first: String, second: String },
    #[error("no policy named '{0}'")]
    Unknown(String),
    #[error("a policy named '{0}' already exists")]
    NameTaken(String),
    #[error("nothing has been recorded")]
    EmptyRecording,
    #[error("recorded steps define '{0}' differently")]
    RecordingClash(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("registry: {0}")]
    Json(#[from] serde_json::Error),
}

/// Identifier for an utterance: lowercase, apostrophes dropped, every other
/// run of non-alphanumerics collapsed to `_`, edges trimmed, and a `_`
/// prefix when the result would start with a digit.
pub fn sanitize_name(utterance: &str) -> Result<String, PolicyError> {
    let mut out = String::with_capacity(utterance.len());
    let mut pending_sep = false;
    for c in utterance.chars().filter(|c| !matches!(c, '\'' | '\u{2019}')) {
        if c.is_ascii_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.push(c.to_ascii_lowercase());
        } else {
            pending_sep = true;
        }
    }
    if out.is_empty() {
        return Err(PolicyError::InvalidName(format!("'{utterance}' has no letters or digits")));
    }
    if out.starts_with(|c: char| c.is_ascii_digit()) {
        out.insert(0, '_');
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct Policy {
    pub name: String,
    pub imports: Vec<String>,
    pub body_source: String,
    pub entry_function: String,
    pub hint_utterance: String,
    pub alias_function: String,
    /// Taught through recording rather than written by hand.
    pub learned: bool,
    pub source_path: Option<PathBuf>,
    #[serde(skip)]
    body: Program,
}

impl Policy {
    /// Builds a policy from its parts, validating it the same way a parsed
    /// file is validated.
    pub fn new(
        name: &str,
        imports: Vec<String>,
        body_source: &str,
        entry_function: &str,
        hint_utterance: &str,
    ) -> Result<Policy, PolicyError> {
        for m in &imports {
            if !is_module(m) {
                return Err(PolicyError::ImportNotAllowed(m.clone()));
            }
        }
        let body_source = normalize_body(body_source);
        let body = parse_program(&body_source).map_err(PolicyError::Body)?;
        if body.functions.is_empty() {
            return Err(PolicyError::EmptyBody);
        }
        if !body.functions.contains_key(entry_function) {
            return Err(PolicyError::EntryMissing(entry_function.to_string()));
        }
        let hint_utterance = hint_utterance.trim().to_string();
        let alias_function = sanitize_name(&hint_utterance)?;
        if body.functions.contains_key(&alias_function) {
            return Err(PolicyError::MalformedHint(format!("alias '{alias_function}' is also defined in the body")));
        }
        Ok(Policy {
            name: name.to_string(),
            imports,
            body_source,
            entry_function: entry_function.to_string(),
            hint_utterance,
            alias_function,
            learned: false,
            source_path: None,
            body,
        })
    }

    pub fn body(&self) -> &Program {
        &self.body
    }

    /// Names bound into the interpreter: body functions and the alias.
    pub fn function_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.body.functions.keys().cloned().collect();
        names.push(self.alias_function.clone());
        names
    }

    /// Alias definition as it appears in the hint block.
    pub fn alias_source(&self) -> String {
        format!("def {}(robot):\n    {}(robot)", self.alias_function, self.entry_function)
    }

    pub fn hint_block(&self) -> String {
        format!("# define function: {}\n{}\n# end of function", self.hint_utterance, self.alias_source())
    }

    /// Equality of everything stored in the file itself.
    pub fn same_structure(&self, other: &Policy) -> bool {
        self.name == other.name
            && self.imports == other.imports
            && self.body_source == other.body_source
            && self.entry_function == other.entry_function
            && self.hint_utterance == other.hint_utterance
            && self.alias_function == other.alias_function
    }

    /// Canonical file text.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for m in &self.imports {
            out.push_str(&format!("import {m}\n"));
        }
        out.push_str("#BODY\n");
        out.push_str(&self.body_source);
        out.push_str("\n# HINT\n");
        out.push_str(&self.hint_block());
        out.push('\n');
        out
    }
}

fn normalize_body(text: &str) -> String {
    let lines: Vec<&str> = text.lines().map(str::trim_end).collect();
    let start = lines.iter().position(|l| !l.is_empty()).unwrap_or(lines.len());
    let end = lines.iter().rposition(|l| !l.is_empty()).map_or(start, |i| i + 1);
    lines[start..end].join("\n")
}

fn tag_of(line: &str) -> Option<&'static str> {
    let t = line.trim();
    let rest = t.strip_prefix('#')?.trim_start();
    if rest.eq_ignore_ascii_case("body") {
        Some("#BODY")
    } else if rest.eq_ignore_ascii_case("hint") {
        Some("#HINT")
    } else {
        None
    }
}

fn directive_text(line: &str) -> Option<&str> {
    let rest = line.trim().strip_prefix('#')?.trim_start();
    let rest = rest.strip_prefix("define function:")?;
    Some(rest.trim())
}

fn is_end_marker(line: &str) -> bool {
    line.trim().strip_prefix('#').is_some_and(|r| r.trim() == "end of function")
}

/// Parses policy file text. The policy is named after its entry function.
pub fn parse_policy_file(text: &str) -> Result<Policy, PolicyError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut body_at = None;
    let mut hint_at = None;
    for (i, line) in lines.iter().enumerate() {
        match tag_of(line) {
            Some("#BODY") if body_at.is_some() => return Err(PolicyError::DuplicateTag("#BODY")),
            Some("#BODY") => body_at = Some(i),
            Some(_) if hint_at.is_some() => return Err(PolicyError::DuplicateTag("#HINT")),
            Some(_) => hint_at = Some(i),
            None => {}
        }
    }
    let body_at = body_at.ok_or(PolicyError::MissingTag("#BODY"))?;
    let hint_at = hint_at.ok_or(PolicyError::MissingTag("#HINT"))?;
    if hint_at < body_at {
        return Err(PolicyError::TagOrder);
    }

    let mut imports = Vec::new();
    for (i, line) in lines[..body_at].iter().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let module = t
            .strip_prefix("import ")
            .map(str::trim)
            .filter(|m| !m.is_empty() && m.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
            .ok_or_else(|| PolicyError::BadImport { line: i + 1, text: t.to_string() })?;
        if !imports.iter().any(|m| m == module) {
            imports.push(module.to_string());
        }
    }

    let body_source = lines[body_at + 1..hint_at].join("\n");

    let hint_lines: Vec<&str> = lines[hint_at + 1..].iter().copied().filter(|l| !l.trim().is_empty()).collect();
    let (first, rest) = hint_lines.split_first().ok_or_else(|| PolicyError::MalformedHint("hint block is empty".into()))?;
    let hint = directive_text(first)
        .filter(|h| !h.is_empty())
        .ok_or_else(|| PolicyError::MalformedHint(format!("expected '# define function: <hint>', found '{}'", first.trim())))?;
    let end = rest
        .iter()
        .position(|l| is_end_marker(l))
        .ok_or_else(|| PolicyError::MalformedHint("missing '# end of function'".into()))?;
    if end + 1 != rest.len() {
        return Err(PolicyError::MalformedHint("text after '# end of function'".into()));
    }
    let alias_src = rest[..end].join("\n");
    let alias = parse_program(&alias_src).map_err(|e| PolicyError::MalformedHint(e.to_string()))?;
    if alias.functions.len() != 1 {
        return Err(PolicyError::MalformedHint("expected exactly one alias definition".into()));
    }
    let def = &alias.functions[0];
    let entry = match def.body.as_slice() {
        [Stmt::Expr { expr: Expr::Call { callee, args, .. }, .. }] => match (callee.as_ref(), args.as_slice()) {
            (Expr::Name(entry), [Expr::Name(arg)]) if *arg == def.param => entry.clone(),
            _ => return Err(PolicyError::MalformedHint("alias must call the entry function with its parameter".into())),
        },
        _ => return Err(PolicyError::MalformedHint("alias body must be a single call".into())),
    };
    let expected = sanitize_name(hint)?;
    if def.name != expected {
        return Err(PolicyError::AliasMismatch { expected, found: def.name.clone() });
    }
    Policy::new(&entry, imports, &body_source, &entry, hint)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HANDOVER: &str = include_str!("../../fixtures/policies/handover.policy");

    #[test]
    fn sanitize_examples() {
        assert_eq!(sanitize_name("Move a little down.").unwrap(), "move_a_little_down");
        assert_eq!(sanitize_name("full check").unwrap(), "full_check");
        assert_eq!(sanitize_name("30cm to the left").unwrap(), "_30cm_to_the_left");
        assert_eq!(
            sanitize_name("If you see a pipe and a cover, say all parts found, otherwise tell me what's missing.").unwrap(),
            "if_you_see_a_pipe_and_a_cover_say_all_parts_found_otherwise_tell_me_whats_missing"
        );
        assert!(sanitize_name("?!").is_err());
    }

    #[test]
    fn parses_handover() {
        let p = parse_policy_file(HANDOVER).unwrap();
        assert_eq!(p.imports, vec!["time"]);
        assert_eq!(p.entry_function, "handover");
        assert_eq!(p.hint_utterance, "give me the held item");
        assert_eq!(p.alias_function, "give_me_the_held_item");
        assert_eq!(p.serialize(), HANDOVER);
    }

    #[test]
    fn tag_variants_accepted() {
        let text = "# body\ndef a(robot):\n    robot.go()\n#Hint\n#define function: do a\ndef do_a(robot):\n    a(robot)\n#end of function\n";
        let p = parse_policy_file(text).unwrap();
        assert_eq!(p.entry_function, "a");
        assert!(p.imports.is_empty());
    }

    #[test]
    fn malformed_files_rejected() {
        let body = "def a(robot):\n    robot.go()\n";
        let hint = "# HINT\n# define function: do a\ndef do_a(robot):\n    a(robot)\n# end of function\n";
        let cases = [
            format!("{body}{hint}"),
            format!("#BODY\n{body}#BODY\n{hint}"),
            format!("{hint}#BODY\n{body}"),
            format!("import os\n#BODY\n{body}{hint}"),
            format!("x = 1\n#BODY\n{body}{hint}"),
            format!("#BODY\n{body}# HINT\n# define function: do b\ndef do_a(robot):\n    a(robot)\n# end of function\n"),
            format!("#BODY\n{body}# HINT\n# define function: do a\ndef do_a(robot):\n    a(robot)\n    a(robot)\n# end of function\n"),
            format!("#BODY\n{body}# HINT\n# define function: do a\ndef do_a(robot):\n    b(robot)\n# end of function\n"),
            format!("#BODY\n{body}# HINT\ndef do_a(robot):\n    a(robot)\n# end of function\n"),
            format!("#BODY\n{body}# HINT\n# define function: do a\ndef do_a(robot):\n    a(robot)\n"),
        ];
        for text in &cases {
            assert!(parse_policy_file(text).is_err(), "accepted:\n{text}");
        }
    }
}
