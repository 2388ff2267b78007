//! Prompt assembly, completion clients and hierarchical program assembly.
//!
//! A prompt is four segments in a fixed order: the few-shot preamble, the
//! policy bank's hint blocks, recently executed programs, and the directive
//! line `#define function: <utterance>` that the model completes.

mod assemble;
mod client;

use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::Serialize;
use thiserror::Error;

use crate::policy::{sanitize_name, PolicyError};
use crate::script::{parse_program, ParseError};

pub use assemble::{resolve_and_assemble, Generation};
pub use client::{
    complete, ClientError, Completion, CompletionClient, EndpointClient, EndpointSettings, MockClient, MockFixture,
};

/// Completions are cut at this marker.
pub const STOP_SEQUENCE: &str = "#end of function";

/// Few-shot examples bundled with the crate.
pub const DEFAULT_PREAMBLE: &str = include_str!("preamble.txt");

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("generated code does not parse: {error}")]
    Parse { error: ParseError, code: String },
    #[error("could not resolve {0:?}")]
    Unresolved(Vec<String>),
    #[error("definitions for {0:?} were requested but never produced")]
    Cyclic(Vec<String>),
    #[error("generated code defines no functions")]
    NoFunctions,
    #[error(transparent)]
    Name(#[from] PolicyError),
}

/// Lowercases the utterance and strips trailing punctuation and whitespace.
pub fn normalize_utterance(utterance: &str) -> String {
    let collapsed = utterance.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed.trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace()).to_string()
}

pub fn directive_line(utterance: &str) -> String {
    format!("#define function: {}", normalize_utterance(utterance))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptBundle {
    pub preamble: String,
    pub policy_extension: String,
    pub context_code: String,
    pub user_directive: String,
}

impl PromptBundle {
    /// Non-empty segments separated by a blank line, directive last.
    pub fn render(&self) -> String {
        let segments = [&self.preamble, &self.policy_extension, &self.context_code, &self.user_directive];
        let parts: Vec<&str> = segments.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
        parts.join("\n\n") + "\n"
    }

    /// Same prompt with a different directive (used for helper definitions).
    pub fn with_directive(&self, directive: String) -> PromptBundle {
        PromptBundle { user_directive: directive, ..self.clone() }
    }
}

pub fn build_prompt(preamble: &str, registry_extension: &str, context: &[Lmp], utterance: &str) -> PromptBundle {
    let context_code = context.iter().map(Lmp::as_context).collect::<Vec<_>>().join("\n\n");
    PromptBundle {
        preamble: preamble.to_string(),
        policy_extension: registry_extension.to_string(),
        context_code,
        user_directive: directive_line(utterance),
    }
}

/// One generation result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lmp {
    pub utterance: String,
    pub code_text: String,
    pub top_level_function: String,
    /// Everything defined before the top-level function, in order.
    pub dependency_functions: Vec<String>,
    pub created_at: DateTime<Utc>,
}

impl Lmp {
    /// Wraps already-assembled code. The top-level function must be defined
    /// in `code` and must be its last definition.
    pub fn from_code(utterance: &str, code: &str) -> Result<Lmp, CodegenError> {
        let top = sanitize_name(utterance)?;
        let program = parse_program(code).map_err(|error| CodegenError::Parse { error, code: code.to_string() })?;
        let names: Vec<String> = program.functions.keys().cloned().collect();
        match names.last() {
            Some(last) if *last == top => {}
            _ => return Err(CodegenError::Unresolved(vec![top])),
        }
        Ok(Lmp {
            utterance: utterance.to_string(),
            code_text: code.trim_end().to_string(),
            top_level_function: top,
            dependency_functions: names[..names.len() - 1].to_vec(),
            created_at: Utc::now(),
        })
    }

    /// Rendering used in the context segment of later prompts.
    pub fn as_context(&self) -> String {
        format!("{}\n{}\n{}", directive_line(&self.utterance), self.code_text.trim_end(), STOP_SEQUENCE)
    }
}

/// Wall-clock spent waiting on the model.
pub fn total_latency(calls: &[Completion]) -> Duration {
    calls.iter().map(|c| c.elapsed).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::{static_check, Bindings};

    #[test]
    fn directive_normalization() {
        assert_eq!(directive_line("tell me the first law of robotics"), "#define function: tell me the first law of robotics");
        assert_eq!(directive_line("Move a little down."), "#define function: move a little down");
        assert_eq!(directive_line("  What's   the time?! "), "#define function: what's the time");
    }

    #[test]
    fn prompt_order_and_empty_context() {
        let b = build_prompt("PRE", "EXT", &[], "Say hi.");
        assert_eq!(b.context_code, "");
        assert_eq!(b.render(), "PRE\n\nEXT\n\n#define function: say hi\n");
        let lmp = Lmp::from_code("Say hi.", "def say_hi(robot):\n    robot.say('hi')").unwrap();
        let b = build_prompt("PRE", "", &[lmp], "Again.");
        assert_eq!(
            b.render(),
            "PRE\n\n#define function: say hi\ndef say_hi(robot):\n    robot.say('hi')\n#end of function\n\n#define function: again\n"
        );
    }

    #[test]
    fn preamble_examples_are_valid_programs() {
        let mut chunks = DEFAULT_PREAMBLE.split(STOP_SEQUENCE).filter(|c| c.contains("def ")).peekable();
        assert!(chunks.peek().is_some());
        for chunk in chunks {
            let code: String = chunk.lines().filter(|l| !l.trim_start().starts_with('#')).collect::<Vec<_>>().join("\n");
            let program = parse_program(&code).unwrap_or_else(|e| panic!("{e}\n{code}"));
            static_check(&program, &Bindings::new()).unwrap();
        }
    }
}
