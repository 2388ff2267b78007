use std::collections::HashSet;
use std::time::Duration;

use chrono::Utc;
use indexmap::IndexMap;

use super::client::{complete, Completion, CompletionClient};
use super::{CodegenError, Lmp, PromptBundle};
use crate::policy::sanitize_name;
use crate::script::{detect_undefined_calls, parse_program, Program};

/// Outcome of a full generation cycle.
#[derive(Debug, Clone)]
pub struct Generation {
    pub lmp: Lmp,
    /// Every completion call made, in order.
    pub calls: Vec<Completion>,
    pub rounds: usize,
}

impl Generation {
    pub fn latency(&self) -> Duration {
        super::total_latency(&self.calls)
    }
}

fn parse_completion(text: &str) -> Result<Program, CodegenError> {
    let program = parse_program(text).map_err(|error| CodegenError::Parse { error, code: text.to_string() })?;
    if program.functions.is_empty() {
        return Err(CodegenError::NoFunctions);
    }
    Ok(program)
}

fn render(defs: &IndexMap<String, String>) -> String {
    defs.values().map(String::as_str).collect::<Vec<_>>().join("\n\n")
}

/// Generates code for `prompt`, then asks for a definition of every call
/// that nothing defines, until no undefined calls remain or `max_rounds`
/// (counting the first) is used up. Helpers are listed in the order they
/// were produced and the top-level function is moved to the end.
pub fn resolve_and_assemble(
    utterance: &str,
    prompt: &PromptBundle,
    client: &dyn CompletionClient,
    known_names: &HashSet<String>,
    max_rounds: usize,
) -> Result<Generation, CodegenError> {
    let top = sanitize_name(utterance)?;
    let max_rounds = max_rounds.max(1);
    let mut calls = Vec::new();

    let first = complete(&prompt.render(), client)?;
    let program = parse_completion(&first.text)?;
    calls.push(first);
    let mut defs: IndexMap<String, String> = IndexMap::new();
    for name in program.functions.keys() {
        defs.insert(name.clone(), program.function_source(name).unwrap_or_default());
    }
    let last_of_first_round = program.functions.keys().last().cloned().unwrap_or_default();
    if !defs.contains_key(&top) {
        // The model named its function differently; keep the utterance name
        // as the entry point.
        defs.insert(top.clone(), format!("def {top}(robot):\n    {last_of_first_round}(robot)"));
    }

    let mut rounds = 1;
    loop {
        let assembled = parse_completion(&render(&defs))?;
        let missing = detect_undefined_calls(&assembled, known_names);
        if missing.is_empty() {
            break;
        }
        if rounds >= max_rounds {
            return Err(CodegenError::Unresolved(missing));
        }
        rounds += 1;
        let mut added = false;
        for name in &missing {
            let directive = format!("#define function: {}", name.replace('_', " "));
            let c = complete(&prompt.with_directive(directive).render(), client)?;
            let program = parse_completion(&c.text)?;
            calls.push(c);
            for fname in program.functions.keys() {
                if !defs.contains_key(fname) {
                    defs.insert(fname.clone(), program.function_source(fname).unwrap_or_default());
                    added = true;
                }
            }
        }
        if !added {
            return Err(CodegenError::Cyclic(missing));
        }
    }

    let top_src = defs.shift_remove(&top).expect("top-level definition present");
    let dependency_functions: Vec<String> = defs.keys().cloned().collect();
    defs.insert(top.clone(), top_src);
    let code_text = render(&defs);
    Ok(Generation {
        lmp: Lmp {
            utterance: utterance.to_string(),
            code_text,
            top_level_function: top,
            dependency_functions,
            created_at: Utc::now(),
        },
        calls,
        rounds,
    })
}
