//! The command-script language: the restricted, indentation-delimited
//! imperative subset that generated programs and policy bodies are written
//! in, plus its static checks and sandboxed interpreter.
//!
//! Accepted constructs: one-parameter function definitions; assignment and
//! `+=`/`-=` to names and attribute paths; attribute chains; `+ - * /` and
//! parentheses; numeric, string and boolean literals; two-element tuple
//! destructuring of call results; calls; `if`/`elif`/`else` with
//! `not`/`and`/`or` and comparisons; `for` over `range(n)` or `range(a, b)`;
//! `while`; comments. Anything else is a parse error.
//!
//! Programs cannot import. `math` and `time` are pre-bound with a fixed
//! member whitelist, and the only side effects reachable are the controller
//! methods on the robot handle.

pub mod ast;
pub mod check;
pub mod interp;
mod lexer;
mod parser;
mod value;

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

pub use ast::{FunctionDef, Program};
pub use check::{detect_undefined_calls, static_check, UndefinedKind, UndefinedName};
pub use interp::{execute, ExecOptions, ExecStatus, ExecutionLimits, ExecutionReport};
pub use parser::parse_program;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        Self { line, message: message.into() }
    }
}

/// Functions made available to programs by the policy bank, by name.
pub type Bindings = HashMap<String, Arc<FunctionDef>>;

/// Methods callable on the robot handle.
pub const CONTROLLER_API: &[&str] =
    &["get_pose", "add_waypoint", "go", "stop", "find", "say", "open_hand", "close_hand"];

pub const BUILTINS: &[&str] = &["range", "len", "abs", "min", "max", "round"];

/// Pre-bound modules and their whitelisted members.
pub const MODULES: &[(&str, &[&str])] =
    &[("math", &["pi", "cos", "sin", "sqrt", "radians"]), ("time", &["time", "sleep"])];

pub fn is_module(name: &str) -> bool {
    MODULES.iter().any(|(m, _)| *m == name)
}

pub fn module_has(module: &str, member: &str) -> bool {
    MODULES.iter().any(|(m, members)| *m == module && members.contains(&member))
}

pub fn is_module_member(name: &str) -> bool {
    MODULES.iter().any(|(_, members)| members.contains(&name))
}
