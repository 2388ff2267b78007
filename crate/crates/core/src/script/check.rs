//! Static analysis over parsed programs: the pre-execution name check and
//! the undefined-call detection that drives hierarchical generation.

use std::collections::{HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ast::{walk_exprs, walk_stmts, Expr, FunctionDef, Program, Stmt, Target};
use super::{is_module, is_module_member, module_has, Bindings, BUILTINS, CONTROLLER_API};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UndefinedKind {
    Function,
    Method,
    ModuleMember,
    Variable,
}

/// One name that does not resolve in the execution environment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefinedName {
    pub name: String,
    /// Receiver for method and module-member references (`robot`, `math`).
    pub receiver: Option<String>,
    pub kind: UndefinedKind,
    pub function: String,
    pub line: usize,
}

impl fmt::Display for UndefinedName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.receiver {
            Some(r) => write!(f, "{r}.{}", self.name),
            None => write!(f, "{}", self.name),
        }
    }
}

/// Verifies that every call target, robot method, module member and
/// variable in `program` resolves. Policy functions reachable from the
/// program are checked as well. Returns the offending names on failure.
pub fn static_check(program: &Program, bindings: &Bindings) -> Result<(), Vec<UndefinedName>> {
    let mut problems = Vec::new();
    let mut queue: VecDeque<&FunctionDef> = program.functions.values().collect();
    let mut seen: HashSet<&str> = program.functions.keys().map(String::as_str).collect();
    while let Some(def) = queue.pop_front() {
        let mut checker = FunctionChecker { program, bindings, def, locals: local_names(def), problems: &mut problems };
        let reached = checker.check();
        for name in reached {
            if !seen.contains(name.as_str()) {
                if let Some((key, def)) = bindings.get_key_value(&name) {
                    seen.insert(key.as_str());
                    queue.push_back(def);
                }
            }
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(problems)
    }
}

fn local_names(def: &FunctionDef) -> HashSet<String> {
    let mut locals = HashSet::from([def.param.clone()]);
    walk_stmts(&def.body, &mut |stmt| match stmt {
        Stmt::Assign { target: Target::Name(n), .. } | Stmt::AugAssign { target: Target::Name(n), .. } => {
            locals.insert(n.clone());
        }
        Stmt::Unpack { names, .. } => {
            locals.extend(names.iter().cloned());
        }
        Stmt::For { var, .. } => {
            locals.insert(var.clone());
        }
        _ => {}
    });
    locals
}

struct FunctionChecker<'a> {
    program: &'a Program,
    bindings: &'a Bindings,
    def: &'a FunctionDef,
    locals: HashSet<String>,
    problems: &'a mut Vec<UndefinedName>,
}

impl FunctionChecker<'_> {
    /// Checks the function; returns names of called functions.
    fn check(&mut self) -> Vec<String> {
        let mut called = Vec::new();
        self.block(&self.def.body, &mut called);
        called
    }

    fn report(&mut self, name: &str, receiver: Option<&str>, kind: UndefinedKind, line: usize) {
        let entry = UndefinedName {
            name: name.to_string(),
            receiver: receiver.map(str::to_string),
            kind,
            function: self.def.name.clone(),
            line,
        };
        if !self.problems.contains(&entry) {
            self.problems.push(entry);
        }
    }

    fn block(&mut self, body: &[Stmt], called: &mut Vec<String>) {
        for stmt in body {
            let line = stmt.line();
            match stmt {
                Stmt::Assign { target, value, .. } | Stmt::AugAssign { target, value, .. } => {
                    if let Target::Attr { root, .. } = target {
                        if !self.locals.contains(root) {
                            self.report(root, None, UndefinedKind::Variable, line);
                        }
                    }
                    self.expr(value, line, called);
                }
                Stmt::Unpack { value, .. } => self.expr(value, line, called),
                Stmt::Expr { expr, .. } => self.expr(expr, line, called),
                Stmt::If { branches, orelse, .. } => {
                    for (cond, block) in branches {
                        self.expr(cond, line, called);
                        self.block(block, called);
                    }
                    if let Some(block) = orelse {
                        self.block(block, called);
                    }
                }
                Stmt::For { start, end, body, .. } => {
                    if let Some(s) = start {
                        self.expr(s, line, called);
                    }
                    self.expr(end, line, called);
                    self.block(body, called);
                }
                Stmt::While { cond, body, .. } => {
                    self.expr(cond, line, called);
                    self.block(body, called);
                }
            }
        }
    }

    fn expr(&mut self, e: &Expr, stmt_line: usize, called: &mut Vec<String>) {
        match e {
            Expr::Int(_) | Expr::Float(_) | Expr::Str(_) | Expr::Bool(_) => {}
            Expr::Name(n) => {
                if !self.locals.contains(n) {
                    self.report(n, None, UndefinedKind::Variable, stmt_line);
                }
            }
            Expr::Attr(recv, attr) => match recv.as_ref() {
                Expr::Name(root) if is_module(root) && !self.locals.contains(root) => {
                    if !module_has(root, attr) {
                        self.report(attr, Some(root), UndefinedKind::ModuleMember, stmt_line);
                    }
                }
                other => self.expr(other, stmt_line, called),
            },
            Expr::Call { callee, args, line } => {
                match callee.as_ref() {
                    Expr::Name(n) => {
                        let known = self.program.functions.contains_key(n)
                            || self.bindings.contains_key(n)
                            || BUILTINS.contains(&n.as_str());
                        if known {
                            called.push(n.clone());
                        } else {
                            self.report(n, None, UndefinedKind::Function, *line);
                        }
                    }
                    Expr::Attr(recv, method) => match recv.as_ref() {
                        Expr::Name(r) if *r == self.def.param => {
                            if !CONTROLLER_API.contains(&method.as_str()) {
                                self.report(method, Some(r), UndefinedKind::Method, *line);
                            }
                        }
                        Expr::Name(r) if is_module(r) && !self.locals.contains(r) => {
                            if !module_has(r, method) {
                                self.report(method, Some(r), UndefinedKind::ModuleMember, *line);
                            }
                        }
                        Expr::Name(r) => self.report(method, Some(r), UndefinedKind::Method, *line),
                        other => {
                            self.expr(other, *line, called);
                            self.report(method, Some("<expression>"), UndefinedKind::Method, *line);
                        }
                    },
                    _ => {}
                }
                for a in args {
                    self.expr(a, *line, called);
                }
            }
            Expr::Neg(inner) | Expr::Not(inner) => self.expr(inner, stmt_line, called),
            Expr::Binary(_, l, r) | Expr::Logic(_, l, r) => {
                self.expr(l, stmt_line, called);
                self.expr(r, stmt_line, called);
            }
            Expr::Compare(first, rest) => {
                self.expr(first, stmt_line, called);
                for (_, e) in rest {
                    self.expr(e, stmt_line, called);
                }
            }
        }
    }
}

/// Bare-name call targets in `program` that are not defined in it and are
/// not controller methods, known names (policy functions), module members or
/// builtins. First-occurrence order, without duplicates.
pub fn detect_undefined_calls(program: &Program, known_names: &HashSet<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for def in program.functions.values() {
        walk_exprs(&def.body, &mut |e| {
            if let Expr::Call { callee, .. } = e {
                if let Expr::Name(n) = callee.as_ref() {
                    let resolved = program.functions.contains_key(n)
                        || known_names.contains(n)
                        || CONTROLLER_API.contains(&n.as_str())
                        || BUILTINS.contains(&n.as_str())
                        || is_module_member(n);
                    if !resolved && !out.contains(n) {
                        out.push(n.clone());
                    }
                }
            }
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::parse_program;
    use std::sync::Arc;

    fn names(problems: &[UndefinedName]) -> Vec<String> {
        problems.iter().map(|p| p.to_string()).collect()
    }

    #[test]
    fn unknown_robot_method_is_reported() {
        let p = parse_program("def press_the_red_button(robot):\n    robot.set_digital_output(0, True)\n").unwrap();
        let err = static_check(&p, &Bindings::new()).unwrap_err();
        assert_eq!(err.len(), 1);
        assert_eq!(err[0].name, "set_digital_output");
        assert_eq!(err[0].kind, UndefinedKind::Method);
        assert_eq!(err[0].line, 2);
    }

    #[test]
    fn sandbox_escapes_are_undefined() {
        let src = "def f(robot):\n    open('x')\n    os.system('ls')\n    math.floor(1.5)\n    y = z + 1\n    robot.get_pose().foo()\n";
        let p = parse_program(src).unwrap();
        let err = static_check(&p, &Bindings::new()).unwrap_err();
        assert_eq!(names(&err), vec!["open", "os.system", "math.floor", "z", "<expression>.foo"]);
    }

    #[test]
    fn locals_modules_builtins_resolve() {
        let src = "def f(robot):\n    n = 3\n    for i in range(n):\n        x = math.cos(math.pi * i) + abs(-1)\n    (p, ok) = robot.find('a')\n    time.sleep(0.1)\n";
        let p = parse_program(src).unwrap();
        assert_eq!(static_check(&p, &Bindings::new()), Ok(()));
    }

    #[test]
    fn reachable_policy_functions_are_checked() {
        let policy = parse_program("def helper(robot):\n    missing(robot)\n").unwrap();
        let mut bindings = Bindings::new();
        bindings.insert("helper".into(), Arc::new(policy.functions["helper"].clone()));
        let p = parse_program("def f(robot):\n    helper(robot)\n").unwrap();
        let err = static_check(&p, &bindings).unwrap_err();
        assert_eq!(err[0].name, "missing");
        assert_eq!(err[0].function, "helper");
    }

    #[test]
    fn detects_helpers_in_first_occurrence_order() {
        let src = "def top(robot):\n    b_thing(robot)\n    a_thing(robot)\n    b_thing(robot)\n    robot.go()\n    cos(1)\n    known(robot)\n";
        let p = parse_program(src).unwrap();
        let known = HashSet::from(["known".to_string()]);
        assert_eq!(detect_undefined_calls(&p, &known), vec!["b_thing", "a_thing"]);
    }
}
