use indexmap::IndexMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoolOp {
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
    Name(String),
    Attr(Box<Expr>, String),
    /// `callee` is always a `Name` or an `Attr` on a `Name` root.
    Call { callee: Box<Expr>, args: Vec<Expr>, line: usize },
    Neg(Box<Expr>),
    Not(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    /// Chained comparison `a < b <= c`.
    Compare(Box<Expr>, Vec<(CmpOp, Expr)>),
    Logic(BoolOp, Box<Expr>, Box<Expr>),
}

/// Assignment target: a plain name or an attribute path rooted at a name.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Name(String),
    Attr { root: String, path: Vec<String> },
}

impl Target {
    pub fn root(&self) -> &str {
        match self {
            Target::Name(n) => n,
            Target::Attr { root, .. } => root,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugOp {
    Add,
    Sub,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Assign { target: Target, value: Expr, line: usize },
    AugAssign { target: Target, op: AugOp, value: Expr, line: usize },
    /// `(a, b) = call(...)`
    Unpack { names: [String; 2], value: Expr, line: usize },
    Expr { expr: Expr, line: usize },
    If { branches: Vec<(Expr, Vec<Stmt>)>, orelse: Option<Vec<Stmt>>, line: usize },
    For { var: String, start: Option<Expr>, end: Expr, body: Vec<Stmt>, line: usize },
    While { cond: Expr, body: Vec<Stmt>, line: usize },
}

impl Stmt {
    pub fn line(&self) -> usize {
        match self {
            Stmt::Assign { line, .. }
            | Stmt::AugAssign { line, .. }
            | Stmt::Unpack { line, .. }
            | Stmt::Expr { line, .. }
            | Stmt::If { line, .. }
            | Stmt::For { line, .. }
            | Stmt::While { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionDef {
    pub name: String,
    pub param: String,
    pub body: Vec<Stmt>,
    /// First and last source line (1-based, inclusive) of the definition.
    pub span: (usize, usize),
}

/// A parsed command-script source: an ordered set of one-parameter functions.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub source: String,
    pub functions: IndexMap<String, FunctionDef>,
    pub statement_count: usize,
}

impl Program {
    /// Source text of one function definition, exactly as written.
    pub fn function_source(&self, name: &str) -> Option<String> {
        let def = self.functions.get(name)?;
        let (start, end) = def.span;
        let text: Vec<&str> = self.source.lines().skip(start - 1).take(end + 1 - start).collect();
        Some(text.join("\n"))
    }
}

/// Visits every expression in a statement list, depth first.
pub fn walk_exprs<'a>(body: &'a [Stmt], f: &mut dyn FnMut(&'a Expr)) {
    fn expr<'a>(e: &'a Expr, f: &mut dyn FnMut(&'a Expr)) {
        f(e);
        match e {
            Expr::Attr(inner, _) | Expr::Neg(inner) | Expr::Not(inner) => expr(inner, f),
            Expr::Call { callee, args, .. } => {
                expr(callee, f);
                args.iter().for_each(|a| expr(a, f));
            }
            Expr::Binary(_, l, r) | Expr::Logic(_, l, r) => {
                expr(l, f);
                expr(r, f);
            }
            Expr::Compare(first, rest) => {
                expr(first, f);
                rest.iter().for_each(|(_, e)| expr(e, f));
            }
            Expr::Int(_) | Expr::Float(_) | Expr::Str(_) | Expr::Bool(_) | Expr::Name(_) => {}
        }
    }
    for stmt in body {
        match stmt {
            Stmt::Assign { value, .. } | Stmt::AugAssign { value, .. } | Stmt::Unpack { value, .. } => expr(value, f),
            Stmt::Expr { expr: e, .. } => expr(e, f),
            Stmt::If { branches, orelse, .. } => {
                for (cond, block) in branches {
                    expr(cond, f);
                    walk_exprs(block, f);
                }
                if let Some(block) = orelse {
                    walk_exprs(block, f);
                }
            }
            Stmt::For { start, end, body, .. } => {
                if let Some(s) = start {
                    expr(s, f);
                }
                expr(end, f);
                walk_exprs(body, f);
            }
            Stmt::While { cond, body, .. } => {
                expr(cond, f);
                walk_exprs(body, f);
            }
        }
    }
}

/// Visits every statement (including nested ones), depth first.
pub fn walk_stmts<'a>(body: &'a [Stmt], f: &mut dyn FnMut(&'a Stmt)) {
    for stmt in body {
        f(stmt);
        match stmt {
            Stmt::If { branches, orelse, .. } => {
                for (_, block) in branches {
                    walk_stmts(block, f);
                }
                if let Some(block) = orelse {
                    walk_stmts(block, f);
                }
            }
            Stmt::For { body, .. } | Stmt::While { body, .. } => walk_stmts(body, f),
            _ => {}
        }
    }
}
