//! Recursive-descent parser. Accepts exactly the command-script subset and
//! reports anything else as a `ParseError` carrying the offending line.

use indexmap::IndexMap;

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::ParseError;

pub fn parse_program(source: &str) -> Result<Program, ParseError> {
    let tokens = tokenize(source)?;
    let mut p = Parser { tokens, pos: 0 };
    let mut functions = IndexMap::new();
    while !p.at(&Tok::Eof) {
        let line = p.line();
        if !p.at(&Tok::Def) {
            if p.at(&Tok::Indent) {
                return Err(ParseError::new(line, "unexpected indent"));
            }
            return Err(ParseError::new(line, "only function definitions are allowed at the top level"));
        }
        let def = p.funcdef()?;
        if functions.contains_key(&def.name) {
            return Err(ParseError::new(def.span.0, format!("function '{}' is defined twice", def.name)));
        }
        functions.insert(def.name.clone(), def);
    }
    let mut statement_count = 0;
    for def in functions.values() {
        walk_stmts(&def.body, &mut |_| statement_count += 1);
    }
    Ok(Program { source: source.to_string(), functions, statement_count })
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn line(&self) -> usize {
        self.tokens[self.pos].line
    }

    fn at(&self, tok: &Tok) -> bool {
        self.peek() == tok
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.at(tok) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Token, ParseError> {
        if self.at(&tok) {
            Ok(self.bump())
        } else {
            Err(self.unexpected(what))
        }
    }

    fn unexpected(&self, what: &str) -> ParseError {
        ParseError::new(self.line(), format!("expected {what}, found {}", self.peek().describe()))
    }

    fn name(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Name(n) => {
                self.bump();
                Ok(n)
            }
            _ => Err(self.unexpected(what)),
        }
    }

    fn funcdef(&mut self) -> Result<FunctionDef, ParseError> {
        let start = self.expect(Tok::Def, "'def'")?.line;
        let name = self.name("function name")?;
        self.expect(Tok::LParen, "'('")?;
        if self.at(&Tok::RParen) {
            return Err(ParseError::new(start, format!("function '{name}' must take exactly one parameter")));
        }
        let param = self.name("parameter name")?;
        if !self.at(&Tok::RParen) {
            return Err(ParseError::new(start, format!("function '{name}' must take exactly one parameter")));
        }
        self.bump();
        let body = self.block()?;
        let end = self.tokens[..self.pos]
            .iter()
            .rev()
            .find(|t| t.tok == Tok::Newline)
            .map_or(start, |t| t.line);
        Ok(FunctionDef { name, param, body, span: (start, end) })
    }

    /// `':' NEWLINE INDENT stmt+ DEDENT`, or a simple statement on the same line.
    fn block(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.expect(Tok::Colon, "':'")?;
        if !self.at(&Tok::Newline) {
            let stmt = self.simple_stmt()?;
            self.expect(Tok::Newline, "end of line")?;
            return Ok(vec![stmt]);
        }
        self.bump();
        if !self.at(&Tok::Indent) {
            return Err(self.unexpected("an indented block"));
        }
        self.bump();
        let mut body = Vec::new();
        while !self.at(&Tok::Dedent) && !self.at(&Tok::Eof) {
            body.push(self.stmt()?);
        }
        self.eat(&Tok::Dedent);
        Ok(body)
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        let line = self.line();
        match self.peek() {
            Tok::Def => Err(ParseError::new(line, "nested function definitions are not supported")),
            Tok::Indent => Err(ParseError::new(line, "unexpected indent")),
            Tok::If => self.if_stmt(),
            Tok::For => self.for_stmt(),
            Tok::While => {
                self.bump();
                let cond = self.expr()?;
                let body = self.block()?;
                Ok(Stmt::While { cond, body, line })
            }
            Tok::Elif | Tok::Else => Err(ParseError::new(line, "'elif'/'else' without a matching 'if'")),
            _ => {
                let stmt = self.simple_stmt()?;
                self.expect(Tok::Newline, "end of line")?;
                Ok(stmt)
            }
        }
    }

    fn if_stmt(&mut self) -> Result<Stmt, ParseError> {
        let line = self.expect(Tok::If, "'if'")?.line;
        let mut branches = vec![(self.expr()?, self.block()?)];
        let mut orelse = None;
        loop {
            if self.eat(&Tok::Elif) {
                branches.push((self.expr()?, self.block()?));
            } else if self.eat(&Tok::Else) {
                orelse = Some(self.block()?);
                break;
            } else {
                break;
            }
        }
        Ok(Stmt::If { branches, orelse, line })
    }

    fn for_stmt(&mut self) -> Result<Stmt, ParseError> {
        let line = self.expect(Tok::For, "'for'")?.line;
        let var = self.name("loop variable")?;
        self.expect(Tok::In, "'in'")?;
        match self.peek() {
            Tok::Name(n) if n == "range" => {
                self.bump();
            }
            _ => return Err(ParseError::new(line, "for-loops may only iterate over range(...)")),
        }
        self.expect(Tok::LParen, "'('")?;
        let first = self.expr()?;
        let (start, end) = if self.eat(&Tok::Comma) {
            let second = self.expr()?;
            (Some(first), second)
        } else {
            (None, first)
        };
        if self.at(&Tok::Comma) {
            return Err(ParseError::new(line, "range() with a step is not supported"));
        }
        self.expect(Tok::RParen, "')'")?;
        let body = self.block()?;
        Ok(Stmt::For { var, start, end, body, line })
    }

    fn simple_stmt(&mut self) -> Result<Stmt, ParseError> {
        let line = self.line();
        if let Some(names) = self.unpack_target() {
            let value = self.expr()?;
            if !matches!(value, Expr::Call { .. }) {
                return Err(ParseError::new(line, "tuple destructuring requires a call on the right-hand side"));
            }
            return Ok(Stmt::Unpack { names, value, line });
        }
        let lhs = self.expr()?;
        let aug = match self.peek() {
            Tok::Assign => None,
            Tok::PlusAssign => Some(AugOp::Add),
            Tok::MinusAssign => Some(AugOp::Sub),
            Tok::Comma => return Err(ParseError::new(line, "tuple expressions are not supported")),
            _ => return Ok(Stmt::Expr { expr: lhs, line }),
        };
        self.bump();
        let target = to_target(&lhs).ok_or_else(|| ParseError::new(line, "invalid assignment target"))?;
        let value = self.expr()?;
        if self.at(&Tok::Assign) {
            return Err(ParseError::new(line, "chained assignment is not supported"));
        }
        Ok(match aug {
            None => Stmt::Assign { target, value, line },
            Some(op) => Stmt::AugAssign { target, op, value, line },
        })
    }

    /// Recognizes `(a, b) =` and `a, b =`, consuming them when present.
    fn unpack_target(&mut self) -> Option<[String; 2]> {
        let shapes: [&[fn(&Tok) -> bool]; 2] = [
            &[is_lparen, is_name, is_comma, is_name, is_rparen, is_assign],
            &[is_name, is_comma, is_name, is_assign],
        ];
        for shape in shapes {
            if shape.iter().enumerate().all(|(i, f)| f(self.peek_at(i))) {
                let mut names = Vec::new();
                for _ in 0..shape.len() {
                    if let Tok::Name(n) = self.bump().tok {
                        names.push(n);
                    }
                }
                return Some([names[0].clone(), names[1].clone()]);
            }
        }
        None
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.and_expr()?;
        while self.eat(&Tok::Or) {
            let rhs = self.and_expr()?;
            lhs = Expr::Logic(BoolOp::Or, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.not_expr()?;
        while self.eat(&Tok::And) {
            let rhs = self.not_expr()?;
            lhs = Expr::Logic(BoolOp::And, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr, ParseError> {
        if self.eat(&Tok::Not) {
            return Ok(Expr::Not(Box::new(self.not_expr()?)));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, ParseError> {
        let first = self.arith()?;
        let mut rest = Vec::new();
        loop {
            let op = match self.peek() {
                Tok::Eq => CmpOp::Eq,
                Tok::Ne => CmpOp::Ne,
                Tok::Lt => CmpOp::Lt,
                Tok::Le => CmpOp::Le,
                Tok::Gt => CmpOp::Gt,
                Tok::Ge => CmpOp::Ge,
                Tok::In => return Err(ParseError::new(self.line(), "'in' tests are not supported")),
                _ => break,
            };
            self.bump();
            rest.push((op, self.arith()?));
        }
        Ok(if rest.is_empty() { first } else { Expr::Compare(Box::new(first), rest) })
    }

    fn arith(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(&Tok::Minus) {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat(&Tok::Plus) {
            return self.unary();
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.atom()?;
        loop {
            if self.eat(&Tok::Dot) {
                let attr = self.name("attribute name")?;
                e = Expr::Attr(Box::new(e), attr);
            } else if self.at(&Tok::LParen) {
                let line = self.line();
                if !is_callable_shape(&e) {
                    return Err(ParseError::new(line, "only named functions and methods can be called"));
                }
                self.bump();
                let mut args = Vec::new();
                while !self.at(&Tok::RParen) {
                    args.push(self.expr()?);
                    if self.at(&Tok::Assign) {
                        return Err(ParseError::new(line, "keyword arguments are not supported"));
                    }
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                }
                self.expect(Tok::RParen, "')'")?;
                e = Expr::Call { callee: Box::new(e), args, line };
            } else {
                break;
            }
        }
        Ok(e)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let line = self.line();
        let tok = self.bump().tok;
        Ok(match tok {
            Tok::Int(i) => Expr::Int(i),
            Tok::Float(f) => Expr::Float(f),
            Tok::Str(mut s) => {
                // adjacent literals concatenate
                while let Tok::Str(next) = self.peek().clone() {
                    self.bump();
                    s.push_str(&next);
                }
                Expr::Str(s)
            }
            Tok::True => Expr::Bool(true),
            Tok::False => Expr::Bool(false),
            Tok::Name(n) => Expr::Name(n),
            Tok::LParen => {
                let inner = self.expr()?;
                if self.at(&Tok::Comma) {
                    return Err(ParseError::new(line, "tuple expressions are not supported"));
                }
                self.expect(Tok::RParen, "')'")?;
                inner
            }
            other => {
                return Err(ParseError::new(line, format!("unexpected {}", other.describe())));
            }
        })
    }
}

fn is_lparen(t: &Tok) -> bool {
    *t == Tok::LParen
}
fn is_rparen(t: &Tok) -> bool {
    *t == Tok::RParen
}
fn is_comma(t: &Tok) -> bool {
    *t == Tok::Comma
}
fn is_assign(t: &Tok) -> bool {
    *t == Tok::Assign
}
fn is_name(t: &Tok) -> bool {
    matches!(t, Tok::Name(_))
}

fn is_callable_shape(e: &Expr) -> bool {
    matches!(e, Expr::Name(_) | Expr::Attr(..))
}

fn to_target(e: &Expr) -> Option<Target> {
    match e {
        Expr::Name(n) => Some(Target::Name(n.clone())),
        Expr::Attr(..) => {
            let mut path = Vec::new();
            let mut cur = e;
            while let Expr::Attr(inner, attr) = cur {
                path.push(attr.clone());
                cur = inner;
            }
            match cur {
                Expr::Name(root) => {
                    path.reverse();
                    Some(Target::Attr { root: root.clone(), path })
                }
                _ => None,
            }
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn move_listing() {
        let p = parse_program(
            "def move_a_little_down(robot):\n    waypoint = robot.get_pose()\n    waypoint.position.z -= 0.05\n    robot.add_waypoint(waypoint)\n    robot.go()\n",
        )
        .unwrap();
        assert_eq!(p.functions.len(), 1);
        assert_eq!(p.statement_count, 4);
        let def = &p.functions["move_a_little_down"];
        assert_eq!(def.param, "robot");
        assert_eq!(def.span, (1, 5));
        assert!(matches!(
            &def.body[1],
            Stmt::AugAssign { target: Target::Attr { root, path }, op: AugOp::Sub, .. }
                if root == "waypoint" && path == &["position", "z"]
        ));
    }

    #[test]
    fn unpack_forms() {
        let p = parse_program("def f(robot):\n    (a, b) = robot.find('x')\n    c, d = robot.find('y')\n").unwrap();
        let body = &p.functions["f"].body;
        assert!(matches!(&body[0], Stmt::Unpack { names, .. } if names[0] == "a" && names[1] == "b"));
        assert!(matches!(&body[1], Stmt::Unpack { names, .. } if names[0] == "c"));
        assert!(parse_program("def f(robot):\n    (a, b) = 3\n").is_err());
    }

    #[test]
    fn if_elif_else_and_single_line_blocks() {
        let src = "def f(robot):\n    if(not x):\n        robot.say('a')\n    elif x == 1 and y < 2 or z:\n        robot.say('b')\n    else: robot.say('c')\n";
        let p = parse_program(src).unwrap();
        match &p.functions["f"].body[0] {
            Stmt::If { branches, orelse, .. } => {
                assert_eq!(branches.len(), 2);
                assert!(orelse.is_some());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn range_forms() {
        assert!(parse_program("def f(robot):\n    for i in range(3):\n        x = i\n").is_ok());
        assert!(parse_program("def f(robot):\n    for i in range(1, 3):\n        x = i\n").is_ok());
        assert!(parse_program("def f(robot):\n    for i in range(1, 3, 2):\n        x = i\n").is_err());
        assert!(parse_program("def f(robot):\n    for i in items:\n        x = i\n").is_err());
    }

    #[test]
    fn rejects_out_of_subset() {
        let cases = [
            ("def f(robot):\n    def g(robot):\n        x = 1\n", 2),
            ("def f(robot):\n    x = a[0]\n", 2),
            ("def f(robot):\n    import os\n", 2),
            ("x = 1\n", 1),
            ("def f(robot, other):\n    x = 1\n", 1),
            ("def f():\n    x = 1\n", 1),
            ("def f(robot):\n    return 1\n", 2),
            ("def f(robot):\n    x = (1, 2)\n", 2),
            ("def f(robot):\n    robot.go(speed=1)\n", 2),
            ("def f(robot):\n    robot.go()()\n", 2),
            ("def f(robot):\n    x = 1\ndef f(robot):\n    x = 2\n", 3),
            ("def f(robot):\n    for i in range(3)):\n        x = 1\n", 2),
        ];
        for (src, line) in cases {
            let err = parse_program(src).expect_err(src);
            assert_eq!(err.line, line, "{src}: {err}");
        }
    }

    #[test]
    fn function_source_slices_definition() {
        let src = "# header\ndef a(robot):\n    robot.go()\n\n# between\ndef b(robot):\n    a(robot)\n";
        let p = parse_program(src).unwrap();
        assert_eq!(p.function_source("a").unwrap(), "def a(robot):\n    robot.go()");
        assert_eq!(p.function_source("b").unwrap(), "def b(robot):\n    a(robot)");
    }
}
