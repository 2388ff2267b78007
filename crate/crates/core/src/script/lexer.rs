//! Tokenizer for the command-script language (an indentation-sensitive
//! Python subset). Produces explicit `Newline`/`Indent`/`Dedent` tokens.
//! Newlines inside brackets are joined, as in Python.

use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Name(String),
    Int(i64),
    Float(f64),
    Str(String),
    Def,
    If,
    Elif,
    Else,
    For,
    In,
    While,
    Not,
    And,
    Or,
    True,
    False,
    LParen,
    RParen,
    Comma,
    Dot,
    Colon,
    Assign,
    PlusAssign,
    MinusAssign,
    Plus,
    Minus,
    Star,
    Slash,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Newline,
    Indent,
    Dedent,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Name(n) => format!("name '{n}'"),
            Tok::Int(i) => format!("number {i}"),
            Tok::Float(f) => format!("number {f}"),
            Tok::Str(_) => "string literal".to_string(),
            Tok::Newline => "end of line".to_string(),
            Tok::Indent => "indent".to_string(),
            Tok::Dedent => "dedent".to_string(),
            Tok::Eof => "end of input".to_string(),
            other => format!("'{}'", other.symbol()),
        }
    }

    fn symbol(&self) -> &'static str {
        match self {
            Tok::Def => "def",
            Tok::If => "if",
            Tok::Elif => "elif",
            Tok::Else => "else",
            Tok::For => "for",
            Tok::In => "in",
            Tok::While => "while",
            Tok::Not => "not",
            Tok::And => "and",
            Tok::Or => "or",
            Tok::True => "True",
            Tok::False => "False",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::Comma => ",",
            Tok::Dot => ".",
            Tok::Colon => ":",
            Tok::Assign => "=",
            Tok::PlusAssign => "+=",
            Tok::MinusAssign => "-=",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::Eq => "==",
            Tok::Ne => "!=",
            Tok::Lt => "<",
            Tok::Le => "<=",
            Tok::Gt => ">",
            Tok::Ge => ">=",
            _ => "?",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
}

/// Python keywords outside the accepted subset, rejected with a clear message.
const REJECTED_KEYWORDS: &[&str] = &[
    "import", "from", "return", "class", "lambda", "with", "try", "except", "finally", "raise",
    "global", "nonlocal", "del", "yield", "pass", "break", "continue", "assert", "async", "await",
    "is", "None", "as",
];

fn keyword(word: &str) -> Option<Tok> {
    Some(match word {
        "def" => Tok::Def,
        "if" => Tok::If,
        "elif" => Tok::Elif,
        "else" => Tok::Else,
        "for" => Tok::For,
        "in" => Tok::In,
        "while" => Tok::While,
        "not" => Tok::Not,
        "and" => Tok::And,
        "or" => Tok::Or,
        "True" => Tok::True,
        "False" => Tok::False,
        _ => return None,
    })
}

fn indent_width(prefix: &str, line: usize) -> Result<usize, ParseError> {
    let mut width = 0;
    for c in prefix.chars() {
        match c {
            ' ' => width += 1,
            '\t' => width = (width / 8 + 1) * 8,
            _ => return Err(ParseError::new(line, "unexpected character in indentation")),
        }
    }
    Ok(width)
}

pub fn tokenize(source: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let mut indents: Vec<usize> = vec![0];
    let mut depth = 0usize;

    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim_start_matches([' ', '\t']);
        if depth == 0 {
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let width = indent_width(&raw[..raw.len() - trimmed.len()], line)?;
            let current = *indents.last().unwrap();
            if width > current {
                indents.push(width);
                out.push(Token { tok: Tok::Indent, line });
            } else {
                while width < *indents.last().unwrap() {
                    indents.pop();
                    out.push(Token { tok: Tok::Dedent, line });
                }
                if width != *indents.last().unwrap() {
                    return Err(ParseError::new(line, "inconsistent dedent"));
                }
            }
        }
        lex_line(trimmed, line, &mut depth, &mut out)?;
        if depth == 0 {
            out.push(Token { tok: Tok::Newline, line });
        }
    }
    let last = source.lines().count().max(1);
    if depth > 0 {
        return Err(ParseError::new(last, "unclosed parenthesis"));
    }
    while indents.len() > 1 {
        indents.pop();
        out.push(Token { tok: Tok::Dedent, line: last });
    }
    out.push(Token { tok: Tok::Eof, line: last });
    Ok(out)
}

fn lex_line(text: &str, line: usize, depth: &mut usize, out: &mut Vec<Token>) -> Result<(), ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    let push = |out: &mut Vec<Token>, tok: Tok| out.push(Token { tok, line });
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' | '\r' => i += 1,
            '#' => break,
            '(' => {
                *depth += 1;
                push(out, Tok::LParen);
                i += 1;
            }
            ')' => {
                if *depth == 0 {
                    return Err(ParseError::new(line, "unmatched ')'"));
                }
                *depth -= 1;
                push(out, Tok::RParen);
                i += 1;
            }
            ',' => {
                push(out, Tok::Comma);
                i += 1;
            }
            ':' => {
                push(out, Tok::Colon);
                i += 1;
            }
            '.' if !chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) => {
                push(out, Tok::Dot);
                i += 1;
            }
            '+' | '-' | '*' | '/' | '=' | '!' | '<' | '>' => {
                let next = chars.get(i + 1).copied();
                let (tok, len) = match (c, next) {
                    ('+', Some('=')) => (Tok::PlusAssign, 2),
                    ('-', Some('=')) => (Tok::MinusAssign, 2),
                    ('=', Some('=')) => (Tok::Eq, 2),
                    ('!', Some('=')) => (Tok::Ne, 2),
                    ('<', Some('=')) => (Tok::Le, 2),
                    ('>', Some('=')) => (Tok::Ge, 2),
                    ('*', Some('*')) | ('/', Some('/')) => {
                        return Err(ParseError::new(line, format!("operator '{c}{c}' is not supported")))
                    }
                    ('*', Some('=')) | ('/', Some('=')) => {
                        return Err(ParseError::new(line, format!("operator '{c}=' is not supported")))
                    }
                    ('+', _) => (Tok::Plus, 1),
                    ('-', _) => (Tok::Minus, 1),
                    ('*', _) => (Tok::Star, 1),
                    ('/', _) => (Tok::Slash, 1),
                    ('=', _) => (Tok::Assign, 1),
                    ('<', _) => (Tok::Lt, 1),
                    ('>', _) => (Tok::Gt, 1),
                    _ => return Err(ParseError::new(line, "unexpected '!'")),
                };
                push(out, tok);
                i += len;
            }
            '\'' | '"' => {
                let (s, next) = lex_string(&chars, i, line)?;
                push(out, Tok::Str(s));
                i = next;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                let mut seen_dot = false;
                let mut seen_exp = false;
                while i < chars.len() {
                    let d = chars[i];
                    if d.is_ascii_digit() || d == '_' {
                        i += 1;
                    } else if d == '.' && !seen_dot && !seen_exp {
                        seen_dot = true;
                        i += 1;
                    } else if (d == 'e' || d == 'E') && !seen_exp {
                        seen_exp = true;
                        i += 1;
                        if matches!(chars.get(i), Some('+') | Some('-')) {
                            i += 1;
                        }
                    } else {
                        break;
                    }
                }
                if chars.get(i).is_some_and(|d| d.is_alphabetic() || *d == '_') {
                    return Err(ParseError::new(line, "malformed number literal"));
                }
                let literal: String = chars[start..i].iter().filter(|d| **d != '_').collect();
                let tok = if seen_dot || seen_exp {
                    Tok::Float(literal.parse().map_err(|_| ParseError::new(line, "malformed number literal"))?)
                } else {
                    Tok::Int(literal.parse().map_err(|_| ParseError::new(line, "integer literal out of range"))?)
                };
                push(out, tok);
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                if REJECTED_KEYWORDS.contains(&word.as_str()) {
                    return Err(ParseError::new(line, format!("'{word}' is not supported in command scripts")));
                }
                push(out, keyword(&word).unwrap_or(Tok::Name(word)));
            }
            '[' | ']' => return Err(ParseError::new(line, "subscripts and list literals are not supported")),
            '{' | '}' => return Err(ParseError::new(line, "dict and set literals are not supported")),
            other => return Err(ParseError::new(line, format!("unexpected character '{other}'"))),
        }
    }
    Ok(())
}

fn lex_string(chars: &[char], start: usize, line: usize) -> Result<(String, usize), ParseError> {
    let quote = chars[start];
    let mut i = start + 1;
    let mut s = String::new();
    while i < chars.len() {
        let c = chars[i];
        if c == quote {
            return Ok((s, i + 1));
        }
        if c == '\\' {
            let esc = chars.get(i + 1).ok_or_else(|| ParseError::new(line, "unterminated string literal"))?;
            s.push(match esc {
                'n' => '\n',
                't' => '\t',
                '\\' => '\\',
                '\'' => '\'',
                '"' => '"',
                other => return Err(ParseError::new(line, format!("unsupported escape '\\{other}'"))),
            });
            i += 2;
        } else {
            s.push(c);
            i += 1;
        }
    }
    Err(ParseError::new(line, "unterminated string literal"))
}
