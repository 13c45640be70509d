//! Recursive-descent parser for the field expression language.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' '-'? number)?
//! atom   := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! Variables are `x1..xd`; for `d <= 2` the aliases `x` and `y` name the
//! first and second coordinate. `pi` is a named constant. The Unicode minus
//! sign is accepted wherever `-` is.

use std::fmt;

use super::ast::{Expr, Func};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax(String),
    UnknownIdentifier(String),
    VariableOutOfRange { index: usize, dim: usize },
    NonConstantExponent,
    Empty,
}

/// Parse failure with the byte offset into the source where it was detected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ParseErrorKind::Syntax(msg) => write!(f, "syntax error at offset {}: {msg}", self.offset),
            ParseErrorKind::UnknownIdentifier(id) => {
                write!(f, "unknown identifier `{id}` at offset {}", self.offset)
            }
            ParseErrorKind::VariableOutOfRange { index, dim } => write!(
                f,
                "variable x{} at offset {} exceeds dimension {dim}",
                index + 1,
                self.offset
            ),
            ParseErrorKind::NonConstantExponent => {
                write!(f, "non-constant exponent at offset {}", self.offset)
            }
            ParseErrorKind::Empty => write!(f, "empty expression"),
        }
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokenize(src: &'a str) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let (tok, at) = lx.next()?;
            let end = tok == Tok::End;
            out.push((tok, at));
            if end {
                return Ok(out);
            }
        }
    }

    fn peek_char(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn next(&mut self) -> Result<(Tok, usize), ParseError> {
        while let Some(c) = self.peek_char() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        let start = self.pos;
        let Some(c) = self.peek_char() else {
            return Ok((Tok::End, start));
        };
        let single = |t: Tok, lx: &mut Self| {
            lx.pos += c.len_utf8();
            Ok((t, start))
        };
        match c {
            '+' => single(Tok::Plus, self),
            '-' | '\u{2212}' => single(Tok::Minus, self),
            '*' => single(Tok::Star, self),
            '/' => single(Tok::Slash, self),
            '^' => single(Tok::Caret, self),
            '(' => single(Tok::LParen, self),
            ')' => single(Tok::RParen, self),
            c if c.is_ascii_digit() || c == '.' => self.number(start),
            c if c.is_ascii_alphabetic() || c == '_' => {
                let rest = &self.src[start..];
                let len = rest
                    .find(|ch: char| !(ch.is_ascii_alphanumeric() || ch == '_'))
                    .unwrap_or(rest.len());
                self.pos += len;
                Ok((Tok::Ident(rest[..len].to_string()), start))
            }
            other => Err(ParseError {
                offset: start,
                kind: ParseErrorKind::Syntax(format!("unexpected character `{other}`")),
            }),
        }
    }

    fn number(&mut self, start: usize) -> Result<(Tok, usize), ParseError> {
        let bytes = self.src.as_bytes();
        let mut i = start;
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
            i += 1;
        }
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            let mut j = i + 1;
            if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                j += 1;
            }
            if j < bytes.len() && bytes[j].is_ascii_digit() {
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = &self.src[start..i];
        self.pos = i;
        text.parse::<f64>()
            .map(|v| (Tok::Num(v), start))
            .map_err(|_| ParseError {
                offset: start,
                kind: ParseErrorKind::Syntax(format!("malformed number `{text}`")),
            })
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
    dim: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn offset(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn err<T>(&self, kind: ParseErrorKind) -> Result<T, ParseError> {
        Err(ParseError {
            offset: self.offset(),
            kind,
        })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let negative = if *self.peek() == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        match self.peek().clone() {
            Tok::Num(p) => {
                self.bump();
                let p = if negative { -p } else { p };
                if *self.peek() == Tok::Caret {
                    return self.err(ParseErrorKind::Syntax(
                        "chained exponents need parentheses".into(),
                    ));
                }
                Ok(Expr::Pow(Box::new(base), p))
            }
            Tok::Ident(ref id) if id == "pi" => {
                self.bump();
                let p = if negative { -std::f64::consts::PI } else { std::f64::consts::PI };
                Ok(Expr::Pow(Box::new(base), p))
            }
            Tok::End => self.err(ParseErrorKind::Syntax("expected exponent".into())),
            _ => self.err(ParseErrorKind::NonConstantExponent),
        }
    }

    fn variable_index(&self, id: &str) -> Option<usize> {
        match id {
            "x" if self.dim <= 2 => Some(0),
            "y" if self.dim <= 2 => Some(1),
            _ => {
                let digits = id.strip_prefix('x')?;
                if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                    return None;
                }
                let k: usize = digits.parse().ok()?;
                (k >= 1).then(|| k - 1)
            }
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let (tok, at) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                if *self.peek() != Tok::RParen {
                    return self.err(ParseErrorKind::Syntax("expected `)`".into()));
                }
                self.bump();
                Ok(inner)
            }
            Tok::Ident(id) => {
                if *self.peek() == Tok::LParen {
                    let Some(func) = Func::from_name(&id) else {
                        return Err(ParseError {
                            offset: at,
                            kind: ParseErrorKind::UnknownIdentifier(id),
                        });
                    };
                    self.bump();
                    let arg = self.expr()?;
                    if *self.peek() != Tok::RParen {
                        return self.err(ParseErrorKind::Syntax("expected `)`".into()));
                    }
                    self.bump();
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                if id == "pi" {
                    return Ok(Expr::Const(std::f64::consts::PI));
                }
                match self.variable_index(&id) {
                    Some(index) if index < self.dim => Ok(Expr::Var(index)),
                    Some(index) => Err(ParseError {
                        offset: at,
                        kind: ParseErrorKind::VariableOutOfRange {
                            index,
                            dim: self.dim,
                        },
                    }),
                    None => Err(ParseError {
                        offset: at,
                        kind: ParseErrorKind::UnknownIdentifier(id),
                    }),
                }
            }
            Tok::End => Err(ParseError {
                offset: at,
                kind: ParseErrorKind::Syntax("unexpected end of input".into()),
            }),
            other => Err(ParseError {
                offset: at,
                kind: ParseErrorKind::Syntax(format!("unexpected token {other:?}")),
            }),
        }
    }
}

/// Parse `src` as a scalar field over `dim` variables.
pub fn parse_expression(src: &str, dim: usize) -> Result<Expr, ParseError> {
    if src.trim().is_empty() {
        return Err(ParseError {
            offset: 0,
            kind: ParseErrorKind::Empty,
        });
    }
    let toks = Lexer::tokenize(src)?;
    let mut p = Parser { toks, at: 0, dim };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return p.err(ParseErrorKind::Syntax("trailing input".into()));
    }
    Ok(e)
}
