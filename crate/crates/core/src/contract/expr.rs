//! Payoff and demand expressions.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := NUMBER | 'b' | 't' | func '(' args ')' | '(' expr ')' | '-' factor
//! func   := 'max' | 'min' | 'exp' | 'tanh' | 'abs'
//! ```
//!
//! `max` and `min` take two arguments, the others one.

use std::fmt;
use std::str::FromStr;

use crate::error::ExprError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Function {
    Max,
    Min,
    Exp,
    Tanh,
    Abs,
}

impl Function {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "max" => Function::Max,
            "min" => Function::Min,
            "exp" => Function::Exp,
            "tanh" => Function::Tanh,
            "abs" => Function::Abs,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Function::Max => "max",
            Function::Min => "min",
            Function::Exp => "exp",
            Function::Tanh => "tanh",
            Function::Abs => "abs",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Function::Max | Function::Min => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    Number(f64),
    /// Brownian level `b`.
    State,
    /// Time `t`.
    Time,
    Neg(Box<Expression>),
    Binary(BinaryOp, Box<Expression>, Box<Expression>),
    Call(Function, Vec<Expression>),
}

impl Expression {
    pub fn parse(src: &str) -> Result<Self, ExprError> {
        let tokens = lex(src)?;
        let mut parser = Parser { tokens, pos: 0, end: src.len() };
        let expr = parser.expr()?;
        match parser.peek() {
            None => Ok(expr),
            Some(tok) => Err(ExprError::Syntax {
                offset: tok.offset,
                expected: "operator or end of input".into(),
            }),
        }
    }

    pub fn constant(value: f64) -> Self {
        Expression::Number(value)
    }

    pub fn evaluate(&self, t: f64, b: f64) -> Result<f64, ExprError> {
        let v = self.eval_inner(t, b)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::NonFiniteResult)
        }
    }

    fn eval_inner(&self, t: f64, b: f64) -> Result<f64, ExprError> {
        Ok(match self {
            Expression::Number(x) => *x,
            Expression::State => b,
            Expression::Time => t,
            Expression::Neg(e) => -e.eval_inner(t, b)?,
            Expression::Binary(op, l, r) => {
                let l = l.eval_inner(t, b)?;
                let r = r.eval_inner(t, b)?;
                match op {
                    BinaryOp::Add => l + r,
                    BinaryOp::Sub => l - r,
                    BinaryOp::Mul => l * r,
                    BinaryOp::Div => {
                        if r == 0.0 {
                            return Err(ExprError::DivisionByZero);
                        }
                        l / r
                    }
                }
            }
            Expression::Call(f, args) => {
                let a = args[0].eval_inner(t, b)?;
                match f {
                    Function::Max => a.max(args[1].eval_inner(t, b)?),
                    Function::Min => a.min(args[1].eval_inner(t, b)?),
                    Function::Exp => a.exp(),
                    Function::Tanh => a.tanh(),
                    Function::Abs => a.abs(),
                }
            }
        })
    }

    /// Whether the value can depend on the Brownian level.
    pub fn references_state(&self) -> bool {
        match self {
            Expression::State => true,
            Expression::Number(_) | Expression::Time => false,
            Expression::Neg(e) => e.references_state(),
            Expression::Binary(_, l, r) => l.references_state() || r.references_state(),
            Expression::Call(_, args) => args.iter().any(Expression::references_state),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expression::Binary(op, ..) => op.precedence(),
            Expression::Neg(_) => 3,
            _ => 4,
        }
    }
}

impl FromStr for Expression {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expression::parse(s)
    }
}

/// Prints with the minimum parentheses needed to parse back to the same tree.
impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expression::Number(x) => write!(f, "{x}"),
            Expression::State => f.write_str("b"),
            Expression::Time => f.write_str("t"),
            Expression::Neg(e) => {
                if e.precedence() < 3 {
                    write!(f, "-({e})")
                } else {
                    write!(f, "-{e}")
                }
            }
            Expression::Binary(op, l, r) => {
                let p = op.precedence();
                if l.precedence() < p {
                    write!(f, "({l})")?;
                } else {
                    write!(f, "{l}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if r.precedence() <= p {
                    write!(f, "({r})")
                } else {
                    write!(f, "{r}")
                }
            }
            Expression::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    offset: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let kind = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => TokenKind::Plus,
            b'-' => TokenKind::Minus,
            b'*' if bytes.get(i + 1) == Some(&b'*') => {
                return Err(ExprError::Syntax {
                    offset: start,
                    expected: "operand (`**` is not an operator)".into(),
                });
            }
            b'*' => TokenKind::Star,
            b'/' => TokenKind::Slash,
            b'(' => TokenKind::LParen,
            b')' => TokenKind::RParen,
            b',' => TokenKind::Comma,
            b'0'..=b'9' | b'.' => {
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
                let text = &src[start..i];
                let value = text.parse::<f64>().map_err(|_| ExprError::Syntax {
                    offset: start,
                    expected: "number".into(),
                })?;
                tokens.push(Token { kind: TokenKind::Number(value), offset: start });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                tokens.push(Token { kind: TokenKind::Ident(src[start..i].to_string()), offset: start });
                continue;
            }
            _ => {
                return Err(ExprError::Syntax { offset: start, expected: "expression".into() });
            }
        };
        i += 1;
        tokens.push(Token { kind, offset: start });
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.end, |t| t.offset)
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if self.peek().is_some_and(|t| &t.kind == kind) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kind: TokenKind, what: &str) -> Result<(), ExprError> {
        if self.eat(&kind) {
            Ok(())
        } else {
            Err(ExprError::Syntax { offset: self.offset(), expected: what.into() })
        }
    }

    fn expr(&mut self) -> Result<Expression, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat(&TokenKind::Plus) {
                BinaryOp::Add
            } else if self.eat(&TokenKind::Minus) {
                BinaryOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expression::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expression, ExprError> {
        let mut lhs = self.factor()?;
        loop {
            let op = if self.eat(&TokenKind::Star) {
                BinaryOp::Mul
            } else if self.eat(&TokenKind::Slash) {
                BinaryOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.factor()?;
            lhs = Expression::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Expression, ExprError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(ExprError::Syntax { offset: self.end, expected: "operand".into() });
        };
        self.pos += 1;
        match tok.kind {
            TokenKind::Number(x) => Ok(Expression::Number(x)),
            TokenKind::Minus => Ok(Expression::Neg(Box::new(self.factor()?))),
            TokenKind::LParen => {
                let e = self.expr()?;
                self.expect(TokenKind::RParen, "`)`")?;
                Ok(e)
            }
            TokenKind::Ident(name) => match name.as_str() {
                "b" => Ok(Expression::State),
                "t" => Ok(Expression::Time),
                _ => {
                    let func = Function::from_name(&name).ok_or(ExprError::UnknownIdentifier {
                        name: name.clone(),
                        offset: tok.offset,
                    })?;
                    self.expect(TokenKind::LParen, "`(` after function name")?;
                    let mut args = vec![self.expr()?];
                    while args.len() < func.arity() {
                        self.expect(TokenKind::Comma, "`,`")?;
                        args.push(self.expr()?);
                    }
                    self.expect(TokenKind::RParen, "`)`")?;
                    Ok(Expression::Call(func, args))
                }
            },
            _ => Err(ExprError::Syntax { offset: tok.offset, expected: "operand".into() }),
        }
    }
}
