//! Scalar coefficient expressions.
//!
//! Model coefficients (drifts, loadings, rates, volatilities) are written as
//! small arithmetic expressions over the factor state, e.g. `1/x1^2` or
//! `exp(-x1^2/2)`. This module parses them into an immutable [`ExprAst`] and
//! evaluates them at a state vector.
//!
//! Grammar, from loosest to tightest binding:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?            right-associative
//! primary := number | variable | call | '(' expr ')'
//! call    := ('exp'|'log'|'sqrt'|'sinh'|'abs') '(' expr ')'
//!          | ('min'|'max') '(' expr ',' expr ')'
//! ```
//!
//! Evaluation never returns a non-finite value: division by zero, logarithms
//! and square roots of negative numbers, and overflow are reported as
//! [`EvalError`]s naming the offending sub-expression.

use std::fmt;

use thiserror::Error;

/// Largest integer exponent evaluated by repeated multiplication.
const MAX_INTEGER_POWER: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Sqrt,
    Sinh,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Min,
    Max,
}

/// A node of the expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    /// Zero-based variable index.
    Var(usize),
    Unary(UnaryOp, Box<Node>),
    Binary(BinaryOp, Box<Node>, Box<Node>),
}

/// A parsed expression together with the names of the variables it may use.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprAst {
    root: Node,
    names: Vec<String>,
    program: Program,
}

/// Postfix form of the tree, evaluated on a small fixed stack.
#[derive(Debug, Clone, PartialEq)]
struct Program {
    code: Vec<Instr>,
    max_stack: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Instr {
    Const(f64),
    Var(usize),
    Neg,
    Exp,
    Log,
    Sqrt,
    Sinh,
    Abs,
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    /// Power with a literal small integer exponent.
    PowI(i32),
    Min,
    Max,
}

const FAST_STACK: usize = 16;

impl Program {
    fn compile(root: &Node) -> Self {
        fn emit(node: &Node, code: &mut Vec<Instr>, depth: usize, max: &mut usize) {
            *max = (*max).max(depth + 1);
            match node {
                Node::Const(c) => code.push(Instr::Const(*c)),
                Node::Var(k) => code.push(Instr::Var(*k)),
                Node::Unary(op, arg) => {
                    emit(arg, code, depth, max);
                    code.push(match op {
                        UnaryOp::Neg => Instr::Neg,
                        UnaryOp::Exp => Instr::Exp,
                        UnaryOp::Log => Instr::Log,
                        UnaryOp::Sqrt => Instr::Sqrt,
                        UnaryOp::Sinh => Instr::Sinh,
                        UnaryOp::Abs => Instr::Abs,
                    });
                }
                Node::Binary(BinaryOp::Pow, lhs, rhs)
                    if matches!(**rhs, Node::Const(e)
                        if e.fract() == 0.0 && e.abs() <= MAX_INTEGER_POWER) =>
                {
                    let Node::Const(e) = **rhs else {
                        unreachable!()
                    };
                    emit(lhs, code, depth, max);
                    code.push(Instr::PowI(e as i32));
                }
                Node::Binary(op, lhs, rhs) => {
                    emit(lhs, code, depth, max);
                    emit(rhs, code, depth + 1, max);
                    code.push(match op {
                        BinaryOp::Add => Instr::Add,
                        BinaryOp::Sub => Instr::Sub,
                        BinaryOp::Mul => Instr::Mul,
                        BinaryOp::Div => Instr::Div,
                        BinaryOp::Pow => Instr::Pow,
                        BinaryOp::Min => Instr::Min,
                        BinaryOp::Max => Instr::Max,
                    });
                }
            }
        }
        let mut code = Vec::new();
        let mut max_stack = 0;
        emit(root, &mut code, 0, &mut max_stack);
        Program { code, max_stack }
    }

    /// Value of the expression, or `None` on any domain error or
    /// non-finite intermediate (or if the stack is too deep).
    #[inline]
    fn run(&self, x: &[f64]) -> Option<f64> {
        if self.max_stack > FAST_STACK {
            return None;
        }
        let mut stack = [0.0f64; FAST_STACK];
        let mut top = 0usize;
        for instr in &self.code {
            let value = match *instr {
                Instr::Const(c) => {
                    top += 1;
                    c
                }
                Instr::Var(k) => {
                    top += 1;
                    *x.get(k)?
                }
                unary @ (Instr::Neg
                | Instr::Exp
                | Instr::Log
                | Instr::Sqrt
                | Instr::Sinh
                | Instr::Abs
                | Instr::PowI(_)) => {
                    let a = stack[top - 1];
                    match unary {
                        Instr::Neg => -a,
                        Instr::Exp => a.exp(),
                        Instr::Log if a <= 0.0 => return None,
                        Instr::Log => a.ln(),
                        Instr::Sqrt if a < 0.0 => return None,
                        Instr::Sqrt => a.sqrt(),
                        Instr::Sinh => a.sinh(),
                        Instr::Abs => a.abs(),
                        Instr::PowI(e) if a == 0.0 && e < 0 => return None,
                        Instr::PowI(e) => a.powi(e),
                        _ => unreachable!(),
                    }
                }
                binary => {
                    top -= 1;
                    let (a, b) = (stack[top - 1], stack[top]);
                    match binary {
                        Instr::Add => a + b,
                        Instr::Sub => a - b,
                        Instr::Mul => a * b,
                        Instr::Div if b == 0.0 => return None,
                        Instr::Div => a / b,
                        Instr::Pow => pow_value(a, b).ok()?,
                        Instr::Min => a.min(b),
                        Instr::Max => a.max(b),
                        _ => unreachable!(),
                    }
                }
            };
            if !value.is_finite() {
                return None;
            }
            stack[top - 1] = value;
        }
        Some(stack[0])
    }
}

fn pow_value(base: f64, exponent: f64) -> Result<f64, EvalErrorKind> {
    if exponent.fract() == 0.0 && exponent.abs() <= MAX_INTEGER_POWER {
        if base == 0.0 && exponent < 0.0 {
            return Err(EvalErrorKind::DivisionByZero);
        }
        return Ok(base.powi(exponent as i32));
    }
    if base > 0.0 {
        Ok((exponent * base.ln()).exp())
    } else if base == 0.0 {
        if exponent > 0.0 {
            Ok(0.0)
        } else {
            Err(EvalErrorKind::DivisionByZero)
        }
    } else {
        Err(EvalErrorKind::PowDomain)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("empty expression")]
    Empty,
    #[error("unexpected character `{0}`")]
    UnexpectedChar(char),
    #[error("unexpected `{0}`")]
    UnexpectedToken(String),
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("invalid number `{0}`")]
    InvalidNumber(String),
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("variable `{name}` is out of range for state dimension {dim}")]
    VariableOutOfRange { name: String, dim: usize },
    #[error("function `{name}` takes {expected} argument(s)")]
    Arity { name: String, expected: usize },
}

/// Syntax error with the byte offset where it was detected.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind} at position {position}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub position: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalErrorKind {
    DivisionByZero,
    LogDomain,
    SqrtDomain,
    PowDomain,
    NonFinite,
    StateDimension,
}

impl fmt::Display for EvalErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EvalErrorKind::DivisionByZero => "division by zero",
            EvalErrorKind::LogDomain => "logarithm of a non-positive number",
            EvalErrorKind::SqrtDomain => "square root of a negative number",
            EvalErrorKind::PowDomain => "non-integer power of a negative number",
            EvalErrorKind::NonFinite => "non-finite result",
            EvalErrorKind::StateDimension => "state vector has the wrong length",
        };
        f.write_str(s)
    }
}

/// Domain error raised during evaluation; `node` is the offending sub-expression.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind} in `{node}`")]
pub struct EvalError {
    pub kind: EvalErrorKind,
    pub node: String,
}

impl ExprAst {
    /// Parses `source` over the state variables `x1..x{dim}`.
    pub fn parse(source: &str, dim: usize) -> Result<Self, ParseError> {
        let vars = Variables::Indexed { dim };
        let root = Parser::new(source, &vars)?.parse_all()?;
        Ok(Self::from_parts(root, vars.names()))
    }

    /// Parses `source` over an explicit list of variable names.
    pub fn parse_with_names(source: &str, names: &[&str]) -> Result<Self, ParseError> {
        let vars = Variables::Named(names.iter().map(|s| s.to_string()).collect());
        let root = Parser::new(source, &vars)?.parse_all()?;
        Ok(Self::from_parts(root, vars.names()))
    }

    /// A constant expression over `dim` state variables.
    pub fn constant(value: f64, dim: usize) -> Self {
        Self::from_parts(Node::Const(value), Variables::Indexed { dim }.names())
    }

    fn from_parts(root: Node, names: Vec<String>) -> Self {
        let program = Program::compile(&root);
        ExprAst {
            root,
            names,
            program,
        }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Number of variables the expression is declared over.
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// `Some(c)` when the expression is a bare literal.
    pub fn as_constant(&self) -> Option<f64> {
        match self.root {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    /// Value at `x`, or `None` where [`ExprAst::eval`] would fail. Skips the
    /// error bookkeeping; `x` must have [`ExprAst::dim`] entries.
    #[inline]
    pub fn eval_fast(&self, x: &[f64]) -> Option<f64> {
        self.program.run(x)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        if x.len() != self.names.len() {
            return Err(EvalError {
                kind: EvalErrorKind::StateDimension,
                node: self.to_string(),
            });
        }
        match self.program.run(x) {
            Some(v) => Ok(v),
            // rerun on the tree to locate the failing node
            None => self.eval_node(&self.root, x),
        }
    }

    fn eval_node(&self, node: &Node, x: &[f64]) -> Result<f64, EvalError> {
        let value = match node {
            Node::Const(c) => *c,
            Node::Var(k) => x[*k],
            Node::Unary(op, arg) => {
                let a = self.eval_node(arg, x)?;
                match op {
                    UnaryOp::Neg => -a,
                    UnaryOp::Exp => a.exp(),
                    UnaryOp::Log => {
                        if a <= 0.0 {
                            return Err(self.error(EvalErrorKind::LogDomain, node));
                        }
                        a.ln()
                    }
                    UnaryOp::Sqrt => {
                        if a < 0.0 {
                            return Err(self.error(EvalErrorKind::SqrtDomain, node));
                        }
                        a.sqrt()
                    }
                    UnaryOp::Sinh => a.sinh(),
                    UnaryOp::Abs => a.abs(),
                }
            }
            Node::Binary(op, lhs, rhs) => {
                let a = self.eval_node(lhs, x)?;
                let b = self.eval_node(rhs, x)?;
                match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Sub => a - b,
                    BinaryOp::Mul => a * b,
                    BinaryOp::Div => {
                        if b == 0.0 {
                            return Err(self.error(EvalErrorKind::DivisionByZero, node));
                        }
                        a / b
                    }
                    BinaryOp::Pow => self.pow(a, b, node)?,
                    BinaryOp::Min => a.min(b),
                    BinaryOp::Max => a.max(b),
                }
            }
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(self.error(EvalErrorKind::NonFinite, node))
        }
    }

    fn pow(&self, base: f64, exponent: f64, node: &Node) -> Result<f64, EvalError> {
        pow_value(base, exponent).map_err(|kind| self.error(kind, node))
    }

    fn error(&self, kind: EvalErrorKind, node: &Node) -> EvalError {
        EvalError {
            kind,
            node: Printer {
                node,
                names: &self.names,
            }
            .to_string(),
        }
    }
}

impl fmt::Display for ExprAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Printer {
            node: &self.root,
            names: &self.names,
        }
        .fmt(f)
    }
}

/// Fully parenthesised printer; its output re-parses to the same tree.
struct Printer<'a> {
    node: &'a Node,
    names: &'a [String],
}

impl fmt::Display for Printer<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sub = |node| Printer {
            node,
            names: self.names,
        };
        match self.node {
            Node::Const(c) => write!(f, "{c}"),
            Node::Var(k) => f.write_str(&self.names[*k]),
            Node::Unary(UnaryOp::Neg, a) => write!(f, "(-{})", sub(a)),
            Node::Unary(op, a) => {
                let name = match op {
                    UnaryOp::Exp => "exp",
                    UnaryOp::Log => "log",
                    UnaryOp::Sqrt => "sqrt",
                    UnaryOp::Sinh => "sinh",
                    UnaryOp::Abs => "abs",
                    UnaryOp::Neg => unreachable!(),
                };
                write!(f, "{name}({})", sub(a))
            }
            Node::Binary(BinaryOp::Min, a, b) => write!(f, "min({}, {})", sub(a), sub(b)),
            Node::Binary(BinaryOp::Max, a, b) => write!(f, "max({}, {})", sub(a), sub(b)),
            Node::Binary(op, a, b) => {
                let sym = match op {
                    BinaryOp::Add => "+",
                    BinaryOp::Sub => "-",
                    BinaryOp::Mul => "*",
                    BinaryOp::Div => "/",
                    BinaryOp::Pow => "^",
                    BinaryOp::Min | BinaryOp::Max => unreachable!(),
                };
                write!(f, "({} {sym} {})", sub(a), sub(b))
            }
        }
    }
}

enum Variables {
    Indexed { dim: usize },
    Named(Vec<String>),
}

impl Variables {
    fn names(&self) -> Vec<String> {
        match self {
            Variables::Indexed { dim } => (1..=*dim).map(|k| format!("x{k}")).collect(),
            Variables::Named(names) => names.clone(),
        }
    }

    fn resolve(&self, ident: &str) -> Result<usize, ParseErrorKind> {
        match self {
            Variables::Indexed { dim } => {
                let index = ident
                    .strip_prefix('x')
                    .filter(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
                    .and_then(|rest| rest.parse::<usize>().ok())
                    .ok_or_else(|| ParseErrorKind::UnknownIdentifier(ident.to_string()))?;
                if index == 0 || index > *dim {
                    return Err(ParseErrorKind::VariableOutOfRange {
                        name: ident.to_string(),
                        dim: *dim,
                    });
                }
                Ok(index - 1)
            }
            Variables::Named(names) => names
                .iter()
                .position(|n| n == ident)
                .ok_or_else(|| ParseErrorKind::UnknownIdentifier(ident.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Number(v) => write!(f, "{v}"),
            Token::Ident(s) => f.write_str(s),
            Token::Plus => f.write_str("+"),
            Token::Minus => f.write_str("-"),
            Token::Star => f.write_str("*"),
            Token::Slash => f.write_str("/"),
            Token::Caret => f.write_str("^"),
            Token::LParen => f.write_str("("),
            Token::RParen => f.write_str(")"),
            Token::Comma => f.write_str(","),
        }
    }
}

fn tokenize(source: &str) -> Result<Vec<(Token, usize)>, ParseError> {
    let bytes = source.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let c = bytes[pos];
        let start = pos;
        let single = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                pos += 1;
                continue;
            }
            b'+' => Some(Token::Plus),
            b'-' => Some(Token::Minus),
            b'*' => Some(Token::Star),
            b'/' => Some(Token::Slash),
            b'^' => Some(Token::Caret),
            b'(' => Some(Token::LParen),
            b')' => Some(Token::RParen),
            b',' => Some(Token::Comma),
            _ => None,
        };
        if let Some(tok) = single {
            tokens.push((tok, start));
            pos += 1;
        } else if c.is_ascii_digit() || c == b'.' {
            while pos < bytes.len() && (bytes[pos].is_ascii_digit() || bytes[pos] == b'.') {
                pos += 1;
            }
            // optional exponent: e[+-]digits
            if pos < bytes.len() && (bytes[pos] == b'e' || bytes[pos] == b'E') {
                let mut look = pos + 1;
                if look < bytes.len() && (bytes[look] == b'+' || bytes[look] == b'-') {
                    look += 1;
                }
                if look < bytes.len() && bytes[look].is_ascii_digit() {
                    pos = look;
                    while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                        pos += 1;
                    }
                }
            }
            let text = &source[start..pos];
            let value = text.parse::<f64>().map_err(|_| ParseError {
                kind: ParseErrorKind::InvalidNumber(text.to_string()),
                position: start,
            })?;
            tokens.push((Token::Number(value), start));
        } else if c.is_ascii_alphabetic() || c == b'_' {
            while pos < bytes.len() && (bytes[pos].is_ascii_alphanumeric() || bytes[pos] == b'_') {
                pos += 1;
            }
            tokens.push((Token::Ident(source[start..pos].to_string()), start));
        } else {
            let ch = source[start..].chars().next().unwrap_or('?');
            return Err(ParseError {
                kind: ParseErrorKind::UnexpectedChar(ch),
                position: start,
            });
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: Vec<(Token, usize)>,
    cursor: usize,
    end: usize,
    vars: &'a Variables,
}

impl<'a> Parser<'a> {
    fn new(source: &str, vars: &'a Variables) -> Result<Self, ParseError> {
        let tokens = tokenize(source)?;
        if tokens.is_empty() {
            return Err(ParseError {
                kind: ParseErrorKind::Empty,
                position: 0,
            });
        }
        Ok(Parser {
            tokens,
            cursor: 0,
            end: source.len(),
            vars,
        })
    }

    fn parse_all(mut self) -> Result<Node, ParseError> {
        let node = self.expr()?;
        match self.tokens.get(self.cursor) {
            None => Ok(node),
            Some((tok, pos)) => Err(ParseError {
                kind: ParseErrorKind::UnexpectedToken(tok.to_string()),
                position: *pos,
            }),
        }
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.cursor).map(|(t, _)| t)
    }

    fn next(&mut self) -> Result<(Token, usize), ParseError> {
        match self.tokens.get(self.cursor) {
            Some(t) => {
                self.cursor += 1;
                Ok(t.clone())
            }
            None => Err(ParseError {
                kind: ParseErrorKind::UnexpectedEnd,
                position: self.end,
            }),
        }
    }

    fn expect(&mut self, want: Token) -> Result<(), ParseError> {
        let (tok, pos) = self.next()?;
        if tok == want {
            Ok(())
        } else {
            Err(ParseError {
                kind: ParseErrorKind::UnexpectedToken(tok.to_string()),
                position: pos,
            })
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Token::Plus) => BinaryOp::Add,
                Some(Token::Minus) => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.cursor += 1;
            let rhs = self.term()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Token::Star) => BinaryOp::Mul,
                Some(Token::Slash) => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.cursor += 1;
            let rhs = self.unary()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.peek() == Some(&Token::Minus) {
            self.cursor += 1;
            let arg = self.unary()?;
            return Ok(Node::Unary(UnaryOp::Neg, Box::new(arg)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.primary()?;
        if self.peek() == Some(&Token::Caret) {
            self.cursor += 1;
            let exponent = self.unary()?;
            return Ok(Node::Binary(
                BinaryOp::Pow,
                Box::new(base),
                Box::new(exponent),
            ));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ParseError> {
        let (tok, pos) = self.next()?;
        match tok {
            Token::Number(v) => Ok(Node::Const(v)),
            Token::LParen => {
                let inner = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(inner)
            }
            Token::Ident(name) => {
                if self.peek() == Some(&Token::LParen) {
                    self.call(name, pos)
                } else {
                    self.vars
                        .resolve(&name)
                        .map(Node::Var)
                        .map_err(|kind| ParseError {
                            kind,
                            position: pos,
                        })
                }
            }
            other => Err(ParseError {
                kind: ParseErrorKind::UnexpectedToken(other.to_string()),
                position: pos,
            }),
        }
    }

    fn call(&mut self, name: String, pos: usize) -> Result<Node, ParseError> {
        let unary = match name.as_str() {
            "exp" => Some(UnaryOp::Exp),
            "log" => Some(UnaryOp::Log),
            "sqrt" => Some(UnaryOp::Sqrt),
            "sinh" => Some(UnaryOp::Sinh),
            "abs" => Some(UnaryOp::Abs),
            _ => None,
        };
        let binary = match name.as_str() {
            "min" => Some(BinaryOp::Min),
            "max" => Some(BinaryOp::Max),
            _ => None,
        };
        if unary.is_none() && binary.is_none() {
            return Err(ParseError {
                kind: ParseErrorKind::UnknownIdentifier(name),
                position: pos,
            });
        }
        self.expect(Token::LParen)?;
        let mut args = vec![self.expr()?];
        while self.peek() == Some(&Token::Comma) {
            self.cursor += 1;
            args.push(self.expr()?);
        }
        self.expect(Token::RParen)?;
        let expected = if unary.is_some() { 1 } else { 2 };
        if args.len() != expected {
            return Err(ParseError {
                kind: ParseErrorKind::Arity { name, expected },
                position: pos,
            });
        }
        let mut args = args.into_iter();
        let first = Box::new(args.next().unwrap());
        Ok(match (unary, binary) {
            (Some(op), _) => Node::Unary(op, first),
            (_, Some(op)) => Node::Binary(op, first, Box::new(args.next().unwrap())),
            _ => unreachable!(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eval(src: &str, x: &[f64]) -> Result<f64, EvalError> {
        let dim = x.len().max(1);
        let mut state = x.to_vec();
        state.resize(dim, 0.0);
        ExprAst::parse(src, dim).unwrap().eval(&state)
    }

    #[test]
    fn reciprocal_tree_shape() {
        let ast = ExprAst::parse("1/x1", 1).unwrap();
        assert_eq!(
            ast.root(),
            &Node::Binary(
                BinaryOp::Div,
                Box::new(Node::Const(1.0)),
                Box::new(Node::Var(0))
            )
        );
        assert_eq!(ast.eval(&[2.0]).unwrap(), 0.5);
    }

    #[test]
    fn dangling_operator_reports_end_position() {
        let err = ExprAst::parse("1/", 1).unwrap_err();
        assert_eq!(err.position, 2);
        assert_eq!(err.kind, ParseErrorKind::UnexpectedEnd);
    }

    #[test]
    fn gaussian_bump_at_origin() {
        let ast = ExprAst::parse("exp(-x1^2/2)", 2).unwrap();
        assert_eq!(ast.eval(&[0.0, 5.0]).unwrap(), 1.0);
    }

    #[test]
    fn arithmetic_examples() {
        assert_eq!(eval("x1^2 + x2", &[3.0, 4.0]).unwrap(), 13.0);
        assert_eq!(eval("2+3*4", &[]).unwrap(), 14.0);
        assert_eq!(eval("(2+3)*4", &[]).unwrap(), 20.0);
        assert_eq!(eval("2^3^2", &[]).unwrap(), 512.0);
        assert_eq!(eval("-2^2", &[]).unwrap(), -4.0);
        assert_eq!(eval("2^-1", &[]).unwrap(), 0.5);
        assert_eq!(eval("min(3, max(1, 2))", &[]).unwrap(), 2.0);
        assert_eq!(eval("10-4-3", &[]).unwrap(), 3.0);
        assert_eq!(eval("1.5e2", &[]).unwrap(), 150.0);
    }

    #[test]
    fn sinh_of_one() {
        // sinh(1) = (e - 1/e)/2 = 1.1752011936438014...
        let v = eval("sinh(1)", &[]).unwrap();
        assert!((v - 1.175_201_193_643_801_4).abs() < 1e-15);
    }

    #[test]
    fn non_integer_power_uses_logarithm() {
        let v = eval("x1^0.5", &[4.0]).unwrap();
        assert!((v - 2.0).abs() < 1e-15);
        let err = eval("x1^0.5", &[-4.0]).unwrap_err();
        assert_eq!(err.kind, EvalErrorKind::PowDomain);
    }

    #[test]
    fn domain_errors_name_the_node() {
        let err = eval("1 + 1/x1", &[0.0]).unwrap_err();
        assert_eq!(err.kind, EvalErrorKind::DivisionByZero);
        assert_eq!(err.node, "(1 / x1)");
        assert_eq!(
            eval("log(x1)", &[-1.0]).unwrap_err().kind,
            EvalErrorKind::LogDomain
        );
        assert_eq!(
            eval("log(x1)", &[0.0]).unwrap_err().kind,
            EvalErrorKind::LogDomain
        );
        assert_eq!(
            eval("sqrt(x1)", &[-1.0]).unwrap_err().kind,
            EvalErrorKind::SqrtDomain
        );
        assert_eq!(
            eval("exp(x1)", &[1e6]).unwrap_err().kind,
            EvalErrorKind::NonFinite
        );
        assert_eq!(
            eval("x1^-2", &[0.0]).unwrap_err().kind,
            EvalErrorKind::DivisionByZero
        );
    }

    #[test]
    fn wrong_state_length() {
        let ast = ExprAst::parse("x1", 2).unwrap();
        assert_eq!(
            ast.eval(&[1.0]).unwrap_err().kind,
            EvalErrorKind::StateDimension
        );
    }

    #[test]
    fn parse_errors() {
        let e = ExprAst::parse("x3", 2).unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::VariableOutOfRange { .. }));
        assert_eq!(e.position, 0);
        let e = ExprAst::parse("1 + foo", 1).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownIdentifier("foo".into()));
        assert_eq!(e.position, 4);
        let e = ExprAst::parse("cosh(1)", 1).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownIdentifier("cosh".into()));
        let e = ExprAst::parse("min(1)", 1).unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::Arity { .. }));
        let e = ExprAst::parse("(1 + 2", 1).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnexpectedEnd);
        let e = ExprAst::parse("1 2", 1).unwrap_err();
        assert_eq!(e.position, 2);
        let e = ExprAst::parse("   ", 1).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Empty);
        let e = ExprAst::parse("2 # 3", 1).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnexpectedChar('#'));
        let e = ExprAst::parse("x0", 1).unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::VariableOutOfRange { .. }));
    }

    #[test]
    fn named_variables() {
        let ast = ExprAst::parse_with_names("1/n", &["n"]).unwrap();
        assert_eq!(ast.eval(&[4.0]).unwrap(), 0.25);
        assert!(ExprAst::parse_with_names("x1", &["n"]).is_err());
    }

    #[test]
    fn printer_output() {
        let ast = ExprAst::parse("-x1^2 + min(x2, 3)*exp(x1)", 2).unwrap();
        assert_eq!(ast.to_string(), "((-(x1 ^ 2)) + (min(x2, 3) * exp(x1)))");
    }

    // Independent evaluator: straight recursion over the tree, with the
    // grammar's domain rules restated.
    fn reference(node: &Node, x: &[f64]) -> Option<f64> {
        let v = match node {
            Node::Const(c) => *c,
            Node::Var(k) => x[*k],
            Node::Unary(op, a) => {
                let a = reference(a, x)?;
                match op {
                    UnaryOp::Neg => -a,
                    UnaryOp::Exp => a.exp(),
                    UnaryOp::Log if a > 0.0 => a.ln(),
                    UnaryOp::Sqrt if a >= 0.0 => a.sqrt(),
                    UnaryOp::Sinh => a.sinh(),
                    UnaryOp::Abs => a.abs(),
                    _ => return None,
                }
            }
            Node::Binary(op, a, b) => {
                let (a, b) = (reference(a, x)?, reference(b, x)?);
                match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Sub => a - b,
                    BinaryOp::Mul => a * b,
                    BinaryOp::Div if b != 0.0 => a / b,
                    BinaryOp::Div => return None,
                    BinaryOp::Pow if b.fract() == 0.0 && !(a == 0.0 && b < 0.0) => a.powi(b as i32),
                    BinaryOp::Pow => return None,
                    BinaryOp::Min => a.min(b),
                    BinaryOp::Max => a.max(b),
                }
            }
        };
        v.is_finite().then_some(v)
    }

    fn arb_node(dim: usize) -> impl Strategy<Value = Node> {
        let leaf = prop_oneof![
            (0.0f64..10.0).prop_map(Node::Const),
            (0..dim).prop_map(Node::Var),
        ];
        leaf.prop_recursive(5, 40, 2, |inner| {
            let unary = prop_oneof![
                Just(UnaryOp::Neg),
                Just(UnaryOp::Exp),
                Just(UnaryOp::Log),
                Just(UnaryOp::Sqrt),
                Just(UnaryOp::Sinh),
                Just(UnaryOp::Abs),
            ];
            let binary = prop_oneof![
                Just(BinaryOp::Add),
                Just(BinaryOp::Sub),
                Just(BinaryOp::Mul),
                Just(BinaryOp::Div),
                Just(BinaryOp::Min),
                Just(BinaryOp::Max),
            ];
            prop_oneof![
                (unary, inner.clone()).prop_map(|(op, a)| Node::Unary(op, Box::new(a))),
                (binary, inner.clone(), inner.clone()).prop_map(|(op, a, b)| Node::Binary(
                    op,
                    Box::new(a),
                    Box::new(b)
                )),
                (inner, -3i32..5).prop_map(|(a, e)| {
                    let c = Node::Const(f64::from(e.abs()));
                    let exponent = if e < 0 {
                        Node::Unary(UnaryOp::Neg, Box::new(c))
                    } else {
                        c
                    };
                    Node::Binary(BinaryOp::Pow, Box::new(a), Box::new(exponent))
                }),
            ]
        })
    }

    fn names(dim: usize) -> Vec<String> {
        (1..=dim).map(|k| format!("x{k}")).collect()
    }

    proptest! {
        #[test]
        fn printed_form_reparses_to_same_tree(node in arb_node(3)) {
            let ast = ExprAst::from_parts(node, names(3));
            let again = ExprAst::parse(&ast.to_string(), 3).unwrap();
            prop_assert_eq!(again.root(), ast.root());
        }

        #[test]
        fn evaluators_agree_with_reference(
            node in arb_node(3),
            x in proptest::collection::vec(-4.0f64..4.0, 3),
        ) {
            let want = reference(&node, &x);
            let ast = ExprAst::from_parts(node, names(3));
            prop_assert_eq!(ast.eval(&x).ok(), want);
            prop_assert_eq!(ast.eval_fast(&x), want);
        }
    }
}
