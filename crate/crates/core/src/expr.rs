//! Arithmetic expressions for user-supplied coefficient fields.
//!
//! Exponents, weights, obstacles and multifunction endpoints arrive as
//! strings such as `"1.5 + 0.2*x"` or `"min(s, 3) * x"`. This module parses
//! them once into an immutable [`Expr`] tree and evaluates that tree many
//! times (once per quadrature point per Newton iteration).
//!
//! Grammar, lowest precedence first:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?
//! atom    := number | variable | call | '(' expr ')'
//! call    := name '(' expr (',' expr)* ')'
//! ```
//!
//! `^` binds tighter than unary minus (`-2^2 == -4`) and is right
//! associative (`2^3^2 == 512`).

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier '{name}' at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("function '{name}' expects {expected} argument(s), got {got}")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("unbound variable '{0}'")]
    Unbound(&'static str),
    #[error("domain error: {0}")]
    Domain(String),
}

/// Variables an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    Y,
    S,
    R,
}

impl Var {
    pub fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::Y => "y",
            Var::S => "s",
            Var::R => "r",
        }
    }

    fn from_name(name: &str) -> Option<Var> {
        match name {
            "x" => Some(Var::X),
            "y" => Some(Var::Y),
            "s" => Some(Var::S),
            "r" => Some(Var::R),
            _ => None,
        }
    }
}

/// Set of variables admitted when parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VarSet {
    bits: u8,
}

impl VarSet {
    pub const SPATIAL: VarSet = VarSet { bits: 0b0011 };
    pub const SPATIAL_S: VarSet = VarSet { bits: 0b0111 };
    pub const ALL: VarSet = VarSet { bits: 0b1111 };

    pub fn of(vars: &[Var]) -> VarSet {
        let mut set = VarSet::default();
        for &v in vars {
            set.bits |= Self::bit(v);
        }
        set
    }

    fn bit(v: Var) -> u8 {
        match v {
            Var::X => 1,
            Var::Y => 2,
            Var::S => 4,
            Var::R => 8,
        }
    }

    pub fn contains(self, v: Var) -> bool {
        self.bits & Self::bit(v) != 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Min,
    Max,
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
    Sign,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "min" => Func::Min,
            "max" => Func::Max,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            "sign" => Func::Sign,
            _ => return None,
        })
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Min => "min",
            Func::Max => "max",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Sign => "sign",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(Var),
    Unary(UnaryOp, Box<Node>),
    Binary(BinaryOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// Values bound to the expression variables. Unset variables are unbound.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Bindings {
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub s: Option<f64>,
    pub r: Option<f64>,
}

impl Bindings {
    pub fn point(p: [f64; 2]) -> Self {
        Bindings {
            x: Some(p[0]),
            y: Some(p[1]),
            ..Default::default()
        }
    }

    pub fn with_s(mut self, s: f64) -> Self {
        self.s = Some(s);
        self
    }

    pub fn with_r(mut self, r: f64) -> Self {
        self.r = Some(r);
        self
    }

    fn get(&self, v: Var) -> Option<f64> {
        match v {
            Var::X => self.x,
            Var::Y => self.y,
            Var::S => self.s,
            Var::R => self.r,
        }
    }
}

/// A parsed expression. Immutable and cheap to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    allowed: VarSet,
}

impl Expr {
    pub fn parse(text: &str, allowed: VarSet) -> Result<Expr, ExprError> {
        if text.trim().is_empty() {
            return Err(ExprError::Syntax {
                offset: 0,
                message: "empty expression".into(),
            });
        }
        let tokens = tokenize(text)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            allowed,
            end: text.len(),
        };
        let root = parser.expr()?;
        if let Some(tok) = parser.peek() {
            return Err(ExprError::Syntax {
                offset: tok.offset,
                message: format!("unexpected {}", tok.kind.describe()),
            });
        }
        Ok(Expr { root, allowed })
    }

    pub fn constant(value: f64) -> Expr {
        Expr {
            root: Node::Const(value),
            allowed: VarSet::default(),
        }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn allowed(&self) -> VarSet {
        self.allowed
    }

    /// True when the tree references `v`.
    pub fn uses(&self, v: Var) -> bool {
        fn walk(n: &Node, v: Var) -> bool {
            match n {
                Node::Const(_) => false,
                Node::Var(w) => *w == v,
                Node::Unary(_, a) => walk(a, v),
                Node::Binary(_, a, b) => walk(a, v) || walk(b, v),
                Node::Call(_, args) => args.iter().any(|a| walk(a, v)),
            }
        }
        walk(&self.root, v)
    }

    /// Returns the value when the tree contains no variables.
    pub fn as_constant(&self) -> Option<f64> {
        match self.root {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn eval(&self, b: &Bindings) -> Result<f64, ExprError> {
        eval_node(&self.root, b)
    }

    pub fn eval_map(&self, bindings: &HashMap<String, f64>) -> Result<f64, ExprError> {
        let get = |name: &str| bindings.get(name).copied();
        let b = Bindings {
            x: get("x"),
            y: get("y"),
            s: get("s"),
            r: get("r"),
        };
        self.eval(&b)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(&self.root, f)
    }
}

fn write_node(n: &Node, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match n {
        Node::Const(c) => {
            if *c < 0.0 {
                write!(f, "(-{:?})", -c)
            } else {
                write!(f, "{c:?}")
            }
        }
        Node::Var(v) => f.write_str(v.name()),
        Node::Unary(UnaryOp::Neg, a) => {
            f.write_str("(-")?;
            write_node(a, f)?;
            f.write_str(")")
        }
        Node::Unary(UnaryOp::Abs, a) => {
            f.write_str("abs(")?;
            write_node(a, f)?;
            f.write_str(")")
        }
        Node::Binary(op, a, b) => {
            let sym = match op {
                BinaryOp::Add => "+",
                BinaryOp::Sub => "-",
                BinaryOp::Mul => "*",
                BinaryOp::Div => "/",
                BinaryOp::Pow => "^",
            };
            f.write_str("(")?;
            write_node(a, f)?;
            write!(f, " {sym} ")?;
            write_node(b, f)?;
            f.write_str(")")
        }
        Node::Call(func, args) => {
            write!(f, "{}(", func.name())?;
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write_node(a, f)?;
            }
            f.write_str(")")
        }
    }
}

fn domain(msg: impl Into<String>) -> ExprError {
    ExprError::Domain(msg.into())
}

fn eval_node(n: &Node, b: &Bindings) -> Result<f64, ExprError> {
    let v = match n {
        Node::Const(c) => *c,
        Node::Var(v) => b.get(*v).ok_or(ExprError::Unbound(v.name()))?,
        Node::Unary(op, a) => {
            let a = eval_node(a, b)?;
            match op {
                UnaryOp::Neg => -a,
                UnaryOp::Abs => a.abs(),
            }
        }
        Node::Binary(op, l, r) => {
            let l = eval_node(l, b)?;
            let r = eval_node(r, b)?;
            match op {
                BinaryOp::Add => l + r,
                BinaryOp::Sub => l - r,
                BinaryOp::Mul => l * r,
                BinaryOp::Div => {
                    if r == 0.0 {
                        return Err(domain("division by zero"));
                    }
                    l / r
                }
                BinaryOp::Pow => {
                    if l == 0.0 && r < 0.0 {
                        return Err(domain("zero raised to a negative power"));
                    }
                    if l < 0.0 && r.fract() != 0.0 {
                        return Err(domain(format!("negative base {l} with fractional exponent {r}")));
                    }
                    l.powf(r)
                }
            }
        }
        Node::Call(func, args) => {
            let a = eval_node(&args[0], b)?;
            match func {
                Func::Min => a.min(eval_node(&args[1], b)?),
                Func::Max => a.max(eval_node(&args[1], b)?),
                Func::Exp => a.exp(),
                Func::Log => {
                    if a <= 0.0 {
                        return Err(domain(format!("log of nonpositive value {a}")));
                    }
                    a.ln()
                }
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Sqrt => {
                    if a < 0.0 {
                        return Err(domain(format!("sqrt of negative value {a}")));
                    }
                    a.sqrt()
                }
                Func::Sign => {
                    if a > 0.0 {
                        1.0
                    } else if a < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
            }
        }
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(domain("non-finite result"))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
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

impl TokKind {
    fn describe(&self) -> String {
        match self {
            TokKind::Num(v) => format!("number {v}"),
            TokKind::Ident(s) => format!("identifier '{s}'"),
            TokKind::Plus => "'+'".into(),
            TokKind::Minus => "'-'".into(),
            TokKind::Star => "'*'".into(),
            TokKind::Slash => "'/'".into(),
            TokKind::Caret => "'^'".into(),
            TokKind::LParen => "'('".into(),
            TokKind::RParen => "')'".into(),
            TokKind::Comma => "','".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    offset: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let kind = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => TokKind::Plus,
            b'-' => TokKind::Minus,
            b'*' => TokKind::Star,
            b'/' => TokKind::Slash,
            b'^' => TokKind::Caret,
            b'(' => TokKind::LParen,
            b')' => TokKind::RParen,
            b',' => TokKind::Comma,
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
                let lit = &text[start..i];
                let v: f64 = lit.parse().map_err(|_| ExprError::Syntax {
                    offset: start,
                    message: format!("malformed number '{lit}'"),
                })?;
                out.push(Token {
                    kind: TokKind::Num(v),
                    offset: start,
                });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token {
                    kind: TokKind::Ident(text[start..i].to_string()),
                    offset: start,
                });
                continue;
            }
            _ => {
                return Err(ExprError::Syntax {
                    offset: start,
                    message: format!("unexpected character '{}'", text[start..].chars().next().unwrap_or('?')),
                })
            }
        };
        out.push(Token { kind, offset: start });
        i += 1;
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    allowed: VarSet,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, kind: &TokKind) -> bool {
        if self.peek().map(|t| &t.kind == kind).unwrap_or(false) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat(&TokKind::Plus) {
                BinaryOp::Add
            } else if self.eat(&TokKind::Minus) {
                BinaryOp::Sub
            } else {
                break;
            };
            let rhs = self.term()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat(&TokKind::Star) {
                BinaryOp::Mul
            } else if self.eat(&TokKind::Slash) {
                BinaryOp::Div
            } else {
                break;
            };
            let rhs = self.unary()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.eat(&TokKind::Minus) {
            let inner = self.unary()?;
            return Ok(Node::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.eat(&TokKind::Caret) {
            let exponent = self.unary()?;
            return Ok(Node::Binary(BinaryOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    /// Parses `expr` up to the matching `)` of a group opened at `open`.
    fn closing(&mut self, open: usize) -> Result<(), ExprError> {
        match self.next() {
            Some(Token {
                kind: TokKind::RParen,
                ..
            }) => Ok(()),
            Some(t) => Err(ExprError::Syntax {
                offset: t.offset,
                message: format!("expected ')' but found {}", t.kind.describe()),
            }),
            None => Err(ExprError::Syntax {
                offset: open,
                message: "unclosed '('".into(),
            }),
        }
    }

    fn inner_expr(&mut self, open: usize) -> Result<Node, ExprError> {
        if self.peek().is_none() {
            return Err(ExprError::Syntax {
                offset: open,
                message: "unclosed '('".into(),
            });
        }
        self.expr()
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let tok = self.next().ok_or_else(|| ExprError::Syntax {
            offset: self.end,
            message: "unexpected end of input".into(),
        })?;
        match tok.kind {
            TokKind::Num(v) => Ok(Node::Const(v)),
            TokKind::LParen => {
                let inner = self.inner_expr(tok.offset)?;
                self.closing(tok.offset)?;
                Ok(inner)
            }
            TokKind::Ident(name) => {
                if let Some(Token {
                    kind: TokKind::LParen,
                    offset: open,
                }) = self.peek().cloned()
                {
                    self.pos += 1;
                    let mut args = vec![self.inner_expr(open)?];
                    while self.eat(&TokKind::Comma) {
                        args.push(self.inner_expr(open)?);
                    }
                    self.closing(open)?;
                    return self.call(name, tok.offset, args);
                }
                match Var::from_name(&name) {
                    Some(v) if self.allowed.contains(v) => Ok(Node::Var(v)),
                    _ => Err(ExprError::UnknownIdentifier {
                        name,
                        offset: tok.offset,
                    }),
                }
            }
            other => Err(ExprError::Syntax {
                offset: tok.offset,
                message: format!("unexpected {}", other.describe()),
            }),
        }
    }

    fn call(&self, name: String, offset: usize, args: Vec<Node>) -> Result<Node, ExprError> {
        if name == "abs" {
            if args.len() != 1 {
                return Err(ExprError::Arity {
                    name,
                    expected: 1,
                    got: args.len(),
                });
            }
            let arg = args.into_iter().next().expect("one argument");
            return Ok(Node::Unary(UnaryOp::Abs, Box::new(arg)));
        }
        let func = Func::lookup(&name).ok_or(ExprError::UnknownIdentifier {
            name: name.clone(),
            offset,
        })?;
        if args.len() != func.arity() {
            return Err(ExprError::Arity {
                name,
                expected: func.arity(),
                got: args.len(),
            });
        }
        Ok(Node::Call(func, args))
    }
}
