//! Tiny expression language for 1D subintegrands and tabulated densities.
//!
//! Grammar: numbers, the variable `x`, `pi`, `+ - * / ^`, parentheses and the functions
//! `gauss(x, mu, sigma)`, `uniform(x, a, b)`, `box(x, a, b)`, `step(v)`, `exp`, `ln`,
//! `sqrt`, `abs`, `sin`, `cos`, `pow(a, b)`, `min(a, b)`, `max(a, b)`.
//! `gauss` is the normalized normal density, `uniform` is `1/(b-a)` on `[a, b)`, and `box`
//! is the indicator of `[a, b)`.

use std::f64::consts::PI;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("expression error at offset {offset}: {message}")]
pub struct ExprError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Gauss,
    Uniform,
    Box,
    Step,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Sin,
    Cos,
    Pow,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "gauss" => (Func::Gauss, 3),
            "uniform" => (Func::Uniform, 3),
            "box" => (Func::Box, 3),
            "step" => (Func::Step, 1),
            "exp" => (Func::Exp, 1),
            "ln" => (Func::Ln, 1),
            "sqrt" => (Func::Sqrt, 1),
            "abs" => (Func::Abs, 1),
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "pow" => (Func::Pow, 2),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            _ => return None,
        })
    }

    fn apply(self, a: &[f64]) -> f64 {
        match self {
            Func::Gauss => {
                let z = (a[0] - a[1]) / a[2];
                (-0.5 * z * z).exp() / (a[2] * (2.0 * PI).sqrt())
            }
            Func::Uniform => {
                if a[0] >= a[1] && a[0] < a[2] {
                    1.0 / (a[2] - a[1])
                } else {
                    0.0
                }
            }
            Func::Box => {
                if a[0] >= a[1] && a[0] < a[2] {
                    1.0
                } else {
                    0.0
                }
            }
            Func::Step => {
                if a[0] >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Func::Exp => a[0].exp(),
            Func::Ln => a[0].ln(),
            Func::Sqrt => a[0].sqrt(),
            Func::Abs => a[0].abs(),
            Func::Sin => a[0].sin(),
            Func::Cos => a[0].cos(),
            Func::Pow => a[0].powf(a[1]),
            Func::Min => a[0].min(a[1]),
            Func::Max => a[0].max(a[1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    X,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

impl Node {
    fn eval(&self, x: f64) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::X => x,
            Node::Neg(a) => -a.eval(x),
            Node::Add(a, b) => a.eval(x) + b.eval(x),
            Node::Sub(a, b) => a.eval(x) - b.eval(x),
            Node::Mul(a, b) => a.eval(x) * b.eval(x),
            Node::Div(a, b) => a.eval(x) / b.eval(x),
            Node::Pow(a, b) => {
                let base = a.eval(x);
                match **b {
                    Node::Const(e) if e == e.trunc() && e.abs() <= 64.0 => base.powi(e as i32),
                    _ => base.powf(b.eval(x)),
                }
            }
            Node::Call(f, args) => {
                let mut vals = [0.0; 3];
                for (v, a) in vals.iter_mut().zip(args) {
                    *v = a.eval(x);
                }
                f.apply(&vals[..args.len()])
            }
        }
    }

    fn is_const(&self) -> bool {
        matches!(self, Node::Const(_))
    }

    /// Folds every subtree that does not depend on `x`.
    fn fold(self) -> Node {
        let folded = match self {
            Node::Neg(a) => Node::Neg(Box::new(a.fold())),
            Node::Add(a, b) => Node::Add(Box::new(a.fold()), Box::new(b.fold())),
            Node::Sub(a, b) => Node::Sub(Box::new(a.fold()), Box::new(b.fold())),
            Node::Mul(a, b) => Node::Mul(Box::new(a.fold()), Box::new(b.fold())),
            Node::Div(a, b) => Node::Div(Box::new(a.fold()), Box::new(b.fold())),
            Node::Pow(a, b) => Node::Pow(Box::new(a.fold()), Box::new(b.fold())),
            Node::Call(f, args) => Node::Call(f, args.into_iter().map(Node::fold).collect()),
            leaf => return leaf,
        };
        let constant = match &folded {
            Node::Neg(a) => a.is_const(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                a.is_const() && b.is_const()
            }
            Node::Call(_, args) => args.iter().all(Node::is_const),
            _ => false,
        };
        if constant {
            Node::Const(folded.eval(0.0))
        } else {
            folded
        }
    }

    fn collect_breakpoints(&self, out: &mut Vec<f64>) {
        match self {
            Node::Call(f, args) => {
                if matches!(f, Func::Uniform | Func::Box) {
                    for a in &args[1..] {
                        if let Node::Const(c) = a {
                            out.push(*c);
                        }
                    }
                }
                args.iter().for_each(|a| a.collect_breakpoints(out));
            }
            Node::Neg(a) => a.collect_breakpoints(out),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                a.collect_breakpoints(out);
                b.collect_breakpoints(out);
            }
            Node::Const(_) | Node::X => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<(usize, Token)>, ExprError> {
    let bytes = src.as_bytes();
    let mut i = 0;
    let mut out = Vec::new();
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v = text.parse::<f64>().map_err(|_| ExprError {
                offset: start,
                message: format!("invalid number `{text}`"),
            })?;
            out.push((start, Token::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Token::Ident(src[start..i].to_string())));
        } else if "+-*/^(),".contains(c) {
            out.push((i, Token::Op(c)));
            i += 1;
        } else {
            return Err(ExprError {
                offset: i,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [(usize, Token)],
    pos: usize,
    end: usize,
}

impl Parser<'_> {
    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |t| t.0)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn peek_op(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some((_, Token::Op(c))) => Some(*c),
            _ => None,
        }
    }

    fn expect_op(&mut self, op: char) -> Result<(), ExprError> {
        if self.peek_op() == Some(op) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected `{op}`"))
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Node::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Node::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.primary()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ExprError> {
        let Some((_, tok)) = self.tokens.get(self.pos) else {
            return self.err("unexpected end of expression");
        };
        match tok.clone() {
            Token::Num(v) => {
                self.pos += 1;
                Ok(Node::Const(v))
            }
            Token::Op('(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect_op(')')?;
                Ok(inner)
            }
            Token::Ident(name) => {
                self.pos += 1;
                match name.as_str() {
                    "x" => return Ok(Node::X),
                    "pi" => return Ok(Node::Const(PI)),
                    _ => {}
                }
                let Some((func, arity)) = Func::lookup(&name) else {
                    self.pos -= 1;
                    return self.err(format!("unknown identifier `{name}`"));
                };
                self.expect_op('(')?;
                let mut args = vec![self.expr()?];
                while self.peek_op() == Some(',') {
                    self.pos += 1;
                    args.push(self.expr()?);
                }
                if args.len() != arity {
                    return self.err(format!("`{name}` takes {arity} argument(s), got {}", args.len()));
                }
                self.expect_op(')')?;
                Ok(Node::Call(func, args))
            }
            Token::Op(c) => self.err(format!("unexpected `{c}`")),
        }
    }
}

/// A compiled expression in the single variable `x`.
#[derive(Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    pub fn parse(source: &str) -> Result<Self, ExprError> {
        let tokens = tokenize(source)?;
        let mut parser = Parser {
            tokens: &tokens,
            pos: 0,
            end: source.len(),
        };
        let root = parser.expr()?;
        if parser.pos != tokens.len() {
            return parser.err("trailing input");
        }
        Ok(Self {
            source: source.to_string(),
            root: root.fold(),
        })
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.root.eval(x)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Constant interval endpoints of `uniform`/`box` terms, where the expression may jump.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.root.collect_breakpoints(&mut out);
        out
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.source)
    }
}
