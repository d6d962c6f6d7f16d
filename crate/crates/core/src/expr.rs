//! Float-only arithmetic expressions over parameter and spatial variables.
//!
//! Variables: `p0, p1, ...` (parameters), `x0, x1, ...` (space), with the
//! aliases `p = p0`, `x = x0`, `y = x1`, and the constant `pi`. Functions:
//! `sin cos tan tanh exp ln sqrt abs`. `^` is right-associative and binds
//! tighter than unary minus, so `-2^2 = -4`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("unexpected {found} at offset {at} in `{src}`")]
    Unexpected { src: String, at: usize, found: String },
    #[error("unknown identifier `{0}`")]
    UnknownIdent(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("expression reads {kind}{index} but only {available} are available")]
    OutOfRange { kind: char, index: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sin,
    Cos,
    Tan,
    Tanh,
    Exp,
    Ln,
    Sqrt,
    Abs,
}

impl Func {
    fn parse(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "tanh" => Func::Tanh,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tan => v.tan(),
            Func::Tanh => v.tanh(),
            Func::Exp => v.exp(),
            Func::Ln => v.ln(),
            Func::Sqrt => v.sqrt(),
            Func::Abs => v.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Param(usize),
    Space(usize),
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    fn eval(&self, p: &[f64], x: &[f64]) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::Param(i) => p[*i],
            Node::Space(i) => x[*i],
            Node::Neg(a) => -a.eval(p, x),
            Node::Bin(op, a, b) => {
                let (a, b) = (a.eval(p, x), b.eval(p, x));
                match op {
                    '+' => a + b,
                    '-' => a - b,
                    '*' => a * b,
                    '/' => a / b,
                    _ => powf_int_aware(a, b),
                }
            }
            Node::Call(f, a) => f.apply(a.eval(p, x)),
        }
    }

    fn max_index(&self, param: bool) -> Option<usize> {
        match self {
            Node::Num(_) => None,
            Node::Param(i) => param.then_some(*i),
            Node::Space(i) => (!param).then_some(*i),
            Node::Neg(a) | Node::Call(_, a) => a.max_index(param),
            Node::Bin(_, a, b) => a.max_index(param).max(b.max_index(param)),
        }
    }
}

/// `a^b` with exact integer exponents so that `(-2)^2 = 4`.
fn powf_int_aware(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

/// A parsed expression that remembers its source text.
#[derive(Debug, Clone)]
pub struct Expr {
    src: String,
    root: Node,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.src == other.src
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self, ExprError> {
        let mut parser = Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
        };
        let root = parser.expr()?;
        parser.skip_ws();
        if parser.pos < parser.bytes.len() {
            return Err(parser.unexpected());
        }
        Ok(Self {
            src: src.to_string(),
            root,
        })
    }

    pub fn constant(v: f64) -> Self {
        Self {
            src: format!("{v:?}"),
            root: Node::Num(v),
        }
    }

    pub fn source(&self) -> &str {
        &self.src
    }

    pub fn eval(&self, params: &[f64], x: &[f64]) -> f64 {
        self.root.eval(params, x)
    }

    /// Checks that every variable index fits the given dimensions.
    pub fn check_dims(&self, param_dim: usize, spatial_dim: usize) -> Result<(), ExprError> {
        if let Some(i) = self.root.max_index(true).filter(|&i| i >= param_dim) {
            return Err(ExprError::OutOfRange {
                kind: 'p',
                index: i,
                available: param_dim,
            });
        }
        if let Some(i) = self.root.max_index(false).filter(|&i| i >= spatial_dim) {
            return Err(ExprError::OutOfRange {
                kind: 'x',
                index: i,
                available: spatial_dim,
            });
        }
        Ok(())
    }

    pub fn reads_space(&self) -> bool {
        self.root.max_index(false).is_some()
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.src)
    }
}

impl FromStr for Expr {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.src)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let src = String::deserialize(d)?;
        Expr::parse(&src).map_err(serde::de::Error::custom)
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn unexpected(&self) -> ExprError {
        let found = match self.src[self.pos..].chars().next() {
            Some(c) => format!("`{c}`"),
            None => "end of input".to_string(),
        };
        ExprError::Unexpected {
            src: self.src.to_string(),
            at: self.pos,
            found,
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected())
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Bin(c as char, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(c as char, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin('^', Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.bytes.len() && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_') {
                    self.pos += 1;
                }
                let name = &self.src[start..self.pos];
                if self.peek() == Some(b'(') {
                    let f = Func::parse(name).ok_or_else(|| ExprError::UnknownFunction(name.to_string()))?;
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect(b')')?;
                    return Ok(Node::Call(f, Box::new(arg)));
                }
                ident(name)
            }
            _ => Err(self.unexpected()),
        }
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        let b = self.bytes;
        while self.pos < b.len() && (b[self.pos].is_ascii_digit() || b[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < b.len() && (b[self.pos] == b'e' || b[self.pos] == b'E') {
            let mut q = self.pos + 1;
            if q < b.len() && (b[q] == b'+' || b[q] == b'-') {
                q += 1;
            }
            if q < b.len() && b[q].is_ascii_digit() {
                self.pos = q;
                while self.pos < b.len() && b[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        self.src[start..self.pos].parse::<f64>().map(Node::Num).map_err(|_| {
            self.pos = start;
            self.unexpected()
        })
    }
}

fn ident(name: &str) -> Result<Node, ExprError> {
    match name {
        "pi" => return Ok(Node::Num(std::f64::consts::PI)),
        "p" => return Ok(Node::Param(0)),
        "x" => return Ok(Node::Space(0)),
        "y" => return Ok(Node::Space(1)),
        _ => {}
    }
    let (head, tail) = name.split_at(1);
    match (head, tail.parse::<usize>()) {
        ("p", Ok(i)) => Ok(Node::Param(i)),
        ("x", Ok(i)) => Ok(Node::Space(i)),
        _ => Err(ExprError::UnknownIdent(name.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ev(s: &str, p: &[f64], x: &[f64]) -> f64 {
        Expr::parse(s).unwrap().eval(p, x)
    }

    #[test]
    fn arithmetic_is_floating_point() {
        assert_eq!(ev("1/2", &[], &[]), 0.5);
        assert_eq!(ev("2^3^2", &[], &[]), 512.0);
        assert_eq!(ev("-2^2", &[], &[]), -4.0);
        assert_eq!(ev("(-2)^2", &[], &[]), 4.0);
        assert_eq!(ev("1 - 2 - 3", &[], &[]), -4.0);
        assert_eq!(ev("2 * 3 + 4 / 8", &[], &[]), 6.5);
        assert_eq!(ev("1.5e2 + 2E-1", &[], &[]), 150.2);
    }

    #[test]
    fn variables_and_functions() {
        let v = ev("p^2*sin(p*pi*x)", &[2.0], &[0.25]);
        assert!((v - 4.0).abs() < 1e-15);
        assert_eq!(ev("x0 + 10*x1 + 100*p2", &[0.0, 0.0, 1.0], &[1.0, 2.0]), 121.0);
        assert_eq!(ev("y", &[], &[0.0, 7.0]), 7.0);
        let bump = "p0/(2*pi*p1)*exp(-((x-p2)^2+(y-p3)^2)/(2*p1^2))";
        let p = [2.0 * PI, 0.3, 0.0, 0.0, 2.0];
        let expected = 2.0 * PI / (2.0 * PI * 0.3);
        assert!((ev(bump, &p, &[0.0, 0.0]) - expected).abs() < 1e-14);
        assert_eq!(ev("sqrt(abs(-16))", &[], &[]), 4.0);
    }

    #[test]
    fn errors_are_reported() {
        assert!(matches!(Expr::parse("1 +"), Err(ExprError::Unexpected { .. })));
        assert!(matches!(Expr::parse("foo"), Err(ExprError::UnknownIdent(_))));
        assert!(matches!(Expr::parse("bar(1)"), Err(ExprError::UnknownFunction(_))));
        assert!(matches!(Expr::parse("(1"), Err(ExprError::Unexpected { .. })));
        assert!(matches!(Expr::parse("1 2"), Err(ExprError::Unexpected { .. })));
        let e = Expr::parse("p3 + x").unwrap();
        assert!(e.check_dims(4, 1).is_ok());
        assert!(e.check_dims(3, 1).is_err());
        assert!(Expr::parse("y").unwrap().check_dims(0, 1).is_err());
    }

    #[test]
    fn serde_round_trip_keeps_source() {
        let e = Expr::parse("p^2 * sin(p*pi*x)").unwrap();
        let json = serde_json::to_string(&e).unwrap();
        assert_eq!(json, "\"p^2 * sin(p*pi*x)\"");
        let back: Expr = serde_json::from_str(&json).unwrap();
        assert_eq!(back, e);
        assert!(serde_json::from_str::<Expr>("\"p +\"").is_err());
    }
}
