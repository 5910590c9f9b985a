//! Recursive-descent parser and evaluator for one-variable expressions.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | '+' unary | power
//! power  := atom ('^' unary)?          // right associative
//! atom   := number | 'x' | 'pi' | 'e' | func '(' expr ')' | '(' expr ')'
//! func   := sin | cos | exp | ln | sqrt | abs | sign
//! ```
//!
//! `-x^2` parses as `-(x^2)`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier '{name}' at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("function '{name}' takes 1 argument, got {got} (offset {offset})")]
    Arity { name: String, got: usize, offset: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("ln of nonpositive argument {arg}")]
    LnDomain { arg: f64 },
    #[error("sqrt of negative argument {arg}")]
    SqrtDomain { arg: f64 },
    #[error("nonfinite intermediate value in '{op}'")]
    NonFinite { op: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Sign,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Self::Sin,
            "cos" => Self::Cos,
            "exp" => Self::Exp,
            "ln" => Self::Ln,
            "sqrt" => Self::Sqrt,
            "abs" => Self::Abs,
            "sign" => Self::Sign,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sin => "sin",
            Self::Cos => "cos",
            Self::Exp => "exp",
            Self::Ln => "ln",
            Self::Sqrt => "sqrt",
            Self::Abs => "abs",
            Self::Sign => "sign",
        }
    }

    fn apply(self, v: f64) -> Result<f64, EvalError> {
        Ok(match self {
            Self::Sin => v.sin(),
            Self::Cos => v.cos(),
            Self::Exp => v.exp(),
            Self::Ln => {
                if v <= 0.0 {
                    return Err(EvalError::LnDomain { arg: v });
                }
                v.ln()
            }
            Self::Sqrt => {
                if v < 0.0 {
                    return Err(EvalError::SqrtDomain { arg: v });
                }
                v.sqrt()
            }
            Self::Abs => v.abs(),
            // sign(0) = 0, no tolerance band.
            Self::Sign => {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            Self::Add => '+',
            Self::Sub => '-',
            Self::Mul => '*',
            Self::Div => '/',
            Self::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var,
    Pi,
    E,
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    pub fn eval(&self, x: f64) -> Result<f64, EvalError> {
        let v = match self {
            Node::Num(v) => *v,
            Node::Var => x,
            Node::Pi => std::f64::consts::PI,
            Node::E => std::f64::consts::E,
            Node::Neg(a) => -a.eval(x)?,
            Node::Bin(op, a, b) => {
                let (l, r) = (a.eval(x)?, b.eval(x)?);
                let v = match op {
                    BinOp::Add => l + r,
                    BinOp::Sub => l - r,
                    BinOp::Mul => l * r,
                    BinOp::Div => l / r,
                    BinOp::Pow => l.powf(r),
                };
                if !v.is_finite() {
                    return Err(EvalError::NonFinite {
                        op: match op {
                            BinOp::Add => "+",
                            BinOp::Sub => "-",
                            BinOp::Mul => "*",
                            BinOp::Div => "/",
                            BinOp::Pow => "^",
                        },
                    });
                }
                v
            }
            Node::Call(func, a) => {
                let v = func.apply(a.eval(x)?)?;
                if !v.is_finite() {
                    return Err(EvalError::NonFinite { op: func.name() });
                }
                v
            }
        };
        Ok(v)
    }

    /// Visits every `sign(...)` argument subtree.
    pub(crate) fn sign_arguments<'a>(&'a self, out: &mut Vec<&'a Node>) {
        match self {
            Node::Num(_) | Node::Var | Node::Pi | Node::E => {}
            Node::Neg(a) => a.sign_arguments(out),
            Node::Bin(_, a, b) => {
                a.sign_arguments(out);
                b.sign_arguments(out);
            }
            Node::Call(f, a) => {
                if *f == Func::Sign {
                    out.push(a);
                }
                a.sign_arguments(out);
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Node::Var => false,
            Node::Num(_) | Node::Pi | Node::E => true,
            Node::Neg(a) | Node::Call(_, a) => a.is_constant(),
            Node::Bin(_, a, b) => a.is_constant() && b.is_constant(),
        }
    }
}

impl fmt::Display for Node {
    // Fully parenthesized so that printing then re-parsing is lossless.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Num(v) => write!(f, "{v:?}"),
            Node::Var => f.write_str("x"),
            Node::Pi => f.write_str("pi"),
            Node::E => f.write_str("e"),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Bin(op, a, b) => write!(f, "({a}{}{b})", op.symbol()),
            Node::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

/// A parsed expression in the variable `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct FuncExpr {
    source: String,
    ast: Node,
}

impl FuncExpr {
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn ast(&self) -> &Node {
        &self.ast
    }

    pub fn eval(&self, x: f64) -> Result<f64, EvalError> {
        self.ast.eval(x)
    }
}

impl fmt::Display for FuncExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.ast.fmt(f)
    }
}

impl std::str::FromStr for FuncExpr {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_expr(s)
    }
}

/// Parses `source` into an expression tree.
pub fn parse_expr(source: &str) -> Result<FuncExpr, ParseError> {
    if source.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let mut p = Parser {
        src: source.as_bytes(),
        pos: 0,
        depth: 0,
    };
    let ast = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.syntax("unexpected trailing input"));
    }
    Ok(FuncExpr {
        source: source.to_owned(),
        ast,
    })
}

const MAX_DEPTH: usize = 256;

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    depth: usize,
}

impl Parser<'_> {
    fn syntax(&self, message: &str) -> ParseError {
        ParseError::Syntax {
            offset: self.pos,
            message: message.to_owned(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn descend(&mut self) -> Result<(), ParseError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(self.syntax("expression nested too deeply"));
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        self.descend()?;
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == b'+' { BinOp::Add } else { BinOp::Sub };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if c == b'*' { BinOp::Mul } else { BinOp::Div };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        self.descend()?;
        let node = match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Node::Neg(Box::new(self.unary()?))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()?
            }
            _ => self.power()?,
        };
        self.depth -= 1;
        Ok(node)
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect_close()?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(_) => Err(self.syntax("unexpected character")),
        }
    }

    fn expect_close(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Some(b')') => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.syntax("expected ')'")),
        }
    }

    fn number(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && (s[i].is_ascii_digit() || s[i] == b'.') {
            i += 1;
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = std::str::from_utf8(&s[start..i]).expect("ascii slice");
        let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
            offset: start,
            message: format!("malformed number '{text}'"),
        })?;
        if !value.is_finite() {
            return Err(ParseError::Syntax {
                offset: start,
                message: format!("number '{text}' out of range"),
            });
        }
        self.pos = i;
        Ok(Node::Num(value))
    }

    fn identifier(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");
        match name {
            "x" => return Ok(Node::Var),
            "pi" => return Ok(Node::Pi),
            "e" => return Ok(Node::E),
            _ => {}
        }
        let Some(func) = Func::from_name(name) else {
            return Err(ParseError::UnknownIdentifier {
                name: name.to_owned(),
                offset: start,
            });
        };
        if self.peek() != Some(b'(') {
            return Err(self.syntax("expected '(' after function name"));
        }
        self.pos += 1;
        if self.peek() == Some(b')') {
            return Err(ParseError::Arity {
                name: name.to_owned(),
                got: 0,
                offset: start,
            });
        }
        let arg = self.expr()?;
        let mut extra = 0;
        while self.peek() == Some(b',') {
            self.pos += 1;
            self.expr()?;
            extra += 1;
        }
        if extra > 0 {
            return Err(ParseError::Arity {
                name: name.to_owned(),
                got: 1 + extra,
                offset: start,
            });
        }
        self.expect_close()?;
        Ok(Node::Call(func, Box::new(arg)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_sines() {
        let e = parse_expr("sin(x)+sin(sqrt(2)*x)").unwrap();
        let mut calls = 0;
        fn count(n: &Node, calls: &mut usize) {
            match n {
                Node::Call(Func::Sin, a) => {
                    *calls += 1;
                    count(a, calls)
                }
                Node::Call(_, a) | Node::Neg(a) => count(a, calls),
                Node::Bin(_, a, b) => {
                    count(a, calls);
                    count(b, calls)
                }
                _ => {}
            }
        }
        count(e.ast(), &mut calls);
        assert_eq!(calls, 2);
        let x = 0.7f64;
        assert_eq!(e.eval(x).unwrap(), x.sin() + (2f64.sqrt() * x).sin());
    }

    #[test]
    fn identity() {
        let e = parse_expr("x").unwrap();
        assert_eq!(e.ast(), &Node::Var);
        assert_eq!(e.eval(3.5).unwrap(), 3.5);
    }

    #[test]
    fn unclosed_call_reports_offset() {
        assert_eq!(
            parse_expr("sin("),
            Err(ParseError::Syntax {
                offset: 4,
                message: "unexpected end of input".into()
            })
        );
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse_expr("-x^2").unwrap();
        assert_eq!(e.eval(3.0).unwrap(), -9.0);
        let e = parse_expr("2^3^2").unwrap();
        assert_eq!(e.eval(0.0).unwrap(), 512.0);
        let e = parse_expr("1-2-3").unwrap();
        assert_eq!(e.eval(0.0).unwrap(), -4.0);
        let e = parse_expr("2*x+3/4").unwrap();
        assert_eq!(e.eval(1.0).unwrap(), 2.75);
        let e = parse_expr("2^-1").unwrap();
        assert_eq!(e.eval(0.0).unwrap(), 0.5);
        let e = parse_expr("1e-3*x + .5").unwrap();
        assert_eq!(e.eval(1000.0).unwrap(), 1.5);
    }

    #[test]
    fn rejects_unknown_and_arity() {
        assert!(matches!(
            parse_expr("tan(x)"),
            Err(ParseError::UnknownIdentifier { .. })
        ));
        assert!(matches!(parse_expr("y+1"), Err(ParseError::UnknownIdentifier { .. })));
        assert!(matches!(parse_expr("sin(x, 2)"), Err(ParseError::Arity { got: 2, .. })));
        assert!(matches!(parse_expr("cos()"), Err(ParseError::Arity { got: 0, .. })));
        assert!(matches!(parse_expr("   "), Err(ParseError::Empty)));
        assert!(matches!(parse_expr("1e999"), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse_expr("x x"), Err(ParseError::Syntax { .. })));
    }

    #[test]
    fn domain_errors() {
        let e = parse_expr("ln(x)").unwrap();
        assert!(matches!(e.eval(0.0), Err(EvalError::LnDomain { .. })));
        let e = parse_expr("1/x").unwrap();
        assert!(matches!(e.eval(0.0), Err(EvalError::NonFinite { .. })));
        let e = parse_expr("sqrt(x)").unwrap();
        assert!(matches!(e.eval(-1.0), Err(EvalError::SqrtDomain { .. })));
    }

    #[test]
    fn sign_of_zero_is_zero() {
        let e = parse_expr("sign(x)").unwrap();
        assert_eq!(e.eval(0.0).unwrap(), 0.0);
        assert_eq!(e.eval(-0.0).unwrap(), 0.0);
        assert_eq!(e.eval(-2.0).unwrap(), -1.0);
        let e = parse_expr("sign(sin(x))").unwrap();
        assert_eq!(e.eval(std::f64::consts::FRAC_PI_2).unwrap(), 1.0);
        let e = parse_expr("1-ln(x)").unwrap();
        assert_eq!(e.eval(1.0).unwrap(), 1.0);
    }

    #[test]
    fn deep_nesting_is_an_error_not_a_crash() {
        let src = "(".repeat(10_000) + "x" + &")".repeat(10_000);
        assert!(parse_expr(&src).is_err());
    }
}
