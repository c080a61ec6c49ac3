//! A small closed-form expression language over one state variable `x`.
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := unary (("*" | "/") unary)*
//! unary  := ("-" | "+") unary | power
//! power  := atom ("^" unary)?
//! atom   := NUMBER | "x" | "pi" | "e" | FUNC "(" expr ("," expr)* ")" | "(" expr ")"
//! FUNC   := pow | sqrt | sin | cos | exp | log | abs | floor | min | max
//! ```
//!
//! `^` is right associative and binds tighter than unary minus, so `-x^2`
//! is `-(x^2)`. A unary minus applied directly to a numeric literal folds
//! into the literal. Every expression evaluates in plain `f64` and in
//! forward-mode dual numbers, which gives exact first derivatives.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sqrt,
    Sin,
    Cos,
    Exp,
    Log,
    Abs,
    Floor,
    Min,
    Max,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "abs" => Func::Abs,
            "floor" => Func::Floor,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Abs => "abs",
            Func::Floor => "floor",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity_ok(self, n: usize) -> bool {
        match self {
            Func::Min | Func::Max => n >= 2,
            _ => n == 1,
        }
    }
}

/// Parsed expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    X,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Value together with its derivative with respect to `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    fn constant(v: f64) -> Self {
        Dual { v, d: 0.0 }
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser {
            tokens,
            pos: 0,
            src_len: src.chars().count(),
        };
        let e = p.expr()?;
        if let Some(t) = p.peek() {
            return Err(parse_err(t.col, format!("unexpected token {:?}", t.kind)));
        }
        Ok(e)
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Expr::Num(c) => *c,
            Expr::X => x,
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, b) => pow_f64(a.eval(x), b.eval(x)),
            Expr::Call(f, args) => {
                let a0 = args[0].eval(x);
                match f {
                    Func::Sqrt => a0.sqrt(),
                    Func::Sin => a0.sin(),
                    Func::Cos => a0.cos(),
                    Func::Exp => a0.exp(),
                    Func::Log => a0.ln(),
                    Func::Abs => a0.abs(),
                    Func::Floor => a0.floor(),
                    Func::Min => args[1..].iter().fold(a0, |m, e| m.min(e.eval(x))),
                    Func::Max => args[1..].iter().fold(a0, |m, e| m.max(e.eval(x))),
                }
            }
        }
    }

    /// Forward-mode evaluation returning `(f(x), f'(x))`.
    pub fn eval_dual(&self, x: f64) -> Dual {
        match self {
            Expr::Num(c) => Dual::constant(*c),
            Expr::X => Dual { v: x, d: 1.0 },
            Expr::Neg(a) => {
                let a = a.eval_dual(x);
                Dual { v: -a.v, d: -a.d }
            }
            Expr::Add(a, b) => {
                let (a, b) = (a.eval_dual(x), b.eval_dual(x));
                Dual { v: a.v + b.v, d: a.d + b.d }
            }
            Expr::Sub(a, b) => {
                let (a, b) = (a.eval_dual(x), b.eval_dual(x));
                Dual { v: a.v - b.v, d: a.d - b.d }
            }
            Expr::Mul(a, b) => {
                let (a, b) = (a.eval_dual(x), b.eval_dual(x));
                Dual {
                    v: a.v * b.v,
                    d: a.d * b.v + a.v * b.d,
                }
            }
            Expr::Div(a, b) => {
                let (a, b) = (a.eval_dual(x), b.eval_dual(x));
                Dual {
                    v: a.v / b.v,
                    d: (a.d * b.v - a.v * b.d) / (b.v * b.v),
                }
            }
            Expr::Pow(a, b) => {
                let (a, b) = (a.eval_dual(x), b.eval_dual(x));
                let v = pow_f64(a.v, b.v);
                let d = if b.d == 0.0 {
                    if a.d == 0.0 {
                        0.0
                    } else {
                        b.v * pow_f64(a.v, b.v - 1.0) * a.d
                    }
                } else {
                    v * (b.d * a.v.ln() + b.v * a.d / a.v)
                };
                Dual { v, d }
            }
            Expr::Call(f, args) => {
                let a = args[0].eval_dual(x);
                match f {
                    Func::Sqrt => {
                        let s = a.v.sqrt();
                        Dual { v: s, d: a.d / (2.0 * s) }
                    }
                    Func::Sin => Dual {
                        v: a.v.sin(),
                        d: a.v.cos() * a.d,
                    },
                    Func::Cos => Dual {
                        v: a.v.cos(),
                        d: -a.v.sin() * a.d,
                    },
                    Func::Exp => {
                        let e = a.v.exp();
                        Dual { v: e, d: e * a.d }
                    }
                    Func::Log => Dual {
                        v: a.v.ln(),
                        d: a.d / a.v,
                    },
                    Func::Abs => Dual {
                        v: a.v.abs(),
                        d: if a.v < 0.0 { -a.d } else { a.d },
                    },
                    Func::Floor => Dual::constant(a.v.floor()),
                    Func::Min => args[1..].iter().fold(a, |m, e| {
                        let c = e.eval_dual(x);
                        if c.v < m.v {
                            c
                        } else {
                            m
                        }
                    }),
                    Func::Max => args[1..].iter().fold(a, |m, e| {
                        let c = e.eval_dual(x);
                        if c.v > m.v {
                            c
                        } else {
                            m
                        }
                    }),
                }
            }
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.eval_dual(x).d
    }

    pub fn depends_on_x(&self) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::X => true,
            Expr::Neg(a) => a.depends_on_x(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.depends_on_x() || b.depends_on_x(),
            Expr::Call(_, args) => args.iter().any(Expr::depends_on_x),
        }
    }

    /// `Some((c0, c1))` when the expression is exactly `c0 + c1 * x`.
    pub fn as_affine(&self) -> Option<(f64, f64)> {
        if !self.depends_on_x() {
            return Some((self.eval(0.0), 0.0));
        }
        match self {
            Expr::X => Some((0.0, 1.0)),
            Expr::Neg(a) => a.as_affine().map(|(c0, c1)| (-c0, -c1)),
            Expr::Add(a, b) => {
                let (a0, a1) = a.as_affine()?;
                let (b0, b1) = b.as_affine()?;
                Some((a0 + b0, a1 + b1))
            }
            Expr::Sub(a, b) => {
                let (a0, a1) = a.as_affine()?;
                let (b0, b1) = b.as_affine()?;
                Some((a0 - b0, a1 - b1))
            }
            Expr::Mul(a, b) => {
                let (a0, a1) = a.as_affine()?;
                let (b0, b1) = b.as_affine()?;
                if a1 == 0.0 {
                    Some((a0 * b0, a0 * b1))
                } else if b1 == 0.0 {
                    Some((a0 * b0, a1 * b0))
                } else {
                    None
                }
            }
            Expr::Div(a, b) if !b.depends_on_x() => {
                let (a0, a1) = a.as_affine()?;
                let c = b.eval(0.0);
                Some((a0 / c, a1 / c))
            }
            _ => None,
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            Expr::Num(c) if *c < 0.0 => 3,
            _ => 5,
        }
    }
}

fn pow_f64(a: f64, b: f64) -> f64 {
    if b == 2.0 {
        a * a
    } else if b.fract() == 0.0 && b.abs() <= 64.0 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn wrap(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
            if e.precedence() < min_prec {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Num(c) if *c < 0.0 => write!(f, "-{}", -c),
            Expr::Num(c) => write!(f, "{c}"),
            Expr::X => write!(f, "x"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                wrap(f, a, 3)
            }
            Expr::Add(a, b) => {
                wrap(f, a, 1)?;
                write!(f, " + ")?;
                wrap(f, b, 2)
            }
            Expr::Sub(a, b) => {
                wrap(f, a, 1)?;
                write!(f, " - ")?;
                wrap(f, b, 2)
            }
            Expr::Mul(a, b) => {
                wrap(f, a, 2)?;
                write!(f, " * ")?;
                wrap(f, b, 3)
            }
            Expr::Div(a, b) => {
                wrap(f, a, 2)?;
                write!(f, " / ")?;
                wrap(f, b, 3)
            }
            Expr::Pow(a, b) => {
                wrap(f, a, 5)?;
                write!(f, "^")?;
                wrap(f, b, 3)
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
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

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    col: usize,
}

fn parse_err(col: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line: 1,
        col,
        message: message.into(),
    }
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let simple = match c {
            '+' => Some(TokenKind::Plus),
            '-' => Some(TokenKind::Minus),
            '*' => Some(TokenKind::Star),
            '/' => Some(TokenKind::Slash),
            '^' => Some(TokenKind::Caret),
            '(' => Some(TokenKind::LParen),
            ')' => Some(TokenKind::RParen),
            ',' => Some(TokenKind::Comma),
            _ => None,
        };
        if let Some(kind) = simple {
            out.push(Token { kind, col });
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v: f64 = text
                .parse()
                .map_err(|_| parse_err(col, format!("malformed number '{text}'")))?;
            out.push(Token {
                kind: TokenKind::Num(v),
                col,
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                kind: TokenKind::Ident(chars[start..i].iter().collect()),
                col,
            });
            continue;
        }
        return Err(parse_err(col, format!("unexpected character '{c}'")));
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    src_len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if self.peek().map(|t| &t.kind) == Some(kind) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn end_col(&self) -> usize {
        self.src_len + 1
    }

    fn expect(&mut self, kind: TokenKind) -> Result<()> {
        match self.next() {
            Some(t) if t.kind == kind => Ok(()),
            Some(t) => Err(parse_err(t.col, format!("expected {kind:?}, found {:?}", t.kind))),
            None => Err(parse_err(self.end_col(), format!("expected {kind:?}, found end of input"))),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(&TokenKind::Plus) {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(&TokenKind::Minus) {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(&TokenKind::Star) {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(&TokenKind::Slash) {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(&TokenKind::Minus) {
            return Ok(match self.unary()? {
                Expr::Num(c) => Expr::Num(-c),
                e => Expr::Neg(Box::new(e)),
            });
        }
        if self.eat(&TokenKind::Plus) {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat(&TokenKind::Caret) {
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let Some(tok) = self.next() else {
            return Err(parse_err(self.end_col(), "unexpected end of input"));
        };
        match tok.kind {
            TokenKind::Num(v) => Ok(Expr::Num(v)),
            TokenKind::LParen => {
                let e = self.expr()?;
                self.expect(TokenKind::RParen)?;
                Ok(e)
            }
            TokenKind::Ident(name) => match name.as_str() {
                "x" => Ok(Expr::X),
                "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                "e" => Ok(Expr::Num(std::f64::consts::E)),
                "pow" => {
                    let args = self.args(tok.col, &name)?;
                    if args.len() != 2 {
                        return Err(parse_err(tok.col, "pow expects 2 arguments"));
                    }
                    let mut it = args.into_iter();
                    let a = it.next().unwrap();
                    let b = it.next().unwrap();
                    Ok(Expr::Pow(Box::new(a), Box::new(b)))
                }
                _ => {
                    let Some(func) = Func::from_name(&name) else {
                        return Err(parse_err(tok.col, format!("unknown identifier '{name}'")));
                    };
                    let args = self.args(tok.col, &name)?;
                    if !func.arity_ok(args.len()) {
                        return Err(parse_err(
                            tok.col,
                            format!("wrong number of arguments to {name}: {}", args.len()),
                        ));
                    }
                    Ok(Expr::Call(func, args))
                }
            },
            other => Err(parse_err(tok.col, format!("unexpected token {other:?}"))),
        }
    }

    fn args(&mut self, col: usize, name: &str) -> Result<Vec<Expr>> {
        if !self.eat(&TokenKind::LParen) {
            return Err(parse_err(col, format!("expected '(' after {name}")));
        }
        let mut args = vec![self.expr()?];
        while self.eat(&TokenKind::Comma) {
            args.push(self.expr()?);
        }
        self.expect(TokenKind::RParen)?;
        Ok(args)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(s: &str, x: f64) -> f64 {
        Expr::parse(s).unwrap().eval(x)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", 0.0), 7.0);
        assert_eq!(ev("-x^2", 3.0), -9.0);
        assert_eq!(ev("2^3^2", 0.0), 512.0);
        assert_eq!(ev("2^-1", 0.0), 0.5);
        assert_eq!(ev("10 - 4 - 3", 0.0), 3.0);
        assert_eq!(ev("12 / 3 / 2", 0.0), 2.0);
    }

    #[test]
    fn functions_and_constants() {
        assert_eq!(ev("floor(x)^2", 2.7), 4.0);
        assert_eq!(ev("min(x^2, x^-6)", 2.0), 2f64.powi(-6));
        assert_eq!(ev("max(1, 2, x)", 5.0), 5.0);
        assert!((ev("sin(pi/2)", 0.0) - 1.0).abs() < 1e-15);
        assert!((ev("log(e)", 0.0) - 1.0).abs() < 1e-15);
        assert_eq!(ev("pow(x, 3)", 2.0), 8.0);
        assert_eq!(ev("sqrt(16)", 0.0), 4.0);
    }

    #[test]
    fn example_payoffs_parse() {
        let g3 = Expr::parse("1/12 * x^(2 - 1/x^3) - 742205 * x^-5").unwrap();
        assert!(g3.eval(12.0).is_finite());
        let g7 = Expr::parse("x^(-6 + x)").unwrap();
        assert!((g7.eval(0.1) - 0.1f64.powf(-5.9)).abs() < 1e-6);
    }

    #[test]
    fn errors_carry_columns() {
        match Expr::parse("x + * 2") {
            Err(Error::Parse { col, .. }) => assert_eq!(col, 5),
            other => panic!("{other:?}"),
        }
        match Expr::parse("foo(x)") {
            Err(Error::Parse { col, .. }) => assert_eq!(col, 1),
            other => panic!("{other:?}"),
        }
        assert!(Expr::parse("(x + 1").is_err());
        assert!(Expr::parse("sin(x, 2)").is_err());
        assert!(Expr::parse("").is_err());
    }

    #[test]
    fn dual_derivatives_match_closed_forms() {
        let e = Expr::parse("x^2 * sin(x)").unwrap();
        let x = 1.3;
        let d = e.eval_dual(x);
        assert!((d.d - (2.0 * x * x.sin() + x * x * x.cos())).abs() < 1e-14);
        let e = Expr::parse("x^(2 - 1/x^3)").unwrap();
        let h = 1e-6;
        let fd = (e.eval(12.0 + h) - e.eval(12.0 - h)) / (2.0 * h);
        assert!((e.derivative(12.0) - fd).abs() / fd.abs() < 1e-8);
        assert_eq!(Expr::parse("floor(x)^2").unwrap().derivative(2.5), 0.0);
    }

    #[test]
    fn affine_detection() {
        assert_eq!(Expr::parse("0.1*x").unwrap().as_affine(), Some((0.0, 0.1)));
        assert_eq!(Expr::parse("2 - x/4").unwrap().as_affine(), Some((2.0, -0.25)));
        assert_eq!(Expr::parse("x*x").unwrap().as_affine(), None);
        assert_eq!(Expr::parse("sqrt(2)").unwrap().as_affine(), Some((2f64.sqrt(), 0.0)));
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (-50.0f64..50.0).prop_map(|v| Expr::Num((v * 8.0).round() / 8.0)),
            Just(Expr::X),
        ];
        leaf.prop_recursive(4, 24, 3, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| match a {
                    Expr::Num(c) => Expr::Num(-c),
                    a => Expr::Neg(Box::new(a)),
                }),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Sub(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Div(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Pow(Box::new(a), Box::new(b))),
                inner.clone().prop_map(|a| Expr::Call(Func::Sin, vec![a])),
                (inner.clone(), inner).prop_map(|(a, b)| Expr::Call(Func::Max, vec![a, b])),
            ]
        })
    }

    /// Straightforward tree-walk kept separate from `Expr::eval`.
    fn reference_eval(e: &Expr, x: f64) -> f64 {
        match e {
            Expr::Num(c) => *c,
            Expr::X => x,
            Expr::Neg(a) => -reference_eval(a, x),
            Expr::Add(a, b) => reference_eval(a, x) + reference_eval(b, x),
            Expr::Sub(a, b) => reference_eval(a, x) - reference_eval(b, x),
            Expr::Mul(a, b) => reference_eval(a, x) * reference_eval(b, x),
            Expr::Div(a, b) => reference_eval(a, x) / reference_eval(b, x),
            Expr::Pow(a, b) => pow_f64(reference_eval(a, x), reference_eval(b, x)),
            Expr::Call(Func::Sin, a) => reference_eval(&a[0], x).sin(),
            Expr::Call(Func::Max, a) => reference_eval(&a[0], x).max(reference_eval(&a[1], x)),
            Expr::Call(..) => unreachable!(),
        }
    }

    proptest! {
        #[test]
        fn display_reparses_to_same_tree(e in arb_expr()) {
            let text = e.to_string();
            let back = Expr::parse(&text).unwrap();
            prop_assert_eq!(back, e);
        }

        #[test]
        fn eval_matches_reference(e in arb_expr(), num in 1i32..64, den in 1i32..16) {
            let x = num as f64 / den as f64;
            let a = e.eval(x);
            let b = reference_eval(&e, x);
            prop_assert!(a == b || (a.is_nan() && b.is_nan()), "{a} vs {b}");
        }
    }
}
