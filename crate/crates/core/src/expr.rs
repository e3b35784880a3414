//! Closed-form field expressions.
//!
//! Coefficients, stream functions, gauges and test functions are written as
//! small expressions in `t, x1..x3` (aliases `x, y, z`) built from numbers,
//! `pi`, `+ - * /`, integer powers `^` and `sin`, `cos`, `exp`. Expressions are
//! differentiated symbolically so every derivative the lab needs is analytic,
//! and compiled to a flat stack program for fast evaluation.

use std::fmt;
use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::scalar::Real;

/// Largest spatial dimension the expression language addresses.
pub const MAX_DIM: usize = 3;

/// Variable slot: 0 is time, `i` in `1..=MAX_DIM` is `x_i`.
pub type VarId = usize;

pub const VAR_T: VarId = 0;

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(VarId),
    Add(Arc<Expr>, Arc<Expr>),
    Sub(Arc<Expr>, Arc<Expr>),
    Mul(Arc<Expr>, Arc<Expr>),
    Div(Arc<Expr>, Arc<Expr>),
    Neg(Arc<Expr>),
    Pow(Arc<Expr>, i32),
    Sin(Arc<Expr>),
    Cos(Arc<Expr>),
    Exp(Arc<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Self {
        Expr::Num(v)
    }

    pub fn t() -> Self {
        Expr::Var(VAR_T)
    }

    /// `x_i` with 0-based axis index.
    pub fn x(axis: usize) -> Self {
        Expr::Var(axis + 1)
    }

    pub fn zero() -> Self {
        Expr::Num(0.0)
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_num() == Some(0.0)
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.as_num(), b.as_num()) {
            (Some(x), Some(y)) => Expr::Num(x + y),
            (Some(x), _) if x == 0.0 => b,
            (_, Some(y)) if y == 0.0 => a,
            _ => Expr::Add(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a.as_num(), b.as_num()) {
            (Some(x), Some(y)) => Expr::Num(x - y),
            (Some(x), _) if x == 0.0 => Expr::neg(b),
            (_, Some(y)) if y == 0.0 => a,
            _ => Expr::Sub(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.as_num(), b.as_num()) {
            (Some(x), Some(y)) => Expr::Num(x * y),
            (Some(x), _) | (_, Some(x)) if x == 0.0 => Expr::Num(0.0),
            (Some(x), _) if x == 1.0 => b,
            (_, Some(y)) if y == 1.0 => a,
            (Some(x), _) if x == -1.0 => Expr::neg(b),
            (_, Some(y)) if y == -1.0 => Expr::neg(a),
            _ => Expr::Mul(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a.as_num(), b.as_num()) {
            (Some(x), Some(y)) if y != 0.0 => Expr::Num(x / y),
            (Some(x), _) if x == 0.0 => Expr::Num(0.0),
            (_, Some(y)) if y == 1.0 => a,
            _ => Expr::Div(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Num(v) => Expr::Num(-v),
            Expr::Neg(inner) => (*inner).clone(),
            other => Expr::Neg(Arc::new(other)),
        }
    }

    pub fn powi(a: Expr, k: i32) -> Expr {
        match (a.as_num(), k) {
            (_, 0) => Expr::Num(1.0),
            (_, 1) => a,
            (Some(v), _) => Expr::Num(v.powi(k)),
            _ => Expr::Pow(Arc::new(a), k),
        }
    }

    pub fn sin(a: Expr) -> Expr {
        match a.as_num() {
            Some(v) => Expr::Num(v.sin()),
            None => Expr::Sin(Arc::new(a)),
        }
    }

    pub fn cos(a: Expr) -> Expr {
        match a.as_num() {
            Some(v) => Expr::Num(v.cos()),
            None => Expr::Cos(Arc::new(a)),
        }
    }

    pub fn exp(a: Expr) -> Expr {
        match a.as_num() {
            Some(v) => Expr::Num(v.exp()),
            None => Expr::Exp(Arc::new(a)),
        }
    }

    /// Sum of a list of expressions (zero for an empty list).
    pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Expr {
        terms.into_iter().fold(Expr::zero(), Expr::add)
    }

    /// Parses an expression string.
    pub fn parse(src: &str) -> Result<Expr> {
        Parser::new(src)?.parse_all()
    }

    /// Symbolic partial derivative with respect to a variable slot.
    pub fn diff(&self, var: VarId) -> Expr {
        use Expr::*;
        match self {
            Num(_) => Expr::zero(),
            Var(v) => Expr::Num(if *v == var { 1.0 } else { 0.0 }),
            Add(a, b) => Expr::add(a.diff(var), b.diff(var)),
            Sub(a, b) => Expr::sub(a.diff(var), b.diff(var)),
            Mul(a, b) => Expr::add(
                Expr::mul(a.diff(var), (**b).clone()),
                Expr::mul((**a).clone(), b.diff(var)),
            ),
            Div(a, b) => Expr::div(
                Expr::sub(
                    Expr::mul(a.diff(var), (**b).clone()),
                    Expr::mul((**a).clone(), b.diff(var)),
                ),
                Expr::powi((**b).clone(), 2),
            ),
            Neg(a) => Expr::neg(a.diff(var)),
            Pow(a, k) => Expr::mul(
                Expr::mul(Expr::Num(*k as f64), Expr::powi((**a).clone(), k - 1)),
                a.diff(var),
            ),
            Sin(a) => Expr::mul(Expr::cos((**a).clone()), a.diff(var)),
            Cos(a) => Expr::neg(Expr::mul(Expr::sin((**a).clone()), a.diff(var))),
            Exp(a) => Expr::mul(Expr::exp((**a).clone()), a.diff(var)),
        }
    }

    /// Spatial partial derivative along 0-based `axis`.
    pub fn dx(&self, axis: usize) -> Expr {
        self.diff(axis + 1)
    }

    pub fn dt(&self) -> Expr {
        self.diff(VAR_T)
    }

    /// Replaces every occurrence of `var` by `with`.
    pub fn substitute(&self, var: VarId, with: &Expr) -> Expr {
        use Expr::*;
        let s = |e: &Arc<Expr>| e.substitute(var, with);
        match self {
            Num(v) => Num(*v),
            Var(v) if *v == var => with.clone(),
            Var(v) => Var(*v),
            Add(a, b) => Expr::add(s(a), s(b)),
            Sub(a, b) => Expr::sub(s(a), s(b)),
            Mul(a, b) => Expr::mul(s(a), s(b)),
            Div(a, b) => Expr::div(s(a), s(b)),
            Neg(a) => Expr::neg(s(a)),
            Pow(a, k) => Expr::powi(s(a), *k),
            Sin(a) => Expr::sin(s(a)),
            Cos(a) => Expr::cos(s(a)),
            Exp(a) => Expr::exp(s(a)),
        }
    }

    /// Largest variable slot referenced (0 when only `t` or constants).
    pub fn max_var(&self) -> VarId {
        use Expr::*;
        match self {
            Num(_) => 0,
            Var(v) => *v,
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => a.max_var().max(b.max_var()),
            Neg(a) | Pow(a, _) | Sin(a) | Cos(a) | Exp(a) => a.max_var(),
        }
    }

    /// Whether `var` occurs anywhere in the expression.
    pub fn depends_on(&self, var: VarId) -> bool {
        use Expr::*;
        match self {
            Num(_) => false,
            Var(v) => *v == var,
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => a.depends_on(var) || b.depends_on(var),
            Neg(a) | Pow(a, _) | Sin(a) | Cos(a) | Exp(a) => a.depends_on(var),
        }
    }

    /// Plain `f64` evaluation; `x` holds the spatial coordinates.
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        self.compile::<f64>().eval(t, x)
    }

    pub fn compile<T: Real>(&self) -> Program<T> {
        let mut ops = Vec::new();
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        emit(self, &mut ops, &mut depth, &mut max_depth);
        Program { ops, stack: max_depth.max(1) }
    }
}

fn emit<T: Real>(e: &Expr, ops: &mut Vec<Op<T>>, depth: &mut usize, max_depth: &mut usize) {
    use Expr::*;
    fn push<T>(ops: &mut Vec<Op<T>>, op: Op<T>, delta: isize, depth: &mut usize, max_depth: &mut usize) {
        ops.push(op);
        *depth = (*depth as isize + delta) as usize;
        *max_depth = (*max_depth).max(*depth);
    }
    match e {
        Num(v) => push(ops, Op::Const(T::lit(*v)), 1, depth, max_depth),
        Var(v) => push(ops, Op::Var(*v), 1, depth, max_depth),
        Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => {
            emit(a, ops, depth, max_depth);
            emit(b, ops, depth, max_depth);
            let op = match e {
                Add(..) => Op::Add,
                Sub(..) => Op::Sub,
                Mul(..) => Op::Mul,
                _ => Op::Div,
            };
            push(ops, op, -1, depth, max_depth);
        }
        Neg(a) | Sin(a) | Cos(a) | Exp(a) | Pow(a, _) => {
            emit(a, ops, depth, max_depth);
            let op = match e {
                Neg(_) => Op::Neg,
                Sin(_) => Op::Sin,
                Cos(_) => Op::Cos,
                Exp(_) => Op::Exp,
                Pow(_, k) => Op::Powi(*k),
                _ => unreachable!(),
            };
            push(ops, op, 0, depth, max_depth);
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Op<T> {
    Const(T),
    Var(VarId),
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Powi(i32),
    Sin,
    Cos,
    Exp,
}

/// Compiled expression, evaluated with a fixed-size stack.
#[derive(Clone, Debug)]
pub struct Program<T> {
    ops: Vec<Op<T>>,
    stack: usize,
}

const STACK_INLINE: usize = 32;

impl<T: Real> Program<T> {
    pub fn constant(v: T) -> Self {
        Program { ops: vec![Op::Const(v)], stack: 1 }
    }

    /// `Some(v)` when the program is a single constant.
    pub fn as_constant(&self) -> Option<T> {
        match self.ops.as_slice() {
            [Op::Const(v)] => Some(*v),
            _ => None,
        }
    }

    #[inline]
    pub fn eval(&self, t: T, x: &[T]) -> T {
        if self.stack <= STACK_INLINE {
            let mut buf = [T::zero(); STACK_INLINE];
            self.run(&mut buf, t, x)
        } else {
            let mut buf = vec![T::zero(); self.stack];
            self.run(&mut buf, t, x)
        }
    }

    #[inline]
    fn run(&self, st: &mut [T], t: T, x: &[T]) -> T {
        let mut sp = 0usize;
        for op in &self.ops {
            match *op {
                Op::Const(v) => {
                    st[sp] = v;
                    sp += 1;
                }
                Op::Var(v) => {
                    st[sp] = if v == VAR_T {
                        t
                    } else {
                        x.get(v - 1).copied().unwrap_or_else(T::zero)
                    };
                    sp += 1;
                }
                Op::Add => {
                    sp -= 1;
                    st[sp - 1] = st[sp - 1] + st[sp];
                }
                Op::Sub => {
                    sp -= 1;
                    st[sp - 1] = st[sp - 1] - st[sp];
                }
                Op::Mul => {
                    sp -= 1;
                    st[sp - 1] = st[sp - 1] * st[sp];
                }
                Op::Div => {
                    sp -= 1;
                    st[sp - 1] = st[sp - 1] / st[sp];
                }
                Op::Neg => st[sp - 1] = -st[sp - 1],
                Op::Powi(k) => st[sp - 1] = st[sp - 1].powi(k),
                Op::Sin => st[sp - 1] = st[sp - 1].sin(),
                Op::Cos => st[sp - 1] = st[sp - 1].cos(),
                Op::Exp => st[sp - 1] = st[sp - 1].exp(),
            }
        }
        st[0]
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Expr::*;
        match self {
            Num(v) => write!(f, "{v}"),
            Var(0) => write!(f, "t"),
            Var(v) => write!(f, "x{v}"),
            Add(a, b) => write!(f, "({a} + {b})"),
            Sub(a, b) => write!(f, "({a} - {b})"),
            Mul(a, b) => write!(f, "{a}*{b}"),
            Div(a, b) => write!(f, "{a}/({b})"),
            Neg(a) => write!(f, "-({a})"),
            Pow(a, k) => write!(f, "({a})^{k}"),
            Sin(a) => write!(f, "sin({a})"),
            Cos(a) => write!(f, "cos({a})"),
            Exp(a) => write!(f, "exp({a})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
    src: String,
}

impl Parser {
    fn new(src: &str) -> Result<Self> {
        let mut toks = Vec::new();
        let chars: Vec<char> = src.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_digit() || c == '.' {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_digit()
                        || chars[i] == '.'
                        || ((chars[i] == 'e' || chars[i] == 'E')
                            && i + 1 < chars.len()
                            && (chars[i + 1].is_ascii_digit() || chars[i + 1] == '-' || chars[i + 1] == '+'))
                        || ((chars[i] == '-' || chars[i] == '+') && (chars[i - 1] == 'e' || chars[i - 1] == 'E')))
                {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                let v = s
                    .parse::<f64>()
                    .map_err(|_| LabError::Parse { src: src.into(), msg: format!("bad number `{s}`") })?;
                toks.push(Tok::Num(v));
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                toks.push(Tok::Ident(chars[start..i].iter().collect()));
            } else if "+-*/^".contains(c) {
                toks.push(Tok::Op(c));
                i += 1;
            } else if c == '(' {
                toks.push(Tok::LParen);
                i += 1;
            } else if c == ')' {
                toks.push(Tok::RParen);
                i += 1;
            } else {
                return Err(LabError::Parse { src: src.into(), msg: format!("unexpected character `{c}`") });
            }
        }
        Ok(Parser { toks, pos: 0, src: src.into() })
    }

    fn err(&self, msg: impl Into<String>) -> LabError {
        LabError::Parse { src: self.src.clone(), msg: msg.into() }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn parse_all(mut self) -> Result<Expr> {
        if self.toks.is_empty() {
            return Err(self.err("empty expression"));
        }
        let e = self.expr()?;
        if self.pos != self.toks.len() {
            return Err(self.err("trailing tokens"));
        }
        Ok(e)
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if c == '+' { Expr::add(lhs, rhs) } else { Expr::sub(lhs, rhs) };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if c == '*' { Expr::mul(lhs, rhs) } else { Expr::div(lhs, rhs) };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(Expr::neg(self.unary()?))
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            let k = exp
                .as_num()
                .filter(|v| v.fract() == 0.0 && v.abs() < 64.0)
                .ok_or_else(|| self.err("exponent must be an integer constant"))?;
            return Ok(Expr::powi(base, k as i32));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                match self.next() {
                    Some(Tok::RParen) => Ok(e),
                    _ => Err(self.err("missing `)`")),
                }
            }
            Some(Tok::Ident(name)) => {
                let func = match name.as_str() {
                    "sin" | "cos" | "exp" => Some(name.clone()),
                    _ => None,
                };
                if let Some(func) = func {
                    match self.next() {
                        Some(Tok::LParen) => {}
                        _ => return Err(self.err(format!("`{func}` needs parentheses"))),
                    }
                    let arg = self.expr()?;
                    match self.next() {
                        Some(Tok::RParen) => {}
                        _ => return Err(self.err("missing `)`")),
                    }
                    return Ok(match func.as_str() {
                        "sin" => Expr::sin(arg),
                        "cos" => Expr::cos(arg),
                        _ => Expr::exp(arg),
                    });
                }
                match name.as_str() {
                    "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                    "t" => Ok(Expr::t()),
                    "x" => Ok(Expr::x(0)),
                    "y" => Ok(Expr::x(1)),
                    "z" => Ok(Expr::x(2)),
                    s if s.starts_with('x') => {
                        let i: usize = s[1..].parse().map_err(|_| self.err(format!("unknown name `{s}`")))?;
                        if i == 0 || i > MAX_DIM {
                            return Err(self.err(format!("coordinate `{s}` out of range")));
                        }
                        Ok(Expr::x(i - 1))
                    }
                    s => Err(self.err(format!("unknown name `{s}`"))),
                }
            }
            _ => Err(self.err("unexpected end of expression")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, t: f64, x: &[f64]) -> f64 {
        Expr::parse(s).unwrap().eval(t, x)
    }

    #[test]
    fn parses_precedence_and_aliases() {
        assert_eq!(ev("1 + 2*3^2", 0.0, &[]), 19.0);
        assert_eq!(ev("-x^2", 0.0, &[3.0]), -9.0);
        assert_eq!(ev("x*y - x2*x1", 0.0, &[2.0, 5.0]), 0.0);
        assert!((ev("sin(pi*x1)*t", 2.0, &[0.5]) - 2.0).abs() < 1e-15);
        assert_eq!(ev("2e-1*10", 0.0, &[]), 2.0);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Expr::parse("").is_err());
        assert!(Expr::parse("sin x").is_err());
        assert!(Expr::parse("x^y").is_err());
        assert!(Expr::parse("x4").is_err());
        assert!(Expr::parse("(1+2").is_err());
        assert!(Expr::parse("foo(1)").is_err());
    }

    #[test]
    fn derivatives_match_hand_results() {
        let e = Expr::parse("x1*x2").unwrap();
        assert_eq!(e.dx(0).eval(0.0, &[3.0, 4.0]), 4.0);
        assert_eq!(e.dx(1).eval(0.0, &[3.0, 4.0]), 3.0);
        let s = Expr::parse("sin(pi*x)*exp(t)/(1+y^2)").unwrap();
        let (t, x, y) = (0.3f64, 0.2f64, 0.7f64);
        let pi = std::f64::consts::PI;
        let dy = -(pi * x).sin() * t.exp() * 2.0 * y / (1.0 + y * y).powi(2);
        assert!((s.dx(1).eval(t, &[x, y]) - dy).abs() < 1e-14);
        let dt = (pi * x).sin() * t.exp() / (1.0 + y * y);
        assert!((s.dt().eval(t, &[x, y]) - dt).abs() < 1e-14);
    }

    #[test]
    fn substitution_reverses_time() {
        let e = Expr::parse("t^2 + x").unwrap();
        let rev = e.substitute(VAR_T, &Expr::sub(Expr::num(2.0), Expr::t()));
        assert_eq!(rev.eval(0.5, &[1.0]), 1.5f64.powi(2) + 1.0);
    }

    #[test]
    fn f32_program_agrees() {
        let e = Expr::parse("cos(x)*x^3 - 2/(1+t)").unwrap();
        let p32 = e.compile::<f32>();
        let v = p32.eval(0.5, &[1.25]);
        assert!((v as f64 - e.eval(0.5, &[1.25])).abs() < 1e-5);
    }
}
