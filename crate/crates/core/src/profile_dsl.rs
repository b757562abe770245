//! A small expression language for radial profiles on cusp charts.
//!
//! Grammar (LL(1)), loosest binding first:
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | 'r' | 'w' | 'pi' | ident '(' expr ')' | '(' expr ')'
//! ```
//! `w` is `ln|ln r|`. Logarithms are evaluated in log space (`ln(a*b) = ln a + ln b`,
//! `ln(r) = ln_r` exactly), so profiles stay finite deep in the cusp where `r` underflows.

use std::fmt;

use crate::error::{Error, Result};
use crate::metrics_flattenings::SmoothStep;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    R,
    W,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Ln,
    Abs,
    Sqrt,
    Psi,
    Chi,
    PhiStep,
    GStep,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "psi" => Func::Psi,
            "chi" => Func::Chi,
            "phi_step" => Func::PhiStep,
            "g_step" => Func::GStep,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Psi => "psi",
            Func::Chi => "chi",
            Func::PhiStep => "phi_step",
            Func::GStep => "g_step",
        }
    }
}

/// Expression node; `col` is the 1-based source column used in diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin {
        op: BinOp,
        lhs: Box<Node>,
        rhs: Box<Node>,
        col: usize,
    },
    Call {
        func: Func,
        arg: Box<Node>,
        col: usize,
    },
}

/// A parsed profile together with its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileExpr {
    pub ast: Node,
    source: String,
}

/// Where a profile is evaluated: `r` and `ln r` carried separately so that
/// `ln_r` stays exact when `r` underflows.
#[derive(Debug, Clone, Copy)]
pub struct RadialPoint {
    pub r: f64,
    pub ln_r: f64,
}

impl RadialPoint {
    pub fn from_r(r: f64) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::Domain(format!(
                "profile variable r = {r} outside (0, 1)"
            )));
        }
        Ok(Self { r, ln_r: r.ln() })
    }

    /// Point with `w = ln|ln r|`, valid for every finite `w`.
    pub fn from_w(w: f64) -> Self {
        let ln_r = -w.exp();
        Self {
            r: ln_r.exp(),
            ln_r,
        }
    }

    pub fn w(&self) -> f64 {
        (-self.ln_r).ln()
    }
}

// ---------------------------------------------------------------- lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    col: usize,
}

impl Lexer {
    fn new(src: &str) -> Self {
        Self {
            chars: src.chars().collect(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.pos).copied()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    /// Next token with its (line, column).
    fn next(&mut self) -> Result<(Tok, usize, usize)> {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
        let (line, col) = (self.line, self.col);
        let Some(c) = self.peek() else {
            return Ok((Tok::End, line, col));
        };
        if c.is_ascii_digit() || c == '.' {
            let mut s = String::new();
            while let Some(d) = self.peek() {
                let exp_sign = (d == '+' || d == '-') && s.ends_with(['e', 'E']);
                if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                    s.push(d);
                    self.bump();
                } else {
                    break;
                }
            }
            let v: f64 = s.parse().map_err(|_| Error::Parse {
                line,
                column: col,
                message: format!("malformed number '{s}'"),
            })?;
            return Ok((Tok::Num(v), line, col));
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while let Some(d) = self.peek() {
                if d.is_ascii_alphanumeric() || d == '_' {
                    s.push(d);
                    self.bump();
                } else {
                    break;
                }
            }
            return Ok((Tok::Ident(s), line, col));
        }
        if "+-*/^(),".contains(c) {
            self.bump();
            return Ok((Tok::Sym(c), line, col));
        }
        Err(Error::Parse {
            line,
            column: col,
            message: format!("unexpected character '{c}'"),
        })
    }
}

// ---------------------------------------------------------------- parser

struct Parser {
    lex: Lexer,
    tok: Tok,
    line: usize,
    col: usize,
}

impl Parser {
    fn new(src: &str) -> Result<Self> {
        let mut lex = Lexer::new(src);
        let (tok, line, col) = lex.next()?;
        Ok(Self {
            lex,
            tok,
            line,
            col,
        })
    }

    fn advance(&mut self) -> Result<()> {
        let (tok, line, col) = self.lex.next()?;
        self.tok = tok;
        self.line = line;
        self.col = col;
        Ok(())
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            line: self.line,
            column: self.col,
            message: message.into(),
        })
    }

    fn describe(&self) -> String {
        match &self.tok {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier '{s}'"),
            Tok::Sym(c) => format!("'{c}'"),
            Tok::End => "end of input".to_string(),
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.tok == Tok::Sym(c) {
            self.advance()
        } else {
            self.error(format!("expected '{c}', found {}", self.describe()))
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.tok {
                Tok::Sym('+') => BinOp::Add,
                Tok::Sym('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            let col = self.col;
            self.advance()?;
            let rhs = self.term()?;
            lhs = Node::Bin {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                col,
            };
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.tok {
                Tok::Sym('*') => BinOp::Mul,
                Tok::Sym('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            let col = self.col;
            self.advance()?;
            let rhs = self.unary()?;
            lhs = Node::Bin {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                col,
            };
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.tok == Tok::Sym('-') {
            self.advance()?;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.tok == Tok::Sym('^') {
            let col = self.col;
            self.advance()?;
            let exp = self.unary()?;
            return Ok(Node::Bin {
                op: BinOp::Pow,
                lhs: Box::new(base),
                rhs: Box::new(exp),
                col,
            });
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.advance()?;
                Ok(Node::Num(v))
            }
            Tok::Sym('(') => {
                self.advance()?;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let col = self.col;
                match name.as_str() {
                    "r" => {
                        self.advance()?;
                        Ok(Node::Var(Var::R))
                    }
                    "w" => {
                        self.advance()?;
                        Ok(Node::Var(Var::W))
                    }
                    "pi" => {
                        self.advance()?;
                        Ok(Node::Num(std::f64::consts::PI))
                    }
                    _ => {
                        let Some(func) = Func::from_name(&name) else {
                            return self.error(format!("unknown identifier '{name}'"));
                        };
                        self.advance()?;
                        self.expect('(')?;
                        let arg = self.expr()?;
                        self.expect(')')?;
                        Ok(Node::Call {
                            func,
                            arg: Box::new(arg),
                            col,
                        })
                    }
                }
            }
            _ => self.error(format!(
                "expected a number, variable, function or '(', found {}",
                self.describe()
            )),
        }
    }
}

/// Parse a profile expression.
pub fn parse(src: &str) -> Result<ProfileExpr> {
    let mut p = Parser::new(src)?;
    let ast = p.expr()?;
    if p.tok != Tok::End {
        return p.error(format!("unexpected {} after expression", p.describe()));
    }
    Ok(ProfileExpr {
        ast,
        source: src.to_string(),
    })
}

// ---------------------------------------------------------------- printer

fn precedence(n: &Node) -> u8 {
    match n {
        Node::Bin {
            op: BinOp::Add | BinOp::Sub,
            ..
        } => 1,
        Node::Bin {
            op: BinOp::Mul | BinOp::Div,
            ..
        } => 2,
        Node::Neg(_) => 3,
        Node::Bin { op: BinOp::Pow, .. } => 4,
        Node::Num(v) if *v < 0.0 || v.is_sign_negative() => 3,
        _ => 5,
    }
}

fn format_number(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{a}")
    } else {
        format!("{a:e}")
    }
}

fn write_node(n: &Node, out: &mut String) {
    let wrap = |child: &Node, min: u8, out: &mut String| {
        if precedence(child) < min {
            out.push('(');
            write_node(child, out);
            out.push(')');
        } else {
            write_node(child, out);
        }
    };
    match n {
        Node::Num(v) => {
            if v.is_sign_negative() && *v != 0.0 {
                out.push('-');
            }
            out.push_str(&format_number(*v));
        }
        Node::Var(Var::R) => out.push('r'),
        Node::Var(Var::W) => out.push('w'),
        Node::Neg(x) => {
            out.push('-');
            wrap(x, 3, out);
        }
        Node::Bin { op, lhs, rhs, .. } => {
            let (sym, p) = match op {
                BinOp::Add => ('+', 1),
                BinOp::Sub => ('-', 1),
                BinOp::Mul => ('*', 2),
                BinOp::Div => ('/', 2),
                BinOp::Pow => ('^', 4),
            };
            // Left-associative operators need a tighter right operand;
            // the right-associative power needs a tighter left operand.
            let (lmin, rmin) = if *op == BinOp::Pow {
                (5, 3)
            } else {
                (p, p + 1)
            };
            wrap(lhs, lmin, out);
            if p == 1 {
                out.push(' ');
                out.push(sym);
                out.push(' ');
            } else {
                out.push(sym);
            }
            wrap(rhs, rmin, out);
        }
        Node::Call { func, arg, .. } => {
            out.push_str(func.name());
            out.push('(');
            write_node(arg, out);
            out.push(')');
        }
    }
}

impl fmt::Display for ProfileExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        write_node(&self.ast, &mut s);
        f.write_str(&s)
    }
}

impl ProfileExpr {
    /// The text this expression was parsed from.
    pub fn source(&self) -> &str {
        &self.source
    }

    /// Canonical printed form; `parse(e.normalized())` prints identically.
    pub fn normalized(&self) -> String {
        self.to_string()
    }

    /// Value at radius `r ∈ (0, 1)`.
    pub fn eval(&self, r: f64) -> Result<f64> {
        eval_node(&self.ast, &RadialPoint::from_r(r)?)
    }

    /// Value at `w = ln|ln r|`.
    pub fn eval_w(&self, w: f64) -> Result<f64> {
        eval_node(&self.ast, &RadialPoint::from_w(w))
    }

    pub fn eval_at(&self, p: &RadialPoint) -> Result<f64> {
        eval_node(&self.ast, p)
    }

    /// Derivative of order 0..=2 in `r`.
    pub fn deriv(&self, r: f64, order: u8) -> Result<f64> {
        deriv(self, r, order)
    }
}

impl serde::Serialize for ProfileExpr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.normalized())
    }
}

impl<'de> serde::Deserialize<'de> for ProfileExpr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse(&s).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------- evaluation

fn domain_at(col: usize, msg: String) -> Error {
    Error::Domain(format!("column {col}: {msg}"))
}

fn eval_node(n: &Node, p: &RadialPoint) -> Result<f64> {
    match n {
        Node::Num(v) => Ok(*v),
        Node::Var(Var::R) => Ok(p.r),
        Node::Var(Var::W) => Ok(p.w()),
        Node::Neg(x) => Ok(-eval_node(x, p)?),
        Node::Bin {
            op: BinOp::Pow,
            lhs,
            rhs,
            col,
        } => {
            let b = eval_node(rhs, p)?;
            // Positive bases go through the log form so an underflowed `r` keeps its size.
            if !matches!(**lhs, Node::Num(_)) {
                let (la, sa) = eval_log_abs(lhs, p)?;
                if sa > 0 {
                    return Ok((b * la).exp());
                }
            }
            let a = eval_node(lhs, p)?;
            if a < 0.0 && b.fract() != 0.0 {
                return Err(domain_at(
                    *col,
                    format!("negative base {a} with non-integer exponent {b}"),
                ));
            }
            if a == 0.0 && b < 0.0 {
                return Err(domain_at(*col, "zero raised to a negative power".into()));
            }
            Ok(a.powf(b))
        }
        Node::Bin { op, lhs, rhs, col } => {
            let a = eval_node(lhs, p)?;
            let b = eval_node(rhs, p)?;
            match op {
                BinOp::Add => Ok(a + b),
                BinOp::Sub => Ok(a - b),
                BinOp::Mul => Ok(a * b),
                BinOp::Div if b == 0.0 => Err(domain_at(*col, "division by zero".into())),
                BinOp::Div => Ok(a / b),
                BinOp::Pow => unreachable!("handled above"),
            }
        }
        Node::Call { func, arg, col } => {
            if *func == Func::Ln {
                let (l, sign) = eval_log_abs(arg, p)?;
                if sign <= 0 {
                    return Err(domain_at(*col, "logarithm of a nonpositive value".into()));
                }
                return Ok(l);
            }
            let x = eval_node(arg, p)?;
            match func {
                Func::Exp => Ok(x.exp()),
                Func::Abs => Ok(x.abs()),
                Func::Sqrt => {
                    if x < 0.0 {
                        Err(domain_at(
                            *col,
                            format!("square root of negative value {x}"),
                        ))
                    } else {
                        Ok(x.sqrt())
                    }
                }
                Func::Psi => Ok(SmoothStep::Psi.eval(x)),
                Func::Chi => Ok(SmoothStep::Chi.eval(x)),
                Func::PhiStep => Ok(SmoothStep::Phi.eval(x)),
                Func::GStep => Ok(SmoothStep::G.eval(x)),
                Func::Ln => unreachable!("handled above"),
            }
        }
    }
}

/// `(ln|v|, sign v)` computed structurally where possible.
fn eval_log_abs(n: &Node, p: &RadialPoint) -> Result<(f64, i8)> {
    let sign_of = |v: f64| -> i8 {
        if v > 0.0 {
            1
        } else if v < 0.0 {
            -1
        } else {
            0
        }
    };
    match n {
        Node::Var(Var::R) => Ok((p.ln_r, 1)),
        Node::Neg(x) => {
            let (l, s) = eval_log_abs(x, p)?;
            Ok((l, -s))
        }
        Node::Bin {
            op: BinOp::Mul,
            lhs,
            rhs,
            ..
        } => {
            let (la, sa) = eval_log_abs(lhs, p)?;
            let (lb, sb) = eval_log_abs(rhs, p)?;
            Ok((la + lb, sa * sb))
        }
        Node::Bin {
            op: BinOp::Div,
            lhs,
            rhs,
            col,
        } => {
            let (la, sa) = eval_log_abs(lhs, p)?;
            let (lb, sb) = eval_log_abs(rhs, p)?;
            if sb == 0 {
                return Err(domain_at(*col, "division by zero".into()));
            }
            Ok((la - lb, sa * sb))
        }
        Node::Bin {
            op: BinOp::Pow,
            lhs,
            rhs,
            ..
        } => {
            let b = eval_node(rhs, p)?;
            let (la, sa) = eval_log_abs(lhs, p)?;
            if sa > 0 {
                Ok((b * la, 1))
            } else {
                let v = eval_node(n, p)?;
                Ok((v.abs().ln(), sign_of(v)))
            }
        }
        Node::Call {
            func: Func::Abs,
            arg,
            ..
        } => {
            let (l, s) = eval_log_abs(arg, p)?;
            Ok((l, if s == 0 { 0 } else { 1 }))
        }
        Node::Call {
            func: Func::Exp,
            arg,
            ..
        } => Ok((eval_node(arg, p)?, 1)),
        _ => {
            let v = eval_node(n, p)?;
            Ok((v.abs().ln(), sign_of(v)))
        }
    }
}

// ---------------------------------------------------------------- second-order jets

/// Value with first and second derivative along one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl std::ops::Add for Jet {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            v: self.v + o.v,
            d1: self.d1 + o.d1,
            d2: self.d2 + o.d2,
        }
    }
}

impl std::ops::Sub for Jet {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            v: self.v - o.v,
            d1: self.d1 - o.d1,
            d2: self.d2 - o.d2,
        }
    }
}

impl std::ops::Neg for Jet {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            v: -self.v,
            d1: -self.d1,
            d2: -self.d2,
        }
    }
}

impl std::ops::Mul for Jet {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            v: self.v * o.v,
            d1: self.d1 * o.v + self.v * o.d1,
            d2: self.d2 * o.v + 2.0 * self.d1 * o.d1 + self.v * o.d2,
        }
    }
}

impl std::ops::Div for Jet {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.v / o.v;
        let q1 = (self.d1 - q * o.d1) / o.v;
        let q2 = (self.d2 - 2.0 * q1 * o.d1 - q * o.d2) / o.v;
        Self {
            v: q,
            d1: q1,
            d2: q2,
        }
    }
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        Self {
            v,
            d1: 0.0,
            d2: 0.0,
        }
    }

    /// `f ∘ self` from `[f, f', f'']` at `self.v`.
    pub fn compose(self, f: [f64; 3]) -> Self {
        Self {
            v: f[0],
            d1: f[1] * self.d1,
            d2: f[2] * self.d1 * self.d1 + f[1] * self.d2,
        }
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.compose([e, e, e])
    }

    /// `ln|self|`.
    pub fn ln_abs(self) -> Self {
        let g = self.d1 / self.v;
        Self {
            v: self.v.abs().ln(),
            d1: g,
            d2: self.d2 / self.v - g * g,
        }
    }
}

impl ProfileExpr {
    /// Value and derivatives along a path whose `ln r` has jet `ln_r` (`ln_r.v < 0`).
    pub fn eval_jet(&self, ln_r: Jet) -> Result<Jet> {
        if !(ln_r.v < 0.0) {
            return Err(Error::Domain(format!(
                "profile variable ln r = {} is not negative",
                ln_r.v
            )));
        }
        jet_node(&self.ast, &JetPoint::new(ln_r))
    }

    /// Value and exact first and second derivatives in `w = ln|ln r|`.
    pub fn eval_jet_w(&self, w: f64) -> Result<Jet> {
        let e = w.exp();
        self.eval_jet(Jet {
            v: -e,
            d1: -e,
            d2: -e,
        })
    }
}

/// Jets of `ln r`, `r` and `w` along the path.
struct JetPoint {
    ln_r: Jet,
    r: Jet,
    w: Jet,
}

impl JetPoint {
    fn new(ln_r: Jet) -> Self {
        Self {
            ln_r,
            r: ln_r.exp(),
            w: ln_r.ln_abs(),
        }
    }
}

fn jet_node(n: &Node, p: &JetPoint) -> Result<Jet> {
    match n {
        Node::Num(v) => Ok(Jet::constant(*v)),
        Node::Var(Var::R) => Ok(p.r),
        Node::Var(Var::W) => Ok(p.w),
        Node::Neg(x) => Ok(-jet_node(x, p)?),
        Node::Bin {
            op: BinOp::Pow,
            lhs,
            rhs,
            col,
        } => {
            let b = jet_node(rhs, p)?;
            if !matches!(**lhs, Node::Num(_)) {
                let (la, sa) = jet_log_abs(lhs, p)?;
                if sa > 0 {
                    return Ok((b * la).exp());
                }
            }
            let a = jet_node(lhs, p)?;
            if a.v > 0.0 {
                return Ok((b * a.ln_abs()).exp());
            }
            if b.d1 != 0.0 || b.d2 != 0.0 || b.v.fract() != 0.0 || (a.v == 0.0 && b.v < 0.0) {
                return Err(domain_at(
                    *col,
                    format!("power {}^{} is not differentiable here", a.v, b.v),
                ));
            }
            let k = b.v;
            Ok(a.compose([
                a.v.powf(k),
                k * a.v.powf(k - 1.0),
                k * (k - 1.0) * a.v.powf(k - 2.0),
            ]))
        }
        Node::Bin { op, lhs, rhs, col } => {
            let a = jet_node(lhs, p)?;
            let b = jet_node(rhs, p)?;
            match op {
                BinOp::Add => Ok(a + b),
                BinOp::Sub => Ok(a - b),
                BinOp::Mul => Ok(a * b),
                BinOp::Div if b.v == 0.0 => Err(domain_at(*col, "division by zero".into())),
                BinOp::Div => Ok(a / b),
                BinOp::Pow => unreachable!("handled above"),
            }
        }
        Node::Call { func, arg, col } => {
            if *func == Func::Ln {
                let (l, sign) = jet_log_abs(arg, p)?;
                if sign <= 0 {
                    return Err(domain_at(*col, "logarithm of a nonpositive value".into()));
                }
                return Ok(l);
            }
            let x = jet_node(arg, p)?;
            match func {
                Func::Exp => Ok(x.exp()),
                Func::Abs => Ok(if x.v < 0.0 { -x } else { x }),
                Func::Sqrt => {
                    if !(x.v > 0.0) {
                        return Err(domain_at(
                            *col,
                            format!("square root is not differentiable at {}", x.v),
                        ));
                    }
                    let s = x.v.sqrt();
                    Ok(x.compose([s, 0.5 / s, -0.25 / (s * x.v)]))
                }
                Func::Psi => Ok(x.compose(SmoothStep::Psi.derivs(x.v))),
                Func::Chi => Ok(x.compose(SmoothStep::Chi.derivs(x.v))),
                Func::PhiStep => Ok(x.compose(SmoothStep::Phi.derivs(x.v))),
                Func::GStep => Ok(x.compose(SmoothStep::G.derivs(x.v))),
                Func::Ln => unreachable!("handled above"),
            }
        }
    }
}

/// Jet of `ln|v|` with the sign of `v`, mirroring the log-space value evaluator.
fn jet_log_abs(n: &Node, p: &JetPoint) -> Result<(Jet, i8)> {
    match n {
        Node::Var(Var::R) => Ok((p.ln_r, 1)),
        Node::Neg(x) => {
            let (l, s) = jet_log_abs(x, p)?;
            Ok((l, -s))
        }
        Node::Bin {
            op: BinOp::Mul,
            lhs,
            rhs,
            ..
        } => {
            let (la, sa) = jet_log_abs(lhs, p)?;
            let (lb, sb) = jet_log_abs(rhs, p)?;
            Ok((la + lb, sa * sb))
        }
        Node::Bin {
            op: BinOp::Div,
            lhs,
            rhs,
            col,
        } => {
            let (la, sa) = jet_log_abs(lhs, p)?;
            let (lb, sb) = jet_log_abs(rhs, p)?;
            if sb == 0 {
                return Err(domain_at(*col, "division by zero".into()));
            }
            Ok((la - lb, sa * sb))
        }
        Node::Bin {
            op: BinOp::Pow,
            lhs,
            rhs,
            ..
        } => {
            let b = jet_node(rhs, p)?;
            let (la, sa) = jet_log_abs(lhs, p)?;
            if sa > 0 {
                Ok((b * la, 1))
            } else {
                let v = jet_node(n, p)?;
                Ok((v.ln_abs(), sign(v.v)))
            }
        }
        Node::Call {
            func: Func::Abs,
            arg,
            ..
        } => {
            let (l, s) = jet_log_abs(arg, p)?;
            Ok((l, if s == 0 { 0 } else { 1 }))
        }
        Node::Call {
            func: Func::Exp,
            arg,
            ..
        } => Ok((jet_node(arg, p)?, 1)),
        _ => {
            let v = jet_node(n, p)?;
            Ok((v.ln_abs(), sign(v.v)))
        }
    }
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

// ---------------------------------------------------------------- differentiation

/// Finite-difference stencil family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    Central,
    Forward,
    Backward,
}

/// Derivative in `r`; central differences unless `r` sits within one step of the domain edge.
pub fn deriv(e: &ProfileExpr, r: f64, order: u8) -> Result<f64> {
    RadialPoint::from_r(r)?;
    if order == 0 {
        return e.eval(r);
    }
    let h = 0.1 * r.min(1.0 - r);
    let f = |x: f64| e.eval(x);
    // A profile undefined on one side of `r` (a band edge) falls back to one-sided stencils.
    deriv_with(&f, r, order, h, Stencil::Central)
        .or_else(|_| deriv_with(&f, r, order, h, Stencil::Forward))
        .or_else(|_| deriv_with(&f, r, order, h, Stencil::Backward))
}

/// Derivative in `w = ln|ln r|` of order 0..=2.
pub fn deriv_w(e: &ProfileExpr, w: f64, order: u8) -> Result<f64> {
    if order == 0 {
        return e.eval_w(w);
    }
    deriv_with(&|x| e.eval_w(x), w, order, 0.05, Stencil::Central)
}

/// Ridders–Richardson extrapolation of a difference quotient of order 1 or 2.
pub fn deriv_with(
    f: &dyn Fn(f64) -> Result<f64>,
    x: f64,
    order: u8,
    h0: f64,
    stencil: Stencil,
) -> Result<f64> {
    if !(1..=2).contains(&order) {
        return Err(Error::Unsupported(format!(
            "derivative order {order} (supported: 0, 1, 2)"
        )));
    }
    const CON: f64 = 1.4;
    const NTAB: usize = 10;
    let quotient = |h: f64| -> Result<f64> {
        Ok(match (stencil, order) {
            (Stencil::Central, 1) => (f(x + h)? - f(x - h)?) / (2.0 * h),
            (Stencil::Central, _) => (f(x + h)? - 2.0 * f(x)? + f(x - h)?) / (h * h),
            (Stencil::Forward, 1) => (-3.0 * f(x)? + 4.0 * f(x + h)? - f(x + 2.0 * h)?) / (2.0 * h),
            (Stencil::Forward, _) => {
                (2.0 * f(x)? - 5.0 * f(x + h)? + 4.0 * f(x + 2.0 * h)? - f(x + 3.0 * h)?) / (h * h)
            }
            (Stencil::Backward, 1) => (3.0 * f(x)? - 4.0 * f(x - h)? + f(x - 2.0 * h)?) / (2.0 * h),
            (Stencil::Backward, _) => {
                (2.0 * f(x)? - 5.0 * f(x - h)? + 4.0 * f(x - 2.0 * h)? - f(x - 3.0 * h)?) / (h * h)
            }
        })
    };
    // Central stencils have even error expansions; one-sided second-order ones start at h².
    let fac0 = if stencil == Stencil::Central {
        CON * CON
    } else {
        CON
    };
    let mut a = [[0.0f64; NTAB]; NTAB];
    let mut h = h0;
    a[0][0] = quotient(h)?;
    let mut best = a[0][0];
    let mut err = f64::INFINITY;
    for i in 1..NTAB {
        h /= CON;
        a[0][i] = quotient(h)?;
        let mut fac = fac0;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= fac0;
            let e = (a[j][i] - a[j - 1][i])
                .abs()
                .max((a[j][i] - a[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = a[j][i];
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= 2.0 * err {
            break;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poincare_density_at_inverse_e() {
        let e = parse("1/(r*abs(ln(r))^2)").unwrap();
        let r = (-1f64).exp();
        assert!((e.eval(r).unwrap() - 1f64.exp()).abs() < 1e-13);
    }

    #[test]
    fn psi_plateau_through_dsl() {
        let e = parse("psi(ln(r)/ln(0.01))").unwrap();
        assert_eq!(e.eval(0.1).unwrap(), 1.0);
    }

    #[test]
    fn malformed_power_reports_column() {
        match parse("2*^3") {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!((line, column), (1, 3));
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_identifier_is_rejected() {
        assert!(matches!(
            parse("foo(r)"),
            Err(Error::Parse { column: 1, .. })
        ));
        assert!(matches!(
            parse("r + q"),
            Err(Error::Parse { column: 5, .. })
        ));
    }

    #[test]
    fn precedence_of_unary_minus_and_power() {
        let e = parse("-2^2").unwrap();
        assert_eq!(e.eval(0.5).unwrap(), -4.0);
        let e = parse("2^-1").unwrap();
        assert_eq!(e.eval(0.5).unwrap(), 0.5);
        let e = parse("2^3^2").unwrap();
        assert_eq!(e.eval(0.5).unwrap(), 512.0);
    }

    #[test]
    fn identity_and_constant_derivatives() {
        assert_eq!(parse("r").unwrap().eval(0.25).unwrap(), 0.25);
        let c = parse("3.5").unwrap();
        assert!(c.deriv(0.3, 1).unwrap().abs() < 1e-12);
        assert!(c.deriv(0.3, 2).unwrap().abs() < 1e-12);
    }

    #[test]
    fn loglog_derivative() {
        let e = parse("ln(abs(ln(r)))").unwrap();
        let r = (-2f64).exp();
        let expected = 1.0 / (r * r.ln());
        assert!((e.deriv(r, 1).unwrap() - expected).abs() < 1e-7);
    }

    #[test]
    fn domain_errors_carry_columns() {
        let e = parse("ln(r - 1)").unwrap();
        match e.eval(0.5) {
            Err(Error::Domain(msg)) => assert!(msg.contains("column 1")),
            other => panic!("expected domain error, got {other:?}"),
        }
        let e = parse("1/(r - 0.5)").unwrap();
        assert!(matches!(e.eval(0.5), Err(Error::Domain(_))));
        assert!(e.eval(1.5).is_err());
    }

    #[test]
    fn deep_cusp_logs_do_not_underflow() {
        let e = parse("ln(r*abs(ln(r)))").unwrap();
        let p = RadialPoint::from_w(7.0);
        let v = e.eval_at(&p).unwrap();
        let expected = p.ln_r + 7.0;
        assert!((v - expected).abs() < 1e-9 * expected.abs());
    }

    #[test]
    fn normalized_form_is_a_fixed_point() {
        for src in [
            "1 - (2 - r)",
            "(r^2)^3",
            "-(r + 1)*2",
            "2^(-1)",
            "psi(ln(r)/ln(0.001))*w",
            "1e-30*r",
        ] {
            let once = parse(src).unwrap().normalized();
            let twice = parse(&once).unwrap().normalized();
            assert_eq!(once, twice, "source {src}");
            let a = parse(src).unwrap().eval(0.3).unwrap();
            let b = parse(&once).unwrap().eval(0.3).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn jets_match_finite_differences() {
        let sources = [
            "0.3*psi(2*(ln(abs(ln(r))) - 1))",
            "r^2*exp(r) - sqrt(1 + r)",
            "ln(abs(ln(r))) + 0.1*chi(w)*g_step(w/2) - phi_step(w)/(1 + r)",
            "(1 + r)^w",
        ];
        for src in sources {
            let e = parse(src).unwrap();
            for w in [-0.7, 0.3, 0.6, 1.2, 1.4, 2.5] {
                let j = e.eval_jet_w(w).unwrap();
                let f = |x: f64| e.eval_w(x).unwrap();
                let h = 1e-4;
                let d1 = (f(w + h) - f(w - h)) / (2.0 * h);
                let d2 = (f(w + h) - 2.0 * f(w) + f(w - h)) / (h * h);
                assert!((j.v - f(w)).abs() < 1e-13, "{src} at {w}");
                assert!(
                    (j.d1 - d1).abs() < 1e-6 * (1.0 + d1.abs()),
                    "{src} at {w}: {} vs {d1}",
                    j.d1
                );
                assert!(
                    (j.d2 - d2).abs() < 1e-4 * (1.0 + d2.abs()),
                    "{src} at {w}: {} vs {d2}",
                    j.d2
                );
            }
        }
    }

    #[test]
    fn jet_of_loglog_is_the_identity_in_w() {
        let j = parse("ln(abs(ln(r)))").unwrap().eval_jet_w(30.0).unwrap();
        assert_eq!((j.v, j.d1, j.d2), (30.0, 1.0, 0.0));
    }
}
