//! Small expression language used to describe vector fields.
//!
//! Identifiers: `x`, `y`, `t`, `eps`; constants `pi`, `e`; binary `+ - * / ^`,
//! unary minus and the functions `sin cos exp log sqrt abs sign tanh pow`.
//! Evaluation never yields NaN or infinity silently: domain violations are
//! returned as [`EvalError`].

use std::fmt;

use thiserror::Error;

/// Free variables an expression may reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    Y,
    T,
    Eps,
}

impl Var {
    pub fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::Y => "y",
            Var::T => "t",
            Var::Eps => "eps",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Constant {
    Pi,
    E,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Sign,
    Tanh,
    Pow,
}

impl Func {
    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "sign" => Func::Sign,
            "tanh" => Func::Tanh,
            "pow" => Func::Pow,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sign => "sign",
            Func::Tanh => "tanh",
            Func::Pow => "pow",
        }
    }

    fn arity(self) -> usize {
        if self == Func::Pow {
            2
        } else {
            1
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

/// Parsed syntax tree.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Const(Constant),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Values of the free variables.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Env {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub eps: f64,
}

impl Env {
    pub fn new(x: f64, y: f64, t: f64, eps: f64) -> Self {
        Env { x, y, t, eps }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("log of non-positive argument {0}")]
    LogDomain(f64),
    #[error("sqrt of negative argument {0}")]
    SqrtDomain(f64),
    #[error("negative base {base} raised to non-integer power {exp}")]
    PowDomain { base: f64, exp: f64 },
    #[error("non-finite result in {0}")]
    NonFinite(&'static str),
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at column {col}: {msg}")]
    Syntax { col: usize, msg: String },
    #[error("unknown identifier `{name}` at column {col}")]
    UnknownIdentifier { name: String, col: usize },
}

impl ParseError {
    /// 1-based column inside the parsed string.
    pub fn column(&self) -> usize {
        match self {
            ParseError::Syntax { col, .. } | ParseError::UnknownIdentifier { col, .. } => *col,
        }
    }
}

fn finite(v: f64, what: &'static str) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite(what))
    }
}

fn eval_pow(b: f64, e: f64) -> Result<f64, EvalError> {
    if e.fract() == 0.0 && e.abs() <= i32::MAX as f64 {
        if b == 0.0 && e < 0.0 {
            return Err(EvalError::DivisionByZero);
        }
        return finite(b.powi(e as i32), "pow");
    }
    if b < 0.0 {
        return Err(EvalError::PowDomain { base: b, exp: e });
    }
    if b == 0.0 && e < 0.0 {
        return Err(EvalError::DivisionByZero);
    }
    finite(b.powf(e), "pow")
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }

    pub fn parse(src: &str) -> Result<Expr, ParseError> {
        let toks = lex(src)?;
        let mut p = Parser { toks, pos: 0 };
        let e = p.expr()?;
        match p.peek() {
            Tok::End(_) => Ok(e),
            t => Err(ParseError::Syntax {
                col: t.col(),
                msg: format!("unexpected {}", t.describe()),
            }),
        }
    }

    pub fn eval(&self, env: &Env) -> Result<f64, EvalError> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Const(Constant::Pi) => Ok(std::f64::consts::PI),
            Expr::Const(Constant::E) => Ok(std::f64::consts::E),
            Expr::Var(Var::X) => Ok(env.x),
            Expr::Var(Var::Y) => Ok(env.y),
            Expr::Var(Var::T) => Ok(env.t),
            Expr::Var(Var::Eps) => Ok(env.eps),
            Expr::Neg(a) => Ok(-a.eval(env)?),
            Expr::Bin(op, a, b) => {
                let u = a.eval(env)?;
                let v = b.eval(env)?;
                match op {
                    BinOp::Add => finite(u + v, "+"),
                    BinOp::Sub => finite(u - v, "-"),
                    BinOp::Mul => finite(u * v, "*"),
                    BinOp::Div => {
                        if v == 0.0 {
                            Err(EvalError::DivisionByZero)
                        } else {
                            finite(u / v, "/")
                        }
                    }
                    BinOp::Pow => eval_pow(u, v),
                }
            }
            Expr::Call(f, args) => {
                let u = args[0].eval(env)?;
                match f {
                    Func::Sin => Ok(u.sin()),
                    Func::Cos => Ok(u.cos()),
                    Func::Exp => finite(u.exp(), "exp"),
                    Func::Log => {
                        if u <= 0.0 {
                            Err(EvalError::LogDomain(u))
                        } else {
                            Ok(u.ln())
                        }
                    }
                    Func::Sqrt => {
                        if u < 0.0 {
                            Err(EvalError::SqrtDomain(u))
                        } else {
                            Ok(u.sqrt())
                        }
                    }
                    Func::Abs => Ok(u.abs()),
                    Func::Sign => Ok(if u > 0.0 {
                        1.0
                    } else if u < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }),
                    Func::Tanh => Ok(u.tanh()),
                    Func::Pow => eval_pow(u, args[1].eval(env)?),
                }
            }
        }
    }

    /// True when the tree references `v`.
    pub fn depends_on(&self, v: Var) -> bool {
        match self {
            Expr::Var(w) => *w == v,
            Expr::Num(_) | Expr::Const(_) => false,
            Expr::Neg(a) => a.depends_on(v),
            Expr::Bin(_, a, b) => a.depends_on(v) || b.depends_on(v),
            Expr::Call(_, args) => args.iter().any(|a| a.depends_on(v)),
        }
    }

    /// Replace every occurrence of `v` by `with`.
    pub fn substitute(&self, v: Var, with: &Expr) -> Expr {
        match self {
            Expr::Var(w) if *w == v => with.clone(),
            Expr::Num(_) | Expr::Const(_) | Expr::Var(_) => self.clone(),
            Expr::Neg(a) => Expr::Neg(Box::new(a.substitute(v, with))),
            Expr::Bin(op, a, b) => Expr::Bin(*op, Box::new(a.substitute(v, with)), Box::new(b.substitute(v, with))),
            Expr::Call(f, args) => Expr::Call(*f, args.iter().map(|a| a.substitute(v, with)).collect()),
        }
    }

    /// Polynomial in the free variables (constant divisors and non-negative
    /// integer powers allowed).
    pub fn is_polynomial(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Const(_) | Expr::Var(_) => true,
            Expr::Neg(a) => a.is_polynomial(),
            Expr::Bin(BinOp::Add | BinOp::Sub | BinOp::Mul, a, b) => {
                a.is_polynomial() && b.is_polynomial()
            }
            Expr::Bin(BinOp::Div, a, b) => a.is_polynomial() && b.is_constant(),
            Expr::Bin(BinOp::Pow, a, b) => a.is_polynomial() && b.is_nonneg_integer_constant(),
            Expr::Call(Func::Pow, args) => {
                args[0].is_polynomial() && args[1].is_nonneg_integer_constant()
            }
            Expr::Call(..) => self.is_constant(),
        }
    }

    fn is_constant(&self) -> bool {
        ![Var::X, Var::Y, Var::T, Var::Eps]
            .iter()
            .any(|v| self.depends_on(*v))
    }

    fn is_nonneg_integer_constant(&self) -> bool {
        self.is_constant()
            && self
                .eval(&Env::default())
                .map(|v| v >= 0.0 && v.fract() == 0.0)
                .unwrap_or(false)
    }

    fn as_num(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            _ => None,
        }
    }

    /// Symbolic partial derivative with light constant folding.
    pub fn diff(&self, v: Var) -> Expr {
        use Expr::*;
        if !self.depends_on(v) {
            return Num(0.0);
        }
        match self {
            Var(w) => Num(if *w == v { 1.0 } else { 0.0 }),
            Num(_) | Const(_) => Num(0.0),
            Neg(a) => neg(a.diff(v)),
            Bin(BinOp::Add, a, b) => add(a.diff(v), b.diff(v)),
            Bin(BinOp::Sub, a, b) => sub(a.diff(v), b.diff(v)),
            Bin(BinOp::Mul, a, b) => add(
                mul(a.diff(v), (**b).clone()),
                mul((**a).clone(), b.diff(v)),
            ),
            Bin(BinOp::Div, a, b) => {
                // (a'b - ab')/b^2
                let num = sub(
                    mul(a.diff(v), (**b).clone()),
                    mul((**a).clone(), b.diff(v)),
                );
                div(num, pow((**b).clone(), Num(2.0)))
            }
            Bin(BinOp::Pow, a, b) => diff_pow(a, b, v),
            Call(f, args) => {
                let u = &args[0];
                let du = u.diff(v);
                let outer = match f {
                    Func::Sin => call(Func::Cos, u.clone()),
                    Func::Cos => neg(call(Func::Sin, u.clone())),
                    Func::Exp => call(Func::Exp, u.clone()),
                    Func::Log => div(Num(1.0), u.clone()),
                    Func::Sqrt => div(Num(1.0), mul(Num(2.0), call(Func::Sqrt, u.clone()))),
                    Func::Abs => call(Func::Sign, u.clone()),
                    Func::Sign => Num(0.0),
                    Func::Tanh => sub(Num(1.0), pow(call(Func::Tanh, u.clone()), Num(2.0))),
                    Func::Pow => return diff_pow(&args[0], &args[1], v),
                };
                mul(outer, du)
            }
        }
    }

    fn prec(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Num(v) if v.is_sign_negative() => 3,
            Expr::Bin(BinOp::Pow, ..) => 4,
            _ => 5,
        }
    }
}

fn diff_pow(a: &Expr, b: &Expr, v: Var) -> Expr {
    if !b.depends_on(v) {
        // b a^(b-1) a'
        let e = match b.as_num() {
            Some(n) => Expr::Num(n - 1.0),
            None => sub(b.clone(), Expr::Num(1.0)),
        };
        return mul(mul(b.clone(), pow(a.clone(), e)), a.diff(v));
    }
    // a^b (b' ln a + b a'/a)
    let inner = add(
        mul(b.diff(v), call(Func::Log, a.clone())),
        div(mul(b.clone(), a.diff(v)), a.clone()),
    );
    mul(pow(a.clone(), b.clone()), inner)
}

fn is_zero(e: &Expr) -> bool {
    e.as_num() == Some(0.0)
}

fn is_one(e: &Expr) -> bool {
    e.as_num() == Some(1.0)
}

fn add(a: Expr, b: Expr) -> Expr {
    if is_zero(&a) {
        return b;
    }
    if is_zero(&b) {
        return a;
    }
    Expr::Bin(BinOp::Add, Box::new(a), Box::new(b))
}

fn sub(a: Expr, b: Expr) -> Expr {
    if is_zero(&b) {
        return a;
    }
    if is_zero(&a) {
        return neg(b);
    }
    Expr::Bin(BinOp::Sub, Box::new(a), Box::new(b))
}

fn mul(a: Expr, b: Expr) -> Expr {
    if is_zero(&a) || is_zero(&b) {
        return Expr::Num(0.0);
    }
    if is_one(&a) {
        return b;
    }
    if is_one(&b) {
        return a;
    }
    Expr::Bin(BinOp::Mul, Box::new(a), Box::new(b))
}

fn div(a: Expr, b: Expr) -> Expr {
    if is_zero(&a) {
        return Expr::Num(0.0);
    }
    if is_one(&b) {
        return a;
    }
    Expr::Bin(BinOp::Div, Box::new(a), Box::new(b))
}

fn pow(a: Expr, b: Expr) -> Expr {
    if is_one(&b) {
        return a;
    }
    if is_zero(&b) {
        return Expr::Num(1.0);
    }
    Expr::Bin(BinOp::Pow, Box::new(a), Box::new(b))
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(v) if v == 0.0 => Expr::Num(0.0),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn call(f: Func, a: Expr) -> Expr {
    Expr::Call(f, vec![a])
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn wrap(f: &mut fmt::Formatter<'_>, e: &Expr, paren: bool) -> fmt::Result {
            if paren {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Const(Constant::Pi) => write!(f, "pi"),
            Expr::Const(Constant::E) => write!(f, "e"),
            Expr::Var(v) => write!(f, "{}", v.name()),
            Expr::Neg(a) => {
                write!(f, "-")?;
                wrap(f, a, a.prec() < 3)
            }
            Expr::Bin(op, a, b) => {
                let p = self.prec();
                let (lp, rp) = match op {
                    BinOp::Pow => (a.prec() <= 4, b.prec() < 3),
                    _ => (a.prec() < p, b.prec() <= p),
                };
                wrap(f, a, lp)?;
                write!(f, "{}", op.symbol())?;
                wrap(f, b, rp)
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

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64, usize),
    Ident(String, usize),
    Op(char, usize),
    LParen(usize),
    RParen(usize),
    Comma(usize),
    End(usize),
}

impl Tok {
    fn col(&self) -> usize {
        match self {
            Tok::Num(_, c)
            | Tok::Ident(_, c)
            | Tok::Op(_, c)
            | Tok::LParen(c)
            | Tok::RParen(c)
            | Tok::Comma(c)
            | Tok::End(c) => *c,
        }
    }

    fn describe(&self) -> String {
        match self {
            Tok::Num(v, _) => format!("number {v}"),
            Tok::Ident(s, _) => format!("identifier `{s}`"),
            Tok::Op(c, _) => format!("operator `{c}`"),
            Tok::LParen(_) => "`(`".into(),
            Tok::RParen(_) => "`)`".into(),
            Tok::Comma(_) => "`,`".into(),
            Tok::End(_) => "end of input".into(),
        }
    }
}

fn lex(src: &str) -> Result<Vec<Tok>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
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
            let v: f64 = text.parse().map_err(|_| ParseError::Syntax {
                col,
                msg: format!("malformed number `{text}`"),
            })?;
            out.push(Tok::Num(v, col));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect(), col));
        } else {
            let tok = match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c, col),
                '(' => Tok::LParen(col),
                ')' => Tok::RParen(col),
                ',' => Tok::Comma(col),
                _ => {
                    return Err(ParseError::Syntax {
                        col,
                        msg: format!("unexpected character `{c}`"),
                    })
                }
            };
            out.push(tok);
            i += 1;
        }
    }
    out.push(Tok::End(chars.len() + 1));
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Tok::Op(c @ ('+' | '-'), _) = *self.peek() {
            self.next();
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Tok::Op(c @ ('*' | '/'), _) = *self.peek() {
            self.next();
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if let Tok::Op('-', _) = self.peek() {
            self.next();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if let Tok::Op('^', _) = self.peek() {
            self.next();
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.next() {
            Tok::Num(v, _) => Ok(Expr::Num(v)),
            Tok::LParen(_) => {
                let e = self.expr()?;
                match self.next() {
                    Tok::RParen(_) => Ok(e),
                    t => Err(ParseError::Syntax {
                        col: t.col(),
                        msg: format!("expected `)` but found {}", t.describe()),
                    }),
                }
            }
            Tok::Ident(name, col) => {
                if let Some(func) = Func::from_name(&name) {
                    return self.call(func, col);
                }
                match name.as_str() {
                    "x" => Ok(Expr::Var(Var::X)),
                    "y" => Ok(Expr::Var(Var::Y)),
                    "t" => Ok(Expr::Var(Var::T)),
                    "eps" => Ok(Expr::Var(Var::Eps)),
                    "pi" => Ok(Expr::Const(Constant::Pi)),
                    "e" => Ok(Expr::Const(Constant::E)),
                    _ => Err(ParseError::UnknownIdentifier { name, col }),
                }
            }
            t => Err(ParseError::Syntax {
                col: t.col(),
                msg: format!("expected operand but found {}", t.describe()),
            }),
        }
    }

    fn call(&mut self, func: Func, col: usize) -> Result<Expr, ParseError> {
        match self.next() {
            Tok::LParen(_) => {}
            t => {
                return Err(ParseError::Syntax {
                    col: t.col(),
                    msg: format!("expected `(` after `{}`", func.name()),
                })
            }
        }
        let mut args = vec![self.expr()?];
        while let Tok::Comma(_) = self.peek() {
            self.next();
            args.push(self.expr()?);
        }
        match self.next() {
            Tok::RParen(_) => {}
            t => {
                return Err(ParseError::Syntax {
                    col: t.col(),
                    msg: format!("expected `)` but found {}", t.describe()),
                })
            }
        }
        if args.len() != func.arity() {
            return Err(ParseError::Syntax {
                col,
                msg: format!(
                    "`{}` takes {} argument(s), got {}",
                    func.name(),
                    func.arity(),
                    args.len()
                ),
            });
        }
        Ok(Expr::Call(func, args))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(s: &str, x: f64, y: f64) -> Result<f64, EvalError> {
        Expr::parse(s).unwrap().eval(&Env::new(x, y, 0.3, 0.01))
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 - 2 - 3", 0.0, 0.0).unwrap(), -4.0);
        assert_eq!(ev("2^3^2", 0.0, 0.0).unwrap(), 512.0);
        assert_eq!(ev("-x^2", 3.0, 0.0).unwrap(), -9.0);
        assert_eq!(ev("2^-1", 0.0, 0.0).unwrap(), 0.5);
        assert_eq!(ev("y - x^2", 1.0, 0.0).unwrap(), -1.0);
        assert_eq!(ev("x - 2*x^2", 1.0, 0.0).unwrap(), -1.0);
    }

    #[test]
    fn domain_errors_are_reported() {
        assert_eq!(ev("1/(x-1)", 1.0, 0.0), Err(EvalError::DivisionByZero));
        assert!(matches!(ev("log(x)", 0.0, 0.0), Err(EvalError::LogDomain(_))));
        assert!(matches!(ev("sqrt(x)", -1.0, 0.0), Err(EvalError::SqrtDomain(_))));
        assert!(matches!(ev("x^0.5", -1.0, 0.0), Err(EvalError::PowDomain { .. })));
        assert!(matches!(ev("exp(1000)", 0.0, 0.0), Err(EvalError::NonFinite(_))));
        assert_eq!(ev("(-2)^3", 0.0, 0.0).unwrap(), -8.0);
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(ev("sign(x)", 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(ev("sign(x)", -0.5, 0.0).unwrap(), -1.0);
    }

    #[test]
    fn parse_errors_carry_columns() {
        match Expr::parse("x + foo").unwrap_err() {
            ParseError::UnknownIdentifier { name, col } => {
                assert_eq!(name, "foo");
                assert_eq!(col, 5);
            }
            e => panic!("{e:?}"),
        }
        assert_eq!(Expr::parse("x + ").unwrap_err().column(), 5);
        assert_eq!(Expr::parse("(x").unwrap_err().column(), 3);
        assert!(Expr::parse("sin(x, y)").is_err());
        assert!(Expr::parse("x $ y").is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let cases = [
            "x*sin(2*pi*t) + y^3",
            "sign(t)*sin(sqrt(abs(t)))^5",
            "exp(-x)*tanh(y) / (1 + x^2)",
            "pow(x, 3) - log(2 + y)",
            "x^y",
        ];
        for src in cases {
            let e = Expr::parse(src).unwrap();
            for v in [Var::X, Var::Y, Var::T] {
                let d = e.diff(v);
                let env = Env::new(0.7, 0.4, 1.3, 0.0);
                let h = 1e-6;
                let mut lo = env;
                let mut hi = env;
                match v {
                    Var::X => {
                        lo.x -= h;
                        hi.x += h
                    }
                    Var::Y => {
                        lo.y -= h;
                        hi.y += h
                    }
                    _ => {
                        lo.t -= h;
                        hi.t += h
                    }
                }
                let fd = (e.eval(&hi).unwrap() - e.eval(&lo).unwrap()) / (2.0 * h);
                let an = d.eval(&env).unwrap();
                assert!((fd - an).abs() < 1e-7, "{src} d/{v:?}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn polynomial_detection() {
        assert!(Expr::parse("y - x^2 + 3*x*y/2").unwrap().is_polynomial());
        assert!(!Expr::parse("x/y").unwrap().is_polynomial());
        assert!(!Expr::parse("sin(x)").unwrap().is_polynomial());
        assert!(!Expr::parse("x^0.5").unwrap().is_polynomial());
        assert!(Expr::parse("2*pi*x").unwrap().is_polynomial());
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..100.0).prop_map(Expr::Num),
            (0u32..1000).prop_map(|n| Expr::Num(n as f64)),
            Just(Expr::Const(Constant::Pi)),
            Just(Expr::Const(Constant::E)),
            Just(Expr::Var(Var::X)),
            Just(Expr::Var(Var::Y)),
            Just(Expr::Var(Var::T)),
            Just(Expr::Var(Var::Eps)),
        ];
        leaf.prop_recursive(6, 64, 2, |inner| {
            let op = prop_oneof![
                Just(BinOp::Add),
                Just(BinOp::Sub),
                Just(BinOp::Mul),
                Just(BinOp::Div),
                Just(BinOp::Pow)
            ];
            let func = prop_oneof![
                Just(Func::Sin),
                Just(Func::Cos),
                Just(Func::Exp),
                Just(Func::Log),
                Just(Func::Sqrt),
                Just(Func::Abs),
                Just(Func::Sign),
                Just(Func::Tanh)
            ];
            prop_oneof![
                inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                (op, inner.clone(), inner.clone())
                    .prop_map(|(o, a, b)| Expr::Bin(o, Box::new(a), Box::new(b))),
                (func, inner.clone()).prop_map(|(f, a)| Expr::Call(f, vec![a])),
                (inner.clone(), inner).prop_map(|(a, b)| Expr::Call(Func::Pow, vec![a, b])),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn print_parse_roundtrip(e in arb_expr(),
                                 pts in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -5.0f64..5.0, 0.0f64..0.1), 20)) {
            let printed = e.to_string();
            let back = Expr::parse(&printed).unwrap();
            prop_assert_eq!(&back, &e, "printed: {}", printed);
            for (x, y, t, eps) in pts {
                let env = Env::new(x, y, t, eps);
                match (e.eval(&env), back.eval(&env)) {
                    (Ok(a), Ok(b)) => prop_assert_eq!(a.to_bits(), b.to_bits()),
                    (Err(a), Err(b)) => prop_assert_eq!(a, b),
                    (a, b) => prop_assert!(false, "mismatch {:?} {:?}", a, b),
                }
            }
        }
    }
}
