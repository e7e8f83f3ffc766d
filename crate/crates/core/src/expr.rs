//! Expression trees for user-defined maps and vector fields.
//!
//! Expressions are smooth by construction: constants, named parameters,
//! coordinates `x1..xd`, the four arithmetic operators and `sin`, `cos`,
//! `exp`, `log`. They can be differentiated symbolically and compiled into a
//! flat register [`Tape`] for fast repeated evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            _ => None,
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Log => v.ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Pi,
    Param(String),
    /// Zero-based coordinate index; printed as `x{i+1}`.
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

// Smart constructors with light constant folding.
impl Expr {
    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn param(name: &str) -> Expr {
        Expr::Param(name.to_string())
    }

    fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(v) => Some(*v),
            _ => None,
        }
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(v) => Expr::Const(-v),
            Expr::Neg(inner) => *inner,
            other => Expr::Neg(Box::new(other)),
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x + y),
            (Some(x), _) if x == 0.0 => b,
            (_, Some(y)) if y == 0.0 => a,
            _ => Expr::Add(Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x - y),
            (Some(x), _) if x == 0.0 => Expr::neg(b),
            (_, Some(y)) if y == 0.0 => a,
            _ => Expr::Sub(Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x * y),
            (Some(x), _) | (_, Some(x)) if x == 0.0 => Expr::Const(0.0),
            (Some(x), _) if x == 1.0 => b,
            (_, Some(y)) if y == 1.0 => a,
            (Some(x), _) if x == -1.0 => Expr::neg(b),
            (_, Some(y)) if y == -1.0 => Expr::neg(a),
            _ => Expr::Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) if y != 0.0 => Expr::Const(x / y),
            (Some(x), _) if x == 0.0 => Expr::Const(0.0),
            (_, Some(y)) if y == 1.0 => a,
            _ => Expr::Div(Box::new(a), Box::new(b)),
        }
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        match a.as_const() {
            Some(v) => Expr::Const(f.apply(v)),
            None => Expr::Call(f, Box::new(a)),
        }
    }

    pub fn sin(a: Expr) -> Expr {
        Expr::call(Func::Sin, a)
    }

    pub fn cos(a: Expr) -> Expr {
        Expr::call(Func::Cos, a)
    }
}

impl Expr {
    /// Tree-walking evaluation. Parameters are looked up by name.
    pub fn eval(&self, vars: &[f64], params: &BTreeMap<String, f64>) -> Result<f64> {
        let v = match self {
            Expr::Const(v) => *v,
            Expr::Pi => std::f64::consts::PI,
            Expr::Param(name) => *params
                .get(name)
                .ok_or_else(|| Error::Structure(format!("parameter `{name}` has no value")))?,
            Expr::Var(i) => *vars
                .get(*i)
                .ok_or_else(|| Error::Dimension(format!("x{} outside dimension {}", i + 1, vars.len())))?,
            Expr::Neg(a) => -a.eval(vars, params)?,
            Expr::Add(a, b) => a.eval(vars, params)? + b.eval(vars, params)?,
            Expr::Sub(a, b) => a.eval(vars, params)? - b.eval(vars, params)?,
            Expr::Mul(a, b) => a.eval(vars, params)? * b.eval(vars, params)?,
            Expr::Div(a, b) => {
                let den = b.eval(vars, params)?;
                if den == 0.0 {
                    return Err(Error::Domain(format!("division by zero in `{self}`")));
                }
                a.eval(vars, params)? / den
            }
            Expr::Call(f, a) => {
                let arg = a.eval(vars, params)?;
                if *f == Func::Log && arg <= 0.0 {
                    return Err(Error::Domain(format!("log of non-positive value in `{self}`")));
                }
                f.apply(arg)
            }
        };
        Ok(v)
    }

    /// Symbolic partial derivative with respect to coordinate `var`.
    pub fn derivative(&self, var: usize) -> Expr {
        match self {
            Expr::Const(_) | Expr::Pi | Expr::Param(_) => Expr::Const(0.0),
            Expr::Var(i) => Expr::Const(if *i == var { 1.0 } else { 0.0 }),
            Expr::Neg(a) => Expr::neg(a.derivative(var)),
            Expr::Add(a, b) => Expr::add(a.derivative(var), b.derivative(var)),
            Expr::Sub(a, b) => Expr::sub(a.derivative(var), b.derivative(var)),
            Expr::Mul(a, b) => Expr::add(
                Expr::mul(a.derivative(var), (**b).clone()),
                Expr::mul((**a).clone(), b.derivative(var)),
            ),
            Expr::Div(a, b) => {
                // (a'b - ab') / b^2
                let num = Expr::sub(
                    Expr::mul(a.derivative(var), (**b).clone()),
                    Expr::mul((**a).clone(), b.derivative(var)),
                );
                Expr::div(num, Expr::mul((**b).clone(), (**b).clone()))
            }
            Expr::Call(f, a) => {
                let inner = a.derivative(var);
                let outer = match f {
                    Func::Sin => Expr::cos((**a).clone()),
                    Func::Cos => Expr::neg(Expr::sin((**a).clone())),
                    Func::Exp => Expr::call(Func::Exp, (**a).clone()),
                    Func::Log => Expr::div(Expr::Const(1.0), (**a).clone()),
                };
                Expr::mul(outer, inner)
            }
        }
    }

    /// Replaces bound parameters by their values and folds constants.
    pub fn bind_params(&self, params: &BTreeMap<String, f64>) -> Expr {
        self.rebuild(&|e| match e {
            Expr::Param(name) => params.get(name).map(|v| Expr::Const(*v)),
            Expr::Pi => Some(Expr::Const(std::f64::consts::PI)),
            _ => None,
        })
    }

    /// Renumbers coordinates `x_i -> x_{i+offset}`.
    pub fn shift_vars(&self, offset: usize) -> Expr {
        self.rebuild(&|e| match e {
            Expr::Var(i) => Some(Expr::Var(i + offset)),
            _ => None,
        })
    }

    fn rebuild(&self, leaf: &dyn Fn(&Expr) -> Option<Expr>) -> Expr {
        if let Some(replaced) = leaf(self) {
            return replaced;
        }
        match self {
            Expr::Const(_) | Expr::Pi | Expr::Param(_) | Expr::Var(_) => self.clone(),
            Expr::Neg(a) => Expr::neg(a.rebuild(leaf)),
            Expr::Add(a, b) => Expr::add(a.rebuild(leaf), b.rebuild(leaf)),
            Expr::Sub(a, b) => Expr::sub(a.rebuild(leaf), b.rebuild(leaf)),
            Expr::Mul(a, b) => Expr::mul(a.rebuild(leaf), b.rebuild(leaf)),
            Expr::Div(a, b) => Expr::div(a.rebuild(leaf), b.rebuild(leaf)),
            Expr::Call(f, a) => Expr::call(*f, a.rebuild(leaf)),
        }
    }

    pub fn depends_on(&self, var: usize) -> bool {
        let mut vars = BTreeSet::new();
        self.collect(&mut vars, &mut BTreeSet::new());
        vars.contains(&var)
    }

    /// Coordinates and parameter names referenced by the expression.
    pub fn free_names(&self) -> (BTreeSet<usize>, BTreeSet<String>) {
        let mut vars = BTreeSet::new();
        let mut params = BTreeSet::new();
        self.collect(&mut vars, &mut params);
        (vars, params)
    }

    fn collect(&self, vars: &mut BTreeSet<usize>, params: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) | Expr::Pi => {}
            Expr::Param(name) => {
                params.insert(name.clone());
            }
            Expr::Var(i) => {
                vars.insert(*i);
            }
            Expr::Neg(a) | Expr::Call(_, a) => a.collect(vars, params),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect(vars, params);
                b.collect(vars, params);
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            _ => 4,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
            if e.precedence() < min {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Const(v) => {
                if *v < 0.0 {
                    write!(f, "({v:?})")
                } else {
                    write!(f, "{v:?}")
                }
            }
            Expr::Pi => write!(f, "pi"),
            Expr::Param(name) => write!(f, "{name}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(a) => {
                write!(f, "-")?;
                child(f, a, 4)
            }
            Expr::Add(a, b) => {
                child(f, a, 1)?;
                write!(f, " + ")?;
                child(f, b, 2)
            }
            Expr::Sub(a, b) => {
                child(f, a, 1)?;
                write!(f, " - ")?;
                child(f, b, 2)
            }
            Expr::Mul(a, b) => {
                child(f, a, 2)?;
                write!(f, "*")?;
                child(f, b, 3)
            }
            Expr::Div(a, b) => {
                child(f, a, 2)?;
                write!(f, "/")?;
                child(f, b, 3)
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(src: &str, line: usize, column0: usize) -> Result<Vec<Spanned>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = column0 + i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let simple = match c {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(tok) = simple {
            out.push(Spanned { tok, line, column });
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
            let value: f64 = text.parse().map_err(|_| Error::Syntax {
                line,
                column,
                message: format!("malformed number `{text}`"),
            })?;
            out.push(Spanned {
                tok: Tok::Num(value),
                line,
                column,
            });
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Spanned {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line,
                column,
            });
            continue;
        }
        return Err(Error::Syntax {
            line,
            column,
            message: format!("unexpected character `{c}`"),
        });
    }
    Ok(out)
}

/// Names an expression may refer to.
#[derive(Debug, Clone)]
pub struct Scope {
    pub dim: usize,
    pub params: BTreeSet<String>,
}

struct Parser<'a> {
    toks: &'a [Spanned],
    pos: usize,
    scope: &'a Scope,
    end_line: usize,
    end_column: usize,
    open_parens: Vec<(usize, usize)>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.toks
            .get(self.pos)
            .map(|s| (s.line, s.column))
            .unwrap_or((self.end_line, self.end_column))
    }

    fn error(&self, message: impl Into<String>) -> Error {
        let (line, column) = self.here();
        Error::Syntax {
            line,
            column,
            message: message.into(),
        }
    }

    fn unexpected_end(&self) -> Error {
        match self.open_parens.last() {
            Some(&(line, column)) => Error::Syntax {
                line,
                column,
                message: "unclosed parenthesis".into(),
            },
            None => self.error("unexpected end of expression"),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(Tok::Minus) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Plus) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Expr> {
        let Some(spanned) = self.toks.get(self.pos).cloned() else {
            return Err(self.unexpected_end());
        };
        self.pos += 1;
        match spanned.tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                self.open_parens.push((spanned.line, spanned.column));
                let inner = self.expr()?;
                self.close_paren()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if let Some(func) = Func::from_name(&name) {
                    match self.toks.get(self.pos) {
                        Some(Spanned { tok: Tok::LParen, line, column }) => {
                            self.open_parens.push((*line, *column));
                            self.pos += 1;
                        }
                        _ => return Err(self.error(format!("expected `(` after `{name}`"))),
                    }
                    let arg = self.expr()?;
                    self.close_paren()?;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                if name == "pi" {
                    return Ok(Expr::Pi);
                }
                if let Some(index) = coordinate_index(&name) {
                    if index >= 1 && index <= self.scope.dim {
                        return Ok(Expr::Var(index - 1));
                    }
                }
                if self.scope.params.contains(&name) {
                    return Ok(Expr::Param(name));
                }
                Err(Error::UnboundName {
                    name,
                    line: spanned.line,
                    column: spanned.column,
                })
            }
            Tok::RParen => {
                self.pos -= 1;
                Err(self.error("unexpected `)`"))
            }
            _ => {
                self.pos -= 1;
                Err(self.error("expected a number, name or `(`"))
            }
        }
    }

    fn close_paren(&mut self) -> Result<()> {
        match self.peek() {
            Some(Tok::RParen) => {
                self.pos += 1;
                self.open_parens.pop();
                Ok(())
            }
            None => Err(self.unexpected_end()),
            Some(_) => Err(self.error("expected `)`")),
        }
    }
}

fn coordinate_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Parses one expression. `line` and `column` locate `src` in its enclosing
/// document (1-based) so errors point at the right place.
pub fn parse_expr(src: &str, scope: &Scope, line: usize, column: usize) -> Result<Expr> {
    let toks = lex(src, line, column)?;
    let end_column = column + src.chars().count();
    let mut parser = Parser {
        toks: &toks,
        pos: 0,
        scope,
        end_line: line,
        end_column,
        open_parens: Vec::new(),
    };
    if toks.is_empty() {
        return Err(parser.error("empty expression"));
    }
    let e = parser.expr()?;
    if parser.pos < toks.len() {
        return Err(parser.error("unexpected trailing input"));
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// Compilation

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Var(u32),
    Neg(u32),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Call(Func, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum OpKey {
    Const(u64),
    Var(u32),
    Neg(u32),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Call(Func, u32),
}

impl From<Op> for OpKey {
    fn from(op: Op) -> Self {
        match op {
            Op::Const(v) => OpKey::Const(v.to_bits()),
            Op::Var(i) => OpKey::Var(i),
            Op::Neg(a) => OpKey::Neg(a),
            // commutative operands are ordered so a+b and b+a share a register
            Op::Add(a, b) => OpKey::Add(a.min(b), a.max(b)),
            Op::Sub(a, b) => OpKey::Sub(a, b),
            Op::Mul(a, b) => OpKey::Mul(a.min(b), a.max(b)),
            Op::Div(a, b) => OpKey::Div(a, b),
            Op::Call(f, a) => OpKey::Call(f, a),
        }
    }
}

/// Straight-line register program evaluating several expressions at once,
/// with shared subexpressions computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    ops: Vec<Op>,
    outputs: Vec<u32>,
    inputs: usize,
}

impl Tape {
    /// Compiles parameter-free expressions over `inputs` coordinates.
    pub fn compile(exprs: &[Expr], inputs: usize) -> Result<Tape> {
        let mut builder = TapeBuilder::default();
        let mut outputs = Vec::with_capacity(exprs.len());
        for e in exprs {
            outputs.push(builder.emit(e, inputs)?);
        }
        Ok(Tape {
            ops: builder.ops,
            outputs,
            inputs,
        })
    }

    pub fn outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Evaluates into `out`. Non-finite results are left for the caller to
    /// detect.
    pub fn eval(&self, vars: &[f64], out: &mut [f64]) {
        debug_assert!(vars.len() >= self.inputs);
        debug_assert_eq!(out.len(), self.outputs.len());
        // small register files live on the stack; zeroing is the main fixed cost
        let n = self.ops.len();
        if n <= 16 {
            let mut regs = [0.0f64; 16];
            self.run(vars, &mut regs[..n], out);
        } else if n <= 32 {
            let mut regs = [0.0f64; 32];
            self.run(vars, &mut regs[..n], out);
        } else if n <= 128 {
            let mut regs = [0.0f64; 128];
            self.run(vars, &mut regs[..n], out);
        } else {
            let mut regs = vec![0.0f64; n];
            self.run(vars, &mut regs, out);
        }
    }

    #[inline]
    fn run(&self, vars: &[f64], regs: &mut [f64], out: &mut [f64]) {
        for (i, op) in self.ops.iter().enumerate() {
            regs[i] = match *op {
                Op::Const(v) => v,
                Op::Var(k) => vars[k as usize],
                Op::Neg(a) => -regs[a as usize],
                Op::Add(a, b) => regs[a as usize] + regs[b as usize],
                Op::Sub(a, b) => regs[a as usize] - regs[b as usize],
                Op::Mul(a, b) => regs[a as usize] * regs[b as usize],
                Op::Div(a, b) => regs[a as usize] / regs[b as usize],
                Op::Call(f, a) => {
                    let x = regs[a as usize];
                    if f == Func::Log && x <= 0.0 {
                        f64::NAN
                    } else {
                        f.apply(x)
                    }
                }
            };
        }
        for (o, &r) in out.iter_mut().zip(&self.outputs) {
            *o = regs[r as usize];
        }
    }
}

#[derive(Default)]
struct TapeBuilder {
    ops: Vec<Op>,
    index: FxHashMap<OpKey, u32>,
}

impl TapeBuilder {
    fn push(&mut self, op: Op) -> u32 {
        let key = OpKey::from(op);
        if let Some(&r) = self.index.get(&key) {
            return r;
        }
        let r = self.ops.len() as u32;
        self.ops.push(op);
        self.index.insert(key, r);
        r
    }

    fn emit(&mut self, e: &Expr, inputs: usize) -> Result<u32> {
        Ok(match e {
            Expr::Const(v) => self.push(Op::Const(*v)),
            Expr::Pi => self.push(Op::Const(std::f64::consts::PI)),
            Expr::Param(name) => {
                return Err(Error::Structure(format!(
                    "parameter `{name}` must be bound before compilation"
                )))
            }
            Expr::Var(i) => {
                if *i >= inputs {
                    return Err(Error::Dimension(format!(
                        "x{} used in a system of dimension {inputs}",
                        i + 1
                    )));
                }
                self.push(Op::Var(*i as u32))
            }
            Expr::Neg(a) => {
                let a = self.emit(a, inputs)?;
                self.push(Op::Neg(a))
            }
            Expr::Add(a, b) => {
                let (a, b) = (self.emit(a, inputs)?, self.emit(b, inputs)?);
                self.push(Op::Add(a, b))
            }
            Expr::Sub(a, b) => {
                let (a, b) = (self.emit(a, inputs)?, self.emit(b, inputs)?);
                self.push(Op::Sub(a, b))
            }
            Expr::Mul(a, b) => {
                let (a, b) = (self.emit(a, inputs)?, self.emit(b, inputs)?);
                self.push(Op::Mul(a, b))
            }
            Expr::Div(a, b) => {
                let (a, b) = (self.emit(a, inputs)?, self.emit(b, inputs)?);
                self.push(Op::Div(a, b))
            }
            Expr::Call(f, a) => {
                let a = self.emit(a, inputs)?;
                self.push(Op::Call(*f, a))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scope(dim: usize, params: &[&str]) -> Scope {
        Scope {
            dim,
            params: params.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn no_params() -> BTreeMap<String, f64> {
        BTreeMap::new()
    }

    #[test]
    fn parses_and_evaluates() {
        let e = parse_expr("a + b*cos(pi*x1)", &scope(2, &["a", "b"]), 1, 1).unwrap();
        let params: BTreeMap<String, f64> =
            [("a".to_string(), 0.5), ("b".to_string(), 0.25)].into_iter().collect();
        let v = e.eval(&[0.0, 0.3], &params).unwrap();
        assert!((v - 0.75).abs() < 1e-15);
        let e = parse_expr("-x1 * -2 + 1e-1 / 2", &scope(1, &[]), 1, 1).unwrap();
        assert!((e.eval(&[3.0], &no_params()).unwrap() - 6.05).abs() < 1e-14);
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse_expr("8 - 3 - 2 * 2 / 4", &scope(1, &[]), 1, 1).unwrap();
        assert_eq!(e.eval(&[0.0], &no_params()).unwrap(), 4.0);
    }

    #[test]
    fn unclosed_parenthesis_points_at_the_paren() {
        let err = parse_expr("sin(pi*", &scope(1, &[]), 1, 1).unwrap_err();
        assert_eq!(
            err,
            Error::Syntax {
                line: 1,
                column: 4,
                message: "unclosed parenthesis".into()
            }
        );
    }

    #[test]
    fn unbound_names_are_reported() {
        let err = parse_expr("x1 + q", &scope(1, &[]), 3, 5).unwrap_err();
        assert_eq!(
            err,
            Error::UnboundName {
                name: "q".into(),
                line: 3,
                column: 10
            }
        );
        assert!(matches!(
            parse_expr("x3", &scope(2, &[]), 1, 1),
            Err(Error::UnboundName { .. })
        ));
    }

    #[test]
    fn display_round_trips() {
        let s = scope(2, &["b"]);
        for src in ["-(x1 - x2)*b/(1 + x2)", "exp(-x1*x1) - log(2 + cos(x2))", "x1 - (x2 - 1)"] {
            let e = parse_expr(src, &s, 1, 1).unwrap();
            let again = parse_expr(&e.to_string(), &s, 1, 1).unwrap();
            let params: BTreeMap<String, f64> = [("b".to_string(), 0.7)].into_iter().collect();
            let x = [0.3, -0.4];
            assert_eq!(e.eval(&x, &params).unwrap(), again.eval(&x, &params).unwrap(), "{src}");
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let s = scope(2, &[]);
        let e = parse_expr("sin(x1*x2) / (2 + cos(x1)) + exp(x2)*log(3 + x1)", &s, 1, 1).unwrap();
        let x = [0.37, -0.81];
        for var in 0..2 {
            let d = e.derivative(var).eval(&x, &no_params()).unwrap();
            let h = 1e-6;
            let mut xp = x;
            let mut xm = x;
            xp[var] += h;
            xm[var] -= h;
            let fd = (e.eval(&xp, &no_params()).unwrap() - e.eval(&xm, &no_params()).unwrap()) / (2.0 * h);
            assert!((d - fd).abs() < 1e-8, "d/dx{}: {d} vs {fd}", var + 1);
        }
    }

    #[test]
    fn tape_shares_subexpressions() {
        let s = scope(1, &[]);
        let f = parse_expr("sin(pi*x1)", &s, 1, 1).unwrap().bind_params(&no_params());
        let g = parse_expr("0.25*cos(pi*x1) + sin(pi*x1)", &s, 1, 1).unwrap().bind_params(&no_params());
        let tape = Tape::compile(&[f.clone(), g.clone()], 1).unwrap();
        // pi, x1, pi*x1, sin, 0.25, cos, mul, add
        assert_eq!(tape.len(), 8);
        let mut out = [0.0; 2];
        tape.eval(&[0.3], &mut out);
        assert_eq!(out[0], f.eval(&[0.3], &no_params()).unwrap());
        assert!((out[1] - g.eval(&[0.3], &no_params()).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn guarded_evaluation() {
        let s = scope(1, &[]);
        let e = parse_expr("log(x1)", &s, 1, 1).unwrap();
        assert!(matches!(e.eval(&[-1.0], &no_params()), Err(Error::Domain(_))));
        let tape = Tape::compile(&[e], 1).unwrap();
        let mut out = [0.0];
        tape.eval(&[-1.0], &mut out);
        assert!(out[0].is_nan());
    }
}
