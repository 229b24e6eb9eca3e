//! Expression language for scalar fields in scenario files.
//!
//! Variables are written `x1 .. xn`; any other identifier that is not a
//! function name is a named parameter. Multiplication is always explicit
//! (`3*x1`, never `3x1`). `^` binds tighter than unary minus and is
//! right-associative; `*` and `/` bind tighter than `+` and `-`.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

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
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Min,
    Max,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based variable index; `x1` parses to `Var(0)`.
    Var(usize),
    Param(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Error)]
#[error("parse error at position {pos}: {msg}")]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unbound parameter `{0}`")]
    UnboundParam(String),
    #[error("variable x{} out of range for dimension {dim}", index + 1)]
    VarOutOfRange { index: usize, dim: usize },
    #[error("non-finite result in `{context}`")]
    NonFinite { context: String },
}

#[derive(Debug, Error)]
#[error("cannot differentiate through `{node}` (non-smooth in x{})", var + 1)]
pub struct DiffError {
    pub node: String,
    pub var: usize,
}

// ───────────────────────── tokenizer ─────────────────────────

#[derive(Debug, Clone, PartialEq)]
enum Tok {
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

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                toks.push((Tok::Plus, i));
                i += 1;
            }
            '-' => {
                toks.push((Tok::Minus, i));
                i += 1;
            }
            '*' => {
                toks.push((Tok::Star, i));
                i += 1;
            }
            '/' => {
                toks.push((Tok::Slash, i));
                i += 1;
            }
            '^' => {
                toks.push((Tok::Caret, i));
                i += 1;
            }
            '(' => {
                toks.push((Tok::LParen, i));
                i += 1;
            }
            ')' => {
                toks.push((Tok::RParen, i));
                i += 1;
            }
            ',' => {
                toks.push((Tok::Comma, i));
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() {
                    let d = bytes[i] as char;
                    if d.is_ascii_digit() || d == '.' {
                        i += 1;
                    } else if d == 'e' || d == 'E' {
                        // exponent, possibly signed
                        let mut j = i + 1;
                        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                            j += 1;
                        }
                        if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                            i = j;
                        } else {
                            break;
                        }
                    } else {
                        break;
                    }
                }
                let s = &text[start..i];
                let v: f64 = s.parse().map_err(|_| ParseError {
                    pos: start,
                    msg: format!("invalid number `{s}`"),
                })?;
                toks.push((Tok::Num(v), start));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len() {
                    let d = bytes[i] as char;
                    if d.is_ascii_alphanumeric() || d == '_' {
                        i += 1;
                    } else {
                        break;
                    }
                }
                toks.push((Tok::Ident(text[start..i].to_string()), start));
            }
            _ => {
                return Err(ParseError {
                    pos: i,
                    msg: format!("unexpected character `{c}`"),
                })
            }
        }
    }
    Ok(toks)
}

// ───────────────────────── parser ─────────────────────────

struct Parser<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
    dim: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(_, p)| *p)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        match self.bump() {
            Some(t) if t == want => Ok(()),
            _ => Err(ParseError {
                pos: self.here(),
                msg: format!("expected {what}"),
            }),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::Bin(BinOp::Add, Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Minus) => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::Bin(BinOp::Sub, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.bump();
                    let rhs = self.unary()?;
                    lhs = Expr::Bin(BinOp::Mul, Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Slash) => {
                    self.bump();
                    let rhs = self.unary()?;
                    lhs = Expr::Bin(BinOp::Div, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(&Tok::Minus) {
            self.bump();
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some(&Tok::Caret) {
            self.bump();
            // right-associative; exponent may carry a unary minus
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let pos = self.here();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Const(v)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                if let Some(f) = Func::from_name(&name) {
                    self.expect(Tok::LParen, "`(` after function name")?;
                    let mut args = vec![self.expr()?];
                    while self.peek() == Some(&Tok::Comma) {
                        self.bump();
                        args.push(self.expr()?);
                    }
                    self.expect(Tok::RParen, "`)`")?;
                    if args.len() != f.arity() {
                        return Err(ParseError {
                            pos,
                            msg: format!(
                                "`{}` takes {} argument(s), got {}",
                                f.name(),
                                f.arity(),
                                args.len()
                            ),
                        });
                    }
                    Ok(Expr::Call(f, args))
                } else if let Some(idx) = parse_var_name(&name) {
                    if idx == 0 || idx > self.dim {
                        return Err(ParseError {
                            pos,
                            msg: format!("variable `{name}` out of range for dimension {}", self.dim),
                        });
                    }
                    Ok(Expr::Var(idx - 1))
                } else {
                    Ok(Expr::Param(name))
                }
            }
            _ => Err(ParseError {
                pos,
                msg: "expected number, identifier or `(`".into(),
            }),
        }
    }
}

fn parse_var_name(name: &str) -> Option<usize> {
    let rest = name.strip_prefix('x')?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok()
}

/// Parses `text` into an AST for a state space of dimension `dim`.
pub fn parse_expression(text: &str, dim: usize) -> Result<Expr, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError {
            pos: 0,
            msg: "empty expression".into(),
        });
    }
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        dim,
        end: text.len(),
    };
    let e = p.expr()?;
    if p.pos != toks.len() {
        return Err(ParseError {
            pos: p.here(),
            msg: "trailing input".into(),
        });
    }
    Ok(e)
}

// ───────────────────────── printer ─────────────────────────

impl Expr {
    fn prec(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Bin(BinOp::Pow, ..) => 4,
            _ => 5,
        }
    }
}

fn fmt_prec(e: &Expr, min_prec: u8, out: &mut String) {
    let needs_paren = e.prec() < min_prec;
    if needs_paren {
        out.push('(');
    }
    match e {
        Expr::Const(v) => out.push_str(&format!("{v}")),
        Expr::Var(i) => out.push_str(&format!("x{}", i + 1)),
        Expr::Param(name) => out.push_str(name),
        Expr::Neg(inner) => {
            out.push('-');
            fmt_prec(inner, 3, out);
        }
        Expr::Bin(op, l, r) => {
            // Right operands are parenthesized at equal precedence so the
            // left-associative reparse reproduces the tree structurally.
            let (sym, lp, rp) = match op {
                BinOp::Add => (" + ", 1, 2),
                BinOp::Sub => (" - ", 1, 2),
                BinOp::Mul => ("*", 2, 3),
                BinOp::Div => ("/", 2, 3),
                BinOp::Pow => ("^", 5, 3), // right-assoc; base must be atomic
            };
            fmt_prec(l, lp, out);
            out.push_str(sym);
            fmt_prec(r, rp, out);
        }
        Expr::Call(f, args) => {
            out.push_str(f.name());
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                fmt_prec(a, 0, out);
            }
            out.push(')');
        }
    }
    if needs_paren {
        out.push(')');
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        fmt_prec(self, 0, &mut s);
        f.write_str(&s)
    }
}

// ───────────────────────── evaluation ─────────────────────────

/// Evaluates the AST at state `x` with the given parameter bindings.
/// Any NaN or infinite intermediate is reported as an error.
pub fn evaluate(ast: &Expr, x: &[f64], params: &HashMap<String, f64>) -> Result<f64, EvalError> {
    let v = eval_inner(ast, x, params)?;
    if !v.is_finite() {
        return Err(EvalError::NonFinite {
            context: ast.to_string(),
        });
    }
    Ok(v)
}

fn eval_inner(ast: &Expr, x: &[f64], params: &HashMap<String, f64>) -> Result<f64, EvalError> {
    let v = match ast {
        Expr::Const(c) => *c,
        Expr::Var(i) => {
            if *i >= x.len() {
                return Err(EvalError::VarOutOfRange {
                    index: *i,
                    dim: x.len(),
                });
            }
            x[*i]
        }
        Expr::Param(name) => *params
            .get(name)
            .ok_or_else(|| EvalError::UnboundParam(name.clone()))?,
        Expr::Neg(e) => -eval_inner(e, x, params)?,
        Expr::Bin(op, l, r) => {
            let a = eval_inner(l, x, params)?;
            let b = eval_inner(r, x, params)?;
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => a / b,
                BinOp::Pow => a.powf(b),
            }
        }
        Expr::Call(f, args) => {
            let a = eval_inner(&args[0], x, params)?;
            match f {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Exp => a.exp(),
                Func::Log => a.ln(),
                Func::Sqrt => a.sqrt(),
                Func::Abs => a.abs(),
                Func::Min => a.min(eval_inner(&args[1], x, params)?),
                Func::Max => a.max(eval_inner(&args[1], x, params)?),
            }
        }
    };
    if !v.is_finite() {
        return Err(EvalError::NonFinite {
            context: ast.to_string(),
        });
    }
    Ok(v)
}

/// Replaces bound `Param` nodes with constants. Unbound parameters are left
/// in place; callers that require a closed expression check afterwards.
pub fn substitute(ast: &Expr, params: &HashMap<String, f64>) -> Expr {
    match ast {
        Expr::Param(name) => match params.get(name) {
            Some(v) => c(*v),
            None => ast.clone(),
        },
        Expr::Const(_) | Expr::Var(_) => ast.clone(),
        Expr::Neg(e) => Expr::Neg(Box::new(substitute(e, params))),
        Expr::Bin(op, l, r) => Expr::Bin(
            *op,
            Box::new(substitute(l, params)),
            Box::new(substitute(r, params)),
        ),
        Expr::Call(f, args) => {
            Expr::Call(*f, args.iter().map(|a| substitute(a, params)).collect())
        }
    }
}

/// Names of parameters still unbound in the expression.
pub fn free_params(ast: &Expr) -> Vec<String> {
    fn walk(e: &Expr, out: &mut Vec<String>) {
        match e {
            Expr::Param(name) => {
                if !out.contains(name) {
                    out.push(name.clone());
                }
            }
            Expr::Const(_) | Expr::Var(_) => {}
            Expr::Neg(inner) => walk(inner, out),
            Expr::Bin(_, l, r) => {
                walk(l, out);
                walk(r, out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| walk(a, out)),
        }
    }
    let mut out = Vec::new();
    walk(ast, &mut out);
    out
}

// ───────────────────────── differentiation ─────────────────────────

impl Expr {
    pub fn depends_on(&self, var: usize) -> bool {
        match self {
            Expr::Const(_) | Expr::Param(_) => false,
            Expr::Var(i) => *i == var,
            Expr::Neg(e) => e.depends_on(var),
            Expr::Bin(_, l, r) => l.depends_on(var) || r.depends_on(var),
            Expr::Call(_, args) => args.iter().any(|a| a.depends_on(var)),
        }
    }
}

fn c(v: f64) -> Expr {
    if v < 0.0 {
        Expr::Neg(Box::new(Expr::Const(-v)))
    } else {
        Expr::Const(v)
    }
}

fn bin(op: BinOp, l: Expr, r: Expr) -> Expr {
    // light constant folding so derivatives stay readable
    match (op, &l, &r) {
        (BinOp::Add, Expr::Const(a), _) if *a == 0.0 => return r,
        (BinOp::Add, _, Expr::Const(b)) if *b == 0.0 => return l,
        (BinOp::Sub, _, Expr::Const(b)) if *b == 0.0 => return l,
        (BinOp::Mul, Expr::Const(a), _) if *a == 0.0 => return Expr::Const(0.0),
        (BinOp::Mul, _, Expr::Const(b)) if *b == 0.0 => return Expr::Const(0.0),
        (BinOp::Mul, Expr::Const(a), _) if *a == 1.0 => return r,
        (BinOp::Mul, _, Expr::Const(b)) if *b == 1.0 => return l,
        (BinOp::Div, _, Expr::Const(b)) if *b == 1.0 => return l,
        (BinOp::Pow, _, Expr::Const(b)) if *b == 1.0 => return l,
        _ => {}
    }
    if let (Expr::Const(a), Expr::Const(b)) = (&l, &r) {
        let v = match op {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
            BinOp::Pow => a.powf(*b),
        };
        if v.is_finite() {
            return c(v);
        }
    }
    Expr::Bin(op, Box::new(l), Box::new(r))
}

fn neg(e: Expr) -> Expr {
    match e {
        Expr::Const(v) if v == 0.0 => Expr::Const(0.0),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

/// Symbolic partial derivative with respect to variable index `var`.
///
/// `min`, `max` and `abs` nodes are rejected when the differentiation
/// variable flows through them; the barrier must be C1 while the dynamics
/// may legitimately contain such nodes.
pub fn differentiate(ast: &Expr, var: usize) -> Result<Expr, DiffError> {
    Ok(match ast {
        Expr::Const(_) | Expr::Param(_) => Expr::Const(0.0),
        Expr::Var(i) => {
            if *i == var {
                Expr::Const(1.0)
            } else {
                Expr::Const(0.0)
            }
        }
        Expr::Neg(e) => neg(differentiate(e, var)?),
        Expr::Bin(op, l, r) => {
            let dl = differentiate(l, var)?;
            let dr = differentiate(r, var)?;
            match op {
                BinOp::Add => bin(BinOp::Add, dl, dr),
                BinOp::Sub => bin(BinOp::Sub, dl, dr),
                BinOp::Mul => bin(
                    BinOp::Add,
                    bin(BinOp::Mul, dl, (**r).clone()),
                    bin(BinOp::Mul, (**l).clone(), dr),
                ),
                BinOp::Div => bin(
                    BinOp::Div,
                    bin(
                        BinOp::Sub,
                        bin(BinOp::Mul, dl, (**r).clone()),
                        bin(BinOp::Mul, (**l).clone(), dr),
                    ),
                    bin(BinOp::Pow, (**r).clone(), Expr::Const(2.0)),
                ),
                BinOp::Pow => {
                    if let Expr::Const(k) = **r {
                        // d(u^k) = k u^(k-1) u'
                        bin(
                            BinOp::Mul,
                            bin(
                                BinOp::Mul,
                                c(k),
                                bin(BinOp::Pow, (**l).clone(), c(k - 1.0)),
                            ),
                            dl,
                        )
                    } else {
                        // d(u^v) = u^v (v' ln u + v u'/u)
                        bin(
                            BinOp::Mul,
                            ast.clone(),
                            bin(
                                BinOp::Add,
                                bin(
                                    BinOp::Mul,
                                    dr,
                                    Expr::Call(Func::Log, vec![(**l).clone()]),
                                ),
                                bin(
                                    BinOp::Div,
                                    bin(BinOp::Mul, (**r).clone(), dl),
                                    (**l).clone(),
                                ),
                            ),
                        )
                    }
                }
            }
        }
        Expr::Call(f, args) => {
            match f {
                Func::Abs | Func::Min | Func::Max => {
                    if ast.depends_on(var) {
                        return Err(DiffError {
                            node: f.name().into(),
                            var,
                        });
                    }
                    return Ok(Expr::Const(0.0));
                }
                _ => {}
            }
            let u = args[0].clone();
            let du = differentiate(&args[0], var)?;
            let outer = match f {
                Func::Sin => Expr::Call(Func::Cos, vec![u]),
                Func::Cos => neg(Expr::Call(Func::Sin, vec![u])),
                Func::Exp => Expr::Call(Func::Exp, vec![u]),
                Func::Log => bin(BinOp::Div, Expr::Const(1.0), u),
                Func::Sqrt => bin(
                    BinOp::Div,
                    Expr::Const(1.0),
                    bin(
                        BinOp::Mul,
                        Expr::Const(2.0),
                        Expr::Call(Func::Sqrt, vec![u]),
                    ),
                ),
                Func::Abs | Func::Min | Func::Max => unreachable!(),
            };
            bin(BinOp::Mul, outer, du)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(text: &str) -> Expr {
        parse_expression(text, 2).unwrap()
    }

    fn ev(e: &Expr, x: &[f64]) -> f64 {
        evaluate(e, x, &HashMap::new()).unwrap()
    }

    #[test]
    fn parses_paper_barrier() {
        let h = p("9 - (3*x1^2 + 4*x1*x2 + 2*x2^2)");
        // x^T Q x at (-1, 2) is 3, so h = 6
        assert!((ev(&h, &[-1.0, 2.0]) - 6.0).abs() < 1e-14);
    }

    #[test]
    fn parses_constants_and_min() {
        assert_eq!(p("0"), Expr::Const(0.0));
        assert!((ev(&p("min(0, x1)"), &[-2.0, 0.0]) - (-2.0)).abs() < 1e-15);
        assert!((ev(&p("min(0, x1)"), &[5.0, 0.0])).abs() < 1e-15);
    }

    #[test]
    fn precedence_and_associativity() {
        assert!((ev(&p("2 + 3*4"), &[0.0, 0.0]) - 14.0).abs() < 1e-15);
        assert!((ev(&p("2*3^2"), &[0.0, 0.0]) - 18.0).abs() < 1e-15);
        assert!((ev(&p("-2^2"), &[0.0, 0.0]) - (-4.0)).abs() < 1e-15);
        assert!((ev(&p("2^3^2"), &[0.0, 0.0]) - 512.0).abs() < 1e-15);
        assert!((ev(&p("8 - 3 - 2"), &[0.0, 0.0]) - 3.0).abs() < 1e-15);
        assert!((ev(&p("8/4/2"), &[0.0, 0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_expression("1 + * 2", 2).unwrap_err();
        assert_eq!(err.pos, 4);
        assert!(parse_expression("x3", 2).is_err());
        assert!(parse_expression("", 2).is_err());
        assert!(parse_expression("min(1)", 2).is_err());
        assert!(parse_expression("3x1", 2).is_err()); // no implicit multiplication
    }

    #[test]
    fn params_and_domain_errors() {
        let e = p("k*x1");
        assert!(matches!(
            evaluate(&e, &[1.0, 0.0], &HashMap::new()),
            Err(EvalError::UnboundParam(_))
        ));
        let mut params = HashMap::new();
        params.insert("k".to_string(), 2.5);
        assert!((evaluate(&e, &[2.0, 0.0], &params).unwrap() - 5.0).abs() < 1e-15);

        assert!(matches!(
            evaluate(&p("sqrt(x1)"), &[-1.0, 0.0], &HashMap::new()),
            Err(EvalError::NonFinite { .. })
        ));
        assert!(matches!(
            evaluate(&p("1/x1"), &[0.0, 0.0], &HashMap::new()),
            Err(EvalError::NonFinite { .. })
        ));
    }

    #[test]
    fn derivative_of_paper_barrier() {
        let h = p("9 - (3*x1^2 + 4*x1*x2 + 2*x2^2)");
        let d1 = differentiate(&h, 0).unwrap();
        // grad h = -2 Q x; at (-1, 2) component 1 is -2*(3*(-1)+2*2) = -2
        assert!((ev(&d1, &[-1.0, 2.0]) - (-2.0)).abs() < 1e-12);
        let d2 = differentiate(&h, 1).unwrap();
        assert!((ev(&d2, &[-1.0, 2.0]) - (-4.0)).abs() < 1e-12);
    }

    #[test]
    fn derivative_basics() {
        assert_eq!(differentiate(&p("7"), 0).unwrap(), Expr::Const(0.0));
        let d = differentiate(&p("x1^2"), 0).unwrap();
        assert!((ev(&d, &[3.0, 0.0]) - 6.0).abs() < 1e-14);
    }

    #[test]
    fn nonsmooth_nodes_rejected_only_when_dependent() {
        assert!(differentiate(&p("abs(x1)"), 0).is_err());
        assert!(differentiate(&p("min(0, x1)"), 0).is_err());
        // independent of the differentiation variable: fine
        assert_eq!(
            differentiate(&p("min(0, x1)"), 1).unwrap(),
            Expr::Const(0.0)
        );
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let cases = [
            "sin(x1)*cos(x2)",
            "exp(x1/3) + log(x2 + 5)",
            "sqrt(x1^2 + x2^2 + 1)",
            "x1^3 - 2*x1*x2 + x2/(x1 + 4)",
            "(x1 + x2)^2/(1 + x1^2)",
        ];
        for text in cases {
            let e = p(text);
            for var in 0..2 {
                let d = differentiate(&e, var).unwrap();
                let x = [0.7, 1.3];
                let got = ev(&d, &x);
                let want = central_diff(&e, &x, var);
                let denom = want.abs().max(1.0);
                assert!(
                    (got - want).abs() / denom < 1e-6,
                    "{text} d/dx{}: {got} vs {want}",
                    var + 1
                );
            }
        }
    }

    pub(crate) fn central_diff(e: &Expr, x: &[f64], var: usize) -> f64 {
        // central difference with one Richardson extrapolation step
        let h = 1e-6 * (1.0 + x[var].abs());
        let d = |h: f64| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[var] += h;
            xm[var] -= h;
            (ev(e, &xp) - ev(e, &xm)) / (2.0 * h)
        };
        let d1 = d(h);
        let d2 = d(h / 2.0);
        (4.0 * d2 - d1) / 3.0
    }

    #[test]
    fn print_parse_round_trip() {
        let cases = [
            "9 - (3*x1^2 + 4*x1*x2 + 2*x2^2)",
            "-x1^2 + x2",
            "2^3^2",
            "a*x1/(b - x2)",
            "min(0, x1) + max(x2, 1)",
            "8 - 3 - 2",
            "1/(2*sqrt(x1 + 2))",
        ];
        for text in cases {
            let ast = p(text);
            let printed = ast.to_string();
            let reparsed = parse_expression(&printed, 2).unwrap();
            assert_eq!(ast, reparsed, "round trip failed for `{text}` -> `{printed}`");
        }
    }
}
