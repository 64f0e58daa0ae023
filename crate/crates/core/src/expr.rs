//! Tiny expression language for densities and comparison potentials.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := factor ('*' factor)*
//! factor  := '-' factor | primary
//! primary := number | 'pi' | coord | func '(' expr ')' | '(' expr ')'
//! func    := 'exp' | 'sin' | 'cos'
//! coord   := 'x1' … 'xn' | 'y1' … 'yn'
//! ```

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::{PeriodicGrid, RealAxis, ScalarField};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Exp,
    Sin,
    Cos,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Coord(RealAxis),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self> {
        let mut p = Parser { src, pos: 0 };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != src.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(e)
    }

    /// Evaluates at real coordinates `(x_1, …, x_n, y_1, …, y_n)`.
    pub fn eval(&self, coords: &[f64]) -> f64 {
        let n = coords.len() / 2;
        match self {
            Expr::Const(c) => *c,
            Expr::Coord(a) => coords[a.index(n)],
            Expr::Neg(e) => -e.eval(coords),
            Expr::Add(a, b) => a.eval(coords) + b.eval(coords),
            Expr::Sub(a, b) => a.eval(coords) - b.eval(coords),
            Expr::Mul(a, b) => a.eval(coords) * b.eval(coords),
            Expr::Call(f, e) => {
                let v = e.eval(coords);
                match f {
                    Func::Exp => v.exp(),
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                }
            }
        }
    }

    fn axes(&self, out: &mut Vec<RealAxis>) {
        match self {
            Expr::Const(_) => {}
            Expr::Coord(a) => out.push(*a),
            Expr::Neg(e) | Expr::Call(_, e) => e.axes(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                a.axes(out);
                b.axes(out);
            }
        }
    }

    /// Coordinates referenced by the expression.
    pub fn coordinates(&self) -> Vec<RealAxis> {
        let mut v = Vec::new();
        self.axes(&mut v);
        v.sort();
        v.dedup();
        v
    }

    /// Samples the expression on a grid; every referenced coordinate must be active.
    pub fn sample(&self, grid: &Arc<PeriodicGrid>) -> Result<ScalarField> {
        for a in self.coordinates() {
            if a.complex_index() >= grid.n() {
                return Err(Error::Config(format!("coordinate {a} exceeds dimension {}", grid.n())));
            }
            if !grid.is_active(a) {
                return Err(Error::Config(format!("coordinate {a} is not an active grid axis")));
            }
        }
        ScalarField::from_fn(grid.clone(), |x| self.eval(x))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Coord(a) => write!(f, "{a}"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Call(func, e) => {
                let name = match func {
                    Func::Exp => "exp",
                    Func::Sin => "sin",
                    Func::Cos => "cos",
                };
                write!(f, "{name}({e})")
            }
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> Error {
        Error::Config(format!("expression '{}': {msg} at column {}", self.src, self.pos + 1))
    }

    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        while self.eat('*') {
            lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr> {
        self.skip_ws();
        if self.eat('(') {
            let e = self.expr()?;
            if !self.eat(')') {
                return Err(self.error("expected ')'"));
            }
            return Ok(e);
        }
        let rest = &self.src[self.pos..];
        let c = rest.chars().next().ok_or_else(|| self.error("unexpected end of input"))?;
        if c.is_ascii_digit() || c == '.' {
            let mut end = rest
                .find(|ch: char| !(ch.is_ascii_digit() || ch == '.'))
                .unwrap_or(rest.len());
            // exponent part
            let tail = &rest[end..];
            if tail.starts_with(['e', 'E']) {
                let after = &tail[1..];
                let sign = usize::from(after.starts_with(['+', '-']));
                let digits = after[sign..].find(|ch: char| !ch.is_ascii_digit()).unwrap_or(after.len() - sign);
                if digits > 0 {
                    end += 1 + sign + digits;
                }
            }
            let value: f64 = rest[..end].parse().map_err(|_| self.error("malformed number"))?;
            self.pos += end;
            return Ok(Expr::Const(value));
        }
        if c.is_ascii_alphabetic() {
            let end = rest.find(|ch: char| !ch.is_ascii_alphanumeric()).unwrap_or(rest.len());
            let word = &rest[..end];
            let start = self.pos;
            self.pos += end;
            let func = match word {
                "exp" => Some(Func::Exp),
                "sin" => Some(Func::Sin),
                "cos" => Some(Func::Cos),
                "pi" => return Ok(Expr::Const(std::f64::consts::PI)),
                _ => None,
            };
            if let Some(func) = func {
                if !self.eat('(') {
                    return Err(self.error("expected '(' after function name"));
                }
                let arg = self.expr()?;
                if !self.eat(')') {
                    return Err(self.error("expected ')'"));
                }
                return Ok(Expr::Call(func, Box::new(arg)));
            }
            return word.parse::<RealAxis>().map(Expr::Coord).map_err(|_| {
                self.pos = start;
                self.error(&format!("unknown identifier '{word}'"))
            });
        }
        Err(self.error(&format!("unexpected character '{c}'")))
    }
}
