//! Recursive-descent parser for the expression language.
//!
//! Grammar (standard precedence, `^` binds tightest and is right-associative;
//! unary minus sits between `*`/`/` and `^`, so `-2^2 == -(2^2)`):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | 't' | 'x' index | name '(' expr ')' | '(' expr ')'
//! ```
//!
//! State variables are written `x1..xK`; the caller supplies `K` and any
//! reference outside `1..=K` is rejected at parse time.

use super::{Expr, UnOp};

/// Parse failure with the byte offset where it was detected.
#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
#[error("parse error at byte {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    n_states: usize,
}

/// Parse `src` into an expression over `(t, x1..x{n_states})`.
pub fn parse(src: &str, n_states: usize) -> Result<Expr, ParseError> {
    let mut p = Parser {
        src,
        bytes: src.as_bytes(),
        pos: 0,
        n_states,
    };
    p.skip_ws();
    if p.pos == p.bytes.len() {
        return Err(p.err("empty expression"));
    }
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return Err(p.err(&format!(
            "unexpected trailing input `{}`",
            &p.src[p.pos..]
        )));
    }
    Ok(e)
}

impl<'a> Parser<'a> {
    fn err(&self, message: &str) -> ParseError {
        ParseError {
            position: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.term()?;
        loop {
            self.skip_ws();
            if self.eat(b'+') {
                acc = Expr::add(acc, self.term()?);
            } else if self.eat(b'-') {
                acc = Expr::sub(acc, self.term()?);
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            self.skip_ws();
            if self.eat(b'*') {
                acc = Expr::mul(acc, self.unary()?);
            } else if self.eat(b'/') {
                acc = Expr::div(acc, self.unary()?);
            } else {
                return Ok(acc);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        if self.eat(b'-') {
            Ok(Expr::neg(self.unary()?))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        self.skip_ws();
        if self.eat(b'^') {
            // Right-associative, and the exponent may carry a unary minus.
            Ok(Expr::pow(base, self.unary()?))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.err("expected a value, found end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.skip_ws();
                if !self.eat(b')') {
                    return Err(self.err("expected `)`"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(c) => Err(self.err(&format!("unexpected character `{}`", c as char))),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || c == b'.' {
                self.pos += 1;
            } else if (c == b'e' || c == b'E') && self.pos > start {
                // Exponent part: e[+-]?digits
                let mark = self.pos;
                self.pos += 1;
                if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                    self.pos += 1;
                }
                if matches!(self.peek(), Some(d) if d.is_ascii_digit()) {
                    while matches!(self.peek(), Some(d) if d.is_ascii_digit()) {
                        self.pos += 1;
                    }
                } else {
                    self.pos = mark;
                    break;
                }
            } else {
                break;
            }
        }
        let text = &self.src[start..self.pos];
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Expr::constant(v)),
            _ => {
                self.pos = start;
                Err(self.err(&format!("invalid number literal `{text}`")))
            }
        }
    }

    fn ident(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric()) {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        match name {
            "t" => Ok(Expr::time()),
            "exp" | "log" | "sqrt" | "sin" | "cos" => {
                let op = match name {
                    "exp" => UnOp::Exp,
                    "log" => UnOp::Log,
                    "sqrt" => UnOp::Sqrt,
                    "sin" => UnOp::Sin,
                    "cos" => UnOp::Cos,
                    _ => unreachable!(),
                };
                self.skip_ws();
                if !self.eat(b'(') {
                    return Err(self.err(&format!("expected `(` after `{name}`")));
                }
                let arg = self.expr()?;
                self.skip_ws();
                if !self.eat(b')') {
                    return Err(self.err(&format!("expected `)` closing `{name}(...)`")));
                }
                Ok(Expr::unary(op, arg))
            }
            _ if name.starts_with('x') && name.len() > 1 => {
                let idx: usize = name[1..].parse().map_err(|_| {
                    let mut e = self.err(&format!("invalid state variable `{name}`"));
                    e.position = start;
                    e
                })?;
                if idx == 0 || idx > self.n_states {
                    let mut e = self.err(&format!(
                        "state variable `{name}` out of range: this economy has {} state \
                         dimension(s), so only x1..x{} are available",
                        self.n_states, self.n_states
                    ));
                    e.position = start;
                    return Err(e);
                }
                Ok(Expr::var(idx - 1))
            }
            _ => {
                let mut e = self.err(&format!("unknown identifier `{name}`"));
                e.position = start;
                Err(e)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::Expr;
    use super::*;

    #[test]
    fn parses_function_application() {
        let e = parse("exp(x1)", 1).unwrap();
        assert_eq!(e, Expr::exp(Expr::var(0)));
    }

    #[test]
    fn rejects_out_of_range_state_variable() {
        let err = parse("x2", 1).unwrap_err();
        assert!(err.message.contains("out of range"), "{err}");
        let err = parse("x0", 1).unwrap_err();
        assert!(err.message.contains("out of range"), "{err}");
    }

    #[test]
    fn rejects_unknown_identifier() {
        let err = parse("y + 1", 1).unwrap_err();
        assert!(err.message.contains("unknown identifier `y`"), "{err}");
        assert_eq!(err.position, 0);
    }

    #[test]
    fn rejects_trailing_garbage() {
        let err = parse("1 + 2 )", 1).unwrap_err();
        assert!(err.message.contains("trailing"), "{err}");
    }

    #[test]
    fn rejects_empty_input() {
        assert!(parse("", 1).is_err());
        assert!(parse("   ", 1).is_err());
    }

    #[test]
    fn scientific_notation_literals() {
        assert_eq!(parse("1e-3", 0).unwrap(), Expr::constant(1e-3));
        assert_eq!(parse("2.5E2", 0).unwrap(), Expr::constant(250.0));
    }

    #[test]
    fn missing_closing_paren_is_positioned() {
        let err = parse("exp(x1", 1).unwrap_err();
        // Byte offset of the end of input, where the `)` should have been.
        assert_eq!(err.position, 6);
    }

    #[test]
    fn constant_expressions_fold() {
        assert_eq!(parse("1 + 2*3", 0).unwrap(), Expr::constant(7.0));
        assert_eq!(parse("-(1 + 1)", 0).unwrap(), Expr::constant(-2.0));
    }
}
