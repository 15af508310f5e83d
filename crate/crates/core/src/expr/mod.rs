//! Symbolic expressions over `(t, x1..xK)`.
//!
//! Entitlements, dividends, and diffusion coefficients are all declared as
//! strings in this small language and compiled to an [`Expr`] tree that can be
//! evaluated and differentiated exactly. Derivatives are closed: the partial
//! derivative of an `Expr` is again an `Expr`, so Jacobians of payoff ratios
//! stay symbolic all the way to the point evaluation.
//!
//! Trees are immutable; children are shared via `Arc`, so cloning an
//! expression (the product rule does this a lot) is cheap and the whole type
//! is safe to evaluate from parallel workers.

mod parse;

pub use parse::{parse, ParseError};
/// Alias for [`parse`] that reads better in `use` lists.
pub use parse::parse as parse_expr;

use std::fmt;
use std::sync::Arc;

/// Variable of differentiation: calendar time or one of the state coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variable {
    Time,
    /// Zero-based state index; `State(0)` is the variable written `x1`.
    State(usize),
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
pub enum UnOp {
    Neg,
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
}

/// Expression tree node.
///
/// Build exclusively through [`parse`] or the constructor methods
/// (`Expr::add`, `Expr::mul`, ...). The constructors fold constants and
/// identity elements, which keeps a canonical form the printer round-trips.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Time,
    /// Zero-based state variable; printed as `x{i+1}`.
    Var(usize),
    Unary(UnOp, Arc<Expr>),
    Binary(BinOp, Arc<Expr>, Arc<Expr>),
}

/// Evaluation failure, reported with the offending subexpression.
#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("domain error in `{at}`: {what}")]
    Domain { at: String, what: String },
    #[error("non-finite value produced by `{at}`")]
    NonFinite { at: String },
    #[error("state vector has {given} components but `{at}` needs index {needed}")]
    Arity {
        at: String,
        needed: usize,
        given: usize,
    },
}

impl Expr {
    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn time() -> Expr {
        Expr::Time
    }

    /// State variable by zero-based index.
    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn zero() -> Expr {
        Expr::Const(0.0)
    }

    pub fn one() -> Expr {
        Expr::Const(1.0)
    }

    fn is_const(&self, v: f64) -> bool {
        matches!(self, Expr::Const(c) if *c == v)
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) if (x + y).is_finite() => Expr::Const(x + y),
            _ if a.is_const(0.0) => b,
            _ if b.is_const(0.0) => a,
            _ => Expr::Binary(BinOp::Add, Arc::new(a), Arc::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) if (x - y).is_finite() => Expr::Const(x - y),
            _ if b.is_const(0.0) => a,
            _ if a.is_const(0.0) => Expr::neg(b),
            _ => Expr::Binary(BinOp::Sub, Arc::new(a), Arc::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) if (x * y).is_finite() => Expr::Const(x * y),
            _ if a.is_const(0.0) || b.is_const(0.0) => Expr::Const(0.0),
            _ if a.is_const(1.0) => b,
            _ if b.is_const(1.0) => a,
            _ => Expr::Binary(BinOp::Mul, Arc::new(a), Arc::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) if *y != 0.0 && (x / y).is_finite() => {
                Expr::Const(x / y)
            }
            _ if b.is_const(1.0) => a,
            _ if a.is_const(0.0) => Expr::Const(0.0),
            _ => Expr::Binary(BinOp::Div, Arc::new(a), Arc::new(b)),
        }
    }

    pub fn pow(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) if x.powf(*y).is_finite() => Expr::Const(x.powf(*y)),
            _ if b.is_const(1.0) => a,
            _ if b.is_const(0.0) => Expr::Const(1.0),
            _ => Expr::Binary(BinOp::Pow, Arc::new(a), Arc::new(b)),
        }
    }

    pub fn neg(a: Expr) -> Expr {
        match &a {
            Expr::Const(x) => Expr::Const(-x),
            Expr::Unary(UnOp::Neg, inner) => inner.as_ref().clone(),
            _ => Expr::Unary(UnOp::Neg, Arc::new(a)),
        }
    }

    pub fn unary(op: UnOp, a: Expr) -> Expr {
        if op == UnOp::Neg {
            return Expr::neg(a);
        }
        if let Expr::Const(x) = &a {
            let v = match op {
                UnOp::Neg => unreachable!(),
                UnOp::Exp => x.exp(),
                UnOp::Log => x.ln(),
                UnOp::Sqrt => x.sqrt(),
                UnOp::Sin => x.sin(),
                UnOp::Cos => x.cos(),
            };
            if v.is_finite() {
                return Expr::Const(v);
            }
        }
        Expr::Unary(op, Arc::new(a))
    }

    pub fn exp(a: Expr) -> Expr {
        Expr::unary(UnOp::Exp, a)
    }

    pub fn log(a: Expr) -> Expr {
        Expr::unary(UnOp::Log, a)
    }

    pub fn sqrt(a: Expr) -> Expr {
        Expr::unary(UnOp::Sqrt, a)
    }

    /// Largest state index referenced, plus one (0 if none).
    pub fn state_arity(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Time => 0,
            Expr::Var(i) => i + 1,
            Expr::Unary(_, a) => a.state_arity(),
            Expr::Binary(_, a, b) => a.state_arity().max(b.state_arity()),
        }
    }

    /// Whether the expression references calendar time.
    pub fn uses_time(&self) -> bool {
        match self {
            Expr::Time => true,
            Expr::Const(_) | Expr::Var(_) => false,
            Expr::Unary(_, a) => a.uses_time(),
            Expr::Binary(_, a, b) => a.uses_time() || b.uses_time(),
        }
    }

    /// Evaluate at `(t, x)`. Domain violations (log of a nonpositive value,
    /// division by zero, fractional power of a negative base) are reported
    /// with the offending subexpression.
    pub fn eval(&self, t: f64, x: &[f64]) -> Result<f64, EvalError> {
        match self {
            Expr::Const(v) => Ok(*v),
            Expr::Time => Ok(t),
            Expr::Var(i) => x.get(*i).copied().ok_or_else(|| EvalError::Arity {
                at: self.to_string(),
                needed: *i + 1,
                given: x.len(),
            }),
            Expr::Unary(op, a) => {
                let v = a.eval(t, x)?;
                let r = match op {
                    UnOp::Neg => -v,
                    UnOp::Exp => v.exp(),
                    UnOp::Log => {
                        if v <= 0.0 {
                            return Err(EvalError::Domain {
                                at: self.to_string(),
                                what: format!("log of nonpositive value {v}"),
                            });
                        }
                        v.ln()
                    }
                    UnOp::Sqrt => {
                        if v < 0.0 {
                            return Err(EvalError::Domain {
                                at: self.to_string(),
                                what: format!("sqrt of negative value {v}"),
                            });
                        }
                        v.sqrt()
                    }
                    UnOp::Sin => v.sin(),
                    UnOp::Cos => v.cos(),
                };
                self.finite(r)
            }
            Expr::Binary(op, a, b) => {
                let va = a.eval(t, x)?;
                let vb = b.eval(t, x)?;
                let r = match op {
                    BinOp::Add => va + vb,
                    BinOp::Sub => va - vb,
                    BinOp::Mul => va * vb,
                    BinOp::Div => {
                        if vb == 0.0 {
                            return Err(EvalError::Domain {
                                at: self.to_string(),
                                what: "division by zero".into(),
                            });
                        }
                        va / vb
                    }
                    BinOp::Pow => {
                        let r = va.powf(vb);
                        if r.is_nan() && !va.is_nan() && !vb.is_nan() {
                            return Err(EvalError::Domain {
                                at: self.to_string(),
                                what: format!("{va} raised to non-integer power {vb}"),
                            });
                        }
                        r
                    }
                };
                self.finite(r)
            }
        }
    }

    fn finite(&self, v: f64) -> Result<f64, EvalError> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite {
                at: self.to_string(),
            })
        }
    }

    /// Exact partial derivative with respect to `var`.
    ///
    /// Constants are folded by the smart constructors but no further
    /// simplification is attempted; the contract is correctness of the
    /// evaluated derivative, not minimality of the tree.
    pub fn differentiate(&self, var: Variable) -> Expr {
        match self {
            Expr::Const(_) => Expr::zero(),
            Expr::Time => match var {
                Variable::Time => Expr::one(),
                _ => Expr::zero(),
            },
            Expr::Var(i) => match var {
                Variable::State(j) if *i == j => Expr::one(),
                _ => Expr::zero(),
            },
            Expr::Unary(op, a) => {
                let da = a.differentiate(var);
                let a = a.as_ref().clone();
                match op {
                    UnOp::Neg => Expr::neg(da),
                    UnOp::Exp => Expr::mul(Expr::exp(a), da),
                    UnOp::Log => Expr::div(da, a),
                    UnOp::Sqrt => Expr::div(da, Expr::mul(Expr::constant(2.0), Expr::sqrt(a))),
                    UnOp::Sin => Expr::mul(Expr::unary(UnOp::Cos, a), da),
                    UnOp::Cos => Expr::neg(Expr::mul(Expr::unary(UnOp::Sin, a), da)),
                }
            }
            Expr::Binary(op, a, b) => {
                let da = a.differentiate(var);
                let db = b.differentiate(var);
                let (a, b) = (a.as_ref().clone(), b.as_ref().clone());
                match op {
                    BinOp::Add => Expr::add(da, db),
                    BinOp::Sub => Expr::sub(da, db),
                    BinOp::Mul => {
                        Expr::add(Expr::mul(da, b.clone()), Expr::mul(a.clone(), db))
                    }
                    BinOp::Div => Expr::div(
                        Expr::sub(
                            Expr::mul(da, b.clone()),
                            Expr::mul(a.clone(), db),
                        ),
                        Expr::pow(b, Expr::constant(2.0)),
                    ),
                    BinOp::Pow => {
                        if let Expr::Const(c) = b {
                            // f^c -> c f^(c-1) f'
                            Expr::mul(
                                Expr::mul(
                                    Expr::constant(c),
                                    Expr::pow(a, Expr::constant(c - 1.0)),
                                ),
                                da,
                            )
                        } else {
                            // f^g -> f^g (g' log f + g f'/f)
                            Expr::mul(
                                Expr::pow(a.clone(), b.clone()),
                                Expr::add(
                                    Expr::mul(db, Expr::log(a.clone())),
                                    Expr::div(Expr::mul(b, da), a),
                                ),
                            )
                        }
                    }
                }
            }
        }
    }
}

// Printing uses explicit precedence levels so that parse(print(e)) == e.
// Levels: Add/Sub 1, Mul/Div 2, unary minus (and negative literals) 3, Pow 4,
// atoms 5. Pow binds tighter than unary minus, and its exponent re-enters at
// the unary level, matching the grammar.
fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Const(v) if *v < 0.0 => 3,
        Expr::Const(_) | Expr::Time | Expr::Var(_) => 5,
        Expr::Unary(UnOp::Neg, _) => 3,
        Expr::Unary(_, _) => 5,
        Expr::Binary(BinOp::Add, _, _) | Expr::Binary(BinOp::Sub, _, _) => 1,
        Expr::Binary(BinOp::Mul, _, _) | Expr::Binary(BinOp::Div, _, _) => 2,
        Expr::Binary(BinOp::Pow, _, _) => 4,
    }
}

fn write_prec(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
    let p = precedence(e);
    if p < min {
        write!(f, "(")?;
        write_expr(f, e)?;
        write!(f, ")")
    } else {
        write_expr(f, e)
    }
}

fn write_expr(f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
    match e {
        Expr::Const(v) => write!(f, "{v}"),
        Expr::Time => write!(f, "t"),
        Expr::Var(i) => write!(f, "x{}", i + 1),
        Expr::Unary(UnOp::Neg, a) => {
            write!(f, "-")?;
            write_prec(f, a, 3)
        }
        Expr::Unary(op, a) => {
            let name = match op {
                UnOp::Neg => unreachable!(),
                UnOp::Exp => "exp",
                UnOp::Log => "log",
                UnOp::Sqrt => "sqrt",
                UnOp::Sin => "sin",
                UnOp::Cos => "cos",
            };
            write!(f, "{name}(")?;
            write_expr(f, a)?;
            write!(f, ")")
        }
        Expr::Binary(op, a, b) => match op {
            BinOp::Add => {
                write_prec(f, a, 1)?;
                write!(f, " + ")?;
                write_prec(f, b, 2)
            }
            BinOp::Sub => {
                write_prec(f, a, 1)?;
                write!(f, " - ")?;
                write_prec(f, b, 2)
            }
            BinOp::Mul => {
                write_prec(f, a, 2)?;
                write!(f, "*")?;
                write_prec(f, b, 3)
            }
            BinOp::Div => {
                write_prec(f, a, 2)?;
                write!(f, "/")?;
                write_prec(f, b, 3)
            }
            BinOp::Pow => {
                write_prec(f, a, 5)?;
                write!(f, "^")?;
                write_prec(f, b, 3)
            }
        },
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self)
    }
}
