use std::fmt;

use super::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Tanh,
    Sqrt,
    Abs,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "tanh" => Func::Tanh,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Tanh => "tanh",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }
}

/// Reason an evaluation left the domain of a sub-expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainFault {
    LogNonPositive,
    SqrtNegative,
    DivisionByZero,
    PowDomain,
    NonFinite,
}

impl fmt::Display for DomainFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainFault::LogNonPositive => "log of a non-positive value",
            DomainFault::SqrtNegative => "sqrt of a negative value",
            DomainFault::DivisionByZero => "division by zero",
            DomainFault::PowDomain => "power outside its real domain",
            DomainFault::NonFinite => "non-finite intermediate value",
        })
    }
}

/// Expression tree over variables `0..dim`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// Power with a constant exponent.
    Pow(Box<Expr>, f64),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn is_zero_constant(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.max_var(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                match (a.max_var(), b.max_var()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                }
            }
        }
    }

    /// Evaluate with any [`Scalar`] type.
    pub fn eval<S: Scalar>(&self, x: &[S]) -> Result<S, DomainFault> {
        let v = match self {
            Expr::Const(c) => S::constant(*c),
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.eval(x)?,
            Expr::Add(a, b) => a.eval(x)? + b.eval(x)?,
            Expr::Sub(a, b) => a.eval(x)? - b.eval(x)?,
            Expr::Mul(a, b) => a.eval(x)? * b.eval(x)?,
            Expr::Div(a, b) => a
                .eval(x)?
                .checked_div(b.eval(x)?)
                .ok_or(DomainFault::DivisionByZero)?,
            Expr::Pow(a, p) => a.eval(x)?.powf(*p).ok_or(DomainFault::PowDomain)?,
            Expr::Call(f, a) => {
                let a = a.eval(x)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Tanh => a.tanh(),
                    Func::Abs => a.abs(),
                    Func::Log => a.ln().ok_or(DomainFault::LogNonPositive)?,
                    Func::Sqrt => a.sqrt().ok_or(DomainFault::SqrtNegative)?,
                }
            }
        };
        if v.re().is_finite() {
            Ok(v)
        } else {
            Err(DomainFault::NonFinite)
        }
    }

    /// Plain value at `x`.
    pub fn value(&self, x: &[f64]) -> Result<f64, DomainFault> {
        self.eval(x)
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(..) => 3,
            Expr::Pow(..) => 4,
            Expr::Const(_) | Expr::Var(_) | Expr::Call(..) => 5,
        }
    }

    fn fmt_child(&self, f: &mut fmt::Formatter<'_>, child: &Expr, min_prec: u8) -> fmt::Result {
        if child.precedence() < min_prec || matches!(child, Expr::Const(c) if *c < 0.0 || c.is_sign_negative()) {
            write!(f, "({child})")
        } else {
            write!(f, "{child}")
        }
    }
}

fn fmt_number(v: f64) -> String {
    // Debug output of f64 is the shortest representation that round-trips.
    format!("{v:?}")
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => f.write_str(&fmt_number(*c)),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(a) => {
                f.write_str("-")?;
                // `-` binds looser than `^`, so `-(x^2)` prints as `-x^2`.
                self.fmt_child(f, a, 3)
            }
            Expr::Add(a, b) => {
                self.fmt_child(f, a, 1)?;
                f.write_str(" + ")?;
                self.fmt_child(f, b, 2)
            }
            Expr::Sub(a, b) => {
                self.fmt_child(f, a, 1)?;
                f.write_str(" - ")?;
                self.fmt_child(f, b, 2)
            }
            Expr::Mul(a, b) => {
                self.fmt_child(f, a, 2)?;
                f.write_str("*")?;
                self.fmt_child(f, b, 3)
            }
            Expr::Div(a, b) => {
                self.fmt_child(f, a, 2)?;
                f.write_str("/")?;
                self.fmt_child(f, b, 3)
            }
            Expr::Pow(a, p) => {
                self.fmt_child(f, a, 5)?;
                write!(f, "^{}", fmt_number(*p))
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}
