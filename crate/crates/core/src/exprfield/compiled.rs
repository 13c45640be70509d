//! Postfix form of an [`Expr`] evaluated with a flat stack. One pass yields the
//! value and the full gradient, which keeps per-step simulation cost low.

use super::ast::{DomainFault, Expr, Func};
use super::scalar::pow_parts;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Var(usize),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Pow(f64),
    Call(Func),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledExpr {
    ops: Vec<Op>,
    depth: usize,
    constant: Option<f64>,
}

fn emit(e: &Expr, ops: &mut Vec<Op>, depth: usize, max: &mut usize) {
    *max = (*max).max(depth + 1);
    match e {
        Expr::Const(c) => ops.push(Op::Const(*c)),
        Expr::Var(i) => ops.push(Op::Var(*i)),
        Expr::Neg(a) => {
            emit(a, ops, depth, max);
            ops.push(Op::Neg);
        }
        Expr::Pow(a, p) => {
            emit(a, ops, depth, max);
            ops.push(Op::Pow(*p));
        }
        Expr::Call(f, a) => {
            emit(a, ops, depth, max);
            ops.push(Op::Call(*f));
        }
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            emit(a, ops, depth, max);
            emit(b, ops, depth + 1, max);
            ops.push(match e {
                Expr::Add(..) => Op::Add,
                Expr::Sub(..) => Op::Sub,
                Expr::Mul(..) => Op::Mul,
                _ => Op::Div,
            });
        }
    }
}

/// Value and first derivative of a unary function at `a`.
#[inline]
fn unary(f: Func, a: f64, grad_zero: bool) -> Result<(f64, f64), DomainFault> {
    Ok(match f {
        Func::Sin => (a.sin(), a.cos()),
        Func::Cos => (a.cos(), -a.sin()),
        Func::Exp => {
            let e = a.exp();
            (e, e)
        }
        Func::Tanh => {
            let t = a.tanh();
            (t, 1.0 - t * t)
        }
        Func::Abs => (a.abs(), if a > 0.0 { 1.0 } else if a < 0.0 { -1.0 } else { 0.0 }),
        Func::Log => {
            if a > 0.0 {
                (a.ln(), 1.0 / a)
            } else {
                return Err(DomainFault::LogNonPositive);
            }
        }
        Func::Sqrt => {
            if a > 0.0 {
                let s = a.sqrt();
                (s, 0.5 / s)
            } else if a == 0.0 && grad_zero {
                (0.0, 0.0)
            } else {
                return Err(DomainFault::SqrtNegative);
            }
        }
    })
}

const MAX_DEPTH: usize = 16;

impl CompiledExpr {
    pub fn compile(e: &Expr) -> Self {
        let mut ops = Vec::new();
        let mut depth = 0;
        emit(e, &mut ops, 0, &mut depth);
        let constant = match e {
            Expr::Const(c) => Some(*c),
            _ => None,
        };
        Self { ops, depth, constant }
    }

    /// `Some(c)` when the expression is the literal constant `c`.
    pub fn as_constant(&self) -> Option<f64> {
        self.constant
    }

    /// Plain value.
    pub fn value(&self, x: &[f64]) -> Result<f64, DomainFault> {
        if self.depth > MAX_DEPTH {
            return self.value_slow(x);
        }
        self.run::<1>(x, &mut [])
    }

    /// Value and `∂_k` for `k < grad.len()`.
    pub fn value_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, DomainFault> {
        if self.depth <= MAX_DEPTH {
            match grad.len() {
                0 => return self.run::<1>(x, grad),
                1 => return self.run::<2>(x, grad),
                2 => return self.run::<3>(x, grad),
                3 => return self.run::<4>(x, grad),
                4 => return self.run::<5>(x, grad),
                _ => {}
            }
        }
        self.gradient_slow(x, grad)
    }

    fn value_slow(&self, x: &[f64]) -> Result<f64, DomainFault> {
        let mut g = [0.0; 0];
        self.gradient_slow(x, &mut g)
    }

    /// Heap-stack fallback for deep expressions or many variables.
    fn gradient_slow(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, DomainFault> {
        let s = grad.len() + 1;
        let mut stack = vec![0.0; self.depth.max(1) * s];
        let mut top = 0usize;
        for op in &self.ops {
            top = apply_dyn(op, x, &mut stack, top, s)?;
        }
        grad.copy_from_slice(&stack[1..s]);
        Ok(stack[0])
    }

    #[inline]
    fn run<const N: usize>(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, DomainFault> {
        let mut stack = [[0.0f64; N]; MAX_DEPTH];
        let mut top = 0usize;
        for op in &self.ops {
            match *op {
                Op::Const(c) => {
                    stack[top] = [0.0; N];
                    stack[top][0] = c;
                    top += 1;
                }
                Op::Var(i) => {
                    stack[top] = [0.0; N];
                    stack[top][0] = x[i];
                    if i + 1 < N {
                        stack[top][1 + i] = 1.0;
                    }
                    top += 1;
                }
                Op::Neg => {
                    for v in stack[top - 1].iter_mut() {
                        *v = -*v;
                    }
                }
                Op::Add | Op::Sub | Op::Mul | Op::Div => {
                    let b = stack[top - 1];
                    let a = &mut stack[top - 2];
                    match *op {
                        Op::Add => (0..N).for_each(|k| a[k] += b[k]),
                        Op::Sub => (0..N).for_each(|k| a[k] -= b[k]),
                        Op::Mul => {
                            let (ar, br) = (a[0], b[0]);
                            for k in 1..N {
                                a[k] = a[k] * br + ar * b[k];
                            }
                            a[0] = ar * br;
                        }
                        _ => {
                            let br = b[0];
                            if br == 0.0 {
                                return Err(DomainFault::DivisionByZero);
                            }
                            let q = a[0] / br;
                            for k in 1..N {
                                a[k] = (a[k] - q * b[k]) / br;
                            }
                            a[0] = q;
                        }
                    }
                    top -= 1;
                }
                Op::Pow(p) => {
                    let a = &mut stack[top - 1];
                    let (f0, f1) = pow_value_slope(a[0], p, N > 1)?;
                    a[0] = f0;
                    for k in 1..N {
                        a[k] *= f1;
                    }
                }
                Op::Call(f) => {
                    let a = &mut stack[top - 1];
                    let (f0, f1) = unary(f, a[0], a[1..].iter().all(|g| *g == 0.0))?;
                    a[0] = f0;
                    for k in 1..N {
                        a[k] *= f1;
                    }
                }
            }
            if !stack[top - 1][0].is_finite() {
                return Err(DomainFault::NonFinite);
            }
        }
        grad.copy_from_slice(&stack[0][1..]);
        Ok(stack[0][0])
    }
}

#[inline]
fn pow_value_slope(a: f64, p: f64, slope: bool) -> Result<(f64, f64), DomainFault> {
    if p == 2.0 {
        return Ok((a * a, 2.0 * a));
    }
    if !slope {
        return match pow_parts(a, p) {
            Some((f0, _, _)) => Ok((f0, 0.0)),
            None => Err(DomainFault::PowDomain),
        };
    }
    pow_parts(a, p).map(|(f0, f1, _)| (f0, f1)).ok_or(DomainFault::PowDomain)
}

fn apply_dyn(op: &Op, x: &[f64], stack: &mut [f64], top: usize, s: usize) -> Result<usize, DomainFault> {
    let top = match *op {
        Op::Const(c) => {
            let slot = &mut stack[top * s..(top + 1) * s];
            slot.fill(0.0);
            slot[0] = c;
            top + 1
        }
        Op::Var(i) => {
            let slot = &mut stack[top * s..(top + 1) * s];
            slot.fill(0.0);
            slot[0] = x[i];
            if i + 1 < s {
                slot[1 + i] = 1.0;
            }
            top + 1
        }
        Op::Neg => {
            stack[(top - 1) * s..top * s].iter_mut().for_each(|v| *v = -*v);
            top
        }
        Op::Add | Op::Sub | Op::Mul | Op::Div => {
            let (lo, hi) = stack.split_at_mut((top - 1) * s);
            let a = &mut lo[(top - 2) * s..];
            let b = &hi[..s];
            match *op {
                Op::Add => a.iter_mut().zip(b).for_each(|(a, b)| *a += b),
                Op::Sub => a.iter_mut().zip(b).for_each(|(a, b)| *a -= b),
                Op::Mul => {
                    let (ar, br) = (a[0], b[0]);
                    for k in 1..s {
                        a[k] = a[k] * br + ar * b[k];
                    }
                    a[0] = ar * br;
                }
                _ => {
                    let br = b[0];
                    if br == 0.0 {
                        return Err(DomainFault::DivisionByZero);
                    }
                    let q = a[0] / br;
                    for k in 1..s {
                        a[k] = (a[k] - q * b[k]) / br;
                    }
                    a[0] = q;
                }
            }
            top - 1
        }
        Op::Pow(p) => {
            let a = &mut stack[(top - 1) * s..top * s];
            let (f0, f1) = pow_value_slope(a[0], p, s > 1)?;
            a[0] = f0;
            a[1..].iter_mut().for_each(|g| *g *= f1);
            top
        }
        Op::Call(f) => {
            let a = &mut stack[(top - 1) * s..top * s];
            let (f0, f1) = unary(f, a[0], a[1..].iter().all(|g| *g == 0.0))?;
            a[0] = f0;
            a[1..].iter_mut().for_each(|g| *g *= f1);
            top
        }
    };
    if !stack[(top - 1) * s].is_finite() {
        return Err(DomainFault::NonFinite);
    }
    Ok(top)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprfield::{eval_gradient, parse_expression};

    #[test]
    fn agrees_with_tree_evaluation() {
        let srcs = [
            "x^2/2 + y",
            "(2 + sin(x))*exp(-y^2) - tanh(x*y)",
            "sqrt(1 + x^2)/log(2 + y^2) + abs(x - y)^3",
            "-x^-2 + cos(y)^0.5",
            "2",
        ];
        let x = [0.7, -0.3];
        for s in srcs {
            let e = parse_expression(s, 2).unwrap();
            let c = CompiledExpr::compile(&e);
            let mut g1 = [0.0; 2];
            let mut g2 = [0.0; 2];
                        let v1 = c.value_gradient(&x, &mut g1).unwrap();
            let v2 = eval_gradient(&e, &x, &mut g2).unwrap();
            assert!((v1 - v2).abs() < 1e-14, "{s}");
            assert!((g1[0] - g2[0]).abs() < 1e-13 && (g1[1] - g2[1]).abs() < 1e-13, "{s}");
            assert_eq!(c.value(&x).unwrap(), e.value(&x).unwrap(), "{s}");
        }
    }

    #[test]
    fn wide_and_deep_expressions_use_fallback() {
        let src = (1..=6).map(|i| format!("x{i}^2")).collect::<Vec<_>>().join(" + ");
        let e = parse_expression(&src, 6).unwrap();
        let c = CompiledExpr::compile(&e);
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut g = [0.0; 6];
        assert_eq!(c.value_gradient(&x, &mut g).unwrap(), 91.0);
        assert_eq!(g, [2.0, 4.0, 6.0, 8.0, 10.0, 12.0]);
        let deep = (0..20).fold("x".to_string(), |acc, _| format!("(1 + {acc})"));
        let deep = (0..20).fold(deep, |acc, i| format!("{i} + {acc}"));
        let e = parse_expression(&deep, 1).unwrap();
        let c = CompiledExpr::compile(&e);
        assert_eq!(c.value(&[0.5]).unwrap(), e.value(&[0.5]).unwrap());
    }

    #[test]
    fn domain_faults() {
                let c = CompiledExpr::compile(&parse_expression("log(x)", 1).unwrap());
        assert_eq!(c.value(&[0.0]), Err(DomainFault::LogNonPositive));
        let c = CompiledExpr::compile(&parse_expression("1/(x - 1)", 1).unwrap());
        assert_eq!(c.value(&[1.0]), Err(DomainFault::DivisionByZero));
        let c = CompiledExpr::compile(&parse_expression("exp(x)", 1).unwrap());
        assert_eq!(c.value(&[1e4]), Err(DomainFault::NonFinite));
        let c = CompiledExpr::compile(&parse_expression("sqrt(x^2)", 1).unwrap());
        assert!(c.value(&[0.0]).is_ok());
        let mut g = [0.0];
        assert_eq!(c.value_gradient(&[0.0], &mut g), Ok(0.0));
        let c = CompiledExpr::compile(&parse_expression("sqrt(x)", 1).unwrap());
        assert_eq!(c.value_gradient(&[0.0], &mut g), Err(DomainFault::SqrtNegative));
    }
}
