//! Scalar field expressions: parsing, evaluation with exact derivatives and
//! assembly of volatility matrices.

mod ast;
pub mod catalog;
mod compiled;
mod field;
mod parser;
mod scalar;

pub use ast::{DomainFault, Expr, Func};
pub use compiled::CompiledExpr;
pub use field::{
    assemble_rotated_diagonal, check_nondegenerate, default_fd_step, eval_gradient, eval_with_derivatives, fd_derivatives,
    orthogonality_defect, Derivatives, DerivativeMode, ExprMatrix, FieldSet, MatrixField, MatrixJet,
    RotatedDiagonalSpec, FD_HESSIAN_MIN_STEP, MIN_ABS_DET, MIN_EIGENVALUE, ORTHOGONALITY_TOL,
};
pub use parser::{parse_expression, ParseError, ParseErrorKind};
pub use scalar::{Dual, HyperDual, Scalar};
