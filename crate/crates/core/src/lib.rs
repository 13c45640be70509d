//! Reversibility of multiplicative-noise SDEs under the family of
//! stochastic-integral conventions `λ ∈ [0, 1]` (Itô, Stratonovich,
//! Klimontovich), together with simulation, slow-fast averaging and
//! empirical diagnostics.

pub mod averaging;
pub mod diagnostics;
pub mod error;
pub mod exprfield;
pub mod geometry;
pub mod quadrature;
pub mod reversibility;
pub mod sde;

pub use error::{Error, Result};
