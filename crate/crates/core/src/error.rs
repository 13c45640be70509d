use thiserror::Error;

use crate::exprfield::{DomainFault, ParseError};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("domain error: {fault} at x = {point:?}")]
    Domain { fault: DomainFault, point: Vec<f64> },

    #[error("volatility is singular at x = {point:?} (|det σ| = {det:e})")]
    SingularVolatility { point: Vec<f64>, det: f64 },

    #[error("diffusion matrix is ill-conditioned at x = {point:?} (smallest eigenvalue {min_eig:e})")]
    Conditioning { point: Vec<f64>, min_eig: f64 },

    #[error("matrix is not orthogonal (‖UᵀU − I‖∞ = {deviation:e})")]
    NotOrthogonal { deviation: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("potential is not confining in the fast variable at x = {point:?}")]
    NotConfining { point: Vec<f64> },

    #[error("trajectory diverged at step {step} (x = {point:?})")]
    Diverged { step: usize, point: Vec<f64> },

    #[error("too many rejected trajectories: {rejected} of {total}")]
    Rejection { rejected: usize, total: usize },

    #[error("time step {dt:e} exceeds the fast-block stiffness limit {limit:e}")]
    Stiffness { dt: f64, limit: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("at grid point {point:?}: {source}")]
    AtPoint {
        point: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(fault: DomainFault, x: &[f64]) -> Self {
        Error::Domain {
            fault,
            point: x.to_vec(),
        }
    }

    pub(crate) fn at_point(self, x: &[f64]) -> Self {
        Error::AtPoint {
            point: x.to_vec(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
