//! λ-convention SDE simulation through Itô conversion and Euler–Maruyama,
//! slow-fast assembly and tabulated effective dynamics.

mod integrate;
mod slowfast;
mod system;
mod tabulated;

pub use integrate::{
    brownian_increments, coarsen_increments, euler_maruyama, euler_maruyama_increments, simulate_ensemble,
    stochastic_heun, trajectory_rng, EnsembleOptions, EnsembleResult, InitialState, Trajectory, DIVERGENCE_NORM,
    MAX_REJECTED_FRACTION,
};
pub(crate) use integrate::in_pool;
pub use slowfast::{SlowFastSystem, STIFFNESS_CONSTANT};
pub use system::{noise_induced_drift, DriftSpec, ItoCoefficients, SdeSystem, SystemWorkspace};
pub use tabulated::{CubicSpline, TabulatedSde1d};
