//! Empirical checks of simulated ensembles against their Gibbs targets.

mod balance;
mod density;
mod distance;
mod study;

pub use balance::{detailed_balance_ensemble, detailed_balance_paths, BalanceOptions, BalanceReport, BinSpec};
pub use density::{gibbs_density, EmpiricalDensity, GibbsDensity, BOUNDARY_WARN_RATIO};
pub use distance::{ks_distance, ks_distance_binned, ks_two_sample, wasserstein1, wasserstein1_two_sample};
pub use study::{averaging_convergence_study, ConvergenceRow, ConvergenceStudy, StudyOptions};

/// Default burn-in: discard `t < min(10, T/5)`.
pub fn default_burn_in(t_end: f64) -> f64 {
    (t_end / 5.0).min(10.0)
}
