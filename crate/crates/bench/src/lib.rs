//! Shared fixtures for the criterion benchmarks.

use revsde_core::exprfield::{catalog, FieldSet};

/// Sample points spread over `[-2, 2]^d`, deterministic.
pub fn probe_points(dim: usize, count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| {
            (0..dim)
                .map(|k| {
                    let t = ((i * (2 * k + 3) + 7 * k) % 97) as f64 / 96.0;
                    -2.0 + 4.0 * t
                })
                .collect()
        })
        .collect()
}

pub fn fields() -> Vec<(&'static str, FieldSet)> {
    catalog::reference_fields()
}
