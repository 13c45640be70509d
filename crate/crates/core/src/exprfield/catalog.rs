//! Reference fields used throughout the tests, benches and examples.
//!
//! | name | d | V | σ |
//! |------|---|---|---|
//! | F1 | 1 | `x²/2` | `2 + sin x` |
//! | F2 | 2 | `(x² + y²)/2` | `diag(2 + sin x, 1)` |
//! | F3 | 2 | `(x² + y² + xy)/2` | `I` |
//! | F4 | 2 | `(x² + y²)/2 + xy/4` | `U diag(2 + sin x, 1.5 + cos(y)/2) Uᵀ`, `U` = rotation by π/4 |
//! | F5 | 2 | seeded polynomial-trig potential | seeded polynomial-trig σ |
//! | twisted | 2 | `(x² + y²)/2` | `R(x/2) diag(2, 1) R(x/2)ᵀ` (position-dependent frame) |

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::field::{assemble_rotated_diagonal, FieldSet, RotatedDiagonalSpec};
use super::parser::parse_expression;

pub fn f1() -> FieldSet {
    FieldSet::parse_diagonal("x^2/2", &["2 + sin(x)"]).expect("F1 is well formed")
}

pub fn f2() -> FieldSet {
    FieldSet::parse_diagonal("(x^2 + y^2)/2", &["2 + sin(x)", "1"]).expect("F2 is well formed")
}

pub fn f3() -> FieldSet {
    FieldSet::parse_diagonal("(x^2 + y^2 + x*y)/2", &["1", "1"]).expect("F3 is well formed")
}

pub fn f4_spec() -> RotatedDiagonalSpec {
    RotatedDiagonalSpec::new(
        RotatedDiagonalSpec::rotation_2d(std::f64::consts::FRAC_PI_4),
        vec![
            parse_expression("2 + sin(x)", 2).unwrap(),
            parse_expression("1.5 + cos(y)/2", 2).unwrap(),
        ],
        2,
    )
    .expect("π/4 rotation is orthogonal")
}

pub fn f4() -> FieldSet {
    let sigma = assemble_rotated_diagonal(&f4_spec()).expect("F4 assembles");
    FieldSet::new(parse_expression("(x^2 + y^2)/2 + x*y/4", 2).unwrap(), sigma).unwrap()
}

/// Source text of the seeded polynomial-trig field: `(V, σ rows)`.
pub fn f5_sources(seed: u64) -> (String, Vec<Vec<String>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = |lo: f64, hi: f64| {
        let v: f64 = rng.random_range(lo..hi);
        format!("{:.3}", v)
    };
    let v = format!(
        "(x^2 + y^2)/2 + {}*x*y + {}*sin({}*x) + {}*cos({}*y)",
        c(-0.2, 0.2),
        c(0.0, 0.3),
        c(0.5, 1.5),
        c(0.0, 0.3),
        c(0.5, 1.5)
    );
    let mut rows = vec![vec![String::new(); 2]; 2];
    for (i, row) in rows.iter_mut().enumerate() {
        for (j, entry) in row.iter_mut().enumerate() {
            *entry = if i == j {
                format!(
                    "1.5 + {}*sin({}*x + {}*y) + {}*tanh(x*y)",
                    c(0.1, 0.3),
                    c(-1.0, 1.0),
                    c(-1.0, 1.0),
                    c(0.0, 0.1)
                )
            } else {
                format!(
                    "{}*cos({}*x) + {}*y^2/(1 + y^2) + {}*x",
                    c(-0.15, 0.15),
                    c(0.5, 1.5),
                    c(-0.1, 0.1),
                    c(-0.03, 0.03)
                )
            };
        }
    }
    (v, rows)
}

pub fn f5() -> FieldSet {
    let (v, rows) = f5_sources(20_251_015);
    FieldSet::parse(&v, &rows).expect("F5 is well formed")
}

/// Rotated-diagonal volatility whose frame turns with `x`; violates the
/// Klimontovich condition.
pub fn twisted() -> FieldSet {
    let rows = vec![
        vec!["2*cos(x/2)^2 + sin(x/2)^2".to_string(), "cos(x/2)*sin(x/2)".to_string()],
        vec!["cos(x/2)*sin(x/2)".to_string(), "2*sin(x/2)^2 + cos(x/2)^2".to_string()],
    ];
    FieldSet::parse("(x^2 + y^2)/2", &rows).expect("twisted field is well formed")
}

/// Constant `σ = 0.7·U diag(1, 2) Uᵀ` in two dimensions.
pub fn constant_2d() -> FieldSet {
    let u = RotatedDiagonalSpec::rotation_2d(0.3);
    let s = &u * DMatrix::from_row_slice(2, 2, &[0.7, 0.0, 0.0, 1.4]) * u.transpose();
    let rows = (0..2)
        .map(|i| (0..2).map(|j| format!("{:?}", s[(i, j)])).collect())
        .collect::<Vec<Vec<String>>>();
    FieldSet::parse("(x^2 + y^2)/2", &rows).unwrap()
}

/// The five reference fields used by the identity suites, with names.
pub fn reference_fields() -> Vec<(&'static str, FieldSet)> {
    vec![("F1", f1()), ("F2", f2()), ("F3", f3()), ("F4", f4()), ("F5", f5())]
}
