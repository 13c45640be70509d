//! Riemannian structure induced by a volatility field.
//!
//! With `M = σσᵀ` the metric is `g = M⁻¹`, the volume density is
//! `ω_M = det g`, and the Levi-Civita connection has Christoffel symbols
//! `Γ^k_ij = ½ M^{kl} (∂_i g_jl + ∂_j g_il − ∂_l g_ij)`.
//! Derivatives of `g` come from `∂g = −g (∂M) g`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exprfield::{FieldSet, MatrixField, MatrixJet};

/// Geometric data of `(ℝ^d, g)` at one point.
#[derive(Debug, Clone)]
pub struct GeometryPoint {
    pub x: Vec<f64>,
    pub sigma: MatrixJet,
    /// `M = σσᵀ` and its partials.
    pub diffusion: MatrixJet,
    pub metric: DMatrix<f64>,
    pub metric_partials: Vec<DMatrix<f64>>,
    pub omega: f64,
    pub sqrt_omega: f64,
    /// `christoffel[k][(i, j)] = Γ^k_ij`.
    pub christoffel: Vec<DMatrix<f64>>,
    /// `contracted[j] = Σ_i Γ^i_ij`.
    pub contracted: DVector<f64>,
    /// `½ ∂_j log ω_M` from Jacobi's formula, independent of `Γ`.
    pub half_grad_log_omega: DVector<f64>,
}

impl GeometryPoint {
    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn diffusion_matrix(&self) -> &DMatrix<f64> {
        &self.diffusion.value
    }

    /// `Γ^k_ij`.
    pub fn gamma(&self, k: usize, i: usize, j: usize) -> f64 {
        self.christoffel[k][(i, j)]
    }

    /// Largest `|∂_l M^ij + Γ^i_lk M^kj + Γ^j_lk M^ik|` over all indices.
    pub fn metric_compatibility_defect(&self) -> f64 {
        let d = self.dim();
        let m = &self.diffusion.value;
        let mut worst: f64 = 0.0;
        for l in 0..d {
            for i in 0..d {
                for j in 0..d {
                    let mut v = self.diffusion.partials[l][(i, j)];
                    for k in 0..d {
                        v += self.gamma(i, l, k) * m[(k, j)] + self.gamma(j, l, k) * m[(i, k)];
                    }
                    worst = worst.max(v.abs());
                }
            }
        }
        worst
    }

    /// Largest `|Γ^k_ij − Γ^k_ji|`.
    pub fn torsion_defect(&self) -> f64 {
        self.christoffel
            .iter()
            .map(|g| (g - g.transpose()).amax())
            .fold(0.0, f64::max)
    }

    /// Harmonic-coordinate contraction `Γ^j_ik M^ik` for each `j`.
    pub fn harmonic_contraction(&self) -> DVector<f64> {
        let m = &self.diffusion.value;
        DVector::from_iterator(
            self.dim(),
            self.christoffel.iter().map(|gk| gk.component_mul(m).sum()),
        )
    }
}

/// Build the metric package at `x`.
pub fn geometry_at(fields: &FieldSet, x: &[f64]) -> Result<GeometryPoint> {
    let sigma = fields.sigma_jet(x)?;
    geometry_from_sigma(sigma, x)
}

/// Build the metric package from a volatility jet.
pub fn geometry_from_sigma(sigma: MatrixJet, x: &[f64]) -> Result<GeometryPoint> {
    let d = sigma.dim();
    if sigma.value.nrows() != d || sigma.value.ncols() != d {
        return Err(Error::Dimension(format!(
            "volatility is {}x{} in dimension {d}",
            sigma.value.nrows(),
            sigma.value.ncols()
        )));
    }
    crate::exprfield::check_nondegenerate(&sigma.value, x)?;
    let diffusion = sigma.outer_square();
    let m = &diffusion.value;
    let metric = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Conditioning {
            point: x.to_vec(),
            min_eig: m.symmetric_eigenvalues().min(),
        })?
        .inverse();
    let omega = metric.clone().lu().determinant();
    if !(omega > 0.0) {
        return Err(Error::Conditioning {
            point: x.to_vec(),
            min_eig: m.symmetric_eigenvalues().min(),
        });
    }
    let metric_partials: Vec<DMatrix<f64>> = diffusion
        .partials
        .iter()
        .map(|dm| -(&metric * dm * &metric))
        .collect();

    let mut christoffel = vec![DMatrix::zeros(d, d); d];
    for (k, gk) in christoffel.iter_mut().enumerate() {
        for i in 0..d {
            for j in i..d {
                let mut acc = 0.0;
                for l in 0..d {
                    let bracket = metric_partials[i][(j, l)] + metric_partials[j][(i, l)]
                        - metric_partials[l][(i, j)];
                    acc += m[(k, l)] * bracket;
                }
                gk[(i, j)] = 0.5 * acc;
                gk[(j, i)] = 0.5 * acc;
            }
        }
    }
    let contracted = DVector::from_iterator(
        d,
        (0..d).map(|j| (0..d).map(|i| christoffel[i][(i, j)]).sum()),
    );
    // Jacobi: ∂_j log det g = tr(g⁻¹ ∂_j g) = tr(M ∂_j g).
    let half_grad_log_omega = DVector::from_iterator(
        d,
        metric_partials.iter().map(|dg| 0.5 * (m * dg).trace()),
    );
    Ok(GeometryPoint {
        x: x.to_vec(),
        sigma,
        diffusion,
        metric,
        metric_partials,
        omega,
        sqrt_omega: omega.sqrt(),
        christoffel,
        contracted,
        half_grad_log_omega,
    })
}

/// Euclidean row divergence `(∇·A)_j = ∂_i A^{ji}`.
pub fn row_euclid_div(a: &MatrixJet) -> DVector<f64> {
    let rows = a.value.nrows();
    DVector::from_iterator(
        rows,
        (0..rows).map(|j| a.partials.iter().enumerate().map(|(i, p)| p[(j, i)]).sum()),
    )
}

/// Row covariant divergence `(∇c·A)_j = ∂_i A^{ji} + Γ^i_ik A^{jk}`.
pub fn row_cov_div(geom: &GeometryPoint, a: &MatrixJet) -> DVector<f64> {
    row_euclid_div(a) + &a.value * &geom.contracted
}

/// Row covariant divergence of an arbitrary matrix field.
pub fn row_cov_div_matrix(fields: &FieldSet, a: &dyn MatrixField, x: &[f64]) -> Result<DVector<f64>> {
    let geom = geometry_at(fields, x)?;
    Ok(row_cov_div(&geom, &a.jet(x)?))
}

/// Euclidean row divergence of an arbitrary matrix field.
pub fn row_euclid_div_matrix(a: &dyn MatrixField, x: &[f64]) -> Result<DVector<f64>> {
    Ok(row_euclid_div(&a.jet(x)?))
}

/// `∇c·M` where `M = σσᵀ`.
pub fn cov_div_diffusion(geom: &GeometryPoint) -> DVector<f64> {
    row_cov_div(geom, &geom.diffusion)
}

/// `σ (∇c·σᵀ)`.
pub fn sigma_cov_div_sigma_t(geom: &GeometryPoint) -> DVector<f64> {
    &geom.sigma.value * row_cov_div(geom, &geom.sigma.transpose())
}

/// `∇·M`.
pub fn euclid_div_diffusion(geom: &GeometryPoint) -> DVector<f64> {
    row_euclid_div(&geom.diffusion)
}

/// `σ (∇·σᵀ)`.
pub fn sigma_euclid_div_sigma_t(geom: &GeometryPoint) -> DVector<f64> {
    &geom.sigma.value * row_euclid_div(&geom.sigma.transpose())
}

/// `[∇c·M − σ∇c·σᵀ] − [∇·M − σ∇·σᵀ]`; vanishes identically because the
/// Christoffel contributions of the two covariant terms cancel.
pub fn cancellation_gap_at(geom: &GeometryPoint) -> DVector<f64> {
    let covariant = cov_div_diffusion(geom) - sigma_cov_div_sigma_t(geom);
    let euclidean = euclid_div_diffusion(geom) - sigma_euclid_div_sigma_t(geom);
    covariant - euclidean
}

pub fn cancellation_gap(fields: &FieldSet, x: &[f64]) -> Result<DVector<f64>> {
    Ok(cancellation_gap_at(&geometry_at(fields, x)?))
}

/// Covariant Itô correction `(1/√ω_M) ∂_α(√ω_M M^{αμ})`: the divergence of
/// `M` taken against the Riemannian volume. Computed from `∂M` and Jacobi's
/// formula for `∂ log ω_M`, without Christoffel symbols.
pub fn graham_correction_at(geom: &GeometryPoint) -> DVector<f64> {
    let d = geom.dim();
    let m = &geom.diffusion.value;
    let inv_m = &geom.metric;
    // ∂_α log √ω = −½ tr(M⁻¹ ∂_α M).
    let dlog_sqrt_omega: Vec<f64> = geom
        .diffusion
        .partials
        .iter()
        .map(|dm| -0.5 * (inv_m * dm).trace())
        .collect();
    DVector::from_iterator(
        d,
        (0..d).map(|mu| {
            (0..d)
                .map(|alpha| geom.diffusion.partials[alpha][(alpha, mu)] + m[(alpha, mu)] * dlog_sqrt_omega[alpha])
                .sum()
        }),
    )
}

pub fn graham_correction(fields: &FieldSet, x: &[f64]) -> Result<DVector<f64>> {
    Ok(graham_correction_at(&geometry_at(fields, x)?))
}

/// First-order coefficient of the Laplace–Beltrami operator,
/// `−M^{kj} Γ^i_kj` for each `i`.
pub fn laplace_beltrami_drift_at(geom: &GeometryPoint) -> DVector<f64> {
    -geom.harmonic_contraction()
}

pub fn laplace_beltrami_drift(fields: &FieldSet, x: &[f64]) -> Result<DVector<f64>> {
    Ok(laplace_beltrami_drift_at(&geometry_at(fields, x)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprfield::catalog;

    #[test]
    fn one_dimensional_sinusoid() {
        let g = geometry_at(&catalog::f1(), &[0.0]).unwrap();
        assert!((g.diffusion.value[(0, 0)] - 4.0).abs() < 1e-15);
        assert!((g.metric[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((g.sqrt_omega - 0.5).abs() < 1e-15);
        // Γ = −σ′/σ with σ = 2, σ′ = 1.
        assert!((g.gamma(0, 0, 0) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_sigma_has_flat_connection() {
        let g = geometry_at(&catalog::constant_2d(), &[0.4, -1.3]).unwrap();
        assert!(g.christoffel.iter().all(|c| c.amax() == 0.0));
        assert_eq!(g.contracted.amax(), 0.0);
    }

    #[test]
    fn diagonal_two_dimensional() {
        let g = geometry_at(&catalog::f2(), &[0.0, 0.0]).unwrap();
        // −∂_j log(σ₁σ₂) = (−σ₁′/σ₁, 0) = (−0.5, 0); det g = 1/(σ₁²σ₂²) = 1/(4·1).
        assert!((g.contracted[0] + 0.5).abs() < 1e-15);
        assert!(g.contracted[1].abs() < 1e-15);
        assert!((g.omega - 0.25).abs() < 1e-12);
    }

    #[test]
    fn covariant_divergence_examples() {
        let f = catalog::f1();
        let g = geometry_at(&f, &[0.0]).unwrap();
        assert!((cov_div_diffusion(&g)[0] - 2.0).abs() < 1e-14);
        assert!(row_cov_div(&g, &g.sigma.transpose())[0].abs() < 1e-14);
        assert!((euclid_div_diffusion(&g)[0] - 4.0).abs() < 1e-14);
        let f2 = catalog::f2();
        let e = row_euclid_div_matrix(&f2.volatility, &[0.0, 0.0]).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-15 && e[1] == 0.0);
    }

    #[test]
    fn graham_and_laplace_beltrami_on_sinusoid() {
        let f = catalog::f1();
        assert!((graham_correction(&f, &[0.0]).unwrap()[0] - 2.0).abs() < 1e-14);
        assert!((laplace_beltrami_drift(&f, &[0.0]).unwrap()[0] - 2.0).abs() < 1e-14);
        assert!(cancellation_gap(&f, &[0.0]).unwrap()[0].abs() < 1e-10);
    }

    #[test]
    fn constant_sigma_corrections_vanish_exactly() {
        let f = catalog::constant_2d();
        let x = [0.2, 0.9];
        assert_eq!(graham_correction(&f, &x).unwrap().amax(), 0.0);
        assert_eq!(laplace_beltrami_drift(&f, &x).unwrap().amax(), 0.0);
        assert_eq!(cancellation_gap(&f, &x).unwrap().amax(), 0.0);
    }

    #[test]
    fn singular_sigma_fails_fast() {
        let f = FieldSet::parse_diagonal("x^2/2", &["x"]).unwrap();
        assert!(geometry_at(&f, &[0.0]).is_err());
    }
}
