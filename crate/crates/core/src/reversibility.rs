//! Algebraic reversibility test for `dX = −M∇V dt + √2 σ ∘_λ dW`.
//!
//! The λ-SDE is reversible for a Gibbs measure exactly when its generator
//! drift equals the drift of the self-adjoint generator with diffusion `M`.
//! That difference reduces to the residual
//!
//! ```text
//! R_λ = (2λ − 1) D·(σσᵀ) − 2λ σ (D·σᵀ)
//! ```
//!
//! where `D·` is the row covariant divergence (Riemannian-volume Gibbs
//! measure `e^{−V}√ω_M dx`) or the Euclidean row divergence (flat measure
//! `e^{−V} dx`). Both the residual and the generator comparison are exposed
//! so they can be checked against each other.

use std::fmt;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exprfield::FieldSet;
use crate::geometry::{
    cov_div_diffusion, euclid_div_diffusion, geometry_at, sigma_cov_div_sigma_t, sigma_euclid_div_sigma_t,
    GeometryPoint,
};

/// Evaluation point `λ ∈ [0, 1]` of the stochastic integral.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct NoiseConvention(f64);

impl NoiseConvention {
    pub const ITO: NoiseConvention = NoiseConvention(0.0);
    pub const STRATONOVICH: NoiseConvention = NoiseConvention(0.5);
    pub const KLIMONTOVICH: NoiseConvention = NoiseConvention(1.0);

    pub fn new(lambda: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&lambda) {
            Ok(NoiseConvention(lambda))
        } else {
            Err(Error::InvalidArgument(format!("convention λ must lie in [0, 1], got {lambda}")))
        }
    }

    pub fn lambda(self) -> f64 {
        self.0
    }

    pub fn name(self) -> Option<&'static str> {
        match self.0 {
            l if l == 0.0 => Some("ito"),
            l if l == 0.5 => Some("stratonovich"),
            l if l == 1.0 => Some("klimontovich"),
            _ => None,
        }
    }
}

impl fmt::Display for NoiseConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name() {
            Some(n) => write!(f, "{} ({n})", self.0),
            None => write!(f, "{}", self.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MeasureMode {
    /// `e^{−βV} dx`.
    Flat,
    /// `e^{−βV} √ω_M dx`.
    Riemannian,
}

impl MeasureMode {
    /// Residual variant whose vanishing matches reversibility for this measure.
    pub fn matched_variant(self) -> DivergenceVariant {
        match self {
            MeasureMode::Flat => DivergenceVariant::Euclidean,
            MeasureMode::Riemannian => DivergenceVariant::Covariant,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MeasureMode::Flat => "flat",
            MeasureMode::Riemannian => "riemannian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsSpec {
    pub mode: MeasureMode,
    pub beta: f64,
}

impl GibbsSpec {
    pub fn flat() -> Self {
        GibbsSpec {
            mode: MeasureMode::Flat,
            beta: 1.0,
        }
    }

    pub fn riemannian() -> Self {
        GibbsSpec {
            mode: MeasureMode::Riemannian,
            beta: 1.0,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("β must be positive, got {beta}")));
        }
        self.beta = beta;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DivergenceVariant {
    Covariant,
    Euclidean,
}

impl DivergenceVariant {
    pub fn other(self) -> Self {
        match self {
            DivergenceVariant::Covariant => DivergenceVariant::Euclidean,
            DivergenceVariant::Euclidean => DivergenceVariant::Covariant,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DivergenceVariant::Covariant => "covariant",
            DivergenceVariant::Euclidean => "euclidean",
        }
    }
}

/// `(2λ − 1) D·M − 2λ σ D·σᵀ` from precomputed geometry.
pub fn lambda_residual_at(geom: &GeometryPoint, lambda: NoiseConvention, variant: DivergenceVariant) -> DVector<f64> {
    let l = lambda.lambda();
    let (div_m, sigma_div) = match variant {
        DivergenceVariant::Covariant => (cov_div_diffusion(geom), sigma_cov_div_sigma_t(geom)),
        DivergenceVariant::Euclidean => (euclid_div_diffusion(geom), sigma_euclid_div_sigma_t(geom)),
    };
    div_m * (2.0 * l - 1.0) - sigma_div * (2.0 * l)
}

pub fn lambda_residual(
    fields: &FieldSet,
    lambda: NoiseConvention,
    x: &[f64],
    variant: DivergenceVariant,
) -> Result<DVector<f64>> {
    Ok(lambda_residual_at(&geometry_at(fields, x)?, lambda, variant))
}

/// Noise-induced drift `∇·(σσᵀ) − σ ∇·σᵀ` shared by every convention change.
pub fn noise_induced_drift_at(geom: &GeometryPoint) -> DVector<f64> {
    euclid_div_diffusion(geom) - sigma_euclid_div_sigma_t(geom)
}

fn gibbs_drift(fields: &FieldSet, geom: &GeometryPoint, beta: f64, x: &[f64]) -> Result<DVector<f64>> {
    let grad = fields.potential_gradient(x)?;
    Ok(-(geom.diffusion_matrix() * grad) * beta)
}

/// First-order coefficient of the λ-SDE generator in Euclidean coordinates:
/// `−M∇V + 2λ (∇·M − σ∇·σᵀ)`. The second-order coefficient is `M`.
pub fn sde_generator_drift(fields: &FieldSet, lambda: NoiseConvention, x: &[f64]) -> Result<DVector<f64>> {
    let geom = geometry_at(fields, x)?;
    sde_generator_drift_at(fields, &geom, lambda)
}

fn sde_generator_drift_at(fields: &FieldSet, geom: &GeometryPoint, lambda: NoiseConvention) -> Result<DVector<f64>> {
    Ok(gibbs_drift(fields, geom, 1.0, &geom.x)? + noise_induced_drift_at(geom) * (2.0 * lambda.lambda()))
}

/// Drift of the generator with diffusion `M` that is self-adjoint in `L²(G)`.
pub fn reversible_generator_drift(fields: &FieldSet, gibbs: &GibbsSpec, x: &[f64]) -> Result<DVector<f64>> {
    let geom = geometry_at(fields, x)?;
    reversible_generator_drift_at(fields, &geom, gibbs)
}

fn reversible_generator_drift_at(fields: &FieldSet, geom: &GeometryPoint, gibbs: &GibbsSpec) -> Result<DVector<f64>> {
    let divergence = match gibbs.mode {
        MeasureMode::Flat => euclid_div_diffusion(geom),
        MeasureMode::Riemannian => cov_div_diffusion(geom),
    };
    Ok(gibbs_drift(fields, geom, gibbs.beta, &geom.x)? + divergence)
}

/// `sde_generator_drift − reversible_generator_drift`.
pub fn generator_gap(fields: &FieldSet, lambda: NoiseConvention, gibbs: &GibbsSpec, x: &[f64]) -> Result<DVector<f64>> {
    let geom = geometry_at(fields, x)?;
    generator_gap_at(fields, &geom, lambda, gibbs)
}

pub fn generator_gap_at(
    fields: &FieldSet,
    geom: &GeometryPoint,
    lambda: NoiseConvention,
    gibbs: &GibbsSpec,
) -> Result<DVector<f64>> {
    Ok(sde_generator_drift_at(fields, geom, lambda)? - reversible_generator_drift_at(fields, geom, gibbs)?)
}

/// Drift of the pathwise-equivalent SDE in convention `to`:
/// `B + 2(λ − γ)(∇·M − σ∇·σᵀ)`.
pub fn drift_convert(
    drift: &DVector<f64>,
    fields: &FieldSet,
    from: NoiseConvention,
    to: NoiseConvention,
    x: &[f64],
) -> Result<DVector<f64>> {
    if from == to {
        return Ok(drift.clone());
    }
    let geom = geometry_at(fields, x)?;
    Ok(drift + noise_induced_drift_at(&geom) * (2.0 * (from.lambda() - to.lambda())))
}

/// Axis-aligned box sampled on a tensor grid with inclusive endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points: Vec<usize>,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, points: Vec<usize>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != points.len() || lower.is_empty() {
            return Err(Error::Dimension("grid bounds and resolution must share one nonzero dimension".into()));
        }
        if points.iter().any(|&n| n == 0) {
            return Err(Error::InvalidArgument("grid resolution must be positive".into()));
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(a <= b)) {
            return Err(Error::InvalidArgument("grid lower bound exceeds upper bound".into()));
        }
        Ok(Self { lower, upper, points })
    }

    pub fn uniform(lower: f64, upper: f64, points: usize, dim: usize) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim], vec![points; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn axis(&self, k: usize) -> Vec<f64> {
        let n = self.points[k];
        if n == 1 {
            return vec![0.5 * (self.lower[k] + self.upper[k])];
        }
        let h = (self.upper[k] - self.lower[k]) / (n - 1) as f64;
        (0..n).map(|i| self.lower[k] + h * i as f64).collect()
    }

    /// Grid points in lexicographic order (first coordinate slowest).
    pub fn iter_points(&self) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.dim()).map(|k| self.axis(k)).collect();
        let mut out = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; self.dim()];
        for _ in 0..self.len() {
            out.push(idx.iter().enumerate().map(|(k, &i)| axes[k][i]).collect());
            for k in (0..self.dim()).rev() {
                idx[k] += 1;
                if idx[k] < self.points[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        out
    }
}

/// Aggregated outcome of [`classify`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReversibilityVerdict {
    pub lambda: NoiseConvention,
    pub measure: MeasureMode,
    pub variant: DivergenceVariant,
    /// `max_x ‖R_λ(x)‖∞` for the matched variant.
    pub max_residual: f64,
    pub argmax_point: Vec<f64>,
    /// Same maximum for the other divergence variant, reported for reference.
    pub alternate_max_residual: f64,
    pub alternate_argmax_point: Vec<f64>,
    pub generator_gap_max: f64,
    pub generator_gap_argmax: Vec<f64>,
    pub n_points: usize,
    pub tolerance: f64,
    pub reversible: bool,
}

impl ReversibilityVerdict {
    /// `key = value` lines, one per field.
    pub fn to_record(&self) -> String {
        let pt = |p: &[f64]| {
            p.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
        };
        let mut s = String::new();
        s.push_str(&format!("reversible = {}\n", self.reversible));
        s.push_str(&format!("lambda = {}\n", self.lambda.lambda()));
        s.push_str(&format!("measure = {}\n", self.measure.name()));
        s.push_str(&format!("variant = {}\n", self.variant.name()));
        s.push_str(&format!("max_residual = {:e}\n", self.max_residual));
        s.push_str(&format!("argmax_point = {}\n", pt(&self.argmax_point)));
        s.push_str(&format!("alternate_variant = {}\n", self.variant.other().name()));
        s.push_str(&format!("alternate_max_residual = {:e}\n", self.alternate_max_residual));
        s.push_str(&format!("alternate_argmax_point = {}\n", pt(&self.alternate_argmax_point)));
        s.push_str(&format!("generator_gap_max = {:e}\n", self.generator_gap_max));
        s.push_str(&format!("generator_gap_argmax = {}\n", pt(&self.generator_gap_argmax)));
        s.push_str(&format!("n_points = {}\n", self.n_points));
        s.push_str(&format!("tolerance = {:e}\n", self.tolerance));
        s
    }
}

struct PointScores {
    matched: f64,
    alternate: f64,
    gap: f64,
}

fn track(best: &mut (f64, usize), value: f64, index: usize) {
    // Strict comparison keeps the lexicographically first point on ties.
    if value > best.0 || (best.0.is_nan() && !value.is_nan()) {
        *best = (value, index);
    }
}

/// Evaluate the residual (variant matched to the measure) and the generator
/// gap over every grid point; reversible iff both maxima are below `tol`.
pub fn classify(
    fields: &FieldSet,
    lambda: NoiseConvention,
    gibbs: &GibbsSpec,
    grid: &GridSpec,
    tol: f64,
) -> Result<ReversibilityVerdict> {
    if grid.dim() != fields.dim {
        return Err(Error::Dimension(format!(
            "grid has dimension {} but the fields have {}",
            grid.dim(),
            fields.dim
        )));
    }
    let points = grid.iter_points();
    if points.is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    let variant = gibbs.mode.matched_variant();
    let scores: Vec<Result<PointScores>> = points
        .par_iter()
        .map(|x| {
            let eval = || -> Result<PointScores> {
                let geom = geometry_at(fields, x)?;
                Ok(PointScores {
                    matched: lambda_residual_at(&geom, lambda, variant).amax(),
                    alternate: lambda_residual_at(&geom, lambda, variant.other()).amax(),
                    gap: generator_gap_at(fields, &geom, lambda, gibbs)?.amax(),
                })
            };
            eval().map_err(|e| e.at_point(x))
        })
        .collect();
    let mut matched = (f64::NEG_INFINITY, 0);
    let mut alternate = (f64::NEG_INFINITY, 0);
    let mut gap = (f64::NEG_INFINITY, 0);
    for (i, s) in scores.into_iter().enumerate() {
        let s = s?;
        track(&mut matched, s.matched, i);
        track(&mut alternate, s.alternate, i);
        track(&mut gap, s.gap, i);
    }
    Ok(ReversibilityVerdict {
        lambda,
        measure: gibbs.mode,
        variant,
        max_residual: matched.0,
        argmax_point: points[matched.1].clone(),
        alternate_max_residual: alternate.0,
        alternate_argmax_point: points[alternate.1].clone(),
        generator_gap_max: gap.0,
        generator_gap_argmax: points[gap.1].clone(),
        n_points: points.len(),
        tolerance: tol,
        reversible: matched.0 < tol && gap.0 < tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprfield::catalog;

    const K: NoiseConvention = NoiseConvention::KLIMONTOVICH;
    const S: NoiseConvention = NoiseConvention::STRATONOVICH;
    const I: NoiseConvention = NoiseConvention::ITO;

    #[test]
    fn residual_examples_on_sinusoid() {
        let f = catalog::f1();
        let e = lambda_residual(&f, K, &[0.0], DivergenceVariant::Euclidean).unwrap();
        assert!(e[0].abs() < 1e-14);
        let c = lambda_residual(&f, K, &[0.0], DivergenceVariant::Covariant).unwrap();
        assert!((c[0] - 2.0).abs() < 1e-14);
        let c = lambda_residual(&f, S, &[0.0], DivergenceVariant::Covariant).unwrap();
        assert!(c[0].abs() < 1e-14);
    }

    #[test]
    fn constant_sigma_residual_vanishes() {
        let f = catalog::constant_2d();
        for l in [0.0, 0.3, 1.0] {
            for v in [DivergenceVariant::Covariant, DivergenceVariant::Euclidean] {
                let r = lambda_residual(&f, NoiseConvention::new(l).unwrap(), &[0.5, -0.5], v).unwrap();
                assert_eq!(r.amax(), 0.0);
            }
        }
    }

    #[test]
    fn diagonal_klimontovich_euclidean_vanishes() {
        let r = lambda_residual(&catalog::f2(), K, &[0.0, 0.0], DivergenceVariant::Euclidean).unwrap();
        assert!(r.amax() < 1e-15);
    }

    #[test]
    fn generator_drifts_on_sinusoid() {
        let f = catalog::f1();
        assert!((sde_generator_drift(&f, K, &[0.0]).unwrap()[0] - 4.0).abs() < 1e-14);
        assert!(sde_generator_drift(&f, I, &[0.0]).unwrap()[0].abs() < 1e-14);
        assert!((sde_generator_drift(&f, S, &[0.0]).unwrap()[0] - 2.0).abs() < 1e-14);
        let flat = GibbsSpec::flat();
        let riem = GibbsSpec::riemannian();
        assert!((reversible_generator_drift(&f, &flat, &[0.0]).unwrap()[0] - 4.0).abs() < 1e-14);
        assert!((reversible_generator_drift(&f, &riem, &[0.0]).unwrap()[0] - 2.0).abs() < 1e-14);
        assert!(generator_gap(&f, K, &flat, &[0.0]).unwrap()[0].abs() < 1e-14);
        assert!(generator_gap(&f, S, &riem, &[0.0]).unwrap()[0].abs() < 1e-14);
        assert!((generator_gap(&f, I, &flat, &[0.0]).unwrap()[0] + 4.0).abs() < 1e-14);
    }

    #[test]
    fn constant_sigma_reversible_drift_is_gradient_flow() {
        let f = FieldSet::parse_diagonal("x^2/2", &["1.5"]).unwrap();
        for g in [GibbsSpec::flat(), GibbsSpec::riemannian()] {
            let d = reversible_generator_drift(&f, &g, &[1.0]).unwrap();
            assert!((d[0] + 2.25).abs() < 1e-15);
        }
    }

    #[test]
    fn stratonovich_to_ito_correction() {
        let f = catalog::f1();
        let b = DVector::zeros(1);
        let out = drift_convert(&b, &f, S, I, &[0.0]).unwrap();
        assert!((out[0] - 2.0).abs() < 1e-14);
        let same = drift_convert(&DVector::from_vec(vec![0.3]), &f, S, S, &[0.0]).unwrap();
        assert_eq!(same[0], 0.3);
    }

    #[test]
    fn invalid_convention_rejected() {
        assert!(NoiseConvention::new(1.5).is_err());
        assert!(NoiseConvention::new(-0.1).is_err());
    }

    #[test]
    fn classify_one_dimensional_examples() {
        let f = catalog::f1();
        let grid = GridSpec::new(vec![-3.0], vec![3.0], vec![200]).unwrap();
        let v = classify(&f, K, &GibbsSpec::flat(), &grid, 1e-6).unwrap();
        assert!(v.reversible, "{v:?}");
        let v = classify(&f, I, &GibbsSpec::flat(), &grid, 1e-6).unwrap();
        assert!(!v.reversible);
        // Itô flat residual is −∇·M = −2σσ′.
        let oracle = grid
            .iter_points()
            .iter()
            .map(|p| (2.0 * (2.0 + p[0].sin()) * p[0].cos()).abs())
            .fold(0.0, f64::max);
        assert!((v.max_residual - oracle).abs() < 1e-12);
    }

    #[test]
    fn classify_position_dependent_frame_fails() {
        let grid = GridSpec::uniform(-2.0, 2.0, 15, 2).unwrap();
        let v = classify(&catalog::twisted(), K, &GibbsSpec::flat(), &grid, 1e-6).unwrap();
        assert!(!v.reversible);
        assert!(v.max_residual > 1e-2);
    }

    #[test]
    fn classify_reports_failing_point() {
        let f = FieldSet::parse_diagonal("x^2/2", &["x"]).unwrap();
        let grid = GridSpec::new(vec![-1.0], vec![1.0], vec![3]).unwrap();
        let err = classify(&f, K, &GibbsSpec::flat(), &grid, 1e-6).unwrap_err();
        match err {
            Error::AtPoint { point, .. } => assert_eq!(point, vec![0.0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn grid_is_lexicographic() {
        let g = GridSpec::new(vec![0.0, 0.0], vec![1.0, 2.0], vec![2, 3]).unwrap();
        let pts = g.iter_points();
        assert_eq!(pts[0], vec![0.0, 0.0]);
        assert_eq!(pts[1], vec![0.0, 1.0]);
        assert_eq!(pts[3], vec![1.0, 0.0]);
        assert_eq!(pts.len(), 6);
    }
}
