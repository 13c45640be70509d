use nalgebra::{DMatrix, DVector};

use super::ast::Expr;
use super::parser::parse_expression;
use super::scalar::{Dual, HyperDual};
use crate::error::{Error, Result};

/// Value, gradient and Hessian of a scalar field at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// Exact value, gradient and Hessian via hyper-dual arithmetic.
///
/// Each pair `i <= j` is one hyper-dual pass seeded with `e1 = e_i`,
/// `e2 = e_j`; the Hessian is filled symmetrically from those passes.
pub fn eval_with_derivatives(ast: &Expr, x: &[f64]) -> Result<Derivatives> {
    let d = x.len();
    let mut gradient = DVector::zeros(d);
    let mut hessian = DMatrix::zeros(d, d);
    let mut value = ast.value(x).map_err(|f| Error::domain(f, x))?;
    let mut buf: Vec<HyperDual> = x.iter().map(|&v| HyperDual::new(v, 0.0, 0.0, 0.0)).collect();
    for i in 0..d {
        for j in i..d {
            buf[i].e1 = 1.0;
            buf[j].e2 = 1.0;
            let r = ast.eval(&buf).map_err(|f| Error::domain(f, x))?;
            buf[i].e1 = 0.0;
            buf[j].e2 = 0.0;
            if i == j {
                gradient[i] = r.e1;
                value = r.re;
            }
            hessian[(i, j)] = r.e12;
            hessian[(j, i)] = r.e12;
        }
    }
    Ok(Derivatives {
        value,
        gradient,
        hessian,
    })
}

/// Gradient only, one dual pass per coordinate.
pub fn eval_gradient(ast: &Expr, x: &[f64], out: &mut [f64]) -> Result<f64> {
    let mut buf: Vec<Dual> = x.iter().map(|&v| Dual::new(v, 0.0)).collect();
    let mut value = 0.0;
    if x.is_empty() {
        return ast.value(x).map_err(|f| Error::domain(f, x));
    }
    for i in 0..x.len() {
        buf[i].eps = 1.0;
        let r = ast.eval(&buf).map_err(|f| Error::domain(f, x))?;
        buf[i].eps = 0.0;
        out[i] = r.eps;
        value = r.re;
    }
    Ok(value)
}

/// Default per-coordinate finite-difference step, `1e-5 · max(1, |x_i|)`.
pub fn default_fd_step(xi: f64) -> f64 {
    1e-5 * xi.abs().max(1.0)
}

/// Smallest step used by the second-difference stencil; below this the
/// roundoff term `ε/h²` dominates in double precision.
pub const FD_HESSIAN_MIN_STEP: f64 = 1e-4;

/// Central-difference value, gradient and Hessian with step `h`.
///
/// The gradient uses step `h` directly; second differences use
/// `max(h, FD_HESSIAN_MIN_STEP)` (scaled like `h` is).
pub fn fd_derivatives(ast: &Expr, x: &[f64], h: f64) -> Result<Derivatives> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
    }
    let steps: Vec<f64> = x.iter().map(|_| h).collect();
    fd_derivatives_with_steps(ast, x, &steps)
}

pub(crate) fn fd_derivatives_with_steps(ast: &Expr, x: &[f64], steps: &[f64]) -> Result<Derivatives> {
    let d = x.len();
    let f = |p: &[f64]| ast.value(p).map_err(|fault| Error::domain(fault, p));
    let value = f(x)?;
    let mut gradient = DVector::zeros(d);
    let mut hessian = DMatrix::zeros(d, d);
    let mut p = x.to_vec();
    for i in 0..d {
        let h = steps[i];
        p[i] = x[i] + h;
        let fp = f(&p)?;
        p[i] = x[i] - h;
        let fm = f(&p)?;
        p[i] = x[i];
        gradient[i] = (fp - fm) / (2.0 * h);
    }
    let hs: Vec<f64> = steps.iter().map(|&h| h.max(FD_HESSIAN_MIN_STEP)).collect();
    for i in 0..d {
        let hi = hs[i];
        p[i] = x[i] + hi;
        let fp = f(&p)?;
        p[i] = x[i] - hi;
        let fm = f(&p)?;
        p[i] = x[i];
        hessian[(i, i)] = (fp - 2.0 * value + fm) / (hi * hi);
        for j in (i + 1)..d {
            let hj = hs[j];
            let mut corner = |si: f64, sj: f64| {
                p[i] = x[i] + si * hi;
                p[j] = x[j] + sj * hj;
                let r = f(&p);
                p[i] = x[i];
                p[j] = x[j];
                r
            };
            let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)? + corner(-1.0, -1.0)?)
                / (4.0 * hi * hj);
            hessian[(i, j)] = v;
            hessian[(j, i)] = v;
        }
    }
    Ok(Derivatives {
        value,
        gradient,
        hessian,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DerivativeMode {
    Analytic,
    /// Central differences; `None` uses [`default_fd_step`] per coordinate.
    FiniteDifference(Option<f64>),
}

/// A matrix-valued field together with its first partial derivatives at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixJet {
    pub value: DMatrix<f64>,
    /// `partials[k]` is `∂_k` of the field.
    pub partials: Vec<DMatrix<f64>>,
}

impl MatrixJet {
    pub fn dim(&self) -> usize {
        self.partials.len()
    }

    pub fn transpose(&self) -> MatrixJet {
        MatrixJet {
            value: self.value.transpose(),
            partials: self.partials.iter().map(|p| p.transpose()).collect(),
        }
    }

    /// Jet of `A·Aᵀ` by the product rule.
    pub fn outer_square(&self) -> MatrixJet {
        let vt = self.value.transpose();
        MatrixJet {
            value: &self.value * &vt,
            partials: self
                .partials
                .iter()
                .map(|p| p * &vt + &self.value * p.transpose())
                .collect(),
        }
    }

    pub fn constant(value: DMatrix<f64>, dim: usize) -> MatrixJet {
        let (r, c) = value.shape();
        MatrixJet {
            value,
            partials: vec![DMatrix::zeros(r, c); dim],
        }
    }
}

/// Anything that can report a matrix value and its first derivatives at a point.
pub trait MatrixField {
    fn dim(&self) -> usize;
    fn jet(&self, x: &[f64]) -> Result<MatrixJet>;
}

/// A square matrix of scalar expressions, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<Expr>,
    pub dim: usize,
    pub mode: DerivativeMode,
}

impl ExprMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<Expr>, dim: usize) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                entries.len()
            )));
        }
        for e in &entries {
            if let Some(v) = e.max_var() {
                if v >= dim {
                    return Err(Error::Dimension(format!(
                        "entry references x{} in dimension {dim}",
                        v + 1
                    )));
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            entries,
            dim,
            mode: DerivativeMode::Analytic,
        })
    }

    pub fn parse(rows: &[Vec<String>], dim: usize) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged matrix rows".into()));
        }
        let mut entries = Vec::with_capacity(r * c);
        for row in rows {
            for src in row {
                entries.push(parse_expression(src, dim)?);
            }
        }
        Self::new(r, c, entries, dim)
    }

    pub fn diagonal(diag: Vec<Expr>, dim: usize) -> Result<Self> {
        let n = diag.len();
        let mut entries = vec![Expr::Const(0.0); n * n];
        for (i, e) in diag.into_iter().enumerate() {
            entries[i * n + i] = e;
        }
        Self::new(n, n, entries, dim)
    }

    pub fn with_mode(mut self, mode: DerivativeMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn entry(&self, i: usize, j: usize) -> &Expr {
        &self.entries[i * self.cols + j]
    }

    pub fn value(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let e = self.entry(i, j);
                if !e.is_zero_constant() {
                    out[(i, j)] = e.value(x).map_err(|f| Error::domain(f, x))?;
                }
            }
        }
        Ok(out)
    }

    /// Row-major values written into `out`.
    pub fn value_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        for (o, e) in out.iter_mut().zip(&self.entries) {
            *o = match e {
                Expr::Const(c) => *c,
                e => e.value(x).map_err(|f| Error::domain(f, x))?,
            };
        }
        Ok(())
    }

    /// Row-major value and `∂_k` buffers (`partials[k*rows*cols + i*cols + j]`)
    /// without allocating.
    pub fn jet_into(&self, x: &[f64], value: &mut [f64], partials: &mut [f64], scratch: &mut Vec<Dual>) -> Result<()> {
        let n = self.rows * self.cols;
        let d = self.dim;
        match self.mode {
            DerivativeMode::Analytic => {
                scratch.clear();
                scratch.extend(x.iter().map(|&v| Dual::new(v, 0.0)));
                for idx in 0..n {
                    let e = &self.entries[idx];
                    if e.is_zero_constant() {
                        value[idx] = 0.0;
                        for k in 0..d {
                            partials[k * n + idx] = 0.0;
                        }
                        continue;
                    }
                    if let Expr::Const(c) = e {
                        value[idx] = *c;
                        for k in 0..d {
                            partials[k * n + idx] = 0.0;
                        }
                        continue;
                    }
                    for k in 0..d {
                        scratch[k].eps = 1.0;
                        let r = e.eval(scratch).map_err(|f| Error::domain(f, x));
                        scratch[k].eps = 0.0;
                        let r = r?;
                        partials[k * n + idx] = r.eps;
                        value[idx] = r.re;
                    }
                    if d == 0 {
                        value[idx] = e.value(x).map_err(|f| Error::domain(f, x))?;
                    }
                }
            }
            DerivativeMode::FiniteDifference(h) => {
                let mut p = x.to_vec();
                for idx in 0..n {
                    let e = &self.entries[idx];
                    value[idx] = e.value(x).map_err(|f| Error::domain(f, x))?;
                    for k in 0..d {
                        let hk = h.unwrap_or_else(|| default_fd_step(x[k]));
                        p[k] = x[k] + hk;
                        let fp = e.value(&p).map_err(|f| Error::domain(f, &p));
                        p[k] = x[k] - hk;
                        let fm = e.value(&p).map_err(|f| Error::domain(f, &p));
                        p[k] = x[k];
                        partials[k * n + idx] = (fp? - fm?) / (2.0 * hk);
                    }
                }
            }
        }
        Ok(())
    }
}

impl MatrixField for ExprMatrix {
    fn dim(&self) -> usize {
        self.dim
    }

    fn jet(&self, x: &[f64]) -> Result<MatrixJet> {
        let n = self.rows * self.cols;
        let mut value = vec![0.0; n];
        let mut partials = vec![0.0; n * self.dim];
        self.jet_into(x, &mut value, &mut partials, &mut Vec::new())?;
        Ok(MatrixJet {
            value: DMatrix::from_row_slice(self.rows, self.cols, &value),
            partials: (0..self.dim)
                .map(|k| DMatrix::from_row_slice(self.rows, self.cols, &partials[k * n..(k + 1) * n]))
                .collect(),
        })
    }
}

/// Minimum `|det σ|` accepted at a probe point.
pub const MIN_ABS_DET: f64 = 1e-12;
/// Minimum eigenvalue of `σσᵀ` accepted at a probe point.
pub const MIN_EIGENVALUE: f64 = 1e-10;

/// Potential `V` and volatility `σ` over `ℝ^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSet {
    pub dim: usize,
    pub potential: Expr,
    pub volatility: ExprMatrix,
    pub mode: DerivativeMode,
}

impl FieldSet {
    pub fn new(potential: Expr, volatility: ExprMatrix) -> Result<Self> {
        let dim = volatility.dim;
        if volatility.rows != dim || volatility.cols != dim {
            return Err(Error::Dimension(format!(
                "volatility must be {dim}x{dim}, got {}x{}",
                volatility.rows, volatility.cols
            )));
        }
        if let Some(v) = potential.max_var() {
            if v >= dim {
                return Err(Error::Dimension(format!("potential references x{} in dimension {dim}", v + 1)));
            }
        }
        Ok(Self {
            dim,
            potential,
            volatility,
            mode: DerivativeMode::Analytic,
        })
    }

    /// Parse a potential and a full volatility matrix from source text.
    pub fn parse(potential: &str, volatility: &[Vec<String>]) -> Result<Self> {
        let dim = volatility.len();
        let v = parse_expression(potential, dim)?;
        Self::new(v, ExprMatrix::parse(volatility, dim)?)
    }

    /// Parse a potential and a diagonal volatility.
    pub fn parse_diagonal(potential: &str, diagonal: &[&str]) -> Result<Self> {
        let dim = diagonal.len();
        let v = parse_expression(potential, dim)?;
        let diag = diagonal
            .iter()
            .map(|s| parse_expression(s, dim))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(v, ExprMatrix::diagonal(diag, dim)?)
    }

    pub fn with_mode(mut self, mode: DerivativeMode) -> Self {
        self.mode = mode;
        self.volatility.mode = mode;
        self
    }

    pub fn potential_value(&self, x: &[f64]) -> Result<f64> {
        self.potential.value(x).map_err(|f| Error::domain(f, x))
    }

    /// `∇V(x)` written into `out`; returns `V(x)`.
    pub fn potential_gradient_into(&self, x: &[f64], out: &mut [f64]) -> Result<f64> {
        match self.mode {
            DerivativeMode::Analytic => eval_gradient(&self.potential, x, out),
            DerivativeMode::FiniteDifference(h) => {
                let steps: Vec<f64> = x.iter().map(|&xi| h.unwrap_or_else(|| default_fd_step(xi))).collect();
                let mut p = x.to_vec();
                for i in 0..x.len() {
                    p[i] = x[i] + steps[i];
                    let fp = self.potential_value(&p)?;
                    p[i] = x[i] - steps[i];
                    let fm = self.potential_value(&p)?;
                    p[i] = x[i];
                    out[i] = (fp - fm) / (2.0 * steps[i]);
                }
                self.potential_value(x)
            }
        }
    }

    pub fn potential_gradient(&self, x: &[f64]) -> Result<DVector<f64>> {
        let mut g = DVector::zeros(self.dim);
        self.potential_gradient_into(x, g.as_mut_slice())?;
        Ok(g)
    }

    pub fn potential_derivatives(&self, x: &[f64]) -> Result<Derivatives> {
        match self.mode {
            DerivativeMode::Analytic => eval_with_derivatives(&self.potential, x),
            DerivativeMode::FiniteDifference(h) => {
                let steps: Vec<f64> = x.iter().map(|&xi| h.unwrap_or_else(|| default_fd_step(xi))).collect();
                fd_derivatives_with_steps(&self.potential, x, &steps)
            }
        }
    }

    pub fn sigma(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.volatility.value(x)
    }

    pub fn sigma_jet(&self, x: &[f64]) -> Result<MatrixJet> {
        self.volatility.jet(x)
    }

    /// Check invertibility of `σ` and positive definiteness of `σσᵀ` at `x`.
    pub fn check_nondegenerate(&self, x: &[f64]) -> Result<()> {
        let s = self.sigma(x)?;
        check_nondegenerate(&s, x)
    }

    pub fn check_probe_points<'a>(&self, points: impl IntoIterator<Item = &'a [f64]>) -> Result<()> {
        points.into_iter().try_for_each(|p| self.check_nondegenerate(p))
    }
}

pub fn check_nondegenerate(sigma: &DMatrix<f64>, x: &[f64]) -> Result<()> {
    let det = sigma.determinant();
    if !(det.abs() > MIN_ABS_DET) {
        return Err(Error::SingularVolatility { point: x.to_vec(), det });
    }
    let m = sigma * sigma.transpose();
    let min_eig = m.symmetric_eigenvalues().min();
    if !(min_eig > MIN_EIGENVALUE) {
        return Err(Error::Conditioning { point: x.to_vec(), min_eig });
    }
    Ok(())
}

/// Maximum deviation `‖UᵀU − I‖∞` tolerated for a rotation.
pub const ORTHOGONALITY_TOL: f64 = 1e-12;

pub fn orthogonality_defect(u: &DMatrix<f64>) -> f64 {
    let n = u.ncols();
    (u.transpose() * u - DMatrix::<f64>::identity(n, n)).amax()
}

/// `σ(x) = U Λ(x) Uᵀ` with constant orthogonal `U` and diagonal `Λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatedDiagonalSpec {
    pub rotation: DMatrix<f64>,
    pub diagonal: Vec<Expr>,
    pub dim: usize,
}

impl RotatedDiagonalSpec {
    pub fn new(rotation: DMatrix<f64>, diagonal: Vec<Expr>, dim: usize) -> Result<Self> {
        if !rotation.is_square() || rotation.nrows() != diagonal.len() {
            return Err(Error::Dimension(format!(
                "rotation is {}x{} but there are {} diagonal entries",
                rotation.nrows(),
                rotation.ncols(),
                diagonal.len()
            )));
        }
        let deviation = orthogonality_defect(&rotation);
        if !(deviation < ORTHOGONALITY_TOL) {
            return Err(Error::NotOrthogonal { deviation });
        }
        Ok(Self {
            rotation,
            diagonal,
            dim,
        })
    }

    /// Planar rotation by `angle`.
    pub fn rotation_2d(angle: f64) -> DMatrix<f64> {
        let (s, c) = angle.sin_cos();
        DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
    }
}

/// Build the expression matrix `Σ_k U_ik ℓ_k U_jk`.
pub fn assemble_rotated_diagonal(spec: &RotatedDiagonalSpec) -> Result<ExprMatrix> {
    let u = &spec.rotation;
    let n = u.nrows();
    let deviation = orthogonality_defect(u);
    if !(deviation < ORTHOGONALITY_TOL) {
        return Err(Error::NotOrthogonal { deviation });
    }
    let mut entries = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let mut acc: Option<Expr> = None;
            for k in 0..n {
                let coef = u[(i, k)] * u[(j, k)];
                if coef == 0.0 {
                    continue;
                }
                let term = if coef == 1.0 {
                    spec.diagonal[k].clone()
                } else {
                    Expr::Mul(Box::new(Expr::Const(coef)), Box::new(spec.diagonal[k].clone()))
                };
                acc = Some(match acc {
                    None => term,
                    Some(a) => Expr::Add(Box::new(a), Box::new(term)),
                });
            }
            entries.push(acc.unwrap_or(Expr::Const(0.0)));
        }
    }
    ExprMatrix::new(n, n, entries, spec.dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(src: &str, d: usize) -> Expr {
        parse_expression(src, d).unwrap()
    }

    #[test]
    fn derivatives_of_sinusoid_at_zero() {
        let r = eval_with_derivatives(&p("2 + sin(x)", 1), &[0.0]).unwrap();
        assert_eq!(r.value, 2.0);
        assert_eq!(r.gradient[0], 1.0);
        assert_eq!(r.hessian[(0, 0)], 0.0);
    }

    #[test]
    fn derivatives_of_coupled_quadratic() {
        let r = eval_with_derivatives(&p("(x^2 + y^2 + x*y)/2", 2), &[1.0, 1.0]).unwrap();
        assert_eq!(r.value, 1.5);
        assert_eq!(r.gradient.as_slice(), &[1.5, 1.5]);
        assert_eq!(r.hessian, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
    }

    #[test]
    fn log_of_negative_is_domain_error() {
        let err = eval_with_derivatives(&p("log(x)", 1), &[-1.0]).unwrap_err();
        assert!(matches!(err, Error::Domain { .. }));
    }

    #[test]
    fn division_by_zero_and_sqrt_negative() {
        assert!(eval_with_derivatives(&p("1/x", 1), &[0.0]).is_err());
        assert!(eval_with_derivatives(&p("sqrt(x)", 1), &[-0.5]).is_err());
    }

    #[test]
    fn fd_examples() {
        let r = fd_derivatives(&p("2 + sin(x)", 1), &[0.0], 1e-5).unwrap();
        assert!((r.gradient[0] - 1.0).abs() < 1e-8);
        let r = fd_derivatives(&p("5", 1), &[3.7], 0.1).unwrap();
        assert_eq!(r.gradient[0], 0.0);
        let r = fd_derivatives(&p("x^3", 1), &[2.0], 1e-4).unwrap();
        assert!((r.gradient[0] - 12.0).abs() < 1e-6);
        assert!(fd_derivatives(&p("x", 1), &[0.0], 0.0).is_err());
        assert!(fd_derivatives(&p("log(x)", 1), &[1e-7], 1e-5).is_err());
    }

    #[test]
    fn rotated_diagonal_identity_rotation() {
        let spec = RotatedDiagonalSpec::new(
            DMatrix::identity(2, 2),
            vec![p("2 + sin(x)", 2), p("1", 2)],
            2,
        )
        .unwrap();
        let m = assemble_rotated_diagonal(&spec).unwrap();
        let s = m.value(&[0.3, -1.0]).unwrap();
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[2.0 + 0.3f64.sin(), 0.0, 0.0, 1.0]));
    }

    #[test]
    fn rotated_diagonal_isotropic_is_identity() {
        let u = RotatedDiagonalSpec::rotation_2d(std::f64::consts::FRAC_PI_4);
        let spec = RotatedDiagonalSpec::new(u, vec![p("1", 2), p("1", 2)], 2).unwrap();
        let s = assemble_rotated_diagonal(&spec).unwrap().value(&[0.1, 0.2]).unwrap();
        assert!((s - DMatrix::<f64>::identity(2, 2)).amax() < 1e-15);
    }

    #[test]
    fn rotated_diagonal_anisotropic_matches_matrix_product() {
        let u = RotatedDiagonalSpec::rotation_2d(std::f64::consts::FRAC_PI_4);
        let spec = RotatedDiagonalSpec::new(u.clone(), vec![p("2", 2), p("1", 2)], 2).unwrap();
        let s = assemble_rotated_diagonal(&spec).unwrap().value(&[4.0, -2.0]).unwrap();
        // Oracle: explicit product U diag(2,1) Uᵀ.
        let oracle = &u * DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0])) * u.transpose();
        assert!((&s - &oracle).amax() < 1e-15);
        let expected = DMatrix::from_row_slice(2, 2, &[1.5, 0.5, 0.5, 1.5]);
        assert!((s - expected).amax() < 1e-15);
    }

    #[test]
    fn non_orthogonal_rotation_rejected() {
        let u = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let err = RotatedDiagonalSpec::new(u, vec![p("1", 2), p("1", 2)], 2).unwrap_err();
        assert!(matches!(err, Error::NotOrthogonal { .. }));
    }

    #[test]
    fn singular_volatility_detected() {
        let f = FieldSet::parse_diagonal("x^2/2", &["x"]).unwrap();
        assert!(matches!(f.check_nondegenerate(&[0.0]), Err(Error::SingularVolatility { .. })));
        assert!(f.check_nondegenerate(&[1.0]).is_ok());
    }

    #[test]
    fn jet_matches_fd_mode() {
        let f = FieldSet::parse("x^2/2 + y^2/2", &[
            vec!["2 + sin(x)".into(), "0.3*cos(y)".into()],
            vec!["0.1*x*y".into(), "1 + y^2".into()],
        ])
        .unwrap();
        let x = [0.4, -0.8];
        let a = f.sigma_jet(&x).unwrap();
        let b = f.clone().with_mode(DerivativeMode::FiniteDifference(None)).sigma_jet(&x).unwrap();
        for k in 0..2 {
            assert!((&a.partials[k] - &b.partials[k]).amax() < 1e-9);
        }
    }
}
