//! Effective slow dynamics obtained by averaging over one fast variable `y`
//! against the conditional Gibbs weight `e^{−V(x, y)}`.
//!
//! With `Z(x) = ∫ e^{−V} dy`:
//!
//! ```text
//! b̄(x)  = Z⁻¹ ∫ (∂_x σ1² − σ1² ∂_x V) e^{−V} dy
//! σ̄²(x) = Z⁻¹ ∫ σ1² e^{−V} dy
//! μ∞(x) ∝ Z(x)
//! ```
//!
//! and the effective SDE is again of Klimontovich form for `μ∞`:
//! `b̄ = ∂_x σ̄² + σ̄² ∂_x log Z`.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exprfield::{eval_gradient, CompiledExpr, Expr, MatrixJet, RotatedDiagonalSpec};
use crate::geometry::geometry_from_sigma;
use crate::quadrature::{integrate, integrate_vec, QuadRule, QuadratureSpec};
use crate::reversibility::{lambda_residual_at, DivergenceVariant, NoiseConvention};
use crate::sde::{SlowFastSystem, TabulatedSde1d};

/// Central-difference step of the finite-difference oracle.
pub const ORACLE_FD_STEP: f64 = 1e-4;
/// Panel count of the fixed rule used by the finite-difference oracle.
pub const ORACLE_PANELS: usize = 4000;

const SCAN_HALF_WIDTH: f64 = 32.0;
const SCAN_POINTS: usize = 513;
const MAX_DOUBLINGS: u32 = 16;

fn require_single_fast(sf: &SlowFastSystem) -> Result<()> {
    if sf.fast_dim != 1 {
        return Err(Error::Dimension(format!(
            "averaging integrates over exactly one fast variable, got {}",
            sf.fast_dim
        )));
    }
    Ok(())
}

fn point(x: &[f64], y: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    p.push(y);
    p
}

/// Interval in `y` outside which `e^{−(V − min V)} < eps_cut`, and `min_y V`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FastWindow {
    pub lower: f64,
    pub upper: f64,
    pub argmin: f64,
    pub v_min: f64,
}

/// Locate the minimiser of `V(x, ·)` and grow outward by doubling until the
/// relative weight drops below `eps_cut`.
pub fn fast_window(potential: &CompiledExpr, x: &[f64], eps_cut: f64) -> Result<FastWindow> {
    let mut p = point(x, 0.0);
    let d = x.len();
    let not_confining = || Error::NotConfining { point: x.to_vec() };
    let mut v = |y: f64| -> Result<f64> {
        p[d] = y;
        potential.value(&p).map_err(|f| Error::Domain {
            fault: f,
            point: p.clone(),
        })
    };
    let h = 2.0 * SCAN_HALF_WIDTH / (SCAN_POINTS - 1) as f64;
    let mut best = (f64::INFINITY, 0usize);
    for k in 0..SCAN_POINTS {
        let val = v(-SCAN_HALF_WIDTH + h * k as f64)?;
        if val < best.0 {
            best = (val, k);
        }
    }
    if best.1 == 0 || best.1 == SCAN_POINTS - 1 {
        return Err(not_confining());
    }
    // Golden-section refinement inside the bracketing cells.
    let (mut a, mut b) = (
        -SCAN_HALF_WIDTH + h * (best.1 - 1) as f64,
        -SCAN_HALF_WIDTH + h * (best.1 + 1) as f64,
    );
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut e = a + g * (b - a);
    let (mut fc, mut fe) = (v(c)?, v(e)?);
    for _ in 0..80 {
        if (b - a).abs() < 1e-12 {
            break;
        }
        if fc < fe {
            b = e;
            e = c;
            fe = fc;
            c = b - g * (b - a);
            fc = v(c)?;
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + g * (b - a);
            fe = v(e)?;
        }
    }
    let (argmin, v_min) = if fc < fe { (c, fc) } else { (e, fe) };
    let (argmin, v_min) = if best.0 < v_min {
        (-SCAN_HALF_WIDTH + h * best.1 as f64, best.0)
    } else {
        (argmin, v_min)
    };
    let cut = -eps_cut.ln();
    let mut reach = |dir: f64| -> Result<f64> {
        let mut s = 1.0;
        for _ in 0..MAX_DOUBLINGS {
            if v(argmin + dir * s)? - v_min > cut {
                return Ok(argmin + dir * s);
            }
            s *= 2.0;
        }
        Err(not_confining())
    };
    let upper = reach(1.0)?;
    let lower = reach(-1.0)?;
    Ok(FastWindow {
        lower,
        upper,
        argmin,
        v_min,
    })
}

/// Conditional averages `Z⁻¹∫ g_r e^{−V} dy` and their slow gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct FastAverage {
    pub window: FastWindow,
    /// `Z(x)`.
    pub z: f64,
    /// `∂_k log Z = −Z⁻¹∫ ∂_kV e^{−V} dy`.
    pub grad_log_z: Vec<f64>,
    /// `Z⁻¹∫ g_r e^{−V} dy`.
    pub means: Vec<f64>,
    /// `Z⁻¹∫ (∂_k g_r − g_r ∂_k V) e^{−V} dy`, row `r`, column `k`.
    pub weighted_grads: Vec<Vec<f64>>,
}

impl FastAverage {
    /// `∂_k` of the conditional mean of `g_r`.
    pub fn mean_gradient(&self, r: usize, k: usize) -> f64 {
        self.weighted_grads[r][k] - self.means[r] * self.grad_log_z[k]
    }
}

/// Compiled potential and moment functions sharing one quadrature pass.
pub struct MomentIntegrator {
    slow_dim: usize,
    potential: CompiledExpr,
    moments: Vec<CompiledExpr>,
}

impl MomentIntegrator {
    pub fn new(slow_dim: usize, potential: &Expr, moments: &[Expr]) -> Self {
        Self {
            slow_dim,
            potential: CompiledExpr::compile(potential),
            moments: moments.iter().map(CompiledExpr::compile).collect(),
        }
    }

    pub fn window(&self, x: &[f64], quad: &QuadratureSpec) -> Result<FastWindow> {
        fast_window(&self.potential, x, quad.eps_cut)
    }

    /// All averages at `x`, integrating over `window` (found afresh if `None`).
    pub fn average(&self, x: &[f64], quad: &QuadratureSpec, window: Option<FastWindow>) -> Result<FastAverage> {
        quad.validate()?;
        let d = self.slow_dim;
        if x.len() != d {
            return Err(Error::Dimension(format!("slow point has {} components, expected {d}", x.len())));
        }
        let window = match window {
            Some(w) => w,
            None => self.window(x, quad)?,
        };
        let r = self.moments.len();
        let n = 1 + d + r + r * d;
        let mut p = point(x, 0.0);
        let mut gv = vec![0.0; d + 1];
        let mut gg = vec![0.0; d + 1];
        let res = integrate_vec(
            |y, out| {
                p[d] = y;
                let fault = |f| Error::Domain {
                    fault: f,
                    point: p.clone(),
                };
                let v = self.potential.value_gradient(&p, &mut gv).map_err(fault)?;
                let w = (window.v_min - v).exp();
                out[0] = w;
                for k in 0..d {
                    out[1 + k] = gv[k] * w;
                }
                for (ri, m) in self.moments.iter().enumerate() {
                    let g = m.value_gradient(&p, &mut gg).map_err(|f| Error::Domain {
                        fault: f,
                        point: p.clone(),
                    })?;
                    out[1 + d + ri] = g * w;
                    for k in 0..d {
                        out[1 + d + r + ri * d + k] = (gg[k] - g * gv[k]) * w;
                    }
                }
                Ok(())
            },
            window.lower,
            window.upper,
            n,
            quad,
        )?;
        let v = res.value;
        let z_shifted = v[0];
        if !(z_shifted > 0.0) {
            return Err(Error::Degenerate(format!("vanishing fast partition function at x = {x:?}")));
        }
        Ok(FastAverage {
            window,
            z: z_shifted * (-window.v_min).exp(),
            grad_log_z: (0..d).map(|k| -v[1 + k] / z_shifted).collect(),
            means: (0..r).map(|ri| v[1 + d + ri] / z_shifted).collect(),
            weighted_grads: (0..r)
                .map(|ri| (0..d).map(|k| v[1 + d + r + ri * d + k] / z_shifted).collect())
                .collect(),
        })
    }
}

fn square(e: &Expr) -> Expr {
    Expr::Mul(Box::new(e.clone()), Box::new(e.clone()))
}

/// Entries of `σ1σ1ᵀ` as expressions, row-major.
fn diffusion_entries(sf: &SlowFastSystem) -> Vec<Expr> {
    let d = sf.slow_dim;
    let mut out = Vec::with_capacity(d * d);
    for a in 0..d {
        for b in 0..d {
            let terms: Vec<Expr> = (0..d)
                .filter(|&c| !sf.sigma1.entry(a, c).is_zero_constant() && !sf.sigma1.entry(b, c).is_zero_constant())
                .map(|c| Expr::Mul(Box::new(sf.sigma1.entry(a, c).clone()), Box::new(sf.sigma1.entry(b, c).clone())))
                .collect();
            out.push(
                terms
                    .into_iter()
                    .reduce(|acc, t| Expr::Add(Box::new(acc), Box::new(t)))
                    .unwrap_or(Expr::Const(0.0)),
            );
        }
    }
    out
}

fn scalar_integrator(sf: &SlowFastSystem) -> Result<MomentIntegrator> {
    require_single_fast(sf)?;
    if sf.slow_dim != 1 {
        return Err(Error::Dimension(
            "scalar effective coefficients need one slow variable; use effective_diffusion for blocks".into(),
        ));
    }
    Ok(MomentIntegrator::new(1, &sf.potential, &[square(sf.sigma1.entry(0, 0))]))
}

/// `Z(x) = ∫ e^{−V(x, y)} dy`.
pub fn marginal_partition(sf: &SlowFastSystem, x: &[f64], quad: &QuadratureSpec) -> Result<f64> {
    require_single_fast(sf)?;
    Ok(MomentIntegrator::new(sf.slow_dim, &sf.potential, &[]).average(x, quad, None)?.z)
}

/// `b̄(x)` for one slow variable.
pub fn effective_drift(sf: &SlowFastSystem, x: f64, quad: &QuadratureSpec) -> Result<f64> {
    Ok(scalar_integrator(sf)?.average(&[x], quad, None)?.weighted_grads[0][0])
}

/// `σ̄(x)` for one slow variable.
pub fn effective_sigma(sf: &SlowFastSystem, x: f64, quad: &QuadratureSpec) -> Result<f64> {
    Ok(scalar_integrator(sf)?.average(&[x], quad, None)?.means[0].sqrt())
}

/// `Z⁻¹∫ σ1σ1ᵀ e^{−V} dy` for any slow dimension.
pub fn effective_diffusion(sf: &SlowFastSystem, x: &[f64], quad: &QuadratureSpec) -> Result<DMatrix<f64>> {
    require_single_fast(sf)?;
    let d = sf.slow_dim;
    let avg = MomentIntegrator::new(d, &sf.potential, &diffusion_entries(sf)).average(x, quad, None)?;
    Ok(DMatrix::from_row_slice(d, d, &avg.means))
}

/// Smallest eigenvalue and symmetry defect of a matrix.
pub fn spd_margin(a: &DMatrix<f64>) -> (f64, f64) {
    let asym = (a - a.transpose()).amax();
    let sym = (a + a.transpose()) * 0.5;
    (SymmetricEigen::new(sym).eigenvalues.min(), asym)
}

/// Both sides of `b̄ = ∂_x σ̄² + σ̄² ∂_x log Z` at one slow point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityCheck {
    pub z: f64,
    pub b_eff: f64,
    pub sigma2_eff: f64,
    pub d_sigma2: f64,
    pub d_log_z: f64,
}

impl IdentityCheck {
    /// `∂_x σ̄² − b̄ + σ̄² ∂_x log Z`.
    pub fn residual(&self) -> f64 {
        self.d_sigma2 - self.b_eff + self.sigma2_eff * self.d_log_z
    }
}

/// Derivatives taken under the integral sign.
pub fn identity_check(sf: &SlowFastSystem, x: f64, quad: &QuadratureSpec) -> Result<IdentityCheck> {
    let avg = scalar_integrator(sf)?.average(&[x], quad, None)?;
    Ok(IdentityCheck {
        z: avg.z,
        b_eff: avg.weighted_grads[0][0],
        sigma2_eff: avg.means[0],
        d_sigma2: avg.mean_gradient(0, 0),
        d_log_z: avg.grad_log_z[0],
    })
}

/// Derivatives by central differences of fixed-rule quadratures over a fixed
/// window.
pub fn identity_check_fd(sf: &SlowFastSystem, x: f64, quad: &QuadratureSpec, h: f64) -> Result<IdentityCheck> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let integ = scalar_integrator(sf)?;
    let fixed = QuadratureSpec {
        rule: QuadRule::Simpson { panels: ORACLE_PANELS },
        ..*quad
    };
    let window = integ.window(&[x], quad)?;
    let at = |t: f64| integ.average(&[t], &fixed, Some(window));
    let (lo, mid, hi) = (at(x - h)?, at(x)?, at(x + h)?);
    Ok(IdentityCheck {
        z: mid.z,
        b_eff: mid.weighted_grads[0][0],
        sigma2_eff: mid.means[0],
        d_sigma2: (hi.means[0] - lo.means[0]) / (2.0 * h),
        d_log_z: (hi.z.ln() - lo.z.ln()) / (2.0 * h),
    })
}

/// Residual of the averaged Klimontovich identity (primary path).
pub fn klimontovich_identity_residual(sf: &SlowFastSystem, x: f64, quad: &QuadratureSpec) -> Result<f64> {
    Ok(identity_check(sf, x, quad)?.residual())
}

/// Averaged volatility `U diag(√Ā_k) Uᵀ` with `Ā_k = Z⁻¹∫Λ_k² e^{−V} dy`, and
/// its slow derivatives.
pub fn matrix_average_sigma_jet(
    spec: &RotatedDiagonalSpec,
    potential: &Expr,
    x: &[f64],
    quad: &QuadratureSpec,
) -> Result<MatrixJet> {
    let d = spec.rotation.nrows();
    if spec.dim != d + 1 || x.len() != d {
        return Err(Error::Dimension(format!(
            "rotated-diagonal block of size {d} needs {} variables and a {d}-dimensional slow point",
            d + 1
        )));
    }
    let moments: Vec<Expr> = spec.diagonal.iter().map(square).collect();
    let avg = MomentIntegrator::new(d, potential, &moments).average(x, quad, None)?;
    let u = &spec.rotation;
    let roots: Vec<f64> = avg.means.iter().map(|m| m.sqrt()).collect();
    if roots.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Degenerate(format!("averaged diagonal vanishes at x = {x:?}")));
    }
    let frame = |diag: Vec<f64>| u * DMatrix::from_diagonal(&DVector::from_vec(diag)) * u.transpose();
    let value = frame(roots.clone());
    let partials = (0..d)
        .map(|i| frame((0..d).map(|k| avg.mean_gradient(k, i) / (2.0 * roots[k])).collect()))
        .collect();
    Ok(MatrixJet { value, partials })
}

pub fn matrix_average_sigma(
    spec: &RotatedDiagonalSpec,
    potential: &Expr,
    x: &[f64],
    quad: &QuadratureSpec,
) -> Result<DMatrix<f64>> {
    Ok(matrix_average_sigma_jet(spec, potential, x, quad)?.value)
}

/// Euclidean Klimontovich residual of the averaged volatility at `x`.
pub fn matrix_average_residual(
    spec: &RotatedDiagonalSpec,
    potential: &Expr,
    x: &[f64],
    quad: &QuadratureSpec,
) -> Result<DVector<f64>> {
    let jet = matrix_average_sigma_jet(spec, potential, x, quad)?;
    let geom = geometry_from_sigma(jet, x)?;
    Ok(lambda_residual_at(&geom, NoiseConvention::KLIMONTOVICH, DivergenceVariant::Euclidean))
}

/// Tabulated effective coefficients on a one-dimensional slow grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragingResult {
    pub x_grid: Vec<f64>,
    pub z: Vec<f64>,
    pub b_eff: Vec<f64>,
    pub sigma_eff: Vec<f64>,
    pub identity_residual: Vec<f64>,
    pub mu_inf: Vec<f64>,
    /// `∫ Z dx` over the grid range.
    pub normalization: f64,
}

impl AveragingResult {
    pub fn effective_sde(&self) -> Result<TabulatedSde1d> {
        TabulatedSde1d::new(self.x_grid.clone(), self.b_eff.clone(), self.sigma_eff.clone())
    }

    pub fn max_identity_residual(&self) -> f64 {
        self.identity_residual.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Columns `x,Z_V,b_eff,sigma_eff,identity_residual,mu_inf`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,Z_V,b_eff,sigma_eff,identity_residual,mu_inf")?;
        for i in 0..self.x_grid.len() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                self.x_grid[i], self.z[i], self.b_eff[i], self.sigma_eff[i], self.identity_residual[i], self.mu_inf[i]
            )?;
        }
        Ok(())
    }
}

/// Effective coefficients at every grid point (parallel, ordered), with
/// `μ∞ = Z / ∫Z` normalised over the grid range by adaptive quadrature.
pub fn average_on_grid(sf: &SlowFastSystem, grid: &[f64], quad: &QuadratureSpec) -> Result<AveragingResult> {
    let integ = scalar_integrator(sf)?;
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("slow grid needs at least two increasing points".into()));
    }
    let checks: Vec<Result<IdentityCheck>> = grid
        .par_iter()
        .map(|&x| {
            let avg = integ.average(&[x], quad, None).map_err(|e| e.at_point(&[x]))?;
            Ok(IdentityCheck {
                z: avg.z,
                b_eff: avg.weighted_grads[0][0],
                sigma2_eff: avg.means[0],
                d_sigma2: avg.mean_gradient(0, 0),
                d_log_z: avg.grad_log_z[0],
            })
        })
        .collect();
    let checks = checks.into_iter().collect::<Result<Vec<_>>>()?;
    let normalization = integrate(
        |x| Ok(integ.average(&[x], quad, None)?.z),
        grid[0],
        grid[grid.len() - 1],
        quad,
    )?;
    Ok(AveragingResult {
        x_grid: grid.to_vec(),
        z: checks.iter().map(|c| c.z).collect(),
        b_eff: checks.iter().map(|c| c.b_eff).collect(),
        sigma_eff: checks.iter().map(|c| c.sigma2_eff.sqrt()).collect(),
        identity_residual: checks.iter().map(|c| c.residual()).collect(),
        mu_inf: checks.iter().map(|c| c.z / normalization).collect(),
        normalization,
    })
}

/// `n` equally spaced points covering `[a, b]`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (a + b)];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Both sides of the Dirichlet-form isometry for a lift constant in `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletForms {
    /// `∫∫ σ1² f′² e^{−V} / ∫∫ e^{−V}`, iterated with `y` inner.
    pub lifted: f64,
    /// `∫ f′² σ̄² μ∞ dx`.
    pub effective: f64,
}

impl DirichletForms {
    pub fn gap(&self) -> f64 {
        (self.lifted - self.effective).abs()
    }
}

fn derivative_of(f: &Expr, x: f64) -> Result<f64> {
    let mut g = [0.0];
    eval_gradient(f, &[x], &mut g)?;
    Ok(g[0])
}

/// Dirichlet energies of `f(x)` under the slow-fast and the effective
/// dynamics over the slow interval `[a, b]`.
pub fn dirichlet_forms(
    sf: &SlowFastSystem,
    f: &Expr,
    slow: (f64, f64),
    quad2d: &QuadratureSpec,
    quad1d: &QuadratureSpec,
) -> Result<DirichletForms> {
    let integ = scalar_integrator(sf)?;
    if f.max_var().is_some_and(|v| v > 0) {
        return Err(Error::Dimension("test function must depend on the slow variable only".into()));
    }
    let (a, b) = slow;
    // Lifted form: y-integral of σ1² f′² e^{−V} and of e^{−V}, then x.
    let lifted = integrate_vec(
        |x, out| {
            let fp = derivative_of(f, x)?;
            let window = integ.window(&[x], quad2d)?;
            let mut p = [x, 0.0];
            let r = integrate_vec(
                |y, o| {
                    p[1] = y;
                    let v = sf.potential.value(&p).map_err(|e| Error::Domain {
                        fault: e,
                        point: p.to_vec(),
                    })?;
                    let s = sf.sigma1.entry(0, 0).value(&p).map_err(|e| Error::Domain {
                        fault: e,
                        point: p.to_vec(),
                    })?;
                    let w = (-v).exp();
                    o[0] = s * s * fp * fp * w;
                    o[1] = w;
                    Ok(())
                },
                window.lower,
                window.upper,
                2,
                quad2d,
            )?;
            out.copy_from_slice(&r.value);
            Ok(())
        },
        a,
        b,
        2,
        quad2d,
    )?;
    // Effective form: f′² σ̄² Z and Z along x.
    let effective = integrate_vec(
        |x, out| {
            let fp = derivative_of(f, x)?;
            let avg = integ.average(&[x], quad1d, None)?;
            out[0] = fp * fp * avg.means[0] * avg.z;
            out[1] = avg.z;
            Ok(())
        },
        a,
        b,
        2,
        quad1d,
    )?;
    Ok(DirichletForms {
        lifted: lifted.value[0] / lifted.value[1],
        effective: effective.value[0] / effective.value[1],
    })
}

/// `|E_n(Φ_n f) − E(f)|`.
pub fn dirichlet_isometry_gap(
    sf: &SlowFastSystem,
    f: &Expr,
    slow: (f64, f64),
    quad2d: &QuadratureSpec,
    quad1d: &QuadratureSpec,
) -> Result<f64> {
    Ok(dirichlet_forms(sf, f, slow, quad2d, quad1d)?.gap())
}

/// Lifted energy by a tensor-product composite Simpson rule over the
/// rectangle `slow × fast`.
pub fn lifted_energy_tensor(
    sf: &SlowFastSystem,
    f: &Expr,
    slow: (f64, f64),
    fast: (f64, f64),
    panels: usize,
) -> Result<f64> {
    require_single_fast(sf)?;
    let panels = panels.max(2) + panels % 2;
    let weights: Vec<f64> = (0..=panels)
        .map(|p| {
            if p == 0 || p == panels {
                1.0
            } else if p % 2 == 1 {
                4.0
            } else {
                2.0
            }
        })
        .collect();
    let xs = linspace(slow.0, slow.1, panels + 1);
    let ys = linspace(fast.0, fast.1, panels + 1);
    let pot = CompiledExpr::compile(&sf.potential);
    let sig = CompiledExpr::compile(sf.sigma1.entry(0, 0));
    let rows: Vec<Result<(f64, f64)>> = xs
        .par_iter()
        .zip(weights.par_iter())
        .map(|(&x, &wx)| {
            let fp = derivative_of(f, x)?;
            let (mut num, mut den) = (0.0, 0.0);
            for (&y, &wy) in ys.iter().zip(&weights) {
                let p = [x, y];
                let fault = |e| Error::Domain {
                    fault: e,
                    point: p.to_vec(),
                };
                let w = (-pot.value(&p).map_err(fault)?).exp() * wx * wy;
                let s = sig.value(&p).map_err(fault)?;
                num += s * s * fp * fp * w;
                den += w;
            }
            Ok((num, den))
        })
        .collect();
    let (mut num, mut den) = (0.0, 0.0);
    for r in rows {
        let (a, b) = r?;
        num += a;
        den += b;
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprfield::parse_expression;

    fn sf(v: &str, s1: &str) -> SlowFastSystem {
        SlowFastSystem::parse(1, 1, v, &[vec![s1.to_string()]], &[vec!["1".to_string()]], 1.0).unwrap()
    }

    const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

    #[test]
    fn partition_examples() {
        let q = QuadratureSpec::default();
        let z = marginal_partition(&sf("(x^2 + y^2)/2", "1"), &[0.0], &q).unwrap();
        assert!((z - SQRT_2PI).abs() < 1e-10);
        let z = marginal_partition(&sf("(x^2 + y^2 + x*y)/2", "1"), &[1.0], &q).unwrap();
        assert!((z - SQRT_2PI * (-0.375f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn quartic_partition_matches_fine_simpson() {
        let s = sf("x^2/2 + y^4/4 + y^2/2", "1");
        let z = marginal_partition(&s, &[0.0], &QuadratureSpec::default()).unwrap();
        let fine = QuadratureSpec::simpson(20_000);
        let reference = integrate(|y| Ok((-(y.powi(4) / 4.0 + y * y / 2.0)).exp()), -12.0, 12.0, &fine).unwrap();
        assert!((z - reference).abs() < 1e-8);
    }

    #[test]
    fn drift_and_sigma_examples() {
        let q = QuadratureSpec::default();
        let f2 = sf("(x^2 + y^2)/2", "2 + sin(x)");
        assert!((effective_drift(&f2, 0.0, &q).unwrap() - 4.0).abs() < 1e-9);
        assert!((effective_sigma(&f2, 0.0, &q).unwrap() - 2.0).abs() < 1e-10);
        let f3 = sf("(x^2 + y^2 + x*y)/2", "1");
        assert!((effective_drift(&f3, 1.0, &q).unwrap() + 0.75).abs() < 1e-9);
        assert!((effective_sigma(&f3, 0.3, &q).unwrap() - 1.0).abs() < 1e-12);
        let moment = sf("(x^2 + y^2)/2", "1 + y^2");
        for x in [0.0, 1.3] {
            assert!((effective_sigma(&moment, x, &q).unwrap() - 6f64.sqrt()).abs() < 1e-8);
        }
        let sep = sf("x^4/4 + y^2/2", "1.5");
        assert!((effective_drift(&sep, 0.8, &q).unwrap() + 2.25 * 0.512).abs() < 1e-9);
    }

    #[test]
    fn identity_examples() {
        let q = QuadratureSpec::default();
        for (v, s, x) in [("(x^2 + y^2)/2", "2 + sin(x)", 0.0), ("(x^2 + y^2 + x*y)/2", "1", 1.0)] {
            let field = sf(v, s);
            let c = identity_check(&field, x, &q).unwrap();
            assert!(c.residual().abs() < 1e-8, "{v}");
            let fd = identity_check_fd(&field, x, &q, ORACLE_FD_STEP).unwrap();
            assert!(fd.residual().abs() < 1e-8, "{v}: {}", fd.residual());
        }
        let c = identity_check(&sf("(x^2 + y^2 + x*y)/2", "1"), 1.0, &q).unwrap();
        assert!((c.d_log_z + 0.75).abs() < 1e-9);
    }

    #[test]
    fn not_confining_is_reported() {
        let s = sf("x^2/2 + y", "1");
        assert!(matches!(
            marginal_partition(&s, &[0.0], &QuadratureSpec::default()),
            Err(Error::NotConfining { .. })
        ));
    }

    #[test]
    fn matrix_average_examples() {
        let q = QuadratureSpec::default();
        let v = parse_expression("(x1^2 + x2^2 + x3^2)/2", 3).unwrap();
        let diag = |a: &str, b: &str| vec![parse_expression(a, 3).unwrap(), parse_expression(b, 3).unwrap()];
        let spec = RotatedDiagonalSpec::new(DMatrix::identity(2, 2), diag("2 + sin(x1)", "1"), 3).unwrap();
        let s = matrix_average_sigma(&spec, &v, &[0.0, 0.0], &q).unwrap();
        assert!((s - DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0])).amax() < 1e-10);
        let u = RotatedDiagonalSpec::rotation_2d(std::f64::consts::FRAC_PI_4);
        let spec = RotatedDiagonalSpec::new(u.clone(), diag("1.5", "0.5"), 3).unwrap();
        let s = matrix_average_sigma(&spec, &v, &[0.4, -0.2], &q).unwrap();
        let exact = &u * DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 0.5]) * u.transpose();
        assert!((s - exact).amax() < 1e-12);
        let spec = RotatedDiagonalSpec::new(u, diag("2 + sin(x1)", "1 + x3^2/(1 + x3^2)"), 3).unwrap();
        let r = matrix_average_residual(&spec, &v, &[0.7, -0.4], &q).unwrap();
        assert!(r.amax() < 1e-8);
    }

    #[test]
    fn grid_table_and_normalization() {
        let s = sf("(x^2 + y^2 + x*y)/2", "1");
        let q = QuadratureSpec::default();
        let res = average_on_grid(&s, &linspace(-8.0, 8.0, 41), &q).unwrap();
        let var = 4.0 / 3.0;
        for (x, mu) in res.x_grid.iter().zip(&res.mu_inf) {
            let exact = (-x * x / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
            assert!((mu - exact).abs() < 1e-9);
        }
        assert!(res.max_identity_residual() < 1e-9);
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("x,Z_V,b_eff,sigma_eff,identity_residual,mu_inf\n"));
    }

    #[test]
    fn isometry_on_diagonal_field() {
        let s = sf("(x^2 + y^2)/2", "2 + sin(x)");
        let f = parse_expression("x", 1).unwrap();
        let q = QuadratureSpec::default();
        let forms = dirichlet_forms(&s, &f, (-12.0, 12.0), &q, &q).unwrap();
        let exact = 4.5 - (-2f64).exp() / 2.0;
        assert!((forms.effective - exact).abs() < 1e-8);
        assert!(forms.gap() < 1e-8);
        let zero = dirichlet_forms(&s, &parse_expression("3", 1).unwrap(), (-12.0, 12.0), &q, &q).unwrap();
        assert_eq!(zero.lifted, 0.0);
        assert_eq!(zero.effective, 0.0);
    }
}
