use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::exprfield::{CompiledExpr, DerivativeMode, Dual, Expr, FieldSet};
use crate::reversibility::NoiseConvention;

/// Itô-form coefficients `(B, σ)` of `dX = B dt + √2 σ dW`.
pub trait ItoCoefficients: Sync {
    type Workspace: Send;

    fn dim(&self) -> usize;

    fn workspace(&self) -> Self::Workspace;

    /// Write `B(x)` into `drift` and `σ(x)` (row-major) into `sigma`.
    fn coefficients(&self, x: &[f64], drift: &mut [f64], sigma: &mut [f64], ws: &mut Self::Workspace) -> Result<()>;

    fn is_ito(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DriftSpec {
    /// `−σσᵀ∇V`.
    Gibbs,
    /// User drift, one expression per component.
    Explicit(Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
struct Program {
    potential: CompiledExpr,
    sigma: Vec<CompiledExpr>,
    drift: Vec<CompiledExpr>,
}

impl Program {
    fn new(fields: &FieldSet, drift: &DriftSpec) -> Self {
        Self {
            potential: CompiledExpr::compile(&fields.potential),
            sigma: fields.volatility.entries.iter().map(CompiledExpr::compile).collect(),
            drift: match drift {
                DriftSpec::Gibbs => Vec::new(),
                DriftSpec::Explicit(b) => b.iter().map(CompiledExpr::compile).collect(),
            },
        }
    }
}

/// `dX = B dt + √2 σ ∘_λ dW` with `B` and `σ` from a [`FieldSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct SdeSystem {
    fields: FieldSet,
    drift: DriftSpec,
    convention: NoiseConvention,
    /// Weight `w` of the noise-induced drift `∇·M − σ∇·σᵀ` added to `B`.
    correction_weight: f64,
    program: Program,
}

pub struct SystemWorkspace {
    grad: Vec<f64>,
    tmp: Vec<f64>,
    partials: Vec<f64>,
    scratch: Vec<Dual>,
}

/// `c_j = Σ_{i,l} ∂_i σ^{jl} σ^{il}`, equal to `∇·(σσᵀ) − σ∇·σᵀ`, from
/// row-major buffers (`partials[i·d² + j·d + l]`).
pub fn noise_induced_drift(sigma: &[f64], partials: &[f64], d: usize, out: &mut [f64]) {
    let n = d * d;
    for j in 0..d {
        let mut acc = 0.0;
        for i in 0..d {
            for l in 0..d {
                acc += partials[i * n + j * d + l] * sigma[i * d + l];
            }
        }
        out[j] = acc;
    }
}

impl SdeSystem {
    pub fn new(fields: FieldSet, drift: DriftSpec, convention: NoiseConvention) -> Result<Self> {
        if let DriftSpec::Explicit(b) = &drift {
            if b.len() != fields.dim {
                return Err(Error::Dimension(format!(
                    "drift has {} components in dimension {}",
                    b.len(),
                    fields.dim
                )));
            }
            if let Some(v) = b.iter().filter_map(Expr::max_var).max() {
                if v >= fields.dim {
                    return Err(Error::Dimension(format!("drift references x{} in dimension {}", v + 1, fields.dim)));
                }
            }
        }
        Ok(Self::build(fields, drift, convention))
    }

    fn build(fields: FieldSet, drift: DriftSpec, convention: NoiseConvention) -> Self {
        let program = Program::new(&fields, &drift);
        Self {
            fields,
            drift,
            convention,
            correction_weight: 0.0,
            program,
        }
    }

    /// Overdamped Langevin system `−σσᵀ∇V dt + √2 σ ∘_λ dW`.
    pub fn gibbs(fields: FieldSet, convention: NoiseConvention) -> Self {
        Self::build(fields, DriftSpec::Gibbs, convention)
    }

    pub fn fields(&self) -> &FieldSet {
        &self.fields
    }

    pub fn drift_spec(&self) -> &DriftSpec {
        &self.drift
    }

    pub fn convention(&self) -> NoiseConvention {
        self.convention
    }

    pub fn dim(&self) -> usize {
        self.fields.dim
    }

    /// Pathwise-equivalent Itô system. The correction is evaluated lazily.
    pub fn to_ito(&self) -> SdeSystem {
        let mut out = self.clone();
        out.correction_weight += 2.0 * self.convention.lambda();
        out.convention = NoiseConvention::ITO;
        out
    }

    pub fn correction_weight(&self) -> f64 {
        self.correction_weight
    }

    /// Drift in the system's own convention.
    pub fn drift_at(&self, x: &[f64]) -> Result<DVector<f64>> {
        let d = self.dim();
        let mut ws = self.workspace();
        let mut drift = DVector::zeros(d);
        let mut sigma = vec![0.0; d * d];
        self.eval(x, drift.as_mut_slice(), &mut sigma, &mut ws)?;
        Ok(drift)
    }

    fn eval(&self, x: &[f64], drift: &mut [f64], sigma: &mut [f64], ws: &mut SystemWorkspace) -> Result<()> {
        let d = self.dim();
        let with_jet = self.correction_weight != 0.0;
        let analytic = self.fields.mode == DerivativeMode::Analytic;
        let domain = |f| Error::Domain {
            fault: f,
            point: x.to_vec(),
        };
        if !analytic {
            if with_jet {
                self.fields.volatility.jet_into(x, sigma, &mut ws.partials, &mut ws.scratch)?;
            } else {
                self.fields.volatility.value_into(x, sigma)?;
            }
        } else {
            let n = d * d;
            for (idx, c) in self.program.sigma.iter().enumerate() {
                if let Some(v) = c.as_constant() {
                    // Constant entries keep the zero partials set at workspace creation.
                    sigma[idx] = v;
                } else if with_jet {
                    sigma[idx] = c.value_gradient(x, &mut ws.grad).map_err(domain)?;
                    for k in 0..d {
                        ws.partials[k * n + idx] = ws.grad[k];
                    }
                } else {
                    sigma[idx] = c.value(x).map_err(domain)?;
                }
            }
        }
        match &self.drift {
            DriftSpec::Gibbs => {
                if analytic {
                    self.program
                        .potential
                        .value_gradient(x, &mut ws.grad)
                        .map_err(domain)?;
                } else {
                    self.fields.potential_gradient_into(x, &mut ws.grad)?;
                }
                for l in 0..d {
                    ws.tmp[l] = (0..d).map(|i| sigma[i * d + l] * ws.grad[i]).sum();
                }
                for j in 0..d {
                    drift[j] = -(0..d).map(|l| sigma[j * d + l] * ws.tmp[l]).sum::<f64>();
                }
            }
            DriftSpec::Explicit(_) => {
                for (o, c) in drift.iter_mut().zip(&self.program.drift) {
                    *o = c.value(x).map_err(domain)?;
                }
            }
        }
        if with_jet {
            noise_induced_drift(sigma, &ws.partials, d, &mut ws.tmp);
            for j in 0..d {
                drift[j] += self.correction_weight * ws.tmp[j];
            }
        }
        Ok(())
    }
}

impl ItoCoefficients for SdeSystem {
    type Workspace = SystemWorkspace;

    fn dim(&self) -> usize {
        self.fields.dim
    }

    fn workspace(&self) -> SystemWorkspace {
        let d = self.fields.dim;
        SystemWorkspace {
            grad: vec![0.0; d],
            tmp: vec![0.0; d],
            partials: vec![0.0; d * d * d],
            scratch: Vec::with_capacity(d),
        }
    }

    fn coefficients(&self, x: &[f64], drift: &mut [f64], sigma: &mut [f64], ws: &mut SystemWorkspace) -> Result<()> {
        self.eval(x, drift, sigma, ws)
    }

    fn is_ito(&self) -> bool {
        self.convention == NoiseConvention::ITO
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprfield::{catalog, parse_expression};

    #[test]
    fn ito_conversion_of_sinusoid() {
        let sys = SdeSystem::gibbs(catalog::f1(), NoiseConvention::KLIMONTOVICH);
        let ito = sys.to_ito();
        assert!(ito.is_ito());
        assert!((ito.drift_at(&[0.0]).unwrap()[0] - 4.0).abs() < 1e-14);
        assert_eq!(sys.drift_at(&[0.0]).unwrap()[0], 0.0);
    }

    #[test]
    fn ito_system_unchanged() {
        let sys = SdeSystem::gibbs(catalog::f1(), NoiseConvention::ITO);
        let ito = sys.to_ito();
        assert_eq!(ito, sys);
    }

    #[test]
    fn constant_sigma_conversion_is_identity() {
        let f = catalog::constant_2d();
        let sys = SdeSystem::gibbs(f, NoiseConvention::KLIMONTOVICH);
        let x = [0.4, -1.1];
        assert_eq!(sys.drift_at(&x).unwrap(), sys.to_ito().drift_at(&x).unwrap());
    }

    #[test]
    fn explicit_drift_checked() {
        let f = catalog::f2();
        let b = vec![parse_expression("-x", 2).unwrap()];
        assert!(SdeSystem::new(f, DriftSpec::Explicit(b), NoiseConvention::ITO).is_err());
    }

    #[test]
    fn noise_drift_matches_geometry() {
        let f = catalog::f4();
        let x = [0.3, -0.7];
        let geom = crate::geometry::geometry_at(&f, &x).unwrap();
        let oracle = crate::reversibility::noise_induced_drift_at(&geom);
        let ito = SdeSystem::gibbs(f.clone(), NoiseConvention::STRATONOVICH).to_ito();
        let base = SdeSystem::gibbs(f, NoiseConvention::ITO);
        let diff = ito.drift_at(&x).unwrap() - base.drift_at(&x).unwrap();
        assert!((diff - oracle).amax() < 1e-13);
    }
}
