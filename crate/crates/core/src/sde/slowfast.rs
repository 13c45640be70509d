use nalgebra::{DMatrix, SymmetricEigen};

use super::system::SdeSystem;
use crate::error::{Error, Result};
use crate::exprfield::{parse_expression, Expr, ExprMatrix, FieldSet};
use crate::reversibility::NoiseConvention;

/// Default stiffness constant `c` in `dt ≤ c / max λ_max(n σ2σ2ᵀ)`.
pub const STIFFNESS_CONSTANT: f64 = 0.1;

/// Slow variables `x ∈ ℝ^d` (listed first) and fast variables `y ∈ ℝ^m`,
/// with the fast block sped up by `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowFastSystem {
    pub slow_dim: usize,
    pub fast_dim: usize,
    /// `V(x, y)` over `d + m` variables.
    pub potential: Expr,
    /// `d × d` block over `d + m` variables.
    pub sigma1: ExprMatrix,
    /// `m × m` block over `d + m` variables.
    pub sigma2: ExprMatrix,
    pub n: f64,
}

impl SlowFastSystem {
    pub fn new(
        slow_dim: usize,
        fast_dim: usize,
        potential: Expr,
        sigma1: ExprMatrix,
        sigma2: ExprMatrix,
        n: f64,
    ) -> Result<Self> {
        let total = slow_dim + fast_dim;
        if slow_dim == 0 || fast_dim == 0 {
            return Err(Error::Dimension("slow and fast dimensions must be positive".into()));
        }
        if sigma1.rows != slow_dim || sigma1.cols != slow_dim || sigma1.dim != total {
            return Err(Error::Dimension(format!("σ1 must be {slow_dim}x{slow_dim} over {total} variables")));
        }
        if sigma2.rows != fast_dim || sigma2.cols != fast_dim || sigma2.dim != total {
            return Err(Error::Dimension(format!("σ2 must be {fast_dim}x{fast_dim} over {total} variables")));
        }
        if potential.max_var().is_some_and(|v| v >= total) {
            return Err(Error::Dimension(format!("potential references more than {total} variables")));
        }
        if !(n >= 1.0 && n.is_finite()) {
            return Err(Error::InvalidArgument(format!("timescale n must be ≥ 1, got {n}")));
        }
        Ok(Self {
            slow_dim,
            fast_dim,
            potential,
            sigma1,
            sigma2,
            n,
        })
    }

    /// Parse from source text; variables are `x1..xd` (slow) then
    /// `x{d+1}..x{d+m}` (fast), with `x`, `y` aliases when `d + m = 2`.
    pub fn parse(
        slow_dim: usize,
        fast_dim: usize,
        potential: &str,
        sigma1: &[Vec<String>],
        sigma2: &[Vec<String>],
        n: f64,
    ) -> Result<Self> {
        let total = slow_dim + fast_dim;
        let v = parse_expression(potential, total)?;
        let parse_block = |rows: &[Vec<String>], size: usize| -> Result<ExprMatrix> {
            if rows.len() != size || rows.iter().any(|r| r.len() != size) {
                return Err(Error::Dimension(format!("block must be {size}x{size}")));
            }
            let entries = rows
                .iter()
                .flatten()
                .map(|s| parse_expression(s, total))
                .collect::<Result<Vec<_>, _>>()?;
            ExprMatrix::new(size, size, entries, total)
        };
        Self::new(
            slow_dim,
            fast_dim,
            v,
            parse_block(sigma1, slow_dim)?,
            parse_block(sigma2, fast_dim)?,
            n,
        )
    }

    pub fn with_n(&self, n: f64) -> Result<Self> {
        Self::new(
            self.slow_dim,
            self.fast_dim,
            self.potential.clone(),
            self.sigma1.clone(),
            self.sigma2.clone(),
            n,
        )
    }

    pub fn total_dim(&self) -> usize {
        self.slow_dim + self.fast_dim
    }

    /// Joint fields with `σ_n = diag(σ1, √n σ2)`.
    pub fn joint_fields(&self) -> Result<FieldSet> {
        let (d, m) = (self.slow_dim, self.fast_dim);
        let total = d + m;
        let scale = self.n.sqrt();
        let mut entries = vec![Expr::Const(0.0); total * total];
        for i in 0..d {
            for j in 0..d {
                entries[i * total + j] = self.sigma1.entry(i, j).clone();
            }
        }
        for i in 0..m {
            for j in 0..m {
                let e = self.sigma2.entry(i, j);
                entries[(d + i) * total + d + j] = match e {
                    Expr::Const(c) => Expr::Const(c * scale),
                    e if scale == 1.0 => e.clone(),
                    e => Expr::Mul(Box::new(Expr::Const(scale)), Box::new(e.clone())),
                };
            }
        }
        FieldSet::new(self.potential.clone(), ExprMatrix::new(total, total, entries, total)?)
    }

    /// Joint Klimontovich system with drift `(−σ1σ1ᵀ∇_xV, −n σ2σ2ᵀ∇_yV)`.
    pub fn assemble(&self) -> Result<SdeSystem> {
        Ok(SdeSystem::gibbs(self.joint_fields()?, NoiseConvention::KLIMONTOVICH))
    }

    /// `c / max_p λ_max(n σ2σ2ᵀ(p))` over the probe points.
    pub fn stiffness_limit(&self, probes: &[Vec<f64>]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for p in probes {
            let s: DMatrix<f64> = self.sigma2.value(p)?;
            let m = &s * s.transpose() * self.n;
            let top = SymmetricEigen::new(m).eigenvalues.max();
            worst = worst.max(top);
        }
        Ok(if worst > 0.0 { STIFFNESS_CONSTANT / worst } else { f64::INFINITY })
    }

    /// Warn when `dt` exceeds the stiffness limit; returns the limit.
    pub fn warn_if_stiff(&self, dt: f64, probes: &[Vec<f64>]) -> Result<f64> {
        let limit = self.stiffness_limit(probes)?;
        if dt > limit * (1.0 + 1e-12) {
            log::warn!("time step {dt:e} exceeds the fast-block stiffness limit {limit:e}");
        }
        Ok(limit)
    }

    /// Error when `dt` exceeds the stiffness limit.
    pub fn require_stable(&self, dt: f64, probes: &[Vec<f64>]) -> Result<f64> {
        let limit = self.stiffness_limit(probes)?;
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::Stiffness { dt, limit });
        }
        Ok(limit)
    }
}
