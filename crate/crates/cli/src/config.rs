//! Run configuration. Every section rejects unknown keys; defaults are
//! filled in on load so the manifest echoes the fully resolved run.

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use revsde_core::exprfield::{
    assemble_rotated_diagonal, parse_expression, DerivativeMode, Expr, ExprMatrix, FieldSet, RotatedDiagonalSpec,
};
use revsde_core::quadrature::{QuadRule, QuadratureSpec};
use revsde_core::reversibility::{GibbsSpec, MeasureMode, NoiseConvention};
use revsde_core::sde::{DriftSpec, SlowFastSystem};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Option<Problem>,
    /// `λ ∈ [0, 1]` or one of `ito`, `stratonovich`, `klimontovich`.
    pub convention: Option<Convention>,
    pub gibbs: Option<GibbsSection>,
    pub grid: Option<GridSection>,
    pub simulation: Option<Simulation>,
    pub slow_fast: Option<SlowFast>,
    pub averaging: Option<Averaging>,
    pub study: Option<Study>,
    #[serde(default)]
    pub output: Output,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Convention {
    Value(f64),
    Name(String),
}

impl Convention {
    pub fn resolve(&self) -> Result<NoiseConvention> {
        Ok(match self {
            Convention::Value(l) => NoiseConvention::new(*l)?,
            Convention::Name(n) => match n.to_ascii_lowercase().as_str() {
                "ito" => NoiseConvention::ITO,
                "stratonovich" => NoiseConvention::STRATONOVICH,
                "klimontovich" | "anti-ito" | "isothermal" => NoiseConvention::KLIMONTOVICH,
                other => bail!("unknown convention `{other}`"),
            },
        })
    }
}

/// Volatility given as full entries, a diagonal, or `U diag(Λ) Uᵀ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaSpec {
    pub entries: Option<Vec<Vec<String>>>,
    pub diagonal: Option<Vec<String>>,
    pub rotated_diagonal: Option<RotatedDiagonal>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotatedDiagonal {
    /// Planar rotation angle in radians (2 × 2 only).
    pub angle: Option<f64>,
    /// Rows of an orthogonal matrix.
    pub rotation: Option<Vec<Vec<f64>>>,
    pub diagonal: Vec<String>,
}

impl RotatedDiagonal {
    pub fn spec(&self, vars: usize, what: &str) -> Result<RotatedDiagonalSpec> {
        let k = self.diagonal.len();
        let u = match (&self.rotation, self.angle) {
            (Some(rows), None) => {
                if rows.len() != k || rows.iter().any(|r| r.len() != k) {
                    bail!("{what}.rotated_diagonal.rotation must be {k}x{k}");
                }
                DMatrix::from_row_slice(k, k, &rows.concat())
            }
            (None, Some(a)) if k == 2 => RotatedDiagonalSpec::rotation_2d(a),
            (None, Some(_)) => bail!("{what}.rotated_diagonal.angle needs exactly two diagonal entries"),
            _ => bail!("{what}.rotated_diagonal needs exactly one of `angle` or `rotation`"),
        };
        let diag = self
            .diagonal
            .iter()
            .enumerate()
            .map(|(i, s)| parse_expression(s, vars).with_context(|| format!("{what}.rotated_diagonal.diagonal[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        Ok(RotatedDiagonalSpec::new(u, diag, vars)?)
    }
}

impl SigmaSpec {
    fn count(&self) -> usize {
        self.entries.is_some() as usize + self.diagonal.is_some() as usize + self.rotated_diagonal.is_some() as usize
    }

    /// `size × size` block over `vars` variables.
    pub fn matrix(&self, size: usize, vars: usize, what: &str) -> Result<ExprMatrix> {
        if self.count() != 1 {
            bail!("{what} needs exactly one of `entries`, `diagonal` or `rotated_diagonal`");
        }
        let parse = |s: &String, at: String| parse_expression(s, vars).with_context(|| at);
        if let Some(rows) = &self.entries {
            if rows.len() != size || rows.iter().any(|r| r.len() != size) {
                bail!("{what}.entries must be {size}x{size}");
            }
            let mut e = Vec::with_capacity(size * size);
            for (i, r) in rows.iter().enumerate() {
                for (j, s) in r.iter().enumerate() {
                    e.push(parse(s, format!("{what}.entries[{i}][{j}]"))?);
                }
            }
            return Ok(ExprMatrix::new(size, size, e, vars)?);
        }
        if let Some(d) = &self.diagonal {
            if d.len() != size {
                bail!("{what}.diagonal must have {size} entries");
            }
            let e = d
                .iter()
                .enumerate()
                .map(|(i, s)| parse(s, format!("{what}.diagonal[{i}]")))
                .collect::<Result<Vec<_>>>()?;
            return Ok(ExprMatrix::diagonal(e, vars)?);
        }
        let rd = self.rotated_diagonal.as_ref().expect("one variant is present");
        if rd.diagonal.len() != size {
            bail!("{what}.rotated_diagonal.diagonal must have {size} entries");
        }
        Ok(assemble_rotated_diagonal(&rd.spec(vars, what)?)?)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Derivatives {
    Analytic,
    FiniteDifference,
}

fn analytic() -> Derivatives {
    Derivatives::Analytic
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub dim: usize,
    pub potential: String,
    pub sigma: SigmaSpec,
    /// Explicit drift replacing `−σσᵀ∇V`.
    pub drift: Option<Vec<String>>,
    #[serde(default = "analytic")]
    pub derivatives: Derivatives,
}

impl Problem {
    pub fn fields(&self) -> Result<FieldSet> {
        if self.dim == 0 {
            bail!("problem.dim must be positive");
        }
        let v = parse_expression(&self.potential, self.dim).context("problem.potential")?;
        let sigma = self.sigma.matrix(self.dim, self.dim, "problem.sigma")?;
        let f = FieldSet::new(v, sigma)?;
        Ok(match self.derivatives {
            Derivatives::Analytic => f,
            Derivatives::FiniteDifference => f.with_mode(DerivativeMode::FiniteDifference(None)),
        })
    }

    pub fn drift(&self) -> Result<DriftSpec> {
        Ok(match &self.drift {
            None => DriftSpec::Gibbs,
            Some(b) => DriftSpec::Explicit(
                b.iter()
                    .enumerate()
                    .map(|(i, s)| parse_expression(s, self.dim).with_context(|| format!("problem.drift[{i}]")))
                    .collect::<Result<Vec<Expr>>>()?,
            ),
        })
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Flat,
    Riemannian,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GibbsSection {
    pub measure: Measure,
    #[serde(default = "one")]
    pub beta: f64,
}

impl GibbsSection {
    pub fn spec(&self) -> Result<GibbsSpec> {
        let base = GibbsSpec {
            mode: match self.measure {
                Measure::Flat => MeasureMode::Flat,
                Measure::Riemannian => MeasureMode::Riemannian,
            },
            beta: 1.0,
        };
        Ok(base.with_beta(self.beta)?)
    }
}

fn tolerance() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Points per axis.
    pub points: Vec<usize>,
    #[serde(default = "tolerance")]
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Simulation {
    pub dt: f64,
    pub t_end: f64,
    pub n_traj: usize,
    pub seed: u64,
    pub save_stride: usize,
    /// Initial point; zeros when absent.
    pub initial: Vec<f64>,
    /// Per-axis standard deviation of a Gaussian initial law around `initial`.
    pub initial_std: Option<Vec<f64>>,
    pub burn_in: f64,
    pub lag: f64,
    pub bins: usize,
    pub bin_lower: f64,
    pub bin_upper: f64,
    pub floor: usize,
    pub resamples: usize,
    pub target_lower: f64,
    pub target_upper: f64,
    pub target_resolution: usize,
    pub write_ensemble: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulationInput {
    dt: f64,
    t_end: f64,
    n_traj: usize,
    seed: u64,
    save_stride: Option<usize>,
    initial: Option<Vec<f64>>,
    initial_std: Option<Vec<f64>>,
    burn_in: Option<f64>,
    lag: Option<f64>,
    bins: Option<usize>,
    bin_lower: Option<f64>,
    bin_upper: Option<f64>,
    floor: Option<usize>,
    resamples: Option<usize>,
    target_lower: Option<f64>,
    target_upper: Option<f64>,
    target_resolution: Option<usize>,
    write_ensemble: Option<bool>,
}

impl<'de> Deserialize<'de> for Simulation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = SimulationInput::deserialize(d)?;
        let lag = s.lag.unwrap_or(0.1);
        Ok(Simulation {
            dt: s.dt,
            t_end: s.t_end,
            n_traj: s.n_traj,
            seed: s.seed,
            save_stride: s.save_stride.unwrap_or_else(|| ((lag / s.dt).round() as usize).max(1)),
            initial: s.initial.unwrap_or_default(),
            initial_std: s.initial_std,
            burn_in: s.burn_in.unwrap_or_else(|| revsde_core::diagnostics::default_burn_in(s.t_end)),
            lag,
            bins: s.bins.unwrap_or(20),
            bin_lower: s.bin_lower.unwrap_or(-3.0),
            bin_upper: s.bin_upper.unwrap_or(3.0),
            floor: s.floor.unwrap_or(50),
            resamples: s.resamples.unwrap_or(200),
            target_lower: s.target_lower.unwrap_or(-8.0),
            target_upper: s.target_upper.unwrap_or(8.0),
            target_resolution: s.target_resolution.unwrap_or(4001),
            write_ensemble: s.write_ensemble.unwrap_or(true),
        })
    }
}

fn default_n() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlowFast {
    pub slow_dim: usize,
    pub fast_dim: usize,
    /// Over `slow_dim + fast_dim` variables, slow first.
    pub potential: String,
    pub sigma1: SigmaSpec,
    pub sigma2: SigmaSpec,
    #[serde(default = "default_n")]
    pub n: f64,
}

impl SlowFast {
    pub fn system(&self) -> Result<SlowFastSystem> {
        let total = self.slow_dim + self.fast_dim;
        let v = parse_expression(&self.potential, total).context("slow_fast.potential")?;
        let s1 = self.sigma1.matrix(self.slow_dim, total, "slow_fast.sigma1")?;
        let s2 = self.sigma2.matrix(self.fast_dim, total, "slow_fast.sigma2")?;
        Ok(SlowFastSystem::new(self.slow_dim, self.fast_dim, v, s1, s2, self.n)?)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Adaptive,
    Simpson,
}

fn slow_lower() -> f64 {
    -6.0
}
fn slow_upper() -> f64 {
    6.0
}
fn grid_points() -> usize {
    101
}
fn check_points() -> usize {
    11
}
fn rule() -> Rule {
    Rule::Adaptive
}
fn max_intervals() -> usize {
    400
}
fn panels() -> usize {
    2000
}
fn abs_tol() -> f64 {
    1e-10
}
fn rel_tol() -> f64 {
    1e-8
}
fn eps_cut() -> f64 {
    1e-12
}
fn fd_step() -> f64 {
    revsde_core::averaging::ORACLE_FD_STEP
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Averaging {
    #[serde(default = "slow_lower")]
    pub slow_lower: f64,
    #[serde(default = "slow_upper")]
    pub slow_upper: f64,
    /// Slow-grid points for one slow variable.
    #[serde(default = "grid_points")]
    pub grid_points: usize,
    /// Points per axis for the matrix checks with several slow variables.
    #[serde(default = "check_points")]
    pub check_points: usize,
    #[serde(default = "rule")]
    pub rule: Rule,
    #[serde(default = "max_intervals")]
    pub max_intervals: usize,
    #[serde(default = "panels")]
    pub panels: usize,
    #[serde(default = "abs_tol")]
    pub abs_tol: f64,
    #[serde(default = "rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "eps_cut")]
    pub eps_cut: f64,
    #[serde(default = "fd_step")]
    pub fd_step: f64,
    #[serde(default = "tolerance")]
    pub tolerance: f64,
}

impl Default for Averaging {
    fn default() -> Self {
        toml::from_str("").expect("all averaging keys have defaults")
    }
}

impl Averaging {
    pub fn quad(&self) -> Result<QuadratureSpec> {
        let q = QuadratureSpec {
            rule: match self.rule {
                Rule::Adaptive => QuadRule::Adaptive {
                    max_intervals: self.max_intervals,
                },
                Rule::Simpson => QuadRule::Simpson { panels: self.panels },
            },
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            eps_cut: self.eps_cut,
        };
        q.validate()?;
        Ok(q)
    }
}

fn bootstrap() -> usize {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Study {
    pub n_list: Vec<f64>,
    pub t_end: f64,
    pub dt: f64,
    pub n_traj: usize,
    pub seed: u64,
    #[serde(default = "origin")]
    pub initial: Vec<f64>,
    #[serde(default = "bootstrap")]
    pub bootstrap: usize,
}

fn origin() -> Vec<f64> {
    vec![0.0, 0.0]
}

fn directory() -> String {
    "out".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default = "directory")]
    pub directory: String,
}

impl Default for Output {
    fn default() -> Self {
        Self { directory: directory() }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        if cfg.slow_fast.is_some() && cfg.averaging.is_none() {
            cfg.averaging = Some(Averaging::default());
        }
        if let (Some(p), Some(s)) = (&cfg.problem, cfg.simulation.as_mut()) {
            if s.initial.is_empty() {
                s.initial = vec![0.0; p.dim];
            }
        }
        Ok(cfg)
    }

    pub fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T> {
        section.as_ref().with_context(|| format!("configuration has no [{name}] section"))
    }

    pub fn convention(&self) -> Result<NoiseConvention> {
        Self::require(&self.convention, "convention")?.resolve().context("convention")
    }

    pub fn to_manifest(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHECK: &str = r#"
convention = "klimontovich"
[problem]
dim = 1
potential = "x^2/2"
sigma = { diagonal = ["2 + sin(x)"] }
[gibbs]
measure = "flat"
[grid]
lower = [-3.0]
upper = [3.0]
points = [61]
"#;

    #[test]
    fn parses_and_resolves_defaults() {
        let cfg = RunConfig::parse(CHECK).unwrap();
        assert_eq!(cfg.convention().unwrap(), NoiseConvention::KLIMONTOVICH);
        assert_eq!(cfg.grid.as_ref().unwrap().tolerance, 1e-6);
        assert_eq!(cfg.gibbs.as_ref().unwrap().beta, 1.0);
        let again = RunConfig::parse(&cfg.to_manifest().unwrap()).unwrap();
        assert_eq!(again.to_manifest().unwrap(), cfg.to_manifest().unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = CHECK.replace("measure = \"flat\"", "measure = \"flat\"\nbta = 2.0");
        let err = RunConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("bta"), "{err}");
    }

    #[test]
    fn simulation_defaults_follow_lag_and_dim() {
        let text = format!("{CHECK}\n[simulation]\ndt = 0.001\nt_end = 50.0\nn_traj = 10\nseed = 1\n");
        let cfg = RunConfig::parse(&text).unwrap();
        let s = cfg.simulation.unwrap();
        assert_eq!(s.save_stride, 100);
        assert_eq!(s.burn_in, 10.0);
        assert_eq!(s.initial, vec![0.0]);
    }

    #[test]
    fn sigma_needs_exactly_one_form() {
        let s = SigmaSpec {
            entries: None,
            diagonal: None,
            rotated_diagonal: None,
        };
        assert!(s.matrix(1, 1, "sigma").is_err());
    }
}
