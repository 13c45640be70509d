//! One-dimensional quadrature for vector-valued integrands: globally adaptive
//! 15-point Gauss–Kronrod and fixed composite Simpson.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// 7-point Gauss weights at XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuadRule {
    /// Bisect the worst interval until the Kronrod–Gauss difference meets
    /// the tolerances or `max_intervals` is reached.
    Adaptive { max_intervals: usize },
    /// Composite Simpson with an even number of panels.
    Simpson { panels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub rule: QuadRule,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Fast-variable truncation threshold on `e^{−(V − min V)}`.
    pub eps_cut: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            rule: QuadRule::Adaptive { max_intervals: 400 },
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            eps_cut: 1e-12,
        }
    }
}

impl QuadratureSpec {
    pub fn simpson(panels: usize) -> Self {
        Self {
            rule: QuadRule::Simpson { panels },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok_tol = self.abs_tol >= 0.0 && self.rel_tol >= 0.0 && (self.abs_tol > 0.0 || self.rel_tol > 0.0);
        if !ok_tol {
            return Err(Error::InvalidArgument("quadrature tolerances must be nonnegative and not both zero".into()));
        }
        if !(self.eps_cut > 0.0 && self.eps_cut < 1.0) {
            return Err(Error::InvalidArgument("eps_cut must lie in (0, 1)".into()));
        }
        match self.rule {
            QuadRule::Adaptive { max_intervals } if max_intervals == 0 => {
                Err(Error::InvalidArgument("max_intervals must be positive".into()))
            }
            QuadRule::Simpson { panels } if panels < 2 || panels % 2 != 0 => {
                Err(Error::InvalidArgument("Simpson panel count must be even and at least 2".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadResult {
    pub value: Vec<f64>,
    /// Componentwise error estimate (zero for fixed rules).
    pub error: Vec<f64>,
    pub evaluations: usize,
    pub converged: bool,
}

struct Segment {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: Vec<f64>,
}

fn kronrod<F>(f: &mut F, a: f64, b: f64, n: usize, buf: &mut [f64]) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: FnMut(f64, &mut [f64]) -> Result<()>,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut k = vec![0.0; n];
    let mut g = vec![0.0; n];
    f(c, buf)?;
    for i in 0..n {
        k[i] += WGK[7] * buf[i];
        g[i] += WG[3] * buf[i];
    }
    for j in 0..7 {
        let dx = h * XGK[j];
        for x in [c - dx, c + dx] {
            f(x, buf)?;
            for i in 0..n {
                k[i] += WGK[j] * buf[i];
                if j % 2 == 1 {
                    g[i] += WG[j / 2] * buf[i];
                }
            }
        }
    }
    let err = k.iter().zip(&g).map(|(k, g)| ((k - g) * h).abs()).collect();
    Ok((k.into_iter().map(|v| v * h).collect(), err))
}

/// `∫_a^b f` for an integrand writing `n` components into its output slice.
pub fn integrate_vec<F>(mut f: F, a: f64, b: f64, n: usize, spec: &QuadratureSpec) -> Result<QuadResult>
where
    F: FnMut(f64, &mut [f64]) -> Result<()>,
{
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidArgument("integration bounds must be finite".into()));
    }
    let mut buf = vec![0.0; n];
    if a == b {
        return Ok(QuadResult {
            value: vec![0.0; n],
            error: vec![0.0; n],
            evaluations: 0,
            converged: true,
        });
    }
    match spec.rule {
        QuadRule::Simpson { panels } => {
            let panels = panels.max(2) + panels % 2;
            let h = (b - a) / panels as f64;
            let mut acc = vec![0.0; n];
            for p in 0..=panels {
                let w = if p == 0 || p == panels {
                    1.0
                } else if p % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                f(a + h * p as f64, &mut buf)?;
                for i in 0..n {
                    acc[i] += w * buf[i];
                }
            }
            Ok(QuadResult {
                value: acc.into_iter().map(|v| v * h / 3.0).collect(),
                error: vec![0.0; n],
                evaluations: panels + 1,
                converged: true,
            })
        }
        QuadRule::Adaptive { max_intervals } => {
            let (value, error) = kronrod(&mut f, a, b, n, &mut buf)?;
            let mut segs = vec![Segment { a, b, value, error }];
            let mut evaluations = 15;
            loop {
                let mut total = vec![0.0; n];
                let mut err = vec![0.0; n];
                for s in &segs {
                    for i in 0..n {
                        total[i] += s.value[i];
                        err[i] += s.error[i];
                    }
                }
                let tol: Vec<f64> = total.iter().map(|t| spec.abs_tol.max(spec.rel_tol * t.abs())).collect();
                let done = err.iter().zip(&tol).all(|(e, t)| e <= t);
                if done || segs.len() >= max_intervals {
                    if !done {
                        log::warn!("adaptive quadrature on [{a}, {b}] stopped at {max_intervals} intervals");
                    }
                    return Ok(QuadResult {
                        value: total,
                        error: err,
                        evaluations,
                        converged: done,
                    });
                }
                let score = |s: &Segment| {
                    s.error
                        .iter()
                        .zip(&tol)
                        .map(|(e, t)| if *t > 0.0 { e / t } else { f64::INFINITY })
                        .fold(0.0, f64::max)
                };
                let worst = (0..segs.len())
                    .max_by(|&i, &j| score(&segs[i]).total_cmp(&score(&segs[j])))
                    .unwrap_or(0);
                let s = segs.swap_remove(worst);
                let m = 0.5 * (s.a + s.b);
                for (lo, hi) in [(s.a, m), (m, s.b)] {
                    let (value, error) = kronrod(&mut f, lo, hi, n, &mut buf)?;
                    segs.push(Segment { a: lo, b: hi, value, error });
                }
                evaluations += 30;
            }
        }
    }
}

/// Scalar convenience wrapper around [`integrate_vec`].
pub fn integrate<F>(mut f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let r = integrate_vec(
        |x, out| {
            out[0] = f(x)?;
            Ok(())
        },
        a,
        b,
        1,
        spec,
    )?;
    Ok(r.value[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_kronrod_polynomials_exact() {
        let spec = QuadratureSpec::default();
        let v = integrate(|x| Ok(x.powi(10)), -1.0, 2.0, &spec).unwrap();
        assert!((v - (2f64.powi(11) + 1.0) / 11.0).abs() < 1e-10);
    }

    #[test]
    fn adaptive_gaussian() {
        let spec = QuadratureSpec::default();
        let v = integrate(|x| Ok((-0.5 * x * x).exp()), -12.0, 12.0, &spec).unwrap();
        assert!((v - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn simpson_converges() {
        let spec = QuadratureSpec::simpson(2000);
        let v = integrate(|x| Ok(x.sin()), 0.0, std::f64::consts::PI, &spec).unwrap();
        assert!((v - 2.0).abs() < 1e-11);
    }

    #[test]
    fn vector_components_share_nodes() {
        let spec = QuadratureSpec::default();
        let r = integrate_vec(
            |x, out| {
                out[0] = 1.0;
                out[1] = x.exp();
                Ok(())
            },
            0.0,
            1.0,
            2,
            &spec,
        )
        .unwrap();
        assert!((r.value[0] - 1.0).abs() < 1e-14);
        assert!((r.value[1] - (1f64.exp() - 1.0)).abs() < 1e-13);
        assert!(r.converged);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(QuadratureSpec::simpson(3).validate().is_err());
        let mut s = QuadratureSpec::default();
        s.eps_cut = 0.0;
        assert!(s.validate().is_err());
    }
}
