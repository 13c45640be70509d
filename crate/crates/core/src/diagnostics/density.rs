use rand::Rng;

use crate::error::{Error, Result};
use crate::exprfield::FieldSet;
use crate::reversibility::{GibbsSpec, MeasureMode};

/// Boundary-to-peak density ratio above which mass outside the box is
/// suspected.
pub const BOUNDARY_WARN_RATIO: f64 = 1e-4;

/// Gibbs target tabulated on a box and normalised there.
#[derive(Debug, Clone)]
pub struct GibbsDensity {
    fields: FieldSet,
    gibbs: GibbsSpec,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Nodes per axis.
    pub resolution: usize,
    /// `∫_box` of the unnormalised density.
    pub normalization: f64,
    /// Largest density on the box boundary over the largest density.
    pub boundary_ratio: f64,
    /// Normalised density at the nodes, first coordinate slowest.
    pub values: Vec<f64>,
    /// CDF at the nodes (one dimension only).
    cdf_nodes: Option<Vec<f64>>,
}

fn unnormalized(fields: &FieldSet, gibbs: &GibbsSpec, x: &[f64]) -> Result<f64> {
    let v = fields.potential_value(x)?;
    let mut p = (-gibbs.beta * v).exp();
    if gibbs.mode == MeasureMode::Riemannian {
        // √ω_M = √det(M⁻¹) = 1/|det σ|
        let det = fields.sigma(x)?.determinant();
        if !(det.abs() > 0.0) {
            return Err(Error::SingularVolatility {
                point: x.to_vec(),
                det,
            });
        }
        p /= det.abs();
    }
    if !p.is_finite() {
        return Err(Error::Degenerate(format!("Gibbs weight is not finite at x = {x:?}")));
    }
    Ok(p)
}

fn axis(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

/// Tabulate `e^{−βV}` (flat) or `e^{−βV}√ω_M` (Riemannian) on the box with
/// `resolution` nodes per axis. One dimension uses composite Simpson with
/// exact midpoints; higher dimensions use the tensor trapezoid rule.
pub fn gibbs_density(
    fields: &FieldSet,
    gibbs: &GibbsSpec,
    lower: &[f64],
    upper: &[f64],
    resolution: usize,
) -> Result<GibbsDensity> {
    let d = fields.dim;
    if lower.len() != d || upper.len() != d {
        return Err(Error::Dimension(format!("box must have {d} components")));
    }
    if lower.iter().zip(upper).any(|(a, b)| !(b > a)) {
        return Err(Error::InvalidArgument("box needs lower < upper on every axis".into()));
    }
    if resolution < 3 {
        return Err(Error::InvalidArgument("resolution must be at least 3".into()));
    }
    let total = resolution.pow(d as u32);
    let mut values = Vec::with_capacity(total);
    let mut boundary_max: f64 = 0.0;
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    for _ in 0..total {
        for k in 0..d {
            x[k] = lower[k] + (upper[k] - lower[k]) * idx[k] as f64 / (resolution - 1) as f64;
        }
        let p = unnormalized(fields, gibbs, &x)?;
        if idx.iter().any(|&i| i == 0 || i == resolution - 1) {
            boundary_max = boundary_max.max(p);
        }
        values.push(p);
        for k in (0..d).rev() {
            idx[k] += 1;
            if idx[k] < resolution {
                break;
            }
            idx[k] = 0;
        }
    }
    let peak = values.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::Degenerate("Gibbs weight vanishes on the whole box".into()));
    }
    let (normalization, cdf_nodes) = if d == 1 {
        let h = (upper[0] - lower[0]) / (resolution - 1) as f64;
        let mut cdf = Vec::with_capacity(resolution);
        let mut acc = 0.0;
        cdf.push(0.0);
        for (i, a) in axis(lower[0], upper[0], resolution).enumerate().take(resolution - 1) {
            let mid = unnormalized(fields, gibbs, &[a + 0.5 * h])?;
            acc += h / 6.0 * (values[i] + 4.0 * mid + values[i + 1]);
            cdf.push(acc);
        }
        for c in cdf.iter_mut() {
            *c /= acc;
        }
        (acc, Some(cdf))
    } else {
        let cell: f64 = (0..d).map(|k| (upper[k] - lower[k]) / (resolution - 1) as f64).product();
        let mut acc = 0.0;
        let mut idx = vec![0usize; d];
        for v in &values {
            let w: f64 = idx.iter().map(|&i| if i == 0 || i == resolution - 1 { 0.5 } else { 1.0 }).product();
            acc += w * v;
            for k in (0..d).rev() {
                idx[k] += 1;
                if idx[k] < resolution {
                    break;
                }
                idx[k] = 0;
            }
        }
        (acc * cell, None)
    };
    let boundary_ratio = boundary_max / peak;
    if boundary_ratio > BOUNDARY_WARN_RATIO {
        log::warn!("Gibbs density on the box boundary is {boundary_ratio:e} of its peak; mass may lie outside the box");
    }
    for v in values.iter_mut() {
        *v /= normalization;
    }
    Ok(GibbsDensity {
        fields: fields.clone(),
        gibbs: *gibbs,
        lower: lower.to_vec(),
        upper: upper.to_vec(),
        resolution,
        normalization,
        boundary_ratio,
        values,
        cdf_nodes,
    })
}

impl GibbsDensity {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Normalised density at any point (zero outside the box).
    pub fn density(&self, x: &[f64]) -> Result<f64> {
        if x.iter().zip(self.lower.iter().zip(&self.upper)).any(|(v, (a, b))| v < a || v > b) {
            return Ok(0.0);
        }
        Ok(unnormalized(&self.fields, &self.gibbs, x)? / self.normalization)
    }

    fn cdf_table(&self) -> Result<&[f64]> {
        self.cdf_nodes
            .as_deref()
            .ok_or_else(|| Error::Dimension("CDF and quantiles are one-dimensional".into()))
    }

    fn node(&self, i: usize) -> f64 {
        self.lower[0] + (self.upper[0] - self.lower[0]) * i as f64 / (self.resolution - 1) as f64
    }

    /// CDF by linear interpolation between nodes.
    pub fn cdf(&self, t: f64) -> Result<f64> {
        let c = self.cdf_table()?;
        let (a, b) = (self.lower[0], self.upper[0]);
        if t <= a {
            return Ok(0.0);
        }
        if t >= b {
            return Ok(1.0);
        }
        let s = (t - a) / (b - a) * (self.resolution - 1) as f64;
        let i = (s.floor() as usize).min(self.resolution - 2);
        let f = s - i as f64;
        Ok(c[i] + f * (c[i + 1] - c[i]))
    }

    /// Inverse of [`GibbsDensity::cdf`].
    pub fn quantile(&self, u: f64) -> Result<f64> {
        let c = self.cdf_table()?;
        let u = u.clamp(0.0, 1.0);
        let i = c.partition_point(|&v| v < u).clamp(1, self.resolution - 1);
        let (c0, c1) = (c[i - 1], c[i]);
        let f = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        Ok(self.node(i - 1) + f * (self.node(i) - self.node(i - 1)))
    }

    /// Independent draws by inverse-CDF sampling.
    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> Result<Vec<f64>> {
        self.cdf_table()?;
        (0..n).map(|_| self.quantile(rng.random::<f64>())).collect()
    }
}

/// One-dimensional histogram normalised to unit mass over its range.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDensity {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub heights: Vec<f64>,
    /// Samples inside the range.
    pub total: usize,
    /// Samples outside the range.
    pub outside: usize,
}

impl EmpiricalDensity {
    pub fn from_samples(samples: &[f64], lower: f64, upper: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(upper > lower) {
            return Err(Error::InvalidArgument("histogram needs bins ≥ 1 and lower < upper".into()));
        }
        let width = (upper - lower) / bins as f64;
        let mut counts = vec![0usize; bins];
        let mut outside = 0;
        for &s in samples {
            if !(s >= lower && s <= upper) {
                outside += 1;
                continue;
            }
            let i = (((s - lower) / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidArgument("no samples inside the histogram range".into()));
        }
        let heights = counts.iter().map(|&c| c as f64 / (total as f64 * width)).collect();
        let edges = (0..=bins).map(|i| lower + width * i as f64).collect();
        Ok(Self {
            edges,
            counts,
            heights,
            total,
            outside,
        })
    }

    /// `∫ heights` over the range.
    pub fn mass(&self) -> f64 {
        self.heights
            .iter()
            .zip(self.edges.windows(2))
            .map(|(h, e)| h * (e[1] - e[0]))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn standard_normal_on_wide_box() {
        let f = FieldSet::parse_diagonal("x^2/2", &["1"]).unwrap();
        let g = gibbs_density(&f, &GibbsSpec::flat(), &[-6.0], &[6.0], 1201).unwrap();
        assert!((g.density(&[0.0]).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-8);
        assert!((g.cdf(0.0).unwrap() - 0.5).abs() < 1e-10);
        assert!((g.quantile(0.5).unwrap()).abs() < 1e-10);
        assert!(g.boundary_ratio < 1e-7);
    }

    #[test]
    fn riemannian_weight_divides_by_sigma() {
        let f = FieldSet::parse_diagonal("x^2/2", &["2 + sin(x)"]).unwrap();
        let g = gibbs_density(&f, &GibbsSpec::riemannian(), &[-8.0], &[8.0], 1601).unwrap();
        let ratio = g.density(&[1.0]).unwrap() / g.density(&[0.0]).unwrap();
        assert!((ratio - (-0.5f64).exp() * 2.0 / (2.0 + 1f64.sin())).abs() < 1e-12);
    }

    #[test]
    fn constant_potential_is_uniform() {
        let f = FieldSet::parse_diagonal("3", &["1", "1"]).unwrap();
        let g = gibbs_density(&f, &GibbsSpec::flat(), &[0.0, -1.0], &[2.0, 1.0], 11).unwrap();
        assert!(g.values.iter().all(|v| (v - 0.25).abs() < 1e-14));
        assert_eq!(g.boundary_ratio, 1.0);
        assert!(g.cdf(0.5).is_err());
    }

    #[test]
    fn histogram_mass_and_counts() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let s: Vec<f64> = (0..1000).map(|_| rng.random::<f64>() * 3.0 - 1.0).collect();
        let h = EmpiricalDensity::from_samples(&s, 0.0, 1.0, 7).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), h.total);
        assert_eq!(h.total + h.outside, 1000);
        assert!((h.mass() - 1.0).abs() < 1e-12);
    }
}
