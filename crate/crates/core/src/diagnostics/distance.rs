use crate::error::{Error, Result};

use super::density::EmpiricalDensity;

const MIN_SAMPLES: usize = 100;

fn sorted(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    if samples.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("sample contains NaN".into()));
    }
    if samples.len() < MIN_SAMPLES {
        log::warn!("distance computed from only {} samples", samples.len());
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// `sup_x |F_N(x) − F(x)|` for raw samples. Left limits of the target are
/// taken one ulp below each sample, so step-function targets are exact.
pub fn ks_distance(samples: &[f64], mut cdf: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let s = sorted(samples)?;
    let n = s.len() as f64;
    let mut worst: f64 = 0.0;
    let mut i = 0;
    while i < s.len() {
        let x = s[i];
        let mut j = i;
        while j < s.len() && s[j] == x {
            j += 1;
        }
        let (left, right) = (cdf(x.next_down())?, cdf(x)?);
        worst = worst.max((j as f64 / n - right).abs()).max((i as f64 / n - left).abs());
        i = j;
    }
    Ok(worst.min(1.0))
}

/// Kolmogorov–Smirnov distance evaluated at the histogram edges.
pub fn ks_distance_binned(hist: &EmpiricalDensity, mut cdf: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let (f0, f1) = (cdf(hist.edges[0])?, cdf(hist.edges[hist.edges.len() - 1])?);
    let span = f1 - f0;
    if !(span > 0.0) {
        return Err(Error::Degenerate("target has no mass on the histogram range".into()));
    }
    let mut acc = 0usize;
    let mut worst: f64 = 0.0;
    for (c, e) in hist.counts.iter().zip(&hist.edges[1..]) {
        acc += c;
        let target = (cdf(*e)? - f0) / span;
        worst = worst.max((acc as f64 / hist.total as f64 - target).abs());
    }
    Ok(worst.min(1.0))
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    let (a, b) = (sorted(a)?, sorted(b)?);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut worst: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        worst = worst.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(worst)
}

// Four-point Gauss–Legendre on [0, 1].
const GL_NODES: [f64; 4] = [0.069_431_844_202_973_71, 0.330_009_478_207_571_9, 0.669_990_521_792_428_1, 0.930_568_155_797_026_3];
const GL_WEIGHTS: [f64; 4] = [0.173_927_422_568_726_9, 0.326_072_577_431_273_1, 0.326_072_577_431_273_1, 0.173_927_422_568_726_9];

/// `∫₀¹ |F_N⁻¹(u) − F⁻¹(u)| du` with the target quantile integrated by
/// Gauss–Legendre on every empirical quantile step.
pub fn wasserstein1(samples: &[f64], mut quantile: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let s = sorted(samples)?;
    let n = s.len() as f64;
    let mut acc = 0.0;
    for (i, &x) in s.iter().enumerate() {
        for (u, w) in GL_NODES.iter().zip(&GL_WEIGHTS) {
            acc += w * (x - quantile((i as f64 + u) / n)?).abs();
        }
    }
    Ok(acc / n)
}

/// `∫ |F_a − F_b| dx` between two empirical laws.
pub fn wasserstein1_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    let (a, b) = (sorted(a)?, sorted(b)?);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut acc = 0.0;
    let mut prev = a[0].min(b[0]);
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        acc += (i as f64 / na - j as f64 / nb).abs() * (x - prev);
        prev = x;
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
    }
    Ok(acc)
}
