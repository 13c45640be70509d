use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sde::{in_pool, trajectory_rng, EnsembleResult};

/// Rectangular bins, first coordinate slowest in the flat index.
#[derive(Debug, Clone, PartialEq)]
pub struct BinSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub bins: Vec<usize>,
}

impl BinSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, bins: Vec<usize>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != bins.len() || lower.is_empty() {
            return Err(Error::Dimension("bin box and counts must share one dimension".into()));
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(b > a)) || bins.contains(&0) {
            return Err(Error::InvalidArgument("bins need lower < upper and at least one bin per axis".into()));
        }
        Ok(Self { lower, upper, bins })
    }

    pub fn uniform(lower: f64, upper: f64, bins: usize, dim: usize) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim], vec![bins; dim])
    }

    pub fn dim(&self) -> usize {
        self.bins.len()
    }

    pub fn n_bins(&self) -> usize {
        self.bins.iter().product()
    }

    /// Flat bin index, `None` outside the box.
    pub fn index(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for k in 0..self.dim() {
            let (a, b, n) = (self.lower[k], self.upper[k], self.bins[k]);
            if !(x[k] >= a && x[k] <= b) {
                return None;
            }
            let i = (((x[k] - a) / (b - a) * n as f64) as usize).min(n - 1);
            idx = idx * n + i;
        }
        Some(idx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceOptions {
    /// Minimum `n_ij + n_ji` for a bin pair to count.
    pub floor: usize,
    /// Time-reversal resamples for the null level.
    pub resamples: usize,
    /// Upper bound on independently flipped units; paths are grouped
    /// contiguously when there are more.
    pub max_units: usize,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for BalanceOptions {
    fn default() -> Self {
        Self {
            floor: 50,
            resamples: 200,
            max_units: 4096,
            seed: 0,
            threads: None,
        }
    }
}

/// Outcome of the two-time bin symmetry test.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceReport {
    pub lag: f64,
    pub lag_steps: usize,
    pub n_bins: usize,
    pub floor: usize,
    /// Bin pairs `i < j` passing the floor.
    pub eligible_pairs: usize,
    /// All counted transitions, diagonal included.
    pub transitions: usize,
    /// `max |n_ij − n_ji| / transitions` over eligible pairs.
    pub max_flux_asymmetry: f64,
    pub argmax_bins: (usize, usize),
    /// `√(n_ij + n_ji) / transitions` at the argmax pair.
    pub binomial_se: f64,
    /// Mean of the statistic under random time reversal of each unit.
    pub null_level: f64,
    pub null_q95: f64,
    pub resamples: usize,
    pub units: usize,
}

impl BalanceReport {
    pub fn within_null(&self, factor: f64) -> bool {
        self.max_flux_asymmetry <= factor * self.null_level
    }

    pub fn to_record(&self) -> String {
        format!(
            "lag = {}\nlag_steps = {}\nn_bins = {}\nfloor = {}\neligible_pairs = {}\ntransitions = {}\n\
             max_flux_asymmetry = {:e}\nargmax_bins = {} {}\nbinomial_se = {:e}\nnull_level = {:e}\n\
             null_q95 = {:e}\nresamples = {}\nunits = {}\n",
            self.lag,
            self.lag_steps,
            self.n_bins,
            self.floor,
            self.eligible_pairs,
            self.transitions,
            self.max_flux_asymmetry,
            self.argmax_bins.0,
            self.argmax_bins.1,
            self.binomial_se,
            self.null_level,
            self.null_q95,
            self.resamples,
            self.units
        )
    }
}

fn pair_key(a: usize, b: usize, n_bins: usize) -> (u64, i64) {
    if a < b {
        ((a * n_bins + b) as u64, 1)
    } else {
        ((b * n_bins + a) as u64, -1)
    }
}

/// Symmetry test of the pooled `(X_t, X_{t+τ})` bin counts over several
/// stationary paths (each flattened, `dim` values per state).
pub fn detailed_balance_paths(
    paths: &[&[f64]],
    bins: &BinSpec,
    lag_steps: usize,
    lag: f64,
    opts: &BalanceOptions,
) -> Result<BalanceReport> {
    let d = bins.dim();
    let n_bins = bins.n_bins();
    if lag_steps == 0 || paths.is_empty() || opts.resamples == 0 || opts.max_units == 0 {
        return Err(Error::InvalidArgument("need a positive lag, at least one path and one resample".into()));
    }
    let mut transitions = 0usize;
    let mut per_path: Vec<HashMap<u64, i64>> = Vec::with_capacity(paths.len());
    let mut totals: HashMap<u64, (i64, usize)> = HashMap::new();
    for p in paths {
        if p.len() % d != 0 {
            return Err(Error::Dimension(format!("path length {} is not a multiple of {d}", p.len())));
        }
        let states = p.len() / d;
        if states <= 100 * lag_steps {
            return Err(Error::InvalidArgument(format!(
                "path of {states} states is too short for a lag of {lag_steps} steps"
            )));
        }
        let idx: Vec<Option<usize>> = p.chunks_exact(d).map(|x| bins.index(x)).collect();
        let mut net: HashMap<u64, i64> = HashMap::new();
        for (a, b) in idx.iter().zip(&idx[lag_steps..]) {
            let (Some(a), Some(b)) = (a, b) else { continue };
            transitions += 1;
            if a == b {
                continue;
            }
            let (k, s) = pair_key(*a, *b, n_bins);
            *net.entry(k).or_default() += s;
            let t = totals.entry(k).or_default();
            t.0 += s;
            t.1 += 1;
        }
        per_path.push(net);
    }
    let mut eligible: Vec<(u64, i64, usize)> = totals
        .iter()
        .filter(|(_, &(_, total))| total >= opts.floor)
        .map(|(&k, &(net, total))| (k, net, total))
        .collect();
    if eligible.is_empty() || transitions == 0 {
        return Err(Error::Degenerate(format!(
            "no pair of distinct bins reaches {} transitions; the trajectory does not move between bins",
            opts.floor
        )));
    }
    eligible.sort_unstable_by_key(|e| e.0);
    let slot: HashMap<u64, usize> = eligible.iter().enumerate().map(|(i, e)| (e.0, i)).collect();
    let n = transitions as f64;
    let (best_idx, best) = eligible
        .iter()
        .enumerate()
        .map(|(i, e)| (i, e.1.unsigned_abs()))
        .fold((0, 0), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let (key, _, total_at) = eligible[best_idx];

    // Units flipped together under the null; contiguous groups of paths.
    let units = paths.len().min(opts.max_units);
    let mut unit_nets: Vec<HashMap<usize, i64>> = vec![HashMap::new(); units];
    for (i, net) in per_path.iter().enumerate() {
        let u = i * units / paths.len();
        for (k, v) in net {
            if let Some(&s) = slot.get(k) {
                *unit_nets[u].entry(s).or_default() += v;
            }
        }
    }
    let unit_nets: Vec<Vec<(usize, i64)>> = unit_nets
        .into_iter()
        .map(|m| {
            let mut v: Vec<(usize, i64)> = m.into_iter().filter(|e| e.1 != 0).collect();
            v.sort_unstable();
            v
        })
        .collect();
    let e = eligible.len();
    let mut null: Vec<f64> = in_pool(opts.threads, || {
        (0..opts.resamples)
            .into_par_iter()
            .map(|r| {
                let mut rng = trajectory_rng(opts.seed, r);
                let mut acc = vec![0i64; e];
                for unit in &unit_nets {
                    let s = if rng.random::<bool>() { 1 } else { -1 };
                    for &(k, v) in unit {
                        acc[k] += s * v;
                    }
                }
                acc.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0) as f64 / n
            })
            .collect()
    })?;
    let null_level = null.iter().sum::<f64>() / null.len() as f64;
    null.sort_by(f64::total_cmp);
    let q = ((0.95 * null.len() as f64).ceil() as usize).clamp(1, null.len()) - 1;
    Ok(BalanceReport {
        lag,
        lag_steps,
        n_bins,
        floor: opts.floor,
        eligible_pairs: e,
        transitions,
        max_flux_asymmetry: best as f64 / n,
        argmax_bins: ((key / n_bins as u64) as usize, (key % n_bins as u64) as usize),
        binomial_se: (total_at as f64).sqrt() / n,
        null_level,
        null_q95: null[q],
        resamples: opts.resamples,
        units,
    })
}

/// [`detailed_balance_paths`] over the saved states of an ensemble with
/// `t ≥ t_min`; `lag` must be a multiple of the save spacing.
pub fn detailed_balance_ensemble(
    ens: &EnsembleResult,
    bins: &BinSpec,
    lag: f64,
    t_min: f64,
    opts: &BalanceOptions,
) -> Result<BalanceReport> {
    if bins.dim() != ens.dim {
        return Err(Error::Dimension(format!("bins are {}-dimensional, ensemble is {}", bins.dim(), ens.dim)));
    }
    if ens.n_saved() < 2 {
        return Err(Error::InvalidArgument("ensemble keeps fewer than two states per path".into()));
    }
    let spacing = ens.times[1] - ens.times[0];
    let steps = (lag / spacing).round();
    if !(steps >= 1.0) || (steps * spacing - lag).abs() > 1e-9 * lag.max(spacing) {
        return Err(Error::InvalidArgument(format!("lag {lag} is not a multiple of the save spacing {spacing}")));
    }
    let first = ens.times.partition_point(|&t| t < t_min - 1e-12);
    let paths: Vec<&[f64]> = (0..ens.n_accepted()).map(|j| &ens.path(j)[first * ens.dim..]).collect();
    detailed_balance_paths(&paths, bins, steps as usize, lag, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut x = 0.0;
        let s = (1.0 - phi * phi).sqrt();
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x = phi * x + s * z;
                x
            })
            .collect()
    }

    #[test]
    fn reversible_chain_sits_at_null_level() {
        let paths: Vec<Vec<f64>> = (0..200).map(|s| ar1(2000, 0.9, s)).collect();
        let refs: Vec<&[f64]> = paths.iter().map(|p| p.as_slice()).collect();
        let bins = BinSpec::uniform(-3.0, 3.0, 20, 1).unwrap();
        let r = detailed_balance_paths(&refs, &bins, 1, 1.0, &BalanceOptions::default()).unwrap();
        assert!(r.within_null(3.0), "{}", r.to_record());
        assert!(r.max_flux_asymmetry >= 0.0);
    }

    #[test]
    fn circulating_chain_is_detected() {
        // Deterministic cycle 0 → 1 → 2 → 0 with noise-free rotation.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let paths: Vec<Vec<f64>> = (0..50)
            .map(|_| {
                let mut s: usize = rng.random_range(0..3);
                (0..500)
                    .map(|_| {
                        s = if rng.random::<f64>() < 0.8 { (s + 1) % 3 } else { s };
                        s as f64 + 0.5
                    })
                    .collect()
            })
            .collect();
        let refs: Vec<&[f64]> = paths.iter().map(|p| p.as_slice()).collect();
        let bins = BinSpec::uniform(0.0, 3.0, 3, 1).unwrap();
        let r = detailed_balance_paths(&refs, &bins, 1, 1.0, &BalanceOptions::default()).unwrap();
        assert!(r.max_flux_asymmetry > 5.0 * r.null_level, "{}", r.to_record());
    }

    #[test]
    fn frozen_path_is_degenerate() {
        let p = vec![0.1; 1000];
        let bins = BinSpec::uniform(-3.0, 3.0, 20, 1).unwrap();
        assert!(matches!(
            detailed_balance_paths(&[&p], &bins, 1, 0.1, &BalanceOptions::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn bin_index_is_row_major() {
        let b = BinSpec::new(vec![0.0, 0.0], vec![1.0, 2.0], vec![2, 4]).unwrap();
        assert_eq!(b.index(&[0.75, 1.9]), Some(7));
        assert_eq!(b.index(&[1.0, 0.0]), Some(4));
        assert_eq!(b.index(&[1.5, 0.0]), None);
    }
}
