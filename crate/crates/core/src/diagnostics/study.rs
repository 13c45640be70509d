use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::averaging::{average_on_grid, linspace};
use crate::error::{Error, Result};
use crate::quadrature::QuadratureSpec;
use crate::sde::{in_pool, simulate_ensemble, trajectory_rng, EnsembleOptions, InitialState, SlowFastSystem};

use super::distance::wasserstein1_two_sample;

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOptions {
    pub n_list: Vec<f64>,
    pub t_end: f64,
    pub dt: f64,
    pub n_traj: usize,
    pub seed: u64,
    /// Joint initial point `(x, y)`; the effective process starts at `x`.
    pub initial: Vec<f64>,
    /// Slow box and grid size for the tabulated effective coefficients.
    pub slow_box: (f64, f64),
    pub grid_points: usize,
    pub quad: QuadratureSpec,
    pub bootstrap: usize,
    pub threads: Option<usize>,
}

impl StudyOptions {
    pub fn new(n_list: Vec<f64>, t_end: f64, dt: f64, n_traj: usize, seed: u64) -> Self {
        Self {
            n_list,
            t_end,
            dt,
            n_traj,
            seed,
            initial: vec![0.0, 0.0],
            slow_box: (-6.0, 6.0),
            grid_points: 101,
            quad: QuadratureSpec::default(),
            bootstrap: 200,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: f64,
    pub w1: f64,
    /// Bootstrap standard deviation of `w1`.
    pub w1_err: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    /// `W1` between two independent effective ensembles of the same size.
    pub noise_floor: f64,
    pub noise_floor_err: f64,
    pub t_end: f64,
    pub dt: f64,
    pub n_traj: usize,
    pub seed: u64,
    pub max_identity_residual: f64,
}

impl ConvergenceStudy {
    /// `d(n_{k+1}) ≤ d(n_k) + err_k + err_{k+1}` for consecutive rows.
    pub fn is_nonincreasing_within_errors(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].w1 <= w[0].w1 + w[0].w1_err + w[1].w1_err)
    }

    /// Columns `n,w1,w1_err,noise_floor,samples`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n,w1,w1_err,noise_floor,samples")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{}", r.n, r.w1, r.w1_err, self.noise_floor, r.samples)?;
        }
        Ok(())
    }

    pub fn to_record(&self) -> String {
        let mut s = format!(
            "t_end = {}\ndt = {}\nn_traj = {}\nseed = {}\nnoise_floor = {}\nnoise_floor_err = {}\n\
             max_identity_residual = {:e}\nnonincreasing_within_errors = {}\n",
            self.t_end,
            self.dt,
            self.n_traj,
            self.seed,
            self.noise_floor,
            self.noise_floor_err,
            self.max_identity_residual,
            self.is_nonincreasing_within_errors()
        );
        for r in &self.rows {
            s.push_str(&format!("w1[n={}] = {} ± {}\n", r.n, r.w1, r.w1_err));
        }
        s
    }
}

/// Seed for one independent stream of the study.
fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn bootstrap_std(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<f64> {
    if resamples < 2 {
        return Ok(0.0);
    }
    let mut rng = trajectory_rng(seed, 0);
    let mut vals = Vec::with_capacity(resamples);
    let mut ra = vec![0.0; a.len()];
    let mut rb = vec![0.0; b.len()];
    for _ in 0..resamples {
        for v in ra.iter_mut() {
            *v = a[rng.random_range(0..a.len())];
        }
        for v in rb.iter_mut() {
            *v = b[rng.random_range(0..b.len())];
        }
        vals.push(wasserstein1_two_sample(&ra, &rb)?);
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
    Ok(var.sqrt())
}

/// `W1(X^n_T, X̄_T)` for each `n`, with `X̄` the tabulated effective SDE.
pub fn averaging_convergence_study(sf: &SlowFastSystem, opts: &StudyOptions) -> Result<ConvergenceStudy> {
    if sf.slow_dim != 1 || sf.fast_dim != 1 {
        return Err(Error::Dimension("the convergence study compares one slow and one fast variable".into()));
    }
    if opts.n_list.is_empty() || opts.initial.len() != 2 {
        return Err(Error::InvalidArgument("need a non-empty n list and a two-component initial point".into()));
    }
    let n_max = opts.n_list.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let probes: Vec<Vec<f64>> = linspace(opts.slow_box.0, opts.slow_box.1, 11)
        .into_iter()
        .flat_map(|x| linspace(-3.0, 3.0, 7).into_iter().map(move |y| vec![x, y]))
        .chain(std::iter::once(opts.initial.clone()))
        .collect();
    sf.with_n(n_max)?.require_stable(opts.dt, &probes)?;

    in_pool(opts.threads, || {
        let grid = linspace(opts.slow_box.0, opts.slow_box.1, opts.grid_points);
        let table = average_on_grid(sf, &grid, &opts.quad)?;
        let effective = table.effective_sde()?;
        let ens_opts = |tag: u64| EnsembleOptions {
            save_stride: 1,
            save_from: opts.t_end,
            ..EnsembleOptions::new(opts.dt, opts.t_end, opts.n_traj, derive_seed(opts.seed, tag))
        };
        let start = InitialState::Point(vec![opts.initial[0]]);
        let reference = simulate_ensemble(&effective, &start, &ens_opts(0))?.final_component(0);
        let second = simulate_ensemble(&effective, &start, &ens_opts(1))?.final_component(0);
        let noise_floor = wasserstein1_two_sample(&reference, &second)?;
        let noise_floor_err = bootstrap_std(&reference, &second, opts.bootstrap, derive_seed(opts.seed, 2))?;
        let rows = opts
            .n_list
            .par_iter()
            .enumerate()
            .map(|(i, &n)| -> Result<ConvergenceRow> {
                let tag = 16 + 2 * i as u64;
                let system = sf.with_n(n)?.assemble()?.to_ito();
                let slow = simulate_ensemble(&system, &InitialState::Point(opts.initial.clone()), &ens_opts(tag))?
                    .final_component(0);
                Ok(ConvergenceRow {
                    n,
                    w1: wasserstein1_two_sample(&slow, &reference)?,
                    w1_err: bootstrap_std(&slow, &reference, opts.bootstrap, derive_seed(opts.seed, tag + 1))?,
                    samples: slow.len(),
                })
            })
            .collect::<Vec<_>>()
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(ConvergenceStudy {
            rows,
            noise_floor,
            noise_floor_err,
            t_end: opts.t_end,
            dt: opts.dt,
            n_traj: opts.n_traj,
            seed: opts.seed,
            max_identity_residual: table.max_identity_residual(),
        })
    })?
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sf(v: &str, s1: &str) -> SlowFastSystem {
        SlowFastSystem::parse(1, 1, v, &[vec![s1.to_string()]], &[vec!["1".to_string()]], 1.0).unwrap()
    }

    #[test]
    fn stiffness_guard_refuses_large_steps() {
        let opts = StudyOptions::new(vec![10.0, 1000.0], 1.0, 1e-3, 100, 1);
        assert!(matches!(
            averaging_convergence_study(&sf("(x^2 + y^2 + x*y)/2", "1"), &opts),
            Err(Error::Stiffness { .. })
        ));
    }

    #[test]
    fn decoupled_system_is_at_noise_floor() {
        let mut opts = StudyOptions::new(vec![1.0, 10.0], 2.0, 2e-3, 2000, 7);
        opts.bootstrap = 50;
        let s = averaging_convergence_study(&sf("(x^2 + y^2)/2", "2 + sin(x)"), &opts).unwrap();
        for r in &s.rows {
            assert!(r.w1 < s.noise_floor + 4.0 * (r.w1_err + s.noise_floor_err), "{}", s.to_record());
        }
    }

    #[test]
    fn seeds_are_distinct() {
        let seeds: Vec<u64> = (0..20).map(|t| derive_seed(5, t)).collect();
        let mut sorted = seeds.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), seeds.len());
    }
}
