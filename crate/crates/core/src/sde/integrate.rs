use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::system::{ItoCoefficients, SdeSystem};
use crate::error::{Error, Result};
use crate::reversibility::NoiseConvention;

/// States with Euclidean norm above this abort the trajectory.
pub const DIVERGENCE_NORM: f64 = 1e8;
/// Largest tolerated fraction of rejected trajectories.
pub const MAX_REJECTED_FRACTION: f64 = 0.01;

/// Every state of a single path, row-major `(n_steps + 1) × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub dt: f64,
    pub states: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// Component `c` of every state.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.states.iter().skip(c).step_by(self.dim).copied().collect()
    }
}

fn guard(x: &[f64], step: usize) -> Result<()> {
    let norm2: f64 = x.iter().map(|v| v * v).sum();
    if norm2.is_finite() && norm2 <= DIVERGENCE_NORM * DIVERGENCE_NORM {
        Ok(())
    } else {
        Err(Error::Diverged {
            step,
            point: x.to_vec(),
        })
    }
}

fn require_ito<S: ItoCoefficients>(system: &S) -> Result<()> {
    if system.is_ito() {
        Ok(())
    } else {
        Err(Error::InvalidArgument("Euler–Maruyama needs an Itô system; call to_ito first".into()))
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")))
    }
}

struct Stepper<'a, S: ItoCoefficients> {
    system: &'a S,
    ws: S::Workspace,
    drift: Vec<f64>,
    sigma: Vec<f64>,
}

impl<'a, S: ItoCoefficients> Stepper<'a, S> {
    fn new(system: &'a S) -> Self {
        let d = system.dim();
        Self {
            system,
            ws: system.workspace(),
            drift: vec![0.0; d],
            sigma: vec![0.0; d * d],
        }
    }

    /// `x ← x + B dt + √2 σ dW`.
    #[inline]
    fn step(&mut self, x: &mut [f64], dt: f64, dw: &[f64]) -> Result<()> {
        let d = x.len();
        self.system.coefficients(x, &mut self.drift, &mut self.sigma, &mut self.ws)?;
        for j in 0..d {
            let noise: f64 = (0..d).map(|l| self.sigma[j * d + l] * dw[l]).sum();
            x[j] += self.drift[j] * dt + std::f64::consts::SQRT_2 * noise;
        }
        Ok(())
    }
}

/// Fixed-step Euler–Maruyama on an Itô system.
pub fn euler_maruyama<S: ItoCoefficients, R: Rng>(
    system: &S,
    x0: &[f64],
    dt: f64,
    n_steps: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    require_ito(system)?;
    check_dt(dt)?;
    let d = system.dim();
    if x0.len() != d {
        return Err(Error::Dimension(format!("initial state has {} components, expected {d}", x0.len())));
    }
    let mut stepper = Stepper::new(system);
    let mut x = x0.to_vec();
    let mut dw = vec![0.0; d];
    let sdt = dt.sqrt();
    let mut states = Vec::with_capacity((n_steps + 1) * d);
    states.extend_from_slice(&x);
    for k in 0..n_steps {
        for w in dw.iter_mut() {
            *w = sdt * rng.sample::<f64, _>(StandardNormal);
        }
        stepper.step(&mut x, dt, &dw)?;
        guard(&x, k + 1)?;
        states.extend_from_slice(&x);
    }
    Ok(Trajectory { dim: d, dt, states })
}

/// Euler–Maruyama driven by given Wiener increments (row-major `n_steps × d`);
/// returns the final state.
pub fn euler_maruyama_increments<S: ItoCoefficients>(system: &S, x0: &[f64], dt: f64, dw: &[f64]) -> Result<Vec<f64>> {
    require_ito(system)?;
    check_dt(dt)?;
    let d = system.dim();
    if x0.len() != d || dw.len() % d.max(1) != 0 {
        return Err(Error::Dimension("increment buffer does not match the system dimension".into()));
    }
    let mut stepper = Stepper::new(system);
    let mut x = x0.to_vec();
    for (k, w) in dw.chunks_exact(d).enumerate() {
        stepper.step(&mut x, dt, w)?;
        guard(&x, k + 1)?;
    }
    Ok(x)
}

/// `n_steps × d` Wiener increments with variance `dt`.
pub fn brownian_increments<R: Rng>(rng: &mut R, n_steps: usize, d: usize, dt: f64) -> Vec<f64> {
    let s = dt.sqrt();
    (0..n_steps * d).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Sum consecutive blocks of `factor` increments.
pub fn coarsen_increments(dw: &[f64], d: usize, factor: usize) -> Vec<f64> {
    let steps = dw.len() / d;
    let mut out = vec![0.0; (steps / factor) * d];
    for k in 0..(steps / factor) * factor {
        for c in 0..d {
            out[(k / factor) * d + c] += dw[k * d + c];
        }
    }
    out
}

/// Stochastic Heun (predictor–corrector) for a Stratonovich system.
pub fn stochastic_heun<R: Rng>(system: &SdeSystem, x0: &[f64], dt: f64, n_steps: usize, rng: &mut R) -> Result<Trajectory> {
    if system.convention() != NoiseConvention::STRATONOVICH || system.correction_weight() != 0.0 {
        return Err(Error::InvalidArgument("stochastic Heun integrates Stratonovich systems only".into()));
    }
    check_dt(dt)?;
    let d = system.dim();
    let mut ws = system.workspace();
    let (mut b0, mut s0) = (vec![0.0; d], vec![0.0; d * d]);
    let (mut b1, mut s1) = (vec![0.0; d], vec![0.0; d * d]);
    let mut x = x0.to_vec();
    let mut pred = vec![0.0; d];
    let mut dw = vec![0.0; d];
    let sdt = dt.sqrt();
    let r2 = std::f64::consts::SQRT_2;
    let mut states = Vec::with_capacity((n_steps + 1) * d);
    states.extend_from_slice(&x);
    for k in 0..n_steps {
        for w in dw.iter_mut() {
            *w = sdt * rng.sample::<f64, _>(StandardNormal);
        }
        system.coefficients(&x, &mut b0, &mut s0, &mut ws)?;
        for j in 0..d {
            let n: f64 = (0..d).map(|l| s0[j * d + l] * dw[l]).sum();
            pred[j] = x[j] + b0[j] * dt + r2 * n;
        }
        system.coefficients(&pred, &mut b1, &mut s1, &mut ws)?;
        for j in 0..d {
            let n: f64 = (0..d).map(|l| (s0[j * d + l] + s1[j * d + l]) * dw[l]).sum();
            x[j] += 0.5 * (b0[j] + b1[j]) * dt + 0.5 * r2 * n;
        }
        guard(&x, k + 1)?;
        states.extend_from_slice(&x);
    }
    Ok(Trajectory { dim: d, dt, states })
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Point(Vec<f64>),
    /// Independent normal components.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

impl InitialState {
    pub fn dim(&self) -> usize {
        match self {
            InitialState::Point(p) => p.len(),
            InitialState::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            InitialState::Point(p) => out.copy_from_slice(p),
            InitialState::Gaussian { mean, std } => {
                for ((o, m), s) in out.iter_mut().zip(mean).zip(std) {
                    *o = m + s * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOptions {
    pub dt: f64,
    pub t_end: f64,
    pub n_traj: usize,
    pub seed: u64,
    /// Keep every `save_stride`-th step.
    pub save_stride: usize,
    /// Discard saved states before this time.
    pub save_from: f64,
    /// Worker threads; `None` uses the ambient rayon pool.
    pub threads: Option<usize>,
}

impl EnsembleOptions {
    pub fn new(dt: f64, t_end: f64, n_traj: usize, seed: u64) -> Self {
        Self {
            dt,
            t_end,
            n_traj,
            seed,
            save_stride: 1,
            save_from: 0.0,
            threads: None,
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    /// Step indices that are stored.
    pub fn saved_steps(&self) -> Vec<usize> {
        let first = ((self.save_from / self.dt) - 1e-9).ceil().max(0.0) as usize;
        (0..=self.n_steps())
            .filter(|k| k % self.save_stride == 0 && *k >= first)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub dim: usize,
    pub n_traj: usize,
    pub times: Vec<f64>,
    /// Index of each stored trajectory (rejected ones are skipped).
    pub traj_ids: Vec<usize>,
    /// Row-major `traj × saved × d`.
    pub states: Vec<f64>,
    pub seed: u64,
    pub dt: f64,
    pub rejected: usize,
}

impl EnsembleResult {
    pub fn n_saved(&self) -> usize {
        self.times.len()
    }

    pub fn n_accepted(&self) -> usize {
        self.traj_ids.len()
    }

    pub fn state(&self, traj: usize, save: usize) -> &[f64] {
        let base = (traj * self.n_saved() + save) * self.dim;
        &self.states[base..base + self.dim]
    }

    /// Component `c` at the last saved time, one value per trajectory.
    pub fn final_component(&self, c: usize) -> Vec<f64> {
        let last = self.n_saved() - 1;
        (0..self.n_accepted()).map(|t| self.state(t, last)[c]).collect()
    }

    /// Component `c` of every saved state with `t ≥ t_min`, pooled.
    pub fn pooled_component(&self, c: usize, t_min: f64) -> Vec<f64> {
        let keep: Vec<usize> = (0..self.n_saved()).filter(|&s| self.times[s] >= t_min).collect();
        let mut out = Vec::with_capacity(keep.len() * self.n_accepted());
        for t in 0..self.n_accepted() {
            for &s in &keep {
                out.push(self.state(t, s)[c]);
            }
        }
        out
    }

    /// Path of trajectory `traj` as a row-major `saved × d` slice.
    pub fn path(&self, traj: usize) -> &[f64] {
        let len = self.n_saved() * self.dim;
        &self.states[traj * len..(traj + 1) * len]
    }

    /// Columns `traj_id,t,x1..xd`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "traj_id,t")?;
        for c in 0..self.dim {
            write!(w, ",x{}", c + 1)?;
        }
        writeln!(w)?;
        for (t, id) in self.traj_ids.iter().enumerate() {
            for (s, time) in self.times.iter().enumerate() {
                write!(w, "{id},{time}")?;
                for v in self.state(t, s) {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// RNG for trajectory `j`: stream `j` of the ChaCha generator keyed by `seed`.
pub fn trajectory_rng(seed: u64, j: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j as u64);
    rng
}

pub(crate) fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Independent Euler–Maruyama paths with per-trajectory counter-based RNG
/// streams; output is independent of scheduling.
pub fn simulate_ensemble<S: ItoCoefficients>(
    system: &S,
    init: &InitialState,
    opts: &EnsembleOptions,
) -> Result<EnsembleResult> {
    require_ito(system)?;
    check_dt(opts.dt)?;
    if !(opts.t_end > 0.0) || opts.n_traj == 0 || opts.save_stride == 0 {
        return Err(Error::InvalidArgument("need T > 0, n_traj ≥ 1 and save_stride ≥ 1".into()));
    }
    let d = system.dim();
    if init.dim() != d {
        return Err(Error::Dimension(format!("initial state has {} components, expected {d}", init.dim())));
    }
    let n_steps = opts.n_steps();
    let saved = opts.saved_steps();
    if saved.is_empty() {
        return Err(Error::InvalidArgument("no states fall in the save window".into()));
    }
    let run = |j: usize| -> Result<Vec<f64>> {
        let mut rng = trajectory_rng(opts.seed, j);
        let mut stepper = Stepper::new(system);
        let mut x = vec![0.0; d];
        init.sample(&mut rng, &mut x);
        let mut dw = vec![0.0; d];
        let sdt = opts.dt.sqrt();
        let mut out = Vec::with_capacity(saved.len() * d);
        let mut next = 0;
        for k in 0..=n_steps {
            if next < saved.len() && saved[next] == k {
                out.extend_from_slice(&x);
                next += 1;
            }
            if k == n_steps {
                break;
            }
            for w in dw.iter_mut() {
                *w = sdt * rng.sample::<f64, _>(StandardNormal);
            }
            stepper.step(&mut x, opts.dt, &dw)?;
            guard(&x, k + 1)?;
        }
        Ok(out)
    };
    let results: Vec<Result<Vec<f64>>> = in_pool(opts.threads, || (0..opts.n_traj).into_par_iter().map(run).collect())?;
    let mut states = Vec::with_capacity(opts.n_traj * saved.len() * d);
    let mut traj_ids = Vec::with_capacity(opts.n_traj);
    let mut rejected = 0;
    for (j, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => {
                states.extend(s);
                traj_ids.push(j);
            }
            Err(e) => {
                if rejected == 0 {
                    log::warn!("trajectory {j} rejected: {e}");
                }
                rejected += 1;
            }
        }
    }
    if rejected as f64 > MAX_REJECTED_FRACTION * opts.n_traj as f64 {
        return Err(Error::Rejection {
            rejected,
            total: opts.n_traj,
        });
    }
    Ok(EnsembleResult {
        dim: d,
        n_traj: opts.n_traj,
        times: saved.iter().map(|&k| k as f64 * opts.dt).collect(),
        traj_ids,
        states,
        seed: opts.seed,
        dt: opts.dt,
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprfield::{parse_expression, FieldSet};
    use crate::sde::system::DriftSpec;

    fn ou(sigma: &str) -> SdeSystem {
        let f = FieldSet::parse_diagonal("x^2/2", &[sigma]).unwrap();
        SdeSystem::new(f, DriftSpec::Explicit(vec![parse_expression("-x", 1).unwrap()]), NoiseConvention::ITO).unwrap()
    }

    #[test]
    fn frozen_system_stays_put() {
        let f = FieldSet::parse_diagonal("0", &["0"]).unwrap();
        let sys = SdeSystem::new(f, DriftSpec::Explicit(vec![parse_expression("0", 1).unwrap()]), NoiseConvention::ITO)
            .unwrap();
        let t = euler_maruyama(&sys, &[0.7], 0.1, 20, &mut trajectory_rng(1, 0)).unwrap();
        assert!(t.component(0).iter().all(|&v| v == 0.7));
    }

    #[test]
    fn deterministic_decay() {
        let t = euler_maruyama(&ou("0"), &[1.0], 0.01, 100, &mut trajectory_rng(1, 0)).unwrap();
        let x = t.last()[0];
        assert!((x - 0.99f64.powi(100)).abs() < 1e-14);
        assert!((x / (-1f64).exp() - 1.0).abs() < 0.006);
    }

    #[test]
    fn ensemble_of_one_matches_single_path() {
        let sys = ou("1");
        let mut opts = EnsembleOptions::new(0.01, 1.0, 1, 9);
        opts.save_stride = 1;
        let e = simulate_ensemble(&sys, &InitialState::Point(vec![0.5]), &opts).unwrap();
        let t = euler_maruyama(&sys, &[0.5], 0.01, 100, &mut trajectory_rng(9, 0)).unwrap();
        assert_eq!(e.path(0), &t.states[..]);
    }

    #[test]
    fn non_ito_rejected() {
        let sys = SdeSystem::gibbs(FieldSet::parse_diagonal("x^2/2", &["1"]).unwrap(), NoiseConvention::KLIMONTOVICH);
        assert!(euler_maruyama(&sys, &[0.0], 0.1, 1, &mut trajectory_rng(0, 0)).is_err());
    }

    #[test]
    fn save_window() {
        let mut o = EnsembleOptions::new(0.1, 1.0, 1, 0);
        o.save_stride = 2;
        o.save_from = 0.5;
        assert_eq!(o.saved_steps(), vec![6, 8, 10]);
    }

    #[test]
    fn divergence_rejects() {
        let f = FieldSet::parse_diagonal("0", &["0"]).unwrap();
        let sys = SdeSystem::new(f, DriftSpec::Explicit(vec![parse_expression("x^2", 1).unwrap()]), NoiseConvention::ITO)
            .unwrap();
        let opts = EnsembleOptions::new(0.1, 10.0, 4, 0);
        let err = simulate_ensemble(&sys, &InitialState::Point(vec![2.0]), &opts).unwrap_err();
        assert!(matches!(err, Error::Rejection { rejected: 4, total: 4 }));
    }

    #[test]
    fn coarsening_sums_blocks() {
        let dw = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        assert_eq!(coarsen_increments(&dw, 2, 2), vec![4.0, 6.0, 12.0, 14.0]);
    }

    #[test]
    fn heun_on_constant_noise_matches_em() {
        let f = FieldSet::parse_diagonal("x^2/2", &["0.5"]).unwrap();
        let strat = SdeSystem::gibbs(f, NoiseConvention::STRATONOVICH);
        let h = stochastic_heun(&strat, &[1.0], 0.01, 10, &mut trajectory_rng(3, 0)).unwrap();
        let e = euler_maruyama(&strat.to_ito(), &[1.0], 0.01, 10, &mut trajectory_rng(3, 0)).unwrap();
        // Linear drift: Heun averages the drift, so the paths differ by O(dt²) per step.
        assert!((h.last()[0] - e.last()[0]).abs() < 1e-3);
    }
}
