use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;

use revsde_core::averaging::{
    average_on_grid, effective_diffusion, identity_check_fd, linspace, matrix_average_residual, spd_margin,
};
use revsde_core::diagnostics::{
    averaging_convergence_study, detailed_balance_ensemble, gibbs_density, ks_distance, wasserstein1,
    BalanceOptions, BinSpec, EmpiricalDensity, StudyOptions,
};
use revsde_core::reversibility::{classify, GridSpec};
use revsde_core::sde::{simulate_ensemble, EnsembleOptions, InitialState, SdeSystem};
use revsde_core::Error;

use crate::config::RunConfig;

/// Reversible at tolerance.
pub const EXIT_REVERSIBLE: u8 = 0;
/// Not reversible at tolerance.
pub const EXIT_NOT_REVERSIBLE: u8 = 2;

fn write_file(dir: &Path, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let path = dir.join(name);
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    body(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    Ok(())
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    write_file(dir, name, |w| w.write_all(text.as_bytes()))
}

pub fn check(cfg: &RunConfig, out: &Path) -> Result<u8> {
    let problem = RunConfig::require(&cfg.problem, "problem")?;
    let fields = problem.fields()?;
    let lambda = cfg.convention()?;
    let gibbs = RunConfig::require(&cfg.gibbs, "gibbs")?.spec()?;
    let g = RunConfig::require(&cfg.grid, "grid")?;
    let grid = GridSpec::new(g.lower.clone(), g.upper.clone(), g.points.clone())?;
    let verdict = classify(&fields, lambda, &gibbs, &grid, g.tolerance)?;
    let record = verdict.to_record();
    write_text(out, "verdict.txt", &record)?;
    print!("{record}");
    Ok(if verdict.reversible {
        EXIT_REVERSIBLE
    } else {
        EXIT_NOT_REVERSIBLE
    })
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<u8> {
    let problem = RunConfig::require(&cfg.problem, "problem")?;
    let sim = RunConfig::require(&cfg.simulation, "simulation")?;
    let fields = problem.fields()?;
    let lambda = cfg.convention()?;
    let gibbs = RunConfig::require(&cfg.gibbs, "gibbs")?.spec()?;
    let system = SdeSystem::new(fields.clone(), problem.drift()?, lambda)?.to_ito();
    let d = problem.dim;
    let init = match &sim.initial_std {
        None => InitialState::Point(sim.initial.clone()),
        Some(std) => InitialState::Gaussian {
            mean: sim.initial.clone(),
            std: std.clone(),
        },
    };
    let opts = EnsembleOptions {
        save_stride: sim.save_stride,
        ..EnsembleOptions::new(sim.dt, sim.t_end, sim.n_traj, sim.seed)
    };
    let ens = simulate_ensemble(&system, &init, &opts)?;
    if sim.write_ensemble {
        write_file(out, "ensemble.csv", |w| ens.write_csv(w))?;
    }
    let mut report = String::new();
    writeln!(report, "convention = {}", lambda.lambda())?;
    writeln!(report, "trajectories = {}", ens.n_accepted())?;
    writeln!(report, "rejected = {}", ens.rejected)?;
    writeln!(report, "burn_in = {}", sim.burn_in)?;

    if d == 1 {
        let target = gibbs_density(&fields, &gibbs, &[sim.target_lower], &[sim.target_upper], sim.target_resolution)?;
        let pooled = ens.pooled_component(0, sim.burn_in);
        let ks = ks_distance(&pooled, |x| target.cdf(x))?;
        let w1 = wasserstein1(&pooled, |u| target.quantile(u))?;
        writeln!(report, "stationary_samples = {}", pooled.len())?;
        writeln!(report, "ks = {ks}")?;
        writeln!(report, "w1 = {w1}")?;
        writeln!(report, "target_boundary_ratio = {:e}", target.boundary_ratio)?;
        let hist = EmpiricalDensity::from_samples(&pooled, sim.bin_lower, sim.bin_upper, sim.bins)?;
        let mut rows = Vec::with_capacity(sim.bins);
        for (i, h) in hist.heights.iter().enumerate() {
            let c = 0.5 * (hist.edges[i] + hist.edges[i + 1]);
            rows.push((c, *h, target.density(&[c])?));
        }
        write_file(out, "density.csv", |w| {
            writeln!(w, "x,empirical,target")?;
            for (c, h, t) in &rows {
                writeln!(w, "{c},{h},{t}")?;
            }
            Ok(())
        })?;
    } else {
        writeln!(report, "stationary_comparison = skipped (one-dimensional only)")?;
    }

    let bins = BinSpec::uniform(sim.bin_lower, sim.bin_upper, sim.bins, d)?;
    let bopts = BalanceOptions {
        floor: sim.floor,
        resamples: sim.resamples,
        seed: sim.seed,
        ..BalanceOptions::default()
    };
    match detailed_balance_ensemble(&ens, &bins, sim.lag, sim.burn_in, &bopts) {
        Ok(b) => {
            report.push_str(&b.to_record());
            writeln!(report, "balance_within_3x_null = {}", b.within_null(3.0))?;
        }
        Err(Error::Degenerate(msg)) => {
            log::warn!("detailed-balance test is degenerate: {msg}");
            writeln!(report, "detailed_balance = degenerate")?;
        }
        Err(e) => return Err(e.into()),
    }
    write_text(out, "report.txt", &report)?;
    print!("{report}");
    Ok(0)
}

pub fn average(cfg: &RunConfig, out: &Path) -> Result<u8> {
    let sfc = RunConfig::require(&cfg.slow_fast, "slow_fast")?;
    let avg = RunConfig::require(&cfg.averaging, "averaging")?;
    let sf = sfc.system()?;
    let quad = avg.quad()?;
    let (d, total) = (sf.slow_dim, sf.total_dim());
    let mut report = String::new();

    if d == 1 {
        let grid = linspace(avg.slow_lower, avg.slow_upper, avg.grid_points);
        let table = average_on_grid(&sf, &grid, &quad)?;
        write_file(out, "averaging.csv", |w| table.write_csv(w))?;
        let oracle = grid
            .par_iter()
            .map(|&x| Ok(identity_check_fd(&sf, x, &quad, avg.fd_step)?.residual().abs()))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        let primary = table.max_identity_residual();
        writeln!(report, "grid_points = {}", grid.len())?;
        writeln!(report, "max_identity_residual = {primary:e}")?;
        writeln!(report, "max_identity_residual_fd = {oracle:e}")?;
        writeln!(report, "identity_ok = {}", primary.max(oracle) < avg.tolerance)?;
        writeln!(report, "min_z = {:e}", table.z.iter().cloned().fold(f64::INFINITY, f64::min))?;
        writeln!(report, "min_sigma_eff = {}", table.sigma_eff.iter().cloned().fold(f64::INFINITY, f64::min))?;
        writeln!(report, "normalization = {}", table.normalization)?;
    } else {
        let points = check_points(avg.slow_lower, avg.slow_upper, avg.check_points, d);
        let worst = points
            .par_iter()
            .map(|x| Ok(spd_margin(&effective_diffusion(&sf, x, &quad)?).0))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        writeln!(report, "check_points = {}", points.len())?;
        writeln!(report, "min_effective_diffusion_eigenvalue = {worst:e}")?;
        writeln!(report, "effective_diffusion_spd = {}", worst > 0.0)?;
    }

    if let Some(rd) = &sfc.sigma1.rotated_diagonal {
        let spec = rd.spec(total, "slow_fast.sigma1")?;
        let n_axis = if d == 1 { avg.grid_points } else { avg.check_points };
        let points = check_points(avg.slow_lower, avg.slow_upper, n_axis, d);
        let residuals = points
            .par_iter()
            .map(|x| Ok(matrix_average_residual(&spec, &sf.potential, x, &quad)?.amax()))
            .collect::<Result<Vec<f64>>>()?;
        write_file(out, "preservation.csv", |w| {
            for k in 0..d {
                write!(w, "x{},", k + 1)?;
            }
            writeln!(w, "residual")?;
            for (p, r) in points.iter().zip(&residuals) {
                for v in p {
                    write!(w, "{v},")?;
                }
                writeln!(w, "{r}")?;
            }
            Ok(())
        })?;
        let max = residuals.iter().cloned().fold(0.0, f64::max);
        writeln!(report, "max_preservation_residual = {max:e}")?;
        writeln!(report, "preservation_ok = {}", max < avg.tolerance)?;
    }
    write_text(out, "report.txt", &report)?;
    print!("{report}");
    Ok(0)
}

fn check_points(lo: f64, hi: f64, n: usize, d: usize) -> Vec<Vec<f64>> {
    let axis = linspace(lo, hi, n);
    let mut out = vec![Vec::new()];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

pub fn study(cfg: &RunConfig, out: &Path) -> Result<u8> {
    let sfc = RunConfig::require(&cfg.slow_fast, "slow_fast")?;
    let avg = RunConfig::require(&cfg.averaging, "averaging")?;
    let st = RunConfig::require(&cfg.study, "study")?;
    let sf = sfc.system()?;
    let opts = StudyOptions {
        initial: st.initial.clone(),
        slow_box: (avg.slow_lower, avg.slow_upper),
        grid_points: avg.grid_points,
        quad: avg.quad()?,
        bootstrap: st.bootstrap,
        ..StudyOptions::new(st.n_list.clone(), st.t_end, st.dt, st.n_traj, st.seed)
    };
    let result = averaging_convergence_study(&sf, &opts)?;
    write_file(out, "study.csv", |w| result.write_csv(w))?;
    let record = result.to_record();
    write_text(out, "report.txt", &record)?;
    print!("{record}");
    Ok(0)
}
