mod commands;
mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::RunConfig;

/// Reversibility checks, simulation, averaging and convergence studies for
/// multiplicative-noise SDEs.
#[derive(Parser)]
#[command(name = "revsde", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify reversibility on a grid (exit 0 reversible, 2 not, 1 error).
    Check(RunArgs),
    /// Simulate an ensemble and compare with the Gibbs target.
    Simulate(RunArgs),
    /// Tabulate effective slow coefficients.
    Average(RunArgs),
    /// Slow-fast convergence study.
    Study(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.directory`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override for simulations and studies.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = "REVSDE_THREADS")]
    threads: Option<usize>,
}

fn timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn log_line(out: &Path, line: &str) {
    let file = fs::OpenOptions::new().create(true).append(true).open(out.join("run.log"));
    if let Ok(mut f) = file {
        let _ = writeln!(f, "[{}] {line}", timestamp());
    }
}

fn run(name: &str, args: &RunArgs, cmd: fn(&RunConfig, &Path) -> Result<u8>) -> Result<u8> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg = RunConfig::parse(&text).with_context(|| format!("parsing {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        if let Some(s) = cfg.simulation.as_mut() {
            s.seed = seed;
        }
        if let Some(s) = cfg.study.as_mut() {
            s.seed = seed;
        }
    }
    if let Some(out) = &args.out {
        cfg.output.directory = out.display().to_string();
    }
    let out = PathBuf::from(&cfg.output.directory);
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    log_line(&out, &format!("{name} started (threads = {})", rayon::current_num_threads()));
    fs::write(out.join("manifest.toml"), cfg.to_manifest()?).context("writing manifest.toml")?;
    let result = cmd(&cfg, &out);
    match &result {
        Ok(code) => log_line(&out, &format!("{name} finished with exit code {code}")),
        Err(e) => log_line(&out, &format!("{name} failed: {e:#}")),
    }
    result
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Check(a) => run("check", a, commands::check),
        Command::Simulate(a) => run("simulate", a, commands::simulate),
        Command::Average(a) => run("average", a, commands::average),
        Command::Study(a) => run("study", a, commands::study),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
