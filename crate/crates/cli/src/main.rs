//! `spikewalk`: build chains, run them through emulated spiking meshes and
//! turn the walker densities into PIDE estimates.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use spikewalk::platform::Platform;

#[derive(Parser, Debug)]
#[command(name = "spikewalk", version, about = "Random walks on emulated spiking meshes")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct GlobalArgs {
    /// JSON run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_platform)]
    platform: Option<Platform>,
    /// Walkers per start.
    #[arg(long, global = true)]
    walkers: Option<u64>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Accept a step size that violates the per-step constraints.
    #[arg(long, global = true)]
    force: bool,
    /// Problem name: boltzmann, fluence, sphere, barbell or torus.
    #[arg(long, global = true)]
    problem: Option<String>,
    /// Torus side.
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Only run walkers from this state.
    #[arg(long, global = true)]
    start: Option<u32>,
    /// Spread walkers above the platform cap over mesh copies.
    #[arg(long, global = true)]
    copies: bool,
    #[arg(long, global = true)]
    reference_walkers: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the chain, compiled-circuit summary and mesh.
    Build,
    /// Run walkers and write per-start density CSVs.
    Simulate,
    /// Turn densities into estimates and compare with known solutions.
    Estimate,
    /// Spiking mesh against the path sampler on the quantized chain.
    Compare,
    /// Time and energy model report.
    Cost(CostArgs),
}

#[derive(Args, Debug, Default)]
struct CostArgs {
    #[arg(long)]
    cpu_updates_per_joule: Option<f64>,
    #[arg(long)]
    nmc_updates_per_joule: Option<f64>,
    #[arg(long)]
    cpu_cores: Option<u64>,
    #[arg(long)]
    nmc_cores: Option<u64>,
    #[arg(long)]
    mesh_size: Option<u64>,
    /// `run_stats.json` from a spiking `simulate` run.
    #[arg(long)]
    ticks: Option<PathBuf>,
}

fn parse_platform(s: &str) -> Result<Platform, String> {
    s.parse()
}

/// Failure classes with their exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Constraint(String),
    Capacity(String),
    Other(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Constraint(_) => 3,
            Failure::Capacity(_) => 4,
            Failure::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Constraint(m) => write!(f, "constraint violation: {m}"),
            Failure::Capacity(m) => write!(f, "{m}"),
            Failure::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<spikewalk::Error> for Failure {
    fn from(e: spikewalk::Error) -> Self {
        use spikewalk::Error as E;
        match e {
            E::Capacity { .. } => Failure::Capacity(e.to_string()),
            E::Compile(_) | E::Infeasible(_) | E::Normalization { .. } | E::Construction(_) => Failure::Constraint(e.to_string()),
            E::Contract(_) => Failure::Config(e.to_string()),
            other => Failure::Other(other.into()),
        }
    }
}

fn merge(mut cfg: RunConfig, g: &GlobalArgs, cost: Option<&CostArgs>) -> RunConfig {
    macro_rules! over {
        ($($f:ident),*) => { $( if g.$f.is_some() { cfg.$f = g.$f.clone(); } )* };
    }
    over!(seed, out, platform, walkers, steps, problem, n, horizon, start, reference_walkers);
    if g.force {
        cfg.force = Some(true);
    }
    if g.copies {
        cfg.copies = Some(true);
    }
    if let Some(c) = cost {
        let k = &mut cfg.cost;
        macro_rules! over_cost {
            ($($f:ident),*) => { $( if c.$f.is_some() { k.$f = c.$f.clone(); } )* };
        }
        over_cost!(cpu_updates_per_joule, nmc_updates_per_joule, cpu_cores, nmc_cores, mesh_size, ticks);
    }
    cfg
}

fn run(cli: Cli) -> Result<PathBuf, Failure> {
    let base = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cost = match &cli.command {
        Command::Cost(c) => Some(c),
        _ => None,
    };
    let cfg = merge(base, &cli.global, cost);
    match cli.command {
        Command::Build => commands::cmd_build(&cfg),
        Command::Simulate => commands::cmd_simulate(&cfg),
        Command::Estimate => commands::cmd_estimate(&cfg),
        Command::Compare => commands::cmd_compare(&cfg),
        Command::Cost(_) => commands::cmd_cost(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(manifest) => {
            log::info!("wrote {}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
