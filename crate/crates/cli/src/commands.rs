use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use spikewalk::circuits::{compile_mesh, RunStats};
use spikewalk::cost::{advantage_report, effective_parallelism, envelope_report, quarter_means, AdvantageReport, EnvelopeReport, PlatformParams};
use spikewalk::density::DensitySeries;
use spikewalk::dtmc::{ChainRecord, StateId};
use spikewalk::geometry::{build_barbell_mesh, build_geodesic_sphere, build_torus_mesh, SurfaceMesh};
use spikewalk::io::{summarize, write_comparison_csv, write_solution_csv, ComparisonSummary, MeshRecord};
use spikewalk::par::ExecMode;
use spikewalk::pipeline::{compare_records, compare_with_oracle, estimate_start, max_binomial_z, run_start, Engine, StartRun};
use spikewalk::platform::Platform;
use spikewalk::problems::ProblemSpec;

use crate::config::RunConfig;
use crate::Failure;

/// Oracle magnitudes below this fraction of the largest are left out of
/// the mean percent error.
pub const PERCENT_FLOOR: f64 = 0.01;

/// Ticks a node spends per forwarded walker.
pub const TICKS_PER_UPDATE: f64 = 2.0;

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config_hash: String,
    pub config: RunConfig,
    /// Output file name to SHA-256.
    pub files: BTreeMap<String, String>,
}

struct Outputs {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Result<Self, Failure> {
        fs::create_dir_all(&dir).map_err(|e| Failure::Other(anyhow::anyhow!("cannot create {}: {e}", dir.display())))?;
        Ok(Outputs { dir, files: BTreeMap::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Failure::Other(e.into()))?;
        }
        fs::write(&path, bytes).map_err(|e| Failure::Other(anyhow::anyhow!("cannot write {}: {e}", path.display())))?;
        self.files.insert(name.to_string(), hex(&Sha256::digest(bytes)));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let mut text = serde_json::to_vec_pretty(value).map_err(|e| Failure::Other(e.into()))?;
        text.push(b'\n');
        self.write(name, &text)
    }

    fn finish(mut self, command: &str, cfg: &RunConfig) -> Result<PathBuf, Failure> {
        let manifest = Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            config: cfg.clone(),
            files: std::mem::take(&mut self.files),
        };
        let name = format!("manifest_{command}.json");
        let text = serde_json::to_vec_pretty(&manifest).map_err(|e| Failure::Other(e.into()))?;
        let path = self.dir.join(&name);
        fs::write(&path, text).map_err(|e| Failure::Other(e.into()))?;
        Ok(path)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn surface_mesh(problem: &ProblemSpec, cfg: &RunConfig) -> Result<Option<SurfaceMesh>, Failure> {
    let mesh = match problem.name.as_str() {
        "sphere" => Some(build_geodesic_sphere(2)?),
        "barbell" => Some(build_barbell_mesh()?.mesh),
        "torus" => Some(build_torus_mesh(cfg.n.unwrap_or(21))?),
        _ => None,
    };
    Ok(mesh)
}

fn starts(problem: &ProblemSpec, cfg: &RunConfig) -> Result<Vec<StateId>, Failure> {
    match cfg.start {
        Some(s) if (s as usize) < problem.model.n_states() => Ok(vec![s]),
        Some(s) => Err(Failure::Config(format!("start {s} is outside the {} states", problem.model.n_states()))),
        None => Ok(problem.starts.clone()),
    }
}

pub fn cmd_build(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let (problem, _) = cfg.resolve()?;
    let mut out = Outputs::new(cfg.out_dir())?;
    out.json("chain.json", &ChainRecord::from_model(&problem.model)?)?;
    let platform = cfg.platform();
    if platform != Platform::Reference {
        let mesh = compile_mesh(&problem.model, platform)?;
        out.json("circuit.json", &mesh.summary())?;
    }
    if let Some(mesh) = surface_mesh(&problem, cfg)? {
        out.json("mesh.json", &MeshRecord::from_mesh(&mesh))?;
        let mut csv = Vec::new();
        mesh.write_states_csv(&mut csv).map_err(|e| Failure::Other(e.into()))?;
        out.write("states.csv", &csv)?;
    }
    log::info!("built {} with {} states", problem.name, problem.model.n_states());
    out.finish("build", cfg)
}

fn density_name(start: StateId) -> String {
    format!("density/start_{start}.csv")
}

fn simulate_runs(cfg: &RunConfig, problem: &ProblemSpec, steps: usize) -> Result<Vec<StartRun>, Failure> {
    let seed = cfg.require_seed()?;
    let engine = Engine::new(problem, cfg.platform(), cfg.copies.unwrap_or(false))?;
    let walkers = cfg.walkers();
    starts(problem, cfg)?
        .into_iter()
        .map(|s| run_start(problem, &engine, s, walkers, steps, seed, ExecMode::Parallel).map_err(Failure::from))
        .collect()
}

fn write_runs(out: &mut Outputs, runs: &[StartRun]) -> Result<(), Failure> {
    for r in runs {
        let mut csv = Vec::new();
        r.density.write_csv(&mut csv).map_err(|e| Failure::Other(e.into()))?;
        out.write(&density_name(r.start), &csv)?;
    }
    if runs.iter().any(|r| !r.stats.is_empty()) {
        let stats: BTreeMap<StateId, &Vec<RunStats>> = runs.iter().map(|r| (r.start, &r.stats)).collect();
        out.json("run_stats.json", &stats)?;
    }
    Ok(())
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let (problem, steps) = cfg.resolve()?;
    let runs = simulate_runs(cfg, &problem, steps)?;
    let mut out = Outputs::new(cfg.out_dir())?;
    write_runs(&mut out, &runs)?;
    out.finish("simulate", cfg)
}

/// Densities from a prior `simulate` in the output directory, or a fresh
/// in-process run when there are none.
fn load_or_simulate(cfg: &RunConfig, problem: &ProblemSpec, steps: usize) -> Result<Vec<StartRun>, Failure> {
    let dir = cfg.out_dir();
    let starts = starts(problem, cfg)?;
    if starts.iter().all(|&s| dir.join(density_name(s)).exists()) {
        return starts
            .into_iter()
            .map(|s| {
                let path = dir.join(density_name(s));
                let text = fs::read_to_string(&path).map_err(|e| Failure::Other(e.into()))?;
                let density = DensitySeries::read_csv(&text, problem.dt()).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
                Ok(StartRun { start: s, density, stats: Vec::new() })
            })
            .collect();
    }
    simulate_runs(cfg, problem, steps)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub problem: String,
    pub estimates: usize,
    pub oracle: Option<ComparisonSummary>,
}

pub fn cmd_estimate(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let (problem, steps) = cfg.resolve()?;
    let runs = load_or_simulate(cfg, &problem, steps)?;
    let mut records = Vec::new();
    for r in &runs {
        records.extend(estimate_start(&problem, r)?);
    }
    let mut out = Outputs::new(cfg.out_dir())?;
    out.json("estimates.json", &records)?;
    let mut csv = Vec::new();
    write_solution_csv(&mut csv, &records, &problem.model.positions).map_err(|e| Failure::Other(e.into()))?;
    out.write("solution.csv", &csv)?;
    let oracle = match compare_with_oracle(&problem, &records) {
        Some(rows) => {
            let mut csv = Vec::new();
            write_comparison_csv(&mut csv, &rows).map_err(|e| Failure::Other(e.into()))?;
            out.write("comparison.csv", &csv)?;
            let peak = rows.iter().map(|c| c.oracle.abs()).fold(0.0, f64::max);
            Some(summarize(&rows, PERCENT_FLOOR * peak))
        }
        None => None,
    };
    if let Some(s) = &oracle {
        println!("max abs error {:.6}, mean percent error {:.4}%", s.max_abs_error, s.mean_percent_error);
    }
    out.json("summary.json", &EstimateSummary { problem: problem.name.clone(), estimates: records.len(), oracle })?;
    out.finish("estimate", cfg)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CompareReport {
    pub platform: Platform,
    pub walkers: u64,
    pub reference_walkers: u64,
    /// Largest binomial z-score between spiking and reference densities on
    /// the quantized chain, over 10 checkpoints.
    pub max_density_z: Option<f64>,
    pub walkers_conserved: bool,
    pub estimates: ComparisonSummary,
}

pub fn cmd_compare(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let (problem, steps) = cfg.resolve()?;
    let seed = cfg.require_seed()?;
    let platform = cfg.platform();
    if platform == Platform::Reference {
        return Err(Failure::Config("compare needs a spiking platform (LOIHI or TRUENORTH)".into()));
    }
    let walkers = cfg.walkers();
    let reference_walkers = cfg.reference_walkers.unwrap_or(walkers);
    let spiking = Engine::new(&problem, platform, cfg.copies.unwrap_or(false))?;
    let quantized = Engine::quantized_reference(&problem, platform)?;
    let (mut spk, mut refr) = (Vec::new(), Vec::new());
    let mut max_z: Option<f64> = None;
    let mut conserved = true;
    // the reference side draws from its own seed so the two runs are independent
    let ref_seed = seed ^ 0x5eed_0f_2ef;
    for s in starts(&problem, cfg)? {
        let a = run_start(&problem, &spiking, s, walkers, steps, seed, ExecMode::Parallel)?;
        let b = run_start(&problem, &quantized, s, reference_walkers, steps, ref_seed, ExecMode::Parallel)?;
        conserved &= a.density.totals().iter().all(|&t| t == walkers);
        if reference_walkers == walkers {
            let len = a.density.snapshots.len().min(b.density.snapshots.len());
            for k in (1..=10).map(|i| i * (len - 1) / 10) {
                let z = max_binomial_z(&a.density.snapshots[k], &b.density.snapshots[k], walkers);
                max_z = Some(max_z.map_or(z, |m| m.max(z)));
            }
        }
        spk.extend(estimate_start(&problem, &a)?);
        refr.extend(estimate_start(&problem, &b)?);
    }
    let rows = compare_records(&spk, &refr)?;
    let peak = rows.iter().map(|c| c.oracle.abs()).fold(0.0, f64::max);
    let summary = summarize(&rows, PERCENT_FLOOR * peak);
    let mut out = Outputs::new(cfg.out_dir())?;
    let mut csv = Vec::new();
    write_comparison_csv(&mut csv, &rows).map_err(|e| Failure::Other(e.into()))?;
    out.write("compare.csv", &csv)?;
    println!(
        "{platform} vs reference: mean percent error {:.4}%, max abs error {:.6}{}",
        summary.mean_percent_error,
        summary.max_abs_error,
        max_z.map_or(String::new(), |z| format!(", max density z {z:.3}"))
    );
    out.json("compare.json", &CompareReport { platform, walkers, reference_walkers, max_density_z: max_z, walkers_conserved: conserved, estimates: summary })?;
    out.finish("compare", cfg)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MeasuredParallelism {
    pub start: StateId,
    pub walkers: u64,
    /// `c·W / ticks` per step.
    pub effective_m: Vec<f64>,
    pub first_quarter_mean: Option<f64>,
    pub last_quarter_mean: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CostReport {
    pub report: AdvantageReport,
    pub envelope: EnvelopeReport,
    pub measured: Vec<MeasuredParallelism>,
}

pub fn cmd_cost(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let c = &cfg.cost;
    let mesh_size = c.mesh_size.unwrap_or(441);
    let cpu0 = PlatformParams::default_cpu();
    let nmc0 = PlatformParams::default_neural(mesh_size);
    let cpu = PlatformParams {
        cores: c.cpu_cores.unwrap_or(cpu0.cores),
        time_per_update: c.cpu_time_per_update.unwrap_or(cpu0.time_per_update),
        energy_per_update: c.cpu_updates_per_joule.map_or(cpu0.energy_per_update, |u| 1.0 / u),
        ..cpu0
    };
    let nmc = PlatformParams {
        cores: c.nmc_cores.unwrap_or(nmc0.cores),
        time_per_update: c.nmc_time_per_update.unwrap_or(nmc0.time_per_update),
        energy_per_update: c.nmc_updates_per_joule.map_or(nmc0.energy_per_update, |u| 1.0 / u),
        ..nmc0
    };
    let walkers = cfg.walkers();
    let steps = cfg.steps.unwrap_or(100_000) as u64;
    let report = advantage_report(&cpu, &nmc, walkers, steps.max(1), mesh_size).map_err(|e| Failure::Config(e.to_string()))?;
    let envelope = envelope_report(&cpu, &nmc, walkers, steps.max(1), mesh_size).map_err(|e| Failure::Config(e.to_string()))?;
    let measured = match &c.ticks {
        Some(path) => measured_parallelism(path)?,
        None => Vec::new(),
    };
    let mut out = Outputs::new(cfg.out_dir())?;
    let mut table = Vec::new();
    write_table(&mut table, &report, &envelope, &measured).map_err(|e| Failure::Other(e.into()))?;
    std::io::stdout().write_all(&table).map_err(|e| Failure::Other(e.into()))?;
    out.write("cost.txt", &table)?;
    out.json("cost.json", &CostReport { report, envelope, measured })?;
    out.finish("cost", cfg)
}

fn measured_parallelism(path: &Path) -> Result<Vec<MeasuredParallelism>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let stats: BTreeMap<StateId, Vec<RunStats>> = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (start, runs) in stats {
        for r in runs {
            // the busiest node at step k sets that step's length
            let walkers = r.max_node_count.first().copied().unwrap_or(0);
            let m = effective_parallelism(&r.ticks_per_step, walkers, TICKS_PER_UPDATE);
            let q = quarter_means(&m);
            rows.push(MeasuredParallelism { start, walkers, first_quarter_mean: q.map(|q| q.0), last_quarter_mean: q.map(|q| q.1), effective_m: m });
        }
    }
    Ok(rows)
}

fn write_table<W: Write>(mut w: W, r: &AdvantageReport, e: &EnvelopeReport, measured: &[MeasuredParallelism]) -> std::io::Result<()> {
    writeln!(w, "walkers {} steps {} mesh {}", r.walkers, r.steps, r.mesh_size)?;
    writeln!(w, "{:<22}{:>14}{:>14}", "", "conventional", "neural")?;
    writeln!(w, "{:<22}{:>14.4e}{:>14.4e}", "time (s)", r.vn_time, r.neural_time)?;
    writeln!(w, "{:<22}{:>14.4e}{:>14.4e}", "energy (J)", r.vn_energy, r.neural_energy)?;
    writeln!(w, "{:<22}{:>14.4e}{:>14.4e}", "updates per joule", r.vn_updates_per_joule, r.neural_updates_per_joule)?;
    writeln!(w, "{:<22}{:>14.4}{:>14.4}", "time exponent in W", r.vn_time_exponent, r.neural_time_exponent)?;
    writeln!(w, "time ratio {:.4e}, energy ratio {:.4e}", r.time_ratio, r.energy_ratio)?;
    writeln!(w, "neuromorphic advantage: {}", r.neuromorphic_advantage)?;
    writeln!(
        w,
        "envelope updates/J: cpu [{:.3e}, {:.3e}], nmc [{:.3e}, {:.3e}], advantage at every corner: {}",
        e.cpu_updates_per_joule.0,
        e.cpu_updates_per_joule.1,
        e.nmc_updates_per_joule.0,
        e.nmc_updates_per_joule.1,
        e.neuromorphic_advantage()
    )?;
    writeln!(w, "(model constants, not measurements)")?;
    for m in measured {
        if let (Some(a), Some(b)) = (m.first_quarter_mean, m.last_quarter_mean) {
            writeln!(w, "start {}: effective M first quarter {a:.3}, last quarter {b:.3}", m.start)?;
        }
    }
    Ok(())
}
