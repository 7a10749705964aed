//! Per-start runs and estimates shared by the command-line driver and the
//! test suites.

use serde::{Deserialize, Serialize};

use crate::circuits::{compile_mesh, realized_model, CompiledMesh, RunStats};
use crate::density::DensitySeries;
use crate::dtmc::{reference_density, StateId, TransitionModel};
use crate::error::{Error, Result};
use crate::feynman_kac::{density_curve, estimate_stopped_from_density, Potential};
use crate::io::{Comparison, EstimateRecord};
use crate::par::ExecMode;
use crate::platform::Platform;
use crate::problems::ProblemSpec;

/// What moves the walkers.
#[derive(Clone, Debug)]
pub enum Engine {
    /// Path sampler over a chain.
    Reference(TransitionModel),
    /// Compiled spiking mesh. With `copies`, walker counts above the
    /// platform cap are spread over identical mesh copies.
    Mesh { mesh: Box<CompiledMesh>, copies: bool },
}

impl Engine {
    /// `Platform::Reference` samples the full-precision chain.
    pub fn new(problem: &ProblemSpec, platform: Platform, copies: bool) -> Result<Self> {
        match platform {
            Platform::Reference => Ok(Engine::Reference(problem.model.clone())),
            p => Ok(Engine::Mesh { mesh: Box::new(compile_mesh(&problem.model, p)?), copies }),
        }
    }

    /// Path sampler over the chain a mesh on `platform` realizes.
    pub fn quantized_reference(problem: &ProblemSpec, platform: Platform) -> Result<Self> {
        Ok(Engine::Reference(realized_model(&problem.model, platform)?))
    }

    pub fn platform(&self) -> Platform {
        match self {
            Engine::Reference(_) => Platform::Reference,
            Engine::Mesh { mesh, .. } => mesh.platform,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartRun {
    pub start: StateId,
    pub density: DensitySeries,
    /// One entry per mesh copy; empty for the path sampler.
    pub stats: Vec<RunStats>,
}

/// Replica index of copy `copy` for walkers from `start`.
pub fn replica_id(start: StateId, copy: u32) -> u32 {
    start.wrapping_mul(1024).wrapping_add(copy)
}

/// Walkers all placed at `start`, run for `steps` steps. Runs of problems
/// with an exit state end once every walker has left.
pub fn run_start(problem: &ProblemSpec, engine: &Engine, start: StateId, walkers: u64, steps: usize, seed: u64, mode: ExecMode) -> Result<StartRun> {
    let n = problem.model.n_states();
    if start as usize >= n {
        return Err(Error::Domain(format!("start {start} out of range for {n} states")));
    }
    let mut initial = vec![0u64; n];
    let done = |c: &[u64], total: u64| problem.absorbing.is_some_and(|a| c[a as usize] == total);
    match engine {
        Engine::Reference(model) => {
            initial[start as usize] = walkers;
            let mut density = reference_density(model, &initial, steps, seed, mode)?;
            if let Some(k) = density.snapshots.iter().position(|c| done(c, walkers)) {
                density.snapshots.truncate(k + 1);
            }
            Ok(StartRun { start, density, stats: Vec::new() })
        }
        Engine::Mesh { mesh, copies } => {
            let cap = mesh.platform.walker_cap();
            let chunks: Vec<u64> = if *copies && walkers > cap {
                let full = walkers / cap;
                (0..full).map(|_| cap).chain((walkers % cap > 0).then_some(walkers % cap)).collect()
            } else {
                vec![walkers]
            };
            let mut snapshots: Vec<Vec<u64>> = Vec::new();
            let mut stats = Vec::with_capacity(chunks.len());
            for (copy, &w) in chunks.iter().enumerate() {
                initial[start as usize] = w;
                let mut own: Vec<Vec<u64>> = Vec::new();
                stats.push(mesh.run_while(&initial, steps, seed, replica_id(start, copy as u32), |_, c| {
                    own.push(c.to_vec());
                    !done(c, w)
                })?);
                merge(&mut snapshots, own);
            }
            Ok(StartRun { start, density: DensitySeries { dt: problem.dt(), total: walkers, snapshots }, stats })
        }
    }
}

/// Adds `own` into `acc`; the shorter series is held at its last snapshot,
/// which is exact once all its walkers are absorbed.
fn merge(acc: &mut Vec<Vec<u64>>, own: Vec<Vec<u64>>) {
    if acc.is_empty() {
        *acc = own;
        return;
    }
    let len = acc.len().max(own.len());
    let pad = |v: &mut Vec<Vec<u64>>| {
        let last = v.last().cloned().unwrap_or_default();
        v.resize(len, last);
    };
    pad(acc);
    let mut own = own;
    pad(&mut own);
    for (a, o) in acc.iter_mut().zip(own) {
        for (x, y) in a.iter_mut().zip(o) {
            *x += y;
        }
    }
}

/// Estimates at every step (initial-value problems) or the single steady
/// value (problems with an exit state, reported at `t = 0`).
pub fn estimate_start(problem: &ProblemSpec, run: &StartRun) -> Result<Vec<EstimateRecord>> {
    if let (Some(exit), Some(f)) = (problem.absorbing, problem.f.as_ref()) {
        let e = estimate_stopped_from_density(&run.density, &|s| s == exit, &|s| problem.g[s as usize], &|s| f[s as usize], 1.0)?;
        return Ok(vec![EstimateRecord::new(run.start, 0.0, &e)]);
    }
    let c = problem.c_const.ok_or_else(|| Error::Contract(format!("{} has no constant potential; density estimates need one", problem.name)))?;
    let curve = density_curve(&run.density, &|s| problem.g[s as usize], Potential::Constant(c))?;
    Ok(curve.iter().enumerate().map(|(k, e)| EstimateRecord::new(run.start, k as f64 * run.density.dt, e)).collect())
}

/// Estimates against the problem's closed form, when it has one.
pub fn compare_with_oracle(problem: &ProblemSpec, records: &[EstimateRecord]) -> Option<Vec<Comparison>> {
    let oracle = problem.oracle.as_ref()?;
    Some(
        records
            .iter()
            .map(|r| {
                let o = oracle(r.t, r.state);
                Comparison { state: r.state, t: r.t, value: r.value, oracle: o, abs_error: (r.value - o).abs(), stderr: r.stderr }
            })
            .collect(),
    )
}

/// Estimates against a second set of estimates at the same points.
pub fn compare_records(value: &[EstimateRecord], reference: &[EstimateRecord]) -> Result<Vec<Comparison>> {
    if value.len() != reference.len() {
        return Err(Error::Domain(format!("{} estimates against {} reference values", value.len(), reference.len())));
    }
    value
        .iter()
        .zip(reference)
        .map(|(v, r)| {
            if v.state != r.state || v.t != r.t {
                return Err(Error::Domain(format!("estimate at ({}, {}) paired with ({}, {})", v.state, v.t, r.state, r.t)));
            }
            Ok(Comparison { state: v.state, t: v.t, value: v.value, oracle: r.value, abs_error: (v.value - r.value).abs(), stderr: v.stderr })
        })
        .collect()
}

/// Largest per-state `|a - b| / σ` between two independent runs of
/// `total` walkers, `σ = √(2·total·p(1-p))` with `p` the pooled fraction.
/// States where both counts agree contribute zero.
pub fn max_binomial_z(a: &[u64], b: &[u64], total: u64) -> f64 {
    let w = total as f64;
    a.iter()
        .zip(b)
        .filter(|(x, y)| x != y)
        .map(|(&x, &y)| {
            let p = (x + y) as f64 / (2.0 * w);
            let sigma = (2.0 * w * p * (1.0 - p)).sqrt().max(f64::MIN_POSITIVE);
            (x as f64 - y as f64).abs() / sigma
        })
        .fold(0.0, f64::max)
}
