//! Monte Carlo estimators for PIDE solutions from walker paths or densities.
//!
//! Time integrals are left-endpoint Riemann sums: a path observed at
//! `X_0, …, X_i` accumulates `c` and `f` at steps `0..i`, so at `i = 0` the
//! estimate is exactly `g(X_0)`.

use serde::{Deserialize, Serialize};

use crate::density::DensitySeries;
use crate::dtmc::{path_stream, PathEnsemble, ReferenceSampler, StateId, StateSpace, TransitionModel};
use crate::error::{Error, Result};
use crate::numeric::compensated_sum;
use crate::par::{map_range, ExecMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Absent when fewer than two samples back the value.
    pub standard_error: Option<f64>,
    pub sample_count: usize,
}

impl Estimate {
    /// Mean and standard error of per-sample values.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Domain("empty ensemble".into()));
        }
        let value = compensated_sum(samples.iter().copied()) / samples.len() as f64;
        Ok(Estimate { value, standard_error: standard_error(samples).ok(), sample_count: samples.len() })
    }
}

/// Unbiased sample standard deviation over `√n`.
pub fn standard_error(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Undefined(format!("standard error needs at least 2 samples, got {n}")));
    }
    let mean = compensated_sum(samples.iter().copied()) / n as f64;
    if samples.iter().all(|&x| x == samples[0]) {
        return Ok(0.0);
    }
    let ss = compensated_sum(samples.iter().map(|x| (x - mean) * (x - mean)));
    Ok((ss / (n - 1) as f64).sqrt() / (n as f64).sqrt())
}

/// Potential term `c` of the PIDE.
#[derive(Clone, Copy)]
pub enum Potential<'a> {
    Constant(f64),
    Varying(&'a (dyn Fn(f64, StateId) -> f64 + Sync)),
}

impl Potential<'_> {
    fn at(&self, t: f64, x: StateId) -> f64 {
        match self {
            Potential::Constant(c) => *c,
            Potential::Varying(f) => f(t, x),
        }
    }
}

/// `exp(Σ_{k<i} c·Δt)` accumulated step by step, as the path estimator does.
pub fn constant_weight(c: f64, dt: f64, i: usize) -> f64 {
    let mut acc = 0.0;
    for _ in 0..i {
        acc += c * dt;
    }
    acc.exp()
}

/// Payoff of one path at step `i`:
/// `g(X_i)·exp(Σ_{k<i} c_k Δt) + Σ_{k<i} f_k·exp(Σ_{s<k} c_s Δt)·Δt`.
pub fn path_payoff<G, F>(path: &[StateId], dt: f64, g: &G, c: Potential<'_>, f: &F, i: usize) -> f64
where
    G: Fn(StateId) -> f64 + ?Sized,
    F: Fn(f64, StateId) -> f64 + ?Sized,
{
    let mut exponent = 0.0;
    let mut source = 0.0;
    for (k, &x) in path[..i].iter().enumerate() {
        let t = k as f64 * dt;
        source += f(t, x) * exponent_exp(exponent) * dt;
        exponent += c.at(t, x) * dt;
    }
    g(path[i]) * exponent_exp(exponent) + source
}

fn exponent_exp(e: f64) -> f64 {
    e.exp()
}

/// Initial-value estimator at step `t_index` over a path ensemble.
pub fn estimate_initial_value<G, F>(paths: &PathEnsemble, g: &G, c: Potential<'_>, f: &F, t_index: usize) -> Result<Estimate>
where
    G: Fn(StateId) -> f64 + Sync + ?Sized,
    F: Fn(f64, StateId) -> f64 + Sync + ?Sized,
{
    if paths.is_empty() {
        return Err(Error::Domain("empty ensemble".into()));
    }
    if let Some(p) = paths.paths.iter().find(|p| p.len() <= t_index) {
        return Err(Error::Domain(format!("step {t_index} is past a path of length {}", p.len())));
    }
    let payoffs = map_range(ExecMode::default(), paths.len(), |j| path_payoff(&paths.paths[j], paths.dt, g, c, f, t_index));
    Estimate::from_samples(&payoffs)
}

/// Boundary-value estimator: `g(X_T) + scale·Σ_{k<T} f(X_k)·Δt` per path,
/// `T` being the path's stopping step.
pub fn estimate_stopped<G, F>(paths: &PathEnsemble, g_boundary: &G, f: &F, scale: f64) -> Result<Estimate>
where
    G: Fn(StateId) -> f64 + ?Sized,
    F: Fn(StateId) -> f64 + ?Sized,
{
    let stops = paths.stops.as_ref().ok_or_else(|| Error::IncompleteEnsemble("ensemble was sampled without a domain".into()))?;
    let mut payoffs = Vec::with_capacity(paths.len());
    for (j, (path, stop)) in paths.paths.iter().zip(stops).enumerate() {
        let t = stop.ok_or_else(|| Error::IncompleteEnsemble(format!("path {j} never left the domain")))?;
        payoffs.push(stopped_payoff(&path[..=t], paths.dt, g_boundary, f, scale));
    }
    Estimate::from_samples(&payoffs)
}

fn stopped_payoff<G, F>(path: &[StateId], dt: f64, g_boundary: &G, f: &F, scale: f64) -> f64
where
    G: Fn(StateId) -> f64 + ?Sized,
    F: Fn(StateId) -> f64 + ?Sized,
{
    let (last, inside) = path.split_last().unwrap();
    g_boundary(*last) + scale * compensated_sum(inside.iter().map(|&x| f(x) * dt))
}

/// Stopped estimator sampled on the fly: the same streams as
/// [`crate::dtmc::sample_paths`], without keeping the paths.
#[allow(clippy::too_many_arguments)]
pub fn estimate_stopped_streaming<O, G, F>(
    model: &TransitionModel,
    start: StateId,
    m: usize,
    max_steps: usize,
    seed: u64,
    outside: &O,
    g_boundary: &G,
    f: &F,
    scale: f64,
    mode: ExecMode,
) -> Result<Estimate>
where
    O: Fn(StateId) -> bool + Sync + ?Sized,
    G: Fn(StateId) -> f64 + Sync + ?Sized,
    F: Fn(StateId) -> f64 + Sync + ?Sized,
{
    if m == 0 {
        return Err(Error::Domain("need at least one path".into()));
    }
    let sampler = ReferenceSampler::new(model)?;
    let payoffs = map_range(mode, m, |p| {
        let mut rng = path_stream(seed, start, p as u64);
        let mut x = start;
        let mut acc = Vec::new();
        for k in 0..max_steps {
            acc.push(f(x) * model.dt);
            x = sampler.step(x, k, &mut rng);
            if outside(x) {
                return Ok(g_boundary(x) + scale * compensated_sum(acc));
            }
        }
        Err(Error::IncompleteEnsemble(format!("path {p} from {start} did not stop within {max_steps} steps")))
    });
    let payoffs = payoffs.into_iter().collect::<Result<Vec<_>>>()?;
    Estimate::from_samples(&payoffs)
}

/// Cumulative-density form of [`estimate_stopped`]: total visits per state
/// collapse the per-path sums. States flagged `outside` must be absorbing
/// in the chain that produced `density`, and the series must run until
/// every walker has stopped. Densities carry no per-path spread, so the
/// standard error is absent.
pub fn estimate_stopped_from_density<O, G, F>(density: &DensitySeries, outside: &O, g_boundary: &G, f: &F, scale: f64) -> Result<Estimate>
where
    O: Fn(StateId) -> bool + ?Sized,
    G: Fn(StateId) -> f64 + ?Sized,
    F: Fn(StateId) -> f64 + ?Sized,
{
    let m = density.total;
    if m == 0 {
        return Err(Error::Domain("empty density".into()));
    }
    let last = density.snapshots.last().ok_or_else(|| Error::Domain("empty density".into()))?;
    let n = last.len();
    let inside_left: u64 = (0..n).filter(|&s| !outside(s as StateId)).map(|s| last[s]).sum();
    if inside_left > 0 {
        return Err(Error::IncompleteEnsemble(format!("{inside_left} walkers have not stopped by the last step")));
    }
    let mut visits = vec![0u64; n];
    for snap in &density.snapshots[..density.snapshots.len() - 1] {
        for (s, &c) in snap.iter().enumerate() {
            if !outside(s as StateId) {
                visits[s] += c;
            }
        }
    }
    let source = compensated_sum((0..n).map(|s| f(s as StateId) * density.dt * visits[s] as f64));
    let boundary = compensated_sum((0..n).filter(|&s| outside(s as StateId)).map(|s| g_boundary(s as StateId) * last[s] as f64));
    Ok(Estimate { value: (boundary + scale * source) / m as f64, standard_error: None, sample_count: m as usize })
}

/// Initial-value estimate from walker counts; only valid for a constant
/// potential and no source term. The standard error is that of one
/// multinomial draw of `M` walkers.
pub fn estimate_from_density<G>(density: &DensitySeries, g: &G, c: Potential<'_>, t_index: usize) -> Result<Estimate>
where
    G: Fn(StateId) -> f64 + ?Sized,
{
    let Potential::Constant(c) = c else {
        return Err(Error::Contract("density estimates need a constant potential; use the path estimator".into()));
    };
    let m = density.total;
    if m == 0 {
        return Err(Error::Domain("empty density".into()));
    }
    let snap = density.snapshots.get(t_index).ok_or_else(|| Error::Domain(format!("no snapshot at step {t_index}")))?;
    let mf = m as f64;
    let mean = compensated_sum(snap.iter().enumerate().map(|(s, &k)| g(s as StateId) * k as f64)) / mf;
    let second = compensated_sum(snap.iter().enumerate().map(|(s, &k)| g(s as StateId).powi(2) * k as f64)) / mf;
    let w = constant_weight(c, density.dt, t_index);
    let se = ((second - mean * mean).max(0.0) / mf).sqrt() * w;
    Ok(Estimate { value: w * mean, standard_error: (m >= 2).then_some(se), sample_count: m as usize })
}

/// Whole solution curve at every step of a density series.
pub fn density_curve<G>(density: &DensitySeries, g: &G, c: Potential<'_>) -> Result<Vec<Estimate>>
where
    G: Fn(StateId) -> f64 + ?Sized,
{
    (0..density.snapshots.len()).map(|k| estimate_from_density(density, g, c, k)).collect()
}

/// Unsnapped and grid-snapped Monte Carlo means of `psi` over final values.
pub fn snapped_pair<P: Fn(f64) -> f64>(finals: &[f64], space: &StateSpace, psi: P) -> Result<(Estimate, Estimate)> {
    let raw: Vec<f64> = finals.iter().map(|&x| psi(x)).collect();
    let snapped: Vec<f64> = finals.iter().map(|&x| psi(space.snap(x))).collect();
    Ok((Estimate::from_samples(&raw)?, Estimate::from_samples(&snapped)?))
}

/// Accumulates a density estimate step by step so that long runs need not
/// keep every snapshot.
#[derive(Clone, Debug)]
pub struct StreamingDensityEstimator {
    g: Vec<f64>,
    c: f64,
    dt: f64,
    total: u64,
    pub curve: Vec<Estimate>,
}

impl StreamingDensityEstimator {
    pub fn new(g: Vec<f64>, c: f64, dt: f64, total: u64) -> Self {
        StreamingDensityEstimator { g, c, dt, total, curve: Vec::new() }
    }

    /// Feeds the counts observed at `step`; steps must arrive in order.
    pub fn observe(&mut self, step: usize, counts: &[u64]) -> Result<()> {
        if step != self.curve.len() {
            return Err(Error::Domain(format!("expected step {}, got {step}", self.curve.len())));
        }
        let one = DensitySeries { dt: self.dt, total: self.total, snapshots: vec![counts.to_vec()] };
        let mut e = estimate_from_density(&one, &|s: StateId| self.g[s as usize], Potential::Constant(0.0), 0)?;
        let w = constant_weight(self.c, self.dt, step);
        e.value *= w;
        e.standard_error = e.standard_error.map(|s| s * w);
        self.curve.push(e);
        Ok(())
    }
}
