//! Discrete-time Markov chains approximating 1-D jump-diffusions, and the
//! reference path sampler used as an oracle for the spiking meshes.

use std::sync::{Arc, OnceLock};

use rand_distr::{weighted::WeightedAliasIndex, Distribution};
use serde::{Deserialize, Serialize};

use crate::density::DensitySeries;
use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, gauss_legendre, normal_interval_mass};
use crate::par::{map_range, ExecMode};
use crate::rng::{stream_id, RngStream};

pub type StateId = u32;
/// Sparse row: `(column, probability)` sorted by column.
pub type Row = Vec<(StateId, f64)>;

type Coef = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type Marks = Arc<dyn Fn(f64, f64) -> Vec<(f64, f64)> + Send + Sync>;

/// Coefficients of `dX = b dt + a dW + h dN` with Poisson rate `λ`, killing
/// `c`, source `f` and initial data `g`. Jump sizes are a discrete mark
/// distribution `(h, weight)`.
#[derive(Clone)]
pub struct SdeCoefficients {
    pub drift: Coef,
    pub diffusion: Coef,
    pub jump_rate: Coef,
    pub jump_marks: Marks,
    pub killing: Coef,
    pub source: Coef,
    pub initial: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for SdeCoefficients {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SdeCoefficients { .. }")
    }
}

impl SdeCoefficients {
    /// Constant drift and diffusion, no jumps, no killing or source.
    pub fn constant(b: f64, a: f64) -> Self {
        SdeCoefficients {
            drift: Arc::new(move |_, _| b),
            diffusion: Arc::new(move |_, _| a),
            jump_rate: Arc::new(|_, _| 0.0),
            jump_marks: Arc::new(|_, _| vec![(0.0, 1.0)]),
            killing: Arc::new(|_, _| 0.0),
            source: Arc::new(|_, _| 0.0),
            initial: Arc::new(|_| 0.0),
        }
    }

    pub fn with_jumps<L, H>(mut self, rate: L, marks: H) -> Self
    where
        L: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        H: Fn(f64, f64) -> Vec<(f64, f64)> + Send + Sync + 'static,
    {
        self.jump_rate = Arc::new(rate);
        self.jump_marks = Arc::new(marks);
        self
    }

    pub fn with_killing<C: Fn(f64, f64) -> f64 + Send + Sync + 'static>(mut self, c: C) -> Self {
        self.killing = Arc::new(c);
        self
    }

    pub fn with_initial<G: Fn(f64) -> f64 + Send + Sync + 'static>(mut self, g: G) -> Self {
        self.initial = Arc::new(g);
        self
    }

    /// Checks `a ≥ 0`, `λ ≥ 0` and that the mark weights sum to one at the
    /// given sample points.
    pub fn check(&self, samples: &[(f64, f64)]) -> Result<()> {
        for &(t, x) in samples {
            if (self.diffusion)(t, x) < 0.0 {
                return Err(Error::Domain(format!("negative diffusion at t={t}, x={x}")));
            }
            if (self.jump_rate)(t, x) < 0.0 {
                return Err(Error::Domain(format!("negative jump rate at t={t}, x={x}")));
            }
            let marks = (self.jump_marks)(t, x);
            let total = compensated_sum(marks.iter().map(|m| m.1));
            if marks.iter().any(|m| m.1 < 0.0) || (total - 1.0).abs() > 1e-6 {
                return Err(Error::Domain(format!("jump mark weights sum to {total} at t={t}, x={x}")));
            }
        }
        Ok(())
    }
}

/// Uniform 1-D grid of interval midpoints with a neighbor structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    pub points: Vec<f64>,
    pub dx: f64,
    pub neighbors: Vec<Vec<StateId>>,
    pub absorbing: Option<StateId>,
}

impl StateSpace {
    /// `n` equal intervals on `[lo, hi]`; each state may move at most
    /// `radius` intervals per step.
    pub fn uniform(lo: f64, hi: f64, n: usize, radius: usize) -> Result<Self> {
        if n == 0 || hi <= lo {
            return Err(Error::Domain("empty grid".into()));
        }
        let dx = (hi - lo) / n as f64;
        let points = (0..n).map(|i| lo + dx * (i as f64 + 0.5)).collect();
        let neighbors = (0..n)
            .map(|i| (i.saturating_sub(radius)..=(i + radius).min(n - 1)).map(|j| j as StateId).collect())
            .collect();
        Ok(StateSpace { points, dx, neighbors, absorbing: None })
    }

    /// Arbitrary sorted points with spacing `dx` where every state may reach
    /// every other.
    pub fn all_to_all(points: Vec<f64>, dx: f64) -> Self {
        let n = points.len() as StateId;
        StateSpace { points, dx, neighbors: (0..n).map(|_| (0..n).collect()).collect(), absorbing: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest grid point to `x`; ties go to the lower point.
    pub fn snap(&self, x: f64) -> f64 {
        let i = self.points.partition_point(|&p| p < x);
        match (i.checked_sub(1), self.points.get(i)) {
            (Some(lo), Some(&hi)) if x - self.points[lo] <= hi - x => self.points[lo],
            (_, Some(&hi)) => hi,
            (Some(lo), None) => self.points[lo],
            (None, None) => x,
        }
    }

    /// Bin of state `j`. The outermost bins extend to infinity.
    fn bin(&self, j: usize) -> (f64, f64) {
        let lo = if j == 0 { f64::NEG_INFINITY } else { self.points[j] - self.dx / 2.0 };
        let hi = if j + 1 == self.len() { f64::INFINITY } else { self.points[j] + self.dx / 2.0 };
        (lo, hi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Conservation {
    /// Mass beyond the extreme allowed neighbors goes to those neighbors.
    TailToEdge,
    NormalizeRow,
    AddToSelf,
}

/// `(p0, pJ, p_gt1)` for a Poisson window with integrated rate `lambda_int`.
pub fn poisson_window_probs(lambda_int: f64) -> Result<(f64, f64, f64)> {
    if !(lambda_int >= 0.0) {
        return Err(Error::Domain(format!("integrated rate {lambda_int} is negative")));
    }
    let p0 = (-lambda_int).exp();
    let pj = lambda_int * p0;
    // 1 - e^{-L}(1 + L), computed without cancellation for small L
    let p_gt1 = if lambda_int < 0.1 {
        let mut term = lambda_int * lambda_int / 2.0;
        let mut s = 0.0;
        let mut k = 2.0;
        while term > 1e-300 && term > s * 1e-17 {
            s += term;
            k += 1.0;
            term *= lambda_int / k;
        }
        p0 * s
    } else {
        1.0 - p0 - pj
    };
    Ok((p0, pj, p_gt1.clamp(0.0, 1.0)))
}

fn integrated_rate(coeffs: &SdeCoefficients, t: f64, x: f64, dt: f64) -> f64 {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let (nodes, weights) = RULE.get_or_init(|| gauss_legendre(5));
    let half = dt / 2.0;
    nodes.iter().zip(weights).map(|(u, w)| w * (coeffs.jump_rate)(t + half * (1.0 + u), x)).sum::<f64>() * half
}

/// Mass of one step from `x_i` landing in `[lo, hi)`, split over the
/// no-jump and single-jump branches.
fn step_mass(coeffs: &SdeCoefficients, t: f64, x: f64, dt: f64, lo: f64, hi: f64) -> f64 {
    let (_, pj, _) = poisson_window_probs(integrated_rate(coeffs, t, x, dt)).expect("rate checked");
    let mu = x + (coeffs.drift)(t, x) * dt;
    let sigma = (coeffs.diffusion)(t, x) * dt.sqrt();
    let mut p = (1.0 - pj) * normal_interval_mass(mu, sigma, lo, hi);
    if pj > 0.0 {
        for (h, w) in (coeffs.jump_marks)(t, x) {
            p += pj * w * normal_interval_mass(mu + h, sigma, lo, hi);
        }
    }
    p
}

/// Probability of moving from state `i` to neighbor `j` in one step
/// starting at time `t`.
pub fn local_transition_prob(
    coeffs: &SdeCoefficients,
    space: &StateSpace,
    i: StateId,
    j: StateId,
    t: f64,
    dt: f64,
    policy: Conservation,
) -> Result<f64> {
    let nb = &space.neighbors[i as usize];
    if !nb.contains(&j) {
        return Err(Error::Domain(format!("state {j} is not a neighbor of {i}")));
    }
    let (mut lo, mut hi) = space.bin(j as usize);
    if policy == Conservation::TailToEdge {
        if Some(&j) == nb.iter().min() {
            lo = f64::NEG_INFINITY;
        }
        if Some(&j) == nb.iter().max() {
            hi = f64::INFINITY;
        }
    }
    Ok(step_mass(coeffs, t, space.points[i as usize], dt, lo, hi))
}

/// Multi-jump and off-neighbor mass for state `i` at time `t`.
fn constraint_masses(coeffs: &SdeCoefficients, space: &StateSpace, i: usize, t: f64, dt: f64) -> (f64, f64) {
    let x = space.points[i];
    let (_, _, p_gt1) = poisson_window_probs(integrated_rate(coeffs, t, x, dt)).expect("rate checked");
    let inside = compensated_sum(space.neighbors[i].iter().map(|&j| {
        let (lo, hi) = space.bin(j as usize);
        step_mass(coeffs, t, x, dt, lo, hi)
    }));
    (p_gt1, (1.0 - inside).max(0.0))
}

/// Which constraint rejected a step size.
#[derive(Clone, Debug, PartialEq)]
pub struct DtCheck {
    pub dt: f64,
    pub max_multi_jump: f64,
    pub max_off_neighbor: f64,
}

impl DtCheck {
    pub fn passes(&self, threshold: f64) -> bool {
        self.max_multi_jump < threshold && self.max_off_neighbor < threshold
    }

    pub fn binding(&self) -> &'static str {
        if self.max_multi_jump >= self.max_off_neighbor {
            "more than one jump per step"
        } else {
            "mass outside the neighbor set"
        }
    }
}

/// Worst-case constraint masses over all states and 16 times in `[0, horizon]`.
pub fn check_dt(coeffs: &SdeCoefficients, space: &StateSpace, dt: f64, horizon: f64) -> DtCheck {
    let mut out = DtCheck { dt, max_multi_jump: 0.0, max_off_neighbor: 0.0 };
    for k in 0..16 {
        let t = horizon * k as f64 / 15.0;
        for i in 0..space.len() {
            if Some(i as StateId) == space.absorbing {
                continue;
            }
            let (m, o) = constraint_masses(coeffs, space, i, t, dt);
            out.max_multi_jump = out.max_multi_jump.max(m);
            out.max_off_neighbor = out.max_off_neighbor.max(o);
        }
    }
    out
}

/// Candidate step sizes `{5, 2, 1} × 10^-k`, largest first.
pub fn dt_ladder() -> impl Iterator<Item = f64> {
    (0..=9).flat_map(|k| [5.0, 2.0, 1.0].map(|m| m * 10f64.powi(-k)))
}

/// Largest ladder step size meeting both constraints strictly below
/// `threshold`.
pub fn select_dt(coeffs: &SdeCoefficients, space: &StateSpace, threshold: f64, horizon: f64) -> Result<f64> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Domain(format!("threshold {threshold} outside (0, 1)")));
    }
    let mut last = None;
    for dt in dt_ladder() {
        let c = check_dt(coeffs, space, dt, horizon);
        if c.passes(threshold) {
            return Ok(dt);
        }
        last = Some(c);
    }
    let c = last.expect("ladder is non-empty");
    Err(Error::Infeasible(format!(
        "{} stays at or above {threshold} down to dt = {} (multi-jump {:.3e}, off-neighbor {:.3e})",
        c.binding(),
        c.dt,
        c.max_multi_jump,
        c.max_off_neighbor
    )))
}

/// A row-stochastic sparse matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: Vec<Row>,
}

impl Matrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn identity(n: usize) -> Self {
        Matrix { rows: (0..n as StateId).map(|i| vec![(i, 1.0)]).collect() }
    }

    pub fn dense(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        self.rows
            .iter()
            .map(|r| {
                let mut d = vec![0.0; n];
                for &(j, p) in r {
                    d[j as usize] += p;
                }
                d
            })
            .collect()
    }

    pub fn get(&self, i: StateId, j: StateId) -> f64 {
        self.rows[i as usize].iter().filter(|e| e.0 == j).map(|e| e.1).sum()
    }

    /// `x ↦ x P` for a row vector of masses.
    pub fn push_forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.len()];
        for (i, r) in self.rows.iter().enumerate() {
            if x[i] != 0.0 {
                for &(j, p) in r {
                    y[j as usize] += x[i] * p;
                }
            }
        }
        y
    }

    /// `v ↦ P v` for a column vector of values.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|&(j, p)| p * v[j as usize]).sum()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len() as StateId;
        for (i, r) in self.rows.iter().enumerate() {
            if r.iter().any(|&(j, p)| j >= n || !(p >= 0.0)) {
                return Err(Error::Construction(format!("row {i} has a negative or out-of-range entry")));
            }
            if compensated_sum(r.iter().map(|e| e.1)) != 1.0 {
                return Err(Error::Construction(format!("row {i} does not sum to 1")));
            }
        }
        Ok(())
    }
}

/// Drops zero entries, merges duplicates, sorts, and nudges the largest
/// entry so the compensated row sum is exactly one.
pub fn finish_row(mut row: Row) -> Result<Row> {
    row.sort_by_key(|e| e.0);
    let mut merged: Row = Vec::with_capacity(row.len());
    for (j, p) in row {
        if p < 0.0 || p.is_nan() {
            return Err(Error::Construction(format!("entry to {j} is {p}")));
        }
        match merged.last_mut() {
            Some(last) if last.0 == j => last.1 += p,
            _ => merged.push((j, p)),
        }
    }
    merged.retain(|e| e.1 > 0.0);
    if merged.is_empty() {
        return Err(Error::Construction("empty row".into()));
    }
    let big = (0..merged.len()).max_by(|&a, &b| merged[a].1.total_cmp(&merged[b].1)).unwrap();
    for _ in 0..8 {
        let s = compensated_sum(merged.iter().map(|e| e.1));
        if s == 1.0 {
            return Ok(merged);
        }
        merged[big].1 += 1.0 - s;
    }
    let s = compensated_sum(merged.iter().map(|e| e.1));
    if s == 1.0 {
        Ok(merged)
    } else {
        Err(Error::Construction(format!("row sum {s} could not be repaired")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Matrices {
    Static(Matrix),
    /// `C(t_ℓ)` for ℓ = 0, 1, ...; steps past the end reuse the last one.
    Tensor(Vec<Matrix>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub dt: f64,
    pub matrices: Matrices,
    pub absorbing: Option<StateId>,
    /// Representative point of each state (may be empty).
    pub positions: Vec<Vec<f64>>,
}

impl TransitionModel {
    pub fn from_matrix(dt: f64, m: Matrix) -> Self {
        TransitionModel { dt, matrices: Matrices::Static(m), absorbing: None, positions: Vec::new() }
    }

    pub fn n_states(&self) -> usize {
        match &self.matrices {
            Matrices::Static(m) => m.len(),
            Matrices::Tensor(ms) => ms.first().map_or(0, |m| m.len()),
        }
    }

    pub fn is_static(&self) -> bool {
        matches!(self.matrices, Matrices::Static(_))
    }

    pub fn at(&self, step: usize) -> &Matrix {
        match &self.matrices {
            Matrices::Static(m) => m,
            Matrices::Tensor(ms) => &ms[step.min(ms.len() - 1)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.matrices {
            Matrices::Static(m) => m.validate()?,
            Matrices::Tensor(ms) => {
                for m in ms {
                    if m.len() != self.n_states() {
                        return Err(Error::Construction("tensor slices differ in size".into()));
                    }
                    m.validate()?;
                }
            }
        }
        if let Some(a) = self.absorbing {
            for k in 0..self.n_slices() {
                if self.at(k).rows[a as usize] != vec![(a, 1.0)] {
                    return Err(Error::Construction(format!("absorbing state {a} is not a unit row")));
                }
            }
        }
        Ok(())
    }

    pub fn n_slices(&self) -> usize {
        match &self.matrices {
            Matrices::Static(_) => 1,
            Matrices::Tensor(ms) => ms.len(),
        }
    }

    /// Expected walker masses after each of `steps` steps.
    pub fn propagate(&self, initial: &[f64], steps: usize) -> Vec<Vec<f64>> {
        let mut out = vec![initial.to_vec()];
        for k in 0..steps {
            let next = self.at(k).push_forward(out.last().unwrap());
            out.push(next);
        }
        out
    }
}

fn assemble_matrix(coeffs: &SdeCoefficients, space: &StateSpace, t: f64, dt: f64, policy: Conservation) -> Result<Matrix> {
    let mut rows = Vec::with_capacity(space.len());
    for i in 0..space.len() as StateId {
        if Some(i) == space.absorbing {
            rows.push(vec![(i, 1.0)]);
            continue;
        }
        let mut row: Row = Vec::new();
        for &j in &space.neighbors[i as usize] {
            row.push((j, local_transition_prob(coeffs, space, i, j, t, dt, policy)?));
        }
        let s = compensated_sum(row.iter().map(|e| e.1));
        match policy {
            Conservation::TailToEdge => {}
            Conservation::NormalizeRow => {
                if s <= 0.0 {
                    return Err(Error::Construction(format!("row {i} has no mass to normalize")));
                }
                for e in &mut row {
                    e.1 /= s;
                }
            }
            Conservation::AddToSelf => {
                if s > 1.0 + 1e-12 {
                    return Err(Error::Construction(format!("row {i} overfull ({s})")));
                }
                row.push((i, (1.0 - s).max(0.0)));
            }
        }
        rows.push(finish_row(row)?);
    }
    Ok(Matrix { rows })
}

/// Builds the chain. A time-dependent problem produces one matrix per step
/// of the horizon; pass `time_steps = None` for a time-homogeneous one.
pub fn assemble_chain(
    coeffs: &SdeCoefficients,
    space: &StateSpace,
    dt: f64,
    policy: Conservation,
    time_steps: Option<usize>,
) -> Result<TransitionModel> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("dt = {dt}")));
    }
    let matrices = match time_steps {
        None => Matrices::Static(assemble_matrix(coeffs, space, 0.0, dt, policy)?),
        Some(n) => Matrices::Tensor((0..n.max(1)).map(|l| assemble_matrix(coeffs, space, l as f64 * dt, dt, policy)).collect::<Result<_>>()?),
    };
    Ok(TransitionModel {
        dt,
        matrices,
        absorbing: space.absorbing,
        positions: space.points.iter().map(|&p| vec![p]).collect(),
    })
}

/// Unrolls a time-indexed chain over `steps` layers into one static chain
/// on `(state, layer)` pairs, indexed `layer * n + state`. The last layer
/// keeps applying the final slice within itself.
pub fn collapse_time_tensor(model: &TransitionModel, steps: usize) -> Result<TransitionModel> {
    if steps == 0 {
        return Err(Error::Domain("collapse needs at least one step".into()));
    }
    if model.is_static() {
        return Ok(model.clone());
    }
    let n = model.n_states();
    let mut rows = Vec::with_capacity(n * steps);
    for layer in 0..steps {
        let m = model.at(layer);
        let target = if layer + 1 < steps { layer + 1 } else { layer };
        for r in &m.rows {
            rows.push(r.iter().map(|&(j, p)| ((target * n) as StateId + j, p)).collect());
        }
    }
    let positions = (0..steps).flat_map(|_| model.positions.iter().cloned()).collect();
    Ok(TransitionModel {
        dt: model.dt,
        matrices: Matrices::Static(Matrix { rows }),
        absorbing: None,
        positions: if model.positions.is_empty() { Vec::new() } else { positions },
    })
}

/// Restricts an ordered chain to states `lo..=hi`, folding mass that
/// leaves the range into the nearer boundary state.
pub fn truncate_to_finite(model: &TransitionModel, lo: StateId, hi: StateId) -> Result<TransitionModel> {
    if lo > hi || hi as usize >= model.n_states() {
        return Err(Error::Domain(format!("empty or invalid range {lo}..={hi}")));
    }
    let fold = |m: &Matrix| -> Result<Matrix> {
        let rows = (lo..=hi)
            .map(|i| {
                let row = m.rows[i as usize].iter().map(|&(j, p)| (j.clamp(lo, hi) - lo, p)).collect();
                finish_row(row)
            })
            .collect::<Result<_>>()?;
        Ok(Matrix { rows })
    };
    let matrices = match &model.matrices {
        Matrices::Static(m) => Matrices::Static(fold(m)?),
        Matrices::Tensor(ms) => Matrices::Tensor(ms.iter().map(fold).collect::<Result<_>>()?),
    };
    let positions = if model.positions.is_empty() { Vec::new() } else { model.positions[lo as usize..=hi as usize].to_vec() };
    Ok(TransitionModel {
        dt: model.dt,
        matrices,
        absorbing: model.absorbing.filter(|a| (lo..=hi).contains(a)).map(|a| a - lo),
        positions,
    })
}

/// Alias tables for every row of every slice.
#[derive(Clone, Debug)]
pub struct ReferenceSampler {
    slices: Vec<Vec<(Vec<StateId>, Option<WeightedAliasIndex<f64>>)>>,
}

impl ReferenceSampler {
    pub fn new(model: &TransitionModel) -> Result<Self> {
        let build = |m: &Matrix| -> Result<Vec<_>> {
            m.rows
                .iter()
                .map(|r| {
                    let cols: Vec<StateId> = r.iter().map(|e| e.0).collect();
                    let table = if r.len() > 1 {
                        Some(WeightedAliasIndex::new(r.iter().map(|e| e.1).collect()).map_err(|e| Error::Construction(e.to_string()))?)
                    } else {
                        None
                    };
                    Ok((cols, table))
                })
                .collect()
        };
        let slices = (0..model.n_slices()).map(|k| build(model.at(k))).collect::<Result<_>>()?;
        Ok(ReferenceSampler { slices })
    }

    #[inline]
    pub fn step(&self, state: StateId, step: usize, rng: &mut RngStream) -> StateId {
        let slice = &self.slices[step.min(self.slices.len() - 1)];
        let (cols, table) = &slice[state as usize];
        match table {
            None => cols[0],
            Some(t) => cols[t.sample(rng)],
        }
    }
}

/// Sampled paths from one start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub start: StateId,
    pub dt: f64,
    pub paths: Vec<Vec<StateId>>,
    /// First step at which each path left the domain, when a domain was given.
    pub stops: Option<Vec<Option<usize>>>,
}

impl PathEnsemble {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// Per-path random stream for path `path` from state `start`.
pub fn path_stream(seed: u64, start: StateId, path: u64) -> RngStream {
    RngStream::new(seed, stream_id(start, path as u32) ^ ((path >> 32) << 48))
}

/// Samples `m` independent paths of `steps` steps. When `outside` is given,
/// a path stops at the first step `k > 0` with `outside(X_k)`.
pub fn sample_paths(
    model: &TransitionModel,
    start: StateId,
    m: usize,
    steps: usize,
    seed: u64,
    outside: Option<&(dyn Fn(StateId) -> bool + Sync)>,
    mode: ExecMode,
) -> Result<PathEnsemble> {
    if m == 0 {
        return Err(Error::Domain("need at least one path".into()));
    }
    if start as usize >= model.n_states() {
        return Err(Error::Domain(format!("start {start} out of range")));
    }
    let sampler = ReferenceSampler::new(model)?;
    let results = map_range(mode, m, |p| {
        let mut rng = path_stream(seed, start, p as u64);
        let mut path = Vec::with_capacity(steps + 1);
        let mut x = start;
        path.push(x);
        let mut stop = None;
        for k in 0..steps {
            x = sampler.step(x, k, &mut rng);
            path.push(x);
            if let Some(out) = outside {
                if out(x) {
                    stop = Some(k + 1);
                    break;
                }
            }
        }
        (path, stop)
    });
    let (paths, stops): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(PathEnsemble { start, dt: model.dt, paths, stops: outside.map(|_| stops) })
}

/// Reference counterpart of a spiking density run: per-state walker counts
/// after each step, with walkers of each start drawn from their own streams.
pub fn reference_density(model: &TransitionModel, initial: &[u64], steps: usize, seed: u64, mode: ExecMode) -> Result<DensitySeries> {
    let n = model.n_states();
    if initial.len() != n {
        return Err(Error::Domain("initial density has the wrong length".into()));
    }
    let sampler = ReferenceSampler::new(model)?;
    let starts: Vec<usize> = (0..n).filter(|&s| initial[s] > 0).collect();
    let per_start = map_range(mode, starts.len(), |k| {
        let s = starts[k];
        let mut counts = vec![vec![0u64; n]; steps + 1];
        for p in 0..initial[s] {
            let mut rng = path_stream(seed, s as StateId, p);
            let mut x = s as StateId;
            counts[0][x as usize] += 1;
            for (step, c) in counts.iter_mut().enumerate().skip(1) {
                x = sampler.step(x, step - 1, &mut rng);
                c[x as usize] += 1;
            }
        }
        counts
    });
    let mut snapshots = vec![vec![0u64; n]; steps + 1];
    for counts in per_start {
        for (acc, c) in snapshots.iter_mut().zip(counts) {
            for (a, v) in acc.iter_mut().zip(c) {
                *a += v;
            }
        }
    }
    Ok(DensitySeries { dt: model.dt, total: initial.iter().sum(), snapshots })
}

/// Sparse JSON form with both full-precision and 8-bit quantized values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub states: usize,
    pub dt: f64,
    pub rows: Vec<Vec<(StateId, f64)>>,
    pub quantized_rows: Vec<Vec<(StateId, f64)>>,
    pub absorbing_id: Option<StateId>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_state(p: f64) -> TransitionModel {
        TransitionModel::from_matrix(1.0, Matrix { rows: vec![vec![(0, 1.0 - p), (1, p)], vec![(0, p), (1, 1.0 - p)]] })
    }

    #[test]
    fn poisson_windows() {
        assert_eq!(poisson_window_probs(0.0).unwrap(), (1.0, 0.0, 0.0));
        let (_, _, q) = poisson_window_probs(5.0 * 0.01).unwrap();
        assert!((q - 0.001).abs() < 0.0003, "{q}");
        let l = 200.0 * 0.15 * 0.01;
        let (p0, pj, q) = poisson_window_probs(l).unwrap();
        assert_relative_eq!(q, 1.0 - (-l).exp() - l * (-l).exp(), epsilon = 1e-15);
        assert!(q < 0.05);
        assert_relative_eq!(p0 + pj + q, 1.0, epsilon = 1e-15);
        assert!(poisson_window_probs(-1.0).is_err());
    }

    #[test]
    fn small_rate_tail_is_accurate() {
        let l = 1e-6;
        let (_, _, q) = poisson_window_probs(l).unwrap();
        assert_relative_eq!(q, l * l / 2.0 * (1.0 - 2.0 * l / 3.0), max_relative = 1e-9);
    }

    #[test]
    fn symmetric_brownian_moves_symmetrically() {
        let space = StateSpace::uniform(-1.0, 1.0, 21, 2).unwrap();
        let c = SdeCoefficients::constant(0.0, 1.0);
        for policy in [Conservation::TailToEdge, Conservation::NormalizeRow] {
            let l = local_transition_prob(&c, &space, 10, 9, 0.0, 0.001, policy).unwrap();
            let r = local_transition_prob(&c, &space, 10, 11, 0.0, 0.001, policy).unwrap();
            assert_relative_eq!(l, r, epsilon = 1e-15);
        }
        assert!(local_transition_prob(&c, &space, 10, 15, 0.0, 0.001, Conservation::TailToEdge).is_err());
    }

    #[test]
    fn pure_diffusion_without_jumps_is_bin_mass() {
        let space = StateSpace::uniform(-1.0, 1.0, 20, 3).unwrap();
        let c = SdeCoefficients::constant(0.3, 0.7);
        let dt = 0.004;
        let x = space.points[8];
        let p = local_transition_prob(&c, &space, 8, 9, 0.0, dt, Conservation::NormalizeRow).unwrap();
        let expected = normal_interval_mass(x + 0.3 * dt, 0.7 * dt.sqrt(), space.points[9] - 0.05, space.points[9] + 0.05);
        assert_eq!(p, expected);
    }

    fn boltzmann_like() -> (SdeCoefficients, StateSpace) {
        let c = SdeCoefficients::constant(0.0, 0.0).with_jumps(|_, _| 5.0, |_, x| vec![(0.0, 0.5), (-2.0 * x, 0.5)]);
        (c, StateSpace::all_to_all(vec![-1.0, 1.0], 2.0))
    }

    #[test]
    fn boltzmann_entries_from_general_assembler() {
        let (c, space) = boltzmann_like();
        let m = assemble_chain(&c, &space, 0.01, Conservation::TailToEdge, None).unwrap();
        let m = m.at(0);
        assert_relative_eq!(m.get(1, 0), 0.0237807356125179, epsilon = 1e-16);
        assert_relative_eq!(m.get(1, 1), 0.976219264387482, epsilon = 1e-15);
        assert_relative_eq!(m.get(0, 1), 0.0237807356125179, epsilon = 1e-16);
    }

    #[test]
    fn boltzmann_dt_selection() {
        let (c, space) = boltzmann_like();
        assert!(check_dt(&c, &space, 0.01, 2.0).passes(0.05));
        let dt = select_dt(&c, &space, 0.05, 2.0).unwrap();
        assert_eq!(dt, 0.05);
        assert!(!check_dt(&c, &space, 0.1, 2.0).passes(0.05));
    }

    #[test]
    fn frozen_process_takes_largest_dt() {
        let space = StateSpace::uniform(0.0, 1.0, 10, 1).unwrap();
        let c = SdeCoefficients::constant(0.0, 0.0);
        assert_eq!(select_dt(&c, &space, 0.05, 1.0).unwrap(), 5.0);
    }

    #[test]
    fn brownian_dt_meets_gaussian_tail_oracle() {
        let dx = 0.1;
        let space = StateSpace::uniform(-1.0, 1.0, 20, 1).unwrap();
        let c = SdeCoefficients::constant(0.0, 1.0);
        let dt = select_dt(&c, &space, 0.05, 1.0).unwrap();
        let tail = |dt: f64| 2.0 * crate::numeric::normal_tail(1.5 * dx / dt.sqrt());
        assert!(tail(dt) < 0.05);
        assert_eq!(dt, 0.005);
        assert!(tail(0.01) >= 0.05);
    }

    #[test]
    fn infeasible_dt_names_the_constraint() {
        // huge jump rate: multi-jump mass cannot drop below threshold before the floor
        let space = StateSpace::all_to_all(vec![0.0, 1.0], 1.0);
        let c = SdeCoefficients::constant(0.0, 0.0).with_jumps(|_, _| 1e12, |_, _| vec![(0.0, 1.0)]);
        match select_dt(&c, &space, 0.05, 1.0) {
            Err(Error::Infeasible(msg)) => assert!(msg.contains("more than one jump")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn policies_give_stochastic_rows() {
        let space = StateSpace::uniform(-2.0, 2.0, 40, 2).unwrap();
        let c = SdeCoefficients::constant(0.5, 1.0).with_jumps(|_, x| 1.0 + x.abs(), |_, _| vec![(0.1, 0.5), (-0.2, 0.5)]);
        for policy in [Conservation::TailToEdge, Conservation::NormalizeRow, Conservation::AddToSelf] {
            let m = assemble_chain(&c, &space, 0.01, policy, None).unwrap();
            m.validate().unwrap();
        }
    }

    #[test]
    fn exact_row_sums_in_rational_arithmetic() {
        use num_bigint::BigInt;
        use num_rational::BigRational;
        use num_traits::Signed;
        let space = StateSpace::uniform(-2.0, 2.0, 30, 3).unwrap();
        let c = SdeCoefficients::constant(0.2, 1.3);
        let m = assemble_chain(&c, &space, 0.02, Conservation::TailToEdge, None).unwrap();
        let ulp = BigRational::new(BigInt::from(1), BigInt::from(1u64 << 52));
        for r in &m.at(0).rows {
            let s = r.iter().map(|e| BigRational::from_float(e.1).unwrap()).fold(BigRational::from_integer(0.into()), |a, b| a + b);
            let d = s - BigRational::from_integer(1.into());
            assert!(d.abs() <= ulp);
        }
    }

    #[test]
    fn time_dependent_coefficients_give_a_tensor() {
        let space = StateSpace::uniform(-1.0, 1.0, 10, 1).unwrap();
        let mut c = SdeCoefficients::constant(0.0, 0.5);
        c.drift = Arc::new(|t, _| t);
        let m = assemble_chain(&c, &space, 0.01, Conservation::TailToEdge, Some(5)).unwrap();
        assert_eq!(m.n_slices(), 5);
        assert_ne!(m.at(0), m.at(4));
        m.validate().unwrap();
    }

    #[test]
    fn collapse_sizes_and_static_identity() {
        let m = two_state(0.3);
        assert_eq!(collapse_time_tensor(&m, 7).unwrap(), m);
        assert!(collapse_time_tensor(&m, 0).is_err());
        let slices = (0..100).map(|_| Matrix::identity(10)).collect();
        let t = TransitionModel { dt: 0.1, matrices: Matrices::Tensor(slices), absorbing: None, positions: Vec::new() };
        let c = collapse_time_tensor(&t, 100).unwrap();
        assert_eq!(c.n_states(), 1000);
        c.validate().unwrap();
    }

    #[test]
    fn collapse_matches_tensor_path_probabilities() {
        // alternating permutation slices on 3 states plus a mixing slice
        let p = Matrix { rows: vec![vec![(1, 1.0)], vec![(2, 1.0)], vec![(0, 1.0)]] };
        let q = Matrix { rows: vec![vec![(0, 0.5), (2, 0.5)], vec![(1, 0.25), (0, 0.75)], vec![(2, 1.0)]] };
        let t = TransitionModel { dt: 1.0, matrices: Matrices::Tensor(vec![p.clone(), q.clone()]), absorbing: None, positions: Vec::new() };
        let c = collapse_time_tensor(&t, 2).unwrap();
        let c = c.at(0);
        // every 2-step path probability in the tensor equals the collapsed one
        for s0 in 0..3u32 {
            for s1 in 0..3u32 {
                for s2 in 0..3u32 {
                    let direct = p.get(s0, s1) * q.get(s1, s2);
                    let collapsed = c.get(s0, 3 + s1) * c.get(3 + s1, 3 + s2);
                    assert_eq!(direct, collapsed);
                }
            }
        }
    }

    fn birth_death_5() -> TransitionModel {
        let rows = vec![
            vec![(0, 0.6), (1, 0.4)],
            vec![(0, 0.3), (1, 0.4), (2, 0.3)],
            vec![(1, 0.25), (2, 0.5), (3, 0.25)],
            vec![(2, 0.1), (3, 0.7), (4, 0.2)],
            vec![(3, 0.5), (4, 0.5)],
        ];
        TransitionModel::from_matrix(1.0, Matrix { rows })
    }

    #[test]
    fn truncation_folds_into_boundaries() {
        let m = birth_death_5();
        let t = truncate_to_finite(&m, 1, 3).unwrap();
        let t = t.at(0);
        let expect: [&[(StateId, f64)]; 3] = [&[(0, 0.7), (1, 0.3)], &[(0, 0.25), (1, 0.5), (2, 0.25)], &[(1, 0.1), (2, 0.9)]];
        for (row, exp) in t.rows.iter().zip(expect) {
            assert_eq!(row.len(), exp.len());
            for (a, b) in row.iter().zip(exp) {
                assert_eq!(a.0, b.0);
                assert_relative_eq!(a.1, b.1, epsilon = 1e-15);
            }
        }
        let full = truncate_to_finite(&m, 0, 4).unwrap();
        assert_eq!(full, m);
        assert!(truncate_to_finite(&m, 3, 1).is_err());
    }

    #[test]
    fn identity_paths_stay_put() {
        let m = TransitionModel::from_matrix(0.1, Matrix::identity(4));
        let e = sample_paths(&m, 2, 50, 10, 1, None, ExecMode::Sequential).unwrap();
        assert!(e.paths.iter().all(|p| p.iter().all(|&x| x == 2)));
    }

    #[test]
    fn immediate_exit_stops_at_one() {
        let m = TransitionModel::from_matrix(0.1, Matrix { rows: vec![vec![(1, 1.0)], vec![(1, 1.0)]] });
        let out = |s: StateId| s == 1;
        let e = sample_paths(&m, 0, 100, 5, 3, Some(&out), ExecMode::Parallel).unwrap();
        assert!(e.stops.unwrap().iter().all(|&s| s == Some(1)));
    }

    #[test]
    fn sampling_is_independent_of_execution_mode() {
        let m = birth_death_5();
        let a = sample_paths(&m, 2, 300, 20, 9, None, ExecMode::Sequential).unwrap();
        let b = sample_paths(&m, 2, 300, 20, 9, None, ExecMode::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lazy_walk_variance_matches_binomial() {
        // move ±1 with probability 1/4 each, stay 1/2, on a grid wide enough to never hit the edge
        let n = 201;
        let rows = (0..n as StateId)
            .map(|i| {
                if i == 0 || i + 1 == n as StateId {
                    vec![(i, 1.0)]
                } else {
                    vec![(i - 1, 0.25), (i, 0.5), (i + 1, 0.25)]
                }
            })
            .collect();
        let m = TransitionModel::from_matrix(1.0, Matrix { rows });
        let steps = 40;
        let e = sample_paths(&m, 100, 100_000, steps, 5, None, ExecMode::Parallel).unwrap();
        let x: Vec<f64> = e.paths.iter().map(|p| p[steps] as f64 - 100.0).collect();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
        let exact = steps as f64 * 0.5;
        // fourth central moment of a sum of iid ±1/0 steps
        let mu4 = 3.0 * exact * exact + steps as f64 * (0.5 - 3.0 * 0.25);
        let se = ((mu4 - exact * exact) / x.len() as f64).sqrt();
        assert!((var - exact).abs() < 4.0 * se, "var {var} vs {exact} (se {se})");
    }

    #[test]
    fn reference_density_conserves_walkers() {
        let m = birth_death_5();
        let d = reference_density(&m, &[0, 100, 0, 50, 0], 30, 4, ExecMode::Parallel).unwrap();
        assert!(d.snapshots.iter().all(|s| s.iter().sum::<u64>() == 150));
    }

    proptest! {
        #[test]
        fn assembled_rows_are_exactly_stochastic(
            b in -2.0f64..2.0, a in 0.0f64..2.0, rate in 0.0f64..3.0, h in -0.5f64..0.5,
            dt in 0.001f64..0.05, n in 3usize..40, radius in 1usize..4,
        ) {
            let space = StateSpace::uniform(-1.0, 1.0, n, radius).unwrap();
            let c = SdeCoefficients::constant(b, a).with_jumps(move |_, _| rate, move |_, _| vec![(h, 1.0)]);
            for policy in [Conservation::TailToEdge, Conservation::NormalizeRow] {
                let m = assemble_chain(&c, &space, dt, policy, None).unwrap();
                for r in &m.at(0).rows {
                    prop_assert_eq!(compensated_sum(r.iter().map(|e| e.1)), 1.0);
                    prop_assert!(r.iter().all(|e| e.1 >= 0.0));
                }
            }
        }

        #[test]
        fn truncation_keeps_interior_rows(lo in 0u32..3, width in 2u32..3) {
            let m = birth_death_5();
            let hi = (lo + width).min(4);
            let t = truncate_to_finite(&m, lo, hi).unwrap();
            for i in lo + 1..hi {
                let orig = &m.at(0).rows[i as usize];
                if orig.iter().all(|e| (lo..=hi).contains(&e.0)) {
                    let shifted: Row = orig.iter().map(|&(j, p)| (j - lo, p)).collect();
                    prop_assert_eq!(&t.at(0).rows[(i - lo) as usize], &shifted);
                }
            }
        }
    }
}
