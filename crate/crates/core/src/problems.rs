//! The worked examples: chains, initial data and oracles.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::dtmc::{assemble_chain, finish_row, poisson_window_probs, Conservation, Matrix, Row, SdeCoefficients, StateId, StateSpace, TransitionModel};
use crate::error::{Error, Result};
use crate::geometry::{barbell_chain, build_barbell_mesh, build_geodesic_sphere, build_torus_mesh, sphere_chain, BarbellMesh, SurfaceMesh};

/// `u(t, state)`.
pub type Oracle = Arc<dyn Fn(f64, StateId) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub model: TransitionModel,
    /// Initial (or boundary) data per state.
    pub g: Vec<f64>,
    /// Constant potential `c`, when the problem has one.
    pub c_const: Option<f64>,
    /// Source term per state for boundary-value problems.
    pub f: Option<Vec<f64>>,
    pub absorbing: Option<StateId>,
    /// States the solution is reported at.
    pub starts: Vec<StateId>,
    pub oracle: Option<Oracle>,
    /// Element areas for surface problems.
    pub areas: Option<Vec<f64>>,
    /// Default walk length.
    pub steps: usize,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("states", &self.model.n_states())
            .field("dt", &self.model.dt)
            .field("c_const", &self.c_const)
            .field("absorbing", &self.absorbing)
            .field("has_oracle", &self.oracle.is_some())
            .finish()
    }
}

impl ProblemSpec {
    pub fn dt(&self) -> f64 {
        self.model.dt
    }

    pub fn is_boundary_value(&self) -> bool {
        self.f.is_some()
    }
}

pub const PROBLEMS: [&str; 5] = ["boltzmann", "fluence", "sphere", "barbell", "torus"];

/// Looks a problem up by name; `n` is the torus side.
pub fn problem_by_name(name: &str, n: Option<usize>) -> Result<ProblemSpec> {
    match name {
        "boltzmann" => boltzmann_problem(),
        "fluence" => fluence_problem(),
        "sphere" => sphere_heat_problem(),
        "barbell" => barbell_problem(),
        "torus" => torus_diffusion_problem(n.unwrap_or(21)),
        _ => Err(Error::Domain(format!("unknown problem '{name}'; known problems: {}", PROBLEMS.join(", ")))),
    }
}

pub const BOLTZMANN_SIGMA_A: f64 = 0.5;
pub const BOLTZMANN_SIGMA_S: f64 = 5.0;

/// Mono-energetic flux with two directions `Ω = ∓1` (states 0 and 1).
pub fn boltzmann_problem() -> Result<ProblemSpec> {
    let dt = 0.01;
    // a scattering event keeps or reverses the direction with equal odds
    let coeffs = SdeCoefficients::constant(0.0, 0.0).with_jumps(|_, _| BOLTZMANN_SIGMA_S, |_, x| vec![(0.0, 0.5), (-2.0 * x, 0.5)]);
    let space = StateSpace::all_to_all(vec![-1.0, 1.0], 2.0);
    let mut model = assemble_chain(&coeffs, &space, dt, Conservation::TailToEdge, None)?;
    model.positions = vec![vec![-1.0], vec![1.0]];
    Ok(ProblemSpec {
        name: "boltzmann".into(),
        model,
        g: vec![3.0, 5.0],
        c_const: Some(-BOLTZMANN_SIGMA_A),
        f: None,
        absorbing: None,
        starts: vec![0, 1],
        oracle: Some(Arc::new(|t, s| boltzmann_oracle(t, if s == 1 { 1.0 } else { -1.0 }))),
        areas: None,
        steps: 200,
    })
}

/// `Φ(t, Ω)` in closed form.
pub fn boltzmann_oracle(t: f64, omega: f64) -> f64 {
    let slow = 4.0 * (-BOLTZMANN_SIGMA_A * t).exp();
    let fast = (-(BOLTZMANN_SIGMA_A + BOLTZMANN_SIGMA_S) * t).exp();
    if omega > 0.0 {
        slow + fast
    } else {
        slow - fast
    }
}

pub const FLUENCE_V: f64 = 200.0;
pub const FLUENCE_SIGMA_S: f64 = 0.15;
pub const FLUENCE_BINS: usize = 30;

/// Grid of the fluence problem: state `i·30 + j` is `(x_i, Ω_j)`; state
/// 900 is the absorbing exit.
pub fn fluence_state(i: usize, j: usize) -> StateId {
    (i * FLUENCE_BINS + j) as StateId
}

pub fn fluence_coordinates(s: StateId) -> Option<(f64, f64)> {
    let s = s as usize;
    if s >= FLUENCE_BINS * FLUENCE_BINS {
        return None;
    }
    let h = 2.0 / FLUENCE_BINS as f64;
    let mid = |k: usize| -1.0 + h / 2.0 + k as f64 * h;
    Some((mid(s / FLUENCE_BINS), mid(s % FLUENCE_BINS)))
}

/// Steady angular fluence on `[-1, 1]` with uniform rescattering and an
/// absorbing exit.
pub fn fluence_problem() -> Result<ProblemSpec> {
    let dt = 0.01;
    let nb = FLUENCE_BINS;
    let absorbing = (nb * nb) as StateId;
    let (_, q1, _) = poisson_window_probs(FLUENCE_V * FLUENCE_SIGMA_S * dt)?;
    let mut rows: Vec<Row> = Vec::with_capacity(nb * nb + 1);
    for i in 0..nb {
        for j in 0..nb {
            // vΩ_jΔt is an odd number of position bins: 2j - 29 for 0-based j
            let k = i as i64 - (2 * j as i64 - (nb as i64 - 1));
            if k < 0 || k >= nb as i64 {
                rows.push(vec![(absorbing, 1.0)]);
                continue;
            }
            let k = k as usize;
            let row: Row = (0..nb).map(|l| (fluence_state(k, l), if l == j { (1.0 - q1) + q1 / nb as f64 } else { q1 / nb as f64 })).collect();
            rows.push(finish_row(row)?);
        }
    }
    rows.push(vec![(absorbing, 1.0)]);
    let mut model = TransitionModel::from_matrix(dt, Matrix { rows });
    model.absorbing = Some(absorbing);
    model.positions = (0..=absorbing).map(|s| fluence_coordinates(s).map_or(vec![f64::NAN, f64::NAN], |(x, o)| vec![x, o])).collect();
    let f = (0..=absorbing).map(|s| fluence_coordinates(s).map_or(0.0, |(x, _)| FLUENCE_V * fluence_r(x))).collect();
    Ok(ProblemSpec {
        name: "fluence".into(),
        model,
        g: vec![0.0; nb * nb + 1],
        c_const: None,
        f: Some(f),
        absorbing: Some(absorbing),
        starts: (0..absorbing).collect(),
        oracle: None,
        areas: None,
        steps: 1000,
    })
}

/// Source density `R(x)`.
pub fn fluence_r(x: f64) -> f64 {
    if x.abs() < 0.5 {
        0.015
    } else {
        0.0
    }
}

pub const SPHERE_ALPHA: f64 = 1.0 / 42.0;

/// Orthonormal real spherical harmonic without the Condon–Shortley phase:
/// `Y_ℓ^0 = N P_ℓ(cos θ)`, `Y_ℓ^m = √2 N P_ℓ^m(cos θ) cos(mφ)` for `m > 0`.
pub fn eval_real_spherical_harmonic(l: u32, m: u32, theta: f64, phi: f64) -> Result<f64> {
    if m > l {
        return Err(Error::Domain(format!("need 0 <= m <= l, got l = {l}, m = {m}")));
    }
    let x = theta.cos();
    let s = theta.sin().abs();
    // P_m^m = (2m-1)!! s^m, then upward in l
    let mut pmm = 1.0;
    for k in 1..=m {
        pmm *= (2 * k - 1) as f64 * s;
    }
    let p = if l == m {
        pmm
    } else {
        let mut prev = pmm;
        let mut cur = x * (2 * m + 1) as f64 * pmm;
        for ll in m + 2..=l {
            let next = ((2 * ll - 1) as f64 * x * cur - (ll + m - 1) as f64 * prev) / (ll - m) as f64;
            prev = cur;
            cur = next;
        }
        cur
    };
    let mut ratio = 1.0;
    for k in (l - m + 1)..=(l + m) {
        ratio /= k as f64;
    }
    let norm = ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt();
    Ok(if m == 0 { norm * p } else { 2f64.sqrt() * norm * p * (m as f64 * phi).cos() })
}

/// `(θ, φ)` of a point on (or near) the unit sphere.
pub fn spherical_angles(p: [f64; 3]) -> (f64, f64) {
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    ((p[2] / r).clamp(-1.0, 1.0).acos(), p[1].atan2(p[0]))
}

/// Initial temperature on the sphere: `Y_6^0 + √(14/11)·Y_6^5`.
pub fn sphere_initial(p: [f64; 3]) -> f64 {
    let (t, f) = spherical_angles(p);
    eval_real_spherical_harmonic(6, 0, t, f).unwrap() + (14.0f64 / 11.0).sqrt() * eval_real_spherical_harmonic(6, 5, t, f).unwrap()
}

/// Decay rate of the ℓ = 6 mode: `ℓ(ℓ+1)·α`.
pub fn sphere_decay_rate(alpha: f64) -> f64 {
    42.0 * alpha
}

pub fn sphere_heat_problem() -> Result<ProblemSpec> {
    let mesh = build_geodesic_sphere(2)?;
    sphere_problem_on(&mesh)
}

fn sphere_problem_on(mesh: &SurfaceMesh) -> Result<ProblemSpec> {
    let chain = sphere_chain(mesh, SPHERE_ALPHA, 0.1)?;
    let g: Vec<f64> = mesh.states.iter().map(|&p| sphere_initial(p)).collect();
    let g0 = g.clone();
    let rate = sphere_decay_rate(SPHERE_ALPHA);
    Ok(ProblemSpec {
        name: "sphere".into(),
        model: chain.model,
        g,
        c_const: Some(0.0),
        f: None,
        absorbing: None,
        starts: (0..mesh.n_states() as StateId).collect(),
        oracle: Some(Arc::new(move |t, s| (-rate * t).exp() * g0[s as usize])),
        areas: Some(mesh.areas.clone()),
        steps: 30,
    })
}

pub const BARBELL_ALPHA: f64 = 0.5;
pub const BARBELL_KAPPA: f64 = 0.05;

/// Five-level initial temperature by height `y`.
pub fn barbell_initial(y: f64) -> f64 {
    if y >= 2.5 {
        20.0
    } else if y >= 1.0 {
        7.0
    } else if y >= 0.0 {
        5.0
    } else if y >= -1.0 {
        3.0
    } else {
        1.0
    }
}

pub fn barbell_problem() -> Result<ProblemSpec> {
    let bar = build_barbell_mesh()?;
    barbell_problem_on(&bar)
}

pub fn barbell_problem_on(bar: &BarbellMesh) -> Result<ProblemSpec> {
    let chain = barbell_chain(bar, BARBELL_ALPHA, 0.005)?;
    Ok(ProblemSpec {
        name: "barbell".into(),
        model: chain.model,
        g: bar.mesh.states.iter().map(|p| barbell_initial(p[1])).collect(),
        c_const: Some(-BARBELL_KAPPA),
        f: None,
        absorbing: None,
        starts: (0..bar.n_states() as StateId).collect(),
        oracle: None,
        areas: Some(bar.mesh.areas.clone()),
        steps: 2000,
    })
}

/// Uniform four-neighbor walk on an `n × n` torus, walkers starting at the
/// center state.
pub fn torus_diffusion_problem(n: usize) -> Result<ProblemSpec> {
    let mesh = build_torus_mesh(n)?;
    let id = |r: usize, c: usize| ((r % n) * n + c % n) as StateId;
    let rows = (0..n * n)
        .map(|s| {
            let (r, c) = (s / n, s % n);
            finish_row(vec![(id(r + n - 1, c), 0.25), (id(r + 1, c), 0.25), (id(r, c + n - 1), 0.25), (id(r, c + 1), 0.25)])
        })
        .collect::<Result<_>>()?;
    let mut model = TransitionModel::from_matrix(1.0, Matrix { rows });
    model.positions = mesh.states.iter().map(|s| vec![s[0], s[1]]).collect();
    Ok(ProblemSpec {
        name: "torus".into(),
        model,
        g: vec![1.0; n * n],
        c_const: Some(0.0),
        f: None,
        absorbing: None,
        starts: vec![torus_center(n)],
        oracle: None,
        areas: None,
        steps: 1000,
    })
}

pub fn torus_center(n: usize) -> StateId {
    ((n / 2) * n + n / 2) as StateId
}

/// Signed wraparound displacement of `s` from the center, in cells.
pub fn torus_displacement(n: usize, s: StateId) -> (i64, i64) {
    let c = torus_center(n) as usize;
    let wrap = |d: i64| {
        let n = n as i64;
        let d = d.rem_euclid(n);
        if d > n / 2 {
            d - n
        } else {
            d
        }
    };
    let (r, col) = (s as usize / n, s as usize % n);
    (wrap(r as i64 - (c / n) as i64), wrap(col as i64 - (c % n) as i64))
}


#[cfg(test)]
mod decay {
    use super::*;

    /// Fitted rate of the exact expected projection `Σ A g (P^k g) / Σ A g²`.
    #[test]
    fn chain_expectation_decays_at_unit_rate() {
        let p = sphere_heat_problem().unwrap();
        let a = p.areas.as_ref().unwrap();
        let m = p.model.at(0);
        let norm: f64 = a.iter().zip(&p.g).map(|(a, g)| a * g * g).sum();
        let mut u = p.g.clone();
        let (mut ts, mut ls) = (vec![], vec![]);
        for k in 0..=30 {
            let t = k as f64 * 0.1;
            if t >= 0.5 - 1e-9 {
                let c: f64 = a.iter().zip(&p.g).zip(&u).map(|((a, g), u)| a * g * u).sum::<f64>() / norm;
                ts.push(t);
                ls.push(c.ln());
            }
            u = m.apply(&u);
        }
        let n = ts.len() as f64;
        let (mt, ml) = (ts.iter().sum::<f64>() / n, ls.iter().sum::<f64>() / n);
        let slope = ts.iter().zip(&ls).map(|(t, l)| (t - mt) * (l - ml)).sum::<f64>() / ts.iter().map(|t| (t - mt).powi(2)).sum::<f64>();
        assert!((-slope - 1.0).abs() < 0.02, "rate {}", -slope);
    }
}
