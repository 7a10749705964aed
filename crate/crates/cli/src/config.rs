use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use spikewalk::dtmc::{assemble_chain, check_dt, select_dt, Conservation, SdeCoefficients, StateSpace, StateId};
use spikewalk::platform::Platform;
use spikewalk::problems::{problem_by_name, ProblemSpec};

use crate::Failure;

/// Largest admissible per-step constraint mass for inline chains.
pub const DT_THRESHOLD: f64 = 0.05;

/// Constant-coefficient jump diffusion on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSde {
    #[serde(default)]
    pub b: f64,
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub jump_rate: f64,
    /// Jump size `h`.
    #[serde(default)]
    pub jump: f64,
    #[serde(default)]
    pub c: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub radius: usize,
    /// Chosen from the ladder when absent.
    pub dt: Option<f64>,
    /// Initial walker state; the middle of the grid by default.
    pub start: Option<StateId>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub cpu_updates_per_joule: Option<f64>,
    pub nmc_updates_per_joule: Option<f64>,
    pub cpu_cores: Option<u64>,
    pub nmc_cores: Option<u64>,
    pub cpu_time_per_update: Option<f64>,
    pub nmc_time_per_update: Option<f64>,
    pub mesh_size: Option<u64>,
    /// `run_stats.json` from a prior spiking run.
    pub ticks: Option<PathBuf>,
}

/// The whole run description. Every command-line flag overrides the key of
/// the same name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Option<String>,
    /// Torus side.
    pub n: Option<usize>,
    pub sde: Option<InlineSde>,
    pub platform: Option<Platform>,
    pub walkers: Option<u64>,
    pub steps: Option<usize>,
    pub horizon: Option<f64>,
    pub seed: Option<u64>,
    pub conservation: Option<Conservation>,
    pub out: Option<PathBuf>,
    pub force: Option<bool>,
    /// Restrict runs to one start.
    pub start: Option<StateId>,
    /// Spread walkers above the platform cap over mesh copies.
    pub copies: Option<bool>,
    /// Walkers per start for the reference side of `compare`.
    pub reference_walkers: Option<u64>,
    #[serde(default)]
    pub cost: CostConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
    }

    /// SHA-256 of the canonical JSON form, output location excluded.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&RunConfig { out: None, ..self.clone() }).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn platform(&self) -> Platform {
        self.platform.unwrap_or(Platform::Loihi)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("spikewalk-out"))
    }

    pub fn require_seed(&self) -> Result<u64, Failure> {
        self.seed.ok_or_else(|| Failure::Config("a seed is required for stochastic runs (--seed or \"seed\")".into()))
    }

    pub fn walkers(&self) -> u64 {
        self.walkers.unwrap_or(1000)
    }

    /// The problem and the number of steps to run.
    pub fn resolve(&self) -> Result<(ProblemSpec, usize), Failure> {
        let problem = match (&self.problem, &self.sde) {
            (Some(_), Some(_)) => return Err(Failure::Config("give either a problem name or an inline sde, not both".into())),
            (None, None) => return Err(Failure::Config("no problem given (--problem or \"sde\")".into())),
            (Some(name), None) => problem_by_name(name, self.n).map_err(|e| Failure::Config(e.to_string()))?,
            (None, Some(sde)) => self.inline_problem(sde)?,
        };
        let dt = problem.dt();
        let steps = match (self.steps, self.horizon) {
            (Some(s), Some(h)) => {
                if (s as f64 * dt - h).abs() > 1e-9 * h.abs().max(1.0) {
                    return Err(Failure::Config(format!("horizon {h} does not equal steps {s} × dt {dt}")));
                }
                s
            }
            (Some(s), None) => s,
            (None, Some(h)) => {
                let s = (h / dt).round();
                if !(s >= 0.0) || (s * dt - h).abs() > 1e-9 * h.abs().max(1.0) {
                    return Err(Failure::Config(format!("horizon {h} is not a whole number of steps of {dt}")));
                }
                s as usize
            }
            (None, None) => problem.steps,
        };
        Ok((problem, steps))
    }

    fn inline_problem(&self, sde: &InlineSde) -> Result<ProblemSpec, Failure> {
        let space = StateSpace::uniform(sde.lo, sde.hi, sde.n, sde.radius).map_err(|e| Failure::Config(e.to_string()))?;
        let (rate, jump) = (sde.jump_rate, sde.jump);
        let coeffs = SdeCoefficients::constant(sde.b, sde.a).with_jumps(move |_, _| rate, move |_, _| vec![(jump, 1.0)]);
        let horizon = self.horizon.unwrap_or(1.0);
        let dt = match sde.dt {
            Some(dt) => {
                let check = check_dt(&coeffs, &space, dt, horizon);
                if !check.passes(DT_THRESHOLD) && !self.force.unwrap_or(false) {
                    return Err(Failure::Constraint(format!(
                        "dt {dt} violates the {} constraint (multi-jump {:.4}, off-neighbor {:.4}, limit {DT_THRESHOLD})",
                        check.binding(),
                        check.max_multi_jump,
                        check.max_off_neighbor
                    )));
                }
                dt
            }
            None => select_dt(&coeffs, &space, DT_THRESHOLD, horizon).map_err(|e| Failure::Constraint(e.to_string()))?,
        };
        let policy = self.conservation.unwrap_or(Conservation::TailToEdge);
        let mut model = assemble_chain(&coeffs, &space, dt, policy, None).map_err(|e| Failure::Constraint(e.to_string()))?;
        model.positions = space.points.iter().map(|&x| vec![x]).collect();
        let start = sde.start.unwrap_or((sde.n / 2) as StateId);
        if start as usize >= sde.n {
            return Err(Failure::Config(format!("start {start} is outside the {}-point grid", sde.n)));
        }
        Ok(ProblemSpec {
            name: "sde".into(),
            g: space.points.clone(),
            model,
            c_const: Some(sde.c),
            f: None,
            absorbing: None,
            starts: vec![start],
            oracle: None,
            areas: None,
            steps: 100,
        })
    }
}
