//! Time and energy scaling of random-walk workloads on conventional
//! processors and on a spiking mesh.
//!
//! All default constants are a model built from published envelopes, not a
//! measurement of any machine.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlatformKind {
    /// Conventional multi-core processor.
    Vn,
    Neural,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlatformParams {
    pub kind: PlatformKind,
    /// `P` for a processor, `N_cores` for a neural chip.
    pub cores: u64,
    /// Seconds per walker update.
    pub time_per_update: f64,
    /// Joules per walker update.
    pub energy_per_update: f64,
    /// Mesh size `K`; ignored for processors.
    pub mesh_size: u64,
}

/// Walker updates per joule bands quoted for the two platform classes.
pub const CPU_UPDATES_PER_JOULE: (f64, f64) = (2.5e6, 3.0e6);
pub const NMC_UPDATES_PER_JOULE: (f64, f64) = (6.0e7, 2.5e8);

/// Largest time-slope ratio still counted as comparable scaling.
pub const MAX_SLOPE_RATIO: f64 = 1.0e3;
/// Largest difference in fitted time exponents still counted as comparable.
pub const MAX_EXPONENT_GAP: f64 = 0.1;

impl PlatformParams {
    pub fn vn(cores: u64, time_per_update: f64, energy_per_update: f64) -> Self {
        PlatformParams { kind: PlatformKind::Vn, cores, time_per_update, energy_per_update, mesh_size: 1 }
    }

    pub fn neural(cores: u64, mesh_size: u64, time_per_update: f64, energy_per_update: f64) -> Self {
        PlatformParams { kind: PlatformKind::Neural, cores, time_per_update, energy_per_update, mesh_size }
    }

    /// 8-core processor at the midpoint of the CPU band.
    pub fn default_cpu() -> Self {
        let mid = 0.5 * (CPU_UPDATES_PER_JOULE.0 + CPU_UPDATES_PER_JOULE.1);
        Self::vn(8, 1.0e-7, 1.0 / mid)
    }

    /// One chip with 128 cores running a mesh of `k` states, at the low end
    /// of the neural band.
    pub fn default_neural(k: u64) -> Self {
        Self::neural(128, k, 1.0e-6, 1.0 / NMC_UPDATES_PER_JOULE.0)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.time_per_update > 0.0 && self.energy_per_update > 0.0;
        if !(positive && self.time_per_update.is_finite() && self.energy_per_update.is_finite()) {
            return Err(Error::Domain(format!("platform constants must be positive and finite: {self:?}")));
        }
        if self.cores < 1 || (self.kind == PlatformKind::Neural && self.mesh_size < 1) {
            return Err(Error::Domain(format!("cores and mesh size must be at least 1: {self:?}")));
        }
        Ok(())
    }

    /// `P` for a processor, `min(N_cores, K)` for a neural chip.
    pub fn parallelism(&self) -> u64 {
        match self.kind {
            PlatformKind::Vn => self.cores,
            PlatformKind::Neural => self.cores.min(self.mesh_size),
        }
    }

    pub fn updates_per_joule(&self) -> f64 {
        1.0 / self.energy_per_update
    }
}

/// `C · W · S / P` or `c · W · S / M`.
pub fn predict_time(p: &PlatformParams, walkers: u64, steps: u64) -> f64 {
    p.time_per_update * (walkers as f64 * steps as f64) / p.parallelism() as f64
}

/// `C · W · S`, whatever the parallelism.
pub fn predict_energy(p: &PlatformParams, walkers: u64, steps: u64) -> f64 {
    p.energy_per_update * (walkers as f64 * steps as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantageReport {
    pub walkers: u64,
    pub steps: u64,
    pub mesh_size: u64,
    pub vn_time: f64,
    pub neural_time: f64,
    pub vn_energy: f64,
    pub neural_energy: f64,
    /// Neural over conventional.
    pub time_ratio: f64,
    /// Conventional over neural, so larger favors the neural chip.
    pub energy_ratio: f64,
    pub vn_updates_per_joule: f64,
    pub neural_updates_per_joule: f64,
    /// Fitted exponents of time in `W` over `W, 2W, 4W`.
    pub vn_time_exponent: f64,
    pub neural_time_exponent: f64,
    pub comparable_scaling: bool,
    pub neuromorphic_advantage: bool,
}

fn time_exponent(p: &PlatformParams, w: u64, s: u64) -> f64 {
    let t: Vec<f64> = [w, 2 * w, 4 * w].iter().map(|&w| predict_time(p, w, s).ln()).collect();
    (t[2] - t[0]) / (4f64).ln()
}

/// Advantage in energy with comparable time scaling.
pub fn advantage_report(vn: &PlatformParams, neural: &PlatformParams, walkers: u64, steps: u64, mesh_size: u64) -> Result<AdvantageReport> {
    vn.validate()?;
    neural.validate()?;
    if walkers < 1 || steps < 1 {
        return Err(Error::Domain("walkers and steps must be at least 1".into()));
    }
    let neural = PlatformParams { mesh_size, ..*neural };
    let (vt, nt) = (predict_time(vn, walkers, steps), predict_time(&neural, walkers, steps));
    let (ve, ne) = (predict_energy(vn, walkers, steps), predict_energy(&neural, walkers, steps));
    let (vx, nx) = (time_exponent(vn, walkers, steps), time_exponent(&neural, walkers, steps));
    let time_ratio = nt / vt;
    let comparable = (vx - nx).abs() <= MAX_EXPONENT_GAP && time_ratio <= MAX_SLOPE_RATIO && time_ratio >= 1.0 / MAX_SLOPE_RATIO;
    let energy_ratio = ve / ne;
    Ok(AdvantageReport {
        walkers,
        steps,
        mesh_size,
        vn_time: vt,
        neural_time: nt,
        vn_energy: ve,
        neural_energy: ne,
        time_ratio,
        energy_ratio,
        vn_updates_per_joule: (walkers * steps) as f64 / ve,
        neural_updates_per_joule: (walkers * steps) as f64 / ne,
        vn_time_exponent: vx,
        neural_time_exponent: nx,
        comparable_scaling: comparable,
        neuromorphic_advantage: energy_ratio > 1.0 && comparable,
    })
}

/// Reports at the corners of the published bands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub cpu_updates_per_joule: (f64, f64),
    pub nmc_updates_per_joule: (f64, f64),
    /// Worst case for the neural chip: best CPU against the least efficient NMC.
    pub worst_case: AdvantageReport,
    pub best_case: AdvantageReport,
}

impl EnvelopeReport {
    pub fn neuromorphic_advantage(&self) -> bool {
        self.worst_case.neuromorphic_advantage && self.best_case.neuromorphic_advantage
    }
}

pub fn envelope_report(vn: &PlatformParams, neural: &PlatformParams, walkers: u64, steps: u64, mesh_size: u64) -> Result<EnvelopeReport> {
    let with = |p: &PlatformParams, upj: f64| PlatformParams { energy_per_update: 1.0 / upj, ..*p };
    let worst = advantage_report(&with(vn, CPU_UPDATES_PER_JOULE.1), &with(neural, NMC_UPDATES_PER_JOULE.0), walkers, steps, mesh_size)?;
    let best = advantage_report(&with(vn, CPU_UPDATES_PER_JOULE.0), &with(neural, NMC_UPDATES_PER_JOULE.1), walkers, steps, mesh_size)?;
    Ok(EnvelopeReport {
        cpu_updates_per_joule: (best.vn_updates_per_joule, worst.vn_updates_per_joule),
        nmc_updates_per_joule: (worst.neural_updates_per_joule, best.neural_updates_per_joule),
        worst_case: worst,
        best_case: best,
    })
}

/// Mean ticks per step after skipping the first `skip` steps.
pub fn tail_step_ratio(ticks_per_step: &[u64], skip: usize) -> Result<f64> {
    let tail = ticks_per_step.get(skip..).filter(|t| !t.is_empty()).ok_or_else(|| Error::Domain(format!("need more than {skip} steps, got {}", ticks_per_step.len())))?;
    Ok(tail.iter().map(|&t| t as f64).sum::<f64>() / tail.len() as f64)
}

/// Execution time rescaled to exactly `target_steps` steps by adding or
/// removing whole steps at the tail ratio.
pub fn normalize_time(measured_seconds: f64, steps_run: u64, target_steps: u64, tail_ratio: f64, seconds_per_tick: f64) -> f64 {
    measured_seconds - (steps_run as f64 - target_steps as f64) * tail_ratio * seconds_per_tick
}

/// Per-step effective parallelism `c · W / ticks_k`, where `c` is the ticks
/// a node spends per walker it forwards.
pub fn effective_parallelism(ticks_per_step: &[u64], walkers: u64, ticks_per_update: f64) -> Vec<f64> {
    ticks_per_step.iter().map(|&t| ticks_per_update * walkers as f64 / t.max(1) as f64).collect()
}

/// Means of the first and last quarters of a series.
pub fn quarter_means(series: &[f64]) -> Option<(f64, f64)> {
    let q = series.len() / 4;
    if q == 0 {
        return None;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&series[..q]), mean(&series[series.len() - q..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        assert_eq!(predict_time(&PlatformParams::vn(4, 1.0, 1.0), 1000, 100_000), 2.5e7);
        assert_eq!(PlatformParams::neural(128, 441, 1.0, 1.0).parallelism(), 128);
        assert_eq!(PlatformParams::neural(4096, 441, 1.0, 1.0).parallelism(), 441);
        let p = PlatformParams::vn(4, 1.0, 3.0);
        let q = PlatformParams { cores: 8, ..p };
        assert_eq!(predict_energy(&p, 10, 20), predict_energy(&q, 10, 20));
        let c = PlatformParams::default_cpu();
        assert!((1.0 / 3.0e6..=1.0 / 2.5e6).contains(&c.energy_per_update));
    }

    #[test]
    fn identical_platforms_have_no_advantage() {
        let p = PlatformParams::vn(16, 1e-6, 1e-7);
        let n = PlatformParams::neural(16, 441, 1e-6, 1e-7);
        let r = advantage_report(&p, &n, 1000, 1000, 441).unwrap();
        assert_eq!((r.time_ratio, r.energy_ratio), (1.0, 1.0));
        assert!(!r.neuromorphic_advantage);
    }

    #[test]
    fn slower_but_cheaper_is_an_advantage() {
        let p = PlatformParams::vn(16, 1e-6, 2e-6);
        let n = PlatformParams::neural(16, 441, 1e-4, 1e-7);
        let r = advantage_report(&p, &n, 1000, 1000, 441).unwrap();
        assert_relative_eq!(r.time_ratio, 100.0, epsilon = 1e-9);
        assert_relative_eq!(r.energy_ratio, 20.0, epsilon = 1e-9);
        assert!(r.comparable_scaling && r.neuromorphic_advantage);
    }

    #[test]
    fn paper_envelope() {
        let r = envelope_report(&PlatformParams::default_cpu(), &PlatformParams::default_neural(441), 32_000, 100_000, 441).unwrap();
        assert!(r.neuromorphic_advantage());
        assert!(r.worst_case.energy_ratio >= 20.0 - 1e-9);
        assert_relative_eq!(r.cpu_updates_per_joule.0, 2.5e6, max_relative = 1e-12);
        assert_relative_eq!(r.cpu_updates_per_joule.1, 3.0e6, max_relative = 1e-12);
        assert_relative_eq!(r.nmc_updates_per_joule.0, 6.0e7, max_relative = 1e-12);
        assert_relative_eq!(r.nmc_updates_per_joule.1, 2.5e8, max_relative = 1e-12);
        // a hypothetical super-efficient processor removes the advantage
        let cpu = PlatformParams { energy_per_update: 1e-9, ..PlatformParams::default_cpu() };
        assert!(!advantage_report(&cpu, &PlatformParams::default_neural(441), 1000, 1000, 441).unwrap().neuromorphic_advantage);
    }

    #[test]
    fn tail_normalization_example() {
        let t = normalize_time(937.0, 100_034, 100_000, 17.382, 0.0005);
        assert_relative_eq!(t, 936.704506, epsilon = 1e-9);
        assert_eq!((t * 1000.0).round() / 1000.0, 936.705);
        assert_eq!(tail_step_ratio(&[100, 100, 10, 12], 2).unwrap(), 11.0);
        assert!(tail_step_ratio(&[1, 2], 2).is_err());
    }

    #[test]
    fn invalid_constants_are_rejected() {
        assert!(PlatformParams::vn(0, 1.0, 1.0).validate().is_err());
        assert!(PlatformParams::vn(1, -1.0, 1.0).validate().is_err());
        assert!(PlatformParams::neural(1, 0, 1.0, 1.0).validate().is_err());
    }

    fn platform() -> impl Strategy<Value = PlatformParams> {
        (any::<bool>(), 1u64..5000, 1u64..5000, 1e-9f64..1e-3, 1e-9f64..1e-3).prop_map(|(vn, cores, k, t, e)| {
            if vn {
                PlatformParams::vn(cores, t, e)
            } else {
                PlatformParams::neural(cores, k, t, e)
            }
        })
    }

    proptest! {
        #[test]
        fn time_is_linear_in_walkers_and_steps(p in platform(), w in 1u64..100_000, s in 1u64..100_000) {
            for (a, b, c) in [(predict_time(&p, w, s), predict_time(&p, 2 * w, s), predict_time(&p, 3 * w, s)),
                              (predict_time(&p, w, s), predict_time(&p, w, 2 * s), predict_time(&p, w, 3 * s))] {
                prop_assert!((b - 2.0 * a).abs() <= 1e-12 * b);
                prop_assert!((c - 2.0 * b + a).abs() <= 1e-12 * c);
            }
        }

        #[test]
        fn energy_ignores_parallelism(p in platform(), cores in 1u64..10_000, k in 1u64..10_000, w in 1u64..10_000, s in 1u64..10_000) {
            let q = PlatformParams { cores, mesh_size: k, ..p };
            prop_assert_eq!(predict_energy(&p, w, s), predict_energy(&q, w, s));
            prop_assert!((predict_energy(&p, w, s) / (w * s) as f64 * p.updates_per_joule() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn effective_parallelism_is_bounded(counts in proptest::collection::vec(0u64..50, 1..60)) {
            // a step costs 2 ticks per walker at the busiest node plus overhead
            let w: u64 = counts.iter().sum::<u64>().max(1);
            let busiest = *counts.iter().max().unwrap();
            let ticks = 2 * busiest + 8;
            let m = effective_parallelism(&[ticks], w, 2.0)[0];
            prop_assert!(m <= counts.len() as f64);
        }
    }
}
