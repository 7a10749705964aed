//! Discrete-time integer spiking neurons.
//!
//! Three neuron kinds are emulated:
//!
//! * `If`: integrate-and-fire. Unfired potential persists; a fire sets the
//!   potential to `reset_potential`.
//! * `Tg`: threshold gate. Potential is cleared after every fire decision.
//! * `StochasticLeak`: a threshold gate that, on ticks where it receives at
//!   least one spike, adds `F(λ, ρ) = [λ ≥ ρ]` with ρ an 8-bit draw.
//!
//! Randomness (stochastic leak and additive noise) is only consumed on
//! *armed* ticks, i.e. ticks where the neuron receives a synaptic event.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{hash3, stream_id};

pub type NeuronId = u32;

/// Width of an 8-bit draw.
pub const DRAW_RANGE: i64 = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NeuronKind {
    If,
    Tg,
    StochasticLeak,
}

/// Additive integer noise uniform on `low..=high`; the range must hold
/// exactly 256 values so that one 8-bit draw covers it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Noise {
    pub low: i64,
    pub high: i64,
}

/// The noise model of the Loihi-style probability neuron.
pub const LOIHI_NOISE: Noise = Noise { low: -127, high: 128 };
pub const LOIHI_THRESHOLD: i64 = 100;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronParams {
    pub kind: NeuronKind,
    pub threshold: i64,
    pub reset_potential: i64,
    pub leak: i64,
    pub stochastic_lambda: Option<u8>,
    pub noise_injection: Option<Noise>,
    pub initial_potential: i64,
}

impl NeuronParams {
    pub fn integrate_fire(threshold: i64, reset_potential: i64) -> Self {
        NeuronParams {
            kind: NeuronKind::If,
            threshold,
            reset_potential,
            leak: 0,
            stochastic_lambda: None,
            noise_injection: None,
            initial_potential: 0,
        }
    }

    pub fn threshold_gate(threshold: i64) -> Self {
        NeuronParams { kind: NeuronKind::Tg, ..Self::integrate_fire(threshold, 0) }
    }

    pub fn stochastic_leak(threshold: i64, lambda: u8) -> Self {
        NeuronParams {
            kind: NeuronKind::StochasticLeak,
            stochastic_lambda: Some(lambda),
            ..Self::integrate_fire(threshold, 0)
        }
    }

    pub fn with_noise(mut self, noise: Noise) -> Self {
        self.noise_injection = Some(noise);
        self
    }

    pub fn with_leak(mut self, leak: i64) -> Self {
        self.leak = leak;
        self
    }

    pub fn is_stochastic(&self) -> bool {
        self.stochastic_lambda.is_some() || self.noise_injection.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if self.threshold < 1 {
            return Err(Error::Structural(format!("threshold {} < 1", self.threshold)));
        }
        if self.stochastic_lambda.is_some() != (self.kind == NeuronKind::StochasticLeak) {
            return Err(Error::Structural("stochastic_lambda set on a non stochastic-leak neuron or missing".into()));
        }
        if self.kind == NeuronKind::If && self.reset_potential >= self.threshold {
            return Err(Error::Structural("reset potential at or above threshold".into()));
        }
        if let Some(n) = self.noise_injection {
            if n.high - n.low + 1 != DRAW_RANGE {
                return Err(Error::Structural(format!("noise range [{}, {}] is not 8-bit", n.low, n.high)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Synapse {
    pub src: NeuronId,
    pub dst: NeuronId,
    pub weight: i64,
    pub delay: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Count,
    Generator,
    Relay,
    Probability,
    Output,
    Supervisor,
    Input,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Count => "count",
            Role::Generator => "generator",
            Role::Relay => "relay",
            Role::Probability => "probability",
            Role::Output => "output",
            Role::Supervisor => "supervisor",
            Role::Input => "input",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub neurons: Vec<NeuronParams>,
    pub synapses: Vec<Synapse>,
    pub labels: Vec<Role>,
}

impl Network {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_neuron(&mut self, params: NeuronParams, role: Role) -> NeuronId {
        self.neurons.push(params);
        self.labels.push(role);
        (self.neurons.len() - 1) as NeuronId
    }

    pub fn connect(&mut self, src: NeuronId, dst: NeuronId, weight: i64, delay: u32) {
        self.synapses.push(Synapse { src, dst, weight, delay });
    }

    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.neurons.len() {
            return Err(Error::Structural("label map is not total".into()));
        }
        for n in &self.neurons {
            n.validate()?;
        }
        let n = self.neurons.len() as u32;
        for s in &self.synapses {
            if s.src >= n || s.dst >= n {
                return Err(Error::Structural(format!("synapse {} -> {} references a missing neuron", s.src, s.dst)));
            }
            if s.delay == 0 {
                return Err(Error::Structural(format!("synapse {} -> {} has zero delay", s.src, s.dst)));
            }
        }
        Ok(())
    }
}

/// Puts `count` walkers into an integrate-and-fire count neuron, encoded as
/// the negative potential `-count`.
pub fn inject_initial_count(net: &Network, neuron: NeuronId, count: u64, cap: u64, platform: &str) -> Result<Network> {
    if count > cap {
        return Err(Error::Capacity { count, cap, platform: platform.to_string() });
    }
    let p = net
        .neurons
        .get(neuron as usize)
        .ok_or_else(|| Error::Structural(format!("unknown neuron {neuron}")))?;
    if p.kind != NeuronKind::If {
        return Err(Error::Structural(format!("neuron {neuron} is not a count neuron")));
    }
    let mut out = net.clone();
    out.neurons[neuron as usize].initial_potential = -(count as i64);
    Ok(out)
}

/// `round(128 p + 36)`: the weight that pushes a threshold-100 neuron under
/// uniform noise on [-127, 128] over threshold.
pub fn loihi_weight_for_probability(p: f64) -> Result<i64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
    }
    Ok((128.0 * p + 36.0).round() as i64)
}

/// Number of the 256 noise values for which a single input of weight `w`
/// crosses `threshold`.
pub fn noise_fire_count(w: i64, threshold: i64, noise: Noise) -> i64 {
    (noise.low..=noise.high).filter(|&n| w + n >= threshold).count() as i64
}

/// Exact fire probability of a Loihi probability neuron driven by one spike
/// of weight `w`.
pub fn loihi_fire_probability(w: i64) -> f64 {
    noise_fire_count(w, LOIHI_THRESHOLD, LOIHI_NOISE) as f64 / DRAW_RANGE as f64
}

/// Weight that realizes exactly `k/256` under the Loihi noise model.
pub fn loihi_weight_for_count(k: u32) -> i64 {
    // w + n >= 100 holds for n in [100 - w, 128]: 29 + w values
    k as i64 + LOIHI_THRESHOLD - LOIHI_NOISE.high - 1
}

#[inline]
pub fn stochastic_leak_fires(lambda: u8, rho: u8) -> bool {
    lambda >= rho
}

/// Immutable, index-friendly view of a validated network.
#[derive(Clone, Debug)]
pub struct Program {
    params: Vec<NeuronParams>,
    out_start: Vec<u32>,
    out_dst: Vec<NeuronId>,
    out_weight: Vec<i64>,
    out_delay: Vec<u32>,
    leaky: Vec<NeuronId>,
    max_delay: u32,
    labels: Vec<Role>,
}

impl Program {
    pub fn new(net: &Network) -> Result<Self> {
        net.validate()?;
        let n = net.neurons.len();
        let mut counts = vec![0u32; n + 1];
        for s in &net.synapses {
            counts[s.src as usize + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let m = net.synapses.len();
        let mut fill = counts.clone();
        let (mut dst, mut weight, mut delay) = (vec![0; m], vec![0; m], vec![0; m]);
        for s in &net.synapses {
            let k = fill[s.src as usize] as usize;
            fill[s.src as usize] += 1;
            dst[k] = s.dst;
            weight[k] = s.weight;
            delay[k] = s.delay;
        }
        let leaky = (0..n as u32).filter(|&i| net.neurons[i as usize].kind == NeuronKind::If && net.neurons[i as usize].leak != 0).collect();
        Ok(Program {
            params: net.neurons.clone(),
            out_start: counts,
            out_dst: dst,
            out_weight: weight,
            out_delay: delay,
            leaky,
            max_delay: net.synapses.iter().map(|s| s.delay).max().unwrap_or(1),
            labels: net.labels.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn label(&self, id: NeuronId) -> Role {
        self.labels[id as usize]
    }
}

/// Spikes scheduled for future ticks, bucketed by arrival tick.
#[derive(Clone, Debug)]
pub struct SpikeQueue {
    slots: Vec<Vec<(NeuronId, i64)>>,
}

impl SpikeQueue {
    pub fn new(max_delay: u32) -> Self {
        SpikeQueue { slots: vec![Vec::new(); max_delay as usize + 1] }
    }

    fn slot(&mut self, tick: u64) -> &mut Vec<(NeuronId, i64)> {
        let n = self.slots.len() as u64;
        &mut self.slots[(tick % n) as usize]
    }

    pub fn is_idle(&self) -> bool {
        self.slots.iter().all(|s| s.is_empty())
    }
}

/// Run state of one network replica.
#[derive(Clone, Debug)]
pub struct Simulator<'p> {
    prog: &'p Program,
    potential: Vec<i64>,
    input: Vec<i64>,
    touched: Vec<bool>,
    armed: Vec<bool>,
    active: Vec<NeuronId>,
    draws: Vec<u64>,
    queue: SpikeQueue,
    fired: Vec<NeuronId>,
    tick: u64,
    seed: u64,
    replica: u32,
}

impl<'p> Simulator<'p> {
    pub fn new(prog: &'p Program, seed: u64, replica: u32) -> Self {
        let n = prog.len();
        let mut sim = Simulator {
            prog,
            potential: prog.params.iter().map(|p| p.initial_potential).collect(),
            input: vec![0; n],
            touched: vec![false; n],
            armed: vec![false; n],
            active: Vec::new(),
            draws: vec![0; n],
            queue: SpikeQueue::new(prog.max_delay),
            fired: Vec::new(),
            tick: 0,
            seed,
            replica,
        };
        for i in 0..n {
            if sim.potential[i] >= prog.params[i].threshold {
                sim.mark(i as NeuronId);
            }
        }
        sim
    }

    #[inline]
    fn mark(&mut self, id: NeuronId) {
        if !self.touched[id as usize] {
            self.touched[id as usize] = true;
            self.active.push(id);
        }
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn potential(&self, id: NeuronId) -> i64 {
        self.potential[id as usize]
    }

    /// Overwrites a potential, e.g. to load an initial walker count.
    pub fn set_potential(&mut self, id: NeuronId, v: i64) {
        self.potential[id as usize] = v;
        if v >= self.prog.params[id as usize].threshold {
            self.mark(id);
        }
    }

    /// Number of 8-bit draws neuron `id` has consumed.
    pub fn draws(&self, id: NeuronId) -> u64 {
        self.draws[id as usize]
    }

    /// Schedules an external spike of `weight` into `dst`, arriving `delay`
    /// ticks after the current tick (0 = this tick).
    pub fn inject(&mut self, dst: NeuronId, weight: i64, delay: u32) -> Result<()> {
        if dst as usize >= self.prog.len() {
            return Err(Error::Structural(format!("unknown neuron {dst} in spike queue")));
        }
        if delay > self.prog.max_delay {
            return Err(Error::Structural(format!("delay {delay} beyond queue horizon")));
        }
        let t = self.tick + delay as u64;
        self.queue.slot(t).push((dst, weight));
        Ok(())
    }

    pub fn is_quiescent(&self) -> bool {
        self.queue.is_idle()
    }

    #[inline]
    fn draw_u8(&mut self, id: NeuronId) -> u8 {
        let c = self.draws[id as usize];
        self.draws[id as usize] = c + 1;
        (hash3(self.seed, stream_id(self.replica, id), c) >> 56) as u8
    }

    /// Advances one tick and returns the neurons that fired, sorted by id.
    pub fn step(&mut self) -> Result<&[NeuronId]> {
        let t = self.tick;
        let n = self.prog.len() as u32;
        let mut arrivals = std::mem::take(self.queue.slot(t));
        for &(dst, w) in &arrivals {
            if dst >= n {
                return Err(Error::Structural(format!("unknown neuron {dst} in spike queue")));
            }
            self.mark(dst);
            self.armed[dst as usize] = true;
            self.input[dst as usize] += w;
        }
        arrivals.clear();
        *self.queue.slot(t) = arrivals;
        for i in 0..self.prog.leaky.len() {
            let id = self.prog.leaky[i];
            self.mark(id);
        }

        self.fired.clear();
        let active = std::mem::take(&mut self.active);
        for &id in &active {
            let i = id as usize;
            let armed = self.armed[i];
            let p = &self.prog.params[i];
            let mut v = self.potential[i] + self.input[i];
            if p.kind == NeuronKind::If {
                v += p.leak;
            }
            let (lambda, noise, kind, threshold, reset) = (p.stochastic_lambda, p.noise_injection, p.kind, p.threshold, p.reset_potential);
            if armed {
                if let Some(l) = lambda {
                    let rho = self.draw_u8(id);
                    v += stochastic_leak_fires(l, rho) as i64;
                }
                if let Some(nz) = noise {
                    v += nz.low + self.draw_u8(id) as i64;
                }
            }
            let fire = v >= threshold;
            self.potential[i] = match kind {
                NeuronKind::If if fire => reset,
                NeuronKind::If => v,
                _ => 0,
            };
            if fire {
                self.fired.push(id);
            }
            self.input[i] = 0;
            self.touched[i] = false;
            self.armed[i] = false;
        }
        self.active = active;
        self.active.clear();
        self.fired.sort_unstable();

        for k in 0..self.fired.len() {
            let f = self.fired[k] as usize;
            let (a, b) = (self.prog.out_start[f] as usize, self.prog.out_start[f + 1] as usize);
            for s in a..b {
                let at = t + self.prog.out_delay[s] as u64;
                let (dst, w) = (self.prog.out_dst[s], self.prog.out_weight[s]);
                self.queue.slot(at).push((dst, w));
            }
        }
        self.tick += 1;
        Ok(&self.fired)
    }
}

/// Writes `(tick, neuron_id, label)` rows for each fired neuron.
pub fn write_raster<W: Write>(mut out: W, prog: &Program, raster: &[(u64, NeuronId)]) -> std::io::Result<()> {
    writeln!(out, "tick,neuron_id,label")?;
    for &(t, id) in raster {
        writeln!(out, "{t},{id},{}", prog.label(id).as_str())?;
    }
    Ok(())
}

/// Runs `ticks` ticks and collects every spike.
pub fn run_raster(prog: &Program, seed: u64, replica: u32, stimuli: &[(NeuronId, i64, u32)], ticks: u64) -> Result<Vec<(u64, NeuronId)>> {
    let mut sim = Simulator::new(prog, seed, replica);
    for &(dst, w, d) in stimuli {
        sim.inject(dst, w, d)?;
    }
    let mut raster = Vec::new();
    for _ in 0..ticks {
        let t = sim.tick();
        raster.extend(sim.step()?.iter().map(|&id| (t, id)));
    }
    Ok(raster)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(params: NeuronParams) -> Program {
        let mut net = Network::new();
        net.add_neuron(params, Role::Input);
        Program::new(&net).unwrap()
    }

    #[test]
    fn if_neuron_fires_on_second_unit_spike() {
        let prog = single(NeuronParams::integrate_fire(2, 0));
        let mut sim = Simulator::new(&prog, 0, 0);
        sim.inject(0, 1, 0).unwrap();
        assert!(sim.step().unwrap().is_empty());
        assert_eq!(sim.potential(0), 1);
        sim.inject(0, 1, 0).unwrap();
        assert_eq!(sim.step().unwrap(), &[0]);
        assert_eq!(sim.potential(0), 0);
    }

    #[test]
    fn tg_neuron_clears_after_fire() {
        let prog = single(NeuronParams::threshold_gate(1));
        let mut sim = Simulator::new(&prog, 0, 0);
        for _ in 0..3 {
            sim.step().unwrap();
        }
        sim.inject(0, 1, 0).unwrap();
        assert_eq!(sim.step().unwrap(), &[0]);
        assert_eq!(sim.potential(0), 0);
        // a sub-threshold input is also forgotten
        let prog = single(NeuronParams::threshold_gate(3));
        let mut sim = Simulator::new(&prog, 0, 0);
        sim.inject(0, 2, 0).unwrap();
        assert!(sim.step().unwrap().is_empty());
        assert_eq!(sim.potential(0), 0);
    }

    #[test]
    fn saturated_stochastic_leak_always_fires() {
        let prog = single(NeuronParams::stochastic_leak(2, 255));
        let mut sim = Simulator::new(&prog, 11, 0);
        for _ in 0..2000 {
            sim.inject(0, 1, 0).unwrap();
            assert_eq!(sim.step().unwrap(), &[0]);
        }
    }

    #[test]
    fn stochastic_leak_rate_matches_enumeration() {
        let lambda = 127u8;
        let exact = (0..=255u8).filter(|&rho| stochastic_leak_fires(lambda, rho)).count() as f64 / 256.0;
        assert_eq!(exact, 0.5);
        let prog = single(NeuronParams::stochastic_leak(2, lambda));
        let mut sim = Simulator::new(&prog, 2024, 0);
        let n = 100_000;
        let mut fires = 0;
        for _ in 0..n {
            sim.inject(0, 1, 0).unwrap();
            fires += sim.step().unwrap().len();
        }
        assert_eq!(sim.draws(0), n as u64);
        let sigma = (n as f64 * exact * (1.0 - exact)).sqrt();
        assert!((fires as f64 - n as f64 * exact).abs() < 3.0 * sigma);
    }

    #[test]
    fn unarmed_ticks_consume_no_draws() {
        let prog = single(NeuronParams::stochastic_leak(2, 10));
        let mut sim = Simulator::new(&prog, 1, 0);
        for _ in 0..50 {
            sim.step().unwrap();
        }
        assert_eq!(sim.draws(0), 0);
    }

    #[test]
    fn loihi_weight_rule() {
        assert_eq!(loihi_weight_for_probability(0.5).unwrap(), 100);
        assert_eq!(loihi_weight_for_probability(0.0).unwrap(), 36);
        assert!(loihi_weight_for_probability(1.5).is_err());
        assert!(loihi_weight_for_probability(-0.1).is_err());
    }

    #[test]
    fn loihi_weight_fire_rate_matches_noise_enumeration() {
        let w = loihi_weight_for_probability(0.25).unwrap();
        assert_eq!(w, 68);
        // w + n >= 100 for n in [32, 128]
        let exact = loihi_fire_probability(w);
        assert_eq!(exact, 97.0 / 256.0);
        let prog = single(NeuronParams::threshold_gate(LOIHI_THRESHOLD).with_noise(LOIHI_NOISE));
        let mut sim = Simulator::new(&prog, 77, 0);
        let n = 100_000;
        let mut fires = 0;
        for _ in 0..n {
            sim.inject(0, w, 0).unwrap();
            fires += sim.step().unwrap().len();
        }
        let sigma = (n as f64 * exact * (1.0 - exact)).sqrt();
        assert!((fires as f64 - n as f64 * exact).abs() < 3.0 * sigma);
    }

    #[test]
    fn calibrated_loihi_weight_is_exact() {
        for k in 1..=256u32 {
            assert_eq!(noise_fire_count(loihi_weight_for_count(k), LOIHI_THRESHOLD, LOIHI_NOISE), k as i64);
        }
    }

    #[test]
    fn capacity_is_enforced() {
        let mut net = Network::new();
        let c = net.add_neuron(NeuronParams::integrate_fire(1, -1), Role::Count);
        assert!(inject_initial_count(&net, c, 393_215, 393_215, "TRUENORTH").is_ok());
        let e = inject_initial_count(&net, c, 393_216, 393_215, "TRUENORTH").unwrap_err();
        assert!(matches!(e, Error::Capacity { .. }));
        let net = inject_initial_count(&net, c, 7, 1000, "LOIHI").unwrap();
        assert_eq!(net.neurons[0].initial_potential, -7);
    }

    #[test]
    fn invalid_networks_are_rejected() {
        let mut net = Network::new();
        net.add_neuron(NeuronParams::threshold_gate(1), Role::Input);
        net.connect(0, 3, 1, 1);
        assert!(Program::new(&net).is_err());
        let mut net = Network::new();
        net.add_neuron(NeuronParams::threshold_gate(0), Role::Input);
        assert!(net.validate().is_err());
        let prog = single(NeuronParams::threshold_gate(1));
        let mut sim = Simulator::new(&prog, 0, 0);
        assert!(matches!(sim.inject(9, 1, 0), Err(Error::Structural(_))));
    }

    #[test]
    fn raster_csv_has_labels() {
        let mut net = Network::new();
        let a = net.add_neuron(NeuronParams::threshold_gate(1), Role::Generator);
        let b = net.add_neuron(NeuronParams::threshold_gate(1), Role::Relay);
        net.connect(a, b, 1, 2);
        let prog = Program::new(&net).unwrap();
        let raster = run_raster(&prog, 0, 0, &[(a, 1, 0)], 4).unwrap();
        assert_eq!(raster, vec![(0, a), (2, b)]);
        let mut buf = Vec::new();
        write_raster(&mut buf, &prog, &raster).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "tick,neuron_id,label\n0,0,generator\n2,1,relay\n");
    }

    fn random_net(seed: u64) -> (Program, Vec<(NeuronId, i64, u32)>) {
        let mut r = crate::rng::RngStream::new(seed, 0);
        let n = 12;
        let mut net = Network::new();
        for i in 0..n {
            let p = match i % 3 {
                0 => NeuronParams::integrate_fire(2, 0),
                1 => NeuronParams::threshold_gate(1),
                _ => NeuronParams::stochastic_leak(2, r.draw_u8()),
            };
            net.add_neuron(p, Role::Input);
        }
        for _ in 0..30 {
            let (s, d) = ((r.next_raw() % n) as u32, (r.next_raw() % n) as u32);
            let w = (r.next_raw() % 3) as i64 - 1;
            net.connect(s, d, w, 1 + (r.next_raw() % 3) as u32);
        }
        let stim = (0..n as u32).map(|i| (i, 2, 0)).collect();
        (Program::new(&net).unwrap(), stim)
    }

    proptest! {
        #[test]
        fn rasters_are_deterministic(seed in any::<u64>(), run_seed in any::<u64>()) {
            let (prog, stim) = random_net(seed);
            let a = run_raster(&prog, run_seed, 3, &stim, 40).unwrap();
            let b = run_raster(&prog, run_seed, 3, &stim, 40).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn tg_potential_is_zero_between_ticks(inputs in proptest::collection::vec(-3i64..4, 1..60)) {
            let prog = single(NeuronParams::threshold_gate(2));
            let mut sim = Simulator::new(&prog, 0, 0);
            for w in inputs {
                if w != 0 {
                    sim.inject(0, w, 0).unwrap();
                }
                sim.step().unwrap();
                prop_assert_eq!(sim.potential(0), 0);
            }
        }

        #[test]
        fn if_potential_persists_without_input(start in -1000i64..1, idle in 1usize..200) {
            let mut net = Network::new();
            net.add_neuron(NeuronParams::integrate_fire(1, 0), Role::Count);
            let net = inject_initial_count(&net, 0, (-start) as u64, u64::MAX, "REFERENCE").unwrap();
            let prog = Program::new(&net).unwrap();
            let mut sim = Simulator::new(&prog, 0, 0);
            for _ in 0..idle {
                prop_assert!(sim.step().unwrap().is_empty());
            }
            prop_assert_eq!(sim.potential(0), start);
        }
    }
}
