//! Compiling a transition matrix into a spiking mesh.
//!
//! Every transient state becomes a node with two counting circuits and a
//! probabilistic fan-out layer:
//!
//! ```text
//!   walkers ──> [buffer: Cb Gb Rb] ──> [counter: Cc Gc Rc] ──> fan-out ──> other buffers
//!                    ^ S1                     ^ S2
//! ```
//!
//! A counting circuit holds `k` walkers as potential `-k` on its count
//! neuron `C`. A supervisor pulse starts its generator `G`, which fires once
//! per tick and feeds `C` until `C` crosses threshold after `k + 1` pulses;
//! `C` then vetoes both `G` and the relay `R`, so `R` emits exactly `k`
//! spikes and `C` is left at zero. Done-accumulators count the `C` fires of
//! a phase and hand over to the other supervisor neuron.
//!
//! Absorbing states (unit rows) are compiled as bare count neurons.

use std::ops::{Add, Div, Mul, Sub};

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::density::DensitySeries;
use crate::dtmc::{finish_row, Matrix, Row, StateId, TransitionModel};
use crate::error::{Error, Result};
use crate::platform::Platform;
use crate::spiking::{loihi_weight_for_count, Network, NeuronId, NeuronParams, Program, Role, Simulator, LOIHI_NOISE, LOIHI_THRESHOLD};

/// Tolerance on `Σν = 1` accepted by tree construction.
pub const NORMALIZATION_EPS: f64 = 1.0 / 512.0;

/// Conditional probabilities of a balanced binary tree over `ν` (length a
/// power of two), in heap order: node `i` has children `2i+1`, `2i+2`, and
/// its positive branch is the lower half of its leaf range.
pub fn tree_conditionals<T>(nu: &[T]) -> Vec<T>
where
    T: Clone + Zero + PartialEq + Add<Output = T> + Div<Output = T>,
{
    let n = nu.len();
    assert!(n.is_power_of_two(), "leaf count must be a power of two");
    (0..n - 1)
        .map(|i| {
            let (lo, hi) = leaf_range(i, n);
            let mid = (lo + hi) / 2;
            let pos = nu[lo..mid].iter().cloned().fold(T::zero(), |a, b| a + b);
            let all = nu[lo..hi].iter().cloned().fold(T::zero(), |a, b| a + b);
            if all == T::zero() {
                T::zero()
            } else {
                pos / all
            }
        })
        .collect()
}

/// Leaf range `[lo, hi)` under internal node `i` of a tree with `n` leaves.
pub fn leaf_range(i: usize, n: usize) -> (usize, usize) {
    let depth = usize::BITS - 1 - (i + 1).leading_zeros();
    let first = (1usize << depth) - 1;
    let span = n >> depth;
    let lo = (i - first) * span;
    (lo, lo + span)
}

/// Root-to-leaf path of leaf `leaf`: `(internal node, positive branch?)`.
pub fn leaf_path(leaf: usize, n: usize) -> Vec<(usize, bool)> {
    let mut path = Vec::new();
    let mut node = leaf + n - 1;
    while node > 0 {
        let parent = (node - 1) / 2;
        path.push((parent, node == 2 * parent + 1));
        node = parent;
    }
    path.reverse();
    path
}

/// Leaf probabilities obtained by multiplying branch probabilities.
pub fn reconstruct_leaves<T>(conditionals: &[T], n: usize) -> Vec<T>
where
    T: Clone + One + Sub<Output = T> + Mul<Output = T>,
{
    (0..n)
        .map(|leaf| {
            leaf_path(leaf, n).into_iter().fold(T::one(), |acc, (node, pos)| {
                let p = conditionals[node].clone();
                let f = if pos { p } else { T::one() - p };
                acc * f
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Child {
    Node(usize),
    Leaf(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub p: f64,
    pub positive: Child,
    pub negative: Child,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityTree {
    /// Target leaf probabilities, zero-padded to a power of two.
    pub outputs: Vec<f64>,
    pub nodes: Vec<TreeNode>,
}

impl ProbabilityTree {
    pub fn n_leaves(&self) -> usize {
        self.outputs.len()
    }

    pub fn leaf_probabilities(&self) -> Vec<f64> {
        let p: Vec<f64> = self.nodes.iter().map(|n| n.p).collect();
        reconstruct_leaves(&p, self.n_leaves())
    }
}

pub fn build_probability_tree(nu: &[f64]) -> Result<ProbabilityTree> {
    if nu.is_empty() {
        return Err(Error::Domain("no outputs".into()));
    }
    if let Some(v) = nu.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!("negative output probability {v}")));
    }
    let sum: f64 = nu.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_EPS {
        return Err(Error::Normalization { sum });
    }
    let n = nu.len().next_power_of_two();
    let mut outputs = nu.to_vec();
    outputs.resize(n, 0.0);
    let p = tree_conditionals(&outputs);
    let child = |c: usize| if c >= n - 1 { Child::Leaf(c + 1 - n) } else { Child::Node(c) };
    let nodes = p.into_iter().enumerate().map(|(i, p)| TreeNode { p, positive: child(2 * i + 1), negative: child(2 * i + 2) }).collect();
    Ok(ProbabilityTree { outputs, nodes })
}

/// 8-bit encoding of a probability: a removed synapse or a stochastic-leak
/// parameter `λ = k - 1` realizing `k/256`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantized {
    SynapseRemoved,
    Lambda(u8),
}

impl Quantized {
    /// Numerator `k` of the realized probability `k/256`.
    pub fn count(self) -> u32 {
        match self {
            Quantized::SynapseRemoved => 0,
            Quantized::Lambda(l) => l as u32 + 1,
        }
    }

    pub fn probability(self) -> f64 {
        self.count() as f64 / 256.0
    }
}

pub fn quantize_probability(p: f64) -> Quantized {
    let k = (p.clamp(0.0, 1.0) * 256.0).round() as u32;
    if k == 0 {
        Quantized::SynapseRemoved
    } else {
        Quantized::Lambda((k - 1) as u8)
    }
}

/// Where a fan-out layer input comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Generator,
    Probability(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub leaf: usize,
    pub threshold: i64,
    /// `(source, weight, delay)`.
    pub inputs: Vec<(Source, i64, u32)>,
}

/// One layer of probability neurons plus the output neurons decoding them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerFragment {
    /// Conditional fire probability of each probability neuron (tree node order).
    pub probabilities: Vec<f64>,
    pub outputs: Vec<OutputSpec>,
}

/// Delay from the generator to the probability layer.
pub const PROB_DELAY: u32 = 1;
/// Delay from the probability layer to the outputs.
pub const OUTPUT_DELAY: u32 = 1;

/// Flattens the tree: output `i` fires iff all probability neurons on its
/// path where it lies on the positive branch fire and none where it lies on
/// the negative branch do.
pub fn compress_tree_to_layer(tree: &ProbabilityTree) -> LayerFragment {
    let n = tree.n_leaves();
    let outputs = (0..n)
        .map(|leaf| {
            let path = leaf_path(leaf, n);
            let c = path.iter().filter(|e| e.1).count() as i64;
            let veto = -c.max(1);
            let mut inputs: Vec<(Source, i64, u32)> =
                path.iter().map(|&(node, pos)| (Source::Probability(node), if pos { 1 } else { veto }, OUTPUT_DELAY)).collect();
            if c == 0 {
                inputs.push((Source::Generator, 1, PROB_DELAY + OUTPUT_DELAY));
            }
            OutputSpec { leaf, threshold: c.max(1), inputs }
        })
        .collect();
    LayerFragment { probabilities: tree.nodes.iter().map(|n| n.p).collect(), outputs }
}

impl LayerFragment {
    /// Outputs that fire when exactly the probability neurons in `fired`
    /// (a bitmask) fire.
    pub fn outcome(&self, fired: u64) -> Vec<usize> {
        self.outputs
            .iter()
            .filter(|o| {
                let v: i64 = o
                    .inputs
                    .iter()
                    .map(|&(s, w, _)| match s {
                        Source::Generator => w,
                        Source::Probability(i) if fired >> i & 1 == 1 => w,
                        Source::Probability(_) => 0,
                    })
                    .sum();
                v >= o.threshold
            })
            .map(|o| o.leaf)
            .collect()
    }

    /// Leaf distribution by exhaustive enumeration of firing patterns with
    /// the given per-neuron probabilities.
    pub fn enumerate_distribution(&self, probs: &[f64]) -> Vec<f64> {
        let m = probs.len();
        assert!(m < 24, "too many probability neurons to enumerate");
        let mut dist = vec![0.0; self.outputs.len()];
        for pattern in 0u64..(1 << m) {
            let w: f64 = (0..m).map(|i| if pattern >> i & 1 == 1 { probs[i] } else { 1.0 - probs[i] }).product();
            if w == 0.0 {
                continue;
            }
            for leaf in self.outcome(pattern) {
                dist[leaf] += w;
            }
        }
        dist
    }
}

/// Quantized counts `k` of each tree node.
pub fn quantized_counts(tree: &ProbabilityTree) -> Vec<u32> {
    tree.nodes.iter().map(|n| quantize_probability(n.p).count()).collect()
}

/// Leaf probabilities realized by 8-bit probability neurons.
pub fn realized_leaves(tree: &ProbabilityTree) -> Vec<f64> {
    let p: Vec<f64> = quantized_counts(tree).into_iter().map(|k| k as f64 / 256.0).collect();
    reconstruct_leaves(&p, tree.n_leaves())
}

/// Conditional probabilities `(P(r0), P(r1), P(r2))` of the three-neuron
/// four-exit node, and its fan-out layer. `r0` splits {o0, o1} from
/// {o2, o3}; `r1` picks o0 within the first pair, `r2` picks o2 within the
/// second.
pub fn build_truenorth_node(nu: [f64; 4]) -> Result<([f64; 3], LayerFragment)> {
    let sum: f64 = nu.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_EPS {
        return Err(Error::Normalization { sum });
    }
    let tree = build_probability_tree(&nu)?;
    let r = [tree.nodes[0].p, tree.nodes[1].p, tree.nodes[2].p];
    Ok((r, compress_tree_to_layer(&tree)))
}

/// Node-level wiring of one row: the exits, their quantized layer and the
/// realized exit probabilities. Exits whose realized probability is zero
/// and neurons with `k = 0` are dropped.
#[derive(Clone, Debug)]
struct NodePlan {
    /// `(destination, realized probability, output spec)`.
    exits: Vec<(StateId, f64, OutputSpec)>,
    /// `(tree node, k)` for every kept probability neuron.
    neurons: Vec<(usize, u32)>,
}

fn plan_row(row: &Row, platform: Platform) -> Result<NodePlan> {
    if row.len() > platform.max_fanout() {
        return Err(Error::Compile(format!("{} exits exceed the {} fan-out limit of {}", row.len(), platform, platform.max_fanout())));
    }
    let nu: Vec<f64> = row.iter().map(|e| e.1).collect();
    let tree = build_probability_tree(&nu)?;
    let frag = compress_tree_to_layer(&tree);
    let k = quantized_counts(&tree);
    let realized = realized_leaves(&tree);
    let mut exits = Vec::new();
    for (leaf, &(dst, _)) in row.iter().enumerate() {
        if realized[leaf] == 0.0 {
            continue;
        }
        let mut spec = frag.outputs[leaf].clone();
        // inhibition from a neuron that can never fire is dead wiring
        spec.inputs.retain(|&(s, _, _)| !matches!(s, Source::Probability(i) if k[i] == 0));
        exits.push((dst, realized[leaf], spec));
    }
    let mut used = vec![false; k.len()];
    for (_, _, spec) in &exits {
        for &(s, _, _) in &spec.inputs {
            if let Source::Probability(i) = s {
                used[i] = true;
            }
        }
    }
    let neurons = (0..k.len()).filter(|&i| used[i]).map(|i| (i, k[i])).collect();
    Ok(NodePlan { exits, neurons })
}

/// The chain a compiled mesh actually realizes.
pub fn realized_model(model: &TransitionModel, platform: Platform) -> Result<TransitionModel> {
    if !model.is_static() {
        return Err(Error::Compile("time-indexed chains must be collapsed first".into()));
    }
    let rows = model
        .at(0)
        .rows
        .iter()
        .map(|r| {
            if r.len() == 1 {
                return Ok(r.clone());
            }
            let plan = plan_row(r, platform)?;
            finish_row(plan.exits.iter().map(|e| (e.0, e.1)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(TransitionModel { matrices: crate::dtmc::Matrices::Static(Matrix { rows }), ..model.clone() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterCircuit {
    pub count: NeuronId,
    pub generator: NeuronId,
    pub relay: NeuronId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshNodeCircuit {
    pub state: StateId,
    /// Buffer count neuron; the only neuron of an absorbing node.
    pub buffer_count: NeuronId,
    pub buffer: Option<CounterCircuit>,
    pub counter: Option<CounterCircuit>,
    pub probability: Vec<NeuronId>,
    /// `(output neuron, destination state)`.
    pub outputs: Vec<(NeuronId, StateId)>,
    pub n_neurons: usize,
    pub n_synapses: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Supervisor {
    pub start_buffer: NeuronId,
    pub start_counter: NeuronId,
    pub buffer_done: NeuronId,
    pub counter_done: NeuronId,
}

/// Ticks per walk step beyond twice the largest per-node walker count.
pub const STEP_OVERHEAD_TICKS: u64 = 8;

#[derive(Clone, Debug)]
pub struct CompiledMesh {
    pub network: Network,
    pub program: Program,
    pub nodes: Vec<MeshNodeCircuit>,
    pub supervisor: Supervisor,
    pub platform: Platform,
    pub realized: TransitionModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshSummary {
    pub platform: Platform,
    pub states: usize,
    pub neurons: usize,
    pub synapses: usize,
    pub supervisor_neurons: usize,
    /// `(state, neurons, synapses)` per node.
    pub per_node: Vec<(StateId, usize, usize)>,
    pub step_overhead_ticks: u64,
}

fn add_counter(net: &mut Network, start: NeuronId, done: NeuronId) -> CounterCircuit {
    let count = net.add_neuron(NeuronParams::integrate_fire(1, -1), Role::Count);
    let generator = net.add_neuron(NeuronParams::threshold_gate(1), Role::Generator);
    let relay = net.add_neuron(NeuronParams::threshold_gate(1), Role::Relay);
    net.connect(start, generator, 1, 1);
    net.connect(start, count, 1, 1);
    net.connect(generator, generator, 1, 1);
    net.connect(generator, count, 1, 1);
    net.connect(count, generator, -1, 1);
    net.connect(generator, relay, 1, 1);
    net.connect(count, relay, -1, 1);
    net.connect(count, done, 1, 1);
    CounterCircuit { count, generator, relay }
}

/// Compiles a static chain. Unit rows become absorbing sinks.
pub fn compile_mesh(model: &TransitionModel, platform: Platform) -> Result<CompiledMesh> {
    if platform == Platform::Reference {
        return Err(Error::Compile("the reference platform has no spiking mesh".into()));
    }
    if !model.is_static() {
        return Err(Error::Compile("time-indexed chains must be collapsed first".into()));
    }
    let matrix = model.at(0);
    matrix.validate()?;
    let n = matrix.len();
    let plans: Vec<Option<NodePlan>> = matrix
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| if r.len() == 1 && r[0].0 as usize == i { Ok(None) } else { plan_row(r, platform).map(Some) })
        .collect::<Result<_>>()?;
    let active = plans.iter().filter(|p| p.is_some()).count() as i64;

    let mut net = Network::new();
    let sup = Supervisor {
        start_buffer: net.add_neuron(NeuronParams::threshold_gate(1), Role::Supervisor),
        start_counter: net.add_neuron(NeuronParams::threshold_gate(1), Role::Supervisor),
        buffer_done: net.add_neuron(NeuronParams::integrate_fire(active + 1, 0), Role::Supervisor),
        counter_done: net.add_neuron(NeuronParams::integrate_fire(active + 1, 0), Role::Supervisor),
    };
    net.connect(sup.start_buffer, sup.buffer_done, 1, 1);
    net.connect(sup.buffer_done, sup.start_counter, 1, 1);
    net.connect(sup.start_counter, sup.counter_done, 1, 1);
    net.connect(sup.counter_done, sup.start_buffer, 1, 3);
    let sup_synapses = net.synapses.len();

    // buffers first so that every destination exists before fan-out wiring
    let mut nodes: Vec<MeshNodeCircuit> = Vec::with_capacity(n);
    for (i, plan) in plans.iter().enumerate() {
        let (n0, s0) = (net.len(), net.synapses.len());
        let (buffer_count, buffer) = match plan {
            None => (net.add_neuron(NeuronParams::integrate_fire(1, -1), Role::Count), None),
            Some(_) => {
                let c = add_counter(&mut net, sup.start_buffer, sup.buffer_done);
                (c.count, Some(c))
            }
        };
        nodes.push(MeshNodeCircuit {
            state: i as StateId,
            buffer_count,
            buffer,
            counter: None,
            probability: Vec::new(),
            outputs: Vec::new(),
            n_neurons: net.len() - n0,
            n_synapses: net.synapses.len() - s0,
        });
    }
    for (i, plan) in plans.iter().enumerate() {
        let Some(plan) = plan else { continue };
        let (n0, s0) = (net.len(), net.synapses.len());
        let counter = add_counter(&mut net, sup.start_counter, sup.counter_done);
        net.connect(nodes[i].buffer.unwrap().relay, counter.count, -1, 1);
        let mut prob_ids = vec![NeuronId::MAX; plan.neurons.iter().map(|e| e.0 + 1).max().unwrap_or(0)];
        for &(node, k) in &plan.neurons {
            let (params, w) = match platform {
                Platform::TrueNorth => (NeuronParams::stochastic_leak(2, (k - 1) as u8), 1),
                _ => (NeuronParams::threshold_gate(LOIHI_THRESHOLD).with_noise(LOIHI_NOISE), loihi_weight_for_count(k)),
            };
            let id = net.add_neuron(params, Role::Probability);
            net.connect(counter.relay, id, w, PROB_DELAY);
            prob_ids[node] = id;
        }
        let mut outputs = Vec::new();
        for (dst, _, spec) in &plan.exits {
            let out = net.add_neuron(NeuronParams::threshold_gate(spec.threshold), Role::Output);
            for &(src, w, d) in &spec.inputs {
                let from = match src {
                    Source::Generator => counter.relay,
                    Source::Probability(node) => prob_ids[node],
                };
                net.connect(from, out, w, d);
            }
            net.connect(out, nodes[*dst as usize].buffer_count, -1, 1);
            outputs.push((out, *dst));
        }
        let node = &mut nodes[i];
        node.counter = Some(counter);
        node.probability = plan.neurons.iter().map(|&(t, _)| prob_ids[t]).collect();
        node.outputs = outputs;
        node.n_neurons += net.len() - n0;
        node.n_synapses += net.synapses.len() - s0;
    }
    debug_assert!(sup_synapses <= net.synapses.len());
    let program = Program::new(&net)?;
    let realized = realized_model(model, platform)?;
    Ok(CompiledMesh { network: net, program, nodes, supervisor: sup, platform, realized })
}

/// Per-run timing record.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    /// Ticks between consecutive density readouts.
    pub ticks_per_step: Vec<u64>,
    /// Largest walker count held by a transient node at each readout.
    pub max_node_count: Vec<u64>,
    pub total_ticks: u64,
}

impl CompiledMesh {
    pub fn n_states(&self) -> usize {
        self.nodes.len()
    }

    pub fn summary(&self) -> MeshSummary {
        MeshSummary {
            platform: self.platform,
            states: self.nodes.len(),
            neurons: self.network.len(),
            synapses: self.network.synapses.len(),
            supervisor_neurons: 4,
            per_node: self.nodes.iter().map(|n| (n.state, n.n_neurons, n.n_synapses)).collect(),
            step_overhead_ticks: STEP_OVERHEAD_TICKS,
        }
    }

    /// Runs `steps` walk steps from `initial` counts, calling `observe(step,
    /// counts)` at every readout including step 0.
    pub fn run<F: FnMut(usize, &[u64])>(&self, initial: &[u64], steps: usize, seed: u64, replica: u32, mut observe: F) -> Result<RunStats> {
        self.run_while(initial, steps, seed, replica, |k, c| {
            observe(k, c);
            true
        })
    }

    /// Like [`run`](Self::run), but stops after the first readout for which
    /// `observe` returns false.
    pub fn run_while<F: FnMut(usize, &[u64]) -> bool>(&self, initial: &[u64], steps: usize, seed: u64, replica: u32, mut observe: F) -> Result<RunStats> {
        if initial.len() != self.n_states() {
            return Err(Error::Domain(format!("initial density has {} entries for {} states", initial.len(), self.n_states())));
        }
        let cap = self.platform.walker_cap();
        let mut sim = Simulator::new(&self.program, seed, replica);
        for (node, &c) in self.nodes.iter().zip(initial) {
            if c > cap {
                return Err(Error::Capacity { count: c, cap, platform: self.platform.name().into() });
            }
            sim.set_potential(node.buffer_count, -(c as i64));
        }
        let total: u64 = initial.iter().sum();
        let budget = 2 * total + 16 * STEP_OVERHEAD_TICKS;
        sim.inject(self.supervisor.start_buffer, 1, 0)?;
        let mut stats = RunStats::default();
        let mut counts = vec![0u64; self.n_states()];
        let mut readouts = 0usize;
        let mut last = 0u64;
        while readouts <= steps {
            let t = sim.tick();
            let fired = sim.step()?;
            if fired.binary_search(&self.supervisor.start_buffer).is_ok() {
                let mut peak = 0;
                for (c, node) in counts.iter_mut().zip(&self.nodes) {
                    *c = (-sim.potential(node.buffer_count)) as u64;
                    if node.buffer.is_some() {
                        peak = peak.max(*c);
                    }
                }
                let more = observe(readouts, &counts);
                if readouts > 0 {
                    stats.ticks_per_step.push(t - last);
                }
                stats.max_node_count.push(peak);
                last = t;
                readouts += 1;
                if !more {
                    break;
                }
            } else if t - last > budget {
                return Err(Error::Structural(format!("supervisor stalled at tick {t}")));
            }
        }
        stats.total_ticks = sim.tick();
        Ok(stats)
    }
}

/// Density of walkers per state after each of `steps` walk steps.
pub fn simulate_density(mesh: &CompiledMesh, initial: &[u64], steps: usize, seed: u64) -> Result<(DensitySeries, RunStats)> {
    let mut snapshots = Vec::with_capacity(steps + 1);
    let stats = mesh.run(initial, steps, seed, 0, |_, c| snapshots.push(c.to_vec()))?;
    Ok((DensitySeries { dt: mesh.realized.dt, total: initial.iter().sum(), snapshots }, stats))
}
