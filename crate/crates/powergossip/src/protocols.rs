//! Synchronous gossip protocols over a mixing matrix.
//!
//! A [`GossipNetwork`] owns the per-node states, the topology, a bit ledger,
//! and the round counter. Every round reads only pre-round state and commits
//! all updates at once, so results do not depend on edge iteration order.
//! Four round types are provided:
//!
//! * exact averaging (full matrices on every edge);
//! * one-shot linear projection of the pairwise differences, with both
//!   endpoints of an edge applying the same realization drawn from a shared
//!   per-edge, per-round stream;
//! * power-iteration gossip driven by per-edge [`EdgeState`]s;
//! * public-copy gossip: nodes quantize the increment between their state
//!   and a public copy, everyone updates the copies, and states move toward
//!   neighbor copies under a step size `gamma`.
//!
//! All four preserve the node average exactly in exact arithmetic: the first
//! three because each edge applies equal and opposite updates, the last
//! because the mixing matrix is doubly stochastic.

use serde::Serialize;

use crate::compressors::{
    apply_projection, baseline_compress, power_step, reapply_projection, BaselineCompressor,
    EdgeState, LinearProjectionCompressor, PairDifference,
};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};
use crate::topology::MixingMatrix;

/// How float payloads are priced on the wire. Raw bits (signs, indices) are
/// charged as-is.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Accounting {
    pub bits_per_float: u32,
}

impl Default for Accounting {
    fn default() -> Self {
        Accounting { bits_per_float: 32 }
    }
}

impl Accounting {
    pub fn new(bits_per_float: u32) -> Result<Self> {
        if bits_per_float == 32 || bits_per_float == 64 {
            Ok(Accounting { bits_per_float })
        } else {
            Err(Error::invalid(format!(
                "bits per float must be 32 or 64, got {bits_per_float}"
            )))
        }
    }
}

/// One directed transmission in a round, recorded for accounting.
#[derive(Clone, Copy, Debug)]
pub struct Message {
    pub src: usize,
    pub dst: usize,
    pub floats: usize,
    pub raw_bits: u64,
}

impl Message {
    pub fn bits(&self, accounting: &Accounting) -> u64 {
        self.floats as u64 * accounting.bits_per_float as u64 + self.raw_bits
    }
}

/// All transmissions of one round.
#[derive(Clone, Debug, Default)]
pub struct RoundLedger {
    pub messages: Vec<Message>,
}

impl RoundLedger {
    pub fn push(&mut self, msg: Message) {
        self.messages.push(msg);
    }

    pub fn total_floats(&self) -> usize {
        self.messages.iter().map(|m| m.floats).sum()
    }

    pub fn total_bits(&self, accounting: &Accounting) -> u64 {
        self.messages.iter().map(|m| m.bits(accounting)).sum()
    }
}

/// One metrics row of a consensus run. `bits_per_node` is cumulative.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ConsensusMetrics {
    pub round: u64,
    pub bits_per_node: f64,
    pub error: f64,
}

/// A node's private state: its matrix, an optional public copy (only the
/// public-copy protocol uses it), and its own random stream for gradient
/// sampling.
#[derive(Clone, Debug)]
pub struct NodeSlot {
    pub id: usize,
    pub state: Matrix,
    pub public_copy: Option<Matrix>,
    pub rng: RngStream,
}

/// Mean squared Frobenius distance of `states` from a reference matrix.
pub fn consensus_error(states: &[Matrix], reference: &Matrix) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::invalid("consensus error over no nodes"));
    }
    let mut acc = 0.0;
    for s in states {
        acc += s.sub(reference)?.frob_norm_sq();
    }
    Ok(acc / states.len() as f64)
}

#[derive(Debug)]
pub struct GossipNetwork {
    nodes: Vec<NodeSlot>,
    mixing: MixingMatrix,
    accounting: Accounting,
    round: u64,
    total_bits: u128,
    /// Never drawn from directly; every use derives a child stream, so edge
    /// randomness is a pure function of (seed, edge, round).
    edge_root: RngStream,
    initial_mean: Matrix,
    initial_error: f64,
}

impl GossipNetwork {
    pub fn new(
        initial: Vec<Matrix>,
        mixing: MixingMatrix,
        accounting: Accounting,
        seed: u64,
    ) -> Result<Self> {
        if initial.len() != mixing.n() {
            return Err(Error::invalid(format!(
                "{} initial states for a {}-node topology",
                initial.len(),
                mixing.n()
            )));
        }
        let shape = initial
            .first()
            .ok_or_else(|| Error::invalid("a network needs at least one node"))?
            .shape();
        for (i, m) in initial.iter().enumerate() {
            if m.shape() != shape {
                return Err(Error::ShapeMismatch {
                    context: format!("initial state of node {i}"),
                    expected: shape,
                    got: m.shape(),
                });
            }
            m.ensure_finite(&format!("initial state of node {i}"))?;
        }
        let root = RngStream::new(seed);
        let nodes = initial
            .into_iter()
            .enumerate()
            .map(|(id, state)| NodeSlot {
                id,
                state,
                public_copy: None,
                rng: root.derive("node", id as u64),
            })
            .collect::<Vec<_>>();
        let states: Vec<Matrix> = nodes.iter().map(|n| n.state.clone()).collect();
        let initial_mean = Matrix::mean_of(&states)?;
        let initial_error = consensus_error(&states, &initial_mean)?;
        Ok(GossipNetwork {
            nodes,
            mixing,
            accounting,
            round: 0,
            total_bits: 0,
            edge_root: root.derive("edge", 0),
            initial_mean,
            initial_error,
        })
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.nodes[0].state.shape()
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn mixing(&self) -> &MixingMatrix {
        &self.mixing
    }

    pub fn accounting(&self) -> &Accounting {
        &self.accounting
    }

    pub fn state(&self, i: usize) -> &Matrix {
        &self.nodes[i].state
    }

    pub fn states(&self) -> Vec<Matrix> {
        self.nodes.iter().map(|n| n.state.clone()).collect()
    }

    pub fn public_copy(&self, i: usize) -> Option<&Matrix> {
        self.nodes[i].public_copy.as_ref()
    }

    pub fn node_rng_mut(&mut self, i: usize) -> &mut RngStream {
        &mut self.nodes[i].rng
    }

    pub fn mean_state(&self) -> Matrix {
        let states: Vec<Matrix> = self.nodes.iter().map(|n| n.state.clone()).collect();
        Matrix::mean_of(&states).expect("network is non-empty")
    }

    /// Average state at construction time; the reference point for
    /// consensus error.
    pub fn initial_mean(&self) -> &Matrix {
        &self.initial_mean
    }

    pub fn initial_error(&self) -> f64 {
        self.initial_error
    }

    pub fn cumulative_bits(&self) -> u128 {
        self.total_bits
    }

    pub fn bits_per_node(&self) -> f64 {
        self.total_bits as f64 / self.n() as f64
    }

    /// Mean squared distance from the initial average.
    pub fn error_from_initial_mean(&self) -> f64 {
        let mut acc = 0.0;
        for node in &self.nodes {
            acc += node
                .state
                .sub(&self.initial_mean)
                .expect("states keep their shape")
                .frob_norm_sq();
        }
        acc / self.n() as f64
    }

    pub fn metrics(&self) -> ConsensusMetrics {
        ConsensusMetrics {
            round: self.round,
            bits_per_node: self.bits_per_node(),
            error: self.error_from_initial_mean(),
        }
    }

    /// `W`-averages of the current states: row `i` of the result is
    /// `sum_j W_ij X_j`.
    pub fn mix_states(&self) -> Vec<Matrix> {
        let (rows, cols) = self.shape();
        let n = self.n();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut acc = Matrix::zeros(rows, cols);
            for (j, node) in self.nodes.iter().enumerate() {
                let w = self.mixing.weight(i, j);
                if w != 0.0 {
                    acc.add_scaled_in_place(&node.state, w);
                }
            }
            out.push(acc);
        }
        out
    }

    /// Replaces all states and charges the round's traffic. The new states
    /// must be finite; a violation aborts the run rather than letting NaNs
    /// spread silently.
    fn commit(&mut self, new_states: Vec<Matrix>, ledger: RoundLedger) -> Result<ConsensusMetrics> {
        debug_assert_eq!(new_states.len(), self.n());
        for (i, s) in new_states.iter().enumerate() {
            s.ensure_finite(&format!("state of node {i} after round {}", self.round + 1))?;
        }
        for (node, state) in self.nodes.iter_mut().zip(new_states) {
            node.state = state;
        }
        self.total_bits += u128::from(ledger.total_bits(&self.accounting));
        self.round += 1;
        Ok(self.metrics())
    }

    /// Replaces states without a communication round (a node-local update,
    /// e.g. a gradient step). Round counter and traffic are untouched.
    pub fn overwrite_states(&mut self, new_states: Vec<Matrix>) -> Result<()> {
        if new_states.len() != self.n() {
            return Err(Error::invalid(format!(
                "{} states for {} nodes",
                new_states.len(),
                self.n()
            )));
        }
        for (i, s) in new_states.iter().enumerate() {
            if s.shape() != self.shape() {
                return Err(Error::ShapeMismatch {
                    context: format!("overwrite of node {i}"),
                    expected: self.shape(),
                    got: s.shape(),
                });
            }
            s.ensure_finite(&format!("overwrite of node {i}"))?;
        }
        for (node, state) in self.nodes.iter_mut().zip(new_states) {
            node.state = state;
        }
        Ok(())
    }

    /// `state[i] += s * m`, a node-local update.
    pub fn add_scaled_to_node(&mut self, i: usize, m: &Matrix, s: f64) -> Result<()> {
        if m.shape() != self.shape() {
            return Err(Error::ShapeMismatch {
                context: format!("update of node {i}"),
                expected: self.shape(),
                got: m.shape(),
            });
        }
        self.nodes[i].state.add_scaled_in_place(m, s);
        self.nodes[i]
            .state
            .ensure_finite(&format!("state of node {i} after local update"))
    }

    /// Full-precision averaging: every node ships its whole matrix to each
    /// neighbor and replaces its state by the weighted neighborhood average.
    pub fn exact_gossip_round(&mut self) -> Result<ConsensusMetrics> {
        let (rows, cols) = self.shape();
        let new_states = self.mix_states();
        let mut ledger = RoundLedger::default();
        for &(i, j) in self.mixing.edges() {
            ledger.push(Message { src: i, dst: j, floats: rows * cols, raw_bits: 0 });
            ledger.push(Message { src: j, dst: i, floats: rows * cols, raw_bits: 0 });
        }
        self.commit(new_states, ledger)
    }

    /// One round of difference gossip under a shared linear projection: for
    /// each edge a single realization is drawn from the edge/round stream and
    /// applied to both endpoints, and each node moves by the weighted
    /// projected differences. With the identity projection this reproduces
    /// exact averaging.
    pub fn compressed_consensus_round(
        &mut self,
        family: &LinearProjectionCompressor,
    ) -> Result<ConsensusMetrics> {
        let (rows, cols) = self.shape();
        let n = self.n();
        let mut deltas = vec![Matrix::zeros(rows, cols); n];
        let mut ledger = RoundLedger::default();
        for &(i, j) in self.mixing.edges() {
            let w = self.mixing.weight(i, j);
            let mut rng = self
                .edge_root
                .derive("from", i as u64)
                .derive("to", j as u64)
                .derive("round", self.round);
            let (ci, tag) = apply_projection(family, &self.nodes[i].state, &mut rng)?;
            let cj = reapply_projection(&tag, &self.nodes[j].state)?;
            let diff = cj.sub(&ci)?;
            deltas[i].add_scaled_in_place(&diff, w);
            deltas[j].add_scaled_in_place(&diff, -w);
            let floats = tag.payload_floats(rows, cols);
            ledger.push(Message { src: i, dst: j, floats, raw_bits: 0 });
            ledger.push(Message { src: j, dst: i, floats, raw_bits: 0 });
        }
        let new_states: Vec<Matrix> = self
            .nodes
            .iter()
            .zip(&deltas)
            .map(|(node, d)| {
                let mut s = node.state.clone();
                s.add_scaled_in_place(d, 1.0);
                s
            })
            .collect();
        self.commit(new_states, ledger)
    }

    /// One power-iteration gossip round: each edge advances its state by one
    /// step against the current difference and both endpoints apply the
    /// resulting approximation with opposite signs, which keeps the average
    /// exactly. Returns the metrics and the number of degenerate edges.
    pub fn powergossip_round(
        &mut self,
        edge_states: &mut [EdgeState],
    ) -> Result<(ConsensusMetrics, usize)> {
        let (rows, cols) = self.shape();
        let n = self.n();
        if edge_states.len() != self.mixing.edges().len() {
            return Err(Error::invalid(format!(
                "{} edge states for {} edges",
                edge_states.len(),
                self.mixing.edges().len()
            )));
        }
        let mut deltas = vec![Matrix::zeros(rows, cols); n];
        let mut ledger = RoundLedger::default();
        let mut degenerate = 0;
        for (state, &(i, j)) in edge_states.iter_mut().zip(self.mixing.edges()) {
            if state.edge() != (i, j) {
                return Err(Error::invalid(format!(
                    "edge state {:?} does not match edge ({i}, {j})",
                    state.edge()
                )));
            }
            let out = {
                let diff = PairDifference {
                    left: &self.nodes[i].state,
                    right: &self.nodes[j].state,
                };
                power_step(state, &diff)?
            };
            if out.degenerate {
                degenerate += 1;
            }
            let w = self.mixing.weight(i, j);
            deltas[i].add_scaled_in_place(&out.approximation, w);
            deltas[j].add_scaled_in_place(&out.approximation, -w);
            ledger.push(Message { src: i, dst: j, floats: out.floats_per_direction, raw_bits: 0 });
            ledger.push(Message { src: j, dst: i, floats: out.floats_per_direction, raw_bits: 0 });
        }
        let new_states: Vec<Matrix> = self
            .nodes
            .iter()
            .zip(&deltas)
            .map(|(node, d)| {
                let mut s = node.state.clone();
                s.add_scaled_in_place(d, 1.0);
                s
            })
            .collect();
        let metrics = self.commit(new_states, ledger)?;
        Ok((metrics, degenerate))
    }

    /// Several power-iteration steps against one frozen difference snapshot,
    /// applying only the final approximation. Every step still exchanges its
    /// product vectors, so the wire cost matches running the steps
    /// individually; only the state update is deferred.
    pub fn powergossip_refine_once(
        &mut self,
        edge_states: &mut [EdgeState],
        steps: usize,
    ) -> Result<(ConsensusMetrics, usize)> {
        if steps == 0 {
            return Err(Error::invalid("refinement needs at least one step"));
        }
        let (rows, cols) = self.shape();
        let n = self.n();
        if edge_states.len() != self.mixing.edges().len() {
            return Err(Error::invalid(format!(
                "{} edge states for {} edges",
                edge_states.len(),
                self.mixing.edges().len()
            )));
        }
        let mut deltas = vec![Matrix::zeros(rows, cols); n];
        let mut ledger = RoundLedger::default();
        let mut degenerate = 0;
        for (state, &(i, j)) in edge_states.iter_mut().zip(self.mixing.edges()) {
            if state.edge() != (i, j) {
                return Err(Error::invalid(format!(
                    "edge state {:?} does not match edge ({i}, {j})",
                    state.edge()
                )));
            }
            let mut last = None;
            for _ in 0..steps {
                let out = {
                    let diff = PairDifference {
                        left: &self.nodes[i].state,
                        right: &self.nodes[j].state,
                    };
                    power_step(state, &diff)?
                };
                if out.degenerate {
                    degenerate += 1;
                }
                ledger.push(Message { src: i, dst: j, floats: out.floats_per_direction, raw_bits: 0 });
                ledger.push(Message { src: j, dst: i, floats: out.floats_per_direction, raw_bits: 0 });
                last = Some(out.approximation);
            }
            let approximation = last.expect("steps is at least one");
            let w = self.mixing.weight(i, j);
            deltas[i].add_scaled_in_place(&approximation, w);
            deltas[j].add_scaled_in_place(&approximation, -w);
        }
        let new_states: Vec<Matrix> = self
            .nodes
            .iter()
            .zip(&deltas)
            .map(|(node, d)| {
                let mut s = node.state.clone();
                s.add_scaled_in_place(d, 1.0);
                s
            })
            .collect();
        let metrics = self.commit(new_states, ledger)?;
        Ok((metrics, degenerate))
    }

    /// One public-copy gossip round. Public copies start at zero on the first
    /// call. Each node broadcasts the quantized increment `q_i` between its
    /// state and its public copy; all copies absorb their increment; then
    /// states move by `gamma` times the weighted copy differences. Requires
    /// `0 < gamma <= 1`.
    pub fn choco_gossip_round(
        &mut self,
        compressor: &BaselineCompressor,
        gamma: f64,
    ) -> Result<ConsensusMetrics> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::invalid(format!(
                "public-copy step size must lie in (0, 1], got {gamma}"
            )));
        }
        let (rows, cols) = self.shape();
        let n = self.n();
        if self.nodes.iter().any(|n| n.public_copy.is_none()) {
            for node in self.nodes.iter_mut() {
                node.public_copy = Some(Matrix::zeros(rows, cols));
            }
        }

        // Quantize increments from pre-round state, then update every copy.
        let mut payloads = Vec::with_capacity(n);
        for node in self.nodes.iter() {
            let hat = node.public_copy.as_ref().expect("copies were initialized");
            let (q, payload) = baseline_compress(compressor, &node.state.sub(hat)?)?;
            payloads.push((q, payload));
        }
        for (node, (q, _)) in self.nodes.iter_mut().zip(&payloads) {
            node.public_copy
                .as_mut()
                .expect("copies were initialized")
                .add_scaled_in_place(q, 1.0);
        }

        let mut ledger = RoundLedger::default();
        for &(i, j) in self.mixing.edges() {
            ledger.push(Message {
                src: i,
                dst: j,
                floats: payloads[i].1.floats,
                raw_bits: payloads[i].1.raw_bits,
            });
            ledger.push(Message {
                src: j,
                dst: i,
                floats: payloads[j].1.floats,
                raw_bits: payloads[j].1.raw_bits,
            });
        }

        let mut deltas = vec![Matrix::zeros(rows, cols); n];
        for &(i, j) in self.mixing.edges() {
            let w = self.mixing.weight(i, j);
            let hat_i = self.nodes[i].public_copy.as_ref().unwrap();
            let hat_j = self.nodes[j].public_copy.as_ref().unwrap();
            let diff = hat_j.sub(hat_i)?;
            deltas[i].add_scaled_in_place(&diff, w);
            deltas[j].add_scaled_in_place(&diff, -w);
        }
        let new_states: Vec<Matrix> = self
            .nodes
            .iter()
            .zip(&deltas)
            .map(|(node, d)| {
                let mut s = node.state.clone();
                s.add_scaled_in_place(d, gamma);
                s
            })
            .collect();
        self.commit(new_states, ledger)
    }

    /// Installs public copies directly; only tests and warm restarts need it.
    pub fn set_public_copies(&mut self, copies: Vec<Matrix>) -> Result<()> {
        if copies.len() != self.n() {
            return Err(Error::invalid(format!(
                "{} public copies for {} nodes",
                copies.len(),
                self.n()
            )));
        }
        for (node, c) in self.nodes.iter_mut().zip(copies) {
            if c.shape() != node.state.shape() {
                return Err(Error::ShapeMismatch {
                    context: format!("public copy of node {}", node.id),
                    expected: node.state.shape(),
                    got: c.shape(),
                });
            }
            node.public_copy = Some(c);
        }
        Ok(())
    }
}

/// Protocol selector for consensus runs.
#[derive(Clone, Debug)]
pub enum ProtocolKind {
    Exact,
    Compressed(LinearProjectionCompressor),
    PowerGossip { rank: usize, steps_per_round: usize },
    Choco { compressor: BaselineCompressor, gamma: f64 },
}

/// Stop rule: finish when the error falls to `error_target` times the
/// initial error, or after `max_rounds` rounds.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct StopRule {
    pub error_target: f64,
    pub max_rounds: u64,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            error_target: 1e-6,
            max_rounds: 100_000,
        }
    }
}

/// A fully resolved consensus experiment.
#[derive(Clone, Debug)]
pub struct ConsensusRun {
    pub mixing: MixingMatrix,
    pub initial: Vec<Matrix>,
    pub protocol: ProtocolKind,
    pub stop: StopRule,
    pub accounting: Accounting,
    pub seed: u64,
}

/// Builds the per-edge power-iteration states for a network, deriving each
/// block from the network seed so both endpoints could reconstruct it.
pub fn init_edge_states(
    mixing: &MixingMatrix,
    cols: usize,
    rank: usize,
    seed: u64,
) -> Result<Vec<EdgeState>> {
    let root = RngStream::new(seed).derive("edge_state", 0);
    mixing
        .edges()
        .iter()
        .map(|&(i, j)| {
            let rng = root.derive("from", i as u64).derive("to", j as u64);
            EdgeState::init((i, j), rank, cols, rng)
        })
        .collect()
}

/// Runs a consensus experiment to its stop rule, returning one metrics row
/// for round 0 and one per executed round.
pub fn run_consensus(cfg: &ConsensusRun) -> Result<Vec<ConsensusMetrics>> {
    if cfg.stop.error_target <= 0.0 || !cfg.stop.error_target.is_finite() {
        return Err(Error::invalid(format!(
            "error target must be positive and finite, got {}",
            cfg.stop.error_target
        )));
    }
    let mut net = GossipNetwork::new(
        cfg.initial.clone(),
        cfg.mixing.clone(),
        cfg.accounting,
        cfg.seed,
    )?;
    let mut edge_states = match &cfg.protocol {
        ProtocolKind::PowerGossip { rank, steps_per_round } => {
            if *steps_per_round == 0 {
                return Err(Error::invalid("steps per round must be at least 1"));
            }
            Some(init_edge_states(&net.mixing, net.shape().1, *rank, cfg.seed)?)
        }
        _ => None,
    };

    let threshold = cfg.stop.error_target * net.initial_error();
    let mut rows = vec![net.metrics()];
    let mut executed = 0u64;
    while net.error_from_initial_mean() > threshold && executed < cfg.stop.max_rounds {
        let metrics = match &cfg.protocol {
            ProtocolKind::Exact => net.exact_gossip_round()?,
            ProtocolKind::Compressed(family) => net.compressed_consensus_round(family)?,
            ProtocolKind::PowerGossip { steps_per_round, .. } => {
                let states = edge_states.as_mut().expect("edge states were initialized");
                let mut last = net.metrics();
                for _ in 0..*steps_per_round {
                    last = net.powergossip_round(states)?.0;
                }
                last
            }
            ProtocolKind::Choco { compressor, gamma } => {
                net.choco_gossip_round(compressor, *gamma)?
            }
        };
        if !metrics.error.is_finite() {
            return Err(Error::NonFinite {
                context: format!("consensus error at round {}", metrics.round),
            });
        }
        rows.push(metrics);
        executed += 1;
    }
    Ok(rows)
}
