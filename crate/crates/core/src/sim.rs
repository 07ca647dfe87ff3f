//! Deterministic discrete-event loop for Trickle dissemination.
//!
//! Broadcasts are delivered instantaneously and losslessly to every active
//! neighbour. Timers firing at the same instant are ordered by kind
//! (broadcast timer before interval end), then node id, then insertion
//! sequence; deliveries are applied synchronously inside the broadcast, so
//! they always precede any other timer at that instant.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{Topology, TopologyError, TopologySpec};
use crate::trickle::{TrickleError, TrickleNodeState, TrickleParams};
use crate::{derive_seed, Time};

/// Warm-up used when none is given: this many `i_max` intervals.
pub const DEFAULT_WARMUP_INTERVALS: f64 = 50.0;

const TOPOLOGY_STREAM: u64 = 0;
const SIMULATION_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Trickle(#[from] TrickleError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("duration must be positive and finite, got {0}")]
    BadDuration(Time),
    #[error("warmup {warmup} must be non-negative and below the duration {duration}")]
    BadWarmup { warmup: Time, duration: Time },
    #[error("at least one replication is required")]
    NoReplications,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub duration: Time,
    /// All nodes start their first interval at time 0. Otherwise each node
    /// boots at an independent uniform offset in `[0, I)`.
    pub synchronized: bool,
    /// Metrics ignore everything before this instant.
    pub warmup: Time,
    pub seed: u64,
    /// Pin `I` to `i_max` from the start. Otherwise nodes boot at `i_min`.
    pub steady_state: bool,
}

impl SimConfig {
    /// Steady-state run with the default warm-up for the given `i_max`.
    pub fn steady_state(duration: Time, i_max: Time, seed: u64) -> Self {
        SimConfig {
            duration,
            synchronized: false,
            warmup: (DEFAULT_WARMUP_INTERVALS * i_max).min(duration / 2.0),
            seed,
            steady_state: true,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(SimError::BadDuration(self.duration));
        }
        if !(self.warmup >= 0.0 && self.warmup < self.duration) {
            return Err(SimError::BadWarmup { warmup: self.warmup, duration: self.duration });
        }
        Ok(())
    }
}

/// What happened, to whom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    IntervalStart { len: Time },
    Broadcast { counter: u32, k: u32 },
    Suppressed { counter: u32, k: u32 },
    KChange { old: u32, new: u32 },
    Heard { from: usize },
    /// RPL only: first parent adopted.
    Joined { parent: usize, rank: u32 },
    /// RPL only: switched to a parent with strictly lower rank.
    ParentSwitch { parent: usize, rank: u32 },
    /// Rule 5 reset to `i_min`.
    TrickleReset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: Time,
    pub node: usize,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Receives events in log order.
pub trait EventSink {
    fn begin(&mut self, _nodes: usize, _params: &TrickleParams, _sim: &SimConfig) {}
    fn record(&mut self, event: SimEvent);
}

/// Running per-node counters kept alongside the raw events.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    /// Intervals started, including one that may still be open at the end.
    pub intervals: u64,
    pub broadcasts: u64,
    pub suppressions: u64,
    /// `k` in force at each broadcast decision.
    pub k_history: Vec<u32>,
}

/// Complete record of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub params: TrickleParams,
    pub sim: SimConfig,
    events: Vec<SimEvent>,
    nodes: Vec<NodeSummary>,
}

impl EventLog {
    pub fn new(params: TrickleParams, sim: SimConfig) -> Self {
        EventLog { params, sim, events: Vec::new(), nodes: Vec::new() }
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    pub fn summaries(&self) -> &[NodeSummary] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// One JSON object per line.
    pub fn write_ndjson<W: Write>(&self, mut out: W) -> io::Result<()> {
        for ev in &self.events {
            serde_json::to_writer(&mut out, ev)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

impl EventSink for EventLog {
    fn begin(&mut self, nodes: usize, params: &TrickleParams, sim: &SimConfig) {
        self.params = *params;
        self.sim = *sim;
        self.events.clear();
        self.nodes = vec![NodeSummary::default(); nodes];
    }

    fn record(&mut self, event: SimEvent) {
        let summary = &mut self.nodes[event.node];
        match event.kind {
            EventKind::IntervalStart { .. } => summary.intervals += 1,
            EventKind::Broadcast { k, .. } => {
                summary.broadcasts += 1;
                summary.k_history.push(k);
            }
            EventKind::Suppressed { k, .. } => {
                summary.suppressions += 1;
                summary.k_history.push(k);
            }
            _ => {}
        }
        self.events.push(event);
    }
}

/// Discards everything; handy for timing runs.
impl EventSink for () {
    fn record(&mut self, _event: SimEvent) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum TimerKind {
    Broadcast = 1,
    IntervalEnd = 2,
    Boot = 3,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Timer {
    pub time: Time,
    pub kind: TimerKind,
    pub node: usize,
    pub seq: u64,
    pub epoch: u64,
}

impl PartialEq for Timer {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Timer {}
impl PartialOrd for Timer {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Timer {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.cmp(&other.kind))
            .then(self.node.cmp(&other.node))
            .then(self.seq.cmp(&other.seq))
    }
}

/// Min-heap of node timers with per-node epochs so that timers belonging to
/// an abandoned interval are dropped lazily.
#[derive(Debug, Default)]
pub(crate) struct TimerQueue {
    heap: BinaryHeap<Reverse<Timer>>,
    epochs: Vec<u64>,
    seq: u64,
}

impl TimerQueue {
    pub fn new(nodes: usize) -> Self {
        TimerQueue { heap: BinaryHeap::new(), epochs: vec![0; nodes], seq: 0 }
    }

    fn push(&mut self, time: Time, kind: TimerKind, node: usize) {
        self.seq += 1;
        let epoch = self.epochs[node];
        self.heap.push(Reverse(Timer { time, kind, node, seq: self.seq, epoch }));
    }

    pub fn schedule_boot(&mut self, node: usize, at: Time) {
        self.push(at, TimerKind::Boot, node);
    }

    /// Invalidates the node's pending timers and arms both timers of its
    /// current interval.
    pub fn arm_interval(&mut self, state: &TrickleNodeState) {
        let node = state.node_id;
        self.epochs[node] += 1;
        self.push(state.broadcast_time, TimerKind::Broadcast, node);
        self.push(state.interval_end(), TimerKind::IntervalEnd, node);
    }

    /// Next live timer not later than `horizon`.
    pub fn pop_until(&mut self, horizon: Time) -> Option<Timer> {
        while let Some(Reverse(top)) = self.heap.peek() {
            if top.time > horizon {
                return None;
            }
            let Reverse(timer) = self.heap.pop().expect("peeked");
            if timer.kind == TimerKind::Boot || timer.epoch == self.epochs[timer.node] {
                return Some(timer);
            }
        }
        None
    }
}

/// Runs one simulation and returns its full log.
pub fn run(topology: &Topology, params: &TrickleParams, sim: &SimConfig) -> Result<EventLog, SimError> {
    let mut log = EventLog::new(*params, *sim);
    run_with_sink(topology, params, sim, &mut log)?;
    Ok(log)
}

/// Runs one simulation, streaming events into `sink`.
pub fn run_with_sink<S: EventSink + ?Sized>(
    topology: &Topology,
    params: &TrickleParams,
    sim: &SimConfig,
    sink: &mut S,
) -> Result<(), SimError> {
    params.validate()?;
    sim.validate()?;
    let n = topology.node_count();
    sink.begin(n, params, sim);

    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let initial_len = if sim.steady_state { params.i_max } else { params.i_min };
    let mut nodes: Vec<TrickleNodeState> =
        (0..n).map(|id| TrickleNodeState::new(id, initial_len, &params.policy)).collect();
    let mut active = vec![false; n];
    let mut queue = TimerQueue::new(n);

    for id in 0..n {
        let offset = if sim.synchronized { 0.0 } else { rng.gen::<f64>() * initial_len };
        queue.schedule_boot(id, offset);
    }

    while let Some(timer) = queue.pop_until(sim.duration) {
        let now = timer.time;
        let id = timer.node;
        match timer.kind {
            TimerKind::Boot => {
                active[id] = true;
                nodes[id].start_interval(now, &mut rng);
                sink.record(SimEvent {
                    time: now,
                    node: id,
                    kind: EventKind::IntervalStart { len: nodes[id].interval_len },
                });
                queue.arm_interval(&nodes[id]);
            }
            TimerKind::Broadcast => {
                let decision = nodes[id].on_timer_t()?;
                let kind = if decision.fired {
                    EventKind::Broadcast { counter: decision.counter_at_t, k: decision.k_at_t }
                } else {
                    EventKind::Suppressed { counter: decision.counter_at_t, k: decision.k_at_t }
                };
                sink.record(SimEvent { time: now, node: id, kind });
                if decision.fired {
                    for &nb in topology.neighbors(id) {
                        if active[nb] {
                            nodes[nb].on_hear_consistent();
                            sink.record(SimEvent {
                                time: now,
                                node: nb,
                                kind: EventKind::Heard { from: id },
                            });
                        }
                    }
                }
            }
            TimerKind::IntervalEnd => {
                if let Some((old, new)) = nodes[id].on_interval_end(now, params, &mut rng) {
                    sink.record(SimEvent { time: now, node: id, kind: EventKind::KChange { old, new } });
                }
                sink.record(SimEvent {
                    time: now,
                    node: id,
                    kind: EventKind::IntervalStart { len: nodes[id].interval_len },
                });
                queue.arm_interval(&nodes[id]);
            }
        }
    }
    Ok(())
}

/// One member of a batch: its index, its derived seed and its topology.
#[derive(Debug, Clone)]
pub struct Replication {
    pub index: u64,
    pub seed: u64,
    pub topology: Topology,
}

impl Replication {
    /// Replication `r` of a batch seeded with `seed` uses
    /// `derive_seed(seed, r)`; its topology is built from
    /// `derive_seed(that, 0)` and its event stream from `derive_seed(that, 1)`.
    /// Seeds therefore do not depend on the policy under test, so different
    /// policies see identical topologies.
    pub fn new(spec: &TopologySpec, batch_seed: u64, index: u64) -> Result<Self, TopologyError> {
        let seed = derive_seed(batch_seed, index);
        let topology = spec.build(derive_seed(seed, TOPOLOGY_STREAM))?;
        Ok(Replication { index, seed, topology })
    }

    pub fn sim_config(&self, base: &SimConfig) -> SimConfig {
        SimConfig { seed: derive_seed(self.seed, SIMULATION_STREAM), ..*base }
    }
}

/// Builds all replications of a batch in parallel.
pub fn replications(
    spec: &TopologySpec,
    batch_seed: u64,
    count: u64,
) -> Result<Vec<Replication>, SimError> {
    if count == 0 {
        return Err(SimError::NoReplications);
    }
    (0..count)
        .into_par_iter()
        .map(|r| Replication::new(spec, batch_seed, r).map_err(SimError::from))
        .collect()
}

/// Runs `replications` independent simulations; results are in replication
/// order regardless of scheduling.
pub fn run_batch(
    spec: &TopologySpec,
    params: &TrickleParams,
    sim: &SimConfig,
    replications_count: u64,
) -> Result<Vec<(Topology, EventLog)>, SimError> {
    let reps = replications(spec, sim.seed, replications_count)?;
    reps.into_par_iter()
        .map(|rep| {
            let log = run(&rep.topology, params, &rep.sim_config(sim))?;
            Ok((rep.topology, log))
        })
        .collect()
}
