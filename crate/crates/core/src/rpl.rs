//! Upward-route RPL DODAG formation paced by Trickle.
//!
//! DIOs carry the sender's hop-count rank. A node that is not yet part of
//! the DODAG is silent; the first DIO it hears makes the sender its
//! preferred parent and starts its Trickle timer at `i_min`. A joined node
//! treats a DIO offering a strictly lower rank as inconsistent (it switches
//! parent and applies rule 5) and every other DIO as consistent.
//!
//! The channel is the same idealized one as in [`crate::sim`]. The
//! `synchronized` and `steady_state` flags of [`SimConfig`] are ignored:
//! the root starts at time 0 and every other node at its join instant.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{fairness_index, MetricsError};
use crate::sim::{EventKind, EventLog, EventSink, SimConfig, SimError, SimEvent, TimerKind, TimerQueue};
use crate::topology::Topology;
use crate::trickle::{TrickleError, TrickleNodeState, TrickleParams};
use crate::Time;

/// i_min of the case-study runs, in milliseconds.
pub const DEFAULT_I_MIN: Time = 8.0;
/// i_max of the case-study runs, in milliseconds.
pub const DEFAULT_I_MAX: Time = 8_388_608.0;
/// Two hours in milliseconds.
pub const DEFAULT_DURATION: Time = 7_200_000.0;

#[derive(Debug, Error)]
pub enum RplError {
    #[error(transparent)]
    Trickle(#[from] TrickleError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("root {root} is not a node of a {nodes}-node topology")]
    RootOutOfRange { root: usize, nodes: usize },
    #[error("nodes {0:?} cannot reach the root")]
    Unreachable(Vec<usize>),
    #[error("DODAG not formed within the run: nodes {0:?} never joined")]
    NotFormed(Vec<usize>),
}

/// Hop-count rank. The root has rank 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Rank(pub u32);

impl Rank {
    pub const ROOT: Rank = Rank(0);

    pub fn child(self) -> Rank {
        Rank(self.0 + 1)
    }
}

/// A DIO as seen on the air.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DioMessage {
    pub sender: usize,
    pub rank: Rank,
}

/// What a DIO did to its receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DioEffect {
    Joined,
    Improved,
    Consistent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RplNodeState {
    /// `None` until the node joins.
    pub rank: Option<Rank>,
    pub preferred_parent: Option<usize>,
    pub joined_at: Option<Time>,
    pub trickle: TrickleNodeState,
}

impl RplNodeState {
    pub fn new(id: usize, params: &TrickleParams) -> Self {
        RplNodeState {
            rank: None,
            preferred_parent: None,
            joined_at: None,
            trickle: TrickleNodeState::new(id, params.i_min, &params.policy),
        }
    }

    pub fn root(id: usize, params: &TrickleParams) -> Self {
        RplNodeState { rank: Some(Rank::ROOT), joined_at: Some(0.0), ..Self::new(id, params) }
    }

    pub fn is_joined(&self) -> bool {
        self.rank.is_some()
    }

    /// Updates rank and parent for a received DIO. Trickle bookkeeping is
    /// left to the caller.
    pub fn on_dio(&mut self, dio: DioMessage, now: Time) -> DioEffect {
        let offered = dio.rank.child();
        match self.rank {
            None => {
                self.rank = Some(offered);
                self.preferred_parent = Some(dio.sender);
                self.joined_at = Some(now);
                DioEffect::Joined
            }
            Some(current) if offered < current => {
                self.rank = Some(offered);
                self.preferred_parent = Some(dio.sender);
                DioEffect::Improved
            }
            Some(_) => DioEffect::Consistent,
        }
    }
}

/// Per-run results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RplMetrics {
    /// Latest join instant; `None` if some node never joined.
    pub formation_time: Option<Time>,
    pub dio_per_node: Vec<u64>,
    pub mean_dio: f64,
    pub stretch: f64,
    /// Jain's index of the per-node DIO counts.
    pub fairness: f64,
    pub ranks: Vec<Option<u32>>,
    pub parents: Vec<Option<usize>>,
    pub unjoined: Vec<usize>,
}

/// Runs DODAG formation from `root` and returns the log and its metrics.
pub fn run_rpl(
    topology: &Topology,
    root: usize,
    params: &TrickleParams,
    sim: &SimConfig,
) -> Result<(EventLog, RplMetrics), RplError> {
    let mut log = EventLog::new(*params, *sim);
    let states = run_rpl_with_sink(topology, root, params, sim, &mut log)?;
    let metrics = rpl_metrics(topology, root, &log, &states)?;
    Ok((log, metrics))
}

/// Runs DODAG formation, streaming events into `sink`, and returns the final
/// node states.
pub fn run_rpl_with_sink<S: EventSink + ?Sized>(
    topology: &Topology,
    root: usize,
    params: &TrickleParams,
    sim: &SimConfig,
    sink: &mut S,
) -> Result<Vec<RplNodeState>, RplError> {
    params.validate()?;
    sim.validate()?;
    let n = topology.node_count();
    if root >= n {
        return Err(RplError::RootOutOfRange { root, nodes: n });
    }
    let unreachable: Vec<usize> = topology
        .bfs_distances(root)
        .iter()
        .enumerate()
        .filter_map(|(v, d)| d.is_none().then_some(v))
        .collect();
    if !unreachable.is_empty() {
        return Err(RplError::Unreachable(unreachable));
    }
    sink.begin(n, params, sim);

    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let mut nodes: Vec<RplNodeState> = (0..n)
        .map(|id| if id == root { RplNodeState::root(id, params) } else { RplNodeState::new(id, params) })
        .collect();
    let mut queue = TimerQueue::new(n);

    nodes[root].trickle.start_interval(0.0, &mut rng);
    sink.record(SimEvent {
        time: 0.0,
        node: root,
        kind: EventKind::IntervalStart { len: nodes[root].trickle.interval_len },
    });
    queue.arm_interval(&nodes[root].trickle);

    while let Some(timer) = queue.pop_until(sim.duration) {
        let now = timer.time;
        let id = timer.node;
        match timer.kind {
            TimerKind::Broadcast => {
                let decision = nodes[id].trickle.on_timer_t()?;
                let kind = if decision.fired {
                    EventKind::Broadcast { counter: decision.counter_at_t, k: decision.k_at_t }
                } else {
                    EventKind::Suppressed { counter: decision.counter_at_t, k: decision.k_at_t }
                };
                sink.record(SimEvent { time: now, node: id, kind });
                if !decision.fired {
                    continue;
                }
                let dio = DioMessage {
                    sender: id,
                    rank: nodes[id].rank.expect("only joined nodes run timers"),
                };
                for &nb in topology.neighbors(id) {
                    sink.record(SimEvent { time: now, node: nb, kind: EventKind::Heard { from: id } });
                    let state = &mut nodes[nb];
                    match state.on_dio(dio, now) {
                        DioEffect::Joined => {
                            let rank = state.rank.expect("just joined").0;
                            sink.record(SimEvent {
                                time: now,
                                node: nb,
                                kind: EventKind::Joined { parent: id, rank },
                            });
                            state.trickle.start_interval(now, &mut rng);
                            sink.record(SimEvent {
                                time: now,
                                node: nb,
                                kind: EventKind::IntervalStart { len: state.trickle.interval_len },
                            });
                            queue.arm_interval(&state.trickle);
                        }
                        DioEffect::Improved => {
                            let rank = state.rank.expect("joined").0;
                            sink.record(SimEvent {
                                time: now,
                                node: nb,
                                kind: EventKind::ParentSwitch { parent: id, rank },
                            });
                            if state.trickle.on_hear_inconsistent(now, params, &mut rng) {
                                sink.record(SimEvent { time: now, node: nb, kind: EventKind::TrickleReset });
                                sink.record(SimEvent {
                                    time: now,
                                    node: nb,
                                    kind: EventKind::IntervalStart { len: state.trickle.interval_len },
                                });
                                queue.arm_interval(&state.trickle);
                            }
                        }
                        DioEffect::Consistent => state.trickle.on_hear_consistent(),
                    }
                }
            }
            TimerKind::IntervalEnd => {
                let trickle = &mut nodes[id].trickle;
                if let Some((old, new)) = trickle.on_interval_end(now, params, &mut rng) {
                    sink.record(SimEvent { time: now, node: id, kind: EventKind::KChange { old, new } });
                }
                sink.record(SimEvent {
                    time: now,
                    node: id,
                    kind: EventKind::IntervalStart { len: trickle.interval_len },
                });
                queue.arm_interval(trickle);
            }
            TimerKind::Boot => unreachable!("RPL runs schedule no boot timers"),
        }
    }
    Ok(nodes)
}

fn rpl_metrics(
    topology: &Topology,
    root: usize,
    log: &EventLog,
    states: &[RplNodeState],
) -> Result<RplMetrics, RplError> {
    let ranks: Vec<Option<u32>> = states.iter().map(|s| s.rank.map(|r| r.0)).collect();
    let stretch = network_stretch(&ranks, topology, root)?;
    let (dio_per_node, mean_dio) = dio_count(log);
    let loads: Vec<f64> = dio_per_node.iter().map(|&c| c as f64).collect();
    let fairness = match fairness_index(&loads) {
        Ok(f) => f,
        Err(MetricsError::DegenerateLoad) => 0.0,
        Err(e) => unreachable!("fairness of a non-empty load vector: {e}"),
    };
    Ok(RplMetrics {
        formation_time: formation_time(log, root).ok(),
        dio_per_node,
        mean_dio,
        stretch: stretch.stretch,
        fairness,
        ranks,
        parents: states.iter().map(|s| s.preferred_parent).collect(),
        unjoined: stretch.unjoined,
    })
}

/// Stretch with the nodes that had no rank.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StretchReport {
    pub stretch: f64,
    /// Counted as stretched.
    pub unjoined: Vec<usize>,
}

/// Fraction of non-root nodes whose rank exceeds their BFS hop distance.
pub fn network_stretch(
    ranks: &[Option<u32>],
    topology: &Topology,
    root: usize,
) -> Result<StretchReport, RplError> {
    let n = topology.node_count();
    if root >= n || ranks.len() != n {
        return Err(RplError::RootOutOfRange { root, nodes: n });
    }
    let dist = topology.bfs_distances(root);
    let mut stretched = 0usize;
    let mut unjoined = Vec::new();
    for v in (0..n).filter(|&v| v != root) {
        match (ranks[v], dist[v]) {
            (Some(r), Some(d)) if r <= d => {}
            (Some(_), _) => stretched += 1,
            (None, _) => {
                stretched += 1;
                unjoined.push(v);
            }
        }
    }
    let stretch = if n > 1 { stretched as f64 / (n - 1) as f64 } else { 0.0 };
    Ok(StretchReport { stretch, unjoined })
}

/// Instant at which the last non-root node first joined.
pub fn formation_time(log: &EventLog, root: usize) -> Result<Time, RplError> {
    let mut joined: Vec<Option<Time>> = vec![None; log.node_count()];
    if let Some(slot) = joined.get_mut(root) {
        *slot = Some(0.0);
    }
    for ev in log.events() {
        if let EventKind::Joined { .. } = ev.kind {
            joined[ev.node].get_or_insert(ev.time);
        }
    }
    let missing: Vec<usize> =
        joined.iter().enumerate().filter_map(|(v, t)| t.is_none().then_some(v)).collect();
    if !missing.is_empty() {
        return Err(RplError::NotFormed(missing));
    }
    Ok(joined.into_iter().flatten().fold(0.0, f64::max))
}

/// Transmitted DIOs per node and their mean.
pub fn dio_count(log: &EventLog) -> (Vec<u64>, f64) {
    let counts: Vec<u64> = log.summaries().iter().map(|s| s.broadcasts).collect();
    let mean = if counts.is_empty() {
        0.0
    } else {
        counts.iter().sum::<u64>() as f64 / counts.len() as f64
    };
    (counts, mean)
}
