//! Reductions from event streams to the reported statistics.
//!
//! Large runs do not need a full [`EventLog`]: [`StatsCollector`] is an
//! [`EventSink`] that keeps only the post-warm-up counters, and every
//! reduction here has a `*_from_stats` form working on [`RunStats`].
//!
//! Cross-node "intervals" are wall-clock windows of length `i_max` starting
//! at the warm-up boundary, since unsynchronized nodes share no interval
//! boundary.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::sim::{EventKind, EventLog, EventSink, SimConfig, SimEvent};
use crate::topology::Topology;
use crate::trickle::TrickleParams;
use crate::Time;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("got {logs} logs but {topologies} topologies")]
    LengthMismatch { logs: usize, topologies: usize },
    #[error("log has {log} nodes but topology has {topology}")]
    NodeCountMismatch { log: usize, topology: usize },
    #[error("mean k is only defined for adaptive-policy runs")]
    FixedPolicy,
    #[error("no complete window of length {window} after warm-up {warmup} (duration {duration})")]
    NoWindows { window: Time, warmup: Time, duration: Time },
    #[error("fairness index of an empty or all-zero load vector is undefined")]
    DegenerateLoad,
    #[error("at least two points with distinct x are needed for a fit")]
    DegenerateFit,
}

/// Post-warm-up counters for one node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct NodeStats {
    pub decisions: u64,
    pub broadcasts: u64,
    /// Sum of `k` over the counted decisions.
    pub k_sum: u64,
}

impl NodeStats {
    pub fn broadcast_probability(&self) -> Option<f64> {
        (self.decisions > 0).then(|| self.broadcasts as f64 / self.decisions as f64)
    }

    pub fn mean_k(&self) -> Option<f64> {
        (self.decisions > 0).then(|| self.k_sum as f64 / self.decisions as f64)
    }
}

/// Everything the reductions need from one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStats {
    pub adaptive: bool,
    pub warmup: Time,
    pub window: Time,
    pub nodes: Vec<NodeStats>,
    /// Network-wide broadcasts per complete window.
    pub window_counts: Vec<u64>,
}

impl RunStats {
    pub fn from_log(log: &EventLog, warmup: Time) -> Self {
        let mut collector = StatsCollector::new(warmup);
        collector.begin(log.node_count(), &log.params, &log.sim);
        for ev in log.events() {
            collector.record(*ev);
        }
        collector.finish()
    }

    pub fn broadcast_probabilities(&self) -> Vec<f64> {
        self.nodes.iter().filter_map(NodeStats::broadcast_probability).collect()
    }
}

/// Streaming builder of [`RunStats`].
#[derive(Debug, Clone)]
pub struct StatsCollector {
    warmup: Time,
    stats: Option<RunStats>,
}

impl StatsCollector {
    pub fn new(warmup: Time) -> Self {
        StatsCollector { warmup, stats: None }
    }

    /// Panics if the collector never saw a run.
    pub fn finish(self) -> RunStats {
        self.stats.expect("collector was never attached to a run")
    }
}

impl EventSink for StatsCollector {
    fn begin(&mut self, nodes: usize, params: &TrickleParams, sim: &SimConfig) {
        let window = params.i_max;
        let windows = if sim.duration > self.warmup {
            ((sim.duration - self.warmup) / window).floor() as usize
        } else {
            0
        };
        self.stats = Some(RunStats {
            adaptive: params.policy.is_adaptive(),
            warmup: self.warmup,
            window,
            nodes: vec![NodeStats::default(); nodes],
            window_counts: vec![0; windows],
        });
    }

    fn record(&mut self, event: SimEvent) {
        if event.time < self.warmup {
            return;
        }
        let stats = self.stats.as_mut().expect("begin() precedes record()");
        match event.kind {
            EventKind::Broadcast { k, .. } => {
                let node = &mut stats.nodes[event.node];
                node.decisions += 1;
                node.broadcasts += 1;
                node.k_sum += u64::from(k);
                let slot = ((event.time - stats.warmup) / stats.window).floor() as usize;
                if let Some(count) = stats.window_counts.get_mut(slot) {
                    *count += 1;
                }
            }
            EventKind::Suppressed { k, .. } => {
                let node = &mut stats.nodes[event.node];
                node.decisions += 1;
                node.k_sum += u64::from(k);
            }
            _ => {}
        }
    }
}

/// One degree class aggregated over replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegreeRow {
    pub degree: usize,
    /// Nodes of this degree pooled over all replications.
    pub nodes: usize,
    /// Replications containing at least one node of this degree.
    pub replications: usize,
    pub mean: f64,
    /// Standard error across per-replication class means; `None` with fewer
    /// than two contributing replications.
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DegreeProfile {
    pub rows: Vec<DegreeRow>,
}

impl DegreeProfile {
    pub fn get(&self, degree: usize) -> Option<&DegreeRow> {
        self.rows.iter().find(|r| r.degree == degree)
    }
}

/// Sum after sorting, so the result does not depend on input order.
fn ordered_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

fn mean_and_stderr(values: &mut [f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = ordered_sum(values) / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let mut sq: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    let var = ordered_sum(&mut sq) / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Pools the per-node values of each degree class, then reports the pooled
/// mean with a standard error across replications.
fn profile_by_degree(
    stats: &[RunStats],
    topologies: &[Topology],
    value: impl Fn(&NodeStats) -> Option<f64>,
) -> Result<DegreeProfile, MetricsError> {
    if stats.len() != topologies.len() {
        return Err(MetricsError::LengthMismatch { logs: stats.len(), topologies: topologies.len() });
    }
    // degree -> (pooled node values, per-replication class means)
    let mut classes: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (run, topo) in stats.iter().zip(topologies) {
        if run.nodes.len() != topo.node_count() {
            return Err(MetricsError::NodeCountMismatch {
                log: run.nodes.len(),
                topology: topo.node_count(),
            });
        }
        let mut per_rep: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (node, ns) in run.nodes.iter().enumerate() {
            if let Some(v) = value(ns) {
                per_rep.entry(topo.degree(node)).or_default().push(v);
            }
        }
        for (degree, mut values) in per_rep {
            let class = classes.entry(degree).or_default();
            class.0.extend_from_slice(&values);
            class.1.push(ordered_sum(&mut values) / values.len() as f64);
        }
    }
    let rows = classes
        .into_iter()
        .map(|(degree, (mut pooled, mut rep_means))| {
            let nodes = pooled.len();
            let mean = ordered_sum(&mut pooled) / nodes as f64;
            let (_, stderr) = mean_and_stderr(&mut rep_means);
            DegreeRow { degree, nodes, replications: rep_means.len(), mean, stderr }
        })
        .collect();
    Ok(DegreeProfile { rows })
}

fn stats_from_logs(logs: &[EventLog], warmup: Time) -> Vec<RunStats> {
    logs.iter().map(|log| RunStats::from_log(log, warmup)).collect()
}

/// Fraction of post-warm-up intervals in which nodes of each degree
/// broadcast.
pub fn broadcast_probability_per_degree(
    logs: &[EventLog],
    topologies: &[Topology],
    warmup: Time,
) -> Result<DegreeProfile, MetricsError> {
    broadcast_probability_per_degree_from_stats(&stats_from_logs(logs, warmup), topologies)
}

pub fn broadcast_probability_per_degree_from_stats(
    stats: &[RunStats],
    topologies: &[Topology],
) -> Result<DegreeProfile, MetricsError> {
    profile_by_degree(stats, topologies, NodeStats::broadcast_probability)
}

/// Average redundancy constant per degree. Adaptive runs only.
pub fn mean_k_per_degree(
    logs: &[EventLog],
    topologies: &[Topology],
    warmup: Time,
) -> Result<DegreeProfile, MetricsError> {
    if logs.iter().any(|l| !l.params.policy.is_adaptive()) {
        return Err(MetricsError::FixedPolicy);
    }
    mean_k_per_degree_from_stats(&stats_from_logs(logs, warmup), topologies)
}

pub fn mean_k_per_degree_from_stats(
    stats: &[RunStats],
    topologies: &[Topology],
) -> Result<DegreeProfile, MetricsError> {
    if stats.iter().any(|s| !s.adaptive) {
        return Err(MetricsError::FixedPolicy);
    }
    profile_by_degree(stats, topologies, NodeStats::mean_k)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowCounts {
    pub window: Time,
    pub counts: Vec<u64>,
    pub mean: f64,
    /// Number of windows with a given broadcast count.
    pub distribution: BTreeMap<u64, usize>,
}

/// Network-wide broadcasts per `i_max` window after warm-up.
pub fn broadcasts_per_interval(log: &EventLog, warmup: Time) -> Result<WindowCounts, MetricsError> {
    broadcasts_per_interval_from_stats(&RunStats::from_log(log, warmup), log.sim.duration)
}

pub fn broadcasts_per_interval_from_stats(
    stats: &RunStats,
    duration: Time,
) -> Result<WindowCounts, MetricsError> {
    if stats.window_counts.is_empty() {
        return Err(MetricsError::NoWindows { window: stats.window, warmup: stats.warmup, duration });
    }
    let total: u64 = stats.window_counts.iter().sum();
    let mut distribution = BTreeMap::new();
    for &c in &stats.window_counts {
        *distribution.entry(c).or_insert(0) += 1;
    }
    Ok(WindowCounts {
        window: stats.window,
        counts: stats.window_counts.clone(),
        mean: total as f64 / stats.window_counts.len() as f64,
        distribution,
    })
}

/// Jain's index `(sum p)^2 / (n * sum p^2)`; 1 means perfectly even load.
pub fn fairness_index(loads: &[f64]) -> Result<f64, MetricsError> {
    let mut values = loads.to_vec();
    let mut squares: Vec<f64> = loads.iter().map(|p| p * p).collect();
    let sum = ordered_sum(&mut values);
    let sum_sq = ordered_sum(&mut squares);
    if loads.is_empty() || sum_sq == 0.0 {
        return Err(MetricsError::DegenerateLoad);
    }
    Ok(sum * sum / (loads.len() as f64 * sum_sq))
}

/// Ordinary least squares `y = intercept + slope * x`; returns
/// `(slope, intercept)`.
pub fn least_squares(points: &[(f64, f64)]) -> Result<(f64, f64), MetricsError> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return Err(MetricsError::DegenerateFit);
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(MetricsError::DegenerateFit);
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run, run_batch};
    use crate::topology::TopologySpec;
    use crate::trickle::RedundancyPolicy;

    fn steady(duration: Time, synchronized: bool, seed: u64) -> SimConfig {
        SimConfig { duration, synchronized, warmup: 0.0, seed, steady_state: true }
    }

    fn params(policy: RedundancyPolicy) -> TrickleParams {
        TrickleParams::new(1.0, 1.0, policy).unwrap()
    }

    #[test]
    fn jain_index_examples() {
        assert!((fairness_index(&[0.3; 7]).unwrap() - 1.0).abs() < 1e-15);
        let mut one_hot = vec![0.0; 8];
        one_hot[3] = 1.0;
        assert!((fairness_index(&one_hot).unwrap() - 0.125).abs() < 1e-15);
        let p = 1.0 - (-1.0f64).exp();
        assert!((fairness_index(&[p; 100]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(fairness_index(&[0.0, 0.0]), Err(MetricsError::DegenerateLoad));
        assert_eq!(fairness_index(&[]), Err(MetricsError::DegenerateLoad));
    }

    #[test]
    fn least_squares_recovers_line() {
        let pts: Vec<(f64, f64)> = (0..10).map(|x| (x as f64, 2.0 + 0.5 * x as f64)).collect();
        let (slope, icept) = least_squares(&pts).unwrap();
        assert!((slope - 0.5).abs() < 1e-12 && (icept - 2.0).abs() < 1e-12);
        assert_eq!(least_squares(&[(1.0, 1.0), (1.0, 2.0)]), Err(MetricsError::DegenerateFit));
    }

    #[test]
    fn complete_graph_with_large_k_never_suppresses() {
        let topo = Topology::single_cell(6).unwrap();
        let log = run(&topo, &params(RedundancyPolicy::Fixed { k: 6 }), &steady(30.0, true, 1))
            .unwrap();
        let profile = broadcast_probability_per_degree(&[log], &[topo], 5.0).unwrap();
        assert_eq!(profile.rows.len(), 1);
        assert_eq!(profile.rows[0].degree, 5);
        assert_eq!(profile.rows[0].mean, 1.0);
    }

    #[test]
    fn single_cell_windows_are_exact() {
        let topo = Topology::single_cell(12).unwrap();
        for k in [1, 4, 12, 20] {
            let log =
                run(&topo, &params(RedundancyPolicy::Fixed { k }), &steady(60.0, true, k as u64))
                    .unwrap();
            let w = broadcasts_per_interval(&log, 10.0).unwrap();
            assert_eq!(w.counts.len(), 50);
            assert!(w.counts.iter().all(|&c| c == u64::from(k.min(12))));
        }
    }

    #[test]
    fn empty_window_set_is_an_error() {
        let topo = Topology::single_cell(3).unwrap();
        let log = run(&topo, &params(RedundancyPolicy::Fixed { k: 1 }), &steady(5.5, true, 0))
            .unwrap();
        assert!(matches!(broadcasts_per_interval(&log, 5.0), Err(MetricsError::NoWindows { .. })));
    }

    #[test]
    fn mean_k_rejects_fixed_policy() {
        let topo = Topology::single_cell(3).unwrap();
        let log = run(&topo, &params(RedundancyPolicy::Fixed { k: 1 }), &steady(5.0, true, 0))
            .unwrap();
        assert_eq!(mean_k_per_degree(&[log], &[topo], 1.0), Err(MetricsError::FixedPolicy));
    }

    #[test]
    fn sparse_nodes_sit_at_k_min() {
        // degree 2 nodes hear at most 2 messages; alpha * 2 < k_min = 2
        let topo = Topology::from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]).unwrap();
        let policy = RedundancyPolicy::Adaptive { alpha: 0.5, k_min: 2, k_max: 10 };
        let log = run(&topo, &params(policy), &steady(40.0, false, 3)).unwrap();
        let profile = mean_k_per_degree(&[log], &[topo], 5.0).unwrap();
        assert_eq!(profile.rows[0].mean, 2.0);
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let topo = Topology::single_cell(3).unwrap();
        let log = run(&topo, &params(RedundancyPolicy::Fixed { k: 1 }), &steady(5.0, true, 0))
            .unwrap();
        assert!(matches!(
            broadcast_probability_per_degree(&[log.clone()], &[], 0.0),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert!(matches!(
            broadcast_probability_per_degree(&[log], &[Topology::single_cell(4).unwrap()], 0.0),
            Err(MetricsError::NodeCountMismatch { .. })
        ));
    }

    #[test]
    fn aggregation_is_permutation_invariant() {
        let spec = TopologySpec::RandomGeometric { n: 40, side: 100.0, avg_degree: 6.0 };
        let p = params(RedundancyPolicy::Adaptive { alpha: 0.75, k_min: 1, k_max: 30 });
        let batch = run_batch(&spec, &p, &steady(30.0, false, 8), 5).unwrap();
        let (topos, logs): (Vec<_>, Vec<_>) = batch.into_iter().unzip();
        let fwd = broadcast_probability_per_degree(&logs, &topos, 5.0).unwrap();
        let fwd_k = mean_k_per_degree(&logs, &topos, 5.0).unwrap();
        let mut order: Vec<usize> = vec![3, 0, 4, 2, 1];
        let perm_logs: Vec<_> = order.iter().map(|&i| logs[i].clone()).collect();
        let perm_topos: Vec<_> = order.drain(..).map(|i| topos[i].clone()).collect();
        assert_eq!(fwd, broadcast_probability_per_degree(&perm_logs, &perm_topos, 5.0).unwrap());
        assert_eq!(fwd_k, mean_k_per_degree(&perm_logs, &perm_topos, 5.0).unwrap());
        for row in &fwd.rows {
            assert!((0.0..=1.0).contains(&row.mean));
        }
        for row in &fwd_k.rows {
            assert!((1.0..=30.0).contains(&row.mean));
        }
        let total: usize = fwd.rows.iter().map(|r| r.nodes).sum();
        assert_eq!(total, 200);
    }

    #[test]
    fn streaming_matches_log_reduction() {
        let topo = Topology::random_geometric(25, 100.0, 5.0, 4).unwrap();
        let p = params(RedundancyPolicy::Fixed { k: 2 });
        let sim = steady(25.0, false, 9);
        let log = run(&topo, &p, &sim).unwrap();
        let mut collector = StatsCollector::new(5.0);
        crate::sim::run_with_sink(&topo, &p, &sim, &mut collector).unwrap();
        assert_eq!(collector.finish(), RunStats::from_log(&log, 5.0));
    }
}
