//! Engine invariants over random graphs, policies and seeds.

use proptest::prelude::*;
use trickle_lab::metrics::{broadcast_probability_per_degree, RunStats};
use trickle_lab::rpl::run_rpl;
use trickle_lab::sim::{run, EventKind, SimConfig};
use trickle_lab::topology::Topology;
use trickle_lab::trickle::{RedundancyPolicy, TrickleParams};

fn policy() -> impl Strategy<Value = RedundancyPolicy> {
    prop_oneof![
        (1u32..8).prop_map(|k| RedundancyPolicy::Fixed { k }),
        (0.0f64..=1.0, 1u32..3, 0u32..12).prop_map(|(alpha, k_min, extra)| RedundancyPolicy::Adaptive {
            alpha,
            k_min,
            k_max: k_min + extra,
        }),
    ]
}

fn graph() -> impl Strategy<Value = Topology> {
    (2usize..25, proptest::collection::vec((0usize..25, 0usize..25), 0..80)).prop_map(|(n, pairs)| {
        let edges: Vec<(usize, usize)> =
            pairs.into_iter().map(|(a, b)| (a % n, b % n)).filter(|(a, b)| a != b).collect();
        Topology::from_edges(n, edges).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn trickle_rules_hold(topo in graph(), policy in policy(), seed in any::<u64>(),
                          synchronized in any::<bool>(), steady in any::<bool>()) {
        let p = TrickleParams::new(1.0, 8.0, policy).unwrap();
        let sim = SimConfig { duration: 60.0, synchronized, warmup: 0.0, seed, steady_state: steady };
        let log = run(&topo, &p, &sim).unwrap();
        let (k_lo, k_hi) = match policy {
            RedundancyPolicy::Fixed { k } => (k, k),
            RedundancyPolicy::Adaptive { k_min, k_max, .. } => (k_min, k_max),
        };
        let n = topo.node_count();
        let mut current_len = vec![0.0f64; n];
        let mut decided = vec![true; n];
        let mut last_time = 0.0;
        for ev in log.events() {
            prop_assert!(ev.time >= last_time);
            last_time = ev.time;
            match ev.kind {
                EventKind::IntervalStart { len } => {
                    prop_assert!(decided[ev.node] || current_len[ev.node] == 0.0);
                    if current_len[ev.node] > 0.0 {
                        prop_assert_eq!(len, (2.0 * current_len[ev.node]).min(p.i_max));
                    }
                    prop_assert!(len >= p.i_min && len <= p.i_max);
                    current_len[ev.node] = len;
                    decided[ev.node] = false;
                }
                EventKind::Broadcast { counter, k } => {
                    prop_assert!(counter < k && (k_lo..=k_hi).contains(&k));
                    decided[ev.node] = true;
                }
                EventKind::Suppressed { counter, k } => {
                    prop_assert!(counter >= k && (k_lo..=k_hi).contains(&k));
                    decided[ev.node] = true;
                }
                EventKind::KChange { old, new } => {
                    prop_assert!(policy.is_adaptive() && old != new && (k_lo..=k_hi).contains(&new));
                }
                EventKind::Heard { from } => prop_assert!(topo.neighbors(ev.node).contains(&from)),
                _ => prop_assert!(false, "unexpected event {:?}", ev.kind),
            }
        }
    }

    #[test]
    fn degree_profile_covers_every_node(seed in any::<u64>()) {
        let topo = Topology::random_geometric(30, 100.0, 6.0, seed).unwrap();
        let p = TrickleParams::new(1.0, 1.0, RedundancyPolicy::Fixed { k: 2 }).unwrap();
        let sim = SimConfig::steady_state(40.0, 1.0, seed);
        let log = run(&topo, &p, &sim).unwrap();
        let stats = RunStats::from_log(&log, sim.warmup);
        let profile = broadcast_probability_per_degree(&[log], &[topo.clone()], sim.warmup).unwrap();
        let total_nodes: usize = profile.rows.iter().map(|r| r.nodes).sum();
        prop_assert_eq!(total_nodes, stats.broadcast_probabilities().len());
        for row in &profile.rows {
            prop_assert!((0.0..=1.0).contains(&row.mean));
        }
    }

    #[test]
    fn single_cell_unsynchronized_bound(n in 2usize..30, k in 1u32..6, seed in any::<u64>()) {
        // a broadcast hears fewer than k others in the I/2 before it, so any
        // I/2 span holds at most k broadcasts and any window of length I at most 2k
        let topo = Topology::single_cell(n).unwrap();
        let p = TrickleParams::new(1.0, 1.0, RedundancyPolicy::Fixed { k }).unwrap();
        let sim = SimConfig { duration: 60.0, synchronized: false, warmup: 5.0, seed, steady_state: true };
        let log = run(&topo, &p, &sim).unwrap();
        let stats = RunStats::from_log(&log, sim.warmup);
        for &c in &stats.window_counts {
            prop_assert!(c <= 2 * u64::from(k));
        }
    }

    #[test]
    fn dodag_is_a_shortest_path_tree_upper_bound(seed in any::<u64>(), k in 1u32..6) {
        let topo = Topology::random_geometric(40, 100.0, 7.0, seed).unwrap();
        let p = TrickleParams::new(8.0, 8.0 * 1024.0, RedundancyPolicy::Fixed { k }).unwrap();
        let sim = SimConfig { duration: 200_000.0, synchronized: false, warmup: 0.0, seed, steady_state: false };
        let (_, m) = run_rpl(&topo, 0, &p, &sim).unwrap();
        let dist = topo.bfs_distances(0);
        for v in 0..40 {
            let rank = m.ranks[v].unwrap();
            prop_assert!(rank >= dist[v].unwrap());
            if let Some(parent) = m.parents[v] {
                prop_assert!(m.ranks[parent].unwrap() < rank);
            }
        }
        prop_assert!((0.0..=1.0).contains(&m.stretch));
    }
}
