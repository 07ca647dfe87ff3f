//! Graph families used in the experiments: complete graphs, stars and
//! connected random geometric graphs in a square.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;

/// Half-width of the accepted band around the requested average degree.
pub const DEGREE_TOLERANCE: f64 = 0.25;
/// Placements tried before giving up on a connected instance.
pub const MAX_PLACEMENT_ATTEMPTS: u32 = 1000;
const BISECTION_STEPS: u32 = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("node count must be at least {min}, got {n}")]
    TooFewNodes { n: usize, min: usize },
    #[error("target average degree {target} must lie in (0, {max}]")]
    BadTargetDegree { target: f64, max: f64 },
    #[error("side length must be positive, got {0}")]
    BadSide(f64),
    #[error("no connected placement with average degree {target} after {attempts} attempts")]
    NotConnected { target: f64, attempts: u32 },
    #[error("edge ({0}, {1}) references a node outside the graph or is a self-loop")]
    BadEdge(usize, usize),
    #[error("position list has {got} entries for {n} nodes")]
    PositionCount { n: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Undirected simple graph over nodes `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    adjacency: Vec<Vec<usize>>,
    positions: Option<Vec<Position>>,
    radius: Option<f64>,
}

impl Topology {
    /// Builds a graph from an edge list. Duplicate edges are merged.
    pub fn from_edges(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, TopologyError> {
        let mut adjacency = vec![Vec::new(); n];
        for (a, b) in edges {
            if a >= n || b >= n || a == b {
                return Err(TopologyError::BadEdge(a, b));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Topology { adjacency, positions: None, radius: None })
    }

    /// Complete graph `K_n`.
    pub fn single_cell(n: usize) -> Result<Self, TopologyError> {
        if n == 0 {
            return Err(TopologyError::TooFewNodes { n, min: 1 });
        }
        let adjacency = (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect();
        Ok(Topology { adjacency, positions: None, radius: None })
    }

    /// Node 0 is the hub, nodes `1..=leaves` hang off it.
    pub fn star(leaves: usize) -> Result<Self, TopologyError> {
        if leaves == 0 {
            return Err(TopologyError::TooFewNodes { n: leaves, min: 1 });
        }
        Self::from_edges(leaves + 1, (1..=leaves).map(|leaf| (0, leaf)))
    }

    /// Uniform placement in `[0, side]^2` with a communication radius tuned
    /// so that the realized average degree is within [`DEGREE_TOLERANCE`] of
    /// `target_avg_degree`. Placements are redrawn from fresh sub-seeds until
    /// the graph is connected.
    pub fn random_geometric(
        n: usize,
        side: f64,
        target_avg_degree: f64,
        seed: u64,
    ) -> Result<Self, TopologyError> {
        if n < 2 {
            return Err(TopologyError::TooFewNodes { n, min: 2 });
        }
        let max_degree = (n - 1) as f64;
        if !(target_avg_degree > 0.0 && target_avg_degree <= max_degree) {
            return Err(TopologyError::BadTargetDegree { target: target_avg_degree, max: max_degree });
        }
        if !(side.is_finite() && side > 0.0) {
            return Err(TopologyError::BadSide(side));
        }

        for attempt in 0..MAX_PLACEMENT_ATTEMPTS {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::from(attempt)));
            let positions: Vec<Position> = (0..n)
                .map(|_| Position { x: rng.gen::<f64>() * side, y: rng.gen::<f64>() * side })
                .collect();
            let Some(radius) = calibrate_radius(&positions, target_avg_degree) else {
                continue;
            };
            let topo = Self::geometric(positions, radius);
            if topo.is_connected() {
                return Ok(topo);
            }
        }
        Err(TopologyError::NotConnected {
            target: target_avg_degree,
            attempts: MAX_PLACEMENT_ATTEMPTS,
        })
    }

    /// Unit-disk graph: `i ~ j` iff `0 < dist(i, j) <= radius`.
    pub fn geometric(positions: Vec<Position>, radius: f64) -> Self {
        let n = positions.len();
        let mut adjacency = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = positions[i].distance(&positions[j]);
                if d > 0.0 && d <= radius {
                    adjacency[i].push(j);
                    adjacency[j].push(i);
                }
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Topology { adjacency, positions: Some(positions), radius: Some(radius) }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn degrees(&self) -> impl Iterator<Item = usize> + '_ {
        self.adjacency.iter().map(Vec::len)
    }

    pub fn edge_count(&self) -> usize {
        self.degrees().sum::<usize>() / 2
    }

    pub fn average_degree(&self) -> f64 {
        if self.adjacency.is_empty() {
            return 0.0;
        }
        2.0 * self.edge_count() as f64 / self.node_count() as f64
    }

    pub fn positions(&self) -> Option<&[Position]> {
        self.positions.as_deref()
    }

    pub fn radius(&self) -> Option<f64> {
        self.radius
    }

    /// Edges as `(low, high)` pairs in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    /// Hop distance from `root`, `None` for unreachable nodes.
    pub fn bfs_distances(&self, root: usize) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.node_count()];
        let mut queue = VecDeque::new();
        dist[root] = Some(0);
        queue.push_back(root);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].expect("queued nodes have a distance");
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.node_count() == 0 || self.bfs_distances(0).iter().all(Option::is_some)
    }

    pub fn to_document(&self) -> TopologyDocument {
        TopologyDocument {
            nodes: self.node_count(),
            positions: self.positions.clone(),
            edges: self.edges().collect(),
            radius: self.radius,
        }
    }

    pub fn from_document(doc: &TopologyDocument) -> Result<Self, TopologyError> {
        let mut topo = Self::from_edges(doc.nodes, doc.edges.iter().copied())?;
        if let Some(pos) = &doc.positions {
            if pos.len() != doc.nodes {
                return Err(TopologyError::PositionCount { n: doc.nodes, got: pos.len() });
            }
        }
        topo.positions = doc.positions.clone();
        topo.radius = doc.radius;
        Ok(topo)
    }
}

/// Finds a radius whose realized average degree is within tolerance of the
/// target by bisecting on the radius. Returns `None` when the degree
/// sequence of this placement jumps over the tolerance band.
fn calibrate_radius(positions: &[Position], target: f64) -> Option<f64> {
    let n = positions.len();
    let mut dists: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(positions[i].distance(&positions[j]));
        }
    }
    dists.sort_unstable_by(f64::total_cmp);
    let realized = |r: f64| {
        let edges = dists.partition_point(|&d| d <= r) - dists.partition_point(|&d| d <= 0.0);
        2.0 * edges as f64 / n as f64
    };

    let mut lo = 0.0;
    let mut hi = *dists.last()?;
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let deg = realized(mid);
        if (deg - target).abs() <= DEGREE_TOLERANCE {
            return Some(mid);
        }
        if deg < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    ((realized(hi) - target).abs() <= DEGREE_TOLERANCE).then_some(hi)
}

/// Number of nodes per degree; degrees with no nodes are absent.
pub fn degree_histogram(topology: &Topology) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for d in topology.degrees() {
        *hist.entry(d).or_insert(0) += 1;
    }
    hist
}

/// JSON archive form of a [`Topology`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDocument {
    pub nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<Position>>,
    pub edges: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

/// Recipe for building a topology, possibly randomized by a seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum TopologySpec {
    SingleCell { n: usize },
    Star { leaves: usize },
    RandomGeometric { n: usize, side: f64, avg_degree: f64 },
}

impl TopologySpec {
    /// Deterministic families ignore `seed`.
    pub fn build(&self, seed: u64) -> Result<Topology, TopologyError> {
        match *self {
            TopologySpec::SingleCell { n } => Topology::single_cell(n),
            TopologySpec::Star { leaves } => Topology::star(leaves),
            TopologySpec::RandomGeometric { n, side, avg_degree } => {
                Topology::random_geometric(n, side, avg_degree, seed)
            }
        }
    }

    pub fn node_count(&self) -> usize {
        match *self {
            TopologySpec::SingleCell { n } | TopologySpec::RandomGeometric { n, .. } => n,
            TopologySpec::Star { leaves } => leaves + 1,
        }
    }
}
