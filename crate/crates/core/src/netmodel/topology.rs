use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NetworkGraph, NodeId, PhysicsParams};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    RandomGeometric,
    SmallWorld,
    Line,
    Grid,
}

impl Topology {
    pub fn name(self) -> &'static str {
        match self {
            Topology::RandomGeometric => "random_geometric",
            Topology::SmallWorld => "small_world",
            Topology::Line => "line",
            Topology::Grid => "grid",
        }
    }
}

impl std::str::FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_geometric" | "rgg" => Ok(Topology::RandomGeometric),
            "small_world" => Ok(Topology::SmallWorld),
            "line" => Ok(Topology::Line),
            "grid" => Ok(Topology::Grid),
            other => Err(Error::InvalidParam(format!("unknown topology {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologyParams {
    /// Connection radius in the unit square; `None` picks a size-dependent default.
    pub radius: Option<f64>,
    /// Ring neighbours per node for small-world graphs (even).
    pub ring_neighbors: usize,
    pub rewire_prob: f64,
    pub initial_fidelity_range: (f64, f64),
    pub decoherence_range: (f64, f64),
    pub purification_gain_range: (f64, f64),
    pub t2_range_ms: (f64, f64),
    pub memory_capacity: u32,
    pub max_attempts: usize,
}

impl Default for TopologyParams {
    fn default() -> Self {
        Self {
            radius: None,
            ring_neighbors: 4,
            rewire_prob: 0.1,
            initial_fidelity_range: (0.70, 0.95),
            decoherence_range: (0.01, 0.10),
            purification_gain_range: (0.5, 0.9),
            t2_range_ms: (1.0, 10.0),
            memory_capacity: 8,
            max_attempts: 200,
        }
    }
}

impl TopologyParams {
    pub fn default_radius(n: usize) -> f64 {
        let n = n.max(2) as f64;
        (1.3 * (n.ln() / (std::f64::consts::PI * n)).sqrt()).clamp(0.15, 1.5)
    }

    fn validate(&self, topology: Topology, n: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParam(msg));
        if n < 2 {
            return bad(format!("need at least 2 nodes, got {n}"));
        }
        if let Some(r) = self.radius {
            if !(r > 0.0 && r <= std::f64::consts::SQRT_2) {
                return bad(format!("radius {r} outside (0, sqrt 2]"));
            }
        }
        if !(0.0..=1.0).contains(&self.rewire_prob) {
            return bad(format!("rewire probability {} outside [0, 1]", self.rewire_prob));
        }
        if topology == Topology::SmallWorld {
            let k = self.ring_neighbors;
            if k < 2 || k % 2 != 0 || k >= n {
                return bad(format!("ring_neighbors {k} must be even and in [2, n)"));
            }
        }
        let ranges = [
            ("initial_fidelity_range", self.initial_fidelity_range, 0.25, 1.0),
            ("decoherence_range", self.decoherence_range, 0.0, f64::INFINITY),
            ("purification_gain_range", self.purification_gain_range, 0.0, 1.0),
            ("t2_range_ms", self.t2_range_ms, f64::MIN_POSITIVE, f64::INFINITY),
        ];
        for (name, (lo, hi), min, max) in ranges {
            if !(lo <= hi && lo >= min && hi <= max) {
                return bad(format!("{name} ({lo}, {hi}) outside [{min}, {max}]"));
            }
        }
        if self.memory_capacity == 0 {
            return bad("memory_capacity must be positive".into());
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive".into());
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

type EdgeSet = (Vec<(NodeId, NodeId)>, Vec<(f64, f64)>);

fn line_edges(n: usize) -> EdgeSet {
    let edges = (0..n - 1).map(|i| (i, i + 1)).collect();
    let pos = (0..n).map(|i| (i as f64 / (n - 1) as f64, 0.5)).collect();
    (edges, pos)
}

fn grid_edges(n: usize) -> EdgeSet {
    let rows = (n as f64).sqrt().floor() as usize;
    let cols = n.div_ceil(rows);
    let mut edges = Vec::new();
    let mut pos = Vec::with_capacity(n);
    for i in 0..n {
        let (r, c) = (i / cols, i % cols);
        pos.push((c as f64 / cols.max(2).saturating_sub(1) as f64, r as f64 / rows.max(2).saturating_sub(1) as f64));
        if c + 1 < cols && i + 1 < n {
            edges.push((i, i + 1));
        }
        if i + cols < n {
            edges.push((i, i + cols));
        }
    }
    (edges, pos)
}

fn geometric_edges(n: usize, radius: f64, rng: &mut impl Rng) -> EdgeSet {
    let pos: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (dx, dy) = (pos[i].0 - pos[j].0, pos[i].1 - pos[j].1);
            if (dx * dx + dy * dy).sqrt() <= radius {
                edges.push((i, j));
            }
        }
    }
    (edges, pos)
}

fn small_world_edges(n: usize, k: usize, p: f64, rng: &mut impl Rng) -> EdgeSet {
    let mut set = std::collections::BTreeSet::new();
    for i in 0..n {
        for j in 1..=k / 2 {
            let t = (i + j) % n;
            set.insert((i.min(t), i.max(t)));
        }
    }
    let ring: Vec<(usize, usize)> = set.iter().copied().collect();
    for (u, v) in ring {
        if rng.random::<f64>() < p {
            let w = rng.random_range(0..n);
            let cand = (u.min(w), u.max(w));
            if w != u && !set.contains(&cand) {
                set.remove(&(u, v));
                set.insert(cand);
            }
        }
    }
    let pos = (0..n)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            (0.5 + 0.5 * a.cos(), 0.5 + 0.5 * a.sin())
        })
        .collect();
    (set.into_iter().collect(), pos)
}

fn connected(n: usize, edges: &[(NodeId, NodeId)]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(x) = stack.pop() {
        for &y in &adj[x] {
            if !seen[y] {
                seen[y] = true;
                stack.push(y);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Build a connected network and populate each physical link with a fresh
/// pair where both endpoints have room.
pub fn build_network(
    topology: Topology,
    n: usize,
    params: &TopologyParams,
    physics: &PhysicsParams,
    seed: u64,
) -> Result<NetworkGraph> {
    params.validate(topology, n)?;
    physics.validate()?;
    let mut rng = rng::stream(seed, "topology");
    let mut found = None;
    for _ in 0..params.max_attempts {
        let (edges, pos) = match topology {
            Topology::Line => line_edges(n),
            Topology::Grid => grid_edges(n),
            Topology::RandomGeometric => geometric_edges(
                n,
                params.radius.unwrap_or_else(|| TopologyParams::default_radius(n)),
                &mut rng,
            ),
            Topology::SmallWorld => {
                small_world_edges(n, params.ring_neighbors, params.rewire_prob, &mut rng)
            }
        };
        if connected(n, &edges) {
            found = Some((edges, pos));
            break;
        }
        if matches!(topology, Topology::Line | Topology::Grid) {
            break;
        }
    }
    let (edges, pos) = found.ok_or_else(|| Error::Unconnectable {
        topology: topology.name().to_string(),
        nodes: n,
        attempts: params.max_attempts,
    })?;

    let mut g = NetworkGraph::assemble(n, &edges, pos, params.memory_capacity, seed, physics.clone());
    let mut attr = rng::stream(seed, "link-attributes");
    for id in 0..g.links.len() {
        let f0 = uniform(&mut attr, params.initial_fidelity_range);
        let link = &mut g.links[id];
        link.base_fidelity = f0;
        link.state.fidelity = f0;
        link.state.decay_rate = uniform(&mut attr, params.decoherence_range);
        link.state.purification_gain = uniform(&mut attr, params.purification_gain_range);
        link.state.t2_ms = uniform(&mut attr, params.t2_range_ms);
    }
    for id in 0..g.links.len() {
        let (u, v) = g.links[id].endpoints;
        if g.nodes[u].free() > 0 && g.nodes[v].free() > 0 {
            g.links[id].state.alive = true;
            g.store_half(u, id);
            g.store_half(v, id);
        }
    }
    g.take_memory_log();
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(t: Topology, n: usize, seed: u64) -> NetworkGraph {
        build_network(t, n, &TopologyParams::default(), &PhysicsParams::default(), seed).unwrap()
    }

    #[test]
    fn two_node_line_has_one_link() {
        let g = build(Topology::Line, 2, 7);
        assert_eq!(g.links.len(), 1);
        assert_eq!(g.degree(0), 1);
        assert_eq!(g.degree(1), 1);
        g.check_invariants().unwrap();
    }

    #[test]
    fn random_geometric_defaults() {
        let g = build(Topology::RandomGeometric, 50, 1);
        assert!(g.is_connected());
        for l in &g.links {
            assert!((0.70..=0.95).contains(&l.base_fidelity));
            assert!((0.01..=0.10).contains(&l.state.decay_rate));
            assert!((1.0..=10.0).contains(&l.state.t2_ms));
        }
        g.check_invariants().unwrap();
    }

    #[test]
    fn three_by_three_grid_has_twelve_links() {
        let g = build(Topology::Grid, 9, 3);
        assert_eq!(g.links.len(), 12);
        assert_eq!(g.hop_distance(0, 8), 4);
    }

    #[test]
    fn small_world_is_connected() {
        let g = build(Topology::SmallWorld, 30, 11);
        assert!(g.is_connected());
        g.check_invariants().unwrap();
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let p = PhysicsParams::default();
        let err = build_network(Topology::Line, 1, &TopologyParams::default(), &p, 0).unwrap_err();
        assert!(matches!(err, Error::InvalidParam(_)));
        let params = TopologyParams {
            rewire_prob: 1.5,
            ..Default::default()
        };
        assert!(matches!(
            build_network(Topology::SmallWorld, 10, &params, &p, 0),
            Err(Error::InvalidParam(_))
        ));
    }

    #[test]
    fn sparse_geometric_graph_is_unconnectable() {
        let params = TopologyParams {
            radius: Some(0.01),
            max_attempts: 3,
            ..Default::default()
        };
        let err = build_network(Topology::RandomGeometric, 40, &params, &PhysicsParams::default(), 0)
            .unwrap_err();
        assert!(matches!(err, Error::Unconnectable { attempts: 3, .. }));
    }

    #[test]
    fn same_seed_same_graph() {
        let a = build(Topology::RandomGeometric, 25, 5);
        let b = build(Topology::RandomGeometric, 25, 5);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}
