//! Ground-truth network simulator.
//!
//! Each link carries a Werner pair described only by its fidelity. Nodes hold
//! pair-halves in a bounded memory. All randomness comes from the graph's own
//! seeded stream.

mod observe;
mod ops;
mod requests;
mod topology;

pub use observe::{observe, LinkReading, Observation, Symbol};
pub use ops::{
    apply_action, apply_adversary, apply_purification, apply_swap, deliver, entangle, release,
    step_decoherence, swap_fidelity, ActionOutcome, AdversaryConfig, TargetSelection,
};
pub use requests::{DemandMatrix, Request, RequestGenerator};
pub use topology::{build_network, Topology, TopologyParams};

use serde::{Deserialize, Serialize};

use crate::rng::Stream;

pub type NodeId = usize;
pub type LinkId = usize;

/// Werner physical range.
pub const FIDELITY_FLOOR: f64 = 0.25;

pub fn clamp_fidelity(f: f64) -> f64 {
    f.clamp(FIDELITY_FLOOR, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub fidelity: f64,
    /// Fidelity decay rate Γ, per ms.
    pub decay_rate: f64,
    /// Purification gain η in [0, 1].
    pub purification_gain: f64,
    /// Coherence time T2 in ms.
    pub t2_ms: f64,
    pub age: u64,
    pub alive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkKind {
    Physical,
    Virtual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    /// Endpoints, smaller id first.
    pub endpoints: (NodeId, NodeId),
    pub kind: LinkKind,
    pub state: LinkState,
    /// Extra pairs held on this link as purification fuel.
    pub aux_pairs: u32,
    /// Fidelity of a freshly generated pair on this link.
    pub base_fidelity: f64,
}

impl Link {
    pub fn other(&self, node: NodeId) -> Option<NodeId> {
        let (u, v) = self.endpoints;
        if node == u {
            Some(v)
        } else if node == v {
            Some(u)
        } else {
            None
        }
    }

    pub fn touches(&self, node: NodeId) -> bool {
        self.endpoints.0 == node || self.endpoints.1 == node
    }

    pub fn connects(&self, a: NodeId, b: NodeId) -> bool {
        self.endpoints == (a.min(b), a.max(b))
    }

    /// Pair-halves this link keeps at each endpoint.
    pub fn halves(&self) -> u32 {
        if self.state.alive {
            1 + self.aux_pairs
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub memory_capacity: u32,
    /// One entry per stored pair-half, naming the link it belongs to.
    pub stored_pairs: Vec<LinkId>,
    /// Qubits held hostage by an adversary.
    pub blocked: u32,
}

impl NodeState {
    pub fn occupancy(&self) -> u32 {
        self.stored_pairs.len() as u32 + self.blocked
    }

    pub fn free(&self) -> u32 {
        self.memory_capacity.saturating_sub(self.occupancy())
    }

    fn remove_halves(&mut self, link: LinkId, count: u32) {
        let mut left = count;
        self.stored_pairs.retain(|&l| {
            if l == link && left > 0 {
                left -= 1;
                false
            } else {
                true
            }
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MemoryEventKind {
    Store,
    Release,
    Swap,
    Purify,
    Delivery,
    Adversary,
}

/// One entry of the memory ledger: `delta` qubits at `node`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEvent {
    pub kind: MemoryEventKind,
    pub node: NodeId,
    pub delta: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsParams {
    /// Simulation step in ms.
    pub dt_ms: f64,
    /// Diffusion intensity κ of the fidelity SDE.
    pub diffusion: f64,
    /// Links below this fidelity are discarded.
    pub kill_threshold: f64,
    pub purification_success: f64,
    pub entangle_success: f64,
    /// Pairs stored longer than this multiple of T2 are discarded.
    pub storage_cutoff_t2: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            dt_ms: 0.1,
            diffusion: 0.01,
            kill_threshold: 0.5,
            purification_success: 0.75,
            entangle_success: 0.9,
            storage_cutoff_t2: 3.0,
        }
    }
}

impl PhysicsParams {
    pub fn validate(&self) -> crate::Result<()> {
        use crate::Error::InvalidParam;
        if !(self.dt_ms > 0.0) {
            return Err(InvalidParam(format!("dt_ms must be > 0, got {}", self.dt_ms)));
        }
        if !(self.diffusion >= 0.0) {
            return Err(InvalidParam("diffusion must be >= 0".into()));
        }
        for (name, p) in [
            ("purification_success", self.purification_success),
            ("entangle_success", self.entangle_success),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(InvalidParam(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(FIDELITY_FLOOR..=1.0).contains(&self.kill_threshold) {
            return Err(InvalidParam("kill_threshold must lie in [0.25, 1]".into()));
        }
        if !(self.storage_cutoff_t2 > 0.0) {
            return Err(InvalidParam("storage_cutoff_t2 must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkGraph {
    pub nodes: Vec<NodeState>,
    pub links: Vec<Link>,
    /// Per node: physical links plus live virtual links incident to it.
    pub adjacency: Vec<Vec<LinkId>>,
    /// Per node: (neighbour, physical link).
    pub physical: Vec<Vec<(NodeId, LinkId)>>,
    /// All-pairs hop distances over physical links (`u32::MAX` if unreachable).
    pub hops: Vec<Vec<u32>>,
    pub positions: Vec<(f64, f64)>,
    pub time: u64,
    pub rng_seed: u64,
    pub physics: PhysicsParams,
    #[serde(skip, default = "default_stream")]
    rng: Stream,
    #[serde(skip)]
    memory_log: Vec<MemoryEvent>,
}

fn default_stream() -> Stream {
    crate::rng::stream(0, "graph")
}

impl NetworkGraph {
    pub(crate) fn assemble(
        n: usize,
        edges: &[(NodeId, NodeId)],
        positions: Vec<(f64, f64)>,
        memory_capacity: u32,
        rng_seed: u64,
        physics: PhysicsParams,
    ) -> Self {
        let mut physical = vec![Vec::new(); n];
        let mut adjacency = vec![Vec::new(); n];
        let mut links = Vec::with_capacity(edges.len());
        for (id, &(a, b)) in edges.iter().enumerate() {
            let (u, v) = (a.min(b), a.max(b));
            links.push(Link {
                id,
                endpoints: (u, v),
                kind: LinkKind::Physical,
                state: LinkState {
                    fidelity: 1.0,
                    decay_rate: 0.0,
                    purification_gain: 0.0,
                    t2_ms: 1.0,
                    age: 0,
                    alive: false,
                },
                aux_pairs: 0,
                base_fidelity: 1.0,
            });
            physical[u].push((v, id));
            physical[v].push((u, id));
            adjacency[u].push(id);
            adjacency[v].push(id);
        }
        let hops = all_pairs_hops(&physical);
        Self {
            nodes: (0..n)
                .map(|_| NodeState {
                    memory_capacity,
                    stored_pairs: Vec::new(),
                    blocked: 0,
                })
                .collect(),
            links,
            adjacency,
            physical,
            hops,
            positions,
            time: 0,
            rng_seed,
            physics,
            rng: crate::rng::stream(rng_seed, "graph"),
            memory_log: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn physical_link_count(&self) -> usize {
        self.links
            .iter()
            .filter(|l| l.kind == LinkKind::Physical)
            .count()
    }

    pub fn link(&self, id: LinkId) -> crate::Result<&Link> {
        self.links.get(id).ok_or(crate::Error::UnknownLink(id))
    }

    pub fn live_links(&self) -> impl Iterator<Item = &Link> {
        self.links.iter().filter(|l| l.state.alive)
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.physical[node].len()
    }

    pub fn physical_link_between(&self, a: NodeId, b: NodeId) -> Option<LinkId> {
        self.physical[a]
            .iter()
            .find(|(nb, _)| *nb == b)
            .map(|&(_, l)| l)
    }

    pub fn hop_distance(&self, a: NodeId, b: NodeId) -> u32 {
        self.hops[a][b]
    }

    pub fn is_connected(&self) -> bool {
        self.hops[0].iter().all(|&h| h != u32::MAX)
    }

    pub fn total_occupancy(&self) -> u64 {
        self.nodes.iter().map(|n| u64::from(n.occupancy())).sum()
    }

    pub fn total_capacity(&self) -> u64 {
        self.nodes.iter().map(|n| u64::from(n.memory_capacity)).sum()
    }

    /// Drain the memory ledger accumulated since the last call.
    pub fn take_memory_log(&mut self) -> Vec<MemoryEvent> {
        std::mem::take(&mut self.memory_log)
    }

    pub fn rng_mut(&mut self) -> &mut Stream {
        &mut self.rng
    }

    /// Mutable access to link attributes, e.g. for drifting Γ or test setup.
    pub fn link_state_mut(&mut self, id: LinkId) -> crate::Result<&mut LinkState> {
        self.links
            .get_mut(id)
            .map(|l| &mut l.state)
            .ok_or(crate::Error::UnknownLink(id))
    }

    pub(crate) fn log(&mut self, kind: MemoryEventKind, node: NodeId, delta: i64) {
        if delta != 0 {
            self.memory_log.push(MemoryEvent { kind, node, delta });
        }
    }

    pub(crate) fn store_half(&mut self, node: NodeId, link: LinkId) {
        self.nodes[node].stored_pairs.push(link);
        self.log(MemoryEventKind::Store, node, 1);
    }

    pub(crate) fn drop_halves(
        &mut self,
        node: NodeId,
        link: LinkId,
        count: u32,
        kind: MemoryEventKind,
    ) {
        let before = self.nodes[node].stored_pairs.len();
        self.nodes[node].remove_halves(link, count);
        let removed = before - self.nodes[node].stored_pairs.len();
        self.log(kind, node, -(removed as i64));
    }

    /// Discard a live link entirely, releasing every half it holds.
    pub(crate) fn kill_link(&mut self, id: LinkId, kind: MemoryEventKind) {
        let link = &self.links[id];
        if !link.state.alive {
            return;
        }
        let halves = link.halves();
        let (u, v) = link.endpoints;
        let is_virtual = link.kind == LinkKind::Virtual;
        self.drop_halves(u, id, halves, kind);
        self.drop_halves(v, id, halves, kind);
        let link = &mut self.links[id];
        link.state.alive = false;
        link.aux_pairs = 0;
        if is_virtual {
            self.adjacency[u].retain(|&l| l != id);
            self.adjacency[v].retain(|&l| l != id);
        }
    }

    /// Classical view: everything but the fidelities.
    pub fn observable(&self) -> ObservableView<'_> {
        ObservableView { graph: self }
    }

    /// Check the structural invariants; used by tests and debug assertions.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for link in &self.links {
            let (u, v) = link.endpoints;
            if u == v {
                return Err(format!("self-loop on link {}", link.id));
            }
            if u >= self.nodes.len() || v >= self.nodes.len() {
                return Err(format!("link {} has a missing endpoint", link.id));
            }
            if link.state.alive
                && !(FIDELITY_FLOOR..=1.0).contains(&link.state.fidelity)
            {
                return Err(format!(
                    "link {} fidelity {} outside the Werner range",
                    link.id, link.state.fidelity
                ));
            }
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if node.occupancy() > node.memory_capacity {
                return Err(format!("node {id} over capacity"));
            }
            let expected: u32 = self
                .links
                .iter()
                .filter(|l| l.touches(id))
                .map(Link::halves)
                .sum();
            if expected != node.stored_pairs.len() as u32 {
                return Err(format!(
                    "node {id} stores {} halves but its links hold {expected}",
                    node.stored_pairs.len()
                ));
            }
        }
        for (a, nbrs) in self.physical.iter().enumerate() {
            for &(b, l) in nbrs {
                if !self.physical[b].iter().any(|&(x, m)| x == a && m == l) {
                    return Err(format!("asymmetric physical adjacency {a}-{b}"));
                }
            }
        }
        Ok(())
    }
}

fn all_pairs_hops(physical: &[Vec<(NodeId, LinkId)>]) -> Vec<Vec<u32>> {
    let n = physical.len();
    let mut out = vec![vec![u32::MAX; n]; n];
    let mut queue = std::collections::VecDeque::new();
    for (src, row) in out.iter_mut().enumerate() {
        row[src] = 0;
        queue.clear();
        queue.push_back(src);
        while let Some(x) = queue.pop_front() {
            for &(y, _) in &physical[x] {
                if row[y] == u32::MAX {
                    row[y] = row[x] + 1;
                    queue.push_back(y);
                }
            }
        }
    }
    out
}

/// Read-only classical view of a network. Fidelities are not reachable from
/// here; policies only ever see this and their belief.
#[derive(Clone, Copy)]
pub struct ObservableView<'a> {
    graph: &'a NetworkGraph,
}

impl<'a> ObservableView<'a> {
    pub fn node_count(&self) -> usize {
        self.graph.nodes.len()
    }

    pub fn link_count(&self) -> usize {
        self.graph.links.len()
    }

    pub fn time(&self) -> u64 {
        self.graph.time
    }

    pub fn endpoints(&self, id: LinkId) -> (NodeId, NodeId) {
        self.graph.links[id].endpoints
    }

    pub fn kind(&self, id: LinkId) -> LinkKind {
        self.graph.links[id].kind
    }

    pub fn alive(&self, id: LinkId) -> bool {
        self.graph.links[id].state.alive
    }

    pub fn age(&self, id: LinkId) -> u64 {
        self.graph.links[id].state.age
    }

    pub fn aux_pairs(&self, id: LinkId) -> u32 {
        self.graph.links[id].aux_pairs
    }

    pub fn decay_rate(&self, id: LinkId) -> f64 {
        self.graph.links[id].state.decay_rate
    }

    pub fn purification_gain(&self, id: LinkId) -> f64 {
        self.graph.links[id].state.purification_gain
    }

    pub fn t2_ms(&self, id: LinkId) -> f64 {
        self.graph.links[id].state.t2_ms
    }

    pub fn occupancy(&self, node: NodeId) -> u32 {
        self.graph.nodes[node].occupancy()
    }

    pub fn capacity(&self, node: NodeId) -> u32 {
        self.graph.nodes[node].memory_capacity
    }

    pub fn free(&self, node: NodeId) -> u32 {
        self.graph.nodes[node].free()
    }

    pub fn incident(&self, node: NodeId) -> &'a [LinkId] {
        &self.graph.adjacency[node]
    }

    pub fn physical_neighbors(&self, node: NodeId) -> &'a [(NodeId, LinkId)] {
        &self.graph.physical[node]
    }

    pub fn hop_distance(&self, a: NodeId, b: NodeId) -> u32 {
        self.graph.hops[a][b]
    }

    pub fn physics(&self) -> &'a PhysicsParams {
        &self.graph.physics
    }

    pub fn live_link_ids(&self) -> impl Iterator<Item = LinkId> + 'a {
        self.graph
            .links
            .iter()
            .filter(|l| l.state.alive)
            .map(|l| l.id)
    }

    pub fn physical_link_ids(&self) -> impl Iterator<Item = LinkId> + 'a {
        self.graph
            .links
            .iter()
            .filter(|l| l.kind == LinkKind::Physical)
            .map(|l| l.id)
    }

    /// Live link joining `a` and `b`, lowest id first.
    pub fn live_link_between(&self, a: NodeId, b: NodeId) -> Option<LinkId> {
        self.graph.adjacency[a]
            .iter()
            .copied()
            .find(|&l| self.graph.links[l].state.alive && self.graph.links[l].connects(a, b))
    }

    pub fn physical_link_between(&self, a: NodeId, b: NodeId) -> Option<LinkId> {
        self.graph.physical_link_between(a, b)
    }
}

/// Elementary network operation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    #[default]
    Idle,
    Entangle { link: LinkId },
    Purify { link: LinkId },
    Swap { left: LinkId, right: LinkId, via: NodeId },
    Release { link: LinkId },
    Deliver { link: LinkId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionKind {
    Idle,
    Entangle,
    Purify,
    Swap,
    Release,
    Deliver,
}

impl ActionKind {
    pub const ALL: [ActionKind; 6] = [
        ActionKind::Idle,
        ActionKind::Entangle,
        ActionKind::Purify,
        ActionKind::Swap,
        ActionKind::Release,
        ActionKind::Deliver,
    ];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Idle => "idle",
            ActionKind::Entangle => "entangle",
            ActionKind::Purify => "purify",
            ActionKind::Swap => "swap",
            ActionKind::Release => "release",
            ActionKind::Deliver => "deliver",
        }
    }
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Idle => ActionKind::Idle,
            Action::Entangle { .. } => ActionKind::Entangle,
            Action::Purify { .. } => ActionKind::Purify,
            Action::Swap { .. } => ActionKind::Swap,
            Action::Release { .. } => ActionKind::Release,
            Action::Deliver { .. } => ActionKind::Deliver,
        }
    }

    /// Links the action reads or consumes.
    pub fn links(&self) -> Vec<LinkId> {
        match *self {
            Action::Idle => vec![],
            Action::Entangle { link }
            | Action::Purify { link }
            | Action::Release { link }
            | Action::Deliver { link } => vec![link],
            Action::Swap { left, right, .. } => vec![left, right],
        }
    }

    /// The node pair the action acts between. Swaps report the endpoints of
    /// the link they would create; idle reports `None`.
    pub fn endpoints(&self, view: &ObservableView<'_>) -> Option<(NodeId, NodeId)> {
        match *self {
            Action::Idle => None,
            Action::Entangle { link }
            | Action::Purify { link }
            | Action::Release { link }
            | Action::Deliver { link } => Some(view.endpoints(link)),
            Action::Swap { left, right, via } => {
                let l = view.endpoints(left);
                let r = view.endpoints(right);
                let a = if l.0 == via { l.1 } else { l.0 };
                let b = if r.0 == via { r.1 } else { r.0 };
                Some((a, b))
            }
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::Idle => write!(f, "idle"),
            Action::Entangle { link } => write!(f, "entangle({link})"),
            Action::Purify { link } => write!(f, "purify({link})"),
            Action::Swap { left, right, via } => write!(f, "swap({left},{right}@{via})"),
            Action::Release { link } => write!(f, "release({link})"),
            Action::Deliver { link } => write!(f, "deliver({link})"),
        }
    }
}
