//! Reference routing policies. They read belief-mean fidelities only and
//! every action they emit passes [`feasible`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{mean, BeliefState};
use crate::gnn::{init_blocks, soft_update, Adam, Mlp};
use crate::netmodel::{Action, ActionKind, LinkId, LinkKind, NodeId, ObservableView, Request};
use crate::policy::{softmax, PolicyDistribution};
use crate::routing::{Candidate, ACTION_FEATURES, REQUEST_FEATURES};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Fmsp,
    Qdr,
    Gps,
    DqnLite,
    Flooding,
}

/// Whether `action` can be executed on the current network without error.
pub fn feasible(view: &ObservableView<'_>, action: &Action) -> bool {
    let live = |l: LinkId| l < view.link_count() && view.alive(l);
    match *action {
        Action::Idle => true,
        Action::Entangle { link } => {
            if link >= view.link_count() || view.kind(link) != LinkKind::Physical {
                return false;
            }
            let (u, v) = view.endpoints(link);
            view.free(u) > 0 && view.free(v) > 0
        }
        Action::Purify { link } => live(link) && view.aux_pairs(link) > 0,
        Action::Release { link } | Action::Deliver { link } => live(link),
        Action::Swap { left, right, via } => {
            if left == right || !live(left) || !live(right) {
                return false;
            }
            if view.aux_pairs(left) > 0 || view.aux_pairs(right) > 0 {
                return false;
            }
            let other = |l: LinkId| {
                let (a, b) = view.endpoints(l);
                if a == via {
                    Some(b)
                } else if b == via {
                    Some(a)
                } else {
                    None
                }
            };
            matches!((other(left), other(right)), (Some(a), Some(b)) if a != b)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedEdge {
    pub u: NodeId,
    pub v: NodeId,
    pub link: LinkId,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub nodes: Vec<NodeId>,
    pub links: Vec<LinkId>,
    pub weight: f64,
}

/// Shortest path on an undirected multigraph with non-negative weights.
/// Ties keep the first relaxation found, scanning edges in list order.
pub fn dijkstra(nodes: usize, edges: &[WeightedEdge], from: NodeId, to: NodeId) -> Result<Path> {
    if from >= nodes || to >= nodes {
        return Err(Error::NoPath { from, to });
    }
    if edges.iter().any(|e| !(e.weight >= 0.0)) {
        return Err(Error::InvalidParam("edge weights must be >= 0".into()));
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for (i, e) in edges.iter().enumerate() {
        adj[e.u].push(i);
        adj[e.v].push(i);
    }
    let mut dist = vec![f64::INFINITY; nodes];
    let mut pred: Vec<Option<(usize, NodeId)>> = vec![None; nodes];
    let mut done = vec![false; nodes];
    dist[from] = 0.0;
    loop {
        let next = (0..nodes)
            .filter(|&v| !done[v] && dist[v].is_finite())
            .min_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
        let Some(x) = next else { break };
        if x == to {
            break;
        }
        done[x] = true;
        for &i in &adj[x] {
            let e = &edges[i];
            let y = if e.u == x { e.v } else { e.u };
            let nd = dist[x] + e.weight;
            if nd < dist[y] {
                dist[y] = nd;
                pred[y] = Some((i, x));
            }
        }
    }
    if !dist[to].is_finite() {
        return Err(Error::NoPath { from, to });
    }
    let mut nodes_rev = vec![to];
    let mut links_rev = Vec::new();
    let mut x = to;
    while let Some((i, p)) = pred[x] {
        links_rev.push(edges[i].link);
        nodes_rev.push(p);
        x = p;
    }
    nodes_rev.reverse();
    links_rev.reverse();
    Ok(Path {
        nodes: nodes_rev,
        links: links_rev,
        weight: dist[to],
    })
}

/// Live links and dead physical links; a dead link is priced at the fresh
/// prior its belief row holds.
fn routable<'a>(view: &'a ObservableView<'_>) -> impl Iterator<Item = LinkId> + 'a {
    (0..view.link_count()).filter(|&l| view.alive(l) || view.kind(l) == LinkKind::Physical)
}

fn neg_log(f: f64) -> f64 {
    -f.clamp(1e-12, 1.0).ln()
}

pub fn fmsp_weights(view: &ObservableView<'_>, b: &BeliefState) -> Vec<WeightedEdge> {
    routable(view)
        .map(|l| {
            let (u, v) = view.endpoints(l);
            WeightedEdge {
                u,
                v,
                link: l,
                weight: neg_log(mean(&b.grid, &b.links[l])),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QdrConfig {
    pub lambda_age: f64,
    pub lambda_mem: f64,
}

impl Default for QdrConfig {
    fn default() -> Self {
        Self {
            lambda_age: 0.5,
            lambda_mem: 0.5,
        }
    }
}

/// `−log F̂ + λ_age·age/T2 + λ_mem·μ/m_max`, with μ/m_max the fuller of the
/// two endpoint memories.
pub fn qdr_weights(view: &ObservableView<'_>, b: &BeliefState, cfg: &QdrConfig) -> Vec<WeightedEdge> {
    let dt = view.physics().dt_ms;
    let load = |x: NodeId| {
        let c = view.capacity(x);
        if c == 0 {
            1.0
        } else {
            f64::from(view.occupancy(x)) / f64::from(c)
        }
    };
    routable(view)
        .map(|l| {
            let (u, v) = view.endpoints(l);
            let age = if view.alive(l) {
                view.age(l) as f64 * dt / view.t2_ms(l).max(1e-9)
            } else {
                0.0
            };
            WeightedEdge {
                u,
                v,
                link: l,
                weight: neg_log(mean(&b.grid, &b.links[l])) + cfg.lambda_age * age + cfg.lambda_mem * load(u).max(load(v)),
            }
        })
        .collect()
}

/// Next action that makes progress along `path` from the source: deliver a
/// finished pair, spend pending auxiliaries, generate the first missing
/// hop, or swap the first two hops together.
pub fn path_action(view: &ObservableView<'_>, path: &Path) -> Action {
    let Some(&l1) = path.links.first() else {
        return Action::Idle;
    };
    let action = if !view.alive(l1) {
        Action::Entangle { link: l1 }
    } else if path.links.len() == 1 {
        if view.aux_pairs(l1) > 0 {
            Action::Purify { link: l1 }
        } else {
            Action::Deliver { link: l1 }
        }
    } else {
        let l2 = path.links[1];
        if !view.alive(l2) {
            Action::Entangle { link: l2 }
        } else if view.aux_pairs(l1) > 0 {
            Action::Purify { link: l1 }
        } else if view.aux_pairs(l2) > 0 {
            Action::Purify { link: l2 }
        } else {
            Action::Swap {
                left: l1,
                right: l2,
                via: path.nodes[1],
            }
        }
    };
    if feasible(view, &action) {
        action
    } else {
        Action::Idle
    }
}

fn point(action: Action) -> PolicyDistribution<Action> {
    PolicyDistribution::point(vec![action], 0).expect("single action")
}

/// Follow the path maximizing the product of belief-mean fidelities.
pub fn fmsp_route(view: &ObservableView<'_>, b: &BeliefState, req: &Request) -> Result<PolicyDistribution<Action>> {
    let path = dijkstra(view.node_count(), &fmsp_weights(view, b), req.source, req.destination)?;
    Ok(point(path_action(view, &path)))
}

/// Follow the path minimizing the age- and memory-aware composite weight.
pub fn qdr_route(
    view: &ObservableView<'_>,
    b: &BeliefState,
    req: &Request,
    cfg: &QdrConfig,
) -> Result<PolicyDistribution<Action>> {
    let path = dijkstra(view.node_count(), &qdr_weights(view, b, cfg), req.source, req.destination)?;
    Ok(point(path_action(view, &path)))
}

/// Greedy rules over the request's candidate set: deliver; purify the
/// weakest link below the target that holds an auxiliary pair; swap the pair
/// with the largest weaker fidelity; request an auxiliary for a weak chain
/// link; generate the next hop.
pub fn gps_greedy(
    view: &ObservableView<'_>,
    b: &BeliefState,
    req: &Request,
    cands: &[Candidate],
) -> PolicyDistribution<Action> {
    let f = |l: LinkId| mean(&b.grid, &b.links[l]);
    let ok: Vec<&Candidate> = cands.iter().filter(|c| feasible(view, &c.action)).collect();
    let pick = |kind: ActionKind| ok.iter().filter(move |c| c.kind() == kind).map(|c| c.action);

    if let Some(a) = pick(ActionKind::Deliver).max_by(|a, c| {
        let (Action::Deliver { link: x }, Action::Deliver { link: y }) = (a, c) else {
            unreachable!()
        };
        f(*x).total_cmp(&f(*y)).then(y.cmp(x))
    }) {
        return point(a);
    }
    let weakest = pick(ActionKind::Purify)
        .filter_map(|a| match a {
            Action::Purify { link } if f(link) < req.min_fidelity => Some(link),
            _ => None,
        })
        .min_by(|&x, &y| f(x).total_cmp(&f(y)).then(x.cmp(&y)));
    if let Some(link) = weakest {
        return point(Action::Purify { link });
    }
    let swap = pick(ActionKind::Swap)
        .filter_map(|a| match a {
            Action::Swap { left, right, .. } => Some((a, f(left).min(f(right)), (left.min(right), left.max(right)))),
            _ => None,
        })
        .min_by(|x, y| y.1.total_cmp(&x.1).then(x.2.cmp(&y.2)));
    if let Some((a, _, _)) = swap {
        return point(a);
    }
    let entangles: Vec<(LinkId, f64)> = ok
        .iter()
        .filter_map(|c| match c.action {
            Action::Entangle { link } => Some((link, c.features[1])),
            _ => None,
        })
        .collect();
    if let Some(&(link, _)) = entangles
        .iter()
        .filter(|(l, _)| view.alive(*l) && f(*l) < req.min_fidelity)
        .min_by(|x, y| f(x.0).total_cmp(&f(y.0)).then(x.0.cmp(&y.0)))
    {
        return point(Action::Entangle { link });
    }
    if let Some(&(link, _)) = entangles
        .iter()
        .filter(|(l, _)| !view.alive(*l))
        .min_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)))
    {
        return point(Action::Entangle { link });
    }
    point(Action::Idle)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FloodingConfig {
    /// Hop budget around the source; `None` uses the source–destination distance.
    pub hop_budget: Option<u32>,
}

impl Default for FloodingConfig {
    fn default() -> Self {
        Self { hop_budget: None }
    }
}

/// Uniform over every generation, purification and progressing swap within
/// the hop budget of the source; a finished pair is delivered first.
pub fn flooding(
    view: &ObservableView<'_>,
    req: &Request,
    cfg: &FloodingConfig,
) -> Result<PolicyDistribution<Action>> {
    let (s, d) = (req.source, req.destination);
    let budget = cfg.hop_budget.unwrap_or_else(|| view.hop_distance(s, d));
    if budget == u32::MAX {
        return Err(Error::NoPath { from: s, to: d });
    }
    if let Some(l) = view.live_link_between(s, d) {
        if feasible(view, &Action::Deliver { link: l }) {
            return Ok(point(Action::Deliver { link: l }));
        }
    }
    let within = |x: NodeId| view.hop_distance(s, x) <= budget;
    let mut acts = Vec::new();
    for l in 0..view.link_count() {
        let (u, v) = view.endpoints(l);
        let (near, far) = if view.hop_distance(s, u) <= view.hop_distance(s, v) {
            (u, v)
        } else {
            (v, u)
        };
        if !within(far) || view.hop_distance(s, near) >= budget {
            continue;
        }
        for a in [Action::Entangle { link: l }, Action::Purify { link: l }] {
            if feasible(view, &a) {
                acts.push(a);
            }
        }
    }
    for &l in view.incident(s) {
        if !view.alive(l) {
            continue;
        }
        let (u, v) = view.endpoints(l);
        let x = if u == s { v } else { u };
        for &m in view.incident(x) {
            let (p, q) = view.endpoints(m);
            let y = if p == x { q } else { p };
            let a = Action::Swap { left: l, right: m, via: x };
            if y != s && within(y) && view.hop_distance(y, d) < view.hop_distance(x, d) && feasible(view, &a) {
                acts.push(a);
            }
        }
    }
    if acts.is_empty() {
        return Ok(point(Action::Idle));
    }
    PolicyDistribution::uniform(acts)
}

pub const DQN_INPUTS: usize = REQUEST_FEATURES + ActionKind::COUNT + ACTION_FEATURES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnConfig {
    pub width: usize,
    pub gamma: f64,
    pub lr: f64,
    pub tau: f64,
    pub epsilon: f64,
    /// Evaluation softmax temperature over Q-values.
    pub temperature: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            width: 64,
            gamma: 0.95,
            lr: 1e-3,
            tau: 0.01,
            epsilon: 0.1,
            temperature: 0.1,
            batch: 32,
            seed: 0,
        }
    }
}

/// Input row for one candidate: request features, kind one-hot, action features.
pub fn dqn_input(request: &[f64], cand: &Candidate) -> Vec<f64> {
    let mut x = Vec::with_capacity(DQN_INPUTS);
    x.extend_from_slice(request);
    let mut onehot = [0.0; ActionKind::COUNT];
    onehot[cand.kind().index()] = 1.0;
    x.extend_from_slice(&onehot);
    x.extend_from_slice(&cand.features);
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnTransition {
    pub input: Vec<f64>,
    pub reward: f64,
    /// Inputs of every candidate at the next decision; `None` when terminal.
    pub next: Option<Vec<Vec<f64>>>,
}

/// Q-network over flat request and action features, with no graph input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnLite {
    pub config: DqnConfig,
    pub mlp: Mlp,
    pub theta: Vec<f64>,
    pub target: Vec<f64>,
    pub updates: u64,
}

impl DqnLite {
    pub fn new(config: DqnConfig) -> Result<Self> {
        if config.width == 0 {
            return Err(Error::InvalidParam("dqn width must be positive".into()));
        }
        let mut len = 0;
        let mlp = Mlp::alloc(&mut len, DQN_INPUTS, config.width, 1);
        let mut r = rng::stream(config.seed, "dqn-init");
        let theta = init_blocks(&mlp.layers(), len, &mut r);
        Ok(Self {
            config,
            mlp,
            target: theta.clone(),
            theta,
            updates: 0,
        })
    }

    pub fn zeros(config: DqnConfig) -> Result<Self> {
        let mut q = Self::new(config)?;
        q.theta.iter_mut().for_each(|x| *x = 0.0);
        q.target.iter_mut().for_each(|x| *x = 0.0);
        Ok(q)
    }

    fn value(&self, params: &[f64], x: &[f64]) -> f64 {
        self.mlp.forward(params, x.to_vec()).y[0]
    }

    pub fn q_values(&self, request: &[f64], cands: &[Candidate]) -> Vec<f64> {
        cands
            .iter()
            .map(|c| self.value(&self.theta, &dqn_input(request, c)))
            .collect()
    }

    /// `softmax(Q/T)` over the candidates.
    pub fn policy(&self, request: &[f64], cands: &[Candidate]) -> Result<PolicyDistribution<usize>> {
        if cands.is_empty() {
            return Err(Error::NoFeasibleAction);
        }
        let logits: Vec<f64> = self
            .q_values(request, cands)
            .iter()
            .map(|q| q / self.config.temperature)
            .collect();
        PolicyDistribution::new((0..cands.len()).collect(), softmax(&logits)?)
    }

    /// ε-greedy choice used while collecting experience.
    pub fn explore<R: Rng + ?Sized>(&self, request: &[f64], cands: &[Candidate], r: &mut R) -> Result<usize> {
        if cands.is_empty() {
            return Err(Error::NoFeasibleAction);
        }
        if r.random::<f64>() < self.config.epsilon {
            return Ok(r.random_range(0..cands.len()));
        }
        let q = self.q_values(request, cands);
        Ok((0..q.len()).max_by(|&a, &b| q[a].total_cmp(&q[b]).then(b.cmp(&a))).unwrap_or(0))
    }

    /// Target `r + γ·max Q_target(next)`.
    pub fn target_value(&self, t: &DqnTransition) -> f64 {
        let tail = match &t.next {
            Some(next) if !next.is_empty() => next
                .iter()
                .map(|x| self.value(&self.target, x))
                .fold(f64::NEG_INFINITY, f64::max),
            _ => 0.0,
        };
        t.reward + self.config.gamma * tail
    }

    /// Mean squared TD error over `batch` and its gradient.
    pub fn td_gradient(&self, batch: &[&DqnTransition]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.theta.len()];
        let mut loss = 0.0;
        let n = batch.len().max(1) as f64;
        for t in batch {
            let y = self.target_value(t);
            let cache = self.mlp.forward(&self.theta, t.input.clone());
            let err = cache.y[0] - y;
            loss += err * err / n;
            self.mlp.backward(&self.theta, &cache, &[2.0 * err / n], &mut grad);
        }
        (loss, grad)
    }

    /// Minibatch TD updates with Adam and a soft target update after each.
    /// Returns the loss curve.
    pub fn train(&mut self, replay: &[DqnTransition], steps: usize) -> Result<Vec<f64>> {
        if replay.is_empty() {
            return Err(Error::EmptyRollouts);
        }
        let mut r = rng::indexed(self.config.seed, "dqn-train", self.updates);
        let mut opt = Adam::new(self.theta.len(), self.config.lr);
        let mut curve = Vec::with_capacity(steps);
        for _ in 0..steps {
            let batch: Vec<&DqnTransition> = (0..self.config.batch.max(1))
                .map(|_| &replay[r.random_range(0..replay.len())])
                .collect();
            let (loss, grad) = self.td_gradient(&batch);
            opt.step(&mut self.theta, &grad);
            soft_update(&mut self.target, &self.theta, self.config.tau);
            self.updates += 1;
            curve.push(loss);
        }
        Ok(curve)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge(u: NodeId, v: NodeId, link: LinkId, f: f64) -> WeightedEdge {
        WeightedEdge {
            u,
            v,
            link,
            weight: neg_log(f),
        }
    }

    #[test]
    fn two_hop_beats_weak_direct() {
        let edges = [edge(0, 2, 0, 0.7), edge(0, 1, 1, 0.9), edge(1, 2, 2, 0.9)];
        let p = dijkstra(3, &edges, 0, 2).unwrap();
        assert_eq!(p.nodes, vec![0, 1, 2]);
        assert_eq!(p.links, vec![1, 2]);
        assert!(((-p.weight).exp() - 0.81).abs() < 1e-12);
    }

    #[test]
    fn disconnected_is_no_path() {
        let edges = [edge(0, 1, 0, 0.9)];
        assert_eq!(dijkstra(3, &edges, 0, 2), Err(Error::NoPath { from: 0, to: 2 }));
    }

    #[test]
    fn path_weight_is_sum_of_edges() {
        let edges = [edge(0, 1, 0, 0.8), edge(1, 2, 1, 0.85), edge(2, 3, 2, 0.95)];
        let p = dijkstra(4, &edges, 0, 3).unwrap();
        let sum: f64 = p.links.iter().map(|&l| edges[l].weight).sum();
        assert!((p.weight - sum).abs() < 1e-15);
    }

    #[test]
    fn zero_dqn_is_uniform() {
        let q = DqnLite::zeros(DqnConfig::default()).unwrap();
        let c = |a| Candidate {
            action: a,
            features: [0.5; ACTION_FEATURES],
        };
        let cands = vec![c(Action::Idle), c(Action::Entangle { link: 0 }), c(Action::Purify { link: 1 })];
        let p = q.policy(&[0.0; REQUEST_FEATURES], &cands).unwrap();
        for x in &p.probs {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn dqn_regresses_terminal_rewards() {
        let mut q = DqnLite::new(DqnConfig {
            width: 8,
            lr: 1e-2,
            batch: 4,
            ..Default::default()
        })
        .unwrap();
        let replay: Vec<DqnTransition> = (0..4)
            .map(|i| {
                let mut input = vec![0.0; DQN_INPUTS];
                input[i] = 1.0;
                DqnTransition {
                    input,
                    reward: i as f64 / 4.0,
                    next: None,
                }
            })
            .collect();
        let curve = q.train(&replay, 600).unwrap();
        assert!(curve.last().unwrap() < &(curve[0] / 10.0));
    }
}
