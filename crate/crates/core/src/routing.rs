//! Request-scoped action sets and the features every policy scores them by.
//!
//! A request (s, d) is served by growing a chain out of `s`: any live link
//! (s, x) is a chain link with frontier `x`. Swapping (s, x) with a live
//! (x, y) that is closer to `d` extends the chain; next-hop links are
//! generated and purified before they are swapped in; a live (s, d) link can
//! be delivered.

use serde::{Deserialize, Serialize};

use crate::belief::{mean, prob_at_least, swap_pushforward, variance, BeliefState, Discretization};
use crate::netmodel::{swap_fidelity, Action, ActionKind, LinkId, LinkKind, NodeId, ObservableView, Request};

pub const ACTION_FEATURES: usize = 8;
pub const REQUEST_FEATURES: usize = 8;

pub const ACTION_FEATURE_NAMES: [&str; ACTION_FEATURES] = [
    "expected_fidelity",
    "progress",
    "p_meets_min",
    "p_success",
    "free_memory",
    "age_over_t2",
    "slack",
    "remaining_hops",
];

pub const REQUEST_FEATURE_NAMES: [&str; REQUEST_FEATURES] = [
    "remaining_hops",
    "chain_fidelity",
    "chain_std",
    "chain_p_meets_min",
    "slack",
    "next_link_fidelity",
    "aux_ready",
    "frontier_occupancy",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoutingConfig {
    pub allow_release: bool,
    /// Cap on swap candidates per request; the best by expected fidelity are kept.
    pub max_swaps: usize,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self {
            allow_release: true,
            max_swaps: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub action: Action,
    pub features: [f64; ACTION_FEATURES],
}

impl Candidate {
    pub fn kind(&self) -> ActionKind {
        self.action.kind()
    }

    /// Scalar used to rank actions of the same kind.
    pub fn heuristic(&self) -> f64 {
        let z = &self.features;
        z[0] * z[3] + z[1] + z[2]
    }

    /// The node pair a pairwise scorer reads for this action.
    pub fn endpoints(&self, view: &ObservableView<'_>, req: &Request) -> (NodeId, NodeId) {
        self.action
            .endpoints(view)
            .unwrap_or((req.source, req.destination))
    }
}

fn hops(view: &ObservableView<'_>, a: NodeId, b: NodeId) -> f64 {
    f64::from(view.hop_distance(a, b))
}

/// Live links out of the request's source, with their far endpoint.
pub fn chain_links(view: &ObservableView<'_>, req: &Request) -> Vec<(LinkId, NodeId)> {
    let s = req.source;
    view.incident(s)
        .iter()
        .copied()
        .filter(|&l| view.alive(l))
        .map(|l| {
            let (u, v) = view.endpoints(l);
            (l, if u == s { v } else { u })
        })
        .collect()
}

/// Chain link closest to the destination, ties to higher expected fidelity.
pub fn best_chain(view: &ObservableView<'_>, b: &BeliefState, req: &Request) -> Option<(LinkId, NodeId)> {
    let d = req.destination;
    chain_links(view, req).into_iter().min_by(|&(l1, x1), &(l2, x2)| {
        view.hop_distance(x1, d)
            .cmp(&view.hop_distance(x2, d))
            .then(mean(&b.grid, &b.links[l2]).total_cmp(&mean(&b.grid, &b.links[l1])))
            .then(l1.cmp(&l2))
    })
}

fn slack(req: &Request, step: u64) -> f64 {
    let life = req.deadline.saturating_sub(req.issued_at).max(1) as f64;
    (req.deadline.saturating_sub(step) as f64 / life).clamp(0.0, 1.0)
}

fn free_frac(view: &ObservableView<'_>, v: NodeId) -> f64 {
    let c = view.capacity(v);
    if c == 0 {
        0.0
    } else {
        f64::from(view.free(v)) / f64::from(c)
    }
}

fn age_ratio(view: &ObservableView<'_>, l: LinkId) -> f64 {
    let ms = view.age(l) as f64 * view.physics().dt_ms;
    (ms / view.t2_ms(l).max(1e-9)).min(3.0)
}

/// Summary of where a request stands, used by the aggregated planner.
pub fn request_features(
    view: &ObservableView<'_>,
    b: &BeliefState,
    req: &Request,
    step: u64,
) -> [f64; REQUEST_FEATURES] {
    let (s, d) = (req.source, req.destination);
    let total = hops(view, s, d).max(1.0);
    let mut x = [0.0; REQUEST_FEATURES];
    let frontier = match best_chain(view, b, req) {
        Some((l, f)) => {
            let row = &b.links[l];
            x[0] = hops(view, f, d) / total;
            x[1] = mean(&b.grid, row);
            x[2] = variance(&b.grid, row).sqrt() / 0.2;
            x[3] = prob_at_least(&b.grid, row, req.min_fidelity);
            if view.kind(l) == LinkKind::Physical && view.aux_pairs(l) > 0 {
                x[6] = 1.0;
            }
            f
        }
        None => {
            x[0] = 1.0;
            s
        }
    };
    x[4] = slack(req, step);
    for &(y, m) in view.physical_neighbors(frontier) {
        if view.hop_distance(y, d) < view.hop_distance(frontier, d) && view.alive(m) {
            x[5] = x[5].max(mean(&b.grid, &b.links[m]));
            if view.aux_pairs(m) > 0 {
                x[6] = 1.0;
            }
        }
    }
    let cap = view.capacity(frontier);
    x[7] = if cap == 0 {
        1.0
    } else {
        f64::from(view.occupancy(frontier)) / f64::from(cap)
    };
    x
}

struct Builder<'a, 'b> {
    view: &'a ObservableView<'b>,
    b: &'a BeliefState,
    req: &'a Request,
    step: u64,
    total: f64,
    out: Vec<Candidate>,
}

impl Builder<'_, '_> {
    fn p_at_least(&self, row: &[f64]) -> f64 {
        prob_at_least(&self.b.grid, row, self.req.min_fidelity)
    }

    fn push(&mut self, action: Action, f: f64, progress: f64, p_ok: f64, p_succ: f64, nodes: &[NodeId], links: &[LinkId], after: NodeId) {
        if self.out.iter().any(|c| c.action == action) {
            return;
        }
        let free = nodes
            .iter()
            .map(|&v| free_frac(self.view, v))
            .fold(1.0, f64::min);
        let age = links
            .iter()
            .map(|&l| age_ratio(self.view, l))
            .fold(0.0, f64::max);
        let rem = hops(self.view, after, self.req.destination) / self.total;
        self.out.push(Candidate {
            action,
            features: [f, progress, p_ok, p_succ, free, age, slack(self.req, self.step), rem],
        });
    }

    fn has_room(&self, u: NodeId, v: NodeId) -> bool {
        self.view.free(u) > 0 && self.view.free(v) > 0
    }

    /// Generation or purification on a physical link `l` = (x, y).
    fn link_work(&mut self, l: LinkId, x: NodeId, y: NodeId, progress: f64) {
        let view = self.view;
        let phys = view.physics();
        let row = &self.b.links[l];
        let e = mean(&self.b.grid, row);
        if view.alive(l) && view.aux_pairs(l) > 0 {
            let eta = view.purification_gain(l);
            let cut = if eta < 1.0 {
                (self.req.min_fidelity - eta) / (1.0 - eta)
            } else {
                0.0
            };
            let p_ok = prob_at_least(&self.b.grid, row, cut);
            self.push(
                Action::Purify { link: l },
                e + eta * (1.0 - e),
                0.0,
                p_ok,
                phys.purification_success,
                &[x, y],
                &[l],
                x,
            );
        } else if self.has_room(x, y) {
            let p_ok = self.p_at_least(row);
            let prog = if view.alive(l) { 0.0 } else { progress };
            self.push(Action::Entangle { link: l }, e, prog, p_ok, phys.entangle_success, &[x, y], &[l], x);
        }
    }
}

/// Feasible actions for `req`, each with its feature vector. Always contains
/// `Idle`, listed first.
pub fn candidates(
    view: &ObservableView<'_>,
    b: &BeliefState,
    req: &Request,
    step: u64,
    cfg: &RoutingConfig,
) -> Vec<Candidate> {
    let (s, d) = (req.source, req.destination);
    let reachable = view.hop_distance(s, d) != u32::MAX;
    let total = if reachable { hops(view, s, d).max(1.0) } else { 1.0 };
    let mut bld = Builder {
        view,
        b,
        req,
        step,
        total,
        out: Vec::new(),
    };
    let idle_f = best_chain(view, b, req).map_or(0.0, |(l, _)| mean(&b.grid, &b.links[l]));
    let idle_after = best_chain(view, b, req).map_or(s, |(_, x)| x);
    bld.push(Action::Idle, idle_f, 0.0, 0.0, 1.0, &[], &[], idle_after);
    if !reachable {
        return bld.out;
    }

    let mut swaps: Vec<Candidate> = Vec::new();
    let chains = chain_links(view, req);
    for &(l, x) in &chains {
        let row = &b.links[l];
        let e = mean(&b.grid, row);
        if x == d {
            let p_ok = bld.p_at_least(row);
            bld.push(Action::Deliver { link: l }, e, 1.0, p_ok, 1.0, &[s, d], &[l], d);
            continue;
        }
        if cfg.allow_release {
            let p_ok = bld.p_at_least(row);
            bld.push(Action::Release { link: l }, e, 0.0, p_ok, 1.0, &[s, x], &[l], s);
        }
        if view.kind(l) == LinkKind::Physical {
            bld.link_work(l, s, x, 0.0);
        }
        if view.aux_pairs(l) > 0 {
            continue;
        }
        let hx = view.hop_distance(x, d);
        for &m in view.incident(x) {
            if m == l || !view.alive(m) || view.aux_pairs(m) > 0 {
                continue;
            }
            let (u, v) = view.endpoints(m);
            let y = if u == x { v } else { u };
            if y == s || view.hop_distance(y, d) >= hx {
                continue;
            }
            let right = &b.links[m];
            let pushed = swap_pushforward(&b.grid, row, right, Discretization::WithinBin);
            let f = swap_fidelity(e, mean(&b.grid, right));
            let progress = f64::from(hx - view.hop_distance(y, d)) / total;
            let before = bld.out.len();
            bld.push(
                Action::Swap { left: l, right: m, via: x },
                f,
                progress,
                prob_at_least(&b.grid, &pushed, req.min_fidelity),
                1.0,
                &[s, y],
                &[l, m],
                y,
            );
            if bld.out.len() > before {
                swaps.push(bld.out.pop().expect("just pushed"));
            }
        }
    }
    swaps.sort_by(|a, c| c.features[0].total_cmp(&a.features[0]).then(a.action.cmp(&c.action)));
    swaps.truncate(cfg.max_swaps);

    // Next-hop work from the source and from every chain frontier.
    let mut frontiers: Vec<NodeId> = std::iter::once(s).chain(chains.iter().map(|&(_, x)| x)).collect();
    frontiers.sort_unstable();
    frontiers.dedup();
    for x in frontiers {
        if x == d {
            continue;
        }
        let hx = view.hop_distance(x, d);
        for &(y, m) in view.physical_neighbors(x) {
            let hy = view.hop_distance(y, d);
            if hy >= hx || (x == s && view.alive(m)) {
                // Live links at the source were handled as chain links.
                continue;
            }
            bld.link_work(m, x, y, f64::from(hx - hy) / total);
        }
    }
    let mut out = bld.out;
    out.extend(swaps);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{BeliefFilter, FilterConfig};
    use crate::netmodel::{apply_action, build_network, PhysicsParams, Topology, TopologyParams};

    fn request(s: NodeId, d: NodeId) -> Request {
        Request {
            id: 0,
            source: s,
            destination: d,
            min_fidelity: 0.6,
            deadline: 100,
            issued_at: 0,
        }
    }

    fn line(n: usize) -> crate::netmodel::NetworkGraph {
        let mut g = build_network(Topology::Line, n, &TopologyParams::default(), &PhysicsParams::default(), 3)
            .unwrap();
        for l in 0..g.links.len() {
            if g.links[l].state.alive {
                apply_action(&mut g, Action::Release { link: l }).unwrap();
            }
        }
        g
    }

    #[test]
    fn empty_line_offers_first_hop_only() {
        let g = line(4);
        let f = BeliefFilter::new(FilterConfig::default()).unwrap();
        let b = f.init(&g.observable());
        let c = candidates(&g.observable(), &b, &request(0, 3), 0, &RoutingConfig::default());
        let acts: Vec<Action> = c.iter().map(|c| c.action).collect();
        assert_eq!(acts, vec![Action::Idle, Action::Entangle { link: 0 }]);
        assert_eq!(c[1].features[1], 1.0 / 3.0);
    }

    #[test]
    fn chain_grows_by_swap_and_delivers() {
        let mut g = line(3);
        let mut f = BeliefFilter::new(FilterConfig::default()).unwrap();
        while !g.links[0].state.alive {
            let _ = apply_action(&mut g, Action::Entangle { link: 0 });
        }
        while !g.links[1].state.alive {
            let _ = apply_action(&mut g, Action::Entangle { link: 1 });
        }
        let mut b = f.init(&g.observable());
        let req = request(0, 2);
        let c = candidates(&g.observable(), &b, &req, 0, &RoutingConfig::default());
        let swap = Action::Swap { left: 0, right: 1, via: 1 };
        assert!(c.iter().any(|c| c.action == swap));
        let out = apply_action(&mut g, swap).unwrap();
        let new = out.created.unwrap();
        f.apply_outcome(&mut b, &out, &g.observable()).unwrap();
        let c = candidates(&g.observable(), &b, &req, 0, &RoutingConfig::default());
        assert!(c.iter().any(|c| c.action == Action::Deliver { link: new }));
        let x = request_features(&g.observable(), &b, &req, 0);
        assert_eq!(x[0], 0.0);
    }

    #[test]
    fn features_are_bounded() {
        let g = build_network(
            Topology::RandomGeometric,
            12,
            &TopologyParams::default(),
            &PhysicsParams::default(),
            5,
        )
        .unwrap();
        let f = BeliefFilter::new(FilterConfig::default()).unwrap();
        let b = f.init(&g.observable());
        for d in 1..12 {
            let req = request(0, d);
            for c in candidates(&g.observable(), &b, &req, 10, &RoutingConfig::default()) {
                assert!(c.features.iter().all(|z| z.is_finite() && (0.0..=3.0).contains(z)));
            }
            let x = request_features(&g.observable(), &b, &req, 10);
            assert!(x.iter().all(|z| z.is_finite() && (0.0..=5.0).contains(z)));
        }
    }
}
