use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    clamp_fidelity, Action, Link, LinkId, LinkKind, LinkState, MemoryEventKind, NetworkGraph,
    NodeId,
};
use crate::{Error, Result};

/// Advance every live link by `dt` ms of decoherence. Ages grow by one step.
/// Links that fall below the kill threshold, or outlive the storage cutoff,
/// are discarded. Returns the ids of discarded links.
pub fn step_decoherence(g: &mut NetworkGraph, dt: f64) -> Vec<LinkId> {
    debug_assert!(dt > 0.0);
    let kappa = g.physics.diffusion;
    let kill = g.physics.kill_threshold;
    let cutoff = g.physics.storage_cutoff_t2;
    let step_ms = g.physics.dt_ms;
    let mut dead = Vec::new();
    for id in 0..g.links.len() {
        if !g.links[id].state.alive {
            continue;
        }
        let noise = if kappa > 0.0 {
            let z: f64 = g.rng.sample(StandardNormal);
            z
        } else {
            0.0
        };
        let s = &mut g.links[id].state;
        let f = s.fidelity;
        let drift = f * (-s.decay_rate * dt).exp();
        let diffusion = (kappa * f * (1.0 - f) * dt).max(0.0).sqrt() * noise;
        s.fidelity = clamp_fidelity(drift + diffusion);
        s.age += 1;
        if s.fidelity < kill || s.age as f64 * step_ms > cutoff * s.t2_ms {
            dead.push(id);
        }
    }
    for &id in &dead {
        g.kill_link(id, MemoryEventKind::Release);
    }
    g.time += 1;
    dead
}

fn live(g: &NetworkGraph, id: LinkId) -> Result<&Link> {
    let link = g.link(id)?;
    if link.state.alive {
        Ok(link)
    } else {
        Err(Error::DeadLink(id))
    }
}

/// Purify `link` by spending one of its auxiliary pairs. The pair is consumed
/// whether or not the protocol succeeds.
pub fn apply_purification(g: &mut NetworkGraph, link: LinkId) -> Result<bool> {
    let l = live(g, link)?;
    if l.aux_pairs == 0 {
        return Err(Error::NoAuxiliaryPair(link));
    }
    let (u, v) = l.endpoints;
    g.links[link].aux_pairs -= 1;
    g.drop_halves(u, link, 1, MemoryEventKind::Purify);
    g.drop_halves(v, link, 1, MemoryEventKind::Purify);
    let p = g.physics.purification_success;
    let success = g.rng.random::<f64>() < p;
    if success {
        let s = &mut g.links[link].state;
        s.fidelity = clamp_fidelity(s.fidelity + s.purification_gain * (1.0 - s.fidelity));
    }
    Ok(success)
}

/// Fidelity of the pair produced by swapping two Werner pairs.
pub fn swap_fidelity(f1: f64, f2: f64) -> f64 {
    f1 * f2 + (1.0 - f1) * (1.0 - f2) / 3.0
}

/// Swap `left` and `right` at their shared node `via`, producing a virtual
/// link between the outer endpoints. Returns the id of the new link.
pub fn apply_swap(g: &mut NetworkGraph, left: LinkId, right: LinkId, via: NodeId) -> Result<LinkId> {
    let l = live(g, left)?;
    let r = live(g, right)?;
    let not_adjacent = Error::NotAdjacent { left, right, via };
    let (Some(a), Some(b)) = (l.other(via), r.other(via)) else {
        return Err(not_adjacent);
    };
    if left == right || a == b {
        return Err(not_adjacent);
    }
    if l.aux_pairs > 0 {
        return Err(Error::PendingAuxiliary(left));
    }
    if r.aux_pairs > 0 {
        return Err(Error::PendingAuxiliary(right));
    }
    let state = LinkState {
        fidelity: clamp_fidelity(swap_fidelity(l.state.fidelity, r.state.fidelity)),
        decay_rate: l.state.decay_rate.max(r.state.decay_rate),
        purification_gain: l.state.purification_gain.min(r.state.purification_gain),
        t2_ms: l.state.t2_ms.min(r.state.t2_ms),
        age: l.state.age.max(r.state.age),
        alive: true,
    };

    // Reuse a dead virtual slot so long episodes don't grow the link table.
    let id = g
        .links
        .iter()
        .position(|x| x.kind == LinkKind::Virtual && !x.state.alive)
        .unwrap_or(g.links.len());
    let endpoints = (a.min(b), a.max(b));
    let new = Link {
        id,
        endpoints,
        kind: LinkKind::Virtual,
        base_fidelity: state.fidelity,
        state,
        aux_pairs: 0,
    };
    if id == g.links.len() {
        g.links.push(new);
    } else {
        g.links[id] = new;
    }

    // The outer halves change owner without moving; the middle ones are measured.
    for (node, old) in [(a, left), (b, right)] {
        if let Some(slot) = g.nodes[node].stored_pairs.iter_mut().find(|x| **x == old) {
            *slot = id;
        }
    }
    g.drop_halves(via, left, 1, MemoryEventKind::Swap);
    g.drop_halves(via, right, 1, MemoryEventKind::Swap);
    for old in [left, right] {
        let link = &mut g.links[old];
        link.state.alive = false;
        link.state.age = 0;
        if link.kind == LinkKind::Virtual {
            let (x, y) = link.endpoints;
            g.adjacency[x].retain(|&m| m != old);
            g.adjacency[y].retain(|&m| m != old);
        }
    }
    g.adjacency[a].push(id);
    g.adjacency[b].push(id);
    Ok(id)
}

/// Attempt pair generation on a physical link. A dead link gets a fresh pair
/// at its base fidelity; a live one gains an auxiliary pair. Memory is taken
/// only on success.
pub fn entangle(g: &mut NetworkGraph, link: LinkId) -> Result<bool> {
    let l = g.link(link)?;
    if l.kind != LinkKind::Physical {
        return Err(Error::InvalidParam(format!(
            "link {link} is virtual and cannot be generated directly"
        )));
    }
    let (u, v) = l.endpoints;
    for node in [u, v] {
        if g.nodes[node].free() == 0 {
            return Err(Error::MemoryFull(node));
        }
    }
    let p = g.physics.entangle_success;
    if g.rng.random::<f64>() >= p {
        return Ok(false);
    }
    let link_ref = &mut g.links[link];
    if link_ref.state.alive {
        link_ref.aux_pairs += 1;
    } else {
        link_ref.state.alive = true;
        link_ref.state.fidelity = link_ref.base_fidelity;
        link_ref.state.age = 0;
        link_ref.aux_pairs = 0;
    }
    g.store_half(u, link);
    g.store_half(v, link);
    Ok(true)
}

/// Discard a live link and any auxiliary pairs it holds.
pub fn release(g: &mut NetworkGraph, link: LinkId) -> Result<()> {
    live(g, link)?;
    g.kill_link(link, MemoryEventKind::Release);
    Ok(())
}

/// Hand a live link to the application. Returns its fidelity at delivery.
pub fn deliver(g: &mut NetworkGraph, link: LinkId) -> Result<f64> {
    let f = live(g, link)?.state.fidelity;
    g.kill_link(link, MemoryEventKind::Delivery);
    Ok(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSelection {
    None,
    /// Each live link is hit independently with `attack_prob`.
    Random,
    /// The single live link with the highest fidelity.
    WorstLink,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdversaryConfig {
    pub epsilon_adv: f64,
    pub delta_adv_bound: f64,
    pub target: TargetSelection,
    pub attack_prob: f64,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self {
            epsilon_adv: 0.0,
            delta_adv_bound: 0.0,
            target: TargetSelection::None,
            attack_prob: 1.0,
        }
    }
}

impl AdversaryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon_adv) {
            return Err(Error::InvalidParam(format!(
                "epsilon_adv must lie in [0, 1), got {}",
                self.epsilon_adv
            )));
        }
        if !(self.delta_adv_bound >= 0.0) {
            return Err(Error::InvalidParam("delta_adv_bound must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.attack_prob) {
            return Err(Error::InvalidParam("attack_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.target != TargetSelection::None
            && (self.epsilon_adv > 0.0 || self.delta_adv_bound >= 1.0)
    }
}

/// Damage targeted links multiplicatively and jam memory at their endpoints.
/// Memory perturbations are integers in `[-bound, bound]`, realised as
/// blocked qubits and clamped so occupancy stays within capacity.
/// Returns the targeted links.
pub fn apply_adversary(g: &mut NetworkGraph, cfg: &AdversaryConfig) -> Result<Vec<LinkId>> {
    cfg.validate()?;
    let targets: Vec<LinkId> = match cfg.target {
        TargetSelection::None => Vec::new(),
        TargetSelection::Random => {
            let live: Vec<LinkId> = g.live_links().map(|l| l.id).collect();
            live.into_iter()
                .filter(|_| g.rng.random::<f64>() < cfg.attack_prob)
                .collect()
        }
        TargetSelection::WorstLink => g
            .live_links()
            .fold(None::<&Link>, |best, l| match best {
                Some(b) if b.state.fidelity >= l.state.fidelity => Some(b),
                _ => Some(l),
            })
            .map(|l| vec![l.id])
            .unwrap_or_default(),
    };
    for &id in &targets {
        let s = &mut g.links[id].state;
        s.fidelity = clamp_fidelity(s.fidelity * (1.0 - cfg.epsilon_adv));
    }
    let bound = cfg.delta_adv_bound.floor() as i64;
    if bound > 0 {
        let mut nodes: Vec<NodeId> = targets
            .iter()
            .flat_map(|&id| {
                let (u, v) = g.links[id].endpoints;
                [u, v]
            })
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        for node in nodes {
            let delta = g.rng.random_range(-bound..=bound);
            let n = &mut g.nodes[node];
            let applied = if delta >= 0 {
                delta.min(i64::from(n.free()))
            } else {
                -((-delta).min(i64::from(n.blocked)))
            };
            n.blocked = (i64::from(n.blocked) + applied) as u32;
            g.log(MemoryEventKind::Adversary, node, applied);
        }
    }
    Ok(targets)
}

/// What happened when an action was executed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub action: Action,
    /// Heralded success of a probabilistic operation; always true for
    /// deterministic ones.
    pub success: bool,
    pub created: Option<LinkId>,
    pub consumed: Vec<LinkId>,
    /// Endpoints and fidelity of a delivered pair. Only the harness reads the
    /// fidelity; policies see the delivery event.
    pub delivered: Option<((NodeId, NodeId), f64)>,
}

impl ActionOutcome {
    fn new(action: Action) -> Self {
        Self {
            action,
            success: true,
            created: None,
            consumed: Vec::new(),
            delivered: None,
        }
    }

    /// Links still alive after the action that it acted on.
    pub fn touched(&self, g: &NetworkGraph) -> Vec<LinkId> {
        let mut out: Vec<LinkId> = self
            .action
            .links()
            .into_iter()
            .chain(self.created)
            .filter(|&l| !self.consumed.contains(&l) && g.links.get(l).is_some_and(|x| x.state.alive))
            .collect();
        out.dedup();
        out
    }
}

pub fn apply_action(g: &mut NetworkGraph, action: Action) -> Result<ActionOutcome> {
    let mut out = ActionOutcome::new(action);
    match action {
        Action::Idle => {}
        Action::Entangle { link } => out.success = entangle(g, link)?,
        Action::Purify { link } => out.success = apply_purification(g, link)?,
        Action::Swap { left, right, via } => {
            out.created = Some(apply_swap(g, left, right, via)?);
            out.consumed = vec![left, right];
        }
        Action::Release { link } => {
            release(g, link)?;
            out.consumed = vec![link];
        }
        Action::Deliver { link } => {
            let ends = g.link(link)?.endpoints;
            let f = deliver(g, link)?;
            out.consumed = vec![link];
            out.delivered = Some((ends, f));
        }
    }
    Ok(out)
}
