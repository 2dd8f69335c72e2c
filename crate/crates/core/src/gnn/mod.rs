//! Message-passing policy network with hand-written gradients.

mod net;
mod train;

pub use net::{
    backward, backward_into, critic_backward, critic_values, embed, forward, score, ActionQuery,
    Aggregation, Dense, Embedding, GnnConfig, GnnParams, GraphInput, Layout, Mlp, EDGE_FEATURES,
    NODE_FEATURES,
};
pub(crate) use net::init_blocks;
pub use train::{
    actor_critic_gradients, actor_critic_step, gradient_variance, imitation_gradient, imitation_step, reinforce_gradient,
    soft_update, imitation_regret, Adam, CriticStep, Decision, RegretConfig, RegretCurve, ReplayItem, Trajectory,
    VarianceReport,
};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::belief::{mean, variance, BeliefState};
use crate::netmodel::{LinkKind, ObservableView, Request};
use crate::policy::{softmax, PolicyDistribution};
use crate::routing::Candidate;
use crate::{Error, Result};

/// Node and edge features of the current belief. Physical links appear
/// whether alive or not; virtual links only while alive.
pub fn graph_input(view: &ObservableView<'_>, b: &BeliefState) -> GraphInput {
    let n = view.node_count();
    let mut edges = Vec::new();
    let mut edge_features = Vec::new();
    let mut stats = vec![[0.0f64; 6]; n];
    for l in 0..view.link_count() {
        let alive = view.alive(l);
        let virt = view.kind(l) == LinkKind::Virtual;
        if virt && !alive {
            continue;
        }
        let (u, v) = view.endpoints(l);
        let row = &b.links[l];
        let e = mean(&b.grid, row);
        let var = variance(&b.grid, row);
        let aux = f64::from(u8::from(view.aux_pairs(l) > 0));
        let f = [
            e,
            var.sqrt() / 0.2,
            e.max(1e-6).ln(),
            view.decay_rate(l) / 0.1,
            view.purification_gain(l),
            view.t2_ms(l) / 10.0,
            f64::from(u8::from(alive)),
            aux,
            f64::from(u8::from(virt)),
        ];
        for (a, c) in [(u, v), (v, u)] {
            edges.push((a, c));
            edge_features.extend_from_slice(&f);
        }
        if alive {
            for x in [u, v] {
                let s = &mut stats[x];
                s[0] += e;
                s[1] = s[1].max(e);
                s[2] += 1.0;
                s[3] += var;
                s[4] += aux;
            }
        }
    }
    let mut node_features = Vec::with_capacity(n * NODE_FEATURES);
    for (v, s) in stats.iter().enumerate() {
        let cap = f64::from(view.capacity(v)).max(1.0);
        let deg = view.physical_neighbors(v).len() as f64;
        let live = s[2].max(1.0);
        node_features.extend_from_slice(&[
            f64::from(view.occupancy(v)) / cap,
            (deg / 8.0).min(2.0),
            s[0] / live,
            s[1],
            s[2] / deg.max(1.0),
            s[3] / live / 0.04,
            s[4] / live,
            1.0,
        ]);
    }
    GraphInput {
        nodes: n,
        node_features,
        edges,
        edge_features,
    }
}

pub fn queries(view: &ObservableView<'_>, req: &Request, cands: &[Candidate]) -> Vec<ActionQuery> {
    cands
        .iter()
        .map(|c| {
            let (u, v) = c.endpoints(view, req);
            ActionQuery {
                u,
                v,
                kind: c.kind().index(),
                features: c.features,
            }
        })
        .collect()
}

/// Softmax over logits, indexed by candidate position.
pub fn policy_distribution(logits: &[f64]) -> Result<PolicyDistribution<usize>> {
    PolicyDistribution::new((0..logits.len()).collect(), softmax(logits)?)
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// (name, rows, cols) per block, in storage order.
    pub blocks: Vec<(String, usize, usize)>,
    pub params: GnnParams,
}

pub fn save_checkpoint(p: &GnnParams, path: &Path) -> Result<()> {
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        blocks: p.layout.describe(),
        params: p.clone(),
    };
    std::fs::write(path, serde_json::to_string(&ck)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<GnnParams> {
    let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {} is not {CHECKPOINT_VERSION}",
            ck.version
        )));
    }
    ck.params.check_shapes()?;
    Ok(ck.params)
}
