//! Cluster-aggregated MDP planning over beliefs.

mod routing;
mod tiny;

pub use routing::{kind_policy, PlannerConfig, RoutingPlanner};

pub use tiny::{
    check_aggregation_bound, check_estimation_propagation, correlation_probe, AggregationRow,
    BeliefGridMdp, CorrelationProbe, PropagationRow, TinyPomdp,
};

use serde::{Deserialize, Serialize};

use crate::aggregate::ClusterSet;
use crate::policy::PolicyDistribution;
use crate::{Error, Result};

pub const MAX_VI_ITERATIONS: usize = 100_000;

/// One observed step in cluster space. `next == None` marks termination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub features: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedMdp {
    /// Cluster states, plus one absorbing terminal state when `terminal` is set.
    pub states: usize,
    pub actions: usize,
    /// `p[(q·A + a)·S + q′]`.
    pub p: Vec<f64>,
    /// `r[q·A + a]`.
    pub r: Vec<f64>,
    pub visited: Vec<bool>,
    pub gamma: f64,
    pub terminal: Option<usize>,
}

impl AggregatedMdp {
    pub fn new(states: usize, actions: usize, gamma: f64) -> Self {
        Self {
            states,
            actions,
            p: vec![0.0; states * actions * states],
            r: vec![0.0; states * actions],
            visited: vec![false; states * actions],
            gamma,
            terminal: None,
        }
    }

    pub fn prob(&self, q: usize, a: usize, q2: usize) -> f64 {
        self.p[(q * self.actions + a) * self.states + q2]
    }

    pub fn row(&self, q: usize, a: usize) -> &[f64] {
        let i = (q * self.actions + a) * self.states;
        &self.p[i..i + self.states]
    }

    pub fn reward(&self, q: usize, a: usize) -> f64 {
        self.r[q * self.actions + a]
    }

    pub fn max_row_error(&self) -> f64 {
        (0..self.states)
            .flat_map(|q| (0..self.actions).map(move |a| (q, a)))
            .map(|(q, a)| (self.row(q, a).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Count cluster-to-cluster transitions with add-`smoothing` pseudo-counts on
/// every successor of a visited (q, a). Unvisited pairs self-loop with reward 0.
pub fn build_cluster_mdp(
    clusters: &ClusterSet,
    rollouts: &[Transition],
    actions: usize,
    gamma: f64,
    smoothing: f64,
) -> Result<AggregatedMdp> {
    if rollouts.is_empty() {
        return Err(Error::EmptyRollouts);
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParam(format!("discount must lie in (0, 1), got {gamma}")));
    }
    let k = clusters.k();
    let has_terminal = rollouts.iter().any(|t| t.next.is_none());
    let states = k + usize::from(has_terminal);
    let mut counts = vec![0.0; states * actions * states];
    let mut visits = vec![0usize; states * actions];
    let mut rewards = vec![0.0; states * actions];
    for t in rollouts {
        if t.action >= actions {
            return Err(Error::InvalidParam(format!("action {} out of range", t.action)));
        }
        let q = clusters.assign(&t.features)?;
        let q2 = match &t.next {
            Some(f) => clusters.assign(f)?,
            None => k,
        };
        let i = q * actions + t.action;
        counts[i * states + q2] += 1.0;
        visits[i] += 1;
        rewards[i] += t.reward;
    }
    let mut m = AggregatedMdp::new(states, actions, gamma);
    m.terminal = has_terminal.then_some(k);
    for q in 0..states {
        for a in 0..actions {
            let i = q * actions + a;
            let row = &mut m.p[i * states..(i + 1) * states];
            if Some(q) == m.terminal || visits[i] == 0 {
                row[q] = 1.0;
                continue;
            }
            m.visited[i] = true;
            m.r[i] = rewards[i] / visits[i] as f64;
            let total = visits[i] as f64 + smoothing * states as f64;
            for (q2, x) in row.iter_mut().enumerate() {
                *x = (counts[i * states + q2] + smoothing) / total;
            }
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub v: Vec<f64>,
    /// `q[s·A + a]`.
    pub q: Vec<f64>,
    pub actions: usize,
    pub iterations: usize,
    pub residual: f64,
    /// Sup-norm residual of every sweep.
    pub residuals: Vec<f64>,
}

impl ValueTable {
    pub fn q_row(&self, s: usize) -> &[f64] {
        &self.q[s * self.actions..(s + 1) * self.actions]
    }
}

fn bellman_q(m: &AggregatedMdp, v: &[f64], q: &mut [f64]) {
    for s in 0..m.states {
        for a in 0..m.actions {
            let ev: f64 = m.row(s, a).iter().zip(v).map(|(p, x)| p * x).sum();
            q[s * m.actions + a] = m.reward(s, a) + m.gamma * ev;
        }
    }
}

/// Iterate the Bellman optimality operator until the sup-norm residual
/// drops below `tol`.
pub fn value_iteration(m: &AggregatedMdp, tol: f64) -> Result<ValueTable> {
    if !(m.gamma > 0.0 && m.gamma < 1.0) || !(tol > 0.0) {
        return Err(Error::InvalidParam("need 0 < gamma < 1 and tol > 0".into()));
    }
    let mut v = vec![0.0; m.states];
    let mut q = vec![0.0; m.states * m.actions];
    let mut residuals = Vec::new();
    for it in 1..=MAX_VI_ITERATIONS {
        bellman_q(m, &v, &mut q);
        let mut res: f64 = 0.0;
        for s in 0..m.states {
            let best = q[s * m.actions..(s + 1) * m.actions]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            res = res.max((best - v[s]).abs());
            v[s] = best;
        }
        if res.is_nan() || q.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonConvergence {
                iterations: it,
                residual: res,
            });
        }
        residuals.push(res);
        if res < tol {
            bellman_q(m, &v, &mut q);
            return Ok(ValueTable {
                v,
                q,
                actions: m.actions,
                iterations: it,
                residual: res,
                residuals,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_VI_ITERATIONS,
        residual: residuals.last().copied().unwrap_or(f64::NAN),
    })
}

/// Softmax of a Q row at temperature `t`; every action keeps positive mass.
pub fn softmax_q(q: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidParam("temperature must be > 0".into()));
    }
    let scaled: Vec<f64> = q.iter().map(|x| x / temperature).collect();
    crate::policy::softmax(&scaled)
}

/// Planner policy for a featurized belief: softmax over the Q row of its cluster.
pub fn pomdp_policy(
    v: &ValueTable,
    clusters: &ClusterSet,
    features: &[f64],
    temperature: f64,
) -> Result<PolicyDistribution<usize>> {
    let q = clusters.assign(features)?;
    let probs = softmax_q(v.q_row(q), temperature)?;
    PolicyDistribution::new((0..v.actions).collect(), probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::ClusterSet;

    fn clusters(centers: &[f64]) -> ClusterSet {
        ClusterSet {
            centers: centers.iter().map(|&c| vec![c]).collect(),
            radius: 0.0,
            iterations: 0,
        }
    }

    fn t(f: f64, a: usize, r: f64, next: f64) -> Transition {
        Transition {
            features: vec![f],
            action: a,
            reward: r,
            next: Some(vec![next]),
        }
    }

    #[test]
    fn single_cluster_mdp() {
        let c = clusters(&[0.0]);
        let m = build_cluster_mdp(&c, &[t(0.1, 0, 2.5, 0.2), t(-0.1, 0, 2.5, 0.0)], 1, 0.9, 1.0)
            .unwrap();
        assert_eq!(m.states, 1);
        assert_eq!(m.reward(0, 0), 2.5);
        assert_eq!(m.prob(0, 0, 0), 1.0);
        assert!(matches!(
            build_cluster_mdp(&c, &[], 1, 0.9, 1.0),
            Err(Error::EmptyRollouts)
        ));
    }

    #[test]
    fn two_cluster_cycle_and_smoothing() {
        let c = clusters(&[0.0, 10.0]);
        let roll: Vec<Transition> = (0..50)
            .flat_map(|_| [t(0.0, 0, 0.0, 10.0), t(10.0, 0, 0.0, 0.0)])
            .collect();
        let m = build_cluster_mdp(&c, &roll, 1, 0.9, 0.0).unwrap();
        assert_eq!(m.row(0, 0), &[0.0, 1.0]);
        assert_eq!(m.row(1, 0), &[1.0, 0.0]);

        let c4 = clusters(&[0.0, 1.0, 2.0, 3.0]);
        let m = build_cluster_mdp(&c4, &[t(0.0, 0, 1.0, 2.0)], 1, 0.9, 1.0).unwrap();
        assert!((m.prob(0, 0, 2) - 2.0 / 5.0).abs() < 1e-15);
        assert!((m.prob(0, 0, 1) - 1.0 / 5.0).abs() < 1e-15);
        assert!(!m.visited[1]);
        assert_eq!(m.prob(1, 0, 1), 1.0);
        assert!(m.max_row_error() < 1e-12);
    }

    #[test]
    fn terminal_transitions_get_an_absorbing_state() {
        let c = clusters(&[0.0]);
        let roll = vec![Transition {
            features: vec![0.0],
            action: 0,
            reward: 1.0,
            next: None,
        }];
        let m = build_cluster_mdp(&c, &roll, 1, 0.5, 0.0).unwrap();
        assert_eq!(m.terminal, Some(1));
        let v = value_iteration(&m, 1e-12).unwrap();
        assert!((v.v[0] - 1.0).abs() < 1e-12);
        assert_eq!(v.v[1], 0.0);
    }

    #[test]
    fn geometric_series() {
        let mut m = AggregatedMdp::new(1, 1, 0.9);
        m.p[0] = 1.0;
        m.r[0] = 1.0;
        let v = value_iteration(&m, 1e-10).unwrap();
        assert!((v.v[0] - 10.0).abs() < 1e-8);
        for w in v.residuals.windows(2) {
            assert!(w[1] <= 0.9 * w[0] + 1e-12);
        }
    }

    #[test]
    fn two_state_chain_matches_linear_solve() {
        // State 0 moves to absorbing state 1 (reward 0), state 1 pays 1 forever.
        let g = 0.5;
        let mut m = AggregatedMdp::new(2, 1, g);
        m.p = vec![0.0, 1.0, 0.0, 1.0];
        m.r = vec![0.0, 1.0];
        let v = value_iteration(&m, 1e-13).unwrap();
        let v1 = 1.0 / (1.0 - g);
        let v0 = g * v1;
        assert!((v.v[0] - v0).abs() < 1e-12);
        assert!((v.v[1] - v1).abs() < 1e-12);
    }

    #[test]
    fn nan_rewards_fail() {
        let mut m = AggregatedMdp::new(1, 1, 0.9);
        m.p[0] = 1.0;
        m.r[0] = f64::NAN;
        assert!(matches!(
            value_iteration(&m, 1e-6),
            Err(Error::NonConvergence { .. })
        ));
    }

    #[test]
    fn policy_softmax_examples() {
        let e = std::f64::consts::E;
        let p = softmax_q(&[1.0, 0.0], 1.0).unwrap();
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        let u = softmax_q(&[0.3, 0.3, 0.3], 0.1).unwrap();
        assert!(u.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let sharp = softmax_q(&[1.0, 0.0, 0.5], 1e-3).unwrap();
        assert!(sharp[0] > 1.0 - 1e-12);
        assert!(sharp.iter().all(|&x| x >= 0.0));
    }
}
