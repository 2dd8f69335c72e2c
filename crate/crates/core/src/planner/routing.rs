//! Aggregated planner over request contexts.
//!
//! States are clusters of request feature vectors, actions are the six
//! action kinds. The kind is chosen from the cluster's Q row; within a kind,
//! concrete actions are weighted by their heuristic score.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{build_cluster_mdp, value_iteration, AggregatedMdp, Transition, ValueTable};
use crate::aggregate::{cluster, ClusterMethod, ClusterSet};
use crate::netmodel::ActionKind;
use crate::policy::{softmax, PolicyDistribution};
use crate::routing::Candidate;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub clusters: usize,
    pub gamma: f64,
    /// Softmax temperature over kind Q-values.
    pub temperature: f64,
    /// Softmax temperature over heuristic scores within a kind.
    pub within_temperature: f64,
    pub smoothing: f64,
    pub method: ClusterMethod,
    /// Points used to fit the clustering; rollouts beyond this are subsampled.
    pub max_cluster_points: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            clusters: 48,
            gamma: 0.95,
            temperature: 0.1,
            within_temperature: 0.1,
            smoothing: 1.0,
            method: ClusterMethod::KMeans,
            max_cluster_points: 4000,
            tolerance: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoutingPlanner {
    pub config: PlannerConfig,
    pub clusters: ClusterSet,
    pub mdp: AggregatedMdp,
    pub values: ValueTable,
}

impl RoutingPlanner {
    pub fn fit(rollouts: &[Transition], config: PlannerConfig) -> Result<Self> {
        if rollouts.is_empty() {
            return Err(Error::EmptyRollouts);
        }
        let mut points: Vec<Vec<f64>> = rollouts
            .iter()
            .flat_map(|t| std::iter::once(&t.features).chain(t.next.as_ref()))
            .cloned()
            .collect();
        if points.len() > config.max_cluster_points {
            points.shuffle(&mut rng::stream(config.seed, "planner-subsample"));
            points.truncate(config.max_cluster_points);
        }
        let k = config.clusters.min(distinct_count(&points)).max(1);
        let clusters = cluster(&points, k, config.seed, config.method)?;
        let mdp = build_cluster_mdp(&clusters, rollouts, ActionKind::COUNT, config.gamma, config.smoothing)?;
        let values = value_iteration(&mdp, config.tolerance)?;
        Ok(Self {
            config,
            clusters,
            mdp,
            values,
        })
    }

    pub fn state_of(&self, features: &[f64]) -> Result<usize> {
        self.clusters.assign(features)
    }

    pub fn kind_values(&self, features: &[f64]) -> Result<&[f64]> {
        Ok(self.values.q_row(self.state_of(features)?))
    }

    /// π_POMDP over the candidate set of one request.
    pub fn policy(&self, features: &[f64], cands: &[Candidate]) -> Result<PolicyDistribution<usize>> {
        let q = self.kind_values(features)?;
        kind_policy(q, cands, self.config.temperature, self.config.within_temperature)
    }
}

fn distinct_count(points: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|x| x.to_bits()).collect())
        .collect();
    keys.sort();
    keys.dedup();
    keys.len()
}

/// Two-level softmax: over the kinds present in `cands` by `kind_q`, then over
/// candidates of each kind by heuristic score.
pub fn kind_policy(
    kind_q: &[f64],
    cands: &[Candidate],
    temperature: f64,
    within_temperature: f64,
) -> Result<PolicyDistribution<usize>> {
    if cands.is_empty() {
        return Err(Error::NoFeasibleAction);
    }
    if !(temperature > 0.0 && within_temperature > 0.0) {
        return Err(Error::InvalidParam("temperatures must be > 0".into()));
    }
    let mut present: Vec<usize> = cands.iter().map(|c| c.kind().index()).collect();
    present.sort_unstable();
    present.dedup();
    let logits: Vec<f64> = present.iter().map(|&k| kind_q[k] / temperature).collect();
    let kind_p = softmax(&logits)?;
    let mut probs = vec![0.0; cands.len()];
    for (j, &k) in present.iter().enumerate() {
        let members: Vec<usize> = (0..cands.len()).filter(|&i| cands[i].kind().index() == k).collect();
        let scores: Vec<f64> = members
            .iter()
            .map(|&i| cands[i].heuristic() / within_temperature)
            .collect();
        for (&i, w) in members.iter().zip(softmax(&scores)?) {
            probs[i] = kind_p[j] * w;
        }
    }
    PolicyDistribution::new((0..cands.len()).collect(), probs)
}
