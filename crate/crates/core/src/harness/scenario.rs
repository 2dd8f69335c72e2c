//! Scenario files: network, demand, physics and run settings in one TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::belief::{BeliefFilter, FilterConfig};
use crate::netmodel::{
    build_network, AdversaryConfig, DemandMatrix, LinkKind, NetworkGraph, PhysicsParams, RequestGenerator, Topology,
    TopologyParams,
};
use crate::routing::RoutingConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemandConfig {
    /// Number of distinct (s, d) pairs with non-zero rate.
    pub pairs: usize,
    /// Expected arrivals per step over all pairs.
    pub total_rate: f64,
    pub min_hops: u32,
    /// Pairs further apart are never drawn; `None` admits any distance.
    pub max_hops: Option<u32>,
}

impl Default for DemandConfig {
    fn default() -> Self {
        Self {
            pairs: 8,
            total_rate: 0.1,
            min_hops: 2,
            max_hops: Some(3),
        }
    }
}

/// Piecewise-linear drift of every decay rate: Γ moves by `delta` per step
/// towards the far end of `[low, high]` and turns around there, until the
/// total variation `budget` is spent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSchedule {
    pub delta: f64,
    pub budget: f64,
    pub low: f64,
    pub high: f64,
}

impl DriftSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.budget >= 0.0 && self.low < self.high && self.low >= 0.0) {
            return Err(Error::InvalidParam(format!("bad drift schedule {self:?}")));
        }
        Ok(())
    }

    /// Γ_0..Γ_horizon starting from `start` and rising first.
    pub fn path(&self, start: f64, horizon: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(horizon + 1);
        let mut g = start.clamp(self.low, self.high);
        let mut dir = 1.0;
        let mut spent = 0.0;
        out.push(g);
        for _ in 0..horizon {
            let step = self.delta.min(self.budget - spent).max(0.0);
            let mut next = g + dir * step;
            if next > self.high {
                next = self.high - (next - self.high);
                dir = -1.0;
            } else if next < self.low {
                next = self.low + (self.low - next);
                dir = 1.0;
            }
            spent += (next - g).abs();
            g = next;
            out.push(g);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub name: String,
    pub nodes: usize,
    pub topology: Topology,
    pub topology_params: TopologyParams,
    pub physics: PhysicsParams,
    /// The network is fixed across episodes; episode seeds drive dynamics.
    pub topology_seed: u64,
    pub demand: DemandConfig,
    pub min_fidelity: f64,
    /// Steps a request may wait before it expires.
    pub lifetime: u64,
    pub horizon: u64,
    pub decisions_per_step: usize,
    pub filter: FilterConfig,
    pub routing: RoutingConfig,
    pub adversary: AdversaryConfig,
    pub drift: Option<DriftSchedule>,
    /// Weight of the per-step noise penalty in the reward.
    pub reward_penalty: f64,
    pub seeds: Vec<u64>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "default".into(),
            nodes: 10,
            topology: Topology::RandomGeometric,
            topology_params: TopologyParams::default(),
            physics: PhysicsParams::default(),
            topology_seed: 1,
            demand: DemandConfig::default(),
            min_fidelity: 0.6,
            lifetime: 50,
            horizon: 500,
            decisions_per_step: 4,
            filter: FilterConfig {
                kernel_samples: 2000,
                ..FilterConfig::default()
            },
            routing: RoutingConfig::default(),
            adversary: AdversaryConfig::default(),
            drift: None,
            reward_penalty: 0.1,
            seeds: (0..100).collect(),
        }
    }
}

impl Scenario {
    /// Desk-scale default at `nodes` nodes.
    pub fn desk(nodes: usize) -> Self {
        Self {
            name: format!("desk-{nodes}"),
            nodes,
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let s: Self = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes < 2 {
            return Err(Error::InvalidParam("a scenario needs at least 2 nodes".into()));
        }
        if self.decisions_per_step == 0 {
            return Err(Error::InvalidParam("decisions_per_step must be positive".into()));
        }
        if !(self.reward_penalty >= 0.0) {
            return Err(Error::InvalidParam("reward_penalty must be >= 0".into()));
        }
        self.physics.validate()?;
        self.adversary.validate()?;
        if let Some(d) = &self.drift {
            d.validate()?;
        }
        Ok(())
    }

    pub fn network(&self) -> Result<NetworkGraph> {
        build_network(
            self.topology,
            self.nodes,
            &self.topology_params,
            &self.physics,
            self.topology_seed,
        )
    }

    pub fn demand_matrix(&self, g: &NetworkGraph) -> Result<DemandMatrix> {
        let n = g.node_count();
        let cap = self.demand.max_hops.unwrap_or(u32::MAX);
        let hops: Vec<Vec<u32>> = (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| g.hop_distance(a, b))
                    .map(|h| if h > cap { u32::MAX } else { h })
                    .collect()
            })
            .collect();
        DemandMatrix::random_pairs(
            &hops,
            self.demand.pairs,
            self.demand.total_rate,
            self.demand.min_hops.min(max_finite(&hops)),
            self.topology_seed,
        )
    }

    pub fn requests(&self, demand: DemandMatrix, seed: u64) -> Result<RequestGenerator> {
        RequestGenerator::new(demand, self.min_fidelity, self.lifetime, seed)
    }

    pub fn belief_filter(&self) -> Result<BeliefFilter> {
        BeliefFilter::new(self.filter.clone())
    }

    /// `max_links (1 − e^{−2Γ·dt})` over physical links.
    pub fn noise_penalty(g: &NetworkGraph) -> f64 {
        let dt = g.physics.dt_ms;
        g.links
            .iter()
            .filter(|l| l.kind == LinkKind::Physical)
            .map(|l| 1.0 - (-2.0 * l.state.decay_rate * dt).exp())
            .fold(0.0, f64::max)
    }
}

fn max_finite(hops: &[Vec<u32>]) -> u32 {
    hops.iter()
        .flatten()
        .copied()
        .filter(|&h| h != u32::MAX)
        .max()
        .unwrap_or(1)
        .max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let s = Scenario::desk(12);
        let back: Scenario = toml::from_str(&s.to_toml().unwrap()).unwrap();
        assert_eq!(s, back);
        let partial: Scenario = toml::from_str("nodes = 7\nname = \"x\"").unwrap();
        assert_eq!(partial.nodes, 7);
        assert_eq!(partial.horizon, 500);
    }

    #[test]
    fn drift_respects_step_and_budget() {
        let d = DriftSchedule {
            delta: 0.01,
            budget: 0.25,
            low: 0.01,
            high: 0.1,
        };
        let p = d.path(0.05, 100);
        let mut tv = 0.0;
        for w in p.windows(2) {
            let step = (w[1] - w[0]).abs();
            assert!(step <= d.delta + 1e-15);
            tv += step;
        }
        assert!((tv - d.budget).abs() < 1e-12);
        assert!(p.iter().all(|g| (d.low..=d.high).contains(g)));
    }
}
