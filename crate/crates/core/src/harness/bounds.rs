//! Numerical checks of the analytic guarantees on small exact instances.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::episode::Prepared;
use super::scenario::Scenario;
use crate::gnn::{self, imitation_regret, Decision, GnnConfig, GnnParams, RegretConfig};
use crate::hybrid::{check_hybrid_bound, HybridBoundConfig, HybridBoundRow};
use crate::netmodel::Request;
use crate::planner::{check_aggregation_bound, AggregationRow, BeliefGridMdp, TinyPomdp};
use crate::routing::candidates;
use crate::stats::{linear_fit, LinearFit};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundsConfig {
    pub instances: usize,
    pub gamma: f64,
    pub resolution: usize,
    pub cluster_counts: Vec<usize>,
    pub hybrid_levels: usize,
    pub max_level: f64,
    pub hybrid: HybridBoundConfig,
    pub seed: u64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            gamma: 0.9,
            resolution: 6,
            cluster_counts: vec![2, 4, 8, 16],
            hybrid_levels: 20,
            max_level: 3.0,
            hybrid: HybridBoundConfig::default(),
            seed: 0,
        }
    }
}

/// Instance `i`: 2 or 3 hidden states, 2 to 4 actions, 2 observations.
pub fn tiny_instance(cfg: &BoundsConfig, i: usize) -> (TinyPomdp, BeliefGridMdp) {
    let p = TinyPomdp::random(cfg.seed * 1000 + i as u64, 2 + i % 2, 2 + i % 3, 2, cfg.gamma);
    let g = BeliefGridMdp::new(&p, cfg.resolution);
    (p, g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRow<T> {
    pub instance: usize,
    pub row: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub aggregation: Vec<InstanceRow<AggregationRow>>,
    pub hybrid: Vec<InstanceRow<HybridBoundRow>>,
}

impl BoundsReport {
    pub fn aggregation_holds(&self) -> bool {
        !self.aggregation.is_empty() && self.aggregation.iter().all(|r| r.row.holds)
    }

    pub fn hybrid_holds(&self) -> bool {
        !self.hybrid.is_empty() && self.hybrid.iter().all(|r| r.row.holds)
    }
}

pub fn check_aggregation(cfg: &BoundsConfig) -> Result<Vec<InstanceRow<AggregationRow>>> {
    let mut out = Vec::new();
    for i in 0..cfg.instances {
        let (_, g) = tiny_instance(cfg, i);
        for row in check_aggregation_bound(&g, &g.points, &cfg.cluster_counts, cfg.seed + i as u64)? {
            out.push(InstanceRow { instance: i, row });
        }
    }
    Ok(out)
}

pub fn hybrid_levels(cfg: &BoundsConfig) -> Vec<f64> {
    let n = cfg.hybrid_levels.max(1);
    (0..n).map(|k| cfg.max_level * k as f64 / (n - 1).max(1) as f64).collect()
}

pub fn check_hybrid(cfg: &BoundsConfig) -> Result<Vec<InstanceRow<HybridBoundRow>>> {
    let levels = hybrid_levels(cfg);
    let mut out = Vec::new();
    for i in 0..cfg.instances {
        let (p, g) = tiny_instance(cfg, i);
        let hc = HybridBoundConfig {
            seed: cfg.hybrid.seed + i as u64,
            ..cfg.hybrid
        };
        for row in check_hybrid_bound(&p, &g, &levels, &hc)? {
            out.push(InstanceRow { instance: i, row });
        }
    }
    Ok(out)
}

pub fn check_bounds(cfg: &BoundsConfig) -> Result<BoundsReport> {
    Ok(BoundsReport {
        aggregation: check_aggregation(cfg)?,
        hybrid: check_hybrid(cfg)?,
    })
}

/// A decision on a 5-node desk network with a fixed expert over its
/// candidates, `π(k) ∝ 1/(k+1)`.
pub fn regret_instance(seed: u64) -> Result<(GnnParams, Decision, Vec<f64>)> {
    let prep = Prepared::new(Scenario::desk(5))?;
    let view = prep.network.observable();
    let b = prep.filter.init(&view);
    let (s, d) = (0..5)
        .flat_map(|s| (0..5).map(move |d| (s, d)))
        .find(|&(s, d)| s < d && prep.demand.rate(s, d) > 0.0)
        .ok_or(Error::InvalidDemand("no demand on the regret instance".into()))?;
    let req = Request {
        id: 0,
        source: s,
        destination: d,
        min_fidelity: prep.scenario.min_fidelity,
        deadline: 10,
        issued_at: 0,
    };
    let cands = candidates(&view, &b, &req, 0, &prep.scenario.routing);
    if cands.len() < 2 {
        return Err(Error::InvalidParam("regret instance needs two candidates".into()));
    }
    let decision = Decision {
        graph: Arc::new(gnn::graph_input(&view, &b)),
        queries: gnn::queries(&view, &req, &cands),
    };
    let z: f64 = (0..cands.len()).map(|k| 1.0 / (k + 1) as f64).sum();
    let target = (0..cands.len()).map(|k| 1.0 / ((k + 1) as f64 * z)).collect();
    let p = GnnParams::new(GnnConfig {
        hidden: 8,
        layers: 2,
        message_width: 8,
        scorer_width: 8,
        seed,
        ..GnnConfig::default()
    })?;
    Ok((p, decision, target))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretRate {
    pub t: Vec<usize>,
    /// Mean over label streams of the running-average regret.
    pub avg_regret: Vec<f64>,
    pub fit: LinearFit,
    pub runs: usize,
}

/// Average the regret curves of `runs` independent label streams and fit
/// the log-log slope on `t ≥ cfg.fit_from`.
pub fn imitation_regret_rate(cfg: &RegretConfig, runs: usize) -> Result<RegretRate> {
    let (p, d, target) = regret_instance(cfg.seed)?;
    let mut t = Vec::new();
    let mut sum: Vec<f64> = Vec::new();
    for k in 0..runs.max(1) {
        let c = imitation_regret(&p, &d, &target, &RegretConfig {
            seed: cfg.seed * 1000 + k as u64,
            ..*cfg
        })?;
        if sum.is_empty() {
            t = c.t.clone();
            sum = vec![0.0; c.avg_regret.len()];
        }
        for (s, r) in sum.iter_mut().zip(&c.avg_regret) {
            *s += r / runs.max(1) as f64;
        }
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(&sum)
        .filter(|(t, a)| **t >= cfg.fit_from && **a > 0.0)
        .map(|(t, a)| ((*t as f64).ln(), a.ln()))
        .unzip();
    Ok(RegretRate {
        fit: linear_fit(&xs, &ys),
        t,
        avg_regret: sum,
        runs: runs.max(1),
    })
}
