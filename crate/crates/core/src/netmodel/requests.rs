use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::NodeId;
use crate::rng::{self, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub source: NodeId,
    pub destination: NodeId,
    pub min_fidelity: f64,
    /// Absolute step by which the pair must be delivered.
    pub deadline: u64,
    pub issued_at: u64,
}

/// Per-step Poisson arrival rates between node pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandMatrix {
    rates: Vec<Vec<f64>>,
}

impl DemandMatrix {
    pub fn new(rates: Vec<Vec<f64>>) -> Result<Self> {
        let n = rates.len();
        for (i, row) in rates.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidDemand(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &r) in row.iter().enumerate() {
                if !(r >= 0.0) || !r.is_finite() {
                    return Err(Error::InvalidDemand(format!("rate[{i}][{j}] = {r}")));
                }
                if i == j && r != 0.0 {
                    return Err(Error::InvalidDemand(format!("nonzero diagonal at {i}")));
                }
            }
        }
        Ok(Self { rates })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            rates: vec![vec![0.0; n]; n],
        }
    }

    /// `pairs` distinct random (s, d) pairs at least `min_hops` apart, sharing
    /// `total_rate` equally.
    pub fn random_pairs(
        hops: &[Vec<u32>],
        pairs: usize,
        total_rate: f64,
        min_hops: u32,
        seed: u64,
    ) -> Result<Self> {
        let n = hops.len();
        let mut candidates: Vec<(NodeId, NodeId)> = (0..n)
            .flat_map(|s| (0..n).map(move |d| (s, d)))
            .filter(|&(s, d)| s != d && hops[s][d] >= min_hops && hops[s][d] != u32::MAX)
            .collect();
        if candidates.is_empty() {
            return Err(Error::InvalidDemand(format!(
                "no node pairs at least {min_hops} hops apart"
            )));
        }
        let mut rng = rng::stream(seed, "demand");
        let mut m = Self::zeros(n);
        let k = pairs.min(candidates.len()).max(1);
        for i in 0..k {
            let j = rng.random_range(i..candidates.len());
            candidates.swap(i, j);
            let (s, d) = candidates[i];
            m.rates[s][d] = total_rate / k as f64;
        }
        Ok(m)
    }

    pub fn size(&self) -> usize {
        self.rates.len()
    }

    pub fn rate(&self, s: NodeId, d: NodeId) -> f64 {
        self.rates[s][d]
    }

    pub fn total(&self) -> f64 {
        self.rates.iter().flatten().sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.rates
                .iter()
                .map(|r| r.iter().map(|x| x * factor).collect())
                .collect(),
        )
    }
}

/// Seeded request source.
#[derive(Debug, Clone)]
pub struct RequestGenerator {
    demand: DemandMatrix,
    min_fidelity: f64,
    lifetime: u64,
    rng: Stream,
    next_id: u64,
}

impl RequestGenerator {
    pub fn new(demand: DemandMatrix, min_fidelity: f64, lifetime: u64, seed: u64) -> Result<Self> {
        if !(min_fidelity > 0.0 && min_fidelity <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "min_fidelity must lie in (0, 1], got {min_fidelity}"
            )));
        }
        if lifetime == 0 {
            return Err(Error::InvalidParam("request lifetime must be positive".into()));
        }
        Ok(Self {
            demand,
            min_fidelity,
            lifetime,
            rng: rng::stream(seed, "requests"),
            next_id: 0,
        })
    }

    pub fn demand(&self) -> &DemandMatrix {
        &self.demand
    }

    /// Requests arriving at `step`, in (source, destination) order.
    pub fn generate(&mut self, step: u64) -> Vec<Request> {
        let mut out = Vec::new();
        let n = self.demand.size();
        for s in 0..n {
            for d in 0..n {
                let rate = self.demand.rates[s][d];
                if rate <= 0.0 {
                    continue;
                }
                let count = Poisson::new(rate)
                    .map(|p| p.sample(&mut self.rng) as u64)
                    .unwrap_or(0);
                for _ in 0..count {
                    out.push(Request {
                        id: self.next_id,
                        source: s,
                        destination: d,
                        min_fidelity: self.min_fidelity,
                        deadline: step + self.lifetime,
                        issued_at: step,
                    });
                    self.next_id += 1;
                }
            }
        }
        out
    }
}
