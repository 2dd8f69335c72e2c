//! Exactly solvable small POMDPs used as oracles for the aggregation bounds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{value_iteration, AggregatedMdp, ValueTable};
use crate::aggregate::{cluster, euclidean, l1, ClusterMethod, ClusterSet};
use crate::{rng, Error, Result};

/// Finite POMDP with explicit tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyPomdp {
    pub states: usize,
    pub actions: usize,
    pub observations: usize,
    /// `t[(a·S + s)·S + s′]`.
    pub t: Vec<f64>,
    /// `z[(a·S + s′)·O + o]`.
    pub z: Vec<f64>,
    /// `r[s·A + a]`.
    pub r: Vec<f64>,
    pub gamma: f64,
}

fn random_simplex(r: &mut impl Rng, n: usize) -> Vec<f64> {
    let x: Vec<f64> = (0..n).map(|_| -(1.0 - r.random::<f64>()).ln()).collect();
    let s: f64 = x.iter().sum();
    x.into_iter().map(|v| v / s).collect()
}

impl TinyPomdp {
    pub fn random(seed: u64, states: usize, actions: usize, observations: usize, gamma: f64) -> Self {
        let mut r = rng::stream(seed, "tiny-pomdp");
        let mut t = Vec::with_capacity(actions * states * states);
        let mut z = Vec::with_capacity(actions * states * observations);
        for _ in 0..actions * states {
            t.extend(random_simplex(&mut r, states));
        }
        for _ in 0..actions * states {
            z.extend(random_simplex(&mut r, observations));
        }
        let rew = (0..states * actions)
            .map(|_| r.random::<f64>() * 2.0 - 1.0)
            .collect();
        Self {
            states,
            actions,
            observations,
            t,
            z,
            r: rew,
            gamma,
        }
    }

    pub fn r_max(&self) -> f64 {
        self.r.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn reward(&self, b: &[f64], a: usize) -> f64 {
        (0..self.states).map(|s| b[s] * self.r[s * self.actions + a]).sum()
    }

    /// Observation probabilities and posteriors after acting with `a` in `b`.
    pub fn successors(&self, b: &[f64], a: usize) -> Vec<(f64, Vec<f64>)> {
        let s_n = self.states;
        let pred: Vec<f64> = (0..s_n)
            .map(|s2| (0..s_n).map(|s| b[s] * self.t[(a * s_n + s) * s_n + s2]).sum())
            .collect();
        (0..self.observations)
            .filter_map(|o| {
                let joint: Vec<f64> = (0..s_n)
                    .map(|s2| pred[s2] * self.z[(a * s_n + s2) * self.observations + o])
                    .collect();
                let p: f64 = joint.iter().sum();
                (p > 0.0).then(|| (p, joint.into_iter().map(|x| x / p).collect()))
            })
            .collect()
    }

    /// All beliefs whose coordinates are multiples of `1/resolution`.
    pub fn belief_grid(&self, resolution: usize) -> Vec<Vec<f64>> {
        fn rec(left: usize, slots: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if slots == 1 {
                cur.push(left);
                out.push(cur.clone());
                cur.pop();
                return;
            }
            for k in (0..=left).rev() {
                cur.push(k);
                rec(left - k, slots - 1, cur, out);
                cur.pop();
            }
        }
        let mut raw = Vec::new();
        rec(resolution, self.states, &mut Vec::new(), &mut raw);
        raw.into_iter()
            .map(|v| v.into_iter().map(|k| k as f64 / resolution as f64).collect())
            .collect()
    }
}

/// The belief MDP restricted to a grid: posteriors are projected onto the
/// nearest grid belief. Solving it exactly is the brute-force oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefGridMdp {
    pub points: Vec<Vec<f64>>,
    pub mdp: AggregatedMdp,
}

fn nearest_index(points: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d = euclidean(p, x);
        if d < best.1 - 1e-15 {
            best = (i, d);
        }
    }
    best.0
}

impl BeliefGridMdp {
    pub fn new(pomdp: &TinyPomdp, resolution: usize) -> Self {
        let points = pomdp.belief_grid(resolution);
        let n = points.len();
        let mut mdp = AggregatedMdp::new(n, pomdp.actions, pomdp.gamma);
        for (i, b) in points.iter().enumerate() {
            for a in 0..pomdp.actions {
                mdp.r[i * pomdp.actions + a] = pomdp.reward(b, a);
                mdp.visited[i * pomdp.actions + a] = true;
                for (p, post) in pomdp.successors(b, a) {
                    let j = nearest_index(&points, &post);
                    mdp.p[(i * pomdp.actions + a) * n + j] += p;
                }
            }
        }
        Self { points, mdp }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn solve(&self) -> Result<ValueTable> {
        value_iteration(&self.mdp, 1e-12)
    }

    /// Exact value of a stationary stochastic policy, `policy[i][a]`.
    pub fn evaluate(&self, policy: &[Vec<f64>]) -> Result<Vec<f64>> {
        let n = self.len();
        let na = self.mdp.actions;
        let g = self.mdp.gamma;
        // Solve (I − γ P_π) v = r_π by Gaussian elimination with partial pivoting.
        let mut a = vec![vec![0.0; n + 1]; n];
        for i in 0..n {
            if policy[i].len() != na {
                return Err(Error::ShapeMismatch(format!(
                    "policy row {i} has {} entries, expected {na}",
                    policy[i].len()
                )));
            }
            a[i][i] = 1.0;
            for (act, &pi) in policy[i].iter().enumerate() {
                a[i][n] += pi * self.mdp.reward(i, act);
                for (j, &p) in self.mdp.row(i, act).iter().enumerate() {
                    a[i][j] -= g * pi * p;
                }
            }
        }
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
                .unwrap();
            a.swap(col, piv);
            let d = a[col][col];
            for k in col..=n {
                a[col][k] /= d;
            }
            for row in 0..n {
                if row != col {
                    let f = a[row][col];
                    if f != 0.0 {
                        for k in col..=n {
                            a[row][k] -= f * a[col][k];
                        }
                    }
                }
            }
        }
        Ok(a.into_iter().map(|r| r[n]).collect())
    }
}

/// Largest `|V(i) − V(j)| / ‖φ_i − φ_j‖₂` over distinct grid pairs.
pub fn value_lipschitz(v: &[f64], phi: &[Vec<f64>]) -> f64 {
    let mut best: f64 = 0.0;
    for i in 0..phi.len() {
        for j in i + 1..phi.len() {
            let d = euclidean(&phi[i], &phi[j]);
            if d > 1e-12 {
                best = best.max((v[i] - v[j]).abs() / d);
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationRow {
    pub k: usize,
    pub epsilon: f64,
    pub l_v: f64,
    pub error: f64,
    pub bound: f64,
    pub margin: f64,
    /// `error / bound`, or 0 when the bound is 0.
    pub tightness: f64,
    pub holds: bool,
}

/// Aggregated value function built on prototype beliefs.
#[derive(Debug, Clone)]
pub struct PrototypeAggregation {
    pub clusters: ClusterSet,
    pub prototypes: Vec<usize>,
    pub values: ValueTable,
}

impl PrototypeAggregation {
    /// Cluster the grid features, replace centres by member beliefs and solve
    /// the MDP whose dynamics are those of the prototypes.
    pub fn build(grid: &BeliefGridMdp, phi: &[Vec<f64>], k: usize, seed: u64) -> Result<Self> {
        let clusters = if k >= phi.len() {
            ClusterSet::from_centers(phi.to_vec(), phi)?
        } else {
            cluster(phi, k, seed, ClusterMethod::KMeans)?.medoids(phi)?
        };
        let prototypes: Vec<usize> = clusters
            .centers
            .iter()
            .map(|c| phi.iter().position(|p| p == c).expect("prototype is a grid point"))
            .collect();
        let assign: Vec<usize> = phi
            .iter()
            .map(|p| clusters.assign(p))
            .collect::<Result<_>>()?;
        let kq = prototypes.len();
        let na = grid.mdp.actions;
        let mut m = AggregatedMdp::new(kq, na, grid.mdp.gamma);
        for (q, &i) in prototypes.iter().enumerate() {
            for a in 0..na {
                m.r[q * na + a] = grid.mdp.reward(i, a);
                m.visited[q * na + a] = true;
                for (j, &p) in grid.mdp.row(i, a).iter().enumerate() {
                    m.p[(q * na + a) * kq + assign[j]] += p;
                }
            }
        }
        let values = value_iteration(&m, 1e-12)?;
        Ok(Self {
            clusters,
            prototypes,
            values,
        })
    }

    pub fn value_at(&self, features: &[f64]) -> Result<f64> {
        Ok(self.values.v[self.clusters.assign(features)?])
    }
}

pub const BOUND_SLACK: f64 = 1e-6;

/// Check `‖V* − Ṽ‖∞ ≤ L_V·ε/(1−γ)` for each cluster count in `ks`.
pub fn check_aggregation_bound(
    grid: &BeliefGridMdp,
    phi: &[Vec<f64>],
    ks: &[usize],
    seed: u64,
) -> Result<Vec<AggregationRow>> {
    let exact = grid.solve()?;
    let l_v = value_lipschitz(&exact.v, phi);
    let g = grid.mdp.gamma;
    ks.iter()
        .map(|&k| {
            let agg = PrototypeAggregation::build(grid, phi, k, seed)?;
            let mut error: f64 = 0.0;
            for (i, p) in phi.iter().enumerate() {
                error = error.max((exact.v[i] - agg.value_at(p)?).abs());
            }
            let bound = l_v * agg.clusters.radius / (1.0 - g);
            Ok(AggregationRow {
                k: agg.prototypes.len(),
                epsilon: agg.clusters.radius,
                l_v,
                error,
                bound,
                margin: bound + BOUND_SLACK - error,
                tightness: if bound > 0.0 { error / bound } else { 0.0 },
                holds: error <= bound + BOUND_SLACK,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationRow {
    pub eps_est: f64,
    pub epsilon: f64,
    pub l_v: f64,
    pub l_phi: f64,
    pub max_error: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Perturb grid beliefs by at most `eps_est` in L1, evaluate the aggregated
/// value at the perturbed belief and compare with the exact value at the
/// true one.
pub fn check_estimation_propagation(
    grid: &BeliefGridMdp,
    phi: impl Fn(&[f64]) -> Vec<f64>,
    k: usize,
    eps_levels: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<PropagationRow>> {
    let feats: Vec<Vec<f64>> = grid.points.iter().map(|b| phi(b)).collect();
    let exact = grid.solve()?;
    let l_v = value_lipschitz(&exact.v, &feats);
    let agg = PrototypeAggregation::build(grid, &feats, k, seed)?;
    let eps = agg.clusters.radius;
    let g = grid.mdp.gamma;
    let dim = grid.points[0].len();
    let mut r = rng::stream(seed, "perturb");
    eps_levels
        .iter()
        .map(|&eps_est| {
            let mut pairs = Vec::with_capacity(samples);
            for _ in 0..samples {
                let i = r.random_range(0..grid.len());
                let b = &grid.points[i];
                let y = random_simplex(&mut r, dim);
                let dist = l1(b, &y);
                let step = if dist > 0.0 {
                    (eps_est / dist).min(1.0) * r.random::<f64>()
                } else {
                    0.0
                };
                let hat: Vec<f64> = b.iter().zip(&y).map(|(x, t)| x + step * (t - x)).collect();
                pairs.push((i, hat));
            }
            let mut l_phi: f64 = 0.0;
            let mut max_error: f64 = 0.0;
            for (i, hat) in &pairs {
                let b = &grid.points[*i];
                let f_hat = phi(hat);
                let d = l1(b, hat);
                if d > 1e-12 {
                    l_phi = l_phi.max(euclidean(&feats[*i], &f_hat) / d);
                }
                max_error = max_error.max((exact.v[*i] - agg.value_at(&f_hat)?).abs());
            }
            let bound = l_v * l_phi * eps_est / (1.0 - g) + l_v * eps / (1.0 - g);
            Ok(PropagationRow {
                eps_est,
                epsilon: eps,
                l_v,
                l_phi,
                max_error,
                bound,
                holds: max_error <= bound + BOUND_SLACK,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationProbe {
    pub independent_error: f64,
    pub correlated_error: f64,
}

/// Two links, each good or bad. Using both pays `win` if both are good and
/// −1 otherwise; idling pays 0. Compares the decision value computed from
/// the exact joint belief with the one computed from the product of its
/// marginals, for an independent and a perfectly correlated joint.
pub fn correlation_probe(p_good: f64, win: f64) -> CorrelationProbe {
    let value = |p_both: f64| (p_both * win - (1.0 - p_both)).max(0.0);
    let factored = value(p_good * p_good);
    let independent = value(p_good * p_good);
    let correlated = value(p_good);
    CorrelationProbe {
        independent_error: (independent - factored).abs(),
        correlated_error: (correlated - factored).abs(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        let p2 = TinyPomdp::random(1, 2, 2, 2, 0.9);
        assert_eq!(p2.belief_grid(11).len(), 12);
        let p3 = TinyPomdp::random(1, 3, 2, 2, 0.9);
        assert_eq!(p3.belief_grid(3).len(), 10);
        for b in p3.belief_grid(3) {
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_mdp_is_stochastic() {
        let p = TinyPomdp::random(3, 3, 3, 2, 0.9);
        let g = BeliefGridMdp::new(&p, 3);
        assert!(g.mdp.max_row_error() < 1e-12);
    }

    #[test]
    fn policy_evaluation_matches_iteration() {
        let p = TinyPomdp::random(5, 2, 3, 3, 0.8);
        let g = BeliefGridMdp::new(&p, 11);
        let exact = g.solve().unwrap();
        let greedy: Vec<Vec<f64>> = (0..g.len())
            .map(|i| {
                let row = exact.q_row(i);
                let best = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
                (0..row.len()).map(|a| f64::from(u8::from(a == best))).collect()
            })
            .collect();
        let v = g.evaluate(&greedy).unwrap();
        for (a, b) in v.iter().zip(&exact.v) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn no_aggregation_has_no_error() {
        let p = TinyPomdp::random(7, 2, 2, 2, 0.9);
        let g = BeliefGridMdp::new(&p, 11);
        let rows = check_aggregation_bound(&g, &g.points, &[g.len()], 0).unwrap();
        assert_eq!(rows[0].epsilon, 0.0);
        assert!(rows[0].error <= BOUND_SLACK);
    }

    #[test]
    fn single_cluster_bound_holds() {
        let p = TinyPomdp::random(8, 3, 3, 2, 0.9);
        let g = BeliefGridMdp::new(&p, 3);
        let rows = check_aggregation_bound(&g, &g.points, &[1, 3, 6], 0).unwrap();
        for row in rows {
            assert!(row.holds, "{row:?}");
            assert!(row.tightness <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn propagation_reduces_to_aggregation_at_zero() {
        let p = TinyPomdp::random(9, 2, 2, 3, 0.9);
        let g = BeliefGridMdp::new(&p, 11);
        let rows =
            check_estimation_propagation(&g, |b| b.to_vec(), 4, &[0.0, 0.1, 0.2], 1000, 1).unwrap();
        for row in &rows {
            assert!(row.holds, "{row:?}");
        }
        let agg = check_aggregation_bound(&g, &g.points, &[4], 1).unwrap();
        assert!(rows[0].max_error <= agg[0].error + 1e-12);
        let first = |r: &PropagationRow| r.l_v * r.l_phi * r.eps_est / (1.0 - 0.9);
        assert!(first(&rows[2]) <= 2.0 * first(&rows[1]) * (rows[2].l_phi / rows[1].l_phi) + 1e-12);
    }

    #[test]
    fn correlation_hurts_factored_beliefs() {
        let probe = correlation_probe(0.5, 3.0);
        assert_eq!(probe.independent_error, 0.0);
        assert!(probe.correlated_error > probe.independent_error);
    }
}
