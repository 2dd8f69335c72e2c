//! KL-driven trust between the learned and the planned policy, and checks of
//! the guarantees the mixture is supposed to carry.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::planner::{BeliefGridMdp, TinyPomdp};
use crate::policy::{softmax, PolicyDistribution, PROB_FLOOR};
use crate::stats::linear_fit;
use crate::{rng, Error, Result};

/// `Σ p log(p/q)` with `q` floored and `0·log 0 = 0`.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b.max(PROB_FLOOR)).ln())
        .sum::<f64>()
        .max(0.0)
}

pub fn kl_divergence<A: Clone + PartialEq>(p: &PolicyDistribution<A>, q: &PolicyDistribution<A>) -> Result<f64> {
    if !p.same_support(q) {
        return Err(Error::ActionSetMismatch);
    }
    Ok(kl(&p.probs, &q.probs))
}

/// `σ(offset − κ·kl)`; the offset is 0 unless recalibrated.
pub fn trust_with_offset(kl: f64, kappa: f64, offset: f64) -> Result<f64> {
    if !(kl >= 0.0) || !(kappa > 0.0) {
        return Err(Error::InvalidParam(format!("trust needs kl >= 0 and kappa > 0, got {kl}, {kappa}")));
    }
    Ok(1.0 / (1.0 + (kappa * kl - offset).exp()))
}

pub fn trust(kl: f64, kappa: f64) -> Result<f64> {
    trust_with_offset(kl, kappa, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustState {
    pub kappa: f64,
    pub offset: f64,
    pub alpha: f64,
    pub kl: f64,
}

impl TrustState {
    pub fn new(kappa: f64, offset: f64) -> Self {
        Self {
            kappa,
            offset,
            alpha: 1.0 / (1.0 + (-offset).exp()),
            kl: 0.0,
        }
    }

    /// Recompute α from `KL(π_POMDP ‖ π_GNN)`.
    pub fn update(&mut self, pomdp: &[f64], gnn: &[f64]) -> Result<f64> {
        self.kl = kl(pomdp, gnn);
        self.alpha = trust_with_offset(self.kl, self.kappa, self.offset)?;
        Ok(self.alpha)
    }
}

pub fn fuse_probs(gnn: &[f64], pomdp: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParam(format!("alpha {alpha} outside [0, 1]")));
    }
    if gnn.len() != pomdp.len() {
        return Err(Error::ActionSetMismatch);
    }
    let mut out: Vec<f64> = gnn
        .iter()
        .zip(pomdp)
        .map(|(g, p)| alpha * g + (1.0 - alpha) * p)
        .collect();
    let s: f64 = out.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        out.iter_mut().for_each(|x| *x /= s);
    }
    Ok(out)
}

/// `α·π_GNN + (1−α)·π_POMDP`.
pub fn fuse<A: Clone + PartialEq>(
    gnn: &PolicyDistribution<A>,
    pomdp: &PolicyDistribution<A>,
    alpha: f64,
) -> Result<PolicyDistribution<A>> {
    if !gnn.same_support(pomdp) {
        return Err(Error::ActionSetMismatch);
    }
    PolicyDistribution::new(gnn.actions.clone(), fuse_probs(&gnn.probs, &pomdp.probs, alpha)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridBoundRow {
    pub level: f64,
    pub beliefs: usize,
    /// Smallest `V_hybrid − (max(V_gnn, V_pomdp) − penalty)` over the grid,
    /// with the penalty taken from the KL at the same belief.
    pub min_margin: f64,
    /// Same with the penalty from the largest KL over the grid.
    pub min_margin_sup: f64,
    pub max_kl: f64,
    pub mean_kl: f64,
    pub mean_alpha: f64,
    pub holds: bool,
    pub holds_sup: bool,
}

pub const HYBRID_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridBoundConfig {
    pub temperature: f64,
    pub kappa: f64,
    pub seed: u64,
}

impl Default for HybridBoundConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            kappa: 1.0,
            seed: 0,
        }
    }
}

/// Policies per grid belief: π_POMDP is the softmax of the exact Q-values,
/// π_GNN the softmax of Q-values with Gaussian noise of scale `level` added
/// to its logits.
pub fn perturbed_policies(
    grid: &BeliefGridMdp,
    q: &[f64],
    level: f64,
    cfg: &HybridBoundConfig,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let na = grid.mdp.actions;
    let mut r = rng::indexed(cfg.seed, "gnn-perturbation", level.to_bits());
    let mut pomdp = Vec::with_capacity(grid.len());
    let mut gnn = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let logits: Vec<f64> = q[i * na..(i + 1) * na].iter().map(|x| x / cfg.temperature).collect();
        let noisy: Vec<f64> = logits
            .iter()
            .map(|x| x + level * Distribution::<f64>::sample(&StandardNormal, &mut r))
            .collect();
        pomdp.push(softmax(&logits)?);
        gnn.push(softmax(&noisy)?);
    }
    Ok((pomdp, gnn))
}

/// Evaluate the three policies exactly and test
/// `V_hyb(b) ≥ max(V_gnn(b), V_pomdp(b)) − 2γR_max/(1−γ)²·√(KL(π_GNN‖π_POMDP)(b)/2)`
/// at every grid belief.
pub fn check_hybrid_bound_with(
    pomdp: &TinyPomdp,
    grid: &BeliefGridMdp,
    pi_pomdp: &[Vec<f64>],
    pi_gnn: &[Vec<f64>],
    level: f64,
    kappa: f64,
) -> Result<HybridBoundRow> {
    let g = grid.mdp.gamma;
    let c = 2.0 * g * pomdp.r_max() / (1.0 - g).powi(2);
    let mut alphas = Vec::with_capacity(grid.len());
    let mut hybrid = Vec::with_capacity(grid.len());
    for (pp, pg) in pi_pomdp.iter().zip(pi_gnn) {
        let a = trust(kl(pp, pg), kappa)?;
        alphas.push(a);
        hybrid.push(fuse_probs(pg, pp, a)?);
    }
    let vp = grid.evaluate(pi_pomdp)?;
    let vg = grid.evaluate(pi_gnn)?;
    let vh = grid.evaluate(&hybrid)?;
    let kls: Vec<f64> = pi_gnn.iter().zip(pi_pomdp).map(|(g, p)| kl(g, p)).collect();
    let max_kl = kls.iter().copied().fold(0.0, f64::max);
    let mut min_margin = f64::INFINITY;
    let mut min_margin_sup = f64::INFINITY;
    for i in 0..grid.len() {
        let best = vg[i].max(vp[i]);
        min_margin = min_margin.min(vh[i] - (best - c * (kls[i] / 2.0).sqrt()));
        min_margin_sup = min_margin_sup.min(vh[i] - (best - c * (max_kl / 2.0).sqrt()));
    }
    let n = grid.len() as f64;
    Ok(HybridBoundRow {
        level,
        beliefs: grid.len(),
        min_margin,
        min_margin_sup,
        max_kl,
        mean_kl: kls.iter().sum::<f64>() / n,
        mean_alpha: alphas.iter().sum::<f64>() / n,
        holds: min_margin >= -HYBRID_SLACK,
        holds_sup: min_margin_sup >= -HYBRID_SLACK,
    })
}

pub fn check_hybrid_bound(
    pomdp: &TinyPomdp,
    grid: &BeliefGridMdp,
    levels: &[f64],
    cfg: &HybridBoundConfig,
) -> Result<Vec<HybridBoundRow>> {
    let exact = grid.solve()?;
    levels
        .iter()
        .map(|&level| {
            let (pp, pg) = perturbed_policies(grid, &exact.q, level, cfg)?;
            check_hybrid_bound_with(pomdp, grid, &pp, &pg, level, cfg.kappa)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    /// (ε, total-variation change).
    pub rows: Vec<(f64, f64)>,
    /// Largest TV/ε.
    pub lipschitz: f64,
    pub r2: f64,
}

/// Werner depolarizing action on a fidelity.
pub fn depolarize(f: f64, eps: f64) -> f64 {
    (1.0 - eps) * f + eps / 4.0
}

/// Perturb every input fidelity by the depolarizing surrogate and measure
/// how far the policy output moves in total variation.
pub fn check_policy_sensitivity(
    policy: impl Fn(&[f64]) -> Result<Vec<f64>>,
    fidelities: &[f64],
    levels: &[f64],
) -> Result<SensitivityReport> {
    let base = policy(fidelities)?;
    let mut rows = Vec::with_capacity(levels.len());
    for &eps in levels {
        let pert: Vec<f64> = fidelities.iter().map(|&f| depolarize(f, eps)).collect();
        let out = policy(&pert)?;
        if out.len() != base.len() {
            return Err(Error::ActionSetMismatch);
        }
        let tv = 0.5 * out.iter().zip(&base).map(|(a, b)| (a - b).abs()).sum::<f64>();
        rows.push((eps, tv));
    }
    let lipschitz = rows
        .iter()
        .filter(|(e, _)| *e > 0.0)
        .map(|(e, tv)| tv / e)
        .fold(0.0, f64::max);
    let (x, y): (Vec<f64>, Vec<f64>) = rows.iter().copied().unzip();
    Ok(SensitivityReport {
        r2: linear_fit(&x, &y).r2,
        rows,
        lipschitz,
    })
}

/// Per-episode constraint measurements for one α schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSample {
    pub alpha: f64,
    /// Mean total stored halves over the episode.
    pub mean_memory: f64,
    /// Fraction of requests that expired unserved.
    pub deadline_misses: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub memory_total: f64,
    pub max_deadline_miss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityRow {
    pub alpha: f64,
    pub episodes: usize,
    pub mean_memory: f64,
    pub mean_deadline_miss: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub rows: Vec<FeasibilityRow>,
    /// Whether the pure planner (α = 0) met the constraints.
    pub planner_feasible: bool,
    /// Rows that are infeasible although the planner was feasible.
    pub violations: Vec<f64>,
}

pub fn check_feasibility(samples: &[ConstraintSample], limits: &Constraints) -> FeasibilityReport {
    let mut alphas: Vec<f64> = samples.iter().map(|s| s.alpha).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let rows: Vec<FeasibilityRow> = alphas
        .iter()
        .map(|&a| {
            let group: Vec<&ConstraintSample> = samples.iter().filter(|s| s.alpha == a).collect();
            let n = group.len() as f64;
            let mean_memory = group.iter().map(|s| s.mean_memory).sum::<f64>() / n;
            let mean_deadline_miss = group.iter().map(|s| s.deadline_misses).sum::<f64>() / n;
            FeasibilityRow {
                alpha: a,
                episodes: group.len(),
                mean_memory,
                mean_deadline_miss,
                feasible: mean_memory <= limits.memory_total && mean_deadline_miss <= limits.max_deadline_miss,
            }
        })
        .collect();
    let planner_feasible = rows.iter().find(|r| r.alpha == 0.0).is_some_and(|r| r.feasible);
    let violations = if planner_feasible {
        rows.iter().filter(|r| !r.feasible).map(|r| r.alpha).collect()
    } else {
        Vec::new()
    };
    FeasibilityReport {
        rows,
        planner_feasible,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_examples() {
        assert_eq!(kl(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        assert!((kl(&[1.0, 0.0], &[0.5, 0.5]) - 2f64.ln()).abs() < 1e-15);
        let p = PolicyDistribution::new(vec![0, 1], vec![0.5, 0.5]).unwrap();
        let q = PolicyDistribution::new(vec![0, 2], vec![0.5, 0.5]).unwrap();
        assert_eq!(kl_divergence(&p, &q), Err(Error::ActionSetMismatch));
    }

    #[test]
    fn trust_examples() {
        assert_eq!(trust(0.0, 1.0).unwrap(), 0.5);
        assert!(trust(1e6, 1.0).unwrap() < 1e-300);
        let e2 = std::f64::consts::E.powi(2);
        assert!((trust(1.0, 2.0).unwrap() - 1.0 / (1.0 + e2)).abs() < 1e-15);
        assert!(trust(-1.0, 1.0).is_err());
        assert!(trust(0.2, 1.0).unwrap() > trust(0.3, 1.0).unwrap());
    }

    #[test]
    fn fuse_examples() {
        let g = PolicyDistribution::new(vec![0, 1], vec![0.8, 0.2]).unwrap();
        let p = PolicyDistribution::new(vec![0, 1], vec![0.2, 0.8]).unwrap();
        assert_eq!(fuse(&g, &p, 1.0).unwrap(), g);
        assert_eq!(fuse(&g, &p, 0.0).unwrap(), p);
        let h = fuse(&g, &p, 0.3).unwrap();
        assert!((h.probs[0] - 0.38).abs() < 1e-15);
        assert!((h.probs[1] - 0.62).abs() < 1e-15);
        assert!(fuse(&g, &p, 1.5).is_err());
    }

    #[test]
    fn identical_components_have_no_penalty() {
        let pomdp = TinyPomdp::random(1, 2, 2, 2, 0.9);
        let grid = BeliefGridMdp::new(&pomdp, 11);
        let exact = grid.solve().unwrap();
        let cfg = HybridBoundConfig::default();
        let (pp, _) = perturbed_policies(&grid, &exact.q, 0.0, &cfg).unwrap();
        let row = check_hybrid_bound_with(&pomdp, &grid, &pp, &pp, 0.0, 1.0).unwrap();
        assert!(row.holds);
        assert!(row.min_margin.abs() < 1e-9);
        assert_eq!(row.mean_kl, 0.0);
    }

    #[test]
    fn uniform_gnn_against_planner() {
        let pomdp = TinyPomdp::random(2, 3, 3, 2, 0.9);
        let grid = BeliefGridMdp::new(&pomdp, 3);
        let exact = grid.solve().unwrap();
        let (pp, _) = perturbed_policies(&grid, &exact.q, 0.0, &HybridBoundConfig::default()).unwrap();
        let uni = vec![vec![1.0 / 3.0; 3]; grid.len()];
        let row = check_hybrid_bound_with(&pomdp, &grid, &pp, &uni, 1.0, 1.0).unwrap();
        assert!(row.holds);
        assert!(row.min_margin > 0.0);
    }

    #[test]
    fn sensitivity_of_smooth_policy_is_linear() {
        let policy = |f: &[f64]| softmax(&f.iter().map(|x| 3.0 * x).collect::<Vec<_>>());
        let levels: Vec<f64> = (0..=20).map(|k| 0.01 * k as f64).collect();
        let rep = check_policy_sensitivity(policy, &[0.9, 0.6, 0.75], &levels).unwrap();
        assert_eq!(rep.rows[0].1, 0.0);
        assert!(rep.r2 >= 0.9);
        assert!(rep.lipschitz.is_finite());
    }

    #[test]
    fn feasibility_flags_violations() {
        let limits = Constraints {
            memory_total: 10.0,
            max_deadline_miss: 0.5,
        };
        let mut samples = vec![];
        for (a, m) in [(0.0, 5.0), (0.5, 7.0), (1.0, 20.0)] {
            samples.push(ConstraintSample {
                alpha: a,
                mean_memory: m,
                deadline_misses: 0.1,
            });
        }
        let rep = check_feasibility(&samples, &limits);
        assert!(rep.planner_feasible);
        assert_eq!(rep.violations, vec![1.0]);
    }
}
