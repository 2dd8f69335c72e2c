//! Dynamic regret under a drifting decay rate on a repeater line small
//! enough to solve exactly at every step.
//!
//! Each of the `links` hops is dead, low or high fidelity. Entangling a dead
//! hop makes it low, purifying a low hop makes it high, and every live hop
//! drops one level per step with probability `1 − e^{−Γ·τ}`. Delivering
//! needs every hop alive, pays 1 when the swapped chain meets `min_fidelity`,
//! and clears the line.

use serde::{Deserialize, Serialize};

use super::scenario::DriftSchedule;
use crate::netmodel::swap_fidelity;
use crate::policy::softmax;
use crate::stats::{linear_fit, LinearFit};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftMdpConfig {
    pub links: usize,
    pub f_low: f64,
    pub f_high: f64,
    pub min_fidelity: f64,
    pub entangle_success: f64,
    pub purify_success: f64,
    /// Decision interval in ms.
    pub tau_ms: f64,
    pub gamma: f64,
    /// Softmax temperature of the learner's policy.
    pub temperature: f64,
}

impl Default for DriftMdpConfig {
    fn default() -> Self {
        Self {
            links: 4,
            f_low: 0.8,
            f_high: 0.95,
            min_fidelity: 0.7,
            entangle_success: 0.9,
            purify_success: 0.75,
            tau_ms: 10.0,
            gamma: 0.9,
            temperature: 0.1,
        }
    }
}

/// Sparse transition row: `(next state, probability)`.
type Row = Vec<(usize, f64)>;

#[derive(Debug, Clone)]
pub struct DriftMdp {
    pub config: DriftMdpConfig,
    pub states: usize,
    pub actions: usize,
    /// `reward[s][a]`, with `None` for infeasible actions.
    reward: Vec<Vec<Option<f64>>>,
}

const DEAD: u8 = 0;
const LOW: u8 = 1;
const HIGH: u8 = 2;

impl DriftMdp {
    pub fn new(config: DriftMdpConfig) -> Result<Self> {
        if config.links == 0 || config.links > 8 {
            return Err(Error::InvalidParam("drift line needs 1..=8 hops".into()));
        }
        if !(0.0..1.0).contains(&config.gamma) || !(config.temperature > 0.0) {
            return Err(Error::InvalidParam("gamma in [0,1) and temperature > 0 required".into()));
        }
        let states = 3usize.pow(config.links as u32);
        let actions = 2 + 2 * config.links;
        let mut mdp = Self {
            config,
            states,
            actions,
            reward: Vec::new(),
        };
        mdp.reward = (0..states)
            .map(|s| (0..actions).map(|a| mdp.action_reward(s, a)).collect())
            .collect();
        Ok(mdp)
    }

    pub fn levels(&self, s: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.config.links);
        let mut x = s;
        for _ in 0..self.config.links {
            out.push((x % 3) as u8);
            x /= 3;
        }
        out
    }

    fn index(levels: &[u8]) -> usize {
        levels.iter().rev().fold(0, |acc, &l| acc * 3 + l as usize)
    }

    /// Fidelity of the end-to-end pair after swapping all hops.
    pub fn chain_fidelity(&self, levels: &[u8]) -> f64 {
        levels
            .iter()
            .map(|&l| if l == HIGH { self.config.f_high } else { self.config.f_low })
            .reduce(swap_fidelity)
            .unwrap_or(1.0)
    }

    fn deliver_action(&self) -> usize {
        self.actions - 1
    }

    /// Action layout: 0 idle, 1..=L entangle hop, L+1..=2L purify hop, last deliver.
    fn action_reward(&self, s: usize, a: usize) -> Option<f64> {
        let lv = self.levels(s);
        let l = self.config.links;
        match a {
            0 => Some(0.0),
            a if a <= l => (lv[a - 1] == DEAD).then_some(0.0),
            a if a <= 2 * l => (lv[a - l - 1] == LOW).then_some(0.0),
            _ => lv.iter().all(|&x| x != DEAD).then(|| {
                if self.chain_fidelity(&lv) >= self.config.min_fidelity {
                    1.0
                } else {
                    0.0
                }
            }),
        }
    }

    pub fn feasible(&self, s: usize, a: usize) -> bool {
        self.reward[s][a].is_some()
    }

    /// Per-hop level distribution right after the action.
    fn after_action(&self, s: usize, a: usize) -> Vec<Vec<(u8, f64)>> {
        let mut lv: Vec<Vec<(u8, f64)>> = self.levels(s).into_iter().map(|x| vec![(x, 1.0)]).collect();
        let l = self.config.links;
        if a == self.deliver_action() {
            for h in &mut lv {
                *h = vec![(DEAD, 1.0)];
            }
        } else if (1..=l).contains(&a) {
            let p = self.config.entangle_success;
            lv[a - 1] = vec![(LOW, p), (DEAD, 1.0 - p)];
        } else if (l + 1..=2 * l).contains(&a) {
            let p = self.config.purify_success;
            lv[a - l - 1] = vec![(HIGH, p), (LOW, 1.0 - p)];
        }
        lv
    }

    /// Transition row of `(s, a)` under decay rate `gamma_rate` (per ms).
    pub fn row(&self, s: usize, a: usize, gamma_rate: f64) -> Row {
        let q = 1.0 - (-gamma_rate * self.config.tau_ms).exp();
        let per_hop: Vec<Vec<(u8, f64)>> = self
            .after_action(s, a)
            .into_iter()
            .map(|dist| {
                let mut out: Vec<(u8, f64)> = Vec::new();
                for (x, p) in dist {
                    let moves: &[(u8, f64)] = if x == DEAD {
                        &[(DEAD, 1.0)]
                    } else {
                        &[(x, 1.0 - q), (x - 1, q)]
                    };
                    for &(y, pm) in moves {
                        match out.iter_mut().find(|e| e.0 == y) {
                            Some(e) => e.1 += p * pm,
                            None => out.push((y, p * pm)),
                        }
                    }
                }
                out
            })
            .collect();
        let mut row: Row = vec![(0, 1.0)];
        let mut levels_so_far: Vec<Vec<u8>> = vec![Vec::new()];
        for hop in &per_hop {
            let mut next_row = Vec::new();
            let mut next_levels = Vec::new();
            for ((_, p), lv) in row.iter().zip(&levels_so_far) {
                for &(y, py) in hop {
                    if py == 0.0 {
                        continue;
                    }
                    let mut l2 = lv.clone();
                    l2.push(y);
                    next_levels.push(l2);
                    next_row.push((0, p * py));
                }
            }
            row = next_row;
            levels_so_far = next_levels;
        }
        row.iter()
            .zip(&levels_so_far)
            .map(|(&(_, p), lv)| (Self::index(lv), p))
            .collect()
    }

    /// All rows for one decay rate, indexed `[s][a]` (empty when infeasible).
    pub fn kernel(&self, gamma_rate: f64) -> Vec<Vec<Row>> {
        (0..self.states)
            .map(|s| {
                (0..self.actions)
                    .map(|a| if self.feasible(s, a) { self.row(s, a, gamma_rate) } else { Vec::new() })
                    .collect()
            })
            .collect()
    }

    pub fn q_values(&self, kernel: &[Vec<Row>], v: &[f64]) -> Vec<Vec<f64>> {
        let g = self.config.gamma;
        (0..self.states)
            .map(|s| {
                (0..self.actions)
                    .map(|a| match self.reward[s][a] {
                        None => f64::NEG_INFINITY,
                        Some(r) => r + g * kernel[s][a].iter().map(|&(t, p)| p * v[t]).sum::<f64>(),
                    })
                    .collect()
            })
            .collect()
    }

    pub fn bellman(&self, kernel: &[Vec<Row>], v: &[f64]) -> Vec<f64> {
        self.q_values(kernel, v)
            .into_iter()
            .map(|q| q.into_iter().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    /// Value iteration from `warm` to sup-norm residual `tol`.
    pub fn solve(&self, kernel: &[Vec<Row>], warm: &[f64], tol: f64) -> Vec<f64> {
        let mut v = warm.to_vec();
        loop {
            let next = self.bellman(kernel, &v);
            let diff = sup_diff(&next, &v);
            v = next;
            if diff <= tol * (1.0 - self.config.gamma) {
                return v;
            }
        }
    }

    /// Softmax over feasible actions at temperature `config.temperature`.
    pub fn softmax_policy(&self, q: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        q.iter()
            .map(|qs| {
                let feas: Vec<usize> = (0..self.actions).filter(|&a| qs[a].is_finite()).collect();
                let logits: Vec<f64> = feas.iter().map(|&a| qs[a] / self.config.temperature).collect();
                let p = softmax(&logits)?;
                let mut full = vec![0.0; self.actions];
                for (&a, pa) in feas.iter().zip(p) {
                    full[a] = pa;
                }
                Ok(full)
            })
            .collect()
    }

    /// Exact value of a stochastic policy by iterating its Bellman operator.
    pub fn evaluate(&self, kernel: &[Vec<Row>], pi: &[Vec<f64>], warm: &[f64], tol: f64) -> Vec<f64> {
        let g = self.config.gamma;
        let mut v = warm.to_vec();
        loop {
            let next: Vec<f64> = (0..self.states)
                .map(|s| {
                    (0..self.actions)
                        .filter(|&a| pi[s][a] > 0.0)
                        .map(|a| {
                            let r = self.reward[s][a].unwrap_or(0.0);
                            pi[s][a] * (r + g * kernel[s][a].iter().map(|&(t, p)| p * v[t]).sum::<f64>())
                        })
                        .sum()
                })
                .collect();
            let diff = sup_diff(&next, &v);
            v = next;
            if diff <= tol * (1.0 - g) {
                return v;
            }
        }
    }

    /// `max_{s,a} ‖P_1(·|s,a) − P_2(·|s,a)‖₁`.
    pub fn kernel_distance(&self, k1: &[Vec<Row>], k2: &[Vec<Row>]) -> f64 {
        let mut worst = 0.0f64;
        let mut dense = vec![0.0; self.states];
        for s in 0..self.states {
            for a in 0..self.actions {
                for &(t, p) in &k1[s][a] {
                    dense[t] += p;
                }
                for &(t, p) in &k2[s][a] {
                    dense[t] -= p;
                }
                let mut d = 0.0;
                for &(t, _) in k1[s][a].iter().chain(&k2[s][a]) {
                    d += dense[t].abs();
                    dense[t] = 0.0;
                }
                worst = worst.max(d);
            }
        }
        worst
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub delta: f64,
    pub gamma_path: Vec<f64>,
    /// State-averaged `V*_t − V^{π_t}_t`.
    pub instantaneous: Vec<f64>,
    pub cumulative: Vec<f64>,
    /// `‖V*_t − V*_{t−1}‖_∞`.
    pub value_diffs: Vec<f64>,
    /// Largest `‖P_t − P_{t−1}‖₁ / δ` over realised steps.
    pub lipschitz: f64,
    pub stability_bound: f64,
    pub stability_holds: bool,
    /// `2γ L̂ R_max δT/(1−γ)²`.
    pub regret_bound: f64,
}

impl RegretTrace {
    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// The cumulative column is the running sum of the instantaneous one.
    pub fn is_prefix_sum(&self) -> bool {
        let mut acc = 0.0;
        self.instantaneous.len() == self.cumulative.len()
            && self.instantaneous.iter().zip(&self.cumulative).all(|(r, c)| {
                acc += r;
                acc == *c
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftStudyConfig {
    pub mdp: DriftMdpConfig,
    pub horizon: usize,
    /// Decay rate range in 1/ms.
    pub low: f64,
    pub high: f64,
    pub tolerance: f64,
}

impl Default for DriftStudyConfig {
    fn default() -> Self {
        Self {
            mdp: DriftMdpConfig::default(),
            horizon: 2000,
            low: 0.005,
            high: 0.1,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftStudy {
    pub traces: Vec<RegretTrace>,
    /// `R_T` against `δT`.
    pub fit: LinearFit,
}

/// One trace: the oracle re-solves under the current rate every step, the
/// learner applies a single Bellman backup under the previous step's rate
/// and acts softmax-greedily on the result.
pub fn drift_trace(mdp: &DriftMdp, cfg: &DriftStudyConfig, delta: f64) -> Result<RegretTrace> {
    let sched = DriftSchedule {
        delta,
        budget: delta * cfg.horizon as f64,
        low: cfg.low,
        high: cfg.high,
    };
    sched.validate()?;
    let path = sched.path(0.5 * (cfg.low + cfg.high), cfg.horizon);
    let g = mdp.config.gamma;
    let zero = vec![0.0; mdp.states];
    let mut k_prev = mdp.kernel(path[0]);
    let mut v_star = mdp.solve(&k_prev, &zero, cfg.tolerance);
    let mut v_learn = v_star.clone();
    let mut v_pi = v_star.clone();
    let mut inst = Vec::with_capacity(cfg.horizon);
    let mut cum = Vec::with_capacity(cfg.horizon);
    let mut diffs = Vec::with_capacity(cfg.horizon);
    let mut kdist = 0.0f64;
    let mut acc = 0.0;
    for t in 1..=cfg.horizon {
        let k_now = mdp.kernel(path[t]);
        kdist = kdist.max(mdp.kernel_distance(&k_now, &k_prev));
        let v_new = mdp.solve(&k_now, &v_star, cfg.tolerance);
        diffs.push(sup_diff(&v_new, &v_star));
        v_star = v_new;

        let q = mdp.q_values(&k_prev, &v_learn);
        v_learn = q
            .iter()
            .map(|qs| qs.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let q_learn = mdp.q_values(&k_prev, &v_learn);
        let pi = mdp.softmax_policy(&q_learn)?;
        v_pi = mdp.evaluate(&k_now, &pi, &v_pi, cfg.tolerance);
        let r = v_star.iter().zip(&v_pi).map(|(a, b)| a - b).sum::<f64>() / mdp.states as f64;
        acc += r;
        inst.push(r);
        cum.push(acc);
        k_prev = k_now;
    }
    let lipschitz = if delta > 0.0 { kdist / delta } else { 0.0 };
    let r_max = 1.0;
    let stability_bound = g * lipschitz * r_max * delta / (1.0 - g).powi(2);
    // Slack covers the solver tolerance on both values.
    let slack = 2.0 * cfg.tolerance + 1e-12;
    Ok(RegretTrace {
        delta,
        stability_holds: diffs.iter().all(|&d| d <= stability_bound + slack),
        regret_bound: 2.0 * g * lipschitz * r_max * delta * cfg.horizon as f64 / (1.0 - g).powi(2),
        gamma_path: path,
        instantaneous: inst,
        cumulative: cum,
        value_diffs: diffs,
        lipschitz,
        stability_bound,
    })
}

pub fn run_drift_study(deltas: &[f64], cfg: &DriftStudyConfig) -> Result<DriftStudy> {
    let mdp = DriftMdp::new(cfg.mdp)?;
    let traces = deltas
        .iter()
        .map(|&d| drift_trace(&mdp, cfg, d))
        .collect::<Result<Vec<_>>>()?;
    let x: Vec<f64> = traces.iter().map(|t| t.delta * cfg.horizon as f64).collect();
    let y: Vec<f64> = traces.iter().map(RegretTrace::total).collect();
    Ok(DriftStudy {
        fit: linear_fit(&x, &y),
        traces,
    })
}
