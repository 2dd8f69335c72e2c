//! Imitation, actor-critic and REINFORCE machinery over flat parameter vectors.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::net::{backward_into, critic_backward, critic_values, embed, score, ActionQuery, Embedding, GnnParams, GraphInput};
use crate::policy::{softmax, PROB_FLOOR};
use crate::{Error, Result};

/// A scored decision: the graph at decision time and the candidate queries.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub graph: Arc<GraphInput>,
    pub queries: Vec<ActionQuery>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayItem {
    pub decision: Decision,
    pub action: usize,
    pub reward: f64,
    /// Next decision of the same request; `None` when it closed.
    pub next: Option<Decision>,
}

/// Reuses the embedding while consecutive decisions share a graph.
struct EmbedCache {
    key: Option<*const GraphInput>,
    emb: Option<Embedding>,
}

impl EmbedCache {
    fn new() -> Self {
        Self { key: None, emb: None }
    }

    fn get(&mut self, p: &GnnParams, g: &Arc<GraphInput>) -> Result<&Embedding> {
        let ptr = Arc::as_ptr(g);
        if self.key != Some(ptr) || self.emb.is_none() {
            self.emb = Some(embed(p, g)?);
            self.key = Some(ptr);
        }
        Ok(self.emb.as_ref().expect("filled above"))
    }
}

fn kl(target: &[f64], pi: &[f64]) -> f64 {
    target
        .iter()
        .zip(pi)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, q)| t * (t / q.max(PROB_FLOOR)).ln())
        .sum()
}

/// Mean `KL(target ‖ π_θ)` over the batch and its θ-gradient.
pub fn imitation_gradient(p: &GnnParams, batch: &[(Decision, Vec<f64>)]) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; p.theta.len()];
    let mut loss = 0.0;
    let mut cache = EmbedCache::new();
    let w = 1.0 / batch.len().max(1) as f64;
    for (d, target) in batch {
        if target.len() != d.queries.len() {
            return Err(Error::ShapeMismatch(format!(
                "target over {} actions, decision has {}",
                target.len(),
                d.queries.len()
            )));
        }
        let emb = cache.get(p, &d.graph)?;
        let (logits, _) = score(p, emb, &d.queries)?;
        let pi = softmax(&logits)?;
        loss += w * kl(target, &pi);
        let dl: Vec<f64> = pi.iter().zip(target).map(|(a, b)| w * (a - b)).collect();
        backward_into(p, &d.graph, emb, &d.queries, &dl, &mut grad)?;
    }
    Ok((loss, grad))
}

/// One plain gradient step on the mean KL; returns the pre-step loss.
pub fn imitation_step(p: &mut GnnParams, batch: &[(Decision, Vec<f64>)], lr: f64) -> Result<f64> {
    if !(lr > 0.0) {
        return Err(Error::InvalidParam("learning rate must be > 0".into()));
    }
    let (loss, grad) = imitation_gradient(p, batch)?;
    for (t, g) in p.theta.iter_mut().zip(&grad) {
        *t -= lr * g;
    }
    Ok(loss)
}

/// `target ← τ·source + (1−τ)·target`.
pub fn soft_update(target: &mut [f64], source: &[f64], tau: f64) {
    for (t, s) in target.iter_mut().zip(source) {
        *t = tau * s + (1.0 - tau) * *t;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticStep {
    pub critic_mse: f64,
    pub mean_advantage: f64,
    pub critic_grad_norm: f64,
    pub actor_grad_norm: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Critic and actor gradients for a replay batch.
///
/// The critic regresses on `y = r + γ Σ_a′ π_θ(a′|b′) Q_target(b′, a′)`. The
/// actor ascends `log π(a|b) · A` with `A = Q(b,a) − Σ π Q` when `baseline`
/// is set and `A = Q(b,a)` otherwise. Both gradients are of losses to be
/// minimised.
pub fn actor_critic_gradients(
    p: &GnnParams,
    batch: &[ReplayItem],
    gamma: f64,
    baseline: bool,
) -> Result<(Vec<f64>, Vec<f64>, CriticStep)> {
    if batch.is_empty() {
        return Err(Error::InvalidParam("empty replay batch".into()));
    }
    let w = 1.0 / batch.len() as f64;
    let mut g_theta = vec![0.0; p.theta.len()];
    let mut g_psi = vec![0.0; p.psi.len()];
    let mut mse = 0.0;
    let mut adv_sum = 0.0;
    let mut cache = EmbedCache::new();
    for item in batch {
        let y = match &item.next {
            None => item.reward,
            Some(nd) => {
                let emb = embed(p, &nd.graph)?;
                let (logits, _) = score(p, &emb, &nd.queries)?;
                let pi = softmax(&logits)?;
                let (qt, _) = critic_values(&p.layout, &p.psi_target, &emb, &nd.queries)?;
                item.reward + gamma * pi.iter().zip(&qt).map(|(a, b)| a * b).sum::<f64>()
            }
        };
        let d = &item.decision;
        if item.action >= d.queries.len() {
            return Err(Error::ShapeMismatch(format!(
                "action {} outside {} candidates",
                item.action,
                d.queries.len()
            )));
        }
        let emb = cache.get(p, &d.graph)?;
        let (q, qc) = critic_values(&p.layout, &p.psi, emb, &d.queries)?;
        let resid = q[item.action] - y;
        mse += w * resid * resid;
        critic_backward(&p.layout, &p.psi, &qc[item.action], 2.0 * w * resid, &mut g_psi);

        let (logits, _) = score(p, emb, &d.queries)?;
        let pi = softmax(&logits)?;
        let v: f64 = pi.iter().zip(&q).map(|(a, b)| a * b).sum();
        let adv = if baseline { q[item.action] - v } else { q[item.action] };
        adv_sum += w * adv;
        let dl: Vec<f64> = pi
            .iter()
            .enumerate()
            .map(|(i, &pa)| -w * adv * (f64::from(u8::from(i == item.action)) - pa))
            .collect();
        backward_into(p, &d.graph, emb, &d.queries, &dl, &mut g_theta)?;
    }
    let stats = CriticStep {
        critic_mse: mse,
        mean_advantage: adv_sum,
        critic_grad_norm: norm(&g_psi),
        actor_grad_norm: norm(&g_theta),
    };
    Ok((g_theta, g_psi, stats))
}

/// One plain-gradient actor-critic update followed by the target soft update.
pub fn actor_critic_step(
    p: &mut GnnParams,
    batch: &[ReplayItem],
    gamma: f64,
    lr_q: f64,
    lr_pi: f64,
    tau: f64,
) -> Result<CriticStep> {
    let (gt, gp, stats) = actor_critic_gradients(p, batch, gamma, true)?;
    for (t, g) in p.theta.iter_mut().zip(&gt) {
        *t -= lr_pi * g;
    }
    for (t, g) in p.psi.iter_mut().zip(&gp) {
        *t -= lr_q * g;
    }
    soft_update(&mut p.psi_target, &p.psi, tau);
    Ok(stats)
}

/// Adam optimiser state for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<(Decision, usize, f64)>,
}

/// REINFORCE estimate `R(τ)·Σ_t ∇log π(a_t|b_t)` and the norm of the score sum.
pub fn reinforce_gradient(p: &GnnParams, traj: &Trajectory, gamma: f64) -> Result<(Vec<f64>, f64)> {
    let mut score_sum = vec![0.0; p.theta.len()];
    let mut ret = 0.0;
    let mut disc = 1.0;
    let mut cache = EmbedCache::new();
    for (d, a, r) in &traj.steps {
        ret += disc * r;
        disc *= gamma;
        let emb = cache.get(p, &d.graph)?;
        let (logits, _) = score(p, emb, &d.queries)?;
        let pi = softmax(&logits)?;
        // ∇ log π(a) has logit gradient onehot(a) − π; backward adds that.
        let dl: Vec<f64> = pi
            .iter()
            .enumerate()
            .map(|(i, &pa)| f64::from(u8::from(i == *a)) - pa)
            .collect();
        backward_into(p, &d.graph, emb, &d.queries, &dl, &mut score_sum)?;
    }
    let sn = norm(&score_sum);
    Ok((score_sum.into_iter().map(|x| ret * x).collect(), sn))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub trajectories: usize,
    /// Trace of the empirical covariance of the REINFORCE estimate.
    pub variance: f64,
    /// Mean squared norm of the summed score function.
    pub mean_score_sq: f64,
    pub bound: f64,
    pub holds: bool,
}

pub fn gradient_variance(p: &GnnParams, trajectories: &[Trajectory], gamma: f64, r_max: f64) -> Result<VarianceReport> {
    if trajectories.len() < 30 {
        return Err(Error::InsufficientPoints {
            needed: 30,
            got: trajectories.len(),
        });
    }
    let n = trajectories.len() as f64;
    let mut grads = Vec::with_capacity(trajectories.len());
    let mut score_sq = 0.0;
    for t in trajectories {
        let (g, sn) = reinforce_gradient(p, t, gamma)?;
        score_sq += sn * sn / n;
        grads.push(g);
    }
    let dim = p.theta.len();
    let mut mean = vec![0.0; dim];
    for g in &grads {
        for (m, x) in mean.iter_mut().zip(g) {
            *m += x / n;
        }
    }
    let variance = grads
        .iter()
        .map(|g| g.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>())
        .sum::<f64>()
        / n;
    let bound = (r_max / (1.0 - gamma)).powi(2) * score_sq;
    Ok(VarianceReport {
        trajectories: trajectories.len(),
        variance,
        mean_score_sq: score_sq,
        bound,
        holds: variance <= bound * (1.0 + 1e-12) + 1e-12,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretConfig {
    pub steps: usize,
    /// Step size `ν_t = scale/√t`.
    pub scale: f64,
    /// Full-gradient Adam steps used to estimate the best achievable loss.
    pub reference_steps: usize,
    pub reference_lr: f64,
    /// Slope is fitted on `t ≥ fit_from`.
    pub fit_from: usize,
    pub seed: u64,
}

impl Default for RegretConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            scale: 1.0,
            reference_steps: 4000,
            reference_lr: 1e-2,
            fit_from: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretCurve {
    /// Log-spaced checkpoints.
    pub t: Vec<usize>,
    /// `(1/t) Σ_{s≤t} (KL(target ‖ π_θs) − ℓ*)` at each checkpoint.
    pub avg_regret: Vec<f64>,
    pub loss_star: f64,
    pub fit: crate::stats::LinearFit,
}

/// Online imitation of a fixed expert at one decision: each step draws one
/// action from `target` and takes a gradient step on its log-loss, an
/// unbiased estimate of the KL gradient. Regret is measured with the exact
/// KL against the best loss found by a long full-gradient run.
pub fn imitation_regret(p0: &GnnParams, decision: &Decision, target: &[f64], cfg: &RegretConfig) -> Result<RegretCurve> {
    use rand::Rng;
    if target.len() != decision.queries.len() {
        return Err(Error::ShapeMismatch("target and candidate counts differ".into()));
    }
    let exact = |p: &GnnParams| -> Result<f64> {
        let emb = embed(p, &decision.graph)?;
        let (logits, _) = score(p, &emb, &decision.queries)?;
        Ok(kl(target, &softmax(&logits)?))
    };
    let full = vec![(decision.clone(), target.to_vec())];
    let mut reference = p0.clone();
    let mut opt = Adam::new(reference.theta.len(), cfg.reference_lr);
    let mut loss_star = exact(&reference)?;
    for _ in 0..cfg.reference_steps {
        let (loss, grad) = imitation_gradient(&reference, &full)?;
        loss_star = loss_star.min(loss);
        opt.step(&mut reference.theta, &grad);
    }
    loss_star = loss_star.min(exact(&reference)?);

    let mut r = crate::rng::stream(cfg.seed, "imitation-labels");
    let mut p = p0.clone();
    let mut losses = Vec::with_capacity(cfg.steps);
    for t in 1..=cfg.steps {
        losses.push(exact(&p)?);
        let u: f64 = r.random();
        let mut acc = 0.0;
        let a = target
            .iter()
            .position(|&q| {
                acc += q;
                u < acc
            })
            .unwrap_or(target.len() - 1);
        let mut onehot = vec![0.0; target.len()];
        onehot[a] = 1.0;
        let (_, grad) = imitation_gradient(&p, &[(decision.clone(), onehot)])?;
        let lr = cfg.scale / (t as f64).sqrt();
        for (th, g) in p.theta.iter_mut().zip(&grad) {
            *th -= lr * g;
        }
    }
    // Best in hindsight can only be lower than anything visited.
    loss_star = losses.iter().copied().fold(loss_star, f64::min);

    let mut ts = Vec::new();
    let mut k = 1.0f64;
    while (k as usize) <= cfg.steps {
        let t = k as usize;
        if ts.last() != Some(&t) {
            ts.push(t);
        }
        k *= 1.25;
    }
    if ts.last() != Some(&cfg.steps) {
        ts.push(cfg.steps);
    }
    let mut prefix = 0.0;
    let mut avg = Vec::with_capacity(ts.len());
    let mut next = 0;
    for (i, l) in losses.iter().enumerate() {
        prefix += l - loss_star;
        if next < ts.len() && i + 1 == ts[next] {
            avg.push(prefix / (i + 1) as f64);
            next += 1;
        }
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = ts
        .iter()
        .zip(&avg)
        .filter(|(t, a)| **t >= cfg.fit_from && **a > 0.0)
        .map(|(t, a)| ((*t as f64).ln(), a.ln()))
        .unzip();
    let fit = crate::stats::linear_fit(&xs, &ys);
    Ok(RegretCurve {
        t: ts,
        avg_regret: avg,
        loss_star,
        fit,
    })
}
