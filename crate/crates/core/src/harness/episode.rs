//! One episode: observe, decide per request, act, decay, log.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::policies::{DecisionContext, RoutingPolicy};
use super::scenario::Scenario;
use crate::baselines::{dqn_input, DqnTransition};
use crate::belief::{BeliefFilter, BeliefState};
use crate::gnn::{Decision, ReplayItem};
use crate::netmodel::{
    apply_action, apply_adversary, observe, step_decoherence, Action, ActionKind, DemandMatrix, LinkKind,
    NetworkGraph, Request,
};
use crate::planner::Transition;
use crate::routing::{candidates, request_features};
use crate::{rng, Error, Result};

/// Everything an episode needs that does not depend on its seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: Scenario,
    pub network: NetworkGraph,
    pub demand: DemandMatrix,
    /// Filter with kernels cached from earlier episodes.
    pub filter: BeliefFilter,
    pub penalty: f64,
}

impl Prepared {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let network = scenario.network()?;
        let demand = scenario.demand_matrix(&network)?;
        let filter = scenario.belief_filter()?;
        let penalty = Scenario::noise_penalty(&network);
        Ok(Self {
            scenario,
            network,
            demand,
            filter,
            penalty,
        })
    }

    /// Same network and demand shape with the total rate scaled to `rate`.
    pub fn with_rate(&self, rate: f64) -> Result<Self> {
        let mut p = self.clone();
        let total = self.demand.total();
        p.demand = if total > 0.0 {
            self.demand.scaled(rate / total)?
        } else {
            self.demand.clone()
        };
        p.scenario.demand.total_rate = rate;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Collect {
    pub transitions: bool,
    pub replay: bool,
    pub dqn: bool,
    pub imitation: bool,
}

impl Collect {
    fn any(&self) -> bool {
        self.transitions || self.replay || self.dqn || self.imitation
    }
}

#[derive(Debug, Clone, Default)]
pub struct Experience {
    pub transitions: Vec<Transition>,
    pub replay: Vec<ReplayItem>,
    pub dqn: Vec<DqnTransition>,
    /// Graph decisions with the planner's distribution as target.
    pub imitation: Vec<(Decision, Vec<f64>)>,
}

impl Experience {
    pub fn extend(&mut self, other: Experience) {
        self.transitions.extend(other.transitions);
        self.replay.extend(other.replay);
        self.dqn.extend(other.dqn);
        self.imitation.extend(other.imitation);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub request: u64,
    pub action: Action,
    pub alpha: Option<f64>,
    pub kl: Option<f64>,
    /// Wall time of the policy call.
    pub time_ns: u64,
    pub gnn_ns: Option<u64>,
    pub pomdp_ns: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub belief_hash: u64,
    /// Number of link readings in this step's observation.
    pub readings: usize,
    pub arrivals: usize,
    pub expired: usize,
    pub decisions: Vec<DecisionRecord>,
    /// (fidelity, met the request's minimum) per delivered pair.
    pub deliveries: Vec<(f64, bool)>,
    pub reward: f64,
    /// Stored halves over total capacity, after the step.
    pub memory: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub steps: u64,
    pub requests: u64,
    pub delivered: u64,
    pub successes: u64,
    pub violations: u64,
    pub expired: u64,
    /// Successful deliveries over arrived requests.
    pub delivery_rate: f64,
    /// Mean fidelity over every delivered pair; NaN when none.
    pub avg_fidelity: f64,
    pub total_reward: f64,
    pub peak_memory: f64,
    pub mean_memory: f64,
}

impl Summary {
    pub fn from_steps(steps: &[StepRecord]) -> Self {
        let mut s = Summary {
            steps: steps.len() as u64,
            ..Default::default()
        };
        let mut fsum = 0.0;
        let mut msum = 0.0;
        for r in steps {
            s.requests += r.arrivals as u64;
            s.expired += r.expired as u64;
            for &(f, ok) in &r.deliveries {
                s.delivered += 1;
                fsum += f;
                if ok {
                    s.successes += 1;
                } else {
                    s.violations += 1;
                }
            }
            s.total_reward += r.reward;
            s.peak_memory = s.peak_memory.max(r.memory);
            msum += r.memory;
        }
        s.delivery_rate = if s.requests > 0 {
            s.successes as f64 / s.requests as f64
        } else {
            0.0
        };
        s.avg_fidelity = if s.delivered > 0 {
            fsum / s.delivered as f64
        } else {
            f64::NAN
        };
        s.mean_memory = if steps.is_empty() { 0.0 } else { msum / steps.len() as f64 };
        s
    }

    /// Field-wise equality with NaN equal to NaN and a relative float tolerance.
    pub fn matches(&self, other: &Summary) -> bool {
        let close = |a: f64, b: f64| (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
        self.steps == other.steps
            && self.requests == other.requests
            && self.delivered == other.delivered
            && self.successes == other.successes
            && self.violations == other.violations
            && self.expired == other.expired
            && close(self.delivery_rate, other.delivery_rate)
            && close(self.avg_fidelity, other.avg_fidelity)
            && close(self.total_reward, other.total_reward)
            && close(self.peak_memory, other.peak_memory)
            && close(self.mean_memory, other.mean_memory)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub scenario: String,
    pub policy: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub summary: Summary,
}

impl EpisodeRecord {
    pub fn is_consistent(&self) -> bool {
        self.summary.matches(&Summary::from_steps(&self.steps))
    }

    pub fn decisions(&self) -> impl Iterator<Item = &DecisionRecord> {
        self.steps.iter().flat_map(|s| s.decisions.iter())
    }

    /// The record with wall-clock fields zeroed; everything else is a
    /// function of the scenario, policy and seed.
    pub fn without_timing(&self) -> EpisodeRecord {
        let mut r = self.clone();
        for d in r.steps.iter_mut().flat_map(|s| s.decisions.iter_mut()) {
            d.time_ns = 0;
            d.gnn_ns = d.gnn_ns.map(|_| 0);
            d.pomdp_ns = d.pomdp_ns.map(|_| 0);
        }
        r
    }
}

/// Learning signal of one decision: +1 for a delivery meeting the minimum.
pub const SUCCESS_REWARD: f64 = 1.0;

struct Pending {
    features: Vec<f64>,
    kind: usize,
    reward: f64,
    dqn: Option<Vec<f64>>,
    decision: Option<(Decision, usize)>,
}

fn close(pending: Pending, next: Option<(&[f64], Option<&Decision>, Option<Vec<Vec<f64>>>)>, collect: &Collect, exp: &mut Experience) {
    if collect.transitions {
        exp.transitions.push(Transition {
            features: pending.features,
            action: pending.kind,
            reward: pending.reward,
            next: next.as_ref().map(|n| n.0.to_vec()),
        });
    }
    if collect.dqn {
        if let Some(input) = pending.dqn {
            exp.dqn.push(DqnTransition {
                input,
                reward: pending.reward,
                next: next.as_ref().and_then(|n| n.2.clone()),
            });
        }
    }
    if collect.replay {
        if let Some((decision, action)) = pending.decision {
            let next_decision = match next {
                None => None,
                Some((_, Some(d), _)) => Some(d.clone()),
                // The next decision carried no graph; drop the item.
                Some((_, None, _)) => return,
            };
            exp.replay.push(ReplayItem {
                decision,
                action,
                reward: pending.reward,
                next: next_decision,
            });
        }
    }
}

/// Run `policy` on the scenario with `seed`.
pub fn run_episode(
    prep: &mut Prepared,
    policy: &mut dyn RoutingPolicy,
    seed: u64,
    collect: Collect,
) -> Result<(EpisodeRecord, Experience)> {
    let sc = &prep.scenario;
    let mut g = prep.network.clone();
    *g.rng_mut() = rng::stream(seed, "dynamics");
    let mut gen = sc.requests(prep.demand.clone(), seed)?;
    let mut obs_rng = rng::stream(seed, "observation");
    let mut pol_rng = rng::stream(seed, "policy");
    let filter = &mut prep.filter;
    let mut b: BeliefState = filter.init(&g.observable());
    let drift_path = sc.drift.map(|d| d.path(0.5 * (d.low + d.high), sc.horizon as usize));
    let base_rates: Vec<f64> = g.links.iter().map(|l| l.state.decay_rate).collect();
    policy.reset();

    let mut active: Vec<Request> = Vec::new();
    let mut pending: HashMap<u64, Pending> = HashMap::new();
    let mut exp = Experience::default();
    let mut steps = Vec::with_capacity(sc.horizon as usize);
    let capacity = g.total_capacity().max(1) as f64;

    for step in 0..sc.horizon {
        let at = |e: Error| e.at_step(step);
        let arrivals = gen.generate(step);
        let n_arrivals = arrivals.len();
        active.extend(arrivals);
        let before = active.len();
        let mut expired_ids = Vec::new();
        active.retain(|r| {
            let keep = r.deadline >= step;
            if !keep {
                expired_ids.push(r.id);
            }
            keep
        });
        let expired = before - active.len();
        for id in expired_ids {
            if let Some(p) = pending.remove(&id) {
                close(p, None, &collect, &mut exp);
            }
        }

        let probed: Vec<usize> = (0..g.links.len()).filter(|&l| g.links[l].state.alive).collect();
        let obs = observe(
            &g,
            &probed,
            |l| filter.probe_threshold(&b, l),
            sc.filter.g_flip,
            &mut obs_rng,
        )
        .map_err(at)?;
        filter.update(&mut b, &obs).map_err(at)?;
        let belief_hash = b.fingerprint();

        let mut decisions = Vec::new();
        let mut deliveries = Vec::new();
        let mut closed = Vec::new();
        for req in active.iter().take(sc.decisions_per_step) {
            let view = g.observable();
            let cands = candidates(&view, &b, req, step, &sc.routing);
            let features = request_features(&view, &b, req, step);
            let record = collect.replay || collect.imitation;
            let ctx = DecisionContext {
                view: &view,
                belief: &b,
                request: req,
                step,
                candidates: &cands,
                features: &features,
                record,
            };
            let t = Instant::now();
            let choice = policy.decide(&ctx, &mut pol_rng).map_err(at)?;
            let time_ns = t.elapsed().as_nanos() as u64;

            if collect.any() {
                let dqn_next = collect
                    .dqn
                    .then(|| cands.iter().map(|c| dqn_input(&features, c)).collect::<Vec<_>>());
                if let Some(prev) = pending.remove(&req.id) {
                    close(
                        prev,
                        Some((&features, choice.decision.as_ref(), dqn_next)),
                        &collect,
                        &mut exp,
                    );
                }
                if collect.imitation {
                    if let (Some(d), Some(target)) = (&choice.decision, &choice.pomdp_probs) {
                        exp.imitation.push((d.clone(), target.clone()));
                    }
                }
                if let Some(i) = choice.index {
                    pending.insert(
                        req.id,
                        Pending {
                            features: features.to_vec(),
                            kind: choice.action.kind().index(),
                            reward: 0.0,
                            dqn: collect.dqn.then(|| dqn_input(&features, &cands[i])),
                            decision: choice.decision.clone().map(|d| (d, i)),
                        },
                    );
                }
            }

            decisions.push(DecisionRecord {
                request: req.id,
                action: choice.action,
                alpha: choice.alpha,
                kl: choice.kl,
                time_ns,
                gnn_ns: choice.gnn_ns,
                pomdp_ns: choice.pomdp_ns,
            });
            let out = apply_action(&mut g, choice.action).map_err(at)?;
            filter.apply_outcome(&mut b, &out, &g.observable()).map_err(at)?;
            if let Some(((u, v), f)) = out.delivered {
                // Only deliveries of the request's own pair close it.
                if (u, v) == (req.source.min(req.destination), req.source.max(req.destination)) {
                    let ok = f >= req.min_fidelity;
                    deliveries.push((f, ok));
                    closed.push(req.id);
                    if let Some(mut p) = pending.remove(&req.id) {
                        if ok {
                            p.reward += SUCCESS_REWARD;
                        }
                        close(p, None, &collect, &mut exp);
                    }
                }
            }
        }
        active.retain(|r| !closed.contains(&r.id));

        step_decoherence(&mut g, sc.physics.dt_ms);
        if let Some(path) = &drift_path {
            let shift = path[(step + 1) as usize] - path[0];
            for (l, base) in g.links.iter_mut().zip(&base_rates) {
                if l.kind == LinkKind::Physical {
                    l.state.decay_rate = (base + shift).max(0.0);
                }
            }
        }
        apply_adversary(&mut g, &sc.adversary).map_err(at)?;
        filter.predict_step(&mut b, &g.observable()).map_err(at)?;

        let successes = deliveries.iter().filter(|d| d.1).count() as f64;
        steps.push(StepRecord {
            step,
            belief_hash,
            readings: obs.readings.len(),
            arrivals: n_arrivals,
            expired,
            decisions,
            deliveries,
            reward: successes - sc.reward_penalty * prep.penalty,
            memory: g.total_occupancy() as f64 / capacity,
        });
    }
    let summary = Summary::from_steps(&steps);
    Ok((
        EpisodeRecord {
            scenario: sc.name.clone(),
            policy: policy.name().to_string(),
            seed,
            steps,
            summary,
        },
        exp,
    ))
}

/// Independent second pass over the step log: recount deliveries, memory
/// and violations from the raw records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub deliveries: u64,
    pub violations: u64,
    pub memory_mean: f64,
    pub deliver_actions: u64,
}

pub fn audit(rec: &EpisodeRecord) -> Audit {
    let mut a = Audit {
        deliveries: 0,
        violations: 0,
        memory_mean: 0.0,
        deliver_actions: 0,
    };
    for s in &rec.steps {
        a.deliveries += s.deliveries.len() as u64;
        a.violations += s.deliveries.iter().filter(|d| !d.1).count() as u64;
        a.memory_mean += s.memory;
        a.deliver_actions += s
            .decisions
            .iter()
            .filter(|d| d.action.kind() == ActionKind::Deliver)
            .count() as u64;
    }
    if !rec.steps.is_empty() {
        a.memory_mean /= rec.steps.len() as f64;
    }
    a
}
