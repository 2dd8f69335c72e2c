//! Policies the episode runner can drive, behind one trait.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, DqnLite, FloodingConfig, QdrConfig};
use crate::belief::BeliefState;
use crate::gnn::{self, embed, score, Decision, Embedding, GnnParams, GraphInput};
use crate::hybrid::{fuse_probs, kl, TrustState};
use crate::netmodel::{Action, ObservableView, Request};
use crate::planner::RoutingPlanner;
use crate::policy::{softmax, PolicyDistribution};
use crate::rng::Stream;
use crate::routing::Candidate;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Hybrid,
    Fmsp,
    Qdr,
    Gps,
    Dqn,
    Flooding,
    GnnOnly,
    PomdpOnly,
    FixedAlpha,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 9] = [
        PolicyKind::Hybrid,
        PolicyKind::Fmsp,
        PolicyKind::Qdr,
        PolicyKind::Gps,
        PolicyKind::Dqn,
        PolicyKind::Flooding,
        PolicyKind::GnnOnly,
        PolicyKind::PomdpOnly,
        PolicyKind::FixedAlpha,
    ];

    /// The comparison set for the hybrid.
    pub const BASELINES: [PolicyKind; 5] = [
        PolicyKind::Fmsp,
        PolicyKind::Qdr,
        PolicyKind::Gps,
        PolicyKind::Dqn,
        PolicyKind::Flooding,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Hybrid => "hybrid",
            PolicyKind::Fmsp => "fmsp",
            PolicyKind::Qdr => "qdr",
            PolicyKind::Gps => "gps",
            PolicyKind::Dqn => "dqn",
            PolicyKind::Flooding => "flooding",
            PolicyKind::GnnOnly => "gnn_only",
            PolicyKind::PomdpOnly => "pomdp_only",
            PolicyKind::FixedAlpha => "fixed_alpha",
        }
    }

    pub fn needs_models(self) -> bool {
        matches!(
            self,
            PolicyKind::Hybrid | PolicyKind::Dqn | PolicyKind::GnnOnly | PolicyKind::PomdpOnly | PolicyKind::FixedAlpha
        )
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParam(format!("unknown policy {s}")))
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// What a policy sees for one request.
pub struct DecisionContext<'a, 'v> {
    pub view: &'a ObservableView<'v>,
    pub belief: &'a BeliefState,
    pub request: &'a Request,
    pub step: u64,
    pub candidates: &'a [Candidate],
    /// Request features the planner clusters on.
    pub features: &'a [f64],
    /// Keep the graph decision and planner target for training.
    pub record: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Choice {
    pub action: Action,
    /// Position in the candidate list, when the action came from it.
    pub index: Option<usize>,
    pub alpha: Option<f64>,
    pub kl: Option<f64>,
    pub gnn_ns: Option<u64>,
    pub pomdp_ns: Option<u64>,
    pub decision: Option<Decision>,
    pub pomdp_probs: Option<Vec<f64>>,
}

pub trait RoutingPolicy {
    fn name(&self) -> &str;
    fn decide(&mut self, ctx: &DecisionContext<'_, '_>, rng: &mut Stream) -> Result<Choice>;
    /// Called at the start of every episode.
    fn reset(&mut self) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridConfig {
    pub kappa: f64,
    /// Offset c₀ in α = σ(c₀ − κ·KL).
    pub offset: f64,
    /// Sample the component first and call the planner only when it is
    /// picked; α then comes from the last planner call.
    pub lazy: bool,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            offset: 0.0,
            lazy: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TrustMode {
    Adaptive,
    Fixed(f64),
}

fn elapsed_ns(t: Instant) -> u64 {
    t.elapsed().as_nanos() as u64
}

/// The graph embedding is refreshed once per step and shared by the step's
/// decisions; the scorer always sees current action features.
#[derive(Debug, Clone, Default)]
struct StepEmbedding {
    step: Option<u64>,
    graph: Option<Arc<GraphInput>>,
    emb: Option<Embedding>,
}

impl StepEmbedding {
    fn get(&mut self, p: &GnnParams, ctx: &DecisionContext<'_, '_>) -> Result<(Arc<GraphInput>, &Embedding)> {
        if self.step != Some(ctx.step) || self.emb.is_none() {
            let g = Arc::new(gnn::graph_input(ctx.view, ctx.belief));
            self.emb = Some(embed(p, &g)?);
            self.graph = Some(g);
            self.step = Some(ctx.step);
        }
        Ok((
            self.graph.clone().expect("set above"),
            self.emb.as_ref().expect("set above"),
        ))
    }
}

pub struct HybridPolicy {
    name: String,
    pub gnn: Arc<GnnParams>,
    pub planner: Arc<RoutingPlanner>,
    pub mode: TrustMode,
    pub config: HybridConfig,
    pub trust: TrustState,
    cache: StepEmbedding,
}

impl HybridPolicy {
    pub fn new(
        name: &str,
        gnn: Arc<GnnParams>,
        planner: Arc<RoutingPlanner>,
        mode: TrustMode,
        config: HybridConfig,
    ) -> Self {
        Self {
            name: name.into(),
            gnn,
            planner,
            mode,
            config,
            trust: TrustState::new(config.kappa, config.offset),
            cache: StepEmbedding::default(),
        }
    }

    fn gnn_probs(&mut self, ctx: &DecisionContext<'_, '_>) -> Result<(Vec<f64>, Decision)> {
        let (graph, emb) = self.cache.get(&self.gnn, ctx)?;
        let queries = gnn::queries(ctx.view, ctx.request, ctx.candidates);
        let (logits, _) = score(&self.gnn, emb, &queries)?;
        Ok((softmax(&logits)?, Decision { graph, queries }))
    }

    fn pomdp_probs(&self, ctx: &DecisionContext<'_, '_>) -> Result<Vec<f64>> {
        Ok(self.planner.policy(ctx.features, ctx.candidates)?.probs)
    }
}

fn sample(probs: &[f64], rng: &mut Stream) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

impl RoutingPolicy for HybridPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn reset(&mut self) {
        self.cache = StepEmbedding::default();
        self.trust = TrustState::new(self.config.kappa, self.config.offset);
    }

    fn decide(&mut self, ctx: &DecisionContext<'_, '_>, rng: &mut Stream) -> Result<Choice> {
        if ctx.candidates.is_empty() {
            return Err(Error::NoFeasibleAction);
        }
        let mut out = Choice::default();
        let fixed = match self.mode {
            TrustMode::Fixed(a) => Some(a),
            TrustMode::Adaptive => None,
        };
        let want_gnn = fixed != Some(0.0) || ctx.record;
        let mut pi_g = None;
        if want_gnn {
            let t = Instant::now();
            let (p, d) = self.gnn_probs(ctx)?;
            out.gnn_ns = Some(elapsed_ns(t));
            pi_g = Some(p);
            if ctx.record {
                out.decision = Some(d);
            }
        }

        let probs = if self.config.lazy && fixed != Some(0.0) {
            let alpha = fixed.unwrap_or(self.trust.alpha);
            out.alpha = Some(alpha);
            let pg = pi_g.expect("gnn computed");
            if rng.random::<f64>() < alpha {
                pg
            } else {
                let t = Instant::now();
                let pp = self.pomdp_probs(ctx)?;
                out.pomdp_ns = Some(elapsed_ns(t));
                if fixed.is_none() {
                    self.trust.update(&pp, &pg)?;
                }
                out.kl = Some(kl(&pp, &pg));
                if ctx.record {
                    out.pomdp_probs = Some(pp.clone());
                }
                pp
            }
        } else {
            let pp = if fixed == Some(1.0) && !ctx.record {
                None
            } else {
                let t = Instant::now();
                let pp = self.pomdp_probs(ctx)?;
                out.pomdp_ns = Some(elapsed_ns(t));
                Some(pp)
            };
            let alpha = match (fixed, &pp, &pi_g) {
                (Some(a), _, _) => a,
                (None, Some(pp), Some(pg)) => self.trust.update(pp, pg)?,
                _ => unreachable!("adaptive mode computes both components"),
            };
            if let (Some(pp), Some(pg)) = (&pp, &pi_g) {
                out.kl = Some(kl(pp, pg));
            }
            out.alpha = Some(alpha);
            let fused = match (&pi_g, &pp) {
                (Some(pg), Some(pp)) => fuse_probs(pg, pp, alpha)?,
                (Some(pg), None) => pg.clone(),
                (None, Some(pp)) => pp.clone(),
                (None, None) => unreachable!(),
            };
            if ctx.record {
                out.pomdp_probs = pp;
            }
            fused
        };
        let i = sample(&probs, rng);
        out.index = Some(i);
        out.action = ctx.candidates[i].action;
        Ok(out)
    }
}

pub struct BaselinePolicy {
    pub kind: PolicyKind,
    pub qdr: QdrConfig,
    pub flooding: FloodingConfig,
    pub dqn: Option<Arc<DqnLite>>,
}

impl BaselinePolicy {
    pub fn new(kind: PolicyKind, dqn: Option<Arc<DqnLite>>) -> Result<Self> {
        if !matches!(
            kind,
            PolicyKind::Fmsp | PolicyKind::Qdr | PolicyKind::Gps | PolicyKind::Dqn | PolicyKind::Flooding
        ) {
            return Err(Error::InvalidParam(format!("{kind} is not a baseline")));
        }
        if kind == PolicyKind::Dqn && dqn.is_none() {
            return Err(Error::InvalidParam("dqn baseline needs trained weights".into()));
        }
        Ok(Self {
            kind,
            qdr: QdrConfig::default(),
            flooding: FloodingConfig::default(),
            dqn,
        })
    }
}

impl RoutingPolicy for BaselinePolicy {
    fn name(&self) -> &str {
        self.kind.name()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_, '_>, rng: &mut Stream) -> Result<Choice> {
        let (view, b, req) = (ctx.view, ctx.belief, ctx.request);
        let dist: PolicyDistribution<Action> = match self.kind {
            PolicyKind::Fmsp => baselines::fmsp_route(view, b, req)?,
            PolicyKind::Qdr => baselines::qdr_route(view, b, req, &self.qdr)?,
            PolicyKind::Gps => baselines::gps_greedy(view, b, req, ctx.candidates),
            PolicyKind::Flooding => baselines::flooding(view, req, &self.flooding)?,
            PolicyKind::Dqn => {
                let q = self.dqn.as_ref().expect("checked in new");
                let d = q.policy(ctx.features, ctx.candidates)?;
                let i = sample(&d.probs, rng);
                return Ok(Choice {
                    action: ctx.candidates[i].action,
                    index: Some(i),
                    ..Default::default()
                });
            }
            _ => unreachable!("checked in new"),
        };
        let action = dist.actions[sample(&dist.probs, rng)];
        Ok(Choice {
            action,
            index: ctx.candidates.iter().position(|c| c.action == action),
            ..Default::default()
        })
    }
}

/// Candidate-scored exploration policy used to collect planner rollouts:
/// the greedy baseline, with a uniformly random candidate at rate `epsilon`.
pub struct ExplorePolicy {
    pub epsilon: f64,
}

impl RoutingPolicy for ExplorePolicy {
    fn name(&self) -> &str {
        "explore"
    }

    fn decide(&mut self, ctx: &DecisionContext<'_, '_>, rng: &mut Stream) -> Result<Choice> {
        let i = if rng.random::<f64>() < self.epsilon {
            rng.random_range(0..ctx.candidates.len())
        } else {
            let a = baselines::gps_greedy(ctx.view, ctx.belief, ctx.request, ctx.candidates).actions[0];
            ctx.candidates.iter().position(|c| c.action == a).unwrap_or(0)
        };
        Ok(Choice {
            action: ctx.candidates[i].action,
            index: Some(i),
            ..Default::default()
        })
    }
}

/// ε-greedy DQN-lite used while collecting its own replay.
pub struct DqnExplore {
    pub dqn: Arc<DqnLite>,
}

impl RoutingPolicy for DqnExplore {
    fn name(&self) -> &str {
        "dqn_explore"
    }

    fn decide(&mut self, ctx: &DecisionContext<'_, '_>, rng: &mut Stream) -> Result<Choice> {
        let i = self.dqn.explore(ctx.features, ctx.candidates, rng)?;
        Ok(Choice {
            action: ctx.candidates[i].action,
            index: Some(i),
            ..Default::default()
        })
    }
}
