//! Fitting the planner, the graph policy and the DQN baseline from episodes.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::episode::{run_episode, Collect, Experience, Prepared};
use super::policies::{
    BaselinePolicy, DqnExplore, ExplorePolicy, HybridConfig, HybridPolicy, PolicyKind, RoutingPolicy, TrustMode,
};
use crate::baselines::{DqnConfig, DqnLite};
use crate::gnn::{actor_critic_gradients, imitation_gradient, soft_update, Adam, GnnConfig, GnnParams, ReplayItem};
use crate::planner::{PlannerConfig, RoutingPlanner};
use crate::{rng, Error, Result};

/// Training episodes use seeds from here up, apart from evaluation seeds.
pub const TRAIN_SEED_BASE: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainAlgo {
    Imitation,
    ActorCritic,
    Joint,
}

impl std::str::FromStr for TrainAlgo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "imitation" => Ok(TrainAlgo::Imitation),
            "actor_critic" => Ok(TrainAlgo::ActorCritic),
            "joint" => Ok(TrainAlgo::Joint),
            other => Err(Error::InvalidParam(format!("unknown training algorithm {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub planner: PlannerConfig,
    pub planner_episodes: usize,
    pub explore_epsilon: f64,
    pub gnn: GnnConfig,
    pub imitation_episodes: usize,
    pub imitation_steps: usize,
    pub imitation_lr: f64,
    pub batch: usize,
    pub rl_episodes: usize,
    /// Environment steps between two parameter updates.
    pub update_every: u64,
    pub gamma: f64,
    pub lr_q: f64,
    pub lr_pi: f64,
    pub tau: f64,
    pub replay_capacity: usize,
    /// No update happens while the buffer holds fewer items.
    pub replay_min: usize,
    pub hybrid: HybridConfig,
    pub dqn: DqnConfig,
    pub dqn_episodes: usize,
    pub dqn_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            planner: PlannerConfig::default(),
            planner_episodes: 20,
            explore_epsilon: 0.3,
            gnn: GnnConfig {
                hidden: 32,
                layers: 3,
                message_width: 32,
                scorer_width: 32,
                ..GnnConfig::default()
            },
            imitation_episodes: 6,
            imitation_steps: 2000,
            imitation_lr: 5e-4,
            batch: 16,
            rl_episodes: 4,
            update_every: 10,
            gamma: 0.95,
            lr_q: 5e-4,
            lr_pi: 5e-5,
            tau: 0.01,
            replay_capacity: 20_000,
            replay_min: 256,
            hybrid: HybridConfig::default(),
            dqn: DqnConfig::default(),
            dqn_episodes: 20,
            dqn_steps: 3000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub phase: String,
    pub step: u64,
    pub loss: f64,
    pub extra: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rows: Vec<CurveRow>,
    /// Parameter updates actually performed by the reinforcement phase.
    pub rl_updates: u64,
}

impl TrainingLog {
    fn push(&mut self, phase: &str, step: u64, loss: f64, extra: f64) {
        self.rows.push(CurveRow {
            phase: phase.into(),
            step,
            loss,
            extra,
        });
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trained planner, graph policy and optional DQN baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Models {
    pub planner: RoutingPlanner,
    pub gnn: GnnParams,
    pub dqn: Option<DqnLite>,
}

impl Models {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Models = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        m.gnn.check_shapes()?;
        Ok(m)
    }
}

/// Instantiate `kind` from trained models. Graph/planner variants share the
/// same weights and differ only in how α is set.
pub fn build_policy(kind: PolicyKind, models: &Models, hybrid: HybridConfig) -> Result<Box<dyn RoutingPolicy>> {
    let mode = match kind {
        PolicyKind::Hybrid => TrustMode::Adaptive,
        PolicyKind::GnnOnly => TrustMode::Fixed(1.0),
        PolicyKind::PomdpOnly => TrustMode::Fixed(0.0),
        PolicyKind::FixedAlpha => TrustMode::Fixed(0.5),
        PolicyKind::Dqn => {
            let dqn = models
                .dqn
                .clone()
                .ok_or_else(|| Error::InvalidParam("models carry no dqn weights".into()))?;
            return Ok(Box::new(BaselinePolicy::new(kind, Some(Arc::new(dqn)))?));
        }
        _ => return Ok(Box::new(BaselinePolicy::new(kind, None)?)),
    };
    Ok(Box::new(HybridPolicy::new(
        kind.name(),
        Arc::new(models.gnn.clone()),
        Arc::new(models.planner.clone()),
        mode,
        hybrid,
    )))
}

fn train_seed(cfg: &TrainConfig, phase: u64, i: usize) -> u64 {
    TRAIN_SEED_BASE + cfg.seed * 10_000 + phase * 1000 + i as u64
}

/// Fit the aggregated planner on rollouts of the exploring greedy policy.
pub fn train_planner(prep: &mut Prepared, cfg: &TrainConfig) -> Result<RoutingPlanner> {
    let mut pol = ExplorePolicy {
        epsilon: cfg.explore_epsilon,
    };
    let mut data = Vec::new();
    for i in 0..cfg.planner_episodes {
        let collect = Collect {
            transitions: true,
            ..Default::default()
        };
        let (_, exp) = run_episode(prep, &mut pol, train_seed(cfg, 1, i), collect)?;
        data.extend(exp.transitions);
    }
    RoutingPlanner::fit(&data, PlannerConfig {
        seed: cfg.seed,
        ..cfg.planner
    })
}

/// Episodes driven by the planner alone, keeping graph decisions and the
/// planner's distributions as imitation targets.
pub fn imitation_data(prep: &mut Prepared, planner: &Arc<RoutingPlanner>, gnn: &GnnParams, cfg: &TrainConfig) -> Result<Experience> {
    let mut pol = HybridPolicy::new(
        "pomdp_only",
        Arc::new(gnn.clone()),
        planner.clone(),
        TrustMode::Fixed(0.0),
        cfg.hybrid,
    );
    let mut all = Experience::default();
    for i in 0..cfg.imitation_episodes {
        let collect = Collect {
            imitation: true,
            ..Default::default()
        };
        let (_, exp) = run_episode(prep, &mut pol, train_seed(cfg, 2, i), collect)?;
        all.extend(exp);
    }
    Ok(all)
}

/// Minibatch Adam on `KL(π_POMDP ‖ π_GNN)`.
pub fn train_imitation(
    gnn: &mut GnnParams,
    data: &[(crate::gnn::Decision, Vec<f64>)],
    cfg: &TrainConfig,
    log: &mut TrainingLog,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyRollouts);
    }
    let mut r = rng::stream(cfg.seed, "imitation-batches");
    let mut opt = Adam::new(gnn.theta.len(), cfg.imitation_lr);
    for step in 0..cfg.imitation_steps {
        // Sample a run of consecutive items so decisions share embeddings.
        let start = r.random_range(0..data.len());
        let batch: Vec<_> = (0..cfg.batch.max(1)).map(|k| data[(start + k) % data.len()].clone()).collect();
        let (loss, grad) = imitation_gradient(gnn, &batch)?;
        opt.step(&mut gnn.theta, &grad);
        if step % 50 == 0 || step + 1 == cfg.imitation_steps {
            log.push("imitation", step as u64, loss, 0.0);
        }
    }
    Ok(())
}

struct Replay {
    items: Vec<ReplayItem>,
    capacity: usize,
    next: usize,
}

impl Replay {
    fn push(&mut self, item: ReplayItem) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
            self.next = (self.next + 1) % self.capacity;
        }
    }
}

/// Reinforcement phase: episodes under the hybrid (joint) or the graph
/// policy alone (actor-critic), with critic, actor and target updates from
/// replay after every episode's worth of `update_every` steps.
pub fn train_reinforcement(
    prep: &mut Prepared,
    planner: &Arc<RoutingPlanner>,
    gnn: &mut GnnParams,
    joint: bool,
    cfg: &TrainConfig,
    log: &mut TrainingLog,
) -> Result<()> {
    let mut replay = Replay {
        items: Vec::new(),
        capacity: cfg.replay_capacity.max(1),
        next: 0,
    };
    let mut r = rng::stream(cfg.seed, "replay-batches");
    let mut opt_theta = Adam::new(gnn.theta.len(), cfg.lr_pi);
    let mut opt_psi = Adam::new(gnn.psi.len(), cfg.lr_q);
    for i in 0..cfg.rl_episodes {
        let mode = if joint { TrustMode::Adaptive } else { TrustMode::Fixed(1.0) };
        let mut pol = HybridPolicy::new("train", Arc::new(gnn.clone()), planner.clone(), mode, cfg.hybrid);
        let collect = Collect {
            replay: true,
            ..Default::default()
        };
        let (rec, exp) = run_episode(prep, &mut pol, train_seed(cfg, 3, i), collect)?;
        for item in exp.replay {
            replay.push(item);
        }
        let updates = prep.scenario.horizon / cfg.update_every.max(1);
        let mut stats = None;
        for _ in 0..updates {
            if replay.items.len() < cfg.replay_min.max(1) {
                break;
            }
            let batch: Vec<ReplayItem> = (0..cfg.batch.max(1))
                .map(|_| replay.items[r.random_range(0..replay.items.len())].clone())
                .collect();
            let (gt, gp, s) = actor_critic_gradients(gnn, &batch, cfg.gamma, true)?;
            opt_theta.step(&mut gnn.theta, &gt);
            opt_psi.step(&mut gnn.psi, &gp);
            let psi = gnn.psi.clone();
            soft_update(&mut gnn.psi_target, &psi, cfg.tau);
            log.rl_updates += 1;
            stats = Some(s);
        }
        if !gnn.is_finite() {
            return Err(Error::NonConvergence {
                iterations: log.rl_updates as usize,
                residual: f64::NAN,
            });
        }
        let phase = if joint { "joint" } else { "actor_critic" };
        log.push(
            phase,
            i as u64,
            stats.map_or(f64::NAN, |s| s.critic_mse),
            rec.summary.total_reward,
        );
    }
    Ok(())
}

/// ε-greedy episodes with the current DQN, then minibatch TD training.
pub fn train_dqn(prep: &mut Prepared, cfg: &TrainConfig, log: &mut TrainingLog) -> Result<DqnLite> {
    let mut dqn = DqnLite::new(DqnConfig {
        seed: cfg.seed,
        ..cfg.dqn
    })?;
    let mut replay = Vec::new();
    let rounds = 4.min(cfg.dqn_episodes.max(1));
    let per_round = cfg.dqn_episodes.div_ceil(rounds);
    let mut ep = 0;
    for round in 0..rounds {
        let mut pol = DqnExplore {
            dqn: Arc::new(dqn.clone()),
        };
        for _ in 0..per_round {
            let collect = Collect {
                dqn: true,
                ..Default::default()
            };
            let (_, exp) = run_episode(prep, &mut pol, train_seed(cfg, 4, ep), collect)?;
            replay.extend(exp.dqn);
            ep += 1;
        }
        if replay.is_empty() {
            continue;
        }
        let curve = dqn.train(&replay, cfg.dqn_steps / rounds)?;
        log.push("dqn", round as u64, curve.last().copied().unwrap_or(f64::NAN), replay.len() as f64);
    }
    Ok(dqn)
}

/// Fit every model. `Imitation` stops after imitation; `ActorCritic` skips
/// imitation and trains the graph policy alone; `Joint` imitates first and
/// then runs the hybrid reinforcement loop.
pub fn train(prep: &mut Prepared, algo: TrainAlgo, cfg: &TrainConfig, with_dqn: bool) -> Result<(Models, TrainingLog)> {
    let mut log = TrainingLog::default();
    let planner = Arc::new(train_planner(prep, cfg)?);
    let mut gnn = GnnParams::new(GnnConfig {
        seed: cfg.seed,
        ..cfg.gnn
    })?;
    if algo != TrainAlgo::ActorCritic {
        let data = imitation_data(prep, &planner, &gnn, cfg)?;
        train_imitation(&mut gnn, &data.imitation, cfg, &mut log)?;
    }
    if algo != TrainAlgo::Imitation {
        train_reinforcement(prep, &planner, &mut gnn, algo == TrainAlgo::Joint, cfg, &mut log)?;
    }
    let dqn = if with_dqn { Some(train_dqn(prep, cfg, &mut log)?) } else { None };
    Ok((
        Models {
            planner: Arc::try_unwrap(planner).unwrap_or_else(|a| (*a).clone()),
            gnn,
            dqn,
        },
        log,
    ))
}
