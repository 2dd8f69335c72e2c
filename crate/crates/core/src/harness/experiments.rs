//! Multi-seed studies over trained models: ablation, sweeps, timing and
//! constraint feasibility.

use serde::{Deserialize, Serialize};

use super::episode::{run_episode, Collect, EpisodeRecord, Prepared};
use super::policies::{HybridConfig, HybridPolicy, PolicyKind, TrustMode};
use super::scenario::Scenario;
use super::train::{build_policy, Models};
use crate::hybrid::{check_feasibility, ConstraintSample, Constraints, FeasibilityReport};
use crate::netmodel::{AdversaryConfig, TargetSelection};
use crate::stats::{mean, median, std_dev};
use crate::Result;
use std::sync::Arc;

/// Per-episode outcome of one policy under one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub policy: String,
    pub nodes: usize,
    pub rate: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub delivery_rate: f64,
    pub avg_fidelity: f64,
    pub total_reward: f64,
    pub mean_memory: f64,
    pub peak_memory: f64,
    pub violations: u64,
    pub decisions: u64,
    pub mean_alpha: f64,
}

impl EvalRow {
    fn from_record(rec: &EpisodeRecord, nodes: usize, rate: f64, epsilon: f64) -> Self {
        let alphas: Vec<f64> = rec.decisions().filter_map(|d| d.alpha).collect();
        Self {
            policy: rec.policy.clone(),
            nodes,
            rate,
            epsilon,
            seed: rec.seed,
            delivery_rate: rec.summary.delivery_rate,
            avg_fidelity: rec.summary.avg_fidelity,
            total_reward: rec.summary.total_reward,
            mean_memory: rec.summary.mean_memory,
            peak_memory: rec.summary.peak_memory,
            violations: rec.summary.violations,
            decisions: rec.decisions().count() as u64,
            mean_alpha: mean(&alphas),
        }
    }
}

/// Rows plus the wall time of every policy call.
#[derive(Debug, Clone, Default)]
pub struct Evaluation {
    pub rows: Vec<EvalRow>,
    pub call_ns: Vec<u64>,
}

pub fn evaluate(
    prep: &mut Prepared,
    kind: PolicyKind,
    models: &Models,
    hybrid: HybridConfig,
    seeds: &[u64],
) -> Result<Evaluation> {
    let mut policy = build_policy(kind, models, hybrid)?;
    let (nodes, rate, eps) = (
        prep.scenario.nodes,
        prep.scenario.demand.total_rate,
        prep.scenario.adversary.epsilon_adv,
    );
    let mut out = Evaluation::default();
    for &seed in seeds {
        let (rec, _) = run_episode(prep, policy.as_mut(), seed, Collect::default())?;
        out.call_ns.extend(rec.decisions().map(|d| d.time_ns));
        out.rows.push(EvalRow::from_record(&rec, nodes, rate, eps));
    }
    Ok(out)
}

/// Mean and sample std of a metric over seeds; NaN entries (no deliveries)
/// are left out and counted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub skipped: usize,
}

pub fn metric_stats<'a>(rows: impl IntoIterator<Item = &'a EvalRow>, f: impl Fn(&EvalRow) -> f64) -> MetricStats {
    let all: Vec<f64> = rows.into_iter().map(f).collect();
    let finite: Vec<f64> = all.iter().copied().filter(|v| v.is_finite()).collect();
    MetricStats {
        mean: mean(&finite),
        std: std_dev(&finite),
        n: finite.len(),
        skipped: all.len() - finite.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Violated,
    /// The compared quantities are indistinguishable.
    Inconclusive,
}

impl Verdict {
    pub fn passed(self) -> bool {
        self == Verdict::Holds
    }
}

/// Strictly decreasing means. All-equal means give `Inconclusive`.
pub fn strict_ordering(means: &[f64]) -> Verdict {
    let first = means.first().copied().unwrap_or(f64::NAN);
    if means.iter().all(|&m| m == first) {
        return Verdict::Inconclusive;
    }
    if means.windows(2).all(|w| w[0] > w[1]) {
        Verdict::Holds
    } else {
        Verdict::Violated
    }
}

pub const ABLATION_VARIANTS: [(&str, PolicyKind); 4] = [
    ("full", PolicyKind::Hybrid),
    ("no_pomdp", PolicyKind::GnnOnly),
    ("fixed_alpha", PolicyKind::FixedAlpha),
    ("no_gnn", PolicyKind::PomdpOnly),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub policy: String,
    pub fidelity: MetricStats,
    pub delivery: MetricStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub verdict: Verdict,
}

/// Build the table from already evaluated rows (policy names as in
/// [`PolicyKind::name`]).
pub fn ablation_table(rows: &[EvalRow]) -> AblationTable {
    let rows: Vec<AblationRow> = ABLATION_VARIANTS
        .iter()
        .map(|(variant, kind)| {
            let mine: Vec<&EvalRow> = rows.iter().filter(|r| r.policy == kind.name()).collect();
            AblationRow {
                variant: (*variant).into(),
                policy: kind.name().into(),
                fidelity: metric_stats(mine.iter().copied(), |r| r.avg_fidelity),
                delivery: metric_stats(mine.iter().copied(), |r| r.delivery_rate),
            }
        })
        .collect();
    let means: Vec<f64> = rows.iter().map(|r| r.fidelity.mean).collect();
    AblationTable {
        verdict: strict_ordering(&means),
        rows,
    }
}

pub fn run_ablation(prep: &mut Prepared, models: &Models, hybrid: HybridConfig, seeds: &[u64]) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for (_, kind) in ABLATION_VARIANTS {
        rows.extend(evaluate(prep, kind, models, hybrid, seeds)?.rows);
    }
    Ok(ablation_table(&rows))
}

/// Adversary used by the robustness sweep: each live link is hit with
/// probability `attack_prob` per step.
pub fn sweep_adversary(epsilon: f64) -> AdversaryConfig {
    AdversaryConfig {
        epsilon_adv: epsilon,
        delta_adv_bound: 1.0,
        target: if epsilon > 0.0 {
            TargetSelection::Random
        } else {
            TargetSelection::None
        },
        attack_prob: 0.02,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparativeConfig {
    pub policies: Vec<PolicyKind>,
    pub base: Scenario,
    /// Demand sweep runs on `base` with `nodes = demand_nodes`.
    pub demand_nodes: usize,
    pub rates: Vec<f64>,
    pub sizes: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub seeds: Vec<u64>,
    pub hybrid: HybridConfig,
}

impl Default for ComparativeConfig {
    fn default() -> Self {
        Self {
            policies: PolicyKind::ALL.to_vec(),
            base: Scenario::desk(25),
            demand_nodes: 50,
            rates: vec![0.05, 0.1, 0.2, 0.4],
            sizes: vec![10, 25, 50, 100],
            epsilons: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            seeds: (0..100).collect(),
            hybrid: HybridConfig::default(),
        }
    }
}

/// One point of a sweep: `x` is the swept value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub policy: String,
    pub x: f64,
    pub delivery: MetricStats,
    pub fidelity: MetricStats,
    pub reward: MetricStats,
    pub memory: MetricStats,
}

impl SweepRow {
    pub fn from_rows(policy: &str, x: f64, rows: &[EvalRow]) -> Self {
        Self {
            policy: policy.into(),
            x,
            delivery: metric_stats(rows, |r| r.delivery_rate),
            fidelity: metric_stats(rows, |r| r.avg_fidelity),
            reward: metric_stats(rows, |r| r.total_reward),
            memory: metric_stats(rows, |r| r.mean_memory),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub policy: String,
    pub nodes: usize,
    pub calls: usize,
    pub median_ns: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Comparative {
    pub demand: Vec<SweepRow>,
    pub size: Vec<SweepRow>,
    pub adversary: Vec<SweepRow>,
    pub timing: Vec<TimingRow>,
}

fn prepared(base: &Scenario, nodes: usize) -> Result<Prepared> {
    Prepared::new(Scenario {
        name: format!("{}-{nodes}", base.name),
        nodes,
        ..base.clone()
    })
}

pub fn run_comparative(models: &Models, cfg: &ComparativeConfig) -> Result<Comparative> {
    let mut out = Comparative::default();
    let demand_prep = prepared(&cfg.base, cfg.demand_nodes)?;
    for &rate in &cfg.rates {
        let mut prep = demand_prep.with_rate(rate)?;
        for &kind in &cfg.policies {
            let ev = evaluate(&mut prep, kind, models, cfg.hybrid, &cfg.seeds)?;
            out.demand.push(SweepRow::from_rows(kind.name(), rate, &ev.rows));
        }
    }
    for &n in &cfg.sizes {
        let mut prep = prepared(&cfg.base, n)?;
        for &kind in &cfg.policies {
            let ev = evaluate(&mut prep, kind, models, cfg.hybrid, &cfg.seeds)?;
            out.size.push(SweepRow::from_rows(kind.name(), n as f64, &ev.rows));
            let times: Vec<f64> = ev.call_ns.iter().map(|&t| t as f64).collect();
            out.timing.push(TimingRow {
                policy: kind.name().into(),
                nodes: n,
                calls: times.len(),
                median_ns: median(&times),
            });
        }
    }
    for &eps in &cfg.epsilons {
        let mut prep = Prepared::new(Scenario {
            adversary: sweep_adversary(eps),
            ..cfg.base.clone()
        })?;
        for &kind in &cfg.policies {
            let ev = evaluate(&mut prep, kind, models, cfg.hybrid, &cfg.seeds)?;
            out.adversary.push(SweepRow::from_rows(kind.name(), eps, &ev.rows));
        }
    }
    Ok(out)
}

/// `(F(0) − F(ε)) / F(0)` per policy from adversary sweep rows.
pub fn relative_drops(rows: &[SweepRow], epsilon: f64) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for r0 in rows.iter().filter(|r| r.x == 0.0) {
        if let Some(re) = rows.iter().find(|r| r.policy == r0.policy && r.x == epsilon) {
            let f0 = r0.fidelity.mean;
            out.push((r0.policy.clone(), (f0 - re.fidelity.mean) / f0));
        }
    }
    out
}

/// Whether `policy` has a strictly smaller drop than every other entry.
pub fn strictly_smallest(drops: &[(String, f64)], policy: &str) -> bool {
    let Some(&(_, mine)) = drops.iter().find(|(p, _)| p == policy) else {
        return false;
    };
    mine.is_finite() && drops.iter().filter(|(p, _)| p != policy).all(|&(_, d)| mine < d)
}

/// Per-decision cost split of the lazy hybrid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityRow {
    pub nodes: usize,
    pub decisions: usize,
    pub alpha_bar: f64,
    pub c_gnn_ns: f64,
    /// Mean planner cost over the calls that ran it.
    pub c_pomdp_ns: f64,
    pub measured_ns: f64,
    pub predicted_ns: f64,
    pub rel_err: f64,
}

pub fn scalability(prep: &mut Prepared, models: &Models, hybrid: HybridConfig, seeds: &[u64]) -> Result<ScalabilityRow> {
    let mut pol = HybridPolicy::new(
        "hybrid",
        Arc::new(models.gnn.clone()),
        Arc::new(models.planner.clone()),
        TrustMode::Adaptive,
        HybridConfig { lazy: true, ..hybrid },
    );
    let (mut total, mut gnn, mut pomdp, mut alpha) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &seed in seeds {
        let (rec, _) = run_episode(prep, &mut pol, seed, Collect::default())?;
        for d in rec.decisions() {
            total.push(d.time_ns as f64);
            gnn.push(d.gnn_ns.unwrap_or(0) as f64);
            if let Some(p) = d.pomdp_ns {
                pomdp.push(p as f64);
            }
            alpha.push(d.alpha.unwrap_or(f64::NAN));
        }
    }
    let alpha_bar = mean(&alpha);
    let c_pomdp = if pomdp.is_empty() { 0.0 } else { mean(&pomdp) };
    let c_gnn = mean(&gnn);
    let measured = mean(&total);
    let predicted = (1.0 - alpha_bar) * c_pomdp + c_gnn;
    Ok(ScalabilityRow {
        nodes: prep.scenario.nodes,
        decisions: total.len(),
        alpha_bar,
        c_gnn_ns: c_gnn,
        c_pomdp_ns: c_pomdp,
        measured_ns: measured,
        predicted_ns: predicted,
        rel_err: (measured - predicted).abs() / predicted,
    })
}

pub const FEASIBILITY_ALPHAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Memory and deadline outcomes under fixed mixing weights.
pub fn run_feasibility(
    prep: &mut Prepared,
    models: &Models,
    limits: &Constraints,
    seeds: &[u64],
) -> Result<FeasibilityReport> {
    let mut samples = Vec::new();
    for a in FEASIBILITY_ALPHAS {
        let mut pol = HybridPolicy::new(
            "fixed",
            Arc::new(models.gnn.clone()),
            Arc::new(models.planner.clone()),
            TrustMode::Fixed(a),
            HybridConfig::default(),
        );
        for &seed in seeds {
            let (rec, _) = run_episode(prep, &mut pol, seed, Collect::default())?;
            let s = &rec.summary;
            samples.push(ConstraintSample {
                alpha: a,
                mean_memory: s.mean_memory,
                deadline_misses: if s.requests > 0 {
                    s.expired as f64 / s.requests as f64
                } else {
                    0.0
                },
            });
        }
    }
    Ok(check_feasibility(&samples, limits))
}
