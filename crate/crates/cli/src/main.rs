use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use qroute::gnn::RegretConfig;
use qroute::harness::{
    check_bounds, emit_report, imitation_regret_rate, relative_drops, run_ablation, run_comparative, run_drift_study,
    run_episode, scalability, strictly_smallest, train, write_ablation, write_bounds, write_csv, write_drift,
    write_regret, write_scalability, write_sweep, write_timing, write_training, BoundsConfig, Collect,
    ComparativeConfig, DriftStudyConfig, HybridConfig, Manifest, Models, PolicyKind, Prepared, Scenario,
    TrainAlgo, TrainConfig, Verdict,
};

#[derive(Parser)]
#[command(name = "qroute", version, about = "Entanglement routing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario TOML; a desk default is used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write its JSON log.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "gps")]
        policy: PolicyKind,
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Fit planner, graph policy and DQN baseline.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "joint")]
        algo: TrainAlgo,
        /// Training hyperparameters as TOML.
        #[arg(long)]
        train_config: Option<PathBuf>,
    },
    /// Compare the four trust variants on mean fidelity.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
    },
    /// Dynamic regret under drifting decay rates.
    Drift {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.002,0.005,0.01")]
        deltas: Vec<f64>,
        #[arg(long, default_value_t = 2000)]
        horizon: usize,
    },
    /// Demand, size and adversary sweeps plus decision timing.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        /// Restrict to these policies (comma separated).
        #[arg(long, value_delimiter = ',')]
        policy: Vec<PolicyKind>,
    },
    /// Chart the CSVs of a run directory and refresh its manifest.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Aggregation and hybrid bounds on tiny exact instances, and the
    /// imitation regret rate.
    CheckBounds {
        #[command(flatten)]
        common: Common,
    },
}

fn scenario(c: &Common, nodes: usize) -> Result<Scenario> {
    match &c.config {
        Some(p) => Scenario::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(Scenario::desk(nodes)),
    }
}

fn out_dir(c: &Common) -> Result<&Path> {
    std::fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    Ok(&c.out)
}

fn models(path: &Path) -> Result<Models> {
    Models::load(path).with_context(|| format!("loading models from {}", path.display()))
}

fn seeds(n: u64) -> Vec<u64> {
    (0..n).collect()
}

/// `Ok(false)` marks a failed assertion.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate { common, policy, models: m } => {
            let dir = out_dir(&common)?;
            let mut prep = Prepared::new(scenario(&common, 10)?)?;
            let loaded = match (&m, policy.needs_models()) {
                (Some(p), _) => Some(models(p)?),
                (None, true) => bail!("policy {policy} needs --models"),
                (None, false) => None,
            };
            let mut pol: Box<dyn qroute::harness::RoutingPolicy> = match &loaded {
                Some(ms) => qroute::harness::build_policy(policy, ms, HybridConfig::default())?,
                None => Box::new(qroute::harness::BaselinePolicy::new(policy, None)?),
            };
            let (rec, _) = run_episode(&mut prep, pol.as_mut(), common.seed, Collect::default())?;
            let name = format!("episode_{}_{}.json", policy.name(), common.seed);
            std::fs::write(dir.join(&name), serde_json::to_string(&rec)?)?;
            write_csv(&dir.join("summary.csv"), &[rec.summary])?;
            Manifest::new("simulate", &prep.scenario, &[common.seed])?.write(dir)?;
            emit_report(dir)?;
            println!(
                "{}: delivery_rate {:.4} avg_fidelity {:.4} reward {:.2} -> {}",
                policy,
                rec.summary.delivery_rate,
                rec.summary.avg_fidelity,
                rec.summary.total_reward,
                dir.join(name).display()
            );
            Ok(rec.is_consistent())
        }
        Command::Train {
            common,
            algo,
            train_config,
        } => {
            let dir = out_dir(&common)?;
            let mut cfg: TrainConfig = match &train_config {
                Some(p) => toml::from_str(&std::fs::read_to_string(p)?)?,
                None => TrainConfig::default(),
            };
            cfg.seed = common.seed;
            let mut prep = Prepared::new(scenario(&common, 25)?)?;
            let (ms, log) = train(&mut prep, algo, &cfg, true)?;
            ms.save(&dir.join("models.json"))?;
            write_training(&dir.join("training.csv"), &log)?;
            Manifest::new("train", &(&prep.scenario, &cfg, algo), &[common.seed])?.write(dir)?;
            emit_report(dir)?;
            println!("trained ({algo:?}), {} reinforcement updates", log.rl_updates);
            Ok(true)
        }
        Command::Ablate { common, models: m, seeds: n } => {
            let dir = out_dir(&common)?;
            let ms = models(&m)?;
            let mut prep = Prepared::new(scenario(&common, 25)?)?;
            let table = run_ablation(&mut prep, &ms, HybridConfig::default(), &seeds(n))?;
            write_ablation(&dir.join("ablation.csv"), &table)?;
            Manifest::new("ablate", &prep.scenario, &seeds(n))?.write(dir)?;
            emit_report(dir)?;
            for r in &table.rows {
                println!(
                    "{:>12} fidelity {:.4} ± {:.4} (n={})",
                    r.variant, r.fidelity.mean, r.fidelity.std, r.fidelity.n
                );
            }
            println!("ordering full > no_pomdp > fixed_alpha > no_gnn: {:?}", table.verdict);
            Ok(table.verdict != Verdict::Violated)
        }
        Command::Drift {
            common,
            deltas,
            horizon,
        } => {
            let dir = out_dir(&common)?;
            let cfg = DriftStudyConfig {
                horizon,
                ..DriftStudyConfig::default()
            };
            let study = run_drift_study(&deltas, &cfg)?;
            write_drift(&dir.join("drift.csv"), &study)?;
            Manifest::new("drift", &(&cfg, &deltas), &[])?.write(dir)?;
            emit_report(dir)?;
            let stable = study.traces.iter().all(|t| t.stability_holds);
            println!(
                "R_T vs δT: slope {:.3} R² {:.4}; stability bound held: {stable}",
                study.fit.slope, study.fit.r2
            );
            Ok(study.fit.r2 >= 0.9 && stable)
        }
        Command::Compare {
            common,
            models: m,
            seeds: n,
            policy,
        } => {
            let dir = out_dir(&common)?;
            let ms = models(&m)?;
            let mut cfg = ComparativeConfig {
                base: scenario(&common, 25)?,
                seeds: seeds(n),
                ..ComparativeConfig::default()
            };
            if !policy.is_empty() {
                cfg.policies = policy;
            }
            let res = run_comparative(&ms, &cfg)?;
            write_sweep(&dir.join("demand.csv"), &res.demand)?;
            write_sweep(&dir.join("size.csv"), &res.size)?;
            write_sweep(&dir.join("adversary.csv"), &res.adversary)?;
            write_timing(&dir.join("timing.csv"), &res.timing)?;
            let mut scal = Vec::new();
            for &nodes in &cfg.sizes {
                let mut prep = Prepared::new(Scenario {
                    nodes,
                    ..cfg.base.clone()
                })?;
                scal.push(scalability(&mut prep, &ms, cfg.hybrid, &cfg.seeds[..cfg.seeds.len().min(10)])?);
            }
            write_scalability(&dir.join("scalability.csv"), &scal)?;
            Manifest::new("compare", &cfg, &cfg.seeds)?.write(dir)?;
            emit_report(dir)?;

            let mut ok = true;
            let top = cfg.rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let at = |p: &str| res.demand.iter().find(|r| r.policy == p && r.x == top).map(|r| r.delivery.mean);
            if let (Some(h), Some(d)) = (at("hybrid"), at("dqn")) {
                println!("delivery at rate {top}: hybrid {h:.4} dqn {d:.4} ratio {:.3}", h / d);
                ok &= h / d >= 1.2;
            }
            let drops: Vec<_> = relative_drops(&res.adversary, 0.5)
                .into_iter()
                .filter(|(p, _)| p == "hybrid" || PolicyKind::BASELINES.iter().any(|b| b.name() == p))
                .collect();
            for (p, d) in &drops {
                println!("relative fidelity drop at ε=0.5: {p:>12} {d:.4}");
            }
            if drops.iter().any(|(p, _)| p == "hybrid") {
                ok &= strictly_smallest(&drops, "hybrid");
            }
            for s in &scal {
                println!(
                    "n={:>3} measured {:.0} ns predicted {:.0} ns (ᾱ {:.3}) rel err {:.3}",
                    s.nodes, s.measured_ns, s.predicted_ns, s.alpha_bar, s.rel_err
                );
                ok &= s.rel_err <= 0.15;
            }
            Ok(ok)
        }
        Command::Report { common } => {
            let summary = emit_report(&common.out)?;
            println!("{} CSV files, charts: {}", summary.csv_files, summary.charts.join(", "));
            Ok(true)
        }
        Command::CheckBounds { common } => {
            let dir = out_dir(&common)?;
            let cfg = BoundsConfig {
                seed: common.seed,
                ..BoundsConfig::default()
            };
            let report = check_bounds(&cfg)?;
            write_bounds(dir, &report)?;
            let rcfg = RegretConfig {
                seed: common.seed,
                ..RegretConfig::default()
            };
            let rate = imitation_regret_rate(&rcfg, 5)?;
            write_regret(&dir.join("regret.csv"), &rate)?;
            Manifest::new("check-bounds", &(&cfg, &rcfg), &[common.seed])?.write(dir)?;
            emit_report(dir)?;
            let slope_ok = (-0.65..=-0.35).contains(&rate.fit.slope);
            println!("aggregation bound holds: {}", report.aggregation_holds());
            println!(
                "hybrid bound holds at every belief: {} (with largest KL: {})",
                report.hybrid_holds(),
                report.hybrid.iter().all(|r| r.row.holds_sup)
            );
            println!("imitation regret log-log slope {:.3} (R² {:.3})", rate.fit.slope, rate.fit.r2);
            Ok(report.aggregation_holds() && report.hybrid_holds() && slope_ok)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("assertion failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
