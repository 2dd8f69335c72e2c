use std::sync::Arc;

use qroute::baselines::{dijkstra, fmsp_weights, qdr_weights, QdrConfig, WeightedEdge};
use qroute::belief::FilterConfig;
use qroute::gnn::{GnnConfig, GnnParams};
use qroute::harness::{
    audit, chart_points, emit_report, evaluate, read_csv, run_comparative, run_episode, train, train_dqn, train_planner,
    train_reinforcement, write_sweep, BaselinePolicy, Collect, ComparativeConfig, DemandConfig, ExplorePolicy,
    HybridConfig, HybridPolicy, Manifest, Models, PolicyKind, Prepared, RoutingPolicy, Scenario, SweepCsv,
    TrainAlgo, TrainConfig, TrainingLog, TrustMode, MANIFEST,
};
use qroute::netmodel::{PhysicsParams, Topology, TopologyParams};
use qroute::Error;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn zero_horizon_gives_empty_record() {
    let mut prep = Prepared::new(Scenario {
        horizon: 0,
        ..Scenario::desk(6)
    })
    .unwrap();
    let mut pol = BaselinePolicy::new(PolicyKind::Gps, None).unwrap();
    let (rec, _) = run_episode(&mut prep, &mut pol, 1, Collect::default()).unwrap();
    assert!(rec.steps.is_empty());
    assert_eq!(rec.summary.total_reward, 0.0);
    assert_eq!(rec.summary.requests, 0);
}

fn perfect_pair() -> Scenario {
    Scenario {
        name: "pair".into(),
        nodes: 2,
        topology: Topology::Line,
        topology_params: TopologyParams {
            initial_fidelity_range: (1.0, 1.0),
            decoherence_range: (0.0, 0.0),
            ..TopologyParams::default()
        },
        physics: PhysicsParams {
            diffusion: 0.0,
            entangle_success: 1.0,
            ..PhysicsParams::default()
        },
        demand: DemandConfig {
            pairs: 1,
            total_rate: 0.05,
            min_hops: 1,
            max_hops: Some(1),
        },
        filter: FilterConfig {
            g_flip: 0.0,
            kernel_samples: 200,
            ..FilterConfig::default()
        },
        horizon: 30,
        ..Scenario::default()
    }
}

#[test]
fn perfect_link_delivers_a_lone_request() {
    let mut prep = Prepared::new(perfect_pair()).unwrap();
    let horizon = prep.scenario.horizon as usize;
    for kind in [PolicyKind::Fmsp, PolicyKind::Qdr, PolicyKind::Gps] {
        let mut lone = 0;
        for seed in 0..100 {
            let mut pol = BaselinePolicy::new(kind, None).unwrap();
            let (rec, _) = run_episode(&mut prep, &mut pol, seed, Collect::default()).unwrap();
            let arrival = rec.steps.iter().position(|s| s.arrivals > 0);
            if rec.summary.requests != 1 || arrival.is_none_or(|t| t + 5 > horizon) {
                continue;
            }
            lone += 1;
            assert_eq!(rec.summary.delivery_rate, 1.0, "{kind} seed {seed}: {:?}", rec.summary);
            assert!((rec.summary.avg_fidelity - 1.0).abs() < 1e-12);
        }
        assert!(lone >= 3, "{kind}: only {lone} single-request episodes");
    }
}

#[test]
fn summaries_match_step_log_and_audit() {
    let mut prep = Prepared::new(Scenario {
        horizon: 200,
        ..Scenario::desk(10)
    })
    .unwrap();
    for kind in [PolicyKind::Fmsp, PolicyKind::Qdr, PolicyKind::Gps, PolicyKind::Flooding] {
        for seed in 0..3 {
            let mut pol = BaselinePolicy::new(kind, None).unwrap();
            let (rec, _) = run_episode(&mut prep, &mut pol, seed, Collect::default()).unwrap();
            assert!(rec.is_consistent(), "{kind} seed {seed}");
            assert!(rec.steps.len() as u64 <= prep.scenario.horizon);

            // Second pass straight over the raw step log.
            let a = audit(&rec);
            let delivered: usize = rec.steps.iter().map(|s| s.deliveries.len()).sum();
            let misses = rec.steps.iter().flat_map(|s| &s.deliveries).filter(|d| !d.1).count();
            let mem: Vec<f64> = rec.steps.iter().map(|s| s.memory).collect();
            assert_eq!(a.deliveries, delivered as u64);
            assert_eq!(a.deliveries, rec.summary.delivered);
            assert_eq!(a.violations, rec.summary.violations);
            assert!(misses as u64 <= a.violations);
            assert!((a.memory_mean - mean(&mem)).abs() < 1e-12);
            assert!((rec.summary.peak_memory - mem.iter().copied().fold(0.0, f64::max)).abs() < 1e-12);
        }
    }
}

/// Minimum weight over every simple path, by depth-first enumeration.
fn brute_force(nodes: usize, edges: &[WeightedEdge], from: usize, to: usize) -> Option<f64> {
    fn go(x: usize, to: usize, w: f64, seen: &mut Vec<bool>, edges: &[WeightedEdge], best: &mut Option<f64>) {
        if x == to {
            *best = Some(best.map_or(w, |b: f64| b.min(w)));
            return;
        }
        for e in edges {
            let y = match (e.u == x, e.v == x) {
                (true, _) => e.v,
                (_, true) => e.u,
                _ => continue,
            };
            if !seen[y] {
                seen[y] = true;
                go(y, to, w + e.weight, seen, edges, best);
                seen[y] = false;
            }
        }
    }
    let mut seen = vec![false; nodes];
    seen[from] = true;
    let mut best = None;
    go(from, to, 0.0, &mut seen, edges, &mut best);
    best
}

#[test]
fn path_baselines_find_lightest_simple_path() {
    let mut checked = 0;
    for n in 4..=8 {
        for topo in 0..4 {
            let mut prep = Prepared::new(Scenario {
                topology_seed: topo,
                horizon: 40,
                ..Scenario::desk(n)
            })
            .unwrap();
            // Age the network so live, virtual and dead links all appear.
            let mut pol = BaselinePolicy::new(PolicyKind::Gps, None).unwrap();
            run_episode(&mut prep, &mut pol, topo, Collect::default()).unwrap();
            let view = prep.network.observable();
            let b = prep.filter.init(&view);
            for edges in [fmsp_weights(&view, &b), qdr_weights(&view, &b, &QdrConfig::default())] {
                for s in 0..n {
                    for d in 0..n {
                        if s == d {
                            continue;
                        }
                        match (dijkstra(n, &edges, s, d), brute_force(n, &edges, s, d)) {
                            (Ok(p), Some(w)) => {
                                assert!((p.weight - w).abs() < 1e-12, "{s}->{d}: {} vs {w}", p.weight);
                                let sum: f64 = p
                                    .links
                                    .iter()
                                    .map(|l| edges.iter().find(|e| e.link == *l).unwrap().weight)
                                    .sum();
                                assert!((sum - p.weight).abs() < 1e-12);
                                checked += 1;
                            }
                            (Err(Error::NoPath { .. }), None) => {}
                            (a, b) => panic!("{s}->{d}: dijkstra {a:?}, enumeration {b:?}"),
                        }
                    }
                }
            }
        }
    }
    assert!(checked > 100);
}

/// Three nodes in a line with all demand end to end.
fn toy() -> Scenario {
    Scenario {
        name: "toy".into(),
        nodes: 3,
        topology: Topology::Line,
        demand: DemandConfig {
            pairs: 1,
            total_rate: 0.3,
            min_hops: 2,
            max_hops: Some(2),
        },
        filter: FilterConfig {
            kernel_samples: 500,
            ..FilterConfig::default()
        },
        horizon: 100,
        ..Scenario::default()
    }
}

fn average_return(prep: &mut Prepared, pol: &mut dyn RoutingPolicy, seeds: std::ops::Range<u64>) -> f64 {
    let r: Vec<f64> = seeds
        .map(|s| run_episode(prep, pol, s, Collect::default()).unwrap().0.summary.total_reward)
        .collect();
    mean(&r)
}

#[test]
fn dqn_beats_uniform_choice_on_toy() {
    let mut prep = Prepared::new(toy()).unwrap();
    let cfg = TrainConfig {
        dqn_episodes: 20,
        dqn_steps: 3000,
        ..TrainConfig::default()
    };
    let dqn = train_dqn(&mut prep, &cfg, &mut TrainingLog::default()).unwrap();
    let mut trained = BaselinePolicy::new(PolicyKind::Dqn, Some(Arc::new(dqn))).unwrap();
    let mut uniform = ExplorePolicy { epsilon: 1.0 };
    let ours = average_return(&mut prep, &mut trained, 0..50);
    let random = average_return(&mut prep, &mut uniform, 0..50);
    assert!(random > 0.0);
    assert!(ours >= 1.2 * random, "dqn {ours} vs random {random}");
}

fn toy_models(prep: &mut Prepared, cfg: &TrainConfig) -> (Arc<qroute::planner::RoutingPlanner>, GnnParams) {
    let planner = Arc::new(train_planner(prep, cfg).unwrap());
    let gnn = GnnParams::new(GnnConfig {
        hidden: 8,
        layers: 2,
        message_width: 8,
        scorer_width: 8,
        seed: 5,
        ..GnnConfig::default()
    })
    .unwrap();
    (planner, gnn)
}

fn gnn_return(prep: &mut Prepared, planner: &Arc<qroute::planner::RoutingPlanner>, gnn: &GnnParams) -> f64 {
    let mut pol = HybridPolicy::new(
        "gnn_only",
        Arc::new(gnn.clone()),
        planner.clone(),
        TrustMode::Fixed(1.0),
        HybridConfig::default(),
    );
    average_return(prep, &mut pol, 0..50)
}

#[test]
fn actor_critic_improves_toy_return() {
    let mut prep = Prepared::new(toy()).unwrap();
    let cfg = TrainConfig {
        planner_episodes: 5,
        rl_episodes: 30,
        replay_min: 64,
        update_every: 5,
        lr_pi: 1e-3,
        lr_q: 1e-3,
        ..TrainConfig::default()
    };
    let (planner, mut gnn) = toy_models(&mut prep, &cfg);
    let before = gnn_return(&mut prep, &planner, &gnn);
    let mut log = TrainingLog::default();
    train_reinforcement(&mut prep, &planner, &mut gnn, false, &cfg, &mut log).unwrap();
    assert!(log.rl_updates > 0);
    let after = gnn_return(&mut prep, &planner, &gnn);
    assert!(after > before, "return {before} -> {after}");
}

#[test]
fn replay_below_threshold_skips_updates() {
    let mut prep = Prepared::new(toy()).unwrap();
    let cfg = TrainConfig {
        planner_episodes: 2,
        rl_episodes: 2,
        replay_min: 1_000_000,
        ..TrainConfig::default()
    };
    let (planner, mut gnn) = toy_models(&mut prep, &cfg);
    let start = gnn.clone();
    let mut log = TrainingLog::default();
    train_reinforcement(&mut prep, &planner, &mut gnn, true, &cfg, &mut log).unwrap();
    assert_eq!(log.rl_updates, 0);
    assert_eq!(gnn.theta, start.theta);
    assert_eq!(gnn.psi, start.psi);
}

fn small_comparison() -> ComparativeConfig {
    ComparativeConfig {
        policies: vec![PolicyKind::Fmsp, PolicyKind::Gps],
        base: Scenario {
            horizon: 60,
            ..Scenario::desk(8)
        },
        demand_nodes: 8,
        rates: vec![0.1, 0.3],
        sizes: vec![6, 8],
        epsilons: vec![0.0, 0.5],
        seeds: vec![0, 1, 2],
        ..ComparativeConfig::default()
    }
}

/// Barely trained models; the path baselines never consult them.
fn tiny_models() -> Models {
    let cfg = TrainConfig {
        planner_episodes: 3,
        imitation_episodes: 1,
        imitation_steps: 10,
        ..TrainConfig::default()
    };
    let mut prep = Prepared::new(toy()).unwrap();
    train(&mut prep, TrainAlgo::Imitation, &cfg, false).unwrap().0
}

fn run_into(dir: &std::path::Path, cfg: &ComparativeConfig) {
    let res = run_comparative(&tiny_models(), cfg).unwrap();
    write_sweep(&dir.join("demand.csv"), &res.demand).unwrap();
    write_sweep(&dir.join("adversary.csv"), &res.adversary).unwrap();
    Manifest::new("compare", cfg, &cfg.seeds).unwrap().write(dir).unwrap();
    emit_report(dir).unwrap();
}

#[test]
fn report_needs_runs() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(emit_report(&dir.path().join("absent")), Err(Error::MissingRuns(_))));
    assert!(matches!(emit_report(dir.path()), Err(Error::MissingRuns(_))));
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let first = tempfile::tempdir().unwrap();
    run_into(first.path(), &small_comparison());
    let manifest = Manifest::read(first.path()).unwrap();
    assert_eq!(manifest.files.len(), 2);

    let cfg: ComparativeConfig = serde_json::from_value(manifest.config.clone()).unwrap();
    let second = tempfile::tempdir().unwrap();
    run_into(second.path(), &cfg);
    for f in manifest.files.iter().filter(|f| f.deterministic) {
        let a = std::fs::read(first.path().join(&f.name)).unwrap();
        let b = std::fs::read(second.path().join(&f.name)).unwrap();
        assert_eq!(a, b, "{}", f.name);
        assert_eq!(qroute::harness::sha256_hex(&b), f.sha256);
    }
    let again = Manifest::read(second.path()).unwrap();
    assert_eq!(again.config_hash, manifest.config_hash);
    assert!(second.path().join(MANIFEST).exists());
}

#[test]
fn chart_points_equal_csv_rows() {
    let dir = tempfile::tempdir().unwrap();
    run_into(dir.path(), &small_comparison());
    for (stem, column) in [("demand", "delivery_mean"), ("adversary", "fidelity_mean")] {
        let rows: Vec<SweepCsv> = read_csv(&dir.path().join(format!("{stem}.csv"))).unwrap();
        let svg = std::fs::read_to_string(dir.path().join(format!("{stem}.svg"))).unwrap();
        let mut pts = chart_points(&svg);
        let mut want: Vec<(String, f64, f64)> = rows
            .iter()
            .map(|r| (r.policy.clone(), r.x, if column == "delivery_mean" { r.delivery_mean } else { r.fidelity_mean }))
            .filter(|p| p.2.is_finite())
            .collect();
        let key = |p: &(String, f64, f64)| (p.0.clone(), p.1.to_bits());
        pts.sort_by_key(key);
        want.sort_by_key(key);
        assert_eq!(pts.len(), want.len(), "{stem}");
        for (a, b) in pts.iter().zip(&want) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1, b.1);
            assert!((a.2 - b.2).abs() <= 1e-12 * b.2.abs().max(1.0), "{stem}: {a:?} vs {b:?}");
        }
    }
}

#[test]
fn baseline_evaluation_is_seed_deterministic() {
    let mut prep = Prepared::new(Scenario {
        horizon: 80,
        ..Scenario::desk(10)
    })
    .unwrap();
    let models = tiny_models();
    let a = evaluate(&mut prep, PolicyKind::Qdr, &models, HybridConfig::default(), &[4, 5]).unwrap();
    let b = evaluate(&mut prep, PolicyKind::Qdr, &models, HybridConfig::default(), &[4, 5]).unwrap();
    let json = |e: &qroute::harness::Evaluation| serde_json::to_string(&e.rows).unwrap();
    assert_eq!(json(&a), json(&b));
}

#[test]
fn decision_time_medians_are_stable() {
    let mut prep = Prepared::new(Scenario {
        horizon: 300,
        ..Scenario::desk(25)
    })
    .unwrap();
    let models = tiny_models();
    let median = |prep: &mut Prepared| {
        let ev = evaluate(prep, PolicyKind::Fmsp, &models, HybridConfig::default(), &[0, 1, 2]).unwrap();
        let mut t: Vec<u64> = ev.call_ns.clone();
        assert!(t.len() >= 1000, "only {} calls", t.len());
        t.sort_unstable();
        t[t.len() / 2] as f64
    };
    let (a, b) = (median(&mut prep), median(&mut prep));
    assert!((a - b).abs() / a.min(b) < 0.3, "{a} vs {b}");
}
