//! Randomized invariant suites. Each returns the first failure, shrunk.

use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use qroute::belief::{bayes_update, predict, prob_at_least, BinGrid, TransitionKernel};
use qroute::gnn::{forward, ActionQuery, GnnParams};
use qroute::harness::{run_episode, BaselinePolicy, Collect, DriftMdp, DriftMdpConfig, PolicyKind, Prepared, Scenario};
use qroute::hybrid::{fuse_probs, kl, trust};
use qroute::netmodel::{
    apply_action, apply_adversary, step_decoherence, swap_fidelity, Action, AdversaryConfig, LinkKind,
    TargetSelection,
};
use qroute::planner::{value_iteration, AggregatedMdp};
use qroute::rng;

use super::{permute, random_graph, random_queries, small_config};

pub type Suite = fn(u32) -> Result<(), String>;

pub const SUITES: [(&str, Suite); 7] = [
    ("belief normalization", belief_normalization),
    ("network physicality", physicality),
    ("episode determinism", determinism),
    ("bellman contraction", contraction),
    ("fusion convexity", fusion_convexity),
    ("kl non-negativity", kl_nonnegative),
    ("permutation equivariance", permutation_equivariance),
];

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn run<S: Strategy>(cases: u32, s: S, f: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    runner(cases).run(&s, f).map_err(|e| e.to_string())
}

fn simplex(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    vec(1e-6..1.0f64, len).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    })
}

fn random_kernel(seed: u64, bins: usize) -> TransitionKernel {
    let mut r = rng::stream(seed, "prop-kernel");
    let mut entries = Vec::with_capacity(bins * bins);
    for _ in 0..bins {
        let row: Vec<f64> = (0..bins).map(|_| r.random::<f64>() + 1e-9).collect();
        let s: f64 = row.iter().sum();
        entries.extend(row.into_iter().map(|x| x / s));
    }
    TransitionKernel { bins, entries }
}

pub fn belief_normalization(cases: u32) -> Result<(), String> {
    let s = (2usize..=16)
        .prop_flat_map(|n| (simplex(n..=n), any::<u64>(), 0.0..0.49f64, 0.25..1.0f64, any::<bool>()));
    run(cases, s, |(prior, seed, flip, threshold, high)| {
        let bins = prior.len();
        let grid = BinGrid::new(bins).unwrap();
        let pred = predict(&prior, &random_kernel(seed, bins)).unwrap();
        let symbol = if high {
            qroute::netmodel::Symbol::High
        } else {
            qroute::netmodel::Symbol::Low
        };
        for b in [&pred, &bayes_update(&grid, &pred, symbol, threshold, flip).unwrap()] {
            prop_assert!(b.iter().all(|&x| x >= 0.0));
            prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let tail = prob_at_least(&grid, b, threshold);
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&tail));
        }
        Ok(())
    })
}

pub fn physicality(cases: u32) -> Result<(), String> {
    run(cases, (4usize..=7, any::<u64>(), 0.25..1.0f64, 0.25..1.0f64), |(n, seed, f1, f2)| {
        let f = swap_fidelity(f1, f2);
        prop_assert!(f >= 0.25 - 1e-12 && f <= f1.min(f2) + 1e-12, "swap {f1} {f2} -> {f}");

        let sc = Scenario {
            topology_seed: seed,
            ..Scenario::desk(n)
        };
        let mut g = sc.network().map_err(|e| TestCaseError::fail(e.to_string()))?;
        let adv = AdversaryConfig {
            epsilon_adv: 0.3,
            delta_adv_bound: 1.0,
            target: TargetSelection::Random,
            attack_prob: 0.2,
        };
        let mut r = rng::stream(seed, "prop-ops");
        for _ in 0..40 {
            let physical: Vec<usize> = g.links.iter().filter(|l| l.kind == LinkKind::Physical).map(|l| l.id).collect();
            let live: Vec<usize> = g.live_links().map(|l| l.id).collect();
            let pick = |r: &mut rng::Stream, xs: &[usize]| xs.choose(r).copied();
            let action = match r.random_range(0..6) {
                0 | 1 => pick(&mut r, &physical).map(|link| Action::Entangle { link }),
                2 => pick(&mut r, &live).map(|link| Action::Purify { link }),
                3 => pick(&mut r, &live).map(|link| Action::Deliver { link }),
                4 => pick(&mut r, &live).map(|link| Action::Release { link }),
                _ => {
                    let mut found = None;
                    for &a in &live {
                        for &b in &live {
                            let (la, lb) = (g.link(a).unwrap().endpoints, g.link(b).unwrap().endpoints);
                            let shared = [la.0, la.1].into_iter().find(|x| *x == lb.0 || *x == lb.1);
                            if let (true, Some(via)) = (a != b, shared) {
                                let (oa, ob) = (g.link(a).unwrap().other(via), g.link(b).unwrap().other(via));
                                if oa != ob {
                                    found = Some(Action::Swap { left: a, right: b, via });
                                }
                            }
                        }
                    }
                    found
                }
            };
            if let Some(a) = action {
                // Illegal picks are rejected without touching the state.
                let _ = apply_action(&mut g, a);
            }
            let dt = g.physics.dt_ms;
            step_decoherence(&mut g, dt);
            apply_adversary(&mut g, &adv).unwrap();
            g.check_invariants().map_err(TestCaseError::fail)?;
        }
        Ok(())
    })
}

pub fn determinism(cases: u32) -> Result<(), String> {
    let kinds = prop_oneof![
        Just(PolicyKind::Fmsp),
        Just(PolicyKind::Qdr),
        Just(PolicyKind::Gps),
        Just(PolicyKind::Flooding)
    ];
    run(cases, (4usize..=6, any::<u64>(), any::<u64>(), kinds), |(n, topo, seed, kind)| {
        let sc = Scenario {
            topology_seed: topo % 1000,
            horizon: 40,
            ..Scenario::desk(n)
        };
        let mut prep = Prepared::new(sc).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let mut go = || {
            let mut pol = BaselinePolicy::new(kind, None).unwrap();
            run_episode(&mut prep, &mut pol, seed, Collect::default()).unwrap().0
        };
        let (a, b) = (go(), go());
        prop_assert!(a.is_consistent());
        // NaN summaries rule out `==`; the serialized form is what gets compared.
        let json = |r: &qroute::harness::EpisodeRecord| serde_json::to_string(&r.without_timing()).unwrap();
        prop_assert_eq!(json(&a), json(&b));
        Ok(())
    })
}

pub fn contraction(cases: u32) -> Result<(), String> {
    let s = (2usize..=8, 1usize..=4, 0.5..0.98f64, any::<u64>(), 0.0..0.2f64);
    run(cases, s, |(states, actions, gamma, seed, rate)| {
        let mut r = rng::stream(seed, "prop-mdp");
        let mut m = AggregatedMdp::new(states, actions, gamma);
        for q in 0..states {
            for a in 0..actions {
                let row: Vec<f64> = (0..states).map(|_| r.random::<f64>() + 1e-9).collect();
                let z: f64 = row.iter().sum();
                for (q2, x) in row.into_iter().enumerate() {
                    m.p[(q * actions + a) * states + q2] = x / z;
                }
                m.r[q * actions + a] = r.random_range(-1.0..1.0);
            }
        }
        let vt = value_iteration(&m, 1e-10).unwrap();
        for w in vt.residuals.windows(2) {
            prop_assert!(w[1] <= gamma * w[0] + 1e-12, "{} > {gamma}·{}", w[1], w[0]);
        }

        // The belief prediction step is non-expansive in L1.
        let k = random_kernel(seed, states);
        let p: Vec<f64> = {
            let w: Vec<f64> = (0..states).map(|_| r.random::<f64>()).collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|x| x / s).collect()
        };
        let q = vec![1.0 / states as f64; states];
        let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
        prop_assert!(l1(&predict(&p, &k).unwrap(), &predict(&q, &k).unwrap()) <= l1(&p, &q) + 1e-12);

        // The drifting chain's Bellman operator under an arbitrary decay rate.
        let mdp = DriftMdp::new(DriftMdpConfig {
            links: 2,
            gamma,
            ..DriftMdpConfig::default()
        })
        .unwrap();
        let kern = mdp.kernel(rate);
        let n = mdp.kernel(rate).len();
        let v1: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let v2: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let sup = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let lhs = sup(&mdp.bellman(&kern, &v1), &mdp.bellman(&kern, &v2));
        prop_assert!(lhs <= gamma * sup(&v1, &v2) + 1e-12);
        Ok(())
    })
}

pub fn fusion_convexity(cases: u32) -> Result<(), String> {
    let s = (2usize..=10).prop_flat_map(|n| (simplex(n..=n), simplex(n..=n), 0.0..=1.0f64));
    run(cases, s, |(g, p, alpha)| {
        let f = fuse_probs(&g, &p, alpha).unwrap();
        prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for ((x, a), b) in f.iter().zip(&g).zip(&p) {
            prop_assert!((x - (alpha * a + (1.0 - alpha) * b)).abs() < 1e-12);
            prop_assert!(*x >= a.min(*b) - 1e-12 && *x <= a.max(*b) + 1e-12);
        }
        let t = trust(kl(&p, &g), 1.0).unwrap();
        prop_assert!(t > 0.0 && t <= 0.5);
        Ok(())
    })
}

pub fn kl_nonnegative(cases: u32) -> Result<(), String> {
    let s = (1usize..=12).prop_flat_map(|n| (simplex(n..=n), simplex(n..=n)));
    run(cases, s, |(p, q)| {
        prop_assert!(kl(&p, &q) >= 0.0);
        prop_assert!(kl(&p, &p).abs() < 1e-12);
        Ok(())
    })
}

pub fn permutation_equivariance(cases: u32) -> Result<(), String> {
    run(cases, (2usize..=8, any::<u64>()), |(n, seed)| {
        let p = GnnParams::new(small_config(seed)).unwrap();
        let g = random_graph(seed, n);
        let q = random_queries(seed, n, 3);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng::stream(seed, "prop-perm"));
        let g2 = permute(&g, &perm);
        let q2: Vec<ActionQuery> = q
            .iter()
            .map(|x| ActionQuery {
                u: perm[x.u],
                v: perm[x.v],
                ..*x
            })
            .collect();
        let (e1, l1) = forward(&p, &g, &q).unwrap();
        let (e2, l2) = forward(&p, &g2, &q2).unwrap();
        for v in 0..n {
            for (a, b) in e1.node(v).iter().zip(e2.node(perm[v])) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
        for (a, b) in l1.iter().zip(&l2) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        Ok(())
    })
}
