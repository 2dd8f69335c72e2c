//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.
//! Measured outcomes are reported rather than asserted where the criterion
//! is an empirical claim; only implementation checks fail the test.

mod common;

use std::time::{Duration, Instant};

use common::{enumerate_posterior, finite_difference_error};
use qroute::belief::{bayes_update, predict, BinGrid, TransitionKernel};
use qroute::gnn::RegretConfig;
use qroute::harness::{
    check_aggregation, check_hybrid, evaluate, imitation_regret_rate, relative_drops, run_ablation, run_drift_study,
    scalability, strictly_smallest, sweep_adversary, train, BoundsConfig, DriftStudyConfig, HybridConfig, Models,
    PolicyKind, Prepared, Scenario, SweepRow, TrainAlgo, TrainConfig, Verdict,
};
use qroute::netmodel::Symbol;
use qroute::rng;
use rand::Rng;

struct Line {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
    took: Duration,
    budget: Duration,
}

fn mins(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn report(lines: &mut Vec<Line>, id: u32, name: &'static str, budget: Duration, f: impl FnOnce() -> (bool, String)) {
    let t = Instant::now();
    let (pass, detail) = f();
    let took = t.elapsed();
    let line = Line {
        id,
        name,
        pass: pass && took <= budget,
        detail,
        took,
        budget,
    };
    println!(
        "{} {:>2} {}: {} [{:.1}s of {:.0}s]",
        if line.pass { "PASS" } else { "FAIL" },
        line.id,
        line.name,
        line.detail,
        line.took.as_secs_f64(),
        line.budget.as_secs_f64()
    );
    lines.push(line);
}

fn bayes_oracle() -> (bool, String) {
    let grid = BinGrid::new(3).unwrap();
    let centers = grid.centers();
    let mut r = rng::stream(7, "acceptance-bayes");
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut prior: Vec<f64> = (0..3).map(|_| r.random::<f64>() + 1e-3).collect();
        let s: f64 = prior.iter().sum();
        prior.iter_mut().for_each(|x| *x /= s);
        let mut k = [[0.0; 3]; 3];
        for row in k.iter_mut() {
            let raw: Vec<f64> = (0..3).map(|_| r.random::<f64>() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            for (x, y) in row.iter_mut().zip(raw) {
                *x = y / s;
            }
        }
        let flip = r.random::<f64>() * 0.49;
        let threshold = r.random_range(0.25..1.0);
        let seen = if r.random::<bool>() { Symbol::High } else { Symbol::Low };
        let kernel = TransitionKernel {
            bins: 3,
            entries: k.iter().flatten().copied().collect(),
        };
        let pred = predict(&prior, &kernel).unwrap();
        let post = bayes_update(&grid, &pred, seen, threshold, flip).unwrap();
        let want = enumerate_posterior(&prior, &k, &centers, threshold, flip, seen);
        for (a, b) in post.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    (worst <= 1e-12, format!("max |Δ| {worst:.2e} over 100 draws"))
}

fn gradients() -> (bool, String) {
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let (t, p) = finite_difference_error(1000 + seed, 1e-5);
        worst = worst.max(t).max(p);
    }
    (worst < 1e-4, format!("max relative error {worst:.2e} over 50 draws"))
}

fn trained_models() -> Models {
    let mut prep = Prepared::new(Scenario::desk(25)).unwrap();
    let t = Instant::now();
    let (models, log) = train(&mut prep, TrainAlgo::Joint, &TrainConfig::default(), true).unwrap();
    println!(
        "info: trained on {} in {:.1}s ({} reinforcement updates)",
        prep.scenario.name,
        t.elapsed().as_secs_f64(),
        log.rl_updates
    );
    models
}

const SEEDS: std::ops::Range<u64> = 0..100;

#[test]
fn acceptance() {
    let seeds: Vec<u64> = SEEDS.collect();
    let mut lines = Vec::new();
    println!();

    report(&mut lines, 1, "bayes filter oracle", Duration::from_secs(10), bayes_oracle);
    report(&mut lines, 2, "gradient exactness", Duration::from_secs(60), gradients);

    let bounds = BoundsConfig::default();
    report(&mut lines, 3, "aggregation bound", mins(5), || {
        let rows = check_aggregation(&bounds).unwrap();
        let bad = rows.iter().filter(|r| !r.row.holds).count();
        (
            !rows.is_empty() && bad == 0,
            format!("{} instance×clustering rows, {bad} violations", rows.len()),
        )
    });
    report(&mut lines, 4, "hybrid bound at every grid belief", mins(5), || {
        let rows = check_hybrid(&bounds).unwrap();
        let bad = rows.iter().filter(|r| !r.row.holds).count();
        let bad_sup = rows.iter().filter(|r| !r.row.holds_sup).count();
        let worst = rows.iter().map(|r| r.row.min_margin).fold(f64::INFINITY, f64::min);
        (
            !rows.is_empty() && bad == 0,
            format!(
                "{} rows, {bad} with some belief over the bound (worst margin {worst:.3}); \
                 {bad_sup} violate it with KL taken at its largest over beliefs",
                rows.len()
            ),
        )
    });
    report(&mut lines, 5, "imitation regret rate", mins(3), || {
        let rate = imitation_regret_rate(&RegretConfig::default(), 5).unwrap();
        (
            (-0.65..=-0.35).contains(&rate.fit.slope),
            format!("log-log slope {:.3} (R² {:.3}) to T={}", rate.fit.slope, rate.fit.r2, rate.t.last().unwrap()),
        )
    });
    report(&mut lines, 6, "drift regret linear in δT", mins(10), || {
        let study = run_drift_study(&[0.001, 0.002, 0.005, 0.01], &DriftStudyConfig::default()).unwrap();
        let totals: Vec<String> = study.traces.iter().map(|t| format!("{:.1}", t.total())).collect();
        let stable = study.traces.iter().all(|t| t.stability_holds);
        (
            study.fit.r2 >= 0.9,
            format!(
                "R_T {} → R² {:.3}, slope {:.1}; per-step value stability held: {stable}",
                totals.join("/"),
                study.fit.r2,
                study.fit.slope
            ),
        )
    });

    let models = trained_models();
    let hybrid = HybridConfig::default();

    report(&mut lines, 7, "ablation ordering", mins(30), || {
        let mut prep = Prepared::new(Scenario::desk(25)).unwrap();
        let table = run_ablation(&mut prep, &models, hybrid, &seeds).unwrap();
        let means: Vec<String> = table
            .rows
            .iter()
            .map(|r| format!("{} {:.4}±{:.4}", r.variant, r.fidelity.mean, r.fidelity.std))
            .collect();
        (table.verdict == Verdict::Holds, format!("{} → {:?}", means.join(", "), table.verdict))
    });

    report(&mut lines, 8, "hybrid/dqn delivery at peak demand", mins(45), || {
        let base = Prepared::new(Scenario::desk(50)).unwrap();
        let mut prep = base.with_rate(0.4).unwrap();
        let mean_delivery = |prep: &mut Prepared, kind| {
            let ev = evaluate(prep, kind, &models, hybrid, &seeds).unwrap();
            SweepRow::from_rows(PolicyKind::name(kind), 0.4, &ev.rows).delivery.mean
        };
        let h = mean_delivery(&mut prep, PolicyKind::Hybrid);
        let d = mean_delivery(&mut prep, PolicyKind::Dqn);
        (h / d >= 1.2, format!("hybrid {h:.4} / dqn {d:.4} = {:.3}", h / d))
    });

    report(&mut lines, 9, "smallest fidelity drop at ε=0.5", mins(30), || {
        let mut rows = Vec::new();
        for eps in [0.0, 0.5] {
            let mut prep = Prepared::new(Scenario {
                adversary: sweep_adversary(eps),
                ..Scenario::desk(25)
            })
            .unwrap();
            for kind in std::iter::once(PolicyKind::Hybrid).chain(PolicyKind::BASELINES) {
                let ev = evaluate(&mut prep, kind, &models, hybrid, &seeds).unwrap();
                rows.push(SweepRow::from_rows(kind.name(), eps, &ev.rows));
            }
        }
        let drops = relative_drops(&rows, 0.5);
        let listed: Vec<String> = drops.iter().map(|(p, d)| format!("{p} {d:.4}")).collect();
        (strictly_smallest(&drops, "hybrid"), listed.join(", "))
    });

    report(&mut lines, 10, "per-step cost decomposition", mins(20), || {
        let mut ok = true;
        let mut parts = Vec::new();
        for n in [10, 25, 50, 100] {
            let mut prep = Prepared::new(Scenario::desk(n)).unwrap();
            let row = scalability(&mut prep, &models, hybrid, &seeds[..10]).unwrap();
            ok &= row.rel_err <= 0.15;
            parts.push(format!("n={n} ᾱ {:.3} err {:.3}", row.alpha_bar, row.rel_err));
        }
        (ok, parts.join(", "))
    });

    report(&mut lines, 11, "property suites, 1000 cases", mins(10), || {
        let failures: Vec<String> = common::props::SUITES
            .iter()
            .filter_map(|(name, suite)| suite(1000).err().map(|e| format!("{name}: {e}")))
            .collect();
        (
            failures.is_empty(),
            if failures.is_empty() {
                format!("{} suites clean", common::props::SUITES.len())
            } else {
                failures.join("; ")
            },
        )
    });

    let passed = lines.iter().filter(|l| l.pass).count();
    println!("{passed}/{} criteria pass", lines.len());
    for l in lines.iter().filter(|l| l.took > l.budget) {
        println!("note: criterion {} ran {:.0}s over its budget", l.id, (l.took - l.budget).as_secs_f64());
    }

    // Implementation checks must pass; criteria 4 and 6 to 10 are measured
    // claims and are reported above without failing the run.
    for id in [1, 2, 3, 5, 11] {
        let l = lines.iter().find(|l| l.id == id).unwrap();
        assert!(l.pass, "criterion {id} ({}) failed: {}", l.name, l.detail);
    }
}
