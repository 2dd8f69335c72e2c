mod common;

use common::enumerate_posterior;
use qroute::belief::{
    bayes_update, entropy, predict, BeliefFilter, BinGrid, FilterConfig, Prior, TransitionKernel,
};
use qroute::netmodel::{build_network, observe, PhysicsParams, Symbol, Topology, TopologyParams};
use qroute::rng;
use rand::Rng;

#[test]
fn three_bin_filter_matches_enumeration() {
    let grid = BinGrid::new(3).unwrap();
    let centers = grid.centers();
    let mut r = rng::stream(2024, "oracle");
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
        let threshold = 0.25 + 0.75 * r.random::<f64>();
        let seen = if r.random::<bool>() { Symbol::High } else { Symbol::Low };

        let kernel = TransitionKernel {
            bins: 3,
            entries: k.iter().flatten().copied().collect(),
        };
        let pred = predict(&prior, &kernel).unwrap();
        let post = bayes_update(&grid, &pred, seen, threshold, flip).unwrap();
        let want = enumerate_posterior(&prior, &k, &centers, threshold, flip, seen);
        for (a, b) in post.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{post:?} vs {want:?}");
        }
    }
}

#[test]
fn filter_tracks_a_static_link() {
    let physics = PhysicsParams {
        diffusion: 0.0,
        ..Default::default()
    };
    let mut hits = 0;
    for trial in 0..100u64 {
        let mut g =
            build_network(Topology::Line, 2, &TopologyParams::default(), &physics, trial).unwrap();
        let truth = rng::indexed(7, "truth", trial).random_range(0.55..1.0);
        g.link_state_mut(0).unwrap().fidelity = truth;
        let mut filter = BeliefFilter::new(FilterConfig {
            prior: Prior::Uniform,
            g_flip: 0.05,
            ..Default::default()
        })
        .unwrap();
        let mut b = filter.init(&g.observable());
        let mut noise = rng::indexed(7, "noise", trial);
        for _ in 0..200 {
            let t = filter.probe_threshold(&b, 0);
            let obs = observe(&g, &[0], |_| t, 0.05, &mut noise).unwrap();
            filter.update(&mut b, &obs).unwrap();
        }
        let row = &b.links[0];
        let mode = (0..row.len())
            .max_by(|&i, &j| row[i].total_cmp(&row[j]))
            .unwrap();
        if filter.grid.bin_of(truth) == mode {
            hits += 1;
        }
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert!(hits >= 95, "mode matched truth in {hits}/100 trials");
}

#[test]
fn noiseless_evidence_lowers_expected_entropy() {
    let grid = BinGrid::new(10).unwrap();
    let mut r = rng::stream(3, "entropy");
    for _ in 0..1000 {
        let mut b: Vec<f64> = (0..10).map(|_| r.random::<f64>()).collect();
        let s: f64 = b.iter().sum();
        b.iter_mut().for_each(|x| *x /= s);
        let t = grid.lower(r.random_range(1..10));
        let p_high: f64 = (0..10).filter(|&i| grid.center(i) >= t).map(|i| b[i]).sum();
        let high = bayes_update(&grid, &b, Symbol::High, t, 0.0).unwrap();
        let low = bayes_update(&grid, &b, Symbol::Low, t, 0.0).unwrap();
        let expected = p_high * entropy(&high) + (1.0 - p_high) * entropy(&low);
        assert!(expected <= entropy(&b) + 1e-12);
        // Support can only shrink.
        for post in [&high, &low] {
            assert!(post.iter().zip(&b).all(|(p, q)| *q > 0.0 || *p == 0.0));
        }
    }
}

#[test]
fn single_reading_can_raise_entropy() {
    let grid = BinGrid::new(3).unwrap();
    let b = [0.9, 0.05, 0.05];
    let post = bayes_update(&grid, &b, Symbol::High, grid.lower(1), 0.0).unwrap();
    assert!(entropy(&post) > entropy(&b));
}
