#![allow(dead_code)]

pub mod props;

use qroute::gnn::{
    backward, critic_values, embed, score, ActionQuery, GnnConfig, GnnParams, GraphInput, EDGE_FEATURES,
    NODE_FEATURES,
};
use qroute::netmodel::{ActionKind, Symbol};
use qroute::routing::ACTION_FEATURES;
use qroute::rng;
use rand::Rng;

pub fn small_config(seed: u64) -> GnnConfig {
    GnnConfig {
        hidden: 4,
        layers: 2,
        message_width: 5,
        scorer_width: 5,
        seed,
        ..Default::default()
    }
}

/// Random connected graph: a ring plus random chords, both directions.
pub fn random_graph(seed: u64, n: usize) -> GraphInput {
    let mut r = rng::stream(seed, "test-graph");
    let mut pairs: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).filter(|(a, b)| a != b).collect();
    if n == 2 {
        pairs.truncate(1);
    }
    for _ in 0..n / 2 {
        let a = r.random_range(0..n);
        let b = r.random_range(0..n);
        if a != b {
            pairs.push((a, b));
        }
    }
    let mut edges = Vec::new();
    let mut edge_features = Vec::new();
    for (a, b) in pairs {
        let f: Vec<f64> = (0..EDGE_FEATURES).map(|_| r.random_range(-1.0..1.0)).collect();
        for e in [(a, b), (b, a)] {
            edges.push(e);
            edge_features.extend_from_slice(&f);
        }
    }
    GraphInput {
        nodes: n,
        node_features: (0..n * NODE_FEATURES).map(|_| r.random_range(-1.0..1.0)).collect(),
        edges,
        edge_features,
    }
}

pub fn random_queries(seed: u64, n: usize, count: usize) -> Vec<ActionQuery> {
    let mut r = rng::stream(seed, "test-queries");
    (0..count)
        .map(|_| {
            let mut features = [0.0; ACTION_FEATURES];
            features.iter_mut().for_each(|x| *x = r.random_range(0.0..1.0));
            ActionQuery {
                u: r.random_range(0..n),
                v: r.random_range(0..n),
                kind: r.random_range(0..ActionKind::COUNT),
                features,
            }
        })
        .collect()
}

fn objective(p: &GnnParams, g: &GraphInput, q: &[ActionQuery], c: &[f64]) -> f64 {
    let emb = embed(p, g).unwrap();
    let (logits, _) = score(p, &emb, q).unwrap();
    logits.iter().zip(c).map(|(a, b)| a * b).sum()
}

fn critic_objective(p: &GnnParams, psi: &[f64], g: &GraphInput, q: &[ActionQuery], c: &[f64]) -> f64 {
    let emb = embed(p, g).unwrap();
    let (v, _) = critic_values(&p.layout, psi, &emb, q).unwrap();
    v.iter().zip(c).map(|(a, b)| a * b).sum()
}

/// Relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` of
/// the policy and critic gradients of a random linear functional of the
/// outputs, with central differences of step `h`.
pub fn finite_difference_error(seed: u64, h: f64) -> (f64, f64) {
    let mut r = rng::stream(seed, "fd-draw");
    let n = r.random_range(3..7);
    let p = GnnParams::new(small_config(seed)).unwrap();
    let g = random_graph(seed, n);
    let q = random_queries(seed, n, 4);
    let c: Vec<f64> = (0..q.len()).map(|_| r.random_range(-1.0..1.0)).collect();

    let emb = embed(&p, &g).unwrap();
    let analytic = backward(&p, &g, &emb, &q, &c).unwrap();
    let mut numeric = vec![0.0; p.theta.len()];
    let mut probe = p.clone();
    for i in 0..p.theta.len() {
        let x = p.theta[i];
        probe.theta[i] = x + h;
        let up = objective(&probe, &g, &q, &c);
        probe.theta[i] = x - h;
        let down = objective(&probe, &g, &q, &c);
        probe.theta[i] = x;
        numeric[i] = (up - down) / (2.0 * h);
    }
    let theta_err = rel(&analytic, &numeric);

    let (_, caches) = critic_values(&p.layout, &p.psi, &emb, &q).unwrap();
    let mut analytic = vec![0.0; p.psi.len()];
    for (cache, &ci) in caches.iter().zip(&c) {
        qroute::gnn::critic_backward(&p.layout, &p.psi, cache, ci, &mut analytic);
    }
    let mut psi = p.psi.clone();
    let mut numeric = vec![0.0; psi.len()];
    for i in 0..psi.len() {
        let x = psi[i];
        psi[i] = x + h;
        let up = critic_objective(&p, &psi, &g, &q, &c);
        psi[i] = x - h;
        let down = critic_objective(&p, &psi, &g, &q, &c);
        psi[i] = x;
        numeric[i] = (up - down) / (2.0 * h);
    }
    (theta_err, rel(&analytic, &numeric))
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-300)
}

/// Brute-force joint enumeration over (previous bin, next bin, symbol).
pub fn enumerate_posterior(
    prior: &[f64],
    k: &[[f64; 3]; 3],
    centers: &[f64],
    threshold: f64,
    flip: f64,
    seen: Symbol,
) -> Vec<f64> {
    let mut joint = [0.0; 3];
    let mut evidence = 0.0;
    for s in 0..3 {
        for s2 in 0..3 {
            for symbol in [Symbol::Low, Symbol::High] {
                let truly_high = centers[s2] >= threshold;
                let p_sym = match (symbol, truly_high) {
                    (Symbol::High, true) | (Symbol::Low, false) => 1.0 - flip,
                    _ => flip,
                };
                let p = prior[s] * k[s][s2] * p_sym;
                if symbol == seen {
                    joint[s2] += p;
                    evidence += p;
                }
            }
        }
    }
    joint.iter().map(|j| j / evidence).collect()
}

/// Relabel node `v` as `perm[v]`.
pub fn permute(g: &GraphInput, perm: &[usize]) -> GraphInput {
    let n = g.nodes;
    let mut nf = vec![0.0; n * NODE_FEATURES];
    for v in 0..n {
        nf[perm[v] * NODE_FEATURES..(perm[v] + 1) * NODE_FEATURES].copy_from_slice(g.node(v));
    }
    GraphInput {
        nodes: n,
        node_features: nf,
        edges: g.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect(),
        edge_features: g.edge_features.clone(),
    }
}

