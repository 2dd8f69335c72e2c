//! Factored Bayesian filter over per-link fidelity bins.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::netmodel::{
    clamp_fidelity, swap_fidelity, Action, ActionOutcome, LinkId, NetworkGraph, ObservableView,
    Observation, Symbol, FIDELITY_FLOOR,
};
use crate::{rng, Error, Result};

/// Uniform bins over the Werner range `[0.25, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    pub bins: usize,
}

impl BinGrid {
    pub fn new(bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::InvalidParam(format!("need at least 2 bins, got {bins}")));
        }
        Ok(Self { bins })
    }

    pub fn width(&self) -> f64 {
        (1.0 - FIDELITY_FLOOR) / self.bins as f64
    }

    pub fn lower(&self, i: usize) -> f64 {
        FIDELITY_FLOOR + self.width() * i as f64
    }

    pub fn upper(&self, i: usize) -> f64 {
        if i + 1 == self.bins {
            1.0
        } else {
            self.lower(i + 1)
        }
    }

    pub fn center(&self, i: usize) -> f64 {
        FIDELITY_FLOOR + self.width() * (i as f64 + 0.5)
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.bins).map(|i| self.center(i)).collect()
    }

    pub fn bin_of(&self, f: f64) -> usize {
        let i = ((f - FIDELITY_FLOOR) / self.width()).floor();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(self.bins - 1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prior {
    Uniform,
    /// Equal mass on the bins whose centres fall inside the range.
    FidelityRange(f64, f64),
}

/// How a continuous fidelity map is turned into a bin-to-bin kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    /// Push each bin centre through the map.
    BinCenter,
    /// Push a uniform distribution over each bin through the map. Needed when
    /// one step moves fidelity by much less than a bin width.
    WithinBin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub grid: BinGrid,
    /// Per link, a distribution over bins. Dead links hold their fresh-pair prior.
    pub links: Vec<Vec<f64>>,
    pub occupancy: Vec<u32>,
    pub ages: Vec<u64>,
    pub alive: Vec<bool>,
    pub step: u64,
}

impl BeliefState {
    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    /// Stable 64-bit digest used to key step logs.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
            }
        };
        eat(self.step);
        for row in &self.links {
            for &p in row {
                eat(p.to_bits());
            }
        }
        for &m in &self.occupancy {
            eat(u64::from(m));
        }
        h
    }
}

pub fn prior_vector(grid: &BinGrid, prior: Prior) -> Vec<f64> {
    match prior {
        Prior::Uniform => vec![1.0 / grid.bins as f64; grid.bins],
        Prior::FidelityRange(lo, hi) => {
            let inside: Vec<bool> = (0..grid.bins)
                .map(|i| (lo..=hi).contains(&grid.center(i)))
                .collect();
            let count = inside.iter().filter(|&&x| x).count();
            if count == 0 {
                let mut v = vec![0.0; grid.bins];
                v[grid.bin_of(0.5 * (lo + hi))] = 1.0;
                return v;
            }
            inside
                .into_iter()
                .map(|x| if x { 1.0 / count as f64 } else { 0.0 })
                .collect()
        }
    }
}

pub fn init_belief(view: &ObservableView<'_>, grid: BinGrid, prior: Prior) -> BeliefState {
    let p = prior_vector(&grid, prior);
    BeliefState {
        grid,
        links: vec![p; view.link_count()],
        occupancy: (0..view.node_count()).map(|v| view.occupancy(v)).collect(),
        ages: (0..view.link_count()).map(|l| view.age(l)).collect(),
        alive: (0..view.link_count()).map(|l| view.alive(l)).collect(),
        step: view.time(),
    }
}

/// Row-stochastic bin-to-bin matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionKernel {
    pub bins: usize,
    /// Row-major `bins × bins`.
    pub entries: Vec<f64>,
}

impl TransitionKernel {
    pub fn identity(bins: usize) -> Self {
        let mut entries = vec![0.0; bins * bins];
        for i in 0..bins {
            entries[i * bins + i] = 1.0;
        }
        Self { bins, entries }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.bins..(i + 1) * self.bins]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.bins + j]
    }

    pub fn max_row_error(&self) -> f64 {
        (0..self.bins)
            .map(|i| (self.row(i).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Single-link dynamics a kernel can encode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Dynamics {
    Identity,
    /// One step of decoherence: rate Γ per ms, step `dt` ms, diffusion κ.
    Decay { rate: f64, dt: f64, diffusion: f64 },
    /// Successful purification with gain η.
    Purify { gain: f64 },
}

impl Dynamics {
    /// The deterministic part of the map, as `f ↦ a·f + c`.
    fn affine(&self) -> (f64, f64) {
        match *self {
            Dynamics::Identity => (1.0, 0.0),
            Dynamics::Decay { rate, dt, .. } => ((-rate * dt).exp(), 0.0),
            Dynamics::Purify { gain } => (1.0 - gain, gain),
        }
    }

    fn diffusion(&self) -> (f64, f64) {
        match *self {
            Dynamics::Decay { diffusion, dt, .. } => (diffusion, dt),
            _ => (0.0, 0.0),
        }
    }

    fn key(&self) -> [u64; 4] {
        match *self {
            Dynamics::Identity => [0, 0, 0, 0],
            Dynamics::Decay { rate, dt, diffusion } => {
                [1, rate.to_bits(), dt.to_bits(), diffusion.to_bits()]
            }
            Dynamics::Purify { gain } => [2, gain.to_bits(), 0, 0],
        }
    }
}

/// Spread the image of `[lo, hi]` under `f ↦ a·f + c` (then clamped to the
/// Werner range) over the bins, uniformly along the image.
fn interval_mass(grid: &BinGrid, lo: f64, hi: f64, a: f64, c: f64, out: &mut [f64]) {
    let (x0, x1) = (a * lo + c, a * hi + c);
    let (x0, x1) = (x0.min(x1), x0.max(x1));
    let len = x1 - x0;
    if len <= 1e-15 {
        out[grid.bin_of(clamp_fidelity(x0))] += 1.0;
        return;
    }
    let below = (FIDELITY_FLOOR.min(x1) - x0).max(0.0);
    let above = (x1 - 1.0f64.max(x0)).max(0.0);
    out[0] += below / len;
    out[grid.bins - 1] += above / len;
    for j in 0..grid.bins {
        let overlap = (x1.min(grid.upper(j)) - x0.max(grid.lower(j))).max(0.0);
        out[j] += overlap / len;
    }
}

pub fn build_kernel(
    grid: &BinGrid,
    dynamics: Dynamics,
    discretization: Discretization,
    samples: usize,
    seed: u64,
) -> TransitionKernel {
    let b = grid.bins;
    let (a, c) = dynamics.affine();
    let (kappa, dt) = dynamics.diffusion();
    let mut entries = vec![0.0; b * b];
    for i in 0..b {
        let row = &mut entries[i * b..(i + 1) * b];
        if kappa <= 0.0 {
            match discretization {
                Discretization::BinCenter => {
                    row[grid.bin_of(clamp_fidelity(a * grid.center(i) + c))] = 1.0
                }
                Discretization::WithinBin => {
                    interval_mass(grid, grid.lower(i), grid.upper(i), a, c, row)
                }
            }
        } else {
            let n = samples.max(1);
            let mut r = rng::indexed(seed, "kernel-row", i as u64);
            for _ in 0..n {
                let f0 = match discretization {
                    Discretization::BinCenter => grid.center(i),
                    Discretization::WithinBin => grid.lower(i) + grid.width() * r.random::<f64>(),
                };
                let z: f64 = r.sample(StandardNormal);
                let f1 = clamp_fidelity(a * f0 + c + (kappa * f0 * (1.0 - f0) * dt).max(0.0).sqrt() * z);
                row[grid.bin_of(f1)] += 1.0;
            }
            for x in row.iter_mut() {
                *x /= n as f64;
            }
        }
        let s: f64 = row.iter().sum();
        for x in row.iter_mut() {
            *x /= s;
        }
    }
    TransitionKernel { bins: b, entries }
}

/// `bᵀ K`.
pub fn predict(b: &[f64], k: &TransitionKernel) -> Result<Vec<f64>> {
    if b.len() != k.bins {
        return Err(Error::DimensionMismatch {
            expected: k.bins,
            got: b.len(),
        });
    }
    let mut out = vec![0.0; k.bins];
    for (i, &p) in b.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (o, &kij) in out.iter_mut().zip(k.row(i)) {
            *o += p * kij;
        }
    }
    Ok(out)
}

/// Probability of `symbol` for a pair whose fidelity is `f`.
pub fn likelihood(symbol: Symbol, f: f64, threshold: f64, g_flip: f64) -> f64 {
    let high = f >= threshold;
    if (symbol == Symbol::High) == high {
        1.0 - g_flip
    } else {
        g_flip
    }
}

/// Posterior ∝ likelihood · predicted. Falls back to the prediction when the
/// evidence has (numerically) zero probability.
pub fn posterior(predicted: &[f64], likelihoods: &[f64]) -> Result<Vec<f64>> {
    if predicted.len() != likelihoods.len() {
        return Err(Error::DimensionMismatch {
            expected: predicted.len(),
            got: likelihoods.len(),
        });
    }
    let joint: Vec<f64> = predicted.iter().zip(likelihoods).map(|(p, l)| p * l).collect();
    let z: f64 = joint.iter().sum();
    if z < 1e-12 {
        return Ok(predicted.to_vec());
    }
    Ok(joint.into_iter().map(|x| x / z).collect())
}

/// Update one link's predicted distribution with a thresholded reading
/// evaluated at the bin centres.
pub fn bayes_update(
    grid: &BinGrid,
    predicted: &[f64],
    symbol: Symbol,
    threshold: f64,
    g_flip: f64,
) -> Result<Vec<f64>> {
    let lik: Vec<f64> = (0..grid.bins)
        .map(|i| likelihood(symbol, grid.center(i), threshold, g_flip))
        .collect();
    posterior(predicted, &lik)
}

pub fn mean(grid: &BinGrid, b: &[f64]) -> f64 {
    b.iter().enumerate().map(|(i, p)| p * grid.center(i)).sum()
}

pub fn variance(grid: &BinGrid, b: &[f64]) -> f64 {
    let m = mean(grid, b);
    b.iter()
        .enumerate()
        .map(|(i, p)| p * (grid.center(i) - m).powi(2))
        .sum()
}

/// Probability that the link's fidelity reaches `f_min`, counting bins whose
/// centre does.
pub fn prob_at_least(grid: &BinGrid, b: &[f64], f_min: f64) -> f64 {
    b.iter()
        .enumerate()
        .filter(|(i, _)| grid.center(*i) >= f_min)
        .map(|(_, p)| p)
        .sum()
}

pub fn entropy(b: &[f64]) -> f64 {
    b.iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum()
}

pub fn expected_fidelity(b: &BeliefState, link: LinkId) -> f64 {
    mean(&b.grid, &b.links[link])
}

/// Mean absolute gap between belief means and true fidelities, over live links.
pub fn belief_error(b: &BeliefState, truth: &NetworkGraph) -> f64 {
    let live: Vec<&crate::netmodel::Link> = truth.live_links().collect();
    if live.is_empty() {
        return 0.0;
    }
    live.iter()
        .map(|l| (expected_fidelity(b, l.id) - l.state.fidelity).abs())
        .sum::<f64>()
        / live.len() as f64
}

/// Distribution of the swapped pair's fidelity given independent inputs.
pub fn swap_pushforward(
    grid: &BinGrid,
    left: &[f64],
    right: &[f64],
    discretization: Discretization,
) -> Vec<f64> {
    let sub = match discretization {
        Discretization::BinCenter => 1,
        Discretization::WithinBin => 4,
    };
    let points = |i: usize| -> Vec<f64> {
        (0..sub)
            .map(|k| grid.lower(i) + grid.width() * (k as f64 + 0.5) / sub as f64)
            .collect()
    };
    let w = 1.0 / (sub * sub) as f64;
    let mut out = vec![0.0; grid.bins];
    for (i, &p) in left.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (j, &q) in right.iter().enumerate() {
            if q == 0.0 {
                continue;
            }
            for f1 in points(i) {
                for f2 in points(j) {
                    out[grid.bin_of(swap_fidelity(f1, f2))] += p * q * w;
                }
            }
        }
    }
    let s: f64 = out.iter().sum();
    out.into_iter().map(|x| x / s).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeRule {
    /// Probe at the bin edge closest to the belief median.
    Adaptive,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub bins: usize,
    pub prior: Prior,
    pub discretization: Discretization,
    pub g_flip: f64,
    pub kernel_samples: usize,
    pub probe: ProbeRule,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            bins: 10,
            prior: Prior::FidelityRange(0.70, 0.95),
            discretization: Discretization::WithinBin,
            g_flip: 0.05,
            kernel_samples: 10_000,
            probe: ProbeRule::Adaptive,
            seed: 0,
        }
    }
}

/// Drives a [`BeliefState`] through the act → observe → decay cycle, caching
/// kernels by their dynamics.
#[derive(Debug, Clone)]
pub struct BeliefFilter {
    pub config: FilterConfig,
    pub grid: BinGrid,
    fresh: Vec<f64>,
    cache: HashMap<[u64; 4], TransitionKernel>,
}

impl BeliefFilter {
    pub fn new(config: FilterConfig) -> Result<Self> {
        let grid = BinGrid::new(config.bins)?;
        if !(0.0..0.5).contains(&config.g_flip) {
            return Err(Error::InvalidParam(format!(
                "flip probability must lie in [0, 0.5), got {}",
                config.g_flip
            )));
        }
        let fresh = prior_vector(&grid, config.prior);
        Ok(Self {
            config,
            grid,
            fresh,
            cache: HashMap::new(),
        })
    }

    pub fn init(&self, view: &ObservableView<'_>) -> BeliefState {
        init_belief(view, self.grid, self.config.prior)
    }

    pub fn kernel(&mut self, dynamics: Dynamics) -> &TransitionKernel {
        let (grid, disc, n, seed) = (
            self.grid,
            self.config.discretization,
            self.config.kernel_samples,
            self.config.seed,
        );
        self.cache
            .entry(dynamics.key())
            .or_insert_with(|| build_kernel(&grid, dynamics, disc, n, seed))
    }

    pub fn probe_threshold(&self, b: &BeliefState, link: LinkId) -> f64 {
        match self.config.probe {
            ProbeRule::Fixed(t) => t,
            ProbeRule::Adaptive => {
                let row = &b.links[link];
                let mut acc = 0.0;
                let mut median = self.grid.bins - 1;
                for (i, p) in row.iter().enumerate() {
                    acc += p;
                    if acc >= 0.5 {
                        median = i;
                        break;
                    }
                }
                // Pick the edge that splits the mass most evenly.
                let below = acc - row[median];
                let lower_edge = (median.max(1), (0.5 - below).abs());
                let upper_edge = ((median + 1).min(self.grid.bins - 1), (acc - 0.5).abs());
                let edge = if lower_edge.1 <= upper_edge.1 {
                    lower_edge.0
                } else {
                    upper_edge.0
                };
                self.grid.lower(edge)
            }
        }
    }

    fn ensure_len(&self, b: &mut BeliefState, links: usize) {
        while b.links.len() < links {
            b.links.push(self.fresh.clone());
            b.ages.push(0);
            b.alive.push(false);
        }
    }

    /// Account for the classical effects of an executed action.
    pub fn apply_outcome(
        &mut self,
        b: &mut BeliefState,
        outcome: &ActionOutcome,
        view: &ObservableView<'_>,
    ) -> Result<()> {
        self.ensure_len(b, view.link_count());
        match outcome.action {
            Action::Purify { link } if outcome.success => {
                let gain = view.purification_gain(link);
                let k = self.kernel(Dynamics::Purify { gain }).clone();
                b.links[link] = predict(&b.links[link], &k)?;
            }
            Action::Entangle { link } if outcome.success && !b.alive[link] => {
                b.links[link] = self.fresh.clone();
            }
            Action::Swap { left, right, .. } => {
                if let Some(new) = outcome.created {
                    b.links[new] = swap_pushforward(
                        &self.grid,
                        &b.links[left],
                        &b.links[right],
                        self.config.discretization,
                    );
                }
            }
            _ => {}
        }
        for &l in &outcome.consumed {
            if Some(l) != outcome.created {
                b.links[l] = self.fresh.clone();
            }
        }
        self.sync(b, view);
        Ok(())
    }

    /// Fold an observation's readings into the belief.
    pub fn update(&mut self, b: &mut BeliefState, obs: &Observation) -> Result<()> {
        self.ensure_len(b, obs.alive.len());
        for r in &obs.readings {
            b.links[r.link] = bayes_update(
                &self.grid,
                &b.links[r.link],
                r.symbol,
                r.threshold,
                self.config.g_flip,
            )?;
        }
        b.occupancy.clone_from(&obs.occupancy);
        b.ages.clone_from(&obs.ages);
        b.alive.clone_from(&obs.alive);
        b.step = obs.step;
        Ok(())
    }

    /// Apply one step of decoherence to every live link, then refresh side
    /// information. Links that died are reset to the fresh prior.
    pub fn predict_step(&mut self, b: &mut BeliefState, view: &ObservableView<'_>) -> Result<()> {
        self.ensure_len(b, view.link_count());
        let phys = view.physics();
        for l in 0..view.link_count() {
            if !view.alive(l) {
                if b.alive[l] {
                    b.links[l] = self.fresh.clone();
                }
                continue;
            }
            let dyn_ = Dynamics::Decay {
                rate: view.decay_rate(l),
                dt: phys.dt_ms,
                diffusion: phys.diffusion,
            };
            let k = self.kernel(dyn_).clone();
            b.links[l] = predict(&b.links[l], &k)?;
        }
        self.sync(b, view);
        Ok(())
    }

    pub fn sync(&self, b: &mut BeliefState, view: &ObservableView<'_>) {
        self.ensure_len(b, view.link_count());
        for l in 0..view.link_count() {
            if !view.alive(l) && b.alive[l] {
                b.links[l] = self.fresh.clone();
            }
            b.alive[l] = view.alive(l);
            b.ages[l] = view.age(l);
        }
        b.occupancy = (0..view.node_count()).map(|v| view.occupancy(v)).collect();
        b.step = view.time();
    }

    pub fn fresh_prior(&self) -> &[f64] {
        &self.fresh
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(b: usize) -> BinGrid {
        BinGrid::new(b).unwrap()
    }

    #[test]
    fn uniform_prior() {
        let p = prior_vector(&grid(10), Prior::Uniform);
        assert!(p.iter().all(|&x| (x - 0.1).abs() < 1e-15));
    }

    #[test]
    fn range_prior_counts_bins_by_centre() {
        let g = grid(15);
        let p = prior_vector(&g, Prior::FidelityRange(0.70, 0.95));
        let mut expected = 0;
        for i in 0..15 {
            let c = 0.25 + 0.05 * (i as f64 + 0.5);
            if (0.70..=0.95).contains(&c) {
                expected += 1;
            }
        }
        assert_eq!(p.iter().filter(|&&x| x > 0.0).count(), expected);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_and_point_mass_kernels() {
        let g = grid(10);
        for d in [Discretization::BinCenter, Discretization::WithinBin] {
            let k = build_kernel(
                &g,
                Dynamics::Decay {
                    rate: 0.0,
                    dt: 1.0,
                    diffusion: 0.0,
                },
                d,
                0,
                0,
            );
            assert_eq!(k, TransitionKernel::identity(10));
        }
        let k = build_kernel(
            &g,
            Dynamics::Decay {
                rate: 0.05,
                dt: 1.0,
                diffusion: 0.0,
            },
            Discretization::BinCenter,
            0,
            0,
        );
        for i in 0..10 {
            let j = g.bin_of(g.center(i) * (-0.05f64).exp());
            assert_eq!(k.get(i, j), 1.0);
        }
    }

    #[test]
    fn kernels_are_stochastic() {
        let g = grid(12);
        let cases = [
            Dynamics::Decay {
                rate: 0.08,
                dt: 0.1,
                diffusion: 0.0,
            },
            Dynamics::Decay {
                rate: 0.03,
                dt: 0.5,
                diffusion: 0.05,
            },
            Dynamics::Purify { gain: 0.6 },
        ];
        for dynamics in cases {
            for d in [Discretization::BinCenter, Discretization::WithinBin] {
                let k = build_kernel(&g, dynamics, d, 10_000, 3);
                assert!(k.max_row_error() < 1e-9);
                assert!(k.entries.iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn within_bin_decay_moves_mass_fractionally() {
        let g = grid(10);
        let k = build_kernel(
            &g,
            Dynamics::Decay {
                rate: 0.05,
                dt: 0.1,
                diffusion: 0.0,
            },
            Discretization::WithinBin,
            0,
            0,
        );
        // Top bin [0.925, 1] maps to [0.925·a, a]; the part below 0.925 leaks.
        let a = (-0.005f64).exp();
        let leak = (0.925 - 0.925 * a) / (a - 0.925 * a);
        assert!((k.get(9, 8) - leak).abs() < 1e-12);
    }

    #[test]
    fn predict_examples() {
        let b = vec![0.1, 0.2, 0.3, 0.4];
        assert_eq!(predict(&b, &TransitionKernel::identity(4)).unwrap(), b);
        let u = vec![0.25; 4];
        let k = TransitionKernel {
            bins: 4,
            entries: vec![
                0.1, 0.2, 0.3, 0.4, 0.4, 0.1, 0.2, 0.3, 0.3, 0.4, 0.1, 0.2, 0.2, 0.3, 0.4, 0.1,
            ],
        };
        for x in predict(&u, &k).unwrap() {
            assert!((x - 0.25).abs() < 1e-15);
        }
        assert!(matches!(
            predict(&[1.0], &k),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn three_bin_posterior() {
        let post = posterior(&[0.2, 0.3, 0.5], &[0.1, 0.1, 0.9]).unwrap();
        for (x, y) in post.iter().zip([0.04, 0.06, 0.90]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn hard_evidence_zeroes_low_bins() {
        let g = grid(10);
        let prior = vec![0.1; 10];
        let post = bayes_update(&g, &prior, Symbol::High, 0.8, 0.0).unwrap();
        for i in 0..10 {
            if g.center(i) < 0.8 {
                assert_eq!(post[i], 0.0);
            }
        }
        assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(entropy(&post) <= entropy(&prior));
    }

    #[test]
    fn near_uninformative_reading() {
        let g = grid(10);
        let prior: Vec<f64> = (1..=10).map(|i| i as f64 / 55.0).collect();
        let post = bayes_update(&g, &prior, Symbol::Low, 0.6, 0.5 - 1e-9).unwrap();
        for (a, b) in post.iter().zip(&prior) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn impossible_evidence_keeps_prediction() {
        let pred = vec![0.0, 1.0, 0.0];
        assert_eq!(posterior(&pred, &[1.0, 0.0, 1.0]).unwrap(), pred);
    }

    #[test]
    fn moments() {
        let g = grid(15);
        let mut b = vec![0.0; 15];
        b[g.bin_of(0.85)] = 1.0;
        assert!((mean(&g, &b) - g.center(g.bin_of(0.85))).abs() < 1e-15);
        assert_eq!(variance(&g, &b), 0.0);

        let g = BinGrid::new(15).unwrap();
        let mut b = vec![0.0; 15];
        let (i, j) = (g.bin_of(0.6), g.bin_of(0.8));
        b[i] = 0.5;
        b[j] = 0.5;
        assert!((mean(&g, &b) - 0.5 * (g.center(i) + g.center(j))).abs() < 1e-15);
    }

    #[test]
    fn swap_pushforward_of_point_masses() {
        let g = grid(10);
        let mut top = vec![0.0; 10];
        top[9] = 1.0;
        let out = swap_pushforward(&g, &top, &top, Discretization::BinCenter);
        let c = g.center(9);
        assert_eq!(out[g.bin_of(swap_fidelity(c, c))], 1.0);
        let out = swap_pushforward(&g, &top, &top, Discretization::WithinBin);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adaptive_probe_splits_mass() {
        let f = BeliefFilter::new(FilterConfig::default()).unwrap();
        let mut b = BeliefState {
            grid: f.grid,
            links: vec![vec![0.0; 10]],
            occupancy: vec![],
            ages: vec![0],
            alive: vec![true],
            step: 0,
        };
        b.links[0][6] = 0.5;
        b.links[0][7] = 0.5;
        assert!((f.probe_threshold(&b, 0) - f.grid.lower(7)).abs() < 1e-15);
    }
}
