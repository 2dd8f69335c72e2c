//! Belief features and K-center coverings of feature space.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{mean, variance, BeliefState};
use crate::netmodel::ObservableView;
use crate::{rng, Error, Result};

pub const MIN_FEATURE_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Number of raw coordinates: three per physical link plus one per node.
pub fn raw_len(view: &ObservableView<'_>) -> usize {
    3 * view.physical_link_ids().count() + view.node_count()
}

/// Coordinate names for `featurize` at dimension `d`.
pub fn layout(view: &ObservableView<'_>, d: usize) -> Vec<String> {
    let mut names = Vec::new();
    if d >= raw_len(view) {
        for l in view.physical_link_ids() {
            names.extend([
                format!("link{l}.mean"),
                format!("link{l}.var"),
                format!("link{l}.age"),
            ]);
        }
        names.extend((0..view.node_count()).map(|v| format!("node{v}.occupancy")));
    } else {
        for stat in ["mean", "max", "min", "std"] {
            for field in ["fidelity", "var", "age", "occupancy"] {
                names.push(format!("{stat}.{field}"));
            }
        }
    }
    names.resize_with(d, || "pad".to_string());
    names.truncate(d);
    names
}

/// Hand-fixed belief embedding. Uses the raw per-link/per-node layout when it
/// fits in `d`, and pooled statistics otherwise. Dead links contribute zeros.
pub fn featurize(b: &BeliefState, view: &ObservableView<'_>, d: usize) -> Result<FeatureVector> {
    if d < MIN_FEATURE_DIM {
        return Err(Error::DimensionTooSmall(d));
    }
    let dt = view.physics().dt_ms;
    let link_row = |l: usize| -> [f64; 3] {
        if !view.alive(l) {
            return [0.0; 3];
        }
        let row = &b.links[l];
        [
            mean(&b.grid, row),
            variance(&b.grid, row),
            view.age(l) as f64 * dt / view.t2_ms(l),
        ]
    };
    let occupancy: Vec<f64> = (0..view.node_count())
        .map(|v| f64::from(view.occupancy(v)) / f64::from(view.capacity(v).max(1)))
        .collect();
    let mut values = Vec::with_capacity(d);
    if d >= raw_len(view) {
        for l in view.physical_link_ids() {
            values.extend(link_row(l));
        }
        values.extend(&occupancy);
    } else {
        let live: Vec<[f64; 3]> = view
            .physical_link_ids()
            .filter(|&l| view.alive(l))
            .map(link_row)
            .collect();
        let column = |k: usize| -> Vec<f64> {
            if k < 3 {
                live.iter().map(|r| r[k]).collect()
            } else {
                occupancy.clone()
            }
        };
        let cols: Vec<Vec<f64>> = (0..4).map(column).collect();
        let stat = |c: &[f64], f: fn(&[f64]) -> f64| if c.is_empty() { 0.0 } else { f(c) };
        let m = |c: &[f64]| c.iter().sum::<f64>() / c.len() as f64;
        let mx = |c: &[f64]| c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mn = |c: &[f64]| c.iter().copied().fold(f64::INFINITY, f64::min);
        let sd = |c: &[f64]| {
            let mu = c.iter().sum::<f64>() / c.len() as f64;
            (c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / c.len() as f64).sqrt()
        };
        for f in [m as fn(&[f64]) -> f64, mx, mn, sd] {
            for c in &cols {
                values.push(stat(c, f));
            }
        }
    }
    values.resize(d, 0.0);
    values.truncate(d);
    Ok(FeatureVector { values })
}

/// Largest observed ratio ‖φ(b) − φ(b′)‖₂ / ‖b − b′‖₁. Pairs with a
/// (numerically) zero belief distance are skipped.
pub fn estimate_lipschitz<'a>(
    pairs: impl IntoIterator<Item = (&'a [f64], &'a [f64])>,
    phi: impl Fn(&[f64]) -> Vec<f64>,
) -> f64 {
    let mut best: f64 = 0.0;
    for (a, b) in pairs {
        let den = l1(a, b);
        if den < 1e-12 {
            continue;
        }
        best = best.max(euclidean(&phi(a), &phi(b)) / den);
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    KMeans,
    /// Farthest-first traversal (Gonzalez); centres are data points.
    KCenter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub centers: Vec<Vec<f64>>,
    /// Largest distance from a training point to its nearest centre.
    pub radius: f64,
    pub iterations: usize,
}

impl ClusterSet {
    /// Wrap given centres and measure their covering radius over `points`.
    pub fn from_centers(centers: Vec<Vec<f64>>, points: &[Vec<f64>]) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InsufficientPoints { needed: 1, got: 0 });
        }
        let mut set = Self {
            centers,
            radius: 0.0,
            iterations: 0,
        };
        set.radius = set.covering_radius(points)?;
        Ok(set)
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    /// Nearest centre; ties go to the lowest index.
    pub fn assign(&self, f: &[f64]) -> Result<usize> {
        if f.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: f.len(),
            });
        }
        Ok(nearest(&self.centers, f).0)
    }

    pub fn covering_radius(&self, points: &[Vec<f64>]) -> Result<f64> {
        let mut r: f64 = 0.0;
        for p in points {
            let q = self.assign(p)?;
            r = r.max(euclidean(p, &self.centers[q]));
        }
        Ok(r)
    }

    /// Replace each centre by the training point closest to it.
    pub fn medoids(&self, points: &[Vec<f64>]) -> Result<Self> {
        let mut protos: Vec<Vec<f64>> = Vec::with_capacity(self.k());
        for c in &self.centers {
            let (i, _) = nearest(points, c);
            if !protos.iter().any(|p| p == &points[i]) {
                protos.push(points[i].clone());
            }
        }
        Self::from_centers(protos, points)
    }
}

fn nearest(centers: &[Vec<f64>], f: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d2: f64 = c.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum();
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    best
}

fn distinct(points: &[Vec<f64>]) -> Vec<usize> {
    let mut keys: Vec<(Vec<u64>, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (p.iter().map(|x| x.to_bits()).collect(), i))
        .collect();
    keys.sort();
    keys.dedup_by(|a, b| a.0 == b.0);
    let mut idx: Vec<usize> = keys.into_iter().map(|(_, i)| i).collect();
    idx.sort_unstable();
    idx
}

pub fn cluster(points: &[Vec<f64>], k: usize, seed: u64, method: ClusterMethod) -> Result<ClusterSet> {
    let uniq = distinct(points);
    if k == 0 || uniq.len() < k {
        return Err(Error::InsufficientPoints {
            needed: k.max(1),
            got: uniq.len(),
        });
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: p.len(),
        });
    }
    let mut r = rng::stream(seed, "cluster");
    match method {
        ClusterMethod::KCenter => {
            let first = uniq[r.random_range(0..uniq.len())];
            let mut centers = vec![points[first].clone()];
            let mut dist: Vec<f64> = points.iter().map(|p| euclidean(p, &centers[0])).collect();
            while centers.len() < k {
                let (far, _) = dist
                    .iter()
                    .enumerate()
                    .fold((0, -1.0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
                centers.push(points[far].clone());
                let c = centers.last().unwrap();
                for (d, p) in dist.iter_mut().zip(points) {
                    *d = d.min(euclidean(p, c));
                }
            }
            ClusterSet::from_centers(centers, points)
        }
        ClusterMethod::KMeans => kmeans(points, &uniq, k, &mut r),
    }
}

fn kmeans(
    points: &[Vec<f64>],
    uniq: &[usize],
    k: usize,
    r: &mut rng::Stream,
) -> Result<ClusterSet> {
    let dim = points[0].len();
    // k-means++ seeding over distinct points.
    let mut centers = vec![points[uniq[r.random_range(0..uniq.len())]].clone()];
    let mut d2: Vec<f64> = uniq.iter().map(|&i| nearest(&centers, &points[i]).1).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = r.random::<f64>() * total;
            let mut pick = d2.len() - 1;
            for (j, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = j;
                    break;
                }
                u -= w;
            }
            // Never pick an existing centre when rounding lands on a zero weight.
            if d2[pick] == 0.0 {
                pick = d2.iter().position(|&w| w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            0
        };
        centers.push(points[uniq[pick]].clone());
        let c = centers.last().unwrap().clone();
        for (w, &i) in d2.iter_mut().zip(uniq) {
            *w = w.min(c.iter().zip(&points[i]).map(|(a, b)| (a - b) * (a - b)).sum());
        }
    }

    let mut labels = vec![0usize; points.len()];
    let mut last_inertia = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..200 {
        iterations = it + 1;
        let mut inertia = 0.0;
        for (l, p) in labels.iter_mut().zip(points) {
            let (q, d) = nearest(&centers, p);
            *l = q;
            inertia += d;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&q, p) in labels.iter().zip(points) {
            counts[q] += 1;
            for (s, x) in sums[q].iter_mut().zip(p) {
                *s += x;
            }
        }
        for q in 0..k {
            if counts[q] == 0 {
                // Re-seed an empty cluster at the point farthest from its centre.
                let far = labels
                    .iter()
                    .zip(points)
                    .map(|(&l, p)| euclidean(p, &centers[l]))
                    .enumerate()
                    .fold((0, -1.0), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc })
                    .0;
                centers[q] = points[far].clone();
                labels[far] = q;
            } else {
                centers[q] = sums[q].iter().map(|s| s / counts[q] as f64).collect();
            }
        }
        let change = if last_inertia.is_finite() && last_inertia > 0.0 {
            (last_inertia - inertia).abs() / last_inertia
        } else if last_inertia == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        last_inertia = inertia;
        if change < 1e-6 {
            break;
        }
    }
    let mut set = ClusterSet::from_centers(centers, points)?;
    set.iterations = iterations;
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringRow {
    pub epsilon: f64,
    /// Centres used by a farthest-first covering of radius ≤ ε.
    pub k: usize,
    pub bound: f64,
    pub holds: bool,
}

/// Smallest farthest-first covering with radius at most `eps`.
pub fn greedy_cover(points: &[Vec<f64>], eps: f64) -> Vec<Vec<f64>> {
    if points.is_empty() {
        return Vec::new();
    }
    let mut centers = vec![points[0].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| euclidean(p, &points[0])).collect();
    loop {
        let (far, d) = dist
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        if d <= eps {
            return centers;
        }
        centers.push(points[far].clone());
        for (x, p) in dist.iter_mut().zip(points) {
            *x = x.min(euclidean(p, &points[far]));
        }
    }
}

/// For each ε, check the greedy covering size against `(2R/ε)^d`.
pub fn check_covering_bound(points: &[Vec<f64>], epsilons: &[f64], ball_radius: f64) -> Vec<CoveringRow> {
    let d = points.first().map_or(0, Vec::len) as i32;
    epsilons
        .iter()
        .map(|&epsilon| {
            let k = greedy_cover(points, epsilon).len();
            let bound = (2.0 * ball_radius / epsilon).powi(d);
            CoveringRow {
                epsilon,
                k,
                bound,
                holds: k as f64 <= bound,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{init_belief, BinGrid, Prior};
    use crate::netmodel::{build_network, PhysicsParams, Topology, TopologyParams};

    #[test]
    fn single_link_features_by_hand() {
        let mut g = build_network(
            Topology::Line,
            2,
            &TopologyParams::default(),
            &PhysicsParams::default(),
            1,
        )
        .unwrap();
        g.links[0].state.age = 20;
        let grid = BinGrid::new(10).unwrap();
        let mut b = init_belief(&g.observable(), grid, Prior::Uniform);
        b.links[0] = vec![0.0; 10];
        b.links[0][6] = 0.25;
        b.links[0][8] = 0.75;
        let f = featurize(&b, &g.observable(), 4).unwrap();
        let (c6, c8) = (grid.center(6), grid.center(8));
        let m = 0.25 * c6 + 0.75 * c8;
        let v = 0.25 * (c6 - m).powi(2) + 0.75 * (c8 - m).powi(2);
        let age = 20.0 * 0.1 / g.links[0].state.t2_ms;
        let occ = 1.0 / 8.0;
        let want = [m, v, age, occ];
        for (x, y) in f.values.iter().zip(want) {
            assert!((x - y).abs() < 1e-12, "{:?}", f.values);
        }
        assert_eq!(layout(&g.observable(), 4)[0], "mean.fidelity");
        assert!(matches!(
            featurize(&b, &g.observable(), 3),
            Err(Error::DimensionTooSmall(3))
        ));
    }

    #[test]
    fn raw_layout_when_it_fits() {
        let g = build_network(
            Topology::Line,
            3,
            &TopologyParams::default(),
            &PhysicsParams::default(),
            1,
        )
        .unwrap();
        let b = init_belief(&g.observable(), BinGrid::new(10).unwrap(), Prior::Uniform);
        let f = featurize(&b, &g.observable(), 12).unwrap();
        assert_eq!(raw_len(&g.observable()), 9);
        assert!((f.values[0] - 0.625).abs() < 1e-12);
        assert_eq!(&f.values[9..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn lipschitz_single_bin_shift() {
        // Moving mass m between two bins changes the mean by m·Δc.
        let centers = [0.3, 0.5, 0.7];
        let phi = |b: &[f64]| vec![b.iter().zip(centers).map(|(p, c)| p * c).sum::<f64>()];
        let a = [0.2, 0.5, 0.3];
        let b = [0.2, 0.4, 0.4];
        let l = estimate_lipschitz([(&a[..], &b[..])], phi);
        assert!((l - (0.1 * 0.2) / 0.2).abs() < 1e-12);
        assert_eq!(estimate_lipschitz([(&a[..], &a[..])], phi), 0.0);
    }

    fn blobs(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::stream(seed, "blobs");
        (0..n)
            .map(|i| {
                let c = if i % 2 == 0 { 0.0 } else { 10.0 };
                vec![c + r.random::<f64>() - 0.5, c + r.random::<f64>() - 0.5]
            })
            .collect()
    }

    #[test]
    fn kmeans_examples() {
        let pts = blobs(60, 1);
        let one = cluster(&pts, 1, 0, ClusterMethod::KMeans).unwrap();
        let centroid: Vec<f64> = (0..2)
            .map(|j| pts.iter().map(|p| p[j]).sum::<f64>() / pts.len() as f64)
            .collect();
        assert!(euclidean(&one.centers[0], &centroid) < 1e-12);
        let far = pts.iter().map(|p| euclidean(p, &centroid)).fold(0.0, f64::max);
        assert!((one.radius - far).abs() < 1e-12);

        let two = cluster(&pts, 2, 0, ClusterMethod::KMeans).unwrap();
        let sep = euclidean(&[0.0, 0.0], &[10.0, 10.0]);
        assert!(two.radius < sep / 2.0);
        let a = two.assign(&[0.0, 0.0]).unwrap();
        let b = two.assign(&[10.0, 10.0]).unwrap();
        assert_ne!(a, b);

        let few: Vec<Vec<f64>> = pts[..7].to_vec();
        let all = cluster(&few, 7, 3, ClusterMethod::KMeans).unwrap();
        assert_eq!(all.radius, 0.0);
        assert!(matches!(
            cluster(&few, 8, 3, ClusterMethod::KMeans),
            Err(Error::InsufficientPoints { .. })
        ));
    }

    #[test]
    fn assign_ties_and_errors() {
        let set = ClusterSet {
            centers: vec![vec![5.0], vec![9.0], vec![-1.0], vec![7.0], vec![3.0], vec![1.0]],
            radius: 0.0,
            iterations: 0,
        };
        // 0.0 is equidistant from centres 2 and 5.
        assert_eq!(set.assign(&[0.0]).unwrap(), 2);
        assert_eq!(set.assign(&[9.0]).unwrap(), 1);
        assert!(set.assign(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn kcenter_radius_matches_brute_force() {
        let pts = blobs(40, 2);
        let set = cluster(&pts, 5, 1, ClusterMethod::KCenter).unwrap();
        let brute = pts
            .iter()
            .map(|p| set.centers.iter().map(|c| euclidean(p, c)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max);
        assert_eq!(set.radius, brute);
    }

    #[test]
    fn covering_examples() {
        let same = vec![vec![0.3, 0.3]; 10];
        assert!(check_covering_bound(&same, &[0.1], 1.0)[0].holds);
        assert_eq!(greedy_cover(&same, 0.1).len(), 1);

        // Four quadrant centres cover the unit disk at radius 1.
        let quad = [[0.5, 0.5], [-0.5, 0.5], [-0.5, -0.5], [0.5, -0.5]];
        let mut r = rng::stream(4, "disk");
        let disk: Vec<Vec<f64>> = (0..2000)
            .map(|_| loop {
                let p = [r.random::<f64>() * 2.0 - 1.0, r.random::<f64>() * 2.0 - 1.0];
                if p[0] * p[0] + p[1] * p[1] <= 1.0 {
                    break p.to_vec();
                }
            })
            .collect();
        assert!(disk
            .iter()
            .all(|p| quad.iter().any(|c| euclidean(p, c) <= 1.0)));
        assert_eq!((2.0f64 / 1.0).powi(2), 4.0);

        let ball: Vec<Vec<f64>> = (0..500)
            .map(|_| loop {
                let p: Vec<f64> = (0..3).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
                if p.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
                    break p;
                }
            })
            .collect();
        let row = &check_covering_bound(&ball, &[0.5], 1.0)[0];
        assert_eq!(row.bound, 64.0);
        assert!(row.holds, "{row:?}");
    }
}
