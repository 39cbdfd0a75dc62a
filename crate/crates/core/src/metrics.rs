//! Prokhorov distance between equal-size uniform empirical clouds and the
//! Lévy distance between one-dimensional empirical laws.
//!
//! For two clouds of `n` points with mass `1/n` each, Strassen's theorem
//! reduces `d(P, Q) ≤ ε` to the existence of a matching of at least
//! `n(1 − ε)` pairs at distance `≤ ε`. The optimal `ε` is either a pairwise
//! distance or a multiple of `1/n`, so a search over that finite set with a
//! matching test is exact.

use serde::{Deserialize, Serialize};

use crate::data::DataSet;
use crate::error::{Error, Result};

/// Slack for comparisons against a claimed radius.
pub const RADIUS_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCloud {
    points: Vec<Vec<f64>>,
}

impl EmpiricalCloud {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::domain("point cloud must be nonempty"));
        };
        let dim = first.len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::domain("points must share a nonzero dimension"));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::domain("point coordinates must be finite"));
        }
        Ok(Self { points })
    }

    /// The joint `(x, y)` points of a dataset, ignoring its weights.
    pub fn from_dataset(data: &DataSet) -> Self {
        Self {
            points: (0..data.len()).map(|i| data.joint(i)).collect(),
        }
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingCertificate {
    pub radius: f64,
    /// Matched pairs `(i, j)` with `‖p_i − q_j‖ ≤ radius`, sorted by `i`.
    pub matching: Vec<(usize, usize)>,
    pub unmatched_fraction: f64,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn distance_matrix(p: &EmpiricalCloud, q: &EmpiricalCloud) -> Vec<f64> {
    let n = p.len();
    let mut d = Vec::with_capacity(n * n);
    for a in p.points() {
        for b in q.points() {
            d.push(euclidean(a, b));
        }
    }
    d
}

/// Maximum bipartite matching on `{(i, j) : dist[i][j] <= radius}` by
/// Hopcroft-Karp. Returns `mate_of_left`.
fn max_matching(dist: &[f64], n: usize, radius: f64) -> Vec<Option<usize>> {
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist[i * n + j] <= radius).collect())
        .collect();
    let mut left: Vec<Option<usize>> = vec![None; n];
    let mut right: Vec<Option<usize>> = vec![None; n];
    let mut layer = vec![usize::MAX; n];
    loop {
        // breadth-first layering from free left vertices
        let mut queue: Vec<usize> = Vec::with_capacity(n);
        for i in 0..n {
            if left[i].is_none() {
                layer[i] = 0;
                queue.push(i);
            } else {
                layer[i] = usize::MAX;
            }
        }
        let mut found = false;
        let mut head = 0;
        while head < queue.len() {
            let i = queue[head];
            head += 1;
            for &j in &adj[i] {
                match right[j] {
                    None => found = true,
                    Some(k) if layer[k] == usize::MAX => {
                        layer[k] = layer[i] + 1;
                        queue.push(k);
                    }
                    _ => {}
                }
            }
        }
        if !found {
            break;
        }
        let mut next = vec![0usize; n];
        for i in 0..n {
            if left[i].is_none() {
                augment(i, &adj, &mut left, &mut right, &mut layer, &mut next);
            }
        }
    }
    left
}

fn augment(
    i: usize,
    adj: &[Vec<usize>],
    left: &mut [Option<usize>],
    right: &mut [Option<usize>],
    layer: &mut [usize],
    next: &mut [usize],
) -> bool {
    while next[i] < adj[i].len() {
        let j = adj[i][next[i]];
        next[i] += 1;
        let ok = match right[j] {
            None => true,
            Some(k) => layer[k] == layer[i] + 1 && augment(k, adj, left, right, layer, next),
        };
        if ok {
            left[i] = Some(j);
            right[j] = Some(i);
            return true;
        }
    }
    layer[i] = usize::MAX;
    false
}

fn matched_count(mates: &[Option<usize>]) -> usize {
    mates.iter().filter(|m| m.is_some()).count()
}

fn feasible(matched: usize, n: usize, eps: f64) -> bool {
    matched as f64 >= n as f64 * (1.0 - eps) - 1e-9
}

/// Exact Prokhorov distance between two uniform clouds of equal size, with
/// a coupling that attains it.
pub fn prokhorov_distance(p: &EmpiricalCloud, q: &EmpiricalCloud) -> Result<(f64, CouplingCertificate)> {
    let n = p.len();
    if n != q.len() {
        return Err(Error::Unsupported(format!(
            "Prokhorov distance is only computed for clouds of equal size (got {n} and {})",
            q.len()
        )));
    }
    if p.dim() != q.dim() {
        return Err(Error::contract("clouds have different dimensions"));
    }
    let dist = distance_matrix(p, q);
    let mut candidates: Vec<f64> = dist.iter().copied().filter(|d| *d < 1.0).collect();
    candidates.extend((0..=n).map(|k| k as f64 / n as f64));
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    // smallest feasible candidate; the last one (1) always is
    let (mut lo, mut hi) = (0usize, candidates.len() - 1);
    let mut best = max_matching(&dist, n, candidates[hi]);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        let mates = max_matching(&dist, n, candidates[mid]);
        if feasible(matched_count(&mates), n, candidates[mid]) {
            hi = mid;
            best = mates;
        } else {
            lo = mid + 1;
        }
    }
    let radius = candidates[hi];
    if hi == candidates.len() - 1 {
        best = max_matching(&dist, n, radius);
    }
    let matching: Vec<(usize, usize)> = best.iter().enumerate().filter_map(|(i, m)| m.map(|j| (i, j))).collect();
    let unmatched_fraction = 1.0 - matching.len() as f64 / n as f64;
    Ok((
        radius,
        CouplingCertificate {
            radius,
            matching,
            unmatched_fraction,
        },
    ))
}

/// True when the Prokhorov distance does not exceed `claimed`.
pub fn strassen_bound_check(p: &EmpiricalCloud, q: &EmpiricalCloud, claimed: f64) -> Result<bool> {
    Ok(prokhorov_distance(p, q)?.0 <= claimed + RADIUS_SLACK)
}

fn ecdf(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|v| *v <= x) as f64 / sorted.len() as f64
}

/// Band test for one `ε`. Both sides are right-continuous steps whose jumps
/// sit in `g ∪ (f + ε) ∪ (f − ε)`, so the constraint only needs checking
/// between consecutive jump points. Gaps narrower than roundoff are jumps
/// that coincide exactly and are skipped.
fn levy_feasible(f: &[f64], g: &[f64], eps: f64) -> bool {
    let mut jumps: Vec<f64> = g.iter().copied().chain(f.iter().flat_map(|a| [a + eps, a - eps])).collect();
    jumps.sort_by(f64::total_cmp);
    let check = |x: f64| {
        let gx = ecdf(g, x);
        ecdf(f, x - eps) - eps <= gx + 1e-12 && gx <= ecdf(f, x + eps) + eps + 1e-12
    };
    let outer = [jumps[0] - 1.0, jumps[jumps.len() - 1] + 1.0];
    outer.into_iter().all(check)
        && jumps
            .windows(2)
            .filter(|w| w[1] - w[0] > 1e-12 * (1.0 + w[0].abs().max(w[1].abs())))
            .all(|w| check(0.5 * (w[0] + w[1])))
}

/// Lévy distance between the uniform empirical laws of two real samples.
pub fn levy_distance(f_points: &[f64], g_points: &[f64]) -> Result<f64> {
    if f_points.is_empty() || g_points.is_empty() {
        return Err(Error::domain("Lévy distance needs nonempty samples"));
    }
    if f_points.iter().chain(g_points).any(|v| !v.is_finite()) {
        return Err(Error::domain("samples must be finite"));
    }
    let mut f = f_points.to_vec();
    let mut g = g_points.to_vec();
    f.sort_by(f64::total_cmp);
    g.sort_by(f64::total_cmp);
    let (n, m) = (f.len(), g.len());

    // the optimum is a horizontal gap between breakpoints or a vertical gap
    // between CDF levels
    let mut candidates = vec![0.0, 1.0];
    for a in &f {
        for b in &g {
            let d = (a - b).abs();
            if d < 1.0 {
                candidates.push(d);
            }
        }
    }
    for i in 0..=n {
        for j in 0..=m {
            candidates.push((i as f64 / n as f64 - j as f64 / m as f64).abs());
        }
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let (mut lo, mut hi) = (0usize, candidates.len() - 1);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if levy_feasible(&f, &g, candidates[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(candidates[hi])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: &[&[f64]]) -> EmpiricalCloud {
        EmpiricalCloud::new(points.iter().map(|p| p.to_vec()).collect()).unwrap()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> EmpiricalCloud {
        EmpiricalCloud::new(
            (0..n)
                .map(|_| vec![rng.random_range(-spread..spread), rng.random_range(-spread..spread)])
                .collect(),
        )
        .unwrap()
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    /// Exhaustive search over couplings: every partial injection extends to
    /// a permutation, and keeping the `k` closest pairs of a permutation is
    /// feasible for `ε ≥ max(d_(k), (n − k)/n)`.
    fn brute_force(p: &EmpiricalCloud, q: &EmpiricalCloud) -> f64 {
        let n = p.len();
        let mut best = 1.0f64;
        for perm in permutations(n) {
            let mut d: Vec<f64> = (0..n).map(|i| euclidean(&p.points[i], &q.points[perm[i]])).collect();
            d.sort_by(f64::total_cmp);
            for k in 1..=n {
                best = best.min(d[k - 1].max((n - k) as f64 / n as f64));
            }
        }
        best
    }

    #[test]
    fn examples() {
        let a = cloud(&[&[0.0, 0.0], &[1.0, 2.0]]);
        let (d, cert) = prokhorov_distance(&a, &a).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(cert.matching, vec![(0, 0), (1, 1)]);

        let (d, _) = prokhorov_distance(&cloud(&[&[0.0, 0.0]]), &cloud(&[&[0.3, 0.0]])).unwrap();
        assert!((d - 0.3).abs() < 1e-15);
        let (d, cert) = prokhorov_distance(&cloud(&[&[0.0, 0.0]]), &cloud(&[&[2.0, 0.0]])).unwrap();
        assert_eq!(d, 1.0);
        assert_eq!(cert.unmatched_fraction, 1.0);

        assert!(strassen_bound_check(&a, &a, 0.0).unwrap());
        assert!(!strassen_bound_check(&cloud(&[&[0.0, 0.0]]), &cloud(&[&[0.3, 0.0]]), 0.2).unwrap());
    }

    #[test]
    fn errors() {
        assert!(EmpiricalCloud::new(vec![]).is_err());
        assert!(EmpiricalCloud::new(vec![vec![0.0], vec![0.0, 1.0]]).is_err());
        let r = prokhorov_distance(&cloud(&[&[0.0]]), &cloud(&[&[0.0], &[1.0]]));
        assert!(matches!(r, Err(Error::Unsupported(_))));
        assert!(levy_distance(&[], &[1.0]).is_err());
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.random_range(1..=5);
            let spread = rng.random_range(0.05..1.5);
            let p = random_cloud(&mut rng, n, spread);
            let q = random_cloud(&mut rng, n, spread);
            let (d, cert) = prokhorov_distance(&p, &q).unwrap();
            assert_eq!(d, brute_force(&p, &q));
            assert!(cert.unmatched_fraction <= d + RADIUS_SLACK);
            for &(i, j) in &cert.matching {
                assert!(euclidean(&p.points[i], &q.points[j]) <= d + RADIUS_SLACK);
            }
        }
    }

    #[test]
    fn symmetric_and_triangle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let n = rng.random_range(1..=8);
            let spread = rng.random_range(0.05..1.0);
            let p = random_cloud(&mut rng, n, spread);
            let q = random_cloud(&mut rng, n, spread);
            let r = random_cloud(&mut rng, n, spread);
            let pq = prokhorov_distance(&p, &q).unwrap().0;
            assert_eq!(pq, prokhorov_distance(&q, &p).unwrap().0);
            let qr = prokhorov_distance(&q, &r).unwrap().0;
            let pr = prokhorov_distance(&p, &r).unwrap().0;
            assert!(pq + qr - pr >= -1e-12);
            assert!((0.0..=1.0).contains(&pq));
        }
    }

    #[test]
    fn levy_examples() {
        assert_eq!(levy_distance(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(levy_distance(&[0.0], &[0.5]).unwrap(), 0.5);
        assert_eq!(levy_distance(&[0.0], &[3.0]).unwrap(), 1.0);
        // two atoms against one: CDF gap of 1/2 cannot be closed by a shift below 0.5
        assert_eq!(levy_distance(&[0.0, 10.0], &[0.0, 0.0]).unwrap(), 0.5);
    }

    /// Lévy distance on a fine ε grid with a dense x scan.
    fn levy_grid_oracle(f: &[f64], g: &[f64]) -> f64 {
        let cdf = |s: &[f64], x: f64| s.iter().filter(|v| **v <= x).count() as f64 / s.len() as f64;
        let lo = f.iter().chain(g).copied().fold(f64::INFINITY, f64::min) - 2.0;
        let hi = f.iter().chain(g).copied().fold(f64::NEG_INFINITY, f64::max) + 2.0;
        let xs: Vec<f64> = (0..=4000).map(|i| lo + (hi - lo) * i as f64 / 4000.0).collect();
        (0..=1000)
            .map(|k| k as f64 / 1000.0)
            .find(|&e| {
                xs.iter()
                    .all(|&x| cdf(f, x - e) - e <= cdf(g, x) + 1e-12 && cdf(g, x) <= cdf(f, x + e) + e + 1e-12)
            })
            .unwrap_or(1.0)
    }

    #[test]
    fn levy_agrees_with_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..30 {
            let f: Vec<f64> = (0..rng.random_range(1..6)).map(|_| rng.random_range(0.0..2.0)).collect();
            let g: Vec<f64> = (0..rng.random_range(1..6)).map(|_| rng.random_range(0.0..2.0)).collect();
            let exact = levy_distance(&f, &g).unwrap();
            let grid = levy_grid_oracle(&f, &g);
            // the grid scan resolves ε to 1e-3 and x to about 1e-3
            assert!((exact - grid).abs() <= 3e-3, "{exact} vs {grid}");
        }
    }

    #[test]
    fn levy_bounded_by_prokhorov_in_one_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..50 {
            let n = rng.random_range(1..7);
            let f: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.5)).collect();
            let g: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.5)).collect();
            let p = EmpiricalCloud::new(f.iter().map(|v| vec![*v]).collect()).unwrap();
            let q = EmpiricalCloud::new(g.iter().map(|v| vec![*v]).collect()).unwrap();
            assert!(levy_distance(&f, &g).unwrap() <= prokhorov_distance(&p, &q).unwrap().0 + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn jitter_moves_distance_by_at_most_delta(
            seed in 0u64..10_000,
            n in 1usize..7,
            delta in 0.0f64..0.2,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_cloud(&mut rng, n, 1.0);
            let q = random_cloud(&mut rng, n, 1.0);
            let jittered = EmpiricalCloud::new(
                p.points
                    .iter()
                    .map(|pt| {
                        let angle = rng.random_range(0.0..std::f64::consts::TAU);
                        let r = delta * rng.random::<f64>();
                        vec![pt[0] + r * angle.cos(), pt[1] + r * angle.sin()]
                    })
                    .collect(),
            )
            .unwrap();
            let before = prokhorov_distance(&p, &q).unwrap().0;
            let after = prokhorov_distance(&jittered, &q).unwrap().0;
            prop_assert!((before - after).abs() <= delta + 1e-12);
        }
    }
}
