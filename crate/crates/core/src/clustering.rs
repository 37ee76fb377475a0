//! K-means clustering, nearest-centroid assignment and silhouette analysis.
//!
//! [`kmeans_fit`] runs `n_init` seeded k-means++ initializations, each
//! followed by Lloyd iterations until the assignment stops changing (or
//! `max_iters`) and then by single-point transfers while any of them lowers
//! the inertia, and keeps the lowest-inertia run. Empty clusters are
//! repaired by moving the point farthest from its centroid into them, so a
//! fit always returns exactly `k` non-empty clusters.

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::rng::{derive_seed, seeded_rng, stream};

pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_euclidean(a, b).sqrt()
}

/// Result of a clustering: centroids, the cluster of every input point and
/// the within-cluster sum of squared distances.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSet {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

impl CentroidSet {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Indices of the points assigned to `cluster`, ascending.
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == cluster)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// Inertia recomputed from scratch against `points`.
    pub fn recompute_inertia<P: AsRef<[f64]>>(&self, points: &[P]) -> f64 {
        points
            .iter()
            .zip(&self.assignments)
            .map(|(p, &a)| squared_euclidean(p.as_ref(), &self.centroids[a]))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansParams {
    pub n_init: usize,
    pub max_iters: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            n_init: 10,
            max_iters: 100,
        }
    }
}

/// One initialization followed by Lloyd iterations.
#[derive(Debug, Clone)]
pub struct LloydRun {
    pub result: CentroidSet,
    /// Inertia after each update step.
    pub inertia_history: Vec<f64>,
    pub converged: bool,
}

fn validate_points<P: AsRef<[f64]>>(points: &[P]) -> Result<usize> {
    let dim = points.first().ok_or(Error::Empty("point set"))?.as_ref().len();
    if dim == 0 {
        return Err(Error::InvalidArgument("zero-dimensional points".into()));
    }
    for p in points {
        check_dim(dim, p.as_ref().len())?;
    }
    Ok(dim)
}

/// Index and distance of the nearest centroid. Ties go to the lowest index.
pub fn assign_nearest<P: AsRef<[f64]>>(point: &[f64], centroids: &[P]) -> Result<(usize, f64)> {
    let first = centroids.first().ok_or(Error::Empty("centroid list"))?;
    check_dim(first.as_ref().len(), point.len())?;
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let c = c.as_ref();
        check_dim(point.len(), c.len())?;
        let d = squared_euclidean(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok((best.0, best.1.sqrt()))
}

fn nearest_sq(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_euclidean(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// k-means++ seeding: the first center uniformly, then each next center with
/// probability proportional to its squared distance to the chosen ones.
pub fn kmeans_plus_plus<P: AsRef<[f64]>, R: Rng>(points: &[P], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].as_ref().to_vec()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_euclidean(p.as_ref(), &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                if r < w {
                    chosen = Some(i);
                    break;
                }
                r -= w;
                chosen = Some(i);
            }
            chosen.expect("positive total weight")
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].as_ref().to_vec();
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(squared_euclidean(p.as_ref(), &c));
        }
        centers.push(c);
    }
    centers
}

fn means<P: AsRef<[f64]>>(points: &[P], assignments: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        sums[a].iter_mut().zip(p.as_ref()).for_each(|(s, x)| *s += x);
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        let c = c as f64;
        s.iter_mut().for_each(|x| *x /= c);
    }
    sums
}

/// Move the farthest point of a multi-point cluster into each empty cluster.
fn repair_empty(assignments: &mut [usize], dist2: &mut [f64], k: usize) {
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut far: Option<usize> = None;
        for i in 0..assignments.len() {
            if sizes[assignments[i]] > 1 && far.is_none_or(|f| dist2[i] > dist2[f]) {
                far = Some(i);
            }
        }
        let i = far.expect("k <= number of points");
        sizes[assignments[i]] -= 1;
        sizes[empty] = 1;
        assignments[i] = empty;
        dist2[i] = 0.0;
    }
}

/// One sweep of single-point transfers (Hartigan's rule): move a point when
/// the drop in its own cluster's cost exceeds the rise in the target's,
/// counting the shift of both means. Returns whether anything moved.
fn transfer_pass<P: AsRef<[f64]>>(
    points: &[P],
    assignments: &mut [usize],
    centroids: &mut [Vec<f64>],
    sizes: &mut [usize],
) -> bool {
    let mut moved = false;
    for (i, p) in points.iter().enumerate() {
        let x = p.as_ref();
        let a = assignments[i];
        if sizes[a] < 2 {
            continue;
        }
        let na = sizes[a] as f64;
        let removal = na / (na - 1.0) * squared_euclidean(x, &centroids[a]);
        let mut best: Option<(usize, f64)> = None;
        for (b, c) in centroids.iter().enumerate() {
            if b == a {
                continue;
            }
            let nb = sizes[b] as f64;
            let cost = nb / (nb + 1.0) * squared_euclidean(x, c);
            if best.is_none_or(|(_, bc)| cost < bc) {
                best = Some((b, cost));
            }
        }
        let Some((b, cost)) = best else { continue };
        if cost >= removal - 1e-12 * (1.0 + removal) {
            continue;
        }
        let nb = sizes[b] as f64;
        centroids[a].iter_mut().zip(x).for_each(|(c, v)| *c = (na * *c - v) / (na - 1.0));
        centroids[b].iter_mut().zip(x).for_each(|(c, v)| *c = (nb * *c + v) / (nb + 1.0));
        sizes[a] -= 1;
        sizes[b] += 1;
        assignments[i] = b;
        moved = true;
    }
    moved
}

/// A single k-means++ initialization refined by Lloyd iterations, then by
/// single-point transfers until none lowers the inertia.
pub fn lloyd_run<P: AsRef<[f64]>>(points: &[P], k: usize, seed: u64, max_iters: usize) -> Result<LloydRun> {
    let dim = validate_points(points)?;
    if k == 0 || k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={}",
            points.len()
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);
    let mut assignments: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..max_iters.max(1) {
        let (mut next, mut dist2): (Vec<usize>, Vec<f64>) =
            points.iter().map(|p| nearest_sq(p.as_ref(), &centroids)).unzip();
        repair_empty(&mut next, &mut dist2, k);
        let changed = next != assignments;
        assignments = next;
        centroids = means(points, &assignments, k, dim);
        let inertia: f64 = points
            .iter()
            .zip(&assignments)
            .map(|(p, &a)| squared_euclidean(p.as_ref(), &centroids[a]))
            .sum();
        if let Some(&prev) = history.last() {
            debug_assert!(
                inertia <= prev + 1e-9 * (1.0 + prev),
                "Lloyd inertia increased: {prev} -> {inertia}"
            );
        }
        history.push(inertia);
        if !changed {
            converged = true;
            break;
        }
    }
    let mut sizes = vec![0usize; k];
    assignments.iter().for_each(|&a| sizes[a] += 1);
    for _ in 0..max_iters {
        if !transfer_pass(points, &mut assignments, &mut centroids, &mut sizes) {
            break;
        }
        centroids = means(points, &assignments, k, dim);
        let inertia: f64 = points
            .iter()
            .zip(&assignments)
            .map(|(p, &a)| squared_euclidean(p.as_ref(), &centroids[a]))
            .sum();
        let prev = *history.last().expect("at least one iteration");
        debug_assert!(
            inertia <= prev + 1e-9 * (1.0 + prev),
            "transfer pass increased inertia: {prev} -> {inertia}"
        );
        history.push(inertia);
    }
    let inertia = *history.last().expect("at least one iteration");
    Ok(LloydRun {
        result: CentroidSet {
            centroids,
            assignments,
            inertia,
        },
        inertia_history: history,
        converged,
    })
}

/// K-means with the default restarts and iteration cap.
pub fn kmeans_fit<P: AsRef<[f64]>>(points: &[P], k: usize, seed: u64) -> Result<CentroidSet> {
    kmeans_fit_with(points, k, seed, &KMeansParams::default())
}

/// Best of `params.n_init` seeded runs by inertia; equal inertia keeps the
/// earlier restart.
pub fn kmeans_fit_with<P: AsRef<[f64]>>(
    points: &[P],
    k: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<CentroidSet> {
    let mut best: Option<CentroidSet> = None;
    for r in 0..params.n_init.max(1) {
        let run = lloyd_run(points, k, derive_seed(seed, &[stream::RESTART, r as u64]), params.max_iters)?;
        if best.as_ref().is_none_or(|b| run.result.inertia < b.inertia) {
            best = Some(run.result);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

fn silhouette_from<D: Fn(usize, usize) -> f64>(labels: &[usize], dist: D) -> Result<f64> {
    let n = labels.len();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::InvalidArgument(
            "silhouette needs at least 2 non-empty clusters".into(),
        ));
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist(i, j);
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Mean silhouette coefficient. Points alone in their cluster score 0.
pub fn silhouette_score<P: AsRef<[f64]>>(points: &[P], assignments: &[usize]) -> Result<f64> {
    validate_points(points)?;
    check_dim(points.len(), assignments.len())?;
    silhouette_from(assignments, |i, j| euclidean(points[i].as_ref(), points[j].as_ref()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteSelection {
    pub best_k: usize,
    /// `(k, score)` for every k in the range, ascending.
    pub scores: Vec<(usize, f64)>,
}

/// Fit k-means for each k in `k_min..=k_max` and keep the k with the highest
/// silhouette; ties go to the smaller k.
pub fn select_k_silhouette<P: AsRef<[f64]>>(
    points: &[P],
    k_min: usize,
    k_max: usize,
    seed: u64,
) -> Result<SilhouetteSelection> {
    validate_points(points)?;
    let n = points.len();
    if k_min < 2 || k_min > k_max || k_max + 1 > n {
        return Err(Error::InvalidArgument(format!(
            "k range {k_min}..={k_max} invalid for {n} points (need 2 <= k_min <= k_max <= n-1)"
        )));
    }
    let dist: Vec<f64> = (0..n * n)
        .map(|idx| euclidean(points[idx / n].as_ref(), points[idx % n].as_ref()))
        .collect();
    let mut scores = Vec::with_capacity(k_max - k_min + 1);
    let mut best = (k_min, f64::NEG_INFINITY);
    for k in k_min..=k_max {
        let fit = kmeans_fit(points, k, derive_seed(seed, &[k as u64]))?;
        let s = silhouette_from(&fit.assignments, |i, j| dist[i * n + j])?;
        if s > best.1 {
            best = (k, s);
        }
        scores.push((k, s));
    }
    Ok(SilhouetteSelection {
        best_k: best.0,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop, prop_assert, proptest};
    use rand::Rng;

    fn square() -> Vec<Vec<f64>> {
        vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 0.0], vec![10.0, 1.0]]
    }

    #[test]
    fn two_pairs_cluster_as_expected() {
        let fit = kmeans_fit(&square(), 2, 1).unwrap();
        let mut c = fit.centroids.clone();
        c.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(c, vec![vec![0.0, 0.5], vec![10.0, 0.5]]);
        assert!((fit.inertia - 1.0).abs() < 1e-12);
        assert!((fit.recompute_inertia(&square()) - fit.inertia).abs() < 1e-12);
    }

    #[test]
    fn k1_is_the_mean() {
        let pts = vec![vec![1.0, 2.0], vec![3.0, -4.0], vec![8.0, 0.5]];
        let fit = kmeans_fit(&pts, 1, 5).unwrap();
        let mean = [4.0, -0.5];
        for (c, m) in fit.centroids[0].iter().zip(mean) {
            assert!((c - m).abs() <= 1e-12);
        }
    }

    #[test]
    fn k_equal_n_has_zero_inertia() {
        let pts = square();
        let fit = kmeans_fit(&pts, 4, 3).unwrap();
        assert_eq!(fit.inertia, 0.0);
        let mut sizes = fit.cluster_sizes();
        sizes.sort();
        assert_eq!(sizes, vec![1, 1, 1, 1]);
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let pts = vec![vec![1.0]; 5];
        let fit = kmeans_fit(&pts, 3, 0).unwrap();
        assert!(fit.cluster_sizes().iter().all(|&s| s > 0));
        assert_eq!(fit.inertia, 0.0);
    }

    #[test]
    fn kmeans_errors() {
        let pts = square();
        assert!(kmeans_fit(&pts, 5, 0).is_err());
        assert!(kmeans_fit(&pts, 0, 0).is_err());
        assert!(matches!(kmeans_fit::<Vec<f64>>(&[], 1, 0), Err(Error::Empty(_))));
        let ragged = vec![vec![0.0, 1.0], vec![1.0]];
        assert!(matches!(kmeans_fit(&ragged, 1, 0), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn transfers_leave_lloyd_local_optimum() {
        // Best 2-partition {0,2,3} | {1,4,5}, found by enumeration.
        let pts = vec![
            vec![3.5217170696343842, 3.094479858951317],
            vec![-4.075422718212362, -3.142979315735006],
            vec![3.970177788781955, -2.1461230579763657],
            vec![2.324449457112925, 3.8104441066867736],
            vec![-0.6454427513376952, 0.1816222751445533],
            vec![-1.0835395290630956, -3.23943849387186],
        ];
        let fit = kmeans_fit(&pts, 2, 0).unwrap();
        assert!((fit.inertia - 37.15806596403884).abs() < 1e-9, "{}", fit.inertia);
        let a = &fit.assignments;
        assert!(a[0] == a[2] && a[0] == a[3] && a[1] == a[4] && a[1] == a[5] && a[0] != a[1]);
    }

    #[test]
    fn fit_is_deterministic() {
        let pts: Vec<Vec<f64>> = (0..40).map(|i| vec![(i * 7 % 13) as f64, (i * 3 % 11) as f64]).collect();
        assert_eq!(kmeans_fit(&pts, 3, 9).unwrap(), kmeans_fit(&pts, 3, 9).unwrap());
    }

    #[test]
    fn nearest_basic_cases() {
        let c = vec![vec![0.0, 0.0], vec![5.0, 0.0]];
        assert_eq!(assign_nearest(&[1.0, 0.0], &c).unwrap(), (0, 1.0));
        assert_eq!(assign_nearest(&[2.5, 0.0], &c).unwrap().0, 0);
        assert_eq!(assign_nearest(&[5.0, 0.0], &c).unwrap(), (1, 0.0));
        assert!(matches!(assign_nearest::<Vec<f64>>(&[1.0], &[]), Err(Error::Empty(_))));
        assert!(matches!(assign_nearest(&[1.0], &c), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn silhouette_of_two_pairs() {
        // a = 1, b = (10 + sqrt(101)) / 2 for every point.
        let b = (10.0 + 101f64.sqrt()) / 2.0;
        let expected = (b - 1.0) / b;
        let s = silhouette_score(&square(), &[0, 0, 1, 1]).unwrap();
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 0.9002).abs() < 5e-4);
    }

    #[test]
    fn interleaved_silhouette_is_negative() {
        let s = silhouette_score(&square(), &[0, 1, 0, 1]).unwrap();
        assert!(s <= 0.0, "{s}");
    }

    #[test]
    fn silhouette_needs_two_clusters() {
        assert!(silhouette_score(&square(), &[0, 0, 0, 0]).is_err());
        assert!(silhouette_score(&square(), &[2, 2, 2, 2]).is_err());
    }

    #[test]
    fn singletons_score_zero() {
        let pts = vec![vec![0.0], vec![0.1], vec![9.0]];
        let s = silhouette_score(&pts, &[0, 0, 1]).unwrap();
        let a = 0.1;
        let s0 = (9.0 - a) / 9.0;
        let s1 = (8.9 - a) / 8.9;
        assert!((s - (s0 + s1) / 3.0).abs() < 1e-12);
    }

    fn blobs(centers: &[[f64; 2]], per: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeded_rng(seed);
        centers
            .iter()
            .flat_map(|c| {
                (0..per)
                    .map(|_| {
                        let z: [f64; 2] = [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
                        vec![c[0] + z[0], c[1] + z[1]]
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    #[test]
    fn silhouette_selects_blob_count() {
        let four = blobs(&[[0.0, 0.0], [20.0, 0.0], [0.0, 20.0], [20.0, 20.0]], 25, 1);
        let sel = select_k_silhouette(&four, 2, 8, 3).unwrap();
        assert_eq!(sel.best_k, 4);
        assert_eq!(sel.scores.len(), 7);
        let two = blobs(&[[0.0, 0.0], [30.0, 5.0]], 30, 2);
        assert_eq!(select_k_silhouette(&two, 2, 5, 3).unwrap().best_k, 2);
    }

    #[test]
    fn select_k_rejects_bad_range() {
        let pts = square();
        assert!(select_k_silhouette(&pts, 3, 2, 0).is_err());
        assert!(select_k_silhouette(&pts, 1, 2, 0).is_err());
        assert!(select_k_silhouette(&pts, 2, 4, 0).is_err());
        assert!(select_k_silhouette(&pts, 2, 3, 0).is_ok());
    }

    proptest! {
        #[test]
        fn nearest_distance_is_consistent(
            point in prop::collection::vec(-50.0f64..50.0, 3),
            cents in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 1..8),
        ) {
            let (i, d) = assign_nearest(&point, &cents).unwrap();
            prop_assert!((d - euclidean(&point, &cents[i])).abs() < 1e-12);
            for c in &cents {
                prop_assert!(d <= euclidean(&point, c) + 1e-12);
            }
        }

        #[test]
        fn lloyd_inertia_never_increases(
            pts in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 2), 3..40),
            k in 1usize..5,
            seed in any::<u64>(),
        ) {
            let k = k.min(pts.len());
            let run = lloyd_run(&pts, k, seed, 100).unwrap();
            for w in run.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12 * (1.0 + w[0]));
            }
            prop_assert!((run.result.recompute_inertia(&pts) - run.result.inertia).abs() < 1e-9);
            prop_assert!(run.result.cluster_sizes().iter().all(|&s| s > 0));
        }
    }
}
