//! K-means with k-means++ seeding and restarts, plus an elbow scan.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub restarts: usize,
    pub max_iter: usize,
    /// Convergence threshold on the largest centroid displacement.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams { restarts: 10, max_iter: 300, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    pub iterations_run: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(data: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<(usize, f64)> {
    data.par_iter().map(|p| nearest(p, centroids)).collect()
}

fn validate(data: &[Vec<f64>], k: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::data("no spectra to cluster"));
    }
    if k == 0 || k > data.len() {
        return Err(Error::param(format!("cannot form {k} clusters from {} spectra", data.len())));
    }
    let dim = data[0].len();
    if data.iter().any(|p| p.len() != dim) {
        return Err(Error::ShapeMismatch("spectra of different lengths".into()));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in clustering input".into()));
    }
    Ok(())
}

fn plus_plus_init<R: Rng>(data: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![data[first].clone()];
    let mut d2: Vec<f64> = data.iter().map(|p| sq_dist(p, &data[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            if d2[idx] == 0.0 {
                d2.iter().rposition(|&w| w > 0.0).unwrap_or(idx)
            } else {
                idx
            }
        } else {
            // Remaining points coincide with existing centers.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.push(data[pick].clone());
        for (d, p) in d2.iter_mut().zip(data) {
            *d = d.min(sq_dist(p, &data[pick]));
        }
    }
    centroids
}

/// Lloyd iterations from the given centroids.
fn lloyd(data: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, params: &KMeansParams) -> ClusterResult {
    let k = centroids.len();
    let dim = data[0].len();
    let mut iterations = 0;
    let mut assigned = assign(data, &centroids);
    for _ in 0..params.max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &(j, _)) in data.iter().zip(&assigned) {
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut new_centroids: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .zip(&centroids)
            .map(|((s, &c), old)| if c > 0 { s.into_iter().map(|v| v / c as f64).collect() } else { old.clone() })
            .collect();
        // Re-seed empty clusters at the points currently worst served.
        let mut taken = vec![false; data.len()];
        for j in (0..k).filter(|&j| counts[j] == 0) {
            let far = assigned
                .iter()
                .enumerate()
                .filter(|(i, _)| !taken[*i])
                .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .expect("k ≤ n");
            taken[far] = true;
            new_centroids[j] = data[far].clone();
        }
        let shift = centroids
            .iter()
            .zip(&new_centroids)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = new_centroids;
        let next = assign(data, &centroids);
        let unchanged = next.iter().zip(&assigned).all(|(a, b)| a.0 == b.0);
        assigned = next;
        if shift < params.tol || unchanged {
            break;
        }
    }
    let inertia = assigned.iter().map(|a| a.1).sum();
    ClusterResult { labels: assigned.into_iter().map(|a| a.0).collect(), centroids, inertia, iterations_run: iterations }
}

fn best_of(results: impl IntoIterator<Item = ClusterResult>) -> ClusterResult {
    results
        .into_iter()
        .reduce(|best, r| if r.inertia < best.inertia { r } else { best })
        .expect("at least one run")
}

/// Best-of-`restarts` k-means (lowest inertia; earlier restart wins ties).
pub fn kmeans(data: &[Vec<f64>], k: usize, seed: u64, params: &KMeansParams) -> Result<ClusterResult> {
    validate(data, k)?;
    if params.restarts == 0 || params.max_iter == 0 {
        return Err(Error::param("restarts and max_iter must be positive"));
    }
    let runs: Vec<ClusterResult> = (0..params.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = seeding::rng(seed, &[k as u64, r as u64]);
            lloyd(data, plus_plus_init(data, k, &mut rng), params)
        })
        .collect();
    Ok(best_of(runs))
}

/// Inertia for every k in `k_min..=k_max`. Each k also tries a warm start
/// from the previous best centroids plus the worst-served point, which keeps
/// the curve non-increasing.
pub fn elbow_scan(
    data: &[Vec<f64>],
    k_min: usize,
    k_max: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<Vec<(usize, f64)>> {
    if k_min < 1 || k_min > k_max {
        return Err(Error::param(format!("bad k range {k_min}..={k_max}")));
    }
    validate(data, k_max)?;
    let mut out = Vec::with_capacity(k_max - k_min + 1);
    let mut prev: Option<ClusterResult> = None;
    for k in k_min..=k_max {
        let mut result = kmeans(data, k, seed, params)?;
        if let Some(p) = &prev {
            let dists = assign(data, &p.centroids);
            let worst = dists
                .iter()
                .enumerate()
                .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .expect("nonempty");
            let mut init = p.centroids.clone();
            init.push(data[worst].clone());
            result = best_of([result, lloyd(data, init, params)]);
        }
        out.push((k, result.inertia));
        prev = Some(result);
    }
    Ok(out)
}

/// k at the largest discrete second difference of the inertia curve.
pub fn knee(scan: &[(usize, f64)]) -> Option<usize> {
    scan.windows(3)
        .map(|w| (w[1].0, w[0].1 - 2.0 * w[1].1 + w[2].1))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k)
}

/// Mean spectrum of each cluster (zeros for an empty cluster).
pub fn cluster_means(data: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = data.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in data.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn clouds(seed: u64, per: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = seeding::rng(seed, &[]);
        let centers = [[0.0, 0.0, 0.0], [10.0, 10.0, -10.0]];
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (l, c) in centers.iter().enumerate() {
            for _ in 0..per {
                data.push(c.iter().map(|v| v + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect());
                labels.push(l);
            }
        }
        (data, labels)
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let data = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![2.0, 3.0], vec![-1.0, 5.0]];
        let r = kmeans(&data, 4, 3, &KMeansParams::default()).unwrap();
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn separated_clouds_recovered_for_all_seeds() {
        for seed in 0..50 {
            let (data, truth) = clouds(seed, 15);
            let r = kmeans(&data, 2, seed, &KMeansParams::default()).unwrap();
            let acc = crate::metrics::clustering_accuracy(&truth, &r.labels, 2).unwrap();
            assert_eq!(acc, 1.0, "seed {seed}");
        }
    }

    #[test]
    fn deterministic_and_nearest_assignment() {
        let (data, _) = clouds(4, 20);
        let a = kmeans(&data, 3, 9, &KMeansParams::default()).unwrap();
        let b = kmeans(&data, 3, 9, &KMeansParams::default()).unwrap();
        assert_eq!(a, b);
        for (p, &l) in data.iter().zip(&a.labels) {
            assert_eq!(nearest(p, &a.centroids).0, l);
        }
    }

    #[test]
    fn inertia_invariant_to_centroid_order() {
        let (data, _) = clouds(5, 10);
        let r = kmeans(&data, 3, 1, &KMeansParams::default()).unwrap();
        let mut rev = r.centroids.clone();
        rev.reverse();
        let inertia: f64 = data.iter().map(|p| nearest(p, &rev).1).sum();
        assert!((inertia - r.inertia).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_k() {
        let data = vec![vec![0.0], vec![1.0]];
        assert!(kmeans(&data, 3, 0, &KMeansParams::default()).is_err());
        assert!(kmeans(&[], 1, 0, &KMeansParams::default()).is_err());
    }

    #[test]
    fn elbow_is_monotone_and_single_entry() {
        let (data, _) = clouds(6, 12);
        let scan = elbow_scan(&data, 1, 8, 2, &KMeansParams::default()).unwrap();
        assert_eq!(scan.len(), 8);
        for w in scan.windows(2) {
            assert!(w[1].1 <= w[0].1, "{scan:?}");
        }
        let single = elbow_scan(&data, 3, 3, 2, &KMeansParams::default()).unwrap();
        assert_eq!(single.len(), 1);
        assert!(elbow_scan(&data, 4, 3, 2, &KMeansParams::default()).is_err());
    }

    #[test]
    fn cluster_means_average_members() {
        let data = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![10.0, 10.0]];
        let m = cluster_means(&data, &[0, 0, 1], 3);
        assert_eq!(m, vec![vec![2.0, 3.0], vec![10.0, 10.0], vec![0.0, 0.0]]);
    }
}
