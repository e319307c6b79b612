//! K-means over representations and a 2-D PCA projection for plotting.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("need at least k={k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("rows have inconsistent dimensions")]
    Ragged,
    #[error("data has zero variance")]
    DegenerateData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    /// K × d
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia of each assignment step, in order.
    pub inertia_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 10,
            max_iter: 300,
            tol: 1e-6,
            seed: 0,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest centroid; ties go to the lower index.
fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn check_rows(points: &[Vec<f64>]) -> Result<usize, ClusterError> {
    let d = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != d) {
        return Err(ClusterError::Ragged);
    }
    Ok(d)
}

/// Greedy k-means++: at each step draw `2 + ln k` candidates with probability
/// proportional to squared distance and keep the one that lowers the
/// potential most.
fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut closest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let potential: f64 = closest.iter().sum();
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for _ in 0..trials {
            let idx = if potential > 0.0 {
                let mut r = rng.random::<f64>() * potential;
                let mut pick = n - 1;
                for (i, &c) in closest.iter().enumerate() {
                    if r < c {
                        pick = i;
                        break;
                    }
                    r -= c;
                }
                pick
            } else {
                rng.random_range(0..n)
            };
            let updated: Vec<f64> = points
                .iter()
                .zip(&closest)
                .map(|(p, &c)| c.min(sq_dist(p, &points[idx])))
                .collect();
            let pot: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|b| pot < b.1) {
                best = Some((idx, pot, updated));
            }
        }
        let (idx, _, updated) = best.expect("at least one trial");
        centroids.push(points[idx].clone());
        closest = updated;
    }
    centroids
}

/// Lloyd's algorithm from greedy k-means++ seeds. Stops when no centroid
/// moves more than `tol` (Euclidean) or after `max_iter` updates. Empty
/// clusters are moved onto the point farthest from its own centroid.
pub fn kmeans(points: &[Vec<f64>], cfg: &KMeansConfig) -> Result<(ClusterModel, Vec<usize>), ClusterError> {
    let n = points.len();
    let k = cfg.k;
    if k == 0 || n < k {
        return Err(ClusterError::TooFewPoints { n, k });
    }
    let d = check_rows(points)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = seed_centroids(points, k, &mut rng);

    let assign = |centroids: &[Vec<f64>]| -> (Vec<usize>, Vec<f64>) {
        points.par_iter().map(|p| nearest(p, centroids)).unzip()
    };

    let (mut labels, mut dists) = assign(&centroids);
    let mut trace = vec![dists.iter().sum::<f64>()];
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .zip(&centroids)
            .map(|((s, &c), old)| {
                if c == 0 {
                    old.clone()
                } else {
                    s.into_iter().map(|x| x / c as f64).collect()
                }
            })
            .collect();
        // reseed empty clusters on the worst-fit points, each point used once
        let mut taken = vec![false; n];
        for j in (0..k).filter(|&j| counts[j] == 0) {
            let far = (0..n)
                .filter(|&i| !taken[i])
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                taken[i] = true;
                next[j] = points[i].clone();
            }
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        (labels, dists) = assign(&centroids);
        trace.push(dists.iter().sum());
        if shift < cfg.tol {
            break;
        }
    }
    let inertia = *trace.last().expect("non-empty trace");
    Ok((
        ClusterModel {
            centroids,
            inertia,
            iterations,
            inertia_trace: trace,
        },
        labels,
    ))
}

/// Projects centered rows onto the top two principal directions. Each
/// component's first nonzero loading is made positive; components with
/// negligible variance are returned as exact zeros.
pub fn project_2d(points: &[Vec<f64>]) -> Result<Vec<[f64; 2]>, ClusterError> {
    let n = points.len();
    if n < 2 {
        return Err(ClusterError::TooFewPoints { n, k: 2 });
    }
    let d = check_rows(points)?;
    let mean: Vec<f64> = (0..d)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64)
        .collect();
    let centered = DMatrix::from_fn(n, d, |i, j| points[i][j] - mean[j]);
    let cov = centered.transpose() * &centered;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]];
    if top.is_nan() || top <= 0.0 {
        return Err(ClusterError::DegenerateData);
    }
    let tiny = top * 1e-12 * d as f64;
    let mut out = vec![[0.0; 2]; n];
    for (c, &col) in order.iter().take(2).enumerate() {
        if eig.eigenvalues[col] <= tiny {
            continue;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        for (i, row) in out.iter_mut().enumerate() {
            row[c] = (0..d).map(|j| centered[(i, j)] * v[j]).sum();
        }
    }
    Ok(out)
}
