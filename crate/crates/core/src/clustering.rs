//! K-Means (k-means++ seeding, Lloyd iterations) over per-cell feature vectors
//! of the first frame, producing the initial class-agnostic coarse mask.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{CoarseMask, FeatureGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Convergence threshold on the largest centroid displacement.
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iter: 300,
            tol: 1e-4,
        }
    }
}

/// Fitted centroids. Centroids are kept in `f64` so Lloyd updates are exact
/// means of the `f32` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    centroids: Vec<f64>,
    dim: usize,
    k: usize,
    seed: u64,
    inertia: f64,
}

impl ClusterModel {
    pub fn num_clusters(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn inertia(&self) -> f64 {
        self.inertia
    }

    pub fn centroid(&self, l: usize) -> &[f64] {
        &self.centroids[l * self.dim..(l + 1) * self.dim]
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn nearest(&self, point: &[f32]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for l in 0..self.k {
            let d = sq_dist(point, self.centroid(l));
            if d < best.1 {
                best = (l, d);
            }
        }
        best
    }
}

/// Result of [`kmeans_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub model: ClusterModel,
    pub labels: Vec<u32>,
    /// Inertia after seeding followed by the inertia after each Lloyd
    /// iteration.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y;
            d * d
        })
        .sum()
}

fn assign(points: &[f32], dim: usize, model: &ClusterModel, labels: &mut [u32], dists: &mut [f64]) -> f64 {
    let mut inertia = 0.0;
    for (i, p) in points.chunks_exact(dim).enumerate() {
        let (l, d) = model.nearest(p);
        labels[i] = l as u32;
        dists[i] = d;
        inertia += d;
    }
    inertia
}

fn kmeans_pp(points: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids: Vec<f64> = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend(point(first).iter().map(|&v| v as f64));
    let mut best: Vec<f64> = (0..n).map(|i| sq_dist(point(i), &centroids[..dim])).collect();
    for c in 1..k {
        let total: f64 = best.iter().sum();
        // k never exceeds the distinct point count, so some point is still
        // at positive distance
        let mut target = rng.random::<f64>() * total;
        let mut chosen = n - 1;
        for (i, &d) in best.iter().enumerate() {
            if d > 0.0 && target < d {
                chosen = i;
                break;
            }
            target -= d;
        }
        if best[chosen] == 0.0 {
            chosen = best
                .iter()
                .enumerate()
                .rev()
                .find(|(_, &d)| d > 0.0)
                .map(|(i, _)| i)
                .expect("a point at positive distance exists");
        }
        centroids.extend(point(chosen).iter().map(|&v| v as f64));
        let new = &centroids[c * dim..];
        for (i, b) in best.iter_mut().enumerate() {
            let d = sq_dist(point(i), new);
            if d < *b {
                *b = d;
            }
        }
    }
    centroids
}

/// Cluster `points` (row-major, `dim` floats per point) into `params.k`
/// groups. Deterministic for a given `(points, k, seed)`.
pub fn kmeans_fit(points: &[f32], dim: usize, params: &KMeansParams) -> Result<KMeansFit> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::shape(format!(
            "{} values do not form points of dimension {dim}",
            points.len()
        )));
    }
    if params.max_iter == 0 {
        return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let n = points.len() / dim;
    let distinct = points
        .chunks_exact(dim)
        .map(|p| p.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect::<HashSet<_>>()
        .len();
    if params.k == 0 || params.k > distinct {
        return Err(Error::TooFewPoints {
            k: params.k,
            distinct,
        });
    }

    let k = params.k;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut model = ClusterModel {
        centroids: kmeans_pp(points, dim, k, &mut rng),
        dim,
        k,
        seed: params.seed,
        inertia: 0.0,
    };
    let mut labels = vec![0u32; n];
    let mut dists = vec![0.0f64; n];
    let mut inertia = assign(points, dim, &model, &mut labels, &mut dists);
    let mut history = vec![inertia];
    let mut iterations = 0;

    while iterations < params.max_iter {
        iterations += 1;
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let l = labels[i] as usize;
            counts[l] += 1;
            for (s, &v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(p) {
                *s += v as f64;
            }
        }

        let mut shift = 0.0f64;
        let mut taken: Vec<usize> = Vec::new();
        for l in 0..k {
            let new: Vec<f64> = if counts[l] > 0 {
                sums[l * dim..(l + 1) * dim]
                    .iter()
                    .map(|s| s / counts[l] as f64)
                    .collect()
            } else {
                // re-seed an empty cluster at the point farthest from its
                // assigned centroid
                let far = (0..n)
                    .filter(|i| !taken.contains(i))
                    .fold(None, |acc: Option<usize>, i| match acc {
                        Some(j) if dists[j] >= dists[i] => Some(j),
                        _ => Some(i),
                    })
                    .expect("more points than clusters");
                taken.push(far);
                points[far * dim..(far + 1) * dim]
                    .iter()
                    .map(|&v| v as f64)
                    .collect()
            };
            let old = &mut model.centroids[l * dim..(l + 1) * dim];
            let moved: f64 = old
                .iter()
                .zip(&new)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            shift = shift.max(moved);
            old.copy_from_slice(&new);
        }

        let previous = labels.clone();
        let next = assign(points, dim, &model, &mut labels, &mut dists);
        debug_assert!(
            next <= inertia,
            "inertia increased from {inertia} to {next} at iteration {iterations}"
        );
        inertia = next;
        history.push(inertia);
        if shift <= params.tol || previous == labels {
            break;
        }
    }

    model.inertia = inertia;
    Ok(KMeansFit {
        model,
        labels,
        inertia_history: history,
        iterations,
    })
}

/// Cluster the cells of a feature grid; the returned labels form a mask.
pub fn kmeans_fit_grid(grid: &FeatureGrid, params: &KMeansParams) -> Result<(KMeansFit, CoarseMask)> {
    let fit = kmeans_fit(grid.values(), grid.channels(), params)?;
    let mask = CoarseMask::new(grid.height(), grid.width(), params.k as u32, fit.labels.clone())?;
    Ok((fit, mask))
}

/// Label each grid cell by its nearest centroid (squared Euclidean, ties to
/// the lowest centroid index).
pub fn kmeans_assign(model: &ClusterModel, grid: &FeatureGrid) -> Result<CoarseMask> {
    if grid.channels() != model.dim {
        return Err(Error::ChannelMismatch {
            expected: model.dim,
            found: grid.channels(),
        });
    }
    let labels = grid.cells().map(|p| model.nearest(p).0 as u32).collect();
    CoarseMask::new(grid.height(), grid.width(), model.k as u32, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn corners_are_their_own_clusters() {
        let pts = [0.0, 0.0, 100.0, 0.0, 0.0, 100.0, 100.0, 100.0];
        let fit = kmeans_fit(&pts, 2, &KMeansParams::new(4, 3)).unwrap();
        assert_eq!(fit.model.inertia(), 0.0);
        let mut labels = fit.labels.clone();
        labels.sort();
        assert_eq!(labels, vec![0, 1, 2, 3]);
    }

    #[test]
    fn too_many_clusters_for_distinct_points() {
        let pts = [1.0, 1.0, 2.0, 3.0, 3.0];
        let err = kmeans_fit(&pts, 1, &KMeansParams::new(5, 0)).unwrap_err();
        assert!(matches!(err, Error::TooFewPoints { k: 5, distinct: 3 }));
    }

    #[test]
    fn non_finite_points_are_rejected() {
        let pts = [1.0, f32::INFINITY];
        assert!(matches!(
            kmeans_fit(&pts, 1, &KMeansParams::new(1, 0)),
            Err(Error::NonFiniteInput)
        ));
    }

    /// Plain Lloyd iterations from a given start, without seeding or
    /// empty-cluster handling.
    fn reference_lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut labels = vec![0; points.len()];
        for _ in 0..100 {
            for (i, p) in points.iter().enumerate() {
                let d = |c: &Vec<f64>| p.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                labels[i] = (0..centroids.len())
                    .min_by(|&a, &b| d(&centroids[a]).partial_cmp(&d(&centroids[b])).unwrap())
                    .unwrap();
            }
            for (l, c) in centroids.iter_mut().enumerate() {
                let members: Vec<_> = points.iter().zip(&labels).filter(|(_, &x)| x == l).map(|(p, _)| p).collect();
                for (j, v) in c.iter_mut().enumerate() {
                    *v = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
                }
            }
        }
        (centroids, labels)
    }

    #[test]
    fn two_blobs_separate_like_reference_lloyd() {
        let dim = 4;
        let sigma = 0.3;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut pts = Vec::new();
        for blob in 0..2 {
            for _ in 0..50 {
                for _ in 0..dim {
                    pts.push(blob as f32 * 10.0 + noise.sample(&mut rng) as f32);
                }
            }
        }
        let fit = kmeans_fit(&pts, dim, &KMeansParams::new(2, 5)).unwrap();
        assert!(fit.labels[..50].iter().all(|&l| l == fit.labels[0]));
        assert!(fit.labels[50..].iter().all(|&l| l == fit.labels[50]));
        assert_ne!(fit.labels[0], fit.labels[50]);

        let rows: Vec<Vec<f64>> = pts.chunks(dim).map(|c| c.iter().map(|&v| v as f64).collect()).collect();
        let start = vec![rows[0].clone(), rows[99].clone()];
        let (centroids, labels) = reference_lloyd(&rows, start);
        for (i, &l) in labels.iter().enumerate() {
            // same partition up to permutation
            assert_eq!(l == labels[0], fit.labels[i] == fit.labels[0]);
        }
        for c in &centroids {
            let l = fit.model.nearest(&c.iter().map(|&v| v as f32).collect::<Vec<_>>()).0;
            for (a, b) in c.iter().zip(fit.model.centroid(l)) {
                assert!((a - b).abs() < 1e-9);
                // within 3 sigma of the blob mean
                let target = if *a > 5.0 { 10.0 } else { 0.0 };
                assert!((b - target).abs() < 3.0 * sigma);
            }
        }
    }

    #[test]
    fn assign_breaks_ties_toward_lower_index() {
        let model = ClusterModel {
            centroids: vec![10.0, 0.0, -1.0, 5.0, 1.0],
            dim: 1,
            k: 5,
            seed: 0,
            inertia: 0.0,
        };
        let grid = FeatureGrid::new(1, 2, 1, vec![-1.0, 0.0]).unwrap();
        let mask = kmeans_assign(&model, &grid).unwrap();
        // cells sitting exactly on centroids 2 and 1
        assert_eq!(mask.labels(), &[2, 1]);

        // 0.0 is equidistant from centroids 1 and 3
        let grid = FeatureGrid::new(1, 1, 1, vec![0.0]).unwrap();
        let tie = ClusterModel {
            centroids: vec![9.0, -1.0, 7.0, 1.0],
            dim: 1,
            k: 4,
            seed: 0,
            inertia: 0.0,
        };
        assert_eq!(kmeans_assign(&tie, &grid).unwrap().labels(), &[1]);
    }

    #[test]
    fn assign_matches_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let dim = 3;
        let values: Vec<f32> = (0..64 * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grid = FeatureGrid::new(8, 8, dim, values).unwrap();
        let fit = kmeans_fit(grid.values(), dim, &KMeansParams::new(6, 1)).unwrap();
        let mask = kmeans_assign(&fit.model, &grid).unwrap();
        for (i, p) in grid.cells().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for l in 0..6 {
                let d: f64 = p.iter().zip(fit.model.centroid(l)).map(|(&a, &b)| (a as f64 - b).powi(2)).sum();
                if d < best_d {
                    best_d = d;
                    best = l as u32;
                }
            }
            assert_eq!(mask.labels()[i], best);
        }
        assert_eq!(mask.labels(), &fit.labels[..]);
    }

    #[test]
    fn channel_mismatch_on_assign() {
        let fit = kmeans_fit(&[0.0, 1.0], 1, &KMeansParams::new(2, 0)).unwrap();
        let grid = FeatureGrid::new(1, 1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            kmeans_assign(&fit.model, &grid),
            Err(Error::ChannelMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn duplicate_heavy_input_keeps_k_clusters() {
        // many duplicates make empty clusters likely during iteration
        let mut pts = vec![0.0f32; 40];
        pts.extend([5.0, 5.1, 9.0, 9.2, 20.0]);
        let fit = kmeans_fit(&pts, 1, &KMeansParams::new(5, 4)).unwrap();
        assert!(fit.labels.iter().all(|&l| l < 5));
        assert!(fit.inertia_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(fit.model.inertia() <= fit.inertia_history[0]);
    }
}
