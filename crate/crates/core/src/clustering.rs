//! Bisecting K-means over the guide's range space.
//!
//! Starting from a single cluster, the cluster with the largest within-cluster
//! sum of squares is repeatedly split in two with Lloyd's 2-means, seeded by
//! the farthest-separated pair of its points.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::MultiChannelImage;

/// Lloyd iterations per bisection.
pub const MAX_LLOYD_ITERATIONS: usize = 50;
/// Farthest-pair seeding runs over at most this many points of a cluster.
pub const SEED_SUBSAMPLE: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    dim: usize,
    /// `K x dim`, row-major.
    centers: Vec<f64>,
    assignment: Vec<usize>,
    counts: Vec<usize>,
    error: f64,
}

impl ClusterModel {
    /// Builds a model from an explicit assignment; centers are the means of
    /// the assigned points. Every cluster must be non-empty.
    pub fn from_assignment(points: &[f64], dim: usize, k: usize, assignment: Vec<usize>) -> Result<Self> {
        check_points(points, dim)?;
        let n = points.len() / dim;
        if assignment.len() != n {
            return Err(Error::DimensionMismatch {
                what: "assignment length",
                expected: n,
                got: assignment.len(),
            });
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignment.iter().enumerate() {
            if a >= k {
                return Err(Error::ClusterIndex {
                    index: a,
                    clusters: k,
                });
            }
            counts[a] += 1;
            for d in 0..dim {
                sums[a * dim + d] += points[i * dim + d];
            }
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::invalid(
                "assignment",
                format!("cluster {empty} has no points"),
            ));
        }
        for (c, &count) in counts.iter().enumerate() {
            for d in 0..dim {
                sums[c * dim + d] /= count as f64;
            }
        }
        let mut model = ClusterModel {
            dim,
            centers: sums,
            assignment,
            counts,
            error: 0.0,
        };
        model.error = sse_of(points, dim, &model.centers, &model.assignment);
        Ok(model)
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn center(&self, k: usize) -> &[f64] {
        &self.centers[k * self.dim..(k + 1) * self.dim]
    }

    /// All centers, `K x dim` row-major.
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Clustering error `E_K` recorded when the model was built.
    pub fn error(&self) -> f64 {
        self.error
    }
}

fn check_points(points: &[f64], dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::invalid("dim", "point dimension must be at least 1"));
    }
    if points.is_empty() || points.len() % dim != 0 {
        return Err(Error::DimensionMismatch {
            what: "point buffer length (multiple of dim)",
            expected: dim,
            got: points.len(),
        });
    }
    Ok(())
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn sse_of(points: &[f64], dim: usize, centers: &[f64], assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &a)| sq_dist(&points[i * dim..(i + 1) * dim], &centers[a * dim..(a + 1) * dim]))
        .sum()
}

/// `E_K = sum_k sum_{p in C_k} |p - mu_k|^2`, recomputed from the guide.
pub fn clustering_error(model: &ClusterModel, guide: &MultiChannelImage) -> Result<f64> {
    if guide.channels() != model.dim {
        return Err(Error::DimensionMismatch {
            what: "guide channels",
            expected: model.dim,
            got: guide.channels(),
        });
    }
    if guide.pixel_count() != model.assignment.len() {
        return Err(Error::DimensionMismatch {
            what: "guide pixel count",
            expected: model.assignment.len(),
            got: guide.pixel_count(),
        });
    }
    let points = guide.to_interleaved();
    Ok(sse_of(&points, model.dim, &model.centers, &model.assignment))
}

/// Number of distinct vectors, counting no further than `limit`.
fn distinct_count(points: &[f64], dim: usize, limit: usize) -> usize {
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    for p in points.chunks_exact(dim) {
        // +0.0 and -0.0 are the same point
        seen.insert(p.iter().map(|v| (v + 0.0).to_bits()).collect());
        if seen.len() >= limit {
            break;
        }
    }
    seen.len()
}

pub fn bisecting_kmeans(guide: &MultiChannelImage, k: usize) -> Result<ClusterModel> {
    bisecting_kmeans_points(&guide.to_interleaved(), guide.channels(), k)
}

struct Cluster {
    members: Vec<usize>,
    center: Vec<f64>,
    sse: f64,
    /// Holds at least two distinct vectors.
    splittable: bool,
}

impl Cluster {
    fn from_members(points: &[f64], dim: usize, members: Vec<usize>) -> Self {
        let mut center = vec![0.0; dim];
        for &i in &members {
            for d in 0..dim {
                center[d] += points[i * dim + d];
            }
        }
        center.iter_mut().for_each(|c| *c /= members.len() as f64);
        let sse = members
            .iter()
            .map(|&i| sq_dist(&points[i * dim..(i + 1) * dim], &center))
            .sum();
        let first = &points[members[0] * dim..(members[0] + 1) * dim];
        let splittable = members
            .iter()
            .any(|&i| &points[i * dim..(i + 1) * dim] != first);
        Cluster {
            members,
            center,
            sse,
            splittable,
        }
    }
}

/// Bisecting K-means on `n x dim` interleaved points.
pub fn bisecting_kmeans_points(points: &[f64], dim: usize, k: usize) -> Result<ClusterModel> {
    check_points(points, dim)?;
    if k == 0 {
        return Err(Error::invalid("clusters", "K must be at least 1"));
    }
    let available = distinct_count(points, dim, k);
    if available < k {
        return Err(Error::TooManyClusters {
            requested: k,
            available: distinct_count(points, dim, usize::MAX),
        });
    }
    let n = points.len() / dim;
    let mut clusters = vec![Cluster::from_members(points, dim, (0..n).collect())];
    while clusters.len() < k {
        // largest SSE, lowest index on ties; the distinct-count check
        // guarantees a splittable cluster exists
        let (target, _) = clusters
            .iter()
            .enumerate()
            .filter(|(_, c)| c.splittable)
            .fold((usize::MAX, f64::NEG_INFINITY), |best, (i, c)| {
                if c.sse > best.1 {
                    (i, c.sse)
                } else {
                    best
                }
            });
        let (left, right) = split_in_two(points, dim, &clusters[target].members);
        clusters[target] = Cluster::from_members(points, dim, left);
        clusters.push(Cluster::from_members(points, dim, right));
    }

    let mut assignment = vec![0usize; n];
    let mut counts = Vec::with_capacity(k);
    let mut centers = Vec::with_capacity(k * dim);
    for (ci, c) in clusters.iter().enumerate() {
        for &i in &c.members {
            assignment[i] = ci;
        }
        counts.push(c.members.len());
        centers.extend_from_slice(&c.center);
    }
    let error = sse_of(points, dim, &centers, &assignment);
    Ok(ClusterModel {
        dim,
        centers,
        assignment,
        counts,
        error,
    })
}

/// Farthest pair among a deterministic stride subsample of `members`.
fn farthest_pair(points: &[f64], dim: usize, members: &[usize]) -> (usize, usize) {
    let m = members.len();
    let sample: Vec<usize> = if m > SEED_SUBSAMPLE {
        (0..SEED_SUBSAMPLE).map(|t| members[t * m / SEED_SUBSAMPLE]).collect()
    } else {
        members.to_vec()
    };
    let at = |i: usize| &points[i * dim..(i + 1) * dim];
    let s = sample.len();
    if s < 2 {
        return (sample[0], sample[0]);
    }
    let dist = |a: usize, b: usize| sq_dist(at(sample[a]), at(sample[b]));

    // Exact search with pruning: d(a, b) <= r_a + r_b where r is the distance
    // to the sample centroid, so only pairs whose radii reach the length of a
    // known pair can beat it.
    let mut centroid = vec![0.0; dim];
    for &i in &sample {
        for (c, v) in centroid.iter_mut().zip(at(i)) {
            *c += v;
        }
    }
    centroid.iter_mut().for_each(|c| *c /= s as f64);
    let radius: Vec<f64> = sample.iter().map(|&i| sq_dist(at(i), &centroid).sqrt()).collect();
    let farthest_from = |a: usize| {
        (0..s).fold((f64::NEG_INFINITY, a), |acc, b| {
            let d = dist(a, b);
            if d > acc.0 { (d, b) } else { acc }
        })
    };
    let (_, u) = farthest_from(0);
    let (known, _) = farthest_from(u);
    let threshold = known.sqrt() * (1.0 - 1e-9);

    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| radius[b].total_cmp(&radius[a]).then(a.cmp(&b)));

    // the winner is the largest distance, ties going to the smallest (a, b)
    // with a < b in sample order
    let better = |x: (f64, usize, usize), y: (f64, usize, usize)| {
        if y.0 > x.0 || (y.0 == x.0 && (y.1, y.2) < (x.1, x.2)) { y } else { x }
    };
    let none = (f64::NEG_INFINITY, usize::MAX, usize::MAX);
    let best = (0..s)
        .into_par_iter()
        .map(|i| {
            let a = order[i];
            let mut best = none;
            for &b in &order[i + 1..] {
                if radius[a] + radius[b] < threshold {
                    break;
                }
                best = better(best, (dist(a, b), a.min(b), a.max(b)));
            }
            best
        })
        .reduce(|| none, better);
    (sample[best.1], sample[best.2])
}

/// Lloyd's 2-means over `members`; returns the two non-empty halves.
fn split_in_two(points: &[f64], dim: usize, members: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let at = |i: usize| &points[i * dim..(i + 1) * dim];
    let (a, b) = farthest_pair(points, dim, members);
    let mut centers = [at(a).to_vec(), at(b).to_vec()];
    let mut labels: Vec<u8> = vec![u8::MAX; members.len()];

    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut next: Vec<u8> = members
            .par_iter()
            .map(|&i| {
                let p = at(i);
                u8::from(sq_dist(p, &centers[1]) < sq_dist(p, &centers[0]))
            })
            .collect();

        for empty in 0..2u8 {
            if next.iter().all(|&l| l != empty) {
                // reseed at the point farthest from the surviving center
                let other = &centers[usize::from(1 - empty)];
                let (far, _) = members.iter().enumerate().fold(
                    (0, f64::NEG_INFINITY),
                    |best, (j, &i)| {
                        let d = sq_dist(at(i), other);
                        if d > best.1 {
                            (j, d)
                        } else {
                            best
                        }
                    },
                );
                // move every copy of that vector so equal points stay together
                let far_point = at(members[far]);
                for (j, &i) in members.iter().enumerate() {
                    if at(i) == far_point {
                        next[j] = empty;
                    }
                }
            }
        }

        let mut sums = [vec![0.0; dim], vec![0.0; dim]];
        let mut counts = [0usize; 2];
        for (&i, &l) in members.iter().zip(&next) {
            let l = usize::from(l);
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(at(i)) {
                *s += v;
            }
        }
        for c in 0..2 {
            centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }

        let converged = next == labels;
        labels = next;
        if converged {
            break;
        }
    }

    let mut left = Vec::new();
    let mut right = Vec::new();
    for (&i, &l) in members.iter().zip(&labels) {
        if l == 0 {
            left.push(i);
        } else {
            right.push(i);
        }
    }
    (left, right)
}
