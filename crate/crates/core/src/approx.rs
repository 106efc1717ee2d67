//! Shifted-kernel approximation of the range kernel.
//!
//! Around each pixel, `phi(x - p(i))` is approximated by
//! `sum_k c_k(i) phi(x - mu_k)`. The coefficients come from the K x K
//! surrogate least-squares problem `min |A c - b(i)|` with
//! `A_kl = phi(mu_k - mu_l)` and `b_k(i) = phi(mu_k - p(i))`, solved once
//! through the pseudo-inverse of `A`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::clustering::ClusterModel;
use crate::error::{Error, Result};
use crate::image::MultiChannelImage;
use crate::kernels::RangeKernel;
use crate::linalg::{pseudo_inverse, SVD_RELATIVE_TOLERANCE};

/// Gram matrix of the centers and its pseudo-inverse.
#[derive(Debug, Clone)]
pub struct CoefficientSolver {
    kernel: RangeKernel,
    centers: Vec<f64>,
    k: usize,
    gram: DMatrix<f64>,
    pinv: DMatrix<f64>,
    svd_tolerance: f64,
}

impl CoefficientSolver {
    /// `centers` is `K x rho`, row-major.
    pub fn new(centers: &[f64], kernel: &RangeKernel) -> Result<Self> {
        Self::with_tolerance(centers, kernel, SVD_RELATIVE_TOLERANCE)
    }

    pub fn from_model(model: &ClusterModel, kernel: &RangeKernel) -> Result<Self> {
        Self::new(model.centers(), kernel)
    }

    pub fn with_tolerance(centers: &[f64], kernel: &RangeKernel, svd_tolerance: f64) -> Result<Self> {
        let dim = kernel.dim();
        if centers.is_empty() || centers.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                what: "center buffer length (multiple of range dimension)",
                expected: dim,
                got: centers.len(),
            });
        }
        let k = centers.len() / dim;
        let at = |i: usize| &centers[i * dim..(i + 1) * dim];
        let gram = DMatrix::from_fn(k, k, |r, c| kernel.eval_diff(at(r), at(c)));
        let pinv = pseudo_inverse(&gram, svd_tolerance);
        Ok(Self {
            kernel: kernel.clone(),
            centers: centers.to_vec(),
            k,
            gram,
            pinv,
            svd_tolerance,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn kernel(&self) -> &RangeKernel {
        &self.kernel
    }

    pub fn center(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.centers[k * d..(k + 1) * d]
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn pinv(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    pub fn svd_tolerance(&self) -> f64 {
        self.svd_tolerance
    }

    /// `b_k = phi(mu_k - p)`.
    pub fn pixel_b(&self, p: &[f64]) -> Result<Vec<f64>> {
        if p.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "guide vector",
                expected: self.dim(),
                got: p.len(),
            });
        }
        Ok((0..self.k)
            .map(|k| self.kernel.eval_diff(self.center(k), p))
            .collect())
    }

    /// `c = A^+ b`. Entries may be negative.
    pub fn coefficients(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.k {
            return Err(Error::DimensionMismatch {
                what: "sample vector b",
                expected: self.k,
                got: b.len(),
            });
        }
        let c = &self.pinv * DVector::from_column_slice(b);
        Ok(c.iter().copied().collect())
    }

    /// Surrogate objective `|A c - b|^2`.
    pub fn surrogate_residual(&self, c: &[f64], b: &[f64]) -> f64 {
        let r = &self.gram * DVector::from_column_slice(c) - DVector::from_column_slice(b);
        r.norm_squared()
    }
}

/// One-hot coefficient vector for the hard-assignment variant.
pub fn coefficients_hard(assigned: usize, k: usize) -> Result<Vec<f64>> {
    if assigned >= k {
        return Err(Error::ClusterIndex {
            index: assigned,
            clusters: k,
        });
    }
    let mut c = vec![0.0; k];
    c[assigned] = 1.0;
    Ok(c)
}

/// Guide vectors `p(i - j)` for `j in [-S, S]^2`, replicate boundary, as
/// `|W| x rho` row-major.
pub fn gather_window(guide: &MultiChannelImage, x: usize, y: usize, half_width: usize) -> Vec<f64> {
    let (w, h, rho) = (guide.width() as i64, guide.height() as i64, guide.channels());
    let s = half_width as i64;
    let mut out = Vec::with_capacity(((2 * s + 1) * (2 * s + 1)) as usize * rho);
    for dy in -s..=s {
        let yy = (y as i64 - dy).clamp(0, h - 1) as usize;
        for dx in -s..=s {
            let xx = (x as i64 - dx).clamp(0, w - 1) as usize;
            for c in 0..rho {
                out.push(guide.get(c, xx, yy));
            }
        }
    }
    out
}

/// Per-pixel least squares over the window samples:
/// `min_c sum_x (phi(x - p) - sum_k c_k phi(x - mu_k))^2`, solved through
/// the normal equations with a pseudo-inverse. Slow reference only.
pub fn coefficients_exact_ls(
    window: &[f64],
    p: &[f64],
    solver: &CoefficientSolver,
) -> Result<Vec<f64>> {
    let dim = solver.dim();
    if p.len() != dim {
        return Err(Error::DimensionMismatch {
            what: "guide vector",
            expected: dim,
            got: p.len(),
        });
    }
    if window.is_empty() || window.len() % dim != 0 {
        return Err(Error::invalid("window", "empty or ragged window sample set"));
    }
    let k = solver.k();
    let kernel = solver.kernel();
    let mut normal = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    let mut row = vec![0.0; k];
    for x in window.chunks_exact(dim) {
        for (kk, r) in row.iter_mut().enumerate() {
            *r = kernel.eval_diff(x, solver.center(kk));
        }
        let target = kernel.eval_diff(x, p);
        for a in 0..k {
            rhs[a] += row[a] * target;
            for b in 0..k {
                normal[(a, b)] += row[a] * row[b];
            }
        }
    }
    let c = pseudo_inverse(&normal, solver.svd_tolerance()) * rhs;
    Ok(c.iter().copied().collect())
}

/// Local objective minimized by [`coefficients_exact_ls`].
pub fn local_residual(window: &[f64], p: &[f64], solver: &CoefficientSolver, c: &[f64]) -> f64 {
    let dim = solver.dim();
    window
        .chunks_exact(dim)
        .map(|x| {
            let approx: f64 = (0..solver.k())
                .map(|k| c[k] * solver.kernel().eval_diff(x, solver.center(k)))
                .sum();
            let e = solver.kernel().eval_diff(x, p) - approx;
            e * e
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientMode {
    /// `c(i) = A^+ b(i)`.
    Optimized,
    /// One-hot on the assigned cluster.
    Hard,
    /// Per-pixel least squares over the window (reference).
    ExactLs,
}

/// Planar per-pixel sample vectors `b` and coefficients `c`, one plane per
/// cluster.
#[derive(Debug, Clone)]
pub struct CoefficientField {
    pub mode: CoefficientMode,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

/// `b_k(i) = phi(mu_k - p(i))` for every pixel, one plane per cluster.
pub fn sample_planes(solver: &CoefficientSolver, guide: &MultiChannelImage) -> Result<Vec<Vec<f64>>> {
    if guide.channels() != solver.dim() {
        return Err(Error::DimensionMismatch {
            what: "guide channels",
            expected: solver.dim(),
            got: guide.channels(),
        });
    }
    let n = guide.pixel_count();
    let rho = guide.channels();
    let w = guide.width();
    let planes = (0..solver.k())
        .into_par_iter()
        .map(|k| {
            let center = solver.center(k);
            let mut plane = vec![0.0; n];
            plane.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
                let mut p = vec![0.0; rho];
                for (x, out) in row.iter_mut().enumerate() {
                    guide.pixel_into(y * w + x, &mut p);
                    *out = solver.kernel().eval_diff(center, &p);
                }
            });
            plane
        })
        .collect();
    Ok(planes)
}

/// `c = A^+ b` applied to whole planes.
pub fn optimized_planes(solver: &CoefficientSolver, b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = solver.k();
    let n = b.first().map_or(0, Vec::len);
    const CHUNK: usize = 4096;
    (0..k)
        .into_par_iter()
        .map(|row| {
            let mut plane = vec![0.0; n];
            plane
                .par_chunks_mut(CHUNK)
                .enumerate()
                .for_each(|(ci, chunk)| {
                    let start = ci * CHUNK;
                    for l in 0..k {
                        let a = solver.pinv()[(row, l)];
                        let src = &b[l][start..start + chunk.len()];
                        for (o, s) in chunk.iter_mut().zip(src) {
                            *o += a * s;
                        }
                    }
                });
            plane
        })
        .collect()
}

/// One-hot planes from a cluster assignment.
pub fn hard_planes(assignment: &[usize], k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|kk| {
            assignment
                .iter()
                .map(|&a| if a == kk { 1.0 } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Exact per-pixel least-squares coefficients over each pixel's window.
pub fn exact_ls_planes(
    solver: &CoefficientSolver,
    guide: &MultiChannelImage,
    half_width: usize,
) -> Result<Vec<Vec<f64>>> {
    let (w, h, k) = (guide.width(), guide.height(), solver.k());
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| -> Result<Vec<f64>> {
            let mut row = Vec::with_capacity(w * k);
            for x in 0..w {
                let window = gather_window(guide, x, y, half_width);
                let p = guide.pixel(y * w + x);
                row.extend(coefficients_exact_ls(&window, &p, solver)?);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let mut planes = vec![vec![0.0; w * h]; k];
    for (y, row) in rows.iter().enumerate() {
        for x in 0..w {
            for (kk, plane) in planes.iter_mut().enumerate() {
                plane[y * w + x] = row[x * k + kk];
            }
        }
    }
    Ok(planes)
}
