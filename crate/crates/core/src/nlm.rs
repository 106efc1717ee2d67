//! Non-local means as a high-dimensional filter: the guide at each pixel is
//! the patch around it, optionally reduced by PCA, and the spatial kernel is
//! a box over the search window.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::MultiChannelImage;
use crate::kernels::{RangeKernel, SpatialKernel};
use crate::pipeline::{run, FilterMode, FilterReport, FilterRequest};

/// Above this many patch vectors the PCA fit uses a regular stride subsample.
pub const PCA_FIT_LIMIT: usize = 1 << 20;

const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGuideSpec {
    /// Odd patch side `m`.
    pub patch_side: usize,
    /// Number of principal components kept, or `None` for the raw patch.
    pub pca_dim: Option<usize>,
    /// Half-width `S` of the box search window.
    pub search_half_width: usize,
}

impl PatchGuideSpec {
    pub fn validate(&self, channels: usize) -> Result<()> {
        check_patch_side(self.patch_side)?;
        if self.search_half_width == 0 {
            return Err(Error::invalid("search_half_width", "must be at least 1"));
        }
        if let Some(d) = self.pca_dim {
            let full = channels * self.patch_side * self.patch_side;
            if d == 0 || d > full {
                return Err(Error::invalid(
                    "pca_dim",
                    format!("{d} is outside 1..={full} for {channels} channel(s) and m = {}", self.patch_side),
                ));
            }
        }
        Ok(())
    }

    /// Guide dimension after extraction and optional PCA.
    pub fn guide_dim(&self, channels: usize) -> usize {
        self.pca_dim
            .unwrap_or(channels * self.patch_side * self.patch_side)
    }
}

fn check_patch_side(m: usize) -> Result<()> {
    if m == 0 || m % 2 == 0 {
        return Err(Error::invalid("patch_side", format!("{m} is not a positive odd integer")));
    }
    Ok(())
}

/// Stacks the `m x m` neighborhood of every pixel into `n m^2` guide
/// channels: input channel first, then patch rows, then patch columns.
/// Patches crossing the border use replicated edge pixels.
pub fn extract_patch_guide(image: &MultiChannelImage, m: usize) -> Result<MultiChannelImage> {
    check_patch_side(m)?;
    let (w, h, n) = (image.width(), image.height(), image.channels());
    let r = (m / 2) as i64;
    let pixels = w * h;
    let mut data = vec![0.0; pixels * n * m * m];
    data.par_chunks_mut(pixels)
        .enumerate()
        .for_each(|(guide_ch, plane)| {
            let c = guide_ch / (m * m);
            let offset = guide_ch % (m * m);
            let dy = (offset / m) as i64 - r;
            let dx = (offset % m) as i64 - r;
            let src = image.channel(c);
            for y in 0..h {
                let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                for x in 0..w {
                    let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    plane[y * w + x] = src[yy * w + xx];
                }
            }
        });
    MultiChannelImage::from_vec(w, h, n * m * m, image.range(), data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// `pca_dim` orthonormal rows of length `dim`.
    pub components: Vec<Vec<f64>>,
    /// All eigenvalues of the covariance, descending.
    pub eigenvalues: Vec<f64>,
    /// Share of the total variance captured by the kept components.
    pub explained_energy: f64,
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn pca_dim(&self) -> usize {
        self.components.len()
    }
}

/// Indices of the vectors used for fitting: all of them, or an even stride
/// down to [`PCA_FIT_LIMIT`].
fn fit_indices(pixels: usize) -> Vec<usize> {
    if pixels <= PCA_FIT_LIMIT {
        (0..pixels).collect()
    } else {
        (0..PCA_FIT_LIMIT)
            .map(|j| (j as u128 * pixels as u128 / PCA_FIT_LIMIT as u128) as usize)
            .collect()
    }
}

/// Principal components of the guide vectors, from the eigen-decomposition
/// of their covariance. Each component is signed so that its largest
/// magnitude entry is positive.
pub fn fit_pca(guide: &MultiChannelImage, pca_dim: usize) -> Result<PcaBasis> {
    let d = guide.channels();
    if pca_dim == 0 || pca_dim > d {
        return Err(Error::invalid(
            "pca_dim",
            format!("{pca_dim} is outside 1..={d}"),
        ));
    }
    let idx = fit_indices(guide.pixel_count());
    let count = idx.len() as f64;
    let points = guide.to_interleaved();

    let partial_means: Vec<Vec<f64>> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut s = vec![0.0; d];
            for &i in chunk {
                for (a, v) in s.iter_mut().zip(&points[i * d..(i + 1) * d]) {
                    *a += v;
                }
            }
            s
        })
        .collect();
    let mut mean = vec![0.0; d];
    for p in &partial_means {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);

    let partial_cov: Vec<Vec<f64>> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut s = vec![0.0; d * d];
            let mut centered = vec![0.0; d];
            for &i in chunk {
                for ((c, v), m) in centered.iter_mut().zip(&points[i * d..(i + 1) * d]).zip(&mean) {
                    *c = v - m;
                }
                for a in 0..d {
                    let ca = centered[a];
                    for b in a..d {
                        s[a * d + b] += ca * centered[b];
                    }
                }
            }
            s
        })
        .collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for p in &partial_cov {
        for a in 0..d {
            for b in a..d {
                cov[(a, b)] += p[a * d + b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / count;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let components: Vec<Vec<f64>> = order[..pca_dim]
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let mut lead = 0;
            for (j, x) in v.iter().enumerate() {
                if x.abs() > v[lead].abs() {
                    lead = j;
                }
            }
            if v[lead] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    let total: f64 = eigenvalues.iter().map(|l| l.max(0.0)).sum();
    let kept: f64 = eigenvalues[..pca_dim].iter().map(|l| l.max(0.0)).sum();
    let explained_energy = if total > 0.0 { (kept / total).min(1.0) } else { 1.0 };
    Ok(PcaBasis {
        mean,
        components,
        eigenvalues,
        explained_energy,
    })
}

/// Coordinates of every guide vector in the component basis, after
/// subtracting the mean.
pub fn project(guide: &MultiChannelImage, basis: &PcaBasis) -> Result<MultiChannelImage> {
    let d = basis.dim();
    if guide.channels() != d {
        return Err(Error::DimensionMismatch {
            what: "guide channels vs PCA basis",
            expected: d,
            got: guide.channels(),
        });
    }
    let pixels = guide.pixel_count();
    let mut data = vec![0.0; pixels * basis.pca_dim()];
    data.par_chunks_mut(pixels)
        .zip(&basis.components)
        .for_each(|(plane, comp)| {
            for (c, (&weight, &mean)) in comp.iter().zip(&basis.mean).enumerate() {
                if weight == 0.0 {
                    continue;
                }
                for (o, v) in plane.iter_mut().zip(guide.channel(c)) {
                    *o += weight * (v - mean);
                }
            }
        });
    MultiChannelImage::from_vec(guide.width(), guide.height(), basis.pca_dim(), guide.range(), data)
}

/// `mean + components^T coords` for every pixel.
pub fn reconstruct(coords: &MultiChannelImage, basis: &PcaBasis) -> Result<MultiChannelImage> {
    if coords.channels() != basis.pca_dim() {
        return Err(Error::DimensionMismatch {
            what: "coordinate channels vs PCA basis",
            expected: basis.pca_dim(),
            got: coords.channels(),
        });
    }
    let pixels = coords.pixel_count();
    let mut data = vec![0.0; pixels * basis.dim()];
    data.par_chunks_mut(pixels).enumerate().for_each(|(c, plane)| {
        plane.iter_mut().for_each(|v| *v = basis.mean[c]);
        for (k, comp) in basis.components.iter().enumerate() {
            for (o, v) in plane.iter_mut().zip(coords.channel(k)) {
                *o += comp[c] * v;
            }
        }
    });
    MultiChannelImage::from_vec(coords.width(), coords.height(), basis.dim(), coords.range(), data)
}

/// Patch guide for `image`, reduced by PCA fit on the same image when
/// `spec.pca_dim` is below the full patch dimension.
pub fn build_nlm_guide(
    image: &MultiChannelImage,
    spec: &PatchGuideSpec,
) -> Result<(MultiChannelImage, Option<PcaBasis>)> {
    spec.validate(image.channels())?;
    let patches = extract_patch_guide(image, spec.patch_side)?;
    match spec.pca_dim {
        // keeping every component is an isometry, which the filter cannot see
        None => Ok((patches, None)),
        Some(d) if d == patches.channels() => Ok((patches, None)),
        Some(d) => {
            let basis = fit_pca(&patches, d)?;
            let guide = project(&patches, &basis)?;
            Ok((guide, Some(basis)))
        }
    }
}

/// Extra guide channels appended after the patch coordinates, each with its
/// own range bandwidth.
#[derive(Debug, Clone, Copy)]
pub struct FusedGuide<'a> {
    pub channels: &'a MultiChannelImage,
    pub sigmas: &'a [f64],
}

#[derive(Debug, Clone, Copy)]
pub struct NlmOptions<'a> {
    pub sigma_r: f64,
    pub clusters: usize,
    pub mode: FilterMode,
    pub fused: Option<FusedGuide<'a>>,
}

impl NlmOptions<'_> {
    pub fn new(sigma_r: f64, clusters: usize) -> Self {
        Self {
            sigma_r,
            clusters,
            mode: FilterMode::FastOptimized,
            fused: None,
        }
    }
}

/// Denoises `noisy` with the fast optimized filter over its own patch guide.
pub fn nlm_denoise(
    noisy: &MultiChannelImage,
    spec: &PatchGuideSpec,
    sigma_r: f64,
    clusters: usize,
) -> Result<FilterReport> {
    nlm_run(noisy, spec, &NlmOptions::new(sigma_r, clusters))
}

pub fn nlm_run(
    noisy: &MultiChannelImage,
    spec: &PatchGuideSpec,
    options: &NlmOptions,
) -> Result<FilterReport> {
    let (guide, _) = build_nlm_guide(noisy, spec)?;
    let rho = guide.channels();
    let (guide, range) = match options.fused {
        None => (guide, RangeKernel::isotropic(options.sigma_r, rho)?),
        Some(extra) => {
            if extra.sigmas.len() != extra.channels.channels() {
                return Err(Error::DimensionMismatch {
                    what: "fused guide bandwidths",
                    expected: extra.channels.channels(),
                    got: extra.sigmas.len(),
                });
            }
            let mut sigmas = vec![options.sigma_r; rho];
            sigmas.extend_from_slice(extra.sigmas);
            (guide.append_channels(extra.channels)?, RangeKernel::diagonal(sigmas)?)
        }
    };
    let req = FilterRequest::new(
        noisy,
        &guide,
        SpatialKernel::boxed(spec.search_half_width),
        range,
        options.clusters,
    )
    .mode(options.mode);
    run(&req)
}
