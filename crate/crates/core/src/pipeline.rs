//! End-to-end filtering: the brute-force definition, the fast clustered
//! approximation (optimized or hard coefficients), an exact-least-squares
//! reference, and the clustering error bound for the hard variant.
//!
//! The filtered output is
//! `g(i) = sum_j w(j) phi(p(i-j) - p(i)) f(i-j) / sum_j w(j) phi(p(i-j) - p(i))`
//! over the window `j in [-S, S]^2`, with replicate boundaries. The fast path
//! replaces `phi(. - p(i))` by `sum_k c_k(i) phi(. - mu_k)`, which turns the
//! sums into `(n + 1) K` spatial convolutions.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::approx::{
    exact_ls_planes, hard_planes, optimized_planes, sample_planes, CoefficientMode,
    CoefficientSolver,
};
use crate::clustering::{bisecting_kmeans, ClusterModel};
use crate::convolve::{GaussianBackend, Plane, Smoother};
use crate::error::{Error, Result};
use crate::image::MultiChannelImage;
use crate::kernels::{RangeKernel, SpatialKernel};
use crate::metrics::{mse_psnr, QualityReport};

/// Denominators smaller than this in magnitude are recomputed exactly.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    #[default]
    FastOptimized,
    FastHard,
    BruteForce,
    ExactLsReference,
}

#[derive(Debug, Clone)]
pub struct FilterRequest<'a> {
    pub input: &'a MultiChannelImage,
    pub guide: &'a MultiChannelImage,
    pub spatial: SpatialKernel,
    pub range: RangeKernel,
    pub clusters: usize,
    pub mode: FilterMode,
    pub backend: GaussianBackend,
    /// Reuse an existing clustering of the guide instead of recomputing it.
    pub model: Option<ClusterModel>,
}

impl<'a> FilterRequest<'a> {
    pub fn new(
        input: &'a MultiChannelImage,
        guide: &'a MultiChannelImage,
        spatial: SpatialKernel,
        range: RangeKernel,
        clusters: usize,
    ) -> Self {
        Self {
            input,
            guide,
            spatial,
            range,
            clusters,
            mode: FilterMode::FastOptimized,
            backend: GaussianBackend::Recursive,
            model: None,
        }
    }

    pub fn mode(mut self, mode: FilterMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn backend(mut self, backend: GaussianBackend) -> Self {
        self.backend = backend;
        self
    }

    pub fn with_model(mut self, model: ClusterModel) -> Self {
        self.model = Some(model);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.input.same_domain(self.guide) {
            return Err(Error::DomainMismatch {
                input_width: self.input.width(),
                input_height: self.input.height(),
                guide_width: self.guide.width(),
                guide_height: self.guide.height(),
            });
        }
        if self.guide.channels() != self.range.dim() {
            return Err(Error::DimensionMismatch {
                what: "guide channels vs range kernel dimension",
                expected: self.range.dim(),
                got: self.guide.channels(),
            });
        }
        if self.clusters == 0 {
            return Err(Error::invalid("clusters", "K must be at least 1"));
        }
        if !self.input.is_finite() || !self.guide.is_finite() {
            return Err(Error::invalid("input", "non-finite samples"));
        }
        if let Some(model) = &self.model {
            if model.dim() != self.guide.channels()
                || model.assignment().len() != self.guide.pixel_count()
            {
                return Err(Error::invalid(
                    "model",
                    "cluster model does not belong to this guide",
                ));
            }
        }
        Ok(())
    }
}

/// Wall time per stage, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub cluster_ms: f64,
    pub coefficients_ms: f64,
    pub intermediates_ms: f64,
    pub convolutions_ms: f64,
    pub combine_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone)]
pub struct FilterReport {
    pub output: MultiChannelImage,
    pub mode: FilterMode,
    pub timings: StageTimings,
    /// Spatial convolutions performed; `(n + 1) K` on the fast path.
    pub convolution_calls: usize,
    /// Pixels whose approximate normalizer vanished and were recomputed
    /// exactly.
    pub fallback_pixels: usize,
    pub model: Option<ClusterModel>,
}

impl FilterReport {
    /// Quality of this output against a reference (usually brute force).
    pub fn quality_against(&self, reference: &MultiChannelImage) -> Result<QualityReport> {
        mse_psnr(&self.output, reference, self.output.range())
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Runs whichever filter the request's mode selects.
pub fn run(req: &FilterRequest) -> Result<FilterReport> {
    match req.mode {
        FilterMode::FastOptimized => filter_fast(req),
        FilterMode::FastHard => filter_fast_hard(req),
        FilterMode::ExactLsReference => filter_exact_ls(req),
        FilterMode::BruteForce => {
            let start = Instant::now();
            let output = filter_brute_force(req)?;
            Ok(FilterReport {
                output,
                mode: FilterMode::BruteForce,
                timings: StageTimings {
                    total_ms: ms_since(start),
                    ..StageTimings::default()
                },
                convolution_calls: 0,
                fallback_pixels: 0,
                model: None,
            })
        }
    }
}

/// Direct evaluation of the filter, `O(|W|)` per pixel.
pub fn filter_brute_force(req: &FilterRequest) -> Result<MultiChannelImage> {
    req.validate()?;
    let oracle = BruteForce::new(req);
    let (w, h, n) = (req.input.width(), req.input.height(), req.input.channels());
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![0.0; w * n];
            for x in 0..w {
                oracle.pixel(x, y, &mut row[x * n..(x + 1) * n]);
            }
            row
        })
        .collect();
    let samples: Vec<f64> = rows.into_iter().flatten().collect();
    MultiChannelImage::from_interleaved(w, h, n, req.input.range(), &samples)
}

struct BruteForce<'r> {
    width: usize,
    height: usize,
    rho: usize,
    n: usize,
    guide: Vec<f64>,
    input: Vec<f64>,
    taps: Vec<f64>,
    range: &'r RangeKernel,
}

impl<'r> BruteForce<'r> {
    fn new(req: &'r FilterRequest) -> Self {
        Self {
            width: req.input.width(),
            height: req.input.height(),
            rho: req.guide.channels(),
            n: req.input.channels(),
            guide: req.guide.to_interleaved(),
            input: req.input.to_interleaved(),
            taps: req.spatial.taps(),
            range: &req.range,
        }
    }

    fn pixel(&self, x: usize, y: usize, out: &mut [f64]) {
        let s = (self.taps.len() / 2) as i64;
        let (w, h) = (self.width as i64, self.height as i64);
        let (rho, n) = (self.rho, self.n);
        let center = y * self.width + x;
        let p = &self.guide[center * rho..(center + 1) * rho];
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut den = 0.0;
        for dy in -s..=s {
            let yy = (y as i64 - dy).clamp(0, h - 1) as usize;
            let wy = self.taps[(dy + s) as usize];
            for dx in -s..=s {
                let xx = (x as i64 - dx).clamp(0, w - 1) as usize;
                let j = yy * self.width + xx;
                let weight = wy
                    * self.taps[(dx + s) as usize]
                    * self.range.eval_diff(&self.guide[j * rho..(j + 1) * rho], p);
                den += weight;
                for (o, f) in out.iter_mut().zip(&self.input[j * n..(j + 1) * n]) {
                    *o += weight * f;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= den);
    }
}

/// Fast filter with coefficients `c(i) = A^+ b(i)`.
pub fn filter_fast(req: &FilterRequest) -> Result<FilterReport> {
    fast_path(req, CoefficientMode::Optimized, FilterMode::FastOptimized)
}

/// Fast filter with one-hot coefficients: `g(i) = v_s(i) / r_s(i)` for the
/// cluster `s` holding `p(i)`.
pub fn filter_fast_hard(req: &FilterRequest) -> Result<FilterReport> {
    fast_path(req, CoefficientMode::Hard, FilterMode::FastHard)
}

/// Fast filter with per-pixel least-squares coefficients over each window.
/// Much slower; used to measure what the surrogate problem gives up.
///
/// The fit only constrains the kernel on the `[-S, S]^2` window, so the
/// Gaussian is always the truncated FIR here: the recursive filter's
/// infinite tails would weight samples the coefficients were never fitted on.
pub fn filter_exact_ls(req: &FilterRequest) -> Result<FilterReport> {
    fast_path(req, CoefficientMode::ExactLs, FilterMode::ExactLsReference)
}

fn fast_path(req: &FilterRequest, coeff_mode: CoefficientMode, mode: FilterMode) -> Result<FilterReport> {
    req.validate()?;
    let total = Instant::now();
    let mut timings = StageTimings::default();
    let (w, h, n) = (req.input.width(), req.input.height(), req.input.channels());
    let pixels = w * h;

    let t = Instant::now();
    let model = match &req.model {
        Some(m) => m.clone(),
        None => bisecting_kmeans(req.guide, req.clusters)?,
    };
    let k = model.k();
    timings.cluster_ms = ms_since(t);

    let t = Instant::now();
    let solver = CoefficientSolver::from_model(&model, &req.range)?;
    timings.coefficients_ms += ms_since(t);

    let t = Instant::now();
    let b = sample_planes(&solver, req.guide)?;
    timings.intermediates_ms += ms_since(t);

    let t = Instant::now();
    let c = match coeff_mode {
        CoefficientMode::Optimized => optimized_planes(&solver, &b),
        CoefficientMode::Hard => hard_planes(model.assignment(), k),
        CoefficientMode::ExactLs => exact_ls_planes(&solver, req.guide, req.spatial.half_width())?,
    };
    timings.coefficients_ms += ms_since(t);

    let backend = match coeff_mode {
        CoefficientMode::ExactLs => GaussianBackend::Direct,
        _ => req.backend,
    };
    let smoother = Smoother::new(&req.spatial, backend);
    let mut numerator = vec![vec![0.0; pixels]; n];
    let mut denominator = vec![0.0; pixels];
    let mut convolution_calls = 0;
    const CHUNK: usize = 4096;

    for kk in 0..k {
        let t = Instant::now();
        // u_k = b_k * f for every channel, then b_k itself
        let mut inputs: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|ch| {
                req.input
                    .channel(ch)
                    .iter()
                    .zip(&b[kk])
                    .map(|(f, bk)| f * bk)
                    .collect()
            })
            .collect();
        inputs.push(b[kk].clone());
        timings.intermediates_ms += ms_since(t);

        let t = Instant::now();
        let smoothed: Vec<Plane> = inputs
            .into_par_iter()
            .map(|data| smoother.apply(&Plane::from_vec(w, h, data).expect("image-sized plane")))
            .collect();
        convolution_calls += smoothed.len();
        timings.convolutions_ms += ms_since(t);

        let t = Instant::now();
        let ck = &c[kk];
        for (acc, v) in numerator.iter_mut().zip(&smoothed[..n]) {
            accumulate(acc, ck, v.as_slice(), CHUNK);
        }
        accumulate(&mut denominator, ck, smoothed[n].as_slice(), CHUNK);
        timings.combine_ms += ms_since(t);
    }

    let t = Instant::now();
    let mut out = vec![0.0; pixels * n];
    for (ch, num) in numerator.iter().enumerate() {
        out[ch * pixels..(ch + 1) * pixels]
            .par_chunks_mut(CHUNK)
            .zip(num.par_chunks(CHUNK))
            .zip(denominator.par_chunks(CHUNK))
            .for_each(|((o, nu), de)| {
                for ((o, nu), de) in o.iter_mut().zip(nu).zip(de) {
                    *o = nu / de;
                }
            });
    }
    let flagged: Vec<usize> = denominator
        .iter()
        .enumerate()
        .filter(|(_, d)| d.abs() < DENOMINATOR_FLOOR || !d.is_finite())
        .map(|(i, _)| i)
        .collect();
    if !flagged.is_empty() {
        log::warn!("{} pixels fell back to exact evaluation", flagged.len());
        let oracle = BruteForce::new(req);
        let mut value = vec![0.0; n];
        for &i in &flagged {
            oracle.pixel(i % w, i / w, &mut value);
            for (ch, v) in value.iter().enumerate() {
                out[ch * pixels + i] = *v;
            }
        }
    }
    timings.combine_ms += ms_since(t);
    timings.total_ms = ms_since(total);

    Ok(FilterReport {
        output: MultiChannelImage::from_vec(w, h, n, req.input.range(), out)?,
        mode,
        timings,
        convolution_calls,
        fallback_pixels: flagged.len(),
        model: Some(model),
    })
}

/// `acc += coeff * values`, chunked so each element has one writer.
fn accumulate(acc: &mut [f64], coeff: &[f64], values: &[f64], chunk: usize) {
    acc.par_chunks_mut(chunk)
        .zip(coeff.par_chunks(chunk))
        .zip(values.par_chunks(chunk))
        .for_each(|((a, c), v)| {
            for ((a, c), v) in a.iter_mut().zip(c).zip(v) {
                *a += c * v;
            }
        });
}

/// Outcome of checking the clustering error bound on the hard variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    /// `sum_i |g_hat(i) - g(i)|^2` in native intensity units.
    pub lhs: f64,
    /// `C L^2 n |W|^2 E_K`.
    pub rhs: f64,
    pub holds: bool,
    pub constant: f64,
    pub lipschitz: f64,
    pub window_size: usize,
    pub clustering_error: f64,
}

/// Checks `sum_i |g_hat(i) - g(i)|^2 <= C L^2 n |W|^2 E_K` for a hard-variant
/// output `hard_output` against the brute-force `reference`, with
/// `C = 2 sqrt(R) / (w(0) phi(0))`.
pub fn theorem1_bound(
    req: &FilterRequest,
    model: &ClusterModel,
    hard_output: &MultiChannelImage,
    reference: Option<&MultiChannelImage>,
) -> Result<BoundCheck> {
    let reference = reference.ok_or(Error::MissingReference)?;
    if !hard_output.same_domain(reference) || hard_output.channels() != reference.channels() {
        return Err(Error::DomainMismatch {
            input_width: hard_output.width(),
            input_height: hard_output.height(),
            guide_width: reference.width(),
            guide_height: reference.height(),
        });
    }
    let lhs: f64 = hard_output
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let center_weight = req.spatial.weight(0, 0)? * req.range.eval_unchecked(&vec![0.0; req.range.dim()]);
    let constant = 2.0 * req.input.range().sqrt() / center_weight;
    let lipschitz = req.range.lipschitz_constant();
    let window_size = req.spatial.window_size();
    let n = req.input.channels() as f64;
    let e_k = model.error();
    let rhs = constant * lipschitz * lipschitz * n * (window_size as f64).powi(2) * e_k;
    Ok(BoundCheck {
        lhs,
        rhs,
        holds: lhs <= rhs,
        constant,
        lipschitz,
        window_size,
        clustering_error: e_k,
    })
}
