use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use hdfilter::imageio::{self, ImageFormat};
use hdfilter::nlm::{build_nlm_guide, PatchGuideSpec};
use hdfilter::pipeline::{filter_brute_force, run, theorem1_bound, FilterMode, FilterRequest};
use hdfilter::synth::{add_gaussian_noise, tile_mirrored};
use hdfilter::{bisecting_kmeans, mse_psnr, GaussianBackend, MultiChannelImage, SpatialKernel};

use crate::{
    BackendArg, BenchArgs, BilateralArgs, ClusterInfoArgs, Command, CompareArgs, ModeArg, NlmArgs,
    SpatialArg,
};

const SCHEMA: u32 = 1;

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Bilateral(a) => bilateral(a),
        Command::Nlm(a) => nlm(a),
        Command::Compare(a) => compare(a),
        Command::ClusterInfo(a) => cluster_info(a),
        Command::Bench(a) => bench(a),
    }
}

impl From<ModeArg> for FilterMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Optimized => FilterMode::FastOptimized,
            ModeArg::Hard => FilterMode::FastHard,
            ModeArg::BruteForce => FilterMode::BruteForce,
            ModeArg::ExactLs => FilterMode::ExactLsReference,
        }
    }
}

impl From<BackendArg> for GaussianBackend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Recursive => GaussianBackend::Recursive,
            BackendArg::Direct => GaussianBackend::Direct,
        }
    }
}

fn mode_name(m: ModeArg) -> &'static str {
    match m {
        ModeArg::Optimized => "optimized",
        ModeArg::Hard => "hard",
        ModeArg::BruteForce => "brute-force",
        ModeArg::ExactLs => "exact-ls",
    }
}

fn load(path: &Path) -> Result<MultiChannelImage> {
    Ok(imageio::load(path)?)
}

/// Fails early when `path` cannot hold an image with `channels` channels.
fn check_output(path: &Path, channels: usize) -> Result<()> {
    let format = ImageFormat::from_path(path)?;
    if !format.supports(channels) {
        bail!(
            "{}: {} output cannot hold {channels} channels",
            path.display(),
            format.name()
        );
    }
    Ok(())
}

fn spatial_kernel(spatial: SpatialArg, sigma_s: Option<f64>, half_width: Option<usize>) -> Result<SpatialKernel> {
    match spatial {
        SpatialArg::Gaussian => {
            let sigma = sigma_s.context("--sigma-s is required for a Gaussian spatial kernel")?;
            Ok(SpatialKernel::gaussian(sigma)?)
        }
        SpatialArg::Box => {
            let s = half_width.context("--half-width is required for a box spatial kernel")?;
            Ok(SpatialKernel::boxed(s))
        }
    }
}

fn spatial_json(kernel: &SpatialKernel) -> Value {
    match *kernel {
        SpatialKernel::Gaussian { sigma, half_width } => {
            json!({ "kind": "gaussian", "sigma": sigma, "half_width": half_width })
        }
        SpatialKernel::Box { half_width } => json!({ "kind": "box", "half_width": half_width }),
    }
}

/// Writes JSON to stdout for `-`, otherwise atomically to the file.
fn emit_json(target: &str, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit_text(target, text.as_bytes())
}

fn emit_text(target: &str, bytes: &[u8]) -> Result<()> {
    if target == "-" {
        let mut out = std::io::stdout().lock();
        out.write_all(bytes)?;
        out.flush()?;
    } else {
        imageio::write_atomic(Path::new(target), bytes)?;
    }
    Ok(())
}

fn bilateral(a: BilateralArgs) -> Result<()> {
    let input = load(&a.input)?;
    let guide = match &a.guide {
        Some(p) => load(p)?,
        None => input.clone(),
    };
    check_output(&a.out, input.channels())?;
    let spatial = spatial_kernel(a.spatial, a.sigma_s, a.half_width)?;
    let range = a.sigma_r.kernel(guide.range(), guide.channels())?;
    let sigmas = a.sigma_r.resolve(guide.range(), guide.channels())?;
    let req = FilterRequest::new(&input, &guide, spatial, range, a.clusters)
        .mode(a.mode.into())
        .backend(a.gaussian_backend.into());
    req.validate()?;

    let report = run(&req)?;
    let metrics = match &a.metrics {
        None => None,
        Some(target) => {
            let start = Instant::now();
            let oracle = match a.mode {
                ModeArg::BruteForce => report.output.clone(),
                _ => filter_brute_force(&req)?,
            };
            let brute_force_ms = start.elapsed().as_secs_f64() * 1e3;
            let quality = report.quality_against(&oracle)?;
            let bound = match (a.mode, &report.model) {
                (ModeArg::Hard, Some(model)) => Some(theorem1_bound(&req, model, &report.output, Some(&oracle))?),
                _ => None,
            };
            let value = json!({
                "schema": SCHEMA,
                "command": "bilateral",
                "input": a.input.display().to_string(),
                "width": input.width(),
                "height": input.height(),
                "channels": input.channels(),
                "guide_channels": guide.channels(),
                "range": input.range(),
                "mode": report.mode,
                "clusters": a.clusters,
                "sigma_r": sigmas,
                "spatial": spatial_json(&spatial),
                "clustering_error": report.model.as_ref().map(|m| m.error()),
                "convolution_calls": report.convolution_calls,
                "fallback_pixels": report.fallback_pixels,
                "timings": report.timings,
                "brute_force_ms": brute_force_ms,
                "quality": quality,
                "bound": bound,
            });
            Some((target.clone(), value))
        }
    };
    imageio::save(&report.output, &a.out)?;
    if let Some((target, value)) = metrics {
        emit_json(&target, &value)?;
    }
    Ok(())
}

fn nlm(a: NlmArgs) -> Result<()> {
    let input = load(&a.input)?;
    check_output(&a.out, input.channels())?;
    if let Some(p) = &a.noisy_out {
        check_output(p, input.channels())?;
    }
    let spec = PatchGuideSpec {
        patch_side: a.patch,
        pca_dim: a.pca_dim,
        search_half_width: a.search,
    };
    spec.validate(input.channels())?;
    let (clean, noisy) = match a.add_noise {
        Some(f) => {
            if !(f.is_finite() && f >= 0.0) {
                bail!("--add-noise must be a non-negative fraction of the range");
            }
            let noisy = add_gaussian_noise(&input, f * input.range(), a.seed)?;
            (Some(&input), noisy)
        }
        None => (None, input.clone()),
    };

    let guide_start = Instant::now();
    let (guide, basis) = build_nlm_guide(&noisy, &spec)?;
    let guide_ms = guide_start.elapsed().as_secs_f64() * 1e3;
    let range = a.sigma_r.kernel(noisy.range(), guide.channels())?;
    let sigmas = a.sigma_r.resolve(noisy.range(), guide.channels())?;
    let req = FilterRequest::new(
        &noisy,
        &guide,
        SpatialKernel::boxed(spec.search_half_width),
        range,
        a.clusters,
    )
    .mode(a.mode.into());
    let report = run(&req)?;

    let metrics = match &a.metrics {
        None => None,
        Some(target) => {
            let (noisy_q, denoised_q) = match clean {
                Some(c) => (
                    Some(mse_psnr(&noisy, c, c.range())?),
                    Some(mse_psnr(&report.output, c, c.range())?),
                ),
                None => (None, None),
            };
            let oracle_q = if a.oracle {
                Some(report.quality_against(&filter_brute_force(&req)?)?)
            } else {
                None
            };
            let value = json!({
                "schema": SCHEMA,
                "command": "nlm",
                "input": a.input.display().to_string(),
                "width": input.width(),
                "height": input.height(),
                "channels": input.channels(),
                "range": input.range(),
                "noise_sigma": a.add_noise.map(|f| f * input.range()),
                "seed": a.seed,
                "patch": spec.patch_side,
                "search": spec.search_half_width,
                "guide_channels": guide.channels(),
                "pca_explained_energy": basis.as_ref().map(|b| b.explained_energy),
                "mode": report.mode,
                "clusters": a.clusters,
                "sigma_r": sigmas,
                "clustering_error": report.model.as_ref().map(|m| m.error()),
                "convolution_calls": report.convolution_calls,
                "fallback_pixels": report.fallback_pixels,
                "guide_ms": guide_ms,
                "timings": report.timings,
                "noisy_quality": noisy_q,
                "denoised_quality": denoised_q,
                "improvement_db": match (noisy_q, denoised_q) {
                    (Some(n), Some(d)) => Some(d.psnr_db - n.psnr_db),
                    _ => None,
                },
                "quality": oracle_q,
            });
            Some((target.clone(), value))
        }
    };
    if let Some(p) = &a.noisy_out {
        imageio::save(&noisy, p)?;
    }
    imageio::save(&report.output, &a.out)?;
    if let Some((target, value)) = metrics {
        emit_json(&target, &value)?;
    }
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    let test = load(&a.a)?;
    let reference = load(&a.b)?;
    let range = a.range.unwrap_or(reference.range());
    let quality = mse_psnr(&test, &reference, range)?;
    emit_json(
        &a.metrics,
        &json!({
            "schema": SCHEMA,
            "command": "compare",
            "a": a.a.display().to_string(),
            "b": a.b.display().to_string(),
            "range": range,
            "quality": quality,
        }),
    )
}

fn cluster_info(a: ClusterInfoArgs) -> Result<()> {
    let input = load(&a.input)?;
    let guide = match a.patch {
        Some(m) => {
            let spec = PatchGuideSpec {
                patch_side: m,
                pca_dim: a.pca_dim,
                search_half_width: 1,
            };
            build_nlm_guide(&input, &spec)?.0
        }
        None => input,
    };
    let start = Instant::now();
    let model = bisecting_kmeans(&guide, a.clusters)?;
    let cluster_ms = start.elapsed().as_secs_f64() * 1e3;
    let centers: Option<Vec<&[f64]>> = a.centers.then(|| (0..model.k()).map(|k| model.center(k)).collect());
    emit_json(
        &a.metrics,
        &json!({
            "schema": SCHEMA,
            "command": "cluster-info",
            "input": a.input.display().to_string(),
            "pixels": guide.pixel_count(),
            "dim": model.dim(),
            "clusters": model.k(),
            "clustering_error": model.error(),
            "counts": model.counts(),
            "centers": centers,
            "cluster_ms": cluster_ms,
        }),
    )
}

#[derive(Serialize)]
struct BenchRow {
    width: usize,
    height: usize,
    pixels: usize,
    sigma_s: f64,
    half_width: usize,
    clusters: usize,
    mode: &'static str,
    cluster_ms: f64,
    coefficients_ms: f64,
    intermediates_ms: f64,
    convolutions_ms: f64,
    combine_ms: f64,
    total_ms: f64,
    convolution_calls: usize,
    psnr_db: Option<f64>,
}

fn bench(a: BenchArgs) -> Result<()> {
    if a.repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    let source = load(&a.input)?;
    let range = a.sigma_r.kernel(source.range(), source.channels())?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    for size in &a.sizes {
        let image = tile_mirrored(&source, size.width, size.height)?;
        for &sigma_s in &a.sigmas_s {
            let spatial = match a.spatial {
                SpatialArg::Gaussian => SpatialKernel::gaussian(sigma_s)?,
                SpatialArg::Box => SpatialKernel::boxed(sigma_s.round().max(0.0) as usize),
            };
            let oracle = if image.pixel_count() <= a.oracle_max_pixels {
                let req = FilterRequest::new(&image, &image, spatial, range.clone(), 1);
                Some(filter_brute_force(&req)?)
            } else {
                None
            };
            for &k in &a.clusters {
                for &mode in &a.modes {
                    let req = FilterRequest::new(&image, &image, spatial, range.clone(), k)
                        .mode(mode.into())
                        .backend(a.gaussian_backend.into());
                    let mut best = None;
                    for _ in 0..a.repeats {
                        let report = run(&req)?;
                        let better = best
                            .as_ref()
                            .map_or(true, |b: &hdfilter::FilterReport| report.timings.total_ms < b.timings.total_ms);
                        if better {
                            best = Some(report);
                        }
                    }
                    let report = best.expect("at least one repeat");
                    let psnr_db = match &oracle {
                        Some(o) => Some(report.quality_against(o)?.psnr_db),
                        None => None,
                    };
                    let t = report.timings;
                    writer.serialize(BenchRow {
                        width: image.width(),
                        height: image.height(),
                        pixels: image.pixel_count(),
                        sigma_s,
                        half_width: spatial.half_width(),
                        clusters: k,
                        mode: mode_name(mode),
                        cluster_ms: t.cluster_ms,
                        coefficients_ms: t.coefficients_ms,
                        intermediates_ms: t.intermediates_ms,
                        convolutions_ms: t.convolutions_ms,
                        combine_ms: t.combine_ms,
                        total_ms: t.total_ms,
                        convolution_calls: report.convolution_calls,
                        psnr_db,
                    })?;
                }
            }
        }
    }
    let bytes = writer.into_inner().context("flushing CSV")?;
    emit_text(&a.out, &bytes)
}
