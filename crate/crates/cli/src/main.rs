//! `hdfilter`: fast bilateral and non-local means filtering from the command
//! line.

mod commands;
mod params;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use params::{SigmaSpec, SizeSpec};

#[derive(Parser, Debug)]
#[command(name = "hdfilter", version, about = "Fast high-dimensional bilateral and non-local means filtering")]
struct Cli {
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true, env = "HDFILTER_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// (Joint) bilateral filter of an image.
    Bilateral(BilateralArgs),
    /// Non-local means denoising with a PCA-reduced patch guide.
    Nlm(NlmArgs),
    /// MSE and PSNR between two images.
    Compare(CompareArgs),
    /// Cluster a guide and report centers, sizes and clustering error.
    ClusterInfo(ClusterInfoArgs),
    /// Time the fast filter over sweeps of size, sigma and cluster count.
    Bench(BenchArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeArg {
    Optimized,
    Hard,
    BruteForce,
    ExactLs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpatialArg {
    Gaussian,
    Box,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackendArg {
    Recursive,
    Direct,
}

#[derive(Args, Debug)]
pub struct BilateralArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Guide image for joint filtering; defaults to the input.
    #[arg(long)]
    guide: Option<PathBuf>,
    /// Spatial Gaussian width (pixels); the window half-width is ceil(3 sigma).
    #[arg(long, required_if_eq("spatial", "gaussian"))]
    sigma_s: Option<f64>,
    /// Range width in intensity units: `40`, per-channel `40,30,20`, or a
    /// fraction of the range such as `0.3R`.
    #[arg(long)]
    sigma_r: SigmaSpec,
    #[arg(long)]
    clusters: usize,
    #[arg(long, value_enum, default_value = "optimized")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "gaussian")]
    spatial: SpatialArg,
    /// Box half-width (required with `--spatial box`).
    #[arg(long, required_if_eq("spatial", "box"))]
    half_width: Option<usize>,
    #[arg(long, value_enum, default_value = "recursive")]
    gaussian_backend: BackendArg,
    /// Also run the brute-force filter and write a JSON report here (`-` for stdout).
    #[arg(long)]
    metrics: Option<String>,
}

#[derive(Args, Debug)]
pub struct NlmArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Add Gaussian noise with this standard deviation, as a fraction of the range.
    #[arg(long)]
    add_noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to save the synthesized noisy image.
    #[arg(long, requires = "add_noise")]
    noisy_out: Option<PathBuf>,
    /// Odd patch side m.
    #[arg(long, default_value_t = 3)]
    patch: usize,
    /// Search window half-width S.
    #[arg(long, default_value_t = 10)]
    search: usize,
    /// PCA dimension of the patch guide (omit to keep full patches).
    #[arg(long)]
    pca_dim: Option<usize>,
    #[arg(long)]
    clusters: usize,
    #[arg(long)]
    sigma_r: SigmaSpec,
    #[arg(long, value_enum, default_value = "optimized")]
    mode: ModeArg,
    /// Also compare against the brute-force filter on the same guide.
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    metrics: Option<String>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Test image.
    a: PathBuf,
    /// Reference image.
    b: PathBuf,
    /// Peak value; defaults to the reference image's range.
    #[arg(long)]
    range: Option<f64>,
    #[arg(long, default_value = "-")]
    metrics: String,
}

#[derive(Args, Debug)]
pub struct ClusterInfoArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    clusters: usize,
    /// Cluster patches of this odd side instead of pixels.
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long, requires = "patch")]
    pca_dim: Option<usize>,
    /// Include cluster centers in the report.
    #[arg(long)]
    centers: bool,
    #[arg(long, default_value = "-")]
    metrics: String,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Source image, mirror-tiled to each size.
    #[arg(long = "in")]
    input: PathBuf,
    /// Sizes as `WxH` or `N` for square, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "256")]
    sizes: Vec<SizeSpec>,
    #[arg(long, value_delimiter = ',', default_value = "5")]
    sigmas_s: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "16")]
    clusters: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "optimized")]
    modes: Vec<ModeArg>,
    /// Range width, as for `bilateral`.
    #[arg(long, default_value = "40")]
    sigma_r: SigmaSpec,
    #[arg(long, value_enum, default_value = "gaussian")]
    spatial: SpatialArg,
    #[arg(long, value_enum, default_value = "recursive")]
    gaussian_backend: BackendArg,
    /// Runs per configuration; the fastest is reported.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Compute PSNR against brute force for images up to this many pixels.
    #[arg(long, default_value_t = 65536)]
    oracle_max_pixels: usize,
    /// CSV destination (`-` for stdout).
    #[arg(long, default_value = "-")]
    out: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(0) => Err(anyhow::anyhow!("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(anyhow::Error::from)
            .and_then(|pool| pool.install(|| commands::dispatch(cli.command))),
        None => commands::dispatch(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
