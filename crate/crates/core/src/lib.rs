//! Fast high-dimensional bilateral and non-local means filtering.
//!
//! The range kernel is approximated by a small set of shifted copies of
//! itself, centered on cluster representatives of the guide. The filter then
//! reduces to a fixed number of spatial convolutions whose count does not
//! depend on the guide dimension.

pub mod approx;
pub mod clustering;
pub mod convolve;
pub mod error;
pub mod image;
pub mod imageio;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod nlm;
pub mod pipeline;
pub mod synth;

pub use clustering::{bisecting_kmeans, clustering_error, ClusterModel};
pub use convolve::{GaussianBackend, Plane};
pub use error::{Error, Result};
pub use image::MultiChannelImage;
pub use kernels::{RangeKernel, SpatialKernel};
pub use nlm::{nlm_denoise, PatchGuideSpec, PcaBasis};
pub use metrics::{mse_psnr, QualityReport};
pub use pipeline::{
    filter_brute_force, filter_fast, filter_fast_hard, run, theorem1_bound, FilterMode,
    FilterReport, FilterRequest,
};
