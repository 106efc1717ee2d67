//! Reproducible synthetic data: additive Gaussian noise and test images.
//!
//! Every generator uses ChaCha8 seeded through `seed_from_u64`, so the same
//! seed gives the same samples on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::MultiChannelImage;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Adds i.i.d. `N(0, sigma^2)` noise (native units) to every sample. Values
/// are not clipped to `[0, R]`.
pub fn add_gaussian_noise(image: &MultiChannelImage, sigma: f64, seed: u64) -> Result<MultiChannelImage> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::invalid("sigma", format!("{sigma} is not a non-negative number")));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid("sigma", e.to_string()))?;
    let mut rng = rng(seed);
    let mut out = image.clone();
    for v in out.as_mut_slice() {
        *v += normal.sample(&mut rng);
    }
    Ok(out)
}

/// Uniform samples in `[0, range)`.
pub fn uniform_image(width: usize, height: usize, channels: usize, range: f64, seed: u64) -> Result<MultiChannelImage> {
    let mut rng = rng(seed);
    let data = (0..width * height * channels)
        .map(|_| rng.gen_range(0.0..range))
        .collect();
    MultiChannelImage::from_vec(width, height, channels, range, data)
}

/// An image whose pixels take only the given vectors, laid out as random
/// rectangles over a coarse grid. Every value appears at least once when the
/// image has at least as many pixels as values.
pub fn piecewise_image(
    width: usize,
    height: usize,
    values: &[Vec<f64>],
    range: f64,
    seed: u64,
) -> Result<MultiChannelImage> {
    let n = values.first().map(Vec::len).unwrap_or(0);
    if values.iter().any(|v| v.len() != n) || n == 0 {
        return Err(Error::invalid("values", "need equal-length, non-empty vectors"));
    }
    let mut rng = rng(seed);
    let mut label = vec![0usize; width * height];
    for _ in 0..4 * values.len() {
        let (x0, y0) = (rng.gen_range(0..width), rng.gen_range(0..height));
        let (bw, bh) = (rng.gen_range(1..=width.div_ceil(2)), rng.gen_range(1..=height.div_ceil(2)));
        let v = rng.gen_range(0..values.len());
        for y in y0..(y0 + bh).min(height) {
            for x in x0..(x0 + bw).min(width) {
                label[y * width + x] = v;
            }
        }
    }
    // guarantee every value is present
    for (k, slot) in (0..values.len()).zip((0..label.len()).step_by((label.len() / values.len()).max(1))) {
        label[slot] = k;
    }
    let samples: Vec<f64> = label.iter().flat_map(|&k| values[k].iter().copied()).collect();
    MultiChannelImage::from_interleaved(width, height, n, range, &samples)
}

/// Resizes by mirror-tiling: the image is reflected about its edges as often
/// as needed and the top-left `width x height` region is kept. Doubling one
/// dimension of an image therefore doubles its multiset of pixel values.
pub fn tile_mirrored(image: &MultiChannelImage, width: usize, height: usize) -> Result<MultiChannelImage> {
    let (w, h) = (image.width(), image.height());
    let fold = |i: usize, n: usize| {
        let period = i % (2 * n);
        if period < n {
            period
        } else {
            2 * n - 1 - period
        }
    };
    let mut out = MultiChannelImage::zeros(width, height, image.channels(), image.range())?;
    for c in 0..image.channels() {
        let src = image.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..height {
            let sy = fold(y, h);
            for x in 0..width {
                dst[y * width + x] = src[sy * w + fold(x, w)];
            }
        }
    }
    Ok(out)
}
