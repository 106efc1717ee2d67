//! Planar multi-channel raster used for inputs, guides and outputs.

use crate::convolve::Plane;
use crate::error::{Error, Result};

/// A `channels x height x width` raster stored plane after plane, row-major
/// within each plane. `range` is the nominal intensity range `R`: data is
/// expected in `[0, R]` for filter inputs, but guides (patch or PCA
/// coordinates) may take any finite value.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelImage {
    width: usize,
    height: usize,
    channels: usize,
    range: f64,
    data: Vec<f64>,
}

impl MultiChannelImage {
    pub fn zeros(width: usize, height: usize, channels: usize, range: f64) -> Result<Self> {
        Self::from_vec(
            width,
            height,
            channels,
            range,
            vec![0.0; width * height * channels],
        )
    }

    /// Wraps planar data (`data[c * h * w + y * w + x]`).
    pub fn from_vec(
        width: usize,
        height: usize,
        channels: usize,
        range: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("size", format!("{width}x{height} is empty")));
        }
        if channels == 0 {
            return Err(Error::invalid("channels", "must be at least 1"));
        }
        if !(range.is_finite() && range > 0.0) {
            return Err(Error::invalid("range", format!("{range} is not positive")));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "image data length",
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            range,
            data,
        })
    }

    /// Builds an image from equally sized planes.
    pub fn from_planes(planes: &[Plane], range: f64) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::invalid("channels", "no planes given"))?;
        let (w, h) = (first.width(), first.height());
        let mut data = Vec::with_capacity(w * h * planes.len());
        for p in planes {
            if p.width() != w || p.height() != h {
                return Err(Error::DomainMismatch {
                    input_width: w,
                    input_height: h,
                    guide_width: p.width(),
                    guide_height: p.height(),
                });
            }
            data.extend_from_slice(p.as_slice());
        }
        Self::from_vec(w, h, planes.len(), range, data)
    }

    /// Builds an image from interleaved (pixel-major) samples.
    pub fn from_interleaved(
        width: usize,
        height: usize,
        channels: usize,
        range: f64,
        samples: &[f64],
    ) -> Result<Self> {
        let n = width * height;
        if samples.len() != n * channels {
            return Err(Error::DimensionMismatch {
                what: "interleaved sample count",
                expected: n * channels,
                got: samples.len(),
            });
        }
        let mut data = vec![0.0; n * channels];
        for i in 0..n {
            for c in 0..channels {
                data[c * n + i] = samples[i * channels + c];
            }
        }
        Self::from_vec(width, height, channels, range, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn with_range(mut self, range: f64) -> Result<Self> {
        if !(range.is_finite() && range > 0.0) {
            return Err(Error::invalid("range", format!("{range} is not positive")));
        }
        self.range = range;
        Ok(self)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.pixel_count();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixel_count();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn channel_plane(&self, c: usize) -> Plane {
        Plane::from_vec(self.width, self.height, self.channel(c).to_vec())
            .expect("channel has image dimensions")
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[c * self.pixel_count() + y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f64) {
        let n = self.pixel_count();
        self.data[c * n + y * self.width + x] = v;
    }

    /// Copies the vector at linear pixel index `i` into `out`.
    #[inline]
    pub fn pixel_into(&self, i: usize, out: &mut [f64]) {
        let n = self.pixel_count();
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            *o = self.data[c * n + i];
        }
    }

    pub fn pixel(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.channels];
        self.pixel_into(i, &mut v);
        v
    }

    /// Pixel-major copy of the data, `channels` values per pixel.
    pub fn to_interleaved(&self) -> Vec<f64> {
        let n = self.pixel_count();
        let mut out = vec![0.0; n * self.channels];
        for c in 0..self.channels {
            let plane = self.channel(c);
            for (i, &v) in plane.iter().enumerate() {
                out[i * self.channels + c] = v;
            }
        }
        out
    }

    pub fn same_domain(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Stacks the channels of `self` followed by those of `other`.
    pub fn append_channels(&self, other: &Self) -> Result<Self> {
        if !self.same_domain(other) {
            return Err(Error::DomainMismatch {
                input_width: self.width,
                input_height: self.height,
                guide_width: other.width,
                guide_height: other.height,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self::from_vec(
            self.width,
            self.height,
            self.channels + other.channels,
            self.range,
            data,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
