//! MSE and PSNR on range-normalized intensities.
//!
//! MSE is the per-pixel squared channel norm averaged over pixels, so an
//! n-channel image's MSE is the sum (not the mean) of its per-channel MSEs.

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::convolve::Plane;
use crate::error::{Error, Result};
use crate::image::MultiChannelImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub mse: f64,
    /// `+inf` when the images are identical.
    pub psnr_db: f64,
    pub pixels: usize,
    pub channels: usize,
}

/// `psnr_db` serializes as the string `"inf"` when infinite.
impl Serialize for QualityReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("QualityReport", 4)?;
        s.serialize_field("mse", &self.mse)?;
        if self.psnr_db.is_infinite() {
            s.serialize_field("psnr_db", "inf")?;
        } else {
            s.serialize_field("psnr_db", &self.psnr_db)?;
        }
        s.serialize_field("pixels", &self.pixels)?;
        s.serialize_field("channels", &self.channels)?;
        s.end()
    }
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse > 0.0 {
        -10.0 * mse.log10()
    } else {
        f64::INFINITY
    }
}

/// Quality of `a` against `b`, both divided by `range` before differencing.
pub fn mse_psnr(a: &MultiChannelImage, b: &MultiChannelImage, range: f64) -> Result<QualityReport> {
    if !a.same_domain(b) {
        return Err(Error::DomainMismatch {
            input_width: a.width(),
            input_height: a.height(),
            guide_width: b.width(),
            guide_height: b.height(),
        });
    }
    if a.channels() != b.channels() {
        return Err(Error::DimensionMismatch {
            what: "channel count",
            expected: a.channels(),
            got: b.channels(),
        });
    }
    if !(range.is_finite() && range > 0.0) {
        return Err(Error::invalid("range", format!("{range} is not positive")));
    }
    let pixels = a.pixel_count();
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| {
            let d = (x - y) / range;
            d * d
        })
        .sum();
    let mse = sum / pixels as f64;
    Ok(QualityReport {
        mse,
        psnr_db: psnr_from_mse(mse),
        pixels,
        channels: a.channels(),
    })
}

/// PSNR between two single planes with the given peak.
pub fn psnr_planes(a: &Plane, b: &Plane, range: f64) -> f64 {
    let n = a.as_slice().len() as f64;
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| ((x - y) / range).powi(2))
        .sum();
    psnr_from_mse(sum / n)
}
