//! Reading and writing images: 8-bit PNG, binary PGM/PPM, and the
//! `HDFCUBE1` float cube for data with many channels.
//!
//! Cube layout, all little-endian: the 8 bytes `HDFCUBE1`, then width,
//! height and channels as `u32`, the range `R` as `f64`, then
//! `channels * height * width` `f32` samples, plane by plane, rows top to
//! bottom.
//!
//! 8-bit formats load with `R = 255`. On save, samples are clamped to
//! `[0, R]` and quantized by `round(v * 255 / R)`. Files are written to a
//! temporary sibling and renamed into place, so a failed save never leaves a
//! partial file behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::image::MultiChannelImage;

pub const CUBE_MAGIC: &[u8; 8] = b"HDFCUBE1";
const CUBE_HEADER_LEN: usize = 8 + 3 * 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Pgm,
    Ppm,
    Cube,
}

impl ImageFormat {
    /// Output format chosen by file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("png") => Ok(ImageFormat::Png),
            Some("pgm") => Ok(ImageFormat::Pgm),
            Some("ppm") => Ok(ImageFormat::Ppm),
            Some("cube") | Some("hdfcube") => Ok(ImageFormat::Cube),
            _ => Err(Error::UnknownFormat {
                path: path.to_path_buf(),
            }),
        }
    }

    /// Input format recognized from the leading bytes.
    pub fn sniff(bytes: &[u8]) -> Option<Self> {
        if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
            Some(ImageFormat::Png)
        } else if bytes.starts_with(CUBE_MAGIC) {
            Some(ImageFormat::Cube)
        } else if bytes.starts_with(b"P5") {
            Some(ImageFormat::Pgm)
        } else if bytes.starts_with(b"P6") {
            Some(ImageFormat::Ppm)
        } else {
            None
        }
    }

    /// Whether an image with this many channels can be written.
    pub fn supports(self, channels: usize) -> bool {
        match self {
            ImageFormat::Png => channels == 1 || channels == 3,
            ImageFormat::Pgm => channels == 1,
            ImageFormat::Ppm => channels == 3,
            ImageFormat::Cube => channels > 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ImageFormat::Png => "PNG",
            ImageFormat::Pgm => "PGM",
            ImageFormat::Ppm => "PPM",
            ImageFormat::Cube => "HDFCUBE1",
        }
    }
}

pub fn load(path: impl AsRef<Path>) -> Result<MultiChannelImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes, path)
}

/// Decodes an in-memory file; `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<MultiChannelImage> {
    match ImageFormat::sniff(bytes) {
        Some(ImageFormat::Png) => decode_png(bytes, path),
        Some(ImageFormat::Cube) => decode_cube(bytes, path),
        Some(fmt @ (ImageFormat::Pgm | ImageFormat::Ppm)) => decode_pnm(bytes, path, fmt),
        None => Err(Error::UnknownFormat {
            path: path.to_path_buf(),
        }),
    }
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<MultiChannelImage> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|source| {
        Error::Decode {
            path: path.to_path_buf(),
            source,
        }
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, samples): (usize, Vec<u8>) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw()),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw()),
        DynamicImage::ImageLumaA8(b) => {
            log::warn!("{}: dropping alpha channel", path.display());
            (1, b.into_raw().chunks_exact(2).map(|p| p[0]).collect())
        }
        DynamicImage::ImageRgba8(b) => {
            log::warn!("{}: dropping alpha channel", path.display());
            (3, b.into_raw().chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect())
        }
        other => {
            return Err(Error::BadHeader {
                path: path.to_path_buf(),
                field: "color type",
                reason: format!("{:?} is not 8-bit gray, RGB or RGBA", other.color()),
            })
        }
    };
    let floats: Vec<f64> = samples.into_iter().map(f64::from).collect();
    MultiChannelImage::from_interleaved(w, h, channels, 255.0, &floats)
}

/// Splits the ASCII header of a binary PNM into its four fields, skipping
/// `#` comments, and returns them with the offset of the raster.
fn pnm_header(bytes: &[u8], path: &Path) -> Result<([usize; 3], usize)> {
    const FIELDS: [&str; 3] = ["width", "height", "maxval"];
    let mut pos = 2;
    let mut values = [0usize; 3];
    for (slot, field) in values.iter_mut().zip(FIELDS) {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::BadHeader {
                path: path.to_path_buf(),
                field,
                reason: "expected a decimal number".into(),
            });
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *slot = text.parse().map_err(|e: std::num::ParseIntError| Error::BadHeader {
            path: path.to_path_buf(),
            field,
            reason: e.to_string(),
        })?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::BadHeader {
            path: path.to_path_buf(),
            field: "maxval",
            reason: "missing separator before raster".into(),
        });
    }
    Ok((values, pos + 1))
}

fn decode_pnm(bytes: &[u8], path: &Path, fmt: ImageFormat) -> Result<MultiChannelImage> {
    let ([w, h, maxval], offset) = pnm_header(bytes, path)?;
    if w == 0 {
        return Err(Error::ZeroDimension { path: path.to_path_buf(), field: "width" });
    }
    if h == 0 {
        return Err(Error::ZeroDimension { path: path.to_path_buf(), field: "height" });
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::BadHeader {
            path: path.to_path_buf(),
            field: "maxval",
            reason: format!("{maxval} is outside 1..=255"),
        });
    }
    let channels = if fmt == ImageFormat::Ppm { 3 } else { 1 };
    let expected = w * h * channels;
    let raster = &bytes[offset..];
    if raster.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            field: "raster",
            expected,
            found: raster.len(),
        });
    }
    let scale = 255.0 / maxval as f64;
    let floats: Vec<f64> = raster[..expected].iter().map(|&b| b as f64 * scale).collect();
    MultiChannelImage::from_interleaved(w, h, channels, 255.0, &floats)
}

fn decode_cube(bytes: &[u8], path: &Path) -> Result<MultiChannelImage> {
    if bytes.len() < CUBE_HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            field: "header",
            expected: CUBE_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes")) as usize;
    let width = u32_at(8);
    let height = u32_at(12);
    let channels = u32_at(16);
    let range = f64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes"));
    for (value, field) in [(width, "width"), (height, "height"), (channels, "channels")] {
        if value == 0 {
            return Err(Error::ZeroDimension {
                path: path.to_path_buf(),
                field,
            });
        }
    }
    if !(range.is_finite() && range > 0.0) {
        return Err(Error::BadHeader {
            path: path.to_path_buf(),
            field: "range",
            reason: format!("{range} is not a positive finite number"),
        });
    }
    let expected = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::BadHeader {
            path: path.to_path_buf(),
            field: "channels",
            reason: "payload size overflows".into(),
        })?;
    let payload = &bytes[CUBE_HEADER_LEN..];
    if payload.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            field: "payload",
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::BadHeader {
            path: path.to_path_buf(),
            field: "payload",
            reason: format!("{} trailing bytes", payload.len() - expected),
        });
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    MultiChannelImage::from_vec(width, height, channels, range, data)
}

/// Encodes the image in `format` without touching the filesystem.
pub fn encode(image: &MultiChannelImage, format: ImageFormat) -> Result<Vec<u8>> {
    let channels = image.channels();
    if !format.supports(channels) {
        return Err(Error::UnsupportedChannels {
            format: format.name(),
            supported: match format {
                ImageFormat::Png => "1 or 3",
                ImageFormat::Pgm => "1",
                ImageFormat::Ppm => "3",
                ImageFormat::Cube => "1 or more",
            },
            channels,
        });
    }
    let (w, h) = (image.width(), image.height());
    match format {
        ImageFormat::Cube => {
            let mut out = Vec::with_capacity(CUBE_HEADER_LEN + image.as_slice().len() * 4);
            out.extend_from_slice(CUBE_MAGIC);
            for v in [w, h, channels] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
            out.extend_from_slice(&image.range().to_le_bytes());
            for &v in image.as_slice() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
            Ok(out)
        }
        ImageFormat::Pgm | ImageFormat::Ppm => {
            let magic = if format == ImageFormat::Pgm { "P5" } else { "P6" };
            let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
            out.extend(quantize(image));
            Ok(out)
        }
        ImageFormat::Png => {
            let mut out = Vec::new();
            let color = if channels == 1 {
                ExtendedColorType::L8
            } else {
                ExtendedColorType::Rgb8
            };
            image::codecs::png::PngEncoder::new(&mut out)
                .write_image(&quantize(image), w as u32, h as u32, color)
                .map_err(|source| Error::Decode {
                    path: PathBuf::from("<memory>"),
                    source,
                })?;
            Ok(out)
        }
    }
}

/// Interleaved 8-bit samples: clamp to `[0, R]`, then `round(v * 255 / R)`.
pub fn quantize(image: &MultiChannelImage) -> Vec<u8> {
    let r = image.range();
    image
        .to_interleaved()
        .into_iter()
        .map(|v| (v.clamp(0.0, r) * 255.0 / r).round() as u8)
        .collect()
}

/// Writes `image` in the format implied by the extension of `path`.
pub fn save(image: &MultiChannelImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(image, ImageFormat::from_path(path)?)?;
    write_atomic(path, &bytes)
}

/// Writes to a temporary file in the target directory and renames it over
/// `path` once complete.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(name: &str) -> PathBuf {
        PathBuf::from(name)
    }

    #[test]
    fn pgm_bytes_pass_through() {
        let bytes = b"P5\n2 2\n255\n\x00\x80\xff\x40";
        let img = decode(bytes, &p("a.pgm")).unwrap();
        assert_eq!(img.as_slice(), &[0.0, 128.0, 255.0, 64.0]);
        assert_eq!(img.range(), 255.0);
        assert_eq!(img.channels(), 1);
    }

    #[test]
    fn pnm_comments_and_ppm_layout() {
        let bytes = b"P6 # a comment\n# another\n2 1 255\n\x01\x02\x03\x04\x05\x06";
        let img = decode(bytes, &p("a.ppm")).unwrap();
        assert_eq!(img.channel(0), &[1.0, 4.0]);
        assert_eq!(img.channel(1), &[2.0, 5.0]);
        assert_eq!(img.channel(2), &[3.0, 6.0]);
    }

    #[test]
    fn pnm_errors_name_the_field() {
        let e = decode(b"P5\n0 2\n255\n", &p("z.pgm")).unwrap_err();
        assert!(matches!(e, Error::ZeroDimension { field: "width", .. }));
        let e = decode(b"P5\n2 2\n255\n\x00\x01", &p("t.pgm")).unwrap_err();
        assert!(matches!(e, Error::Truncated { field: "raster", expected: 4, found: 2, .. }));
        let e = decode(b"P5\n2 x\n255\n", &p("b.pgm")).unwrap_err();
        assert!(matches!(e, Error::BadHeader { field: "height", .. }));
        let e = decode(b"P5\n1 1\n65535\n\x00\x00", &p("w.pgm")).unwrap_err();
        assert!(matches!(e, Error::BadHeader { field: "maxval", .. }));
    }

    #[test]
    fn unknown_format() {
        assert!(matches!(decode(b"GIF89a....", &p("x.gif")), Err(Error::UnknownFormat { .. })));
        assert!(matches!(ImageFormat::from_path(&p("x.tiff")), Err(Error::UnknownFormat { .. })));
        assert_eq!(ImageFormat::from_path(&p("X.PNG")).unwrap(), ImageFormat::Png);
    }

    #[test]
    fn pnm_round_trip() {
        let img = crate::synth::uniform_image(5, 4, 3, 255.0, 1).unwrap();
        let back = decode(&encode(&img, ImageFormat::Ppm).unwrap(), &p("r.ppm")).unwrap();
        for (a, b) in back.as_slice().iter().zip(img.as_slice()) {
            assert!((a - b).abs() <= 0.5 + 1e-9);
        }
        assert!(matches!(
            encode(&img, ImageFormat::Pgm),
            Err(Error::UnsupportedChannels { channels: 3, .. })
        ));
    }

    #[test]
    fn png_round_trip_within_half_step() {
        for (c, r) in [(1, 255.0), (3, 255.0), (3, 1.0)] {
            let img = crate::synth::uniform_image(7, 6, c, r, 2).unwrap();
            let back = decode(&encode(&img, ImageFormat::Png).unwrap(), &p("r.png")).unwrap();
            assert_eq!(back.channels(), c);
            let rescale = r / 255.0;
            for (a, b) in back.as_slice().iter().zip(img.as_slice()) {
                assert!((a * rescale - b).abs() <= r / 255.0 / 2.0 + 1e-9);
            }
        }
        let two = MultiChannelImage::zeros(2, 2, 2, 255.0).unwrap();
        assert!(matches!(
            encode(&two, ImageFormat::Png),
            Err(Error::UnsupportedChannels { channels: 2, .. })
        ));
    }

    #[test]
    fn out_of_range_clamps_only_on_encode() {
        let img = MultiChannelImage::from_vec(3, 1, 1, 255.0, vec![-20.0, 128.4, 300.0]).unwrap();
        assert_eq!(quantize(&img), vec![0, 128, 255]);
        assert_eq!(img.as_slice(), &[-20.0, 128.4, 300.0]);
    }

    #[test]
    fn rgba_png_drops_alpha() {
        let raw: Vec<u8> = vec![10, 20, 30, 255, 40, 50, 60, 0];
        let mut bytes = Vec::new();
        image::codecs::png::PngEncoder::new(&mut bytes)
            .write_image(&raw, 2, 1, ExtendedColorType::Rgba8)
            .unwrap();
        let img = decode(&bytes, &p("a.png")).unwrap();
        assert_eq!(img.channels(), 3);
        assert_eq!(img.to_interleaved(), vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0]);
    }

    #[test]
    fn sixteen_bit_png_rejected() {
        let raw: Vec<u8> = vec![0, 1, 2, 3];
        let mut bytes = Vec::new();
        image::codecs::png::PngEncoder::new(&mut bytes)
            .write_image(&raw, 2, 1, ExtendedColorType::L16)
            .unwrap();
        assert!(matches!(decode(&bytes, &p("a.png")), Err(Error::BadHeader { field: "color type", .. })));
    }

    #[test]
    fn cube_round_trip_is_byte_exact() {
        let img = crate::synth::uniform_image(4, 3, 5, 1.0, 3).unwrap();
        let bytes = encode(&img, ImageFormat::Cube).unwrap();
        assert_eq!(bytes.len(), 28 + 4 * 3 * 5 * 4);
        let loaded = decode(&bytes, &p("a.cube")).unwrap();
        assert_eq!(encode(&loaded, ImageFormat::Cube).unwrap(), bytes);
        for (a, b) in loaded.as_slice().iter().zip(img.as_slice()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert_eq!(loaded.range(), 1.0);
    }

    #[test]
    fn cube_header_errors() {
        let img = crate::synth::uniform_image(2, 2, 2, 10.0, 4).unwrap();
        let good = encode(&img, ImageFormat::Cube).unwrap();
        let e = decode(&good[..20], &p("h.cube")).unwrap_err();
        assert!(matches!(e, Error::Truncated { field: "header", .. }));
        let e = decode(&good[..good.len() - 3], &p("t.cube")).unwrap_err();
        assert!(matches!(e, Error::Truncated { field: "payload", expected: 32, found: 29, .. }));
        let mut zero = good.clone();
        zero[16..20].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode(&zero, &p("z.cube")), Err(Error::ZeroDimension { field: "channels", .. })));
        let mut bad_r = good.clone();
        bad_r[20..28].copy_from_slice(&(-1.0f64).to_le_bytes());
        assert!(matches!(decode(&bad_r, &p("r.cube")), Err(Error::BadHeader { field: "range", .. })));
        let mut long = good;
        long.push(0);
        assert!(matches!(decode(&long, &p("l.cube")), Err(Error::BadHeader { field: "payload", .. })));
    }
}
