use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("offset ({dx}, {dy}) lies outside the window [-{half_width}, {half_width}]^2")]
    OutsideWindow { dx: i64, dy: i64, half_width: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("requested {requested} clusters but the guide has only {available} distinct vectors")]
    TooManyClusters { requested: usize, available: usize },

    #[error("input is {input_width}x{input_height} but guide is {guide_width}x{guide_height}")]
    DomainMismatch {
        input_width: usize,
        input_height: usize,
        guide_width: usize,
        guide_height: usize,
    },

    #[error("cluster index {index} out of range for {clusters} clusters")]
    ClusterIndex { index: usize, clusters: usize },

    #[error("error bound needs the brute-force output; run the brute-force filter and pass it as the reference")]
    MissingReference,

    #[error("{path}: unrecognized image format")]
    UnknownFormat { path: PathBuf },

    #[error("{path}: truncated {field} (expected {expected} bytes, found {found})")]
    Truncated {
        path: PathBuf,
        field: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{path}: header field `{field}` is zero")]
    ZeroDimension { path: PathBuf, field: &'static str },

    #[error("{path}: malformed header field `{field}`: {reason}")]
    BadHeader {
        path: PathBuf,
        field: &'static str,
        reason: String,
    },

    #[error("{format} output supports {supported} channels, image has {channels}")]
    UnsupportedChannels {
        format: &'static str,
        supported: &'static str,
        channels: usize,
    },

    #[error("{path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
