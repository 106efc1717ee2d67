//! Parsing of numeric flag values that clap cannot express directly.

use std::str::FromStr;

use anyhow::{bail, Result};
use hdfilter::RangeKernel;

/// One range width entry: absolute, or relative to the image range (`0.3R`).
#[derive(Debug, Clone, Copy, PartialEq)]
enum SigmaEntry {
    Absolute(f64),
    Relative(f64),
}

/// `--sigma-r`: a single width for all guide channels or one per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSpec(Vec<SigmaEntry>);

impl FromStr for SigmaSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let entries = s
            .split(',')
            .map(|part| {
                let part = part.trim();
                let (number, relative) = match part.strip_suffix(['R', 'r']) {
                    Some(rest) => (rest, true),
                    None => (part, false),
                };
                let v: f64 = number
                    .parse()
                    .map_err(|_| format!("`{part}` is not a number or a fraction like 0.3R"))?;
                if !(v.is_finite() && v > 0.0) {
                    return Err(format!("`{part}` must be positive"));
                }
                Ok(if relative {
                    SigmaEntry::Relative(v)
                } else {
                    SigmaEntry::Absolute(v)
                })
            })
            .collect::<std::result::Result<Vec<_>, String>>()?;
        Ok(SigmaSpec(entries))
    }
}

impl SigmaSpec {
    /// Widths in native units for a guide of `dim` channels with range `range`.
    pub fn resolve(&self, range: f64, dim: usize) -> Result<Vec<f64>> {
        let values: Vec<f64> = self
            .0
            .iter()
            .map(|e| match *e {
                SigmaEntry::Absolute(v) => v,
                SigmaEntry::Relative(f) => f * range,
            })
            .collect();
        match values.len() {
            1 => Ok(vec![values[0]; dim]),
            n if n == dim => Ok(values),
            n => bail!("--sigma-r has {n} entries but the guide has {dim} channels"),
        }
    }

    pub fn kernel(&self, range: f64, dim: usize) -> Result<RangeKernel> {
        let sigmas = self.resolve(range, dim)?;
        let kernel = if sigmas.iter().all(|&s| s == sigmas[0]) {
            RangeKernel::isotropic(sigmas[0], dim)?
        } else {
            RangeKernel::diagonal(sigmas)?
        };
        Ok(kernel)
    }
}

/// `WxH`, or `N` for an `N x N` square.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeSpec {
    pub width: usize,
    pub height: usize,
}

impl FromStr for SizeSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| format!("`{s}` is not a size like 256 or 512x256"))
        };
        match s.split_once(['x', 'X']) {
            Some((w, h)) => Ok(SizeSpec {
                width: parse(w)?,
                height: parse(h)?,
            }),
            None => {
                let n = parse(s)?;
                Ok(SizeSpec { width: n, height: n })
            }
        }
    }
}
