//! Range and spatial kernels.
//!
//! The range kernel acts on differences of guide vectors; the spatial kernel
//! weights integer offsets inside the square window `[-S, S]^2`.

use crate::error::{Error, Result};

/// Gaussian range kernel `phi(x) = exp(-0.5 * sum_j (x_j / sigma_j)^2)`.
#[derive(Debug, Clone, PartialEq)]
pub enum RangeKernel {
    /// Same sigma in every one of `dim` coordinates.
    Isotropic { sigma: f64, dim: usize },
    /// One sigma per coordinate (diagonal covariance).
    Diagonal { sigmas: Vec<f64> },
}

fn check_sigma(name: &'static str, sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("{sigma} is not a positive finite number")))
    }
}

impl RangeKernel {
    pub fn isotropic(sigma: f64, dim: usize) -> Result<Self> {
        check_sigma("sigma_r", sigma)?;
        if dim == 0 {
            return Err(Error::invalid("dim", "range dimension must be at least 1"));
        }
        Ok(RangeKernel::Isotropic { sigma, dim })
    }

    pub fn diagonal(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(Error::invalid("sigma_r", "empty sigma list"));
        }
        for &s in &sigmas {
            check_sigma("sigma_r", s)?;
        }
        Ok(RangeKernel::Diagonal { sigmas })
    }

    /// Range dimension `rho`.
    pub fn dim(&self) -> usize {
        match self {
            RangeKernel::Isotropic { dim, .. } => *dim,
            RangeKernel::Diagonal { sigmas } => sigmas.len(),
        }
    }

    /// Same as [`eval`](Self::eval) but without the length check; callers in
    /// hot loops have already validated dimensions.
    #[inline]
    pub fn eval_unchecked(&self, x: &[f64]) -> f64 {
        (-0.5 * self.scaled_norm_sq(x)).exp()
    }

    /// `phi(a - b)` without materializing the difference.
    #[inline]
    pub fn eval_diff(&self, a: &[f64], b: &[f64]) -> f64 {
        let q = match self {
            RangeKernel::Isotropic { sigma, .. } => {
                let s: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
                s / (sigma * sigma)
            }
            RangeKernel::Diagonal { sigmas } => a
                .iter()
                .zip(b)
                .zip(sigmas)
                .map(|((p, q), s)| {
                    let t = (p - q) / s;
                    t * t
                })
                .sum(),
        };
        (-0.5 * q).exp()
    }

    #[inline]
    fn scaled_norm_sq(&self, x: &[f64]) -> f64 {
        match self {
            RangeKernel::Isotropic { sigma, .. } => {
                x.iter().map(|v| v * v).sum::<f64>() / (sigma * sigma)
            }
            RangeKernel::Diagonal { sigmas } => x
                .iter()
                .zip(sigmas)
                .map(|(v, s)| {
                    let t = v / s;
                    t * t
                })
                .sum(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "range kernel argument",
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.eval_unchecked(x))
    }

    /// Global Lipschitz constant: the maximum gradient norm of the kernel.
    ///
    /// For a Gaussian the gradient norm peaks at one sigma along the
    /// narrowest axis, giving `exp(-1/2) / min sigma`.
    pub fn lipschitz_constant(&self) -> f64 {
        (-0.5f64).exp() / self.min_sigma()
    }

    pub fn min_sigma(&self) -> f64 {
        match self {
            RangeKernel::Isotropic { sigma, .. } => *sigma,
            RangeKernel::Diagonal { sigmas } => sigmas.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpatialKernel {
    /// `omega(j) = exp(-|j|^2 / 2 sigma^2)` truncated to `half_width`.
    Gaussian { sigma: f64, half_width: usize },
    /// Unit weights over the whole window.
    Box { half_width: usize },
}

impl SpatialKernel {
    /// Gaussian kernel with window `S = ceil(3 sigma)`.
    pub fn gaussian(sigma: f64) -> Result<Self> {
        check_sigma("sigma_s", sigma)?;
        Ok(SpatialKernel::Gaussian {
            sigma,
            half_width: (3.0 * sigma).ceil() as usize,
        })
    }

    pub fn boxed(half_width: usize) -> Self {
        SpatialKernel::Box { half_width }
    }

    pub fn half_width(&self) -> usize {
        match *self {
            SpatialKernel::Gaussian { half_width, .. } | SpatialKernel::Box { half_width } => {
                half_width
            }
        }
    }

    /// `|W| = (2S + 1)^2`.
    pub fn window_size(&self) -> usize {
        let side = 2 * self.half_width() + 1;
        side * side
    }

    /// One-dimensional tap at offset `t`; the 2-D weight is the product of
    /// the row and column taps.
    #[inline]
    pub fn tap(&self, t: i64) -> f64 {
        match *self {
            SpatialKernel::Gaussian { sigma, .. } => {
                let t = t as f64;
                (-(t * t) / (2.0 * sigma * sigma)).exp()
            }
            SpatialKernel::Box { .. } => 1.0,
        }
    }

    /// Weights `tap(-S) ..= tap(S)`.
    pub fn taps(&self) -> Vec<f64> {
        let s = self.half_width() as i64;
        (-s..=s).map(|t| self.tap(t)).collect()
    }

    pub fn weight(&self, dx: i64, dy: i64) -> Result<f64> {
        let s = self.half_width();
        if dx.unsigned_abs() as usize > s || dy.unsigned_abs() as usize > s {
            return Err(Error::OutsideWindow {
                dx,
                dy,
                half_width: s,
            });
        }
        Ok(self.tap(dx) * self.tap(dy))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const E_HALF: f64 = 0.606_530_659_712_633_4;

    #[test]
    fn range_eval_examples() {
        let k = RangeKernel::isotropic(7.0, 4).unwrap();
        assert_eq!(k.eval(&[0.0; 4]).unwrap(), 1.0);

        let k = RangeKernel::isotropic(30.0, 1).unwrap();
        assert!((k.eval(&[30.0]).unwrap() - E_HALF).abs() < 1e-12);

        let k = RangeKernel::diagonal(vec![10.0, 20.0, 30.0]).unwrap();
        assert!((k.eval(&[10.0, 0.0, 0.0]).unwrap() - E_HALF).abs() < 1e-12);
    }

    #[test]
    fn range_eval_rejects_wrong_length() {
        let k = RangeKernel::isotropic(1.0, 3).unwrap();
        assert!(matches!(
            k.eval(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 3, got: 2, .. })
        ));
    }

    #[test]
    fn invalid_sigmas_rejected() {
        assert!(RangeKernel::isotropic(0.0, 1).is_err());
        assert!(RangeKernel::isotropic(f64::NAN, 1).is_err());
        assert!(RangeKernel::diagonal(vec![1.0, -2.0]).is_err());
        assert!(RangeKernel::diagonal(vec![]).is_err());
        assert!(SpatialKernel::gaussian(0.0).is_err());
    }

    #[test]
    fn spatial_weight_examples() {
        let g = SpatialKernel::gaussian(5.0).unwrap();
        assert_eq!(g.half_width(), 15);
        assert_eq!(g.weight(0, 0).unwrap(), 1.0);
        assert!((g.weight(5, 0).unwrap() - E_HALF).abs() < 1e-12);

        let b = SpatialKernel::boxed(10);
        assert_eq!(b.weight(7, -3).unwrap(), 1.0);
        assert_eq!(b.window_size(), 441);
    }

    #[test]
    fn spatial_weight_outside_window() {
        let b = SpatialKernel::boxed(2);
        assert!(matches!(b.weight(3, 0), Err(Error::OutsideWindow { .. })));
        assert!(b.weight(-2, 2).is_ok());
    }

    #[test]
    fn gaussian_window_rounds_up() {
        assert_eq!(SpatialKernel::gaussian(2.0).unwrap().half_width(), 6);
        assert_eq!(SpatialKernel::gaussian(2.1).unwrap().half_width(), 7);
        assert_eq!(SpatialKernel::gaussian(0.2).unwrap().half_width(), 1);
    }

    #[test]
    fn gaussian_taps_radially_non_increasing() {
        let g = SpatialKernel::gaussian(3.0).unwrap();
        let s = g.half_width() as i64;
        let mut pairs = Vec::new();
        for dy in -s..=s {
            for dx in -s..=s {
                pairs.push((dx * dx + dy * dy, g.weight(dx, dy).unwrap()));
            }
        }
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        for w in pairs.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-15);
        }
    }

    /// Largest finite-difference gradient norm over a grid; independent of
    /// the closed form.
    fn grid_gradient_max(k: &RangeKernel, extent: f64, steps: usize) -> f64 {
        let h = 1e-6 * k.min_sigma();
        let dim = k.dim();
        let mut best: f64 = 0.0;
        let axis_points: Vec<f64> = (0..=steps)
            .map(|t| -extent + 2.0 * extent * t as f64 / steps as f64)
            .collect();
        let mut idx = vec![0usize; dim];
        loop {
            let x: Vec<f64> = idx.iter().map(|&i| axis_points[i]).collect();
            let mut g2 = 0.0;
            for d in 0..dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[d] += h;
                xm[d] -= h;
                let g = (k.eval(&xp).unwrap() - k.eval(&xm).unwrap()) / (2.0 * h);
                g2 += g * g;
            }
            best = best.max(g2.sqrt());
            let mut d = 0;
            loop {
                if d == dim {
                    return best;
                }
                idx[d] += 1;
                if idx[d] <= steps {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    }

    #[test]
    fn lipschitz_matches_grid_oracle() {
        let k = RangeKernel::isotropic(1.0, 1).unwrap();
        let oracle = grid_gradient_max(&k, 4.0, 80_000);
        assert!((oracle - 0.6065307).abs() < 1e-6);
        assert!((k.lipschitz_constant() - oracle).abs() < 1e-6);

        let k = RangeKernel::isotropic(100.0, 1).unwrap();
        let oracle = grid_gradient_max(&k, 400.0, 80_000);
        assert!((oracle - 0.006065307).abs() < 1e-8);
        assert!((k.lipschitz_constant() - oracle).abs() < 1e-8);
        let unit = RangeKernel::isotropic(1.0, 1).unwrap().lipschitz_constant();
        assert!((k.lipschitz_constant() - unit / 100.0).abs() < 1e-15);

        let k = RangeKernel::diagonal(vec![10.0, 50.0]).unwrap();
        let oracle = grid_gradient_max(&k, 150.0, 600);
        assert!((oracle - 0.06065307).abs() < 1e-5, "{oracle}");
        assert!((k.lipschitz_constant() - 0.06065307).abs() < 1e-8);
    }

    proptest! {
        #[test]
        fn range_kernel_symmetric_and_bounded(
            xs in proptest::collection::vec(-100.0f64..100.0, 3),
            sigma in 5.0f64..100.0,
        ) {
            let k = RangeKernel::isotropic(sigma, 3).unwrap();
            let neg: Vec<f64> = xs.iter().map(|v| -v).collect();
            let a = k.eval(&xs).unwrap();
            prop_assert_eq!(a, k.eval(&neg).unwrap());
            prop_assert!(a > 0.0 && a <= 1.0);
            if xs.iter().any(|v| v.abs() > 1e-3) {
                prop_assert!(a < 1.0);
            }
        }

        #[test]
        fn lipschitz_bound_holds(
            x in proptest::collection::vec(-100.0f64..100.0, 2),
            y in proptest::collection::vec(-100.0f64..100.0, 2),
            s0 in 1.0f64..60.0,
            s1 in 1.0f64..60.0,
        ) {
            let k = RangeKernel::diagonal(vec![s0, s1]).unwrap();
            let l = k.lipschitz_constant();
            let dist = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
            let diff = (k.eval(&x).unwrap() - k.eval(&y).unwrap()).abs();
            prop_assert!(diff <= l * dist + 1e-12);
        }
    }

    #[test]
    fn lipschitz_bound_ten_thousand_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let k = RangeKernel::isotropic(25.0, 3).unwrap();
        let l = k.lipschitz_constant();
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-80.0..80.0)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-80.0..80.0)).collect();
            let dist = x
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let diff = (k.eval(&x).unwrap() - k.eval(&y).unwrap()).abs();
            assert!(diff <= l * dist + 1e-12);
        }
    }
}
