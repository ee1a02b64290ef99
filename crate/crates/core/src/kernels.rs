//! Parametric kernel families `φ_σ(y | θ)` mixed over the latent location θ.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::sync::Arc;

use crate::error::{PrxError, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal distribution function.
///
/// Evaluated as `erfc(-z/√2)/2` with the musl-derived `erfc` from `libm`,
/// which is accurate to a few ulps on every platform and does not lose
/// precision in the lower tail.
#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(z)` without cancellation.
#[inline]
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z * FRAC_1_SQRT_2)
}

/// Density of `N(mean, sd²)`.
#[inline]
pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    std_normal_pdf((x - mean) / sd) / sd
}

/// Skewness coefficient driven by a covariate: `-(alpha + beta * t)`.
pub fn skew_shape(alpha: f64, beta: f64, t: f64) -> f64 {
    -(alpha + beta * t)
}

/// Skew-normal density with location `loc`, scale `scale` and shape `shape`
/// in the direct parameterization `(2/ψ) φ(z) Φ(s z)`, `z = (y - θ)/ψ`.
#[inline]
pub fn skew_normal_pdf(y: f64, loc: f64, scale: f64, shape: f64) -> f64 {
    let z = (y - loc) / scale;
    2.0 / scale * std_normal_pdf(z) * std_normal_cdf(shape * z)
}

/// User-supplied kernel family.
///
/// Implementations must return finite, nonnegative values that integrate to
/// one in `y` for every `theta`.
pub trait MixtureKernel: Send + Sync {
    fn name(&self) -> &str;
    fn density(&self, y: f64, theta: f64, covariate_tag: Option<f64>) -> f64;
}

/// Kernel family together with its unmixed parameters.
#[derive(Clone)]
pub enum KernelSpec {
    /// `N(θ, σ²)`.
    Gaussian { sigma: f64 },
    /// Skew-normal with location θ, scale `psi` and shape `-(alpha + beta t)`,
    /// where `t` is the observation's covariate tag.
    SkewNormal { alpha: f64, beta: f64, psi: f64 },
    /// `N(theta + u, σ²)` where the grid carries shifts `u` away from the
    /// null location `theta`.
    NullPointGaussian { theta: f64, sigma: f64 },
    Custom(Arc<dyn MixtureKernel>),
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Gaussian { sigma } => f.debug_struct("Gaussian").field("sigma", sigma).finish(),
            KernelSpec::SkewNormal { alpha, beta, psi } => f
                .debug_struct("SkewNormal")
                .field("alpha", alpha)
                .field("beta", beta)
                .field("psi", psi)
                .finish(),
            KernelSpec::NullPointGaussian { theta, sigma } => f
                .debug_struct("NullPointGaussian")
                .field("theta", theta)
                .field("sigma", sigma)
                .finish(),
            KernelSpec::Custom(k) => f.debug_tuple("Custom").field(&k.name()).finish(),
        }
    }
}

impl KernelSpec {
    /// Checks scale positivity and finiteness of every parameter.
    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(PrxError::domain(format!("{name} must be a finite positive scale, got {v}")))
            }
        }
        fn finite(name: &str, v: f64) -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(PrxError::domain(format!("{name} must be finite, got {v}")))
            }
        }
        match *self {
            KernelSpec::Gaussian { sigma } => positive("sigma", sigma),
            KernelSpec::SkewNormal { alpha, beta, psi } => {
                finite("alpha", alpha)?;
                finite("beta", beta)?;
                positive("psi", psi)
            }
            KernelSpec::NullPointGaussian { theta, sigma } => {
                finite("theta", theta)?;
                positive("sigma", sigma)
            }
            KernelSpec::Custom(_) => Ok(()),
        }
    }

    pub fn needs_tag(&self) -> bool {
        matches!(self, KernelSpec::SkewNormal { .. })
    }

    pub fn family_name(&self) -> &str {
        match self {
            KernelSpec::Gaussian { .. } => "gaussian",
            KernelSpec::SkewNormal { .. } => "skew-normal",
            KernelSpec::NullPointGaussian { .. } => "null-gaussian",
            KernelSpec::Custom(k) => k.name(),
        }
    }

    /// Parameter names and values in a fixed order, for manifests and traces.
    pub fn params(&self) -> Vec<(&'static str, f64)> {
        match *self {
            KernelSpec::Gaussian { sigma } => vec![("sigma", sigma)],
            KernelSpec::SkewNormal { alpha, beta, psi } => {
                vec![("alpha", alpha), ("beta", beta), ("psi", psi)]
            }
            KernelSpec::NullPointGaussian { theta, sigma } => vec![("theta", theta), ("sigma", sigma)],
            KernelSpec::Custom(_) => Vec::new(),
        }
    }

    fn check_tag(&self, covariate_tag: Option<f64>) -> Result<()> {
        if self.needs_tag() && covariate_tag.is_none() {
            return Err(PrxError::usage("skew-normal kernel requires a covariate tag"));
        }
        Ok(())
    }

    /// A single kernel value. Parameters are assumed validated.
    #[inline]
    pub(crate) fn density_unchecked(&self, y: f64, theta: f64, covariate_tag: Option<f64>) -> f64 {
        match *self {
            KernelSpec::Gaussian { sigma } => normal_pdf(y, theta, sigma),
            KernelSpec::SkewNormal { alpha, beta, psi } => {
                let t = covariate_tag.unwrap_or(0.0);
                skew_normal_pdf(y, theta, psi, skew_shape(alpha, beta, t))
            }
            KernelSpec::NullPointGaussian { theta: null, sigma } => normal_pdf(y, null + theta, sigma),
            KernelSpec::Custom(ref k) => k.density(y, theta, covariate_tag),
        }
    }

    /// Kernel value at a single `(y, θ)` pair.
    pub fn density(&self, y: f64, theta: f64, covariate_tag: Option<f64>) -> Result<f64> {
        self.validate()?;
        self.check_tag(covariate_tag)?;
        Ok(self.density_unchecked(y, theta, covariate_tag))
    }

    /// Fills `out` with `φ(y | θ_j)` for each grid value.
    pub(crate) fn fill_row(&self, y: f64, thetas: &[f64], covariate_tag: Option<f64>, out: &mut [f64]) {
        debug_assert_eq!(thetas.len(), out.len());
        match *self {
            KernelSpec::Gaussian { sigma } => {
                let inv = 1.0 / sigma;
                let c = INV_SQRT_2PI * inv;
                for (o, &th) in out.iter_mut().zip(thetas) {
                    let z = (y - th) * inv;
                    *o = c * (-0.5 * z * z).exp();
                }
            }
            _ => {
                for (o, &th) in out.iter_mut().zip(thetas) {
                    *o = self.density_unchecked(y, th, covariate_tag);
                }
            }
        }
    }
}

/// Evaluates `φ_σ(y | θ_j)` at every grid point.
pub fn eval_kernel(
    spec: &KernelSpec,
    y: f64,
    theta_grid: &[f64],
    covariate_tag: Option<f64>,
) -> Result<Vec<f64>> {
    if theta_grid.is_empty() {
        return Err(PrxError::usage("theta grid is empty"));
    }
    spec.validate()?;
    spec.check_tag(covariate_tag)?;
    let mut out = vec![0.0; theta_grid.len()];
    spec.fill_row(y, theta_grid, covariate_tag, &mut out);
    Ok(out)
}

/// Variance of a skew-normal with scale `psi` and shape `shape`.
pub fn skew_normal_variance(psi: f64, shape: f64) -> f64 {
    let delta = shape / (1.0 + shape * shape).sqrt();
    psi * psi * (1.0 - 2.0 * delta * delta / PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gaussian_values() {
        let k = KernelSpec::Gaussian { sigma: 1.0 };
        let v = eval_kernel(&k, 1.0, &[-1.0, 1.0], None).unwrap();
        assert_abs_diff_eq!(v[0], 0.053_990_966_513_188_06, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 0.398_942_280_401_432_7, epsilon = 1e-12);
    }

    #[test]
    fn zero_skew_is_gaussian() {
        let sn = KernelSpec::SkewNormal { alpha: 0.0, beta: 0.0, psi: 1.0 };
        let g = KernelSpec::Gaussian { sigma: 1.0 };
        for &y in &[-3.0, -0.2, 0.0, 1.7, 4.0] {
            let grid = [-2.0, 0.0, 0.5, 3.0];
            let a = eval_kernel(&sn, y, &grid, Some(0.0)).unwrap();
            let b = eval_kernel(&g, y, &grid, None).unwrap();
            for (x, z) in a.iter().zip(&b) {
                assert_abs_diff_eq!(x, z, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn skew_shape_values() {
        assert_abs_diff_eq!(skew_shape(-2.2856, 3.7429, 1.0), -1.4573, epsilon = 1e-12);
        assert_eq!(skew_shape(0.0, 0.0, 7.3), 0.0);
        assert_eq!(skew_shape(1.0, 2.0, 0.5), -2.0);
    }

    #[test]
    fn bad_scale_and_missing_tag() {
        let bad = KernelSpec::Gaussian { sigma: 0.0 };
        assert!(matches!(eval_kernel(&bad, 0.0, &[0.0], None), Err(PrxError::Domain(_))));
        let neg = KernelSpec::SkewNormal { alpha: 0.0, beta: 1.0, psi: -1.0 };
        assert!(matches!(eval_kernel(&neg, 0.0, &[0.0], Some(1.0)), Err(PrxError::Domain(_))));
        let sn = KernelSpec::SkewNormal { alpha: 0.0, beta: 1.0, psi: 1.0 };
        assert!(matches!(eval_kernel(&sn, 0.0, &[0.0], None), Err(PrxError::Usage(_))));
        let g = KernelSpec::Gaussian { sigma: 1.0 };
        assert!(matches!(eval_kernel(&g, 0.0, &[], None), Err(PrxError::Usage(_))));
    }

    #[test]
    fn null_point_shifts_location() {
        let k = KernelSpec::NullPointGaussian { theta: 0.5, sigma: 2.0 };
        let v = eval_kernel(&k, 1.5, &[1.0], None).unwrap();
        assert_abs_diff_eq!(v[0], std_normal_pdf(0.0) / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn cdf_tails() {
        assert_abs_diff_eq!(std_normal_cdf(0.0), 0.5, epsilon = 1e-16);
        assert_abs_diff_eq!(std_normal_cdf(1.959_963_984_540_054), 0.975, epsilon = 1e-14);
        assert!(std_normal_cdf(-40.0) >= 0.0);
        assert_abs_diff_eq!(std_normal_sf(8.0), 6.220_960_574_271_74e-16, epsilon = 1e-27);
    }

    #[test]
    fn kernels_integrate_to_one() {
        let kernels = [
            (KernelSpec::Gaussian { sigma: 0.7 }, None),
            (KernelSpec::SkewNormal { alpha: -2.0, beta: 3.0, psi: 0.8 }, Some(1.0)),
            (KernelSpec::SkewNormal { alpha: 1.5, beta: 0.0, psi: 1.3 }, Some(0.0)),
            (KernelSpec::NullPointGaussian { theta: 0.0, sigma: 1.0 }, None),
        ];
        let lo = -30.0;
        let hi = 30.0;
        let n = 60_001;
        let h = (hi - lo) / (n - 1) as f64;
        for (k, tag) in &kernels {
            for &theta in &[-2.0, 0.0, 0.3, 5.0] {
                let mut s = 0.0;
                for i in 0..n {
                    let y = lo + h * i as f64;
                    let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                    s += w * k.density(y, theta, *tag).unwrap();
                }
                assert_abs_diff_eq!(s * h, 1.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn continuous_in_theta() {
        // refining the theta step shrinks the largest jump between neighbours
        let k = KernelSpec::SkewNormal { alpha: -1.0, beta: 2.0, psi: 0.5 };
        let jump = |n: usize| {
            let grid: Vec<f64> = (0..n).map(|i| -3.0 + 6.0 * i as f64 / (n - 1) as f64).collect();
            let v = eval_kernel(&k, 0.4, &grid, Some(1.0)).unwrap();
            v.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max)
        };
        let (coarse, fine) = (jump(101), jump(1001));
        assert!(fine < coarse / 5.0, "coarse {coarse}, fine {fine}");
    }

    #[test]
    fn deterministic() {
        let k = KernelSpec::SkewNormal { alpha: 0.3, beta: -1.2, psi: 0.4 };
        let grid: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let a = eval_kernel(&k, 1.1, &grid, Some(1.0)).unwrap();
        let b = eval_kernel(&k, 1.1, &grid, Some(1.0)).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn custom_kernel_extension() {
        struct Flat;
        impl MixtureKernel for Flat {
            fn name(&self) -> &str {
                "flat"
            }
            fn density(&self, _y: f64, _theta: f64, _tag: Option<f64>) -> f64 {
                0.25
            }
        }
        let k = KernelSpec::Custom(Arc::new(Flat));
        assert_eq!(eval_kernel(&k, 3.0, &[0.0, 1.0], None).unwrap(), vec![0.25, 0.25]);
        assert_eq!(format!("{k:?}"), "Custom(\"flat\")");
    }
}
