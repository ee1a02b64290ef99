//! Covariate localization of the recursion weights.
//!
//! For a target `x`, observation `i` gets affinity `β_i = exp(-Σ_j b_j (x_ij - x_j)²)`
//! and weight `v_i = β_i (1 + S_i)^(-γ)` with `S_i = β_1 + … + β_i`.

use crate::error::{PrxError, Result};

pub const DEFAULT_GAMMA: f64 = 2.0 / 3.0;

/// Affinities are clamped from below to keep long runs out of subnormals.
pub const BETA_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationConfig {
    pub bandwidths: Vec<f64>,
    pub gamma: f64,
}

impl LocalizationConfig {
    pub fn new(bandwidths: Vec<f64>, gamma: f64) -> Result<Self> {
        if let Some(b) = bandwidths.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
            return Err(PrxError::domain(format!("bandwidths must be finite and nonnegative, got {b}")));
        }
        if !(gamma > 0.5 && gamma <= 1.0) {
            return Err(PrxError::domain(format!("decay exponent must lie in (1/2, 1], got {gamma}")));
        }
        Ok(Self { bandwidths, gamma })
    }

    /// Same bandwidth for every one of `p` coordinates, default decay.
    pub fn isotropic(p: usize, b: f64) -> Result<Self> {
        Self::new(vec![b; p], DEFAULT_GAMMA)
    }

    /// All bandwidths zero: every observation has affinity one.
    pub fn unlocalized(p: usize) -> Self {
        Self { bandwidths: vec![0.0; p], gamma: DEFAULT_GAMMA }
    }

    pub fn dim(&self) -> usize {
        self.bandwidths.len()
    }

    /// `h(z) = (1 + z)^(-γ)`.
    #[inline]
    pub fn decay(&self, z: f64) -> f64 {
        (1.0 + z).powf(-self.gamma)
    }

    /// Anisotropic Gaussian affinity `k_b(x, x')`.
    pub fn loc_kernel(&self, x: &[f64], x_prime: &[f64]) -> Result<f64> {
        if x.len() != self.dim() || x_prime.len() != self.dim() {
            return Err(PrxError::usage(format!(
                "covariate dimensions {} and {} do not match {} bandwidths",
                x.len(),
                x_prime.len(),
                self.dim()
            )));
        }
        Ok(self.affinity(x, x_prime))
    }

    #[inline]
    pub(crate) fn affinity(&self, x: &[f64], x_prime: &[f64]) -> f64 {
        let mut d = 0.0;
        for ((b, a), c) in self.bandwidths.iter().zip(x).zip(x_prime) {
            let diff = a - c;
            d += b * diff * diff;
        }
        (-d).exp().max(BETA_FLOOR)
    }

    /// Affinities, running sums and weights for `xs` localized at `target`.
    pub fn localize<'a, I>(&self, xs: I, target: &[f64]) -> Result<LocalWeights>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        if target.len() != self.dim() {
            return Err(PrxError::usage(format!(
                "target has dimension {} but there are {} bandwidths",
                target.len(),
                self.dim()
            )));
        }
        let mut out = LocalWeights::default();
        let mut s = 0.0;
        for x in xs {
            let beta = self.loc_kernel(x, target)?;
            s += beta;
            out.beta.push(beta);
            out.cumulative.push(s);
            out.v.push(beta * self.decay(s));
        }
        Ok(out)
    }

    /// The weight sequence `v_1..v_n` at `target`.
    pub fn weight_sequence<'a, I>(&self, xs: I, target: &[f64]) -> Result<Vec<f64>>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        Ok(self.localize(xs, target)?.v)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocalWeights {
    pub beta: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub v: Vec<f64>,
}

impl LocalWeights {
    pub fn total_affinity(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}
