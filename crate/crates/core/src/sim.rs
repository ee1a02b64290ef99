//! Seeded simulation scenarios, their true conditional densities, and
//! evaluation point sets.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal};

use crate::data::Dataset;
use crate::error::{PrxError, Result};
use crate::kernels::{normal_pdf, skew_normal_pdf, skew_shape};

pub const HIGH_DIM: usize = 20;

/// Standard deviation of `y | θ` in the mixture-transition scenario.
pub const MIXTURE_TRANSITION_Y_SD: f64 = 0.5;

/// Skew scenario: `θ = 2 x1 + N(0, 0.1²)`, skew-normal noise with scale 1
/// and shape `-(α + β t)` for a Bernoulli(1/2) tag `t`.
pub const SKEW_ALPHA: f64 = -2.0;
pub const SKEW_BETA: f64 = 4.0;
pub const SKEW_PSI: f64 = 1.0;
const SKEW_THETA_SD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    LocationShift,
    MixtureTransition,
    BetaConcentration,
    HighDim20,
    TwoGroupsFdr,
    /// Skewed outcomes; covariates `(x1, t)`.
    SkewSynthetic,
    /// The skew design with `α = β = 0` (Gaussian noise of unit scale).
    SymmetricSynthetic,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 7] = [
        ScenarioKind::LocationShift,
        ScenarioKind::MixtureTransition,
        ScenarioKind::BetaConcentration,
        ScenarioKind::HighDim20,
        ScenarioKind::TwoGroupsFdr,
        ScenarioKind::SkewSynthetic,
        ScenarioKind::SymmetricSynthetic,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::LocationShift => "location-shift",
            ScenarioKind::MixtureTransition => "mixture-transition",
            ScenarioKind::BetaConcentration => "beta-concentration",
            ScenarioKind::HighDim20 => "high-dim",
            ScenarioKind::TwoGroupsFdr => "two-groups",
            ScenarioKind::SkewSynthetic => "skew",
            ScenarioKind::SymmetricSynthetic => "symmetric",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = PrxError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
            PrxError::usage(format!("unknown scenario {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub n: usize,
    pub seed: u64,
}

/// Exact conditional density `m(y | x)` of a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truth {
    /// `N(3 sin 2πx, 2)`.
    LocationShift,
    /// `(1 - x) N(-2, 1 + s²) + x N(2, 1 + s²)` with `s` the sd of `y | θ`.
    MixtureTransition { y_sd: f64 },
    /// `∫ Beta(y; a, 2) Gamma(a; 0.5 + 4.5x, 1) da` in closed form.
    BetaConcentration,
    /// `N(μ(X), σ(X)² + 1)`.
    HighDim,
    /// `π0(x) N(0, 1) + (1 - π0(x)) N(μ(x), 2)`.
    TwoGroups,
    /// Skew-normal noise around `N(2 x1, 0.1²)` locations.
    Skew { alpha: f64, beta: f64, psi: f64 },
}

pub fn high_dim_mean(x: &[f64]) -> f64 {
    x.iter().map(|v| (v - 0.5).powi(3) + 0.3 * (2.0 * PI * v).sin()).sum::<f64>() / (x.len() as f64).sqrt()
}

pub fn high_dim_sd(x: &[f64]) -> f64 {
    0.2 + 0.3 / x.len() as f64 * x.iter().sum::<f64>()
}

/// Null proportion `1 / (1 + e^{-(2 - 4x)})`.
pub fn two_groups_pi0(x: f64) -> f64 {
    1.0 / (1.0 + (-(2.0 - 4.0 * x)).exp())
}

/// Alternative mean: `-4 + 4x` below 1/2, `4x` from 1/2.
pub fn two_groups_mu(x: f64) -> f64 {
    if x < 0.5 {
        -4.0 + 4.0 * x
    } else {
        4.0 * x
    }
}

impl Truth {
    pub fn density(&self, x: &[f64], y: f64) -> f64 {
        match *self {
            Truth::LocationShift => normal_pdf(y, 3.0 * (2.0 * PI * x[0]).sin(), 2f64.sqrt()),
            Truth::MixtureTransition { y_sd } => {
                let sd = (1.0 + y_sd * y_sd).sqrt();
                (1.0 - x[0]) * normal_pdf(y, -2.0, sd) + x[0] * normal_pdf(y, 2.0, sd)
            }
            Truth::BetaConcentration => {
                if !(y > 0.0 && y < 1.0) {
                    return 0.0;
                }
                let k = 0.5 + 4.5 * x[0];
                let s = 1.0 - y.ln();
                (1.0 - y) / y * (k * (k + 1.0) * s.powf(-(k + 2.0)) + k * s.powf(-(k + 1.0)))
            }
            Truth::HighDim => {
                let sd = high_dim_sd(x);
                normal_pdf(y, high_dim_mean(x), (sd * sd + 1.0).sqrt())
            }
            Truth::TwoGroups => {
                let p0 = two_groups_pi0(x[0]);
                p0 * normal_pdf(y, 0.0, 1.0) + (1.0 - p0) * normal_pdf(y, two_groups_mu(x[0]), 2f64.sqrt())
            }
            Truth::Skew { alpha, beta, psi } => {
                // location integrated by a 401-node rule over ±8 sd
                let mu = 2.0 * x[0];
                let shape = skew_shape(alpha, beta, x[1]);
                let n = 401;
                let h = 16.0 * SKEW_THETA_SD / (n - 1) as f64;
                (0..n)
                    .map(|i| {
                        let th = mu - 8.0 * SKEW_THETA_SD + h * i as f64;
                        let w = if i == 0 || i == n - 1 { 0.5 * h } else { h };
                        w * normal_pdf(th, mu, SKEW_THETA_SD) * skew_normal_pdf(y, th, psi, shape)
                    })
                    .sum()
            }
        }
    }

    /// Conventions baked into the truth, for manifests.
    pub fn metadata(&self) -> Vec<(String, String)> {
        match *self {
            Truth::MixtureTransition { y_sd } => vec![("truth.y_given_theta_sd".into(), y_sd.to_string())],
            Truth::Skew { alpha, beta, psi } => vec![
                ("truth.alpha".into(), alpha.to_string()),
                ("truth.beta".into(), beta.to_string()),
                ("truth.psi".into(), psi.to_string()),
            ],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub data: Dataset,
    pub truth: Truth,
    /// Two-groups scenario only: whether each observation is a true null.
    pub is_null: Option<Vec<bool>>,
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("finite positive sd")
}

/// Draws a scenario dataset from a ChaCha20 stream seeded with `s.seed`.
pub fn generate(s: &Scenario) -> Result<Simulated> {
    if s.n == 0 {
        return Err(PrxError::usage("scenario size n must be at least 1"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(s.seed);
    let std = normal(0.0, 1.0);
    let n = s.n;
    let mut y = Vec::with_capacity(n);
    let out = match s.kind {
        ScenarioKind::LocationShift => {
            let mut x = Vec::with_capacity(n);
            for _ in 0..n {
                let xi: f64 = rng.gen();
                let theta = 3.0 * (2.0 * PI * xi).sin() + std.sample(&mut rng);
                x.push(xi);
                y.push(theta + std.sample(&mut rng));
            }
            Simulated { data: Dataset::univariate(x, y)?, truth: Truth::LocationShift, is_null: None }
        }
        ScenarioKind::MixtureTransition => {
            let mut x = Vec::with_capacity(n);
            for _ in 0..n {
                let xi: f64 = rng.gen();
                let c = rng.gen_bool(xi);
                let theta = if c { 2.0 } else { -2.0 } + std.sample(&mut rng);
                x.push(xi);
                y.push(theta + MIXTURE_TRANSITION_Y_SD * std.sample(&mut rng));
            }
            Simulated {
                data: Dataset::univariate(x, y)?,
                truth: Truth::MixtureTransition { y_sd: MIXTURE_TRANSITION_Y_SD },
                is_null: None,
            }
        }
        ScenarioKind::BetaConcentration => {
            let mut x = Vec::with_capacity(n);
            for _ in 0..n {
                let xi: f64 = rng.gen();
                let a = Gamma::new(0.5 + 4.5 * xi, 1.0).expect("positive shape").sample(&mut rng);
                // a can round to zero for small shapes; Beta needs a positive parameter
                let a = a.max(f64::MIN_POSITIVE);
                let yi = Beta::new(a, 2.0).map_err(|e| PrxError::domain(e.to_string()))?.sample(&mut rng);
                x.push(xi);
                y.push(yi);
            }
            Simulated { data: Dataset::univariate(x, y)?, truth: Truth::BetaConcentration, is_null: None }
        }
        ScenarioKind::HighDim20 => {
            let mut x = Vec::with_capacity(n * HIGH_DIM);
            for _ in 0..n {
                let row: Vec<f64> = (0..HIGH_DIM).map(|_| rng.gen()).collect();
                let theta = high_dim_mean(&row) + high_dim_sd(&row) * std.sample(&mut rng);
                x.extend_from_slice(&row);
                y.push(theta + std.sample(&mut rng));
            }
            Simulated { data: Dataset::from_flat(HIGH_DIM, x, y)?, truth: Truth::HighDim, is_null: None }
        }
        ScenarioKind::TwoGroupsFdr => {
            let mut x = Vec::with_capacity(n);
            let mut nulls = Vec::with_capacity(n);
            for _ in 0..n {
                let xi: f64 = rng.gen();
                let null = rng.gen_bool(two_groups_pi0(xi));
                let u = if null { 0.0 } else { two_groups_mu(xi) + std.sample(&mut rng) };
                x.push(xi);
                nulls.push(null);
                y.push(u + std.sample(&mut rng));
            }
            Simulated { data: Dataset::univariate(x, y)?, truth: Truth::TwoGroups, is_null: Some(nulls) }
        }
        ScenarioKind::SkewSynthetic | ScenarioKind::SymmetricSynthetic => {
            let (alpha, beta) = if s.kind == ScenarioKind::SkewSynthetic { (SKEW_ALPHA, SKEW_BETA) } else { (0.0, 0.0) };
            let mut x = Vec::with_capacity(2 * n);
            for _ in 0..n {
                let x1: f64 = rng.gen();
                let t = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
                let theta = 2.0 * x1 + SKEW_THETA_SD * std.sample(&mut rng);
                // skew-normal draw: δ|U0| + sqrt(1 - δ²) U1
                let shape = skew_shape(alpha, beta, t);
                let delta = shape / (1.0 + shape * shape).sqrt();
                let u0: f64 = std.sample(&mut rng);
                let u1: f64 = std.sample(&mut rng);
                let e = delta * u0.abs() + (1.0 - delta * delta).sqrt() * u1;
                x.push(x1);
                x.push(t);
                y.push(theta + SKEW_PSI * e);
            }
            Simulated {
                data: Dataset::from_flat(2, x, y)?.with_tag_column(1)?,
                truth: Truth::Skew { alpha, beta, psi: SKEW_PSI },
                is_null: None,
            }
        }
    };
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPointKind {
    /// `count` equally spaced values per axis on `[0, 1]` (tensor grid).
    UniformGrid,
    /// The corners `(0..0)` and `(1..1)`, then Sobol points from index 1.
    SobolWithCorners,
    KMeansCenters,
}

/// Deterministic evaluation points on the unit cube.
pub fn eval_points(
    kind: EvalPointKind,
    count: usize,
    dim: usize,
    data: Option<&Dataset>,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(PrxError::usage("evaluation point count must be at least 1"));
    }
    match kind {
        EvalPointKind::UniformGrid => {
            let axis = linspace(0.0, 1.0, count);
            let mut pts: Vec<Vec<f64>> = vec![Vec::new()];
            for _ in 0..dim {
                pts = pts
                    .into_iter()
                    .flat_map(|p| {
                        axis.iter().map(move |a| {
                            let mut q = p.clone();
                            q.push(*a);
                            q
                        })
                    })
                    .collect();
            }
            Ok(pts)
        }
        EvalPointKind::SobolWithCorners => {
            let mut pts = vec![vec![0.0; dim]];
            if count >= 2 {
                pts.push(vec![1.0; dim]);
            }
            if count > 2 {
                let s = crate::sobol::low_discrepancy_points(count - 1, dim)?;
                pts.extend(s.into_iter().skip(1));
            }
            Ok(pts)
        }
        EvalPointKind::KMeansCenters => {
            let data = data.ok_or_else(|| PrxError::usage("k-means evaluation points need data"))?;
            let rows: Vec<Vec<f64>> = data.rows().map(<[f64]>::to_vec).collect();
            kmeans(&rows, count, seed)
        }
    }
}

pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..count)
            .map(|i| if i == count - 1 { hi } else { lo + (hi - lo) * i as f64 / (count - 1) as f64 })
            .collect(),
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by Lloyd iterations.
///
/// Centers of clusters that empty out stay where they were.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if k == 0 || points.len() < k {
        return Err(PrxError::usage(format!("k-means needs 1 <= k <= n, got k = {k}, n = {}", points.len())));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.gen_range(0..points.len() as u64) as usize].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if r < *d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.gen_range(0..points.len() as u64) as usize
        };
        centers.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    let dim = points[0].len();
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..300 {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(points) {
            let best = (0..k)
                .min_by(|&i, &j| sq_dist(p, &centers[i]).total_cmp(&sq_dist(p, &centers[j])))
                .unwrap();
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (a, p) in assign.iter().zip(points) {
            counts[*a] += 1;
            for (s, v) in sums[*a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    Ok(centers)
}
