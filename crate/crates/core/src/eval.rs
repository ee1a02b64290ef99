//! Scoring conditional density estimates: quantiles, check-loss
//! cross-validation, integrated squared error and a kernel baseline.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::Dataset;
use crate::error::{PrxError, Result};
use crate::kernels::normal_pdf;
use crate::par;
use crate::pipeline::{fit_density_regression, FitOptions};
use crate::recursion::fisher_yates;
use crate::sim::linspace;

pub const DEFAULT_TAUS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

fn trapezoid_cdf(density: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut c = Vec::with_capacity(grid.len());
    c.push(0.0);
    for k in 1..grid.len() {
        let prev = c[k - 1];
        c.push(prev + 0.5 * (density[k] + density[k - 1]) * (grid[k] - grid[k - 1]));
    }
    c
}

/// Integral of `f` over `grid` by the trapezoid rule.
pub fn trapezoid(f: &[f64], grid: &[f64]) -> f64 {
    trapezoid_cdf(f, grid).last().copied().unwrap_or(0.0)
}

/// τ-quantile of a density tabulated on a sorted grid.
///
/// The trapezoid CDF is normalized by its total and inverted by linear
/// interpolation between grid points.
pub fn quantile_from_density(density: &[f64], y_grid: &[f64], tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(PrxError::domain(format!("tau must lie in (0, 1), got {tau}")));
    }
    if density.len() != y_grid.len() || y_grid.len() < 2 {
        return Err(PrxError::usage("density and grid must have equal length of at least 2"));
    }
    if density.iter().any(|d| !(*d >= 0.0)) {
        return Err(PrxError::domain("density values must be nonnegative"));
    }
    let cdf = trapezoid_cdf(density, y_grid);
    let total = *cdf.last().unwrap();
    if !(total > 0.0 && total.is_finite()) {
        return Err(PrxError::domain("density has no mass on the grid"));
    }
    let target = tau * total;
    let k = cdf.partition_point(|c| *c < target).max(1);
    let (c0, c1) = (cdf[k - 1], cdf[k]);
    let t = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.0 };
    Ok(y_grid[k - 1] + t * (y_grid[k] - y_grid[k - 1]))
}

/// `ρ_τ(r) = r (τ - 1{r < 0})`.
pub fn check_loss(r: f64, tau: f64) -> f64 {
    r * (tau - if r < 0.0 { 1.0 } else { 0.0 })
}

/// Mean check loss of `y - q̂` over `(y, q̂)` pairs.
pub fn check_score(pairs: &[(f64, f64)], tau: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(PrxError::usage("check score needs at least one pair"));
    }
    Ok(pairs.iter().map(|(y, q)| check_loss(y - q, tau)).sum::<f64>() / pairs.len() as f64)
}

/// Mean over evaluation points of `∫ (est - truth)² dy` on `y_grid`.
pub fn mise(est: &[Vec<f64>], truth: &[Vec<f64>], y_grid: &[f64]) -> Result<f64> {
    if est.len() != truth.len() || est.is_empty() {
        return Err(PrxError::usage("estimate and truth must have the same nonzero number of points"));
    }
    let mut total = 0.0;
    for (e, t) in est.iter().zip(truth) {
        if e.len() != y_grid.len() || t.len() != y_grid.len() {
            return Err(PrxError::usage("every density must be tabulated on the y-grid"));
        }
        let sq: Vec<f64> = e.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).collect();
        total += trapezoid(&sq, y_grid);
    }
    Ok(total / est.len() as f64)
}

/// Kernel conditional density estimate at `target_x`:
/// `Σ K_{h2}(x - x_i) K_{h1}(y - y_i) / Σ K_{h2}(x - x_i)` with Gaussian kernels.
pub fn kcde(data: &Dataset, target_x: &[f64], y_grid: &[f64], h1: f64, h2: f64) -> Result<Vec<f64>> {
    if !(h1 > 0.0 && h2 > 0.0 && h1.is_finite() && h2.is_finite()) {
        return Err(PrxError::domain(format!("bandwidths must be positive and finite, got h1 = {h1}, h2 = {h2}")));
    }
    if target_x.len() != data.dim() {
        return Err(PrxError::usage("target dimension does not match the data"));
    }
    let w: Vec<f64> = data
        .rows()
        .map(|x| {
            let d2: f64 = x.iter().zip(target_x).map(|(a, b)| (a - b) * (a - b)).sum();
            (-d2 / (2.0 * h2 * h2)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        log::warn!("no observation has weight at the target; returning a flat density");
        let width = y_grid.last().copied().unwrap_or(1.0) - y_grid.first().copied().unwrap_or(0.0);
        let level = if width > 0.0 { 1.0 / width } else { 0.0 };
        return Ok(vec![level; y_grid.len()]);
    }
    Ok(y_grid
        .iter()
        .map(|y| w.iter().zip(data.y()).map(|(wi, yi)| wi * normal_pdf(*y, *yi, h1)).sum::<f64>() / total)
        .collect())
}

/// Fold layout and τ levels for check-score cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct CvPlan {
    pub n_folds: usize,
    pub tau_levels: Vec<f64>,
    pub seed: u64,
}

impl Default for CvPlan {
    fn default() -> Self {
        Self { n_folds: 5, tau_levels: DEFAULT_TAUS.to_vec(), seed: 0 }
    }
}

impl CvPlan {
    /// Seeded shuffle cut into contiguous blocks; sizes differ by at most one.
    pub fn folds(&self, n: usize) -> Result<Vec<Vec<usize>>> {
        if self.n_folds < 2 || n < self.n_folds {
            return Err(PrxError::usage(format!("need 2 <= n_folds <= n, got {} folds for n = {n}", self.n_folds)));
        }
        if let Some(t) = self.tau_levels.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(PrxError::domain(format!("tau levels must lie in (0, 1), got {t}")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        fisher_yates(&mut idx, &mut ChaCha20Rng::seed_from_u64(self.seed));
        let base = n / self.n_folds;
        let extra = n % self.n_folds;
        let mut out = Vec::with_capacity(self.n_folds);
        let mut start = 0;
        for f in 0..self.n_folds {
            let len = base + usize::from(f < extra);
            out.push(idx[start..start + len].to_vec());
            start += len;
        }
        Ok(out)
    }
}

/// A conditional quantile predictor that can be refit on each fold.
pub trait QuantileMethod: Sync {
    fn name(&self) -> String;

    /// Quantiles at each row of `test`, indexed `[row][tau]`.
    fn predict(&self, train: &Dataset, test: &Dataset, taus: &[f64]) -> Result<Vec<Vec<f64>>>;
}

/// Quantiles of the density regression fit, one evaluation point per test row.
#[derive(Debug, Clone)]
pub struct PrxQuantiles {
    pub options: FitOptions,
}

impl QuantileMethod for PrxQuantiles {
    fn name(&self) -> String {
        "prx".into()
    }

    fn predict(&self, train: &Dataset, test: &Dataset, taus: &[f64]) -> Result<Vec<Vec<f64>>> {
        let pts: Vec<Vec<f64>> = test.rows().map(<[f64]>::to_vec).collect();
        let fit = fit_density_regression(train, &pts, &self.options)?;
        let grid = fit.default_y_grid();
        (0..pts.len())
            .map(|i| {
                let d = fit.density(i, &grid)?;
                taus.iter().map(|t| quantile_from_density(&d, &grid, *t)).collect()
            })
            .collect()
    }
}

/// Kernel conditional density quantiles with fixed bandwidths.
#[derive(Debug, Clone, Copy)]
pub struct KcdeQuantiles {
    pub h1: f64,
    pub h2: f64,
}

impl QuantileMethod for KcdeQuantiles {
    fn name(&self) -> String {
        "kcde".into()
    }

    fn predict(&self, train: &Dataset, test: &Dataset, taus: &[f64]) -> Result<Vec<Vec<f64>>> {
        let y = train.y();
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min) - 4.0 * self.h1;
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 4.0 * self.h1;
        let grid = linspace(lo, hi, 801);
        test.rows()
            .map(|x| {
                let d = kcde(train, x, &grid, self.h1, self.h2)?;
                taus.iter().map(|t| quantile_from_density(&d, &grid, *t)).collect()
            })
            .collect()
    }
}

/// Empirical τ-quantiles of the training outcomes, ignoring covariates.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantQuantiles;

/// Lower empirical quantile: the smallest `y` with at least `τ n` values at or below it.
pub fn empirical_quantile(y: &[f64], tau: f64) -> f64 {
    let mut s = y.to_vec();
    s.sort_by(f64::total_cmp);
    let k = ((tau * s.len() as f64).ceil() as usize).clamp(1, s.len());
    s[k - 1]
}

impl QuantileMethod for ConstantQuantiles {
    fn name(&self) -> String {
        "constant".into()
    }

    fn predict(&self, train: &Dataset, test: &Dataset, taus: &[f64]) -> Result<Vec<Vec<f64>>> {
        let q: Vec<f64> = taus.iter().map(|t| empirical_quantile(train.y(), *t)).collect();
        Ok(vec![q; test.len()])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvRow {
    pub method: String,
    pub tau: f64,
    pub fold: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CvTable {
    pub rows: Vec<CvRow>,
}

impl CvTable {
    /// Fold-averaged score per `(method, tau)`, in first-seen order.
    pub fn summary(&self) -> Vec<(String, f64, f64)> {
        let mut keys: Vec<(String, f64)> = Vec::new();
        for r in &self.rows {
            if !keys.iter().any(|(m, t)| *m == r.method && *t == r.tau) {
                keys.push((r.method.clone(), r.tau));
            }
        }
        keys.into_iter()
            .map(|(m, t)| {
                let s: Vec<f64> = self.rows.iter().filter(|r| r.method == m && r.tau == t).map(|r| r.score).collect();
                let mean = s.iter().sum::<f64>() / s.len() as f64;
                (m, t, mean)
            })
            .collect()
    }

    pub fn mean_score(&self, method: &str, tau: f64) -> Option<f64> {
        self.summary().into_iter().find(|(m, t, _)| m == method && *t == tau).map(|(_, _, s)| s)
    }

    /// `method,tau,fold,score` rows; fold-averaged rows use fold `mean`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "method,tau,fold,score")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.method, r.tau, r.fold, r.score)?;
        }
        for (m, t, s) in self.summary() {
            writeln!(out, "{m},{t},mean,{s}")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Check scores per fold, τ and method.
pub fn cross_validate(data: &Dataset, plan: &CvPlan, methods: &[&dyn QuantileMethod]) -> Result<CvTable> {
    let folds = plan.folds(data.len())?;
    let jobs: Vec<(usize, usize)> = (0..methods.len()).flat_map(|m| (0..folds.len()).map(move |f| (m, f))).collect();
    let results = par::map_slice(&jobs, |&(m, f)| -> Result<Vec<CvRow>> {
        let test_idx = &folds[f];
        let mut train_idx: Vec<usize> = folds.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, v)| v.iter().copied()).collect();
        train_idx.sort_unstable();
        let mut test_sorted = test_idx.clone();
        test_sorted.sort_unstable();
        let train = data.select(&train_idx);
        let test = data.select(&test_sorted);
        let q = methods[m].predict(&train, &test, &plan.tau_levels)?;
        plan.tau_levels
            .iter()
            .enumerate()
            .map(|(ti, tau)| {
                let pairs: Vec<(f64, f64)> = test.y().iter().zip(&q).map(|(y, qs)| (*y, qs[ti])).collect();
                Ok(CvRow { method: methods[m].name(), tau: *tau, fold: f, score: check_score(&pairs, *tau)? })
            })
            .collect()
    });
    let mut table = CvTable::default();
    for r in results {
        table.rows.extend(r?);
    }
    Ok(table)
}
