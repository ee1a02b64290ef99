//! End-to-end density regression: parameter estimation by the
//! pseudo-likelihood on a subsample, then a permutation-averaged fit on all
//! data at the evaluation points.

use crate::data::Dataset;
use crate::error::{PrxError, Result};
use crate::kernels::KernelSpec;
use crate::localization::{LocalizationConfig, DEFAULT_GAMMA};
use crate::measure::{DominatingMeasure, MixingMeasure};
use crate::optim::NelderMeadOptions;
use crate::prmlx::{maximize_prmlx, KernelFamily, PrmlxFit, PrmlxObjective, DEFAULT_SUBSAMPLE};
use crate::recursion::{conditional_density, fit_permuted, FitResult, DEFAULT_N_PERM};
use crate::sim::linspace;

pub const DEFAULT_N_GRID: usize = 200;
pub const DEFAULT_Y_GRID: usize = 401;

/// Bounds override for a free parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeParam {
    pub name: String,
    pub init: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub family: KernelFamily,
    /// Parameters held fixed, by name (`sigma`, `b1`, ...).
    pub fixed: Vec<(String, f64)>,
    /// Free parameters with non-default start or box.
    pub free: Vec<FreeParam>,
    /// Parameters freed with their default start and box.
    pub released: Vec<String>,
    pub gamma: f64,
    pub n_grid: usize,
    /// θ support; defaults to the padded outcome range.
    pub support: Option<(f64, f64)>,
    /// Atom location and its initial mass.
    pub atom: Option<(f64, f64)>,
    pub n_perm: usize,
    pub subsample: usize,
    pub seed: u64,
    pub optimizer: NelderMeadOptions,
}

impl FitOptions {
    pub fn new(family: KernelFamily) -> Self {
        Self {
            family,
            fixed: Vec::new(),
            free: Vec::new(),
            released: Vec::new(),
            gamma: DEFAULT_GAMMA,
            n_grid: DEFAULT_N_GRID,
            support: None,
            atom: None,
            n_perm: DEFAULT_N_PERM,
            subsample: DEFAULT_SUBSAMPLE,
            seed: 0,
            optimizer: NelderMeadOptions::default(),
        }
    }

    pub fn fix(mut self, name: &str, value: f64) -> Self {
        self.fixed.retain(|(n, _)| n != name);
        self.fixed.push((name.to_string(), value));
        self
    }

    /// Initial mixing measure for `y`.
    pub fn initial_measure(&self, y: &[f64]) -> Result<MixingMeasure> {
        let (lo, hi) = match self.support {
            Some(s) => s,
            None => DominatingMeasure::padded_range(y)?,
        };
        let dom = DominatingMeasure::new(lo, hi, self.n_grid, self.atom.map(|a| a.0))?;
        MixingMeasure::uniform(dom, self.atom.map(|a| a.1))
    }

    pub fn objective(&self, data: &Dataset, init: MixingMeasure) -> Result<PrmlxObjective> {
        let mut obj = PrmlxObjective::new(data, self.family, init)?.with_gamma(self.gamma);
        for p in &self.free {
            obj.free(&p.name, p.init, p.lower, p.upper)?;
        }
        for name in &self.released {
            obj.release(name)?;
        }
        for (name, v) in &self.fixed {
            obj.fix(name, *v)?;
        }
        Ok(obj.with_subsample(self.subsample, self.seed))
    }
}

/// Kernel and localization settings, estimated where not fixed.
#[derive(Debug, Clone)]
pub struct Estimated {
    pub kernel: KernelSpec,
    pub localization: LocalizationConfig,
    pub prmlx: Option<PrmlxFit>,
}

pub fn estimate_parameters(data: &Dataset, opts: &FitOptions) -> Result<Estimated> {
    let init = opts.initial_measure(data.y())?;
    let obj = opts.objective(data, init)?;
    if obj.free_names().is_empty() {
        let (kernel, localization) = obj.settings(&[])?;
        return Ok(Estimated { kernel, localization, prmlx: None });
    }
    let fit = maximize_prmlx(&obj, &obj.initial_values(), &opts.optimizer)?;
    log::info!(
        "pseudo-likelihood maximized over {} after {} evaluations: {}",
        fit.names.join(","),
        fit.trace.len(),
        fit.log_value
    );
    Ok(Estimated { kernel: fit.kernel.clone(), localization: fit.localization.clone(), prmlx: Some(fit) })
}

/// Fitted model plus what is needed to evaluate its densities.
#[derive(Debug, Clone)]
pub struct DensityFit {
    pub kernel: KernelSpec,
    pub localization: LocalizationConfig,
    pub prmlx: Option<PrmlxFit>,
    pub init: MixingMeasure,
    pub fit: FitResult,
    pub tag_column: Option<usize>,
}

impl DensityFit {
    /// Default y-grid: 401 points over the fitted θ support.
    pub fn default_y_grid(&self) -> Vec<f64> {
        linspace(self.init.dom.support_lo, self.init.dom.support_hi, DEFAULT_Y_GRID)
    }

    pub fn density(&self, eval_index: usize, y_grid: &[f64]) -> Result<Vec<f64>> {
        let x = self.fit.eval_points.get(eval_index).ok_or_else(|| {
            PrxError::usage(format!("evaluation index {eval_index} out of range"))
        })?;
        let tag = self.tag_column.map(|c| x[c]);
        conditional_density(&self.fit, eval_index, &self.kernel, y_grid, tag)
    }

    pub fn densities(&self, y_grid: &[f64]) -> Result<Vec<Vec<f64>>> {
        (0..self.fit.eval_points.len()).map(|i| self.density(i, y_grid)).collect()
    }
}

/// Fits with already chosen kernel and localization settings.
pub fn fit_with(
    data: &Dataset,
    eval_points: &[Vec<f64>],
    est: Estimated,
    opts: &FitOptions,
) -> Result<DensityFit> {
    let init = opts.initial_measure(data.y())?;
    let fit = fit_permuted(data, eval_points, &est.localization, &est.kernel, &init, opts.n_perm, opts.seed)?;
    Ok(DensityFit {
        kernel: est.kernel,
        localization: est.localization,
        prmlx: est.prmlx,
        init,
        fit,
        tag_column: data.tag_column(),
    })
}

/// Estimates free parameters, then fits at `eval_points`.
pub fn fit_density_regression(data: &Dataset, eval_points: &[Vec<f64>], opts: &FitOptions) -> Result<DensityFit> {
    let est = estimate_parameters(data, opts)?;
    fit_with(data, eval_points, est, opts)
}
