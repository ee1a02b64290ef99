//! Covariate-dependent multiple testing with a spike-and-slab mixing measure.
//!
//! `z | x` is modelled as `∫ N(z; θ + u, σ²) Ψ(du | x)` where `Ψ` has an atom
//! at `u = 0` carrying the null proportion `π0(x)`. The local false discovery
//! rate `π0(x) f0(z) / m(z | x)` is thresholded by a step-up rule on its
//! running mean.

use std::io::Write;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{PrxError, Result};
use crate::kernels::{normal_pdf, std_normal_sf, KernelSpec};
use crate::localization::LocalizationConfig;
use crate::measure::{DominatingMeasure, MixingMeasure, UNDERFLOW_FLOOR};
use crate::optim::NelderMeadOptions;
use crate::par;
use crate::pipeline::{estimate_parameters, FitOptions, FreeParam};
use crate::prmlx::{KernelFamily, DEFAULT_SUBSAMPLE};
use crate::recursion::{fit_permuted, measure_density, DEFAULT_N_PERM};
use crate::sim::{generate, linspace, Scenario, ScenarioKind};

pub const SLAB: (f64, f64) = (-8.0, 8.0);
pub const PI0_INIT: f64 = 0.75;
pub const TESTING_N_GRID: usize = 401;
pub const PI0_GRID: usize = 21;

/// Null component `N(theta, sigma²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullSpec {
    pub theta: f64,
    pub sigma: f64,
}

impl Default for NullSpec {
    fn default() -> Self {
        Self { theta: 0.0, sigma: 1.0 }
    }
}

impl NullSpec {
    pub fn kernel(&self) -> KernelSpec {
        KernelSpec::NullPointGaussian { theta: self.theta, sigma: self.sigma }
    }

    pub fn density(&self, z: f64) -> f64 {
        normal_pdf(z, self.theta, self.sigma)
    }
}

/// Uniform slab on `[-8, 8]` with an atom at 0 of mass `pi0`.
pub fn spike_slab_init(n_grid: usize, pi0: f64) -> Result<MixingMeasure> {
    let dom = DominatingMeasure::new(SLAB.0, SLAB.1, n_grid, Some(0.0))?;
    MixingMeasure::uniform(dom, Some(pi0))
}

#[derive(Debug, Clone)]
pub struct TwoGroupsFit {
    pub null: NullSpec,
    pub localization: LocalizationConfig,
    /// Evaluation grid for plotting `π0(x)`.
    pub grid_points: Vec<Vec<f64>>,
    pub grid_measures: Vec<MixingMeasure>,
    /// Measure localized at each observation's own covariate.
    pub observation_measures: Vec<MixingMeasure>,
    data: Dataset,
    init: MixingMeasure,
    n_perm: usize,
    seed: u64,
}

fn pi0_grid_points(p: usize) -> Vec<Vec<f64>> {
    // along the diagonal of the unit cube when there are several covariates
    linspace(0.0, 1.0, PI0_GRID).into_iter().map(|t| vec![t; p]).collect()
}

/// Fits the two-groups mixture at a 21-point grid and at every observation.
pub fn fit_two_groups(
    data: &Dataset,
    null: NullSpec,
    cfg: &LocalizationConfig,
    init: &MixingMeasure,
    n_perm: usize,
    seed: u64,
) -> Result<TwoGroupsFit> {
    if init.dom.atom != Some(0.0) {
        return Err(PrxError::usage("two-groups initial measure needs an atom at 0"));
    }
    if !(null.sigma > 0.0 && null.sigma.is_finite() && null.theta.is_finite()) {
        return Err(PrxError::domain(format!("null sigma must be positive, got {}", null.sigma)));
    }
    let kernel = null.kernel();
    let grid_points = pi0_grid_points(data.dim());
    let grid = fit_permuted(data, &grid_points, cfg, &kernel, init, n_perm, seed)?;

    // one recursion target per distinct covariate value
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data.row(a).iter().zip(data.row(b)).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    let mut targets: Vec<Vec<f64>> = Vec::new();
    let mut target_of = vec![0; data.len()];
    for &i in &order {
        if targets.last().map_or(true, |t| t.as_slice() != data.row(i)) {
            targets.push(data.row(i).to_vec());
        }
        target_of[i] = targets.len() - 1;
    }
    let obs = fit_permuted(data, &targets, cfg, &kernel, init, n_perm, seed)?;
    let observation_measures = target_of.iter().map(|&t| obs.measures[t].clone()).collect();

    Ok(TwoGroupsFit {
        null,
        localization: cfg.clone(),
        grid_points,
        grid_measures: grid.measures,
        observation_measures,
        data: data.clone(),
        init: init.clone(),
        n_perm,
        seed,
    })
}

/// `π0 f0 / m`, clamped to `[0, 1]`.
pub fn lfdr_value(pi0: f64, f0: f64, m: f64) -> f64 {
    if !(m >= UNDERFLOW_FLOOR) {
        log::warn!("mixture density underflows; local fdr set to 1");
        return 1.0;
    }
    let l = pi0 * f0 / m;
    if l > 1.05 {
        log::warn!("local fdr {l} exceeds 1 before clamping; the fit may be poor");
    }
    l.clamp(0.0, 1.0)
}

impl TwoGroupsFit {
    pub fn pi0_grid(&self) -> Vec<f64> {
        self.grid_measures.iter().map(|m| m.atom_mass.unwrap_or(0.0)).collect()
    }

    pub fn pi0_observations(&self) -> Vec<f64> {
        self.observation_measures.iter().map(|m| m.atom_mass.unwrap_or(0.0)).collect()
    }

    fn lfdr_with(&self, measure: &MixingMeasure, z: f64) -> Result<f64> {
        let m = measure_density(measure, &self.null.kernel(), &[z], None)?[0];
        Ok(lfdr_value(measure.atom_mass.unwrap_or(0.0), self.null.density(z), m))
    }

    /// Local fdr of every observation at its own covariate.
    pub fn observation_lfdr(&self) -> Result<Vec<f64>> {
        self.observation_measures
            .iter()
            .zip(self.data.y())
            .map(|(m, z)| self.lfdr_with(m, *z))
            .collect()
    }

    /// Local fdr at an arbitrary `(z, x)`; a fresh recursion target is run
    /// when `x` is neither an observation nor a grid point.
    pub fn local_fdr(&self, z: f64, x: &[f64]) -> Result<f64> {
        if let Some(i) = (0..self.data.len()).find(|&i| self.data.row(i) == x) {
            return self.lfdr_with(&self.observation_measures[i], z);
        }
        if let Some(i) = self.grid_points.iter().position(|g| g.as_slice() == x) {
            return self.lfdr_with(&self.grid_measures[i], z);
        }
        let fit = fit_permuted(&self.data, &[x.to_vec()], &self.localization, &self.null.kernel(), &self.init, self.n_perm, self.seed)?;
        self.lfdr_with(&fit.measures[0], z)
    }
}

/// Rejects the `k*` smallest local fdrs, `k* = max{k : mean(ℓ_(1..k)) < α}`,
/// together with any ties at `ℓ_(k*)`.
pub fn stepup_reject(lfdrs: &[f64], alpha: f64) -> Vec<bool> {
    let mut sorted: Vec<f64> = lfdrs.iter().map(|l| if l.is_nan() { 1.0 } else { *l }).collect();
    sorted.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    let mut k_star = 0;
    for (k, l) in sorted.iter().enumerate() {
        sum += l;
        if sum / ((k + 1) as f64) < alpha {
            k_star = k + 1;
        }
    }
    if k_star == 0 {
        return vec![false; lfdrs.len()];
    }
    let threshold = sorted[k_star - 1];
    lfdrs.iter().map(|l| !l.is_nan() && *l <= threshold).collect()
}

/// Benjamini–Hochberg step-up at level `α`.
pub fn bh_reject(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let n = p_values.len();
    if n == 0 || !(alpha > 0.0) {
        return vec![false; n];
    }
    let mut sorted: Vec<f64> = p_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = (1..=n).rev().find(|&k| sorted[k - 1] <= k as f64 * alpha / n as f64);
    match k {
        None => vec![false; n],
        Some(k) => {
            let threshold = sorted[k - 1];
            p_values.iter().map(|p| *p <= threshold).collect()
        }
    }
}

/// Two-sided p-value `2 (1 - Φ(|z|))`.
pub fn p_from_z(z: f64) -> f64 {
    2.0 * std_normal_sf(z.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdrOptions {
    pub null: NullSpec,
    pub n_perm: usize,
    pub n_grid: usize,
    pub pi0_init: f64,
    /// Fixed bandwidth; `None` estimates it by the pseudo-likelihood.
    pub bandwidth: Option<f64>,
    /// Estimate the null location and scale along with the bandwidth,
    /// starting from `null`.
    pub estimate_null: bool,
    pub subsample: usize,
    pub optimizer: NelderMeadOptions,
}

impl Default for FdrOptions {
    fn default() -> Self {
        Self {
            null: NullSpec::default(),
            n_perm: DEFAULT_N_PERM,
            n_grid: TESTING_N_GRID,
            pi0_init: PI0_INIT,
            bandwidth: None,
            estimate_null: false,
            subsample: DEFAULT_SUBSAMPLE,
            optimizer: NelderMeadOptions::default(),
        }
    }
}

/// Decisions for one `(z, x)` dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct FdrDecisions {
    pub null: NullSpec,
    pub bandwidths: Vec<f64>,
    pub lfdr: Vec<f64>,
    pub pi0: Vec<f64>,
    pub rejected_prx: Vec<bool>,
    pub p_values: Vec<f64>,
    pub rejected_bh: Vec<bool>,
    pub pi0_grid: Vec<(Vec<f64>, f64)>,
}

/// Estimates (or takes) the bandwidths, fits, and applies both rules.
pub fn run_fdr(data: &Dataset, alpha: f64, opts: &FdrOptions, seed: u64) -> Result<FdrDecisions> {
    let init = spike_slab_init(opts.n_grid, opts.pi0_init)?;
    let (null, cfg) = match (opts.bandwidth, opts.estimate_null) {
        (Some(b), false) => (opts.null, LocalizationConfig::isotropic(data.dim(), b)?),
        (bandwidth, estimate_null) => {
            let mut fo = FitOptions {
                support: Some(SLAB),
                atom: Some((0.0, opts.pi0_init)),
                n_grid: opts.n_grid,
                subsample: opts.subsample,
                seed,
                optimizer: opts.optimizer.clone(),
                ..FitOptions::new(KernelFamily::NullPointGaussian)
            };
            if estimate_null {
                fo.free = vec![
                    FreeParam { name: "theta".into(), init: opts.null.theta, lower: opts.null.theta - 1.0, upper: opts.null.theta + 1.0 },
                    FreeParam { name: "sigma".into(), init: opts.null.sigma, lower: 0.5 * opts.null.sigma, upper: 2.0 * opts.null.sigma },
                ];
            } else {
                fo = fo.fix("theta", opts.null.theta).fix("sigma", opts.null.sigma);
            }
            if let Some(b) = bandwidth {
                for j in 0..data.dim() {
                    fo = fo.fix(&format!("b{}", j + 1), b);
                }
            }
            let est = estimate_parameters(data, &fo)?;
            let null = match est.kernel {
                KernelSpec::NullPointGaussian { theta, sigma } => NullSpec { theta, sigma },
                _ => unreachable!("two-groups fits use the null-point kernel"),
            };
            (null, est.localization)
        }
    };
    let fit = fit_two_groups(data, null, &cfg, &init, opts.n_perm, seed)?;
    let lfdr = fit.observation_lfdr()?;
    let p_values: Vec<f64> = data.y().iter().map(|z| p_from_z(*z)).collect();
    Ok(FdrDecisions {
        null,
        bandwidths: cfg.bandwidths.clone(),
        rejected_prx: stepup_reject(&lfdr, alpha),
        rejected_bh: bh_reject(&p_values, alpha),
        pi0: fit.pi0_observations(),
        pi0_grid: fit.grid_points.iter().cloned().zip(fit.pi0_grid()).collect(),
        lfdr,
        p_values,
    })
}

impl FdrDecisions {
    /// `z,x1..xp,lfdr,rejected_prx,p_value,rejected_bh` rows.
    pub fn write_csv(&self, path: &Path, data: &Dataset) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let xs: Vec<String> = (1..=data.dim()).map(|j| format!("x{j}")).collect();
        writeln!(out, "z,{},lfdr,rejected_prx,p_value,rejected_bh", xs.join(","))?;
        for i in 0..data.len() {
            let x: Vec<String> = data.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                data.y()[i],
                x.join(","),
                self.lfdr[i],
                u8::from(self.rejected_prx[i]),
                self.p_values[i],
                u8::from(self.rejected_bh[i])
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

/// False discovery proportion and power of a rejection set.
pub fn fdp_and_power(rejected: &[bool], is_null: &[bool]) -> (f64, f64) {
    let r = rejected.iter().filter(|r| **r).count();
    let false_r = rejected.iter().zip(is_null).filter(|(r, n)| **r && **n).count();
    let alts = is_null.iter().filter(|n| !**n).count();
    let fdp = if r == 0 { 0.0 } else { false_r as f64 / r as f64 };
    let power = if alts == 0 { 0.0 } else { (r - false_r) as f64 / alts as f64 };
    (fdp, power)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub seed: u64,
    pub bandwidth: f64,
    pub fdp_prx: f64,
    pub power_prx: f64,
    pub fdp_bh: f64,
    pub power_bh: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdrSummary {
    pub fdr_prx: f64,
    pub power_prx: f64,
    pub fdr_bh: f64,
    pub power_bh: f64,
    pub replicates: Vec<ReplicateResult>,
}

/// Seed of replicate `r` under master seed `seed`.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    seed ^ (r as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Averages false discovery proportions and power over simulated
/// two-groups replicates.
pub fn fdr_simulation(n_replicates: usize, n: usize, alpha: f64, seed: u64, opts: &FdrOptions) -> Result<FdrSummary> {
    if n_replicates == 0 {
        return Err(PrxError::usage("need at least one replicate"));
    }
    let reps = par::map_range(n_replicates, |r| -> Result<ReplicateResult> {
        let s = replicate_seed(seed, r);
        let sim = generate(&Scenario { kind: ScenarioKind::TwoGroupsFdr, n, seed: s })?;
        let nulls = sim.is_null.expect("two-groups scenario records nulls");
        let d = run_fdr(&sim.data, alpha, opts, s)?;
        let (fdp_prx, power_prx) = fdp_and_power(&d.rejected_prx, &nulls);
        let (fdp_bh, power_bh) = fdp_and_power(&d.rejected_bh, &nulls);
        log::info!("replicate {r}: b = {:.3}, prx fdp {fdp_prx:.3} power {power_prx:.3}, bh fdp {fdp_bh:.3} power {power_bh:.3}", d.bandwidths[0]);
        Ok(ReplicateResult { seed: s, bandwidth: d.bandwidths[0], fdp_prx, power_prx, fdp_bh, power_bh })
    });
    let replicates: Vec<ReplicateResult> = reps.into_iter().collect::<Result<_>>()?;
    let mean = |f: fn(&ReplicateResult) -> f64| replicates.iter().map(f).sum::<f64>() / replicates.len() as f64;
    Ok(FdrSummary {
        fdr_prx: mean(|r| r.fdp_prx),
        power_prx: mean(|r| r.power_prx),
        fdr_bh: mean(|r| r.fdp_bh),
        power_bh: mean(|r| r.power_bh),
        replicates,
    })
}
