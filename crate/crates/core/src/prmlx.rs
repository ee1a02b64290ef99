//! Pseudo-likelihood for kernel parameters and localization bandwidths.
//!
//! `log L = Σ_i log m_{i-1}(y_i | x_i)`, where each factor comes from a
//! recursion localized at `x_i` over the first `i - 1` observations in file
//! order. All `n` per-target recursions advance together in one sweep over
//! the data, blocked so a block of targets shares each kernel row.

use std::io::Write;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{PrxError, Result};
use crate::kernels::KernelSpec;
use crate::localization::{LocalizationConfig, DEFAULT_GAMMA};
use crate::measure::{sample_sd, MixingMeasure, UNDERFLOW_FLOOR};
use crate::optim::{multistart, NelderMeadOptions, Transform};
use crate::par;
use crate::recursion::{dot, fisher_yates, update_nodes, KernelTable};

pub const DEFAULT_SUBSAMPLE: usize = 2000;
pub const BANDWIDTH_INIT: f64 = 10.0;
pub const BANDWIDTH_MAX: f64 = 500.0;

const BLOCK: usize = 64;

/// Value of the objective plus numerical diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrmlxValue {
    pub log_value: f64,
    /// Factors below the underflow floor; each contributed `log(1e-300)`.
    pub underflows: usize,
    /// Recursion updates skipped inside the per-target runs.
    pub skipped_updates: usize,
}

/// Evaluates the objective for fixed kernel and localization settings.
pub fn log_prmlx(
    data: &Dataset,
    spec: &KernelSpec,
    cfg: &LocalizationConfig,
    init: &MixingMeasure,
) -> Result<PrmlxValue> {
    if data.is_empty() {
        return Err(PrxError::usage("objective needs at least one observation"));
    }
    if data.dim() != cfg.dim() {
        return Err(PrxError::usage(format!(
            "data has {} covariates but {} bandwidths were given",
            data.dim(),
            cfg.dim()
        )));
    }
    let table = KernelTable::build(data, spec, &init.dom)?;
    let init_q = init.node_masses();
    let init_mass: f64 = init_q.iter().sum();
    let g = init_q.len();
    let n = data.len();
    let n_blocks = n.div_ceil(BLOCK);

    let blocks = par::map_range(n_blocks, |b| {
        let lo = b * BLOCK;
        let hi = (lo + BLOCK).min(n);
        let width = hi - lo;
        let mut q: Vec<f64> = init_q.repeat(width);
        let mut mass = vec![init_mass; width];
        let mut s = vec![0.0; width];
        let mut logs = vec![0.0; width];
        let mut underflows = 0;
        let mut skipped = 0;
        for j in 0..hi {
            let k = table.row(j);
            if j >= lo {
                let t = j - lo;
                let m = dot(k, &q[t * g..(t + 1) * g]) / mass[t];
                logs[t] = if m >= UNDERFLOW_FLOOR {
                    m.ln()
                } else {
                    underflows += 1;
                    UNDERFLOW_FLOOR.ln()
                };
            }
            let xj = data.row(j);
            for i in lo.max(j + 1)..hi {
                let t = i - lo;
                let beta = cfg.affinity(xj, data.row(i));
                s[t] += beta;
                let v = beta * cfg.decay(s[t]);
                if update_nodes(&mut q[t * g..(t + 1) * g], &mut mass[t], k, v).is_none() {
                    skipped += 1;
                }
            }
        }
        (logs, underflows, skipped)
    });

    let mut out = PrmlxValue { log_value: 0.0, underflows: 0, skipped_updates: 0 };
    for (logs, u, s) in blocks {
        for l in logs {
            out.log_value += l;
        }
        out.underflows += u;
        out.skipped_updates += s;
    }
    if out.underflows > 0 {
        log::debug!("{} objective factors underflowed", out.underflows);
    }
    Ok(out)
}

/// Kernel families whose unmixed parameters can be estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    Gaussian,
    SkewNormal,
    NullPointGaussian,
}

impl KernelFamily {
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            KernelFamily::Gaussian => &["sigma"],
            KernelFamily::SkewNormal => &["alpha", "beta", "psi"],
            KernelFamily::NullPointGaussian => &["theta", "sigma"],
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "gaussian" => Ok(KernelFamily::Gaussian),
            "skew-normal" => Ok(KernelFamily::SkewNormal),
            "null-gaussian" => Ok(KernelFamily::NullPointGaussian),
            other => Err(PrxError::usage(format!(
                "unknown kernel family {other:?}; expected gaussian, skew-normal or null-gaussian"
            ))),
        }
    }

    pub fn build(&self, values: &[f64]) -> KernelSpec {
        match self {
            KernelFamily::Gaussian => KernelSpec::Gaussian { sigma: values[0] },
            KernelFamily::SkewNormal => KernelSpec::SkewNormal { alpha: values[0], beta: values[1], psi: values[2] },
            KernelFamily::NullPointGaussian => KernelSpec::NullPointGaussian { theta: values[0], sigma: values[1] },
        }
    }
}

/// One kernel parameter or bandwidth in the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    /// Fixed value, or the default starting value of a free parameter.
    pub value: f64,
    pub free: bool,
    pub lower: f64,
    pub upper: f64,
}

impl ParamSlot {
    pub fn transform(&self) -> Transform {
        Transform::for_bounds(self.lower, self.upper)
    }

    fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

/// Objective with a layout of free and fixed parameters.
///
/// Slots hold the kernel parameters in family order followed by the
/// bandwidths `b1..bp`.
#[derive(Debug, Clone)]
pub struct PrmlxObjective {
    data: Dataset,
    family: KernelFamily,
    slots: Vec<ParamSlot>,
    gamma: f64,
    init: MixingMeasure,
}

impl PrmlxObjective {
    /// Default layout: scales in `[sd/100, 2 sd]` starting at `sd/2`, skew
    /// coefficients in `[-20, 20]` from 0, the null location fixed at 0, and
    /// bandwidths in `[0, 500]` starting at `10 / p`.
    pub fn new(data: &Dataset, family: KernelFamily, init: MixingMeasure) -> Result<Self> {
        if data.is_empty() {
            return Err(PrxError::usage("objective needs at least one observation"));
        }
        let sd = sample_sd(data.y());
        let sd = if sd > 0.0 { sd } else { 1.0 };
        let mut slots: Vec<ParamSlot> = family
            .param_names()
            .iter()
            .map(|&name| match name {
                "sigma" | "psi" => ParamSlot { name: name.into(), value: sd / 2.0, free: true, lower: sd / 100.0, upper: 2.0 * sd },
                "theta" => ParamSlot { name: name.into(), value: 0.0, free: false, lower: -sd, upper: sd },
                _ => ParamSlot { name: name.into(), value: 0.0, free: true, lower: -20.0, upper: 20.0 },
            })
            .collect();
        // b = 10 on each of many axes makes every affinity vanish and the
        // objective flat at the start; the start keeps Σ b_j at 10 instead
        let b0 = BANDWIDTH_INIT / data.dim().max(1) as f64;
        for j in 0..data.dim() {
            slots.push(ParamSlot {
                name: format!("b{}", j + 1),
                value: b0,
                free: true,
                lower: 0.0,
                upper: BANDWIDTH_MAX,
            });
        }
        Ok(Self { data: data.clone(), family, slots, gamma: DEFAULT_GAMMA, init })
    }

    /// Restricts the objective to a uniform random subsample of `size`
    /// observations, kept in file order.
    pub fn with_subsample(mut self, size: usize, seed: u64) -> Self {
        if size < self.data.len() {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let mut idx: Vec<usize> = (0..self.data.len()).collect();
            fisher_yates(&mut idx, &mut rng);
            idx.truncate(size);
            idx.sort_unstable();
            self.data = self.data.select(&idx);
        }
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    fn slot_mut(&mut self, name: &str) -> Result<&mut ParamSlot> {
        let valid: Vec<String> = self.slots.iter().map(|s| s.name.clone()).collect();
        self.slots
            .iter_mut()
            .find(|s| s.name == name)
            .ok_or_else(|| PrxError::usage(format!("unknown parameter {name:?}; valid: {}", valid.join(", "))))
    }

    pub fn fix(&mut self, name: &str, value: f64) -> Result<()> {
        let s = self.slot_mut(name)?;
        s.value = value;
        s.free = false;
        Ok(())
    }

    /// Frees `name` with start `value` and box `[lower, upper]`.
    pub fn free(&mut self, name: &str, value: f64, lower: f64, upper: f64) -> Result<()> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(PrxError::domain(format!("bounds for {name} must be finite with lower < upper")));
        }
        if !(lower..=upper).contains(&value) {
            return Err(PrxError::domain(format!("start {value} for {name} lies outside [{lower}, {upper}]")));
        }
        let s = self.slot_mut(name)?;
        *s = ParamSlot { name: name.to_string(), value, free: true, lower, upper };
        Ok(())
    }

    /// Frees `name` keeping its default start and box.
    pub fn release(&mut self, name: &str) -> Result<()> {
        self.slot_mut(name)?.free = true;
        Ok(())
    }

    pub fn free_names(&self) -> Vec<String> {
        self.slots.iter().filter(|s| s.free).map(|s| s.name.clone()).collect()
    }

    pub fn initial_values(&self) -> Vec<f64> {
        self.slots.iter().filter(|s| s.free).map(|s| s.value).collect()
    }

    /// All slot values with `free_values` substituted in order.
    pub fn full_values(&self, free_values: &[f64]) -> Result<Vec<f64>> {
        let n_free = self.slots.iter().filter(|s| s.free).count();
        if free_values.len() != n_free {
            return Err(PrxError::usage(format!("expected {n_free} free values, got {}", free_values.len())));
        }
        let mut it = free_values.iter();
        self.slots
            .iter()
            .map(|s| {
                if s.free {
                    let v = *it.next().unwrap();
                    if !s.contains(v) {
                        return Err(PrxError::domain(format!(
                            "{} = {v} lies outside [{}, {}]",
                            s.name, s.lower, s.upper
                        )));
                    }
                    Ok(v)
                } else {
                    Ok(s.value)
                }
            })
            .collect()
    }

    /// Kernel and localization settings for the given free values.
    pub fn settings(&self, free_values: &[f64]) -> Result<(KernelSpec, LocalizationConfig)> {
        let full = self.full_values(free_values)?;
        let k = self.family.param_names().len();
        let spec = self.family.build(&full[..k]);
        let cfg = LocalizationConfig::new(full[k..].to_vec(), self.gamma)?;
        Ok((spec, cfg))
    }

    pub fn log_prmlx(&self, free_values: &[f64]) -> Result<PrmlxValue> {
        let (spec, cfg) = self.settings(free_values)?;
        log_prmlx(&self.data, &spec, &cfg, &self.init)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub values: Vec<f64>,
    /// `-∞` when the evaluation failed.
    pub log_value: f64,
}

#[derive(Debug, Clone)]
pub struct PrmlxFit {
    pub names: Vec<String>,
    pub argmax: Vec<f64>,
    pub log_value: f64,
    pub underflows: usize,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    pub kernel: KernelSpec,
    pub localization: LocalizationConfig,
}

impl PrmlxFit {
    pub fn write_trace(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "eval,{},log_prmlx", self.names.join(","))?;
        for (i, t) in self.trace.iter().enumerate() {
            let vals: Vec<String> = t.values.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{i},{},{}", vals.join(","), t.log_value)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Maximizes the objective over its free parameters.
///
/// Nelder–Mead runs in transformed coordinates from the start `u0` and
/// then from `u0 + 1` and `u0 - 1` (every coordinate shifted), sharing the
/// evaluation budget in `opts`.
pub fn maximize_prmlx(obj: &PrmlxObjective, init: &[f64], opts: &NelderMeadOptions) -> Result<PrmlxFit> {
    let start = obj.log_prmlx(init).map_err(|e| match e {
        PrxError::Usage(_) => e,
        other => PrxError::Initialization(format!("objective cannot be evaluated at the start: {other}")),
    })?;
    if !start.log_value.is_finite() {
        return Err(PrxError::Initialization(format!("objective is {} at the start", start.log_value)));
    }
    let names = obj.free_names();
    let transforms: Vec<Transform> = obj.slots.iter().filter(|s| s.free).map(ParamSlot::transform).collect();
    let mut trace = vec![TraceEntry { values: init.to_vec(), log_value: start.log_value }];

    let (best_values, best_log, converged) = if names.is_empty() {
        (Vec::new(), start.log_value, true)
    } else {
        let to_values = |u: &[f64]| -> Vec<f64> { transforms.iter().zip(u).map(|(t, ui)| t.from_real(*ui)).collect() };
        let u0: Vec<f64> = transforms.iter().zip(init).map(|(t, v)| t.to_real(*v)).collect();
        let starts = vec![
            u0.clone(),
            u0.iter().map(|u| u + 1.0).collect(),
            u0.iter().map(|u| u - 1.0).collect(),
        ];
        let mut first = true;
        let m = multistart(
            |u| {
                // the start value was already evaluated exactly at `init`
                if first && u == u0.as_slice() {
                    first = false;
                    return -start.log_value;
                }
                let values = clamp_to_slots(obj, to_values(u));
                let lv = obj.log_prmlx(&values).map(|v| v.log_value).unwrap_or(f64::NEG_INFINITY);
                trace.push(TraceEntry { values, log_value: lv });
                -lv
            },
            &starts,
            opts,
        );
        if m.x == u0 {
            (init.to_vec(), start.log_value, m.converged)
        } else {
            (clamp_to_slots(obj, to_values(&m.x)), -m.value, m.converged)
        }
    };
    let value = obj.log_prmlx(&best_values)?;
    let (kernel, localization) = obj.settings(&best_values)?;
    Ok(PrmlxFit {
        names,
        argmax: best_values,
        log_value: best_log,
        underflows: value.underflows,
        trace,
        converged,
        kernel,
        localization,
    })
}

/// Guards against transform round-off pushing a value just outside its box.
fn clamp_to_slots(obj: &PrmlxObjective, values: Vec<f64>) -> Vec<f64> {
    obj.slots
        .iter()
        .filter(|s| s.free)
        .zip(values)
        .map(|(s, v)| v.clamp(s.lower, s.upper))
        .collect()
}

/// Likelihood ratio of two models from their log pseudo-likelihoods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BayesFactor {
    /// `None` when the ratio overflows; `log10` is always available.
    pub ratio: Option<f64>,
    pub log10: f64,
}

pub fn approx_bayes_factor(log_l_a: f64, log_l_b: f64) -> Result<BayesFactor> {
    if !(log_l_a.is_finite() && log_l_b.is_finite()) {
        return Err(PrxError::domain("both log-likelihoods must be finite"));
    }
    let d = log_l_a - log_l_b;
    let r = d.exp();
    if !r.is_finite() {
        log::warn!("Bayes factor overflows; reporting log10 only");
    }
    Ok(BayesFactor { ratio: r.is_finite().then_some(r), log10: d / std::f64::consts::LN_10 })
}
