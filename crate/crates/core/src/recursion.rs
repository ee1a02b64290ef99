//! The weight-localized predictive recursion.
//!
//! At a target covariate `x` the mixing measure is updated once per
//! observation,
//!
//! ```text
//! f_i(θ|x) = (1 - v_i(x)) f_{i-1}(θ|x) + v_i(x) φ(y_i|θ) f_{i-1}(θ|x) / m_{i-1}(y_i|x)
//! ```
//!
//! with weights `v_i(x)` from [`LocalizationConfig`]. With all bandwidths
//! zero the weights are the deterministic `(1 + i)^(-γ)` and this is
//! ordinary predictive recursion.
//!
//! Internally a measure is carried as quadrature masses per node (grid
//! weight × density, the atom as one extra node) together with their sum,
//! so an update is a single multiplicative pass. The represented measure is
//! always the masses divided by their sum, i.e. it is renormalized after
//! every update.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::data::Dataset;
use crate::error::{PrxError, Result};
use crate::kernels::KernelSpec;
use crate::localization::LocalizationConfig;
use crate::measure::{DominatingMeasure, MixingMeasure, UNDERFLOW_FLOOR};
use crate::par;

pub const DEFAULT_N_PERM: usize = 30;

/// Measure at one target after some number of updates.
#[derive(Debug, Clone)]
pub struct RecursionState {
    pub target_x: Vec<f64>,
    pub measure: MixingMeasure,
    /// Number of updates applied (skipped updates are not counted).
    pub step: usize,
    /// Running `Σ log m_{i-1}(y_i | x)`; underflowing factors contribute `log(1e-300)`.
    pub log_predictive_sum: f64,
    pub skipped: usize,
}

/// What happened to a single update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Updated { predictive: f64 },
    /// The predictive density underflowed; the measure was left unchanged.
    Skipped { predictive: f64 },
}

impl RecursionState {
    pub fn new(target_x: Vec<f64>, measure: MixingMeasure) -> Self {
        Self { target_x, measure, step: 0, log_predictive_sum: 0.0, skipped: 0 }
    }

    /// One update with weight `v` and observation `y`.
    pub fn prx_step(&mut self, y: f64, v: f64, spec: &KernelSpec, covariate_tag: Option<f64>) -> Result<StepOutcome> {
        if !(0.0..1.0).contains(&v) {
            return Err(PrxError::domain(format!("update weight must lie in [0, 1), got {v}")));
        }
        let nodes = self.measure.dom.node_locations();
        let k = crate::kernels::eval_kernel(spec, y, &nodes, covariate_tag)?;
        let mut q = self.measure.node_masses();
        let mut mass: f64 = q.iter().sum();
        match update_nodes(&mut q, &mut mass, &k, v) {
            Some(m) => {
                for x in &mut q {
                    *x /= mass;
                }
                self.measure = MixingMeasure::from_node_masses(self.measure.dom.clone(), &q);
                self.step += 1;
                self.log_predictive_sum += m.ln();
                Ok(StepOutcome::Updated { predictive: m })
            }
            None => {
                let m = dot(&k, &q) / mass;
                log::debug!("skipping update at y = {y}: predictive density {m:e} underflows");
                self.skipped += 1;
                self.log_predictive_sum += UNDERFLOW_FLOOR.ln();
                Ok(StepOutcome::Skipped { predictive: m })
            }
        }
    }
}

/// Functional form of [`RecursionState::prx_step`].
pub fn prx_step(
    state: &RecursionState,
    y: f64,
    v: f64,
    spec: &KernelSpec,
    covariate_tag: Option<f64>,
) -> Result<(RecursionState, StepOutcome)> {
    let mut next = state.clone();
    let outcome = next.prx_step(y, v, spec, covariate_tag)?;
    Ok((next, outcome))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Applies one update to node masses `q` whose sum is `mass`.
///
/// Returns the predictive density of the observation under the measure
/// before the update, or `None` (leaving `q` untouched) on underflow.
#[inline]
pub(crate) fn update_nodes(q: &mut [f64], mass: &mut f64, k: &[f64], v: f64) -> Option<f64> {
    let m = dot(k, q) / *mass;
    if !(m >= UNDERFLOW_FLOOR) {
        return None;
    }
    let a = 1.0 - v;
    let c = v / m;
    let n = q.len();
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for ch in 0..chunks {
        let i = 4 * ch;
        q[i] *= a + c * k[i];
        q[i + 1] *= a + c * k[i + 1];
        q[i + 2] *= a + c * k[i + 2];
        q[i + 3] *= a + c * k[i + 3];
        acc[0] += q[i];
        acc[1] += q[i + 1];
        acc[2] += q[i + 2];
        acc[3] += q[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        q[i] *= a + c * k[i];
        tail += q[i];
    }
    *mass = (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail;
    Some(m)
}

/// Kernel values `φ(y_j | θ_g)` for every observation and node.
pub(crate) struct KernelTable {
    n_nodes: usize,
    values: Vec<f64>,
}

impl KernelTable {
    pub(crate) fn build(data: &Dataset, spec: &KernelSpec, dom: &DominatingMeasure) -> Result<Self> {
        spec.validate()?;
        if spec.needs_tag() && data.tag_column().is_none() {
            return Err(PrxError::usage("skew-normal kernel requires a tag column in the data"));
        }
        let nodes = dom.node_locations();
        let n_nodes = nodes.len();
        let mut values = vec![0.0; n_nodes * data.len()];
        for (j, row) in values.chunks_mut(n_nodes).enumerate() {
            spec.fill_row(data.y()[j], &nodes, data.tag(j), row);
        }
        Ok(Self { n_nodes, values })
    }

    #[inline]
    pub(crate) fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.n_nodes..(j + 1) * self.n_nodes]
    }
}

fn check_inputs(data: &Dataset, cfg: &LocalizationConfig, target: &[f64], init: &MixingMeasure) -> Result<()> {
    if data.dim() != cfg.dim() {
        return Err(PrxError::usage(format!(
            "data has {} covariates but {} bandwidths were given",
            data.dim(),
            cfg.dim()
        )));
    }
    if target.len() != cfg.dim() {
        return Err(PrxError::usage(format!(
            "target has dimension {} but there are {} bandwidths",
            target.len(),
            cfg.dim()
        )));
    }
    let mass = init.total_mass();
    if (mass - 1.0).abs() > 1e-8 {
        return Err(PrxError::domain(format!("initial measure has total mass {mass}, expected 1")));
    }
    Ok(())
}

/// Sequential recursion at one target over `order` (indices into the data).
struct TargetRun {
    q: Vec<f64>,
    mass: f64,
    log_predictive_sum: f64,
    steps: usize,
    skipped: usize,
    weight_sum: f64,
}

fn run_order(
    table: &KernelTable,
    betas: &[f64],
    order: &[usize],
    cfg: &LocalizationConfig,
    init_q: &[f64],
) -> TargetRun {
    let mut q = init_q.to_vec();
    let mut mass: f64 = q.iter().sum();
    let mut s = 0.0;
    let mut run = TargetRun { q: Vec::new(), mass: 0.0, log_predictive_sum: 0.0, steps: 0, skipped: 0, weight_sum: 0.0 };
    for &j in order {
        let beta = betas[j];
        s += beta;
        let v = beta * cfg.decay(s);
        run.weight_sum += v;
        match update_nodes(&mut q, &mut mass, table.row(j), v) {
            Some(m) => {
                run.log_predictive_sum += m.ln();
                run.steps += 1;
            }
            None => {
                run.log_predictive_sum += UNDERFLOW_FLOOR.ln();
                run.skipped += 1;
            }
        }
    }
    run.q = q;
    run.mass = mass;
    run
}

fn affinities(data: &Dataset, cfg: &LocalizationConfig, target: &[f64]) -> Vec<f64> {
    data.rows().map(|x| cfg.affinity(x, target)).collect()
}

/// Runs the recursion over the data in its given order at `target_x`.
pub fn run_prx(
    data: &Dataset,
    target_x: &[f64],
    cfg: &LocalizationConfig,
    spec: &KernelSpec,
    init: &MixingMeasure,
) -> Result<RecursionState> {
    if data.is_empty() {
        return Err(PrxError::usage("cannot run the recursion on an empty dataset"));
    }
    check_inputs(data, cfg, target_x, init)?;
    let table = KernelTable::build(data, spec, &init.dom)?;
    let betas = affinities(data, cfg, target_x);
    let order: Vec<usize> = (0..data.len()).collect();
    let run = run_order(&table, &betas, &order, cfg, &init.node_masses());
    if run.skipped > 0 {
        log::warn!("{} of {} updates skipped after predictive underflow", run.skipped, data.len());
    }
    let q: Vec<f64> = run.q.iter().map(|v| v / run.mass).collect();
    Ok(RecursionState {
        target_x: target_x.to_vec(),
        measure: MixingMeasure::from_node_masses(init.dom.clone(), &q),
        step: run.steps,
        log_predictive_sum: run.log_predictive_sum,
        skipped: run.skipped,
    })
}

/// Permutation-averaged recursion output at a set of evaluation points.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub eval_points: Vec<Vec<f64>>,
    pub measures: Vec<MixingMeasure>,
    pub permutations_used: usize,
    pub seed: u64,
    /// Mean over orderings of `Σ_i v_i(x)` at each evaluation point.
    pub effective_weight: Vec<f64>,
    pub skipped_updates: usize,
}

impl FitResult {
    /// Evaluation points whose total weight stays below one; their
    /// estimates are barely moved from the initial guess.
    pub fn low_weight_points(&self) -> Vec<usize> {
        self.effective_weight
            .iter()
            .enumerate()
            .filter(|(_, w)| **w < 1.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Writes one measure CSV per evaluation point, the evaluation points,
    /// and a key=value manifest.
    pub fn write_dir(
        &self,
        dir: &Path,
        spec: &KernelSpec,
        cfg: &LocalizationConfig,
        extra_manifest: &[(String, String)],
    ) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, m) in self.measures.iter().enumerate() {
            let f = std::fs::File::create(dir.join(format!("measure_{i:03}.csv")))?;
            m.write_csv(std::io::BufWriter::new(f))?;
        }
        let mut pts = std::io::BufWriter::new(std::fs::File::create(dir.join("eval_points.csv"))?);
        let p = self.eval_points.first().map_or(0, Vec::len);
        let header: Vec<String> = (0..p).map(|j| format!("x{}", j + 1)).collect();
        writeln!(pts, "index,{},effective_weight", header.join(","))?;
        for (i, x) in self.eval_points.iter().enumerate() {
            let coords: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            writeln!(pts, "{i},{},{}", coords.join(","), self.effective_weight[i])?;
        }
        pts.flush()?;

        let mut entries: Vec<(String, String)> = vec![
            ("seed".into(), self.seed.to_string()),
            ("n_perm".into(), self.permutations_used.to_string()),
            ("kernel".into(), spec.family_name().to_string()),
        ];
        for (k, v) in spec.params() {
            entries.push((format!("kernel.{k}"), v.to_string()));
        }
        entries.push(("bandwidths".into(), join_f64(&cfg.bandwidths)));
        entries.push(("gamma".into(), cfg.gamma.to_string()));
        entries.push(("n_eval_points".into(), self.eval_points.len().to_string()));
        entries.push(("skipped_updates".into(), self.skipped_updates.to_string()));
        entries.extend(extra_manifest.iter().cloned());
        crate::config::write_manifest(&dir.join("manifest.txt"), &entries)
    }
}

pub(crate) fn join_f64(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// `n_perm` seeded orderings of `0..n`.
///
/// Ordering `k` is a Fisher–Yates shuffle driven by ChaCha20 seeded with
/// `seed` on stream `k`, drawing indices as `u64` so the result does not
/// depend on the platform word size.
pub fn permutations(n: usize, n_perm: usize, seed: u64) -> Vec<Vec<usize>> {
    (0..n_perm)
        .map(|k| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut order: Vec<usize> = (0..n).collect();
            fisher_yates(&mut order, &mut rng);
            order
        })
        .collect()
}

pub(crate) fn fisher_yates<T, R: Rng>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i as u64) as usize;
        items.swap(i, j);
    }
}

/// Runs the recursion at each evaluation point over `n_perm` seeded data
/// orderings and averages the resulting measures.
pub fn fit_permuted(
    data: &Dataset,
    eval_points: &[Vec<f64>],
    cfg: &LocalizationConfig,
    spec: &KernelSpec,
    init: &MixingMeasure,
    n_perm: usize,
    seed: u64,
) -> Result<FitResult> {
    if n_perm == 0 {
        return Err(PrxError::usage("n_perm must be at least 1"));
    }
    let orders = permutations(data.len(), n_perm, seed);
    let mut fit = fit_orders(data, eval_points, cfg, spec, init, &orders)?;
    fit.seed = seed;
    Ok(fit)
}

/// [`fit_permuted`] with explicitly supplied orderings.
pub fn fit_orders(
    data: &Dataset,
    eval_points: &[Vec<f64>],
    cfg: &LocalizationConfig,
    spec: &KernelSpec,
    init: &MixingMeasure,
    orders: &[Vec<usize>],
) -> Result<FitResult> {
    if data.is_empty() {
        return Err(PrxError::usage("cannot run the recursion on an empty dataset"));
    }
    if orders.is_empty() {
        return Err(PrxError::usage("at least one data ordering is required"));
    }
    if let Some(bad) = orders.iter().find(|o| !is_permutation(o, data.len())) {
        return Err(PrxError::usage(format!("ordering of length {} is not a permutation of the data", bad.len())));
    }
    for x in eval_points {
        check_inputs(data, cfg, x, init)?;
    }
    let table = KernelTable::build(data, spec, &init.dom)?;
    let init_q = init.node_masses();
    let n_perm = orders.len() as f64;

    let per_point = par::map_slice(eval_points, |x| {
        let betas = affinities(data, cfg, x);
        let mut avg = vec![0.0; init_q.len()];
        let mut weight = 0.0;
        let mut skipped = 0;
        for order in orders {
            let run = run_order(&table, &betas, order, cfg, &init_q);
            for (a, q) in avg.iter_mut().zip(&run.q) {
                *a += q / run.mass;
            }
            weight += run.weight_sum;
            skipped += run.skipped;
        }
        let total: f64 = avg.iter().sum();
        for a in &mut avg {
            *a /= total;
        }
        (MixingMeasure::from_node_masses(init.dom.clone(), &avg), weight / n_perm, skipped)
    });

    let mut measures = Vec::with_capacity(per_point.len());
    let mut effective_weight = Vec::with_capacity(per_point.len());
    let mut skipped_updates = 0;
    for (m, w, s) in per_point {
        measures.push(m);
        effective_weight.push(w);
        skipped_updates += s;
    }
    if skipped_updates > 0 {
        log::warn!("{skipped_updates} updates skipped after predictive underflow");
    }
    let fit = FitResult {
        eval_points: eval_points.to_vec(),
        measures,
        permutations_used: orders.len(),
        seed: 0,
        effective_weight,
        skipped_updates,
    };
    let low = fit.low_weight_points();
    if !low.is_empty() {
        log::warn!("{} evaluation point(s) have low effective weight (sum of weights < 1)", low.len());
    }
    Ok(fit)
}

fn is_permutation(order: &[usize], n: usize) -> bool {
    if order.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

/// Mixture density `m(y | x)` of a measure on a y-grid.
pub fn measure_density(measure: &MixingMeasure, spec: &KernelSpec, y_grid: &[f64], covariate_tag: Option<f64>) -> Result<Vec<f64>> {
    spec.validate()?;
    if spec.needs_tag() && covariate_tag.is_none() {
        return Err(PrxError::usage("skew-normal kernel requires a covariate tag"));
    }
    let nodes = measure.dom.node_locations();
    let q = measure.node_masses();
    let mut row = vec![0.0; nodes.len()];
    Ok(y_grid
        .iter()
        .map(|&y| {
            spec.fill_row(y, &nodes, covariate_tag, &mut row);
            dot(&row, &q)
        })
        .collect())
}

/// Estimated conditional density at evaluation point `eval_index`.
pub fn conditional_density(
    fit: &FitResult,
    eval_index: usize,
    spec: &KernelSpec,
    y_grid: &[f64],
    covariate_tag: Option<f64>,
) -> Result<Vec<f64>> {
    let measure = fit.measures.get(eval_index).ok_or_else(|| {
        PrxError::usage(format!("evaluation index {eval_index} out of range ({} points)", fit.measures.len()))
    })?;
    measure_density(measure, spec, y_grid, covariate_tag)
}
