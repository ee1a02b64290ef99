//! Command-line front end.
//!
//! Every subcommand reads `key=value` settings from an optional config file
//! and `--set key=value` overrides, validates them against its schema, runs,
//! and writes a manifest that reproduces the run.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{read_manifest, write_manifest, Config};
use crate::data::{Dataset, Normalizer};
use crate::error::{PrxError, Result};
use crate::eval::{cross_validate, ConstantQuantiles, CvPlan, KcdeQuantiles, PrxQuantiles, QuantileMethod};
use crate::fdr::{fdp_and_power, run_fdr, FdrOptions, NullSpec};
use crate::kernels::KernelSpec;
use crate::measure::MixingMeasure;
use crate::optim::NelderMeadOptions;
use crate::par;
use crate::pipeline::{fit_density_regression, FitOptions};
use crate::prmlx::{approx_bayes_factor, maximize_prmlx, KernelFamily};
use crate::recursion::measure_density;
use crate::sim::{eval_points, generate, linspace, EvalPointKind, Scenario, ScenarioKind};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "prx", version, about = "Weight-localized predictive recursion for density regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit mixing measures at evaluation points and write a fit directory.
    Fit(RunArgs),
    /// Conditional densities on a y-grid from a fit directory.
    Estimate(RunArgs),
    /// Maximize the pseudo-likelihood and write estimates and the trace.
    Prmlx(RunArgs),
    /// Cross-validated check scores of conditional quantiles.
    CvCheck(RunArgs),
    /// Write a simulated scenario to CSV.
    Simulate(RunArgs),
    /// Covariate-dependent multiple testing of z-values.
    Fdr(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Input CSV, or the fit directory for `estimate`.
    input: Option<PathBuf>,
    /// key=value settings file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a setting; repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

const COMMON: &[(&str, &str)] = &[("seed", "0"), ("threads", "0"), ("out", "out")];

const DATA: &[(&str, &str)] = &[("outcome", "y"), ("ignore", ""), ("tag", "none")];

const MODEL: &[(&str, &str)] = &[
    ("kernel", "gaussian"),
    ("sigma", "default"),
    ("alpha", "default"),
    ("beta", "default"),
    ("psi", "default"),
    ("theta", "default"),
    ("bandwidth", "estimate"),
    ("gamma", "0.6666666666666666"),
    ("n_grid", "200"),
    ("support", "auto"),
    ("atom", "none"),
    ("atom_mass", "0.5"),
    ("subsample", "2000"),
    ("max_evals", "500"),
];

fn schema(cmd: &str) -> Vec<(&'static str, &'static str)> {
    let mut s: Vec<(&str, &str)> = COMMON.to_vec();
    match cmd {
        "fit" => {
            s.extend(DATA);
            s.extend(MODEL);
            s.extend([("n_perm", "30"), ("eval_points", "grid:21")]);
        }
        "prmlx" => {
            s.extend(DATA);
            s.extend(MODEL);
            s.push(("reference", "none"));
        }
        "cv-check" => {
            s.extend(DATA);
            s.extend(MODEL);
            s.extend([
                ("n_perm", "30"),
                ("methods", "prx,kcde,constant"),
                ("taus", "0.1,0.25,0.5,0.75,0.9"),
                ("folds", "5"),
                ("kcde_h1", "auto"),
                ("kcde_h2", "0.1"),
            ]);
        }
        "estimate" => s.extend([("y_grid", "401"), ("y_range", "auto")]),
        "simulate" => {
            s.retain(|(k, _)| *k != "out");
            s.extend([("scenario", "location-shift"), ("n", "500"), ("out", "simulated.csv")]);
        }
        "fdr" => {
            s.extend([("outcome", "z"), ("ignore", ""), ("tag", "none")]);
            s.extend([
                ("alpha", "0.1"),
                ("n_perm", "30"),
                ("n_grid", "401"),
                ("pi0_init", "0.75"),
                ("bandwidth", "estimate"),
                ("null", "fixed"),
                ("null_theta", "0"),
                ("null_sigma", "1"),
                ("truth_column", "is_null"),
                ("subsample", "2000"),
                ("max_evals", "500"),
            ]);
        }
        _ => unreachable!("subcommands are fixed by the parser"),
    }
    s
}

/// Settings resolved against a schema: every key present, defaults filled.
#[derive(Debug, Clone)]
pub struct Settings {
    command: String,
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn resolve(command: &str, cfg: &Config) -> Result<Self> {
        let schema = schema(command);
        let valid: Vec<&str> = schema.iter().map(|(k, _)| *k).collect();
        for k in cfg.keys() {
            if !valid.contains(&k) {
                return Err(PrxError::usage(format!(
                    "unknown key {k:?} for `{command}`; valid keys: {}",
                    valid.join(", ")
                )));
            }
        }
        let mut values: BTreeMap<String, String> =
            schema.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        for (k, v) in cfg.entries() {
            values.insert(k, v);
        }
        Ok(Self { command: command.to_string(), values })
    }

    fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("key is in the schema")
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.str(key);
        v.parse().map_err(|_| PrxError::usage(format!("invalid value {v:?} for {key}")))
    }

    fn list(&self, key: &str) -> Result<Vec<f64>> {
        let v = self.str(key);
        v.split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| PrxError::usage(format!("invalid number list {v:?} for {key}")))
    }

    fn names(&self, key: &str) -> Vec<String> {
        self.str(key).split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
    }

    /// Manifest lines: tool version, command, and every setting but `threads`
    /// and `out`, which do not affect results.
    pub fn manifest(&self) -> Vec<(String, String)> {
        let mut out = vec![("version".to_string(), VERSION.to_string()), ("command".to_string(), self.command.clone())];
        out.extend(
            self.values
                .iter()
                .filter(|(k, _)| !matches!(k.as_str(), "threads" | "out"))
                .map(|(k, v)| (format!("config.{k}"), v.clone())),
        );
        out
    }
}

/// A CSV read into covariates scaled onto the unit cube.
#[derive(Debug, Clone)]
pub struct Ingested {
    /// Normalized covariates and the outcome.
    pub data: Dataset,
    pub normalizer: Normalizer,
    pub covariates: Vec<String>,
    pub outcome: String,
    /// Ignored columns, by name.
    pub extra: BTreeMap<String, Vec<f64>>,
}

impl Ingested {
    pub fn manifest(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("data.rows".to_string(), self.data.len().to_string()),
            ("data.outcome".to_string(), self.outcome.clone()),
            ("data.covariates".to_string(), self.covariates.join(",")),
        ];
        for (j, name) in self.covariates.iter().enumerate() {
            out.push((format!("normalization.{name}.min"), self.normalizer.mins[j].to_string()));
            out.push((format!("normalization.{name}.max"), self.normalizer.maxs[j].to_string()));
        }
        out
    }
}

fn ingestion(path: &Path, line: u64, column: Option<&str>, message: impl Into<String>) -> PrxError {
    PrxError::Ingestion { path: path.to_path_buf(), line, column: column.map(String::from), message: message.into() }
}

/// Reads a headed CSV; `outcome` names the response, `ignore` columns are
/// set aside, and every other column is a covariate.
pub fn ingest_csv(path: &Path, outcome: &str, ignore: &[String]) -> Result<Ingested> {
    let text = std::fs::read_to_string(path)?;
    let body = text.strip_suffix('\n').unwrap_or(&text);
    if let Some(i) = body.split('\n').position(|l| l.trim().is_empty()) {
        return Err(ingestion(path, i as u64 + 1, None, "blank line"));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let y_col = header
        .iter()
        .position(|h| h == outcome)
        .ok_or_else(|| ingestion(path, 1, Some(outcome), format!("missing outcome column; header is {}", header.join(","))))?;
    for name in ignore {
        if !header.contains(name) {
            return Err(ingestion(path, 1, Some(name), "ignored column not in header"));
        }
    }
    let x_cols: Vec<usize> = (0..header.len()).filter(|&j| j != y_col && !ignore.contains(&header[j])).collect();
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut extra: BTreeMap<String, Vec<f64>> = ignore.iter().map(|n| (n.clone(), Vec::new())).collect();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(ingestion(path, line, None, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let mut vals = Vec::with_capacity(header.len());
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| ingestion(path, line, Some(&header[j]), format!("non-numeric value {cell:?}")))?;
            if !v.is_finite() {
                return Err(ingestion(path, line, Some(&header[j]), format!("non-finite value {cell:?}")));
            }
            vals.push(v);
        }
        rows.push(x_cols.iter().map(|&j| vals[j]).collect::<Vec<f64>>());
        y.push(vals[y_col]);
        for (name, col) in extra.iter_mut() {
            col.push(vals[header.iter().position(|h| h == name).unwrap()]);
        }
    }
    if rows.is_empty() {
        return Err(ingestion(path, 1, None, "no data rows"));
    }
    let raw = Dataset::new(rows, y)?;
    let normalizer = Normalizer::fit(&raw);
    let covariates: Vec<String> = x_cols.iter().map(|&j| header[j].clone()).collect();
    for j in normalizer.constant_columns() {
        log::warn!("covariate {} is constant; it normalizes to 0 and its bandwidth is pinned to 0", covariates[j]);
    }
    log::info!("read {} rows: outcome {outcome}, covariates {}", raw.len(), covariates.join(","));
    Ok(Ingested { data: normalizer.apply(&raw), normalizer, covariates, outcome: outcome.to_string(), extra })
}

fn load(settings: &Settings, input: Option<&Path>) -> Result<Ingested> {
    let path = input.ok_or_else(|| PrxError::usage(format!("`{}` needs an input CSV", settings.command)))?;
    let mut ing = ingest_csv(path, settings.str("outcome"), &settings.names("ignore"))?;
    match settings.str("tag") {
        "none" => {}
        name => {
            let j = ing.covariates.iter().position(|c| c == name).ok_or_else(|| {
                PrxError::usage(format!("tag column {name:?} is not a covariate; covariates: {}", ing.covariates.join(",")))
            })?;
            ing.data = ing.data.clone().with_tag_column(j)?;
        }
    }
    Ok(ing)
}

fn optimizer(settings: &Settings) -> Result<NelderMeadOptions> {
    Ok(NelderMeadOptions { max_evals: settings.parse("max_evals")?, ..NelderMeadOptions::default() })
}

/// Kernel, bandwidth, grid, and optimizer settings as fit options.
fn fit_options(settings: &Settings, ing: &Ingested) -> Result<FitOptions> {
    let family = KernelFamily::parse(settings.str("kernel"))?;
    let mut opts = FitOptions {
        gamma: settings.parse("gamma")?,
        n_grid: settings.parse("n_grid")?,
        subsample: settings.parse("subsample")?,
        seed: settings.parse("seed")?,
        optimizer: optimizer(settings)?,
        ..FitOptions::new(family)
    };
    if let Some(v) = settings.values.get("n_perm") {
        opts.n_perm = v.parse().map_err(|_| PrxError::usage(format!("invalid value {v:?} for n_perm")))?;
    }
    for name in ["sigma", "alpha", "beta", "psi", "theta"] {
        let v = settings.str(name);
        if v == "default" {
            continue;
        }
        if !family.param_names().contains(&name) {
            return Err(PrxError::usage(format!(
                "{name} is not a parameter of the {} kernel; its parameters are {}",
                settings.str("kernel"),
                family.param_names().join(", ")
            )));
        }
        if v == "estimate" {
            opts.released.push(name.to_string());
        } else {
            opts = opts.fix(name, settings.parse(name)?);
        }
    }
    let p = ing.data.dim();
    let constant = ing.normalizer.constant_columns();
    match settings.str("bandwidth") {
        "estimate" => {}
        _ => {
            let b = settings.list("bandwidth")?;
            let b = match b.len() {
                1 => vec![b[0]; p],
                n if n == p => b,
                n => return Err(PrxError::usage(format!("bandwidth lists {n} values for {p} covariates"))),
            };
            for (j, v) in b.iter().enumerate() {
                opts = opts.fix(&format!("b{}", j + 1), *v);
            }
        }
    }
    for j in constant {
        opts = opts.fix(&format!("b{}", j + 1), 0.0);
    }
    if settings.str("support") != "auto" {
        let s = settings.list("support")?;
        if s.len() != 2 {
            return Err(PrxError::usage("support takes lo,hi"));
        }
        opts.support = Some((s[0], s[1]));
    }
    if settings.str("atom") != "none" {
        opts.atom = Some((settings.parse("atom")?, settings.parse("atom_mass")?));
    }
    Ok(opts)
}

/// `grid:K`, `sobol:K`, `kmeans[:K]` (K = 10 by default), or
/// `points:a,b|c,d` in raw covariate units.
pub fn parse_eval_points(spec: &str, ing: &Ingested, seed: u64) -> Result<Vec<Vec<f64>>> {
    let spec = if spec == "kmeans" { "kmeans:10" } else { spec };
    let (kind, arg) = spec
        .split_once(':')
        .ok_or_else(|| PrxError::usage(format!("eval_points {spec:?} must look like grid:K, sobol:K, kmeans:K or points:...")))?;
    let p = ing.data.dim();
    let count = || -> Result<usize> { arg.trim().parse().map_err(|_| PrxError::usage(format!("invalid point count {arg:?}"))) };
    match kind {
        "grid" => eval_points(EvalPointKind::UniformGrid, count()?, p, None, seed),
        "sobol" => eval_points(EvalPointKind::SobolWithCorners, count()?, p, None, seed),
        "kmeans" => eval_points(EvalPointKind::KMeansCenters, count()?, p, Some(&ing.data), seed),
        "points" => arg
            .split('|')
            .map(|pt| {
                let x: Vec<f64> = pt
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| PrxError::usage(format!("invalid point {pt:?}")))?;
                if x.len() != p {
                    return Err(PrxError::usage(format!("point {pt:?} has {} coordinates for {p} covariates", x.len())));
                }
                Ok(ing.normalizer.apply_point(&x))
            })
            .collect(),
        other => Err(PrxError::usage(format!("unknown eval point kind {other:?}; use grid, sobol, kmeans or points"))),
    }
}

fn out_dir(settings: &Settings) -> Result<PathBuf> {
    let dir = PathBuf::from(settings.str("out"));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn estimate_lines(spec: &KernelSpec, bandwidths: &[f64]) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = spec.params().into_iter().map(|(k, v)| (format!("estimate.{k}"), v.to_string())).collect();
    out.extend(bandwidths.iter().enumerate().map(|(j, b)| (format!("estimate.b{}", j + 1), b.to_string())));
    out
}

fn cmd_fit(settings: &Settings, input: Option<&Path>) -> Result<()> {
    let ing = load(settings, input)?;
    let opts = fit_options(settings, &ing)?;
    let pts = parse_eval_points(settings.str("eval_points"), &ing, opts.seed)?;
    let fit = fit_density_regression(&ing.data, &pts, &opts)?;
    let dir = out_dir(settings)?;
    let mut extra = settings.manifest();
    extra.extend(ing.manifest());
    extra.push(("tag_index".into(), fit.tag_column.map_or("none".into(), |t| t.to_string())));
    extra.extend(estimate_lines(&fit.kernel, &fit.localization.bandwidths));
    if let Some(p) = &fit.prmlx {
        extra.push(("log_prmlx".into(), p.log_value.to_string()));
        p.write_trace(&dir.join("trace.csv"))?;
    }
    fit.fit.write_dir(&dir, &fit.kernel, &fit.localization, &extra)?;
    println!("wrote {} mixing measures to {}", pts.len(), dir.display());
    Ok(())
}

fn kernel_from_manifest(m: &BTreeMap<String, String>) -> Result<KernelSpec> {
    let get = |k: &str| -> Result<f64> {
        m.get(k)
            .ok_or_else(|| PrxError::usage(format!("fit manifest lacks {k}")))?
            .parse()
            .map_err(|_| PrxError::usage(format!("fit manifest has a malformed {k}")))
    };
    let family = KernelFamily::parse(m.get("kernel").map(String::as_str).unwrap_or(""))?;
    let values: Vec<f64> = family.param_names().iter().map(|n| get(&format!("kernel.{n}"))).collect::<Result<_>>()?;
    Ok(family.build(&values))
}

fn cmd_estimate(settings: &Settings, input: Option<&Path>) -> Result<()> {
    let dir = input.ok_or_else(|| PrxError::usage("`estimate` needs the fit directory as input"))?;
    let manifest: BTreeMap<String, String> = read_manifest(&dir.join("manifest.txt"))?.into_iter().collect();
    let kernel = kernel_from_manifest(&manifest)?;
    let tag_index: Option<usize> = match manifest.get("tag_index").map(String::as_str) {
        None | Some("none") => None,
        Some(t) => Some(t.parse().map_err(|_| PrxError::usage("fit manifest has a malformed tag_index"))?),
    };
    let mut rdr = csv::Reader::from_path(dir.join("eval_points.csv"))?;
    let mut points: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let coords: Vec<f64> = rec
            .iter()
            .skip(1)
            .take(rec.len().saturating_sub(2))
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| PrxError::usage("malformed eval_points.csv"))?;
        points.push(coords);
    }
    let out = out_dir(settings)?;
    let count: usize = settings.parse("y_grid")?;
    let mut entries = settings.manifest();
    entries.push(("fit_dir".into(), dir.display().to_string()));
    for (i, x) in points.iter().enumerate() {
        let file = std::fs::File::open(dir.join(format!("measure_{i:03}.csv")))?;
        let measure = MixingMeasure::read_csv(std::io::BufReader::new(file))?;
        let grid = if settings.str("y_range") == "auto" {
            linspace(measure.dom.support_lo, measure.dom.support_hi, count)
        } else {
            let r = settings.list("y_range")?;
            if r.len() != 2 || !(r[0] < r[1]) {
                return Err(PrxError::usage("y_range takes lo,hi with lo < hi"));
            }
            linspace(r[0], r[1], count)
        };
        let tag = tag_index.map(|t| x[t]);
        let d = measure_density(&measure, &kernel, &grid, tag)?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(out.join(format!("density_{i:03}.csv")))?);
        writeln!(w, "y,density")?;
        for (y, v) in grid.iter().zip(&d) {
            writeln!(w, "{y},{v}")?;
        }
        w.flush()?;
    }
    entries.push(("n_densities".into(), points.len().to_string()));
    write_manifest(&out.join("manifest.txt"), &entries)?;
    println!("wrote {} density files to {}", points.len(), out.display());
    Ok(())
}

fn cmd_prmlx(settings: &Settings, input: Option<&Path>) -> Result<()> {
    let ing = load(settings, input)?;
    let opts = fit_options(settings, &ing)?;
    let obj = opts.objective(&ing.data, opts.initial_measure(ing.data.y())?)?;
    let dir = out_dir(settings)?;
    let mut entries = settings.manifest();
    entries.extend(ing.manifest());
    let (log_value, kernel, bandwidths) = if obj.free_names().is_empty() {
        let v = obj.log_prmlx(&[])?;
        let (k, c) = obj.settings(&[])?;
        (v.log_value, k, c.bandwidths)
    } else {
        let fit = maximize_prmlx(&obj, &obj.initial_values(), &opts.optimizer)?;
        fit.write_trace(&dir.join("trace.csv"))?;
        entries.push(("converged".into(), fit.converged.to_string()));
        entries.push(("evaluations".into(), fit.trace.len().to_string()));
        (fit.log_value, fit.kernel.clone(), fit.localization.bandwidths.clone())
    };
    entries.extend(estimate_lines(&kernel, &bandwidths));
    entries.push(("log_prmlx".into(), log_value.to_string()));
    println!("log_prmlx = {log_value}");
    if settings.str("reference") != "none" {
        let mut ref_settings = settings.clone();
        ref_settings.values.insert("kernel".into(), settings.str("reference").to_string());
        for name in ["sigma", "alpha", "beta", "psi", "theta"] {
            ref_settings.values.insert(name.into(), "default".into());
        }
        let ropts = fit_options(&ref_settings, &ing)?;
        let robj = ropts.objective(&ing.data, ropts.initial_measure(ing.data.y())?)?;
        let rlog = if robj.free_names().is_empty() {
            robj.log_prmlx(&[])?.log_value
        } else {
            maximize_prmlx(&robj, &robj.initial_values(), &ropts.optimizer)?.log_value
        };
        let bf = approx_bayes_factor(log_value, rlog)?;
        entries.push(("reference_log_prmlx".into(), rlog.to_string()));
        entries.push(("log10_bayes_factor".into(), bf.log10.to_string()));
        println!("reference log_prmlx = {rlog}\nlog10 Bayes factor = {}", bf.log10);
    }
    write_manifest(&dir.join("manifest.txt"), &entries)
}

fn silverman(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    1.06 * sd * n.powf(-0.2)
}

fn cmd_cv_check(settings: &Settings, input: Option<&Path>) -> Result<()> {
    let ing = load(settings, input)?;
    let opts = fit_options(settings, &ing)?;
    let plan = CvPlan { n_folds: settings.parse("folds")?, tau_levels: settings.list("taus")?, seed: opts.seed };
    let h1 = match settings.str("kcde_h1") {
        "auto" => silverman(ing.data.y()),
        _ => settings.parse("kcde_h1")?,
    };
    let prx = PrxQuantiles { options: opts };
    let kcde = KcdeQuantiles { h1, h2: settings.parse("kcde_h2")? };
    let mut methods: Vec<&dyn QuantileMethod> = Vec::new();
    for m in settings.names("methods") {
        match m.as_str() {
            "prx" => methods.push(&prx),
            "kcde" => methods.push(&kcde),
            "constant" => methods.push(&ConstantQuantiles),
            other => return Err(PrxError::usage(format!("unknown method {other:?}; use prx, kcde, constant"))),
        }
    }
    let table = cross_validate(&ing.data, &plan, &methods)?;
    let dir = out_dir(settings)?;
    table.write_csv(&dir.join("cv.csv"))?;
    let mut entries = settings.manifest();
    entries.extend(ing.manifest());
    entries.push(("kcde_h1_resolved".into(), h1.to_string()));
    for (method, tau, score) in table.summary() {
        println!("{method:<10} tau {tau:<5} CS {score:.6}");
        entries.push((format!("score.{method}.{tau}"), score.to_string()));
    }
    write_manifest(&dir.join("manifest.txt"), &entries)
}

fn cmd_simulate(settings: &Settings) -> Result<()> {
    let kind: ScenarioKind = settings.str("scenario").parse()?;
    let sim = generate(&Scenario { kind, n: settings.parse("n")?, seed: settings.parse("seed")? })?;
    let path = PathBuf::from(settings.str("out"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let outcome = if kind == ScenarioKind::TwoGroupsFdr { "z" } else { "y" };
    let mut w = csv::Writer::from_path(&path)?;
    let mut header: Vec<String> = (1..=sim.data.dim()).map(|j| format!("x{j}")).collect();
    header.push(outcome.into());
    if sim.is_null.is_some() {
        header.push("is_null".into());
    }
    w.write_record(&header)?;
    for i in 0..sim.data.len() {
        let mut rec: Vec<String> = sim.data.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(sim.data.y()[i].to_string());
        if let Some(nulls) = &sim.is_null {
            rec.push(u8::from(nulls[i]).to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    let mut entries = settings.manifest();
    entries.extend(sim.truth.metadata().into_iter().map(|(k, v)| (format!("truth.{k}"), v)));
    let mut mpath = path.clone().into_os_string();
    mpath.push(".manifest.txt");
    write_manifest(Path::new(&mpath), &entries)?;
    println!("wrote {} rows to {}", sim.data.len(), path.display());
    Ok(())
}

fn cmd_fdr(settings: &Settings, input: Option<&Path>) -> Result<()> {
    let path = input.ok_or_else(|| PrxError::usage("`fdr` needs an input CSV"))?;
    let truth_col = settings.str("truth_column").to_string();
    let mut ignore = settings.names("ignore");
    let has_truth = {
        let mut rdr = csv::Reader::from_path(path)?;
        rdr.headers()?.iter().any(|h| h.trim() == truth_col)
    };
    if has_truth && !ignore.contains(&truth_col) {
        ignore.push(truth_col.clone());
    }
    let ing = ingest_csv(path, settings.str("outcome"), &ignore)?;
    if settings.str("tag") != "none" {
        return Err(PrxError::usage("`fdr` does not use a tag column"));
    }
    let alpha: f64 = settings.parse("alpha")?;
    if !(0.0..1.0).contains(&alpha) {
        return Err(PrxError::domain(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    let bandwidth = match settings.str("bandwidth") {
        "estimate" => None,
        _ => Some(settings.parse("bandwidth")?),
    };
    if bandwidth.is_none() && !ing.normalizer.constant_columns().is_empty() {
        log::warn!("constant covariates still share the single estimated bandwidth");
    }
    let opts = FdrOptions {
        null: NullSpec { theta: settings.parse("null_theta")?, sigma: settings.parse("null_sigma")? },
        n_perm: settings.parse("n_perm")?,
        n_grid: settings.parse("n_grid")?,
        pi0_init: settings.parse("pi0_init")?,
        bandwidth,
        estimate_null: match settings.str("null") {
            "fixed" => false,
            "estimate" => true,
            other => return Err(PrxError::usage(format!("null must be fixed or estimate, got {other:?}"))),
        },
        subsample: settings.parse("subsample")?,
        optimizer: optimizer(settings)?,
    };
    let d = run_fdr(&ing.data, alpha, &opts, settings.parse("seed")?)?;
    let dir = out_dir(settings)?;
    d.write_csv(&dir.join("decisions.csv"), &ing.data)?;
    let mut pi0 = std::io::BufWriter::new(std::fs::File::create(dir.join("pi0_grid.csv"))?);
    let xs: Vec<String> = ing.covariates.iter().map(|c| c.to_string()).collect();
    writeln!(pi0, "{},pi0", xs.join(","))?;
    for (x, p) in &d.pi0_grid {
        let c: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        writeln!(pi0, "{},{p}", c.join(","))?;
    }
    pi0.flush()?;

    let mut summary = vec![
        ("n".to_string(), ing.data.len().to_string()),
        ("alpha".to_string(), alpha.to_string()),
        ("bandwidth".to_string(), crate::recursion::join_f64(&d.bandwidths)),
        ("null_theta".to_string(), d.null.theta.to_string()),
        ("null_sigma".to_string(), d.null.sigma.to_string()),
        ("rejections_prx".to_string(), d.rejected_prx.iter().filter(|r| **r).count().to_string()),
        ("rejections_bh".to_string(), d.rejected_bh.iter().filter(|r| **r).count().to_string()),
    ];
    if has_truth {
        let nulls: Vec<bool> = ing.extra[&truth_col].iter().map(|v| *v != 0.0).collect();
        let (fdp_prx, power_prx) = fdp_and_power(&d.rejected_prx, &nulls);
        let (fdp_bh, power_bh) = fdp_and_power(&d.rejected_bh, &nulls);
        summary.extend([
            ("fdp_prx".to_string(), fdp_prx.to_string()),
            ("power_prx".to_string(), power_prx.to_string()),
            ("fdp_bh".to_string(), fdp_bh.to_string()),
            ("power_bh".to_string(), power_bh.to_string()),
        ]);
    }
    write_manifest(&dir.join("summary.txt"), &summary)?;
    for (k, v) in &summary {
        println!("{k} = {v}");
    }
    let mut entries = settings.manifest();
    entries.extend(ing.manifest());
    write_manifest(&dir.join("manifest.txt"), &entries)
}

fn dispatch(command: &str, settings: &Settings, input: Option<&Path>) -> Result<()> {
    match command {
        "fit" => cmd_fit(settings, input),
        "estimate" => cmd_estimate(settings, input),
        "prmlx" => cmd_prmlx(settings, input),
        "cv-check" => cmd_cv_check(settings, input),
        "simulate" => cmd_simulate(settings),
        "fdr" => cmd_fdr(settings, input),
        _ => unreachable!("subcommands are fixed by the parser"),
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let (name, a) = match &cli.command {
        Command::Fit(a) => ("fit", a),
        Command::Estimate(a) => ("estimate", a),
        Command::Prmlx(a) => ("prmlx", a),
        Command::CvCheck(a) => ("cv-check", a),
        Command::Simulate(a) => ("simulate", a),
        Command::Fdr(a) => ("fdr", a),
    };
    let result = (|| -> Result<()> {
        let mut cfg = match &a.config {
            Some(p) => Config::from_file(p)?,
            None => Config::default(),
        };
        for s in &a.set {
            cfg.apply_override(s)?;
        }
        let settings = Settings::resolve(name, &cfg)?;
        if name == "simulate" && a.input.is_some() {
            return Err(PrxError::usage("`simulate` takes no input path"));
        }
        let threads: usize = settings.parse("threads")?;
        if threads > 0 {
            par::with_threads(threads, || dispatch(name, &settings, a.input.as_deref()))
        } else {
            dispatch(name, &settings, a.input.as_deref())
        }
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
