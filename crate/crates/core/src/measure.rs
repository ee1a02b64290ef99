//! Discretized mixing measures.
//!
//! A [`MixingMeasure`] stores a density over an equally spaced θ-grid with
//! respect to Lebesgue measure on `[support_lo, support_hi]`, plus an
//! optional point mass at a designated atom. Integrals over the continuous
//! part use the trapezoid rule; the atom is a separate mass and never a
//! grid cell.

use std::io::{BufRead, Write};

use crate::error::{PrxError, Result};
use crate::kernels::KernelSpec;

/// Predictive densities below this floor are treated as underflow.
pub const UNDERFLOW_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct DominatingMeasure {
    pub support_lo: f64,
    pub support_hi: f64,
    pub n_grid: usize,
    pub atom: Option<f64>,
}

impl DominatingMeasure {
    pub fn new(support_lo: f64, support_hi: f64, n_grid: usize, atom: Option<f64>) -> Result<Self> {
        if !(support_lo.is_finite() && support_hi.is_finite() && support_lo < support_hi) {
            return Err(PrxError::domain(format!(
                "support must satisfy lo < hi, got [{support_lo}, {support_hi}]"
            )));
        }
        if n_grid < 2 {
            return Err(PrxError::domain(format!("n_grid must be at least 2, got {n_grid}")));
        }
        if let Some(a) = atom {
            if !(support_lo..=support_hi).contains(&a) {
                return Err(PrxError::domain(format!(
                    "atom {a} lies outside [{support_lo}, {support_hi}]"
                )));
            }
        }
        Ok(Self { support_lo, support_hi, n_grid, atom })
    }

    pub fn lebesgue(support_lo: f64, support_hi: f64, n_grid: usize) -> Result<Self> {
        Self::new(support_lo, support_hi, n_grid, None)
    }

    /// `[min(y) - 1.5 sd(y), max(y) + 1.5 sd(y)]`, the default support when fitting data.
    pub fn padded_range(y: &[f64]) -> Result<(f64, f64)> {
        if y.is_empty() {
            return Err(PrxError::usage("cannot derive a support from an empty outcome vector"));
        }
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sd = sample_sd(y);
        let pad = if sd > 0.0 { 1.5 * sd } else { 1.0 };
        Ok((lo - pad, hi + pad))
    }

    pub fn from_data(y: &[f64], n_grid: usize) -> Result<Self> {
        let (lo, hi) = Self::padded_range(y)?;
        Self::lebesgue(lo, hi, n_grid)
    }

    pub fn step(&self) -> f64 {
        (self.support_hi - self.support_lo) / (self.n_grid - 1) as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.n_grid)
            .map(|i| {
                if i == self.n_grid - 1 {
                    self.support_hi
                } else {
                    self.support_lo + h * i as f64
                }
            })
            .collect()
    }

    /// Trapezoid weights for the continuous part.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let h = self.step();
        let mut w = vec![h; self.n_grid];
        w[0] = 0.5 * h;
        w[self.n_grid - 1] = 0.5 * h;
        w
    }

    /// Number of mass-carrying nodes: grid points plus the atom, if any.
    pub fn n_nodes(&self) -> usize {
        self.n_grid + usize::from(self.atom.is_some())
    }

    /// θ value of every node, the atom (if any) last.
    pub fn node_locations(&self) -> Vec<f64> {
        let mut g = self.grid();
        if let Some(a) = self.atom {
            g.push(a);
        }
        g
    }
}

pub(crate) fn sample_sd(y: &[f64]) -> f64 {
    let n = y.len();
    if n < 2 {
        return 0.0;
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let ss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingMeasure {
    pub dom: DominatingMeasure,
    /// Density w.r.t. the Lebesgue part, one value per grid point.
    pub density_values: Vec<f64>,
    /// Mass of the atom; `Some` iff `dom.atom` is set.
    pub atom_mass: Option<f64>,
}

impl MixingMeasure {
    /// Uniform continuous part carrying `1 - atom_mass`.
    pub fn uniform(dom: DominatingMeasure, atom_mass: Option<f64>) -> Result<Self> {
        match (dom.atom, atom_mass) {
            (Some(_), None) => return Err(PrxError::usage("dominating measure has an atom but no atom mass was given")),
            (None, Some(_)) => return Err(PrxError::usage("atom mass given but the dominating measure has no atom")),
            _ => {}
        }
        if let Some(a) = atom_mass {
            if !(0.0..=1.0).contains(&a) {
                return Err(PrxError::domain(format!("atom mass must lie in [0, 1], got {a}")));
            }
        }
        let cont = 1.0 - atom_mass.unwrap_or(0.0);
        let level = cont / (dom.support_hi - dom.support_lo);
        let density_values = vec![level; dom.n_grid];
        Ok(Self { dom, density_values, atom_mass })
    }

    /// Wraps raw values; they are validated but not normalized.
    pub fn from_parts(dom: DominatingMeasure, density_values: Vec<f64>, atom_mass: Option<f64>) -> Result<Self> {
        if density_values.len() != dom.n_grid {
            return Err(PrxError::usage(format!(
                "expected {} density values, got {}",
                dom.n_grid,
                density_values.len()
            )));
        }
        if dom.atom.is_some() != atom_mass.is_some() {
            return Err(PrxError::usage("atom mass must be given exactly when the measure has an atom"));
        }
        if density_values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(PrxError::domain("density values must be finite and nonnegative"));
        }
        if let Some(a) = atom_mass {
            if !(0.0..=1.0).contains(&a) {
                return Err(PrxError::domain(format!("atom mass must lie in [0, 1], got {a}")));
            }
        }
        Ok(Self { dom, density_values, atom_mass })
    }

    /// Atom mass plus trapezoid integral of the density.
    pub fn total_mass(&self) -> f64 {
        let w = self.dom.quadrature_weights();
        let cont: f64 = w.iter().zip(&self.density_values).map(|(a, b)| a * b).sum();
        cont + self.atom_mass.unwrap_or(0.0)
    }

    pub fn normalize(&mut self) {
        let m = self.total_mass();
        if m > 0.0 && m.is_finite() {
            for v in &mut self.density_values {
                *v /= m;
            }
            if let Some(a) = self.atom_mass.as_mut() {
                *a /= m;
            }
        }
    }

    /// Quadrature mass at every node (weight × density), the atom last.
    pub fn node_masses(&self) -> Vec<f64> {
        let w = self.dom.quadrature_weights();
        let mut q: Vec<f64> = w.iter().zip(&self.density_values).map(|(a, b)| a * b).collect();
        if let Some(a) = self.atom_mass {
            q.push(a);
        }
        q
    }

    /// Inverse of [`node_masses`](Self::node_masses).
    pub fn from_node_masses(dom: DominatingMeasure, masses: &[f64]) -> Self {
        debug_assert_eq!(masses.len(), dom.n_nodes());
        let w = dom.quadrature_weights();
        let density_values = w.iter().zip(masses).map(|(a, q)| q / a).collect();
        let atom_mass = dom.atom.map(|_| masses[dom.n_grid]);
        Self { dom, density_values, atom_mass }
    }

    /// Mixture density `∫ φ(y|θ) f(θ) μ(dθ)`.
    ///
    /// Returns [`PrxError::Underflow`] when the value falls below
    /// [`UNDERFLOW_FLOOR`]; the caller decides how to proceed.
    pub fn mix_density(&self, spec: &KernelSpec, y: f64, covariate_tag: Option<f64>) -> Result<f64> {
        let nodes = self.dom.node_locations();
        let k = crate::kernels::eval_kernel(spec, y, &nodes, covariate_tag)?;
        let m: f64 = self.node_masses().iter().zip(&k).map(|(q, k)| q * k).sum();
        if m < UNDERFLOW_FLOOR {
            return Err(PrxError::Underflow(m));
        }
        Ok(m)
    }

    /// Writes `theta,density` rows preceded by a comment line describing the atom.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        match (self.dom.atom, self.atom_mass) {
            (Some(loc), Some(mass)) => writeln!(out, "# atom_location={loc},atom_mass={mass}")?,
            _ => writeln!(out, "# atom=none")?,
        }
        writeln!(out, "theta,density")?;
        for (t, d) in self.dom.grid().iter().zip(&self.density_values) {
            writeln!(out, "{t},{d}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| PrxError::usage("measure CSV must start with an atom comment line"))?
            .trim();
        let mut atom = None;
        if header != "atom=none" {
            let mut loc = None;
            let mut mass = None;
            for kv in header.split(',') {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| PrxError::usage(format!("malformed atom comment `{header}`")))?;
                let v: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| PrxError::usage(format!("malformed atom value `{v}`")))?;
                match k.trim() {
                    "atom_location" => loc = Some(v),
                    "atom_mass" => mass = Some(v),
                    other => return Err(PrxError::usage(format!("unknown atom key `{other}`"))),
                }
            }
            match (loc, mass) {
                (Some(l), Some(m)) => atom = Some((l, m)),
                _ => return Err(PrxError::usage("atom comment needs atom_location and atom_mass")),
            }
        }
        let body = lines.collect::<std::io::Result<Vec<_>>>()?.join("\n");
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let mut thetas = Vec::new();
        let mut dens = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| PrxError::usage("measure CSV rows need numeric theta and density"))
            };
            thetas.push(parse(0)?);
            dens.push(parse(1)?);
        }
        if thetas.len() < 2 {
            return Err(PrxError::usage("measure CSV needs at least two grid rows"));
        }
        let dom = DominatingMeasure::new(thetas[0], *thetas.last().unwrap(), thetas.len(), atom.map(|a| a.0))?;
        Self::from_parts(dom, dens, atom.map(|a| a.1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{std_normal_cdf, MixtureKernel};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    #[test]
    fn uniform_examples() {
        let m = MixingMeasure::uniform(DominatingMeasure::lebesgue(0.0, 1.0, 5).unwrap(), None).unwrap();
        assert!(m.density_values.iter().all(|&v| v == 1.0));
        assert_abs_diff_eq!(m.total_mass(), 1.0, epsilon = 1e-15);

        let dom = DominatingMeasure::new(-8.0, 8.0, 401, Some(0.0)).unwrap();
        let m = MixingMeasure::uniform(dom, Some(0.75)).unwrap();
        assert!(m.density_values.iter().all(|&v| (v - 0.015625).abs() < 1e-15));
        assert_abs_diff_eq!(m.total_mass(), 1.0, epsilon = 1e-12);

        let dom = DominatingMeasure::new(0.0, 1.0, 11, Some(0.5)).unwrap();
        let m = MixingMeasure::uniform(dom, Some(1.0)).unwrap();
        assert!(m.density_values.iter().all(|&v| v == 0.0));
        assert_eq!(m.total_mass(), 1.0);
    }

    #[test]
    fn uniform_errors() {
        let dom = DominatingMeasure::new(0.0, 1.0, 5, Some(0.0)).unwrap();
        assert!(matches!(MixingMeasure::uniform(dom.clone(), Some(1.5)), Err(PrxError::Domain(_))));
        assert!(matches!(MixingMeasure::uniform(dom, None), Err(PrxError::Usage(_))));
        assert!(DominatingMeasure::new(1.0, 0.0, 5, None).is_err());
        assert!(DominatingMeasure::new(0.0, 1.0, 1, None).is_err());
        assert!(DominatingMeasure::new(0.0, 1.0, 5, Some(2.0)).is_err());
    }

    #[test]
    fn total_mass_of_linear_density() {
        let dom = DominatingMeasure::lebesgue(0.0, 1.0, 1001).unwrap();
        let d = dom.grid().iter().map(|t| 2.0 * t).collect();
        let m = MixingMeasure::from_parts(dom, d, None).unwrap();
        assert_abs_diff_eq!(m.total_mass(), 1.0, epsilon = 1e-6);

        let dom = DominatingMeasure::new(0.0, 1.0, 3, Some(0.0)).unwrap();
        let m = MixingMeasure::from_parts(dom, vec![0.0; 3], Some(1.0)).unwrap();
        assert_eq!(m.total_mass(), 1.0);
    }

    #[test]
    fn mix_density_examples() {
        let g = KernelSpec::Gaussian { sigma: 1.0 };
        let m = MixingMeasure::uniform(DominatingMeasure::lebesgue(-1.0, 1.0, 2001).unwrap(), None).unwrap();
        let exact = 0.5 * (std_normal_cdf(1.0) - std_normal_cdf(-1.0));
        assert_abs_diff_eq!(m.mix_density(&g, 0.0, None).unwrap(), exact, epsilon = 1e-7);
        assert_abs_diff_eq!(exact, 0.341_344_746, epsilon = 1e-9);

        let dom = DominatingMeasure::new(-1.0, 1.0, 21, Some(0.0)).unwrap();
        let spike = MixingMeasure::uniform(dom, Some(1.0)).unwrap();
        assert_abs_diff_eq!(spike.mix_density(&g, 0.0, None).unwrap(), 0.398_942_280_401_432_7, epsilon = 1e-15);

        struct Const;
        impl MixtureKernel for Const {
            fn name(&self) -> &str {
                "const"
            }
            fn density(&self, _: f64, _: f64, _: Option<f64>) -> f64 {
                0.3
            }
        }
        let c = KernelSpec::Custom(Arc::new(Const));
        let u = MixingMeasure::uniform(DominatingMeasure::lebesgue(0.0, 1.0, 17).unwrap(), None).unwrap();
        assert_abs_diff_eq!(u.mix_density(&c, 9.0, None).unwrap(), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn mix_density_underflow() {
        let g = KernelSpec::Gaussian { sigma: 0.01 };
        let m = MixingMeasure::uniform(DominatingMeasure::lebesgue(0.0, 1.0, 11).unwrap(), None).unwrap();
        assert!(matches!(m.mix_density(&g, 100.0, None), Err(PrxError::Underflow(_))));
    }

    #[test]
    fn mix_density_is_linear() {
        let g = KernelSpec::Gaussian { sigma: 0.8 };
        let dom = DominatingMeasure::new(-3.0, 3.0, 61, Some(0.0)).unwrap();
        let grid = dom.grid();
        let f = MixingMeasure::from_parts(dom.clone(), grid.iter().map(|t| (-t * t).exp()).collect(), Some(0.2)).unwrap();
        let h = MixingMeasure::from_parts(dom.clone(), grid.iter().map(|t| 1.0 + t.sin()).collect(), Some(0.6)).unwrap();
        let lam = 0.3;
        let mix = MixingMeasure::from_parts(
            dom,
            f.density_values.iter().zip(&h.density_values).map(|(a, b)| lam * a + (1.0 - lam) * b).collect(),
            Some(lam * 0.2 + (1.0 - lam) * 0.6),
        )
        .unwrap();
        for &y in &[-2.0, 0.0, 0.7, 2.5] {
            let lhs = mix.mix_density(&g, y, None).unwrap();
            let rhs = lam * f.mix_density(&g, y, None).unwrap() + (1.0 - lam) * h.mix_density(&g, y, None).unwrap();
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn quadrature_converges() {
        let g = KernelSpec::Gaussian { sigma: 1.0 };
        let dens = |t: f64| 0.5 + 0.4 * (t * 1.3).sin();
        for n in [100usize, 200, 400] {
            let make = |n: usize| {
                let dom = DominatingMeasure::lebesgue(-4.0, 4.0, n).unwrap();
                let d = dom.grid().iter().map(|&t| dens(t)).collect();
                let mut m = MixingMeasure::from_parts(dom, d, None).unwrap();
                m.normalize();
                m
            };
            let (a, b) = (make(n), make(2 * n));
            for &y in &[-3.0, 0.1, 2.0] {
                let d = (a.mix_density(&g, y, None).unwrap() - b.mix_density(&g, y, None).unwrap()).abs();
                assert!(d < 1e-4, "n={n} y={y} diff {d}");
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let dom = DominatingMeasure::new(-2.0, 2.0, 9, Some(0.0)).unwrap();
        let d: Vec<f64> = dom.grid().iter().map(|t| 0.1 + 0.01 * t * t).collect();
        let mut m = MixingMeasure::from_parts(dom, d, Some(0.4)).unwrap();
        m.normalize();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = MixingMeasure::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.density_values, m.density_values);
        assert_eq!(back.atom_mass, m.atom_mass);
        assert_eq!(back.dom, m.dom);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# atom_location=0,atom_mass="));
    }
}
