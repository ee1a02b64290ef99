//! Derivative-free minimization and box-constraint transforms.

/// Options for [`nelder_mead`].
#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadOptions {
    /// Offset of the initial simplex vertices along each axis.
    pub initial_step: f64,
    /// Stop when every vertex lies within this sup-distance of the best.
    pub xtol: f64,
    /// Stop when all vertex values agree to within this.
    pub ftol: f64,
    pub max_evals: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { initial_step: 0.5, xtol: 1e-6, ftol: 1e-10, max_evals: 500 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Nelder–Mead simplex minimization of `f` from `x0`.
///
/// Non-finite objective values are treated as `+∞`. Ties never displace the
/// incumbent best vertex, so a constant objective returns `x0`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum {
    let d = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let fx0 = eval(x0, &mut evals);
    if d == 0 || opts.max_evals <= 1 {
        return Minimum { x: x0.to_vec(), value: fx0, evals, converged: d == 0 };
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), fx0)];
    for i in 0..d {
        if evals >= opts.max_evals {
            break;
        }
        let mut x = x0.to_vec();
        x[i] += opts.initial_step;
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    if simplex.len() < d + 1 {
        return Minimum { x: x0.to_vec(), value: fx0, evals, converged: false };
    }

    let mut converged = false;
    loop {
        // stable sort keeps earlier (incumbent) vertices ahead on ties
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[d].1;
        let x_spread = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if x_spread <= opts.xtol || (worst.is_finite() && worst - best <= opts.ftol) {
            converged = true;
            break;
        }
        if evals >= opts.max_evals {
            break;
        }
        let mut centroid = vec![0.0; d];
        for (x, _) in &simplex[..d] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / d as f64;
            }
        }
        let along = |t: f64, worst_x: &[f64]| -> Vec<f64> {
            centroid.iter().zip(worst_x).map(|(c, w)| c + t * (c - w)).collect()
        };
        let worst_x = simplex[d].0.clone();
        let xr = along(REFLECT, &worst_x);
        let fr = eval(&xr, &mut evals);
        if fr < best {
            if evals >= opts.max_evals {
                simplex[d] = (xr, fr);
                continue;
            }
            let xe = along(REFLECT * EXPAND, &worst_x);
            let fe = eval(&xe, &mut evals);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
            continue;
        }
        if evals >= opts.max_evals {
            continue;
        }
        let (xc, fc) = if fr < worst {
            let xc = along(REFLECT * CONTRACT, &worst_x);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(-CONTRACT, &worst_x);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < worst.min(fr) {
            simplex[d] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for (x, v) in simplex.iter_mut().skip(1) {
            if evals >= opts.max_evals {
                break;
            }
            for (xi, bi) in x.iter_mut().zip(&x_best) {
                *xi = bi + SHRINK * (*xi - bi);
            }
            *v = eval(x, &mut evals);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Minimum { x, value, evals, converged }
}

/// Nelder–Mead from each of `starts`, sharing one evaluation budget.
///
/// A later start only replaces the incumbent on strict improvement.
pub fn multistart<F: FnMut(&[f64]) -> f64>(mut f: F, starts: &[Vec<f64>], opts: &NelderMeadOptions) -> Minimum {
    let mut best: Option<Minimum> = None;
    let mut used = 0;
    for s in starts {
        if used >= opts.max_evals {
            break;
        }
        let local = NelderMeadOptions { max_evals: opts.max_evals - used, ..opts.clone() };
        let m = nelder_mead(&mut f, s, &local);
        used += m.evals;
        best = match best {
            Some(b) if b.value <= m.value => Some(b),
            _ => Some(m),
        };
    }
    let mut out = best.expect("at least one start");
    out.evals = used;
    out
}

/// Map between a constrained parameter and the real line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    Identity,
    /// `u = ln(p - lo)` for `p > lo`.
    Log { lo: f64 },
    /// Logit of the position in `[lo, hi]`.
    Logit { lo: f64, hi: f64 },
    /// Logit of the position of `ln p` in `[ln lo, ln hi]`, `lo > 0`.
    LogLogit { lo: f64, hi: f64 },
}

/// Fractions are kept this far inside a box so the logit stays finite.
const EDGE: f64 = 1e-9;

fn logit(t: f64) -> f64 {
    let t = t.clamp(EDGE, 1.0 - EDGE);
    (t / (1.0 - t)).ln()
}

fn expit(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

impl Transform {
    /// Picks the transform for a parameter constrained to `[lo, hi]`.
    pub fn for_bounds(lo: f64, hi: f64) -> Self {
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) if lo > 0.0 => Transform::LogLogit { lo, hi },
            (true, true) => Transform::Logit { lo, hi },
            (true, false) => Transform::Log { lo },
            _ => Transform::Identity,
        }
    }

    pub fn to_real(&self, p: f64) -> f64 {
        match *self {
            Transform::Identity => p,
            Transform::Log { lo } => (p - lo).max(f64::MIN_POSITIVE).ln(),
            Transform::Logit { lo, hi } => logit((p - lo) / (hi - lo)),
            Transform::LogLogit { lo, hi } => logit((p.max(lo).ln() - lo.ln()) / (hi.ln() - lo.ln())),
        }
    }

    pub fn from_real(&self, u: f64) -> f64 {
        match *self {
            Transform::Identity => u,
            Transform::Log { lo } => lo + u.exp(),
            Transform::Logit { lo, hi } => lo + (hi - lo) * expit(u),
            Transform::LogLogit { lo, hi } => (lo.ln() + (hi.ln() - lo.ln()) * expit(u)).exp(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn minimizes_quadratic() {
        let f = |x: &[f64]| (x[0] - 1.5).powi(2) + 3.0 * (x[1] + 0.5).powi(2);
        let m = nelder_mead(f, &[0.0, 0.0], &NelderMeadOptions::default());
        assert!(m.converged);
        assert_abs_diff_eq!(m.x[0], 1.5, epsilon = 1e-5);
        assert_abs_diff_eq!(m.x[1], -0.5, epsilon = 1e-5);
    }

    #[test]
    fn minimizes_rosenbrock_with_budget() {
        let f = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let opts = NelderMeadOptions { max_evals: 2000, ..Default::default() };
        let m = nelder_mead(f, &[-1.2, 1.0], &opts);
        assert!(m.evals <= 2000);
        assert_abs_diff_eq!(m.x[0], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn flat_objective_returns_start() {
        let m = multistart(|_| 7.0, &[vec![0.3, -0.2], vec![1.3, 0.8]], &NelderMeadOptions::default());
        assert_eq!(m.x, vec![0.3, -0.2]);
        assert_eq!(m.value, 7.0);
    }

    #[test]
    fn budget_is_shared() {
        let mut calls = 0;
        let opts = NelderMeadOptions { max_evals: 40, xtol: 0.0, ftol: -1.0, ..Default::default() };
        let m = multistart(
            |x| {
                calls += 1;
                x.iter().map(|v| v.sin()).sum::<f64>()
            },
            &[vec![0.0; 3], vec![1.0; 3], vec![-1.0; 3]],
            &opts,
        );
        assert_eq!(calls, m.evals);
        assert!(calls <= 40);
    }

    #[test]
    fn infinite_values_are_avoided() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.2).powi(2) };
        let m = nelder_mead(f, &[1.0], &NelderMeadOptions::default());
        assert_abs_diff_eq!(m.x[0], 0.2, epsilon = 1e-5);
    }

    #[test]
    fn transform_choice() {
        assert_eq!(Transform::for_bounds(0.0, 500.0), Transform::Logit { lo: 0.0, hi: 500.0 });
        assert_eq!(Transform::for_bounds(0.1, 4.0), Transform::LogLogit { lo: 0.1, hi: 4.0 });
        assert_eq!(Transform::for_bounds(0.0, f64::INFINITY), Transform::Log { lo: 0.0 });
        assert_eq!(Transform::for_bounds(f64::NEG_INFINITY, f64::INFINITY), Transform::Identity);
        // values on the boundary map to finite reals
        assert!(Transform::for_bounds(0.0, 500.0).to_real(0.0).is_finite());
    }

    proptest! {
        #[test]
        fn transforms_round_trip(frac in 0.001f64..0.999, lo in 0.01f64..5.0, width in 0.1f64..100.0) {
            let hi = lo + width;
            let p = lo + frac * width;
            for t in [Transform::Logit { lo, hi }, Transform::LogLogit { lo, hi }, Transform::Log { lo }, Transform::Identity] {
                let back = t.from_real(t.to_real(p));
                prop_assert!((back - p).abs() < 1e-9 * (1.0 + p.abs()), "{t:?}: {p} -> {back}");
            }
        }

        #[test]
        fn images_stay_in_box(u in -50.0f64..50.0, lo in 0.01f64..5.0, width in 0.1f64..100.0) {
            let hi = lo + width;
            for t in [Transform::Logit { lo, hi }, Transform::LogLogit { lo, hi }] {
                let p = t.from_real(u);
                prop_assert!(p >= lo * (1.0 - 1e-12) && p <= hi * (1.0 + 1e-12));
            }
        }
    }
}
