//! Esseen-type smoothing bounds and empirical discrepancies of weighted synthetic
//! families against an inverted density.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charfn::{EvalPoint, Regime, TruncationPlan};
use crate::error::{MfnError, Result};
use crate::inversion::{cdf_from_density, rect_mass_from_density, DensityGrid};
use crate::measures::MeasureFamily;
use crate::rng::StreamSeed;
use crate::sampling::Sampler;

const STEP_1D: f64 = 1e-5;
const STEP_2D: f64 = 1e-4;

/// Constant in front of `2 (A1 + A2) / R` in the two-dimensional bound.
pub fn esseen_2d_constant() -> f64 {
    3.0 * 2f64.sqrt() + 4.0 * 3f64.sqrt() + 24.0 / PI
}

fn simpson_weights(r: f64, panels: usize) -> (Vec<f64>, Vec<f64>) {
    let h = 2.0 * r / panels as f64;
    let xs = (0..=panels).map(|k| if 2 * k == panels { 0.0 } else { -r + k as f64 * h }).collect();
    let ws = (0..=panels)
        .map(|k| {
            let c = if k == 0 || k == panels { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            c * h / 3.0
        })
        .collect();
    (xs, ws)
}

fn check_args(r: f64, points: usize, a: &[f64]) -> Result<()> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(MfnError::Config(format!("smoothing radius must be positive, got {r}")));
    }
    if points == 0 {
        return Err(MfnError::Config("integration needs at least one point".into()));
    }
    if a.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(MfnError::Config("density bounds must be finite and nonnegative".into()));
    }
    Ok(())
}

fn finite(x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(MfnError::NonFinite("smoothing-bound integrand"))
    }
}

/// `int_{-R}^{R} |d(u) / u| du`, with `|d'(0)|` at the origin.
fn weighted_ratio_integral<D: Fn(f64) -> Complex64>(d: D, r: f64, points: usize) -> Result<f64> {
    let (xs, ws) = simpson_weights(r, 2 * points);
    let mut total = 0.0;
    for (&u, &w) in xs.iter().zip(&ws) {
        let val = if u == 0.0 {
            ((d(STEP_1D) - d(-STEP_1D)) / (2.0 * STEP_1D)).norm()
        } else {
            (d(u) / u).norm()
        };
        total += w * finite(val)?;
    }
    Ok(total)
}

/// `(1/pi) int_{-R}^{R} |(f - g)/u| du + (24/pi) A/R` with `A >= sup |G'|`.
pub fn esseen_bound_1d<F, G>(f: F, g: G, a: f64, r: f64, points: usize) -> Result<f64>
where
    F: Fn(f64) -> Complex64,
    G: Fn(f64) -> Complex64,
{
    check_args(r, points, &[a])?;
    let integral = weighted_ratio_integral(|u| f(u) - g(u), r, points)?;
    Ok(integral / PI + 24.0 / PI * a / r)
}

/// The four terms of the two-dimensional bound, in the order they are summed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Esseen2dTerms {
    pub joint: f64,
    pub u_axis: f64,
    pub v_axis: f64,
    pub density: f64,
}

impl Esseen2dTerms {
    pub fn total(&self) -> f64 {
        self.joint + self.u_axis + self.v_axis + self.density
    }
}

/// Terms of the two-dimensional bound with `A1 >= sup |G_x|`, `A2 >= sup |G_y|`.
pub fn esseen_terms_2d<F, G>(f: F, g: G, a1: f64, a2: f64, r: f64, grid: usize) -> Result<Esseen2dTerms>
where
    F: Fn(f64, f64) -> Complex64 + Sync,
    G: Fn(f64, f64) -> Complex64 + Sync,
{
    check_args(r, grid, &[a1, a2])?;
    let hat = |h: &dyn Fn(f64, f64) -> Complex64, u: f64, v: f64| h(u, v) - h(u, 0.0) * h(0.0, v);
    let d = |u: f64, v: f64| hat(&f, u, v) - hat(&g, u, v);
    let (xs, ws) = simpson_weights(r, 2 * grid);
    let e = STEP_2D;
    let rows: Vec<f64> = xs
        .par_iter()
        .zip(&ws)
        .map(|(&u, &wu)| {
            let mut row = 0.0;
            for (&v, &wv) in xs.iter().zip(&ws) {
                // hat functions vanish on both axes; the quotient extends by differences
                let val = match (u == 0.0, v == 0.0) {
                    (true, true) => (d(e, e) - d(e, -e) - d(-e, e) + d(-e, -e)) / (4.0 * e * e),
                    (true, false) => (d(e, v) - d(-e, v)) / (2.0 * e * v),
                    (false, true) => (d(u, e) - d(u, -e)) / (2.0 * e * u),
                    (false, false) => d(u, v) / (u * v),
                };
                row += wv * finite(val.norm())?;
            }
            Ok(wu * row)
        })
        .collect::<Result<_>>()?;
    let joint = 2.0 / (4.0 * PI * PI) * rows.iter().sum::<f64>();
    let u_axis = 2.0 / PI * weighted_ratio_integral(|u| f(u, 0.0) - g(u, 0.0), r, grid)?;
    let v_axis = 2.0 / PI * weighted_ratio_integral(|v| f(0.0, v) - g(0.0, v), r, grid)?;
    let density = esseen_2d_constant() * 2.0 * (a1 + a2) / r;
    Ok(Esseen2dTerms { joint, u_axis, v_axis, density })
}

pub fn esseen_bound_2d<F, G>(f: F, g: G, a1: f64, a2: f64, r: f64, grid: usize) -> Result<f64>
where
    F: Fn(f64, f64) -> Complex64 + Sync,
    G: Fn(f64, f64) -> Complex64 + Sync,
{
    Ok(esseen_terms_2d(f, g, a1, a2, r, grid)?.total())
}

/// `A` for the one-dimensional bound: the density maximum in Lebesgue units plus its error.
pub fn density_bound_1d(grid: &DensityGrid) -> Result<f64> {
    if grid.regime != Regime::OneD {
        return Err(MfnError::RegimeMismatch("expected a one-dimensional density".into()));
    }
    Ok((grid.max() + grid.budget.pointwise()) / (2.0 * PI).sqrt())
}

/// `(A1, A2)`: maxima of the two marginal densities, which dominate the partial derivatives.
pub fn density_bounds_2d(grid: &DensityGrid) -> Result<(f64, f64)> {
    if grid.regime != Regime::TwoD {
        return Err(MfnError::RegimeMismatch("expected a two-dimensional density".into()));
    }
    let (nu, nv) = (grid.us.len(), grid.vs.len());
    let strip = |xs: &[f64], n: usize, f: &dyn Fn(usize) -> f64| -> f64 {
        (1..n).map(|k| 0.5 * (xs[k] - xs[k - 1]) * (f(k - 1) + f(k))).sum()
    };
    let err_u = grid.budget.pointwise() * (grid.vs[nv - 1] - grid.vs[0]);
    let err_v = grid.budget.pointwise() * (grid.us[nu - 1] - grid.us[0]);
    let a1 = (0..nu).map(|ju| strip(&grid.vs, nv, &|jv| grid.at(ju, jv))).fold(0.0, f64::max);
    let a2 = (0..nv).map(|jv| strip(&grid.us, nu, &|ju| grid.at(ju, jv))).fold(0.0, f64::max);
    Ok(((a1 + err_u) / (2.0 * PI), (a2 + err_v) / (2.0 * PI)))
}

/// How member weights are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum WeightScheme {
    Uniform,
    /// Weights proportional to `E^exponent` with `E` standard exponential.
    Concentrated { exponent: f64 },
}

/// Independent draws of `log L(s)` with nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFamily {
    pub s: EvalPoint,
    pub values: Vec<Complex64>,
    pub weights: Vec<f64>,
}

impl SyntheticFamily {
    pub fn new(s: EvalPoint, values: Vec<Complex64>, weights: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() != weights.len() {
            return Err(MfnError::Config("a family needs as many weights as members, at least one".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(MfnError::Config("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(MfnError::Config("weights must not all vanish".into()));
        }
        // already-normalized weights are kept bit for bit
        let weights = if (total - 1.0).abs() <= 1e-12 { weights } else { weights.into_iter().map(|w| w / total).collect() };
        Ok(Self { s, values, weights })
    }

    pub fn uniform(s: EvalPoint, values: Vec<Complex64>) -> Result<Self> {
        let n = values.len().max(1);
        Self::new(s, values, vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn regime(&self) -> Regime {
        self.s.regime()
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().cloned().fold(0.0, f64::max)
    }

    /// `sum w_k psi(z, z', w_k)`.
    pub fn char_fn(&self, z: Complex64, z2: Complex64) -> Complex64 {
        self.values.iter().zip(&self.weights).map(|(&w, &c)| crate::charfn::psi(z, z2, w) * c).sum()
    }
}

/// Stream used for member weights; member `k` uses stream `k`.
pub const WEIGHT_STREAM: u64 = u64::MAX;

/// `m` independent draws of `log L(s)` truncated at `plan.p_max`.
pub fn make_family(family: &MeasureFamily, plan: &TruncationPlan, m: usize, scheme: WeightScheme, seed: u64) -> Result<SyntheticFamily> {
    if m == 0 {
        return Err(MfnError::Config("family size must be at least 1".into()));
    }
    let sampler = Sampler::new(family, plan)?;
    let values = sampler.draw_many(seed, 0, m);
    let weights = match scheme {
        WeightScheme::Uniform => vec![1.0 / m as f64; m],
        WeightScheme::Concentrated { exponent } => {
            if !(exponent >= 0.0) || !exponent.is_finite() {
                return Err(MfnError::Config(format!("weight exponent must be nonnegative, got {exponent}")));
            }
            let base = StreamSeed::new(seed, WEIGHT_STREAM);
            (0..m as u64)
                .map(|k| {
                    let e: f64 = base.substream(k).sample(Exp1);
                    e.powf(exponent)
                })
                .collect()
        }
    };
    SyntheticFamily::new(plan.s, values, weights)
}

/// `max S - min S` over the running differences between a weighted step CDF and a
/// continuous CDF, which is the supremum over intervals.
fn interval_sup(points: &mut [(f64, f64)], cdf: impl Fn(f64) -> f64) -> f64 {
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    let mut acc = 0.0;
    let mut k = 0;
    while k < points.len() {
        let x = points[k].0;
        let g = cdf(x);
        let before = acc - g;
        while k < points.len() && points[k].0 == x {
            acc += points[k].1;
            k += 1;
        }
        let after = acc - g;
        hi = hi.max(before).max(after);
        lo = lo.min(before).min(after);
    }
    let end = acc - 1.0;
    hi.max(end) - lo.min(end)
}

/// Supremum over intervals (1D) or axis-parallel rectangles (2D) of
/// `|sum w 1_R(value) - int_R M|`.
///
/// In 2D the real-axis edges range over at most [`RECT_EDGE_CAP`] quantiles of the
/// member values, each on both sides of the jump; the imaginary-axis edges are exact.
pub fn empirical_discrepancy(family: &SyntheticFamily, density: &DensityGrid) -> Result<f64> {
    if family.regime() != density.regime {
        return Err(MfnError::RegimeMismatch(format!(
            "family is {:?} but density is {:?}",
            family.regime(),
            density.regime
        )));
    }
    match density.regime {
        Regime::OneD => {
            let cdf = cdf_from_density(density)?;
            let mut pts: Vec<(f64, f64)> = family.values.iter().zip(&family.weights).map(|(v, &w)| (v.re, w)).collect();
            Ok(interval_sup(&mut pts, |x| cdf.eval(x)))
        }
        Regime::TwoD => rect_discrepancy(family, density),
    }
}

/// Discrepancy over full-height strips `[a, b] x R`, compared with the u-marginal.
pub fn strip_discrepancy(family: &SyntheticFamily, density: &DensityGrid) -> Result<f64> {
    if density.regime != Regime::TwoD || family.regime() != Regime::TwoD {
        return Err(MfnError::RegimeMismatch("strip discrepancy needs two-dimensional inputs".into()));
    }
    let marginal = marginal_density(density)?;
    let cdf = cdf_from_density(&marginal)?;
    let mut pts: Vec<(f64, f64)> = family.values.iter().zip(&family.weights).map(|(v, &w)| (v.re, w)).collect();
    Ok(interval_sup(&mut pts, |x| cdf.eval(x)))
}

/// One-dimensional density of the real part of a two-dimensional one.
pub fn marginal_density(density: &DensityGrid) -> Result<DensityGrid> {
    Ok(DensityGrid {
        regime: Regime::OneD,
        us: density.us.clone(),
        vs: Vec::new(),
        values: density.marginal_u()?,
        budget: density.budget,
        radius: density.radius,
        p_max: density.p_max,
        char_step: (density.char_step.0, 0.0),
    })
}

pub const RECT_EDGE_CAP: usize = 128;

fn rect_discrepancy(family: &SyntheticFamily, density: &DensityGrid) -> Result<f64> {
    let mass = rect_mass_from_density(density)?;
    let n = family.len();
    let mut re: Vec<f64> = family.values.iter().map(|v| v.re).collect();
    re.sort_by(f64::total_cmp);
    re.dedup();
    let edges: Vec<f64> = if re.len() <= RECT_EDGE_CAP {
        re
    } else {
        let mut e: Vec<f64> = (0..RECT_EDGE_CAP).map(|k| re[k * (re.len() - 1) / (RECT_EDGE_CAP - 1)]).collect();
        e.dedup();
        e
    };
    // column states: (-inf), then for each edge x the limits "< x" and "<= x", then (+inf)
    let mut cols: Vec<(f64, bool)> = vec![(f64::NEG_INFINITY, true)];
    for &x in &edges {
        cols.push((x, false));
        cols.push((x, true));
    }
    cols.push((f64::INFINITY, true));

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| family.values[a].im.total_cmp(&family.values[b].im));
    // distinct imaginary parts with their member ranges
    let mut rows: Vec<(f64, usize, usize)> = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        let y = family.values[i].im;
        match rows.last_mut() {
            Some(last) if last.0 == y => last.2 = k + 1,
            _ => rows.push((y, k, k + 1)),
        }
    }
    let in_col = |x: f64, col: (f64, bool)| if col.1 { x <= col.0 } else { x < col.0 };
    let g = |u: f64, v: f64| if u == f64::NEG_INFINITY || v == f64::NEG_INFINITY { 0.0 } else { mass.cdf(u, v) };

    // states[c][2r] = difference for (-inf, col] x (-inf, y_r), states[c][2r + 1] for (-inf, y_r]
    let states: Vec<Vec<f64>> = cols
        .par_iter()
        .map(|&col| {
            let mut out = Vec::with_capacity(2 * rows.len() + 1);
            let mut acc = 0.0;
            for &(y, a, b) in &rows {
                let gv = g(col.0, y);
                out.push(acc - gv);
                acc += order[a..b].iter().filter(|&&i| in_col(family.values[i].re, col)).map(|&i| family.weights[i]).sum::<f64>();
                out.push(acc - gv);
            }
            out.push(acc - g(col.0, f64::INFINITY));
            out
        })
        .collect();

    let best = (0..cols.len())
        .into_par_iter()
        .map(|i| {
            let mut best = 0.0f64;
            for k in i + 1..cols.len() {
                let (mut hi, mut lo) = (0.0f64, 0.0f64);
                for (a, b) in states[k].iter().zip(&states[i]) {
                    let d = a - b;
                    hi = hi.max(d);
                    lo = lo.min(d);
                }
                best = best.max(hi - lo);
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    Ok(best)
}
