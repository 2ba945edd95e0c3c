//! Characteristic function of `log L(s, Theta)` as a product of local expectations.
//!
//! For `w = log L` and complex `z, z'` the function is
//! `E[psi_{z,z'}(w)]` with `psi_{z,z'}(w) = exp((i/2)(z conj(w) + z' w))`. Writing
//! `w = X + iY` this is `E[exp(alpha X + beta Y)]` with `alpha = i(z+z')/2` and
//! `beta = (z-z')/2`, which factors over primes by independence.
//!
//! An evaluator splits the primes up to `p_max` in two:
//!
//! * small primes are integrated directly, with per-prime adaptive midpoint
//!   quadrature whose node values `X, Y` are cached;
//! * larger primes are aggregated into a single truncated cumulant series in
//!   `(alpha, beta)`, with an explicit remainder bound.
//!
//! Primes above `p_max` are covered by the rigorous bound in [`TailModel`].

use std::f64::consts::{LN_2, PI};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MfnError, Result};
use crate::measures::{AngleMeasure, MeasureFamily};
use crate::primes::{prime_tail_bound, shared_table};
use crate::series::{BiSeries, SeriesSum};

/// Real axis (`t = 0`, `log L` real) or off-axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "1d")]
    OneD,
    #[serde(rename = "2d")]
    TwoD,
}

#[derive(Deserialize)]
struct RawEvalPoint {
    sigma: f64,
    t: f64,
}

/// `s = sigma + i t` with `sigma > 1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEvalPoint")]
pub struct EvalPoint {
    sigma: f64,
    t: f64,
}

impl TryFrom<RawEvalPoint> for EvalPoint {
    type Error = MfnError;

    fn try_from(raw: RawEvalPoint) -> Result<Self> {
        EvalPoint::new(raw.sigma, raw.t)
    }
}

impl EvalPoint {
    pub fn new(sigma: f64, t: f64) -> Result<Self> {
        if !(sigma > 0.5 && sigma.is_finite()) {
            return Err(MfnError::HalfPlane { sigma });
        }
        if !t.is_finite() {
            return Err(MfnError::Config(format!("t must be finite, got {t}")));
        }
        Ok(Self { sigma, t })
    }

    pub fn real(sigma: f64) -> Result<Self> {
        Self::new(sigma, 0.0)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn s(&self) -> Complex64 {
        Complex64::new(self.sigma, self.t)
    }

    pub fn regime(&self) -> Regime {
        if self.t == 0.0 {
            Regime::OneD
        } else {
            Regime::TwoD
        }
    }

    /// `p^(-s)`.
    pub fn prime_power(&self, p: u64) -> Complex64 {
        let l = (p as f64).ln();
        Complex64::from_polar((-self.sigma * l).exp(), -self.t * l)
    }
}

/// `log(1 + u)` without cancellation for small `u`.
fn log1p_c(u: Complex64) -> Complex64 {
    let m = u.re * (2.0 + u.re) + u.im * u.im;
    Complex64::new(0.5 * m.ln_1p(), u.im.atan2(1.0 + u.re))
}

/// `-log(1 - e^{i theta} p^-s) - log(1 - e^{-i theta} p^-s)`.
///
/// On the real axis the two terms are conjugate and the result is computed as a
/// real number, so its imaginary part is exactly zero.
pub fn local_log(theta: f64, p: u64, s: &EvalPoint) -> Complex64 {
    local_log_at(theta, local_base(p, s), s.regime())
}

/// `p^-s` as used by [`local_log`]; real on the real axis.
pub fn local_base(p: u64, s: &EvalPoint) -> Complex64 {
    match s.regime() {
        Regime::OneD => Complex64::new((p as f64).powf(-s.sigma), 0.0),
        Regime::TwoD => s.prime_power(p),
    }
}

/// [`local_log`] with `q = local_base(p, s)` precomputed.
pub fn local_log_at(theta: f64, q: Complex64, regime: Regime) -> Complex64 {
    let (sin, cos) = theta.sin_cos();
    match regime {
        Regime::OneD => Complex64::new(-(q.re * (q.re - 2.0 * cos)).ln_1p(), 0.0),
        Regime::TwoD => {
            let e = Complex64::new(cos, sin);
            -(log1p_c(-e * q) + log1p_c(-e.conj() * q))
        }
    }
}

/// `psi_{z,z'}(w) = exp((i/2)(z conj(w) + z' w))`.
pub fn psi(z: Complex64, z2: Complex64, w: Complex64) -> Complex64 {
    (Complex64::i() * 0.5 * (z * w.conj() + z2 * w)).exp()
}

/// Size of `(z, z')` that controls `|alpha X + beta Y|`: `|alpha|` on the real
/// axis, where `Y = 0`, and `max(|z|, |z'|)` otherwise.
pub fn effective_radius(regime: Regime, z: Complex64, z2: Complex64) -> f64 {
    match regime {
        Regime::OneD => 0.5 * (z + z2).norm(),
        Regime::TwoD => z.norm().max(z2.norm()),
    }
}

/// `(alpha, beta)` with `psi_{z,z'}(X + iY) = exp(alpha X + beta Y)`.
pub fn exponent_pair(z: Complex64, z2: Complex64) -> (Complex64, Complex64) {
    let sum = z + z2;
    let alpha = Complex64::new(-0.5 * sum.im, 0.5 * sum.re);
    (alpha, 0.5 * (z - z2))
}

/// Node values of the local logarithm for one prime, with quadrature weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalNodes {
    pub x: Vec<f64>,
    /// Empty on the real axis.
    pub y: Vec<f64>,
    pub w: Vec<f64>,
}

impl LocalNodes {
    pub fn build(measure: &AngleMeasure, p: u64, s: &EvalPoint, order: usize) -> Result<Self> {
        let quad = measure.quadrature_for(order)?;
        let mut x = Vec::with_capacity(order);
        let mut y = Vec::new();
        match s.regime() {
            Regime::OneD => {
                let q = (p as f64).powf(-s.sigma);
                x.extend(quad.nodes.iter().map(|t| -(q * (q - 2.0 * t.cos())).ln_1p()));
            }
            Regime::TwoD => {
                let q = s.prime_power(p);
                y.reserve(order);
                for &t in &quad.nodes {
                    let (sin, cos) = t.sin_cos();
                    let e = Complex64::new(cos, sin);
                    let w = -(log1p_c(-e * q) + log1p_c(-e.conj() * q));
                    x.push(w.re);
                    y.push(w.im);
                }
            }
        }
        Ok(Self { x, y, w: quad.weights })
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// `sum_i w_i exp(alpha X_i + beta Y_i)`.
    pub fn factor(&self, alpha: Complex64, beta: Complex64) -> Complex64 {
        let phase_only = alpha.re == 0.0 && beta.re == 0.0;
        let mut acc = Complex64::new(0.0, 0.0);
        if self.y.is_empty() {
            if phase_only {
                for (&x, &w) in self.x.iter().zip(&self.w) {
                    let (s, c) = (alpha.im * x).sin_cos();
                    acc.re += w * c;
                    acc.im += w * s;
                }
            } else {
                for (&x, &w) in self.x.iter().zip(&self.w) {
                    acc += (alpha * x).exp() * w;
                }
            }
        } else if phase_only {
            for ((&x, &y), &w) in self.x.iter().zip(&self.y).zip(&self.w) {
                let (s, c) = (alpha.im * x + beta.im * y).sin_cos();
                acc.re += w * c;
                acc.im += w * s;
            }
        } else {
            for ((&x, &y), &w) in self.x.iter().zip(&self.y).zip(&self.w) {
                acc += (alpha * x + beta * y).exp() * w;
            }
        }
        acc
    }

    /// Cumulant series of `(X, Y)` up to total degree `order`.
    pub fn cumulants(&self, order: usize) -> BiSeries {
        let max_b = if self.y.is_empty() { 0 } else { order };
        let inv_fact: Vec<f64> = (0..=order)
            .scan(1.0, |f, k| {
                if k > 0 {
                    *f *= k as f64;
                }
                Some(1.0 / *f)
            })
            .collect();
        let mut raw = BiSeries::zero(order, max_b);
        let mut xp = vec![1.0; order + 1];
        let mut yp = vec![1.0; max_b + 1];
        for i in 0..self.len() {
            for a in 1..=order {
                xp[a] = xp[a - 1] * self.x[i];
            }
            for b in 1..=max_b {
                yp[b] = yp[b - 1] * self.y[i];
            }
            let w = self.w[i];
            for b in 0..=max_b {
                let wy = w * yp[b] * inv_fact[b];
                for a in 0..=order - b {
                    raw.add_to(a, b, wy * xp[a] * inv_fact[a]);
                }
            }
        }
        raw.ln()
    }
}

/// Quadrature controls for direct primes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadOptions {
    /// Starting number of nodes.
    pub base_order: usize,
    /// Relative agreement required between `n` and `2n` nodes.
    pub tol: f64,
    pub max_order: usize,
    /// Also probe non-unimodular pairs `(z, z')`, needed for complex moments.
    pub general_pairs: bool,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { base_order: 64, tol: 1e-13, max_order: 8192, general_pairs: false }
    }
}

/// Direct-prime node set with its self-diagnosed absolute error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectPrime {
    pub p: u64,
    pub nodes: LocalNodes,
    pub quad_err: f64,
    pub converged: bool,
}

fn bound_on_log(p: u64, sigma: f64) -> f64 {
    // |log(1 - e^{i theta} p^-s)| <= -log(1 - p^-sigma)
    -2.0 * (-(p as f64).powf(-sigma)).ln_1p()
}

fn adapt_prime(
    measure: &AngleMeasure,
    p: u64,
    s: &EvalPoint,
    probes: &[(Complex64, Complex64)],
    max_abs_z: f64,
    opts: &QuadOptions,
) -> Result<DirectPrime> {
    let mut n = if max_abs_z * bound_on_log(p, s.sigma) < 1.0 { 16 } else { opts.base_order };
    if matches!(measure, AngleMeasure::Tabulated(_)) {
        n = n.max(256);
    }
    let mut coarse = LocalNodes::build(measure, p, s, n)?;
    loop {
        let fine = LocalNodes::build(measure, p, s, 2 * n)?;
        let mut err: f64 = 0.0;
        let mut ok = true;
        for &(a, b) in probes {
            let f2 = fine.factor(a, b);
            let d = (coarse.factor(a, b) - f2).norm();
            err = err.max(d);
            if !(d <= opts.tol * f2.norm().max(0.05)) {
                ok = false;
            }
        }
        if ok || 2 * n >= opts.max_order {
            if !ok {
                log::warn!("quadrature at p = {p} did not settle with {} nodes (difference {err:.2e})", 2 * n);
            }
            return Ok(DirectPrime { p, nodes: fine, quad_err: err, converged: ok });
        }
        n *= 2;
        coarse = fine;
    }
}

fn probe_pairs(regime: Regime, radius: f64, general: bool) -> Vec<(Complex64, Complex64)> {
    let mut zs = Vec::new();
    for scale in [1.0, 0.5, 0.25] {
        let r = radius * scale;
        match regime {
            Regime::OneD => zs.push(Complex64::new(r, 0.0)),
            Regime::TwoD => {
                for k in 0..8 {
                    zs.push(Complex64::from_polar(r, PI * k as f64 / 8.0));
                }
            }
        }
    }
    let mut out: Vec<_> = zs.iter().map(|&z| exponent_pair(z, z.conj())).collect();
    if general {
        let r = Complex64::new(radius, 0.0);
        let i = Complex64::i();
        for (z, z2) in [(i * r, i * r), (-i * r, -i * r), (r, -r), (-r, r), (i * r * 0.5, i * r * 0.5)] {
            out.push(exponent_pair(z, z2));
        }
    }
    out
}

/// Adaptive estimate of the local expectation `E[psi_{z,z'}(local_log(Theta_p, p, s))]`.
pub fn local_char_factor(measure: &AngleMeasure, p: u64, s: &EvalPoint, z: Complex64, z2: Complex64) -> Result<Complex64> {
    let probe = exponent_pair(z, z2);
    let opts = QuadOptions::default();
    let dp = adapt_prime(measure, p, s, &[probe], effective_radius(s.regime(), z, z2), &opts)?;
    Ok(dp.nodes.factor(probe.0, probe.1))
}

/// Rigorous bound for the omitted primes `p > cutoff`.
///
/// With `xi_p = alpha X_p + beta Y_p` and `A = max(|z|, |z'|)`, one has
/// `|xi_p| <= A b_p`, `b_p = -2 log(1 - p^-sigma)`, and
/// `|M_p - 1| <= A |E w_p| + A^2 e^{A b_P} E|w_p|^2 =: delta_p`, whence
/// `|prod_{p > P} M_p - 1| <= exp(sum delta_p) - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailModel {
    pub sigma: f64,
    pub cutoff: f64,
    /// Bound for `|E cos Theta_p|` above the cutoff.
    pub mean_cos: f64,
    /// Bound for `E[cos^2 Theta_p]` above the cutoff.
    pub cos_sq: f64,
    /// `sum_{p > P} p^(-k sigma)` for `k = 1..4` (the first is unused when `mean_cos = 0`).
    pub sums: [f64; 4],
}

impl TailModel {
    pub fn new(family: &MeasureFamily, sigma: f64, cutoff: f64) -> Result<Self> {
        let mean_cos = family_mean_cos(family);
        let cos_sq = match family {
            MeasureFamily::SatoTate => 0.25,
            MeasureFamily::Plancherel => 0.25 * (1.0 + 1.0 / cutoff.max(2.0)),
            MeasureFamily::Custom { measure, .. } => measure.expect_real(|t| t.cos().powi(2), 1024)?.min(1.0),
        };
        let s1 = if mean_cos > 0.0 {
            if sigma <= 1.0 {
                return Err(MfnError::Config(format!(
                    "measure has E[cos] = {mean_cos:.3e} != 0; the product only converges for sigma > 1"
                )));
            }
            prime_tail_bound(cutoff, sigma)?
        } else {
            0.0
        };
        let sums = [
            s1,
            prime_tail_bound(cutoff, 2.0 * sigma)?,
            prime_tail_bound(cutoff, 3.0 * sigma)?,
            prime_tail_bound(cutoff, 4.0 * sigma)?,
        ];
        Ok(Self { sigma, cutoff, mean_cos, cos_sq, sums })
    }

    fn delta_sum(&self, r: f64) -> f64 {
        let u = self.cutoff.powf(-self.sigma);
        let c = 1.0 / (1.0 - u);
        let b = -2.0 * (-u).ln_1p();
        let [s1, s2, s3, s4] = self.sums;
        let first = r * (2.0 * self.mean_cos * s1 + c * s2);
        let second_moment = 4.0 * self.cos_sq * s2 + 4.0 * self.cos_sq.sqrt() * c * s3 + c * c * s4;
        first + r * r * (r * b).exp() * second_moment
    }

    /// Relative error bound at `max(|z|, |z'|) = r`.
    pub fn bound(&self, r: f64) -> f64 {
        self.delta_sum(r).exp_m1()
    }
}

fn family_mean_cos(family: &MeasureFamily) -> f64 {
    let m = family.mean_cos_bound();
    // symmetric tables give rounding-level means
    if m <= 1e-12 {
        0.0
    } else {
        m
    }
}

/// Plan construction controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanOptions {
    pub quad_order: usize,
    /// Highest cumulant degree used for aggregated primes.
    pub series_order: usize,
    /// Budget for the summed series remainders.
    pub series_tol: f64,
    pub sieve_cap: u64,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self { quad_order: 64, series_order: 10, series_tol: 1e-12, sieve_cap: 200_000_000 }
    }
}

/// Prime cutoff, quadrature order and certified tail for a range of `|z|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationPlan {
    pub s: EvalPoint,
    pub p_max: u64,
    pub quad_order: usize,
    /// Relative error bound for the omitted primes at `|z| = max_abs_z`.
    pub tail_bound: f64,
    pub max_abs_z: f64,
    pub tol: f64,
    /// Largest prime integrated directly; primes above it go into the series.
    pub series_cutoff: u64,
    pub series_order: usize,
    pub series_tol: f64,
    /// Summed series remainder bound at `max_abs_z`.
    pub series_remainder: f64,
    pub tail: TailModel,
}

impl TruncationPlan {
    /// Pointwise relative tail bound at `r <= max_abs_z`.
    pub fn tail_bound_at(&self, r: f64) -> f64 {
        self.tail.bound(r)
    }

    /// Pointwise bound for the series remainder at `r <= max_abs_z`.
    pub fn series_remainder_at(&self, r: f64) -> f64 {
        if self.max_abs_z == 0.0 {
            return 0.0;
        }
        // every retained degree is >= 2, so the remainder scales at least like r^3
        self.series_remainder * (r / self.max_abs_z).min(1.0).powi(3)
    }

    /// Plan with a prescribed cutoff instead of a tolerance.
    pub fn with_p_max(s: EvalPoint, family: &MeasureFamily, max_abs_z: f64, p_max: u64, opts: &PlanOptions) -> Result<Self> {
        if p_max < 2 {
            return Err(MfnError::EmptyPrimeTable { limit: p_max });
        }
        let tail = TailModel::new(family, s.sigma, p_max as f64)?;
        let tail_bound = tail.bound(max_abs_z);
        let (series_cutoff, series_remainder) = split_primes(&s, max_abs_z, p_max, opts)?;
        Ok(Self {
            s,
            p_max,
            quad_order: opts.quad_order,
            tail_bound,
            max_abs_z,
            tol: tail_bound,
            series_cutoff,
            series_order: opts.series_order,
            series_tol: opts.series_tol,
            series_remainder,
            tail,
        })
    }
}

fn series_ratio(p: u64, sigma: f64, max_abs_z: f64) -> f64 {
    max_abs_z * bound_on_log(p, sigma) / 1.5f64.ln()
}

fn series_rem(q: f64, order: usize) -> f64 {
    if q >= 1.0 {
        f64::INFINITY
    } else {
        LN_2 * q.powi(order as i32 + 1) / (1.0 - q)
    }
}

/// Degree used for one aggregated prime.
fn prime_series_order(q: f64, max_order: usize, floor: f64) -> usize {
    let target = series_rem(q, max_order).max(floor);
    (2..=max_order).find(|&j| series_rem(q, j) <= target).unwrap_or(max_order)
}

/// Returns the direct/series split point and the summed remainder.
fn split_primes(s: &EvalPoint, max_abs_z: f64, p_max: u64, opts: &PlanOptions) -> Result<(u64, f64)> {
    let table = shared_table(p_max)?;
    let primes = table.up_to(p_max);
    let j = opts.series_order;
    let rems: Vec<f64> = primes.iter().map(|&p| series_rem(series_ratio(p, s.sigma, max_abs_z), j)).collect();
    let mut split = primes.len();
    let mut acc = 0.0;
    for i in (0..primes.len()).rev() {
        if acc + rems[i] > opts.series_tol {
            break;
        }
        acc += rems[i];
        split = i;
    }
    let cutoff = if split == 0 { 1 } else { primes[split - 1] };
    let n_series = (primes.len() - split).max(1) as f64;
    let floor = opts.series_tol / n_series;
    let total = primes[split..]
        .iter()
        .map(|&p| {
            let q = series_ratio(p, s.sigma, max_abs_z);
            series_rem(q, prime_series_order(q, j, floor))
        })
        .sum();
    Ok((cutoff, total))
}

/// Chooses the smallest cutoff whose tail bound at `max_abs_z` is at most `tol`.
pub fn plan_truncation(s: EvalPoint, family: &MeasureFamily, max_abs_z: f64, tol: f64) -> Result<TruncationPlan> {
    plan_truncation_with(s, family, max_abs_z, tol, &PlanOptions::default())
}

pub fn plan_truncation_with(
    s: EvalPoint,
    family: &MeasureFamily,
    max_abs_z: f64,
    tol: f64,
    opts: &PlanOptions,
) -> Result<TruncationPlan> {
    if !(tol > 0.0) {
        return Err(MfnError::Config(format!("tolerance must be positive, got {tol}")));
    }
    if !(max_abs_z >= 0.0 && max_abs_z.is_finite()) {
        return Err(MfnError::Config(format!("max |z| must be finite and >= 0, got {max_abs_z}")));
    }
    let bound = |p: f64| -> Result<f64> { Ok(TailModel::new(family, s.sigma, p)?.bound(max_abs_z)) };
    let cap = opts.sieve_cap;
    if bound(cap as f64)? > tol {
        // locate the needed cutoff analytically, beyond the sieve
        let mut p = cap as f64;
        while p < 1e18 && bound(p)? > tol {
            p *= 4.0;
        }
        let required = if bound(p)? <= tol { p } else { f64::INFINITY };
        return Err(MfnError::SieveCap { required, cap });
    }
    let (mut lo, mut hi) = (2u64, cap);
    if bound(2.0)? <= tol {
        hi = 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if bound(mid as f64)? <= tol {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut plan = TruncationPlan::with_p_max(s, family, max_abs_z, hi, opts)?;
    plan.tol = tol;
    Ok(plan)
}

/// A value with its absolute error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharFnValue {
    pub value: Complex64,
    pub abs_err: f64,
}

/// Reusable evaluator for one `(family, s, plan)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharFnEvaluator {
    s: EvalPoint,
    max_abs_z: f64,
    direct: Vec<DirectPrime>,
    /// Cumulant series of the aggregated primes.
    series: BiSeries,
    /// Cumulant series of `log L` over all primes up to `p_max`.
    cumulants: BiSeries,
    plan: Option<TruncationPlan>,
}

fn series_nodes(measure: &AngleMeasure, p: u64, sigma: f64) -> usize {
    if matches!(measure, AngleMeasure::Tabulated(_)) {
        return 256;
    }
    let u = (p as f64).powf(-sigma);
    if u < 0.1 {
        16
    } else if u < 0.5 {
        64
    } else {
        128
    }
}

impl CharFnEvaluator {
    pub fn new(family: &MeasureFamily, plan: &TruncationPlan) -> Result<Self> {
        Self::with_options(family, plan, &QuadOptions { base_order: plan.quad_order, ..QuadOptions::default() })
    }

    pub fn with_options(family: &MeasureFamily, plan: &TruncationPlan, opts: &QuadOptions) -> Result<Self> {
        let s = plan.s;
        let table = shared_table(plan.p_max)?;
        let direct_primes = table.up_to(plan.series_cutoff.min(plan.p_max));
        let series_primes = table.between(plan.series_cutoff, plan.p_max);
        let mut out = Self::finite(family, s, direct_primes, plan.max_abs_z, plan.series_order, opts)?;

        let order = plan.series_order;
        let max_b = if s.regime() == Regime::OneD { 0 } else { order };
        let floor = plan.series_tol / series_primes.len().max(1) as f64;
        let a = plan.max_abs_z;
        let sum = series_primes
            .par_chunks(4096)
            .map(|chunk| -> Result<SeriesSum> {
                let mut acc = SeriesSum::new(order, max_b);
                for &p in chunk {
                    let measure = family.at(p);
                    let q = series_ratio(p, s.sigma, a);
                    let j = prime_series_order(q, order, floor);
                    let nodes = LocalNodes::build(&measure, p, &s, series_nodes(&measure, p, s.sigma))?;
                    acc.add(&nodes.cumulants(j));
                }
                Ok(acc)
            })
            .try_reduce(|| SeriesSum::new(order, max_b), |mut x, y| {
                x.merge(&y);
                Ok(x)
            })?;
        out.series = sum.total();
        out.cumulants = out.cumulants.add(&out.series);
        out.plan = Some(plan.clone());
        Ok(out)
    }

    /// Exact finite product over `primes`, with no tail.
    pub fn finite(
        family: &MeasureFamily,
        s: EvalPoint,
        primes: &[u64],
        max_abs_z: f64,
        cumulant_order: usize,
        opts: &QuadOptions,
    ) -> Result<Self> {
        let probes = probe_pairs(s.regime(), max_abs_z, opts.general_pairs);
        let direct: Vec<DirectPrime> = primes
            .par_iter()
            .map(|&p| adapt_prime(&family.at(p), p, &s, &probes, max_abs_z, opts))
            .collect::<Result<_>>()?;
        let max_b = if s.regime() == Regime::OneD { 0 } else { cumulant_order };
        let mut acc = SeriesSum::new(cumulant_order, max_b);
        for &p in primes {
            let nodes = LocalNodes::build(&family.at(p), p, &s, 64.max(series_nodes(&family.at(p), p, s.sigma)))?;
            acc.add(&nodes.cumulants(cumulant_order));
        }
        Ok(Self {
            s,
            max_abs_z,
            direct,
            series: BiSeries::zero(cumulant_order, max_b),
            cumulants: acc.total(),
            plan: None,
        })
    }

    pub fn eval_point(&self) -> EvalPoint {
        self.s
    }

    pub fn max_abs_z(&self) -> f64 {
        self.max_abs_z
    }

    pub fn plan(&self) -> Option<&TruncationPlan> {
        self.plan.as_ref()
    }

    pub fn direct_primes(&self) -> &[DirectPrime] {
        &self.direct
    }

    /// Number of direct primes whose quadrature hit the node cap.
    pub fn unconverged(&self) -> usize {
        self.direct.iter().filter(|d| !d.converged).count()
    }

    /// Largest node count used for a direct prime.
    pub fn max_nodes(&self) -> usize {
        self.direct.iter().map(|d| d.nodes.len()).max().unwrap_or(0)
    }

    /// Cumulant series of `log L` truncated at `p_max`; `scaled(a, b)` gives
    /// the joint cumulant of `(Re, Im)` of order `(a, b)`.
    pub fn cumulants(&self) -> &BiSeries {
        &self.cumulants
    }

    /// `E[psi_{z,z'}(log L)]` with its error estimate.
    pub fn eval(&self, z: Complex64, z2: Complex64) -> Result<CharFnValue> {
        let r = effective_radius(self.s.regime(), z, z2);
        if !(r <= self.max_abs_z * (1.0 + 1e-12)) {
            return Err(MfnError::PlanViolation { abs_z: r, max_abs_z: self.max_abs_z });
        }
        let zero = Complex64::new(0.0, 0.0);
        if z == zero && z2 == zero {
            return Ok(CharFnValue { value: Complex64::new(1.0, 0.0), abs_err: 0.0 });
        }
        let (alpha, beta) = exponent_pair(z, z2);
        let mut log_acc = self.series.eval(alpha, beta);
        let mut rel_quad = 0.0;
        for d in &self.direct {
            let f = d.nodes.factor(alpha, beta);
            let m = f.norm();
            if m == 0.0 {
                return Ok(CharFnValue { value: zero, abs_err: d.quad_err });
            }
            rel_quad += d.quad_err / m;
            log_acc += f.ln();
        }
        if !(log_acc.re.is_finite() && log_acc.im.is_finite()) {
            return Err(MfnError::NonFinite("characteristic function"));
        }
        let value = log_acc.exp();
        let (tail, series) = match &self.plan {
            Some(plan) => (plan.tail_bound_at(r), plan.series_remainder_at(r)),
            None => (0.0, 0.0),
        };
        // |M_p| <= 1 for unimodular psi, so the omitted product cannot exceed 1 in modulus
        let tail = if alpha.re == 0.0 && beta.re == 0.0 { tail.min(2.0) } else { tail };
        let rel = (1.0 + tail) * series.exp() - 1.0 + rel_quad;
        Ok(CharFnValue { value, abs_err: value.norm() * rel })
    }

    /// `Lambda(z) = E[psi_{z, conj z}(log L)]`.
    pub fn lambda(&self, z: Complex64) -> Result<CharFnValue> {
        self.eval(z, z.conj())
    }

    /// Evaluates `Lambda` on the product grid `xs x ys` (row-major in `y`).
    ///
    /// Agrees with [`Self::lambda`] up to rounding; the node sums factor as
    /// `e^(ixX) e^(iyY)`, so each prime costs one multiply-add per point and node.
    pub fn grid(&self, xs: &[f64], ys: &[f64]) -> Result<Vec<CharFnValue>> {
        let regime = self.s.regime();
        let one_d = regime == Regime::OneD;
        let xm = xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let ym = if one_d { 0.0 } else { ys.iter().fold(0.0f64, |m, y| m.max(y.abs())) };
        let r = xm.hypot(ym);
        if !(r <= self.max_abs_z * (1.0 + 1e-12)) {
            return Err(MfnError::PlanViolation { abs_z: r, max_abs_z: self.max_abs_z });
        }
        let (nx, ny) = (xs.len(), ys.len());
        let mut prod = vec![Complex64::new(1.0, 0.0); nx * ny];
        let mut rel = vec![0.0f64; nx * ny];
        let mut row = vec![Complex64::new(0.0, 0.0); nx];
        for d in &self.direct {
            let nodes = &d.nodes;
            let n = nodes.len();
            let mut a = vec![Complex64::new(0.0, 0.0); n * nx];
            for j in 0..n {
                for (ix, &x) in xs.iter().enumerate() {
                    a[j * nx + ix] = Complex64::from_polar(1.0, x * nodes.x[j]);
                }
            }
            for (iy, &y) in ys.iter().enumerate() {
                row.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
                for j in 0..n {
                    let c = if one_d { Complex64::new(nodes.w[j], 0.0) } else { Complex64::from_polar(nodes.w[j], y * nodes.y[j]) };
                    let aj = &a[j * nx..(j + 1) * nx];
                    for (f, &e) in row.iter_mut().zip(aj) {
                        *f += c * e;
                    }
                }
                let base = iy * nx;
                for (ix, &f) in row.iter().enumerate() {
                    prod[base + ix] *= f;
                    rel[base + ix] += d.quad_err / f.norm();
                }
            }
        }
        let mut out = Vec::with_capacity(nx * ny);
        for (iy, &y) in ys.iter().enumerate() {
            for (ix, &x) in xs.iter().enumerate() {
                let k = iy * nx + ix;
                let y = if one_d { 0.0 } else { y };
                if x == 0.0 && y == 0.0 {
                    out.push(CharFnValue { value: Complex64::new(1.0, 0.0), abs_err: 0.0 });
                    continue;
                }
                let value = prod[k] * self.series.eval(Complex64::new(0.0, x), Complex64::new(0.0, y)).exp();
                if !(value.re.is_finite() && value.im.is_finite()) {
                    return Err(MfnError::NonFinite("characteristic function"));
                }
                let (tail, series) = match &self.plan {
                    Some(plan) => {
                        let r = x.hypot(y);
                        (plan.tail_bound_at(r).min(2.0), plan.series_remainder_at(r))
                    }
                    None => (0.0, 0.0),
                };
                let rel_total = (1.0 + tail) * series.exp() - 1.0 + rel[k];
                let abs_err = if rel[k].is_finite() { value.norm() * rel_total } else { self.direct.iter().map(|d| d.quad_err).fold(0.0, f64::max) };
                out.push(CharFnValue { value, abs_err });
            }
        }
        Ok(out)
    }
}

/// One-shot evaluation; builds an evaluator for `plan`.
pub fn char_fn(family: &MeasureFamily, plan: &TruncationPlan, z: Complex64, z2: Complex64) -> Result<Complex64> {
    let r = effective_radius(plan.s.regime(), z, z2);
    if r > plan.max_abs_z * (1.0 + 1e-12) {
        return Err(MfnError::PlanViolation { abs_z: r, max_abs_z: plan.max_abs_z });
    }
    let general = z2 != z.conj();
    let opts = QuadOptions { base_order: plan.quad_order, general_pairs: general, ..QuadOptions::default() };
    Ok(CharFnEvaluator::with_options(family, plan, &opts)?.eval(z, z2)?.value)
}

/// Symmetric axis `-rmax..=rmax` with `points` samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rmax: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn new(rmax: f64, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(MfnError::Config(format!("grid needs at least 2 points per axis, got {points}")));
        }
        if !(rmax > 0.0 && rmax.is_finite()) {
            return Err(MfnError::Config(format!("grid radius must be positive, got {rmax}")));
        }
        Ok(Self { rmax, points })
    }

    pub fn step(&self) -> f64 {
        2.0 * self.rmax / (self.points - 1) as f64
    }

    /// Axis values, exactly antisymmetric: `x[k] = -x[n-1-k]`.
    pub fn axis(&self) -> Vec<f64> {
        let h = self.step();
        let c = (self.points - 1) as f64 / 2.0;
        (0..self.points).map(|k| (k as f64 - c) * h).collect()
    }
}

/// Values of `Lambda(z)` on a grid, with the plan they were computed under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharFnGrid {
    pub s: EvalPoint,
    pub xs: Vec<f64>,
    /// `[0.0]` on the real axis.
    pub ys: Vec<f64>,
    /// Row-major: index `iy * xs.len() + ix`.
    pub values: Vec<Complex64>,
    pub errors: Vec<f64>,
    pub plan: Option<TruncationPlan>,
}

impl CharFnGrid {
    pub fn regime(&self) -> Regime {
        self.s.regime()
    }

    pub fn at(&self, ix: usize, iy: usize) -> Complex64 {
        self.values[iy * self.xs.len() + ix]
    }

    pub fn error_at(&self, ix: usize, iy: usize) -> f64 {
        self.errors[iy * self.xs.len() + ix]
    }

    pub fn from_evaluator(ev: &CharFnEvaluator, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let vals = ev.grid(&xs, &ys)?;
        Ok(Self {
            s: ev.eval_point(),
            xs,
            ys,
            values: vals.iter().map(|v| v.value).collect(),
            errors: vals.iter().map(|v| v.abs_err).collect(),
            plan: ev.plan().cloned(),
        })
    }

    /// Grid of an explicit function, with zero error; for synthetic inputs.
    pub fn from_fn<F: Fn(f64, f64) -> Complex64 + Sync>(s: EvalPoint, xs: Vec<f64>, ys: Vec<f64>, f: F) -> Self {
        let values: Vec<Complex64> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).map(|(x, y)| f(x, y)).collect();
        let errors = vec![0.0; values.len()];
        Self { s, xs, ys, values, errors, plan: None }
    }
}

/// Radius of the grid's farthest point.
fn grid_radius(s: &EvalPoint, spec: &GridSpec) -> f64 {
    match s.regime() {
        Regime::OneD => spec.rmax,
        Regime::TwoD => spec.rmax * 2f64.sqrt(),
    }
}

/// Plans for the grid's largest `|z|`, then evaluates every node.
pub fn char_fn_grid(family: &MeasureFamily, s: EvalPoint, spec: &GridSpec, tol: f64) -> Result<CharFnGrid> {
    let plan = plan_truncation(s, family, grid_radius(&s, spec), tol)?;
    let ev = CharFnEvaluator::new(family, &plan)?;
    let xs = spec.axis();
    let ys = match s.regime() {
        Regime::OneD => vec![0.0],
        Regime::TwoD => spec.axis(),
    };
    CharFnGrid::from_evaluator(&ev, xs, ys)
}

/// One row of a decay profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub radius: f64,
    pub max_modulus: f64,
    pub abs_err: f64,
}

pub const PROBE_DIRECTIONS: usize = 64;

/// Largest `|Lambda|` over the two real directions (real axis) or 64 directions.
pub fn decay_probe_with(ev: &CharFnEvaluator, radii: &[f64]) -> Result<Vec<DecayRow>> {
    if let Some(&r) = radii.iter().find(|&&r| !(r >= 3.0)) {
        return Err(MfnError::Config(format!("decay probe radii must be >= 3, got {r}")));
    }
    radii
        .iter()
        .map(|&r| {
            let dirs: Vec<Complex64> = match ev.eval_point().regime() {
                Regime::OneD => vec![Complex64::new(r, 0.0), Complex64::new(-r, 0.0)],
                Regime::TwoD => (0..PROBE_DIRECTIONS)
                    .map(|k| Complex64::from_polar(r, 2.0 * PI * k as f64 / PROBE_DIRECTIONS as f64))
                    .collect(),
            };
            let vals = dirs.par_iter().map(|&z| ev.lambda(z)).collect::<Result<Vec<_>>>()?;
            let best = vals
                .iter()
                .max_by(|a, b| a.value.norm().total_cmp(&b.value.norm()))
                .expect("at least one direction");
            Ok(DecayRow { radius: r, max_modulus: best.value.norm(), abs_err: best.abs_err })
        })
        .collect()
}

pub fn decay_probe(family: &MeasureFamily, s: EvalPoint, radii: &[f64], tol: f64) -> Result<Vec<DecayRow>> {
    let rmax = radii.iter().cloned().fold(0.0, f64::max);
    let plan = plan_truncation(s, family, rmax, tol)?;
    let ev = CharFnEvaluator::new(family, &plan)?;
    decay_probe_with(&ev, radii)
}

/// Least-squares slope of `log(-log |Lambda|)` against `log r`.
pub fn fit_decay_exponent(rows: &[DecayRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.max_modulus > 0.0 && r.max_modulus < 1.0)
        .map(|r| (r.radius.ln(), (-r.max_modulus.ln()).ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primes::primes_up_to;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn eval_point_validation() {
        assert!(matches!(EvalPoint::new(0.5, 0.0), Err(MfnError::HalfPlane { .. })));
        assert!(EvalPoint::new(0.49, 1.0).is_err());
        assert!(EvalPoint::new(f64::NAN, 0.0).is_err());
        assert_eq!(EvalPoint::real(1.0).unwrap().regime(), Regime::OneD);
        assert_eq!(EvalPoint::new(1.0, 1.0).unwrap().regime(), Regime::TwoD);
        let json = serde_json::to_string(&EvalPoint::new(0.8, 2.0).unwrap()).unwrap();
        assert_eq!(serde_json::from_str::<EvalPoint>(&json).unwrap(), EvalPoint::new(0.8, 2.0).unwrap());
        assert!(serde_json::from_str::<EvalPoint>(r#"{"sigma":0.4,"t":0}"#).is_err());
    }

    #[test]
    fn local_log_values() {
        let one = EvalPoint::real(1.0).unwrap();
        assert_abs_diff_eq!(local_log(PI / 2.0, 2, &one).re, -(1.25f64).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(local_log(0.0, 3, &one).re, 2.0 * 1.5f64.ln(), epsilon = 1e-15);
        assert_eq!(local_log(0.3, 7, &one).im, 0.0);
        // power-series oracle
        let s = EvalPoint::new(0.75, 2.0).unwrap();
        let q = s.prime_power(5);
        let series: Complex64 = (1..=200).map(|m| q.powi(m) * (2.0 * (m as f64).cos() / m as f64)).sum();
        assert!((local_log(1.0, 5, &s) - series).norm() < 1e-12);
        // 2D code path agrees with 1D as t -> 0
        let tiny = EvalPoint::new(1.0, 1e-300).unwrap();
        assert!((local_log(0.4, 2, &tiny) - local_log(0.4, 2, &one)).norm() < 1e-15);
    }

    #[test]
    fn local_factor_trivial_and_bounded() {
        let s = EvalPoint::new(0.8, 0.5).unwrap();
        let zero = c(0.0, 0.0);
        assert_abs_diff_eq!(local_char_factor(&AngleMeasure::SatoTate, 3, &s, zero, zero).unwrap().re, 1.0, epsilon = 1e-14);
        let mut rng = crate::rng::StreamSeed::new(1, 0).substream(0);
        use rand::Rng;
        let primes = primes_up_to(200).unwrap();
        for _ in 0..100 {
            let p = primes.primes()[rng.gen_range(0..primes.len())];
            let s = EvalPoint::new(rng.gen_range(0.55..2.5), rng.gen_range(-3.0..3.0)).unwrap();
            let z = c(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            let f = local_char_factor(&AngleMeasure::plancherel(p), p, &s, z, z.conj()).unwrap();
            assert!(f.norm() <= 1.0 + 1e-12, "{f}");
        }
    }

    #[test]
    fn local_factor_matches_riemann_sum() {
        let s = EvalPoint::real(1.0).unwrap();
        let z = c(3.0, 0.0);
        let got = local_char_factor(&AngleMeasure::SatoTate, 2, &s, z, z).unwrap();
        let n = 1_000_000;
        let h = PI / n as f64;
        let oracle: Complex64 = (0..n)
            .map(|k| {
                let t = (k as f64 + 0.5) * h;
                let w = local_log(t, 2, &s);
                psi(z, z, w) * (2.0 / PI * t.sin().powi(2) * h)
            })
            .sum();
        assert!((got - oracle).norm() < 1e-8, "{got} vs {oracle}");
    }

    #[test]
    fn exponent_pair_reproduces_psi() {
        let w = c(0.7, -0.3);
        for (z, z2) in [(c(1.0, 2.0), c(-0.5, 0.25)), (c(3.0, -1.0), c(3.0, 1.0)), (c(0.0, 1.0), c(0.0, 1.0))] {
            let (a, b) = exponent_pair(z, z2);
            assert!(((a * w.re + b * w.im).exp() - psi(z, z2, w)).norm() < 1e-14);
        }
    }

    /// Direct sum of `delta_p` over primes in `(P, limit]`.
    fn direct_tail(family: &MeasureFamily, sigma: f64, p_max: u64, r: f64, limit: u64) -> f64 {
        let table = primes_up_to(limit).unwrap();
        let s = EvalPoint::real(sigma).unwrap();
        let mut log_sum = 0.0;
        for &p in table.between(p_max, limit) {
            let nodes = LocalNodes::build(&family.at(p), p, &s, 64).unwrap();
            // the true local factor at the worst real direction
            let f = nodes.factor(c(0.0, r), c(0.0, 0.0));
            log_sum += (f - 1.0).norm();
        }
        log_sum
    }

    #[test]
    fn tail_model_dominates_direct_sums() {
        for (sigma, r, p_max) in [(1.0, 10.0, 1000), (0.6, 5.0, 2000), (1.5, 40.0, 500)] {
            let model = TailModel::new(&MeasureFamily::SatoTate, sigma, p_max as f64).unwrap();
            let partial = direct_tail(&MeasureFamily::SatoTate, sigma, p_max, r, 200_000);
            assert!(model.bound(r) >= partial, "sigma {sigma}: {} < {partial}", model.bound(r));
        }
    }

    #[test]
    fn plan_example_sigma_three_halves() {
        let s = EvalPoint::real(1.5).unwrap();
        let plan = plan_truncation(s, &MeasureFamily::SatoTate, 10.0, 1e-8).unwrap();
        assert!(plan.tail_bound <= 1e-8);
        // the first-order condition 100 sum_{p > P} p^-3 <= 1e-8, by direct summation
        let table = primes_up_to(100 * plan.p_max).unwrap();
        let direct: f64 = table.between(plan.p_max, 100 * plan.p_max).iter().map(|&p| (p as f64).powi(-3)).sum();
        assert!(100.0 * direct <= 1e-8, "{direct}");
        let looser = plan_truncation(s, &MeasureFamily::SatoTate, 10.0, 2e-8).unwrap();
        assert!(looser.p_max <= plan.p_max);
        let prev = TailModel::new(&MeasureFamily::SatoTate, 1.5, (plan.p_max - 1) as f64).unwrap();
        assert!(prev.bound(10.0) > 1e-8, "p_max is not minimal");
    }

    #[test]
    fn plan_monotone_in_tol() {
        let s = EvalPoint::real(1.0).unwrap();
        let mut last = u64::MAX;
        for tol in [1e-6, 2e-6, 4e-6, 1e-5, 1e-4, 1e-2] {
            let p = plan_truncation(s, &MeasureFamily::SatoTate, 20.0, tol).unwrap().p_max;
            assert!(p <= last);
            last = p;
        }
    }

    #[test]
    fn infeasible_plan_reports_cap() {
        let s = EvalPoint::real(0.6).unwrap();
        match plan_truncation(s, &MeasureFamily::SatoTate, 40.0, 1e-6) {
            Err(MfnError::SieveCap { required, cap }) => {
                assert!(required > cap as f64);
                assert_eq!(cap, PlanOptions::default().sieve_cap);
            }
            other => panic!("expected a resource error, got {other:?}"),
        }
    }

    #[test]
    fn custom_measure_with_mean_needs_sigma_above_one() {
        let pts: Vec<(f64, f64)> = (0..=100).map(|k| (PI * k as f64 / 100.0, 1.0 + (PI * k as f64 / 100.0).cos() * 0.5)).collect();
        let fam = MeasureFamily::Custom {
            measure: AngleMeasure::tabulated(crate::measures::TabulatedDensity::from_points(&pts).unwrap()),
            label: "skew".into(),
        };
        assert!(plan_truncation(EvalPoint::real(0.9).unwrap(), &fam, 5.0, 1e-3).is_err());
        assert!(plan_truncation(EvalPoint::real(1.5).unwrap(), &fam, 5.0, 1e-3).is_ok());
    }

    #[test]
    fn origin_and_symmetry() {
        let s = EvalPoint::new(1.0, 0.0).unwrap();
        let plan = plan_truncation(s, &MeasureFamily::SatoTate, 20.0, 1e-4).unwrap();
        let ev = CharFnEvaluator::new(&MeasureFamily::SatoTate, &plan).unwrap();
        assert_eq!(ev.lambda(c(0.0, 0.0)).unwrap().value, c(1.0, 0.0));
        for x in [0.5, 3.0, 11.0, 20.0] {
            let a = ev.lambda(c(x, 0.0)).unwrap().value;
            let b = ev.lambda(c(-x, 0.0)).unwrap().value;
            assert!((a - b.conj()).norm() < 1e-12);
            // only the real part of z matters on the real axis
            assert_eq!(ev.lambda(c(x, 7.0)).unwrap().value, a);
        }
        assert!(matches!(ev.lambda(c(21.0, 0.0)), Err(MfnError::PlanViolation { .. })));
    }

    #[test]
    fn series_agrees_with_direct_product() {
        // all primes direct versus the split evaluator
        for s in [EvalPoint::real(1.0).unwrap(), EvalPoint::new(0.9, 1.3).unwrap()] {
            let plan = TruncationPlan::with_p_max(s, &MeasureFamily::Plancherel, 10.0, 5000, &PlanOptions::default()).unwrap();
            assert!(plan.series_cutoff < 5000, "series part should be nonempty");
            let split = CharFnEvaluator::new(&MeasureFamily::Plancherel, &plan).unwrap();
            let table = primes_up_to(5000).unwrap();
            let full = CharFnEvaluator::finite(&MeasureFamily::Plancherel, s, table.primes(), 10.0, 4, &QuadOptions::default()).unwrap();
            for z in [c(1.0, 0.0), c(4.0, -2.0), c(-7.0, 7.0), c(0.0, 10.0)] {
                let a = split.lambda(z).unwrap().value;
                let b = full.lambda(z).unwrap().value;
                assert!((a - b).norm() < 1e-11 * b.norm().max(1e-3), "{z}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn doubling_p_max_within_tail() {
        let s = EvalPoint::real(1.0).unwrap();
        let fam = MeasureFamily::SatoTate;
        let p1 = TruncationPlan::with_p_max(s, &fam, 15.0, 3000, &PlanOptions::default()).unwrap();
        let p2 = TruncationPlan::with_p_max(s, &fam, 15.0, 6000, &PlanOptions::default()).unwrap();
        let e1 = CharFnEvaluator::new(&fam, &p1).unwrap();
        let e2 = CharFnEvaluator::new(&fam, &p2).unwrap();
        for x in [1.0, 5.0, 15.0] {
            let a = e1.lambda(c(x, 0.0)).unwrap();
            let b = e2.lambda(c(x, 0.0)).unwrap();
            assert!((a.value - b.value).norm() <= 2.0 * p1.tail_bound, "{x}");
            assert!((a.value - b.value).norm() <= a.abs_err + b.abs_err);
        }
    }

    #[test]
    fn decay_profile_and_fit() {
        let rows = vec![
            DecayRow { radius: 10.0, max_modulus: (-10.0f64).exp(), abs_err: 0.0 },
            DecayRow { radius: 20.0, max_modulus: (-20.0f64).exp(), abs_err: 0.0 },
            DecayRow { radius: 40.0, max_modulus: (-40.0f64).exp(), abs_err: 0.0 },
        ];
        assert_abs_diff_eq!(fit_decay_exponent(&rows).unwrap(), 1.0, epsilon = 1e-12);
        let s = EvalPoint::real(1.0).unwrap();
        assert!(decay_probe(&MeasureFamily::SatoTate, s, &[2.0], 1e-3).is_err());
        let prof = decay_probe(&MeasureFamily::SatoTate, s, &[3.0, 5.0, 10.0, 20.0, 40.0], 1e-3).unwrap();
        assert!(prof[0].max_modulus <= 1.0);
        assert!(prof.windows(2).all(|w| w[1].max_modulus <= w[0].max_modulus));
    }

    #[test]
    fn grid_matches_pointwise() {
        for s in [EvalPoint::real(0.9).unwrap(), EvalPoint::new(1.0, 1.0).unwrap()] {
            let plan = plan_truncation(s, &MeasureFamily::Plancherel, 12.0, 1e-2).unwrap();
            let ev = CharFnEvaluator::new(&MeasureFamily::Plancherel, &plan).unwrap();
            let xs = GridSpec::new(8.0, 9).unwrap().axis();
            let ys = if s.regime() == Regime::OneD { vec![0.0] } else { GridSpec::new(6.0, 7).unwrap().axis() };
            let fast = ev.grid(&xs, &ys).unwrap();
            for (iy, &y) in ys.iter().enumerate() {
                for (ix, &x) in xs.iter().enumerate() {
                    let slow = ev.lambda(c(x, y)).unwrap();
                    let f = fast[iy * xs.len() + ix];
                    assert!((f.value - slow.value).norm() <= 1e-12 * slow.value.norm().max(1e-12), "{x} {y}");
                    assert!((f.abs_err - slow.abs_err).abs() <= 1e-9 * slow.abs_err.max(1e-300));
                }
            }
            assert_eq!(fast[(ys.len() / 2) * xs.len() + xs.len() / 2].value, c(1.0, 0.0));
            assert!(ev.grid(&[13.0], &[0.0]).is_err());
        }
    }

    #[test]
    fn grid_axis_symmetric() {
        let g = GridSpec::new(3.0, 7).unwrap().axis();
        assert_eq!(g[3], 0.0);
        for k in 0..7 {
            assert_eq!(g[k], -g[6 - k]);
        }
        assert!(GridSpec::new(1.0, 1).is_err());
    }
}
