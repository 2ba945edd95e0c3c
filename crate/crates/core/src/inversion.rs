//! Fourier inversion of `Lambda` to the density of `log L(s)`.
//!
//! Normalizations: in one dimension `M(u) = (2 pi)^(-1/2) int Lambda(x) e^(-ixu) dx`,
//! which integrates to one against `(2 pi)^(-1/2) du`; in two dimensions
//! `M(u, v) = (2 pi)^(-1) int int Lambda(x + iy) e^(-i(xu + yv)) dx dy`, which
//! integrates to one against `(2 pi)^(-1) du dv`.
//!
//! Integrals are trapezoid sums on a symmetric grid. The quadrature error is
//! estimated by repeating the sum on the every-other-node subgrid.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::charfn::{
    plan_truncation_with, CharFnEvaluator, CharFnGrid, EvalPoint, PlanOptions, Regime, TruncationPlan,
};
use crate::error::{MfnError, Result};
use crate::measures::MeasureFamily;
use crate::primes::zeta;
use crate::series::BiSeries;

/// Plan tolerance for boundary probes; only upper bounds on `|Lambda|` are needed there.
const PROBE_PLAN_TOL: f64 = 0.05;
/// Cutoff for boundary probes whose plan is out of reach.
const PROBE_FALLBACK_P: u64 = 100_000;
const FIRST_RADIUS: f64 = 8.0;
/// Inner edge of the boundary band, as a fraction of the radius.
const BAND: f64 = 0.875;
const BAND_POINTS: usize = 9;
const FRAME_POINTS: usize = 33;
const IMAG_RESIDUE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionOptions {
    /// Largest admissible `|Lambda|` on the grid boundary.
    pub tail_tol: f64,
    pub radius_cap: f64,
    /// Plan tolerance at the grid radius.
    pub charfn_tol: f64,
    /// Mass allowed outside the output window.
    pub window_tol: f64,
    /// Output points per axis.
    pub points: usize,
    /// Smallest `|t|` accepted in two dimensions.
    pub min_abs_t: f64,
    /// Output grids longer than this use the FFT.
    pub direct_max: usize,
    pub plan: PlanOptions,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self {
            tail_tol: 1e-6,
            radius_cap: 512.0,
            charfn_tol: 5e-3,
            window_tol: 1e-6,
            points: 401,
            min_abs_t: 0.05,
            direct_max: 512,
            plan: PlanOptions::default(),
        }
    }
}

/// Additive error budget of a density grid.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorBudget {
    /// Pointwise effect of cutting the Fourier integral at the grid radius.
    pub truncation: f64,
    /// Pointwise effect of the characteristic-function errors.
    pub char_fn: f64,
    /// Pointwise trapezoid error estimate.
    pub quadrature: f64,
    /// Mass outside the output window.
    pub outside_mass: f64,
    /// Bound on the error of the mass inside the window.
    pub window_mass: f64,
}

impl ErrorBudget {
    pub fn pointwise(&self) -> f64 {
        self.truncation + self.char_fn + self.quadrature
    }

    /// Bound on `|mass - 1|`.
    pub fn mass(&self) -> f64 {
        self.window_mass + self.outside_mass
    }
}

/// Density samples on a product grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub regime: Regime,
    pub us: Vec<f64>,
    /// Empty in one dimension.
    pub vs: Vec<f64>,
    /// Row-major in `v`: index `jv * us.len() + ju`.
    pub values: Vec<f64>,
    pub budget: ErrorBudget,
    /// Radius of the characteristic-function grid.
    pub radius: f64,
    pub p_max: Option<u64>,
    /// Characteristic-function grid spacing per axis.
    pub char_step: (f64, f64),
}

fn trapezoid(xs: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    xs.windows(2).enumerate().map(|(i, w)| 0.5 * (w[1] - w[0]) * (f(i) + f(i + 1))).sum()
}

impl DensityGrid {
    pub fn at(&self, ju: usize, jv: usize) -> f64 {
        self.values[jv * self.us.len() + ju]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Trapezoid mass in the density's normalization.
    pub fn mass(&self) -> f64 {
        match self.regime {
            Regime::OneD => trapezoid(&self.us, |i| self.values[i]) / (2.0 * PI).sqrt(),
            Regime::TwoD => {
                let rows: Vec<f64> = (0..self.vs.len()).map(|jv| trapezoid(&self.us, |ju| self.at(ju, jv))).collect();
                trapezoid(&self.vs, |jv| rows[jv]) / (2.0 * PI)
            }
        }
    }

    /// One-dimensional density of the real part, `(2 pi)^(-1/2) int M(u, v) dv`.
    pub fn marginal_u(&self) -> Result<Vec<f64>> {
        if self.regime != Regime::TwoD {
            return Err(MfnError::RegimeMismatch("marginal needs a two-dimensional density".into()));
        }
        Ok((0..self.us.len())
            .map(|ju| trapezoid(&self.vs, |jv| self.at(ju, jv)) / (2.0 * PI).sqrt())
            .collect())
    }
}

/// Result of the radius search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusChoice {
    pub radius: f64,
    /// Upper bound on `|Lambda|` over the boundary band.
    pub boundary_modulus: f64,
    /// `tail_tol * R` in one dimension, `tail_tol * R^2` in two.
    pub residual_mass: f64,
}

fn plan_radius(s: &EvalPoint, r: f64) -> f64 {
    match s.regime() {
        Regime::OneD => r,
        Regime::TwoD => r * 2f64.sqrt(),
    }
}

fn probe_evaluator(family: &MeasureFamily, s: EvalPoint, radius: f64, opts: &PlanOptions) -> Result<CharFnEvaluator> {
    let plan = match plan_truncation_with(s, family, radius, PROBE_PLAN_TOL, opts) {
        Ok(plan) => plan,
        Err(MfnError::SieveCap { .. }) => {
            TruncationPlan::with_p_max(s, family, radius, PROBE_FALLBACK_P.min(opts.sieve_cap), opts)?
        }
        Err(e) => return Err(e),
    };
    CharFnEvaluator::new(family, &plan)
}

/// Points of the boundary band; Hermitian symmetry covers the mirror half.
fn band_points(regime: Regime, r: f64) -> Vec<Complex64> {
    let lin = |a: f64, b: f64, n: usize| (0..n).map(move |k| a + (b - a) * k as f64 / (n - 1) as f64);
    match regime {
        Regime::OneD => lin(BAND * r, r, BAND_POINTS).map(|x| Complex64::new(x, 0.0)).collect(),
        Regime::TwoD => {
            let mut pts = Vec::new();
            for edge in [BAND * r, r] {
                pts.extend(lin(-r, r, FRAME_POINTS).map(|y| Complex64::new(edge, y)));
                pts.extend(lin(-r, r, FRAME_POINTS).map(|x| Complex64::new(x, edge)));
            }
            pts
        }
    }
}

/// Upper bound on `|Lambda|` over the boundary band at radius `r`.
pub fn boundary_modulus(ev: &CharFnEvaluator, r: f64) -> Result<f64> {
    let vals = band_points(ev.eval_point().regime(), r)
        .par_iter()
        .map(|&z| ev.lambda(z).map(|v| v.value.norm() + v.abs_err))
        .collect::<Result<Vec<_>>>()?;
    Ok(vals.into_iter().fold(0.0, f64::max))
}

/// Smallest radius `8 * 2^k` whose boundary band satisfies `|Lambda| <= tail_tol`.
pub fn choose_radius(family: &MeasureFamily, s: EvalPoint, tail_tol: f64, opts: &InversionOptions) -> Result<RadiusChoice> {
    if !(tail_tol > 0.0) {
        return Err(MfnError::Config(format!("tail tolerance must be positive, got {tail_tol}")));
    }
    let mut r = FIRST_RADIUS;
    let mut last = f64::NAN;
    while r <= opts.radius_cap {
        let ev = probe_evaluator(family, s, plan_radius(&s, r), &opts.plan)?;
        last = boundary_modulus(&ev, r)?;
        if last <= tail_tol {
            let residual_mass = match s.regime() {
                Regime::OneD => tail_tol * r,
                Regime::TwoD => tail_tol * r * r,
            };
            return Ok(RadiusChoice { radius: r, boundary_modulus: last, residual_mass });
        }
        r *= 2.0;
    }
    Err(MfnError::RadiusCap { cap: opts.radius_cap, modulus: last, tol: tail_tol })
}

/// Output window for one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
    /// Bound on the mass outside `[lo, hi]`.
    pub outside: f64,
}

impl Window {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn grid(&self, points: usize) -> Vec<f64> {
        let n = points.max(2);
        (0..n).map(|k| self.lo + self.width() * k as f64 / (n - 1) as f64).collect()
    }
}

/// Window from the first eight cumulants: Markov's inequality on the eighth
/// central moment, intersected with `|log L| <= 2 log zeta(sigma)` when `sigma > 1`.
pub fn window_from_cumulants(cumulants: &[f64], sigma: f64, tol: f64) -> Result<Window> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(MfnError::Config(format!("window tolerance must lie in (0, 1), got {tol}")));
    }
    if cumulants.len() < 3 {
        return Err(MfnError::UnsupportedOrder { order: cumulants.len().saturating_sub(1), max: 8 });
    }
    let order = (cumulants.len() - 1).min(8);
    let mut central = BiSeries::zero(order, 0);
    let mut fact = 1.0;
    for (j, &k) in cumulants.iter().enumerate().take(order + 1).skip(2) {
        fact *= if j == 2 { 2.0 } else { j as f64 };
        central.set(j, 0, k / fact);
    }
    let moment = central.exp().scaled(order - order % 2, 0);
    let even = (order - order % 2) as f64;
    let half = (moment.max(0.0) / tol).powf(1.0 / even);
    let mean = cumulants[1];
    let (mut lo, mut hi) = (mean - half, mean + half);
    if sigma > 1.0 {
        let support = 2.0 * zeta(sigma)?.ln();
        lo = lo.max(-support);
        hi = hi.min(support);
    }
    let pad = 0.05 * (hi - lo).max(1e-3);
    Ok(Window { lo: lo - pad, hi: hi + pad, outside: tol })
}

/// Marginal cumulants `kappa_0..kappa_8` of the real (`axis = 0`) or imaginary part.
pub fn marginal_cumulants(series: &BiSeries, axis: usize) -> Vec<f64> {
    let order = series.order().min(8);
    (0..=order)
        .map(|j| if axis == 0 { series.scaled(j, 0) } else { series.scaled(0, j) })
        .collect()
}

fn check_axis(xs: &[f64], name: &str) -> Result<f64> {
    let n = xs.len();
    if n < 3 || n.is_multiple_of(2) {
        return Err(MfnError::Config(format!("{name} axis needs an odd number >= 3 of points, got {n}")));
    }
    let h = (xs[n - 1] - xs[0]) / (n - 1) as f64;
    let tol = 1e-9 * h.abs().max(f64::MIN_POSITIVE);
    let symmetric = (0..n).all(|k| (xs[k] + xs[n - 1 - k]).abs() <= tol && (xs[k] - (xs[0] + k as f64 * h)).abs() <= tol);
    if !(h > 0.0) || !symmetric {
        return Err(MfnError::Config(format!("{name} axis must be uniform, increasing and symmetric about 0")));
    }
    Ok(h)
}

fn span(g: &[f64]) -> f64 {
    g.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - g.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    w
}

/// Every-other-node subgrid through the centre, with its trapezoid weights.
fn coarse_indices(n: usize) -> Vec<usize> {
    let c = (n - 1) / 2;
    (0..n).filter(|&i| (i as isize - c as isize) % 2 == 0).collect()
}

fn coarse_weights(xs: &[f64], idx: &[usize]) -> Vec<f64> {
    let sub: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
    let h = sub[1] - sub[0];
    trapezoid_weights(sub.len(), h)
}

/// `sum_k c_k exp(-i x_k u)` for each `u`.
pub fn fourier_sum_direct(xs: &[f64], coeffs: &[Complex64], us: &[f64]) -> Vec<Complex64> {
    us.par_iter()
        .map(|&u| xs.iter().zip(coeffs).map(|(&x, &c)| c * Complex64::from_polar(1.0, -x * u)).sum())
        .collect()
}

/// As [`fourier_sum_direct`] for `x_k = (k - K) h`, `k = 0..=2K`, and `u_j = u0 + j du`,
/// where `n h du = 2 pi` for an integer `n >= 2K + 1`.
pub fn fourier_sum_fft(coeffs: &[Complex64], h: f64, u0: f64, du: f64, n_out: usize) -> Result<Vec<Complex64>> {
    let len = coeffs.len();
    let n_real = 2.0 * PI / (h * du);
    let n = n_real.round() as usize;
    if len.is_multiple_of(2) || (n as f64 - n_real).abs() > 1e-6 * n_real || n < len || n < n_out {
        return Err(MfnError::Config("FFT grid does not match the requested spacing".into()));
    }
    let k0 = (len / 2) as i64;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (i, &c) in coeffs.iter().enumerate() {
        let k = i as i64 - k0;
        buf[k.rem_euclid(n as i64) as usize] += c * Complex64::from_polar(1.0, -(k as f64) * h * u0);
    }
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.truncate(n_out);
    Ok(buf)
}

fn uniform_step(us: &[f64]) -> Option<f64> {
    let n = us.len();
    if n < 2 {
        return None;
    }
    let du = (us[n - 1] - us[0]) / (n - 1) as f64;
    let ok = du > 0.0 && us.iter().enumerate().all(|(j, &u)| (u - (us[0] + j as f64 * du)).abs() <= 1e-9 * du);
    ok.then_some(du)
}

fn fourier_sum(xs: &[f64], h: f64, coeffs: &[Complex64], us: &[f64], direct_max: usize) -> Vec<Complex64> {
    if us.len() > direct_max {
        if let Some(du) = uniform_step(us) {
            if let Ok(out) = fourier_sum_fft(coeffs, h, us[0], du, us.len()) {
                return out;
            }
            log::debug!("output grid not FFT-compatible; using direct sums");
        }
    }
    fourier_sum_direct(xs, coeffs, us)
}

fn check_outputs(us: &[f64], h: f64, name: &str) -> Result<()> {
    if us.is_empty() || us.iter().any(|u| !u.is_finite()) {
        return Err(MfnError::Config(format!("{name} grid must be non-empty and finite")));
    }
    let span = span(us);
    if span >= PI / h {
        return Err(MfnError::Config(format!(
            "{name} grid spans {span}, beyond the alias-free range {} of the characteristic grid",
            PI / h
        )));
    }
    Ok(())
}

fn insufficient(radius: f64, modulus: f64, tol: f64, sigma: f64) -> MfnError {
    // -log|Lambda| grows roughly like r^(1/sigma)
    let needed_radius = if modulus > 0.0 && modulus < 1.0 {
        radius * (tol.ln() / modulus.ln()).powf(sigma.max(1.0))
    } else {
        2.0 * radius
    };
    MfnError::InsufficientTruncation { radius, modulus, tol, needed_radius }
}

fn real_part(sums: &[Complex64], scale: f64) -> Result<Vec<f64>> {
    let peak = sums.iter().map(|c| c.re.abs()).fold(1.0, f64::max);
    if let Some(c) = sums.iter().find(|c| c.im.abs() > IMAG_RESIDUE_TOL * peak) {
        return Err(MfnError::Config(format!(
            "inverted values are not real (imaginary residue {}); the grid is not Hermitian",
            c.im * scale
        )));
    }
    Ok(sums.iter().map(|c| c.re * scale).collect())
}

/// Inverts a real-axis grid (`ys == [0]`) on the output points `us`.
pub fn invert_1d(grid: &CharFnGrid, us: &[f64], opts: &InversionOptions) -> Result<DensityGrid> {
    if grid.ys != [0.0] {
        return Err(MfnError::RegimeMismatch("one-dimensional inversion needs a single row at y = 0".into()));
    }
    let xs = &grid.xs;
    let h = check_axis(xs, "x")?;
    check_outputs(us, h, "u")?;
    let n = xs.len();
    let radius = xs[n - 1];
    let boundary = (0..n)
        .filter(|&k| xs[k].abs() >= BAND * radius)
        .map(|k| grid.values[k].norm())
        .fold(0.0, f64::max);
    if boundary > opts.tail_tol {
        return Err(insufficient(radius, boundary, opts.tail_tol, grid.s.sigma()));
    }
    let scale = 1.0 / (2.0 * PI).sqrt();
    let w = trapezoid_weights(n, h);
    let coeffs: Vec<Complex64> = grid.values.iter().zip(&w).map(|(v, w)| v * w).collect();
    let values = real_part(&fourier_sum(xs, h, &coeffs, us, opts.direct_max), scale)?;

    let idx = coarse_indices(n);
    let cw = coarse_weights(xs, &idx);
    let cx: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
    let cc: Vec<Complex64> = idx.iter().zip(&cw).map(|(&i, w)| grid.values[i] * w).collect();
    let coarse = fourier_sum_direct(&cx, &cc, us);
    let quadrature = values
        .iter()
        .zip(&coarse)
        .map(|(f, c)| (f - c.re * scale).abs())
        .fold(0.0, f64::max);

    let span = span(us);
    // an error at frequency x moves the window mass by at most min(span, 2/|x|) / (2 pi)
    let damp = |x: f64| if x == 0.0 { span } else { span.min(2.0 / x.abs()) };
    let char_mass: f64 = (0..n).map(|k| w[k] * grid.errors[k] * damp(xs[k])).sum::<f64>() / (2.0 * PI);
    let budget = ErrorBudget {
        truncation: scale * 2.0 * boundary * radius,
        char_fn: scale * grid.errors.iter().zip(&w).map(|(e, w)| e * w).sum::<f64>(),
        quadrature,
        outside_mass: 0.0,
        window_mass: char_mass + 4.0 * boundary / (2.0 * PI) + quadrature * span * scale,
    };
    Ok(DensityGrid {
        regime: Regime::OneD,
        us: us.to_vec(),
        vs: Vec::new(),
        values,
        budget,
        radius,
        p_max: grid.plan.as_ref().map(|p| p.p_max),
        char_step: (h, 0.0),
    })
}

/// Row sums `G[iy][ju] = sum_ix w_x Lambda(x, y) e^(-ixu)`, then the `y` sums.
fn sum_2d(
    xs: &[f64],
    ys: &[f64],
    wx: &[f64],
    wy: &[f64],
    value: impl Fn(usize, usize) -> Complex64 + Sync,
    us: &[f64],
    vs: &[f64],
) -> Vec<Complex64> {
    let rows: Vec<Vec<Complex64>> = (0..ys.len())
        .into_par_iter()
        .map(|iy| {
            let coeffs: Vec<Complex64> = (0..xs.len()).map(|ix| value(ix, iy) * wx[ix]).collect();
            us.iter()
                .map(|&u| xs.iter().zip(&coeffs).map(|(&x, &c)| c * Complex64::from_polar(1.0, -x * u)).sum())
                .collect()
        })
        .collect();
    vs.par_iter()
        .flat_map_iter(|&v| {
            let phase: Vec<Complex64> = ys.iter().zip(wy).map(|(&y, &w)| Complex64::from_polar(w, -y * v)).collect();
            let rows = &rows;
            (0..us.len()).map(move |ju| rows.iter().zip(&phase).map(|(r, p)| r[ju] * p).sum::<Complex64>())
        })
        .collect()
}

/// Inverts a two-dimensional grid on the product of `us` and `vs`.
pub fn invert_2d(grid: &CharFnGrid, us: &[f64], vs: &[f64], opts: &InversionOptions) -> Result<DensityGrid> {
    if grid.s.t().abs() < opts.min_abs_t {
        return Err(MfnError::Config(format!(
            "two-dimensional inversion needs |t| >= {}, got {}",
            opts.min_abs_t,
            grid.s.t()
        )));
    }
    let (xs, ys) = (&grid.xs, &grid.ys);
    let hx = check_axis(xs, "x")?;
    let hy = check_axis(ys, "y")?;
    check_outputs(us, hx, "u")?;
    check_outputs(vs, hy, "v")?;
    let (nx, ny) = (xs.len(), ys.len());
    let (rx, ry) = (xs[nx - 1], ys[ny - 1]);
    let mut boundary: f64 = 0.0;
    for (iy, y) in ys.iter().enumerate() {
        for (ix, x) in xs.iter().enumerate() {
            if x.abs() >= BAND * rx || y.abs() >= BAND * ry {
                boundary = boundary.max(grid.at(ix, iy).norm());
            }
        }
    }
    let radius = rx.max(ry);
    if boundary > opts.tail_tol {
        return Err(insufficient(radius, boundary, opts.tail_tol, grid.s.sigma()));
    }
    let scale = 1.0 / (2.0 * PI);
    let (wx, wy) = (trapezoid_weights(nx, hx), trapezoid_weights(ny, hy));
    let fine = sum_2d(xs, ys, &wx, &wy, |ix, iy| grid.at(ix, iy), us, vs);
    let values = real_part(&fine, scale)?;

    let (ix_c, iy_c) = (coarse_indices(nx), coarse_indices(ny));
    let cxs: Vec<f64> = ix_c.iter().map(|&i| xs[i]).collect();
    let cys: Vec<f64> = iy_c.iter().map(|&i| ys[i]).collect();
    let coarse = sum_2d(
        &cxs,
        &cys,
        &coarse_weights(xs, &ix_c),
        &coarse_weights(ys, &iy_c),
        |ix, iy| grid.at(ix_c[ix], iy_c[iy]),
        us,
        vs,
    );
    let quadrature = values
        .iter()
        .zip(&coarse)
        .map(|(f, c)| (f - c.re * scale).abs())
        .fold(0.0, f64::max);

    let (su, sv) = (span(us), span(vs));
    let damp = |x: f64, sp: f64| if x == 0.0 { sp } else { sp.min(2.0 / x.abs()) };
    let (mut char_fn, mut char_mass) = (0.0, 0.0);
    for iy in 0..ny {
        for ix in 0..nx {
            let e = wx[ix] * wy[iy] * grid.error_at(ix, iy);
            char_fn += e;
            char_mass += e * damp(xs[ix], su) * damp(ys[iy], sv);
        }
    }
    let budget = ErrorBudget {
        truncation: scale * 4.0 * boundary * radius * radius,
        char_fn: scale * char_fn,
        quadrature,
        outside_mass: 0.0,
        window_mass: (char_mass + 8.0 * boundary * radius * su.max(sv)) / (4.0 * PI * PI) + quadrature * su * sv * scale,
    };
    Ok(DensityGrid {
        regime: Regime::TwoD,
        us: us.to_vec(),
        vs: vs.to_vec(),
        values,
        budget,
        radius,
        p_max: grid.plan.as_ref().map(|p| p.p_max),
        char_step: (hx, hy),
    })
}

/// A density together with everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRun {
    pub density: DensityGrid,
    pub char_grid: CharFnGrid,
    pub radius: RadiusChoice,
    pub windows: Vec<Window>,
}

/// Characteristic-function grid prepared for inversion, before any inversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionSetup {
    pub char_grid: CharFnGrid,
    pub radius: RadiusChoice,
    pub windows: Vec<Window>,
}

impl InversionSetup {
    /// Output grid for axis `i`.
    pub fn output_axis(&self, i: usize, points: usize) -> Vec<f64> {
        self.windows[i].grid(points)
    }
}

/// Axis `(-K..=K) h` with `K h <= radius` and `h <= target`.
fn char_axis(radius: f64, target: f64) -> Vec<f64> {
    let k = (radius / target).ceil().max(1.0) as i64;
    let h = radius / k as f64;
    (-k..=k).map(|i| i as f64 * h).collect()
}

/// Axis compatible with an FFT onto `points` outputs across `window`, if one exists.
fn fft_axis(radius: f64, target: f64, window: &Window, points: usize) -> Option<Vec<f64>> {
    let du = window.width() / (points - 1) as f64;
    let n = (2.0 * PI / (du * target)).ceil().max(2.0 * points as f64) as usize;
    let h = 2.0 * PI / (n as f64 * du);
    let k = (radius / h).floor() as i64;
    (n as i64 > 2 * k && k >= 1).then(|| (-k..=k).map(|i| i as f64 * h).collect())
}

/// Chooses the radius, plans, and evaluates the characteristic grid for inversion.
pub fn prepare_inversion(family: &MeasureFamily, s: EvalPoint, opts: &InversionOptions) -> Result<InversionSetup> {
    prepare_inversion_with(family, s, opts, |plan| CharFnEvaluator::new(family, plan))
}

/// As [`prepare_inversion`], with the evaluator for each plan supplied by `build`.
///
/// The radius search samples the boundary; if the full grid boundary still exceeds
/// `tail_tol`, the radius doubles up to `radius_cap`.
pub fn prepare_inversion_with<B>(family: &MeasureFamily, s: EvalPoint, opts: &InversionOptions, mut build: B) -> Result<InversionSetup>
where
    B: FnMut(&TruncationPlan) -> Result<CharFnEvaluator>,
{
    if s.regime() == Regime::TwoD && s.t().abs() < opts.min_abs_t {
        return Err(MfnError::Config(format!(
            "two-dimensional inversion needs |t| >= {}, got {}",
            opts.min_abs_t,
            s.t()
        )));
    }
    let mut choice = choose_radius(family, s, opts.tail_tol, opts)?;
    loop {
        let mut setup = setup_at(family, s, opts, choice, &mut build)?;
        let edge = grid_boundary(&setup.char_grid);
        if edge <= opts.tail_tol {
            setup.radius.boundary_modulus = setup.radius.boundary_modulus.max(edge);
            return Ok(setup);
        }
        let r = 2.0 * choice.radius;
        if r > opts.radius_cap {
            return Err(MfnError::RadiusCap { cap: opts.radius_cap, modulus: edge, tol: opts.tail_tol });
        }
        log::info!("grid boundary |Lambda| = {edge:.3e} at R = {}; retrying at R = {r}", choice.radius);
        let residual_mass = match s.regime() {
            Regime::OneD => opts.tail_tol * r,
            Regime::TwoD => opts.tail_tol * r * r,
        };
        choice = RadiusChoice { radius: r, boundary_modulus: 0.0, residual_mass };
    }
}

/// Largest `|Lambda|` over the grid points in the boundary band.
fn grid_boundary(grid: &CharFnGrid) -> f64 {
    let (rx, ry) = (grid.xs[grid.xs.len() - 1], grid.ys[grid.ys.len() - 1]);
    let mut edge: f64 = 0.0;
    for (iy, y) in grid.ys.iter().enumerate() {
        for (ix, x) in grid.xs.iter().enumerate() {
            if x.abs() >= BAND * rx || (ry > 0.0 && y.abs() >= BAND * ry) {
                edge = edge.max(grid.at(ix, iy).norm());
            }
        }
    }
    edge
}

fn setup_at<B>(family: &MeasureFamily, s: EvalPoint, opts: &InversionOptions, choice: RadiusChoice, build: &mut B) -> Result<InversionSetup>
where
    B: FnMut(&TruncationPlan) -> Result<CharFnEvaluator>,
{
    let r = choice.radius;
    let plan = plan_truncation_with(s, family, plan_radius(&s, r), opts.charfn_tol, &opts.plan)?;
    let ev = build(&plan)?;
    let cum = ev.cumulants();
    match s.regime() {
        Regime::OneD => {
            let w = window_from_cumulants(&marginal_cumulants(cum, 0), s.sigma(), opts.window_tol)?;
            // coarse subgrid period 2W, so the window never aliases onto itself
            let target = PI / (2.0 * w.width());
            let xs = if opts.points > opts.direct_max {
                fft_axis(r, target, &w, opts.points).unwrap_or_else(|| char_axis(r, target))
            } else {
                char_axis(r, target)
            };
            let char_grid = CharFnGrid::from_evaluator(&ev, xs, vec![0.0])?;
            Ok(InversionSetup { char_grid, radius: choice, windows: vec![w] })
        }
        Regime::TwoD => {
            let half = opts.window_tol / 2.0;
            let wu = window_from_cumulants(&marginal_cumulants(cum, 0), s.sigma(), half)?;
            let wv = window_from_cumulants(&marginal_cumulants(cum, 1), s.sigma(), half)?;
            let xs = char_axis(r, PI / (2.0 * wu.width()));
            let ys = char_axis(r, PI / (2.0 * wv.width()));
            let char_grid = CharFnGrid::from_evaluator(&ev, xs, ys)?;
            Ok(InversionSetup { char_grid, radius: choice, windows: vec![wu, wv] })
        }
    }
}

/// Inverts a prepared grid on its default output windows.
pub fn invert_setup(setup: &InversionSetup, opts: &InversionOptions) -> Result<DensityGrid> {
    let mut density = match setup.char_grid.regime() {
        Regime::OneD => invert_1d(&setup.char_grid, &setup.output_axis(0, opts.points), opts)?,
        Regime::TwoD => invert_2d(
            &setup.char_grid,
            &setup.output_axis(0, opts.points),
            &setup.output_axis(1, opts.points),
            opts,
        )?,
    };
    density.budget.outside_mass = setup.windows.iter().map(|w| w.outside).sum();
    Ok(density)
}

/// Density of `log L(s)` on an automatic window.
pub fn density(family: &MeasureFamily, s: EvalPoint, opts: &InversionOptions) -> Result<DensityRun> {
    let setup = prepare_inversion(family, s, opts)?;
    let density = invert_setup(&setup, opts)?;
    Ok(DensityRun { density, char_grid: setup.char_grid, radius: setup.radius, windows: setup.windows })
}

/// Piecewise-linear CDF from a one-dimensional density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cdf {
    knots: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Cdf {
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.knots.len();
        if x <= self.knots[0] {
            return 0.0;
        }
        if x >= self.knots[n - 1] {
            return 1.0;
        }
        let i = self.knots.partition_point(|&k| k <= x) - 1;
        let t = (x - self.knots[i]) / (self.knots[i + 1] - self.knots[i]);
        self.cumulative[i] + t * (self.cumulative[i + 1] - self.cumulative[i])
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.knots.len();
        if p <= 0.0 {
            return self.knots[0];
        }
        if p >= 1.0 {
            return self.knots[n - 1];
        }
        let i = self.cumulative.partition_point(|&c| c < p).clamp(1, n - 1);
        let (c0, c1) = (self.cumulative[i - 1], self.cumulative[i]);
        let t = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.0 };
        self.knots[i - 1] + t * (self.knots[i] - self.knots[i - 1])
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }
}

fn cumulate(xs: &[f64], f: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; xs.len()];
    for i in 1..xs.len() {
        out[i] = out[i - 1] + 0.5 * (xs[i] - xs[i - 1]) * (f(i - 1) + f(i));
    }
    out
}

/// CDF with negative values clamped to zero and the total normalized to one.
pub fn cdf_from_density(grid: &DensityGrid) -> Result<Cdf> {
    if grid.regime != Regime::OneD {
        return Err(MfnError::RegimeMismatch("a CDF needs a one-dimensional density".into()));
    }
    if grid.us.len() < 2 {
        return Err(MfnError::Config("a CDF needs at least two grid points".into()));
    }
    let mut cumulative = cumulate(&grid.us, |i| grid.values[i].max(0.0));
    let total = *cumulative.last().expect("non-empty");
    if !(total > 0.0) {
        return Err(MfnError::NonFinite("density has no positive mass"));
    }
    cumulative.iter_mut().for_each(|c| *c /= total);
    Ok(Cdf { knots: grid.us.clone(), cumulative })
}

/// Rectangle masses of a two-dimensional density by bilinear interpolation of
/// the cumulative table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectMass {
    us: Vec<f64>,
    vs: Vec<f64>,
    /// `table[jv * nu + ju]` is the mass of `[u_0, u_ju] x [v_0, v_jv]`.
    table: Vec<f64>,
}

fn locate(knots: &[f64], x: f64) -> (usize, f64) {
    let n = knots.len();
    if x <= knots[0] {
        return (0, 0.0);
    }
    if x >= knots[n - 1] {
        return (n - 2, 1.0);
    }
    let i = knots.partition_point(|&k| k <= x) - 1;
    (i, (x - knots[i]) / (knots[i + 1] - knots[i]))
}

impl RectMass {
    /// Mass of `(-inf, u] x (-inf, v]`.
    pub fn cdf(&self, u: f64, v: f64) -> f64 {
        let nu = self.us.len();
        let (i, a) = locate(&self.us, u);
        let (j, b) = locate(&self.vs, v);
        let t = |ii: usize, jj: usize| self.table[jj * nu + ii];
        (1.0 - a) * (1.0 - b) * t(i, j) + a * (1.0 - b) * t(i + 1, j) + (1.0 - a) * b * t(i, j + 1) + a * b * t(i + 1, j + 1)
    }

    /// Mass of `(u1, u2] x (v1, v2]`.
    pub fn rect(&self, u1: f64, u2: f64, v1: f64, v2: f64) -> f64 {
        self.cdf(u2, v2) - self.cdf(u1, v2) - self.cdf(u2, v1) + self.cdf(u1, v1)
    }

    pub fn us(&self) -> &[f64] {
        &self.us
    }

    pub fn vs(&self) -> &[f64] {
        &self.vs
    }
}

pub fn rect_mass_from_density(grid: &DensityGrid) -> Result<RectMass> {
    if grid.regime != Regime::TwoD {
        return Err(MfnError::RegimeMismatch("rectangle masses need a two-dimensional density".into()));
    }
    let (nu, nv) = (grid.us.len(), grid.vs.len());
    if nu < 2 || nv < 2 {
        return Err(MfnError::Config("rectangle masses need at least two points per axis".into()));
    }
    // cumulate along u within each row, then along v
    let rows: Vec<Vec<f64>> = (0..nv).map(|jv| cumulate(&grid.us, |ju| grid.at(ju, jv).max(0.0))).collect();
    let mut table = vec![0.0; nu * nv];
    for ju in 0..nu {
        let col = cumulate(&grid.vs, |jv| rows[jv][ju]);
        for jv in 0..nv {
            table[jv * nu + ju] = col[jv];
        }
    }
    let total = table[nu * nv - 1];
    if !(total > 0.0) {
        return Err(MfnError::NonFinite("density has no positive mass"));
    }
    table.iter_mut().for_each(|c| *c /= total);
    Ok(RectMass { us: grid.us.clone(), vs: grid.vs.clone(), table })
}
