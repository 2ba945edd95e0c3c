//! Moments and cumulants of the Dirichlet polynomial `R_Y(s)` by per-prime
//! quadrature, and complex moments of `L(s)` through the characteristic function.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charfn::{char_fn, CharFnEvaluator, EvalPoint, Regime, TruncationPlan};
use crate::error::{MfnError, Result};
use crate::hecke::{expect_a, DEFAULT_EXPECT_ORDER};
use crate::measures::{AngleMeasure, MeasureFamily};
use crate::primes::shared_table;
use crate::series::{BiSeries, SeriesSum};

pub const MAX_CUMULANT_ORDER: usize = 8;

/// Local terms `(m, (2/m) p^(-ms))` of `R_Y` at one prime.
fn local_terms(p: u64, s: &EvalPoint, y: f64) -> Vec<(u32, Complex64)> {
    let base = s.prime_power(p);
    let mut out = Vec::new();
    let (mut pm, mut m, mut power) = (p as f64, 1u32, base);
    while pm <= y {
        out.push((m, power * (2.0 / m as f64)));
        m += 1;
        pm *= p as f64;
        power *= base;
    }
    out
}

/// Nodes for which the midpoint rule integrates the moment polynomials exactly
/// against the Sato-Tate weight; smooth weights converge geometrically.
fn moment_nodes(measure: &AngleMeasure, degree: usize) -> usize {
    let base = (degree + 4).max(64);
    match measure {
        AngleMeasure::SatoTate => base,
        _ => 2 * base,
    }
}

/// Raw moments of the local sum at one prime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMoments {
    pub p: u64,
    pub order: usize,
    /// Coefficient `(a, b)` holds `E[Re^a Im^b]` (not divided by factorials).
    pub moments: BiSeries,
}

impl LocalMoments {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.moments.get(a, b)
    }
}

/// `E[X^j]` (real axis) or `E[Re^a Im^b]` for `X = sum_{p^m <= Y} (2 cos(m theta)/m) p^(-ms)`.
pub fn prime_local_moments(measure: &AngleMeasure, p: u64, s: &EvalPoint, y: f64, order: usize) -> Result<LocalMoments> {
    if !((p as f64) <= y) {
        return Err(MfnError::Config(format!("prime {p} exceeds Y = {y}")));
    }
    let terms = local_terms(p, s, y);
    let max_m = terms.last().map_or(1, |t| t.0 as usize);
    let quad = measure.quadrature_for(moment_nodes(measure, order * max_m))?;
    let max_b = if s.regime() == Regime::OneD { 0 } else { order };
    let mut moments = BiSeries::zero(order, max_b);
    for (&theta, &w) in quad.nodes.iter().zip(&quad.weights) {
        let x: Complex64 = terms.iter().map(|&(m, c)| c * (m as f64 * theta).cos()).sum();
        let mut pb = w;
        for b in 0..=max_b {
            let mut pa = pb;
            for a in 0..=order - b {
                moments.add_to(a, b, pa);
                pa *= x.re;
            }
            pb *= x.im;
        }
    }
    moments.set(0, 0, 1.0);
    Ok(LocalMoments { p, order, moments })
}

/// Joint cumulants of `R_Y(s)` (or of its real part on the real axis).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulantTable {
    pub s: EvalPoint,
    pub y: f64,
    pub order: usize,
    /// Cumulant generating series; `scaled(a, b)` is the joint cumulant.
    pub series: BiSeries,
    pub primes: usize,
}

impl CumulantTable {
    /// `kappa_j` of the real part.
    pub fn kappa(&self, j: usize) -> f64 {
        self.series.scaled(j, 0)
    }

    /// Joint cumulant of order `(a, b)` in `(Re, Im)`.
    pub fn joint(&self, a: usize, b: usize) -> f64 {
        self.series.scaled(a, b)
    }

    pub fn regime(&self) -> Regime {
        self.s.regime()
    }

    /// Tables over disjoint prime sets with the same `s`, `Y` and order add.
    pub fn combine(&self, other: &CumulantTable) -> Result<CumulantTable> {
        if self.s != other.s || self.y != other.y || self.order != other.order {
            return Err(MfnError::Config("cumulant tables differ in s, Y or order".into()));
        }
        let mut acc = SeriesSum::new(self.order, self.series.max_b());
        acc.add(&self.series);
        acc.add(&other.series);
        Ok(CumulantTable { series: acc.total(), primes: self.primes + other.primes, ..self.clone() })
    }
}

/// Cumulants of the local sums over `primes`, all `<= Y`.
pub fn cumulants_for_primes(family: &MeasureFamily, s: EvalPoint, y: f64, primes: &[u64], order: usize) -> Result<CumulantTable> {
    if order > MAX_CUMULANT_ORDER {
        return Err(MfnError::UnsupportedOrder { order, max: MAX_CUMULANT_ORDER });
    }
    if order == 0 {
        return Err(MfnError::Config("cumulant order must be at least 1".into()));
    }
    let per_prime: Vec<BiSeries> = primes
        .par_iter()
        .map(|&p| {
            let lm = prime_local_moments(&family.at(p), p, &s, y, order)?;
            let series = BiSeries::from_moments(order, lm.moments.max_b(), |a, b| lm.get(a, b));
            Ok(series.ln())
        })
        .collect::<Result<_>>()?;
    let max_b = if s.regime() == Regime::OneD { 0 } else { order };
    let mut acc = SeriesSum::new(order, max_b);
    per_prime.iter().for_each(|c| acc.add(c));
    Ok(CumulantTable { s, y, order, series: acc.total(), primes: primes.len() })
}

/// Cumulants of `R_Y(s)` up to `order <= 8`, summed over `p <= Y`.
pub fn cumulants_of_r_y(family: &MeasureFamily, s: EvalPoint, y: f64, order: usize) -> Result<CumulantTable> {
    if y < 2.0 {
        return cumulants_for_primes(family, s, y, &[], order);
    }
    let table = shared_table(y.floor() as u64)?;
    cumulants_for_primes(family, s, y, table.up_to(y.floor() as u64), order)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `E[R_Y^(2k)]` on the real axis, `E[|R_Y|^(2k)]` off it.
pub fn moment_2k(table: &CumulantTable, k: usize) -> Result<f64> {
    if 2 * k > table.order {
        return Err(MfnError::UnsupportedOrder { order: 2 * k, max: table.order });
    }
    let raw = table.series.exp();
    Ok(match table.regime() {
        Regime::OneD => raw.scaled(2 * k, 0),
        Regime::TwoD => (0..=k).map(|i| binomial(k, i) * raw.scaled(2 * i, 2 * (k - i))).sum(),
    })
}

fn check_moment_radius(plan: &TruncationPlan, z: Complex64, z2: Complex64) -> Result<()> {
    let need = 2.0 * z.norm().max(z2.norm());
    if need > plan.max_abs_z * (1.0 + 1e-12) {
        return Err(MfnError::PlanViolation { abs_z: need, max_abs_z: plan.max_abs_z });
    }
    Ok(())
}

/// `E[exp(z conj(w) + z' w)]` for `w = log L(s)`, i.e. `Lambda(-2iz, -2iz')`.
pub fn complex_moment(family: &MeasureFamily, plan: &TruncationPlan, z: Complex64, z2: Complex64) -> Result<Complex64> {
    check_moment_radius(plan, z, z2)?;
    let i2 = Complex64::new(0.0, -2.0);
    char_fn(family, plan, i2 * z, i2 * z2)
}

/// As [`complex_moment`] with a prebuilt evaluator; it must have been built with general pairs.
pub fn complex_moment_with(ev: &CharFnEvaluator, z: Complex64, z2: Complex64) -> Result<Complex64> {
    if let Some(plan) = ev.plan() {
        check_moment_radius(plan, z, z2)?;
    }
    let i2 = Complex64::new(0.0, -2.0);
    Ok(ev.eval(i2 * z, i2 * z2)?.value)
}

/// Characteristic function `E[exp(i(x Re R_Y + y Im R_Y))]` by per-prime quadrature.
#[derive(Debug, Clone)]
pub struct DirichletCharFn {
    /// Per prime: node values of the local sum and weights.
    nodes: Vec<(Vec<Complex64>, Vec<f64>)>,
}

impl DirichletCharFn {
    pub fn new(family: &MeasureFamily, s: EvalPoint, y: f64, order: usize) -> Result<Self> {
        let limit = y.floor().max(2.0) as u64;
        let table = shared_table(limit)?;
        let primes: &[u64] = if y < 2.0 { &[] } else { table.up_to(limit) };
        let nodes = primes
            .iter()
            .map(|&p| {
                let terms = local_terms(p, &s, y);
                let quad = family.at(p).quadrature_for(order)?;
                let vals = quad.nodes.iter().map(|&t| terms.iter().map(|&(m, c)| c * (m as f64 * t).cos()).sum()).collect();
                Ok((vals, quad.weights))
            })
            .collect::<Result<_>>()?;
        Ok(Self { nodes })
    }

    /// Value at `z = x + iy`; on the real axis only `x` matters.
    pub fn eval(&self, z: Complex64) -> Complex64 {
        let mut log = Complex64::new(0.0, 0.0);
        for (vals, w) in &self.nodes {
            let f: Complex64 = vals.iter().zip(w).map(|(v, &w)| Complex64::from_polar(w, z.re * v.re + z.im * v.im)).sum();
            log += f.ln();
        }
        log.exp()
    }
}

/// `sum_{n <= Y} E[a(n, Theta)] n^(-sigma)`, the mean of the coefficient sum.
pub fn coefficient_sum_mean(family: &MeasureFamily, sigma: f64, y: u64) -> Result<f64> {
    (1..=y).map(|n| Ok(expect_a(family, n, DEFAULT_EXPECT_ORDER)? * (n as f64).powf(-sigma))).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charfn::{PlanOptions, QuadOptions};
    use crate::hecke::{chebyshev_u, factorize};
    use crate::primes::primes_up_to;

    #[test]
    fn local_moment_examples() {
        let s = EvalPoint::real(1.0).unwrap();
        let st = AngleMeasure::SatoTate;
        for p in [11u64, 13, 97] {
            let lm = prime_local_moments(&st, p, &s, 100.0, 4).unwrap();
            assert_eq!(lm.get(0, 0), 1.0);
            assert!(lm.get(1, 0).abs() < 1e-12);
            assert!((lm.get(2, 0) - (p as f64).powi(-2)).abs() < 1e-15);
        }
        assert!(prime_local_moments(&st, 101, &s, 100.0, 2).is_err());
    }

    #[test]
    fn kappa1_matches_square_terms() {
        let e2 = AngleMeasure::SatoTate.expect_real(|t| (2.0 * t).cos(), 64).unwrap();
        assert!((e2 + 0.5).abs() < 1e-14);
        let s = EvalPoint::real(1.3).unwrap();
        let t = cumulants_of_r_y(&MeasureFamily::SatoTate, s, 100.0, 4).unwrap();
        // p^2 <= 100 contributes E[cos 2 theta] p^(-2 sigma); higher powers average to zero
        let expected: f64 = [2.0f64, 3.0, 5.0, 7.0].iter().map(|p| e2 * p.powf(-2.6)).sum();
        assert!((t.kappa(1) - expected).abs() < 1e-10);
        assert!(t.kappa(2) > 0.0);
    }

    #[test]
    fn empty_sum_has_zero_cumulants() {
        let s = EvalPoint::real(1.0).unwrap();
        let t = cumulants_of_r_y(&MeasureFamily::SatoTate, s, 1.5, 6).unwrap();
        assert!((1..=6).all(|j| t.kappa(j) == 0.0));
        assert!(matches!(cumulants_of_r_y(&MeasureFamily::SatoTate, s, 10.0, 9), Err(MfnError::UnsupportedOrder { .. })));
    }

    #[test]
    fn cumulants_add_over_prime_splits() {
        for s in [EvalPoint::real(0.8).unwrap(), EvalPoint::new(1.0, 2.0).unwrap()] {
            let fam = MeasureFamily::Plancherel;
            let table = primes_up_to(200).unwrap();
            let all = cumulants_for_primes(&fam, s, 200.0, table.primes(), 6).unwrap();
            let lo = cumulants_for_primes(&fam, s, 200.0, table.up_to(50), 6).unwrap();
            let hi = cumulants_for_primes(&fam, s, 200.0, table.between(50, 200), 6).unwrap();
            let both = lo.combine(&hi).unwrap();
            for (a, b, c) in all.series.iter() {
                assert!((both.series.get(a, b) - c).abs() <= 1e-13 * c.abs().max(1.0));
            }
        }
    }

    #[test]
    fn moment_identities() {
        let s = EvalPoint::real(1.0).unwrap();
        let t = cumulants_of_r_y(&MeasureFamily::SatoTate, s, 1000.0, 8).unwrap();
        let k1 = t.kappa(1);
        assert!((moment_2k(&t, 1).unwrap() - (t.kappa(2) + k1 * k1)).abs() < 1e-14);
        assert!(moment_2k(&t, 5).is_err());

        // off the axis: E|R|^2 = var(Re) + var(Im) + |mean|^2
        let s2 = EvalPoint::new(1.0, 1.0).unwrap();
        let t2 = cumulants_of_r_y(&MeasureFamily::SatoTate, s2, 1000.0, 4).unwrap();
        let want = t2.joint(2, 0) + t2.joint(0, 2) + t2.joint(1, 0).powi(2) + t2.joint(0, 1).powi(2);
        assert!((moment_2k(&t2, 1).unwrap() - want).abs() < 1e-13);
        let cov = [[t2.joint(2, 0), t2.joint(1, 1)], [t2.joint(1, 1), t2.joint(0, 2)]];
        assert!(cov[0][0] >= 0.0 && cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0] >= 0.0);
    }

    fn mc_power_mean(xs: &[f64], k: i32) -> (f64, f64) {
        let ys: Vec<f64> = xs.iter().map(|x| x.powi(k)).collect();
        let m = crate::sampling::Moments::of(&ys);
        (m.mean, (m.variance() / m.n as f64).sqrt())
    }

    #[test]
    fn fourth_moment_matches_monte_carlo() {
        let s = EvalPoint::real(1.0).unwrap();
        let fam = MeasureFamily::SatoTate;
        let t = cumulants_of_r_y(&fam, s, 1000.0, 4).unwrap();
        let sampler = crate::sampling::DirichletSampler::new(&fam, s, 1000.0).unwrap();
        let xs: Vec<f64> = sampler.draw_many(11, 0, 200_000).iter().map(|w| w.re).collect();
        let (m2, se2) = mc_power_mean(&xs, 2);
        let (m4, se4) = mc_power_mean(&xs, 4);
        assert!((moment_2k(&t, 1).unwrap() - m2).abs() < 3.0 * se2);
        assert!((moment_2k(&t, 2).unwrap() - m4).abs() < 3.0 * se4, "{} vs {m4} +- {se4}", moment_2k(&t, 2).unwrap());
    }

    #[test]
    fn even_moments_grow_with_y_and_stay_near_monte_carlo() {
        let s = EvalPoint::real(1.25).unwrap();
        let fam = MeasureFamily::SatoTate;
        let tables: Vec<CumulantTable> = [100.0, 1000.0, 10_000.0].iter().map(|&y| cumulants_of_r_y(&fam, s, y, 6).unwrap()).collect();
        for k in 1..=3 {
            let vals: Vec<f64> = tables.iter().map(|t| moment_2k(t, k).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[1] >= w[0]), "k = {k}: {vals:?}");
        }
        let sampler = crate::sampling::DirichletSampler::new(&fam, s, 10_000.0).unwrap();
        let xs: Vec<f64> = sampler.draw_many(5, 0, 20_000).iter().map(|w| w.re).collect();
        let (m6, _) = mc_power_mean(&xs, 6);
        assert!(moment_2k(&tables[2], 3).unwrap() <= 1.5 * m6);
    }

    #[test]
    fn second_derivative_of_log_char_fn_is_variance() {
        let s = EvalPoint::real(1.0).unwrap();
        let fam = MeasureFamily::SatoTate;
        let t = cumulants_of_r_y(&fam, s, 1000.0, 4).unwrap();
        let cf = DirichletCharFn::new(&fam, s, 1000.0, 128).unwrap();
        let h = 1e-3;
        let l = |x: f64| cf.eval(Complex64::new(x, 0.0)).ln().re;
        let d2 = (l(h) - 2.0 * l(0.0) + l(-h)) / (h * h);
        assert!((-d2 - t.kappa(2)).abs() < 1e-5, "{} vs {}", -d2, t.kappa(2));
    }

    #[test]
    fn char_fn_cumulants_match_dirichlet_cumulants_at_sigma_two() {
        let s = EvalPoint::real(2.0).unwrap();
        let fam = MeasureFamily::SatoTate;
        let y = 10_000.0;
        let t = cumulants_of_r_y(&fam, s, y, 4).unwrap();
        let plan = TruncationPlan::with_p_max(s, &fam, 1.0, 10_000, &PlanOptions::default()).unwrap();
        let ev = CharFnEvaluator::new(&fam, &plan).unwrap();
        let h = 1e-3;
        let l = |x: f64| ev.lambda(Complex64::new(x, 0.0)).unwrap().value.ln();
        let (lp, l0, lm) = (l(h), l(0.0), l(-h));
        let k1 = (lp.im - lm.im) / (2.0 * h);
        let k2 = -(lp.re - 2.0 * l0.re + lm.re) / (h * h);
        assert!((k1 - t.kappa(1)).abs() < 1e-6, "{k1} vs {}", t.kappa(1));
        assert!((k2 - t.kappa(2)).abs() < 1e-6, "{k2} vs {}", t.kappa(2));
    }

    #[test]
    fn complex_moment_is_mean_of_l() {
        let s = EvalPoint::real(2.0).unwrap();
        let fam = MeasureFamily::SatoTate;
        let plan = TruncationPlan::with_p_max(s, &fam, 2.0, 3000, &PlanOptions::default()).unwrap();
        let half = Complex64::new(0.5, 0.0);
        let m = complex_moment(&fam, &plan, half, half).unwrap();
        let table = primes_up_to(3000).unwrap();
        let direct: f64 = table
            .primes()
            .iter()
            .map(|&p| {
                let q = (p as f64).powi(-2);
                AngleMeasure::SatoTate.expect_real(|t| 1.0 / (1.0 - 2.0 * t.cos() * q + q * q), 64).unwrap()
            })
            .product();
        assert!((m.re - direct).abs() < 1e-12 * direct && m.im.abs() < 1e-14, "{m} vs {direct}");
        let zero = Complex64::new(0.0, 0.0);
        assert_eq!(complex_moment(&fam, &plan, zero, zero).unwrap(), Complex64::new(1.0, 0.0));
        assert!(complex_moment(&fam, &plan, Complex64::new(1.1, 0.0), zero).is_err());
    }

    #[test]
    fn complex_moment_conjugation_symmetry() {
        let s = EvalPoint::real(1.5).unwrap();
        let fam = MeasureFamily::Plancherel;
        let plan = TruncationPlan::with_p_max(s, &fam, 2.0, 500, &PlanOptions::default()).unwrap();
        let opts = QuadOptions { general_pairs: true, ..QuadOptions::default() };
        let ev = CharFnEvaluator::with_options(&fam, &plan, &opts).unwrap();
        let (z, z2) = (Complex64::new(0.3, 0.4), Complex64::new(-0.2, 0.7));
        let a = complex_moment_with(&ev, z, z2).unwrap();
        let b = complex_moment_with(&ev, z2.conj(), z.conj()).unwrap();
        assert!((a - b.conj()).norm() < 1e-12 * a.norm());
    }

    #[test]
    fn coefficient_sum_mean_is_real_and_matches_quadrature() {
        let fam = MeasureFamily::Plancherel;
        let y = 300;
        let got = coefficient_sum_mean(&fam, 1.0, y).unwrap();
        assert!(got.is_finite());
        // independent evaluation: tensor quadrature of prod U_m(cos theta_p) at each n
        let direct: f64 = (1..=y)
            .map(|n| {
                let e: f64 = factorize(n)
                    .iter()
                    .map(|&(p, m)| {
                        let q = AngleMeasure::plancherel(p).quadrature_for(200).unwrap();
                        q.integrate(|t| chebyshev_u(m as usize, t.cos()))
                    })
                    .product();
                e / n as f64
            })
            .sum();
        assert!((got - direct).abs() < 1e-10);
        // only perfect squares contribute
        let squares: f64 = (1..=17u64).map(|k| (k as f64).powi(-2) / k as f64).sum();
        assert!((got - squares).abs() < 1e-10, "{got} vs {squares}");
    }
}
