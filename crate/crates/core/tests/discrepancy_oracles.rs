use std::f64::consts::PI;

use mfunc::charfn::{EvalPoint, Regime};
use mfunc::discrepancy::{
    empirical_discrepancy, esseen_bound_1d, esseen_bound_2d, marginal_density, strip_discrepancy, SyntheticFamily,
};
use mfunc::inversion::{rect_mass_from_density, DensityGrid, ErrorBudget};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use statrs::distribution::{ContinuousCDF, Normal};

#[derive(Clone, Copy, Debug)]
enum Law {
    Gauss { m: f64, s: f64 },
    Laplace { m: f64, b: f64 },
}

impl Law {
    fn cf(self, u: f64) -> Complex64 {
        match self {
            Law::Gauss { m, s } => Complex64::from_polar((-0.5 * s * s * u * u).exp(), m * u),
            Law::Laplace { m, b } => Complex64::from_polar(1.0 / (1.0 + b * b * u * u), m * u),
        }
    }

    fn cdf(self, x: f64) -> f64 {
        match self {
            Law::Gauss { m, s } => Normal::new(m, s).unwrap().cdf(x),
            Law::Laplace { m, b } => {
                if x < m {
                    0.5 * ((x - m) / b).exp()
                } else {
                    1.0 - 0.5 * (-(x - m) / b).exp()
                }
            }
        }
    }

    fn max_density(self) -> f64 {
        match self {
            Law::Gauss { s, .. } => 1.0 / (s * (2.0 * PI).sqrt()),
            Law::Laplace { b, .. } => 0.5 / b,
        }
    }
}

#[test]
fn one_dimensional_bound_dominates_closed_form_pairs() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(50);
    for k in 0..50 {
        let mu = Law::Gauss { m: rng.gen_range(-0.5..0.5), s: rng.gen_range(0.5..2.0) };
        let nu = if k % 2 == 0 {
            Law::Gauss { m: rng.gen_range(-0.5..0.5), s: rng.gen_range(0.5..2.0) }
        } else {
            Law::Laplace { m: rng.gen_range(-0.5..0.5), b: rng.gen_range(0.3..1.5) }
        };
        let r = rng.gen_range(2.0..40.0);
        let bound = esseen_bound_1d(|u| mu.cf(u), |u| nu.cf(u), nu.max_density(), r, 4000).unwrap();
        let sup = (0..=20_000)
            .map(|i| -12.0 + 24.0 * i as f64 / 20_000.0)
            .map(|x| (mu.cdf(x) - nu.cdf(x)).abs())
            .fold(0.0, f64::max);
        assert!(bound >= sup, "pair {k}: {mu:?} vs {nu:?}, R = {r}: bound {bound} < {sup}");
    }
}

#[derive(Clone, Copy, Debug)]
struct Gauss2 {
    m: (f64, f64),
    s: (f64, f64),
    rho: f64,
}

impl Gauss2 {
    fn cf(self, u: f64, v: f64) -> Complex64 {
        let (s1, s2) = self.s;
        let q = s1 * s1 * u * u + 2.0 * self.rho * s1 * s2 * u * v + s2 * s2 * v * v;
        Complex64::from_polar((-0.5 * q).exp(), self.m.0 * u + self.m.1 * v)
    }

    /// `P(X <= x, Y <= y)` by integrating the conditional law of `Y` over `X`.
    fn cdf(self, x: f64, y: f64) -> f64 {
        let std = Normal::new(0.0, 1.0).unwrap();
        let a = (x - self.m.0) / self.s.0;
        let b = (y - self.m.1) / self.s.1;
        let lo = -9.0;
        if a <= lo {
            return 0.0;
        }
        let c = (1.0 - self.rho * self.rho).sqrt();
        let g = |t: f64| (-0.5 * t * t).exp() / (2.0 * PI).sqrt() * std.cdf((b - self.rho * t) / c);
        let n = 600;
        let h = (a - lo) / n as f64;
        let mut sum = g(lo) + g(a);
        for i in 1..n {
            sum += g(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        sum * h / 3.0
    }
}

#[test]
fn two_dimensional_bound_dominates_gaussian_pairs() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(51);
    for k in 0..50 {
        let mu = Gauss2 { m: (0.0, 0.0), s: (1.0, 1.0), rho: rng.gen_range(-0.6..0.6) };
        let nu = Gauss2 {
            m: (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)),
            s: (rng.gen_range(0.6..1.6), rng.gen_range(0.6..1.6)),
            rho: rng.gen_range(-0.6..0.6),
        };
        let r = rng.gen_range(5.0..60.0);
        let a1 = 1.0 / (nu.s.0 * (2.0 * PI).sqrt());
        let a2 = 1.0 / (nu.s.1 * (2.0 * PI).sqrt());
        let bound = esseen_bound_2d(|u, v| mu.cf(u, v), |u, v| nu.cf(u, v), a1, a2, r, 100).unwrap();
        let mut sup: f64 = 0.0;
        for i in 0..=30 {
            for j in 0..=30 {
                let (x, y) = (-4.0 + 8.0 * i as f64 / 30.0, -4.0 + 8.0 * j as f64 / 30.0);
                sup = sup.max((mu.cdf(x, y) - nu.cdf(x, y)).abs());
            }
        }
        assert!(bound >= sup, "pair {k}: R = {r}: bound {bound} < {sup}");
    }
}

fn product_density(n: usize, half: f64) -> DensityGrid {
    let axis: Vec<f64> = (0..n).map(|k| -half + 2.0 * half * k as f64 / (n - 1) as f64).collect();
    // normalization with respect to du dv / (2 pi)
    let mut values = Vec::with_capacity(n * n);
    for &v in &axis {
        for &u in &axis {
            values.push((-0.5 * (u * u + (v / 0.7).powi(2))).exp() / 0.7);
        }
    }
    DensityGrid {
        regime: Regime::TwoD,
        us: axis.clone(),
        vs: axis,
        values,
        budget: ErrorBudget::default(),
        radius: 0.0,
        p_max: None,
        char_step: (0.0, 0.0),
    }
}

fn small_family(m: usize, seed: u64) -> SyntheticFamily {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let s = EvalPoint::new(1.0, 1.0).unwrap();
    let values = (0..m).map(|_| Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-1.5..1.5))).collect();
    let weights = (0..m).map(|_| rng.gen_range(0.5..1.5)).collect();
    SyntheticFamily::new(s, values, weights).unwrap()
}

#[test]
fn rectangle_sup_matches_brute_force() {
    let density = product_density(161, 6.0);
    let mass = rect_mass_from_density(&density).unwrap();
    let fam = small_family(9, 4);
    let eps = 1e-9;
    let cands = |f: fn(&Complex64) -> f64| {
        let mut c = vec![-50.0, 50.0];
        for v in &fam.values {
            c.extend([f(v) - eps, f(v), f(v) + eps]);
        }
        c
    };
    let (cu, cv) = (cands(|w| w.re), cands(|w| w.im));
    let mut brute: f64 = 0.0;
    for &u1 in &cu {
        for &u2 in cu.iter().filter(|&&x| x >= u1) {
            for &v1 in &cv {
                for &v2 in cv.iter().filter(|&&y| y >= v1) {
                    let emp: f64 = fam
                        .values
                        .iter()
                        .zip(&fam.weights)
                        .filter(|(w, _)| u1 <= w.re && w.re <= u2 && v1 <= w.im && w.im <= v2)
                        .map(|(_, &c)| c)
                        .sum();
                    brute = brute.max((emp - mass.rect(u1, u2, v1, v2)).abs());
                }
            }
        }
    }
    let fast = empirical_discrepancy(&fam, &density).unwrap();
    assert!((fast - brute).abs() < 1e-7, "{fast} vs {brute}");
}

#[test]
fn full_height_strips_reduce_to_one_dimension() {
    let density = product_density(161, 6.0);
    let fam = small_family(60, 5);
    let strips = strip_discrepancy(&fam, &density).unwrap();
    let projected = SyntheticFamily::new(
        EvalPoint::real(1.0).unwrap(),
        fam.values.iter().map(|w| Complex64::new(w.re, 0.0)).collect(),
        fam.weights.clone(),
    )
    .unwrap();
    let one_d = empirical_discrepancy(&projected, &marginal_density(&density).unwrap()).unwrap();
    assert!((strips - one_d).abs() < 1e-10);
    // strips are among the rectangles
    assert!(empirical_discrepancy(&fam, &density).unwrap() >= strips - 1e-12);
}
