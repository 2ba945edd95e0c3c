use std::f64::consts::PI;

use mfunc::charfn::{CharFnEvaluator, CharFnGrid, EvalPoint, QuadOptions};
use mfunc::inversion::{invert_1d, prepare_inversion, invert_setup, InversionOptions};
use mfunc::measures::MeasureFamily;
use mfunc::primes::zeta;
use num_complex::Complex64;

#[test]
fn densities_beyond_one_vanish_outside_the_support_interval() {
    let opts = InversionOptions::default();
    for sigma in [1.5, 2.0] {
        let s = EvalPoint::real(sigma).unwrap();
        let setup = prepare_inversion(&MeasureFamily::SatoTate, s, &opts).unwrap();
        let edge = 2.0 * zeta(sigma).unwrap().ln() + 0.1;
        // widen the output past the automatic window to see the outside
        let us: Vec<f64> = (0..=400).map(|k| -1.5 * edge + 3.0 * edge * k as f64 / 400.0).collect();
        let d = invert_1d(&setup.char_grid, &us, &opts).unwrap();
        let peak = d.max();
        for (u, v) in d.us.iter().zip(&d.values) {
            if u.abs() > edge {
                assert!(v.abs() <= 1e-4 * peak, "sigma {sigma}: M({u}) = {v}");
            }
        }
    }
}

#[test]
fn halving_the_frequency_step_stays_within_the_quadrature_budget() {
    let opts = InversionOptions::default();
    let s = EvalPoint::real(1.0).unwrap();
    let fam = MeasureFamily::SatoTate;
    let setup = prepare_inversion(&fam, s, &opts).unwrap();
    let coarse = invert_setup(&setup, &opts).unwrap();
    let plan = setup.char_grid.plan.clone().unwrap();
    let ev = CharFnEvaluator::new(&fam, &plan).unwrap();
    let xs = &setup.char_grid.xs;
    let h = xs[1] - xs[0];
    let k = (xs.len() as i64 - 1) / 2;
    let fine_xs: Vec<f64> = (-2 * k..=2 * k).map(|i| i as f64 * h / 2.0).collect();
    let fine_grid = CharFnGrid::from_evaluator(&ev, fine_xs, vec![0.0]).unwrap();
    let fine = invert_1d(&fine_grid, &coarse.us, &opts).unwrap();
    let diff = coarse.values.iter().zip(&fine.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff <= coarse.budget.quadrature + coarse.budget.char_fn, "{diff} vs {:?}", coarse.budget);
}

#[test]
fn two_prime_product_inverts_to_the_convolution() {
    // local laws at single primes live on curves; a Gaussian factor makes them smooth
    let s = EvalPoint::real(1.0).unwrap();
    let fam = MeasureFamily::SatoTate;
    let radius = 30.0;
    let var = 0.05;
    let e2 = CharFnEvaluator::finite(&fam, s, &[2], radius, 4, &QuadOptions::default()).unwrap();
    let e3 = CharFnEvaluator::finite(&fam, s, &[3], radius, 4, &QuadOptions::default()).unwrap();
    let lam = |ev: &CharFnEvaluator, x: f64| ev.lambda(Complex64::new(x, 0.0)).unwrap().value;
    let soft = |x: f64, v: f64| (-0.5 * v * x * x).exp();
    let k = 300;
    let h = radius / k as f64;
    let xs: Vec<f64> = (-k..=k).map(|i| i as f64 * h).collect();
    let g2 = CharFnGrid::from_fn(s, xs.clone(), vec![0.0], |x, _| lam(&e2, x) * soft(x, var));
    let g3 = CharFnGrid::from_fn(s, xs.clone(), vec![0.0], |x, _| lam(&e3, x) * soft(x, var));
    let g23 = CharFnGrid::from_fn(s, xs, vec![0.0], |x, _| lam(&e2, x) * lam(&e3, x) * soft(x, 2.0 * var));

    let opts = InversionOptions::default();
    let du = 0.02;
    let us: Vec<f64> = (-200..=200).map(|i| i as f64 * du).collect();
    let d2 = invert_1d(&g2, &us, &opts).unwrap();
    let d3 = invert_1d(&g3, &us, &opts).unwrap();
    let d23 = invert_1d(&g23, &us, &opts).unwrap();

    // M12(u) = (2 pi)^(-1/2) int M1(x) M2(u - x) dx on the shared grid
    let n = us.len() as i64;
    let mid = (n - 1) / 2;
    let mut worst: f64 = 0.0;
    for (iu, &want) in d23.values.iter().enumerate() {
        let iu = iu as i64 - mid;
        let conv: f64 = (0..n)
            .filter_map(|ix| {
                let j = iu - (ix - mid) + mid;
                (0..n).contains(&j).then(|| d2.values[ix as usize] * d3.values[j as usize])
            })
            .sum::<f64>()
            * du
            / (2.0 * PI).sqrt();
        worst = worst.max((conv - want).abs());
    }
    let budget = d2.budget.pointwise() + d3.budget.pointwise() + d23.budget.pointwise();
    assert!(worst <= budget + 1e-8, "{worst} vs {budget}");
}

#[test]
fn two_dimensional_grid_boundary_meets_the_tail_tolerance() {
    // sampled frame points alone accept R = 256 here
    let opts = InversionOptions { points: 41, ..InversionOptions::default() };
    let s = EvalPoint::new(2.0, 1.0).unwrap();
    let setup = prepare_inversion(&MeasureFamily::SatoTate, s, &opts).unwrap();
    let g = &setup.char_grid;
    let (rx, ry) = (g.xs[g.xs.len() - 1], g.ys[g.ys.len() - 1]);
    let mut edge: f64 = 0.0;
    for (iy, y) in g.ys.iter().enumerate() {
        for (ix, x) in g.xs.iter().enumerate() {
            if x.abs() >= 0.875 * rx || y.abs() >= 0.875 * ry {
                edge = edge.max(g.at(ix, iy).norm());
            }
        }
    }
    assert!(edge <= opts.tail_tol, "{edge}");
    assert!(setup.radius.boundary_modulus >= edge);
    let d = invert_setup(&setup, &opts).unwrap();
    assert!((d.mass() - 1.0).abs() < 1e-3);
}
