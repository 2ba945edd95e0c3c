//! Truncated bivariate power series `sum c_ab a^a b^b`, `a + b <= order`.
//!
//! Used to pass between raw moments and cumulants: the moment generating function
//! of `(X, Y)` is `sum E[X^a Y^b] / (a! b!) alpha^a beta^b`, and its logarithm is
//! the cumulant generating function.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiSeries {
    order: usize,
    max_b: usize,
    coef: Vec<f64>,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

impl BiSeries {
    /// Zero series; `max_b = 0` gives a univariate series in the first variable.
    pub fn zero(order: usize, max_b: usize) -> Self {
        let max_b = max_b.min(order);
        let len = (0..=max_b).map(|b| order - b + 1).sum();
        Self { order, max_b, coef: vec![0.0; len] }
    }

    pub fn one(order: usize, max_b: usize) -> Self {
        let mut s = Self::zero(order, max_b);
        s.coef[0] = 1.0;
        s
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn max_b(&self) -> usize {
        self.max_b
    }

    fn index(&self, a: usize, b: usize) -> Option<usize> {
        if b > self.max_b || a + b > self.order {
            return None;
        }
        // rows by b, each row holds a = 0..=order-b
        let offset: usize = (0..b).map(|k| self.order - k + 1).sum();
        Some(offset + a)
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.index(a, b).map_or(0.0, |i| self.coef[i])
    }

    pub fn set(&mut self, a: usize, b: usize, v: f64) {
        let i = self.index(a, b).expect("coefficient outside truncation");
        self.coef[i] = v;
    }

    pub fn add_to(&mut self, a: usize, b: usize, v: f64) {
        if let Some(i) = self.index(a, b) {
            self.coef[i] += v;
        }
    }

    /// `(a, b, c_ab)` over all stored coefficients.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..=self.max_b).flat_map(move |b| (0..=self.order - b).map(move |a| (a, b, self.get(a, b))))
    }

    /// Series from raw moments `m(a, b) = E[X^a Y^b]`.
    pub fn from_moments<F: Fn(usize, usize) -> f64>(order: usize, max_b: usize, m: F) -> Self {
        let mut s = Self::zero(order, max_b);
        for b in 0..=s.max_b {
            for a in 0..=order - b {
                s.set(a, b, m(a, b) / (factorial(a) * factorial(b)));
            }
        }
        s
    }

    /// Coefficient times `a! b!`: the moment or cumulant it encodes.
    pub fn scaled(&self, a: usize, b: usize) -> f64 {
        self.get(a, b) * factorial(a) * factorial(b)
    }

    pub fn mul(&self, other: &Self) -> Self {
        let order = self.order.min(other.order);
        let max_b = self.max_b.min(other.max_b);
        let mut out = Self::zero(order, max_b);
        for (a1, b1, c1) in self.iter() {
            if c1 == 0.0 || a1 + b1 > order {
                continue;
            }
            for (a2, b2, c2) in other.iter() {
                if b1 + b2 <= max_b && a1 + b1 + a2 + b2 <= order {
                    out.add_to(a1 + a2, b1 + b2, c1 * c2);
                }
            }
        }
        out
    }

    pub fn scale(&self, k: f64) -> Self {
        let mut out = self.clone();
        out.coef.iter_mut().for_each(|c| *c *= k);
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (a, b, c) in other.iter() {
            out.add_to(a, b, c);
        }
        out
    }

    /// Logarithm; the constant term must be positive.
    pub fn ln(&self) -> Self {
        let c0 = self.coef[0];
        assert!(c0 > 0.0, "logarithm needs a positive constant term");
        let mut u = self.scale(1.0 / c0);
        u.coef[0] = 0.0;
        let mut out = Self::zero(self.order, self.max_b);
        let mut power = u.clone();
        for k in 1..=self.order {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            out = out.add(&power.scale(sign / k as f64));
            if k < self.order {
                power = power.mul(&u);
            }
        }
        out.coef[0] = c0.ln();
        out
    }

    pub fn exp(&self) -> Self {
        let c0 = self.coef[0];
        let mut u = self.clone();
        u.coef[0] = 0.0;
        let mut out = Self::one(self.order, self.max_b);
        let mut term = Self::one(self.order, self.max_b);
        for k in 1..=self.order {
            term = term.mul(&u).scale(1.0 / k as f64);
            out = out.add(&term);
        }
        out.scale(c0.exp())
    }

    /// Evaluates the polynomial at complex arguments.
    pub fn eval(&self, alpha: Complex64, beta: Complex64) -> Complex64 {
        let mut out = Complex64::new(0.0, 0.0);
        let mut bpow = Complex64::new(1.0, 0.0);
        for b in 0..=self.max_b {
            // Horner in alpha for the row with this power of beta
            let mut row = Complex64::new(0.0, 0.0);
            for a in (0..=self.order - b).rev() {
                row = row * alpha + self.get(a, b);
            }
            out += row * bpow;
            bpow *= beta;
        }
        out
    }
}

/// Neumaier-compensated accumulator for coefficient-wise sums of series.
#[derive(Debug, Clone)]
pub struct SeriesSum {
    sum: BiSeries,
    comp: Vec<f64>,
}

impl SeriesSum {
    pub fn new(order: usize, max_b: usize) -> Self {
        let sum = BiSeries::zero(order, max_b);
        let comp = vec![0.0; sum.coef.len()];
        Self { sum, comp }
    }

    /// Adds `s`, which may have lower order.
    pub fn add(&mut self, s: &BiSeries) {
        for (a, b, c) in s.iter() {
            if let Some(i) = self.sum.index(a, b) {
                let t = self.sum.coef[i] + c;
                if self.sum.coef[i].abs() >= c.abs() {
                    self.comp[i] += (self.sum.coef[i] - t) + c;
                } else {
                    self.comp[i] += (c - t) + self.sum.coef[i];
                }
                self.sum.coef[i] = t;
            }
        }
    }

    pub fn merge(&mut self, other: &SeriesSum) {
        self.add(&other.total());
    }

    pub fn total(&self) -> BiSeries {
        let mut out = self.sum.clone();
        out.coef.iter_mut().zip(&self.comp).for_each(|(c, k)| *c += k);
        out
    }
}
