//! Exact coefficient algebra.
//!
//! Elements of the Hecke ring are finite integer combinations of symbols `x(n)`
//! with `x(m) x(n) = sum_{d | gcd(m, n)} x(mn / d^2)`. The coefficients
//! `a(p^m, theta) = U_m(cos theta)` obey the same relation at each prime.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{MfnError, Result};
use crate::measures::MeasureFamily;

/// Chebyshev polynomial of the second kind by the three-term recurrence.
pub fn chebyshev_u(m: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, 2.0 * x);
    if m == 0 {
        return prev;
    }
    for _ in 1..m {
        let next = 2.0 * x * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `U_0(x), ..., U_m(x)`.
pub fn chebyshev_u_table(m: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(m + 1);
    out.push(1.0);
    if m >= 1 {
        out.push(2.0 * x);
    }
    for k in 2..=m {
        let next = 2.0 * x * out[k - 1] - out[k - 2];
        out.push(next);
    }
    out
}

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Prime factorisation by trial division, as `(p, exponent)` pairs.
pub fn factorize(mut n: u64) -> Vec<(u64, u32)> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        if n.is_multiple_of(p) {
            let mut e = 0;
            while n.is_multiple_of(p) {
                n /= p;
                e += 1;
            }
            out.push((p, e));
        }
        p += if p == 2 { 1 } else { 2 };
    }
    if n > 1 {
        out.push((n, 1));
    }
    out
}

/// Number of positive divisors.
pub fn divisor_count(n: u64) -> u64 {
    factorize(n).iter().map(|&(_, e)| e as u64 + 1).product()
}

fn divisors(n: u64) -> Vec<u64> {
    let mut out = vec![1];
    for (p, e) in factorize(n) {
        let len = out.len();
        let mut pk = 1;
        for _ in 0..e {
            pk *= p;
            for i in 0..len {
                out.push(out[i] * pk);
            }
        }
    }
    out
}

/// Finite integer combination of basis symbols `x(n)`; zero coefficients are never stored.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HeckeElement {
    terms: BTreeMap<u64, i64>,
}

impl HeckeElement {
    pub fn zero() -> Self {
        Self::default()
    }

    /// The identity `x(1)`.
    pub fn one() -> Self {
        Self::basis(1)
    }

    /// The symbol `x(n)`.
    ///
    /// # Panics
    /// If `n == 0`.
    pub fn basis(n: u64) -> Self {
        Self::from_terms([(n, 1)])
    }

    /// Builds an element from `(index, coefficient)` pairs, merging repeats.
    ///
    /// # Panics
    /// If an index is 0 or a merged coefficient overflows.
    pub fn from_terms<I: IntoIterator<Item = (u64, i64)>>(terms: I) -> Self {
        let mut out = Self::zero();
        for (n, c) in terms {
            assert!(n >= 1, "Hecke indices start at 1");
            out.add_term(n, c).expect("coefficient overflow");
        }
        out
    }

    fn add_term(&mut self, n: u64, c: i64) -> Result<()> {
        if c == 0 {
            return Ok(());
        }
        let entry = self.terms.entry(n).or_insert(0);
        *entry = entry.checked_add(c).ok_or(MfnError::HeckeOverflow)?;
        if *entry == 0 {
            self.terms.remove(&n);
        }
        Ok(())
    }

    pub fn coeff(&self, n: u64) -> i64 {
        self.terms.get(&n).copied().unwrap_or(0)
    }

    /// Terms in increasing index order.
    pub fn terms(&self) -> impl Iterator<Item = (u64, i64)> + '_ {
        self.terms.iter().map(|(&n, &c)| (n, c))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        for (n, c) in other.terms() {
            out.add_term(n, c)?;
        }
        Ok(out)
    }

    /// Evaluates the element under `x(n) -> a(n)`.
    pub fn evaluate<F: FnMut(u64) -> f64>(&self, mut a: F) -> f64 {
        self.terms().map(|(n, c)| c as f64 * a(n)).sum()
    }
}

/// Product in the Hecke ring; index or coefficient overflow is an error.
pub fn hecke_mul(e1: &HeckeElement, e2: &HeckeElement) -> Result<HeckeElement> {
    let mut out = HeckeElement::zero();
    for (m, a) in e1.terms() {
        for (n, b) in e2.terms() {
            let c = a.checked_mul(b).ok_or(MfnError::HeckeOverflow)?;
            for d in divisors(gcd(m, n)) {
                let idx = (m / d).checked_mul(n / d).ok_or(MfnError::HeckeOverflow)?;
                out.add_term(idx, c)?;
            }
        }
    }
    Ok(out)
}

/// Expands `x(n_1) ... x(n_r)`.
pub fn expand_product(indices: &[u64]) -> Result<HeckeElement> {
    let (first, rest) = indices
        .split_first()
        .ok_or_else(|| MfnError::Config("expand_product needs at least one index".into()))?;
    if indices.contains(&0) {
        return Err(MfnError::Config("Hecke indices start at 1".into()));
    }
    rest.iter()
        .try_fold(HeckeElement::basis(*first), |acc, &n| hecke_mul(&acc, &HeckeElement::basis(n)))
}

impl fmt::Display for HeckeElement {
    /// Highest index first, e.g. `x(8) + 2*x(2)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        for (i, (n, c)) in self.terms.iter().rev().enumerate() {
            let sign = if *c < 0 { "-" } else { "+" };
            match (i, *c < 0) {
                (0, false) => {}
                (0, true) => f.write_str("-")?,
                _ => write!(f, " {sign} ")?,
            }
            let mag = c.unsigned_abs();
            if mag != 1 {
                write!(f, "{mag}*")?;
            }
            write!(f, "x({n})")?;
        }
        Ok(())
    }
}

/// Exact rational with positive denominator, in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rational {
    pub num: i64,
    pub den: i64,
}

impl Rational {
    pub fn new(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        let g = gcd(num.unsigned_abs(), den.unsigned_abs()) as i64;
        let s = if den < 0 { -1 } else { 1 };
        Self { num: s * num / g, den: s * den / g }
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// Nonzero coefficients `c_m(j)` with `2 cos(m theta)/m = sum_j c_m(j) U_j(cos theta)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoeffTransform {
    pub m: u32,
    /// `(j, c_m(j))`, highest `j` first.
    pub entries: Vec<(u32, Rational)>,
}

impl CoeffTransform {
    /// `sum_j c_m(j) U_j(x)`.
    pub fn apply(&self, x: f64) -> f64 {
        self.entries
            .iter()
            .map(|&(j, c)| c.to_f64() * chebyshev_u(j as usize, x))
            .sum()
    }
}

pub fn coeff_transform(m: u32) -> Result<CoeffTransform> {
    if m == 0 {
        return Err(MfnError::Config("coefficient transform needs m >= 1".into()));
    }
    let mut entries = vec![(m, Rational::new(1, m as i64))];
    if m >= 2 {
        entries.push((m - 2, Rational::new(-1, m as i64)));
    }
    Ok(CoeffTransform { m, entries })
}

pub const DEFAULT_EXPECT_ORDER: usize = 64;

/// `E[a(n, Theta)]`, the product over `p^m || n` of `E[U_m(cos Theta_p)]`.
pub fn expect_a(family: &MeasureFamily, n: u64, order: usize) -> Result<f64> {
    if n == 0 {
        return Err(MfnError::Config("expect_a needs n >= 1".into()));
    }
    let factors = factorize(n);
    if matches!(family, MeasureFamily::SatoTate) && !factors.is_empty() {
        return Ok(0.0);
    }
    let mut out = 1.0;
    for (p, m) in factors {
        let measure = family.at(p);
        out *= measure.expect_real(|t| chebyshev_u(m as usize, t.cos()), order)?;
    }
    Ok(out)
}
