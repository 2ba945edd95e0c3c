//! Monte Carlo draws of `log L(s)` truncated at `p_max`, and of the Dirichlet
//! polynomial `R_Y(s) = sum_{p^m <= Y} (2 cos(m theta_p) / m) p^(-ms)`.
//!
//! `theta_p` for the `i`-th prime is the first draw of sub-stream `i`, so a path
//! keeps its angles when `p_max` or `Y` grows, and both sums see the same angles.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charfn::{local_base, local_log_at, psi, EvalPoint, Regime, TruncationPlan};
use crate::error::{MfnError, Result};
use crate::measures::{AngleMeasure, MeasureFamily};
use crate::primes::shared_table;
use crate::rng::StreamSeed;

/// Batch length for variance-of-variance estimates.
pub const BATCH: usize = 1 << 14;
const MAX_BINS: usize = 100_000;

/// Angle of the prime with table index `index` on the path `seed`.
pub fn theta_for(measure: &AngleMeasure, seed: StreamSeed, index: usize) -> f64 {
    measure.sample(&mut seed.substream(index as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    pub seed: StreamSeed,
    pub p_max: u64,
    pub s: EvalPoint,
    pub value: Complex64,
    /// Per-prime angles, kept only on request.
    pub thetas: Option<Vec<f64>>,
}

/// Per-prime data for repeated draws of `log L`.
#[derive(Debug, Clone)]
pub struct Sampler {
    s: EvalPoint,
    p_max: u64,
    measures: Vec<AngleMeasure>,
    bases: Vec<Complex64>,
}

impl Sampler {
    pub fn new(family: &MeasureFamily, plan: &TruncationPlan) -> Result<Self> {
        Self::with_p_max(family, plan.s, plan.p_max)
    }

    pub fn with_p_max(family: &MeasureFamily, s: EvalPoint, p_max: u64) -> Result<Self> {
        let table = shared_table(p_max)?;
        let primes = table.up_to(p_max);
        if primes.is_empty() {
            return Err(MfnError::EmptyPrimeTable { limit: p_max });
        }
        Ok(Self {
            s,
            p_max,
            measures: primes.iter().map(|&p| family.at(p)).collect(),
            bases: primes.iter().map(|&p| local_base(p, &s)).collect(),
        })
    }

    pub fn p_max(&self) -> u64 {
        self.p_max
    }

    pub fn eval_point(&self) -> EvalPoint {
        self.s
    }

    pub fn draw(&self, seed: StreamSeed, keep_thetas: bool) -> SamplePath {
        let regime = self.s.regime();
        let mut thetas = keep_thetas.then(|| Vec::with_capacity(self.measures.len()));
        let mut value = Complex64::new(0.0, 0.0);
        for (i, (m, &q)) in self.measures.iter().zip(&self.bases).enumerate() {
            let theta = theta_for(m, seed, i);
            value += local_log_at(theta, q, regime);
            if let Some(t) = thetas.as_mut() {
                t.push(theta);
            }
        }
        debug_assert!(regime == Regime::TwoD || value.im == 0.0);
        SamplePath { seed, p_max: self.p_max, s: self.s, value, thetas }
    }

    /// Values of paths `first_stream..first_stream + n` under `seed`.
    pub fn draw_many(&self, seed: u64, first_stream: u64, n: usize) -> Vec<Complex64> {
        (0..n as u64)
            .into_par_iter()
            .map(|k| self.draw(StreamSeed::new(seed, first_stream + k), false).value)
            .collect()
    }
}

/// One draw of `log L(s)` truncated at `plan.p_max`.
pub fn sample_log_l(family: &MeasureFamily, plan: &TruncationPlan, seed: StreamSeed, keep_thetas: bool) -> Result<SamplePath> {
    Ok(Sampler::new(family, plan)?.draw(seed, keep_thetas))
}

/// Terms of `R_Y(s)` grouped by prime.
#[derive(Debug, Clone)]
pub struct DirichletSampler {
    s: EvalPoint,
    y: f64,
    measures: Vec<AngleMeasure>,
    /// `(m, (2/m) p^(-ms))` for each `p^m <= Y`.
    terms: Vec<Vec<(u32, Complex64)>>,
}

impl DirichletSampler {
    pub fn new(family: &MeasureFamily, s: EvalPoint, y: f64) -> Result<Self> {
        if !(y >= 2.0 && y.is_finite()) {
            return Err(MfnError::Config(format!("Dirichlet polynomial length must be >= 2, got {y}")));
        }
        let limit = y.floor() as u64;
        let table = shared_table(limit)?;
        let primes = table.up_to(limit);
        let terms = primes
            .iter()
            .map(|&p| {
                let base = s.prime_power(p);
                let mut out = Vec::new();
                let (mut pm, mut m) = (p as f64, 1u32);
                let mut power = base;
                while pm <= y {
                    out.push((m, power * (2.0 / m as f64)));
                    m += 1;
                    pm *= p as f64;
                    power *= base;
                }
                out
            })
            .collect();
        Ok(Self { s, y, measures: primes.iter().map(|&p| family.at(p)).collect(), terms })
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn eval_point(&self) -> EvalPoint {
        self.s
    }

    pub fn primes_used(&self) -> usize {
        self.terms.len()
    }

    /// `R_Y` at given angles, one per prime.
    pub fn eval(&self, thetas: &[f64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (terms, &theta) in self.terms.iter().zip(thetas) {
            for &(m, c) in terms {
                acc += c * (m as f64 * theta).cos();
            }
        }
        if self.s.regime() == Regime::OneD {
            acc.im = 0.0;
        }
        acc
    }

    pub fn draw(&self, seed: StreamSeed) -> Complex64 {
        let thetas: Vec<f64> = self.measures.iter().enumerate().map(|(i, m)| theta_for(m, seed, i)).collect();
        self.eval(&thetas)
    }

    pub fn draw_many(&self, seed: u64, first_stream: u64, n: usize) -> Vec<Complex64> {
        (0..n as u64)
            .into_par_iter()
            .map(|k| self.draw(StreamSeed::new(seed, first_stream + k)))
            .collect()
    }

    /// `sum (2/m) p^(-m sigma)`, a bound on `|R_Y|`.
    pub fn abs_bound(&self) -> f64 {
        self.terms.iter().flatten().map(|(_, c)| c.norm()).sum()
    }
}

/// One draw of `R_Y(s)`.
pub fn sample_r_y(family: &MeasureFamily, s: EvalPoint, y: f64, seed: StreamSeed) -> Result<Complex64> {
    Ok(DirichletSampler::new(family, s, y)?.draw(seed))
}

/// Mergeable running mean and second central moment.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&self, other: &Moments) -> Moments {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let (a, b) = (self.n as f64, other.n as f64);
        Moments { n, mean: self.mean + d * b / n as f64, m2: self.m2 + other.m2 + d * d * a * b / n as f64 }
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn of(xs: &[f64]) -> Moments {
        // fixed chunking and an ordered fold keep the result independent of the thread count
        let parts: Vec<Moments> = xs
            .par_chunks(BATCH)
            .map(|c| {
                let mut m = Moments::default();
                c.iter().for_each(|&x| m.push(x));
                m
            })
            .collect();
        parts.iter().fold(Moments::default(), |a, b| a.merge(b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub n: u64,
}

impl Histogram {
    /// Fraction of the samples in each bin.
    pub fn masses(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.n as f64).collect()
    }

    /// Probability density per bin.
    pub fn densities(&self) -> Vec<f64> {
        self.masses().iter().zip(self.edges.windows(2)).map(|(m, e)| m / (e[1] - e[0])).collect()
    }

    /// Freedman-Diaconis binning over the range of `sorted`.
    fn freedman_diaconis(sorted: &[f64]) -> Self {
        let n = sorted.len();
        let (lo, hi) = (sorted[0], sorted[n - 1]);
        let iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
        let width = 2.0 * iqr / (n as f64).cbrt();
        let bins = if width > 0.0 && hi > lo { (((hi - lo) / width).ceil() as usize).clamp(1, MAX_BINS) } else { 1 };
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        let edges: Vec<f64> = (0..=bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect();
        let mut counts = vec![0u64; bins];
        for &x in sorted {
            let k = (((x - lo) / (hi - lo)) * bins as f64).floor() as usize;
            counts[k.min(bins - 1)] += 1;
        }
        Self { edges, counts, n: n as u64 }
    }
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

/// Step-function CDF of a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(samples: &[f64]) -> Self {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self { sorted }
    }

    /// Fraction of samples `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&s| s <= x) as f64 / self.sorted.len() as f64
    }

    pub fn quantile(&self, p: f64) -> f64 {
        quantile_sorted(&self.sorted, p.clamp(0.0, 1.0))
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSummary {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub se_mean: f64,
    pub se_variance: f64,
    pub median: f64,
    pub histogram: Histogram,
    #[serde(skip)]
    pub cdf: Option<EmpiricalCdf>,
}

/// Moments with standard errors, and a Freedman-Diaconis histogram.
pub fn summarize(samples: &[f64]) -> Result<EmpiricalSummary> {
    let n = samples.len();
    if n < 2 {
        return Err(MfnError::TooFewSamples { needed: 2, got: n });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(MfnError::NonFinite("samples"));
    }
    let m = Moments::of(samples);
    let variance = m.variance();
    let se_variance = if n >= 2 * BATCH {
        // spread of the per-batch variances
        let vars: Vec<f64> = samples.chunks_exact(BATCH).map(|c| Moments::of(c).variance()).collect();
        let vm = Moments::of(&vars);
        (vm.variance() / vars.len() as f64).sqrt()
    } else {
        let m4 = samples.iter().map(|x| (x - m.mean).powi(4)).sum::<f64>() / n as f64;
        ((m4 - variance * variance * (n as f64 - 3.0) / (n as f64 - 1.0)).max(0.0) / n as f64).sqrt()
    };
    let cdf = EmpiricalCdf::new(samples);
    Ok(EmpiricalSummary {
        n,
        mean: m.mean,
        variance,
        se_mean: (variance / n as f64).sqrt(),
        se_variance,
        median: cdf.quantile(0.5),
        histogram: Histogram::freedman_diaconis(cdf.sorted()),
        cdf: Some(cdf),
    })
}

/// Summaries of real and imaginary parts plus their covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexSummary {
    pub re: EmpiricalSummary,
    pub im: EmpiricalSummary,
    pub covariance: f64,
}

pub fn summarize_complex(samples: &[Complex64]) -> Result<ComplexSummary> {
    let re: Vec<f64> = samples.iter().map(|c| c.re).collect();
    let im: Vec<f64> = samples.iter().map(|c| c.im).collect();
    let re = summarize(&re)?;
    let im = summarize(&im)?;
    let n = samples.len() as f64;
    let covariance = samples.iter().map(|c| (c.re - re.mean) * (c.im - im.mean)).sum::<f64>() / (n - 1.0);
    Ok(ComplexSummary { re, im, covariance })
}

/// `sup_x |F_N(x) - G(x)|` for continuous nondecreasing `G`; attained at the sample points.
pub fn ks_statistic<G: Fn(f64) -> f64>(samples: &[f64], cdf: G) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let g = cdf(x);
            ((i + 1) as f64 / n - g).max(g - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Sample mean of `psi_{z,z'}`.
pub fn empirical_char_fn(samples: &[Complex64], z: Complex64, z2: Complex64) -> Complex64 {
    let sum: Complex64 = samples.iter().map(|&w| psi(z, z2, w)).sum();
    sum / samples.len() as f64
}
