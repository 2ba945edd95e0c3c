//! Probability measures for the Satake angles on `[0, pi]`.
//!
//! Three kinds are supported: the Sato–Tate law `(2/pi) sin^2(theta) dtheta`, the
//! `p`-adic Plancherel law, which reweights Sato–Tate by
//! `(1 + 1/p) / (1 - 2 cos(2 theta)/p + 1/p^2)`, and user-tabulated densities.
//!
//! Quadrature uses the midpoint rule in `theta`. Every integrand met in this
//! crate is a smooth function of `cos(theta)`, i.e. an even `2 pi`-periodic
//! function, for which the `n`-point midpoint rule integrates `cos(k theta)`
//! exactly for `k < 2n` and converges geometrically otherwise.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{MfnError, Result};

/// Number of uniform samples stored for a tabulated density.
pub const TABLE_LEN: usize = 4096;

/// Density sampled on `TABLE_LEN` equispaced points of `[0, pi]` (both ends
/// included) and linearly interpolated in between; normalised to unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedDensity {
    values: Vec<f64>,
    max: f64,
}

impl TabulatedDensity {
    /// Resamples `(theta, density)` pairs onto the internal grid.
    pub fn from_points(points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(MfnError::Parse("tabulated density needs at least two rows".into()));
        }
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(theta, dens) in &pts {
            if !(0.0..=PI + 1e-12).contains(&theta) {
                return Err(MfnError::AngleDomain { value: theta });
            }
            if !(dens.is_finite() && dens >= 0.0) {
                return Err(MfnError::Parse(format!("density must be finite and >= 0, got {dens}")));
            }
        }
        let step = PI / (TABLE_LEN - 1) as f64;
        let mut values = Vec::with_capacity(TABLE_LEN);
        let mut j = 0;
        for k in 0..TABLE_LEN {
            let theta = k as f64 * step;
            while j + 2 < pts.len() && pts[j + 1].0 < theta {
                j += 1;
            }
            let (t0, d0) = pts[j];
            let (t1, d1) = pts[j + 1];
            let v = if theta <= t0 {
                d0
            } else if theta >= t1 {
                d1
            } else {
                d0 + (d1 - d0) * (theta - t0) / (t1 - t0)
            };
            values.push(v);
        }
        Self::from_grid(values)
    }

    fn from_grid(mut values: Vec<f64>) -> Result<Self> {
        let step = PI / (TABLE_LEN - 1) as f64;
        // the trapezoid rule is exact for the piecewise-linear interpolant
        let mass = step * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[TABLE_LEN - 1]));
        if !(mass > 0.0) {
            return Err(MfnError::Parse("tabulated density has zero mass".into()));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        let max = values.iter().cloned().fold(0.0, f64::max);
        Ok(Self { values, max })
    }

    /// Reads CSV rows `theta,density`; a non-numeric first row is taken as a header.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| MfnError::Parse(format!("{}: {e}", path.display())))?;
        let mut points = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| MfnError::Parse(format!("{}: {e}", path.display())))?;
            if record.len() < 2 {
                return Err(MfnError::Parse(format!("{}: row {} needs two columns", path.display(), i + 1)));
            }
            match (record[0].parse::<f64>(), record[1].parse::<f64>()) {
                (Ok(t), Ok(d)) => points.push((t, d)),
                _ if i == 0 => continue,
                _ => {
                    return Err(MfnError::Parse(format!("{}: row {} is not numeric", path.display(), i + 1)));
                }
            }
        }
        Self::from_points(&points)
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let x = theta / PI * (TABLE_LEN - 1) as f64;
        let k = (x.floor() as usize).min(TABLE_LEN - 2);
        let frac = x - k as f64;
        self.values[k] * (1.0 - frac) + self.values[k + 1] * frac
    }

    pub fn max(&self) -> f64 {
        self.max
    }
}

/// A probability measure on `[0, pi]`.
#[derive(Debug, Clone, PartialEq)]
pub enum AngleMeasure {
    SatoTate,
    Plancherel { p: u64 },
    Tabulated(Arc<TabulatedDensity>),
}

/// Nodes and positive weights on `(0, pi)` approximating a measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub order: usize,
}

impl Quadrature {
    pub fn integrate<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&t, &w)| w * g(t)).sum()
    }

    pub fn integrate_complex<F: Fn(f64) -> Complex64>(&self, g: F) -> Complex64 {
        self.nodes.iter().zip(&self.weights).map(|(&t, &w)| g(t) * w).sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Midpoint nodes `(k + 1/2) pi / n`.
pub fn midpoint_nodes(n: usize) -> Vec<f64> {
    (0..n).map(|k| (k as f64 + 0.5) * PI / n as f64).collect()
}

impl AngleMeasure {
    pub fn plancherel(p: u64) -> Self {
        AngleMeasure::Plancherel { p }
    }

    pub fn tabulated(density: TabulatedDensity) -> Self {
        AngleMeasure::Tabulated(Arc::new(density))
    }

    fn density_unchecked(&self, theta: f64) -> f64 {
        let s = theta.sin();
        match self {
            AngleMeasure::SatoTate => 2.0 / PI * s * s,
            AngleMeasure::Plancherel { p } => {
                let inv = 1.0 / *p as f64;
                let ratio = (1.0 + inv) / (1.0 - 2.0 * (2.0 * theta).cos() * inv + inv * inv);
                2.0 / PI * s * s * ratio
            }
            AngleMeasure::Tabulated(t) => t.eval(theta),
        }
    }

    /// Density with respect to `dtheta`.
    pub fn pdf(&self, theta: f64) -> Result<f64> {
        if !(0.0..=PI).contains(&theta) {
            return Err(MfnError::AngleDomain { value: theta });
        }
        Ok(self.density_unchecked(theta))
    }

    pub fn quadrature_for(&self, order: usize) -> Result<Quadrature> {
        if order < 4 {
            return Err(MfnError::Config(format!("quadrature order must be >= 4, got {order}")));
        }
        let nodes = midpoint_nodes(order);
        let h = PI / order as f64;
        let mut weights: Vec<f64> = nodes.iter().map(|&t| h * self.density_unchecked(t)).collect();
        if let AngleMeasure::Tabulated(_) = self {
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
        }
        Ok(Quadrature { nodes, weights, order })
    }

    /// `E[g(Theta)]` under this measure.
    pub fn expect<F: Fn(f64) -> Complex64>(&self, g: F, order: usize) -> Result<Complex64> {
        Ok(self.quadrature_for(order)?.integrate_complex(g))
    }

    pub fn expect_real<F: Fn(f64) -> f64>(&self, g: F, order: usize) -> Result<f64> {
        Ok(self.quadrature_for(order)?.integrate(g))
    }

    /// Exact draw by rejection.
    ///
    /// Sato–Tate is proposed uniformly and accepted with probability
    /// `sin^2(theta)`; Plancherel proposes from Sato–Tate and accepts with
    /// `(1 - 1/p)^2 / (1 - 2 cos(2 theta)/p + 1/p^2)`, the density ratio divided by
    /// its maximum `(1 + 1/p)/(1 - 1/p)^2`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            AngleMeasure::SatoTate => sample_sato_tate(rng),
            AngleMeasure::Plancherel { p } => {
                let inv = 1.0 / *p as f64;
                let floor = (1.0 - inv) * (1.0 - inv);
                loop {
                    let theta = sample_sato_tate(rng);
                    let accept = floor / (1.0 - 2.0 * (2.0 * theta).cos() * inv + inv * inv);
                    if rng.gen::<f64>() < accept {
                        return theta;
                    }
                }
            }
            AngleMeasure::Tabulated(t) => loop {
                let theta = PI * rng.gen::<f64>();
                if rng.gen::<f64>() * t.max() < t.eval(theta) {
                    return theta;
                }
            },
        }
    }

    pub fn is_sato_tate(&self) -> bool {
        matches!(self, AngleMeasure::SatoTate)
    }

    /// True when `E[U_m(cos Theta)] = 0` for every odd `m`, which holds for
    /// Sato–Tate and Plancherel because their densities are symmetric about `pi/2`.
    pub fn is_odd_moment_free(&self) -> bool {
        !matches!(self, AngleMeasure::Tabulated(_))
    }
}

fn sample_sato_tate<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let theta = PI * rng.gen::<f64>();
        let s = theta.sin();
        if rng.gen::<f64>() < s * s {
            return theta;
        }
    }
}

/// Assignment of an angle measure to every prime.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureFamily {
    SatoTate,
    Plancherel,
    /// The same tabulated measure at every prime; `label` records its origin.
    Custom { measure: AngleMeasure, label: String },
}

impl MeasureFamily {
    pub fn at(&self, p: u64) -> AngleMeasure {
        match self {
            MeasureFamily::SatoTate => AngleMeasure::SatoTate,
            MeasureFamily::Plancherel => AngleMeasure::Plancherel { p },
            MeasureFamily::Custom { measure, .. } => measure.clone(),
        }
    }

    /// Upper bound for `|E[cos Theta_p]|` over all primes.
    pub fn mean_cos_bound(&self) -> f64 {
        match self {
            MeasureFamily::SatoTate | MeasureFamily::Plancherel => 0.0,
            MeasureFamily::Custom { measure, .. } => measure
                .expect_real(f64::cos, 1024)
                .map(f64::abs)
                .unwrap_or(1.0),
        }
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let density = TabulatedDensity::from_csv(path)?;
        Ok(MeasureFamily::Custom {
            measure: AngleMeasure::tabulated(density),
            label: format!("file:{}", path.display()),
        })
    }
}

impl fmt::Display for MeasureFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasureFamily::SatoTate => f.write_str("sato-tate"),
            MeasureFamily::Plancherel => f.write_str("plancherel"),
            MeasureFamily::Custom { label, .. } => f.write_str(label),
        }
    }
}

impl FromStr for MeasureFamily {
    type Err = MfnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sato-tate" => Ok(MeasureFamily::SatoTate),
            "plancherel" => Ok(MeasureFamily::Plancherel),
            other => match other.strip_prefix("file:") {
                Some(path) => MeasureFamily::from_csv(Path::new(path)),
                None => Err(MfnError::Config(format!(
                    "unknown measure '{other}' (expected sato-tate, plancherel or file:<path>)"
                ))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hecke::chebyshev_u;
    use crate::rng::StreamSeed;
    use approx::assert_abs_diff_eq;

    fn measures() -> Vec<AngleMeasure> {
        let table: Vec<(f64, f64)> = (0..200)
            .map(|k| {
                let t = PI * k as f64 / 199.0;
                (t, 1.0 + 0.5 * t.cos())
            })
            .collect();
        vec![
            AngleMeasure::SatoTate,
            AngleMeasure::plancherel(2),
            AngleMeasure::plancherel(3),
            AngleMeasure::plancherel(101),
            AngleMeasure::tabulated(TabulatedDensity::from_points(&table).unwrap()),
        ]
    }

    #[test]
    fn pdf_values() {
        assert_abs_diff_eq!(AngleMeasure::SatoTate.pdf(PI / 2.0).unwrap(), 2.0 / PI, epsilon = 1e-15);
        assert_eq!(AngleMeasure::SatoTate.pdf(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(AngleMeasure::plancherel(2).pdf(PI / 2.0).unwrap(), 4.0 / (3.0 * PI), epsilon = 1e-15);
        assert!(AngleMeasure::SatoTate.pdf(-0.1).is_err());
        assert!(AngleMeasure::SatoTate.pdf(PI + 1e-9).is_err());
    }

    #[test]
    fn pdf_nonnegative_and_unit_mass() {
        for m in measures() {
            for k in 0..10_000 {
                assert!(m.pdf(PI * k as f64 / 9_999.0).unwrap() >= 0.0);
            }
            let q = m.quadrature_for(64).unwrap();
            assert_abs_diff_eq!(q.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert!(q.nodes.windows(2).all(|w| w[0] < w[1]));
            assert!(q.nodes[0] > 0.0 && q.nodes[63] < PI);
            assert!(q.weights.iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn plancherel_approaches_sato_tate() {
        let st = AngleMeasure::SatoTate;
        let pl = AngleMeasure::plancherel(1_000_000);
        let sup = (0..=1000)
            .map(|k| PI * k as f64 / 1000.0)
            .map(|t| (st.pdf(t).unwrap() - pl.pdf(t).unwrap()).abs())
            .fold(0.0, f64::max);
        assert!(sup < 1e-4, "{sup}");
    }

    #[test]
    fn quadrature_order_checked() {
        assert!(AngleMeasure::SatoTate.quadrature_for(3).is_err());
        assert!(AngleMeasure::SatoTate.quadrature_for(4).is_ok());
    }

    #[test]
    fn second_moments_of_cosine() {
        let q = AngleMeasure::SatoTate.quadrature_for(64).unwrap();
        assert_abs_diff_eq!(q.integrate(|_| 1.0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.integrate(|t| t.cos().powi(2)), 0.25, epsilon = 1e-12);
        let q3 = AngleMeasure::plancherel(3).quadrature_for(64).unwrap();
        assert_abs_diff_eq!(q3.integrate(|t| t.cos().powi(2)), 1.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn polynomial_exactness_up_to_half_order() {
        // E[cos^(2k)] under Sato–Tate is the Catalan number C_k / 4^k
        let q = AngleMeasure::SatoTate.quadrature_for(64).unwrap();
        let mut catalan = 1.0;
        for k in 0..=16 {
            let expected = catalan / 4f64.powi(k);
            assert_abs_diff_eq!(q.integrate(|t| t.cos().powi(2 * k)), expected, epsilon = 1e-12);
            catalan = catalan * 2.0 * (2.0 * k as f64 + 1.0) / (k as f64 + 2.0);
        }
    }

    #[test]
    fn chebyshev_expectations() {
        let st = AngleMeasure::SatoTate;
        for m in 1..=20 {
            let e = st.expect_real(|t| chebyshev_u(m, t.cos()), 64).unwrap();
            assert_abs_diff_eq!(e, 0.0, epsilon = 1e-10);
        }
        for p in [2u64, 3, 5] {
            let pl = AngleMeasure::plancherel(p);
            assert_abs_diff_eq!(pl.expect_real(|t| chebyshev_u(3, t.cos()), 64).unwrap(), 0.0, epsilon = 1e-10);
            let e2 = pl.expect_real(|t| chebyshev_u(2, t.cos()), 64).unwrap();
            assert_abs_diff_eq!(e2, 1.0 / p as f64, epsilon = 1e-10);
            for m in (1..=15).step_by(2) {
                assert_abs_diff_eq!(pl.expect_real(|t| chebyshev_u(m, t.cos()), 64).unwrap(), 0.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn plancherel_even_chebyshev_moments_are_powers_of_p() {
        // numerical check of E[U_m(cos Theta)] = p^(-m/2) for even m
        for p in [2u64, 3, 5, 7, 101] {
            let pl = AngleMeasure::plancherel(p);
            for m in (2..=16).step_by(2) {
                let e = pl.expect_real(|t| chebyshev_u(m, t.cos()), 128).unwrap();
                assert_abs_diff_eq!(e, (p as f64).powf(-(m as f64) / 2.0), epsilon = 1e-12);
            }
        }
    }

    fn draws(m: &AngleMeasure, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = StreamSeed::new(seed, 0).substream(0);
        (0..n).map(|_| m.sample(&mut rng)).collect()
    }

    fn mean_and_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn sato_tate_sample_moments() {
        let thetas = draws(&AngleMeasure::SatoTate, 1_000_000, 11);
        let (m, se) = mean_and_se(&thetas.iter().map(|t| t.cos().powi(2)).collect::<Vec<_>>());
        assert!((m - 0.25).abs() < 5.0 * se, "{m} +- {se}");
        let (m, se) = mean_and_se(&thetas.iter().map(|t| 2.0 * t.cos()).collect::<Vec<_>>());
        assert!(m.abs() < 5.0 * se, "{m} +- {se}");
    }

    #[test]
    fn plancherel_sample_moment() {
        let thetas = draws(&AngleMeasure::plancherel(2), 1_000_000, 12);
        let (m, se) = mean_and_se(&thetas.iter().map(|t| chebyshev_u(2, t.cos())).collect::<Vec<_>>());
        assert!((m - 0.5).abs() < 5.0 * se, "{m} +- {se}");
    }

    #[test]
    fn samplers_match_quadrature_cdf() {
        for m in measures() {
            let mut thetas = draws(&m, 1_000_000, 99);
            thetas.sort_by(f64::total_cmp);
            // CDF from a fine midpoint rule on [0, theta]
            let grid = 4000;
            let mut cdf = vec![0.0; grid + 1];
            for k in 0..grid {
                let a = PI * k as f64 / grid as f64;
                let b = PI * (k + 1) as f64 / grid as f64;
                let mid = |j: usize| a + (b - a) * (j as f64 + 0.5) / 8.0;
                let piece: f64 = (0..8).map(|j| m.pdf(mid(j)).unwrap()).sum::<f64>() * (b - a) / 8.0;
                cdf[k + 1] = cdf[k] + piece;
            }
            let total = cdf[grid];
            let cdf_at = |t: f64| {
                let x = t / PI * grid as f64;
                let k = (x.floor() as usize).min(grid - 1);
                (cdf[k] + (cdf[k + 1] - cdf[k]) * (x - k as f64)) / total
            };
            let n = thetas.len() as f64;
            let ks = thetas
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    let g = cdf_at(t);
                    (g - i as f64 / n).abs().max(((i + 1) as f64 / n - g).abs())
                })
                .fold(0.0, f64::max);
            assert!(ks <= 0.002, "{m:?}: KS {ks}");
        }
    }

    #[test]
    fn family_parsing() {
        assert_eq!("sato-tate".parse::<MeasureFamily>().unwrap(), MeasureFamily::SatoTate);
        assert_eq!("plancherel".parse::<MeasureFamily>().unwrap(), MeasureFamily::Plancherel);
        assert!("gauss".parse::<MeasureFamily>().is_err());
        assert_eq!(MeasureFamily::Plancherel.at(7), AngleMeasure::plancherel(7));
        assert_eq!(MeasureFamily::SatoTate.mean_cos_bound(), 0.0);
    }

    #[test]
    fn tabulated_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.csv");
        let mut body = String::from("theta,density\n");
        for k in 0..=512 {
            let t = PI * k as f64 / 512.0;
            body.push_str(&format!("{t},{}\n", 2.0 / PI * t.sin().powi(2)));
        }
        std::fs::write(&path, body).unwrap();
        let fam: MeasureFamily = format!("file:{}", path.display()).parse().unwrap();
        let m = fam.at(5);
        let q = m.quadrature_for(256).unwrap();
        assert_abs_diff_eq!(q.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.integrate(|t| t.cos().powi(2)), 0.25, epsilon = 1e-4);
        assert!(fam.mean_cos_bound() < 1e-6);
        assert_eq!(fam.to_string(), format!("file:{}", path.display()));
    }
}
