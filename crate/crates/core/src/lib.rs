//! Densities of random Euler products.
//!
//! `log L(s, Theta) = -sum_p log((1 - e^{i theta_p} p^-s)(1 - e^{-i theta_p} p^-s))`
//! with independent angles `theta_p` on `[0, pi]`. The crate evaluates its
//! characteristic function prime by prime, inverts it to a density, and checks the
//! result against Monte Carlo draws, exact cumulants and discrepancy bounds.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cache;
pub mod charfn;
pub mod discrepancy;
pub mod error;
pub mod hecke;
pub mod inversion;
pub mod measures;
pub mod moments;
pub mod primes;
pub mod rng;
pub mod sampling;
pub mod series;

pub use charfn::{char_fn, CharFnEvaluator, CharFnGrid, EvalPoint, Regime, TruncationPlan};
pub use error::{ErrorKind, MfnError, Result};
pub use inversion::{density, DensityGrid, ErrorBudget, InversionOptions};
pub use measures::{AngleMeasure, MeasureFamily};
pub use rng::StreamSeed;
