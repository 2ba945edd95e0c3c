use thiserror::Error;

/// Errors raised by the numerical routines.
///
/// Variants are grouped by [`ErrorKind`] so that front ends can map them onto
/// exit statuses without matching every variant.
#[derive(Debug, Error)]
pub enum MfnError {
    #[error("prime table requested for limit {limit}; need limit >= 2")]
    EmptyPrimeTable { limit: u64 },

    #[error("sum of p^-{exponent} over primes diverges; exponent must exceed 1")]
    DivergentTail { exponent: f64 },

    #[error("value {value} lies outside the angle domain [0, pi]")]
    AngleDomain { value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("evaluation point requires sigma > 1/2, got sigma = {sigma}")]
    HalfPlane { sigma: f64 },

    #[error("{}", sieve_message(*required, *cap))]
    SieveCap { required: f64, cap: u64 },

    #[error("|z| = {abs_z} exceeds the truncation plan's validity radius {max_abs_z}")]
    PlanViolation { abs_z: f64, max_abs_z: f64 },

    #[error(
        "characteristic function is {modulus:.3e} at the grid boundary R = {radius}, above tolerance {tol:.3e}; \
         a radius of about {needed_radius:.1} is needed"
    )]
    InsufficientTruncation {
        radius: f64,
        modulus: f64,
        tol: f64,
        needed_radius: f64,
    },

    #[error("no radius up to the cap {cap} brings the boundary modulus ({modulus:.3e}) below {tol:.3e}")]
    RadiusCap { cap: f64, modulus: f64, tol: f64 },

    #[error("cumulant order {order} is not supported (maximum {max})")]
    UnsupportedOrder { order: usize, max: usize },

    #[error("Hecke index or coefficient overflowed 64 bits")]
    HeckeOverflow,

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),

    #[error("non-finite integrand in {0}")]
    NonFinite(&'static str),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Resource,
    Io,
    Numerical,
}

impl MfnError {
    pub fn kind(&self) -> ErrorKind {
        use MfnError::*;
        match self {
            SieveCap { .. } | RadiusCap { .. } | InsufficientTruncation { .. } => ErrorKind::Resource,
            Io(_) | Parse(_) => ErrorKind::Io,
            NonFinite(_) => ErrorKind::Numerical,
            _ => ErrorKind::Usage,
        }
    }
}

pub type Result<T> = std::result::Result<T, MfnError>;

fn sieve_message(required: f64, cap: u64) -> String {
    if required.is_finite() {
        format!("truncation needs primes up to about {required:.3e}, beyond the sieve cap {cap}")
    } else {
        format!("no prime cutoff below 1e18 meets the tolerance (sieve cap {cap})")
    }
}
