//! Prime enumeration and explicit bounds for prime tails.
//!
//! Tables up to `SEGMENT_THRESHOLD` are produced by a plain odd-only sieve of
//! Eratosthenes; larger limits use a segmented sieve so the working set stays
//! bounded. A process-wide table is kept in [`shared_table`] so that repeated
//! truncation plans do not re-sieve.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{MfnError, Result};

const SEGMENT_THRESHOLD: u64 = 10_000_000;
const SEGMENT_LEN: u64 = 1 << 19;
const CACHE_MAGIC: &[u8; 5] = b"EPRM1";

/// All primes up to `limit`, ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrimeTable {
    limit: u64,
    primes: Vec<u64>,
}

impl PrimeTable {
    pub fn limit(&self) -> u64 {
        self.limit
    }

    pub fn primes(&self) -> &[u64] {
        &self.primes
    }

    pub fn len(&self) -> usize {
        self.primes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primes.is_empty()
    }

    /// Primes `<= x`, as a prefix slice of the table.
    pub fn up_to(&self, x: u64) -> &[u64] {
        let end = self.primes.partition_point(|&p| p <= x);
        &self.primes[..end]
    }

    /// Primes in the half-open range `(lo, hi]`.
    pub fn between(&self, lo: u64, hi: u64) -> &[u64] {
        let start = self.primes.partition_point(|&p| p <= lo);
        let end = self.primes.partition_point(|&p| p <= hi);
        &self.primes[start..end.max(start)]
    }

    /// Writes the table as `EPRM1`, the little-endian `u64` limit, then a bitset
    /// over `0..=limit` (bit `n` of byte `n / 8`, least significant first).
    pub fn write_cache<W: Write>(&self, mut out: W) -> Result<()> {
        let mut bits = vec![0u8; (self.limit / 8 + 1) as usize];
        for &p in &self.primes {
            bits[(p / 8) as usize] |= 1 << (p % 8);
        }
        out.write_all(CACHE_MAGIC)?;
        out.write_all(&self.limit.to_le_bytes())?;
        out.write_all(&bits)?;
        Ok(())
    }

    pub fn read_cache<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 5];
        input.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(MfnError::Parse("prime cache: bad magic".into()));
        }
        let mut word = [0u8; 8];
        input.read_exact(&mut word)?;
        let limit = u64::from_le_bytes(word);
        let mut bits = vec![0u8; (limit / 8 + 1) as usize];
        input.read_exact(&mut bits)?;
        let primes = (0..=limit)
            .filter(|&n| bits[(n / 8) as usize] & (1 << (n % 8)) != 0)
            .collect();
        Ok(Self { limit, primes })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_cache(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_cache(std::io::BufReader::new(file))
    }
}

/// Enumerates every prime `<= limit`.
pub fn primes_up_to(limit: u64) -> Result<PrimeTable> {
    if limit < 2 {
        return Err(MfnError::EmptyPrimeTable { limit });
    }
    let primes = if limit <= SEGMENT_THRESHOLD {
        simple_sieve(limit)
    } else {
        segmented_sieve(limit)
    };
    Ok(PrimeTable { limit, primes })
}

fn simple_sieve(limit: u64) -> Vec<u64> {
    // index i stands for 2i + 1
    let n = (limit as usize - 1) / 2 + 1;
    let mut composite = vec![false; n];
    let mut i = 1;
    while (2 * i + 1) * (2 * i + 1) <= limit as usize {
        if !composite[i] {
            let p = 2 * i + 1;
            let mut j = (p * p - 1) / 2;
            while j < n {
                composite[j] = true;
                j += p;
            }
        }
        i += 1;
    }
    let mut primes = Vec::with_capacity(estimate_count(limit));
    primes.push(2);
    primes.extend((1..n).filter(|&i| !composite[i]).map(|i| 2 * i as u64 + 1));
    primes
}

fn segmented_sieve(limit: u64) -> Vec<u64> {
    let root = (limit as f64).sqrt() as u64 + 1;
    let base = simple_sieve(root);
    let mut primes = Vec::with_capacity(estimate_count(limit));
    primes.extend(base.iter().copied().filter(|&p| p <= limit));
    let mut low = root + 1;
    let mut seg = vec![false; SEGMENT_LEN as usize];
    while low <= limit {
        let high = (low + SEGMENT_LEN - 1).min(limit);
        let len = (high - low + 1) as usize;
        seg[..len].iter_mut().for_each(|c| *c = false);
        for &p in &base {
            if p * p > high {
                break;
            }
            let mut start = low.div_ceil(p) * p;
            if start < p * p {
                start = p * p;
            }
            let mut m = start;
            while m <= high {
                seg[(m - low) as usize] = true;
                m += p;
            }
        }
        primes.extend((0..len).filter(|&i| !seg[i]).map(|i| low + i as u64));
        low = high + 1;
    }
    primes
}

fn estimate_count(limit: u64) -> usize {
    let x = limit.max(17) as f64;
    (1.26 * x / x.ln()) as usize + 16
}

static SHARED: OnceLock<Mutex<Option<Arc<PrimeTable>>>> = OnceLock::new();

/// Process-wide table covering at least `limit`; grows on demand.
pub fn shared_table(limit: u64) -> Result<Arc<PrimeTable>> {
    let cell = SHARED.get_or_init(|| Mutex::new(None));
    let mut guard = cell.lock().expect("prime table lock poisoned");
    if let Some(table) = guard.as_ref() {
        if table.limit >= limit {
            return Ok(Arc::clone(table));
        }
    }
    let grown = limit.max(guard.as_ref().map_or(0, |t| t.limit * 2)).max(1 << 16);
    let table = Arc::new(primes_up_to(grown)?);
    *guard = Some(Arc::clone(&table));
    Ok(table)
}

/// Trial-division primality test, adequate for the `u64` range used here.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13] {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    // candidates 6k - 1 and 6k + 1
    let mut d = 17u64;
    while d.saturating_mul(d) <= n {
        if n.is_multiple_of(d) || n.is_multiple_of(d + 2) {
            return false;
        }
        d += 6;
    }
    true
}

/// Smallest prime strictly greater than `x`.
pub fn next_prime_after(x: u64) -> u64 {
    let mut n = x + 1;
    while !is_prime(n) {
        n += 1;
    }
    n
}

const SMALL_PRIMES: [u64; 7] = [2, 3, 5, 7, 11, 13, 17];

/// Upper bound for `sum_{p > cutoff} p^(-exponent)`.
///
/// For `cutoff >= 17` the bound is
/// `cutoff^(1-e) / ((e-1) log cutoff) * (1 + 1.5 e / log cutoff) + p_next^(-e)`,
/// which follows from partial summation with `pi(x) < x/log x (1 + 3/(2 log x))`
/// and `pi(x) > x/log x` (Rosser and Schoenfeld). Below 17 the primes up to 17
/// are summed exactly.
pub fn prime_tail_bound(cutoff: f64, exponent: f64) -> Result<f64> {
    if exponent.is_nan() || exponent <= 1.0 {
        return Err(MfnError::DivergentTail { exponent });
    }
    if cutoff.is_nan() || cutoff < 2.0 {
        return Err(MfnError::Config(format!("tail cutoff must be >= 2, got {cutoff}")));
    }
    if cutoff < 17.0 {
        let head: f64 = SMALL_PRIMES
            .iter()
            .filter(|&&p| p as f64 > cutoff)
            .map(|&p| (p as f64).powf(-exponent))
            .sum();
        return Ok(head + analytic_tail(17.0, exponent));
    }
    Ok(analytic_tail(cutoff, exponent))
}

fn analytic_tail(cutoff: f64, e: f64) -> f64 {
    let log_p = cutoff.ln();
    let integral = (1.0 - e) * log_p;
    let main = (integral.exp() / ((e - 1.0) * log_p)) * (1.0 + 1.5 * e / log_p);
    // p_next > cutoff, so cutoff^-e is a valid stand-in once trial division gets costly
    let next = if cutoff < 1e12 {
        next_prime_after(cutoff.floor() as u64) as f64
    } else {
        cutoff
    };
    main + next.powf(-e)
}

/// Riemann zeta at real `s > 1` by Euler-Maclaurin summation.
pub fn zeta(s: f64) -> Result<f64> {
    if !(s > 1.0) {
        return Err(MfnError::DivergentTail { exponent: s });
    }
    const N: f64 = 12.0;
    // B_2k / (2k)!
    const B: [f64; 6] = [
        1.0 / 12.0,
        -1.0 / 720.0,
        1.0 / 30240.0,
        -1.0 / 1_209_600.0,
        1.0 / 47_900_160.0,
        -691.0 / 1_307_674_368_000.0,
    ];
    let head: f64 = (1..12).map(|n| (n as f64).powf(-s)).sum();
    let mut tail = N.powf(1.0 - s) / (s - 1.0) + 0.5 * N.powf(-s);
    let mut rising = s;
    let mut power = N.powf(-s - 1.0);
    for (k, b) in B.iter().enumerate() {
        tail += b * rising * power;
        let j = 2.0 * k as f64;
        rising *= (s + j + 1.0) * (s + j + 2.0);
        power /= N * N;
    }
    Ok(head + tail)
}
