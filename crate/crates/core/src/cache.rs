//! On-disk cache of evaluators, which hold the per-prime local logarithms at every
//! quadrature node.
//!
//! File layout: the magic line, one line of key JSON, one line of payload JSON, and
//! a final line with the SHA-256 of everything before it. A file is used only if
//! the magic, the checksum and the full key all match.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::charfn::{CharFnEvaluator, QuadOptions, TruncationPlan};
use crate::error::{MfnError, Result};
use crate::measures::MeasureFamily;

const MAGIC: &str = "MFNC1";

/// Everything an evaluator depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheKey {
    pub version: String,
    pub measure: String,
    /// Digest of the measure's quadrature weights; distinguishes tabulated inputs.
    pub measure_digest: String,
    pub plan: TruncationPlan,
    pub quad: QuadOptions,
}

impl CacheKey {
    pub fn new(family: &MeasureFamily, plan: &TruncationPlan, quad: &QuadOptions) -> Result<Self> {
        let mut h = Sha256::new();
        // primes 2 and 3 suffice to separate families; custom ones are constant in p
        for p in [2u64, 3] {
            for w in family.at(p).quadrature_for(256)?.weights {
                h.update(w.to_le_bytes());
            }
        }
        Ok(Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            measure: family.to_string(),
            measure_digest: hex(&h.finalize()),
            plan: plan.clone(),
            quad: *quad,
        })
    }

    fn json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| MfnError::Parse(e.to_string()))
    }

    pub fn file_name(&self) -> Result<String> {
        let digest = Sha256::digest(self.json()?.as_bytes());
        Ok(format!("charfn-{}.cache", &hex(&digest)[..24]))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// What happened on lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CacheStatus {
    Hit,
    Miss,
    /// A file existed under the key's name but was unreadable or for another key.
    Rebuilt,
}

pub fn encode(key: &CacheKey, ev: &CharFnEvaluator) -> Result<String> {
    let payload = serde_json::to_string(ev).map_err(|e| MfnError::Parse(e.to_string()))?;
    let body = format!("{MAGIC}\n{}\n{payload}\n", key.json()?);
    let sum = hex(&Sha256::digest(body.as_bytes()));
    Ok(format!("{body}{sum}\n"))
}

pub fn decode(text: &str, key: &CacheKey) -> Result<CharFnEvaluator> {
    let corrupt = |why: &str| MfnError::Parse(format!("cache file rejected: {why}"));
    let body_end = text.trim_end_matches('\n').rfind('\n').ok_or_else(|| corrupt("truncated"))? + 1;
    let (body, sum) = text.split_at(body_end);
    if hex(&Sha256::digest(body.as_bytes())) != sum.trim_end() {
        return Err(corrupt("checksum mismatch"));
    }
    let mut lines = body.lines();
    if lines.next() != Some(MAGIC) {
        return Err(corrupt("bad magic"));
    }
    let stored: CacheKey = serde_json::from_str(lines.next().ok_or_else(|| corrupt("missing key"))?)
        .map_err(|e| corrupt(&e.to_string()))?;
    if &stored != key {
        return Err(corrupt("key mismatch"));
    }
    serde_json::from_str(lines.next().ok_or_else(|| corrupt("missing payload"))?).map_err(|e| corrupt(&e.to_string()))
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp: PathBuf = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        MfnError::Io(e)
    })
}

/// Loads the evaluator for `(family, plan, quad)` from `dir`, building and storing it
/// when absent or unusable.
pub fn load_or_build(dir: &Path, family: &MeasureFamily, plan: &TruncationPlan, quad: &QuadOptions) -> Result<(CharFnEvaluator, CacheStatus)> {
    let key = CacheKey::new(family, plan, quad)?;
    let path = dir.join(key.file_name()?);
    let status = match fs::read_to_string(&path) {
        Ok(text) => match decode(&text, &key) {
            Ok(ev) => return Ok((ev, CacheStatus::Hit)),
            Err(e) => {
                log::warn!("{}: {e}; rebuilding", path.display());
                CacheStatus::Rebuilt
            }
        },
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => CacheStatus::Miss,
        Err(e) => {
            log::warn!("{}: {e}; rebuilding", path.display());
            CacheStatus::Rebuilt
        }
    };
    let ev = CharFnEvaluator::with_options(family, plan, quad)?;
    write_atomic(&path, encode(&key, &ev)?.as_bytes())?;
    Ok((ev, status))
}
