use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use mfunc::cache::write_atomic;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::Cli;

/// Seventeen significant digits, enough to read back the same value.
pub fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self { text: format!("{}\n", header.join(",")) }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(write_atomic(path, self.text.as_bytes())?)
    }
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".sidecar.json");
    PathBuf::from(name)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(write_atomic(path, text.as_bytes())?)
}

/// Writes `<out>.sidecar.json` with the configuration, `details` and timing.
pub fn write_sidecar(out: &Path, cli: &Cli, details: Value, started: Instant) -> Result<()> {
    let doc = json!({
        "tool": "mfunc",
        "version": env!("CARGO_PKG_VERSION"),
        "command": cli.command.name(),
        "config": cli,
        "output": out,
        "details": details,
        "wall_time_s": started.elapsed().as_secs_f64(),
    });
    write_json(&sidecar_path(out), &doc)
}
