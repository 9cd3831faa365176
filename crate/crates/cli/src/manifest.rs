//! Run manifests: enough provenance to re-run a command and check that the
//! inputs are the same bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

/// Provenance record written next to every command's primary output.
///
/// Everything in it is deterministic for a fixed invocation except
/// `created_utc`, so manifests are diffable modulo that one line.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub created_utc: String,
    /// Fully resolved configuration after defaults, files, and overrides.
    pub config: serde_json::Value,
    /// SHA-256 of every input file, keyed by role (`data`, `schema`, ...).
    pub inputs: BTreeMap<String, InputDigest>,
    /// Files this run wrote (other than the manifest itself).
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            tool: "mptrial",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            created_utc: OffsetDateTime::now_utc()
                .format(&Rfc3339)
                .unwrap_or_else(|_| String::from("unknown")),
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<()> {
        let digest = sha256_file(path)
            .with_context(|| format!("hashing input '{}'", path.display()))?;
        self.inputs
            .insert(role.to_string(), InputDigest { path: path.to_path_buf(), sha256: digest });
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).context("serializing manifest")?;
        fs::write(path, json + "\n")
            .with_context(|| format!("writing manifest '{}'", path.display()))
    }
}

/// Default manifest location: next to the primary output when there is one,
/// otherwise `mptrial-<command>.manifest.json` in the working directory.
pub fn default_manifest_path(command: &str, out: Option<&Path>) -> PathBuf {
    match out {
        Some(out) => {
            let mut name = out.file_name().map(|s| s.to_os_string()).unwrap_or_default();
            name.push(".manifest.json");
            out.with_file_name(name)
        }
        None => PathBuf::from(format!("mptrial-{command}.manifest.json")),
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let mut hex = String::with_capacity(64);
    for byte in hasher.finalize() {
        hex.push_str(&format!("{byte:02x}"));
    }
    Ok(hex)
}
