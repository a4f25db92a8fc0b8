//! Run manifests: the resolved configuration, seeds, and content hashes of
//! every input, written next to each run's outputs so the run can be
//! re-executed exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub verb: String,
    /// Fully resolved configuration and arguments for the verb.
    pub args: serde_json::Value,
    /// Input path → sha256 of its bytes at run time.
    pub inputs: BTreeMap<String, String>,
    /// Output files the run produced, relative to the manifest directory.
    pub outputs: Vec<String>,
}

pub fn file_sha256(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex(&hasher.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Short fingerprint of a JSON-serializable config, for report provenance.
pub fn config_fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    hex(&hasher.finalize())[..16].to_string()
}

impl Manifest {
    pub fn new(verb: &str, args: serde_json::Value) -> Manifest {
        Manifest {
            tool: format!("babelsql {}", env!("CARGO_PKG_VERSION")),
            verb: verb.to_string(),
            args,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> std::io::Result<()> {
        self.inputs.insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    pub fn record_output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(dir.join(MANIFEST_FILE), json + "\n")
    }

    pub fn load(path: &Path) -> Result<Manifest, String> {
        let text =
            std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Verifies that every recorded input still has the same content hash.
    pub fn verify_inputs(&self) -> Result<(), String> {
        for (path, expected) in &self.inputs {
            let actual = file_sha256(Path::new(path))
                .map_err(|e| format!("input {path} unreadable: {e}"))?;
            if actual != *expected {
                return Err(format!(
                    "input {path} changed since the original run (sha256 {actual} != {expected})"
                ));
            }
        }
        Ok(())
    }
}
