//! Run manifests: every CLI output sits beside a JSON manifest recording the
//! exact command line, resolved configuration, input content hashes, tool
//! version, and any warnings raised during generation.

use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command_line: Vec<String>,
    pub created_utc: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn new(config: serde_json::Value) -> Self {
        Self {
            tool: "semtask".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command_line: std::env::args().collect(),
            created_utc: chrono::Utc::now().to_rfc3339(),
            seed: None,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn record_input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(InputHash {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Write to `<output>.manifest.json` and return that path.
    pub fn write_beside(&self, output: &Path) -> io::Result<PathBuf> {
        let mut name = output
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".to_string());
        name.push_str(".manifest.json");
        let path = output.with_file_name(name);
        std::fs::write(&path, serde_json::to_string_pretty(self).expect("manifest serializes"))?;
        Ok(path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
