//! Stage manifests: what went in, what came out, and when.
//!
//! A stage is skipped when its manifest records the same input hashes and
//! parameters as the current run and every recorded output still has its
//! recorded hash. `created_at` is the only field that varies between
//! otherwise identical runs.

use crate::hashing::sha256_file;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    /// Input name to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub params: serde_json::Value,
    /// Output path relative to the workdir, to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub summary: serde_json::Value,
    pub created_at: String,
}

impl Manifest {
    pub fn load(path: &Path) -> Option<Manifest> {
        let text = std::fs::read_to_string(path).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)
    }

    /// True when inputs, params and version agree and all outputs are intact.
    pub fn matches(
        &self,
        workdir: &Path,
        inputs: &BTreeMap<String, String>,
        params: &serde_json::Value,
    ) -> bool {
        self.version == env!("CARGO_PKG_VERSION")
            && &self.inputs == inputs
            && &self.params == params
            && self
                .outputs
                .iter()
                .all(|(rel, hash)| sha256_file(&workdir.join(rel)).is_ok_and(|h| &h == hash))
    }
}
