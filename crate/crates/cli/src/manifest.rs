use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA: &str = "latqpt.manifest/v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Enough to re-run a command and check that its inputs are unchanged.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub command: String,
    /// The parsed arguments, with input paths made absolute.
    pub args: Value,
    /// The fully resolved configuration the command ran with.
    pub config: Value,
    pub seed: Option<u64>,
    pub version: String,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        args: Value,
        config: Value,
        seed: Option<u64>,
        inputs: Vec<InputDigest>,
        outputs: Vec<String>,
    ) -> Self {
        Self {
            schema: MANIFEST_SCHEMA.to_string(),
            command: command.to_string(),
            args,
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs,
            outputs,
        }
    }
}
