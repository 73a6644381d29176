use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::{read_json, write_json};
use crate::training::TrainConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one command invocation. Holds no timestamps so reruns compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: Option<TrainConfig>,
    pub dataset_fingerprint: Option<String>,
    /// Input files as given on the command line.
    pub inputs: BTreeMap<String, String>,
    /// Emitted files relative to the output directory, by role.
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config: None,
            dataset_fingerprint: None,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) {
        self.inputs.insert(role.to_string(), path.display().to_string());
    }

    pub fn artifact(&mut self, role: &str, file: &str) {
        self.artifacts.insert(role.to_string(), file.to_string());
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        read_json(&dir.join(MANIFEST_FILE))
    }
}
