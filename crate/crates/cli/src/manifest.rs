//! Run manifests: everything needed to rerun a command bit-for-bit.
//!
//! The output location and thread count are deliberately left out. Neither
//! changes any number, and leaving them out keeps a replayed manifest
//! byte-identical to the original.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sharedbuf::model::SystemSpec;
use sharedbuf::rng::NORMAL_SAMPLER;

use crate::CliError;

pub const TOOL: &str = "sharedbuf";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Path as given on the command line; the instance itself is embedded.
    pub instance_path: String,
    pub instance: SystemSpec,
    pub seed: u64,
    pub rng: String,
    /// Command parameters after defaults and prerequisites were resolved.
    pub params: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, instance_path: &str, instance: &SystemSpec, seed: u64, params: serde_json::Value) -> Self {
        Self {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            instance_path: instance_path.into(),
            instance: instance.clone(),
            seed,
            rng: format!("ChaCha8 keyed by seed + replication; normals by {NORMAL_SAMPLER}"),
            params,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read manifest {}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text).map_err(sharedbuf::Error::from)?;
        if m.tool != TOOL {
            return Err(CliError::Input(format!("{} is not a {TOOL} manifest", path.display())));
        }
        if m.version != env!("CARGO_PKG_VERSION") {
            return Err(CliError::Input(format!(
                "manifest written by version {}, this is {}",
                m.version,
                env!("CARGO_PKG_VERSION")
            )));
        }
        Ok(m)
    }
}
