//! Run manifests: enough metadata to reproduce a run bit-exactly (config
//! hash plus seed) and to find its outputs.

use std::path::PathBuf;

use grow_core::trainer::{config_hash, TrainConfig};

#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub config_hash: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub revision: String,
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(config: &TrainConfig, seed: u64, started: u64, outputs: &[PathBuf]) -> Self {
        RunManifest {
            schema: "grow.manifest.v1".into(),
            config_hash: config_hash(config),
            seed,
            started_unix: started,
            finished_unix: unix_now(),
            outputs: outputs.to_vec(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            revision: option_env!("GROW_BUILD_REV").unwrap_or("unknown").into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}
