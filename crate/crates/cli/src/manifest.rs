use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unifrac_core::KernelCounters;

/// Provenance record written next to every output file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub inputs: Vec<InputDigest>,
    pub metric: String,
    pub precision: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_size: Option<usize>,
    pub stripes: [usize; 2],
    pub n_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub wall_time_secs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counters: Option<Counters>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Counters {
    pub accumulator_writes: u64,
    pub embedding_reads: u64,
    pub kernel_passes: u64,
}

impl From<KernelCounters> for Counters {
    fn from(c: KernelCounters) -> Self {
        Self {
            accumulator_writes: c.accumulator_writes,
            embedding_reads: c.embedding_reads,
            kernel_passes: c.kernel_passes,
        }
    }
}

impl InputDigest {
    pub fn new(role: &str, path: &Path, bytes: &[u8]) -> Self {
        Self {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
        }
    }
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

impl RunManifest {
    pub fn write_next_to(&self, out: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(manifest_path(out), json + "\n")
    }
}
