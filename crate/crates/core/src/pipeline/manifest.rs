use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PipelineError, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderUsage {
    /// Calls that reached a provider.
    pub requests: u64,
    pub cache_hits: u64,
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub run_id: String,
    pub stage: Stage,
    pub status: StageStatus,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<ArtifactRecord>,
    pub outputs: Vec<ArtifactRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provider: Option<ProviderUsage>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Appends one record; existing lines are never rewritten.
pub fn append(path: &Path, record: &StageRecord) -> Result<(), PipelineError> {
    let mut line = serde_json::to_string(record).expect("record serializes");
    line.push('\n');
    let mut file =
        std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| PipelineError::io(path, e))?;
    file.write_all(line.as_bytes()).map_err(|e| PipelineError::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<StageRecord>, PipelineError> {
    crate::util::read_jsonl(path).map_err(|e| PipelineError::io(path, e))
}
