use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PipelineError, RunReport};

/// Progress of a run, written after every completed chunk of trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Hash of the dataset bytes and the output-shaping settings.
    pub fingerprint: String,
    /// Trajectories finished, in id order.
    pub completed: usize,
    /// Output length covering exactly those trajectories.
    pub output_bytes: u64,
    pub report: RunReport,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Option<Self>, PipelineError> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(PipelineError::io(path, e)),
        };
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| PipelineError::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Replaces the file atomically so a kill never leaves a torn checkpoint.
    pub fn store(&self, path: &Path) -> Result<(), PipelineError> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        let text = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        fs::write(&tmp, text).map_err(|e| PipelineError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
    }
}
