use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::annotators::{DEFAULT_BOX_MIN, DEFAULT_TEXT_MIN};
use crate::chain::Layout;
use crate::motion::{DEFAULT_HORIZON, DEFAULT_THRESHOLD};
use crate::projection::RansacConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    /// In-process deterministic annotators.
    #[default]
    Mock,
    /// The annotator service at `bridge_url`.
    Bridge,
}

/// Flat key-value run configuration. Every key has a default, so a config
/// file only needs the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: PathBuf,
    pub output: PathBuf,
    /// Enables resume when set.
    pub checkpoint: Option<PathBuf>,
    pub backend: BackendMode,
    pub seed: u64,
    pub bridge_url: String,
    /// Gripper and detection fixtures for the mock backend.
    pub fixtures: Option<PathBuf>,
    pub layout: Layout,
    pub future_gripper: bool,
    pub move_threshold: f64,
    pub move_horizon: usize,
    pub box_min: f64,
    pub text_min: f64,
    pub ransac_inlier_px: f64,
    pub ransac_iterations: usize,
    pub ransac_confidence: f64,
    pub ransac_min_inliers: usize,
    pub ransac_refit_rounds: usize,
    pub parallelism: usize,
    /// Stop after this many trajectories in this invocation, leaving a
    /// checkpoint to resume from. Does not change the final output.
    pub stop_after: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let r = RansacConfig::default();
        Self {
            dataset: PathBuf::from("dataset.jsonl"),
            output: PathBuf::from("chains.jsonl"),
            checkpoint: None,
            backend: BackendMode::Mock,
            seed: 7,
            bridge_url: crate::annotators::HttpConfig::default().url,
            fixtures: None,
            layout: Layout::Standard,
            future_gripper: false,
            move_threshold: DEFAULT_THRESHOLD,
            move_horizon: DEFAULT_HORIZON,
            box_min: DEFAULT_BOX_MIN,
            text_min: DEFAULT_TEXT_MIN,
            ransac_inlier_px: r.inlier_px,
            ransac_iterations: r.iterations,
            ransac_confidence: r.confidence.unwrap_or(0.99),
            ransac_min_inliers: r.min_inliers,
            ransac_refit_rounds: r.refit_rounds,
            parallelism: 1,
            stop_after: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if !(self.move_threshold.is_finite() && self.move_threshold > 0.0) {
            return bad("move_threshold must be positive");
        }
        if self.move_horizon == 0 {
            return bad("move_horizon must be at least 1");
        }
        for (name, v) in [("box_min", self.box_min), ("text_min", self.text_min)] {
            if !(0.0..1.0).contains(&v) {
                return Err(PipelineError::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1");
        }
        if self.stop_after == Some(0) {
            return bad("stop_after must be at least 1");
        }
        if self.backend == BackendMode::Bridge && self.bridge_url.trim().is_empty() {
            return bad("bridge backend needs bridge_url");
        }
        self.ransac(0)
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// RANSAC settings for one trajectory, seeded from the run seed.
    pub fn ransac(&self, trajectory_seed: u64) -> RansacConfig {
        RansacConfig {
            inlier_px: self.ransac_inlier_px,
            iterations: self.ransac_iterations,
            confidence: Some(self.ransac_confidence),
            min_inliers: self.ransac_min_inliers,
            seed: self.seed ^ trajectory_seed,
            refit_rounds: self.ransac_refit_rounds,
            ..RansacConfig::default()
        }
    }

    /// The settings that shape the output; a checkpoint from a run with
    /// different ones cannot be resumed.
    pub(crate) fn output_settings(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            for k in ["dataset", "output", "checkpoint", "parallelism", "stop_after", "bridge_url"] {
                map.remove(k);
            }
        }
        v
    }
}
