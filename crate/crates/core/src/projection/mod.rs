//! Per-trajectory camera projection fitting.
//!
//! Sparse 2-D gripper detections are paired with the 3-D end-effector
//! positions from proprioception. A 3x4 projection matrix is fitted with
//! RANSAC over normalized DLT hypotheses, refitted on the consensus set, and
//! then used to project every step of the trajectory into the image.

mod dlt;
mod ransac;

use std::collections::BTreeMap;

use nalgebra::{Matrix3x4, Vector4};
use serde::{Deserialize, Serialize};

use crate::data::Trajectory;

pub use dlt::{fit_dlt, DEFAULT_MAX_CONDITION};
pub use ransac::{fit_projection, ProjectionFit, RansacConfig};

/// Minimum number of correspondences: 11 degrees of freedom, two equations each.
pub const MINIMAL_SAMPLE: usize = 6;

/// Depth below which a projected point is treated as lying on the camera plane.
pub const DEPTH_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProjectionError {
    #[error("point projects to depth {0:e}, too close to the camera plane")]
    DegenerateDepth(f64),
    #[error("need at least {MINIMAL_SAMPLE} correspondences, got {0}")]
    MinimalSampleUnavailable(usize),
    #[error("best hypothesis has {best} inliers, fewer than the required {required}")]
    NoConsensus { best: usize, required: usize },
    #[error("degenerate point configuration (condition number {0:e})")]
    DegenerateConfiguration(f64),
    #[error("projection matrix is rank deficient")]
    RankDeficient,
    #[error("invalid correspondence {index}: {detail}")]
    InvalidCorrespondence { index: usize, detail: String },
    #[error("invalid RANSAC configuration: {0}")]
    InvalidConfig(String),
}

/// A 3-D end-effector position paired with its detected pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub point3: [f64; 3],
    pub point2: [f64; 2],
    /// Detector confidence in `[0, 1]`, used to weight the refit.
    pub weight: f64,
}

impl Correspondence {
    pub fn new(point3: [f64; 3], point2: [f64; 2]) -> Self {
        Self {
            point3,
            point2,
            weight: 1.0,
        }
    }

    fn validate(&self, index: usize) -> Result<(), ProjectionError> {
        let finite = self.point3.iter().chain(&self.point2).all(|v| v.is_finite());
        if !finite {
            return Err(ProjectionError::InvalidCorrespondence {
                index,
                detail: "non-finite coordinate".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(ProjectionError::InvalidCorrespondence {
                index,
                detail: format!("weight {} outside [0, 1]", self.weight),
            });
        }
        Ok(())
    }
}

pub(crate) fn validate_correspondences(corrs: &[Correspondence]) -> Result<(), ProjectionError> {
    corrs.iter().enumerate().try_for_each(|(i, c)| c.validate(i))
}

/// Projects `p` through a raw (not necessarily canonical) 3x4 matrix.
pub fn project_raw(m: &Matrix3x4<f64>, p: [f64; 3]) -> Result<[f64; 2], ProjectionError> {
    let h = m * Vector4::new(p[0], p[1], p[2], 1.0);
    if h.z.abs() < DEPTH_EPSILON || !h.z.is_finite() {
        return Err(ProjectionError::DegenerateDepth(h.z));
    }
    Ok([h.x / h.z, h.y / h.z])
}

/// Euclidean pixel distance between the projection of `c.point3` and `c.point2`.
/// Points that cannot be projected get an infinite error.
pub fn reprojection_error(m: &Matrix3x4<f64>, c: &Correspondence) -> f64 {
    match project_raw(m, c.point3) {
        Ok([u, v]) => ((u - c.point2[0]).powi(2) + (v - c.point2[1]).powi(2)).sqrt(),
        Err(_) => f64::INFINITY,
    }
}

/// 3x4 projection matrix in canonical form: unit Frobenius norm, with the
/// last nonzero entry (row-major) positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix(Matrix3x4<f64>);

impl ProjectionMatrix {
    pub fn new(m: Matrix3x4<f64>) -> Result<Self, ProjectionError> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(ProjectionError::RankDeficient);
        }
        let norm = m.norm();
        if norm == 0.0 {
            return Err(ProjectionError::RankDeficient);
        }
        let mut c = m / norm;
        let svals = c.svd(false, false).singular_values;
        let smallest = svals.iter().cloned().fold(f64::INFINITY, f64::min);
        if smallest <= 1e-12 {
            return Err(ProjectionError::RankDeficient);
        }
        let last_nonzero = c.transpose().iter().rev().find(|v| **v != 0.0).copied();
        if matches!(last_nonzero, Some(v) if v < 0.0) {
            c = -c;
        }
        Ok(Self(c))
    }

    pub fn from_rows(rows: [[f64; 4]; 3]) -> Result<Self, ProjectionError> {
        Self::new(Matrix3x4::from_fn(|r, c| rows[r][c]))
    }

    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.0
    }

    pub fn rows(&self) -> [[f64; 4]; 3] {
        let m = &self.0;
        std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
    }

    pub fn project(&self, p: [f64; 3]) -> Result<[f64; 2], ProjectionError> {
        project_raw(&self.0, p)
    }

    pub fn frobenius_distance(&self, other: &ProjectionMatrix) -> f64 {
        (self.0 - other.0).norm()
    }
}

impl Serialize for ProjectionMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ProjectionMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = <[[f64; 4]; 3]>::deserialize(d)?;
        Self::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

/// Projects `p` through `m`; free-function form of [`ProjectionMatrix::project`].
pub fn project(m: &ProjectionMatrix, p: [f64; 3]) -> Result<[f64; 2], ProjectionError> {
    m.project(p)
}

/// A gripper detection in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperDetection {
    pub point: [f64; 2],
    pub conf: f64,
}

/// Result of calibrating one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum TrackOutcome {
    Calibrated(ProjectionFit),
    /// The trajectory keeps `gripper_px = None` on every step.
    Uncalibrated(ProjectionError),
}

impl TrackOutcome {
    pub fn is_calibrated(&self) -> bool {
        matches!(self, TrackOutcome::Calibrated(_))
    }
}

/// Fits a projection from the sparse `detections` (keyed by step index) and
/// fills `gripper_px` on every step.
///
/// Fitting failures do not abort: the trajectory is left uncalibrated.
pub fn annotate_gripper_track(
    traj: &mut Trajectory,
    detections: &BTreeMap<u64, GripperDetection>,
    cfg: &RansacConfig,
) -> TrackOutcome {
    for s in traj.steps.iter_mut() {
        s.gripper_px = None;
    }
    let corrs: Vec<Correspondence> = traj
        .steps
        .iter()
        .filter_map(|s| {
            detections.get(&s.index).map(|d| Correspondence {
                point3: s.state.position(),
                point2: d.point,
                weight: d.conf.clamp(0.0, 1.0),
            })
        })
        .collect();
    let fit = match fit_projection(&corrs, cfg) {
        Ok(fit) => fit,
        Err(e) => return TrackOutcome::Uncalibrated(e),
    };
    let mut track = Vec::with_capacity(traj.steps.len());
    for s in &traj.steps {
        match fit.matrix.project(s.state.position()) {
            Ok(px) => track.push(px),
            Err(e) => return TrackOutcome::Uncalibrated(e),
        }
    }
    for (s, px) in traj.steps.iter_mut().zip(track) {
        s.gripper_px = Some(px);
    }
    TrackOutcome::Calibrated(fit)
}
