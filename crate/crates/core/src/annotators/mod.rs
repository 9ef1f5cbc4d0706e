//! The four model roles used to annotate a trajectory: scene describer,
//! object detector, gripper detector and planner.
//!
//! [`MockBackend`] answers in-process and deterministically; [`HttpBackend`]
//! speaks the same JSON protocol to an external service.

mod http;
mod mock;
pub mod prompts;
mod wire;

use crate::data::BoundingBox;
use crate::projection::GripperDetection;

pub use http::{HttpBackend, HttpConfig, BRIDGE_URL_ENV};
pub use mock::{catalog, FixtureSet, ImageFixture, MockBackend};
pub use wire::{
    endpoints, CorrectRequest, CorrectResponse, DescribeRequest, DescribeResponse, DetectRequest,
    DetectResponse, ErrorBody, GripperRequest, GripperResponse, PlanAnnotation, PlanRequest, PlanStep,
    WireDetection,
};

pub const DEFAULT_BOX_MIN: f64 = 0.3;
pub const DEFAULT_TEXT_MIN: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnnotatorError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend refused request ({status} {error}): {detail}")]
    BackendRefusal {
        status: u16,
        error: String,
        detail: String,
    },
    #[error("malformed plan: {0}")]
    MalformedPlan(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl AnnotatorError {
    pub(crate) fn refusal(status: u16, error: &str, detail: impl Into<String>) -> Self {
        AnnotatorError::BackendRefusal {
            status,
            error: error.to_string(),
            detail: detail.into(),
        }
    }

    /// Body and HTTP status a server should answer with for this error.
    pub fn to_wire(&self) -> (u16, ErrorBody) {
        let (status, error, detail) = match self {
            AnnotatorError::BackendRefusal { status, error, detail } => (*status, error.clone(), detail.clone()),
            AnnotatorError::MalformedPlan(d) => (502, "malformed_plan".into(), d.clone()),
            AnnotatorError::BackendUnavailable(d) => (503, "unavailable".into(), d.clone()),
            AnnotatorError::Protocol(d) => (400, "bad_request".into(), d.clone()),
        };
        (status, ErrorBody { error, detail })
    }
}

/// A backend for all four roles. Implementations must be safe to call from
/// many threads at once.
pub trait Annotator: Send + Sync {
    fn describe(&self, req: &DescribeRequest) -> Result<DescribeResponse, AnnotatorError>;
    fn detect(&self, req: &DetectRequest) -> Result<DetectResponse, AnnotatorError>;
    fn detect_gripper(&self, req: &GripperRequest) -> Result<GripperResponse, AnnotatorError>;
    fn plan(&self, req: &PlanRequest) -> Result<PlanAnnotation, AnnotatorError>;
}

/// Keeps detections whose box and text confidences both strictly exceed
/// the minimums. Order is preserved.
pub fn filter_detections(dets: &[BoundingBox], box_min: f64, text_min: f64) -> Vec<BoundingBox> {
    dets.iter()
        .filter(|d| d.box_conf > box_min && d.text_conf > text_min)
        .cloned()
        .collect()
}

impl GripperResponse {
    pub fn detection(&self) -> Option<GripperDetection> {
        self.point.map(|point| GripperDetection { point, conf: self.conf })
    }
}
