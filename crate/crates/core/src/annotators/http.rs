//! Blocking JSON client for an annotator service.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::wire::{
    endpoints, CorrectRequest, CorrectResponse, DescribeRequest, DescribeResponse, DetectRequest,
    DetectResponse, ErrorBody, GripperRequest, GripperResponse, PlanAnnotation, PlanRequest,
};
use super::{Annotator, AnnotatorError};

/// Overrides the configured service URL when set.
pub const BRIDGE_URL_ENV: &str = "ECOT_BRIDGE_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub url: String,
    pub timeout_ms: u64,
    /// Total tries per request, including the first.
    pub attempts: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub backoff_ms: u64,
    /// Requests allowed in flight at once across all threads.
    pub max_in_flight: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8765".into(),
            timeout_ms: 30_000,
            attempts: 3,
            backoff_ms: 200,
            max_in_flight: 8,
        }
    }
}

impl HttpConfig {
    pub fn with_env_override(mut self) -> Self {
        if let Ok(url) = std::env::var(BRIDGE_URL_ENV) {
            if !url.trim().is_empty() {
                self.url = url.trim().to_string();
            }
        }
        self
    }
}

struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    cfg: HttpConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend").field("cfg", &self.cfg).finish()
    }
}

/// Outcome of one attempt: retry or give up with the error.
enum Failure {
    Retry(String),
    Fatal(AnnotatorError),
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Gate::new(cfg.max_in_flight);
        Self { cfg, agent, gate }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.cfg
    }

    fn url(&self, endpoint: &str) -> String {
        format!("{}{endpoint}", self.cfg.url.trim_end_matches('/'))
    }

    fn attempt<Req: Serialize, Resp: DeserializeOwned>(&self, endpoint: &str, body: &Req) -> Result<Resp, Failure> {
        let _permit = self.gate.acquire();
        let mut resp = self
            .agent
            .post(&self.url(endpoint))
            .send_json(body)
            .map_err(|e| Failure::Retry(format!("{endpoint}: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retry(format!("{endpoint}: reading body: {e}")))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| Failure::Fatal(AnnotatorError::Protocol(format!("{endpoint}: {e}")))),
            500..=599 => Err(Failure::Retry(format!("{endpoint}: HTTP {status}: {text}"))),
            _ => {
                let body: ErrorBody = serde_json::from_str(&text).unwrap_or(ErrorBody {
                    error: "http_error".into(),
                    detail: text,
                });
                Err(Failure::Fatal(AnnotatorError::BackendRefusal {
                    status,
                    error: body.error,
                    detail: body.detail,
                }))
            }
        }
    }

    fn backoff(&self, retry: u32) {
        let ms = self.cfg.backoff_ms.saturating_mul(1u64 << retry.min(16));
        std::thread::sleep(Duration::from_millis(ms));
    }

    /// Posts `body`, retrying transport failures and 5xx answers with
    /// exponential backoff. Other non-2xx answers are refusals.
    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, endpoint: &str, body: &Req) -> Result<Resp, AnnotatorError> {
        let attempts = self.cfg.attempts.max(1);
        let mut last = String::new();
        for k in 0..attempts {
            if k > 0 {
                self.backoff(k - 1);
            }
            match self.attempt(endpoint, body) {
                Ok(r) => return Ok(r),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(msg)) => last = msg,
            }
        }
        Err(AnnotatorError::BackendUnavailable(format!("after {attempts} attempts: {last}")))
    }

    pub fn health(&self) -> Result<(), AnnotatorError> {
        let _permit = self.gate.acquire();
        let resp = self
            .agent
            .get(&self.url(endpoints::HEALTH))
            .call()
            .map_err(|e| AnnotatorError::BackendUnavailable(e.to_string()))?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(AnnotatorError::BackendUnavailable(format!("health check: HTTP {}", resp.status())))
        }
    }

    pub fn correct(&self, req: &CorrectRequest) -> Result<CorrectResponse, AnnotatorError> {
        self.post(endpoints::CORRECT, req)
    }
}

impl Annotator for HttpBackend {
    fn describe(&self, req: &DescribeRequest) -> Result<DescribeResponse, AnnotatorError> {
        self.post(endpoints::DESCRIBE, req)
    }

    fn detect(&self, req: &DetectRequest) -> Result<DetectResponse, AnnotatorError> {
        self.post(endpoints::DETECT, req)
    }

    fn detect_gripper(&self, req: &GripperRequest) -> Result<GripperResponse, AnnotatorError> {
        self.post(endpoints::GRIPPER, req)
    }

    /// Plans that fail validation are requested again, up to the attempt
    /// limit, before the error is surfaced.
    fn plan(&self, req: &PlanRequest) -> Result<PlanAnnotation, AnnotatorError> {
        let attempts = self.cfg.attempts.max(1);
        let mut last = None;
        for k in 0..attempts {
            if k > 0 {
                self.backoff(k - 1);
            }
            let plan: PlanAnnotation = self.post(endpoints::PLAN, req)?;
            match plan.validate(req.steps) {
                Ok(()) => return Ok(plan),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}
