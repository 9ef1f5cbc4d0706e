//! Virtual-time simulator for serving reasoning policies.
//!
//! A forward pass costs `overhead + gen_cost * generated + enc_cost * encoded`.
//! Three strategies are modelled:
//!
//! * `Naive` generates the whole chain and the action every step.
//! * `SyncFreeze(n)` regenerates the high-level prefix every `n` steps and
//!   encodes the previous one in between.
//! * `Async` runs a second instance that regenerates the high-level prefix
//!   back to back while the acting instance encodes the latest finished one.
//!
//! Freeze windows (from human corrections) override all three: the whole
//! chain is encoded and only the action is generated.

mod calibrate;

use serde::{Deserialize, Serialize};

pub use crate::chain::ChainProfile;
pub use calibrate::{calibrate, max_speedup, Calibration, CalibrationTargets};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SchedulerError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("infeasible targets: {detail}")]
    InfeasibleTargets {
        detail: String,
        /// Best reachable parameters.
        closest: Box<Calibration>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Time per generated token.
    pub gen_cost: f64,
    /// Time per encoded token.
    pub enc_cost: f64,
    /// Fixed time per forward pass.
    pub overhead: f64,
}

impl CostModel {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        let ok = [self.gen_cost, self.enc_cost, self.overhead].iter().all(|v| v.is_finite())
            && self.gen_cost > self.enc_cost
            && self.enc_cost >= 0.0
            && self.overhead >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(SchedulerError::InvalidConfig(format!(
                "cost model needs gen_cost > enc_cost >= 0 and overhead >= 0, got {self:?}"
            )))
        }
    }

    pub fn pass(&self, generated: u64, encoded: u64) -> f64 {
        self.overhead + self.gen_cost * generated as f64 + self.enc_cost * encoded as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "n")]
pub enum Strategy {
    Naive,
    SyncFreeze(usize),
    Async,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::Naive => f.write_str("naive"),
            Strategy::SyncFreeze(n) => write!(f, "sync-{n}"),
            Strategy::Async => f.write_str("async"),
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "naive" => Ok(Strategy::Naive),
            "async" => Ok(Strategy::Async),
            other => other
                .strip_prefix("sync-")
                .or_else(|| other.strip_prefix("sync"))
                .and_then(|n| n.parse().ok())
                .map(Strategy::SyncFreeze)
                .ok_or_else(|| format!("unknown strategy `{other}` (naive, sync-N, async)")),
        }
    }
}

/// Freeze windows with last-writer-wins semantics: step `s` is frozen iff
/// the most recent window starting at or before `s` still covers it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeSchedule {
    /// `(start_step, horizon)` pairs.
    windows: Vec<(u64, u64)>,
}

impl FreezeSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a window; a later start supersedes any earlier window from
    /// that step on. Horizon must be at least 1.
    pub fn push(&mut self, start: u64, horizon: u64) -> Result<(), SchedulerError> {
        if horizon == 0 {
            return Err(SchedulerError::InvalidConfig("freeze horizon must be at least 1".into()));
        }
        // Same start: the newer request wins.
        self.windows.retain(|(s, _)| *s != start);
        let at = self.windows.partition_point(|(s, _)| *s < start);
        self.windows.insert(at, (start, horizon));
        Ok(())
    }

    pub fn is_frozen(&self, step: u64) -> bool {
        let k = self.windows.partition_point(|(s, _)| *s <= step);
        k > 0 && {
            let (s, h) = self.windows[k - 1];
            step < s + h
        }
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub start: f64,
    pub end: f64,
    pub generated: u64,
    pub encoded: u64,
    /// The high-level prefix was generated on this step.
    pub regenerated: bool,
    pub frozen: bool,
    /// Async only: index of the high-level pass whose chain was used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chain_version: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassRecord {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTrace {
    pub strategy: Strategy,
    pub steps: Vec<StepRecord>,
    /// Async only: high-level passes of the second instance that finished
    /// before the last step did.
    pub high_level_passes: Vec<PassRecord>,
    pub total_time: f64,
    pub steps_per_second: f64,
    /// Busy time summed over instances.
    pub compute_time: f64,
    pub instances: u32,
}

impl ScheduleTrace {
    pub fn speedup_over(&self, baseline: &ScheduleTrace) -> f64 {
        self.steps_per_second / baseline.steps_per_second
    }

    /// Steps on which only the action was generated.
    pub fn action_only_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.generated == crate::chain::ACTION_TOKENS).count()
    }
}

fn validate_inputs(strategy: Strategy, profile: &ChainProfile, cost: &CostModel, steps: u64) -> Result<(), SchedulerError> {
    cost.validate()?;
    if steps == 0 {
        return Err(SchedulerError::InvalidConfig("steps must be at least 1".into()));
    }
    if let Strategy::SyncFreeze(0) = strategy {
        return Err(SchedulerError::InvalidConfig("SyncFreeze needs N >= 1".into()));
    }
    if profile.action == 0 {
        return Err(SchedulerError::InvalidConfig("profile has no action tokens".into()));
    }
    Ok(())
}

pub fn simulate(strategy: Strategy, profile: &ChainProfile, cost: &CostModel, steps: u64) -> Result<ScheduleTrace, SchedulerError> {
    simulate_with_freezes(strategy, profile, cost, steps, &FreezeSchedule::default())
}

pub fn simulate_with_freezes(
    strategy: Strategy,
    profile: &ChainProfile,
    cost: &CostModel,
    steps: u64,
    freezes: &FreezeSchedule,
) -> Result<ScheduleTrace, SchedulerError> {
    validate_inputs(strategy, profile, cost, steps)?;
    let full = profile.total();
    let low = profile.regenerated();
    let hl_period = cost.pass(profile.high, 0);

    let mut records = Vec::with_capacity(steps as usize);
    let mut clock = 0.0;
    for k in 0..steps {
        let frozen = freezes.is_frozen(k);
        let mut chain_version = None;
        let (generated, encoded, regenerated) = if frozen {
            (profile.action, profile.high + profile.low, false)
        } else {
            match strategy {
                Strategy::Naive => (full, 0, true),
                Strategy::SyncFreeze(n) if k % n as u64 == 0 => (full, 0, true),
                Strategy::SyncFreeze(_) => (low, profile.high, false),
                // Nothing to reuse yet: the acting instance writes the first chain itself.
                Strategy::Async if k == 0 => (full, 0, true),
                Strategy::Async => {
                    if hl_period > 0.0 {
                        let done = (clock / hl_period).floor() as u64;
                        chain_version = done.checked_sub(1);
                    }
                    (low, profile.high, false)
                }
            }
        };
        let start = clock;
        clock += cost.pass(generated, encoded);
        records.push(StepRecord {
            step: k,
            start,
            end: clock,
            generated,
            encoded,
            regenerated,
            frozen,
            chain_version,
        });
    }

    let total_time = clock;
    let mut passes = Vec::new();
    let (compute_time, instances) = match strategy {
        Strategy::Async => {
            if hl_period > 0.0 {
                let count = (total_time / hl_period).floor() as u64;
                passes = (0..count)
                    .map(|j| PassRecord {
                        start: j as f64 * hl_period,
                        end: (j + 1) as f64 * hl_period,
                    })
                    .collect();
            }
            // The second instance is busy for the whole run.
            (2.0 * total_time, 2)
        }
        _ => (total_time, 1),
    };
    Ok(ScheduleTrace {
        strategy,
        steps_per_second: steps as f64 / total_time,
        steps: records,
        high_level_passes: passes,
        total_time,
        compute_time,
        instances,
    })
}

/// Speed-up of `strategy` over `Naive` for the same inputs.
pub fn speedup(strategy: Strategy, profile: &ChainProfile, cost: &CostModel, steps: u64) -> Result<f64, SchedulerError> {
    let base = simulate(Strategy::Naive, profile, cost, steps)?;
    Ok(simulate(strategy, profile, cost, steps)?.speedup_over(&base))
}

/// Steady-state ceiling of any freezing strategy:
/// `(high + low + action) / (low + action)`.
pub fn freeze_bound(profile: &ChainProfile) -> f64 {
    profile.total() as f64 / profile.regenerated() as f64
}
