//! Fitting a chain profile and cost model to measured speed-ups.
//!
//! With `gen_cost = 1`, every strategy's speed-up over `Naive` depends on a
//! single number: the ratio `x` of a frozen step's time to a full step's
//! time. Over `S` steps
//!
//! ```text
//! sync(N) = S / (R + (S - R) x),   R = ceil(S / N)
//! async   = S / (1 + (S - 1) x)
//! ```
//!
//! so calibration solves for `x` and then picks integer `high` tokens and a
//! continuous `overhead` that realise it exactly. Because both curves are
//! driven by the same `x`, a sync target and an async target are only
//! jointly reachable on one curve; otherwise the point that balances the
//! two errors is returned with `exact = false`.

use serde::{Deserialize, Serialize};

use super::{speedup, ChainProfile, CostModel, SchedulerError, Strategy};
use crate::chain::ACTION_TOKENS;

/// Relative error under which a calibration counts as exact.
const EXACT_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationTargets {
    /// Target speed-up of `SyncFreeze(sync_n)` over `Naive`.
    pub sync: Option<f64>,
    pub sync_n: usize,
    /// Target speed-up of `Async` over `Naive`.
    #[serde(rename = "async")]
    pub async_: Option<f64>,
    /// Generated tokens of a full chain, action included.
    pub total_tokens: u64,
    /// `enc_cost / gen_cost`.
    pub enc_ratio: f64,
    /// Simulation length the targets refer to.
    pub steps: u64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        Self {
            sync: Some(1.24),
            sync_n: 5,
            async_: Some(1.40),
            total_tokens: 350,
            enc_ratio: 0.05,
            steps: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub profile: ChainProfile,
    pub cost: CostModel,
    pub targets: CalibrationTargets,
    pub achieved_sync: Option<f64>,
    pub achieved_async: Option<f64>,
    /// Largest relative deviation from a target.
    pub residual: f64,
    pub exact: bool,
}

/// Steady-state ceiling of any freezing strategy when the whole chain but
/// the action can be frozen and there is no per-pass overhead.
pub fn max_speedup(total_tokens: u64, enc_ratio: f64) -> f64 {
    let t = total_tokens as f64;
    let a = ACTION_TOKENS as f64;
    t / (a + (t - a) * enc_ratio)
}

struct Curves {
    steps: f64,
    regenerations: f64,
}

impl Curves {
    fn sync(&self, x: f64) -> f64 {
        self.steps / (self.regenerations + (self.steps - self.regenerations) * x)
    }

    fn async_(&self, x: f64) -> f64 {
        self.steps / (1.0 + (self.steps - 1.0) * x)
    }
}

fn validate(t: &CalibrationTargets) -> Result<(), SchedulerError> {
    let bad = |m: &str| Err(SchedulerError::InvalidConfig(m.to_string()));
    if t.sync.is_none() && t.async_.is_none() {
        return bad("no calibration target given");
    }
    for v in [t.sync, t.async_].into_iter().flatten() {
        if !(v.is_finite() && v >= 1.0) {
            return bad("speed-up targets must be finite and at least 1");
        }
    }
    if t.total_tokens <= ACTION_TOKENS {
        return bad("total_tokens must exceed the action tokens");
    }
    if !(0.0..1.0).contains(&t.enc_ratio) {
        return bad("enc_ratio must lie in [0, 1)");
    }
    if t.sync_n == 0 || t.steps == 0 {
        return bad("sync_n and steps must be at least 1");
    }
    Ok(())
}

/// Integer high-level tokens and overhead with frozen/full time ratio `x`.
fn realise(x: f64, t: &CalibrationTargets) -> (ChainProfile, CostModel) {
    let total = t.total_tokens as f64;
    let max_high = t.total_tokens - ACTION_TOKENS;
    let keep = 1.0 - t.enc_ratio;
    let high = (((1.0 - x) * total / keep) - 1e-9).ceil().clamp(0.0, max_high as f64) as u64;
    let overhead = if high == 0 || x >= 1.0 {
        0.0
    } else {
        (high as f64 * keep / (1.0 - x) - total).max(0.0)
    };
    (
        ChainProfile::new(high, max_high - high),
        CostModel {
            gen_cost: 1.0,
            enc_cost: t.enc_ratio,
            overhead,
        },
    )
}

fn evaluate(x: f64, t: &CalibrationTargets) -> Result<Calibration, SchedulerError> {
    let (profile, cost) = realise(x, t);
    let achieved_sync = match t.sync {
        Some(_) => Some(speedup(Strategy::SyncFreeze(t.sync_n), &profile, &cost, t.steps)?),
        None => None,
    };
    let achieved_async = match t.async_ {
        Some(_) => Some(speedup(Strategy::Async, &profile, &cost, t.steps)?),
        None => None,
    };
    let residual = [(t.sync, achieved_sync), (t.async_, achieved_async)]
        .into_iter()
        .filter_map(|(want, got)| Some((got? / want? - 1.0).abs()))
        .fold(0.0, f64::max);
    Ok(Calibration {
        profile,
        cost,
        targets: t.clone(),
        achieved_sync,
        achieved_async,
        residual,
        exact: residual <= EXACT_TOLERANCE,
    })
}

/// Finds a profile and cost model reproducing the target speed-ups.
///
/// A target above what any parameters can reach is an error carrying the
/// closest reachable point. Targets that are individually reachable but
/// mutually inconsistent yield the point that balances their errors, with
/// `exact = false`.
pub fn calibrate(targets: &CalibrationTargets) -> Result<Calibration, SchedulerError> {
    validate(targets)?;
    let steps = targets.steps as f64;
    let curves = Curves {
        steps,
        regenerations: (targets.steps as f64 / targets.sync_n as f64).ceil(),
    };
    let total = targets.total_tokens as f64;
    let x_min = 1.0 - (total - ACTION_TOKENS as f64) * (1.0 - targets.enc_ratio) / total;

    let over = [
        targets.sync.filter(|s| *s > curves.sync(x_min) * (1.0 + 1e-12)).map(|s| ("sync", s, curves.sync(x_min))),
        targets.async_.filter(|s| *s > curves.async_(x_min) * (1.0 + 1e-12)).map(|s| ("async", s, curves.async_(x_min))),
    ];
    if let Some((name, want, best)) = over.into_iter().flatten().next() {
        return Err(SchedulerError::InfeasibleTargets {
            detail: format!("{name} target {want} exceeds the reachable maximum {best:.4}"),
            closest: Box::new(evaluate(x_min, targets)?),
        });
    }

    // Every curve decreases in x, so the balancing point is a root of a
    // decreasing function on [x_min, 1].
    let gap = |x: f64| {
        targets.sync.map_or(0.0, |s| curves.sync(x) - s) + targets.async_.map_or(0.0, |s| curves.async_(x) - s)
    };
    let (mut lo, mut hi) = (x_min, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    evaluate(0.5 * (lo + hi), targets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sync_only_matches_the_closed_form() {
        let t = CalibrationTargets {
            async_: None,
            enc_ratio: 0.0,
            ..Default::default()
        };
        let c = calibrate(&t).unwrap();
        assert!(c.exact);
        assert!((c.achieved_sync.unwrap() - 1.24).abs() < 1e-9);
        // Without overhead, 1.24 (L' + H / 5) = H + L' gives H / L' = 0.24 / 0.752.
        let ratio = c.profile.high as f64 / c.profile.regenerated() as f64;
        assert!((ratio - 0.24 / 0.752).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn unit_target_needs_no_frozen_tokens() {
        let t = CalibrationTargets {
            sync: Some(1.0),
            async_: None,
            ..Default::default()
        };
        let c = calibrate(&t).unwrap();
        assert_eq!(c.profile.high, 0);
        assert!((c.achieved_sync.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ten_fold_is_infeasible() {
        let t = CalibrationTargets {
            sync: Some(10.0),
            async_: None,
            ..Default::default()
        };
        match calibrate(&t) {
            Err(SchedulerError::InfeasibleTargets { closest, .. }) => {
                assert_eq!(closest.profile.low, 0);
                assert!(closest.achieved_sync.unwrap() < 5.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn below_one_is_invalid() {
        let t = CalibrationTargets {
            sync: Some(0.9),
            ..Default::default()
        };
        assert!(matches!(calibrate(&t), Err(SchedulerError::InvalidConfig(_))));
    }

    #[test]
    fn consistent_joint_targets_are_exact() {
        // pick x, compute both ratios, and ask for them back
        let curves = Curves { steps: 1000.0, regenerations: 200.0 };
        let x = 0.7;
        let t = CalibrationTargets {
            sync: Some(curves.sync(x)),
            async_: Some(curves.async_(x)),
            ..Default::default()
        };
        let c = calibrate(&t).unwrap();
        assert!(c.exact);
        assert!(c.residual < 1e-9);
    }

    #[test]
    fn ceiling_formula() {
        assert!((max_speedup(350, 0.0) - 50.0).abs() < 1e-12);
    }
}
