use nalgebra::Matrix3x4;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dlt::{fit_dlt, is_coplanar, DEFAULT_MAX_CONDITION};
use super::{
    reprojection_error, validate_correspondences, Correspondence, ProjectionError,
    ProjectionMatrix, MINIMAL_SAMPLE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    /// Reprojection error (pixels) at or below which a point is an inlier.
    pub inlier_px: f64,
    /// Upper bound on scored hypotheses.
    pub iterations: usize,
    /// Stop early once this probability of having drawn an all-inlier
    /// sample is reached. `None` always runs `iterations` hypotheses.
    pub confidence: Option<f64>,
    pub min_inliers: usize,
    pub seed: u64,
    pub max_condition: f64,
    /// Consensus-set refits after the hypothesis search.
    pub refit_rounds: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            inlier_px: 5.0,
            iterations: 1000,
            confidence: Some(0.99),
            min_inliers: 8,
            seed: 0,
            max_condition: DEFAULT_MAX_CONDITION,
            refit_rounds: 5,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), ProjectionError> {
        let bad = |msg: &str| Err(ProjectionError::InvalidConfig(msg.to_string()));
        if !(self.inlier_px.is_finite() && self.inlier_px > 0.0) {
            return bad("inlier_px must be positive");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if let Some(c) = self.confidence {
            if !(c > 0.0 && c < 1.0) {
                return bad("confidence must lie in (0, 1)");
            }
        }
        if !(self.max_condition > 1.0) {
            return bad("max_condition must exceed 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionFit {
    pub matrix: ProjectionMatrix,
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
    /// Mean reprojection error over the final inliers.
    pub mean_inlier_error: f64,
    /// Mean error of the winning minimal-sample hypothesis over its own inliers.
    pub hypothesis_error: f64,
    /// Mean error of the final matrix over the hypothesis' inliers.
    pub refit_error_on_hypothesis_inliers: f64,
    pub iterations: usize,
    pub degenerate_samples: usize,
}

#[derive(Clone)]
struct Scored {
    matrix: Matrix3x4<f64>,
    inliers: Vec<bool>,
    count: usize,
    mean_error: f64,
}

fn score(m: Matrix3x4<f64>, corrs: &[Correspondence], threshold: f64) -> Scored {
    let mut inliers = vec![false; corrs.len()];
    let mut total = 0.0;
    let mut count = 0;
    for (flag, c) in inliers.iter_mut().zip(corrs) {
        let e = reprojection_error(&m, c);
        if e <= threshold {
            *flag = true;
            total += e;
            count += 1;
        }
    }
    let mean_error = if count > 0 { total / count as f64 } else { f64::INFINITY };
    Scored {
        matrix: m,
        inliers,
        count,
        mean_error,
    }
}

fn mean_error_on(m: &Matrix3x4<f64>, corrs: &[Correspondence], mask: &[bool]) -> f64 {
    let (sum, n) = corrs
        .iter()
        .zip(mask)
        .filter(|(_, in_set)| **in_set)
        .fold((0.0, 0usize), |(s, n), (c, _)| (s + reprojection_error(m, c), n + 1));
    if n == 0 {
        f64::INFINITY
    } else {
        sum / n as f64
    }
}

fn subset(corrs: &[Correspondence], mask: &[bool]) -> Vec<Correspondence> {
    corrs
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(c, _)| *c)
        .collect()
}

/// Hypotheses needed to draw an all-inlier minimal sample with probability
/// `confidence`, given the current inlier ratio.
fn adaptive_bound(confidence: f64, inlier_ratio: f64) -> usize {
    let good = inlier_ratio.powi(MINIMAL_SAMPLE as i32);
    if good >= 1.0 {
        return 1;
    }
    if good <= 0.0 {
        return usize::MAX;
    }
    let n = (1.0 - confidence).ln() / (1.0 - good).ln();
    if n.is_finite() {
        n.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

/// RANSAC over six-point DLT hypotheses, followed by least-squares refits
/// on the consensus set.
///
/// Ties in inlier count go to the lower mean inlier error, then to the
/// earlier hypothesis. Degenerate samples are redrawn and do not count as
/// iterations.
pub fn fit_projection(
    corrs: &[Correspondence],
    cfg: &RansacConfig,
) -> Result<ProjectionFit, ProjectionError> {
    cfg.validate()?;
    if corrs.len() < MINIMAL_SAMPLE {
        return Err(ProjectionError::MinimalSampleUnavailable(corrs.len()));
    }
    validate_correspondences(corrs)?;

    let n = corrs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut budget = cfg.iterations;
    let mut iterations = 0;
    let mut degenerate = 0;
    let max_degenerate = cfg.iterations.saturating_mul(10);
    let mut best: Option<Scored> = None;
    let mut sample = Vec::with_capacity(MINIMAL_SAMPLE);

    while iterations < budget {
        sample.clear();
        sample.extend(index::sample(&mut rng, n, MINIMAL_SAMPLE).iter().map(|i| corrs[i]));
        let hypothesis = if is_coplanar(&sample) {
            None
        } else {
            fit_dlt(&sample, cfg.max_condition).ok()
        };
        let Some(m) = hypothesis else {
            degenerate += 1;
            if degenerate > max_degenerate {
                break;
            }
            continue;
        };
        iterations += 1;
        let s = score(m, corrs, cfg.inlier_px);
        let better = match &best {
            None => s.count > 0,
            Some(b) => s.count > b.count || (s.count == b.count && s.mean_error < b.mean_error),
        };
        if better {
            if let Some(conf) = cfg.confidence {
                budget = budget.min(adaptive_bound(conf, s.count as f64 / n as f64));
            }
            best = Some(s);
        }
    }

    let required = cfg.min_inliers.max(MINIMAL_SAMPLE);
    let hypothesis = match best {
        Some(b) if b.count >= required => b,
        other => {
            return Err(ProjectionError::NoConsensus {
                best: other.map_or(0, |b| b.count),
                required,
            })
        }
    };

    // Refit on the consensus set; a refit is kept only if it does not raise
    // the mean error on the set it was fitted to.
    let mut current = hypothesis.clone();
    for _ in 0..cfg.refit_rounds {
        let Ok(m) = fit_dlt(&subset(corrs, &current.inliers), cfg.max_condition) else {
            break;
        };
        if mean_error_on(&m, corrs, &current.inliers) > current.mean_error {
            break;
        }
        let next = score(m, corrs, cfg.inlier_px);
        if next.count < required {
            break;
        }
        let stable = next.inliers == current.inliers;
        current = next;
        if stable {
            break;
        }
    }

    if mean_error_on(&current.matrix, corrs, &hypothesis.inliers) > hypothesis.mean_error {
        current = hypothesis.clone();
    }
    let refit_err = mean_error_on(&current.matrix, corrs, &hypothesis.inliers);
    let matrix = ProjectionMatrix::new(current.matrix)?;
    Ok(ProjectionFit {
        matrix,
        inlier_count: current.count,
        mean_inlier_error: current.mean_error,
        inliers: current.inliers,
        hypothesis_error: hypothesis.mean_error,
        refit_error_on_hypothesis_inliers: refit_err,
        iterations,
        degenerate_samples: degenerate,
    })
}
