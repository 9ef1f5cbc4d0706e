use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChainRecord, PipelineError};
use crate::chain::{count_tokens, parse, ChainProfile, Layout, TokenEstimator, WordProxyEstimator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelCount {
    pub count: u64,
    pub fraction: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenSummary {
    pub mean: f64,
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
    pub max: u64,
}

impl TokenSummary {
    /// Nearest-rank percentiles.
    pub fn from_values(values: &mut [u64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        values.sort_unstable();
        let n = values.len();
        let rank = |p: f64| values[((p * n as f64).ceil() as usize).clamp(1, n) - 1];
        Self {
            mean: values.iter().sum::<u64>() as f64 / n as f64,
            p50: rank(0.5),
            p90: rank(0.9),
            p99: rank(0.99),
            max: values[n - 1],
        }
    }
}

/// Token budgets of every chain, rendered in one layout.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LayoutTokens {
    /// Full chain plus action.
    pub generated: TokenSummary,
    /// What a freezing strategy regenerates on a frozen step.
    pub regenerated: TokenSummary,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputStats {
    pub records: u64,
    /// How many records were written in each layout.
    pub layouts: BTreeMap<Layout, u64>,
    pub histogram: BTreeMap<String, LabelCount>,
    /// Every chain is measured in both layouts, whichever it was written in.
    pub tokens: BTreeMap<Layout, LayoutTokens>,
    /// Relative cut in regenerated tokens from freezing the object boxes.
    pub frozen_bbox_reduction: Option<f64>,
}

pub fn stats(path: &Path) -> Result<OutputStats, PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    stats_from_reader(BufReader::new(file), &WordProxyEstimator)
}

pub fn stats_from_reader<R: BufRead>(reader: R, estimator: &dyn TokenEstimator) -> Result<OutputStats, PipelineError> {
    let mut out = OutputStats::default();
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let layouts = [Layout::Standard, Layout::FrozenBbox];
    let mut generated: Vec<Vec<u64>> = vec![Vec::new(); 2];
    let mut regenerated: Vec<Vec<u64>> = vec![Vec::new(); 2];
    for (k, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| PipelineError::Output {
            line: k + 1,
            detail: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |detail: String| PipelineError::Output { line: k + 1, detail };
        let record: ChainRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let chain = parse(&record.chain).map_err(|e| bad(e.to_string()))?;
        out.records += 1;
        *out.layouts.entry(chain.layout).or_insert(0) += 1;
        *counts.entry(chain.movement.render()).or_insert(0) += 1;
        for (i, layout) in layouts.into_iter().enumerate() {
            let c = chain.with_layout(layout);
            generated[i].push(count_tokens(&c, estimator).generated);
            regenerated[i].push(ChainProfile::from_chain(&c, estimator).regenerated());
        }
    }
    let total = out.records.max(1) as f64;
    out.histogram = counts
        .into_iter()
        .map(|(label, count)| {
            let fraction = count as f64 / total;
            (label, LabelCount { count, fraction })
        })
        .collect();
    if out.records > 0 {
        for (i, layout) in layouts.into_iter().enumerate() {
            out.tokens.insert(
                layout,
                LayoutTokens {
                    generated: TokenSummary::from_values(&mut generated[i]),
                    regenerated: TokenSummary::from_values(&mut regenerated[i]),
                },
            );
        }
        let std = out.tokens[&Layout::Standard].regenerated.mean;
        let frozen = out.tokens[&Layout::FrozenBbox].regenerated.mean;
        out.frozen_bbox_reduction = Some(1.0 - frozen / std);
    }
    Ok(out)
}
