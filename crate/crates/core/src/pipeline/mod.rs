//! End-to-end annotation runs: dataset in, one chain record per step out.
//!
//! Trajectories are processed in id order, in chunks of `parallelism`.
//! After each chunk the output is flushed and a checkpoint records how many
//! trajectories and bytes are final, so an interrupted run resumes by
//! truncating any torn tail and carrying on. The output never depends on
//! `parallelism` or on where a run was interrupted.

mod checkpoint;
mod config;
mod stats;

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use config::{BackendMode, PipelineConfig};
pub use stats::{stats, stats_from_reader, LabelCount, LayoutTokens, OutputStats, TokenSummary};

use crate::annotators::{
    filter_detections, Annotator, AnnotatorError, DescribeRequest, DetectRequest, FixtureSet,
    GripperRequest, HttpBackend, HttpConfig, MockBackend, PlanRequest,
};
use crate::chain::{assemble, serialize, AssemblyInput};
use crate::data::{read_jsonl, DataError, Trajectory};
use crate::exec::map_ordered;
use crate::hash::{fnv1a64, request_hash};
use crate::motion::{histogram, MotionClassifier, MovementLabel};
use crate::projection::{annotate_gripper_track, TrackOutcome};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o failure on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("dataset: {0}")]
    Dataset(#[from] DataError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("annotator backend: {0}")]
    Backend(#[from] AnnotatorError),
    #[error("output line {line}: {detail}")]
    Output { line: usize, detail: String },
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One line of the output dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainRecord {
    pub trajectory_id: String,
    pub step: u64,
    pub chain: String,
    pub action: [f64; 7],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unannotated {
    pub trajectory_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub trajectories: usize,
    pub processed: usize,
    pub annotated: usize,
    /// Every trajectory that produced no chains, with the reason.
    pub unannotated: Vec<Unannotated>,
    /// How many of `unannotated` failed gripper calibration.
    pub uncalibrated: usize,
    pub records: u64,
    pub histogram: BTreeMap<String, u64>,
    /// Wall time summed over all invocations of this run.
    pub elapsed_ms: u64,
    /// Trajectories already done when this invocation started.
    pub resumed_from: usize,
    pub complete: bool,
}

impl RunReport {
    pub fn is_partial(&self) -> bool {
        !self.unannotated.is_empty()
    }
}

enum Outcome {
    Annotated { lines: String, labels: Vec<MovementLabel>, records: u64 },
    Skipped { reason: String, uncalibrated: bool },
}

fn skipped(reason: impl std::fmt::Display) -> Outcome {
    Outcome::Skipped {
        reason: reason.to_string(),
        uncalibrated: false,
    }
}

fn build_backend(cfg: &PipelineConfig) -> Result<Box<dyn Annotator>, PipelineError> {
    match cfg.backend {
        BackendMode::Mock => {
            let fixtures = match &cfg.fixtures {
                Some(p) => FixtureSet::load(p).map_err(|e| PipelineError::io(p, e))?,
                None => FixtureSet::default(),
            };
            Ok(Box::new(MockBackend::new(fixtures)))
        }
        BackendMode::Bridge => {
            let http = HttpBackend::new(
                HttpConfig {
                    url: cfg.bridge_url.clone(),
                    ..HttpConfig::default()
                }
                .with_env_override(),
            );
            http.health()?;
            Ok(Box::new(http))
        }
    }
}

fn annotate(traj: &Trajectory, backend: &dyn Annotator, classifier: &MotionClassifier, cfg: &PipelineConfig) -> Outcome {
    if let Err(v) = traj.validate() {
        return skipped(format!("invalid trajectory: {v}"));
    }
    let labels = match classifier.label_trajectory(traj, cfg.move_horizon) {
        Ok(l) => l,
        Err(e) => return skipped(e),
    };
    match annotate_steps(traj, backend, &labels, cfg) {
        Ok(Ok((lines, records))) => Outcome::Annotated { lines, labels, records },
        Ok(Err(outcome)) => outcome,
        Err(e) => skipped(e),
    }
}

fn annotate_steps(
    traj: &Trajectory,
    backend: &dyn Annotator,
    labels: &[MovementLabel],
    cfg: &PipelineConfig,
) -> Result<Result<(String, u64), Outcome>, AnnotatorError> {
    let first = &traj.steps[0];
    let caption = backend
        .describe(&DescribeRequest::new(first.image_ref.clone(), Some(&traj.instruction), cfg.seed))?
        .caption;
    let text = if traj.has_usable_instruction() {
        format!("{} {caption}", traj.instruction.trim())
    } else {
        caption.clone()
    };

    let mut boxes = Vec::with_capacity(traj.steps.len());
    let mut detections = BTreeMap::new();
    for step in &traj.steps {
        let found = backend
            .detect(&DetectRequest {
                image_ref: step.image_ref.clone(),
                text: text.clone(),
                seed: cfg.seed,
            })?
            .boxes()?;
        boxes.push(filter_detections(&found, cfg.box_min, cfg.text_min));
        let gripper = backend.detect_gripper(&GripperRequest {
            image_ref: step.image_ref.clone(),
            seed: cfg.seed,
        })?;
        if let Some(d) = gripper.detection() {
            detections.insert(step.index, d);
        }
    }

    let mut traj = traj.clone();
    let ransac = cfg.ransac(fnv1a64(traj.id.as_bytes()));
    if let TrackOutcome::Uncalibrated(e) = annotate_gripper_track(&mut traj, &detections, &ransac) {
        return Ok(Err(Outcome::Skipped {
            reason: format!("gripper calibration failed: {e}"),
            uncalibrated: true,
        }));
    }

    let plan = backend.plan(&PlanRequest {
        instruction: traj.instruction.clone(),
        caption,
        moves: labels.iter().map(MovementLabel::render).collect(),
        steps: traj.steps.len(),
        seed: cfg.seed,
    })?;
    plan.validate(traj.steps.len())?;

    let chains = match assemble(&AssemblyInput {
        traj: &traj,
        boxes: &boxes,
        labels,
        plan: &plan,
        layout: cfg.layout,
        future_gripper: cfg.future_gripper,
    }) {
        Ok(c) => c,
        Err(e) => return Ok(Err(skipped(format!("chain assembly failed: {e}")))),
    };

    let mut lines = String::new();
    for (step, chain) in traj.steps.iter().zip(&chains) {
        let record = ChainRecord {
            trajectory_id: traj.id.clone(),
            step: step.index,
            chain: serialize(chain),
            action: step.action.0,
        };
        lines.push_str(&serde_json::to_string(&record).expect("record serializes"));
        lines.push('\n');
    }
    Ok(Ok((lines, chains.len() as u64)))
}

fn fingerprint(dataset: &[u8], cfg: &PipelineConfig) -> String {
    let settings = request_hash("pipeline", &cfg.output_settings());
    format!("{:016x}{settings:016x}", fnv1a64(dataset))
}

fn open_output(cfg: &PipelineConfig, resume: Option<&Checkpoint>) -> Result<File, PipelineError> {
    let path = &cfg.output;
    let Some(ckpt) = resume else {
        return File::create(path).map_err(|e| PipelineError::io(path, e));
    };
    let file = OpenOptions::new()
        .read(true)
        .write(true)
        .open(path)
        .map_err(|e| PipelineError::io(path, e))?;
    let len = file.metadata().map_err(|e| PipelineError::io(path, e))?.len();
    if len < ckpt.output_bytes {
        return Err(PipelineError::Checkpoint(format!(
            "{} has {len} bytes but the checkpoint covers {}",
            path.display(),
            ckpt.output_bytes
        )));
    }
    // Anything past the checkpoint belongs to a chunk that never finished.
    file.set_len(ckpt.output_bytes).map_err(|e| PipelineError::io(path, e))?;
    let mut file = file;
    io::Seek::seek(&mut file, io::SeekFrom::End(0)).map_err(|e| PipelineError::io(path, e))?;
    Ok(file)
}

/// Runs (or resumes) the pipeline described by `cfg`.
pub fn run(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    let started = Instant::now();
    cfg.validate()?;
    let bytes = std::fs::read(&cfg.dataset).map_err(|e| PipelineError::io(&cfg.dataset, e))?;
    let mut trajs = read_jsonl(&bytes[..])?;
    trajs.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = trajs.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(PipelineError::Config(format!("duplicate trajectory id {:?}", w[0].id)));
    }
    let fingerprint = fingerprint(&bytes, cfg);

    let resume = match &cfg.checkpoint {
        Some(p) => Checkpoint::load(p)?,
        None => None,
    };
    if let Some(c) = &resume {
        if c.fingerprint != fingerprint {
            return Err(PipelineError::Checkpoint(
                "checkpoint was written for a different dataset or configuration".into(),
            ));
        }
        if c.completed > trajs.len() {
            return Err(PipelineError::Checkpoint("checkpoint is ahead of the dataset".into()));
        }
    }
    let mut out = open_output(cfg, resume.as_ref())?;
    let (mut done, mut bytes_written, mut report) = match resume {
        Some(c) => (c.completed, c.output_bytes, c.report),
        None => (0, 0, RunReport::default()),
    };
    report.trajectories = trajs.len();
    report.resumed_from = done;
    let prior_ms = report.elapsed_ms;

    let backend = build_backend(cfg)?;
    let classifier = MotionClassifier::uniform(cfg.move_threshold);
    let budget = cfg.stop_after.unwrap_or(usize::MAX);
    let mut this_run = 0;
    while done < trajs.len() && this_run < budget {
        let take = cfg.parallelism.min(trajs.len() - done).min(budget - this_run);
        let chunk = &trajs[done..done + take];
        let outcomes = map_ordered(chunk, cfg.parallelism, |t| annotate(t, backend.as_ref(), &classifier, cfg));
        for (traj, outcome) in chunk.iter().zip(outcomes) {
            match outcome {
                Outcome::Annotated { lines, labels, records } => {
                    out.write_all(lines.as_bytes()).map_err(|e| PipelineError::io(&cfg.output, e))?;
                    bytes_written += lines.len() as u64;
                    report.annotated += 1;
                    report.records += records;
                    for (k, v) in histogram(&labels) {
                        *report.histogram.entry(k).or_insert(0) += v;
                    }
                }
                Outcome::Skipped { reason, uncalibrated } => {
                    report.uncalibrated += usize::from(uncalibrated);
                    report.unannotated.push(Unannotated {
                        trajectory_id: traj.id.clone(),
                        reason,
                    });
                }
            }
        }
        done += take;
        this_run += take;
        report.processed = done;
        report.elapsed_ms = prior_ms + started.elapsed().as_millis() as u64;
        if let Some(path) = &cfg.checkpoint {
            out.sync_data().map_err(|e| PipelineError::io(&cfg.output, e))?;
            Checkpoint {
                fingerprint: fingerprint.clone(),
                completed: done,
                output_bytes: bytes_written,
                report: report.clone(),
            }
            .store(path)?;
        }
    }
    out.flush().map_err(|e| PipelineError::io(&cfg.output, e))?;
    report.complete = done == trajs.len();
    report.elapsed_ms = prior_ms + started.elapsed().as_millis() as u64;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::write_dataset;
    use crate::synth::{generate, SynthConfig};

    fn setup(dir: &Path, n: usize) -> PipelineConfig {
        let corpus = generate(&SynthConfig {
            trajectories: n,
            ..Default::default()
        });
        let dataset = dir.join("data.jsonl");
        write_dataset(&corpus.trajectories, &dataset).unwrap();
        let fixtures = dir.join("fixtures.json");
        corpus.fixtures.save(&fixtures).unwrap();
        PipelineConfig {
            dataset,
            output: dir.join("out.jsonl"),
            fixtures: Some(fixtures),
            ..Default::default()
        }
    }

    #[test]
    fn sparse_trajectory_is_reported_not_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = setup(dir.path(), 3);
        let report = run(&cfg).unwrap();
        assert!(report.complete);
        assert_eq!(report.annotated, 2);
        assert_eq!(report.uncalibrated, 1);
        assert_eq!(report.unannotated[0].trajectory_id, "traj-0002");
        assert!(report.is_partial());
        let text = std::fs::read_to_string(&cfg.output).unwrap();
        assert_eq!(text.lines().count() as u64, report.records);
        assert_eq!(report.histogram.values().sum::<u64>(), report.records);
    }

    #[test]
    fn checkpoint_from_other_settings_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = setup(dir.path(), 2);
        cfg.checkpoint = Some(dir.path().join("ckpt.json"));
        cfg.stop_after = Some(1);
        run(&cfg).unwrap();
        cfg.seed += 1;
        assert!(matches!(run(&cfg), Err(PipelineError::Checkpoint(_))));
    }

    #[test]
    fn missing_dataset_is_io_error() {
        let cfg = PipelineConfig {
            dataset: "/nonexistent/data.jsonl".into(),
            ..Default::default()
        };
        assert!(matches!(run(&cfg), Err(PipelineError::Io { .. })));
    }
}
