//! Templated movement primitives.
//!
//! A label is six ternary components: translation along three axes, tilt,
//! rotation and gripper. Rendering follows
//!
//! ```text
//! move [forward/backward] [left/right] [up/down], tilt [up/down],
//! rotate [clockwise/counterclockwise], [close/open] gripper
//! ```
//!
//! with every neutral block omitted and the all-neutral label written `stop`.
//! There are 3^6 = 729 labels.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{RobotState, Trajectory, STATE_DIM};

pub const DEFAULT_THRESHOLD: f64 = 0.03;
pub const DEFAULT_HORIZON: usize = 4;
pub const LABEL_COUNT: usize = 729;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MotionError {
    #[error("non-finite robot state")]
    NonFiniteState,
    #[error("invalid threshold {0}")]
    InvalidThreshold(f64),
    #[error("unparsable movement label `{0}`")]
    UnparsableLabel(String),
    #[error("cannot label an empty trajectory")]
    EmptyTrajectory,
}

/// Sign of one label component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Negative,
    Neutral,
    Positive,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::Negative, Direction::Neutral, Direction::Positive];

    pub fn flip(self) -> Self {
        match self {
            Direction::Negative => Direction::Positive,
            Direction::Neutral => Direction::Neutral,
            Direction::Positive => Direction::Negative,
        }
    }

    fn from_delta(delta: f64, threshold: f64) -> Self {
        if delta > threshold {
            Direction::Positive
        } else if delta < -threshold {
            Direction::Negative
        } else {
            Direction::Neutral
        }
    }

    fn digit(self) -> usize {
        self as usize
    }
}

/// Component slots, in template order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Forward,
    Left,
    Up,
    Tilt,
    Rotate,
    Gripper,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::Forward,
        Component::Left,
        Component::Up,
        Component::Tilt,
        Component::Rotate,
        Component::Gripper,
    ];

    /// Words for the (positive, negative) directions.
    fn words(self) -> (&'static str, &'static str) {
        match self {
            Component::Forward => ("forward", "backward"),
            Component::Left => ("left", "right"),
            Component::Up => ("up", "down"),
            Component::Tilt => ("up", "down"),
            Component::Rotate => ("counterclockwise", "clockwise"),
            Component::Gripper => ("open", "close"),
        }
    }
}

/// One of the 729 movement primitives.
///
/// Positive components read forward, left, up, tilt up, rotate
/// counterclockwise and open gripper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MovementLabel {
    pub forward: Direction,
    pub left: Direction,
    pub up: Direction,
    pub tilt: Direction,
    pub rotate: Direction,
    pub gripper: Direction,
}

impl Default for MovementLabel {
    fn default() -> Self {
        Self::STOP
    }
}

impl MovementLabel {
    pub const STOP: MovementLabel = MovementLabel {
        forward: Direction::Neutral,
        left: Direction::Neutral,
        up: Direction::Neutral,
        tilt: Direction::Neutral,
        rotate: Direction::Neutral,
        gripper: Direction::Neutral,
    };

    pub fn from_components(c: [Direction; 6]) -> Self {
        Self {
            forward: c[0],
            left: c[1],
            up: c[2],
            tilt: c[3],
            rotate: c[4],
            gripper: c[5],
        }
    }

    pub fn components(&self) -> [Direction; 6] {
        [
            self.forward,
            self.left,
            self.up,
            self.tilt,
            self.rotate,
            self.gripper,
        ]
    }

    pub fn get(&self, c: Component) -> Direction {
        self.components()[c as usize]
    }

    pub fn is_stop(&self) -> bool {
        *self == Self::STOP
    }

    /// Base-3 index in `0..729`.
    pub fn index(&self) -> usize {
        self.components().iter().fold(0, |acc, d| acc * 3 + d.digit())
    }

    pub fn from_index(mut index: usize) -> Option<Self> {
        if index >= LABEL_COUNT {
            return None;
        }
        let mut c = [Direction::Neutral; 6];
        for slot in c.iter_mut().rev() {
            *slot = Direction::ALL[index % 3];
            index /= 3;
        }
        Some(Self::from_components(c))
    }

    /// Every label, in index order.
    pub fn all() -> impl Iterator<Item = MovementLabel> {
        (0..LABEL_COUNT).map(|i| Self::from_index(i).expect("index in range"))
    }

    pub fn flipped(&self) -> Self {
        let mut c = self.components();
        c.iter_mut().for_each(|d| *d = d.flip());
        Self::from_components(c)
    }

    pub fn render(&self) -> String {
        let word = |c: Component| {
            let (pos, neg) = c.words();
            match self.get(c) {
                Direction::Positive => Some(pos),
                Direction::Negative => Some(neg),
                Direction::Neutral => None,
            }
        };
        let mut blocks: Vec<String> = Vec::with_capacity(4);
        let translation: Vec<&str> = [Component::Forward, Component::Left, Component::Up]
            .into_iter()
            .filter_map(word)
            .collect();
        if !translation.is_empty() {
            blocks.push(format!("move {}", translation.join(" ")));
        }
        if let Some(w) = word(Component::Tilt) {
            blocks.push(format!("tilt {w}"));
        }
        if let Some(w) = word(Component::Rotate) {
            blocks.push(format!("rotate {w}"));
        }
        if let Some(w) = word(Component::Gripper) {
            blocks.push(format!("{w} gripper"));
        }
        if blocks.is_empty() {
            "stop".to_string()
        } else {
            blocks.join(", ")
        }
    }

    pub fn parse(text: &str) -> Result<Self, MotionError> {
        let fail = || MotionError::UnparsableLabel(text.to_string());
        if text == "stop" {
            return Ok(Self::STOP);
        }
        let mut c = [Direction::Neutral; 6];
        // blocks must appear in template order: move, tilt, rotate, gripper
        let mut stage = 0;
        for block in text.split(", ") {
            let words: Vec<&str> = block.split(' ').collect();
            let next_stage = match words.as_slice() {
                ["move", rest @ ..] if !rest.is_empty() => {
                    let mut slot = 0;
                    for w in rest {
                        let found = (slot..3).find_map(|k| {
                            let (pos, neg) = Component::ALL[k].words();
                            if *w == pos {
                                Some((k, Direction::Positive))
                            } else if *w == neg {
                                Some((k, Direction::Negative))
                            } else {
                                None
                            }
                        });
                        let (k, d) = found.ok_or_else(fail)?;
                        c[k] = d;
                        slot = k + 1;
                    }
                    1
                }
                ["tilt", w] => {
                    c[3] = directional(Component::Tilt, w).ok_or_else(fail)?;
                    2
                }
                ["rotate", w] => {
                    c[4] = directional(Component::Rotate, w).ok_or_else(fail)?;
                    3
                }
                [w, "gripper"] => {
                    c[5] = directional(Component::Gripper, w).ok_or_else(fail)?;
                    4
                }
                _ => return Err(fail()),
            };
            if next_stage <= stage {
                return Err(fail());
            }
            stage = next_stage;
        }
        Ok(Self::from_components(c))
    }
}

fn directional(c: Component, word: &str) -> Option<Direction> {
    let (pos, neg) = c.words();
    if word == pos {
        Some(Direction::Positive)
    } else if word == neg {
        Some(Direction::Negative)
    } else {
        None
    }
}

impl fmt::Display for MovementLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for MovementLabel {
    type Err = MotionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for MovementLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for MovementLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Self::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// Which state coordinate drives a component, and with which sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSource {
    /// Index into `[x, y, z, roll, pitch, yaw, gripper]`.
    pub state_index: usize,
    pub sign: f64,
}

/// Maps state deltas onto label components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisMapping {
    pub sources: [AxisSource; 6],
}

impl Default for AxisMapping {
    /// forward +x, left +y, up +z, tilt up +pitch, counterclockwise +yaw,
    /// open on a rising gripper value.
    fn default() -> Self {
        let src = |state_index| AxisSource {
            state_index,
            sign: 1.0,
        };
        Self {
            sources: [src(0), src(1), src(2), src(4), src(5), src(6)],
        }
    }
}

impl AxisMapping {
    fn validate(&self) -> Result<(), MotionError> {
        for s in &self.sources {
            if s.state_index >= STATE_DIM || !s.sign.is_finite() || s.sign == 0.0 {
                return Err(MotionError::InvalidThreshold(s.sign));
            }
        }
        Ok(())
    }
}

/// Thresholded delta classifier with optional per-camera axis mappings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionClassifier {
    /// Per-component thresholds, in [`Component::ALL`] order.
    pub thresholds: [f64; 6],
    pub mapping: AxisMapping,
    #[serde(default)]
    pub camera_mappings: BTreeMap<String, AxisMapping>,
}

impl Default for MotionClassifier {
    fn default() -> Self {
        Self::uniform(DEFAULT_THRESHOLD)
    }
}

impl MotionClassifier {
    pub fn uniform(threshold: f64) -> Self {
        Self {
            thresholds: [threshold; 6],
            mapping: AxisMapping::default(),
            camera_mappings: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), MotionError> {
        for t in self.thresholds {
            if !t.is_finite() || t < 0.0 {
                return Err(MotionError::InvalidThreshold(t));
            }
        }
        self.mapping.validate()?;
        self.camera_mappings.values().try_for_each(AxisMapping::validate)
    }

    fn mapping_for(&self, camera_id: &str) -> &AxisMapping {
        self.camera_mappings.get(camera_id).unwrap_or(&self.mapping)
    }

    pub fn classify_with(
        &self,
        mapping: &AxisMapping,
        current: &RobotState,
        lookahead: &RobotState,
    ) -> Result<MovementLabel, MotionError> {
        if !current.is_finite() || !lookahead.is_finite() {
            return Err(MotionError::NonFiniteState);
        }
        let (a, b) = (current.to_array(), lookahead.to_array());
        let mut c = [Direction::Neutral; 6];
        for (k, src) in mapping.sources.iter().enumerate() {
            let delta = src.sign * (b[src.state_index] - a[src.state_index]);
            c[k] = Direction::from_delta(delta, self.thresholds[k]);
        }
        Ok(MovementLabel::from_components(c))
    }

    pub fn classify(
        &self,
        current: &RobotState,
        lookahead: &RobotState,
    ) -> Result<MovementLabel, MotionError> {
        self.classify_with(&self.mapping, current, lookahead)
    }

    /// One label per step; step `t` is compared with step
    /// `min(t + horizon, last)`.
    pub fn label_trajectory(
        &self,
        traj: &Trajectory,
        horizon: usize,
    ) -> Result<Vec<MovementLabel>, MotionError> {
        if traj.steps.is_empty() {
            return Err(MotionError::EmptyTrajectory);
        }
        let mapping = self.mapping_for(&traj.camera_id);
        let last = traj.steps.len() - 1;
        (0..=last)
            .map(|t| {
                let ahead = (t + horizon).min(last);
                self.classify_with(mapping, &traj.steps[t].state, &traj.steps[ahead].state)
            })
            .collect()
    }
}

/// Classifies with the default axis mapping and a uniform threshold.
pub fn classify_move(
    current: &RobotState,
    lookahead: &RobotState,
    threshold: f64,
) -> Result<MovementLabel, MotionError> {
    let c = MotionClassifier::uniform(threshold);
    c.validate()?;
    c.classify(current, lookahead)
}

pub fn label_trajectory(
    traj: &Trajectory,
    horizon: usize,
    threshold: f64,
) -> Result<Vec<MovementLabel>, MotionError> {
    let c = MotionClassifier::uniform(threshold);
    c.validate()?;
    c.label_trajectory(traj, horizon)
}

/// Label counts, keyed by rendered label.
pub fn histogram<'a>(labels: impl IntoIterator<Item = &'a MovementLabel>) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for l in labels {
        *out.entry(l.render()).or_insert(0) += 1;
    }
    out
}
