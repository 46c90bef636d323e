//! Scenario configuration: a flat `key = value` text format.
//!
//! Every key is optional and falls back to its default, so an empty file is
//! a valid configuration. Lines starting with `#` (or anything after a `#`)
//! are comments. Vector values take three numbers separated by spaces or
//! commas.
//!
//! Recognized keys: `room_min`, `room_max`, `n_objects`, `n_classes`,
//! `trajectory` (`circle` | `random_walk` | `lawnmower`), `n_frames`,
//! `n_losses`, `box_jitter_sigma`, `dropout_p`, `false_positive_rate`,
//! `seed`, and the optional camera overrides `fx`, `fy`, `cx`, `cy`,
//! `width`, `height` plus `drift_sigma` for odometry noise.

use super::{CameraModel, NoiseConfig, SimError, TrajectoryKind};
use serde::{Deserialize, Serialize};

/// Everything needed to generate a scenario deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub room_min: [f64; 3],
    pub room_max: [f64; 3],
    pub n_objects: usize,
    pub n_classes: u32,
    pub trajectory: TrajectoryKind,
    pub n_frames: usize,
    pub n_losses: usize,
    pub box_jitter_sigma: f64,
    pub dropout_p: f64,
    pub false_positive_rate: f64,
    pub drift_sigma: f64,
    pub seed: u64,
    pub camera: CameraModel,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            room_min: [0.0, 0.0, 0.0],
            room_max: [8.0, 6.0, 3.0],
            n_objects: 10,
            n_classes: 6,
            trajectory: TrajectoryKind::Circle,
            n_frames: 400,
            n_losses: 5,
            box_jitter_sigma: 0.5,
            dropout_p: 0.02,
            false_positive_rate: 0.02,
            drift_sigma: 0.0,
            seed: 0,
            camera: CameraModel::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn noise(&self) -> NoiseConfig {
        NoiseConfig {
            box_jitter_sigma: self.box_jitter_sigma,
            dropout_p: self.dropout_p,
            false_positive_rate: self.false_positive_rate,
            drift_sigma: self.drift_sigma,
        }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail validation
    pub fn validate(&self) -> Result<(), SimError> {
        for axis in 0..3 {
            if !(self.room_min[axis] < self.room_max[axis]) {
                return Err(SimError::InvalidConfig(format!(
                    "room_min must be componentwise below room_max (axis {axis})"
                )));
            }
        }
        if self.n_objects < 1 {
            return Err(SimError::InvalidConfig("n_objects must be at least 1".into()));
        }
        if self.n_classes < 1 {
            return Err(SimError::InvalidConfig("n_classes must be at least 1".into()));
        }
        if self.n_frames < 1 {
            return Err(SimError::InvalidConfig("n_frames must be at least 1".into()));
        }
        for (name, p) in [("dropout_p", self.dropout_p)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::InvalidConfig(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        for (name, v) in [
            ("box_jitter_sigma", self.box_jitter_sigma),
            ("false_positive_rate", self.false_positive_rate),
            ("drift_sigma", self.drift_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::InvalidConfig(format!(
                    "{name} must be a finite non-negative number, got {v}"
                )));
            }
        }
        self.camera.validate()?;
        Ok(())
    }
}

/// Parses the flat key-value format. Unknown keys are rejected so typos
/// surface immediately.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, SimError> {
    let mut config = ScenarioConfig::default();
    for (index, raw_line) in text.lines().enumerate() {
        let line_no = index + 1;
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(SimError::Parse {
                line: line_no,
                msg: format!("expected `key = value`, got {line:?}"),
            });
        };
        let key = key.trim();
        let value = value.trim();
        let parse_err = |msg: String| SimError::Parse { line: line_no, msg };
        match key {
            "room_min" => config.room_min = parse_vec3(value).map_err(parse_err)?,
            "room_max" => config.room_max = parse_vec3(value).map_err(parse_err)?,
            "n_objects" => config.n_objects = parse_num(key, value).map_err(parse_err)?,
            "n_classes" => config.n_classes = parse_num(key, value).map_err(parse_err)?,
            "trajectory" => {
                config.trajectory = match value {
                    "circle" => TrajectoryKind::Circle,
                    "random_walk" => TrajectoryKind::RandomWalk,
                    "lawnmower" => TrajectoryKind::Lawnmower,
                    other => {
                        return Err(parse_err(format!(
                            "unknown trajectory {other:?} (expected circle, random_walk or lawnmower)"
                        )))
                    }
                }
            }
            "n_frames" => config.n_frames = parse_num(key, value).map_err(parse_err)?,
            "n_losses" => config.n_losses = parse_num(key, value).map_err(parse_err)?,
            "box_jitter_sigma" => config.box_jitter_sigma = parse_num(key, value).map_err(parse_err)?,
            "dropout_p" => config.dropout_p = parse_num(key, value).map_err(parse_err)?,
            "false_positive_rate" => {
                config.false_positive_rate = parse_num(key, value).map_err(parse_err)?
            }
            "drift_sigma" => config.drift_sigma = parse_num(key, value).map_err(parse_err)?,
            "seed" => config.seed = parse_num(key, value).map_err(parse_err)?,
            "fx" => config.camera.fx = parse_num(key, value).map_err(parse_err)?,
            "fy" => config.camera.fy = parse_num(key, value).map_err(parse_err)?,
            "cx" => config.camera.cx = parse_num(key, value).map_err(parse_err)?,
            "cy" => config.camera.cy = parse_num(key, value).map_err(parse_err)?,
            "width" => config.camera.width = parse_num(key, value).map_err(parse_err)?,
            "height" => config.camera.height = parse_num(key, value).map_err(parse_err)?,
            other => return Err(parse_err(format!("unknown key {other:?}"))),
        }
    }
    config.validate()?;
    Ok(config)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("cannot parse {value:?} as a value for {key}"))
}

fn parse_vec3(value: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = value
        .replace(',', " ")
        .split_whitespace()
        .map(|p| p.parse().map_err(|_| format!("bad number {p:?}")))
        .collect::<Result<_, _>>()?;
    if parts.len() != 3 {
        return Err(format!("expected 3 numbers, got {}", parts.len()));
    }
    Ok([parts[0], parts[1], parts[2]])
}
