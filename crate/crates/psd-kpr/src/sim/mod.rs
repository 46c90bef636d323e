//! Deterministic synthetic scenarios: a room of labeled boxes, a camera
//! trajectory, pinhole projection into 2D detections, and seeded
//! tracking-loss schedules.
//!
//! Everything is a pure function of `(config, seed)`. Randomness comes from
//! a ChaCha8 generator with one sub-stream per phase, in this fixed order:
//! stream 0 places objects, stream 1 generates the trajectory, stream 2
//! drives per-frame detection and drift noise, stream 3 draws the loss
//! schedule. Cross-language reimplementations can match streams by
//! replicating that layout.
//!
//! Objects are axis-aligned boxes and occlusion is ignored: the filter
//! consumes only labels and 2D boxes, so occlusion realism adds nothing.

mod config;

pub use config::{parse_config, ScenarioConfig};

use crate::descriptor::{BoundingBox, Detection, Frame, SemanticMatrix};
use crate::pose::Pose;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const STREAM_OBJECTS: u64 = 0;
const STREAM_TRAJECTORY: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_SCHEDULE: u64 = 3;

/// Minimum camera-frame depth for a point to count as "in front".
const MIN_DEPTH: f64 = 1e-6;
/// Scheduled losses keep this many frames between each other and clear of
/// the sequence tail, so a default failure budget always fits.
const SCHEDULE_SPACING: u64 = 20;
const SCHEDULE_TAIL_GUARD: u64 = 20;
/// Angular speed of the survey trajectories, radians per frame. Slow enough
/// that consecutive frames keep high box overlap.
const ANGULAR_STEP: f64 = 0.003;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Pinhole intrinsics plus image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraModel {
    fn default() -> Self {
        // The common 640x480 f=525 pinhole default.
        Self {
            fx: 525.0,
            fy: 525.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = self.fx > 0.0 && self.fy > 0.0 && self.cx > 0.0 && self.cy > 0.0;
        if !positive || self.width == 0 || self.height == 0 {
            return Err(SimError::InvalidConfig("camera parameters must be positive".into()));
        }
        if self.cx >= f64::from(self.width) || self.cy >= f64::from(self.height) {
            return Err(SimError::InvalidConfig(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(())
    }
}

/// A labeled axis-aligned box in the room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldObject {
    pub class_label: u32,
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
}

impl WorldObject {
    fn center_v(&self) -> Vector3<f64> {
        Vector3::from(self.center)
    }
}

/// Detection and odometry noise knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Gaussian jitter (pixels) added to each box corner coordinate.
    pub box_jitter_sigma: f64,
    /// Probability of dropping a visible object entirely.
    pub dropout_p: f64,
    /// Expected count of spurious detections per frame (Poisson).
    pub false_positive_rate: f64,
    /// Odometry drift applied to pose estimates; zero keeps them exact.
    pub drift_sigma: f64,
}

/// A fully-generated world: camera, objects, ground-truth trajectory and the
/// schedule of induced tracking losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub camera: CameraModel,
    pub objects: Vec<WorldObject>,
    pub trajectory: Vec<(u64, Pose)>,
    pub loss_schedule: Vec<u64>,
    pub seed: u64,
    pub noise: NoiseConfig,
}

/// Trajectory families supported by the generator. All of them keep the
/// camera looking at the room center so objects stay in view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Circle,
    RandomWalk,
    Lawnmower,
}

/// World-from-camera rotation looking from `eye` toward `target`, camera
/// z forward and y down in the image.
fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Matrix3<f64> {
    let gaze = target - eye;
    if gaze.norm() < 1e-9 {
        return Matrix3::identity();
    }
    let z = gaze.normalize();
    let mut x = z.cross(&up);
    if x.norm() < 1e-9 {
        // Looking along the up axis; pick another reference.
        x = z.cross(&Vector3::new(0.0, 1.0, 0.0));
    }
    let x = x.normalize();
    let y = z.cross(&x);
    Matrix3::from_columns(&[x, y, z])
}

fn room_center(config: &ScenarioConfig) -> Vector3<f64> {
    Vector3::new(
        (config.room_min[0] + config.room_max[0]) / 2.0,
        (config.room_min[1] + config.room_max[1]) / 2.0,
        (config.room_min[2] + config.room_max[2]) / 2.0,
    )
}

fn pose_looking_at(eye: Vector3<f64>, target: Vector3<f64>) -> Pose {
    let r = look_at(eye, target, Vector3::new(0.0, 0.0, 1.0));
    Pose::new(r, eye, 1.0).expect("look-at rotation is orthonormal")
}

fn place_objects(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<WorldObject> {
    // Keep objects inside a tight core of the room so the surveying camera,
    // which moves near the walls while facing the center, keeps the whole
    // set in view; the object multiset then stays stable across frames.
    let center = room_center(config);
    let mut objects = Vec::with_capacity(config.n_objects);
    for _ in 0..config.n_objects {
        let mut center_pos = [0.0; 3];
        for axis in 0..3 {
            let extent = config.room_max[axis] - config.room_min[axis];
            let lo = config.room_min[axis] + 0.35 * extent;
            let hi = config.room_max[axis] - 0.35 * extent;
            center_pos[axis] = if lo < hi { rng.random_range(lo..hi) } else { center[axis] };
        }
        let half_extents = [
            rng.random_range(0.2..0.5),
            rng.random_range(0.2..0.5),
            rng.random_range(0.2..0.5),
        ];
        // Labels start at 1: a zero label contributes nothing to the class
        // norm and would make single-object scenes indistinguishable.
        let class_label = rng.random_range(1..=config.n_classes);
        objects.push(WorldObject {
            class_label,
            center: center_pos,
            half_extents,
        });
    }
    objects
}

fn generate_trajectory(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<(u64, Pose)> {
    let center = room_center(config);
    let width = config.room_max[0] - config.room_min[0];
    let depth = config.room_max[1] - config.room_min[1];
    let mut poses = Vec::with_capacity(config.n_frames);
    match config.trajectory {
        TrajectoryKind::Circle => {
            let radius = 0.35 * width.min(depth);
            let start = rng.random_range(0.0..std::f64::consts::TAU);
            for ts in 0..config.n_frames {
                let theta = start + ANGULAR_STEP * ts as f64;
                let eye = Vector3::new(
                    center.x + radius * theta.cos(),
                    center.y + radius * theta.sin(),
                    center.z,
                );
                poses.push((ts as u64, pose_looking_at(eye, center)));
            }
        }
        TrajectoryKind::RandomWalk => {
            // A wander with velocity momentum: smooth frame-to-frame motion
            // that still covers meters over a sequence, so early keyframes
            // end up genuinely far from late ones.
            let margin = 0.2;
            let lo = [
                config.room_min[0] + margin,
                config.room_min[1] + margin,
                config.room_min[2] + margin,
            ];
            let hi = [
                config.room_max[0] - margin,
                config.room_max[1] - margin,
                config.room_max[2] - margin,
            ];
            let mut eye = Vector3::new(
                rng.random_range(lo[0]..hi[0]),
                rng.random_range(lo[1]..hi[1]),
                rng.random_range(lo[2]..hi[2]),
            );
            let mut velocity: Vector3<f64> = Vector3::zeros();
            let kick = Normal::new(0.0, 0.002).expect("valid std dev");
            for ts in 0..config.n_frames {
                for axis in 0..3 {
                    velocity[axis] = 0.98 * velocity[axis] + kick.sample(rng);
                    let next = eye[axis] + velocity[axis];
                    if next < lo[axis] || next > hi[axis] {
                        velocity[axis] = -velocity[axis];
                    }
                    eye[axis] = (eye[axis] + velocity[axis]).clamp(lo[axis], hi[axis]);
                }
                poses.push((ts as u64, pose_looking_at(eye, center)));
            }
        }
        TrajectoryKind::Lawnmower => {
            // Short legs so several turns fit into a sequence at slow speed.
            let x_margin = 0.4 * width;
            let x_lo = config.room_min[0] + x_margin;
            let x_hi = config.room_max[0] - x_margin;
            let y_margin = 0.25 * depth;
            let y_lo = config.room_min[1] + y_margin;
            let y_hi = config.room_max[1] - y_margin;
            let z = center.z + rng.random_range(-0.2..0.2);
            let speed = 0.01;
            let row_gap = 0.4;
            let mut x = x_lo;
            let mut y = y_lo;
            let mut heading = 1.0;
            for ts in 0..config.n_frames {
                poses.push((ts as u64, pose_looking_at(Vector3::new(x, y, z), center)));
                x += heading * speed;
                if x > x_hi || x < x_lo {
                    x = x.clamp(x_lo, x_hi);
                    heading = -heading;
                    y += row_gap;
                    if y > y_hi {
                        y = y_lo;
                    }
                }
            }
        }
    }
    poses
}

fn draw_schedule(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Vec<u64>, SimError> {
    if config.n_losses == 0 {
        return Ok(Vec::new());
    }
    let n_frames = config.n_frames as u64;
    let n_losses = config.n_losses as u64;
    // No loss inside the first 10% (warm-up: the map needs keyframes before
    // recovery is meaningful) nor within the tail, where a full failure
    // budget could not play out.
    let warmup = (config.n_frames as f64 * 0.10).ceil() as u64;
    let last = n_frames
        .checked_sub(1 + SCHEDULE_TAIL_GUARD)
        .ok_or_else(|| SimError::InvalidConfig("sequence too short for a loss schedule".into()))?;
    if last < warmup {
        return Err(SimError::InvalidConfig(
            "sequence too short for the warm-up and tail guards".into(),
        ));
    }
    let window = last - warmup + 1;
    let compressed = window
        .checked_sub((n_losses - 1) * SCHEDULE_SPACING)
        .filter(|&c| c >= n_losses)
        .ok_or_else(|| {
            SimError::InvalidConfig(format!(
                "cannot fit {n_losses} losses with spacing {SCHEDULE_SPACING} into {window} frames"
            ))
        })?;
    // Distinct draws in the compressed window, then re-expand with the
    // spacing offset; sorted output keeps gaps of at least the spacing.
    let mut picked: Vec<u64> = if compressed >= 2 * n_losses {
        let mut chosen = std::collections::BTreeSet::new();
        while (chosen.len() as u64) < n_losses {
            chosen.insert(rng.random_range(0..compressed));
        }
        chosen.into_iter().collect()
    } else {
        // Tight window: a partial shuffle guarantees termination.
        let mut slots: Vec<u64> = (0..compressed).collect();
        for i in 0..config.n_losses {
            let j = rng.random_range(i..slots.len());
            slots.swap(i, j);
        }
        let mut subset = slots[..config.n_losses].to_vec();
        subset.sort_unstable();
        subset
    };
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .enumerate()
        .map(|(i, slot)| warmup + slot + i as u64 * SCHEDULE_SPACING)
        .collect())
}

/// Generates a scenario deterministically from `(config, seed)`.
pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    rng.set_stream(STREAM_OBJECTS);
    let objects = place_objects(config, &mut rng);

    rng.set_stream(STREAM_TRAJECTORY);
    let trajectory = generate_trajectory(config, &mut rng);

    rng.set_stream(STREAM_SCHEDULE);
    let loss_schedule = draw_schedule(config, &mut rng)?;

    Ok(Scenario {
        camera: config.camera,
        objects,
        trajectory,
        loss_schedule,
        seed,
        noise: config.noise(),
    })
}

/// Projects world objects through a pinhole camera into noisy detections.
///
/// An object is emitted when its center is in front of the camera, all its
/// corners project (objects straddling the image plane are culled), and the
/// resulting box still has positive area after clipping to the image.
/// Detections come out sorted by class label, then by `x1`.
pub fn project_objects(
    camera: &CameraModel,
    pose: &Pose,
    objects: &[WorldObject],
    noise: &NoiseConfig,
    rng: &mut ChaCha8Rng,
) -> SemanticMatrix {
    let rot_t = pose.rotation().transpose();
    let cam_center = pose.scaled_translation();
    let jitter = (noise.box_jitter_sigma > 0.0)
        .then(|| Normal::new(0.0, noise.box_jitter_sigma).expect("valid std dev"));
    let mut detections: Vec<Detection> = Vec::new();

    for obj in objects {
        let center_cam = rot_t * (obj.center_v() - cam_center);
        if center_cam.z <= MIN_DEPTH {
            continue;
        }
        let he = obj.half_extents;
        let mut x1 = f64::INFINITY;
        let mut y1 = f64::INFINITY;
        let mut x2 = f64::NEG_INFINITY;
        let mut y2 = f64::NEG_INFINITY;
        let mut behind = false;
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    let corner = obj.center_v()
                        + Vector3::new(sx * he[0], sy * he[1], sz * he[2]);
                    let p = rot_t * (corner - cam_center);
                    if p.z <= MIN_DEPTH {
                        behind = true;
                        break;
                    }
                    let u = camera.fx * p.x / p.z + camera.cx;
                    let v = camera.fy * p.y / p.z + camera.cy;
                    x1 = x1.min(u);
                    x2 = x2.max(u);
                    y1 = y1.min(v);
                    y2 = y2.max(v);
                }
            }
        }
        if behind {
            continue;
        }
        let depth = center_cam.z;
        if let Some(gauss) = &jitter {
            x1 += gauss.sample(rng);
            y1 += gauss.sample(rng);
            x2 += gauss.sample(rng);
            y2 += gauss.sample(rng);
            if x1 > x2 {
                std::mem::swap(&mut x1, &mut x2);
            }
            if y1 > y2 {
                std::mem::swap(&mut y1, &mut y2);
            }
        }
        x1 = x1.max(0.0);
        y1 = y1.max(0.0);
        x2 = x2.min(f64::from(camera.width));
        y2 = y2.min(f64::from(camera.height));
        if !(x1 < x2 && y1 < y2) {
            continue;
        }
        if noise.dropout_p > 0.0 && rng.random::<f64>() < noise.dropout_p {
            continue;
        }
        // Confidence decays with distance; deterministic so that noise-free
        // renders of the same pose agree exactly.
        let confidence = (1.0 / (1.0 + 0.05 * depth)).clamp(0.05, 1.0);
        let bbox = BoundingBox::new(x1, y1, x2, y2).expect("clipped box is well-formed");
        detections.push(Detection::new(obj.class_label, bbox, confidence).expect("confidence in range"));
    }

    if noise.false_positive_rate > 0.0 && !objects.is_empty() {
        let poisson = Poisson::new(noise.false_positive_rate).expect("positive rate");
        let count = poisson.sample(rng) as usize;
        let max_size = (f64::from(camera.width).min(f64::from(camera.height)) * 0.3).max(2.0);
        for _ in 0..count {
            let label = objects[rng.random_range(0..objects.len())].class_label;
            let w = rng.random_range(1.0..max_size);
            let h = rng.random_range(1.0..max_size);
            let x1 = rng.random_range(0.0..f64::from(camera.width) - w);
            let y1 = rng.random_range(0.0..f64::from(camera.height) - h);
            let confidence = rng.random_range(0.05..0.5);
            let bbox = BoundingBox::new(x1, y1, x1 + w, y1 + h).expect("constructed in bounds");
            detections.push(Detection::new(label, bbox, confidence).expect("confidence in range"));
        }
    }

    detections.sort_by(|a, b| {
        a.class_label()
            .cmp(&b.class_label())
            .then(a.bbox().x1().total_cmp(&b.bbox().x1()))
            .then(a.bbox().y1().total_cmp(&b.bbox().y1()))
    });
    SemanticMatrix::new(detections)
}

/// Renders one frame per trajectory pose.
///
/// Pose estimates equal the ground truth composed with odometry drift
/// (default zero). Image ids take the form `sim/{seed}/{timestep}`.
pub fn render_frames(scenario: &Scenario) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    rng.set_stream(STREAM_NOISE);
    scenario
        .trajectory
        .iter()
        .map(|(ts, gt_pose)| {
            let semantics =
                project_objects(&scenario.camera, gt_pose, &scenario.objects, &scenario.noise, &mut rng);
            let pose_estimate = if scenario.noise.drift_sigma > 0.0 {
                gt_pose.perturbed(scenario.noise.drift_sigma, &mut rng)
            } else {
                gt_pose.clone()
            };
            Frame {
                timestep: *ts,
                image_id: format!("sim/{}/{}", scenario.seed, ts),
                semantics,
                keypoints: None,
                pose_estimate,
            }
        })
        .collect()
}
