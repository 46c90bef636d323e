//! File formats: trajectories, detection logs, and keyframe-database
//! snapshots. Every writer/reader pair round-trips, parsers return
//! structured errors on arbitrary bytes, and all numbers are written with
//! nine fractional digits.
//!
//! Trajectories use the common `timestamp tx ty tz qx qy qz qw` text layout
//! (quaternion scalar last) so third-party trajectory tooling can consume
//! them directly. Detection logs are JSON lines, one record per frame, so
//! real detector outputs convert with a one-line mapper. Snapshots are
//! versioned pretty-printed JSON; text keeps them diffable.

use crate::atlas::Atlas;
use crate::descriptor::{BoundingBox, Detection, SemanticMatrix};
use crate::pose::Pose;
use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

/// Current snapshot format version.
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: quaternion norm {norm} too far from 1")]
    NonUnitQuaternion { line: usize, norm: f64 },
    #[error("line {line}: negative class label {label}")]
    NegativeLabel { line: usize, label: i64 },
    #[error("line {line}: malformed box [{x1}, {y1}, {x2}, {y2}]")]
    MalformedBox {
        line: usize,
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
    },
    #[error("line {line}: timesteps must be non-decreasing")]
    NonMonotonic { line: usize },
    #[error("snapshot version {found} unsupported (this build reads {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn utf8(bytes: &[u8]) -> Result<&str, IoError> {
    std::str::from_utf8(bytes).map_err(|e| IoError::Parse {
        line: 0,
        msg: format!("not valid UTF-8: {e}"),
    })
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

/// Formats poses as trajectory rows; timesteps become integral timestamps.
pub fn format_trajectory(poses: &[(u64, Pose)]) -> String {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (ts, pose) in poses {
        let t = pose.scaled_translation();
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
            *pose.rotation(),
        ));
        let _ = writeln!(
            out,
            "{ts}.000000000 {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            t.x, t.y, t.z, q.i, q.j, q.k, q.w
        );
    }
    out
}

/// Parses trajectory text. Loaded poses carry unit scale: only the product
/// `s * t` survives serialization.
pub fn parse_trajectory(bytes: &[u8]) -> Result<Vec<(u64, Pose)>, IoError> {
    let text = utf8(bytes)?;
    let mut poses = Vec::new();
    let mut last_stamp = f64::NEG_INFINITY;
    for (index, raw_line) in text.lines().enumerate() {
        let line = index + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(IoError::Parse {
                line,
                msg: format!("expected 8 fields, got {}", fields.len()),
            });
        }
        let nums: Vec<f64> = fields
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| IoError::Parse {
                    line,
                    msg: format!("bad number {f:?}"),
                })
            })
            .collect::<Result<_, _>>()?;
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(IoError::Parse {
                line,
                msg: "non-finite value".into(),
            });
        }
        let stamp = nums[0];
        if stamp < last_stamp {
            return Err(IoError::NonMonotonic { line });
        }
        last_stamp = stamp;
        let quat = nalgebra::Quaternion::new(nums[7], nums[4], nums[5], nums[6]);
        let norm = quat.norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(IoError::NonUnitQuaternion { line, norm });
        }
        let rotation = UnitQuaternion::from_quaternion(quat)
            .to_rotation_matrix()
            .into_inner();
        let translation = Vector3::new(nums[1], nums[2], nums[3]);
        let pose = Pose::new(rotation, translation, 1.0).map_err(|e| IoError::Parse {
            line,
            msg: e.to_string(),
        })?;
        poses.push((stamp.round() as u64, pose));
    }
    Ok(poses)
}

pub fn write_trajectory(poses: &[(u64, Pose)], path: impl AsRef<Path>) -> Result<(), IoError> {
    Ok(std::fs::write(path, format_trajectory(poses))?)
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Vec<(u64, Pose)>, IoError> {
    parse_trajectory(&std::fs::read(path)?)
}

// ---------------------------------------------------------------------------
// Detection logs
// ---------------------------------------------------------------------------

/// One detection-log record: a frame's identity plus its detector output.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionLogEntry {
    pub timestep: u64,
    pub image_id: String,
    pub semantics: SemanticMatrix,
}

#[derive(Serialize, Deserialize)]
struct DetectionRow {
    timestep: u64,
    image_id: String,
    detections: Vec<DetectionJson>,
}

#[derive(Serialize, Deserialize)]
struct DetectionJson {
    label: i64,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    conf: f64,
}

/// Serializes records as JSON lines. Records with zero detections are
/// preserved: they matter downstream precisely because they produce no
/// keyframe.
pub fn format_detections(entries: &[DetectionLogEntry]) -> String {
    let mut out = String::new();
    for entry in entries {
        let row = DetectionRow {
            timestep: entry.timestep,
            image_id: entry.image_id.clone(),
            detections: entry
                .semantics
                .rows()
                .iter()
                .map(|d| DetectionJson {
                    label: i64::from(d.class_label()),
                    bbox: d.bbox().corners(),
                    conf: d.confidence(),
                })
                .collect(),
        };
        let _ = writeln!(out, "{}", serde_json::to_string(&row).expect("plain data serializes"));
    }
    out
}

/// Parses a JSON-lines detection log with per-line error reporting.
pub fn parse_detections(bytes: &[u8]) -> Result<Vec<DetectionLogEntry>, IoError> {
    let text = utf8(bytes)?;
    let mut entries = Vec::new();
    let mut last_timestep: Option<u64> = None;
    for (index, raw_line) in text.lines().enumerate() {
        let line = index + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let row: DetectionRow = serde_json::from_str(raw_line).map_err(|e| IoError::Parse {
            line,
            msg: e.to_string(),
        })?;
        if last_timestep.is_some_and(|prev| row.timestep < prev) {
            return Err(IoError::NonMonotonic { line });
        }
        last_timestep = Some(row.timestep);
        let mut detections = Vec::with_capacity(row.detections.len());
        for d in row.detections {
            if d.label < 0 {
                return Err(IoError::NegativeLabel { line, label: d.label });
            }
            let [x1, y1, x2, y2] = d.bbox;
            let bbox = BoundingBox::new(x1, y1, x2, y2)
                .map_err(|_| IoError::MalformedBox { line, x1, y1, x2, y2 })?;
            let label = u32::try_from(d.label).map_err(|_| IoError::Parse {
                line,
                msg: format!("label {} too large", d.label),
            })?;
            let det = Detection::new(label, bbox, d.conf).map_err(|e| IoError::Parse {
                line,
                msg: e.to_string(),
            })?;
            detections.push(det);
        }
        entries.push(DetectionLogEntry {
            timestep: row.timestep,
            image_id: row.image_id,
            semantics: SemanticMatrix::new(detections),
        });
    }
    Ok(entries)
}

pub fn write_detections(entries: &[DetectionLogEntry], path: impl AsRef<Path>) -> Result<(), IoError> {
    Ok(std::fs::write(path, format_detections(entries))?)
}

pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<DetectionLogEntry>, IoError> {
    parse_detections(&std::fs::read(path)?)
}

// ---------------------------------------------------------------------------
// Keyframe-database snapshots
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SnapshotDoc {
    version: u32,
    atlas: Atlas,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

/// Serializes the atlas with full fidelity: maps, keyframes, descriptors,
/// and optional ground-truth poses.
pub fn format_snapshot(atlas: &Atlas) -> String {
    let doc = SnapshotDoc {
        version: SNAPSHOT_VERSION,
        atlas: atlas.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("atlas serializes")
}

/// Parses a snapshot, checking the format version before anything else.
/// All structural invariants (one active map, monotonic keyframe ids,
/// well-formed poses and boxes) are re-validated during deserialization.
pub fn parse_snapshot(bytes: &[u8]) -> Result<Atlas, IoError> {
    let text = utf8(bytes)?;
    let probe: VersionProbe = serde_json::from_str(text).map_err(|e| IoError::Parse {
        line: 0,
        msg: e.to_string(),
    })?;
    if probe.version != SNAPSHOT_VERSION {
        return Err(IoError::VersionMismatch {
            found: probe.version,
            expected: SNAPSHOT_VERSION,
        });
    }
    let doc: SnapshotDoc = serde_json::from_str(text).map_err(|e| IoError::Parse {
        line: 0,
        msg: e.to_string(),
    })?;
    Ok(doc.atlas)
}

pub fn snapshot_db(atlas: &Atlas, path: impl AsRef<Path>) -> Result<(), IoError> {
    Ok(std::fs::write(path, format_snapshot(atlas))?)
}

pub fn load_db(path: impl AsRef<Path>) -> Result<Atlas, IoError> {
    parse_snapshot(&std::fs::read(path)?)
}
