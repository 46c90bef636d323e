//! Frames, object detections, and the pose-semantic keyframe descriptor.
//!
//! A detector reports, per image, a set of class labels and 2D bounding
//! boxes. Together with the camera pose estimate current at that timestep
//! they form the [`PoseSemanticDescriptor`] attached to every keyframe. No
//! image pixels are stored anywhere; frames carry only an opaque `image_id`.

use crate::pose::Pose;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rejections raised when building detections or descriptors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DescriptorError {
    #[error("malformed box ({x1}, {y1}, {x2}, {y2}): need finite x1 < x2 and y1 < y2")]
    MalformedBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("a descriptor needs at least one detection")]
    EmptyDescriptor,
    #[error("{labels} class labels but {boxes} boxes")]
    LabelBoxMismatch { labels: usize, boxes: usize },
}

/// Axis-aligned pixel box from top-left `(x1, y1)` to bottom-right `(x2, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, DescriptorError> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x1 >= x2 || y1 >= y2 {
            return Err(DescriptorError::MalformedBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = String;

    fn try_from(v: [f64; 4]) -> Result<Self, String> {
        BoundingBox::new(v[0], v[1], v[2], v[3]).map_err(|e| e.to_string())
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.corners()
    }
}

/// One detected object: class label, box, and detector confidence.
///
/// Class labels are plain non-negative integers with no fixed vocabulary.
/// Confidence is carried for downstream consumers; the place-recognition
/// filter itself never reads it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DetectionDoc", into = "DetectionDoc")]
pub struct Detection {
    class_label: u32,
    bbox: BoundingBox,
    confidence: f64,
}

impl Detection {
    pub fn new(class_label: u32, bbox: BoundingBox, confidence: f64) -> Result<Self, DescriptorError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(DescriptorError::ConfidenceOutOfRange(confidence));
        }
        Ok(Self {
            class_label,
            bbox,
            confidence,
        })
    }

    pub fn class_label(&self) -> u32 {
        self.class_label
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }
}

#[derive(Serialize, Deserialize)]
struct DetectionDoc {
    class_label: u32,
    bbox: BoundingBox,
    confidence: f64,
}

impl From<Detection> for DetectionDoc {
    fn from(d: Detection) -> Self {
        DetectionDoc {
            class_label: d.class_label,
            bbox: d.bbox,
            confidence: d.confidence,
        }
    }
}

impl TryFrom<DetectionDoc> for Detection {
    type Error = String;

    fn try_from(d: DetectionDoc) -> Result<Self, String> {
        Detection::new(d.class_label, d.bbox, d.confidence).map_err(|e| e.to_string())
    }
}

/// The per-frame detector output: one row per detected object.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SemanticMatrix {
    rows: Vec<Detection>,
}

impl SemanticMatrix {
    pub fn new(rows: Vec<Detection>) -> Self {
        Self { rows }
    }

    pub fn rows(&self) -> &[Detection] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl From<Vec<Detection>> for SemanticMatrix {
    fn from(rows: Vec<Detection>) -> Self {
        Self::new(rows)
    }
}

/// One camera frame: detector output plus the pose estimate current at
/// capture time. Timesteps must strictly increase along a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub timestep: u64,
    pub image_id: String,
    pub semantics: SemanticMatrix,
    pub keypoints: Option<Vec<[f64; 2]>>,
    pub pose_estimate: Pose,
}

/// The multimodal keyframe descriptor: timestep, class labels, boxes and
/// camera pose. Never built from zero detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PsdDoc", into = "PsdDoc")]
pub struct PoseSemanticDescriptor {
    timestep: u64,
    class_labels: Vec<u32>,
    boxes: Vec<BoundingBox>,
    pose: Pose,
}

impl PoseSemanticDescriptor {
    pub fn new(
        timestep: u64,
        class_labels: Vec<u32>,
        boxes: Vec<BoundingBox>,
        pose: Pose,
    ) -> Result<Self, DescriptorError> {
        if class_labels.is_empty() {
            return Err(DescriptorError::EmptyDescriptor);
        }
        if class_labels.len() != boxes.len() {
            return Err(DescriptorError::LabelBoxMismatch {
                labels: class_labels.len(),
                boxes: boxes.len(),
            });
        }
        Ok(Self {
            timestep,
            class_labels,
            boxes,
            pose,
        })
    }

    /// Projects a frame into its descriptor, preserving detection order.
    /// Returns `None` when the frame has no detections: such frames never
    /// become keyframes.
    pub fn from_frame(frame: &Frame) -> Option<Self> {
        if frame.semantics.is_empty() {
            return None;
        }
        let class_labels = frame.semantics.rows().iter().map(Detection::class_label).collect();
        let boxes = frame.semantics.rows().iter().map(|d| *d.bbox()).collect();
        Some(Self {
            timestep: frame.timestep,
            class_labels,
            boxes,
            pose: frame.pose_estimate.clone(),
        })
    }

    pub fn timestep(&self) -> u64 {
        self.timestep
    }

    pub fn class_labels(&self) -> &[u32] {
        &self.class_labels
    }

    pub fn boxes(&self) -> &[BoundingBox] {
        &self.boxes
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    /// Number of detected objects, `k`. Always at least 1.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.class_labels.len()
    }
}

#[derive(Serialize, Deserialize)]
struct PsdDoc {
    timestep: u64,
    class_labels: Vec<u32>,
    boxes: Vec<BoundingBox>,
    pose: Pose,
}

impl From<PoseSemanticDescriptor> for PsdDoc {
    fn from(p: PoseSemanticDescriptor) -> Self {
        PsdDoc {
            timestep: p.timestep,
            class_labels: p.class_labels,
            boxes: p.boxes,
            pose: p.pose,
        }
    }
}

impl TryFrom<PsdDoc> for PoseSemanticDescriptor {
    type Error = String;

    fn try_from(d: PsdDoc) -> Result<Self, String> {
        PoseSemanticDescriptor::new(d.timestep, d.class_labels, d.boxes, d.pose)
            .map_err(|e| e.to_string())
    }
}
