//! Shared test helpers: independent naive re-implementations of every
//! filter stage (used as oracles), plus random-instance generators.
//!
//! The oracles deliberately avoid the library's query path: matrices are
//! expanded into plain arrays and scanned with explicit loops, so agreement
//! with the staged implementation is meaningful.

#![allow(dead_code)]

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use psd_kpr::atlas::Keyframe;
use psd_kpr::descriptor::{BoundingBox, PoseSemanticDescriptor};
use psd_kpr::kpr::{BoxPairing, KprParams};
use psd_kpr::pose::Pose;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Independent oracle implementations
// ---------------------------------------------------------------------------

/// Expands a pose into a plain 4x4 array: rotation block, scaled
/// translation column, fixed last row.
pub fn pose_array(p: &Pose) -> [[f64; 4]; 4] {
    let r = p.rotation();
    let t = p.scaled_translation();
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[(i, j)];
        }
        m[i][3] = t[i];
    }
    m[3][3] = 1.0;
    m
}

/// Entrywise square-root-of-sum-of-squares over the expanded matrices.
pub fn naive_frobenius(a: &Pose, b: &Pose) -> f64 {
    let (ma, mb) = (pose_array(a), pose_array(b));
    let mut sum = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let d = ma[i][j] - mb[i][j];
            sum += d * d;
        }
    }
    sum.sqrt()
}

/// Direct scan of the pose shell condition.
pub fn naive_pose_filter(
    query: &PoseSemanticDescriptor,
    db: &[Keyframe],
    params: &KprParams,
) -> Vec<u64> {
    db.iter()
        .filter(|kf| {
            let d = naive_frobenius(query.pose(), kf.psd.pose());
            d >= params.epsilon && d <= params.delta_t_th
        })
        .map(|kf| kf.id)
        .collect()
}

fn naive_label_norm(labels: &[u32]) -> f64 {
    let sum: u64 = labels.iter().map(|&l| u64::from(l) * u64::from(l)).sum();
    (sum as f64).sqrt()
}

/// Two-pass min-then-band scan of the class constraint.
pub fn naive_class_filter(
    query: &PoseSemanticDescriptor,
    db: &[Keyframe],
    input: &[u64],
    params: &KprParams,
) -> Vec<u64> {
    let lookup = |id: u64| db.iter().find(|kf| kf.id == id).expect("id resolves");
    let score = |id: u64| {
        (naive_label_norm(query.class_labels()) - naive_label_norm(lookup(id).psd.class_labels()))
            .abs()
    };
    let mut min_score = f64::INFINITY;
    for &id in input {
        min_score = min_score.min(score(id));
    }
    if input.is_empty() {
        return Vec::new();
    }
    input
        .iter()
        .copied()
        .filter(|&id| {
            let s = score(id);
            s >= min_score && s <= min_score * (1.0 + params.class_band)
        })
        .collect()
}

pub fn naive_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x2().min(b.x2()) - a.x1().max(b.x1())).max(0.0);
    let iy = (a.y2().min(b.y2()) - a.y1().max(b.y1())).max(0.0);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    let area_a = (a.x2() - a.x1()) * (a.y2() - a.y1());
    let area_b = (b.x2() - b.x1()) * (b.y2() - b.y1());
    inter / (area_a + area_b - inter)
}

/// Exhaustive greedy matching: full pair list, sorted, no early exit.
fn naive_overlap_count(
    query: &PoseSemanticDescriptor,
    cand: &PoseSemanticDescriptor,
    params: &KprParams,
) -> usize {
    let mut pairs = Vec::new();
    for qi in 0..query.len() {
        for ci in 0..cand.len() {
            if query.class_labels()[qi] == cand.class_labels()[ci] {
                pairs.push((naive_iou(&query.boxes()[qi], &cand.boxes()[ci]), qi, ci));
            }
        }
    }
    match params.pairing {
        BoxPairing::Greedy => {
            pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut used_q = vec![false; query.len()];
            let mut used_c = vec![false; cand.len()];
            let mut count = 0;
            for (overlap, qi, ci) in pairs {
                if used_q[qi] || used_c[ci] {
                    continue;
                }
                used_q[qi] = true;
                used_c[ci] = true;
                if overlap > params.delta_iou {
                    count += 1;
                }
            }
            count
        }
        BoxPairing::AllPairs => pairs.iter().filter(|(o, _, _)| *o > params.delta_iou).count(),
    }
}

/// Direct scan of the box constraint over an id list.
pub fn naive_box_filter(
    query: &PoseSemanticDescriptor,
    db: &[Keyframe],
    input: &[u64],
    params: &KprParams,
) -> Vec<u64> {
    input
        .iter()
        .copied()
        .filter(|&id| {
            let kf = db.iter().find(|kf| kf.id == id).expect("id resolves");
            naive_overlap_count(query, &kf.psd, params) >= query.len()
        })
        .collect()
}

/// The full three-stage chain, all naive.
pub fn naive_pcb(query: &PoseSemanticDescriptor, db: &[Keyframe], params: &KprParams) -> Vec<u64> {
    let after_pose = naive_pose_filter(query, db, params);
    let after_class = naive_class_filter(query, db, &after_pose, params);
    naive_box_filter(query, db, &after_class, params)
}

// ---------------------------------------------------------------------------
// Random instance generators
// ---------------------------------------------------------------------------

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let axis = loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm() > 1e-3 {
            break Unit::new_normalize(v);
        }
    };
    let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    Rotation3::from_axis_angle(&axis, angle).into_inner()
}

pub fn random_pose(rng: &mut ChaCha8Rng, extent: f64) -> Pose {
    let t = Vector3::new(
        rng.random_range(-extent..extent),
        rng.random_range(-extent..extent),
        rng.random_range(-extent..extent),
    );
    Pose::new(random_rotation(rng), t, 1.0).expect("random rotation is proper")
}

pub fn random_bbox(rng: &mut ChaCha8Rng) -> BoundingBox {
    let x1 = rng.random_range(0.0..560.0);
    let y1 = rng.random_range(0.0..400.0);
    let w = rng.random_range(5.0..80.0);
    let h = rng.random_range(5.0..80.0);
    BoundingBox::new(x1, y1, x1 + w, y1 + h).expect("positive extent")
}

pub fn random_labels(rng: &mut ChaCha8Rng, len: usize, max_label: u32) -> Vec<u32> {
    (0..len).map(|_| rng.random_range(0..=max_label)).collect()
}

pub fn random_psd(rng: &mut ChaCha8Rng, timestep: u64) -> PoseSemanticDescriptor {
    let k = rng.random_range(1..=5);
    let labels = random_labels(rng, k, 9);
    let boxes = (0..k).map(|_| random_bbox(rng)).collect();
    PoseSemanticDescriptor::new(timestep, labels, boxes, random_pose(rng, 3.0))
        .expect("non-empty descriptor")
}

/// A database of random keyframes with ids 0..size.
pub fn random_db(rng: &mut ChaCha8Rng, size: usize) -> Vec<Keyframe> {
    (0..size as u64)
        .map(|id| Keyframe {
            id,
            psd: random_psd(rng, id),
            map_points: None,
            gt_pose: None,
        })
        .collect()
}

/// Parameter draws covering both pairing modes and a range of thresholds.
pub fn random_params(rng: &mut ChaCha8Rng) -> KprParams {
    KprParams {
        delta_t_th: rng.random_range(0.3..4.0),
        epsilon: 1e-4,
        delta_iou: rng.random_range(0.2..0.95),
        class_band: rng.random_range(0.0..0.3),
        identity_tol: 1e-9,
        pairing: if rng.random::<bool>() {
            BoxPairing::Greedy
        } else {
            BoxPairing::AllPairs
        },
    }
}
