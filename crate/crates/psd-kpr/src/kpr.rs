//! The pose-class-box keyframe place-recognition filter.
//!
//! Retrieval runs as up to three filters over the keyframes of the active
//! map, each shrinking the candidate set:
//!
//! 1. **Pose constraint** — keep keyframes whose homogeneous pose matrix
//!    lies within a Frobenius-distance shell `epsilon <= dT <= delta_t_th`
//!    of the query pose. The lower bound drops exact duplicates.
//! 2. **Class constraint** — score every survivor by the absolute gap
//!    between the L2 norms of the integer class-label lists, take the
//!    minimum score as an adaptive threshold, and keep candidates inside a
//!    relative band above it.
//! 3. **Box constraint** — pair up same-class bounding boxes between query
//!    and candidate and require every query object to be re-found with an
//!    IoU above `delta_iou`.
//!
//! A lost monocular camera has its pose reset to the identity, which makes
//! the pose shell meaningless; such queries skip stage 1 and run the reduced
//! class-box variant. [`select_variant`] makes that routing decision.
//!
//! All operations here are pure: they never mutate the database or query,
//! and are safe to call from any number of threads.

use crate::atlas::Keyframe;
use crate::descriptor::{BoundingBox, PoseSemanticDescriptor};
use crate::pose::Pose;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Pose-shell radius, from the reference tuning.
pub const DEFAULT_DELTA_T_TH: f64 = 0.5;
/// Numeric floor of the pose shell; drops exact duplicates.
pub const DEFAULT_EPSILON: f64 = 1e-4;
/// Minimum box overlap counted as the same object re-seen.
pub const DEFAULT_DELTA_IOU: f64 = 0.9;
/// Relative width of the adaptive class-score band.
pub const DEFAULT_CLASS_BAND: f64 = 0.1;
/// Frobenius tolerance below which a pose counts as the identity.
pub const DEFAULT_IDENTITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KprError {
    #[error("class score needs non-empty label lists")]
    EmptyLabelList,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// How query and candidate boxes are paired before counting overlaps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoxPairing {
    /// Same-class greedy matching by descending IoU, each box used at most
    /// once. Under this rule the overlap count never exceeds the query's
    /// object count, so the retention test means "every query object found".
    Greedy,
    /// Count every same-class pair above the threshold (permissive ablation).
    AllPairs,
}

/// Tuning knobs for the filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KprParams {
    /// Pose-shell radius (Frobenius distance upper bound).
    pub delta_t_th: f64,
    /// Pose-shell numeric floor (lower bound), must stay below `delta_t_th`.
    pub epsilon: f64,
    /// Box-overlap threshold as a fraction in (0, 1].
    pub delta_iou: f64,
    /// Relative width of the class-score band above the adaptive minimum.
    pub class_band: f64,
    /// Tolerance for the identity-pose routing test.
    pub identity_tol: f64,
    /// Box pairing rule used by the box constraint.
    pub pairing: BoxPairing,
}

impl Default for KprParams {
    fn default() -> Self {
        Self {
            delta_t_th: DEFAULT_DELTA_T_TH,
            epsilon: DEFAULT_EPSILON,
            delta_iou: DEFAULT_DELTA_IOU,
            class_band: DEFAULT_CLASS_BAND,
            identity_tol: DEFAULT_IDENTITY_TOL,
            pairing: BoxPairing::Greedy,
        }
    }
}

impl KprParams {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail validation
    pub fn validate(&self) -> Result<(), KprError> {
        if !(self.epsilon > 0.0 && self.epsilon < self.delta_t_th) {
            return Err(KprError::InvalidParams(format!(
                "need 0 < epsilon < delta_t_th, got epsilon = {}, delta_t_th = {}",
                self.epsilon, self.delta_t_th
            )));
        }
        if !(self.delta_iou > 0.0 && self.delta_iou <= 1.0) {
            return Err(KprError::InvalidParams(format!(
                "delta_iou must lie in (0, 1], got {}",
                self.delta_iou
            )));
        }
        if !(self.class_band >= 0.0) {
            return Err(KprError::InvalidParams(format!(
                "class_band must be >= 0, got {}",
                self.class_band
            )));
        }
        if !(self.identity_tol > 0.0) {
            return Err(KprError::InvalidParams(format!(
                "identity_tol must be > 0, got {}",
                self.identity_tol
            )));
        }
        Ok(())
    }
}

/// Which filter stage produced a candidate list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    AfterPose,
    AfterClass,
    AfterBox,
}

/// An ordered list of keyframe ids surviving some filter stage.
///
/// Ids follow database order (ascending keyframe id) for the staged filters;
/// the baseline retriever ranks by score instead. Final lists from any
/// retriever carry the [`Stage::AfterBox`] marker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateList {
    ids: Vec<u64>,
    stage: Stage,
}

impl CandidateList {
    /// Builds a list directly. The caller is responsible for ids being
    /// unique and resolvable in the queried map.
    pub fn new(ids: Vec<u64>, stage: Stage) -> Self {
        debug_assert!(
            {
                let mut seen = std::collections::HashSet::new();
                ids.iter().all(|id| seen.insert(id))
            },
            "candidate ids must be unique"
        );
        Self { ids, stage }
    }

    pub fn empty(stage: Stage) -> Self {
        Self { ids: Vec::new(), stage }
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.ids.contains(&id)
    }

    /// Resolves the ids against a keyframe slice, skipping dangling ids.
    pub fn resolve<'a>(&self, db: &'a [Keyframe]) -> Vec<&'a Keyframe> {
        self.ids
            .iter()
            .filter_map(|&id| keyframe_by_id(db, id))
            .collect()
    }
}

/// Routing decision for a query: the full three-stage filter, or the
/// reduced class-box variant used for identity-pose (lost) queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    FullPcb,
    ClassBox,
}

/// Per-stage outputs of one query, for diagnostics and invariant checks.
#[derive(Debug, Clone, PartialEq)]
pub struct StagedCandidates {
    /// `None` when the pose stage was skipped (class-box variant).
    pub after_pose: Option<CandidateList>,
    pub after_class: CandidateList,
    pub after_box: CandidateList,
}

impl StagedCandidates {
    pub fn final_list(&self) -> &CandidateList {
        &self.after_box
    }
}

fn keyframe_by_id(db: &[Keyframe], id: u64) -> Option<&Keyframe> {
    db.iter().find(|kf| kf.id == id)
}

/// Frobenius distance between the materialized 4x4 pose matrices.
///
/// This is a metric on pose matrices: non-negative, symmetric, zero exactly
/// on equal matrices, and it satisfies the triangle inequality.
pub fn frobenius_delta(a: &Pose, b: &Pose) -> f64 {
    (a.matrix() - b.matrix()).norm()
}

/// Stage 1: keep keyframes inside the pose shell, in database order.
pub fn pose_constraint(
    query: &PoseSemanticDescriptor,
    db: &[Keyframe],
    params: &KprParams,
) -> CandidateList {
    let ids = db
        .iter()
        .filter(|kf| {
            let d = frobenius_delta(query.pose(), kf.psd.pose());
            params.epsilon <= d && d <= params.delta_t_th
        })
        .map(|kf| kf.id)
        .collect();
    CandidateList::new(ids, Stage::AfterPose)
}

fn label_norm(labels: &[u32]) -> f64 {
    labels
        .iter()
        .map(|&l| f64::from(l) * f64::from(l))
        .sum::<f64>()
        .sqrt()
}

/// Similarity of two class-label lists: the absolute gap between their L2
/// norms. Order-independent and defined for lists of different lengths,
/// but integer labels make distinct multisets collide (e.g. `{1,1,1,1}` and
/// `{4}` both have norm gap zero against each other) — the box constraint
/// exists to break those ties.
pub fn class_score(labels_a: &[u32], labels_b: &[u32]) -> Result<f64, KprError> {
    if labels_a.is_empty() || labels_b.is_empty() {
        return Err(KprError::EmptyLabelList);
    }
    Ok((label_norm(labels_a) - label_norm(labels_b)).abs())
}

fn within_band(score: f64, threshold: f64, band: f64) -> bool {
    threshold <= score && score <= threshold * (1.0 + band)
}

/// Stage 2: adaptive class-score band.
///
/// Scores every candidate, takes the minimum as the threshold, and keeps
/// candidates whose score lies in `[threshold, threshold * (1 + band)]`.
/// With a zero threshold the band degenerates to exact score matches.
/// Empty input returns empty output (the minimum over nothing is skipped).
pub fn class_constraint(
    query: &PoseSemanticDescriptor,
    db: &[Keyframe],
    candidate_ids: &[u64],
    params: &KprParams,
) -> CandidateList {
    let query_norm = label_norm(query.class_labels());
    let scored: Vec<(u64, f64)> = candidate_ids
        .iter()
        .filter_map(|&id| {
            keyframe_by_id(db, id)
                .map(|kf| (id, (query_norm - label_norm(kf.psd.class_labels())).abs()))
        })
        .collect();
    let Some(threshold) = scored.iter().map(|&(_, s)| s).reduce(f64::min) else {
        return CandidateList::empty(Stage::AfterClass);
    };
    let ids = scored
        .into_iter()
        .filter(|&(_, s)| within_band(s, threshold, params.class_band))
        .map(|(id, _)| id)
        .collect();
    CandidateList::new(ids, Stage::AfterClass)
}

/// Intersection over union of two boxes, in `[0, 1]`.
///
/// 1 exactly for identical boxes, 0 exactly for boxes with disjoint
/// interiors. Well-formedness (`x1 < x2`, `y1 < y2`) is enforced by
/// [`BoundingBox::new`].
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x2().min(b.x2()) - a.x1().max(b.x1())).max(0.0);
    let iy = (a.y2().min(b.y2()) - a.y1().max(b.y1())).max(0.0);
    let inter = ix * iy;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

fn greedy_overlap_count(query: &PoseSemanticDescriptor, cand: &PoseSemanticDescriptor, delta_iou: f64) -> usize {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (qi, (ql, qb)) in query.class_labels().iter().zip(query.boxes()).enumerate() {
        for (ci, (cl, cb)) in cand.class_labels().iter().zip(cand.boxes()).enumerate() {
            if ql == cl {
                pairs.push((iou(qb, cb), qi, ci));
            }
        }
    }
    // Descending IoU; index order breaks exact ties deterministically.
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut query_used = vec![false; query.len()];
    let mut cand_used = vec![false; cand.len()];
    let mut count = 0;
    for (overlap, qi, ci) in pairs {
        if overlap <= delta_iou {
            // Sorted descending: nothing below this point can count.
            break;
        }
        if query_used[qi] || cand_used[ci] {
            continue;
        }
        query_used[qi] = true;
        cand_used[ci] = true;
        count += 1;
    }
    count
}

fn all_pairs_overlap_count(query: &PoseSemanticDescriptor, cand: &PoseSemanticDescriptor, delta_iou: f64) -> usize {
    let mut count = 0;
    for (ql, qb) in query.class_labels().iter().zip(query.boxes()) {
        for (cl, cb) in cand.class_labels().iter().zip(cand.boxes()) {
            if ql == cl && iou(qb, cb) > delta_iou {
                count += 1;
            }
        }
    }
    count
}

/// Stage 3: keep candidates in which every query object is re-found.
///
/// For each candidate, boxes are paired per [`BoxPairing`], overlaps above
/// `delta_iou` are counted, and the candidate is retained when the count
/// reaches the query's object count.
pub fn box_constraint(
    query: &PoseSemanticDescriptor,
    db: &[Keyframe],
    candidate_ids: &[u64],
    params: &KprParams,
) -> CandidateList {
    let need = query.len();
    let ids = candidate_ids
        .iter()
        .filter(|&&id| {
            keyframe_by_id(db, id).is_some_and(|kf| {
                let count = match params.pairing {
                    BoxPairing::Greedy => greedy_overlap_count(query, &kf.psd, params.delta_iou),
                    BoxPairing::AllPairs => all_pairs_overlap_count(query, &kf.psd, params.delta_iou),
                };
                count >= need
            })
        })
        .copied()
        .collect();
    CandidateList::new(ids, Stage::AfterBox)
}

/// Routes a query to the full filter or the reduced class-box variant.
///
/// Identity is decided by Frobenius distance against the identity matrix
/// with a small tolerance, since floating-point lost-state poses are never
/// bitwise identity.
pub fn select_variant(query_pose: &Pose, params: &KprParams) -> Variant {
    if frobenius_delta(query_pose, &Pose::identity()) > params.identity_tol {
        Variant::FullPcb
    } else {
        Variant::ClassBox
    }
}

/// Full three-stage filter with per-stage outputs.
pub fn pcb_staged(
    query: &PoseSemanticDescriptor,
    db: &[Keyframe],
    params: &KprParams,
) -> StagedCandidates {
    let after_pose = pose_constraint(query, db, params);
    let after_class = class_constraint(query, db, after_pose.ids(), params);
    let after_box = box_constraint(query, db, after_class.ids(), params);
    StagedCandidates {
        after_pose: Some(after_pose),
        after_class,
        after_box,
    }
}

/// Full three-stage filter: pose, then class, then box.
pub fn pcb(query: &PoseSemanticDescriptor, db: &[Keyframe], params: &KprParams) -> CandidateList {
    pcb_staged(query, db, params).after_box
}

/// Reduced two-stage filter with per-stage outputs; the pose gate is skipped.
pub fn cb_staged(
    query: &PoseSemanticDescriptor,
    db: &[Keyframe],
    params: &KprParams,
) -> StagedCandidates {
    let all_ids: Vec<u64> = db.iter().map(|kf| kf.id).collect();
    let after_class = class_constraint(query, db, &all_ids, params);
    let after_box = box_constraint(query, db, after_class.ids(), params);
    StagedCandidates {
        after_pose: None,
        after_class,
        after_box,
    }
}

/// Reduced two-stage filter: class, then box, over the whole database.
///
/// Whenever the database-wide class-score minimum is attained inside the
/// query's pose shell, this result contains [`pcb`]'s (skipping a filter
/// can only widen retrieval). That containment is not unconditional: the
/// adaptive threshold re-anchors on each candidate set, so a shell whose
/// own minimum sits above the database-wide one selects a band the full
/// database pass does not.
pub fn cb(query: &PoseSemanticDescriptor, db: &[Keyframe], params: &KprParams) -> CandidateList {
    cb_staged(query, db, params).after_box
}

/// Runs the query through the variant chosen by [`select_variant`].
pub fn query(
    query_psd: &PoseSemanticDescriptor,
    db: &[Keyframe],
    params: &KprParams,
) -> (Variant, CandidateList) {
    let (variant, staged) = query_staged(query_psd, db, params);
    (variant, staged.after_box)
}

/// Like [`query`], but keeps the intermediate stage outputs.
pub fn query_staged(
    query_psd: &PoseSemanticDescriptor,
    db: &[Keyframe],
    params: &KprParams,
) -> (Variant, StagedCandidates) {
    match select_variant(query_psd.pose(), params) {
        Variant::FullPcb => (Variant::FullPcb, pcb_staged(query_psd, db, params)),
        Variant::ClassBox => (Variant::ClassBox, cb_staged(query_psd, db, params)),
    }
}

fn histogram(labels: &[u32]) -> BTreeMap<u32, f64> {
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0.0) += 1.0;
    }
    let total = labels.len() as f64;
    for v in counts.values_mut() {
        *v /= total;
    }
    counts
}

fn l1_distance(a: &BTreeMap<u32, f64>, b: &BTreeMap<u32, f64>) -> f64 {
    let mut dist = 0.0;
    for (label, &va) in a {
        dist += (va - b.get(label).copied().unwrap_or(0.0)).abs();
    }
    for (label, &vb) in b {
        if !a.contains_key(label) {
            dist += vb;
        }
    }
    dist
}

/// Bag-of-labels comparison retriever.
///
/// Builds normalized class-label histograms, scores candidates by
/// `1 - L1/2` (1 for identical histograms, 0 for disjoint label sets), and
/// returns the `top_k` best, ties broken by ascending keyframe id. Entirely
/// pose-blind: it stands in for classical single-score keyframe retrieval.
///
/// Panics if `top_k` is zero.
pub fn baseline_l1(query: &PoseSemanticDescriptor, db: &[Keyframe], top_k: usize) -> CandidateList {
    assert!(top_k >= 1, "top_k must be at least 1");
    let query_hist = histogram(query.class_labels());
    let mut scored: Vec<(f64, u64)> = db
        .iter()
        .map(|kf| {
            let score = 1.0 - 0.5 * l1_distance(&query_hist, &histogram(kf.psd.class_labels()));
            (score, kf.id)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let ids = scored.into_iter().take(top_k).map(|(_, id)| id).collect();
    CandidateList::new(ids, Stage::AfterBox)
}

/// Histogram score used by [`baseline_l1`], exposed for testing and reports.
pub fn baseline_score(labels_a: &[u32], labels_b: &[u32]) -> Result<f64, KprError> {
    if labels_a.is_empty() || labels_b.is_empty() {
        return Err(KprError::EmptyLabelList);
    }
    Ok(1.0 - 0.5 * l1_distance(&histogram(labels_a), &histogram(labels_b)))
}
