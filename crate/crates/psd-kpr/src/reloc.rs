//! The short-term relocalization state machine.
//!
//! When incremental tracking fails the system enters a lost state and gets a
//! fixed budget of `n_fail` timesteps to recover its global pose. Each lost
//! frame consumes exactly one attempt: build the query descriptor, retrieve
//! candidate keyframes from the active map, and hand them to a pluggable
//! recovery backend. If the budget runs out, the active map is terminated,
//! a fresh one is started, and tracking resumes there.
//!
//! The real pose solver is out of scope; [`OracleBackend`] stands in for it
//! by comparing ground-truth poses with configurable tolerances and noise,
//! and any genuine solver can be plugged in through [`RecoveryBackend`].

use crate::atlas::{Atlas, Keyframe};
use crate::descriptor::{Frame, PoseSemanticDescriptor};
use crate::kpr::{self, CandidateList, KprParams, Stage};
use crate::pose::Pose;
use crate::record::{AttemptRecord, EpisodeOutcome, EpisodeRecord, RunRecord, StageSizes};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RelocError {
    #[error("relocalization attempted while {0}")]
    InvalidState(String),
    #[error("keyframe {0} has no ground-truth pose for the oracle backend")]
    MissingGroundTruth(u64),
    #[error("no ground-truth pose for query timestep {0}")]
    MissingQueryGroundTruth(u64),
    #[error("loss schedule entry {0} does not match any frame timestep")]
    ScheduleOutOfRange(u64),
    #[error("loss schedule must be strictly increasing")]
    NonMonotonicSchedule,
    #[error("frame timesteps must strictly increase")]
    NonMonotonicFrames,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Which retriever feeds the recovery backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrievalMethod {
    /// The staged pose-class-box filter with identity-pose routing.
    Pcb,
    /// The bag-of-labels comparison retriever.
    BaselineL1 { top_k: usize },
}

impl RetrievalMethod {
    pub fn label(&self) -> &'static str {
        match self {
            RetrievalMethod::Pcb => "pcb",
            RetrievalMethod::BaselineL1 { .. } => "baseline",
        }
    }
}

/// Driver parameters: the failure budget and the retrieval configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RelocParams {
    /// Lost-state budget in timesteps; one frame consumes one unit.
    pub n_fail: u32,
    pub kpr: KprParams,
    pub method: RetrievalMethod,
}

impl Default for RelocParams {
    fn default() -> Self {
        Self {
            n_fail: 20,
            kpr: KprParams::default(),
            method: RetrievalMethod::Pcb,
        }
    }
}

impl RelocParams {
    pub fn validate(&self) -> Result<(), RelocError> {
        if self.n_fail < 1 {
            return Err(RelocError::InvalidParams("n_fail must be at least 1".into()));
        }
        if let RetrievalMethod::BaselineL1 { top_k } = self.method {
            if top_k < 1 {
                return Err(RelocError::InvalidParams("top_k must be at least 1".into()));
            }
        }
        self.kpr
            .validate()
            .map_err(|e| RelocError::InvalidParams(e.to_string()))
    }
}

/// Tracking / lost / failed, the three operating modes of the driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackingState {
    Tracking,
    /// Currently lost; the counter is the attempt being made, in `[1, n_fail]`.
    Lost { attempts: u32 },
    /// Budget exhausted; the map was terminated.
    Failed,
}

/// What one backend invocation produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryOutcome {
    success: bool,
    recovered_pose: Option<Pose>,
    used_candidates: CandidateList,
}

impl RecoveryOutcome {
    pub fn succeeded(pose: Pose, used_candidates: CandidateList) -> Self {
        Self {
            success: true,
            recovered_pose: Some(pose),
            used_candidates,
        }
    }

    pub fn failed(used_candidates: CandidateList) -> Self {
        Self {
            success: false,
            recovered_pose: None,
            used_candidates,
        }
    }

    pub fn success(&self) -> bool {
        self.success
    }

    /// Present exactly when the attempt succeeded.
    pub fn recovered_pose(&self) -> Option<&Pose> {
        self.recovered_pose.as_ref()
    }

    pub fn used_candidates(&self) -> &CandidateList {
        &self.used_candidates
    }
}

/// A pluggable global-pose recovery step.
///
/// Implemented for closures, so tests can inject trivial behaviors:
/// `|cands, _db, _frame| Ok(RecoveryOutcome::failed(cands.clone()))`.
pub trait RecoveryBackend {
    fn recover(
        &mut self,
        candidates: &CandidateList,
        db: &[Keyframe],
        frame: &Frame,
    ) -> Result<RecoveryOutcome, RelocError>;
}

impl<F> RecoveryBackend for F
where
    F: FnMut(&CandidateList, &[Keyframe], &Frame) -> Result<RecoveryOutcome, RelocError>,
{
    fn recover(
        &mut self,
        candidates: &CandidateList,
        db: &[Keyframe],
        frame: &Frame,
    ) -> Result<RecoveryOutcome, RelocError> {
        self(candidates, db, frame)
    }
}

/// Ground-truth-based recovery stand-in.
///
/// Succeeds when some candidate's ground-truth pose lies within both a
/// translation and a geodesic rotation tolerance of the query's ground
/// truth. The recovered pose is the query ground truth perturbed by
/// zero-mean noise of the configured magnitude; all randomness is
/// deterministic in the seed.
pub struct OracleBackend {
    gt_by_timestep: BTreeMap<u64, Pose>,
    trans_tol: f64,
    rot_tol: f64,
    recovered_noise: f64,
    rng: ChaCha8Rng,
}

impl OracleBackend {
    pub fn new(
        ground_truth: &[(u64, Pose)],
        trans_tol: f64,
        rot_tol: f64,
        recovered_noise: f64,
        seed: u64,
    ) -> Self {
        Self {
            gt_by_timestep: ground_truth.iter().cloned().collect(),
            trans_tol,
            rot_tol,
            recovered_noise,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl RecoveryBackend for OracleBackend {
    fn recover(
        &mut self,
        candidates: &CandidateList,
        db: &[Keyframe],
        frame: &Frame,
    ) -> Result<RecoveryOutcome, RelocError> {
        let query_gt = self
            .gt_by_timestep
            .get(&frame.timestep)
            .ok_or(RelocError::MissingQueryGroundTruth(frame.timestep))?
            .clone();
        oracle_recover(
            candidates,
            db,
            &query_gt,
            self.trans_tol,
            self.rot_tol,
            self.recovered_noise,
            &mut self.rng,
        )
    }
}

/// Core of [`OracleBackend`], usable directly in tests.
pub fn oracle_recover(
    candidates: &CandidateList,
    db: &[Keyframe],
    query_gt: &Pose,
    trans_tol: f64,
    rot_tol: f64,
    recovered_noise: f64,
    rng: &mut impl Rng,
) -> Result<RecoveryOutcome, RelocError> {
    let mut hit = false;
    for &id in candidates.ids() {
        let kf = db
            .iter()
            .find(|kf| kf.id == id)
            .ok_or(RelocError::MissingGroundTruth(id))?;
        let gt = kf
            .gt_pose
            .as_ref()
            .ok_or(RelocError::MissingGroundTruth(id))?;
        if gt.translation_distance_to(query_gt) <= trans_tol
            && gt.rotation_angle_to(query_gt) <= rot_tol
        {
            hit = true;
            break;
        }
    }
    if !hit {
        return Ok(RecoveryOutcome::failed(candidates.clone()));
    }
    let pose = if recovered_noise > 0.0 {
        query_gt.perturbed(recovered_noise, rng)
    } else {
        query_gt.clone()
    };
    Ok(RecoveryOutcome::succeeded(pose, candidates.clone()))
}

/// Result of one lost-frame attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct AttemptOutput {
    pub state: TrackingState,
    pub outcome: RecoveryOutcome,
    pub record: AttemptRecord,
    /// True when this attempt exhausted the budget and terminated the map.
    pub map_created: bool,
}

/// Runs one relocalization attempt for a lost frame.
///
/// Keyframes are re-fetched from the active map on every attempt. Frames
/// with zero detections skip retrieval and the backend entirely but still
/// consume one unit of the budget: time passes whether or not the detector
/// saw anything. On success the driver returns to tracking; on failure the
/// attempt counter advances, and when it exceeds `n_fail` the map is
/// terminated and a fresh one becomes active.
pub fn reloc_attempt(
    frame: &Frame,
    atlas: &mut Atlas,
    state: &TrackingState,
    params: &RelocParams,
    backend: &mut dyn RecoveryBackend,
) -> Result<AttemptOutput, RelocError> {
    let attempts = match state {
        TrackingState::Lost { attempts } => *attempts,
        other => return Err(RelocError::InvalidState(format!("{other:?}"))),
    };

    let db = atlas.active_map().keyframes();
    let (outcome, record) = match PoseSemanticDescriptor::from_frame(frame) {
        None => {
            log::debug!("timestep {}: no detections, attempt skipped", frame.timestep);
            let outcome = RecoveryOutcome::failed(CandidateList::empty(Stage::AfterBox));
            let record = AttemptRecord {
                timestep: frame.timestep,
                skipped: true,
                variant: None,
                stage_sizes: None,
                candidates: 0,
                kpr_ms: 0.0,
                success: false,
            };
            (outcome, record)
        }
        Some(query) => {
            let (variant, stage_sizes, final_list, kpr_ms) = match params.method {
                RetrievalMethod::Pcb => {
                    let started = Instant::now();
                    let (variant, staged) = kpr::query_staged(&query, db, &params.kpr);
                    let kpr_ms = started.elapsed().as_secs_f64() * 1e3;
                    let sizes = StageSizes {
                        after_pose: staged.after_pose.as_ref().map(CandidateList::len),
                        after_class: staged.after_class.len(),
                        after_box: staged.after_box.len(),
                    };
                    (Some(variant), Some(sizes), staged.after_box, kpr_ms)
                }
                RetrievalMethod::BaselineL1 { top_k } => {
                    let started = Instant::now();
                    let list = kpr::baseline_l1(&query, db, top_k);
                    let kpr_ms = started.elapsed().as_secs_f64() * 1e3;
                    (None, None, list, kpr_ms)
                }
            };
            let outcome = backend.recover(&final_list, db, frame)?;
            let record = AttemptRecord {
                timestep: frame.timestep,
                skipped: false,
                variant,
                stage_sizes,
                candidates: final_list.len(),
                kpr_ms,
                success: outcome.success(),
            };
            (outcome, record)
        }
    };

    let (next_state, map_created) = if outcome.success() {
        (TrackingState::Tracking, false)
    } else if attempts < params.n_fail {
        (TrackingState::Lost { attempts: attempts + 1 }, false)
    } else {
        atlas.start_new_map();
        log::info!(
            "timestep {}: budget of {} exhausted, map terminated (now {} maps)",
            frame.timestep,
            params.n_fail,
            atlas.map_count()
        );
        (TrackingState::Failed, true)
    };

    Ok(AttemptOutput {
        state: next_state,
        outcome,
        record,
        map_created,
    })
}

/// Drives a whole frame sequence through the state machine.
///
/// Tracking frames with at least one detection become keyframes in the
/// active map (this harness promotes every such frame). At each scheduled
/// timestep the state flips to lost; the first lost frame keeps its last
/// pose estimate while later lost frames carry the identity pose, which is
/// what routes them to the class-box variant. After a terminated map,
/// tracking resumes at the next frame using its ground-truth pose (the
/// simulator knows it), mirroring map re-initialization without a monocular
/// bootstrap.
pub fn run_sequence(
    frames: &[Frame],
    ground_truth: &[(u64, Pose)],
    loss_schedule: &[u64],
    atlas: &mut Atlas,
    params: &RelocParams,
    backend: &mut dyn RecoveryBackend,
    seed: u64,
) -> Result<RunRecord, RelocError> {
    params.validate()?;
    if !frames.windows(2).all(|w| w[0].timestep < w[1].timestep) {
        return Err(RelocError::NonMonotonicFrames);
    }
    if !loss_schedule.windows(2).all(|w| w[0] < w[1]) {
        return Err(RelocError::NonMonotonicSchedule);
    }
    let frame_timesteps: BTreeSet<u64> = frames.iter().map(|f| f.timestep).collect();
    for &ts in loss_schedule {
        if !frame_timesteps.contains(&ts) {
            return Err(RelocError::ScheduleOutOfRange(ts));
        }
    }
    let schedule: BTreeSet<u64> = loss_schedule.iter().copied().collect();
    let gt_by_timestep: BTreeMap<u64, Pose> = ground_truth.iter().cloned().collect();

    let mut state = TrackingState::Tracking;
    let mut resume_at_gt = false;
    let mut next_keyframe_id: u64 = 0;
    let mut estimated: Vec<(u64, Pose)> = Vec::new();
    let mut episodes: Vec<EpisodeRecord> = Vec::new();
    let mut open_episode: Option<EpisodeRecord> = None;

    for frame in frames {
        if state == TrackingState::Tracking && schedule.contains(&frame.timestep) {
            state = TrackingState::Lost { attempts: 1 };
            open_episode = Some(EpisodeRecord {
                loss_timestep: frame.timestep,
                duration: 0,
                attempts: Vec::new(),
                outcome: EpisodeOutcome::CutShort,
            });
            log::debug!("timestep {}: tracking loss induced", frame.timestep);
        }

        match state {
            TrackingState::Tracking => {
                let pose = if resume_at_gt {
                    resume_at_gt = false;
                    gt_by_timestep
                        .get(&frame.timestep)
                        .cloned()
                        .unwrap_or_else(|| frame.pose_estimate.clone())
                } else {
                    frame.pose_estimate.clone()
                };
                estimated.push((frame.timestep, pose.clone()));
                let mut tracked = frame.clone();
                tracked.pose_estimate = pose;
                if let Some(psd) = PoseSemanticDescriptor::from_frame(&tracked) {
                    let kf = Keyframe {
                        id: next_keyframe_id,
                        psd,
                        map_points: None,
                        gt_pose: gt_by_timestep.get(&frame.timestep).cloned(),
                    };
                    next_keyframe_id += 1;
                    atlas
                        .active_map_mut()
                        .push(kf)
                        .expect("driver-assigned keyframe ids strictly increase");
                }
            }
            TrackingState::Lost { attempts } => {
                // Attempts after the first carry an identity pose estimate:
                // a lost monocular camera has nothing else to report.
                let query_frame = if attempts == 1 {
                    frame.clone()
                } else {
                    let mut f = frame.clone();
                    f.pose_estimate = Pose::identity();
                    f
                };
                let output = reloc_attempt(&query_frame, atlas, &state, params, backend)?;
                let episode = open_episode
                    .as_mut()
                    .expect("lost state always has an open episode");
                episode.attempts.push(output.record);
                episode.duration += 1;

                if output.outcome.success() {
                    let pose = output
                        .outcome
                        .recovered_pose()
                        .expect("successful outcome carries a pose")
                        .clone();
                    estimated.push((frame.timestep, pose));
                    episode.outcome = EpisodeOutcome::Recovered;
                    episodes.push(open_episode.take().expect("episode open"));
                    state = TrackingState::Tracking;
                } else {
                    match output.state {
                        TrackingState::Failed => {
                            episode.outcome = EpisodeOutcome::MapCreated;
                            episodes.push(open_episode.take().expect("episode open"));
                            state = TrackingState::Tracking;
                            resume_at_gt = true;
                        }
                        next => state = next,
                    }
                }
            }
            TrackingState::Failed => unreachable!("driver never leaves a frame in Failed"),
        }
    }

    if let Some(mut episode) = open_episode.take() {
        episode.outcome = EpisodeOutcome::CutShort;
        episodes.push(episode);
    }

    Ok(RunRecord {
        method: params.method.label().to_string(),
        seed,
        episodes,
        final_map_count: atlas.map_count(),
        estimated,
        ground_truth: ground_truth.to_vec(),
    })
}
