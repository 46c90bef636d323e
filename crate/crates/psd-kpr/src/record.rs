//! Event logs produced by sequence runs and consumed by the metrics layer.

use crate::kpr::Variant;
use crate::pose::Pose;
use serde::{Deserialize, Serialize};

/// Candidate counts surviving each filter stage of one retrieval call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSizes {
    /// `None` when the pose stage was skipped (class-box variant).
    pub after_pose: Option<usize>,
    pub after_class: usize,
    pub after_box: usize,
}

/// One relocalization attempt inside a lost episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub timestep: u64,
    /// True when the frame had zero detections: no retrieval ran, but the
    /// attempt still consumed one unit of the failure budget.
    pub skipped: bool,
    /// Routing decision; `None` for skipped attempts and for the baseline
    /// retriever, which has no staged variants.
    pub variant: Option<Variant>,
    /// Per-stage survivor counts; `None` for skipped or baseline attempts.
    pub stage_sizes: Option<StageSizes>,
    /// Final candidate count handed to the recovery backend.
    pub candidates: usize,
    /// Wall time of the retrieval call only; backend and I/O excluded.
    pub kpr_ms: f64,
    pub success: bool,
}

/// How a lost episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpisodeOutcome {
    /// The backend recovered a pose within the budget.
    Recovered,
    /// The budget ran out; the map was terminated and a new one created.
    MapCreated,
    /// The frame sequence ended while still lost.
    CutShort,
}

/// One lost episode: from the induced loss until recovery or map loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub loss_timestep: u64,
    /// Timesteps spent lost; equals the number of attempts consumed.
    pub duration: u32,
    pub attempts: Vec<AttemptRecord>,
    pub outcome: EpisodeOutcome,
}

/// Everything recorded about one sequence run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Retrieval method label, `"pcb"` or `"baseline"`.
    pub method: String,
    /// Seed of this run (drives backend noise, not the scenario).
    pub seed: u64,
    pub episodes: Vec<EpisodeRecord>,
    pub final_map_count: usize,
    /// Pose estimates emitted while tracking or at recovery; lost frames
    /// emit nothing.
    pub estimated: Vec<(u64, Pose)>,
    pub ground_truth: Vec<(u64, Pose)>,
}

impl RunRecord {
    /// Total timesteps spent lost across all episodes.
    pub fn total_lost_timesteps(&self) -> u64 {
        self.episodes.iter().map(|e| u64::from(e.duration)).sum()
    }

    /// Mean episode duration; `None` when the run had no episodes.
    pub fn mean_episode_duration(&self) -> Option<f64> {
        if self.episodes.is_empty() {
            return None;
        }
        Some(self.total_lost_timesteps() as f64 / self.episodes.len() as f64)
    }

    /// All attempts that actually invoked a retriever.
    pub fn retrieval_attempts(&self) -> impl Iterator<Item = &AttemptRecord> {
        self.episodes
            .iter()
            .flat_map(|e| e.attempts.iter())
            .filter(|a| !a.skipped)
    }
}
