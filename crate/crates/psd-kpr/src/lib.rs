//! Keyframe place recognition and short-term relocalization from
//! pose-semantic descriptors.
//!
//! When a keyframe-based monocular SLAM system loses incremental tracking,
//! it has a short window to recover its global pose before the map is
//! abandoned. This crate implements the retrieval side of that problem:
//! every keyframe carries a compact multimodal descriptor (object class
//! labels, 2D bounding boxes, and the camera pose — no pixels), and a
//! staged pose/class/box filter selects candidate keyframes for a pluggable
//! pose-recovery backend. A deterministic simulator, trajectory metrics,
//! and file formats round out a complete evaluation harness.
//!
//! The matching [`mdbook` guide](https://rust-lang.github.io/mdBook/) under
//! `book/` walks through each concept; its code snippets are compiled and
//! run as this crate's test suite.
//!
//! # Quick start
//!
//! Generate a small scenario, replay it through the relocalization state
//! machine, and summarize the outcome:
//!
//! ```
//! use psd_kpr::eval::summarize;
//! use psd_kpr::reloc::{run_sequence, OracleBackend, RelocParams};
//! use psd_kpr::sim::{generate_scenario, render_frames, ScenarioConfig};
//! use psd_kpr::Atlas;
//!
//! let config = ScenarioConfig {
//!     n_frames: 120,
//!     n_losses: 2,
//!     ..ScenarioConfig::default()
//! };
//! let scenario = generate_scenario(&config, 7).unwrap();
//! let frames = render_frames(&scenario);
//!
//! let params = RelocParams::default();
//! let mut backend = OracleBackend::new(&scenario.trajectory, 0.5, 0.5, 0.0, 7);
//! let mut atlas = Atlas::new();
//! let record = run_sequence(
//!     &frames,
//!     &scenario.trajectory,
//!     &scenario.loss_schedule,
//!     &mut atlas,
//!     &params,
//!     &mut backend,
//!     7,
//! )
//! .unwrap();
//!
//! assert_eq!(record.episodes.len(), 2);
//! let summary = summarize(&[record]).unwrap();
//! assert!(summary.avg_lost_timesteps >= 1.0);
//! ```

pub mod atlas;
pub mod descriptor;
pub mod eval;
pub mod io;
pub mod kpr;
pub mod pose;
pub mod record;
pub mod reloc;
pub mod sim;

pub use atlas::{Atlas, Keyframe, LocalMap};
pub use descriptor::{BoundingBox, Detection, Frame, PoseSemanticDescriptor, SemanticMatrix};
pub use kpr::{CandidateList, KprParams, Variant};
pub use pose::Pose;
pub use record::RunRecord;
pub use reloc::{RelocParams, TrackingState};
pub use sim::Scenario;
