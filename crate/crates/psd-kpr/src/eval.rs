//! Metrics: trajectory alignment and ATE, run summaries, method
//! comparisons, and the retrieval micro-benchmark.

use crate::atlas::Keyframe;
use crate::descriptor::{BoundingBox, PoseSemanticDescriptor};
use crate::kpr::{self, KprParams};
use crate::pose::Pose;
use crate::record::RunRecord;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("only {matched} matched timesteps, need at least 3")]
    NoOverlap { matched: usize },
    #[error("no run records supplied")]
    EmptyInput,
    #[error("summaries cover different seed sets")]
    SeedMismatch,
    #[error("records mix methods {0:?} and {1:?}")]
    MixedMethods(String, String),
    #[error("point sets differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// A similarity transform `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Alignment {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * self.rotation * p + self.translation
    }
}

/// Least-squares rigid (or similarity) alignment of `est` onto `gt`.
///
/// Minimizes the summed squared residual over rotation, translation and,
/// when `with_scale` is set, a uniform scale. The rotation is always proper:
/// reflections are corrected through the sign of the smallest singular
/// value. Needs at least three non-collinear points.
pub fn umeyama_align(
    est: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    with_scale: bool,
) -> Result<Alignment, EvalError> {
    if est.len() != gt.len() {
        return Err(EvalError::LengthMismatch(est.len(), gt.len()));
    }
    let n = est.len();
    if n < 3 {
        return Err(EvalError::DegenerateInput(format!("{n} points, need at least 3")));
    }
    let nf = n as f64;
    let mu_est: Vector3<f64> = est.iter().sum::<Vector3<f64>>() / nf;
    let mu_gt: Vector3<f64> = gt.iter().sum::<Vector3<f64>>() / nf;

    let mut var_est = 0.0;
    let mut cov = Matrix3::zeros();
    for (e, g) in est.iter().zip(gt) {
        let ec = e - mu_est;
        let gc = g - mu_gt;
        var_est += ec.norm_squared();
        cov += gc * ec.transpose();
    }
    var_est /= nf;
    cov /= nf;

    if var_est < 1e-18 {
        return Err(EvalError::DegenerateInput("source points have no spread".into()));
    }
    let svd = cov.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let d = svd.singular_values;
    if d[0] < 1e-15 || d[1] < 1e-12 * d[0] {
        return Err(EvalError::DegenerateInput(
            "points are collinear; rotation is unobservable".into(),
        ));
    }
    let sign = if (u.determinant() * v_t.determinant()) < 0.0 {
        -1.0
    } else {
        1.0
    };
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign));
    let rotation = u * correction * v_t;
    let scale = if with_scale {
        (d[0] + d[1] + sign * d[2]) / var_est
    } else {
        1.0
    };
    let translation = mu_gt - scale * rotation * mu_est;
    Ok(Alignment {
        rotation,
        translation,
        scale,
    })
}

/// Alignment applied before computing trajectory error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    /// Compare raw translations.
    None,
    /// Rigid alignment; the default for metric data.
    Se3,
    /// Similarity alignment for scale-ambiguous (monocular) estimates.
    Sim3,
}

/// Absolute trajectory error details.
#[derive(Debug, Clone, PartialEq)]
pub struct AteReport {
    pub rmse: f64,
    pub matched: usize,
    pub dropped_est: usize,
    pub dropped_gt: usize,
}

/// RMSE of translational residuals after alignment.
///
/// Poses are associated by exact timestep match; unmatched poses on either
/// side are dropped and counted in the report.
pub fn ate_report(
    est: &[(u64, Pose)],
    gt: &[(u64, Pose)],
    mode: AlignMode,
) -> Result<AteReport, EvalError> {
    let gt_by_ts: BTreeMap<u64, &Pose> = gt.iter().map(|(ts, p)| (*ts, p)).collect();
    let mut est_points = Vec::new();
    let mut gt_points = Vec::new();
    for (ts, pose) in est {
        if let Some(gt_pose) = gt_by_ts.get(ts) {
            est_points.push(pose.scaled_translation());
            gt_points.push(gt_pose.scaled_translation());
        }
    }
    let matched = est_points.len();
    if matched < 3 {
        return Err(EvalError::NoOverlap { matched });
    }
    let alignment = match mode {
        AlignMode::None => Alignment {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        },
        AlignMode::Se3 => umeyama_align(&est_points, &gt_points, false)?,
        AlignMode::Sim3 => umeyama_align(&est_points, &gt_points, true)?,
    };
    let sum_sq: f64 = est_points
        .iter()
        .zip(&gt_points)
        .map(|(e, g)| (g - alignment.apply(e)).norm_squared())
        .sum();
    Ok(AteReport {
        rmse: (sum_sq / matched as f64).sqrt(),
        matched,
        dropped_est: est.len() - matched,
        dropped_gt: gt.len() - matched,
    })
}

/// Convenience wrapper returning only the RMSE in meters.
pub fn ate_rmse(est: &[(u64, Pose)], gt: &[(u64, Pose)], mode: AlignMode) -> Result<f64, EvalError> {
    ate_report(est, gt, mode).map(|r| r.rmse)
}

/// Aggregate statistics over a set of runs of one method.
///
/// `avg_kpr_time_ms` and `avg_candidates` average over attempts that
/// actually invoked a retriever, first per run, then across runs.
/// `avg_lost_timesteps` is the mean episode duration, averaged the same
/// way; runs without episodes do not contribute to it. The ATE column uses
/// rigid alignment and is present when at least one run had enough overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub method: String,
    pub seeds: Vec<u64>,
    pub avg_kpr_time_ms: f64,
    pub avg_candidates: f64,
    pub avg_lost_timesteps: f64,
    pub avg_local_maps: f64,
    pub ate_rmse_m: Option<f64>,
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Collapses per-run records into one summary row.
pub fn summarize(records: &[RunRecord]) -> Result<MetricsSummary, EvalError> {
    let Some(first) = records.first() else {
        return Err(EvalError::EmptyInput);
    };
    for record in records {
        if record.method != first.method {
            return Err(EvalError::MixedMethods(first.method.clone(), record.method.clone()));
        }
    }

    let mut per_run_time = Vec::new();
    let mut per_run_candidates = Vec::new();
    let mut per_run_lost = Vec::new();
    let mut per_run_maps = Vec::new();
    let mut per_run_ate = Vec::new();
    let mut seeds: Vec<u64> = records.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();

    for record in records {
        let times: Vec<f64> = record.retrieval_attempts().map(|a| a.kpr_ms).collect();
        let candidates: Vec<f64> = record
            .retrieval_attempts()
            .map(|a| a.candidates as f64)
            .collect();
        if let Some(t) = mean(&times) {
            per_run_time.push(t);
        }
        if let Some(c) = mean(&candidates) {
            per_run_candidates.push(c);
        }
        if let Some(lost) = record.mean_episode_duration() {
            per_run_lost.push(lost);
        }
        per_run_maps.push(record.final_map_count as f64);
        if let Ok(rmse) = ate_rmse(&record.estimated, &record.ground_truth, AlignMode::Se3) {
            per_run_ate.push(rmse);
        }
    }

    Ok(MetricsSummary {
        method: first.method.clone(),
        seeds,
        avg_kpr_time_ms: mean(&per_run_time).unwrap_or(0.0),
        avg_candidates: mean(&per_run_candidates).unwrap_or(0.0),
        avg_lost_timesteps: mean(&per_run_lost).unwrap_or(0.0),
        avg_local_maps: mean(&per_run_maps).unwrap_or(0.0),
        ate_rmse_m: mean(&per_run_ate),
    })
}

/// Side-by-side method comparison with pcb/baseline ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub pcb: MetricsSummary,
    pub baseline: MetricsSummary,
    pub lost_time_ratio: f64,
    pub candidate_ratio: f64,
    pub latency_ratio: f64,
}

/// Pairs two summaries from the same seeds. Ratios are pcb over baseline,
/// so a lost-time ratio below 1 means the staged filter recovered faster.
pub fn compare(pcb: &MetricsSummary, baseline: &MetricsSummary) -> Result<Comparison, EvalError> {
    if pcb.seeds != baseline.seeds {
        return Err(EvalError::SeedMismatch);
    }
    Ok(Comparison {
        pcb: pcb.clone(),
        baseline: baseline.clone(),
        lost_time_ratio: pcb.avg_lost_timesteps / baseline.avg_lost_timesteps,
        candidate_ratio: pcb.avg_candidates / baseline.avg_candidates,
        latency_ratio: pcb.avg_kpr_time_ms / baseline.avg_kpr_time_ms,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One row per method; the timing column is the second one so scripted
/// diffs can ignore it in isolation.
pub fn summary_csv(rows: &[MetricsSummary]) -> String {
    let mut out = String::from(
        "method,avg_kpr_time_ms,avg_candidates,avg_lost_timesteps,avg_local_maps,ate_rmse_m\n",
    );
    for row in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{}",
            row.method,
            row.avg_kpr_time_ms,
            row.avg_candidates,
            row.avg_lost_timesteps,
            row.avg_local_maps,
            fmt_opt(row.ate_rmse_m),
        );
    }
    out
}

pub fn comparison_csv(c: &Comparison) -> String {
    let mut out = String::from("metric,pcb,baseline,ratio\n");
    let _ = writeln!(
        out,
        "avg_lost_timesteps,{:.6},{:.6},{:.6}",
        c.pcb.avg_lost_timesteps, c.baseline.avg_lost_timesteps, c.lost_time_ratio
    );
    let _ = writeln!(
        out,
        "avg_candidates,{:.6},{:.6},{:.6}",
        c.pcb.avg_candidates, c.baseline.avg_candidates, c.candidate_ratio
    );
    let _ = writeln!(
        out,
        "avg_kpr_time_ms,{:.6},{:.6},{:.6}",
        c.pcb.avg_kpr_time_ms, c.baseline.avg_kpr_time_ms, c.latency_ratio
    );
    let _ = writeln!(
        out,
        "avg_local_maps,{:.6},{:.6},",
        c.pcb.avg_local_maps, c.baseline.avg_local_maps
    );
    let _ = writeln!(
        out,
        "ate_rmse_m,{},{},",
        fmt_opt(c.pcb.ate_rmse_m),
        fmt_opt(c.baseline.ate_rmse_m)
    );
    out
}

/// One row per lost episode of one run; timing columns come last.
pub fn episodes_csv(record: &RunRecord) -> String {
    let mut out = String::from(
        "method,seed,loss_timestep,duration,outcome,attempts,skipped,final_candidates_mean,kpr_ms_mean\n",
    );
    for episode in &record.episodes {
        let outcome = match episode.outcome {
            crate::record::EpisodeOutcome::Recovered => "recovered",
            crate::record::EpisodeOutcome::MapCreated => "map_created",
            crate::record::EpisodeOutcome::CutShort => "cut_short",
        };
        let ran: Vec<&crate::record::AttemptRecord> =
            episode.attempts.iter().filter(|a| !a.skipped).collect();
        let cand_mean = mean(&ran.iter().map(|a| a.candidates as f64).collect::<Vec<_>>());
        let time_mean = mean(&ran.iter().map(|a| a.kpr_ms).collect::<Vec<_>>());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            record.method,
            record.seed,
            episode.loss_timestep,
            episode.duration,
            outcome,
            episode.attempts.len(),
            episode.attempts.len() - ran.len(),
            fmt_opt(cand_mean),
            fmt_opt(time_mean),
        );
    }
    out
}

/// Latency measurements of the staged filter over a synthetic database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub db_size: usize,
    pub queries: usize,
    pub mean_ms: f64,
    pub p99_ms: f64,
}

pub fn bench_csv(report: &BenchReport) -> String {
    format!(
        "db_size,queries,mean_ms,p99_ms\n{},{},{:.6},{:.6}\n",
        report.db_size, report.queries, report.mean_ms, report.p99_ms
    )
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let axis = nalgebra::Unit::new_normalize(Vector3::new(
        rng.random_range(-1.0..1.0f64),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ));
    let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let r = nalgebra::Rotation3::from_axis_angle(&axis, angle).into_inner();
    let t = Vector3::new(
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
    );
    Pose::new(r, t, 1.0).expect("axis-angle rotation is proper")
}

fn random_boxes(rng: &mut ChaCha8Rng, count: usize) -> (Vec<u32>, Vec<BoundingBox>) {
    let mut labels = Vec::with_capacity(count);
    let mut boxes = Vec::with_capacity(count);
    for _ in 0..count {
        labels.push(rng.random_range(1..=8u32));
        let x1 = rng.random_range(0.0..560.0);
        let y1 = rng.random_range(0.0..400.0);
        let w = rng.random_range(20.0..80.0);
        let h = rng.random_range(20.0..80.0);
        boxes.push(BoundingBox::new(x1, y1, x1 + w, y1 + h).expect("positive extent"));
    }
    (labels, boxes)
}

/// Builds a synthetic database and times staged queries against it.
///
/// Queries are perturbed copies of randomly chosen database entries with
/// non-identity poses, so they exercise the full three-stage path. Timing
/// wraps only the filter call.
pub fn bench_kpr(db_size: usize, queries: usize, seed: u64, params: &KprParams) -> BenchReport {
    assert!(db_size >= 1, "db_size must be at least 1");
    assert!(queries >= 1, "queries must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let db: Vec<Keyframe> = (0..db_size as u64)
        .map(|id| {
            let count = rng.random_range(1..=6);
            let (labels, boxes) = random_boxes(&mut rng, count);
            Keyframe {
                id,
                psd: PoseSemanticDescriptor::new(id, labels, boxes, random_pose(&mut rng))
                    .expect("non-empty descriptor"),
                map_points: None,
                gt_pose: None,
            }
        })
        .collect();

    let mut samples_ms = Vec::with_capacity(queries);
    for _ in 0..queries {
        let base = &db[rng.random_range(0..db.len())];
        let pose = base.psd.pose().perturbed(0.05, &mut rng);
        let query = PoseSemanticDescriptor::new(
            base.psd.timestep(),
            base.psd.class_labels().to_vec(),
            base.psd.boxes().to_vec(),
            pose,
        )
        .expect("copied descriptor stays valid");
        let started = Instant::now();
        let result = kpr::query(&query, &db, params);
        let elapsed = started.elapsed().as_secs_f64() * 1e3;
        std::hint::black_box(result);
        samples_ms.push(elapsed);
    }
    samples_ms.sort_by(f64::total_cmp);
    let mean_ms = samples_ms.iter().sum::<f64>() / samples_ms.len() as f64;
    let p99_index = ((samples_ms.len() as f64 * 0.99).ceil() as usize)
        .saturating_sub(1)
        .min(samples_ms.len() - 1);
    BenchReport {
        db_size,
        queries,
        mean_ms,
        p99_ms: samples_ms[p99_index],
    }
}
