//! Command-line harness: `simulate` makes synthetic scenarios, `run`
//! replays them through the relocalization state machine, `eval` aggregates
//! run records into CSV tables, and `bench` measures retrieval latency.
//!
//! Exit codes are fixed for scripting: 0 ok, 2 configuration error, 3 I/O
//! error, 4 semantic inconsistency between otherwise-valid inputs. The
//! `KPR_LOG` environment variable (error|warn|info|debug) controls logging.

use clap::{Parser, Subcommand, ValueEnum};
use psd_kpr::eval::{
    bench_csv, bench_kpr, compare, comparison_csv, episodes_csv, summarize, summary_csv,
    MetricsSummary,
};
use psd_kpr::io::{
    read_detections, read_trajectory, write_detections, write_trajectory, DetectionLogEntry,
};
use psd_kpr::kpr::{BoxPairing, KprParams};
use psd_kpr::reloc::{run_sequence, OracleBackend, RelocParams, RetrievalMethod};
use psd_kpr::sim::{generate_scenario, parse_config, render_frames, Scenario};
use psd_kpr::{Atlas, Frame, Pose, RunRecord};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Oracle recovery accepts candidates within this translation distance (m).
const ORACLE_TRANS_TOL: f64 = 0.5;
/// Oracle recovery accepts candidates within this rotation angle (rad).
const ORACLE_ROT_TOL: f64 = 0.5;
/// Magnitude of the noise on recovered poses.
const ORACLE_NOISE: f64 = 0.005;
/// Candidates returned per query by the baseline retriever.
const BASELINE_TOP_K: usize = 5;

#[derive(Debug)]
enum CliError {
    /// Bad flags, bad config files, malformed inputs. Exit 2.
    Config(String),
    /// Filesystem failures. Exit 3.
    Io(String),
    /// Valid inputs that disagree with each other. Exit 4.
    Semantic(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Semantic(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration: {msg}"),
            CliError::Io(msg) => write!(f, "i/o: {msg}"),
            CliError::Semantic(msg) => write!(f, "inconsistent inputs: {msg}"),
        }
    }
}

fn io_err(context: &str, path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{context} {}: {e}", path.display()))
}

#[derive(Parser)]
#[command(
    name = "kpr",
    version,
    about = "Keyframe place recognition and short-term relocalization harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    /// Staged pose-class-box retrieval with identity-pose routing.
    Pcb,
    /// Normalized-L1 class-histogram retrieval.
    Baseline,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PairingArg {
    /// Each box matched at most once, best overlaps first (default).
    Greedy,
    /// Count every same-class pair above the threshold (ablation).
    #[value(name = "all_pairs")]
    AllPairs,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario: world, detections, ground truth.
    Simulate {
        /// Scenario config file (`key = value` lines).
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a scenario through the relocalization state machine.
    Run {
        /// Directory produced by `simulate`, or hand-assembled
        /// detections.jsonl + groundtruth.txt files.
        #[arg(long)]
        scenario: PathBuf,
        /// Retrieval method feeding the recovery backend.
        #[arg(long, value_enum, default_value_t = MethodArg::Pcb)]
        method: MethodArg,
        /// Pose-shell radius.
        #[arg(long = "dt-th", default_value_t = 0.5)]
        dt_th: f64,
        /// Lost-state budget in timesteps.
        #[arg(long = "n-fail", default_value_t = 20)]
        n_fail: u32,
        /// Box-overlap threshold as a fraction.
        #[arg(long = "d-iou", default_value_t = 0.9)]
        d_iou: f64,
        /// Relative width of the adaptive class-score band.
        #[arg(long = "class-band", default_value_t = 0.1)]
        class_band: f64,
        /// Box pairing rule for the box constraint.
        #[arg(long, value_enum, default_value_t = PairingArg::Greedy)]
        pairing: PairingArg,
        /// Run seeds: a single number or an inclusive range `A..B`.
        #[arg(long, default_value = "0")]
        seeds: String,
        /// Output directory; one subdirectory per seed.
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate run directories into summary and comparison tables.
    Eval {
        /// Run directories (as passed to `run --out`).
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Output directory for summary.csv and comparison.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure retrieval latency over a synthetic keyframe database.
    Bench {
        /// Number of keyframes in the synthetic database.
        #[arg(long = "db-size")]
        db_size: usize,
        /// Number of timed queries.
        #[arg(long)]
        queries: usize,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KPR_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { config, seed, out } => cmd_simulate(&config, seed, &out),
        Command::Run {
            scenario,
            method,
            dt_th,
            n_fail,
            d_iou,
            class_band,
            pairing,
            seeds,
            out,
        } => {
            let kpr = KprParams {
                delta_t_th: dt_th,
                delta_iou: d_iou,
                class_band,
                pairing: match pairing {
                    PairingArg::Greedy => BoxPairing::Greedy,
                    PairingArg::AllPairs => BoxPairing::AllPairs,
                },
                ..KprParams::default()
            };
            let params = RelocParams {
                n_fail,
                kpr,
                method: match method {
                    MethodArg::Pcb => RetrievalMethod::Pcb,
                    MethodArg::Baseline => RetrievalMethod::BaselineL1 { top_k: BASELINE_TOP_K },
                },
            };
            params
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
            let seed_list = parse_seeds(&seeds)?;
            cmd_run(&scenario, &params, &seed_list, &out)
        }
        Command::Eval { dirs, out } => cmd_eval(&dirs, &out),
        Command::Bench {
            db_size,
            queries,
            out,
        } => cmd_bench(db_size, queries, &out),
    }
}

/// Parses `"7"` or an inclusive `"0..9"` (ten seeds).
fn parse_seeds(spec: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Config(format!("cannot parse seed spec {spec:?} (want N or A..B)"));
    if let Some((a, b)) = spec.split_once("..") {
        let start: u64 = a.trim().parse().map_err(|_| bad())?;
        let end: u64 = b.trim().parse().map_err(|_| bad())?;
        if end < start {
            return Err(bad());
        }
        Ok((start..=end).collect())
    } else {
        Ok(vec![spec.trim().parse().map_err(|_| bad())?])
    }
}

fn cmd_simulate(config_path: &Path, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", config_path.display())))?;
    let config = parse_config(&text).map_err(|e| CliError::Config(e.to_string()))?;
    let seed = seed.unwrap_or(config.seed);
    let scenario =
        generate_scenario(&config, seed).map_err(|e| CliError::Config(e.to_string()))?;
    let frames = render_frames(&scenario);

    std::fs::create_dir_all(out).map_err(|e| io_err("cannot create", out, e))?;
    let scenario_path = out.join("scenario.json");
    let json = serde_json::to_string_pretty(&scenario).expect("scenario serializes");
    std::fs::write(&scenario_path, json).map_err(|e| io_err("cannot write", &scenario_path, e))?;

    let entries: Vec<DetectionLogEntry> = frames
        .iter()
        .map(|f| DetectionLogEntry {
            timestep: f.timestep,
            image_id: f.image_id.clone(),
            semantics: f.semantics.clone(),
        })
        .collect();
    let det_path = out.join("detections.jsonl");
    write_detections(&entries, &det_path).map_err(|e| io_err("cannot write", &det_path, e))?;

    let gt_path = out.join("groundtruth.txt");
    write_trajectory(&scenario.trajectory, &gt_path)
        .map_err(|e| io_err("cannot write", &gt_path, e))?;

    log::info!(
        "scenario seed {seed}: {} frames, {} objects, {} scheduled losses -> {}",
        scenario.trajectory.len(),
        scenario.objects.len(),
        scenario.loss_schedule.len(),
        out.display()
    );
    Ok(())
}

/// Scenario inputs resolved from a directory.
struct LoadedScenario {
    frames: Vec<Frame>,
    ground_truth: Vec<(u64, Pose)>,
    loss_schedule: Vec<u64>,
}

fn load_scenario_dir(dir: &Path) -> Result<LoadedScenario, CliError> {
    let scenario_path = dir.join("scenario.json");
    if scenario_path.exists() {
        let text = std::fs::read_to_string(&scenario_path)
            .map_err(|e| io_err("cannot read", &scenario_path, e))?;
        let scenario: Scenario = serde_json::from_str(&text).map_err(|e| {
            CliError::Config(format!("malformed {}: {e}", scenario_path.display()))
        })?;
        // Rendering is deterministic, so frames match the stored detection log.
        let frames = render_frames(&scenario);
        return Ok(LoadedScenario {
            frames,
            ground_truth: scenario.trajectory.clone(),
            loss_schedule: scenario.loss_schedule.clone(),
        });
    }

    // Hand-assembled directory: detections plus a trajectory, no loss
    // schedule (a pure tracking replay).
    let det_path = dir.join("detections.jsonl");
    let gt_path = dir.join("groundtruth.txt");
    if !det_path.exists() || !gt_path.exists() {
        return Err(CliError::Config(format!(
            "{} holds neither scenario.json nor detections.jsonl + groundtruth.txt",
            dir.display()
        )));
    }
    let entries = read_detections(&det_path).map_err(|e| CliError::Config(e.to_string()))?;
    let ground_truth = read_trajectory(&gt_path).map_err(|e| CliError::Config(e.to_string()))?;
    let by_ts: BTreeMap<u64, &Pose> = ground_truth.iter().map(|(ts, p)| (*ts, p)).collect();
    let mut frames = Vec::with_capacity(entries.len());
    for entry in entries {
        let pose = by_ts.get(&entry.timestep).ok_or_else(|| {
            CliError::Semantic(format!(
                "detection timestep {} has no ground-truth pose",
                entry.timestep
            ))
        })?;
        frames.push(Frame {
            timestep: entry.timestep,
            image_id: entry.image_id,
            semantics: entry.semantics,
            keypoints: None,
            pose_estimate: (*pose).clone(),
        });
    }
    Ok(LoadedScenario {
        frames,
        ground_truth,
        loss_schedule: Vec::new(),
    })
}

fn cmd_run(
    scenario_dir: &Path,
    params: &RelocParams,
    seeds: &[u64],
    out: &Path,
) -> Result<(), CliError> {
    let loaded = load_scenario_dir(scenario_dir)?;
    for &seed in seeds {
        let mut atlas = Atlas::new();
        let mut backend = OracleBackend::new(
            &loaded.ground_truth,
            ORACLE_TRANS_TOL,
            ORACLE_ROT_TOL,
            ORACLE_NOISE,
            seed,
        );
        let record = run_sequence(
            &loaded.frames,
            &loaded.ground_truth,
            &loaded.loss_schedule,
            &mut atlas,
            params,
            &mut backend,
            seed,
        )
        .map_err(|e| CliError::Semantic(e.to_string()))?;

        let seed_dir = out.join(format!("seed-{seed}"));
        std::fs::create_dir_all(&seed_dir).map_err(|e| io_err("cannot create", &seed_dir, e))?;
        let record_path = seed_dir.join("record.json");
        let json = serde_json::to_string_pretty(&record).expect("record serializes");
        std::fs::write(&record_path, json).map_err(|e| io_err("cannot write", &record_path, e))?;
        let est_path = seed_dir.join("estimated.txt");
        write_trajectory(&record.estimated, &est_path)
            .map_err(|e| io_err("cannot write", &est_path, e))?;
        let episodes_path = seed_dir.join("episodes.csv");
        std::fs::write(&episodes_path, episodes_csv(&record))
            .map_err(|e| io_err("cannot write", &episodes_path, e))?;
        log::info!(
            "seed {seed}: {} episodes, {} lost timesteps, {} maps",
            record.episodes.len(),
            record.total_lost_timesteps(),
            record.final_map_count
        );
    }
    Ok(())
}

fn collect_records(dirs: &[PathBuf]) -> Result<Vec<RunRecord>, CliError> {
    let mut records = Vec::new();
    for dir in dirs {
        let mut candidates = vec![dir.join("record.json")];
        if let Ok(entries) = std::fs::read_dir(dir) {
            for entry in entries.flatten() {
                candidates.push(entry.path().join("record.json"));
            }
        }
        for path in candidates {
            if !path.is_file() {
                continue;
            }
            let text =
                std::fs::read_to_string(&path).map_err(|e| io_err("cannot read", &path, e))?;
            let record: RunRecord = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("malformed {}: {e}", path.display())))?;
            records.push(record);
        }
    }
    Ok(records)
}

fn cmd_eval(dirs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let records = collect_records(dirs)?;
    if records.is_empty() {
        return Err(CliError::Semantic(
            "no record.json found under the given directories".into(),
        ));
    }
    let mut by_method: BTreeMap<String, Vec<RunRecord>> = BTreeMap::new();
    for record in records {
        by_method.entry(record.method.clone()).or_default().push(record);
    }
    let mut summaries: Vec<MetricsSummary> = Vec::new();
    for group in by_method.values() {
        summaries.push(summarize(group).map_err(|e| CliError::Semantic(e.to_string()))?);
    }
    // pcb row first when present, for stable human-readable output.
    summaries.sort_by_key(|s| (s.method != "pcb", s.method.clone()));

    std::fs::create_dir_all(out).map_err(|e| io_err("cannot create", out, e))?;
    let summary_path = out.join("summary.csv");
    std::fs::write(&summary_path, summary_csv(&summaries))
        .map_err(|e| io_err("cannot write", &summary_path, e))?;
    print!("{}", summary_csv(&summaries));

    let pcb = summaries.iter().find(|s| s.method == "pcb");
    let baseline = summaries.iter().find(|s| s.method == "baseline");
    if let (Some(pcb), Some(baseline)) = (pcb, baseline) {
        let comparison =
            compare(pcb, baseline).map_err(|e| CliError::Semantic(e.to_string()))?;
        let comparison_path = out.join("comparison.csv");
        std::fs::write(&comparison_path, comparison_csv(&comparison))
            .map_err(|e| io_err("cannot write", &comparison_path, e))?;
        print!("{}", comparison_csv(&comparison));
    }
    Ok(())
}

fn cmd_bench(db_size: usize, queries: usize, out: &Path) -> Result<(), CliError> {
    if db_size < 1 || queries < 1 {
        return Err(CliError::Config(
            "db-size and queries must both be at least 1".into(),
        ));
    }
    let report = bench_kpr(db_size, queries, 0, &KprParams::default());
    std::fs::write(out, bench_csv(&report)).map_err(|e| io_err("cannot write", out, e))?;
    println!(
        "staged query over {} keyframes: mean {:.4} ms, p99 {:.4} ms ({} queries)",
        report.db_size, report.mean_ms, report.p99_ms, report.queries
    );
    Ok(())
}
