//! `epiline` — fundamental matrices between stationary cameras from the
//! motion barcodes of image lines.
//!
//! Every subcommand reads the same JSON pipeline configuration; `--seed` and
//! `--out` override the config. Stages persist their artifacts into the
//! output directory so they can be run and inspected independently:
//!
//! - `simulate`: render the synthetic scenario, write packed mask videos,
//!   the scene record, ground-truth F matrices and correspondences;
//! - `barcodes`: sample border lines and dump per-camera barcodes;
//! - `match`:    write the candidate epipolar line pairs per camera pair;
//! - `estimate`: RANSAC over the candidates (reloading persisted candidate
//!   CSVs when present), write estimated F and result JSON;
//! - `evaluate`: score persisted or freshly estimated F against ground truth;
//! - `pipeline`: everything end to end plus the evaluation report.
//!
//! Exit codes: 0 on success, 2 when some camera pairs failed but others
//! completed, 1 on fatal errors.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use epiline_core::estimator::{detect_degeneracy, estimate_fundamental, RansacConfig};
use epiline_core::geometry::{FundamentalMatrix, ImageRect};
use epiline_core::pipeline::{
    acquire_input, barcodes_to_dump, camera_features, candidates_from_csv, candidates_to_csv,
    evaluate_f, gt_points_to_csv, match_pair, pair_ransac_seed, run_pipeline, true_positive_rate,
    CameraFeatures, EstimationExport, EvaluationReport, InputSpec, PairReport, PipelineConfig,
    PipelineInput,
};

#[derive(Parser)]
#[command(name = "epiline", version, about = "Fundamental matrices from line motion barcodes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic scenario and write its ground truth.
    Simulate(StageArgs),
    /// Sample border lines and dump per-camera motion barcodes.
    Barcodes(StageArgs),
    /// Produce candidate epipolar line pairs per camera pair.
    Match(StageArgs),
    /// Estimate fundamental matrices from (persisted) candidates.
    Estimate(StageArgs),
    /// Evaluate estimated matrices against ground truth.
    Evaluate(StageArgs),
    /// Run the whole pipeline and write the evaluation report.
    Pipeline(StageArgs),
}

#[derive(Args)]
struct StageArgs {
    /// JSON pipeline configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed override (also reseeds a simulated scenario).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(args: &StageArgs) -> Result<PipelineConfig> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    let mut config: PipelineConfig =
        serde_json::from_str(&text).context("parsing pipeline config")?;
    if let Some(seed) = args.seed {
        config.seed = seed;
        if let InputSpec::Simulate { scenario } = &mut config.input {
            scenario.seed = seed;
        }
    }
    if let Some(out) = &args.out {
        config.out_dir = Some(out.clone());
    }
    Ok(config)
}

fn require_out(config: &PipelineConfig) -> Result<PathBuf> {
    config
        .out_dir
        .clone()
        .ok_or_else(|| anyhow!("an output directory is required (--out or \"out_dir\" in the config)"))
}

fn write(path: &PathBuf, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Write whatever ground truth the input carries (simulated or loaded).
fn write_ground_truth(input: &PipelineInput, out: &PathBuf) -> Result<()> {
    if let Some(sim) = &input.simulation {
        write(
            &out.join("scene.json"),
            serde_json::to_string_pretty(&sim.scene)?.as_bytes(),
        )?;
        for (k, video) in input.videos.iter().enumerate() {
            epiline_core::mask_io::save_packed(video, &out.join(format!("cam_{k}.silv")))?;
        }
    }
    for ((i, j), f) in &input.f_truth {
        write(&out.join(format!("f_truth_{i}_{j}.txt")), f.to_text().as_bytes())?;
    }
    for ((i, j), pts) in &input.gt_points {
        write(
            &out.join(format!("gt_points_{i}_{j}.csv")),
            gt_points_to_csv(pts).as_bytes(),
        )?;
    }
    Ok(())
}

fn all_features(
    input: &PipelineInput,
    config: &PipelineConfig,
) -> Vec<Result<CameraFeatures, String>> {
    input
        .videos
        .iter()
        .enumerate()
        .map(|(k, v)| camera_features(v, config, k).map_err(|e| e.to_string()))
        .collect()
}

/// Iterate camera pairs, tolerating per-pair failures. Returns the failure
/// count.
fn for_pairs(
    n: usize,
    mut body: impl FnMut(usize, usize) -> Result<()>,
) -> usize {
    let mut failures = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            if let Err(e) = body(i, j) {
                eprintln!("pair ({i}, {j}): {e:#}");
                failures += 1;
            }
        }
    }
    failures
}

fn partial_exit(failures: usize, pairs: usize) -> ExitCode {
    if failures == 0 {
        ExitCode::SUCCESS
    } else if failures < pairs {
        ExitCode::from(2)
    } else {
        ExitCode::FAILURE
    }
}

fn cmd_simulate(config: &PipelineConfig) -> Result<ExitCode> {
    let out = require_out(config)?;
    let input = acquire_input(config)?;
    write_ground_truth(&input, &out)?;
    println!(
        "simulated {} cameras, {} frames each -> {}",
        input.videos.len(),
        input.videos.first().map_or(0, |v| v.num_frames()),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_barcodes(config: &PipelineConfig) -> Result<ExitCode> {
    let out = require_out(config)?;
    let input = acquire_input(config)?;
    let mut failures = 0;
    for (k, video) in input.videos.iter().enumerate() {
        match camera_features(video, config, k) {
            Ok(f) => {
                write(
                    &out.join(format!("barcodes_{k}.txt")),
                    barcodes_to_dump(&f.lines, &f.barcodes).as_bytes(),
                )?;
                let mut lines_csv = String::from("id,px,py,qx,qy\n");
                for l in &f.lines {
                    lines_csv.push_str(&format!(
                        "{},{},{},{},{}\n",
                        l.id, l.p.0, l.p.1, l.q.0, l.q.1
                    ));
                }
                write(&out.join(format!("lines_{k}.csv")), lines_csv.as_bytes())?;
                println!("camera {k}: {} informative lines", f.lines.len());
            }
            Err(e) => {
                eprintln!("camera {k}: {e}");
                failures += 1;
            }
        }
    }
    Ok(partial_exit(failures, input.videos.len()))
}

fn cmd_match(config: &PipelineConfig) -> Result<ExitCode> {
    let out = require_out(config)?;
    let input = acquire_input(config)?;
    let features = all_features(&input, config);
    let n = input.videos.len();
    let pairs = n * (n - 1) / 2;
    let failures = for_pairs(n, |i, j| {
        let (fa, fb) = match (&features[i], &features[j]) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return Err(anyhow!("camera features: {e}")),
        };
        let cands = match_pair(fa, fb, config)?;
        write(
            &out.join(format!("candidates_{i}_{j}.csv")),
            candidates_to_csv(&cands).as_bytes(),
        )?;
        println!("pair ({i}, {j}): {} candidates", cands.len());
        Ok(())
    });
    Ok(partial_exit(failures, pairs))
}

fn pair_ransac_config(config: &PipelineConfig, i: usize, j: usize) -> RansacConfig {
    RansacConfig {
        seed: pair_ransac_seed(config, i, j),
        ..config.ransac.clone()
    }
}

fn cmd_estimate(config: &PipelineConfig) -> Result<ExitCode> {
    let out = require_out(config)?;
    let input = acquire_input(config)?;
    let n = input.videos.len();
    let pairs = n * (n - 1) / 2;
    // features are only computed when some pair lacks a persisted CSV
    let mut features: Option<Vec<Result<CameraFeatures, String>>> = None;
    let failures = for_pairs(n, |i, j| {
        let csv_path = out.join(format!("candidates_{i}_{j}.csv"));
        let cands = if csv_path.exists() {
            candidates_from_csv(&fs::read_to_string(&csv_path)?)?
        } else {
            if features.is_none() {
                features = Some(all_features(&input, config));
            }
            let feats = features.as_ref().unwrap();
            let (fa, fb) = match (&feats[i], &feats[j]) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(e), _) | (_, Err(e)) => return Err(anyhow!("camera features: {e}")),
            };
            let cands = match_pair(fa, fb, config)?;
            write(&csv_path, candidates_to_csv(&cands).as_bytes())?;
            cands
        };
        let rect_a = ImageRect::new(input.videos[i].width(), input.videos[i].height());
        let rect_b = ImageRect::new(input.videos[j].width(), input.videos[j].height());
        let res = estimate_fundamental(&cands, &rect_a, &rect_b, &pair_ransac_config(config, i, j))?;
        let res = detect_degeneracy(res, config.degeneracy_angle_span_min_rad);
        write(&out.join(format!("f_est_{i}_{j}.txt")), res.f.to_text().as_bytes())?;
        write(
            &out.join(format!("result_{i}_{j}.json")),
            serde_json::to_string_pretty(&EstimationExport::from_result(&res))?.as_bytes(),
        )?;
        println!(
            "pair ({i}, {j}): {} inliers after {} iterations{}",
            res.inlier_pairs.len(),
            res.iterations_run,
            if res.degenerate { " (degenerate)" } else { "" }
        );
        Ok(())
    });
    Ok(partial_exit(failures, pairs))
}

fn cmd_evaluate(config: &PipelineConfig) -> Result<ExitCode> {
    let out = require_out(config)?;
    let input = acquire_input(config)?;
    let n = input.videos.len();
    let pairs_total = n * (n - 1) / 2;
    let mut features: Option<Vec<Result<CameraFeatures, String>>> = None;
    let mut reports: Vec<PairReport> = Vec::new();
    let failures = for_pairs(n, |i, j| {
        let mut body = || -> Result<(Option<f64>, Option<epiline_core::pipeline::EvalSummary>)> {
            let f_path = out.join(format!("f_est_{i}_{j}.txt"));
            if !f_path.exists() {
                return Err(anyhow!("missing {}", f_path.display()));
            }
            let f = FundamentalMatrix::from_text(&fs::read_to_string(&f_path)?)?;
            let rect_a = ImageRect::new(input.videos[i].width(), input.videos[i].height());
            let rect_b = ImageRect::new(input.videos[j].width(), input.videos[j].height());
            let sed = match input.gt_for(i, j) {
                Some(gt) if !gt.is_empty() => Some(evaluate_f(&f, gt)?),
                _ => None,
            };
            let tp = match input.f_for(i, j) {
                Some(f_truth) => {
                    let csv_path = out.join(format!("candidates_{i}_{j}.csv"));
                    let cands = if csv_path.exists() {
                        candidates_from_csv(&fs::read_to_string(&csv_path)?)?
                    } else {
                        if features.is_none() {
                            features = Some(all_features(&input, config));
                        }
                        let feats = features.as_ref().unwrap();
                        match (&feats[i], &feats[j]) {
                            (Ok(a), Ok(b)) => match_pair(a, b, config)?,
                            _ => Vec::new(),
                        }
                    };
                    if cands.is_empty() {
                        None
                    } else {
                        Some(true_positive_rate(
                            &cands,
                            f_truth,
                            &rect_a,
                            &rect_b,
                            config.true_positive_area_factor,
                        )?)
                    }
                }
                None => None,
            };
            Ok((tp, sed))
        };
        let mut entry = PairReport {
            pair: (i, j),
            candidate_count: 0,
            inlier_count: 0,
            iterations_run: 0,
            degenerate: false,
            degenerate_reason: None,
            true_positive_rate: None,
            sed: None,
            error: None,
        };
        let outcome = body();
        match &outcome {
            Ok((tp, sed)) => {
                println!(
                    "pair ({i}, {j}): mean SED {:?} px, true-positive rate {:?}",
                    sed.as_ref().map(|s| s.mean),
                    tp
                );
                entry.true_positive_rate = *tp;
                entry.sed = sed.clone();
            }
            Err(e) => entry.error = Some(format!("{e:#}")),
        }
        reports.push(entry);
        outcome.map(|_| ())
    });
    let report = EvaluationReport::from_pairs(reports);
    write(
        &out.join("report.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    Ok(partial_exit(failures, pairs_total))
}

fn cmd_pipeline(config: &PipelineConfig) -> Result<ExitCode> {
    let report = run_pipeline(config)?;
    for p in &report.pairs {
        match &p.error {
            Some(e) => println!("pair {:?}: FAILED: {e}", p.pair),
            None => println!(
                "pair {:?}: {} candidates, {} inliers, degenerate={}, tp={}, mean SED={}",
                p.pair,
                p.candidate_count,
                p.inlier_count,
                p.degenerate,
                p.true_positive_rate
                    .map_or("n/a".into(), |v| format!("{v:.3}")),
                p.sed
                    .as_ref()
                    .map_or("n/a".into(), |s| format!("{:.3} px", s.mean)),
            ),
        }
    }
    let failed = report.dataset.pairs_failed;
    let total = report.dataset.pairs_total;
    println!(
        "{} of {} pairs ok; report{} written",
        total - failed,
        total,
        config
            .out_dir
            .as_ref()
            .map_or(" not".into(), |d| format!(" {}", d.join("report.json").display()))
    );
    Ok(partial_exit(failed, total))
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    let (args, runner): (&StageArgs, fn(&PipelineConfig) -> Result<ExitCode>) = match &cli.command {
        Command::Simulate(a) => (a, cmd_simulate),
        Command::Barcodes(a) => (a, cmd_barcodes),
        Command::Match(a) => (a, cmd_match),
        Command::Estimate(a) => (a, cmd_estimate),
        Command::Evaluate(a) => (a, cmd_evaluate),
        Command::Pipeline(a) => (a, cmd_pipeline),
    };
    let config = load_config(args)?;
    runner(&config)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
