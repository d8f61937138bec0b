//! End-to-end orchestration: input acquisition (simulator or mask files),
//! per-camera feature extraction, candidate matching, estimation, evaluation
//! against ground truth, and artifact emission (report JSON, candidate CSVs,
//! fundamental-matrix text files, packed masks, optional SVG overlays).
//!
//! Everything is deterministic for a fixed configuration: per-purpose seeds
//! are derived from the master seed, and wall-clock timings go to a sidecar
//! file so the report itself is bit-reproducible.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barcode::{
    compute_barcodes_bulk, is_informative, raster_line_pixels, sample_border_lines, BarcodeError,
    BorderLine, MotionBarcode,
};
use crate::estimator::{
    detect_degeneracy, estimate_fundamental, EstimationResult, EstimatorError, RansacConfig,
};
use crate::geometry::{
    area_between_lines, clip_line_to_rect, epipoles_of, line_through, symmetric_epipolar_distance,
    FundamentalMatrix, GeometryError, HomPoint2, ImageRect,
};
use crate::mask_io::{
    compute_heat_map, load_mask_sequence, load_packed, save_packed, MaskIoError, SilhouetteVideo,
};
use crate::matching::{
    detect_traffic_lines, filter_traffic_candidates, mutual_topk_streaming,
    select_top_candidates, CandidatePair, OverlapParams, TrafficLine, TrafficParams,
};
use crate::simulator::{
    ground_truth_correspondences, mix_seed, simulate, ScenarioConfig, Simulation, SimulatorError,
};

const SEED_TAG_LINES: u64 = 0x4c49_4e45;
const SEED_TAG_RANSAC: u64 = 0x524e_5343;
const SEED_TAG_EVAL: u64 = 0x4556_414c;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    MaskIo(#[from] MaskIoError),
    #[error(transparent)]
    Simulator(#[from] SimulatorError),
    #[error(transparent)]
    Barcode(#[from] BarcodeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One mask-sequence input camera: either a packed container or a PBM pattern
/// with a frame range.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskInput {
    Packed { path: PathBuf },
    PbmPattern { pattern: String, range: (usize, usize) },
}

/// Where the videos come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSpec {
    Simulate {
        scenario: ScenarioConfig,
    },
    Masks {
        cameras: Vec<MaskInput>,
        /// Optional ground-truth F text files per camera pair `(i, j)`.
        #[serde(default)]
        f_truth: Vec<((usize, usize), PathBuf)>,
        /// Optional ground-truth correspondence CSVs (xa,ya,xb,yb) per pair.
        #[serde(default)]
        gt_points: Vec<((usize, usize), PathBuf)>,
    },
}

/// Traffic detection and filtering configuration; `peak_min_support = None`
/// defaults to 0.3 x image diagonal at run time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrafficFilterConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_hot_fraction")]
    pub hot_fraction: f64,
    #[serde(default = "default_rho_step")]
    pub hough_rho_step: f64,
    #[serde(default = "default_theta_step")]
    pub hough_theta_step_rad: f64,
    #[serde(default)]
    pub peak_min_support: Option<f64>,
    #[serde(default = "default_max_lines")]
    pub max_lines: usize,
    #[serde(default = "default_rho_tol")]
    pub rho_tol_px: f64,
    #[serde(default = "default_theta_tol")]
    pub theta_tol_rad: f64,
}

fn default_true() -> bool {
    true
}
fn default_hot_fraction() -> f64 {
    0.90
}
fn default_rho_step() -> f64 {
    1.0
}
fn default_theta_step() -> f64 {
    0.5f64.to_radians()
}
fn default_max_lines() -> usize {
    10
}
fn default_rho_tol() -> f64 {
    5.0
}
fn default_theta_tol() -> f64 {
    0.02
}

impl Default for TrafficFilterConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            hot_fraction: default_hot_fraction(),
            hough_rho_step: default_rho_step(),
            hough_theta_step_rad: default_theta_step(),
            peak_min_support: None,
            max_lines: default_max_lines(),
            rho_tol_px: default_rho_tol(),
            theta_tol_rad: default_theta_tol(),
        }
    }
}

impl TrafficFilterConfig {
    pub fn params_for(&self, rect: &ImageRect) -> TrafficParams {
        TrafficParams {
            hot_fraction: self.hot_fraction,
            hough_rho_step: self.hough_rho_step,
            hough_theta_step_rad: self.hough_theta_step_rad,
            peak_min_support: self
                .peak_min_support
                .unwrap_or(0.3 * rect.diagonal()),
            max_lines: self.max_lines,
        }
    }

    pub fn overlap(&self) -> OverlapParams {
        OverlapParams {
            rho_tol_px: self.rho_tol_px,
            theta_tol_rad: self.theta_tol_rad,
        }
    }
}

fn default_lines_per_camera() -> usize {
    40_000
}
fn default_q_min() -> f64 {
    0.05
}
fn default_q_max() -> f64 {
    0.95
}
fn default_mutual_k() -> usize {
    3
}
fn default_candidate_limit() -> usize {
    1000
}
fn default_thickness() -> u32 {
    1
}
fn default_tp_factor() -> f64 {
    3.0
}
fn default_eval_correspondences() -> usize {
    1000
}
fn default_degeneracy_span() -> f64 {
    0.35
}

/// Full pipeline configuration; the JSON schema of the CLI `--config` file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub input: InputSpec,
    #[serde(default = "default_lines_per_camera")]
    pub lines_per_camera: usize,
    #[serde(default = "default_q_min")]
    pub q_min: f64,
    #[serde(default = "default_q_max")]
    pub q_max: f64,
    #[serde(default = "default_mutual_k")]
    pub mutual_k: usize,
    #[serde(default = "default_candidate_limit")]
    pub candidate_limit: usize,
    #[serde(default = "default_thickness")]
    pub raster_thickness: u32,
    #[serde(default)]
    pub traffic: TrafficFilterConfig,
    #[serde(default)]
    pub ransac: RansacConfig,
    /// Area factor for the true-positive test, in image-length units
    /// (image length = max(width, height)).
    #[serde(default = "default_tp_factor")]
    pub true_positive_area_factor: f64,
    #[serde(default = "default_eval_correspondences")]
    pub eval_correspondences: usize,
    #[serde(default = "default_degeneracy_span")]
    pub degeneracy_angle_span_min_rad: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub emit_svg: bool,
}

impl PipelineConfig {
    pub fn for_scenario(scenario: ScenarioConfig) -> Self {
        Self {
            input: InputSpec::Simulate { scenario },
            lines_per_camera: default_lines_per_camera(),
            q_min: default_q_min(),
            q_max: default_q_max(),
            mutual_k: default_mutual_k(),
            candidate_limit: default_candidate_limit(),
            raster_thickness: default_thickness(),
            traffic: TrafficFilterConfig::default(),
            ransac: RansacConfig::default(),
            true_positive_area_factor: default_tp_factor(),
            eval_correspondences: default_eval_correspondences(),
            degeneracy_angle_span_min_rad: default_degeneracy_span(),
            seed: 0,
            out_dir: None,
            emit_svg: false,
        }
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if self.lines_per_camera == 0 || self.mutual_k == 0 || self.candidate_limit == 0 {
            return Err(PipelineError::Config(
                "lines_per_camera, mutual_k and candidate_limit must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.q_min) || !(self.q_min < self.q_max && self.q_max <= 1.0) {
            return Err(PipelineError::Config(
                "require 0 <= q_min < q_max <= 1".into(),
            ));
        }
        if self.raster_thickness == 0 {
            return Err(PipelineError::Config("raster_thickness must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything the pipeline extracted from one camera.
pub struct CameraFeatures {
    pub rect: ImageRect,
    /// Informative lines with their original sampling ids.
    pub lines: Vec<BorderLine>,
    pub barcodes: Vec<MotionBarcode>,
    pub traffic: Vec<TrafficLine>,
    pub sampled_count: usize,
}

/// Acquired input: videos plus whatever ground truth is available.
pub struct PipelineInput {
    pub videos: Vec<SilhouetteVideo>,
    pub f_truth: Vec<((usize, usize), FundamentalMatrix)>,
    pub gt_points: Vec<((usize, usize), Vec<(HomPoint2, HomPoint2)>)>,
    pub simulation: Option<Simulation>,
}

impl PipelineInput {
    pub fn f_for(&self, i: usize, j: usize) -> Option<&FundamentalMatrix> {
        self.f_truth.iter().find(|(p, _)| *p == (i, j)).map(|(_, f)| f)
    }

    pub fn gt_for(&self, i: usize, j: usize) -> Option<&[(HomPoint2, HomPoint2)]> {
        self.gt_points
            .iter()
            .find(|(p, _)| *p == (i, j))
            .map(|(_, v)| v.as_slice())
    }
}

/// Load or simulate the input videos and ground truth.
pub fn acquire_input(config: &PipelineConfig) -> Result<PipelineInput, PipelineError> {
    match &config.input {
        InputSpec::Simulate { scenario } => {
            let sim = simulate(scenario)?;
            let mut gt_points = Vec::new();
            for (pair, _) in &sim.f_truth {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
                    config.seed,
                    SEED_TAG_EVAL,
                    (pair.0 as u64) << 20 | pair.1 as u64,
                ));
                let pts = ground_truth_correspondences(
                    &sim.cameras[pair.0],
                    &sim.cameras[pair.1],
                    &sim.scene.bounds,
                    config.eval_correspondences,
                    &mut rng,
                )?;
                gt_points.push((*pair, pts));
            }
            Ok(PipelineInput {
                videos: sim.videos.clone(),
                f_truth: sim.f_truth.clone(),
                gt_points,
                simulation: Some(sim),
            })
        }
        InputSpec::Masks {
            cameras,
            f_truth,
            gt_points,
        } => {
            if cameras.len() < 2 {
                return Err(PipelineError::Config("need at least 2 cameras".into()));
            }
            let videos: Result<Vec<SilhouetteVideo>, PipelineError> = cameras
                .iter()
                .map(|input| match input {
                    MaskInput::Packed { path } => Ok(load_packed(path)?),
                    MaskInput::PbmPattern { pattern, range } => {
                        Ok(load_mask_sequence(pattern, range.0..range.1)?)
                    }
                })
                .collect();
            let mut f_loaded = Vec::new();
            for (pair, path) in f_truth {
                let text = fs::read_to_string(path).map_err(io_err(path))?;
                f_loaded.push((*pair, FundamentalMatrix::from_text(&text)?));
            }
            let mut gt_loaded = Vec::new();
            for (pair, path) in gt_points {
                let text = fs::read_to_string(path).map_err(io_err(path))?;
                gt_loaded.push((*pair, parse_gt_points_csv(&text)?));
            }
            Ok(PipelineInput {
                videos: videos?,
                f_truth: f_loaded,
                gt_points: gt_loaded,
                simulation: None,
            })
        }
    }
}

/// Sample lines, extract barcodes, keep the informative ones, and detect
/// traffic lines for one camera.
pub fn camera_features(
    video: &SilhouetteVideo,
    config: &PipelineConfig,
    cam_idx: usize,
) -> Result<CameraFeatures, PipelineError> {
    let rect = ImageRect::new(video.width(), video.height());
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, SEED_TAG_LINES, cam_idx as u64));
    let sampled = sample_border_lines(&rect, config.lines_per_camera, &mut rng);

    use rayon::prelude::*;
    let mut lines = Vec::new();
    let mut barcodes = Vec::new();
    // chunked so the transient rasters stay small
    for chunk in sampled.chunks(8192) {
        let rasters: Vec<Vec<(u32, u32)>> = chunk
            .par_iter()
            .map(|line| raster_line_pixels(line, &rect, config.raster_thickness))
            .collect();
        let extracted = compute_barcodes_bulk(video, &rasters)?;
        for (line, barcode) in chunk.iter().zip(extracted) {
            if is_informative(&barcode, config.q_min, config.q_max) {
                lines.push(*line);
                barcodes.push(barcode);
            }
        }
    }

    let traffic = if config.traffic.enabled {
        let heat = compute_heat_map(video);
        detect_traffic_lines(&heat, &config.traffic.params_for(&rect))
    } else {
        Vec::new()
    };

    Ok(CameraFeatures {
        rect,
        lines,
        barcodes,
        traffic,
        sampled_count: config.lines_per_camera,
    })
}

/// Correlate two cameras' barcodes and produce the filtered candidate list:
/// mutual top-k, score-ranked truncation, then traffic suppression.
pub fn match_pair(
    a: &CameraFeatures,
    b: &CameraFeatures,
    config: &PipelineConfig,
) -> Result<Vec<CandidatePair>, PipelineError> {
    if a.barcodes.len() < 2 || b.barcodes.len() < 2 {
        return Err(PipelineError::Config(format!(
            "too few informative lines ({} and {})",
            a.barcodes.len(),
            b.barcodes.len()
        )));
    }
    let mutual = mutual_topk_streaming(&a.barcodes, &b.barcodes, config.mutual_k)?;
    let pairs: Vec<CandidatePair> = mutual
        .into_iter()
        .map(|p| CandidatePair {
            line_a: a.lines[p.a],
            line_b: b.lines[p.b],
            score: p.score,
        })
        .collect();
    let selected = select_top_candidates(pairs, config.candidate_limit);
    Ok(filter_traffic_candidates(
        selected,
        &a.traffic,
        &b.traffic,
        &config.traffic.overlap(),
    ))
}

/// True-positive test of one line: the enclosed area against the true
/// epipolar line through the candidate's own (clipped) midpoint must stay
/// under `factor x image length`.
fn line_is_true_positive(
    line: &BorderLine,
    epipole: &HomPoint2,
    rect: &ImageRect,
    factor: f64,
) -> bool {
    let Some(seg) = clip_line_to_rect(&line.line, rect) else {
        return false;
    };
    let (mx, my) = seg.midpoint();
    let mid = HomPoint2::from_xy(mx, my);
    match line_through(epipole, &mid) {
        Ok(true_line) => {
            area_between_lines(&line.line, &true_line, rect) < factor * rect.length()
        }
        // midpoint at the epipole: the candidate passes through the epipole
        Err(_) => true,
    }
}

/// Fraction of candidate pairs whose both lines pass the midpoint-anchored
/// area test against the true epipolar geometry.
pub fn true_positive_rate(
    cands: &[CandidatePair],
    f_truth: &FundamentalMatrix,
    rect_a: &ImageRect,
    rect_b: &ImageRect,
    factor: f64,
) -> Result<f64, GeometryError> {
    if cands.is_empty() {
        return Ok(0.0);
    }
    let (e_a, e_b) = epipoles_of(f_truth)?;
    let hits = cands
        .iter()
        .filter(|c| {
            line_is_true_positive(&c.line_a, &e_a, rect_a, factor)
                && line_is_true_positive(&c.line_b, &e_b, rect_b, factor)
        })
        .count();
    Ok(hits as f64 / cands.len() as f64)
}

/// Aggregated symmetric epipolar distances of a fundamental matrix over
/// ground-truth correspondences.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalSummary {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub evaluated: usize,
    pub domain_errors: usize,
}

pub fn evaluate_f(
    f: &FundamentalMatrix,
    gt_pairs: &[(HomPoint2, HomPoint2)],
) -> Result<EvalSummary, PipelineError> {
    if gt_pairs.is_empty() {
        return Err(PipelineError::Config(
            "need at least one ground-truth correspondence".into(),
        ));
    }
    let mut distances = Vec::with_capacity(gt_pairs.len());
    let mut domain_errors = 0usize;
    for (xa, xb) in gt_pairs {
        match symmetric_epipolar_distance(f, xa, xb) {
            Ok(d) => distances.push(d),
            Err(_) => domain_errors += 1,
        }
    }
    if distances.is_empty() {
        return Err(PipelineError::Config(
            "all correspondences hit domain errors".into(),
        ));
    }
    distances.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = distances.iter().sum::<f64>() / distances.len() as f64;
    let median = if distances.len() % 2 == 1 {
        distances[distances.len() / 2]
    } else {
        0.5 * (distances[distances.len() / 2 - 1] + distances[distances.len() / 2])
    };
    Ok(EvalSummary {
        mean,
        median,
        max: *distances.last().unwrap(),
        evaluated: distances.len(),
        domain_errors,
    })
}

/// Per-pair entry of the evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairReport {
    pub pair: (usize, usize),
    pub candidate_count: usize,
    pub inlier_count: usize,
    pub iterations_run: usize,
    pub degenerate: bool,
    pub degenerate_reason: Option<String>,
    pub true_positive_rate: Option<f64>,
    pub sed: Option<EvalSummary>,
    pub error: Option<String>,
}

impl PairReport {
    fn failed(pair: (usize, usize), error: String) -> Self {
        Self {
            pair,
            candidate_count: 0,
            inlier_count: 0,
            iterations_run: 0,
            degenerate: false,
            degenerate_reason: None,
            true_positive_rate: None,
            sed: None,
            error: Some(error),
        }
    }
}

/// Dataset-level aggregates over the successfully evaluated pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub pairs_total: usize,
    pub pairs_failed: usize,
    pub pairs_degenerate: usize,
    pub mean_sed: Option<f64>,
    pub mean_true_positive_rate: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub pairs: Vec<PairReport>,
    pub dataset: DatasetSummary,
}

impl EvaluationReport {
    pub fn has_failures(&self) -> bool {
        self.pairs.iter().any(|p| p.error.is_some())
    }

    /// Aggregate per-pair entries into a full report.
    pub fn from_pairs(pairs: Vec<PairReport>) -> Self {
        aggregate(pairs)
    }
}

fn aggregate(pairs: Vec<PairReport>) -> EvaluationReport {
    let pairs_total = pairs.len();
    let pairs_failed = pairs.iter().filter(|p| p.error.is_some()).count();
    let pairs_degenerate = pairs.iter().filter(|p| p.degenerate).count();
    let seds: Vec<f64> = pairs
        .iter()
        .filter_map(|p| p.sed.as_ref().map(|s| s.mean))
        .collect();
    let tps: Vec<f64> = pairs.iter().filter_map(|p| p.true_positive_rate).collect();
    let mean = |v: &[f64]| {
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    EvaluationReport {
        dataset: DatasetSummary {
            pairs_total,
            pairs_failed,
            pairs_degenerate,
            mean_sed: mean(&seds),
            mean_true_positive_rate: mean(&tps),
        },
        pairs,
    }
}

/// Serializable export of an estimation result (the `result_<i>_<j>.json`
/// artifact).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationExport {
    pub f_row_major: Vec<f64>,
    pub epipole_a: [f64; 3],
    pub epipole_b: [f64; 3],
    pub inlier_pair_ids: Vec<(usize, usize)>,
    pub inlier_count: usize,
    pub iterations_run: usize,
    pub degenerate: bool,
    pub degenerate_reason: Option<String>,
}

impl EstimationExport {
    pub fn from_result(res: &EstimationResult) -> Self {
        let m = res.f.matrix();
        let ea = res.h.epipole_a().coords();
        let eb = res.h.epipole_b().coords();
        Self {
            f_row_major: (0..3)
                .flat_map(|r| (0..3).map(move |c| (r, c)))
                .map(|(r, c)| m[(r, c)])
                .collect(),
            epipole_a: [ea.x, ea.y, ea.z],
            epipole_b: [eb.x, eb.y, eb.z],
            inlier_pair_ids: res
                .inlier_pairs
                .iter()
                .map(|c| (c.line_a.id, c.line_b.id))
                .collect(),
            inlier_count: res.inlier_pairs.len(),
            iterations_run: res.iterations_run,
            degenerate: res.degenerate,
            degenerate_reason: res.degenerate_reason.clone(),
        }
    }
}

/// Candidate list CSV: header plus one row per pair.
pub fn candidates_to_csv(cands: &[CandidatePair]) -> String {
    let mut out =
        String::from("a_id,b_id,score,a_px,a_py,a_qx,a_qy,b_px,b_py,b_qx,b_qy\n");
    for c in cands {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            c.line_a.id,
            c.line_b.id,
            c.score,
            c.line_a.p.0,
            c.line_a.p.1,
            c.line_a.q.0,
            c.line_a.q.1,
            c.line_b.p.0,
            c.line_b.p.1,
            c.line_b.q.0,
            c.line_b.q.1,
        ));
    }
    out
}

pub fn candidates_from_csv(text: &str) -> Result<Vec<CandidatePair>, PipelineError> {
    let mut out = Vec::new();
    for (lineno, row) in text.lines().enumerate().skip(1) {
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 11 {
            return Err(PipelineError::Config(format!(
                "candidates csv row {}: expected 11 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64, PipelineError> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| PipelineError::Config(format!("csv row {}: {e}", lineno + 1)))
        };
        let a_id = parse(fields[0])? as usize;
        let b_id = parse(fields[1])? as usize;
        let score = parse(fields[2])?;
        let a = BorderLine::from_endpoints(
            a_id,
            (parse(fields[3])?, parse(fields[4])?),
            (parse(fields[5])?, parse(fields[6])?),
        );
        let b = BorderLine::from_endpoints(
            b_id,
            (parse(fields[7])?, parse(fields[8])?),
            (parse(fields[9])?, parse(fields[10])?),
        );
        match (a, b) {
            (Some(line_a), Some(line_b)) => out.push(CandidatePair {
                line_a,
                line_b,
                score,
            }),
            _ => {
                return Err(PipelineError::Config(format!(
                    "csv row {}: degenerate line endpoints",
                    lineno + 1
                )))
            }
        }
    }
    Ok(out)
}

/// Ground-truth correspondence CSV: `xa,ya,xb,yb` rows with a header.
pub fn gt_points_to_csv(points: &[(HomPoint2, HomPoint2)]) -> String {
    let mut out = String::from("xa,ya,xb,yb\n");
    for (a, b) in points {
        let (xa, ya) = a.to_xy().unwrap_or((f64::NAN, f64::NAN));
        let (xb, yb) = b.to_xy().unwrap_or((f64::NAN, f64::NAN));
        out.push_str(&format!("{xa},{ya},{xb},{yb}\n"));
    }
    out
}

pub fn parse_gt_points_csv(text: &str) -> Result<Vec<(HomPoint2, HomPoint2)>, PipelineError> {
    let mut out = Vec::new();
    for (lineno, row) in text.lines().enumerate().skip(1) {
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 4 {
            return Err(PipelineError::Config(format!(
                "gt csv row {}: expected 4 fields",
                lineno + 1
            )));
        }
        let mut vals = [0f64; 4];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f
                .trim()
                .parse()
                .map_err(|e| PipelineError::Config(format!("gt csv row {}: {e}", lineno + 1)))?;
        }
        out.push((
            HomPoint2::from_xy(vals[0], vals[1]),
            HomPoint2::from_xy(vals[2], vals[3]),
        ));
    }
    Ok(out)
}

/// Barcode dump: `id bitstring` per line.
pub fn barcodes_to_dump(lines: &[BorderLine], barcodes: &[MotionBarcode]) -> String {
    lines
        .iter()
        .zip(barcodes)
        .map(|(l, b)| format!("{} {}\n", l.id, b.to_bit_string()))
        .collect()
}

/// Side-by-side SVG of both cameras' first-frame masks with the inlier line
/// pairs drawn in matching colors. Pure side output.
pub fn overlay_svg(
    video_a: &SilhouetteVideo,
    video_b: &SilhouetteVideo,
    inliers: &[CandidatePair],
    rect_a: &ImageRect,
    rect_b: &ImageRect,
) -> String {
    let gap = 16.0;
    let total_w = rect_a.w() + gap + rect_b.w();
    let total_h = rect_a.h().max(rect_b.h());
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{total_w}\" height=\"{total_h}\" \
         viewBox=\"0 0 {total_w} {total_h}\">\n"
    );
    let mut draw_mask = |video: &SilhouetteVideo, ox: f64| {
        let frame = video.frame(0);
        svg.push_str(&format!(
            "<rect x=\"{ox}\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"#f4f4f4\" stroke=\"#222\"/>\n",
            video.width(),
            video.height()
        ));
        for y in 0..video.height() {
            let mut x = 0;
            while x < video.width() {
                if frame.get(x, y) {
                    let start = x;
                    while x < video.width() && frame.get(x, y) {
                        x += 1;
                    }
                    svg.push_str(&format!(
                        "<rect x=\"{}\" y=\"{y}\" width=\"{}\" height=\"1\" fill=\"#555\"/>\n",
                        ox + f64::from(start),
                        x - start
                    ));
                } else {
                    x += 1;
                }
            }
        }
    };
    draw_mask(video_a, 0.0);
    draw_mask(video_b, rect_a.w() + gap);
    for (idx, c) in inliers.iter().enumerate() {
        let hue = (idx * 47) % 360;
        let color = format!("hsl({hue}, 85%, 45%)");
        let mut draw_line = |line: &BorderLine, ox: f64| {
            svg.push_str(&format!(
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"1.2\"/>\n",
                ox + line.p.0,
                line.p.1,
                ox + line.q.0,
                line.q.1
            ));
        };
        draw_line(&c.line_a, 0.0);
        draw_line(&c.line_b, rect_a.w() + gap);
    }
    svg.push_str("</svg>\n");
    svg
}

fn write_out(dir: &Path, name: &str, contents: &[u8]) -> Result<(), PipelineError> {
    let path = dir.join(name);
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    f.write_all(contents).map_err(io_err(&path))
}

/// Per-pair RANSAC seed derived from the master seed and the pair identity.
pub fn pair_ransac_seed(config: &PipelineConfig, i: usize, j: usize) -> u64 {
    mix_seed(
        config.seed ^ config.ransac.seed,
        SEED_TAG_RANSAC,
        (i as u64) << 20 | j as u64,
    )
}

/// Run the whole pipeline for every camera pair. Per-pair failures are
/// recorded in the report; only input acquisition and artifact I/O are fatal.
pub fn run_pipeline(config: &PipelineConfig) -> Result<EvaluationReport, PipelineError> {
    config.validate()?;
    let started = std::time::Instant::now();
    let input = acquire_input(config)?;
    let out_dir = config.out_dir.as_deref();

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        if let Some(sim) = &input.simulation {
            write_out(
                dir,
                "scene.json",
                serde_json::to_string_pretty(&sim.scene).unwrap().as_bytes(),
            )?;
            for (k, video) in input.videos.iter().enumerate() {
                save_packed(video, &dir.join(format!("cam_{k}.silv")))?;
            }
        }
        for ((i, j), f) in &input.f_truth {
            write_out(dir, &format!("f_truth_{i}_{j}.txt"), f.to_text().as_bytes())?;
        }
        for ((i, j), pts) in &input.gt_points {
            write_out(
                dir,
                &format!("gt_points_{i}_{j}.csv"),
                gt_points_to_csv(pts).as_bytes(),
            )?;
        }
    }

    let features: Vec<Result<CameraFeatures, String>> = input
        .videos
        .iter()
        .enumerate()
        .map(|(k, v)| camera_features(v, config, k).map_err(|e| e.to_string()))
        .collect();

    if let Some(dir) = out_dir {
        for (k, feat) in features.iter().enumerate() {
            if let Ok(f) = feat {
                write_out(
                    dir,
                    &format!("barcodes_{k}.txt"),
                    barcodes_to_dump(&f.lines, &f.barcodes).as_bytes(),
                )?;
            }
        }
    }

    let n = input.videos.len();
    let mut pair_reports = Vec::new();
    let mut timings = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let t0 = std::time::Instant::now();
            let report = match (&features[i], &features[j]) {
                (Ok(fa), Ok(fb)) => {
                    match process_pair(config, &input, fa, fb, i, j, out_dir) {
                        Ok(r) => r,
                        Err(e) => PairReport::failed((i, j), e.to_string()),
                    }
                }
                (Err(e), _) => PairReport::failed((i, j), format!("camera {i}: {e}")),
                (_, Err(e)) => PairReport::failed((i, j), format!("camera {j}: {e}")),
            };
            timings.push(((i, j), t0.elapsed().as_secs_f64()));
            pair_reports.push(report);
        }
    }

    let report = aggregate(pair_reports);
    if let Some(dir) = out_dir {
        write_out(
            dir,
            "report.json",
            serde_json::to_string_pretty(&report).unwrap().as_bytes(),
        )?;
        let timing_json: Vec<serde_json::Value> = timings
            .iter()
            .map(|((i, j), secs)| serde_json::json!({"pair": [i, j], "seconds": secs}))
            .collect();
        let sidecar = serde_json::json!({
            "total_seconds": started.elapsed().as_secs_f64(),
            "pairs": timing_json,
        });
        write_out(
            dir,
            "timings.json",
            serde_json::to_string_pretty(&sidecar).unwrap().as_bytes(),
        )?;
    }
    Ok(report)
}

/// Process one camera pair end to end: matching, estimation, degeneracy
/// detection, evaluation against whatever ground truth exists, artifacts.
#[allow(clippy::too_many_arguments)]
fn process_pair(
    config: &PipelineConfig,
    input: &PipelineInput,
    fa: &CameraFeatures,
    fb: &CameraFeatures,
    i: usize,
    j: usize,
    out_dir: Option<&Path>,
) -> Result<PairReport, PipelineError> {
    let cands = match_pair(fa, fb, config)?;
    if let Some(dir) = out_dir {
        write_out(
            dir,
            &format!("candidates_{i}_{j}.csv"),
            candidates_to_csv(&cands).as_bytes(),
        )?;
    }
    let ransac_cfg = RansacConfig {
        seed: pair_ransac_seed(config, i, j),
        ..config.ransac.clone()
    };
    let res = estimate_fundamental(&cands, &fa.rect, &fb.rect, &ransac_cfg)?;
    let res = detect_degeneracy(res, config.degeneracy_angle_span_min_rad);

    let tp = match input.f_for(i, j) {
        Some(f_truth) => Some(true_positive_rate(
            &cands,
            f_truth,
            &fa.rect,
            &fb.rect,
            config.true_positive_area_factor,
        )?),
        None => None,
    };
    let sed = match input.gt_for(i, j) {
        Some(gt) if !gt.is_empty() => Some(evaluate_f(&res.f, gt)?),
        _ => None,
    };

    if let Some(dir) = out_dir {
        write_out(dir, &format!("f_est_{i}_{j}.txt"), res.f.to_text().as_bytes())?;
        let export = EstimationExport::from_result(&res);
        write_out(
            dir,
            &format!("result_{i}_{j}.json"),
            serde_json::to_string_pretty(&export).unwrap().as_bytes(),
        )?;
        if config.emit_svg {
            let svg = overlay_svg(
                &input.videos[i],
                &input.videos[j],
                &res.inlier_pairs,
                &fa.rect,
                &fb.rect,
            );
            write_out(dir, &format!("overlay_{i}_{j}.svg"), svg.as_bytes())?;
        }
    }

    Ok(PairReport {
        pair: (i, j),
        candidate_count: cands.len(),
        inlier_count: res.inlier_pairs.len(),
        iterations_run: res.iterations_run,
        degenerate: res.degenerate,
        degenerate_reason: res.degenerate_reason,
        true_positive_rate: tp,
        sed,
        error: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{project, CameraModel, CameraSetup, ScenarioKind, WorldBounds};
    use nalgebra::Vector3;
    use rand::Rng;

    fn rect() -> ImageRect {
        ImageRect::new(640, 480)
    }

    fn small_scenario(kind: ScenarioKind, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            kind,
            num_cubes: 6,
            num_frames: 120,
            seed,
            cameras: CameraSetup::Ring {
                count: 2,
                radius: 12.0,
                height: 2.0,
                focal_px: 260.0,
                image_width: 320,
                image_height: 240,
            },
            ..ScenarioConfig::generic(seed)
        }
    }

    fn small_config(kind: ScenarioKind, seed: u64) -> PipelineConfig {
        let mut config = PipelineConfig::for_scenario(small_scenario(kind, seed));
        config.seed = seed;
        config.lines_per_camera = 500;
        config.candidate_limit = 300;
        config.eval_correspondences = 300;
        config.ransac.max_iterations = 4000;
        config
    }

    struct Rig {
        cam_a: CameraModel,
        cam_b: CameraModel,
        f: FundamentalMatrix,
        e: HomPoint2,
        e_prime: HomPoint2,
    }

    fn rig() -> Rig {
        let cam_a =
            CameraModel::look_at(Vector3::new(12.0, 2.0, 0.0), Vector3::zeros(), 500.0, rect())
                .unwrap();
        let cam_b =
            CameraModel::look_at(Vector3::new(3.0, 2.5, 11.0), Vector3::zeros(), 500.0, rect())
                .unwrap();
        let f = crate::simulator::ground_truth_f(&cam_a, &cam_b).unwrap();
        let e = project(&cam_a, cam_b.center()).unwrap();
        let e_prime = project(&cam_b, cam_a.center()).unwrap();
        Rig {
            cam_a,
            cam_b,
            f,
            e,
            e_prime,
        }
    }

    fn exact_candidates(r: &Rig, count: usize, seed: u64) -> Vec<CandidatePair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        while out.len() < count {
            let xw = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            if !r.cam_a.sees(&xw) || !r.cam_b.sees(&xw) {
                continue;
            }
            let xa = project(&r.cam_a, &xw).unwrap();
            let xb = project(&r.cam_b, &xw).unwrap();
            let (Ok(la), Ok(lb)) = (line_through(&r.e, &xa), line_through(&r.e_prime, &xb)) else {
                continue;
            };
            let (Some(sa), Some(sb)) = (clip_line_to_rect(&la, &rect()), clip_line_to_rect(&lb, &rect()))
            else {
                continue;
            };
            let id = out.len();
            out.push(CandidatePair {
                line_a: BorderLine {
                    id,
                    p: sa.p,
                    q: sa.q,
                    line: la,
                },
                line_b: BorderLine {
                    id,
                    p: sb.p,
                    q: sb.q,
                    line: lb,
                },
                score: 1.0,
            });
        }
        out
    }

    #[test]
    fn true_positive_rate_of_exact_pairs_is_one() {
        let r = rig();
        let cands = exact_candidates(&r, 100, 71);
        let rate = true_positive_rate(&cands, &r.f, &rect(), &rect(), 3.0).unwrap();
        assert_eq!(rate, 1.0);
    }

    #[test]
    fn true_positive_rate_of_random_lines_is_near_zero() {
        let r = rig();
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let la = sample_border_lines(&rect(), 200, &mut rng);
        let lb = sample_border_lines(&rect(), 200, &mut rng);
        let cands: Vec<CandidatePair> = la
            .into_iter()
            .zip(lb)
            .map(|(a, b)| CandidatePair {
                line_a: a,
                line_b: b,
                score: 0.5,
            })
            .collect();
        let rate = true_positive_rate(&cands, &r.f, &rect(), &rect(), 3.0).unwrap();
        assert!(rate < 0.05, "rate = {rate}");
    }

    #[test]
    fn evaluate_f_on_truth_is_zero() {
        let r = rig();
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let gt = ground_truth_correspondences(
            &r.cam_a,
            &r.cam_b,
            &WorldBounds::centered(3.0),
            200,
            &mut rng,
        )
        .unwrap();
        let summary = evaluate_f(&r.f, &gt).unwrap();
        assert!(summary.mean < 1e-9);
        assert!(summary.max < 1e-9);
        assert_eq!(summary.evaluated, 200);
        assert_eq!(summary.domain_errors, 0);

        // shifting one coordinate of every x' by 2 px keeps the mean near 1
        let shifted: Vec<(HomPoint2, HomPoint2)> = gt
            .iter()
            .map(|(a, b)| {
                let (x, y) = b.to_xy().unwrap();
                (*a, HomPoint2::from_xy(x + 2.0, y))
            })
            .collect();
        let summary = evaluate_f(&r.f, &shifted).unwrap();
        assert!(summary.mean <= 2.0 + 1e-9, "mean = {}", summary.mean);
        assert!(summary.mean > 0.1);
    }

    #[test]
    fn candidates_csv_round_trip() {
        let r = rig();
        let cands = exact_candidates(&r, 20, 74);
        let csv = candidates_to_csv(&cands);
        let back = candidates_from_csv(&csv).unwrap();
        assert_eq!(back.len(), cands.len());
        for (orig, parsed) in cands.iter().zip(&back) {
            assert_eq!(orig.line_a.id, parsed.line_a.id);
            assert!((orig.score - parsed.score).abs() < 1e-15);
            assert!((orig.line_a.p.0 - parsed.line_a.p.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gt_points_csv_round_trip() {
        let pts = vec![
            (HomPoint2::from_xy(1.5, 2.25), HomPoint2::from_xy(3.0, 4.125)),
            (HomPoint2::from_xy(-1.0, 0.5), HomPoint2::from_xy(7.0, 8.0)),
        ];
        let back = parse_gt_points_csv(&gt_points_to_csv(&pts)).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0.to_xy().unwrap(), (1.5, 2.25));
        assert_eq!(back[1].1.to_xy().unwrap(), (7.0, 8.0));
    }

    #[test]
    fn small_generic_pipeline_end_to_end() {
        let config = small_config(ScenarioKind::Generic, 1);
        let report = run_pipeline(&config).unwrap();
        assert_eq!(report.pairs.len(), 1);
        let pair = &report.pairs[0];
        assert!(pair.error.is_none(), "pair error: {:?}", pair.error);
        assert!(pair.candidate_count >= 3);
        assert!(pair.sed.is_some());
        assert!(pair.true_positive_rate.is_some());
    }

    #[test]
    fn pipeline_is_deterministic() {
        let config = small_config(ScenarioKind::Generic, 2);
        let r1 = run_pipeline(&config).unwrap();
        let r2 = run_pipeline(&config).unwrap();
        assert_eq!(
            serde_json::to_string(&r1).unwrap(),
            serde_json::to_string(&r2).unwrap()
        );
    }

    #[test]
    fn svg_emission_never_changes_results() {
        let dir = std::env::temp_dir().join(format!("epiline_svg_{}", std::process::id()));
        let mut with_svg = small_config(ScenarioKind::Generic, 4);
        with_svg.emit_svg = true;
        with_svg.out_dir = Some(dir.join("svg"));
        let mut without_svg = with_svg.clone();
        without_svg.emit_svg = false;
        without_svg.out_dir = Some(dir.join("plain"));
        let a = run_pipeline(&with_svg).unwrap();
        let b = run_pipeline(&without_svg).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert!(dir.join("svg").join("overlay_0_1.svg").exists());
        assert!(!dir.join("plain").join("overlay_0_1.svg").exists());
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn pipeline_records_missing_input_as_fatal() {
        let mut config = small_config(ScenarioKind::Generic, 3);
        config.input = InputSpec::Masks {
            cameras: vec![
                MaskInput::Packed {
                    path: PathBuf::from("/nonexistent/a.silv"),
                },
                MaskInput::Packed {
                    path: PathBuf::from("/nonexistent/b.silv"),
                },
            ],
            f_truth: vec![],
            gt_points: vec![],
        };
        assert!(run_pipeline(&config).is_err());
    }

    #[test]
    fn config_json_round_trip_with_defaults() {
        let json = r#"{
            "input": {"kind": "simulate", "scenario": {"kind": "generic", "seed": 5}},
            "seed": 5
        }"#;
        let config: PipelineConfig = serde_json::from_str(json).unwrap();
        assert_eq!(config.lines_per_camera, 40_000);
        assert_eq!(config.candidate_limit, 1000);
        assert_eq!(config.mutual_k, 3);
        assert_eq!(config.ransac.max_iterations, 10_000);
        assert!((config.true_positive_area_factor - 3.0).abs() < 1e-15);
        let text = serde_json::to_string(&config).unwrap();
        let _back: PipelineConfig = serde_json::from_str(&text).unwrap();
    }
}
