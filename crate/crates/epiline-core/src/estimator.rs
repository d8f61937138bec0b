//! RANSAC over candidate epipolar line pairs.
//!
//! Each trial samples two candidate pairs with probability proportional to
//! their (clamped) correlation, intersects the two lines per camera to
//! propose epipoles, picks the remaining candidate closest to both epipoles
//! as the third pair, builds the pencil homography from the three pairs, and
//! scores it by counting candidates whose mapped line encloses less than
//! `threshold x image-width` of area against its mate. The best trial's
//! homography yields the fundamental matrix; no refinement follows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    angle_between_lines, apply_pencil_homography, area_between_lines, build_pencil_homography,
    epipole_incidence_residual, f_from_pencil, intersect, FundamentalMatrix, GeometryError,
    HomLine2, HomPoint2, ImageRect, PencilHomography,
};
use crate::matching::CandidatePair;

/// Retries of the two-pair draw before a trial is declared degenerate.
const SAMPLE_RETRIES: usize = 32;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("need at least {needed} candidates, got {got}")]
    InsufficientCandidates { needed: usize, got: usize },
    #[error("estimation failed after {iterations} trials: {diagnostics}")]
    EstimationFailure {
        iterations: usize,
        diagnostics: String,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Reasons a single trial can be skipped; tallied for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TrialSkip {
    DegenerateSample,
    DegenerateEpipoles,
    ThirdPairUnavailable,
    PencilRejected,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Inlier area threshold in pixels; the actual bound is this times the
    /// width of image B.
    pub inlier_area_threshold_px: f64,
    pub seed: u64,
    /// Minimum angle (degrees) between the two sampled lines of one camera.
    pub min_pair_separation_deg: f64,
    /// Confidence for the adaptive trial bound; 0 disables early exit.
    pub early_exit_confidence: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            inlier_area_threshold_px: 3.0,
            seed: 0,
            min_pair_separation_deg: 2.0,
            early_exit_confidence: 0.999,
        }
    }
}

/// Outcome of the estimation: the fundamental matrix is derived from the
/// winning pencil homography, and every listed inlier re-passes the area
/// criterion under it.
#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub f: FundamentalMatrix,
    pub h: PencilHomography,
    pub inlier_pairs: Vec<CandidatePair>,
    /// Indices of the inliers in the candidate list the estimator saw.
    pub inlier_indices: Vec<usize>,
    pub iterations_run: usize,
    pub degenerate: bool,
    pub degenerate_reason: Option<String>,
}

/// Draw two distinct candidates with probability proportional to
/// `max(score, 0)`, rejecting draws whose two lines in either camera meet at
/// less than `min_sep_deg`. Returns candidate indices.
pub fn sample_two_pairs(
    cands: &[CandidatePair],
    rng: &mut impl Rng,
    min_sep_deg: f64,
) -> Result<(usize, usize), SampleError> {
    let weights: Vec<f64> = cands.iter().map(|c| c.score.max(0.0)).collect();
    let positive = weights.iter().filter(|&&w| w > 0.0).count();
    if positive < 2 {
        return Err(SampleError::InsufficientCandidates {
            needed: 2,
            got: positive,
        });
    }
    let total: f64 = weights.iter().sum();
    let min_sep = min_sep_deg.to_radians();
    let draw = |rng: &mut dyn rand::RngCore, skip: Option<usize>, total: f64| -> usize {
        let mut r = rng.random::<f64>() * total;
        let mut last = 0;
        for (i, &w) in weights.iter().enumerate() {
            if Some(i) == skip || w <= 0.0 {
                continue;
            }
            last = i;
            if r < w {
                return i;
            }
            r -= w;
        }
        last
    };
    for _ in 0..SAMPLE_RETRIES {
        let i = draw(rng, None, total);
        let j = draw(rng, Some(i), total - weights[i]);
        debug_assert_ne!(i, j);
        let sep_a = angle_between_lines(&cands[i].line_a.line, &cands[j].line_a.line);
        let sep_b = angle_between_lines(&cands[i].line_b.line, &cands[j].line_b.line);
        match (sep_a, sep_b) {
            (Ok(a), Ok(b)) if a >= min_sep && b >= min_sep => return Ok((i, j)),
            _ => continue,
        }
    }
    Err(SampleError::DegenerateSample)
}

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("need at least {needed} positively scored candidates, got {got}")]
    InsufficientCandidates { needed: usize, got: usize },
    #[error("no well-separated pair found")]
    DegenerateSample,
}

/// Epipole proposal: the meet of the two A-lines and of the two B-lines.
/// Either epipole may be an ideal point.
pub fn propose_epipoles(
    p1: &CandidatePair,
    p2: &CandidatePair,
) -> Result<(HomPoint2, HomPoint2), GeometryError> {
    let e = intersect(&p1.line_a.line, &p2.line_a.line)?;
    let e_prime = intersect(&p1.line_b.line, &p2.line_b.line)?;
    Ok((e, e_prime))
}

/// Index of the unused candidate minimizing `d(l, e) + d(l', e')`, ties to
/// the lower index. Ideal epipoles contribute the angular deviation scaled by
/// the image width.
pub fn third_pair(
    cands: &[CandidatePair],
    used: (usize, usize),
    e: &HomPoint2,
    e_prime: &HomPoint2,
    rect_a: &ImageRect,
    rect_b: &ImageRect,
) -> Result<usize, EstimatorError> {
    let mut best: Option<(f64, usize)> = None;
    for (i, c) in cands.iter().enumerate() {
        if i == used.0 || i == used.1 {
            continue;
        }
        let (Ok(da), Ok(db)) = (
            epipole_incidence_residual(&c.line_a.line, e, rect_a.w()),
            epipole_incidence_residual(&c.line_b.line, e_prime, rect_b.w()),
        ) else {
            continue;
        };
        let crit = da + db;
        if best.map_or(true, |(b, _)| crit < b) {
            best = Some((crit, i));
        }
    }
    best.map(|(_, i)| i)
        .ok_or(EstimatorError::InsufficientCandidates {
            needed: 3,
            got: cands.len().min(2),
        })
}

/// Count the candidates whose A-line, mapped through the pencil homography,
/// encloses less than `threshold_px x width(B)` of area against its B-line.
pub fn score_homography(
    h: &PencilHomography,
    cands: &[CandidatePair],
    rect_b: &ImageRect,
    threshold_px: f64,
) -> (usize, Vec<usize>) {
    let bound = threshold_px * rect_b.w();
    let mut inliers = Vec::new();
    for (i, c) in cands.iter().enumerate() {
        let Ok(mapped) = apply_pencil_homography(h, &c.line_a.line) else {
            continue;
        };
        if area_between_lines(&mapped, &c.line_b.line, rect_b) < bound {
            inliers.push(i);
        }
    }
    (inliers.len(), inliers)
}

struct Trial {
    h: PencilHomography,
    inliers: Vec<usize>,
}

fn run_trial(
    cands: &[CandidatePair],
    rect_a: &ImageRect,
    rect_b: &ImageRect,
    cfg: &RansacConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Trial, TrialSkip> {
    let (i, j) = sample_two_pairs(cands, rng, cfg.min_pair_separation_deg).map_err(|e| match e {
        SampleError::DegenerateSample => TrialSkip::DegenerateSample,
        SampleError::InsufficientCandidates { .. } => TrialSkip::DegenerateSample,
    })?;
    let (e, e_prime) =
        propose_epipoles(&cands[i], &cands[j]).map_err(|_| TrialSkip::DegenerateEpipoles)?;
    let k = third_pair(cands, (i, j), &e, &e_prime, rect_a, rect_b)
        .map_err(|_| TrialSkip::ThirdPairUnavailable)?;
    let pairs = [
        (cands[i].line_a.line, cands[i].line_b.line),
        (cands[j].line_a.line, cands[j].line_b.line),
        (cands[k].line_a.line, cands[k].line_b.line),
    ];
    let h = build_pencil_homography(&pairs, &e, &e_prime, rect_a, rect_b)
        .map_err(|_| TrialSkip::PencilRejected)?;
    let (_, inliers) = score_homography(&h, cands, rect_b, cfg.inlier_area_threshold_px);
    Ok(Trial { h, inliers })
}

/// Adaptive RANSAC trial bound at the given confidence for sample size 3.
fn required_trials(confidence: f64, inlier_ratio: f64) -> f64 {
    if inlier_ratio >= 1.0 {
        return 0.0;
    }
    let w3 = inlier_ratio.powi(3);
    if w3 <= 0.0 {
        return f64::INFINITY;
    }
    (1.0 - confidence).ln() / (1.0 - w3).ln()
}

/// Run the full RANSAC. Deterministic for a fixed `(candidates, config)`;
/// the winner is the trial with the most inliers, earlier trials win ties,
/// and nothing is recomputed after selection.
pub fn estimate_fundamental(
    cands: &[CandidatePair],
    rect_a: &ImageRect,
    rect_b: &ImageRect,
    cfg: &RansacConfig,
) -> Result<EstimationResult, EstimatorError> {
    if cands.len() < 3 {
        return Err(EstimatorError::InsufficientCandidates {
            needed: 3,
            got: cands.len(),
        });
    }
    let positive = cands.iter().filter(|c| c.score > 0.0).count();
    if positive < 2 {
        return Err(EstimatorError::InsufficientCandidates {
            needed: 2,
            got: positive,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<Trial> = None;
    let mut skips = [0usize; 4];
    let mut iterations_run = 0usize;

    for trial_idx in 0..cfg.max_iterations {
        iterations_run = trial_idx + 1;
        match run_trial(cands, rect_a, rect_b, cfg, &mut rng) {
            Ok(trial) => {
                if best
                    .as_ref()
                    .map_or(true, |b| trial.inliers.len() > b.inliers.len())
                {
                    best = Some(trial);
                }
            }
            Err(skip) => {
                skips[skip as usize] += 1;
            }
        }
        if cfg.early_exit_confidence > 0.0 {
            if let Some(b) = &best {
                let w = b.inliers.len() as f64 / cands.len() as f64;
                if iterations_run as f64 >= required_trials(cfg.early_exit_confidence, w) {
                    break;
                }
            }
        }
    }

    let Some(winner) = best else {
        return Err(EstimatorError::EstimationFailure {
            iterations: iterations_run,
            diagnostics: format!(
                "all trials degenerate (sample: {}, epipoles: {}, third pair: {}, pencil: {})",
                skips[TrialSkip::DegenerateSample as usize],
                skips[TrialSkip::DegenerateEpipoles as usize],
                skips[TrialSkip::ThirdPairUnavailable as usize],
                skips[TrialSkip::PencilRejected as usize],
            ),
        });
    };
    let f = f_from_pencil(&winner.h)?;
    Ok(EstimationResult {
        f,
        h: winner.h,
        inlier_pairs: winner.inliers.iter().map(|&i| cands[i].clone()).collect(),
        inlier_indices: winner.inliers,
        iterations_run,
        degenerate: false,
        degenerate_reason: None,
    })
}

/// Direction angle (mod pi) of the pencil projection of a line at `e`: the
/// coefficient vector is projected onto `{m : m . e = 0}` and the direction
/// of the resulting line is reported in `[0, pi)`.
fn pencil_direction_angle(line: &HomLine2, e: &HomPoint2) -> Option<f64> {
    let u = line.unit_normalized().ok()?;
    let en = e.normalized();
    let proj = u.coords() - en.coords() * u.coords().dot(en.coords());
    let (a, b) = (proj.x, proj.y);
    if a.hypot(b) < 1e-12 {
        return None;
    }
    // direction vector of the line (b, -a), folded to [0, pi)
    let mut angle = (-a).atan2(b);
    if angle < 0.0 {
        angle += std::f64::consts::PI;
    }
    if angle >= std::f64::consts::PI {
        angle -= std::f64::consts::PI;
    }
    Some(angle)
}

/// Flag the result degenerate when the inlier A-lines span less than
/// `angle_span_min_rad` of the pencil at the proposed epipole — the
/// all-motion-in-one-epipolar-plane failure mode. The fundamental matrix is
/// still reported.
pub fn detect_degeneracy(mut result: EstimationResult, angle_span_min_rad: f64) -> EstimationResult {
    let angles: Vec<f64> = result
        .inlier_pairs
        .iter()
        .filter_map(|c| pencil_direction_angle(&c.line_a.line, result.h.epipole_a()))
        .collect();
    if angles.is_empty() {
        result.degenerate = true;
        result.degenerate_reason = Some("no measurable inlier pencil directions".into());
        return result;
    }
    let span = circular_span_mod_pi(&angles);
    if span < angle_span_min_rad {
        result.degenerate = true;
        result.degenerate_reason =
            Some("inlier pencil spans a single epipolar line".into());
    }
    result
}

/// Span of a set of angles on the half-circle `[0, pi)`: pi minus the largest
/// gap between consecutive (sorted, wrapped) angles.
fn circular_span_mod_pi(angles: &[f64]) -> f64 {
    if angles.len() < 2 {
        return 0.0;
    }
    let mut sorted = angles.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut max_gap = sorted[0] + std::f64::consts::PI - sorted[sorted.len() - 1];
    for w in sorted.windows(2) {
        max_gap = max_gap.max(w[1] - w[0]);
    }
    (std::f64::consts::PI - max_gap).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barcode::BorderLine;
    use crate::geometry::{
        clip_line_to_rect, epipoles_of, line_through, symmetric_epipolar_distance,
    };
    use crate::simulator::{ground_truth_f, project, CameraModel};
    use nalgebra::Vector3;
    use rand::SeedableRng;

    fn rect() -> ImageRect {
        ImageRect::new(640, 480)
    }

    struct Rig {
        cam_a: CameraModel,
        cam_b: CameraModel,
        f: FundamentalMatrix,
        e: HomPoint2,
        e_prime: HomPoint2,
    }

    fn rig() -> Rig {
        let cam_a = CameraModel::look_at(Vector3::new(12.0, 2.0, 0.0), Vector3::zeros(), 500.0, rect())
            .unwrap();
        let cam_b = CameraModel::look_at(Vector3::new(3.0, 2.5, 11.0), Vector3::zeros(), 500.0, rect())
            .unwrap();
        let f = ground_truth_f(&cam_a, &cam_b).unwrap();
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

    /// Candidate pair from the epipolar lines of a visible world point, with
    /// border endpoints taken from the clipped segments.
    fn exact_candidate(rig: &Rig, id: usize, xw: &Vector3<f64>, score: f64) -> Option<CandidatePair> {
        if !rig.cam_a.sees(xw) || !rig.cam_b.sees(xw) {
            return None;
        }
        let xa = project(&rig.cam_a, xw).ok()?;
        let xb = project(&rig.cam_b, xw).ok()?;
        let la = line_through(&rig.e, &xa).ok()?;
        let lb = line_through(&rig.e_prime, &xb).ok()?;
        let seg_a = clip_line_to_rect(&la, &rect())?;
        let seg_b = clip_line_to_rect(&lb, &rect())?;
        Some(CandidatePair {
            line_a: BorderLine {
                id,
                p: seg_a.p,
                q: seg_a.q,
                line: la,
            },
            line_b: BorderLine {
                id,
                p: seg_b.p,
                q: seg_b.q,
                line: lb,
            },
            score,
        })
    }

    fn exact_candidates(rig: &Rig, count: usize, seed: u64) -> Vec<CandidatePair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        while out.len() < count {
            let xw = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            if let Some(c) = exact_candidate(rig, out.len(), &xw, 1.0) {
                out.push(c);
            }
        }
        out
    }

    /// Random line pairs (border-sampled) acting as outliers.
    fn outlier_candidates(count: usize, start_id: usize, seed: u64) -> Vec<CandidatePair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lines_a = crate::barcode::sample_border_lines(&rect(), count, &mut rng);
        let lines_b = crate::barcode::sample_border_lines(&rect(), count, &mut rng);
        lines_a
            .into_iter()
            .zip(lines_b)
            .enumerate()
            .map(|(i, (mut a, mut b))| {
                a.id = start_id + i;
                b.id = start_id + i;
                CandidatePair {
                    line_a: a,
                    line_b: b,
                    score: 0.9,
                }
            })
            .collect()
    }

    #[test]
    fn sampling_respects_weights() {
        let r = rig();
        let mut cands = exact_candidates(&r, 3, 51);
        cands[0].score = 0.8;
        cands[1].score = 0.4;
        cands[2].score = 0.4;
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let mut first_is_0 = 0usize;
        let draws = 100_000;
        for _ in 0..draws {
            let (i, _) = sample_two_pairs(&cands, &mut rng, 0.0).unwrap();
            if i == 0 {
                first_is_0 += 1;
            }
        }
        let freq = first_is_0 as f64 / draws as f64;
        assert!((freq - 0.5).abs() < 0.02, "freq = {freq}");
    }

    #[test]
    fn sampling_never_draws_nonpositive_scores() {
        let r = rig();
        let mut cands = exact_candidates(&r, 3, 53);
        cands[2].score = -0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        for _ in 0..2000 {
            let (i, j) = sample_two_pairs(&cands, &mut rng, 0.0).unwrap();
            assert!(i != 2 && j != 2);
        }
        // two candidates with equal positive scores: always the same unordered pair
        cands.truncate(2);
        let (i, j) = sample_two_pairs(&cands, &mut rng, 0.0).unwrap();
        assert_eq!([i.min(j), i.max(j)], [0, 1]);
        // fewer than two positive scores is an error
        cands[1].score = 0.0;
        assert!(matches!(
            sample_two_pairs(&cands, &mut rng, 0.0),
            Err(SampleError::InsufficientCandidates { .. })
        ));
    }

    #[test]
    fn epipole_proposals() {
        // A-lines x=0 and y=0 meet at the origin
        let mk = |a: (f64, f64), b: (f64, f64), id| BorderLine::from_endpoints(id, a, b).unwrap();
        let p1 = CandidatePair {
            line_a: mk((0.0, 0.0), (0.0, 480.0), 0),
            line_b: mk((0.0, 0.0), (640.0, 480.0), 0),
            score: 1.0,
        };
        let p2 = CandidatePair {
            line_a: mk((0.0, 0.0), (640.0, 0.0), 1),
            line_b: mk((0.0, 480.0), (640.0, 0.0), 1),
            score: 1.0,
        };
        let (e, _) = propose_epipoles(&p1, &p2).unwrap();
        assert_eq!(e.to_xy().unwrap(), (0.0, 0.0));

        // parallel A-lines y=0 and y=5 meet at the ideal point along x
        let p3 = CandidatePair {
            line_a: mk((0.0, 5.0), (640.0, 5.0), 2),
            line_b: mk((0.0, 100.0), (640.0, 100.0), 2),
            score: 1.0,
        };
        let (e, _) = propose_epipoles(&p2, &p3).unwrap();
        assert!(e.is_at_infinity());

        // exact pairs recover the true epipoles
        let r = rig();
        let cands = exact_candidates(&r, 2, 55);
        let (e, ep) = propose_epipoles(&cands[0], &cands[1]).unwrap();
        let en = e.normalized();
        let tn = r.e.normalized();
        assert!((en.coords() - tn.coords()).norm().min((en.coords() + tn.coords()).norm()) < 1e-8);
        let epn = ep.normalized();
        let tpn = r.e_prime.normalized();
        assert!(
            (epn.coords() - tpn.coords())
                .norm()
                .min((epn.coords() + tpn.coords()).norm())
                < 1e-8
        );
    }

    #[test]
    fn third_pair_minimizes_criterion() {
        let r = rig();
        let cands = exact_candidates(&r, 20, 56);
        let (e, ep) = propose_epipoles(&cands[0], &cands[1]).unwrap();
        let k = third_pair(&cands, (0, 1), &e, &ep, &rect(), &rect()).unwrap();
        // exhaustive check
        let crit = |i: usize| {
            epipole_incidence_residual(&cands[i].line_a.line, &e, rect().w()).unwrap()
                + epipole_incidence_residual(&cands[i].line_b.line, &ep, rect().w()).unwrap()
        };
        for i in 2..cands.len() {
            assert!(crit(k) <= crit(i) + 1e-12);
        }
        // an exact pair passes through both epipoles: criterion ~ 0
        assert!(crit(k) < 1e-6);
    }

    #[test]
    fn score_homography_counts_area_inliers() {
        let r = rig();
        let cands = exact_candidates(&r, 30, 57);
        let (e, ep) = propose_epipoles(&cands[0], &cands[1]).unwrap();
        let k = third_pair(&cands, (0, 1), &e, &ep, &rect(), &rect()).unwrap();
        let pairs = [
            (cands[0].line_a.line, cands[0].line_b.line),
            (cands[1].line_a.line, cands[1].line_b.line),
            (cands[k].line_a.line, cands[k].line_b.line),
        ];
        let h = build_pencil_homography(&pairs, &e, &ep, &rect(), &rect()).unwrap();
        let (count, inliers) = score_homography(&h, &cands, &rect(), 3.0);
        assert_eq!(count, cands.len(), "all exact candidates are inliers");
        // displaced B-line falls out when its enclosed area crosses the bound
        let mut spoiled = cands.clone();
        let u = spoiled[5].line_b.line.unit_normalized().unwrap();
        // shift by ~10 * width / segment-length pixels of average separation
        spoiled[5].line_b.line =
            HomLine2::new(u.coords().x, u.coords().y, u.coords().z + 10.0);
        let (_, inl2) = score_homography(&h, &spoiled, &rect(), 3.0);
        assert!(!inl2.contains(&5));
        assert_eq!(inl2.len(), inliers.len() - 1);
        // every reported inlier re-passes an independent area evaluation
        for &i in &inl2 {
            let mapped = apply_pencil_homography(&h, &spoiled[i].line_a.line).unwrap();
            let area = area_between_lines(&mapped, &spoiled[i].line_b.line, &rect());
            assert!(area < 3.0 * rect().w());
        }
    }

    #[test]
    fn exact_candidates_recover_f() {
        let r = rig();
        let cands = exact_candidates(&r, 60, 58);
        let cfg = RansacConfig {
            seed: 7,
            ..RansacConfig::default()
        };
        let res = estimate_fundamental(&cands, &rect(), &rect(), &cfg).unwrap();
        assert_eq!(res.inlier_pairs.len(), cands.len());
        let d = res.f.frobenius_distance(&r.f);
        assert!(d < 1e-6, "frobenius distance {d}");
        // zero-outlier exactness allows the adaptive bound to fire immediately
        assert!(res.iterations_run < 100);
        // epipole consistency between F and the stored homography
        let (e, ep) = epipoles_of(&res.f).unwrap();
        let he = res.h.epipole_a().normalized();
        let hep = res.h.epipole_b().normalized();
        assert!((e.coords() - he.coords()).norm().min((e.coords() + he.coords()).norm()) < 1e-8);
        assert!(
            (ep.coords() - hep.coords())
                .norm()
                .min((ep.coords() + hep.coords()).norm())
                < 1e-8
        );
    }

    #[test]
    fn half_outliers_still_recover_f() {
        let r = rig();
        let mut cands = exact_candidates(&r, 50, 59);
        cands.extend(outlier_candidates(50, 50, 60));
        for (i, c) in cands.iter_mut().enumerate() {
            c.line_a.id = i;
            c.line_b.id = i;
        }
        let cfg = RansacConfig {
            seed: 11,
            ..RansacConfig::default()
        };
        let res = estimate_fundamental(&cands, &rect(), &rect(), &cfg).unwrap();
        // evaluate on held-out exact correspondences
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let bounds = crate::simulator::WorldBounds::centered(3.0);
        let gt = crate::simulator::ground_truth_correspondences(
            &r.cam_a, &r.cam_b, &bounds, 500, &mut rng,
        )
        .unwrap();
        let mean: f64 = gt
            .iter()
            .map(|(xa, xb)| symmetric_epipolar_distance(&res.f, xa, xb).unwrap())
            .sum::<f64>()
            / gt.len() as f64;
        assert!(mean <= 2.0, "mean symmetric epipolar distance {mean}");
    }

    #[test]
    fn too_few_candidates_is_an_error() {
        let r = rig();
        let cands = exact_candidates(&r, 2, 62);
        assert!(matches!(
            estimate_fundamental(&cands, &rect(), &rect(), &RansacConfig::default()),
            Err(EstimatorError::InsufficientCandidates { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn all_degenerate_trials_fail_with_diagnostics() {
        // three candidates sharing one A-line direction: no sampled pair ever
        // clears the minimum separation, so every trial is skipped
        let mk = |id, y: f64| {
            let a = BorderLine::from_endpoints(id, (0.0, y), (640.0, y)).unwrap();
            let b = BorderLine::from_endpoints(id, (0.0, y + 3.0), (640.0, y + 7.0)).unwrap();
            CandidatePair {
                line_a: a,
                line_b: b,
                score: 1.0,
            }
        };
        let cands = vec![mk(0, 10.0), mk(1, 200.0), mk(2, 400.0)];
        let cfg = RansacConfig {
            max_iterations: 50,
            seed: 1,
            ..RansacConfig::default()
        };
        match estimate_fundamental(&cands, &rect(), &rect(), &cfg) {
            Err(EstimatorError::EstimationFailure { iterations, diagnostics }) => {
                assert_eq!(iterations, 50);
                assert!(diagnostics.contains("sample"), "diagnostics: {diagnostics}");
            }
            other => panic!("expected estimation failure, got {other:?}"),
        }
    }

    #[test]
    fn estimation_is_deterministic() {
        let r = rig();
        let mut cands = exact_candidates(&r, 30, 63);
        cands.extend(outlier_candidates(30, 30, 64));
        let cfg = RansacConfig {
            seed: 5,
            ..RansacConfig::default()
        };
        let r1 = estimate_fundamental(&cands, &rect(), &rect(), &cfg).unwrap();
        let r2 = estimate_fundamental(&cands, &rect(), &rect(), &cfg).unwrap();
        assert_eq!(r1.f.matrix(), r2.f.matrix());
        assert_eq!(r1.inlier_indices, r2.inlier_indices);
        assert_eq!(r1.iterations_run, r2.iterations_run);
    }

    #[test]
    fn degeneracy_flags_narrow_pencils() {
        let r = rig();
        let cands = exact_candidates(&r, 40, 65);
        let cfg = RansacConfig {
            seed: 3,
            ..RansacConfig::default()
        };
        let res = estimate_fundamental(&cands, &rect(), &rect(), &cfg).unwrap();
        // exact candidates spread across the volume: far above 0.1 rad
        let res = detect_degeneracy(res, 0.1);
        assert!(!res.degenerate);

        // all inliers within half a degree of one pencil direction
        let mut narrow = res.clone();
        let e = *narrow.h.epipole_a();
        let base = pencil_direction_angle(&narrow.inlier_pairs[0].line_a.line, &e).unwrap();
        narrow.inlier_pairs = (0..10)
            .map(|i| {
                let angle = base + (i as f64) * 0.0008;
                let dir = (angle.sin(), -angle.cos());
                let (ex, ey) = e.to_xy().unwrap();
                let p = HomPoint2::from_xy(ex + dir.0 * 1000.0, ey + dir.1 * 1000.0);
                let line = line_through(&e, &p).unwrap();
                let seg = Segment_fallback(&line);
                CandidatePair {
                    line_a: BorderLine {
                        id: i,
                        p: seg.0,
                        q: seg.1,
                        line,
                    },
                    line_b: narrow.inlier_pairs[0].line_b.clone(),
                    score: 1.0,
                }
            })
            .collect();
        let flagged = detect_degeneracy(narrow, 0.1);
        assert!(flagged.degenerate);
        assert_eq!(
            flagged.degenerate_reason.as_deref(),
            Some("inlier pencil spans a single epipolar line")
        );
    }

    // endpoints are irrelevant for degeneracy; fabricate any two
    #[allow(non_snake_case)]
    fn Segment_fallback(line: &HomLine2) -> ((f64, f64), (f64, f64)) {
        match clip_line_to_rect(line, &rect()) {
            Some(s) => (s.p, s.q),
            None => ((0.0, 0.0), (1.0, 1.0)),
        }
    }

    #[test]
    fn circular_span_examples() {
        use std::f64::consts::PI;
        // two directions 90 degrees apart
        let span = circular_span_mod_pi(&[0.2, 0.2 + PI / 2.0]);
        assert!((span - PI / 2.0).abs() < 1e-12);
        // cluster within half a degree
        let tight: Vec<f64> = (0..10).map(|i| 1.0 + i as f64 * 0.0008).collect();
        assert!(circular_span_mod_pi(&tight) < 0.1);
        // spread over > 30 degrees
        let wide: Vec<f64> = (0..10).map(|i| i as f64 * 0.07).collect();
        assert!(circular_span_mod_pi(&wide) > 30f64.to_radians());
        // wrap-around cluster near 0 and pi
        let wrapped = [0.01, 0.02, PI - 0.01, PI - 0.02];
        assert!(circular_span_mod_pi(&wrapped) < 0.1);
    }
}
