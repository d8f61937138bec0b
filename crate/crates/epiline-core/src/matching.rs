//! Cross-camera candidate selection: the correlation matrix of all informative
//! line barcodes, mutual top-k filtering, score-ranked truncation, and the
//! removal of candidates aligned with heavy straight-line traffic.
//!
//! Traffic suppression follows the heat-map route: sum all frames, binarize at
//! a high quantile of the nonzero counts, detect dominant lines with a Hough
//! transform, and drop candidate pairs whose lines hug a traffic line in both
//! cameras at once.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barcode::{ncc, BarcodeError, BorderLine, MotionBarcode};
use crate::geometry::{HomLine2, ImageRect};
use crate::mask_io::HeatMap;

/// Dense `n1 x n2` matrix of barcode correlations.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols);
        Self { rows, cols, values }
    }
}

/// A putative corresponding epipolar line pair with its correlation score.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePair {
    pub line_a: BorderLine,
    pub line_b: BorderLine,
    pub score: f64,
}

/// A dominant straight motion path detected on a heat map.
#[derive(Debug, Clone)]
pub struct TrafficLine {
    pub line: HomLine2,
    /// Mean heat (frames) along the line's raster.
    pub support: f64,
}

/// Matrix index pair with its score, before lines are attached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredIndexPair {
    pub a: usize,
    pub b: usize,
    pub score: f64,
}

/// Correlate every barcode of camera A against every barcode of camera B.
/// All barcodes must share one length and be non-constant.
pub fn correlation_matrix(
    barcodes_a: &[MotionBarcode],
    barcodes_b: &[MotionBarcode],
) -> Result<CorrelationMatrix, BarcodeError> {
    let rows = barcodes_a.len();
    let cols = barcodes_b.len();
    let values: Result<Vec<Vec<f64>>, BarcodeError> = barcodes_a
        .par_iter()
        .map(|a| barcodes_b.iter().map(|b| ncc(a, b)).collect())
        .collect();
    let values = values?.into_iter().flatten().collect();
    Ok(CorrelationMatrix { rows, cols, values })
}

/// Indices of the k largest entries of a strided slice, ties to lower index.
fn top_k_indices(values: impl Iterator<Item = f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<(usize, f64)> = values.enumerate().collect();
    idx.sort_by(|(i, x), (j, y)| y.partial_cmp(x).unwrap().then(i.cmp(j)));
    idx.truncate(k);
    idx.into_iter().map(|(i, _)| i).collect()
}

/// Pairs `(i, j)` whose score is simultaneously among the k largest of row `i`
/// and of column `j`. Ties break to the lower index; output is row-major.
pub fn mutual_topk_candidates(m: &CorrelationMatrix, k: usize) -> Vec<ScoredIndexPair> {
    assert!(k >= 1, "k must be >= 1");
    let row_top: Vec<Vec<usize>> = (0..m.rows)
        .map(|i| top_k_indices((0..m.cols).map(|j| m.get(i, j)), k))
        .collect();
    let col_top: Vec<Vec<usize>> = (0..m.cols)
        .map(|j| top_k_indices((0..m.rows).map(|i| m.get(i, j)), k))
        .collect();
    let mut out = Vec::new();
    for i in 0..m.rows {
        for &j in &row_top[i] {
            if col_top[j].contains(&i) {
                out.push(ScoredIndexPair {
                    a: i,
                    b: j,
                    score: m.get(i, j),
                });
            }
        }
    }
    out.sort_by(|p, q| p.a.cmp(&q.a).then(p.b.cmp(&q.b)));
    out
}

/// Bounded top-k set of `(score, index)` entries, best first, ties to the
/// lower index. Insertion-ordered deterministically, so merging per-thread
/// partials is order-independent.
#[derive(Debug, Clone)]
struct TopK {
    k: usize,
    entries: Vec<(f64, usize)>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            entries: Vec::with_capacity(k + 1),
        }
    }

    fn offer(&mut self, score: f64, index: usize) {
        let pos = self
            .entries
            .partition_point(|&(s, i)| s > score || (s == score && i < index));
        if pos < self.k {
            self.entries.insert(pos, (score, index));
            self.entries.truncate(self.k);
        }
    }

    fn merge(&mut self, other: &TopK) {
        for &(s, i) in &other.entries {
            self.offer(s, i);
        }
    }

    fn contains(&self, index: usize) -> bool {
        self.entries.iter().any(|&(_, i)| i == index)
    }
}

/// Barcodes flattened into one contiguous word buffer for the hot
/// correlation loop, with per-barcode popcounts and Pearson denominators
/// precomputed.
struct FlatBarcodes {
    words: Vec<u64>,
    stride: usize,
    ones: Vec<i64>,
    dev: Vec<f64>,
    len: usize,
}

impl FlatBarcodes {
    fn build(barcodes: &[MotionBarcode]) -> Result<Self, BarcodeError> {
        let len = barcodes.first().map_or(0, MotionBarcode::len);
        let stride = len.div_ceil(64);
        let mut words = Vec::with_capacity(stride * barcodes.len());
        let mut ones = Vec::with_capacity(barcodes.len());
        let mut dev = Vec::with_capacity(barcodes.len());
        for b in barcodes {
            if b.len() != len {
                return Err(BarcodeError::LengthMismatch(len, b.len()));
            }
            let n1 = b.ones_count();
            if n1 == 0 || n1 == len {
                return Err(BarcodeError::UndefinedCorrelation);
            }
            ones.push(n1 as i64);
            dev.push(((n1 * (len - n1)) as f64).sqrt());
            words.extend(b.words_padded(stride));
        }
        Ok(Self {
            words,
            stride,
            ones,
            dev,
            len,
        })
    }

    #[inline]
    fn row(&self, i: usize) -> &[u64] {
        &self.words[i * self.stride..(i + 1) * self.stride]
    }
}

/// Mutual top-k directly from the barcode lists without materializing the
/// full correlation matrix; identical output to
/// `mutual_topk_candidates(&correlation_matrix(a, b)?, k)`.
pub fn mutual_topk_streaming(
    barcodes_a: &[MotionBarcode],
    barcodes_b: &[MotionBarcode],
    k: usize,
) -> Result<Vec<ScoredIndexPair>, BarcodeError> {
    assert!(k >= 1, "k must be >= 1");
    let n1 = barcodes_a.len();
    let n2 = barcodes_b.len();
    let fa = FlatBarcodes::build(barcodes_a)?;
    let fb = FlatBarcodes::build(barcodes_b)?;
    if n1 > 0 && n2 > 0 && fa.len != fb.len {
        return Err(BarcodeError::LengthMismatch(fa.len, fb.len));
    }
    let n = fa.len as i64;

    type Partial = (Vec<(usize, TopK)>, Vec<TopK>);
    let (mut rows, cols): Partial = (0..n1)
        .into_par_iter()
        .fold(
            || (Vec::new(), vec![TopK::new(k); n2]),
            |(mut rows, mut cols), i| {
                let wa = fa.row(i);
                let mut row_top = TopK::new(k);
                for j in 0..n2 {
                    let wb = fb.row(j);
                    let mut n11 = 0i64;
                    for (x, y) in wa.iter().zip(wb) {
                        n11 += i64::from((x & y).count_ones());
                    }
                    let num = (n * n11 - fa.ones[i] * fb.ones[j]) as f64;
                    // same operation order as `ncc` so the scores match bit for bit
                    let score = (num / (fa.dev[i] * fb.dev[j])).clamp(-1.0, 1.0);
                    row_top.offer(score, j);
                    cols[j].offer(score, i);
                }
                rows.push((i, row_top));
                (rows, cols)
            },
        )
        .reduce(
            || (Vec::new(), vec![TopK::new(k); n2]),
            |(mut rows_a, mut cols_a), (rows_b, cols_b)| {
                rows_a.extend(rows_b);
                for (ca, cb) in cols_a.iter_mut().zip(&cols_b) {
                    ca.merge(cb);
                }
                (rows_a, cols_a)
            },
        );
    rows.sort_by_key(|(i, _)| *i);
    debug_assert_eq!(rows.len(), n1);
    let mut out = Vec::new();
    for (i, row_top) in &rows {
        for &(score, j) in &row_top.entries {
            if cols[j].contains(*i) {
                out.push(ScoredIndexPair {
                    a: *i,
                    b: j,
                    score,
                });
            }
        }
    }
    out.sort_by(|p, q| p.a.cmp(&q.a).then(p.b.cmp(&q.b)));
    Ok(out)
}

/// Keep the `limit` highest-scoring pairs, sorted by score descending with
/// deterministic index tie-breaks.
pub fn select_top_candidates(mut pairs: Vec<CandidatePair>, limit: usize) -> Vec<CandidatePair> {
    assert!(limit >= 1, "limit must be >= 1");
    pairs.sort_by(|p, q| {
        q.score
            .partial_cmp(&p.score)
            .unwrap()
            .then(p.line_a.id.cmp(&q.line_a.id))
            .then(p.line_b.id.cmp(&q.line_b.id))
    });
    pairs.truncate(limit);
    pairs
}

/// Hough-transform traffic detection parameters. `peak_min_support` is an
/// absolute accumulator vote count; [`TrafficParams::for_image`] derives the
/// default threshold from the image diagonal (the longest possible chord).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrafficParams {
    pub hot_fraction: f64,
    pub hough_rho_step: f64,
    pub hough_theta_step_rad: f64,
    pub peak_min_support: f64,
    pub max_lines: usize,
}

impl TrafficParams {
    pub fn for_image(rect: &ImageRect) -> Self {
        Self {
            hot_fraction: 0.90,
            hough_rho_step: 1.0,
            hough_theta_step_rad: 0.5f64.to_radians(),
            peak_min_support: 0.3 * rect.diagonal(),
            max_lines: 10,
        }
    }
}

/// Line-to-line proximity tolerances in `(rho, theta)` of unit-normalized
/// lines.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OverlapParams {
    pub rho_tol_px: f64,
    pub theta_tol_rad: f64,
}

impl Default for OverlapParams {
    fn default() -> Self {
        Self {
            rho_tol_px: 5.0,
            theta_tol_rad: 0.02,
        }
    }
}

/// True when two lines agree within the `(rho, theta)` tolerances, handling
/// the `(rho, theta) ~ (-rho, theta +- pi)` identification.
pub fn lines_close_rho_theta(
    l1: &HomLine2,
    l2: &HomLine2,
    rho_tol_px: f64,
    theta_tol_rad: f64,
) -> bool {
    let (Ok((r1, t1)), Ok((r2, t2))) = (l1.rho_theta(), l2.rho_theta()) else {
        return false;
    };
    for (r, t) in [
        (r2, t2),
        (-r2, t2 + std::f64::consts::PI),
        (-r2, t2 - std::f64::consts::PI),
    ] {
        if (r1 - r).abs() <= rho_tol_px && (t1 - t).abs() <= theta_tol_rad {
            return true;
        }
    }
    false
}

/// Detect dominant straight lines on a motion heat map.
///
/// The map is binarized at the `hot_fraction` quantile of its nonzero counts
/// (nearest-rank), hot pixel centers vote in a `(rho, theta)` accumulator,
/// and peaks are local maxima above `peak_min_support`, greedily non-maximum
/// suppressed in a 3x3 accumulator neighborhood, at most `max_lines` of them.
pub fn detect_traffic_lines(h: &HeatMap, params: &TrafficParams) -> Vec<TrafficLine> {
    let mut nonzero: Vec<u32> = h.counts().iter().copied().filter(|&c| c > 0).collect();
    if nonzero.is_empty() {
        return Vec::new();
    }
    nonzero.sort_unstable();
    let q_idx = ((params.hot_fraction * nonzero.len() as f64).floor() as usize).min(nonzero.len() - 1);
    let threshold = nonzero[q_idx];

    let n_theta = (std::f64::consts::PI / params.hough_theta_step_rad).ceil() as usize;
    let rho_max = f64::from(h.width()).hypot(f64::from(h.height()));
    let half = (rho_max / params.hough_rho_step).ceil() as i64;
    let n_rho = (2 * half + 1) as usize;
    let trig: Vec<(f64, f64)> = (0..n_theta)
        .map(|t| (t as f64 * params.hough_theta_step_rad).sin_cos())
        .collect();

    let mut acc = vec![0u32; n_theta * n_rho];
    for y in 0..h.height() {
        for x in 0..h.width() {
            if h.count(x, y) < threshold {
                continue;
            }
            let (cx, cy) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
            for (t, &(sin, cos)) in trig.iter().enumerate() {
                let rho = cx * cos + cy * sin;
                let bin = (rho / params.hough_rho_step).round() as i64 + half;
                if (0..n_rho as i64).contains(&bin) {
                    acc[t * n_rho + bin as usize] += 1;
                }
            }
        }
    }

    // local maxima above the support threshold
    let mut peaks: Vec<(u32, usize, usize)> = Vec::new();
    for t in 0..n_theta {
        for r in 0..n_rho {
            let v = acc[t * n_rho + r];
            if f64::from(v) < params.peak_min_support {
                continue;
            }
            let mut is_max = true;
            'nb: for dt in -1i64..=1 {
                for dr in -1i64..=1 {
                    if dt == 0 && dr == 0 {
                        continue;
                    }
                    let (nt, nr) = (t as i64 + dt, r as i64 + dr);
                    if (0..n_theta as i64).contains(&nt) && (0..n_rho as i64).contains(&nr) {
                        if acc[nt as usize * n_rho + nr as usize] > v {
                            is_max = false;
                            break 'nb;
                        }
                    }
                }
            }
            if is_max {
                peaks.push((v, t, r));
            }
        }
    }
    peaks.sort_by(|a, b| b.0.cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));

    let rect = ImageRect::new(h.width(), h.height());
    let mut accepted: Vec<(usize, usize)> = Vec::new();
    let mut out = Vec::new();
    for (_, t, r) in peaks {
        if out.len() >= params.max_lines {
            break;
        }
        if accepted
            .iter()
            .any(|&(at, ar)| at.abs_diff(t) <= 1 && ar.abs_diff(r) <= 1)
        {
            continue;
        }
        accepted.push((t, r));
        // vote-weighted centroid over the 3x3 neighborhood for sub-cell accuracy
        let mut w_sum = 0.0;
        let mut t_sum = 0.0;
        let mut r_sum = 0.0;
        for dt in -1i64..=1 {
            for dr in -1i64..=1 {
                let (nt, nr) = (t as i64 + dt, r as i64 + dr);
                if (0..n_theta as i64).contains(&nt) && (0..n_rho as i64).contains(&nr) {
                    let w = f64::from(acc[nt as usize * n_rho + nr as usize]);
                    w_sum += w;
                    t_sum += w * nt as f64;
                    r_sum += w * nr as f64;
                }
            }
        }
        let (tc, rc) = if w_sum > 0.0 {
            (t_sum / w_sum, r_sum / w_sum)
        } else {
            (t as f64, r as f64)
        };
        let theta = tc * params.hough_theta_step_rad;
        let rho = (rc - half as f64) * params.hough_rho_step;
        let line = HomLine2::new(theta.cos(), theta.sin(), -rho);
        let raster = crate::barcode::raster_hom_line(&line, &rect, 1);
        if raster.is_empty() {
            continue;
        }
        let heat: u64 = raster.iter().map(|&(x, y)| u64::from(h.count(x, y))).sum();
        let support = heat as f64 / raster.len() as f64;
        if support > 0.0 {
            out.push(TrafficLine { line, support });
        }
    }
    out
}

/// Remove candidate pairs aligned with traffic in both cameras at once;
/// survivors keep their order.
pub fn filter_traffic_candidates(
    cands: Vec<CandidatePair>,
    traffic_a: &[TrafficLine],
    traffic_b: &[TrafficLine],
    overlap: &OverlapParams,
) -> Vec<CandidatePair> {
    if traffic_a.is_empty() || traffic_b.is_empty() {
        return cands;
    }
    let near = |line: &HomLine2, traffic: &[TrafficLine]| {
        traffic
            .iter()
            .any(|t| lines_close_rho_theta(line, &t.line, overlap.rho_tol_px, overlap.theta_tol_rad))
    };
    cands
        .into_iter()
        .filter(|c| !(near(&c.line_a.line, traffic_a) && near(&c.line_b.line, traffic_b)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask_io::{compute_heat_map, BitMask, SilhouetteVideo};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bc(s: &str) -> MotionBarcode {
        MotionBarcode::from_bit_string(s).unwrap()
    }

    fn dummy_line(id: usize) -> BorderLine {
        BorderLine::from_endpoints(id, (0.0, 1.0 + id as f64), (10.0, 2.0 + id as f64)).unwrap()
    }

    fn pair(a: usize, b: usize, score: f64) -> CandidatePair {
        CandidatePair {
            line_a: dummy_line(a),
            line_b: dummy_line(b),
            score,
        }
    }

    #[test]
    fn correlation_matrix_identities() {
        let m = correlation_matrix(&[bc("1100")], &[bc("1100")]).unwrap();
        assert_eq!((m.rows(), m.cols()), (1, 1));
        assert_eq!(m.get(0, 0), 1.0);
        let m = correlation_matrix(&[bc("1100")], &[bc("0011")]).unwrap();
        assert_eq!(m.get(0, 0), -1.0);
    }

    #[test]
    fn correlation_matrix_matches_per_entry_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let gen = |rng: &mut ChaCha8Rng| -> Vec<MotionBarcode> {
            (0..40)
                .map(|_| {
                    loop {
                        let b = MotionBarcode::from_bits((0..64).map(|_| rng.random::<bool>()));
                        if b.ones_count() > 0 && b.ones_count() < 64 {
                            return b;
                        }
                    }
                })
                .collect()
        };
        let a = gen(&mut rng);
        let b = gen(&mut rng);
        let m = correlation_matrix(&a, &b).unwrap();
        for i in 0..a.len() {
            for j in 0..b.len() {
                let direct = crate::barcode::tests::ncc_direct(&a[i], &b[j]);
                assert!((m.get(i, j) - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mutual_topk_small_matrices() {
        let m = CorrelationMatrix::from_values(1, 1, vec![0.4]);
        let got = mutual_topk_candidates(&m, 3);
        assert_eq!(got.len(), 1);
        assert_eq!((got[0].a, got[0].b), (0, 0));

        let m = CorrelationMatrix::from_values(2, 2, vec![0.9, 0.1, 0.2, 0.8]);
        let got = mutual_topk_candidates(&m, 1);
        assert_eq!(got.len(), 2);
        assert_eq!((got[0].a, got[0].b), (0, 0));
        assert_eq!((got[1].a, got[1].b), (1, 1));
    }

    #[test]
    fn mutual_topk_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let (rows, cols) = (rng.random_range(1..50), rng.random_range(1..60));
            let values: Vec<f64> = (0..rows * cols).map(|_| rng.random::<f64>()).collect();
            let m = CorrelationMatrix::from_values(rows, cols, values);
            let k = 3;
            let got: Vec<(usize, usize)> =
                mutual_topk_candidates(&m, k).iter().map(|p| (p.a, p.b)).collect();
            // brute force: rank within row and column
            let mut expect = Vec::new();
            for i in 0..rows {
                for j in 0..cols {
                    let v = m.get(i, j);
                    let row_better = (0..cols)
                        .filter(|&jj| {
                            m.get(i, jj) > v || (m.get(i, jj) == v && jj < j)
                        })
                        .count();
                    let col_better = (0..rows)
                        .filter(|&ii| {
                            m.get(ii, j) > v || (m.get(ii, j) == v && ii < i)
                        })
                        .count();
                    if row_better < k && col_better < k {
                        expect.push((i, j));
                    }
                }
            }
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn streaming_mutual_topk_matches_materialized() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        for _ in 0..20 {
            let gen = |rng: &mut ChaCha8Rng, n: usize| -> Vec<MotionBarcode> {
                (0..n)
                    .map(|_| loop {
                        let b = MotionBarcode::from_bits((0..32).map(|_| rng.random::<bool>()));
                        if b.ones_count() > 0 && b.ones_count() < 32 {
                            break b;
                        }
                    })
                    .collect()
            };
            let na = rng.random_range(2..40);
            let nb = rng.random_range(2..40);
            let a = gen(&mut rng, na);
            let b = gen(&mut rng, nb);
            let k = rng.random_range(1..5);
            let m = correlation_matrix(&a, &b).unwrap();
            let dense = mutual_topk_candidates(&m, k);
            let streamed = mutual_topk_streaming(&a, &b, k).unwrap();
            assert_eq!(dense, streamed);
        }
    }

    #[test]
    fn mutual_topk_transpose_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let (rows, cols) = (20, 30);
        let values: Vec<f64> = (0..rows * cols).map(|_| rng.random::<f64>()).collect();
        let m = CorrelationMatrix::from_values(rows, cols, values.clone());
        let mut tvalues = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                tvalues[j * rows + i] = values[i * cols + j];
            }
        }
        let mt = CorrelationMatrix::from_values(cols, rows, tvalues);
        let mut a: Vec<(usize, usize)> =
            mutual_topk_candidates(&m, 3).iter().map(|p| (p.a, p.b)).collect();
        let mut b: Vec<(usize, usize)> =
            mutual_topk_candidates(&mt, 3).iter().map(|p| (p.b, p.a)).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn select_top_orders_and_truncates() {
        let got = select_top_candidates(vec![pair(0, 0, 0.5), pair(1, 1, 0.9), pair(2, 2, 0.7)], 2);
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].score, 0.9);
        assert_eq!(got[1].score, 0.7);
        // fewer than the limit: everything survives, sorted
        let got = select_top_candidates(vec![pair(0, 0, 0.1), pair(1, 1, 0.2)], 1000);
        assert_eq!(got.len(), 2);
        assert!(got[0].score >= got[1].score);
    }

    #[test]
    fn select_top_never_rejects_better_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let pairs: Vec<CandidatePair> = (0..5000)
            .map(|i| pair(i, i, rng.random::<f64>()))
            .collect();
        let kept = select_top_candidates(pairs.clone(), 1000);
        assert_eq!(kept.len(), 1000);
        let min_kept = kept.iter().map(|p| p.score).fold(f64::INFINITY, f64::min);
        let kept_ids: std::collections::HashSet<usize> =
            kept.iter().map(|p| p.line_a.id).collect();
        let max_rejected = pairs
            .iter()
            .filter(|p| !kept_ids.contains(&p.line_a.id))
            .map(|p| p.score)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(min_kept >= max_rejected);
    }

    fn heat_from_pixels(w: u32, h: u32, hot: &[(u32, u32)], value: u32) -> HeatMap {
        // build via a video of `value` identical frames
        let mut m = BitMask::new(w, h);
        for &(x, y) in hot {
            m.set(x, y, true);
        }
        let v = SilhouetteVideo::new(vec![m; value as usize]).unwrap();
        compute_heat_map(&v)
    }

    #[test]
    fn traffic_detection_on_empty_heat_map() {
        let hm = heat_from_pixels(64, 48, &[], 3);
        let params = TrafficParams::for_image(&ImageRect::new(64, 48));
        assert!(detect_traffic_lines(&hm, &params).is_empty());
    }

    #[test]
    fn traffic_detection_single_hot_row() {
        let rect = ImageRect::new(640, 480);
        let hot: Vec<(u32, u32)> = (0..640).map(|x| (x, 200)).collect();
        let hm = heat_from_pixels(640, 480, &hot, 5);
        let params = TrafficParams::for_image(&rect);
        let lines = detect_traffic_lines(&hm, &params);
        assert_eq!(lines.len(), 1);
        // y = 200.5 through the hot pixel centers
        let expect = HomLine2::new(0.0, 1.0, -200.5);
        assert!(lines_close_rho_theta(
            &lines[0].line,
            &expect,
            params.hough_rho_step,
            params.hough_theta_step_rad
        ));
        assert!(lines[0].support > 0.0);
    }

    #[test]
    fn traffic_detection_two_planted_lines_with_salt() {
        let rect = ImageRect::new(640, 480);
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let planted = [
            HomLine2::new(30f64.to_radians().cos(), 30f64.to_radians().sin(), -300.0),
            HomLine2::new(115f64.to_radians().cos(), 115f64.to_radians().sin(), 100.0),
        ];
        let mut hot: Vec<(u32, u32)> = Vec::new();
        for l in &planted {
            hot.extend(crate::barcode::raster_hom_line(l, &rect, 1));
        }
        // 5% salt noise at full heat
        for y in 0..480 {
            for x in 0..640 {
                if rng.random::<f64>() < 0.05 {
                    hot.push((x, y));
                }
            }
        }
        let hm = heat_from_pixels(640, 480, &hot, 7);
        let params = TrafficParams::for_image(&rect);
        let lines = detect_traffic_lines(&hm, &params);
        for l in &planted {
            assert!(
                lines.iter().any(|t| lines_close_rho_theta(
                    &t.line,
                    l,
                    params.hough_rho_step,
                    params.hough_theta_step_rad
                )),
                "planted line not recovered"
            );
        }
        // nothing beyond the two planted lines clears the support threshold
        let spurious = lines
            .iter()
            .filter(|t| {
                !planted.iter().any(|l| lines_close_rho_theta(
                    &t.line,
                    l,
                    3.0 * params.hough_rho_step,
                    3.0 * params.hough_theta_step_rad
                ))
            })
            .count();
        assert_eq!(spurious, 0, "unexpected extra traffic lines");
    }

    #[test]
    fn traffic_filter_requires_both_sides() {
        let overlap = OverlapParams::default();
        let traffic = vec![TrafficLine {
            line: HomLine2::new(0.0, 1.0, -2.0),
            support: 10.0,
        }];
        // candidate A-line coincides with traffic, B-line differs
        let la = BorderLine::from_endpoints(0, (0.0, 2.0), (10.0, 2.0)).unwrap();
        let lb = BorderLine::from_endpoints(0, (0.0, 8.0), (10.0, 0.0)).unwrap();
        let one_sided = CandidatePair {
            line_a: la,
            line_b: lb,
            score: 0.9,
        };
        let both = CandidatePair {
            line_a: la,
            line_b: la,
            score: 0.8,
        };
        let cands = vec![one_sided.clone(), both];
        // empty traffic: untouched
        let kept = filter_traffic_candidates(cands.clone(), &[], &[], &overlap);
        assert_eq!(kept.len(), 2);
        let kept = filter_traffic_candidates(cands, &traffic, &traffic, &overlap);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0], one_sided);
        // idempotent
        let again = filter_traffic_candidates(kept.clone(), &traffic, &traffic, &overlap);
        assert_eq!(again, kept);
    }
}
