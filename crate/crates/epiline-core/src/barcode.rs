//! Motion barcodes of image lines.
//!
//! A line's barcode is a bit per frame: 1 iff any foreground silhouette
//! touches the line in that frame. Candidate lines join two uniformly sampled
//! border points; "touches" means the line's raster (thickness-1 supercover
//! by default) hits a foreground pixel. Barcodes are packed 64 bits per word
//! so the Pearson correlation of two binary vectors reduces to popcounts:
//! with `n1 = |a|`, `n2 = |b|`, `n11 = |a & b|` over length `N`,
//! `corr = (N n11 - n1 n2) / (sqrt(n1 (N - n1)) sqrt(n2 (N - n2)))`.

use rand::Rng;
use thiserror::Error;

use crate::geometry::{line_through, HomLine2, HomPoint2, ImageRect, Segment};
use crate::mask_io::SilhouetteVideo;

#[derive(Debug, Error)]
pub enum BarcodeError {
    #[error("raster pixel ({x}, {y}) outside a {width}x{height} video")]
    OutOfBounds {
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },
    #[error("barcode lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("correlation undefined for a constant barcode")]
    UndefinedCorrelation,
}

/// Image line defined by two distinct points on the image border.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BorderLine {
    pub id: usize,
    pub p: (f64, f64),
    pub q: (f64, f64),
    pub line: HomLine2,
}

impl BorderLine {
    /// Rebuild a border line from its endpoints (used when reloading
    /// persisted candidate lists). Fails if the points coincide.
    pub fn from_endpoints(id: usize, p: (f64, f64), q: (f64, f64)) -> Option<Self> {
        let line = line_through(&HomPoint2::from_xy(p.0, p.1), &HomPoint2::from_xy(q.0, q.1)).ok()?;
        Some(Self { id, p, q, line })
    }

    pub fn segment(&self) -> Segment {
        Segment {
            p: self.p,
            q: self.q,
        }
    }
}

/// Per-frame incidence bits of one line, packed 64 per word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotionBarcode {
    words: Vec<u64>,
    len: usize,
    ones: usize,
}

impl MotionBarcode {
    pub fn from_bits(bits: impl IntoIterator<Item = bool>) -> Self {
        let mut words = Vec::new();
        let mut len = 0usize;
        let mut ones = 0usize;
        for bit in bits {
            if len % 64 == 0 {
                words.push(0);
            }
            if bit {
                *words.last_mut().unwrap() |= 1u64 << (len % 64);
                ones += 1;
            }
            len += 1;
        }
        Self { words, len, ones }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn ones_count(&self) -> usize {
        self.ones
    }

    pub fn bit(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / 64] >> (i % 64)) & 1 != 0
    }

    pub fn ones_fraction(&self) -> f64 {
        if self.len == 0 {
            0.0
        } else {
            self.ones as f64 / self.len as f64
        }
    }

    /// Packed words padded with zeros to exactly `stride` entries.
    pub fn words_padded(&self, stride: usize) -> impl Iterator<Item = u64> + '_ {
        debug_assert!(stride >= self.words.len());
        self.words
            .iter()
            .copied()
            .chain(std::iter::repeat(0).take(stride - self.words.len()))
    }

    /// `|a & b|` by word-wise popcount.
    pub fn and_count(&self, other: &Self) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    /// `0`/`1` characters, frame 0 first (the dump format).
    pub fn to_bit_string(&self) -> String {
        (0..self.len).map(|i| if self.bit(i) { '1' } else { '0' }).collect()
    }

    pub fn from_bit_string(s: &str) -> Option<Self> {
        if !s.chars().all(|c| c == '0' || c == '1') {
            return None;
        }
        Some(Self::from_bits(s.chars().map(|c| c == '1')))
    }
}

/// Arc-length position on the border of `[0, W] x [0, H]`, walking
/// top edge left to right, right edge down, bottom edge right to left,
/// left edge up. Returns the point and the edge index 0..4.
fn border_point(rect: &ImageRect, t: f64) -> ((f64, f64), usize) {
    let (w, h) = (rect.w(), rect.h());
    debug_assert!((0.0..2.0 * (w + h)).contains(&t));
    if t < w {
        ((t, 0.0), 0)
    } else if t < w + h {
        ((w, t - w), 1)
    } else if t < 2.0 * w + h {
        ((2.0 * w + h - t, h), 2)
    } else {
        ((0.0, 2.0 * w + 2.0 * h - t), 3)
    }
}

/// Uniformly sample `count` lines joining two border points. A draw is
/// rejected and retried when the two points coincide or sit on the same edge
/// within one pixel of each other. Deterministic for a fixed seeded source.
pub fn sample_border_lines(
    rect: &ImageRect,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<BorderLine> {
    let perimeter = 2.0 * (rect.w() + rect.h());
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let (p, edge_p) = border_point(rect, rng.random_range(0.0..perimeter));
        let (q, edge_q) = border_point(rect, rng.random_range(0.0..perimeter));
        let dist = (p.0 - q.0).hypot(p.1 - q.1);
        if edge_p == edge_q && dist < 1.0 {
            continue;
        }
        let Ok(line) = line_through(&HomPoint2::from_xy(p.0, p.1), &HomPoint2::from_xy(q.0, q.1))
        else {
            continue;
        };
        out.push(BorderLine {
            id: out.len(),
            p,
            q,
            line,
        });
    }
    out
}

/// Integer range of cells touched by the closed interval `[lo, hi]` along one
/// axis: cell `k` covers `[k, k+1]`, so an endpoint exactly on a grid line
/// touches the cell below it as well.
fn touched_cells(lo: f64, hi: f64, max_cell: i64) -> std::ops::RangeInclusive<i64> {
    let mut a = lo.floor() as i64;
    if lo == lo.floor() {
        a -= 1;
    }
    let b = hi.floor() as i64;
    (a.max(0))..=(b.min(max_cell))
}

/// Supercover of a segment: every pixel whose closed unit square the segment
/// intersects. Exact for endpoints and crossings on grid lines.
pub fn supercover_pixels(seg: &Segment, rect: &ImageRect) -> Vec<(u32, u32)> {
    let (mut x0, mut y0) = seg.p;
    let (mut x1, mut y1) = seg.q;
    if x0 > x1 || (x0 == x1 && y0 > y1) {
        std::mem::swap(&mut x0, &mut x1);
        std::mem::swap(&mut y0, &mut y1);
    }
    let max_col = i64::from(rect.width) - 1;
    let max_row = i64::from(rect.height) - 1;
    let mut out = Vec::new();

    if (x1 - x0).abs() < 1e-12 {
        // vertical (or single-point) segment
        let (ylo, yhi) = if y0 <= y1 { (y0, y1) } else { (y1, y0) };
        let rows = touched_cells(ylo, yhi, max_row);
        for col in touched_cells(x0, x0, max_col) {
            for row in rows.clone() {
                out.push((col as u32, row as u32));
            }
        }
        return out;
    }

    let slope = (y1 - y0) / (x1 - x0);
    let y_at = |x: f64| y0 + (x - x0) * slope;
    for col in touched_cells(x0, x1, max_col) {
        let xa = x0.max(col as f64);
        let xb = x1.min((col + 1) as f64);
        debug_assert!(xa <= xb);
        let (ya, yb) = (y_at(xa), y_at(xb));
        let (ylo, yhi) = if ya <= yb { (ya, yb) } else { (yb, ya) };
        for row in touched_cells(ylo, yhi, max_row) {
            out.push((col as u32, row as u32));
        }
    }
    out
}

/// All pixels whose centers lie within perpendicular distance `t/2` of the
/// segment.
fn thick_pixels(seg: &Segment, rect: &ImageRect, thickness: u32) -> Vec<(u32, u32)> {
    let r = f64::from(thickness) / 2.0;
    let (x0, y0) = seg.p;
    let (x1, y1) = seg.q;
    let (dx, dy) = (x1 - x0, y1 - y0);
    let len2 = dx * dx + dy * dy;
    let lo_x = ((x0.min(x1) - r - 1.0).floor().max(0.0)) as u32;
    let hi_x = ((x0.max(x1) + r + 1.0).ceil() as i64).min(i64::from(rect.width) - 1);
    let lo_y = ((y0.min(y1) - r - 1.0).floor().max(0.0)) as u32;
    let hi_y = ((y0.max(y1) + r + 1.0).ceil() as i64).min(i64::from(rect.height) - 1);
    let mut out = Vec::new();
    if hi_x < 0 || hi_y < 0 {
        return out;
    }
    for y in lo_y..=(hi_y as u32) {
        for x in lo_x..=(hi_x as u32) {
            let (cx, cy) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
            let t = if len2 > 0.0 {
                (((cx - x0) * dx + (cy - y0) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (px, py) = (x0 + t * dx, y0 + t * dy);
            if (cx - px).hypot(cy - py) <= r {
                out.push((x, y));
            }
        }
    }
    out
}

/// Raster of a border line clipped to the image: the thickness-1 supercover,
/// or for `thickness > 1` all pixels within `thickness/2` of the segment.
pub fn raster_line_pixels(
    line: &BorderLine,
    rect: &ImageRect,
    thickness: u32,
) -> Vec<(u32, u32)> {
    assert!(thickness >= 1, "raster thickness must be >= 1");
    let seg = line.segment();
    if thickness == 1 {
        supercover_pixels(&seg, rect)
    } else {
        thick_pixels(&seg, rect, thickness)
    }
}

/// Raster of an arbitrary line clipped to the image rectangle first.
pub fn raster_hom_line(line: &HomLine2, rect: &ImageRect, thickness: u32) -> Vec<(u32, u32)> {
    match crate::geometry::clip_line_to_rect(line, rect) {
        Some(seg) if thickness == 1 => supercover_pixels(&seg, rect),
        Some(seg) => thick_pixels(&seg, rect, thickness),
        None => Vec::new(),
    }
}

/// Sorted, deduplicated `(word index, mask)` probes of a pixel set.
fn word_probes(
    video: &SilhouetteVideo,
    pixels: &[(u32, u32)],
) -> Result<Vec<(usize, u64)>, BarcodeError> {
    for &(x, y) in pixels {
        if x >= video.width() || y >= video.height() {
            return Err(BarcodeError::OutOfBounds {
                x,
                y,
                width: video.width(),
                height: video.height(),
            });
        }
    }
    let wpr = video.frame(0).words_per_row();
    let mut probes: Vec<(usize, u64)> = pixels
        .iter()
        .map(|&(x, y)| (y as usize * wpr + (x / 64) as usize, 1u64 << (x % 64)))
        .collect();
    probes.sort_unstable_by_key(|&(w, _)| w);
    probes.dedup_by(|next, acc| {
        if next.0 == acc.0 {
            acc.1 |= next.1;
            true
        } else {
            false
        }
    });
    Ok(probes)
}

/// First and last nonzero word index of every frame; probes outside this
/// span cannot hit.
fn frame_word_spans(video: &SilhouetteVideo) -> Vec<Option<(usize, usize)>> {
    video
        .frames()
        .iter()
        .map(|frame| {
            let words = frame.words();
            let first = words.iter().position(|&w| w != 0)?;
            let last = words.iter().rposition(|&w| w != 0)?;
            Some((first, last))
        })
        .collect()
}

fn barcode_from_probes(
    video: &SilhouetteVideo,
    probes: &[(usize, u64)],
    spans: &[Option<(usize, usize)>],
) -> MotionBarcode {
    let bits = video.frames().iter().zip(spans).map(|(frame, span)| {
        let Some((lo, hi)) = span else {
            return false;
        };
        let start = probes.partition_point(|&(w, _)| w < *lo);
        let words = frame.words();
        probes[start..]
            .iter()
            .take_while(|&&(w, _)| w <= *hi)
            .any(|&(w, m)| words[w] & m != 0)
    });
    MotionBarcode::from_bits(bits)
}

/// Per-frame incidence of a pixel set: bit `i` is 1 iff any listed pixel is
/// foreground in frame `i`.
pub fn compute_barcode(
    video: &SilhouetteVideo,
    pixels: &[(u32, u32)],
) -> Result<MotionBarcode, BarcodeError> {
    let probes = word_probes(video, pixels)?;
    let spans = frame_word_spans(video);
    Ok(barcode_from_probes(video, &probes, &spans))
}

/// Barcodes of many pixel sets over one video, sharing the per-frame
/// foreground spans and parallelizing over the sets.
pub fn compute_barcodes_bulk(
    video: &SilhouetteVideo,
    pixel_sets: &[Vec<(u32, u32)>],
) -> Result<Vec<MotionBarcode>, BarcodeError> {
    use rayon::prelude::*;
    let spans = frame_word_spans(video);
    pixel_sets
        .par_iter()
        .map(|pixels| {
            let probes = word_probes(video, pixels)?;
            Ok(barcode_from_probes(video, &probes, &spans))
        })
        .collect()
}

/// A line is informative when its ones fraction lies inside `[q_min, q_max]`.
pub fn is_informative(b: &MotionBarcode, q_min: f64, q_max: f64) -> bool {
    debug_assert!((0.0..1.0).contains(&q_min) && q_min < q_max && q_max <= 1.0);
    let f = b.ones_fraction();
    (q_min..=q_max).contains(&f)
}

/// Normalized cross correlation of two binary barcodes, in `[-1, 1]`.
/// Undefined (error) when either barcode is constant.
pub fn ncc(b: &MotionBarcode, b_prime: &MotionBarcode) -> Result<f64, BarcodeError> {
    if b.len() != b_prime.len() {
        return Err(BarcodeError::LengthMismatch(b.len(), b_prime.len()));
    }
    let n = b.len();
    let n1 = b.ones_count();
    let n2 = b_prime.ones_count();
    if n1 == 0 || n1 == n || n2 == 0 || n2 == n {
        return Err(BarcodeError::UndefinedCorrelation);
    }
    let n11 = b.and_count(b_prime);
    let num = (n as i64 * n11 as i64 - n1 as i64 * n2 as i64) as f64;
    let den = ((n1 * (n - n1)) as f64).sqrt() * ((n2 * (n - n2)) as f64).sqrt();
    Ok((num / den).clamp(-1.0, 1.0))
}
