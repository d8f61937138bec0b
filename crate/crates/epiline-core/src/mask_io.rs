//! Binary silhouette videos: PBM (P4) frame sequences, a packed multi-frame
//! container, and motion heat maps.
//!
//! Pixel addressing: `x` is the column in `[0, W)`, `y` the row in `[0, H)`,
//! origin top-left; pixel centers sit at `integer + 0.5` in continuous
//! coordinates. Frames are bit matrices, 1 = moving foreground.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

const PACKED_MAGIC: [u8; 4] = *b"SILV";

#[derive(Debug, Error)]
pub enum MaskIoError {
    #[error("frame {frame}: i/o error on {path}")]
    Io {
        frame: usize,
        path: PathBuf,
        source: io::Error,
    },
    #[error("frame {frame}: {msg}")]
    Format { frame: usize, msg: String },
    #[error("container error at byte {offset}: {msg}")]
    Container { offset: u64, msg: String },
    #[error("{0}")]
    Invalid(String),
}

/// Dense bit matrix, row-major, one `u64` word per 64 columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMask {
    width: u32,
    height: u32,
    words_per_row: usize,
    words: Vec<u64>,
}

impl BitMask {
    pub fn new(width: u32, height: u32) -> Self {
        assert!(width > 0 && height > 0, "mask must be non-empty");
        let words_per_row = (width as usize).div_ceil(64);
        Self {
            width,
            height,
            words_per_row,
            words: vec![0; words_per_row * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        debug_assert!(x < self.width && y < self.height);
        let w = self.words[y as usize * self.words_per_row + (x / 64) as usize];
        (w >> (x % 64)) & 1 != 0
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        debug_assert!(x < self.width && y < self.height);
        let w = &mut self.words[y as usize * self.words_per_row + (x / 64) as usize];
        let bit = 1u64 << (x % 64);
        if value {
            *w |= bit;
        } else {
            *w &= !bit;
        }
    }

    /// Number of foreground pixels.
    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    /// Row-padded big-endian-bit bytes (PBM P4 row layout).
    fn row_bytes(&self, y: u32) -> Vec<u8> {
        let nbytes = (self.width as usize).div_ceil(8);
        let mut row = vec![0u8; nbytes];
        for x in 0..self.width {
            if self.get(x, y) {
                row[(x / 8) as usize] |= 0x80 >> (x % 8);
            }
        }
        row
    }

    fn fill_row_from_bytes(&mut self, y: u32, bytes: &[u8]) {
        for x in 0..self.width {
            let bit = bytes[(x / 8) as usize] & (0x80 >> (x % 8)) != 0;
            if bit {
                self.set(x, y, true);
            }
        }
    }
}

/// Synchronized sequence of equally sized binary foreground masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SilhouetteVideo {
    width: u32,
    height: u32,
    frames: Vec<BitMask>,
}

impl SilhouetteVideo {
    pub fn new(frames: Vec<BitMask>) -> Result<Self, MaskIoError> {
        let first = frames
            .first()
            .ok_or_else(|| MaskIoError::Invalid("a video needs at least one frame".into()))?;
        let (width, height) = (first.width, first.height);
        for (i, f) in frames.iter().enumerate() {
            if f.width != width || f.height != height {
                return Err(MaskIoError::Format {
                    frame: i,
                    msg: format!(
                        "frame is {}x{}, expected {}x{}",
                        f.width, f.height, width, height
                    ),
                });
            }
        }
        Ok(Self {
            width,
            height,
            frames,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, i: usize) -> &BitMask {
        &self.frames[i]
    }

    pub fn frames(&self) -> &[BitMask] {
        &self.frames
    }
}

/// Per-pixel count of the frames in which the pixel is foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeatMap {
    width: u32,
    height: u32,
    counts: Vec<u32>,
}

impl HeatMap {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn count(&self, x: u32, y: u32) -> u32 {
        self.counts[y as usize * self.width as usize + x as usize]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

/// Sum all binary frames into a single count image.
pub fn compute_heat_map(video: &SilhouetteVideo) -> HeatMap {
    let (w, h) = (video.width(), video.height());
    let mut counts = vec![0u32; w as usize * h as usize];
    for frame in video.frames() {
        for y in 0..h {
            let row = y as usize * w as usize;
            for x in 0..w {
                if frame.get(x, y) {
                    counts[row + x as usize] += 1;
                }
            }
        }
    }
    HeatMap {
        width: w,
        height: h,
        counts,
    }
}

/// Substitute a frame index into a path pattern containing `{}` or a
/// zero-padded form like `{:04}`.
pub fn resolve_frame_path(pattern: &str, index: usize) -> Result<PathBuf, MaskIoError> {
    let open = pattern.find('{').ok_or_else(|| {
        MaskIoError::Invalid(format!("pattern {pattern:?} has no {{}} placeholder"))
    })?;
    let close = pattern[open..]
        .find('}')
        .map(|o| open + o)
        .ok_or_else(|| MaskIoError::Invalid(format!("pattern {pattern:?} has unclosed brace")))?;
    let spec = &pattern[open + 1..close];
    let formatted = if spec.is_empty() {
        index.to_string()
    } else if let Some(width) = spec.strip_prefix(":0").and_then(|s| s.parse::<usize>().ok()) {
        format!("{index:0width$}")
    } else {
        return Err(MaskIoError::Invalid(format!(
            "unsupported placeholder {{{spec}}} (use {{}} or {{:0N}})"
        )));
    };
    Ok(PathBuf::from(format!(
        "{}{}{}",
        &pattern[..open],
        formatted,
        &pattern[close + 1..]
    )))
}

/// Load a PBM (P4) frame sequence. Paths are resolved from the pattern for
/// every index in `range`; all frames must agree on dimensions.
pub fn load_mask_sequence(
    pattern: &str,
    range: std::ops::Range<usize>,
) -> Result<SilhouetteVideo, MaskIoError> {
    let mut frames = Vec::with_capacity(range.len());
    for (i, index) in range.enumerate() {
        let path = resolve_frame_path(pattern, index)?;
        let bytes = fs::read(&path).map_err(|source| MaskIoError::Io {
            frame: i,
            path: path.clone(),
            source,
        })?;
        let mask = parse_pbm(&bytes).map_err(|msg| MaskIoError::Format { frame: i, msg })?;
        frames.push(mask);
    }
    SilhouetteVideo::new(frames)
}

/// Parse a binary PBM (magic `P4`). 1-bits are foreground.
pub fn parse_pbm(bytes: &[u8]) -> Result<BitMask, String> {
    if bytes.len() < 2 || &bytes[0..2] != b"P4" {
        return Err("not a P4 (binary) PBM file".into());
    }
    let mut pos = 2;
    let mut read_token = || -> Result<u32, String> {
        // skip whitespace and '#' comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err("missing dimension token".into());
        }
        std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse::<u32>()
            .map_err(|e| e.to_string())
    };
    let width = read_token()?;
    let height = read_token()?;
    if width == 0 || height == 0 {
        return Err(format!("degenerate dimensions {width}x{height}"));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing raster separator".into());
    }
    pos += 1;
    let row_len = (width as usize).div_ceil(8);
    let need = row_len * height as usize;
    if bytes.len() - pos < need {
        return Err(format!(
            "raster truncated: need {need} bytes, have {}",
            bytes.len() - pos
        ));
    }
    let mut mask = BitMask::new(width, height);
    for y in 0..height {
        let start = pos + y as usize * row_len;
        mask.fill_row_from_bytes(y, &bytes[start..start + row_len]);
    }
    Ok(mask)
}

/// Serialize a mask as binary PBM.
pub fn write_pbm(mask: &BitMask) -> Vec<u8> {
    let mut out = format!("P4\n{} {}\n", mask.width, mask.height).into_bytes();
    for y in 0..mask.height {
        out.extend_from_slice(&mask.row_bytes(y));
    }
    out
}

/// Encode a video into the packed container: magic `SILV`, then width,
/// height and frame count as little-endian `u32`, then the frames as
/// byte-padded rows in index order.
pub fn encode_packed(video: &SilhouetteVideo) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&PACKED_MAGIC);
    out.extend_from_slice(&video.width.to_le_bytes());
    out.extend_from_slice(&video.height.to_le_bytes());
    out.extend_from_slice(&(video.num_frames() as u32).to_le_bytes());
    for frame in video.frames() {
        for y in 0..video.height {
            out.extend_from_slice(&frame.row_bytes(y));
        }
    }
    out
}

/// Decode the packed container. Errors carry the byte offset of the problem.
pub fn decode_packed(bytes: &[u8]) -> Result<SilhouetteVideo, MaskIoError> {
    if bytes.len() < 16 {
        return Err(MaskIoError::Container {
            offset: bytes.len() as u64,
            msg: "header truncated (need 16 bytes)".into(),
        });
    }
    if bytes[0..4] != PACKED_MAGIC {
        return Err(MaskIoError::Container {
            offset: 0,
            msg: "bad magic (expected SILV)".into(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let width = u32_at(4);
    let height = u32_at(8);
    let num_frames = u32_at(12) as usize;
    if width == 0 || height == 0 || num_frames == 0 {
        return Err(MaskIoError::Container {
            offset: 4,
            msg: format!("degenerate dimensions {width}x{height}x{num_frames}"),
        });
    }
    let row_len = (width as usize).div_ceil(8);
    let frame_len = row_len * height as usize;
    let need = 16 + frame_len * num_frames;
    if bytes.len() < need {
        return Err(MaskIoError::Container {
            offset: bytes.len() as u64,
            msg: format!("truncated: need {need} bytes, have {}", bytes.len()),
        });
    }
    let mut frames = Vec::with_capacity(num_frames);
    for f in 0..num_frames {
        let base = 16 + f * frame_len;
        let mut mask = BitMask::new(width, height);
        for y in 0..height {
            let start = base + y as usize * row_len;
            mask.fill_row_from_bytes(y, &bytes[start..start + row_len]);
        }
        frames.push(mask);
    }
    SilhouetteVideo::new(frames)
}

pub fn save_packed(video: &SilhouetteVideo, path: &Path) -> Result<(), MaskIoError> {
    let bytes = encode_packed(video);
    let mut file = fs::File::create(path).map_err(|source| MaskIoError::Io {
        frame: 0,
        path: path.to_path_buf(),
        source,
    })?;
    file.write_all(&bytes).map_err(|source| MaskIoError::Io {
        frame: 0,
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_packed(path: &Path) -> Result<SilhouetteVideo, MaskIoError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| MaskIoError::Io {
            frame: 0,
            path: path.to_path_buf(),
            source,
        })?;
    decode_packed(&bytes)
}
