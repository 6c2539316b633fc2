//! Image and flow data types plus bit-exact frame/mask ingestion.
//!
//! The pipeline operates on single-channel 8-bit luminance frames. Two
//! input layouts are supported:
//!
//! * a directory of binary PGM (`P5`, maxval 255) files, consumed in
//!   filename-lexicographic order (color `P6` files are accepted and
//!   converted to luminance with fixed Rec.601 weights), and
//! * a single raw stream file: 16-byte header (`BSR1` magic, then
//!   little-endian u32 width, height and frame count) followed by the
//!   frames as contiguous 8-bit luminance planes.
//!
//! Container video decoding is intentionally out of scope; see the README
//! for an ffmpeg recipe that produces a PGM sequence.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Magic bytes of the raw luminance stream format.
pub const RAW_STREAM_MAGIC: &[u8; 4] = b"BSR1";

/// A single-channel 8-bit frame with its position in the sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    /// Row-major luminance, `width * height` bytes.
    pub pixels: Vec<u8>,
    /// 0-based ordinal within the sequence; strictly increasing, no gaps.
    pub index: usize,
    /// Frames per second, shared by the whole sequence. Supplied by the
    /// caller; the file formats carry no timing metadata.
    pub fps: f64,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>, index: usize, fps: f64) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::InvalidParam(format!(
                "pixel buffer length {} != {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        if !(fps > 0.0) {
            return Err(Error::InvalidParam(format!("fps must be positive, got {fps}")));
        }
        Ok(Frame { width, height, pixels, index, fps })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

/// Per-frame binary body mask; `true` marks body/clothes pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    /// Row-major booleans, `width * height` entries.
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidParam(format!(
                "mask buffer length {} != {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        Ok(Mask { width, height, bits })
    }

    /// All-true mask, the neutral element of intersection.
    pub fn full(width: usize, height: usize) -> Self {
        Mask { width, height, bits: vec![true; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }
}

/// Dense displacement field between two consecutive frames: the content of
/// the previous frame appears displaced by `(vx, vy)` pixels in the
/// current one. Components are in image coordinates (y grows downward).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub vx: Vec<f32>,
    pub vy: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            vx: vec![0.0; width * height],
            vy: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.vx[i], self.vy[i])
    }

    pub fn is_finite(&self) -> bool {
        self.vx.iter().chain(self.vy.iter()).all(|v| v.is_finite())
    }
}

/// Integer-rounded Rec.601 luminance. The weights sum to 1000 exactly, so
/// the conversion is deterministic integer arithmetic.
#[inline]
pub fn rgb_to_luma(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

// ---------------------------------------------------------------------------
// PGM / PPM
// ---------------------------------------------------------------------------

/// Decoded netpbm image: dimensions plus 8-bit luminance.
struct PnmImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

/// Reads a binary PGM (`P5`) or PPM (`P6`) file with maxval 255. Color
/// input is reduced to luminance via [`rgb_to_luma`].
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = parse_pnm(&bytes).map_err(|msg| Error::format(path, msg))?;
    Ok((img.width, img.height, img.pixels))
}

fn parse_pnm(bytes: &[u8]) -> std::result::Result<PnmImage, String> {
    let channels = match bytes.get(0..2) {
        Some(b"P5") => 1usize,
        Some(b"P6") => 3usize,
        _ => return Err("not a binary PGM/PPM (missing P5/P6 magic)".into()),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        *field = parse_header_int(bytes, &mut pos)?;
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}, expected 255"));
    }
    if width == 0 || height == 0 {
        return Err("zero image dimension".into());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height * channels;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| format!("truncated raster: need {need} bytes"))?;
    let pixels = if channels == 1 {
        raster.to_vec()
    } else {
        raster
            .chunks_exact(3)
            .map(|p| rgb_to_luma(p[0], p[1], p[2]))
            .collect()
    };
    Ok(PnmImage { width, height, pixels })
}

/// Parses one whitespace-delimited decimal header field, skipping
/// whitespace and `#` comment lines before it.
fn parse_header_int(bytes: &[u8], pos: &mut usize) -> std::result::Result<usize, String> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(b) = bytes.get(*pos) {
                    *pos += 1;
                    if *b == b'\n' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_digit() => break,
            _ => return Err("malformed header".into()),
        }
    }
    let mut value = 0usize;
    while let Some(b) = bytes.get(*pos) {
        if !b.is_ascii_digit() {
            break;
        }
        value = value
            .checked_mul(10)
            .and_then(|v| v.checked_add((b - b'0') as usize))
            .ok_or("header field overflow")?;
        *pos += 1;
    }
    Ok(value)
}

/// Writes a binary PGM (`P5`, maxval 255). The header is fixed-form, so
/// writing and reloading a frame reproduces identical bytes.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), width * height, "pixel buffer size");
    let mut out = Vec::with_capacity(32 + pixels.len());
    out.extend_from_slice(format!("P5\n{width} {height}\n255\n").as_bytes());
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Raw luminance stream
// ---------------------------------------------------------------------------

/// Reads a `BSR1` raw stream into frames.
pub fn read_raw_stream(path: &Path, fps: f64) -> Result<Vec<Frame>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[0..4] != RAW_STREAM_MAGIC {
        return Err(Error::format(path, "missing BSR1 stream header"));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let plane = width * height;
    if bytes.len() != 16 + plane * count {
        return Err(Error::format(
            path,
            format!("stream length {} != header promise {}", bytes.len(), 16 + plane * count),
        ));
    }
    if count == 0 {
        return Err(Error::NoFrames(path.to_path_buf()));
    }
    let mut frames = Vec::with_capacity(count);
    for i in 0..count {
        let start = 16 + i * plane;
        frames.push(Frame::new(width, height, bytes[start..start + plane].to_vec(), i, fps)?);
    }
    Ok(frames)
}

/// Writes frames as a `BSR1` raw stream. All frames must share dimensions.
pub fn write_raw_stream(path: &Path, frames: &[Frame]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let (fw, fh) = frames.first().map(|f| (f.width, f.height)).unwrap_or((0, 0));
    w.write_all(RAW_STREAM_MAGIC).map_err(|e| Error::io(path, e))?;
    for v in [fw as u32, fh as u32, frames.len() as u32] {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    for f in frames {
        if (f.width, f.height) != (fw, fh) {
            return Err(Error::dims(format!("frame {}", f.index), (fw, fh), (f.width, f.height)));
        }
        w.write_all(&f.pixels).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Sequence loading
// ---------------------------------------------------------------------------

/// Lists `.pgm`/`.ppm` files of a directory in lexicographic order.
fn list_pnm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("ppm"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Loads an ordered frame sequence from a PGM directory or a `BSR1` stream
/// file. Frames receive contiguous indices starting at 0.
pub fn load_frame_sequence(path: &Path, fps: f64) -> Result<Vec<Frame>> {
    if !(fps > 0.0) {
        return Err(Error::InvalidParam(format!("fps must be positive, got {fps}")));
    }
    if path.is_file() {
        return read_raw_stream(path, fps);
    }
    let files = list_pnm_files(path)?;
    if files.is_empty() {
        return Err(Error::NoFrames(path.to_path_buf()));
    }
    let mut frames = Vec::with_capacity(files.len());
    let mut dims: Option<(usize, usize)> = None;
    for (i, file) in files.iter().enumerate() {
        let (w, h, pixels) = read_pgm(file)?;
        match dims {
            None => dims = Some((w, h)),
            Some(d) if d != (w, h) => {
                return Err(Error::dims(file.display().to_string(), d, (w, h)));
            }
            _ => {}
        }
        frames.push(Frame::new(w, h, pixels, i, fps)?);
    }
    Ok(frames)
}

/// Loads the per-frame mask sequence from a PGM directory or a `BSR1`
/// stream of 0/255 planes. Nonzero pixels become `true`. The mask count
/// must equal `expected_count` and every mask must match the frame
/// dimensions.
pub fn load_mask_sequence(
    path: &Path,
    expected_w: usize,
    expected_h: usize,
    expected_count: usize,
) -> Result<Vec<Mask>> {
    if path.is_file() {
        let frames = read_raw_stream(path, 1.0)?;
        if frames.len() != expected_count {
            return Err(Error::MaskCountMismatch { masks: frames.len(), frames: expected_count });
        }
        return frames
            .iter()
            .map(|f| {
                if (f.width, f.height) != (expected_w, expected_h) {
                    return Err(Error::dims(
                        path.display().to_string(),
                        (expected_w, expected_h),
                        (f.width, f.height),
                    ));
                }
                Mask::new(f.width, f.height, f.pixels.iter().map(|&p| p > 0).collect())
            })
            .collect();
    }
    let files = list_pnm_files(path)?;
    if files.len() != expected_count {
        return Err(Error::MaskCountMismatch { masks: files.len(), frames: expected_count });
    }
    let mut masks = Vec::with_capacity(files.len());
    for file in &files {
        let (w, h, pixels) = read_pgm(file)?;
        if (w, h) != (expected_w, expected_h) {
            return Err(Error::dims(
                file.display().to_string(),
                (expected_w, expected_h),
                (w, h),
            ));
        }
        masks.push(Mask::new(w, h, pixels.iter().map(|&p| p > 0).collect())?);
    }
    Ok(masks)
}

/// Writes a mask as PGM with the body-pixel convention 255 = true.
pub fn write_mask_pgm(path: &Path, mask: &Mask) -> Result<()> {
    let pixels: Vec<u8> = mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_pgm(path, mask.width, mask.height, &pixels)
}
