//! Dense two-frame optical flow from per-pixel quadratic expansions,
//! refined coarse-to-fine over a Gaussian pyramid.
//!
//! At each pyramid level both frames are expanded into quadratic models
//! (see [`PolyExpansion`]). Under a displacement `d` the linear coefficients
//! of the two models satisfy `A d = (b_prev - b_curr)/2`; with a prior
//! displacement the current-frame coefficients are sampled at the warped
//! position and the prior re-enters the right-hand side, so the solve
//! yields the total displacement. The per-pixel normal equations
//! `(A^T A) d = A^T db` are smoothed with a Gaussian window before
//! solving; pixels with a near-singular system get zero displacement.
//! Between levels the flow is upsampled bilinearly and scaled by the
//! level size ratio.

mod expansion;
mod plane;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

pub use expansion::{polynomial_expansion, PolyExpansion, QuadCoeffs};
use plane::{gaussian_blur, resize_bilinear, Plane};

use crate::error::{Error, Result};
use crate::imagery::{FlowField, Frame};

/// Magic bytes of the flow dump format.
pub const FLOW_DUMP_MAGIC: &[u8; 4] = b"BFL1";

/// Tuning of the pyramidal flow estimator.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FlowParams {
    /// Total pyramid levels including the full-resolution image.
    pub pyramid_levels: usize,
    /// Per-level downscale ratio in (0, 1).
    pub pyramid_scale: f32,
    /// Radius of the Gaussian window smoothing the normal equations
    /// (sigma = radius / 2).
    pub window_radius: usize,
    /// Solver iterations per level.
    pub iterations: usize,
    /// Expansion neighborhood radius.
    pub poly_radius: usize,
    /// Expansion applicability Gaussian width.
    pub poly_sigma: f32,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            pyramid_levels: 3,
            pyramid_scale: 0.5,
            window_radius: 7,
            iterations: 3,
            poly_radius: 5,
            poly_sigma: 1.1,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid_levels < 1 {
            return Err(Error::InvalidParam("pyramid_levels must be >= 1".into()));
        }
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return Err(Error::InvalidParam(format!(
                "pyramid_scale must be in (0, 1), got {}",
                self.pyramid_scale
            )));
        }
        if self.iterations < 1 {
            return Err(Error::InvalidParam("iterations must be >= 1".into()));
        }
        if self.poly_radius < 1 {
            return Err(Error::InvalidParam("poly_radius must be >= 1".into()));
        }
        if !(self.poly_sigma > 0.0) {
            return Err(Error::InvalidParam("poly_sigma must be positive".into()));
        }
        if self.window_radius < 1 {
            return Err(Error::InvalidParam("window_radius must be >= 1".into()));
        }
        Ok(())
    }

    fn min_dim(&self) -> usize {
        2 * self.poly_radius + 1
    }
}

/// Per-level expansions of one frame; reusable as the previous frame of
/// the next pair, which halves the expansion work over a video.
pub struct FrameAnalysis {
    width: usize,
    height: usize,
    expansions: Vec<PolyExpansion>,
}

/// Level sizes from full resolution down, stopping before any dimension
/// falls below the expansion neighborhood.
fn level_sizes(w: usize, h: usize, params: &FlowParams) -> Vec<(usize, usize)> {
    let min = params.min_dim();
    let mut sizes = vec![(w, h)];
    for _ in 1..params.pyramid_levels {
        let (pw, ph) = *sizes.last().unwrap();
        let nw = (pw as f32 * params.pyramid_scale).round() as usize;
        let nh = (ph as f32 * params.pyramid_scale).round() as usize;
        if nw < min || nh < min {
            break;
        }
        sizes.push((nw, nh));
    }
    sizes
}

/// Builds the pyramid and per-level expansions for one frame.
pub fn analyze_frame(frame: &Frame, params: &FlowParams) -> Result<FrameAnalysis> {
    params.validate()?;
    let min = params.min_dim();
    if frame.width < min || frame.height < min {
        return Err(Error::FrameTooSmall { w: frame.width, h: frame.height, min });
    }
    let sizes = level_sizes(frame.width, frame.height, params);
    let blur_sigma = (0.5 * (1.0 / params.pyramid_scale - 1.0)).max(0.5);
    let blur_radius = (2.0 * blur_sigma).ceil().max(1.0) as usize;

    let mut level = Plane::from_frame(frame);
    let mut expansions =
        vec![expansion::expand_plane(&level, params.poly_radius, params.poly_sigma)];
    for &(nw, nh) in sizes.iter().skip(1) {
        let blurred = gaussian_blur(&level, blur_radius, blur_sigma);
        level = resize_bilinear(&blurred, nw, nh);
        expansions.push(expansion::expand_plane(&level, params.poly_radius, params.poly_sigma));
    }
    Ok(FrameAnalysis { width: frame.width, height: frame.height, expansions })
}

/// Per-pixel normal-equation planes at one level.
struct NormalPlanes {
    m11: Plane,
    m12: Plane,
    m22: Plane,
    h1: Plane,
    h2: Plane,
}

fn update_matrices(
    prev: &PolyExpansion,
    curr: &PolyExpansion,
    flow_x: &Plane,
    flow_y: &Plane,
) -> NormalPlanes {
    let (w, h) = (prev.width, prev.height);
    let mut out = NormalPlanes {
        m11: Plane::zeros(w, h),
        m12: Plane::zeros(w, h),
        m22: Plane::zeros(w, h),
        h1: Plane::zeros(w, h),
        h2: Plane::zeros(w, h),
    };
    out.m11
        .data
        .par_chunks_mut(w)
        .zip(out.m12.data.par_chunks_mut(w))
        .zip(out.m22.data.par_chunks_mut(w))
        .zip(out.h1.data.par_chunks_mut(w))
        .zip(out.h2.data.par_chunks_mut(w))
        .enumerate()
        .with_min_len(plane::PAR_MIN_ROWS)
        .for_each(|(y, ((((m11, m12), m22), h1), h2))| {
            let row = y * w;
            let fx_row = &flow_x.data[row..row + w];
            let fy_row = &flow_y.data[row..row + w];
            let pa11 = &prev.a11[row..row + w];
            let pa12 = &prev.a12[row..row + w];
            let pa22 = &prev.a22[row..row + w];
            let pb1 = &prev.b1[row..row + w];
            let pb2 = &prev.b2[row..row + w];
            for x in 0..w {
                let dx = fx_row[x];
                let dy = fy_row[x];

                // Shared bilinear stencil at the warped position.
                let fx = (x as f32 + dx).clamp(0.0, (w - 1) as f32);
                let fy = (y as f32 + dy).clamp(0.0, (h - 1) as f32);
                let x0 = fx.floor() as usize;
                let y0 = fy.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let y1 = (y0 + 1).min(h - 1);
                let ax = fx - x0 as f32;
                let ay = fy - y0 as f32;
                let w00 = (1.0 - ax) * (1.0 - ay);
                let w01 = ax * (1.0 - ay);
                let w10 = (1.0 - ax) * ay;
                let w11 = ax * ay;
                let (i00, i01, i10, i11) = (y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1);
                let warp = |p: &[f32]| -> f32 {
                    w00 * p[i00] + w01 * p[i01] + w10 * p[i10] + w11 * p[i11]
                };

                let a11 = 0.5 * (pa11[x] + warp(&curr.a11));
                let a12 = 0.5 * (pa12[x] + warp(&curr.a12));
                let a22 = 0.5 * (pa22[x] + warp(&curr.a22));
                let db1 = 0.5 * (pb1[x] - warp(&curr.b1)) + a11 * dx + a12 * dy;
                let db2 = 0.5 * (pb2[x] - warp(&curr.b2)) + a12 * dx + a22 * dy;

                m11[x] = a11 * a11 + a12 * a12;
                m12[x] = a12 * (a11 + a22);
                m22[x] = a12 * a12 + a22 * a22;
                h1[x] = a11 * db1 + a12 * db2;
                h2[x] = a12 * db1 + a22 * db2;
            }
        });
    out
}

fn solve_flow(n: &NormalPlanes, window_radius: usize) -> (Plane, Plane) {
    let sigma = window_radius as f32 / 2.0;
    let m11 = gaussian_blur(&n.m11, window_radius, sigma);
    let m12 = gaussian_blur(&n.m12, window_radius, sigma);
    let m22 = gaussian_blur(&n.m22, window_radius, sigma);
    let h1 = gaussian_blur(&n.h1, window_radius, sigma);
    let h2 = gaussian_blur(&n.h2, window_radius, sigma);

    let (w, h) = (m11.width, m11.height);
    let mut fx = Plane::zeros(w, h);
    let mut fy = Plane::zeros(w, h);
    fx.data
        .par_chunks_mut(w)
        .zip(fy.data.par_chunks_mut(w))
        .enumerate()
        .with_min_len(plane::PAR_MIN_ROWS)
        .for_each(|(y, (rx, ry))| {
            let row = y * w;
            let g11s = &m11.data[row..row + w];
            let g12s = &m12.data[row..row + w];
            let g22s = &m22.data[row..row + w];
            let b1s = &h1.data[row..row + w];
            let b2s = &h2.data[row..row + w];
            for x in 0..w {
                let g11 = g11s[x] as f64;
                let g12 = g12s[x] as f64;
                let g22 = g22s[x] as f64;
                let det = g11 * g22 - g12 * g12;
                let trace = g11 + g22;
                // Near-singular systems (flat or 1-D texture) get zero
                // displacement instead of a noise-amplified solve.
                if trace <= 0.0 || det <= 1e-9 * trace * trace {
                    rx[x] = 0.0;
                    ry[x] = 0.0;
                } else {
                    let b1 = b1s[x] as f64;
                    let b2 = b2s[x] as f64;
                    rx[x] = ((g22 * b1 - g12 * b2) / det) as f32;
                    ry[x] = ((g11 * b2 - g12 * b1) / det) as f32;
                }
            }
        });
    (fx, fy)
}

fn flow_between(
    prev: &FrameAnalysis,
    curr: &FrameAnalysis,
    params: &FlowParams,
    initial: Option<&FlowField>,
) -> Result<FlowField> {
    if (prev.width, prev.height) != (curr.width, curr.height)
        || prev.expansions.len() != curr.expansions.len()
    {
        return Err(Error::dims(
            "estimate_flow",
            (prev.width, prev.height),
            (curr.width, curr.height),
        ));
    }
    if let Some(init) = initial {
        if (init.width, init.height) != (prev.width, prev.height) {
            return Err(Error::dims(
                "initial flow",
                (prev.width, prev.height),
                (init.width, init.height),
            ));
        }
    }

    let top = prev.expansions.len() - 1;
    let mut flow: Option<(Plane, Plane)> = None;
    for level in (0..=top).rev() {
        let lp = &prev.expansions[level];
        let (lw, lh) = (lp.width, lp.height);
        let (mut dx, mut dy) = match flow.take() {
            Some((cx, cy)) => {
                let sx = lw as f32 / cx.width as f32;
                let sy = lh as f32 / cx.height as f32;
                let mut nx = resize_bilinear(&cx, lw, lh);
                let mut ny = resize_bilinear(&cy, lw, lh);
                nx.data.iter_mut().for_each(|v| *v *= sx);
                ny.data.iter_mut().for_each(|v| *v *= sy);
                (nx, ny)
            }
            None => match initial {
                Some(init) => {
                    let sx = lw as f32 / init.width as f32;
                    let sy = lh as f32 / init.height as f32;
                    let full_x = Plane { width: init.width, height: init.height, data: init.vx.clone() };
                    let full_y = Plane { width: init.width, height: init.height, data: init.vy.clone() };
                    let mut nx = resize_bilinear(&full_x, lw, lh);
                    let mut ny = resize_bilinear(&full_y, lw, lh);
                    nx.data.iter_mut().for_each(|v| *v *= sx);
                    ny.data.iter_mut().for_each(|v| *v *= sy);
                    (nx, ny)
                }
                None => (Plane::zeros(lw, lh), Plane::zeros(lw, lh)),
            },
        };
        for _ in 0..params.iterations {
            let normals = update_matrices(&prev.expansions[level], &curr.expansions[level], &dx, &dy);
            let solved = solve_flow(&normals, params.window_radius);
            dx = solved.0;
            dy = solved.1;
        }
        flow = Some((dx, dy));
    }
    let (dx, dy) = flow.unwrap();
    Ok(FlowField { width: dx.width, height: dx.height, vx: dx.data, vy: dy.data })
}

/// Dense displacement between two frames of equal size. `initial`, when
/// given, warm-starts the coarsest level (typically the previous pair's
/// flow).
pub fn estimate_flow(
    prev: &Frame,
    curr: &Frame,
    params: &FlowParams,
    initial: Option<&FlowField>,
) -> Result<FlowField> {
    if (prev.width, prev.height) != (curr.width, curr.height) {
        return Err(Error::dims(
            "estimate_flow",
            (prev.width, prev.height),
            (curr.width, curr.height),
        ));
    }
    let pa = analyze_frame(prev, params)?;
    let ca = analyze_frame(curr, params)?;
    flow_between(&pa, &ca, params, initial)
}

/// Streaming flow over a frame sequence. Each frame is analyzed once and
/// reused as the previous frame of the next pair; with `warm_start` the
/// previous pair's flow initializes the next solve.
pub struct FlowEngine {
    params: FlowParams,
    warm_start: bool,
    prev: Option<FrameAnalysis>,
    prev_flow: Option<FlowField>,
}

impl FlowEngine {
    pub fn new(params: FlowParams, warm_start: bool) -> Result<Self> {
        params.validate()?;
        Ok(FlowEngine { params, warm_start, prev: None, prev_flow: None })
    }

    /// Feeds the next frame; returns the flow from the previous frame into
    /// this one (None for the first frame).
    pub fn push(&mut self, frame: &Frame) -> Result<Option<FlowField>> {
        let analysis = analyze_frame(frame, &self.params)?;
        let out = match &self.prev {
            Some(prev) => {
                let init = if self.warm_start { self.prev_flow.as_ref() } else { None };
                let flow = flow_between(prev, &analysis, &self.params, init)?;
                self.prev_flow = Some(flow.clone());
                Some(flow)
            }
            None => None,
        };
        self.prev = Some(analysis);
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Flow dump (debug interface)
// ---------------------------------------------------------------------------

/// Incremental writer for the `BFL1` flow dump: 16-byte header (magic,
/// u32 width, height, count, little-endian) followed by each field as a
/// vx plane then a vy plane of little-endian f32.
pub struct FlowDumpWriter {
    out: BufWriter<fs::File>,
    path: std::path::PathBuf,
    width: usize,
    height: usize,
    expected: usize,
    written: usize,
}

impl FlowDumpWriter {
    pub fn create(path: &Path, width: usize, height: usize, count: usize) -> Result<Self> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        out.write_all(FLOW_DUMP_MAGIC).map_err(|e| Error::io(path, e))?;
        for v in [width as u32, height as u32, count as u32] {
            out.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
        Ok(FlowDumpWriter { out, path: path.to_path_buf(), width, height, expected: count, written: 0 })
    }

    pub fn push(&mut self, flow: &FlowField) -> Result<()> {
        if (flow.width, flow.height) != (self.width, self.height) {
            return Err(Error::dims("flow dump", (self.width, self.height), (flow.width, flow.height)));
        }
        if self.written == self.expected {
            return Err(Error::InvalidParam("flow dump already holds the promised count".into()));
        }
        for plane in [&flow.vx, &flow.vy] {
            for v in plane {
                self.out
                    .write_all(&v.to_le_bytes())
                    .map_err(|e| Error::io(&self.path, e))?;
            }
        }
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.expected {
            return Err(Error::InvalidParam(format!(
                "flow dump holds {} fields, header promised {}",
                self.written, self.expected
            )));
        }
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a `BFL1` dump back into flow fields.
pub fn read_flow_dump(path: &Path) -> Result<Vec<FlowField>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[0..4] != FLOW_DUMP_MAGIC {
        return Err(Error::format(path, "missing BFL1 header"));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let plane = width * height * 4;
    if bytes.len() != 16 + 2 * plane * count {
        return Err(Error::format(path, "dump length does not match header"));
    }
    let read_plane = |offset: usize| -> Vec<f32> {
        bytes[offset..offset + plane]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    Ok((0..count)
        .map(|i| {
            let base = 16 + i * 2 * plane;
            FlowField {
                width,
                height,
                vx: read_plane(base),
                vy: read_plane(base + plane),
            }
        })
        .collect())
}
