//! Per-pixel quadratic polynomial expansion: the Gaussian-weighted
//! least-squares fit of `x^T A x + b^T x + c` over each pixel's
//! `(2r+1)^2` neighborhood, with replicated borders.
//!
//! Because the Gaussian applicability and the basis are fixed, the normal
//! matrix of the fit is the same at every pixel. The per-pixel work
//! reduces to six separable correlations (the weighted moments of the
//! signal) followed by a constant linear map. The x, y and xy components
//! decouple by symmetry; only the (1, x^2, y^2) block needs a 3x3 solve,
//! precomputed here as an inverse.

use rayon::prelude::*;

use super::plane::{gaussian_kernel, Plane};
use crate::error::{Error, Result};
use crate::imagery::Frame;

/// Quadratic model at one pixel: `f(d) ~ d^T A d + b^T d + c` for offsets
/// `d` from the pixel, with `A = [[a11, a12], [a12, a22]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadCoeffs {
    pub a11: f32,
    pub a12: f32,
    pub a22: f32,
    pub b1: f32,
    pub b2: f32,
    pub c: f32,
}

/// Dense per-pixel expansion coefficients, stored as row-major planes.
#[derive(Debug, Clone)]
pub struct PolyExpansion {
    pub width: usize,
    pub height: usize,
    pub(crate) b1: Vec<f32>,
    pub(crate) b2: Vec<f32>,
    pub(crate) a11: Vec<f32>,
    pub(crate) a12: Vec<f32>,
    pub(crate) a22: Vec<f32>,
    pub(crate) c: Vec<f32>,
}

impl PolyExpansion {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> QuadCoeffs {
        let i = y * self.width + x;
        QuadCoeffs {
            a11: self.a11[i],
            a12: self.a12[i],
            a22: self.a22[i],
            b1: self.b1[i],
            b2: self.b2[i],
            c: self.c[i],
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.b1, &self.b2, &self.a11, &self.a12, &self.a22, &self.c]
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()))
    }
}

/// Constant solve data shared by every pixel of an expansion.
struct NormalInverse {
    /// Inverse of the (1, x^2, y^2) moment block, row-major 3x3.
    inv3: [f64; 9],
    /// 1 / (sum w k^2), for the decoupled x and y components.
    inv_m2: f64,
    /// 1 / (sum w k^2)^2, for the decoupled xy component.
    inv_m22: f64,
}

fn normal_inverse(kernel: &[f32]) -> NormalInverse {
    let radius = (kernel.len() - 1) / 2;
    let mut m2 = 0.0f64;
    let mut m4 = 0.0f64;
    for (i, &g) in kernel.iter().enumerate() {
        let k = i as f64 - radius as f64;
        m2 += g as f64 * k * k;
        m4 += g as f64 * k * k * k * k;
    }
    // Moment matrix over the 2-D basis block (1, x^2, y^2); the kernel is
    // normalized so the zeroth moment is 1.
    let m = [1.0, m2, m2, m2, m4, m2 * m2, m2, m2 * m2, m4];
    NormalInverse { inv3: invert3(&m), inv_m2: 1.0 / m2, inv_m22: 1.0 / (m2 * m2) }
}

fn invert3(m: &[f64; 9]) -> [f64; 9] {
    let det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
        + m[2] * (m[3] * m[7] - m[4] * m[6]);
    assert!(det.abs() > 1e-12, "degenerate applicability moments");
    let inv_det = 1.0 / det;
    [
        (m[4] * m[8] - m[5] * m[7]) * inv_det,
        (m[2] * m[7] - m[1] * m[8]) * inv_det,
        (m[1] * m[5] - m[2] * m[4]) * inv_det,
        (m[5] * m[6] - m[3] * m[8]) * inv_det,
        (m[0] * m[8] - m[2] * m[6]) * inv_det,
        (m[2] * m[3] - m[0] * m[5]) * inv_det,
        (m[3] * m[7] - m[4] * m[6]) * inv_det,
        (m[1] * m[6] - m[0] * m[7]) * inv_det,
        (m[0] * m[4] - m[1] * m[3]) * inv_det,
    ]
}

/// Expansion of an 8-bit frame; errors when the frame is smaller than the
/// `(2r+1)^2` neighborhood.
pub fn polynomial_expansion(
    frame: &Frame,
    poly_radius: usize,
    poly_sigma: f32,
) -> Result<PolyExpansion> {
    if poly_radius < 1 || !(poly_sigma > 0.0) {
        return Err(Error::InvalidParam(
            "poly_radius must be >= 1 and poly_sigma positive".into(),
        ));
    }
    let min = 2 * poly_radius + 1;
    if frame.width < min || frame.height < min {
        return Err(Error::FrameTooSmall { w: frame.width, h: frame.height, min });
    }
    Ok(expand_plane(&Plane::from_frame(frame), poly_radius, poly_sigma))
}

/// Expansion of an f32 plane (pyramid levels land here directly).
pub(crate) fn expand_plane(plane: &Plane, radius: usize, sigma: f32) -> PolyExpansion {
    let (w, h) = (plane.width, plane.height);
    let g = gaussian_kernel(radius, sigma);
    let gk: Vec<f32> = g
        .iter()
        .enumerate()
        .map(|(i, &v)| v * (i as f32 - radius as f32))
        .collect();
    let gkk: Vec<f32> = gk
        .iter()
        .enumerate()
        .map(|(i, &v)| v * (i as f32 - radius as f32))
        .collect();
    let solve = normal_inverse(&g);

    // Horizontal pass: weighted moments of order 0..2 in x per pixel.
    let mut h0 = Plane::zeros(w, h);
    let mut h1 = Plane::zeros(w, h);
    let mut h2 = Plane::zeros(w, h);
    h0.data
        .par_chunks_mut(w)
        .zip(h1.data.par_chunks_mut(w))
        .zip(h2.data.par_chunks_mut(w))
        .enumerate()
        .with_min_len(super::plane::PAR_MIN_ROWS)
        .for_each(|(y, ((r0, r1), r2))| {
            let src = &plane.data[y * w..(y + 1) * w];
            super::plane::correlate_row(src, &g, radius, r0);
            super::plane::correlate_row(src, &gk, radius, r1);
            super::plane::correlate_row(src, &gkk, radius, r2);
        });

    // Vertical pass accumulates the six 2-D moments row by row (using the
    // output planes as scratch), then applies the constant inverse.
    let mut out = PolyExpansion {
        width: w,
        height: h,
        b1: vec![0.0; w * h],
        b2: vec![0.0; w * h],
        a11: vec![0.0; w * h],
        a12: vec![0.0; w * h],
        a22: vec![0.0; w * h],
        c: vec![0.0; w * h],
    };
    out.b1
        .par_chunks_mut(w)
        .zip(out.b2.par_chunks_mut(w))
        .zip(out.a11.par_chunks_mut(w))
        .zip(out.a12.par_chunks_mut(w))
        .zip(out.a22.par_chunks_mut(w))
        .zip(out.c.par_chunks_mut(w))
        .enumerate()
        .with_min_len(super::plane::PAR_MIN_ROWS)
        .for_each(|(y, (((((b1, b2), a11), a12), a22), c))| {
            // Scratch layout: c <- sum w f, b2 <- sum w y f,
            // a22 <- sum w y^2 f, b1 <- sum w x f, a12 <- sum w x y f,
            // a11 <- sum w x^2 f.
            let axpy = |dst: &mut [f32], k: f32, src: &[f32]| {
                for (o, &s) in dst.iter_mut().zip(src) {
                    *o += k * s;
                }
            };
            for ki in 0..g.len() {
                let sy = (y as isize + ki as isize - radius as isize)
                    .clamp(0, h as isize - 1) as usize;
                let r0 = &h0.data[sy * w..(sy + 1) * w];
                let r1 = &h1.data[sy * w..(sy + 1) * w];
                let r2 = &h2.data[sy * w..(sy + 1) * w];
                axpy(c, g[ki], r0);
                axpy(b2, gk[ki], r0);
                axpy(a22, gkk[ki], r0);
                axpy(b1, g[ki], r1);
                axpy(a12, gk[ki], r1);
                axpy(a11, g[ki], r2);
            }
            let iv = &solve.inv3;
            for x in 0..w {
                let s_f = c[x] as f64;
                let s_xx = a11[x] as f64;
                let s_yy = a22[x] as f64;
                c[x] = (iv[0] * s_f + iv[1] * s_xx + iv[2] * s_yy) as f32;
                a11[x] = (iv[3] * s_f + iv[4] * s_xx + iv[5] * s_yy) as f32;
                a22[x] = (iv[6] * s_f + iv[7] * s_xx + iv[8] * s_yy) as f32;
                b1[x] = (b1[x] as f64 * solve.inv_m2) as f32;
                b2[x] = (b2[x] as f64 * solve.inv_m2) as f32;
                a12[x] = (a12[x] as f64 * solve.inv_m22 / 2.0) as f32;
            }
        });
    out
}
