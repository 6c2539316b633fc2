//! Internal f32 image planes with replicated borders, plus the separable
//! Gaussian blur and bilinear resize used by the pyramid.

use rayon::prelude::*;

use crate::imagery::Frame;

/// Minimum rows per parallel task; small planes would otherwise drown in
/// scheduling overhead. Chunking never changes results, only batching.
pub(crate) const PAR_MIN_ROWS: usize = 32;

#[derive(Debug, Clone)]
pub(crate) struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Plane { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_frame(frame: &Frame) -> Self {
        Plane {
            width: frame.width,
            height: frame.height,
            data: frame.pixels.iter().map(|&p| p as f32).collect(),
        }
    }

    /// Bilinear sample with the coordinate clamped into the valid range.
    #[inline]
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        let x = x.clamp(0.0, (self.width - 1) as f32);
        let y = y.clamp(0.0, (self.height - 1) as f32);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let w = self.width;
        let p00 = self.data[y0 * w + x0];
        let p01 = self.data[y0 * w + x1];
        let p10 = self.data[y1 * w + x0];
        let p11 = self.data[y1 * w + x1];
        let top = p00 + (p01 - p00) * fx;
        let bottom = p10 + (p11 - p10) * fx;
        top + (bottom - top) * fy
    }
}

/// Normalized Gaussian taps for offsets `-radius..=radius`.
pub(crate) fn gaussian_kernel(radius: usize, sigma: f32) -> Vec<f32> {
    let denom = 2.0 * sigma * sigma;
    let mut taps: Vec<f32> = (-(radius as isize)..=radius as isize)
        .map(|k| (-((k * k) as f32) / denom).exp())
        .collect();
    let sum: f32 = taps.iter().sum();
    for t in taps.iter_mut() {
        *t /= sum;
    }
    taps
}

/// Separable Gaussian blur with edge replication. Row computations are
/// independent, so parallel execution is bit-identical to sequential.
pub(crate) fn gaussian_blur(src: &Plane, radius: usize, sigma: f32) -> Plane {
    let kernel = gaussian_kernel(radius, sigma);
    let tmp = correlate_rows(src, &kernel);
    correlate_cols(&tmp, &kernel)
}

pub(crate) fn correlate_rows(src: &Plane, kernel: &[f32]) -> Plane {
    let (w, h) = (src.width, src.height);
    let radius = (kernel.len() - 1) / 2;
    let mut out = Plane::zeros(w, h);
    out.data
        .par_chunks_mut(w)
        .enumerate()
        .with_min_len(PAR_MIN_ROWS)
        .for_each(|(y, row)| {
            let src_row = &src.data[y * w..(y + 1) * w];
            correlate_row(src_row, kernel, radius, row);
        });
    out
}

/// One-row correlation with replicated ends; the interior runs without
/// clamping so the compiler can vectorize it.
pub(crate) fn correlate_row(src_row: &[f32], kernel: &[f32], radius: usize, out: &mut [f32]) {
    let w = src_row.len();
    let clamped = |x: usize| {
        let mut acc = 0.0f32;
        for (ki, &kv) in kernel.iter().enumerate() {
            let sx = (x as isize + ki as isize - radius as isize).clamp(0, w as isize - 1);
            acc += kv * src_row[sx as usize];
        }
        acc
    };
    if w <= 2 * radius {
        for (x, o) in out.iter_mut().enumerate() {
            *o = clamped(x);
        }
        return;
    }
    for x in 0..radius {
        out[x] = clamped(x);
    }
    for x in radius..w - radius {
        let window = &src_row[x - radius..x + radius + 1];
        let mut acc = 0.0f32;
        for (&kv, &s) in kernel.iter().zip(window) {
            acc += kv * s;
        }
        out[x] = acc;
    }
    for x in w - radius..w {
        out[x] = clamped(x);
    }
}

pub(crate) fn correlate_cols(src: &Plane, kernel: &[f32]) -> Plane {
    let (w, h) = (src.width, src.height);
    let radius = (kernel.len() - 1) / 2;
    let mut out = Plane::zeros(w, h);
    out.data
        .par_chunks_mut(w)
        .enumerate()
        .with_min_len(PAR_MIN_ROWS)
        .for_each(|(y, row)| {
        for (ki, &kv) in kernel.iter().enumerate() {
            let sy = (y as isize + ki as isize - radius as isize).clamp(0, h as isize - 1) as usize;
            let src_row = &src.data[sy * w..(sy + 1) * w];
            for (o, &s) in row.iter_mut().zip(src_row) {
                *o += kv * s;
            }
        }
    });
    out
}

/// Bilinear resize using the pixel-center mapping
/// `src = (dst + 0.5) * (src_size / dst_size) - 0.5`.
pub(crate) fn resize_bilinear(src: &Plane, new_w: usize, new_h: usize) -> Plane {
    let sx = src.width as f32 / new_w as f32;
    let sy = src.height as f32 / new_h as f32;
    let mut out = Plane::zeros(new_w, new_h);
    out.data
        .par_chunks_mut(new_w)
        .enumerate()
        .with_min_len(PAR_MIN_ROWS)
        .for_each(|(y, row)| {
        let src_y = (y as f32 + 0.5) * sy - 0.5;
        for (x, o) in row.iter_mut().enumerate() {
            let src_x = (x as f32 + 0.5) * sx - 0.5;
            *o = src.sample(src_x, src_y);
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(5, 1.1);
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        for i in 0..5 {
            assert_eq!(k[i], k[10 - i]);
        }
    }

    #[test]
    fn blur_preserves_constants() {
        let p = Plane { width: 9, height: 7, data: vec![42.0; 63] };
        let out = gaussian_blur(&p, 3, 1.5);
        for v in out.data {
            assert!((v - 42.0).abs() < 1e-4);
        }
    }

    #[test]
    fn resize_half_preserves_constants_and_size() {
        let p = Plane { width: 16, height: 12, data: vec![7.0; 192] };
        let out = resize_bilinear(&p, 8, 6);
        assert_eq!((out.width, out.height), (8, 6));
        assert!(out.data.iter().all(|&v| (v - 7.0).abs() < 1e-5));
    }

    #[test]
    fn sample_interpolates_linearly() {
        let p = Plane { width: 2, height: 1, data: vec![0.0, 10.0] };
        assert!((p.sample(0.25, 0.0) - 2.5).abs() < 1e-6);
        assert!((p.sample(1.0, 0.0) - 10.0).abs() < 1e-6);
        // Clamped outside.
        assert!((p.sample(-3.0, 0.0) - 0.0).abs() < 1e-6);
        assert!((p.sample(5.0, 0.0) - 10.0).abs() < 1e-6);
    }
}
