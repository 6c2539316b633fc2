//! Temporal mask stabilization and application.
//!
//! Per-frame segmentation masks jitter at the zone outlines, so the
//! pipeline intersects the masks of the most recent frames (default 10,
//! including the current one) before applying the result. During warm-up
//! the intersection runs over however many masks have been seen, which
//! keeps frame timestamps aligned from the first frame.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::imagery::{Frame, Mask};

/// Default number of masks intersected by the temporal window.
pub const DEFAULT_MASK_WINDOW: usize = 10;

/// Default luminance-delta threshold of the fallback segmenter.
pub const DEFAULT_FALLBACK_THRESHOLD: u8 = 8;

/// Default dilation radius (pixels) of the fallback segmenter.
pub const DEFAULT_FALLBACK_DILATION: usize = 5;

/// Rolling window over the most recent masks; the oldest is evicted first.
/// Single-owner sequential state; produced masks are immutable.
#[derive(Debug, Clone)]
pub struct TemporalMaskWindow {
    capacity: usize,
    buffer: VecDeque<Mask>,
}

impl TemporalMaskWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "window capacity must be at least 1");
        TemporalMaskWindow { capacity, buffer: VecDeque::with_capacity(capacity) }
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Pushes `mask` (evicting the oldest when full) and returns the
    /// bitwise AND of every buffered mask, including the new one. The
    /// first push establishes the window's dimensions.
    pub fn push_and_intersect(&mut self, mask: Mask) -> Result<Mask> {
        if let Some(first) = self.buffer.front() {
            if (first.width, first.height) != (mask.width, mask.height) {
                return Err(Error::dims(
                    "mask window",
                    (first.width, first.height),
                    (mask.width, mask.height),
                ));
            }
        }
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(mask);

        let mut bits = self.buffer.back().unwrap().bits.clone();
        for m in self.buffer.iter().take(self.buffer.len() - 1) {
            for (b, &m) in bits.iter_mut().zip(&m.bits) {
                *b &= m;
            }
        }
        let back = self.buffer.back().unwrap();
        Ok(Mask { width: back.width, height: back.height, bits })
    }
}

/// Keeps frame pixels where the mask is true, blacks out the rest.
pub fn apply_mask(frame: &Frame, mask: &Mask) -> Result<Frame> {
    if (frame.width, frame.height) != (mask.width, mask.height) {
        return Err(Error::dims(
            "apply_mask",
            (frame.width, frame.height),
            (mask.width, mask.height),
        ));
    }
    let pixels = frame
        .pixels
        .iter()
        .zip(&mask.bits)
        .map(|(&p, &b)| if b { p } else { 0 })
        .collect();
    Ok(Frame { pixels, ..frame.clone() })
}

/// Motion-energy segmenter used when no mask files are supplied: marks
/// pixels whose luminance changed by at least `threshold` between the two
/// frames, then dilates with a square structuring element of radius
/// `dilation`.
pub fn fallback_segment(
    prev: &Frame,
    curr: &Frame,
    threshold: u8,
    dilation: usize,
) -> Result<Mask> {
    if (prev.width, prev.height) != (curr.width, curr.height) {
        return Err(Error::dims(
            "fallback_segment",
            (prev.width, prev.height),
            (curr.width, curr.height),
        ));
    }
    if threshold == 0 {
        return Err(Error::InvalidParam("fallback threshold must be in [1, 255]".into()));
    }
    let (w, h) = (curr.width, curr.height);
    let moving: Vec<bool> = prev
        .pixels
        .iter()
        .zip(&curr.pixels)
        .map(|(&a, &b)| a.abs_diff(b) >= threshold)
        .collect();
    if dilation == 0 {
        return Mask::new(w, h, moving);
    }
    let mut bits = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if moving[y * w + x] {
                let y0 = y.saturating_sub(dilation);
                let y1 = (y + dilation).min(h - 1);
                let x0 = x.saturating_sub(dilation);
                let x1 = (x + dilation).min(w - 1);
                for yy in y0..=y1 {
                    bits[yy * w + x0..=yy * w + x1].fill(true);
                }
            }
        }
    }
    Mask::new(w, h, bits)
}
