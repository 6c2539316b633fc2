//! Reduction of a flow field to one scalar motion sample per frame: the
//! direction filter keeps near-vertical vectors, the survivors are summed
//! into one aggregate vector, and the aggregate's four-quadrant angle
//! becomes the sample.
//!
//! Flow components are in image coordinates (y grows downward), and the
//! angle is taken directly as `atan2(sum_vy, sum_vx)`; relative to a
//! y-up plot the series is mirrored, which leaves peak spacing — and
//! therefore the breath rate — unchanged. When the aggregate is the zero
//! vector the previous angle is carried forward so that an empty mask
//! cannot inject a false breath edge.

use std::fs;
use std::path::Path;

use crate::dsp::Signal;
use crate::error::{Error, Result};
use crate::imagery::{FlowField, Mask};

/// Default half-angle about the vertical axis, radians.
pub const DEFAULT_ALPHA_RAD: f64 = 0.52;

/// Direction filter threshold: vectors are kept iff their angle to the
/// vertical axis is within `alpha` of either vertical direction.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DirectionFilterConfig {
    pub alpha: f64,
}

impl Default for DirectionFilterConfig {
    fn default() -> Self {
        DirectionFilterConfig { alpha: DEFAULT_ALPHA_RAD }
    }
}

impl DirectionFilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < std::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidParam(format!(
                "alpha must be in (0, pi/2), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// One scalar motion measurement derived from the flow into a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSample {
    /// Ordinal of the frame the flow leads into.
    pub frame_index: usize,
    pub aggregate_x: f64,
    pub aggregate_y: f64,
    /// Four-quadrant angle in (-pi, pi]; for degenerate samples the
    /// caller stores the carried-forward previous angle here.
    pub angle: f64,
    /// True when the aggregate is the zero vector.
    pub degenerate: bool,
}

/// Zeroes every vector whose angle `beta` to the vertical axis satisfies
/// neither `|beta| < alpha` nor `|beta| > pi - alpha`. The test is
/// evaluated as `|vy| > |v| * cos(alpha)`, which encodes both branches
/// without angle arithmetic; zero vectors always stay zero.
pub fn direction_filter(flow: &FlowField, config: &DirectionFilterConfig) -> FlowField {
    let cos_alpha = config.alpha.cos() as f32;
    let mut out = flow.clone();
    for (vx, vy) in out.vx.iter_mut().zip(out.vy.iter_mut()) {
        let mag = (*vx * *vx + *vy * *vy).sqrt();
        if !(vy.abs() > mag * cos_alpha) {
            *vx = 0.0;
            *vy = 0.0;
        }
    }
    out
}

/// Sums the vectors at mask-true pixels in row-major order. The result is
/// degenerate when the sum is exactly the zero vector (in particular for
/// an all-false mask). The angle field holds the raw `atan2` of the sum;
/// apply [`angle_of`] to impose the degenerate-hold policy.
pub fn aggregate(flow: &FlowField, mask: &Mask, frame_index: usize) -> Result<MotionSample> {
    if (flow.width, flow.height) != (mask.width, mask.height) {
        return Err(Error::dims(
            "aggregate",
            (flow.width, flow.height),
            (mask.width, mask.height),
        ));
    }
    let mut sum_x = 0.0f64;
    let mut sum_y = 0.0f64;
    for ((&vx, &vy), &m) in flow.vx.iter().zip(&flow.vy).zip(&mask.bits) {
        if m {
            sum_x += vx as f64;
            sum_y += vy as f64;
        }
    }
    let degenerate = sum_x == 0.0 && sum_y == 0.0;
    Ok(MotionSample {
        frame_index,
        aggregate_x: sum_x,
        aggregate_y: sum_y,
        angle: if degenerate { 0.0 } else { wrap_angle(sum_y.atan2(sum_x)) },
        degenerate,
    })
}

/// Angle policy: degenerate samples hold the previous angle (0 for a
/// degenerate first frame), everything else keeps its own angle.
pub fn angle_of(sample: &MotionSample, previous_angle: f64) -> f64 {
    if sample.degenerate {
        previous_angle
    } else {
        sample.angle
    }
}

/// Maps atan2 output onto (-pi, pi] by folding the -pi edge case.
#[inline]
fn wrap_angle(a: f64) -> f64 {
    if a <= -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        a
    }
}

/// Builds the angle time series from per-frame samples, applying the
/// degenerate-hold policy in frame order. Sample `i` carries the flow
/// into frame `samples[i].frame_index`, so `t0` is that frame's time.
pub fn angle_series(samples: &mut [MotionSample], fps: f64) -> Signal {
    let mut prev = 0.0;
    for s in samples.iter_mut() {
        let a = angle_of(s, prev);
        s.angle = a;
        prev = a;
    }
    let t0 = samples.first().map(|s| s.frame_index as f64 / fps).unwrap_or(0.0);
    Signal {
        samples: samples.iter().map(|s| s.angle).collect(),
        sample_rate: fps,
        t0,
    }
}

/// Writes the raw angle series as `frame_index,time_s,angle_rad`.
pub fn write_angle_csv(path: &Path, samples: &[MotionSample], fps: f64) -> Result<()> {
    let mut buf = String::from("frame_index,time_s,angle_rad\n");
    for s in samples {
        buf.push_str(&format!(
            "{},{:.6},{:.6}\n",
            s.frame_index,
            s.frame_index as f64 / fps,
            s.angle
        ));
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}
