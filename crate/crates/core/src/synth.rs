//! Synthetic ground-truth generator: frame/mask sequences containing a
//! vertically oscillating textured band at a prescribed (possibly
//! time-varying) breath rate, plus the matching analytic reference trace.
//!
//! Everything is driven by [`SplitMix64`], a fixed PRNG specified by its
//! update equations, so identical scenarios reproduce bit-identical
//! frames on any implementation:
//!
//! ```text
//! state += 0x9E3779B97F4A7C15
//! z = state
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! output = z ^ (z >> 31)
//! ```
//!
//! Textures are uniform random luminance smoothed by a 5x5 box blur and
//! contrast-stretched to `[32, 224]`, which guarantees gradient-rich
//! content for the flow estimator.

use serde::{Deserialize, Serialize};

use crate::dsp::Signal;
use crate::error::{Error, Result};
use crate::imagery::{Frame, Mask};

/// Deterministic 64-bit generator (splitmix64).
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Standard normal via Box-Muller; consumes two uniforms per call.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// One piecewise-constant segment of the breath-rate profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrSegment {
    /// Segment start, seconds from recording start.
    pub start_s: f64,
    /// Rate over the segment, respirations per minute.
    pub rpm: f64,
}

/// Optional horizontally oscillating band that exercises the direction
/// filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub amplitude_px: f64,
    pub frequency_hz: f64,
}

/// Full description of a synthetic recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthScenario {
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    pub duration_s: f64,
    /// Piecewise-constant rate profile; the first segment must start at 0.
    pub br_profile: Vec<BrSegment>,
    /// Peak vertical chest displacement, pixels.
    pub motion_amplitude: f64,
    pub texture_seed: u64,
    #[serde(default)]
    pub distractor: Option<Distractor>,
    #[serde(default)]
    pub noise_sigma: f64,
}

impl SynthScenario {
    pub fn validate(&self) -> Result<()> {
        if self.width < 32 || self.height < 32 {
            return Err(Error::Scenario("frame size must be at least 32x32".into()));
        }
        if !(self.fps > 0.0) {
            return Err(Error::Scenario("fps must be positive".into()));
        }
        if self.duration_s < 60.0 {
            return Err(Error::Scenario(format!(
                "duration {} s is below the 60 s minimum usable recording length",
                self.duration_s
            )));
        }
        if self.br_profile.is_empty() {
            return Err(Error::Scenario("br_profile must have at least one segment".into()));
        }
        if self.br_profile[0].start_s != 0.0 {
            return Err(Error::Scenario("first br_profile segment must start at 0".into()));
        }
        for w in self.br_profile.windows(2) {
            if w[1].start_s <= w[0].start_s {
                return Err(Error::Scenario("br_profile segments must have increasing starts".into()));
            }
        }
        for seg in &self.br_profile {
            if !(5.0..=40.0).contains(&seg.rpm) {
                return Err(Error::Scenario(format!(
                    "br_profile rate {} rpm outside [5, 40]",
                    seg.rpm
                )));
            }
        }
        if !(self.motion_amplitude >= 0.0) || !self.motion_amplitude.is_finite() {
            return Err(Error::Scenario("motion amplitude must be finite and >= 0".into()));
        }
        if self.motion_amplitude > self.height as f64 / 8.0 {
            return Err(Error::Scenario("motion amplitude too large for the frame".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Scenario("noise sigma must be >= 0".into()));
        }
        if let Some(d) = &self.distractor {
            if !(d.amplitude_px >= 0.0) || !(d.frequency_hz > 0.0) {
                return Err(Error::Scenario("invalid distractor parameters".into()));
            }
        }
        Ok(())
    }

    /// Rate at time `t`, per the piecewise-constant profile.
    pub fn rpm_at(&self, t: f64) -> f64 {
        let mut rpm = self.br_profile[0].rpm;
        for seg in &self.br_profile {
            if t >= seg.start_s {
                rpm = seg.rpm;
            }
        }
        rpm
    }

    /// Oscillation phase at time `t`: the integral of `2 pi rpm(t) / 60`.
    pub fn phase_at(&self, t: f64) -> f64 {
        let mut phase = 0.0;
        for (i, seg) in self.br_profile.iter().enumerate() {
            let seg_end = self
                .br_profile
                .get(i + 1)
                .map(|n| n.start_s)
                .unwrap_or(f64::INFINITY);
            if t <= seg.start_s {
                break;
            }
            let span = (t.min(seg_end) - seg.start_s).max(0.0);
            phase += 2.0 * std::f64::consts::PI * seg.rpm / 60.0 * span;
        }
        phase
    }
}

/// Generated dataset: frames, per-frame masks and the analytic
/// displacement reference.
pub struct SynthDataset {
    pub frames: Vec<Frame>,
    pub masks: Vec<Mask>,
    pub reference: Signal,
}

/// Smoothed random texture as a full frame (handy for flow oracles).
pub fn texture_frame(width: usize, height: usize, seed: u64) -> Frame {
    let data = texture(width, height, &mut SplitMix64::new(seed));
    let pixels = data.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
    Frame::new(width, height, pixels, 0, 30.0).unwrap()
}

/// Random luminance, 5x5 box blur (replicated edges), then a linear
/// stretch to [32, 224].
fn texture(width: usize, height: usize, rng: &mut SplitMix64) -> Vec<f32> {
    let raw: Vec<f32> = (0..width * height)
        .map(|_| (rng.next_u64() >> 56) as f32)
        .collect();
    let mut blurred = vec![0.0f32; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0f32;
            for dy in -2isize..=2 {
                for dx in -2isize..=2 {
                    let sx = (x as isize + dx).clamp(0, width as isize - 1) as usize;
                    let sy = (y as isize + dy).clamp(0, height as isize - 1) as usize;
                    acc += raw[sy * width + sx];
                }
            }
            blurred[y * width + x] = acc / 25.0;
        }
    }
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for &v in &blurred {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = (hi - lo).max(1e-6);
    for v in blurred.iter_mut() {
        *v = 32.0 + (*v - lo) / span * (224.0 - 32.0);
    }
    blurred
}

/// Rows occupied by the breathing band: the middle half of the frame.
fn band_rows(height: usize) -> (usize, usize) {
    (height / 4, height - height / 4)
}

/// Rows occupied by the distractor band: a strip above the breathing band.
fn distractor_rows(height: usize) -> (usize, usize) {
    (2, height / 4 - 2)
}

/// Renders the scenario. The breathing band shows a tall source texture
/// scrolled vertically by `amplitude * sin(phase(t))`, sampled bilinearly;
/// the optional distractor band scrolls horizontally at its own frequency.
/// Masks cover the band rows (and distractor rows). The reference trace is
/// the analytic displacement signal at frame times.
pub fn generate(scenario: &SynthScenario) -> Result<SynthDataset> {
    scenario.validate()?;
    let (w, h) = (scenario.width, scenario.height);
    let n_frames = (scenario.duration_s * scenario.fps).round() as usize;
    let amp = scenario.motion_amplitude;
    let margin = amp.ceil() as usize + 2;

    let mut rng = SplitMix64::new(scenario.texture_seed);
    let (band_y0, band_y1) = band_rows(h);
    let band_h = band_y1 - band_y0;
    let band_src = texture(w, band_h + 2 * margin, &mut rng);
    let band_src_h = band_h + 2 * margin;

    let distractor = scenario.distractor.as_ref();
    let (dis_y0, dis_y1) = distractor_rows(h);
    let (dis_src, dis_margin) = match distractor {
        Some(d) if dis_y1 > dis_y0 => {
            let m = d.amplitude_px.ceil() as usize + 2;
            (Some(texture(w + 2 * m, dis_y1 - dis_y0, &mut rng)), m)
        }
        _ => (None, 0),
    };

    let mut mask_bits = vec![false; w * h];
    for y in band_y0..band_y1 {
        mask_bits[y * w..(y + 1) * w].fill(true);
    }
    if dis_src.is_some() {
        for y in dis_y0..dis_y1 {
            mask_bits[y * w..(y + 1) * w].fill(true);
        }
    }
    let mask = Mask::new(w, h, mask_bits)?;

    let mut frames = Vec::with_capacity(n_frames);
    let mut reference = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let t = i as f64 / scenario.fps;
        let offset = amp * scenario.phase_at(t).sin();
        reference.push(offset);

        let mut pixels = vec![16.0f32; w * h];
        // Breathing band: sample the source 'offset' pixels up, so the
        // content appears to move down as offset grows.
        for y in band_y0..band_y1 {
            let src_y = (y - band_y0 + margin) as f64 - offset;
            let y0 = src_y.floor();
            let fy = (src_y - y0) as f32;
            let r0 = (y0 as isize).clamp(0, band_src_h as isize - 1) as usize;
            let r1 = (r0 + 1).min(band_src_h - 1);
            for x in 0..w {
                let a = band_src[r0 * w + x];
                let b = band_src[r1 * w + x];
                pixels[y * w + x] = a + (b - a) * fy;
            }
        }
        if let (Some(src), Some(d)) = (&dis_src, distractor) {
            let dx = d.amplitude_px * (2.0 * std::f64::consts::PI * d.frequency_hz * t).sin();
            let src_w = w + 2 * dis_margin;
            for y in dis_y0..dis_y1 {
                let row = (y - dis_y0) * src_w;
                for x in 0..w {
                    let src_x = (x + dis_margin) as f64 - dx;
                    let x0 = src_x.floor();
                    let fx = (src_x - x0) as f32;
                    let c0 = (x0 as isize).clamp(0, src_w as isize - 1) as usize;
                    let c1 = (c0 + 1).min(src_w - 1);
                    let a = src[row + c0];
                    let b = src[row + c1];
                    pixels[y * w + x] = a + (b - a) * fx;
                }
            }
        }

        let bytes: Vec<u8> = if scenario.noise_sigma > 0.0 {
            pixels
                .iter()
                .map(|&v| {
                    let noisy = v as f64 + scenario.noise_sigma * rng.next_gaussian();
                    noisy.round().clamp(0.0, 255.0) as u8
                })
                .collect()
        } else {
            pixels.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect()
        };
        frames.push(Frame::new(w, h, bytes, i, scenario.fps)?);
    }

    let masks = vec![mask; n_frames];
    let reference = Signal::new(reference, scenario.fps, 0.0)?;
    Ok(SynthDataset { frames, masks, reference })
}
