//! Signal conditioning: moving-average smoothing, zero-phase Butterworth
//! lowpass, sliding-window extrema envelopes, and envelope normalization
//! to `[0, 1]`.
//!
//! All operations are pure functions of a [`Signal`]. The IIR filter is
//! designed digitally by bilinear transform with frequency prewarping and
//! applied forward then backward, so the passband keeps zero net phase and
//! peak times stay aligned with reference timing.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default smoothing window width in seconds.
pub const DEFAULT_SMOOTH_WIDTH_S: f64 = 0.65;

/// Default lowpass cutoff in Hz.
pub const DEFAULT_CUTOFF_HZ: f64 = 0.496;

/// Default Butterworth order (applied twice, forward and backward).
pub const DEFAULT_BUTTERWORTH_ORDER: usize = 4;

/// Default sliding-extrema window in seconds.
pub const DEFAULT_EXTREMA_WINDOW_S: f64 = 6.0;

/// Envelope gap below which normalization outputs the midpoint value.
pub const ENVELOPE_EPSILON: f64 = 1e-9;

/// Uniformly sampled real-valued time series.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    /// Time of the first sample, seconds.
    pub t0: f64,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: f64, t0: f64) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(Error::InvalidParam(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidParam("signal contains non-finite samples".into()));
        }
        Ok(Signal { samples, sample_rate, t0 })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    #[inline]
    pub fn time_at(&self, index: usize) -> f64 {
        self.t0 + index as f64 / self.sample_rate
    }

    pub fn duration_s(&self) -> f64 {
        if self.samples.len() < 2 {
            0.0
        } else {
            (self.samples.len() - 1) as f64 / self.sample_rate
        }
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|s| s.is_finite())
    }
}

// ---------------------------------------------------------------------------
// Moving average
// ---------------------------------------------------------------------------

/// Window length in samples for a `width_s`-second centered average:
/// nearest odd integer to `width_s * sample_rate`, minimum 1.
pub fn moving_average_window_len(width_s: f64, sample_rate: f64) -> usize {
    let n = width_s * sample_rate;
    let half = ((n - 1.0) / 2.0).round().max(0.0) as usize;
    2 * half + 1
}

/// Centered moving average. Edges shrink the window to the available
/// samples, so output length, sample rate and t0 are unchanged.
pub fn moving_average(signal: &Signal, width_s: f64) -> Signal {
    assert!(width_s > 0.0, "moving average width must be positive");
    let w = moving_average_window_len(width_s, signal.sample_rate);
    let half = (w - 1) / 2;
    let n = signal.samples.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n.saturating_sub(1));
        let window = &signal.samples[lo..=hi];
        out.push(window.iter().sum::<f64>() / window.len() as f64);
    }
    Signal { samples: out, sample_rate: signal.sample_rate, t0: signal.t0 }
}

// ---------------------------------------------------------------------------
// Butterworth lowpass
// ---------------------------------------------------------------------------

/// Digital Butterworth lowpass designed by bilinear transform with
/// frequency prewarping. `b` and `a` are the transfer-function
/// coefficients in ascending powers of z^-1, with `a[0] == 1`.
#[derive(Debug, Clone)]
pub struct Butterworth {
    pub b: Vec<f64>,
    pub a: Vec<f64>,
    pub order: usize,
    pub cutoff_hz: f64,
    pub sample_rate: f64,
}

impl Butterworth {
    pub fn lowpass(order: usize, cutoff_hz: f64, sample_rate: f64) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidParam("filter order must be at least 1".into()));
        }
        if !(cutoff_hz > 0.0) || cutoff_hz >= sample_rate / 2.0 {
            return Err(Error::CutoffOutOfRange { cutoff_hz, nyquist_hz: sample_rate / 2.0 });
        }
        // Prewarped analog cutoff so the digital response hits -3 dB at
        // exactly cutoff_hz after the bilinear transform.
        let fs2 = 2.0 * sample_rate;
        let warped = fs2 * (PI * cutoff_hz / sample_rate).tan();

        // Analog prototype poles on the Butterworth circle of radius
        // `warped`, then mapped through s -> 2 fs (z - 1)/(z + 1).
        let n = order;
        let digital_poles: Vec<Complex64> = (0..n)
            .map(|k| {
                let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
                let p = warped * Complex64::new(theta.cos(), theta.sin());
                (Complex64::new(fs2, 0.0) + p) / (Complex64::new(fs2, 0.0) - p)
            })
            .collect();

        // Denominator from the pole product; conjugate pairs make the
        // coefficients real up to rounding.
        let a: Vec<f64> = poly_from_roots(&digital_poles).iter().map(|c| c.re).collect();

        // All n zeros sit at z = -1; the numerator is a scaled binomial
        // row, with the gain fixed so that H(1) = 1 exactly.
        let binom = binomial_row(n);
        let a_sum: f64 = a.iter().sum();
        let gain = a_sum / 2f64.powi(n as i32);
        let b: Vec<f64> = binom.iter().map(|&c| c * gain).collect();

        Ok(Butterworth { b, a, order, cutoff_hz, sample_rate })
    }

    /// Single-pass magnitude response at `freq_hz`, evaluated on the unit
    /// circle.
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.magnitude_at_theta(2.0 * PI * freq_hz / self.sample_rate)
    }

    /// Single-pass magnitude of the underlying analog prototype at
    /// `freq_hz`, read off the digital coefficients through the bilinear
    /// frequency map. At the cutoff this equals the digital response; away
    /// from it this undoes the tangent warping, so the classic analytic
    /// form 1/sqrt(1 + (f/fc)^(2n)) applies.
    pub fn analog_magnitude(&self, freq_hz: f64) -> f64 {
        let warped_cutoff = (PI * self.cutoff_hz / self.sample_rate).tan();
        let omega = warped_cutoff * freq_hz / self.cutoff_hz;
        self.magnitude_at_theta(2.0 * omega.atan())
    }

    fn magnitude_at_theta(&self, theta: f64) -> f64 {
        let z = Complex64::new(theta.cos(), -theta.sin()); // z^-1
        let eval = |coeffs: &[f64]| -> Complex64 {
            // Horner in z^-1.
            coeffs
                .iter()
                .rev()
                .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
        };
        (eval(&self.b) / eval(&self.a)).norm()
    }

    /// One causal pass, direct form II transposed, with initial state
    /// `zi * x_scale`.
    fn filter_pass(&self, x: &[f64], zi: &[f64], x_scale: f64) -> Vec<f64> {
        let n = self.order;
        let mut z: Vec<f64> = zi.iter().map(|v| v * x_scale).collect();
        let mut y = Vec::with_capacity(x.len());
        for &xi in x {
            let yi = self.b[0] * xi + z[0];
            for k in 0..n - 1 {
                z[k] = self.b[k + 1] * xi + z[k + 1] - self.a[k + 1] * yi;
            }
            z[n - 1] = self.b[n] * xi - self.a[n] * yi;
            y.push(yi);
        }
        y
    }

    /// Steady-state filter state for a unit-step input. Scaling this by
    /// the first sample removes the DC startup transient entirely.
    fn steady_state_zi(&self) -> Vec<f64> {
        let n = self.order;
        let mut zi = vec![0.0; n];
        let mut acc = 0.0;
        for k in (0..n).rev() {
            acc += self.b[k + 1] - self.a[k + 1];
            zi[k] = acc;
        }
        zi
    }

    /// Zero-phase two-pass filtering (forward then backward) with odd
    /// reflective padding of `3 * order` samples on each end.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        if x.len() < 2 {
            return x.to_vec();
        }
        let pad = (3 * self.order).min(x.len() - 1);
        let n = x.len();
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for k in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[k]);
        }
        ext.extend_from_slice(x);
        for k in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - k]);
        }

        let zi = self.steady_state_zi();
        let mut y = self.filter_pass(&ext, &zi, ext[0]);
        y.reverse();
        let first = y[0];
        let mut y = self.filter_pass(&y, &zi, first);
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

/// Expands a monic polynomial from its roots; result has length
/// `roots.len() + 1`, leading coefficient first.
fn poly_from_roots(roots: &[Complex64]) -> Vec<Complex64> {
    let mut poly = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); poly.len() + 1];
        for (i, &c) in poly.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * r;
        }
        poly = next;
    }
    poly
}

fn binomial_row(n: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    for _ in 0..n {
        let mut next = vec![1.0];
        for w in row.windows(2) {
            next.push(w[0] + w[1]);
        }
        next.push(1.0);
        row = next;
    }
    row
}

/// Applies the zero-phase Butterworth lowpass to a signal.
pub fn butterworth_lowpass(signal: &Signal, cutoff_hz: f64, order: usize) -> Result<Signal> {
    let filter = Butterworth::lowpass(order, cutoff_hz, signal.sample_rate)?;
    Ok(Signal {
        samples: filter.filtfilt(&signal.samples),
        sample_rate: signal.sample_rate,
        t0: signal.t0,
    })
}

// ---------------------------------------------------------------------------
// Envelopes
// ---------------------------------------------------------------------------

/// Piecewise-linear curve over strictly increasing vertex times, evaluated
/// by linear interpolation and constant-extrapolated beyond the ends.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Polyline {
    pub fn eval(&self, t: f64) -> f64 {
        match self.times.binary_search_by(|probe| probe.partial_cmp(&t).unwrap()) {
            Ok(i) => self.values[i],
            Err(0) => self.values[0],
            Err(i) if i == self.times.len() => *self.values.last().unwrap(),
            Err(i) => {
                let (t0, t1) = (self.times[i - 1], self.times[i]);
                let (v0, v1) = (self.values[i - 1], self.values[i]);
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
        }
    }
}

/// Upper and lower polyline envelopes built from sliding-window extrema.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub upper: Polyline,
    pub lower: Polyline,
}

/// Locates envelope vertices: a sample is an upper vertex iff it attains
/// the maximum of its centered window of `round(window_s * sample_rate)`
/// samples and no earlier sample in that window ties with it; lower
/// vertices use minima analogously. The first and last samples are
/// appended to either polyline when it would not span the signal.
pub fn sliding_extrema(signal: &Signal, window_s: f64) -> Result<Envelope> {
    if !(window_s > 0.0) {
        return Err(Error::InvalidParam("extrema window must be positive".into()));
    }
    let n = signal.samples.len();
    if n < 2 {
        return Err(Error::InvalidParam("sliding_extrema needs at least 2 samples".into()));
    }
    let len = ((window_s * signal.sample_rate).round() as usize).max(1);
    let half_lo = (len - 1) / 2;
    let half_hi = len / 2;

    let x = &signal.samples;
    let mut upper_idx = Vec::new();
    let mut lower_idx = Vec::new();
    for i in 0..n {
        let lo = i.saturating_sub(half_lo);
        let hi = (i + half_hi).min(n - 1);
        let mut max_at = lo;
        let mut min_at = lo;
        for j in lo + 1..=hi {
            if x[j] > x[max_at] {
                max_at = j;
            }
            if x[j] < x[min_at] {
                min_at = j;
            }
        }
        if max_at == i {
            upper_idx.push(i);
        }
        if min_at == i {
            lower_idx.push(i);
        }
    }

    let build = |mut idx: Vec<usize>| -> Polyline {
        if idx.first() != Some(&0) {
            idx.insert(0, 0);
        }
        if idx.last() != Some(&(n - 1)) {
            idx.push(n - 1);
        }
        Polyline {
            times: idx.iter().map(|&i| signal.time_at(i)).collect(),
            values: idx.iter().map(|&i| x[i]).collect(),
        }
    };
    Ok(Envelope { upper: build(upper_idx), lower: build(lower_idx) })
}

/// Rescales the signal to `[0, 1]` between the envelopes: per sample
/// `(s - lower(t)) / (upper(t) - lower(t))`, clamped. Where the envelope
/// gap falls below [`ENVELOPE_EPSILON`] the output is 0.5.
pub fn normalize(signal: &Signal, envelope: &Envelope) -> Signal {
    let samples = signal
        .samples
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let t = signal.time_at(i);
            let lo = envelope.lower.eval(t);
            let hi = envelope.upper.eval(t);
            let gap = hi - lo;
            if gap < ENVELOPE_EPSILON {
                0.5
            } else {
                ((s - lo) / gap).clamp(0.0, 1.0)
            }
        })
        .collect();
    Signal { samples, sample_rate: signal.sample_rate, t0: signal.t0 }
}

/// Writes a `time_s,value` CSV for plotting any stage of the chain.
pub fn write_signal_csv(path: &Path, signal: &Signal) -> Result<()> {
    let mut buf = String::from("time_s,value\n");
    for (i, &v) in signal.samples.iter().enumerate() {
        buf.push_str(&format!("{:.6},{:.6}\n", signal.time_at(i), v));
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Writes a polyline (envelope branch) as a `time_s,value` CSV.
pub fn write_polyline_csv(path: &Path, line: &Polyline) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "time_s,value").map_err(|e| Error::io(path, e))?;
    for (t, v) in line.times.iter().zip(&line.values) {
        writeln!(w, "{t:.6},{v:.6}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
