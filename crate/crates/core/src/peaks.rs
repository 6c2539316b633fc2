//! Peak detection with height/prominence/distance constraints and the
//! conversion of inter-peak intervals to a breath-rate series.
//!
//! The detector reproduces the de facto semantics of the peak finder the
//! rest of the ecosystem standardizes on: candidates are strict local
//! maxima (plateaus yield the floor of their midpoint), filtered first by
//! height, then by prominence, then by a greedy distance pass that keeps
//! taller peaks first (ties resolved toward the higher index).

use std::fs;
use std::path::Path;

use crate::dsp::Signal;
use crate::error::{Error, Result};

/// Default minimum peak height in normalized units.
pub const DEFAULT_MIN_HEIGHT: f64 = 0.496;

/// Default minimum peak prominence in normalized units.
pub const DEFAULT_MIN_PROMINENCE: f64 = 0.1848;

/// Default minimum distance between kept peaks, seconds.
pub const DEFAULT_MIN_DISTANCE_S: f64 = 1.5;

/// Default window for averaging inter-peak intervals, seconds.
pub const DEFAULT_BR_WINDOW_S: f64 = 60.0;

/// Peak acceptance thresholds.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PeakConfig {
    pub min_height: f64,
    pub min_prominence: f64,
    pub min_distance_s: f64,
}

impl Default for PeakConfig {
    fn default() -> Self {
        PeakConfig {
            min_height: DEFAULT_MIN_HEIGHT,
            min_prominence: DEFAULT_MIN_PROMINENCE,
            min_distance_s: DEFAULT_MIN_DISTANCE_S,
        }
    }
}

/// Breath rate over time, defined at peak times from the second peak
/// onward and step-interpolated between them.
#[derive(Debug, Clone, PartialEq)]
pub struct BrSeries {
    /// Seconds; strictly increasing.
    pub times: Vec<f64>,
    /// Respirations per minute, one per entry of `times`.
    pub br: Vec<f64>,
    /// Averaging window used to build the series, seconds.
    pub window_s: f64,
}

impl BrSeries {
    /// Step interpolation: the value of the latest time at or before `t`,
    /// clamped to the first value before the series starts.
    pub fn value_at(&self, t: f64) -> f64 {
        match self.times.binary_search_by(|probe| probe.partial_cmp(&t).unwrap()) {
            Ok(i) => self.br[i],
            Err(0) => self.br[0],
            Err(i) => self.br[i - 1],
        }
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn mean_br(&self) -> f64 {
        self.br.iter().sum::<f64>() / self.br.len() as f64
    }
}

/// Indices of detected peaks, ascending.
pub fn find_peaks(signal: &Signal, config: &PeakConfig) -> Vec<usize> {
    let x = &signal.samples;
    let n = x.len();
    if n < 3 {
        return Vec::new();
    }

    // Local maxima; a plateau strictly above both flanks yields the floor
    // of its midpoint.
    let mut candidates = Vec::new();
    let mut i = 1;
    while i < n - 1 {
        if x[i] > x[i - 1] {
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < n && x[j + 1] < x[i] {
                candidates.push((i + j) / 2);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }

    candidates.retain(|&p| x[p] >= config.min_height);
    candidates.retain(|&p| prominence(x, p) >= config.min_prominence);

    // Distance pruning: taller peaks claim their neighborhood first.
    let min_dist = config.min_distance_s * signal.sample_rate;
    let mut order = candidates.clone();
    order.sort_by(|&a, &b| {
        x[b].partial_cmp(&x[a]).unwrap().then_with(|| b.cmp(&a))
    });
    let mut kept: Vec<usize> = Vec::with_capacity(order.len());
    for p in order {
        if kept
            .iter()
            .all(|&q| (p.abs_diff(q)) as f64 >= min_dist)
        {
            kept.push(p);
        }
    }
    kept.sort_unstable();
    kept
}

/// Height of `x[peak]` above the higher of the two lowest valleys on each
/// side, searching outward to the nearest strictly higher sample or the
/// signal edge.
pub fn prominence(x: &[f64], peak: usize) -> f64 {
    let mut left_min = x[peak];
    let mut i = peak;
    while i > 0 && x[i - 1] <= x[peak] {
        i -= 1;
        if x[i] < left_min {
            left_min = x[i];
        }
    }
    let mut right_min = x[peak];
    let mut i = peak;
    while i + 1 < x.len() && x[i + 1] <= x[peak] {
        i += 1;
        if x[i] < right_min {
            right_min = x[i];
        }
    }
    x[peak] - left_min.max(right_min)
}

/// Times (seconds) of the given peak indices.
pub fn peak_times(signal: &Signal, indices: &[usize]) -> Vec<f64> {
    indices.iter().map(|&i| signal.time_at(i)).collect()
}

/// Converts peak times to a breath-rate series: at each peak from the
/// second onward, the intervals whose ending peak lies within the trailing
/// `window_s` seconds are averaged, and `br = 60 / mean`.
pub fn intervals_to_br(peak_times: &[f64], window_s: f64) -> Result<BrSeries> {
    if peak_times.len() < 2 {
        return Err(Error::InsufficientPeaks { found: peak_times.len() });
    }
    if peak_times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParam("peak times must be strictly increasing".into()));
    }
    if !(window_s > 0.0) {
        return Err(Error::InvalidParam("BR window must be positive".into()));
    }
    let mut times = Vec::with_capacity(peak_times.len() - 1);
    let mut br = Vec::with_capacity(peak_times.len() - 1);
    for k in 1..peak_times.len() {
        let t = peak_times[k];
        let mut sum = 0.0;
        let mut count = 0usize;
        for j in 1..=k {
            if peak_times[j] > t - window_s {
                sum += peak_times[j] - peak_times[j - 1];
                count += 1;
            }
        }
        times.push(t);
        br.push(60.0 / (sum / count as f64));
    }
    Ok(BrSeries { times, br, window_s })
}

/// Writes a `time_s,br_rpm` CSV.
pub fn write_br_csv(path: &Path, series: &BrSeries) -> Result<()> {
    let mut buf = String::from("time_s,br_rpm\n");
    for (t, v) in series.times.iter().zip(&series.br) {
        buf.push_str(&format!("{t:.6},{v:.6}\n"));
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(samples: Vec<f64>, rate: f64) -> Signal {
        Signal::new(samples, rate, 0.0).unwrap()
    }

    #[test]
    fn two_spikes_both_found() {
        let s = sig(vec![0.0, 1.0, 0.0, 2.0, 0.0], 1.0);
        let cfg = PeakConfig { min_height: 0.5, min_prominence: 0.1, min_distance_s: 1.0 };
        assert_eq!(find_peaks(&s, &cfg), vec![1, 3]);
    }

    #[test]
    fn shifted_sinusoid_counts_one_peak_per_period() {
        let rate = 30.0;
        let n = (60.0 * rate) as usize;
        let samples: Vec<f64> = (0..n)
            .map(|i| 0.5 + 0.5 * (2.0 * std::f64::consts::PI * 0.25 * i as f64 / rate).sin())
            .collect();
        let peaks = find_peaks(&sig(samples, rate), &PeakConfig::default());
        assert_eq!(peaks.len(), 15);
        for w in peaks.windows(2) {
            assert_eq!(w[1] - w[0], 120); // 4 s at 30 Hz
        }
    }

    #[test]
    fn constant_signal_has_no_peaks() {
        let s = sig(vec![1.0; 100], 10.0);
        assert!(find_peaks(&s, &PeakConfig::default()).is_empty());
    }

    #[test]
    fn plateau_yields_floor_midpoint() {
        let cfg = PeakConfig { min_height: 0.0, min_prominence: 0.0, min_distance_s: 0.0 };
        let s = sig(vec![0.0, 1.0, 1.0, 0.0], 1.0);
        assert_eq!(find_peaks(&s, &cfg), vec![1]);
        let s = sig(vec![0.0, 1.0, 1.0, 1.0, 0.0], 1.0);
        assert_eq!(find_peaks(&s, &cfg), vec![2]);
    }

    #[test]
    fn edge_plateaus_are_not_peaks() {
        let cfg = PeakConfig { min_height: 0.0, min_prominence: 0.0, min_distance_s: 0.0 };
        assert!(find_peaks(&sig(vec![1.0, 1.0, 0.0, 0.5], 1.0), &cfg).is_empty());
        assert_eq!(find_peaks(&sig(vec![0.0, 0.4, 0.2, 1.0, 1.0], 1.0), &cfg), vec![1]);
    }

    #[test]
    fn prominence_uses_the_higher_valley() {
        // Peak at 4 between a deep left valley and a shallow right valley
        // that ends at a higher maximum.
        let x = vec![0.0, 3.0, 0.5, 2.0, 1.5, 4.0, 0.0];
        // For peak index 3 (value 2): left walk stops at x[1]=3 (>2), lowest
        // passed is 0.5; right walk stops at x[5]=4, lowest passed is 1.5.
        assert_eq!(prominence(&x, 3), 2.0 - 1.5);
    }

    #[test]
    fn distance_keeps_the_taller_of_close_peaks() {
        let s = sig(vec![0.0, 1.0, 0.0, 2.0, 0.0], 1.0);
        let cfg = PeakConfig { min_height: 0.0, min_prominence: 0.0, min_distance_s: 3.0 };
        assert_eq!(find_peaks(&s, &cfg), vec![3]);
    }

    #[test]
    fn br_constant_spacing() {
        let times: Vec<f64> = (0..40).map(|i| 3.0 * i as f64).collect();
        let series = intervals_to_br(&times, 60.0).unwrap();
        assert!(series.br.iter().all(|&v| (v - 20.0).abs() < 1e-12));
        let times: Vec<f64> = (0..30).map(|i| 4.0 * i as f64).collect();
        let series = intervals_to_br(&times, 60.0).unwrap();
        assert!(series.br.iter().all(|&v| (v - 15.0).abs() < 1e-12));
    }

    #[test]
    fn br_mixed_intervals_average_within_window() {
        let times = vec![0.0, 3.0, 6.0, 9.0, 14.0];
        let series = intervals_to_br(&times, 60.0).unwrap();
        let last = *series.br.last().unwrap();
        assert!((last - 60.0 / 3.5).abs() < 1e-9, "got {last}");
    }

    #[test]
    fn br_needs_two_peaks() {
        assert!(matches!(
            intervals_to_br(&[5.0], 60.0),
            Err(Error::InsufficientPeaks { found: 1 })
        ));
    }

    #[test]
    fn br_is_shift_invariant() {
        let times = vec![2.0, 5.5, 9.0, 13.0, 16.0, 20.5];
        let a = intervals_to_br(&times, 10.0).unwrap();
        let shifted: Vec<f64> = times.iter().map(|t| t + 1000.0).collect();
        let b = intervals_to_br(&shifted, 10.0).unwrap();
        for (x, y) in a.br.iter().zip(&b.br) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn step_interpolation_holds_the_last_value() {
        let series = BrSeries { times: vec![1.0, 2.0, 4.0], br: vec![10.0, 20.0, 30.0], window_s: 60.0 };
        assert_eq!(series.value_at(0.5), 10.0);
        assert_eq!(series.value_at(1.0), 10.0);
        assert_eq!(series.value_at(1.9), 10.0);
        assert_eq!(series.value_at(2.0), 20.0);
        assert_eq!(series.value_at(3.9), 20.0);
        assert_eq!(series.value_at(100.0), 30.0);
    }

    #[test]
    fn distance_floor_caps_the_rate() {
        // Peaks at exactly the 1.5 s floor: BR tops out at 40 rpm.
        let times: Vec<f64> = (0..50).map(|i| 1.5 * i as f64).collect();
        let series = intervals_to_br(&times, 60.0).unwrap();
        assert!(series.br.iter().all(|&v| v <= 40.0 + 1e-12));
    }
}
