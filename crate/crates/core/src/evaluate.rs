//! Scoring of a video-derived breath-rate series against reference
//! traces: MAE, bias and RMSD over the overlapping time span, plus
//! reference CSV ingestion and the reference-side processing chain.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::dsp::Signal;
use crate::error::{Error, Result};
use crate::peaks::BrSeries;
use crate::pipeline::{signal_pipeline, PipelineConfig, SensorSelect};

/// Which wearable sensor a raw trace came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorLabel {
    Upper,
    Lower,
}

/// Reference measurement: either a raw sensor signal that still needs the
/// processing chain, or an already-computed BR series.
#[derive(Debug, Clone)]
pub enum ReferenceData {
    RawSignal(Signal),
    BrSeries(BrSeries),
}

#[derive(Debug, Clone)]
pub struct ReferenceTrace {
    pub data: ReferenceData,
    pub sensor: SensorLabel,
}

/// Comparison result between a video BR series and a reference BR series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Mean absolute error, rpm.
    pub mae: f64,
    /// Mean signed error (video minus reference), rpm.
    pub bias: f64,
    /// Root mean square deviation, rpm.
    pub rmsd: f64,
    /// Mean of the video BR over the overlap, rpm.
    pub mean_br: f64,
    /// Overlap duration, seconds.
    pub duration_s: f64,
    /// Number of compared samples.
    pub n_samples: usize,
}

/// Runs a raw reference signal through the same conditioning and peak
/// chain used for video signals.
pub fn process_reference(raw: &Signal, cfg: &PipelineConfig) -> Result<BrSeries> {
    Ok(signal_pipeline(raw, cfg)?.br)
}

/// Resolves a reference trace to a BR series, processing raw traces
/// through the pipeline configuration.
pub fn reference_br(trace: &ReferenceTrace, cfg: &PipelineConfig) -> Result<BrSeries> {
    match &trace.data {
        ReferenceData::RawSignal(raw) => process_reference(raw, cfg),
        ReferenceData::BrSeries(series) => Ok(series.clone()),
    }
}

/// Scores the video series against the reference over their overlapping
/// time span. The reference is step-resampled at the video sample times.
pub fn score(video: &BrSeries, reference: &BrSeries) -> Result<EvalReport> {
    if video.times.is_empty() || reference.times.is_empty() {
        return Err(Error::NoOverlap);
    }
    let start = video.start_time().max(reference.start_time());
    let end = video.end_time().min(reference.end_time());
    if start > end {
        return Err(Error::NoOverlap);
    }
    let mut abs_sum = 0.0;
    let mut sum = 0.0;
    let mut sq_sum = 0.0;
    let mut br_sum = 0.0;
    let mut n = 0usize;
    for (&t, &v) in video.times.iter().zip(&video.br) {
        if t < start || t > end {
            continue;
        }
        let r = reference.value_at(t);
        let d = v - r;
        abs_sum += d.abs();
        sum += d;
        sq_sum += d * d;
        br_sum += v;
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoOverlap);
    }
    let nf = n as f64;
    Ok(EvalReport {
        mae: abs_sum / nf,
        bias: sum / nf,
        rmsd: (sq_sum / nf).sqrt(),
        mean_br: br_sum / nf,
        duration_s: end - start,
        n_samples: n,
    })
}

/// Writes an [`EvalReport`] as a flat JSON object.
pub fn write_report_json(path: &Path, report: &EvalReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::InvalidParam(format!("report serialization: {e}")))?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Reference CSV ingestion
// ---------------------------------------------------------------------------

/// Relative tolerance on sample spacing when inferring the rate of a raw
/// reference trace.
const UNIFORM_SPACING_TOL: f64 = 0.25;

/// Loads a reference CSV, dispatching on the header:
///
/// * `time_s,value` — one raw sensor trace.
/// * `time_s,br_rpm` — an already-computed BR series.
/// * `time_s,upper,lower` — both raw sensors; `sensor` picks one or the
///   per-sample mean.
pub fn load_reference_csv(
    path: &Path,
    sensor: SensorSelect,
    br_window_s: f64,
) -> Result<ReferenceTrace> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, line)) if line.trim().is_empty() => continue,
            Some((_, line)) => break line.trim().to_ascii_lowercase(),
            None => return Err(Error::format(path, "empty reference file")),
        }
    };

    let parse_row = |line_no: usize, line: &str, cols: usize| -> Result<Vec<f64>> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(Error::format(
                path,
                format!("line {}: expected {} columns, got {}", line_no + 1, cols, fields.len()),
            ));
        }
        fields
            .iter()
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| {
                    Error::format(path, format!("line {}: bad number '{f}'", line_no + 1))
                })
            })
            .collect()
    };

    match header.as_str() {
        "time_s,value" | "time_s,upper,lower" => {
            let two_sensors = header == "time_s,upper,lower";
            let cols = if two_sensors { 3 } else { 2 };
            let mut times = Vec::new();
            let mut values = Vec::new();
            for (no, line) in lines {
                if line.trim().is_empty() {
                    continue;
                }
                let row = parse_row(no, line, cols)?;
                times.push(row[0]);
                values.push(if two_sensors {
                    match sensor {
                        SensorSelect::Upper => row[1],
                        SensorSelect::Lower => row[2],
                        SensorSelect::Mean => 0.5 * (row[1] + row[2]),
                    }
                } else {
                    row[1]
                });
            }
            let signal = uniform_signal(path, &times, values)?;
            let label = match (two_sensors, sensor) {
                (true, SensorSelect::Upper) => SensorLabel::Upper,
                _ => SensorLabel::Lower,
            };
            Ok(ReferenceTrace { data: ReferenceData::RawSignal(signal), sensor: label })
        }
        "time_s,br_rpm" => {
            let mut times = Vec::new();
            let mut br = Vec::new();
            for (no, line) in lines {
                if line.trim().is_empty() {
                    continue;
                }
                let row = parse_row(no, line, 2)?;
                times.push(row[0]);
                br.push(row[1]);
            }
            if times.len() < 2 {
                return Err(Error::format(path, "BR series needs at least 2 rows"));
            }
            if times.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::format(path, "BR series times must be strictly increasing"));
            }
            Ok(ReferenceTrace {
                data: ReferenceData::BrSeries(BrSeries { times, br, window_s: br_window_s }),
                sensor: SensorLabel::Lower,
            })
        }
        other => Err(Error::format(
            path,
            format!("unrecognized header '{other}' (expected time_s,value | time_s,br_rpm | time_s,upper,lower)"),
        )),
    }
}

/// Builds a uniformly sampled signal from explicit times, inferring the
/// rate and rejecting non-uniform spacing.
fn uniform_signal(path: &Path, times: &[f64], values: Vec<f64>) -> Result<Signal> {
    if times.len() < 2 {
        return Err(Error::format(path, "raw trace needs at least 2 rows"));
    }
    let span = times[times.len() - 1] - times[0];
    if !(span > 0.0) {
        return Err(Error::format(path, "trace times must increase"));
    }
    let dt = span / (times.len() - 1) as f64;
    for (i, w) in times.windows(2).enumerate() {
        let gap = w[1] - w[0];
        if (gap - dt).abs() > UNIFORM_SPACING_TOL * dt {
            return Err(Error::format(
                path,
                format!("non-uniform sample spacing near row {}", i + 2),
            ));
        }
    }
    Signal::new(values, 1.0 / dt, times[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SplitMix64;
    use std::f64::consts::PI;

    fn br(times: Vec<f64>, values: Vec<f64>) -> BrSeries {
        BrSeries { times, br: values, window_s: 60.0 }
    }

    #[test]
    fn identical_series_score_zero() {
        let a = br(vec![1.0, 2.0, 3.0], vec![15.0, 15.5, 16.0]);
        let r = score(&a, &a.clone()).unwrap();
        assert_eq!((r.mae, r.bias, r.rmsd), (0.0, 0.0, 0.0));
        assert_eq!(r.n_samples, 3);
    }

    #[test]
    fn constant_offset_scores_itself() {
        let times: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let reference = br(times.clone(), vec![15.0; 10]);
        let video = br(times, vec![16.0; 10]);
        let r = score(&video, &reference).unwrap();
        assert!((r.mae - 1.0).abs() < 1e-12);
        assert!((r.bias - 1.0).abs() < 1e-12);
        assert!((r.rmsd - 1.0).abs() < 1e-12);
        assert!((r.mean_br - 16.0).abs() < 1e-12);
    }

    #[test]
    fn alternating_errors_cancel_bias_only() {
        let times: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let reference = br(times.clone(), vec![15.0; 10]);
        let values: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 16.0 } else { 14.0 }).collect();
        let video = br(times, values);
        let r = score(&video, &reference).unwrap();
        assert!((r.mae - 1.0).abs() < 1e-12);
        assert!(r.bias.abs() < 1e-12);
        assert!((r.rmsd - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_ranges_do_not_overlap() {
        let a = br(vec![0.0, 1.0], vec![10.0, 10.0]);
        let b = br(vec![5.0, 6.0], vec![10.0, 10.0]);
        assert!(matches!(score(&a, &b), Err(Error::NoOverlap)));
    }

    #[test]
    fn swap_negates_bias_and_keeps_magnitudes() {
        let mut rng = SplitMix64::new(7);
        for _ in 0..50 {
            let n = 5 + (rng.next_u64() % 20) as usize;
            let times: Vec<f64> = (0..n).map(|i| i as f64 * 2.0).collect();
            let a = br(times.clone(), (0..n).map(|_| 10.0 + 10.0 * rng.next_f64()).collect());
            let b = br(times, (0..n).map(|_| 10.0 + 10.0 * rng.next_f64()).collect());
            let ab = score(&a, &b).unwrap();
            let ba = score(&b, &a).unwrap();
            assert!((ab.bias + ba.bias).abs() < 1e-9);
            assert!((ab.mae - ba.mae).abs() < 1e-9);
            assert!((ab.rmsd - ba.rmsd).abs() < 1e-9);
            // The standing inequalities.
            assert!(ab.mae >= ab.bias.abs() - 1e-12);
            assert!(ab.rmsd >= ab.bias.abs() - 1e-12);
        }
    }

    #[test]
    fn time_shift_leaves_scores_unchanged() {
        let times: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let mut rng = SplitMix64::new(3);
        let va: Vec<f64> = (0..30).map(|_| 12.0 + 6.0 * rng.next_f64()).collect();
        let vb: Vec<f64> = (0..30).map(|_| 12.0 + 6.0 * rng.next_f64()).collect();
        let r1 = score(&br(times.clone(), va.clone()), &br(times.clone(), vb.clone())).unwrap();
        let shifted: Vec<f64> = times.iter().map(|t| t + 500.0).collect();
        let r2 = score(&br(shifted.clone(), va), &br(shifted, vb)).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn sinusoid_reference_processes_to_constant_rate() {
        // 0.3 Hz for 120 s: the chain reports 18 rpm. The very first peak
        // sits slightly early (the clamped normalization plateaus against
        // the endpoint envelope vertex), so the tight bound applies once
        // that interval has left the 60 s averaging window.
        let rate = 30.0;
        let n = (120.0 * rate) as usize;
        let samples: Vec<f64> = (0..n).map(|i| (2.0 * PI * 0.3 * i as f64 / rate).sin()).collect();
        let raw = Signal::new(samples, rate, 0.0).unwrap();
        let cfg = PipelineConfig::default();
        let series = process_reference(&raw, &cfg).unwrap();
        assert!(series.br.len() > 30);
        for (t, v) in series.times.iter().zip(&series.br) {
            assert!((v - 18.0).abs() < 2.0, "t={t}: {v} rpm");
            if *t >= 65.0 {
                assert!((v - 18.0).abs() < 0.1, "t={t}: {v} rpm");
            }
        }
    }

    #[test]
    fn constant_reference_has_insufficient_peaks() {
        let raw = Signal::new(vec![2.0; 3000], 30.0, 0.0).unwrap();
        let cfg = PipelineConfig::default();
        assert!(matches!(
            process_reference(&raw, &cfg),
            Err(Error::InsufficientPeaks { .. })
        ));
    }

    #[test]
    fn same_signal_gives_identical_series_on_both_paths() {
        let rate = 30.0;
        let n = (90.0 * rate) as usize;
        let samples: Vec<f64> =
            (0..n).map(|i| (2.0 * PI * 0.25 * i as f64 / rate).sin()).collect();
        let raw = Signal::new(samples, rate, 0.0).unwrap();
        let cfg = PipelineConfig::default();
        let a = process_reference(&raw, &cfg).unwrap();
        let b = signal_pipeline(&raw, &cfg).unwrap().br;
        assert_eq!(a, b);
    }

    #[test]
    fn reference_csv_header_dispatch() {
        let dir = tempfile::tempdir().unwrap();
        let raw_path = dir.path().join("raw.csv");
        fs::write(&raw_path, "time_s,value\n0.0,1.0\n0.5,2.0\n1.0,3.0\n").unwrap();
        let trace = load_reference_csv(&raw_path, SensorSelect::Lower, 60.0).unwrap();
        match trace.data {
            ReferenceData::RawSignal(s) => {
                assert_eq!(s.samples, vec![1.0, 2.0, 3.0]);
                assert!((s.sample_rate - 2.0).abs() < 1e-9);
                assert_eq!(s.t0, 0.0);
            }
            other => panic!("expected raw signal, got {other:?}"),
        }

        let br_path = dir.path().join("br.csv");
        fs::write(&br_path, "time_s,br_rpm\n10.0,15.0\n20.0,16.0\n").unwrap();
        let trace = load_reference_csv(&br_path, SensorSelect::Lower, 60.0).unwrap();
        match trace.data {
            ReferenceData::BrSeries(series) => {
                assert_eq!(series.times, vec![10.0, 20.0]);
                assert_eq!(series.br, vec![15.0, 16.0]);
            }
            other => panic!("expected BR series, got {other:?}"),
        }

        let both_path = dir.path().join("both.csv");
        fs::write(&both_path, "time_s,upper,lower\n0.0,1.0,5.0\n1.0,2.0,6.0\n").unwrap();
        let lower = load_reference_csv(&both_path, SensorSelect::Lower, 60.0).unwrap();
        let upper = load_reference_csv(&both_path, SensorSelect::Upper, 60.0).unwrap();
        let mean = load_reference_csv(&both_path, SensorSelect::Mean, 60.0).unwrap();
        let get = |t: ReferenceTrace| match t.data {
            ReferenceData::RawSignal(s) => s.samples,
            _ => panic!("expected raw"),
        };
        assert_eq!(get(lower), vec![5.0, 6.0]);
        assert_eq!(get(upper), vec![1.0, 2.0]);
        assert_eq!(get(mean), vec![3.0, 4.0]);
    }

    #[test]
    fn reference_csv_rejects_bad_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "nope,nope\n1,2\n").unwrap();
        assert!(load_reference_csv(&p, SensorSelect::Lower, 60.0).is_err());
        fs::write(&p, "time_s,value\n0.0,1.0\n1.0,2.0\n1.2,3.0\n").unwrap();
        assert!(load_reference_csv(&p, SensorSelect::Lower, 60.0).is_err());
        fs::write(&p, "time_s,value\n0.0,abc\n").unwrap();
        assert!(load_reference_csv(&p, SensorSelect::Lower, 60.0).is_err());
    }
}
