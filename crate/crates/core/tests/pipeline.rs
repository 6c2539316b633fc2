//! End-to-end pipeline tests on synthetic recordings.

use breathcam_core::error::Error;
use breathcam_core::pipeline::{run_pipeline, PipelineConfig};
use breathcam_core::synth::{generate, BrSegment, SynthScenario};

fn scenario(rpm: f64, duration_s: f64) -> SynthScenario {
    SynthScenario {
        width: 96,
        height: 96,
        fps: 15.0,
        duration_s,
        br_profile: vec![BrSegment { start_s: 0.0, rpm }],
        motion_amplitude: 3.0,
        texture_seed: 7,
        distractor: None,
        noise_sigma: 0.0,
    }
}

fn config(fps: f64) -> PipelineConfig {
    PipelineConfig { fps, ..PipelineConfig::default() }
}

#[test]
fn constant_rate_is_recovered() {
    let sc = scenario(15.0, 70.0);
    let ds = generate(&sc).unwrap();
    let run = run_pipeline(&ds.frames, Some(&ds.masks), &config(sc.fps)).unwrap();
    let br = run.br();
    assert!(!br.br.is_empty());
    let mean = br.mean_br();
    assert!((mean - 15.0).abs() < 0.5, "mean BR {mean}");
    // Steady-state values are tight.
    for (t, v) in br.times.iter().zip(&br.br) {
        if *t >= 65.0 {
            assert!((v - 15.0).abs() < 0.5, "t={t}: {v}");
        }
    }
}

#[test]
fn one_motion_sample_per_frame_after_the_first() {
    let sc = scenario(12.0, 61.0);
    let ds = generate(&sc).unwrap();
    let run = run_pipeline(&ds.frames, Some(&ds.masks), &config(sc.fps)).unwrap();
    assert_eq!(run.samples.len(), ds.frames.len() - 1);
    for (i, s) in run.samples.iter().enumerate() {
        assert_eq!(s.frame_index, i + 1);
    }
    assert_eq!(run.angle.len(), ds.frames.len() - 1);
}

#[test]
fn zero_amplitude_yields_insufficient_peaks() {
    let sc = SynthScenario { motion_amplitude: 0.0, ..scenario(15.0, 61.0) };
    let ds = generate(&sc).unwrap();
    match run_pipeline(&ds.frames, Some(&ds.masks), &config(sc.fps)) {
        Err(Error::InsufficientPeaks { .. }) => {}
        other => panic!("expected InsufficientPeaks, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn distractor_only_motion_is_rejected_by_the_direction_filter() {
    // Horizontal-only motion: the vertical aggregate should be a tiny
    // fraction of what the breathing band produces.
    let with_band = scenario(15.0, 61.0);
    let distractor_only = SynthScenario {
        motion_amplitude: 0.0,
        distractor: Some(breathcam_core::synth::Distractor {
            amplitude_px: 4.0,
            frequency_hz: 0.7,
        }),
        ..with_band.clone()
    };
    let motion_stats = |sc: &SynthScenario| -> (f64, f64) {
        let ds = generate(sc).unwrap();
        let mut p = breathcam_core::pipeline::Pipeline::with_masks(config(sc.fps)).unwrap();
        for (f, m) in ds.frames.iter().zip(&ds.masks) {
            p.push_with_mask(f.clone(), m.clone()).unwrap();
        }
        let (samples, _) = p.finish_motion().unwrap();
        let mean_abs_y =
            samples.iter().map(|s| s.aggregate_y.abs()).sum::<f64>() / samples.len() as f64;
        let degenerate =
            samples.iter().filter(|s| s.degenerate).count() as f64 / samples.len() as f64;
        (mean_abs_y, degenerate)
    };
    let (with, _) = motion_stats(&with_band);
    let (without, _) = motion_stats(&distractor_only);
    assert!(with > 0.0);
    assert!(
        without < 0.05 * with,
        "distractor-only |aggregate_y| {without} vs with-band {with}"
    );
    // With no motion at all, every aggregate is the zero vector and the
    // hold rule kicks in for the whole recording.
    let static_scene = SynthScenario { motion_amplitude: 0.0, ..with_band.clone() };
    let (_, degenerate_share) = motion_stats(&static_scene);
    assert_eq!(degenerate_share, 1.0, "static scene must be fully degenerate");
}

#[test]
fn identical_runs_are_bit_identical() {
    let sc = scenario(14.0, 61.0);
    let ds = generate(&sc).unwrap();
    let a = run_pipeline(&ds.frames, Some(&ds.masks), &config(sc.fps)).unwrap();
    let b = run_pipeline(&ds.frames, Some(&ds.masks), &config(sc.fps)).unwrap();
    assert_eq!(a.angle.samples, b.angle.samples);
    assert_eq!(a.br().br, b.br().br);
}

#[test]
fn fallback_segmentation_still_finds_the_rate() {
    let sc = SynthScenario { noise_sigma: 0.0, ..scenario(15.0, 70.0) };
    let ds = generate(&sc).unwrap();
    let run = run_pipeline(&ds.frames, None, &config(sc.fps)).unwrap();
    let mean = run.br().mean_br();
    assert!((mean - 15.0).abs() < 1.0, "fallback mean BR {mean}");
}
