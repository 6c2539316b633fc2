//! End-to-end tests of the breathcam binary: exit codes, artifacts and
//! determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn breathcam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_breathcam"))
        .args(args)
        .output()
        .expect("failed to spawn breathcam")
}

fn write_scenario(path: &Path, rpm: f64, duration_s: f64, seed: u64) {
    let json = format!(
        r#"{{
  "width": 80,
  "height": 80,
  "fps": 10.0,
  "duration_s": {duration_s},
  "br_profile": [{{ "start_s": 0.0, "rpm": {rpm} }}],
  "motion_amplitude": 3.0,
  "texture_seed": {seed},
  "noise_sigma": 0.0
}}"#
    );
    fs::write(path, json).unwrap();
}

#[test]
fn synth_writes_the_dataset_layout() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    write_scenario(&scenario, 15.0, 61.0, 5);
    let out = dir.path().join("ds");
    let run = breathcam(&[
        "synth",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "stderr: {}", String::from_utf8_lossy(&run.stderr));
    assert!(out.join("frames").join("000000.pgm").exists());
    assert!(out.join("masks").join("000000.pgm").exists());
    assert!(out.join("reference.csv").exists());
    assert!(out.join("scenario.json").exists());
    let frames = fs::read_dir(out.join("frames")).unwrap().count();
    assert_eq!(frames, 610);
}

#[test]
fn synth_rejects_short_scenarios_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    write_scenario(&scenario, 15.0, 30.0, 5);
    let out = breathcam(&[
        "synth",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        dir.path().join("ds").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_is_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    write_scenario(&scenario, 12.0, 61.0, 99);
    for name in ["a", "b"] {
        let status = breathcam(&[
            "synth",
            "--scenario",
            scenario.to_str().unwrap(),
            "--out",
            dir.path().join(name).to_str().unwrap(),
        ])
        .status;
        assert!(status.success());
    }
    for rel in ["frames/000000.pgm", "frames/000300.pgm", "masks/000000.pgm", "reference.csv"] {
        let a = fs::read(dir.path().join("a").join(rel)).unwrap();
        let b = fs::read(dir.path().join("b").join(rel)).unwrap();
        assert_eq!(a, b, "{rel} differs between identical synth runs");
    }
}

#[test]
fn run_estimates_the_synthesized_rate_and_scores_it() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    write_scenario(&scenario, 15.0, 70.0, 11);
    let ds = dir.path().join("ds");
    assert!(breathcam(&[
        "synth",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        ds.to_str().unwrap(),
    ])
    .status
    .success());

    let out_dir = dir.path().join("out");
    let flow_dump = dir.path().join("flow.bfl");
    let run = breathcam(&[
        "run",
        "--frames",
        ds.join("frames").to_str().unwrap(),
        "--masks",
        ds.join("masks").to_str().unwrap(),
        "--fps",
        "10",
        "--out",
        out_dir.to_str().unwrap(),
        "--ref",
        ds.join("reference.csv").to_str().unwrap(),
        "--dump-stages",
        "--dump-flow",
        flow_dump.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "stderr: {}", String::from_utf8_lossy(&run.stderr));
    for artifact in ["normalized.csv", "peaks.csv", "br.csv", "report.json", "angle.csv", "filtered.csv", "envelope_upper.csv", "envelope_lower.csv"] {
        assert!(out_dir.join(artifact).exists(), "missing {artifact}");
    }

    // Flow dump: BFL1 header promising one field per frame pair.
    let dump = fs::read(&flow_dump).unwrap();
    assert_eq!(&dump[0..4], b"BFL1");
    let count = u32::from_le_bytes(dump[12..16].try_into().unwrap()) as usize;
    assert_eq!(count, 699);
    assert_eq!(dump.len(), 16 + count * 2 * 80 * 80 * 4);

    // BR series close to 15 rpm.
    let br = fs::read_to_string(out_dir.join("br.csv")).unwrap();
    let values: Vec<f64> = br
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(!values.is_empty());
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    assert!((mean - 15.0).abs() < 0.5, "mean BR {mean}");

    // Report JSON parses and the MAE against the analytic reference is
    // small.
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert!(report["mae"].as_f64().unwrap() < 1.0);
    assert!(report["n_samples"].as_u64().unwrap() > 5);

    // A second run over the same inputs and config reproduces the outputs
    // byte for byte.
    let out2 = dir.path().join("out2");
    let rerun = breathcam(&[
        "run",
        "--frames",
        ds.join("frames").to_str().unwrap(),
        "--masks",
        ds.join("masks").to_str().unwrap(),
        "--fps",
        "10",
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert!(rerun.status.success());
    for artifact in ["normalized.csv", "peaks.csv", "br.csv"] {
        let a = fs::read(out_dir.join(artifact)).unwrap();
        let b = fs::read(out2.join(artifact)).unwrap();
        assert_eq!(a, b, "{artifact} differs between identical runs");
    }
}

#[test]
fn stream_output_feeds_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    write_scenario(&scenario, 15.0, 61.0, 21);
    let ds = dir.path().join("ds");
    assert!(breathcam(&[
        "synth",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        ds.to_str().unwrap(),
        "--stream",
    ])
    .status
    .success());
    assert!(ds.join("frames.bsr").exists());
    assert!(ds.join("masks.bsr").exists());

    let out_dir = dir.path().join("out");
    let run = breathcam(&[
        "run",
        "--frames",
        ds.join("frames.bsr").to_str().unwrap(),
        "--masks",
        ds.join("masks.bsr").to_str().unwrap(),
        "--fps",
        "10",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "stderr: {}", String::from_utf8_lossy(&run.stderr));
    assert!(out_dir.join("br.csv").exists());
}

#[test]
fn run_rejects_short_recordings_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    // 45 s at 10 fps via a raw frames directory of black PGMs.
    let frames = dir.path().join("frames");
    fs::create_dir_all(&frames).unwrap();
    let mut pgm = b"P5\n16 16\n255\n".to_vec();
    pgm.extend_from_slice(&[0u8; 256]);
    for i in 0..450 {
        fs::write(frames.join(format!("{i:06}.pgm")), &pgm).unwrap();
    }
    let out = breathcam(&[
        "run",
        "--frames",
        frames.to_str().unwrap(),
        "--fallback-seg",
        "--fps",
        "10",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("recording shorter than averaging window"),
        "stderr: {stderr}"
    );
}

#[test]
fn run_without_masks_or_fallback_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = breathcam(&[
        "run",
        "--frames",
        dir.path().to_str().unwrap(),
        "--fps",
        "10",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "clap should reject the flag set");
}

#[test]
fn eval_scores_csv_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let series =
        |offset: f64| -> String {
            let mut s = String::from("time_s,br_rpm\n");
            for i in 0..20 {
                s.push_str(&format!("{:.1},{:.3}\n", 10.0 + i as f64 * 3.0, 15.0 + offset));
            }
            s
        };
    fs::write(&a, series(0.0)).unwrap();
    fs::write(&b, series(0.0)).unwrap();

    let out = breathcam(&["eval", "--video", a.to_str().unwrap(), "--ref", b.to_str().unwrap()]);
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert_eq!(report["mae"].as_f64().unwrap(), 0.0);

    fs::write(&b, series(-1.0)).unwrap();
    let out = breathcam(&["eval", "--video", a.to_str().unwrap(), "--ref", b.to_str().unwrap()]);
    let report: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert_eq!(report["mae"].as_f64().unwrap(), 1.0);
    assert_eq!(report["bias"].as_f64().unwrap(), 1.0);

    // Disjoint time ranges: insufficient-signal exit.
    let mut disjoint = String::from("time_s,br_rpm\n");
    for i in 0..5 {
        disjoint.push_str(&format!("{:.1},15.0\n", 1000.0 + i as f64));
    }
    fs::write(&b, disjoint).unwrap();
    let out = breathcam(&["eval", "--video", a.to_str().unwrap(), "--ref", b.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn config_file_and_flag_overrides_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, r#"{"fps": 99.0, "cutoff_hz": 0.3}"#).unwrap();
    // fps comes from the flag (overriding config), cutoff from the file;
    // a bad flow parameter must still be rejected as validation (exit 3).
    let out = breathcam(&[
        "run",
        "--frames",
        dir.path().to_str().unwrap(),
        "--fallback-seg",
        "--config",
        cfg_path.to_str().unwrap(),
        "--fps",
        "10",
        "--pyramid-scale",
        "1.5",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("pyramid_scale"), "stderr: {stderr}");
}
