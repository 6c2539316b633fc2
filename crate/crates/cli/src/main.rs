//! breathcam: breath rate from a frame sequence.
//!
//! Subcommands:
//! * `run`   — full pipeline over a recording, writing stage CSVs, the BR
//!   series and (given a reference) an evaluation report.
//! * `synth` — generate a synthetic dataset with analytic ground truth.
//! * `eval`  — score a BR CSV against a reference CSV.
//!
//! Exit codes: 0 success, 2 usage, 3 input validation, 4 insufficient
//! signal. Progress goes to stderr; data goes to files and stdout.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use breathcam_core::dsp::{write_polyline_csv, write_signal_csv, Signal};
use breathcam_core::error::Error;
use breathcam_core::evaluate::{load_reference_csv, reference_br, score, write_report_json};
use breathcam_core::imagery::{
    load_frame_sequence, load_mask_sequence, write_mask_pgm, write_pgm, write_raw_stream,
};
use breathcam_core::motion::write_angle_csv;
use breathcam_core::optflow::FlowDumpWriter;
use breathcam_core::peaks::write_br_csv;
use breathcam_core::pipeline::{Pipeline, PipelineConfig, SensorSelect};
use breathcam_core::synth::{generate, SynthScenario};

#[derive(Parser)]
#[command(name = "breathcam", version, about = "Breath rate estimation from video frames")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the estimation pipeline over a recording.
    Run(RunArgs),
    /// Generate a synthetic dataset from a scenario file.
    Synth(SynthArgs),
    /// Score a video BR series against a reference.
    Eval(EvalArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Frame source: a directory of PGM files or a BSR1 stream file.
    #[arg(long)]
    frames: PathBuf,
    /// Per-frame masks: a directory of PGMs or a BSR1 stream file
    /// (non-zero pixel = body).
    #[arg(long, required_unless_present = "fallback_seg", conflicts_with = "fallback_seg")]
    masks: Option<PathBuf>,
    /// Segment by frame differencing instead of mask files.
    #[arg(long)]
    fallback_seg: bool,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Reference CSV to score against (time_s,value | time_s,br_rpm |
    /// time_s,upper,lower).
    #[arg(long)]
    r#ref: Option<PathBuf>,
    /// Also write angle/filtered/envelope CSVs for plotting.
    #[arg(long)]
    dump_stages: bool,
    /// Also write every raw flow field to this BFL1 file.
    #[arg(long)]
    dump_flow: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

/// Flag overrides mirroring PipelineConfig fields; unset flags fall back
/// to --config, then to defaults.
#[derive(Args)]
struct ConfigOverrides {
    /// JSON config file with PipelineConfig fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Frames per second of the recording.
    #[arg(long)]
    fps: Option<f64>,
    #[arg(long)]
    mask_window: Option<usize>,
    /// Direction filter half-angle, radians.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    smooth_width_s: Option<f64>,
    #[arg(long)]
    cutoff_hz: Option<f64>,
    #[arg(long)]
    butterworth_order: Option<usize>,
    #[arg(long)]
    extrema_window_s: Option<f64>,
    #[arg(long)]
    min_height: Option<f64>,
    #[arg(long)]
    min_prominence: Option<f64>,
    #[arg(long)]
    min_distance_s: Option<f64>,
    #[arg(long)]
    br_window_s: Option<f64>,
    #[arg(long)]
    pyramid_levels: Option<usize>,
    #[arg(long)]
    pyramid_scale: Option<f32>,
    #[arg(long)]
    window_radius: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    poly_radius: Option<usize>,
    #[arg(long)]
    poly_sigma: Option<f32>,
    /// Reference sensor: lower, upper or mean.
    #[arg(long)]
    sensor: Option<SensorSelect>,
    /// Flow worker threads (0 = default pool).
    #[arg(long)]
    workers: Option<usize>,
    /// Disable the temporal warm start between flow solves.
    #[arg(long)]
    no_warm_start: bool,
    #[arg(long)]
    fallback_threshold: Option<u8>,
    #[arg(long)]
    fallback_dilation: Option<usize>,
}

impl ConfigOverrides {
    fn resolve(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Io { path: path.clone(), source: e })?;
                serde_json::from_str(&text).map_err(|e| Error::Format {
                    path: path.clone(),
                    msg: format!("config parse: {e}"),
                })?
            }
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field { $target = v; })*
            };
        }
        set! {
            fps => cfg.fps,
            mask_window => cfg.mask_window,
            alpha => cfg.alpha,
            smooth_width_s => cfg.smooth_width_s,
            cutoff_hz => cfg.cutoff_hz,
            butterworth_order => cfg.butterworth_order,
            extrema_window_s => cfg.extrema_window_s,
            min_height => cfg.peaks.min_height,
            min_prominence => cfg.peaks.min_prominence,
            min_distance_s => cfg.peaks.min_distance_s,
            br_window_s => cfg.br_window_s,
            pyramid_levels => cfg.flow.pyramid_levels,
            pyramid_scale => cfg.flow.pyramid_scale,
            window_radius => cfg.flow.window_radius,
            iterations => cfg.flow.iterations,
            poly_radius => cfg.flow.poly_radius,
            poly_sigma => cfg.flow.poly_sigma,
            sensor => cfg.sensor,
            workers => cfg.workers,
            fallback_threshold => cfg.fallback_threshold,
            fallback_dilation => cfg.fallback_dilation,
        }
        if self.no_warm_start {
            cfg.warm_start = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory (frames/, masks/, reference.csv, scenario.json).
    #[arg(long)]
    out: PathBuf,
    /// Write BSR1 streams (frames.bsr, masks.bsr) instead of PGM
    /// directories.
    #[arg(long)]
    stream: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Video BR CSV (time_s,br_rpm).
    #[arg(long)]
    video: PathBuf,
    /// Reference CSV (raw trace or BR series).
    #[arg(long)]
    r#ref: PathBuf,
    /// Report JSON output path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_class(&err))
        }
    }
}

/// 3 for input/validation problems, 4 when the recording itself cannot
/// support an estimate.
fn exit_class(err: &Error) -> u8 {
    match err {
        Error::InsufficientPeaks { .. } | Error::NoOverlap => 4,
        _ => 3,
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Error> {
    let cfg = args.overrides.resolve()?;
    fs::create_dir_all(&args.out).map_err(|e| Error::Io { path: args.out.clone(), source: e })?;

    eprintln!("loading frames from {}", args.frames.display());
    let frames = load_frame_sequence(&args.frames, cfg.fps)?;
    let duration_s = frames.len() as f64 / cfg.fps;
    eprintln!("{} frames ({duration_s:.1} s at {} fps)", frames.len(), cfg.fps);
    if duration_s < cfg.br_window_s {
        return Err(Error::RecordingTooShort { duration_s, window_s: cfg.br_window_s });
    }
    let (w, h) = (frames[0].width, frames[0].height);

    let masks = match &args.masks {
        Some(dir) => Some(load_mask_sequence(dir, w, h, frames.len())?),
        None => None,
    };

    let mut pipeline = if masks.is_some() {
        Pipeline::with_masks(cfg.clone())?
    } else {
        Pipeline::with_fallback_segmentation(cfg.clone())?
    };
    if let Some(path) = &args.dump_flow {
        let mut writer = FlowDumpWriter::create(path, w, h, frames.len() - 1)?;
        pipeline.set_flow_sink(Box::new(move |flow| writer.push(flow)));
    }

    let total = frames.len();
    match masks {
        Some(masks) => {
            for (i, (frame, mask)) in frames.into_iter().zip(masks).enumerate() {
                pipeline.push_with_mask(frame, mask)?;
                progress(i, total);
            }
        }
        None => {
            for (i, frame) in frames.into_iter().enumerate() {
                pipeline.push(frame)?;
                progress(i, total);
            }
        }
    }
    eprintln!("processed {total}/{total} frames");

    let run = pipeline.finish()?;
    write_signal_csv(&args.out.join("normalized.csv"), &run.stages.normalized)?;
    write_peaks_csv(&args.out.join("peaks.csv"), &run.stages.normalized, &run.stages.peak_indices)?;
    write_br_csv(&args.out.join("br.csv"), run.br())?;
    if args.dump_stages {
        write_angle_csv(&args.out.join("angle.csv"), &run.samples, cfg.fps)?;
        write_signal_csv(&args.out.join("filtered.csv"), &run.stages.filtered)?;
        write_polyline_csv(&args.out.join("envelope_upper.csv"), &run.stages.envelope.upper)?;
        write_polyline_csv(&args.out.join("envelope_lower.csv"), &run.stages.envelope.lower)?;
    }
    eprintln!(
        "detected {} peaks, mean BR {:.2} rpm",
        run.stages.peak_indices.len(),
        run.br().mean_br()
    );

    if let Some(ref_path) = &args.r#ref {
        let trace = load_reference_csv(ref_path, cfg.sensor, cfg.br_window_s)?;
        let reference = reference_br(&trace, &cfg)?;
        let report = score(run.br(), &reference)?;
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::InvalidParam(format!("report serialization: {e}")))?;
        println!("{json}");
        write_report_json(&args.out.join("report.json"), &report)?;
    }
    Ok(())
}

fn progress(i: usize, total: usize) {
    if (i + 1) % 500 == 0 {
        eprintln!("processed {}/{} frames", i + 1, total);
    }
}

fn write_peaks_csv(path: &Path, normalized: &Signal, indices: &[usize]) -> Result<(), Error> {
    let mut buf = String::from("time_s,value\n");
    for &i in indices {
        buf.push_str(&format!("{:.6},{:.6}\n", normalized.time_at(i), normalized.samples[i]));
    }
    fs::write(path, buf).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn cmd_synth(args: SynthArgs) -> Result<(), Error> {
    let text = fs::read_to_string(&args.scenario)
        .map_err(|e| Error::Io { path: args.scenario.clone(), source: e })?;
    let scenario: SynthScenario = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: args.scenario.clone(),
        msg: format!("scenario parse: {e}"),
    })?;
    let dataset = generate(&scenario)?;

    fs::create_dir_all(&args.out).map_err(|e| Error::Io { path: args.out.clone(), source: e })?;
    if args.stream {
        write_raw_stream(&args.out.join("frames.bsr"), &dataset.frames)?;
        let mask_planes: Vec<_> = dataset
            .masks
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let pixels = m.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
                breathcam_core::Frame::new(m.width, m.height, pixels, i, scenario.fps)
            })
            .collect::<Result<_, _>>()?;
        write_raw_stream(&args.out.join("masks.bsr"), &mask_planes)?;
    } else {
        let frames_dir = args.out.join("frames");
        let masks_dir = args.out.join("masks");
        for dir in [&frames_dir, &masks_dir] {
            fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
        }
        for frame in &dataset.frames {
            let path = frames_dir.join(format!("{:06}.pgm", frame.index));
            write_pgm(&path, frame.width, frame.height, &frame.pixels)?;
        }
        for (i, mask) in dataset.masks.iter().enumerate() {
            write_mask_pgm(&masks_dir.join(format!("{i:06}.pgm")), mask)?;
        }
    }
    write_signal_csv(&args.out.join("reference.csv"), &dataset.reference)?;
    let pretty = serde_json::to_string_pretty(&scenario)
        .map_err(|e| Error::InvalidParam(format!("scenario serialization: {e}")))?;
    fs::write(args.out.join("scenario.json"), pretty + "\n")
        .map_err(|e| Error::Io { path: args.out.join("scenario.json"), source: e })?;
    eprintln!(
        "wrote {} frames + masks to {}",
        dataset.frames.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    let cfg = args.overrides.resolve()?;
    let ref_path = &args.r#ref;

    let video_trace = load_reference_csv(&args.video, cfg.sensor, cfg.br_window_s)?;
    let video = match video_trace.data {
        breathcam_core::evaluate::ReferenceData::BrSeries(series) => series,
        _ => {
            return Err(Error::Format {
                path: args.video.clone(),
                msg: "expected a BR series (header time_s,br_rpm)".into(),
            })
        }
    };
    let trace = load_reference_csv(ref_path, cfg.sensor, cfg.br_window_s)?;
    let reference = reference_br(&trace, &cfg)?;
    let report = score(&video, &reference)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::InvalidParam(format!("report serialization: {e}")))?;
    println!("{json}");
    if let Some(out) = &args.out {
        write_report_json(out, &report)?;
    }
    Ok(())
}
