//! End-to-end orchestration: frames and masks in, breath-rate series out.
//!
//! [`Pipeline`] is a streaming state machine — frames are pushed one at a
//! time so long recordings never need to sit in memory. Per frame: the
//! mask (supplied or from the fallback segmenter) joins the rolling
//! intersection window, the masked frame feeds the flow engine, the flow
//! passes the direction filter and is aggregated under the current
//! intersection mask into one angle sample. `finish` then runs the angle
//! series through the signal chain and peak detector.
//!
//! Flow computation may run on a worker pool ([`PipelineConfig::workers`]);
//! row-level parallelism keeps the output bit-identical for any worker
//! count.

use serde::{Deserialize, Serialize};

use crate::dsp::{
    butterworth_lowpass, moving_average, normalize, sliding_extrema, Envelope, Signal,
    DEFAULT_BUTTERWORTH_ORDER, DEFAULT_CUTOFF_HZ, DEFAULT_EXTREMA_WINDOW_S,
    DEFAULT_SMOOTH_WIDTH_S,
};
use crate::error::{Error, Result};
use crate::imagery::{FlowField, Frame, Mask};
use crate::masking::{
    apply_mask, fallback_segment, TemporalMaskWindow, DEFAULT_FALLBACK_DILATION,
    DEFAULT_FALLBACK_THRESHOLD, DEFAULT_MASK_WINDOW,
};
use crate::motion::{aggregate, angle_series, direction_filter, DirectionFilterConfig, MotionSample};
use crate::optflow::{FlowEngine, FlowParams};
use crate::peaks::{find_peaks, intervals_to_br, peak_times, BrSeries, PeakConfig, DEFAULT_BR_WINDOW_S};

/// Which reference sensor anchors the comparison.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorSelect {
    Upper,
    #[default]
    Lower,
    /// Per-sample mean of both sensors.
    Mean,
}

impl std::str::FromStr for SensorSelect {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "upper" => Ok(SensorSelect::Upper),
            "lower" => Ok(SensorSelect::Lower),
            "mean" => Ok(SensorSelect::Mean),
            other => Err(format!("unknown sensor '{other}' (expected upper|lower|mean)")),
        }
    }
}

/// Every tunable of the pipeline in one place. Each default is defined
/// once, next to the type that owns it, and composed here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub fps: f64,
    /// Frames intersected by the temporal mask window.
    pub mask_window: usize,
    /// Direction filter half-angle, radians.
    pub alpha: f64,
    /// Moving-average width, seconds.
    pub smooth_width_s: f64,
    /// Butterworth lowpass cutoff, Hz.
    pub cutoff_hz: f64,
    pub butterworth_order: usize,
    /// Sliding-extrema window, seconds.
    pub extrema_window_s: f64,
    pub peaks: PeakConfig,
    /// Inter-peak interval averaging window, seconds.
    pub br_window_s: f64,
    pub flow: FlowParams,
    pub sensor: SensorSelect,
    /// Warm-start each flow solve with the previous pair's flow.
    pub warm_start: bool,
    /// Flow worker threads; 0 uses the process-wide default pool.
    pub workers: usize,
    /// Fallback segmenter luminance threshold.
    pub fallback_threshold: u8,
    /// Fallback segmenter dilation radius, pixels.
    pub fallback_dilation: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            fps: 30.0,
            mask_window: DEFAULT_MASK_WINDOW,
            alpha: DirectionFilterConfig::default().alpha,
            smooth_width_s: DEFAULT_SMOOTH_WIDTH_S,
            cutoff_hz: DEFAULT_CUTOFF_HZ,
            butterworth_order: DEFAULT_BUTTERWORTH_ORDER,
            extrema_window_s: DEFAULT_EXTREMA_WINDOW_S,
            peaks: PeakConfig::default(),
            br_window_s: DEFAULT_BR_WINDOW_S,
            flow: FlowParams::default(),
            sensor: SensorSelect::default(),
            warm_start: true,
            workers: 0,
            fallback_threshold: DEFAULT_FALLBACK_THRESHOLD,
            fallback_dilation: DEFAULT_FALLBACK_DILATION,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0) {
            return Err(Error::InvalidParam("fps must be positive".into()));
        }
        if self.mask_window < 1 {
            return Err(Error::InvalidParam("mask window must be at least 1 frame".into()));
        }
        DirectionFilterConfig { alpha: self.alpha }.validate()?;
        if !(self.smooth_width_s > 0.0) {
            return Err(Error::InvalidParam("smoothing width must be positive".into()));
        }
        if !(self.extrema_window_s > 0.0) {
            return Err(Error::InvalidParam("extrema window must be positive".into()));
        }
        if !(self.br_window_s > 0.0) {
            return Err(Error::InvalidParam("BR window must be positive".into()));
        }
        self.flow.validate()?;
        Ok(())
    }

    pub fn direction_filter(&self) -> DirectionFilterConfig {
        DirectionFilterConfig { alpha: self.alpha }
    }
}

/// Intermediate signals of the conditioning chain, kept for inspection
/// and stage dumps.
#[derive(Debug, Clone)]
pub struct SignalStages {
    pub smoothed: Signal,
    pub filtered: Signal,
    pub envelope: Envelope,
    pub normalized: Signal,
    pub peak_indices: Vec<usize>,
    pub peak_times: Vec<f64>,
    pub br: BrSeries,
}

/// The shared conditioning chain: moving average, zero-phase lowpass,
/// envelope normalization, peak detection, interval averaging. Reference
/// sensor signals run through exactly this function too.
pub fn signal_pipeline(signal: &Signal, cfg: &PipelineConfig) -> Result<SignalStages> {
    let smoothed = moving_average(signal, cfg.smooth_width_s);
    let filtered = butterworth_lowpass(&smoothed, cfg.cutoff_hz, cfg.butterworth_order)?;
    let envelope = sliding_extrema(&filtered, cfg.extrema_window_s)?;
    let normalized = normalize(&filtered, &envelope);
    let peak_indices = find_peaks(&normalized, &cfg.peaks);
    let times = peak_times(&normalized, &peak_indices);
    let br = intervals_to_br(&times, cfg.br_window_s)?;
    Ok(SignalStages {
        smoothed,
        filtered,
        envelope,
        normalized,
        peak_indices,
        peak_times: times,
        br,
    })
}

/// Everything the pipeline produced for one recording.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub samples: Vec<MotionSample>,
    pub angle: Signal,
    pub stages: SignalStages,
}

impl PipelineRun {
    pub fn br(&self) -> &BrSeries {
        &self.stages.br
    }
}

enum MaskMode {
    Supplied,
    Fallback { pending_first: Option<Frame>, prev_raw: Option<Frame> },
}

/// Streaming pipeline state machine. Push frames (with or without masks)
/// in order, then call [`Pipeline::finish`].
pub struct Pipeline {
    cfg: PipelineConfig,
    mode: MaskMode,
    window: TemporalMaskWindow,
    engine: FlowEngine,
    pool: Option<rayon::ThreadPool>,
    samples: Vec<MotionSample>,
    frames_seen: usize,
    dims: Option<(usize, usize)>,
    /// Receives every raw flow field before direction filtering, for
    /// optional debug dumps.
    flow_sink: Option<Box<dyn FnMut(&FlowField) -> Result<()>>>,
}

impl Pipeline {
    /// Pipeline fed by per-frame mask files.
    pub fn with_masks(cfg: PipelineConfig) -> Result<Self> {
        Self::build(cfg, MaskMode::Supplied)
    }

    /// Pipeline using the motion-energy fallback segmenter.
    pub fn with_fallback_segmentation(cfg: PipelineConfig) -> Result<Self> {
        Self::build(cfg, MaskMode::Fallback { pending_first: None, prev_raw: None })
    }

    fn build(cfg: PipelineConfig, mode: MaskMode) -> Result<Self> {
        cfg.validate()?;
        let pool = if cfg.workers > 0 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.workers)
                    .build()
                    .map_err(|e| Error::InvalidParam(format!("worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Pipeline {
            window: TemporalMaskWindow::new(cfg.mask_window),
            engine: FlowEngine::new(cfg.flow.clone(), cfg.warm_start)?,
            pool,
            mode,
            cfg,
            samples: Vec::new(),
            frames_seen: 0,
            dims: None,
            flow_sink: None,
        })
    }

    /// Registers a sink receiving every raw flow field, e.g. a dump writer.
    pub fn set_flow_sink(&mut self, sink: Box<dyn FnMut(&FlowField) -> Result<()>>) {
        self.flow_sink = Some(sink);
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    /// Feeds a frame in fallback-segmentation mode. The first pair's mask
    /// covers both of its frames; afterwards each frame is differenced
    /// against the previous raw frame.
    pub fn push(&mut self, frame: Frame) -> Result<()> {
        let state = match &mut self.mode {
            MaskMode::Supplied => {
                return Err(Error::InvalidParam(
                    "pipeline was built with supplied masks; use push_with_mask".into(),
                ));
            }
            MaskMode::Fallback { pending_first, prev_raw } => {
                (pending_first.take(), prev_raw.take())
            }
        };
        let (threshold, dilation) = (self.cfg.fallback_threshold, self.cfg.fallback_dilation);
        match state {
            (None, None) => {
                self.set_fallback_state(Some(frame), None);
                Ok(())
            }
            (Some(first), None) => {
                let mask = fallback_segment(&first, &frame, threshold, dilation)?;
                let keep = frame.clone();
                self.ingest(first, mask.clone())?;
                self.ingest(frame, mask)?;
                self.set_fallback_state(None, Some(keep));
                Ok(())
            }
            (None, Some(prev)) => {
                let mask = fallback_segment(&prev, &frame, threshold, dilation)?;
                let keep = frame.clone();
                self.ingest(frame, mask)?;
                self.set_fallback_state(None, Some(keep));
                Ok(())
            }
            (Some(_), Some(_)) => unreachable!("fallback state holds one frame at most"),
        }
    }

    fn set_fallback_state(&mut self, pending: Option<Frame>, prev: Option<Frame>) {
        if let MaskMode::Fallback { pending_first, prev_raw } = &mut self.mode {
            *pending_first = pending;
            *prev_raw = prev;
        }
    }

    /// Feeds a frame with its segmentation mask.
    pub fn push_with_mask(&mut self, frame: Frame, mask: Mask) -> Result<()> {
        match self.mode {
            MaskMode::Supplied => self.ingest(frame, mask),
            MaskMode::Fallback { .. } => Err(Error::InvalidParam(
                "pipeline was built with fallback segmentation; use push".into(),
            )),
        }
    }

    fn ingest(&mut self, frame: Frame, mask: Mask) -> Result<()> {
        if let Some(dims) = self.dims {
            if (frame.width, frame.height) != dims {
                return Err(Error::dims(
                    format!("frame {}", frame.index),
                    dims,
                    (frame.width, frame.height),
                ));
            }
        } else {
            self.dims = Some((frame.width, frame.height));
        }
        if frame.index != self.frames_seen {
            return Err(Error::InvalidParam(format!(
                "frame index {} out of order, expected {}",
                frame.index, self.frames_seen
            )));
        }

        let intersection = self.window.push_and_intersect(mask)?;
        let masked = apply_mask(&frame, &intersection)?;
        let flow = self.run_flow(&masked)?;
        if let Some(flow) = flow {
            if let Some(sink) = &mut self.flow_sink {
                sink(&flow)?;
            }
            let filtered = direction_filter(&flow, &self.cfg.direction_filter());
            let sample = aggregate(&filtered, &intersection, frame.index)?;
            self.samples.push(sample);
        }
        self.frames_seen += 1;
        Ok(())
    }

    fn run_flow(&mut self, masked: &Frame) -> Result<Option<FlowField>> {
        let engine = &mut self.engine;
        match &self.pool {
            Some(pool) => pool.install(|| engine.push(masked)),
            None => engine.push(masked),
        }
    }

    /// Closes the stream after the motion stage only: per-frame samples
    /// plus the raw angle series, without peak detection.
    pub fn finish_motion(mut self) -> Result<(Vec<MotionSample>, Signal)> {
        let duration_s = self.frames_seen as f64 / self.cfg.fps;
        if duration_s < self.cfg.br_window_s {
            return Err(Error::RecordingTooShort { duration_s, window_s: self.cfg.br_window_s });
        }
        let angle = angle_series(&mut self.samples, self.cfg.fps);
        Ok((self.samples, angle))
    }

    /// Closes the stream and runs the signal chain. Fails when the
    /// recording is shorter than the BR averaging window or produces too
    /// few peaks.
    pub fn finish(self) -> Result<PipelineRun> {
        let cfg = self.cfg.clone();
        let (samples, angle) = self.finish_motion()?;
        let stages = signal_pipeline(&angle, &cfg)?;
        Ok(PipelineRun { samples, angle, stages })
    }
}

/// Convenience wrapper over the streaming pipeline for in-memory data.
/// `masks` must be one per frame; pass `None` to use the fallback
/// segmenter.
pub fn run_pipeline(
    frames: &[Frame],
    masks: Option<&[Mask]>,
    cfg: &PipelineConfig,
) -> Result<PipelineRun> {
    match masks {
        Some(masks) => {
            if masks.len() != frames.len() {
                return Err(Error::MaskCountMismatch { masks: masks.len(), frames: frames.len() });
            }
            let mut p = Pipeline::with_masks(cfg.clone())?;
            for (frame, mask) in frames.iter().zip(masks) {
                p.push_with_mask(frame.clone(), mask.clone())?;
            }
            p.finish()
        }
        None => {
            let mut p = Pipeline::with_fallback_segmentation(cfg.clone())?;
            for frame in frames {
                p.push(frame.clone())?;
            }
            p.finish()
        }
    }
}
