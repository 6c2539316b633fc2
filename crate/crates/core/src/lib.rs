//! breathcam-core: breath rate estimation from monocular video.
//!
//! The pipeline measures a seated subject's breathing by tracking the
//! vertical motion of the chest region:
//!
//! 1. [`imagery`] — frame/mask ingestion (PGM sequences or a raw stream).
//! 2. [`masking`] — temporal stabilization of the body masks and masking
//!    of each frame.
//! 3. [`optflow`] — dense two-frame optical flow via per-pixel quadratic
//!    expansion, coarse-to-fine over an image pyramid.
//! 4. [`motion`] — direction filtering (near-vertical vectors only),
//!    vector summation, and the aggregate angle per frame.
//! 5. [`dsp`] — moving average, zero-phase Butterworth lowpass, and
//!    envelope normalization to `[0, 1]`.
//! 6. [`peaks`] — breath peak detection and inter-peak-interval
//!    averaging into a rate series.
//! 7. [`evaluate`] — MAE / bias / RMSD against reference traces.
//! 8. [`synth`] — deterministic synthetic recordings with analytic
//!    ground truth, used by the verification suites.
//!
//! [`pipeline`] wires the stages together behind a streaming API and one
//! [`pipeline::PipelineConfig`] that holds every tunable in one place.

pub mod dsp;
pub mod error;
pub mod evaluate;
pub mod imagery;
pub mod masking;
pub mod motion;
pub mod optflow;
pub mod peaks;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
pub use imagery::{FlowField, Frame, Mask};
pub use pipeline::{run_pipeline, Pipeline, PipelineConfig, PipelineRun, SensorSelect};
