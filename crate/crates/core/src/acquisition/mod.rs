//! Acquisition chain: echo synthesis, PDM modulation and decimation back to PCM.

pub mod capture;
pub mod decimate;
pub mod pdm;
pub mod pings;

pub use capture::{
    capture_snapshots, echo_gate, quadrature_demodulate, synthesize_capture, CaptureParams,
    MultichannelCapture, ReflectorTarget,
};
pub use decimate::{decimation_latency, pdm_decimate};
pub use pdm::{pdm_modulate, PdmStream};
pub use pings::{range_ping, run_pings, PingResult, PingSchedule};
