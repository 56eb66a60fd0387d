//! Software model of a compact ultrasonic imaging sonar built around a
//! uniform circular MEMS microphone array with a central emitter.
//!
//! The crate covers the whole signal chain:
//!
//! * [`geometry`]: array layout and far-field steering vectors
//! * [`signal_model`]: analytic covariances and synthetic snapshots
//! * [`beamforming`]: Bartlett / MVDR power maps, PSFs and peak search
//! * [`waveform`]: LFM chirp generation, matched filtering and ranging
//! * [`acquisition`]: echo synthesis, sigma-delta PDM and CIC+FIR decimation
//! * [`framing`]: the binary frame wire format and a resynchronizing parser

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod beamforming;
pub mod dsp;
pub mod error;
pub mod framing;
pub mod geometry;
pub mod linalg;
pub mod signal_model;
pub mod waveform;

pub use error::{Error, Result};

/// Speed of sound in dry air at 20 °C, m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;

/// Emitter center frequency, Hz.
pub const CARRIER_HZ: f64 = 40_000.0;

/// Per-channel PDM clock, Hz.
pub const PDM_RATE_HZ: f64 = 4_450_000.0;

/// Decimation factor between the PDM clock and the PCM rate.
pub const DECIMATION: usize = 16;

/// PCM rate after decimation, Hz.
pub const PCM_RATE_HZ: f64 = PDM_RATE_HZ / DECIMATION as f64;

/// Number of microphones on the default array.
pub const DEFAULT_ELEMENTS: usize = 16;

/// Aperture diameter of the default array, m.
pub const DEFAULT_DIAMETER_M: f64 = 0.030;

/// Host link ceiling, bit/s.
pub const LINK_BUDGET_BPS: f64 = 480e6;

/// Raw PDM bit rate for the default array, bit/s.
pub const fn aggregate_pdm_rate_bps() -> f64 {
    DEFAULT_ELEMENTS as f64 * PDM_RATE_HZ
}

const _: () = assert!(aggregate_pdm_rate_bps() < LINK_BUDGET_BPS);
