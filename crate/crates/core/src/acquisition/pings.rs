//! Periodic ping series: capture, matched filter and range per ping.

use super::capture::{synthesize_capture, CaptureParams, MultichannelCapture, ReflectorTarget};
use crate::error::{invalid, Result};
use crate::geometry::ArrayGeometry;
use crate::waveform::{estimate_range, matched_filter, PcmTrace, RangeEstimate};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PingSchedule {
    pub ping_rate_hz: f64,
    pub duration_s: f64,
    pub snr_db: f64,
    pub c_mps: f64,
    pub seed: u64,
}

impl PingSchedule {
    pub fn n_pings(&self) -> usize {
        (self.duration_s * self.ping_rate_hz + 1e-9).floor() as usize
    }

    /// Samples per ping window at `sample_rate_hz`.
    pub fn window_samples(&self, sample_rate_hz: f64) -> usize {
        (sample_rate_hz / self.ping_rate_hz).floor() as usize
    }

    fn validate(&self) -> Result<()> {
        if !(self.ping_rate_hz > 0.0) || !self.ping_rate_hz.is_finite() {
            return invalid(format!(
                "simulate.ping_rate_hz must be positive, got {}",
                self.ping_rate_hz
            ));
        }
        if !(self.duration_s >= 0.0) || !self.duration_s.is_finite() {
            return invalid(format!(
                "simulate.duration_s must be non-negative, got {}",
                self.duration_s
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PingResult {
    pub index: usize,
    /// Emission time of this ping from the start of the series, s.
    pub time_s: f64,
    pub estimate: RangeEstimate,
}

/// One ping's channel-mean trace (a boresight delay-and-sum) and its range.
pub fn range_ping(
    capture: &MultichannelCapture,
    template: &PcmTrace,
    c_mps: f64,
) -> Result<(PcmTrace, RangeEstimate)> {
    let summed = capture.channel_mean();
    let mf = matched_filter(&summed, template)?;
    let estimate = estimate_range(&mf, capture.emission_marker(), template.len(), c_mps)?;
    Ok((summed, estimate))
}

/// Runs the whole series. Ping `k` seeds its capture noise from
/// `seed + k · n_elements`, so channel streams never repeat across pings.
/// `on_first` receives the first ping's received trace.
pub fn run_pings(
    geometry: &ArrayGeometry,
    target: &ReflectorTarget,
    chirp: &PcmTrace,
    schedule: &PingSchedule,
    mut on_first: impl FnMut(&PcmTrace),
) -> Result<Vec<PingResult>> {
    schedule.validate()?;
    let fs = chirp.sample_rate_hz();
    let window = schedule.window_samples(fs);
    (0..schedule.n_pings())
        .map(|k| {
            let params = CaptureParams {
                window_samples: window,
                emission_marker: 0,
                snr_db: schedule.snr_db,
                c_mps: schedule.c_mps,
                seed: schedule.seed.wrapping_add((k * geometry.len()) as u64),
            };
            let capture = synthesize_capture(geometry, target, chirp, &params)?;
            let (trace, estimate) = range_ping(&capture, chirp, schedule.c_mps)?;
            if k == 0 {
                on_first(&trace);
            }
            Ok(PingResult {
                index: k,
                time_s: k as f64 / schedule.ping_rate_hz,
                estimate,
            })
        })
        .collect()
}
