//! PDM → PCM: fourth-order CIC decimator followed by a droop-compensating FIR.

use std::f64::consts::PI;

use super::pdm::PdmStream;
use crate::dsp::{fir_filter, kaiser};
use crate::error::{invalid, Result};
use crate::waveform::PcmTrace;

pub const CIC_ORDER: u32 = 4;

/// Compensator length (odd, linear phase).
pub const FIR_TAPS: usize = 31;
const FIR_BETA: f64 = 7.5;
/// Upper edge of the droop-compensated passband, Hz.
pub const PASSBAND_EDGE_HZ: f64 = 50_000.0;
/// Stopband edge as a fraction of the output rate.
pub const STOPBAND_EDGE: f64 = 0.45;

/// CIC magnitude response (DC-normalized) at `nu = f / output_rate`.
pub fn cic_response(nu: f64, factor: usize) -> f64 {
    if nu == 0.0 {
        return 1.0;
    }
    let r = factor as f64;
    ((PI * nu).sin() / (r * (PI * nu / r).sin()))
        .abs()
        .powi(CIC_ORDER as i32)
}

/// Windowed frequency-sampling design of the compensator.
///
/// Target response is `1 / H_cic` up to the passband edge, held flat to a
/// cutoff midway to the stopband edge, zero above. The Kaiser window then
/// sets the stopband depth. Taps are normalized to unit DC gain.
pub fn compensator_taps(factor: usize, output_rate_hz: f64) -> Vec<f64> {
    let nu_pass = (PASSBAND_EDGE_HZ / output_rate_hz).min(0.5);
    let nu_cut = 0.5 * (nu_pass + STOPBAND_EDGE);
    let half = (FIR_TAPS - 1) as f64 / 2.0;

    const GRID: usize = 8192;
    let dnu = nu_cut / GRID as f64;
    let target: Vec<(f64, f64)> = (0..GRID)
        .map(|i| {
            let nu = (i as f64 + 0.5) * dnu;
            (nu, 1.0 / cic_response(nu.min(nu_pass), factor))
        })
        .collect();

    let mut taps: Vec<f64> = (0..FIR_TAPS)
        .map(|n| {
            let m = n as f64 - half;
            let ideal: f64 = target
                .iter()
                .map(|(nu, d)| 2.0 * d * (2.0 * PI * nu * m).cos() * dnu)
                .sum();
            ideal * kaiser(m / half, FIR_BETA)
        })
        .collect();
    let dc: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|h| *h /= dc);
    taps
}

/// CIC output phase: which of the `factor` input positions each output is taken at.
fn cic_phase(factor: usize) -> usize {
    (CIC_ORDER as usize * (factor - 1) / 2) % factor
}

/// Delay, in output samples, from a PCM trace through `pdm_modulate` and
/// `pdm_decimate` back to PCM.
pub fn decimation_latency(factor: usize) -> usize {
    CIC_ORDER as usize * (factor - 1) / 2 / factor + (FIR_TAPS - 1) / 2
}

/// Integer CIC decimator, bits mapped to ±1, output normalized by `factor⁴`.
fn cic_decimate(stream: &PdmStream, factor: usize) -> Vec<f64> {
    let order = CIC_ORDER as usize;
    let mut integ = vec![0i64; order];
    let mut comb = vec![0i64; order];
    let phase = cic_phase(factor);
    let gain = (factor as f64).powi(CIC_ORDER as i32);
    let mut out = Vec::with_capacity(stream.len() / factor + 1);
    for (i, bit) in stream.bits().enumerate() {
        let mut x: i64 = if bit { 1 } else { -1 };
        for acc in integ.iter_mut() {
            *acc = acc.wrapping_add(x);
            x = *acc;
        }
        if i % factor == phase {
            let mut y = x;
            for delayed in comb.iter_mut() {
                let next = y.wrapping_sub(*delayed);
                *delayed = y;
                y = next;
            }
            out.push(y as f64 / gain);
        }
    }
    out
}

/// Decimates a PDM stream by `factor` to PCM at `rate / factor`.
///
/// The output lags the modulated input by [`decimation_latency`] samples.
pub fn pdm_decimate(stream: &PdmStream, factor: usize) -> Result<PcmTrace> {
    if factor < 2 {
        return invalid(format!(
            "decimation factor must be at least 2, got {factor}"
        ));
    }
    if stream.len() < factor {
        return invalid(format!(
            "PDM stream of {} bits is shorter than the decimation factor {factor}",
            stream.len()
        ));
    }
    let output_rate = stream.rate_hz() as f64 / factor as f64;
    let cic = cic_decimate(stream, factor);
    let taps = compensator_taps(factor, output_rate);
    PcmTrace::new(fir_filter(&cic, &taps), output_rate)
}
