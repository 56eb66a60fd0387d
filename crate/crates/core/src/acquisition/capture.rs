//! Multichannel echo synthesis and narrowband snapshot extraction.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dsp::{add_delayed, kaiser, sinc};
use crate::error::{invalid, Error, Result};
use crate::geometry::{ArrayGeometry, Direction};
use crate::signal_model::SnapshotBlock;
use crate::waveform::PcmTrace;

/// Transmit leakage level relative to full scale, dB.
pub const LEAKAGE_DB: f64 = -20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectorTarget {
    pub direction: Direction,
    range_m: f64,
    strength: f64,
}

impl ReflectorTarget {
    /// `strength` is a reflection coefficient in [0, 1]; 0 gives no echo.
    pub fn new(direction: Direction, range_m: f64, strength: f64) -> Result<Self> {
        if !(range_m > 0.0) || !range_m.is_finite() {
            return invalid(format!("target range must be positive, got {range_m}"));
        }
        if !(0.0..=1.0).contains(&strength) {
            return invalid(format!(
                "reflection strength must be in [0, 1], got {strength}"
            ));
        }
        Ok(Self {
            direction,
            range_m,
            strength,
        })
    }

    pub fn range_m(&self) -> f64 {
        self.range_m
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }
}

/// Per-ping synthesis settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptureParams {
    /// Samples per channel.
    pub window_samples: usize,
    /// Sample index at which the chirp is emitted.
    pub emission_marker: usize,
    /// Per-sample SNR of a unit-amplitude echo, dB. White noise has standard
    /// deviation `rms(chirp) · 10^(−snr/20)` on every channel.
    pub snr_db: f64,
    pub c_mps: f64,
    /// Channel `l` draws its noise from `seed + l`.
    pub seed: u64,
}

impl CaptureParams {
    pub fn new(window_samples: usize, snr_db: f64, seed: u64) -> Self {
        Self {
            window_samples,
            emission_marker: 0,
            snr_db,
            c_mps: crate::SPEED_OF_SOUND,
            seed,
        }
    }
}

/// Equal-length PCM channels sharing one sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelCapture {
    channels: Vec<PcmTrace>,
    emission_marker: usize,
}

impl MultichannelCapture {
    pub fn new(channels: Vec<PcmTrace>, emission_marker: usize) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::InvalidArgument("capture needs at least one channel".into()))?;
        if channels
            .iter()
            .any(|c| c.len() != first.len() || c.sample_rate_hz() != first.sample_rate_hz())
        {
            return invalid("capture channels must share length and sample rate");
        }
        Ok(Self {
            channels,
            emission_marker,
        })
    }

    pub fn channels(&self) -> &[PcmTrace] {
        &self.channels
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.channels[0].sample_rate_hz()
    }

    pub fn emission_marker(&self) -> usize {
        self.emission_marker
    }

    /// Average over channels (a boresight delay-and-sum).
    pub fn channel_mean(&self) -> PcmTrace {
        let n = self.n_channels() as f64;
        let mut acc = vec![0.0; self.len()];
        for ch in &self.channels {
            for (a, x) in acc.iter_mut().zip(ch.samples()) {
                *a += x / n;
            }
        }
        PcmTrace::new(acc, self.sample_rate_hz()).expect("mean of finite traces")
    }

    /// Writes `manifest.txt` plus one `chNN.pcm` per channel into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>, geometry: &ArrayGeometry) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let manifest = format!(
            "version = 1\nchannels = {}\nsample_rate_hz = {}\nlength = {}\nemission_marker = {}\ngeometry_sha256 = {}\n",
            self.n_channels(),
            self.sample_rate_hz(),
            self.len(),
            self.emission_marker,
            geometry.hash_hex()
        );
        std::fs::write(dir.join("manifest.txt"), manifest)?;
        for (l, ch) in self.channels.iter().enumerate() {
            let f = std::fs::File::create(dir.join(format!("ch{l:02}.pcm")))?;
            ch.write_to(std::io::BufWriter::new(f))?;
        }
        Ok(())
    }

    /// Reads a capture directory, returning it with the recorded geometry hash.
    pub fn read_dir(dir: impl AsRef<Path>) -> Result<(Self, String)> {
        let dir = dir.as_ref();
        let text = std::fs::read_to_string(dir.join("manifest.txt"))?;
        let mut channels = None;
        let mut marker = None;
        let mut hash = String::new();
        for line in text.lines() {
            let Some((k, v)) = line.split_once('=') else {
                continue;
            };
            let v = v.trim();
            let bad = || Error::Format(format!("manifest: bad value for {}", k.trim()));
            match k.trim() {
                "channels" => channels = Some(v.parse::<usize>().map_err(|_| bad())?),
                "emission_marker" => marker = Some(v.parse::<usize>().map_err(|_| bad())?),
                "geometry_sha256" => hash = v.to_string(),
                _ => {}
            }
        }
        let channels = channels.ok_or_else(|| Error::Format("manifest lacks channels".into()))?;
        let marker =
            marker.ok_or_else(|| Error::Format("manifest lacks emission_marker".into()))?;
        let traces = (0..channels)
            .map(|l| {
                let f = std::fs::File::open(dir.join(format!("ch{l:02}.pcm")))?;
                PcmTrace::read_from(std::io::BufReader::new(f))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((Self::new(traces, marker)?, hash))
    }
}

/// Synthesizes one ping as received by every microphone.
///
/// The chirp leaves the emitter at the origin, reflects off the target at
/// `r_s` and reaches element `l` after `(‖r_s‖ + ‖r_s − p_l‖) / c`, scaled by
/// `strength / (‖r_s‖ · ‖r_s − p_l‖)`. A copy of the chirp at −20 dB is added at
/// the emission marker as direct transmit leakage.
pub fn synthesize_capture(
    geometry: &ArrayGeometry,
    target: &ReflectorTarget,
    chirp: &PcmTrace,
    params: &CaptureParams,
) -> Result<MultichannelCapture> {
    crate::geometry::check_wave_params(1.0, params.c_mps)?;
    if params.emission_marker >= params.window_samples {
        return invalid("emission marker lies outside the capture window");
    }
    let fs = chirp.sample_rate_hz();
    let r_s = target.direction.unit_vector() * target.range_m;
    let tx_path = (r_s - geometry.reference_point()).norm();
    let chirp_rms = (chirp.energy() / chirp.len().max(1) as f64).sqrt();
    let noise_sigma = chirp_rms * 10f64.powf(-params.snr_db / 20.0);
    let leakage_gain = 10f64.powf(LEAKAGE_DB / 20.0);

    let channels = geometry
        .elements()
        .iter()
        .enumerate()
        .map(|(l, p)| {
            let rx_path = (r_s - p).norm();
            let delay = params.emission_marker as f64 + (tx_path + rx_path) / params.c_mps * fs;
            if delay >= params.window_samples as f64 {
                return invalid(format!(
                    "echo at sample {delay:.1} falls beyond the {}-sample window",
                    params.window_samples
                ));
            }
            let mut x = vec![0.0; params.window_samples];
            add_delayed(
                &mut x,
                chirp.samples(),
                params.emission_marker as f64,
                leakage_gain,
            );
            if target.strength > 0.0 {
                add_delayed(
                    &mut x,
                    chirp.samples(),
                    delay,
                    target.strength / (tx_path * rx_path),
                );
            }
            if noise_sigma > 0.0 {
                let normal = Normal::new(0.0, noise_sigma).expect("finite sigma");
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(l as u64));
                x.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
            }
            PcmTrace::new(x, fs)
        })
        .collect::<Result<Vec<_>>>()?;
    MultichannelCapture::new(channels, params.emission_marker)
}

const DEMOD_TAPS: usize = 63;
const DEMOD_BETA: f64 = 6.0;

/// Complex envelope around `carrier_hz`: mix with `exp(−j2πf₀t)`, low-pass at
/// `cutoff_hz`, scale by 2. The zero-phase low-pass keeps samples aligned
/// with the input.
pub fn quadrature_demodulate(
    trace: &PcmTrace,
    carrier_hz: f64,
    cutoff_hz: f64,
) -> Result<Vec<Complex64>> {
    let fs = trace.sample_rate_hz();
    if !(carrier_hz > 0.0 && carrier_hz < fs / 2.0) {
        return invalid(format!("carrier {carrier_hz} Hz must lie below Nyquist"));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < fs / 2.0) {
        return invalid(format!("cutoff {cutoff_hz} Hz must lie below Nyquist"));
    }
    let mixed: Vec<Complex64> = trace
        .samples()
        .iter()
        .enumerate()
        .map(|(n, &x)| x * Complex64::from_polar(2.0, -2.0 * PI * carrier_hz * n as f64 / fs))
        .collect();

    let half = (DEMOD_TAPS / 2) as isize;
    let nu = cutoff_hz / fs;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|m| 2.0 * nu * sinc(2.0 * nu * m as f64) * kaiser(m as f64 / half as f64, DEMOD_BETA))
        .collect();
    let dc: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|h| *h /= dc);

    let n = mixed.len() as isize;
    Ok((0..n)
        .map(|i| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, h) in taps.iter().enumerate() {
                let j = i + k as isize - half;
                if j >= 0 && j < n {
                    acc += mixed[j as usize] * h;
                }
            }
            acc
        })
        .collect())
}

/// Snapshot matrix from the demodulated channels over `[gate_start, gate_start + gate_len)`.
pub fn capture_snapshots(
    capture: &MultichannelCapture,
    carrier_hz: f64,
    cutoff_hz: f64,
    gate_start: usize,
    gate_len: usize,
) -> Result<SnapshotBlock> {
    if gate_len == 0 || gate_start + gate_len > capture.len() {
        return invalid(format!(
            "gate [{gate_start}, {}) does not fit a {}-sample capture",
            gate_start + gate_len,
            capture.len()
        ));
    }
    let envelopes = capture
        .channels()
        .iter()
        .map(|c| quadrature_demodulate(c, carrier_hz, cutoff_hz))
        .collect::<Result<Vec<_>>>()?;
    let samples = DMatrix::from_fn(capture.n_channels(), gate_len, |l, n| {
        envelopes[l][gate_start + n]
    });
    SnapshotBlock::new(samples, capture.sample_rate_hz())
}

/// Echo gate `(start, len)` for a target at `range_m`: the chirp's extent
/// after the two-way delay, measured from the emission marker.
pub fn echo_gate(
    range_m: f64,
    c_mps: f64,
    chirp_len: usize,
    sample_rate_hz: f64,
    emission_marker: usize,
) -> (usize, usize) {
    let start = emission_marker + (2.0 * range_m / c_mps * sample_rate_hz).round() as usize;
    (start, chirp_len)
}
