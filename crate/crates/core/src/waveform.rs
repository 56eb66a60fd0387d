//! Probing chirp, matched filtering and time-of-flight ranging.

use std::f64::consts::PI;
use std::io::{Read, Write};

use crate::dsp;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChirpSpec {
    pub f_start_hz: f64,
    pub f_end_hz: f64,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
}

impl Default for ChirpSpec {
    /// 36 → 44 kHz over 3 ms at the decimated PCM rate.
    fn default() -> Self {
        Self {
            f_start_hz: 36_000.0,
            f_end_hz: 44_000.0,
            duration_s: 0.003,
            sample_rate_hz: crate::PCM_RATE_HZ,
        }
    }
}

impl ChirpSpec {
    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate_hz / 2.0;
        if !(self.sample_rate_hz > 0.0) || !self.sample_rate_hz.is_finite() {
            return invalid(format!(
                "chirp.sample_rate_hz must be positive, got {}",
                self.sample_rate_hz
            ));
        }
        for (name, f) in [
            ("chirp.f_start_hz", self.f_start_hz),
            ("chirp.f_end_hz", self.f_end_hz),
        ] {
            if !(f > 0.0 && f < nyquist) {
                return invalid(format!("{name} = {f} must lie in (0, {nyquist})"));
            }
        }
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return invalid(format!(
                "chirp.duration_s must be positive, got {}",
                self.duration_s
            ));
        }
        if self.n_samples() == 0 {
            return invalid("chirp is shorter than one sample");
        }
        Ok(())
    }

    /// `⌊T · fs⌋`.
    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz + 1e-9).floor() as usize
    }

    pub fn bandwidth_hz(&self) -> f64 {
        (self.f_end_hz - self.f_start_hz).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    None,
    Hann,
}

impl std::str::FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "rect" => Ok(Window::None),
            "hann" => Ok(Window::Hann),
            _ => invalid(format!("unknown window '{s}' (expected none or hann)")),
        }
    }
}

/// Real sampled signal.
#[derive(Debug, Clone, PartialEq)]
pub struct PcmTrace {
    samples: Vec<f64>,
    sample_rate_hz: f64,
}

impl PcmTrace {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz > 0.0) || !sample_rate_hz.is_finite() {
            return invalid(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            ));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return invalid("trace contains non-finite samples");
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }

    /// Writes `t_s,value` rows.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let mut out = String::from("t_s,value\n");
        for (n, x) in self.samples.iter().enumerate() {
            out.push_str(&format!("{:.9},{:e}\n", n as f64 / self.sample_rate_hz, x));
        }
        w.write_all(out.as_bytes())?;
        Ok(())
    }
}

const PCM_MAGIC: &[u8; 4] = b"PCM1";
const PCM_VERSION: u32 = 1;

impl PcmTrace {
    /// 32-byte header (`PCM1`, version u32, sample rate f64, length u64,
    /// 8 reserved bytes) followed by little-endian f32 samples.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(32 + 4 * self.len());
        buf.extend_from_slice(PCM_MAGIC);
        buf.extend_from_slice(&PCM_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.sample_rate_hz.to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        buf.extend_from_slice(&[0u8; 8]);
        for x in &self.samples {
            buf.extend_from_slice(&(*x as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut header = [0u8; 32];
        r.read_exact(&mut header)?;
        if &header[0..4] != PCM_MAGIC {
            return Err(Error::Format("bad PCM magic".into()));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != PCM_VERSION {
            return Err(Error::Format(format!("unsupported PCM version {version}")));
        }
        let rate = f64::from_le_bytes(header[8..16].try_into().unwrap());
        let len = u64::from_le_bytes(header[16..24].try_into().unwrap());
        if len > (1 << 32) {
            return Err(Error::Format("PCM length too large".into()));
        }
        let mut body = vec![0u8; len as usize * 4];
        r.read_exact(&mut body)?;
        let samples = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::new(samples, rate)
    }
}

/// `s[n] = win[n] · sin(2π (f0 t + (f1 − f0) t² / 2T))`, `t = n / fs`.
pub fn generate_chirp(spec: &ChirpSpec, window: Window) -> Result<PcmTrace> {
    spec.validate()?;
    let n = spec.n_samples();
    let rate = (spec.f_end_hz - spec.f_start_hz) / (2.0 * spec.duration_s);
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / spec.sample_rate_hz;
            let w = match window {
                Window::None => 1.0,
                Window::Hann if n > 1 => 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos(),
                Window::Hann => 1.0,
            };
            w * (2.0 * PI * (spec.f_start_hz * t + rate * t * t)).sin()
        })
        .collect();
    PcmTrace::new(samples, spec.sample_rate_hz)
}

/// Cross-correlation of `received` with `template`; output index = lag in samples.
pub fn matched_filter(received: &PcmTrace, template: &PcmTrace) -> Result<PcmTrace> {
    if template.is_empty() {
        return invalid("matched-filter template is empty");
    }
    if received.sample_rate_hz() != template.sample_rate_hz() {
        return invalid(format!(
            "sample rate mismatch: received {} Hz, template {} Hz",
            received.sample_rate_hz(),
            template.sample_rate_hz()
        ));
    }
    PcmTrace::new(
        dsp::cross_correlate(received.samples(), template.samples()),
        received.sample_rate_hz(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeEstimate {
    /// Matched-filter lag of the peak, samples.
    pub peak_index: usize,
    /// Two-way travel time from emission start, s.
    pub delay_s: f64,
    /// `c · delay / 2`, m.
    pub range_m: f64,
    pub peak_value: f64,
    /// Peak over the median |output| away from the peak, dB.
    pub peak_to_noise_db: f64,
}

/// Time-of-flight from the matched-filter peak.
///
/// The peak is rejected when it precedes `emission_start_index` or when the
/// echo it belongs to would run past the end of the trace.
pub fn estimate_range(
    mf_output: &PcmTrace,
    emission_start_index: usize,
    template_len: usize,
    c_mps: f64,
) -> Result<RangeEstimate> {
    if mf_output.is_empty() {
        return invalid("matched-filter output is empty");
    }
    if !(c_mps > 0.0) {
        return invalid(format!("speed of sound must be positive, got {c_mps}"));
    }
    let y = mf_output.samples();
    let peak_index = y
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > y[best] { i } else { best });
    if peak_index < emission_start_index {
        return Err(Error::UnreliableEstimate(format!(
            "peak at sample {peak_index} precedes the emission at {emission_start_index}"
        )));
    }
    if peak_index + template_len > y.len() {
        return Err(Error::UnreliableEstimate(format!(
            "peak at sample {peak_index} is within one template length of the trace end ({})",
            y.len()
        )));
    }

    let guard = 2 * template_len;
    let mut outside: Vec<f64> = y
        .iter()
        .enumerate()
        .filter(|(i, _)| i.abs_diff(peak_index) > guard)
        .map(|(_, v)| v.abs())
        .collect();
    let peak_value = y[peak_index];
    let peak_to_noise_db = if outside.is_empty() {
        f64::INFINITY
    } else {
        let mid = outside.len() / 2;
        let (_, median, _) = outside.select_nth_unstable_by(mid, f64::total_cmp);
        if *median > 0.0 {
            20.0 * (peak_value.abs() / *median).log10()
        } else {
            f64::INFINITY
        }
    };

    let delay_s = (peak_index - emission_start_index) as f64 / mf_output.sample_rate_hz();
    Ok(RangeEstimate {
        peak_index,
        delay_s,
        range_m: c_mps * delay_s / 2.0,
        peak_value,
        peak_to_noise_db,
    })
}
