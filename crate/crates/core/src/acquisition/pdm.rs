//! 1-bit pulse-density streams and the second-order sigma-delta modulator.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::waveform::PcmTrace;

/// Packed PDM bit stream, MSB first within each byte.
///
/// Trailing bits of the last byte past `bit_len` are zero and ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PdmStream {
    bytes: Vec<u8>,
    bit_len: usize,
    rate_hz: u64,
    channel: u16,
}

impl PdmStream {
    pub fn from_packed(bytes: Vec<u8>, bit_len: usize, rate_hz: u64, channel: u16) -> Result<Self> {
        if rate_hz == 0 {
            return invalid("PDM rate must be positive");
        }
        if bytes.len() != bit_len.div_ceil(8) {
            return invalid(format!(
                "{} bytes cannot hold exactly {bit_len} bits",
                bytes.len()
            ));
        }
        let mut s = Self {
            bytes,
            bit_len,
            rate_hz,
            channel,
        };
        s.clear_padding();
        Ok(s)
    }

    pub fn from_bits(
        bits: impl IntoIterator<Item = bool>,
        rate_hz: u64,
        channel: u16,
    ) -> Result<Self> {
        let mut bytes = Vec::new();
        let mut bit_len = 0;
        for b in bits {
            if bit_len % 8 == 0 {
                bytes.push(0);
            }
            if b {
                *bytes.last_mut().unwrap() |= 0x80 >> (bit_len % 8);
            }
            bit_len += 1;
        }
        Self::from_packed(bytes, bit_len, rate_hz, channel)
    }

    fn clear_padding(&mut self) {
        let used = self.bit_len % 8;
        if used != 0 {
            if let Some(last) = self.bytes.last_mut() {
                *last &= 0xFFu8 << (8 - used);
            }
        }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn len(&self) -> usize {
        self.bit_len
    }

    pub fn is_empty(&self) -> bool {
        self.bit_len == 0
    }

    pub fn rate_hz(&self) -> u64 {
        self.rate_hz
    }

    pub fn channel(&self) -> u16 {
        self.channel
    }

    pub fn bit(&self, i: usize) -> bool {
        debug_assert!(i < self.bit_len);
        self.bytes[i / 8] & (0x80 >> (i % 8)) != 0
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.bit_len).map(|i| self.bit(i))
    }

    /// Fraction of ones.
    pub fn density(&self) -> f64 {
        if self.bit_len == 0 {
            return 0.0;
        }
        let ones: u32 = self.bytes.iter().map(|b| b.count_ones()).sum();
        ones as f64 / self.bit_len as f64
    }
}

const PDM_MAGIC: &[u8; 4] = b"PDM1";
const PDM_VERSION: u16 = 1;

impl PdmStream {
    /// 24-byte header (`PDM1`, version u16, channel u16, rate u64 Hz,
    /// bit count u64), then the packed bits. Little-endian.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut header = Vec::with_capacity(24);
        header.extend_from_slice(PDM_MAGIC);
        header.extend_from_slice(&PDM_VERSION.to_le_bytes());
        header.extend_from_slice(&self.channel.to_le_bytes());
        header.extend_from_slice(&self.rate_hz.to_le_bytes());
        header.extend_from_slice(&(self.bit_len as u64).to_le_bytes());
        w.write_all(&header)?;
        w.write_all(&self.bytes)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut header = [0u8; 24];
        r.read_exact(&mut header)?;
        if &header[0..4] != PDM_MAGIC {
            return Err(Error::Format("bad PDM magic".into()));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != PDM_VERSION {
            return Err(Error::Format(format!("unsupported PDM version {version}")));
        }
        let channel = u16::from_le_bytes([header[6], header[7]]);
        let rate = u64::from_le_bytes(header[8..16].try_into().unwrap());
        let bit_len = u64::from_le_bytes(header[16..24].try_into().unwrap());
        if bit_len > (1 << 40) {
            return Err(Error::Format("PDM bit count too large".into()));
        }
        let mut bytes = vec![0u8; (bit_len as usize).div_ceil(8)];
        r.read_exact(&mut bytes)?;
        Self::from_packed(bytes, bit_len as usize, rate, channel)
    }
}

/// Integrator clip level of the modulator.
const INTEGRATOR_LIMIT: f64 = 4.0;
/// Peak amplitude of the uniform dither at the quantizer input.
const DITHER: f64 = 1e-3;

/// Upsampling ratio between a trace and a target PDM rate, if integral.
pub(crate) fn oversampling_ratio(trace_rate_hz: f64, target_rate_hz: f64) -> Result<usize> {
    if !(trace_rate_hz > 0.0) || !(target_rate_hz > 0.0) {
        return invalid("rates must be positive");
    }
    let ratio = target_rate_hz / trace_rate_hz;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * ratio {
        return invalid(format!(
            "PDM rate {target_rate_hz} Hz is not an integer multiple of the trace rate {trace_rate_hz} Hz"
        ));
    }
    Ok(rounded as usize)
}

/// Zero-order-hold upsampling to `target_rate_hz` followed by a second-order
/// sigma-delta loop with a one-bit quantizer.
///
/// Loop: `s1 += x − y`, `s2 += s1 − y`, `y = sgn(s2)`, giving `Y = X + (1 − z⁻¹)² E`.
/// Integrators are clipped at ±4. The hold is centred on each PCM sample
/// (`ratio / 2` bits before, the rest after). `rng_seed` drives a tiny
/// quantizer dither that breaks idle tones.
pub fn pdm_modulate(
    trace: &PcmTrace,
    target_rate_hz: f64,
    channel: u16,
    rng_seed: u64,
) -> Result<PdmStream> {
    let ratio = oversampling_ratio(trace.sample_rate_hz(), target_rate_hz)?;
    if let Some(x) = trace.samples().iter().find(|x| x.abs() > 1.0) {
        return invalid(format!("PDM input must satisfy |x| <= 1, found {x}"));
    }
    let n = trace.len();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (mut s1, mut s2) = (0.0f64, 0.0f64);
    let mut y = 1.0f64;
    let total = n * ratio;
    let mut bytes = vec![0u8; total.div_ceil(8)];
    let x = trace.samples();
    for i in 0..total {
        let j = ((i + ratio / 2) / ratio).min(n - 1);
        s1 = (s1 + x[j] - y).clamp(-INTEGRATOR_LIMIT, INTEGRATOR_LIMIT);
        s2 = (s2 + s1 - y).clamp(-INTEGRATOR_LIMIT, INTEGRATOR_LIMIT);
        let dither = DITHER * (2.0 * rng.random::<f64>() - 1.0);
        y = if s2 + dither >= 0.0 { 1.0 } else { -1.0 };
        if y > 0.0 {
            bytes[i / 8] |= 0x80 >> (i % 8);
        }
    }
    PdmStream::from_packed(bytes, total, target_rate_hz.round() as u64, channel)
}
