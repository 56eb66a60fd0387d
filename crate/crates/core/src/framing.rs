//! Binary frame wire format and an incremental, resynchronizing parser.
//!
//! Layout (little-endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `A5 5A 52 54`           |
//! | 4      | 1    | version (1)                   |
//! | 5      | 1    | channel count                 |
//! | 6      | 2    | reserved (0)                  |
//! | 8      | 4    | sequence                      |
//! | 12     | 8    | timestamp, PDM clock ticks    |
//! | 20     | 4    | samples per channel           |
//! | 24     | n    | payload, channel-major bits   |
//! | 24+n   | 4    | CRC-32 over header + payload  |

use std::time::{Duration, Instant};

use crate::acquisition::pdm::PdmStream;
use crate::error::{invalid, Result};

pub const MAGIC: [u8; 4] = [0xA5, 0x5A, 0x52, 0x54];
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 24;
pub const CRC_LEN: usize = 4;
pub const MAX_PAYLOAD: usize = 1 << 20;

/// One buffered multichannel PDM block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub sequence: u32,
    pub timestamp_ticks: u64,
    channel_count: u8,
    samples_per_channel: u32,
    payload: Vec<u8>,
}

fn check_shape(channel_count: u8, samples_per_channel: u32) -> Result<usize> {
    if channel_count == 0 {
        return invalid("frame needs at least one channel");
    }
    if samples_per_channel == 0 || !samples_per_channel.is_multiple_of(8) {
        return invalid(format!(
            "samples per channel must be a positive multiple of 8, got {samples_per_channel}"
        ));
    }
    let len = channel_count as usize * samples_per_channel as usize / 8;
    if len > MAX_PAYLOAD {
        return invalid(format!(
            "payload of {len} bytes exceeds the {MAX_PAYLOAD}-byte limit"
        ));
    }
    Ok(len)
}

impl Frame {
    pub fn new(
        sequence: u32,
        timestamp_ticks: u64,
        channel_count: u8,
        samples_per_channel: u32,
        payload: Vec<u8>,
    ) -> Result<Self> {
        let len = check_shape(channel_count, samples_per_channel)?;
        if payload.len() != len {
            return invalid(format!(
                "{channel_count} channels x {samples_per_channel} samples need {len} payload bytes, got {}",
                payload.len()
            ));
        }
        Ok(Self {
            sequence,
            timestamp_ticks,
            channel_count,
            samples_per_channel,
            payload,
        })
    }

    /// Packs equal-length channel streams (in order) into one frame.
    pub fn from_channels(
        sequence: u32,
        timestamp_ticks: u64,
        channels: &[PdmStream],
    ) -> Result<Self> {
        let Some(first) = channels.first() else {
            return invalid("frame needs at least one channel");
        };
        if channels.len() > u8::MAX as usize {
            return invalid(format!(
                "{} channels exceed the 255-channel limit",
                channels.len()
            ));
        }
        if channels.iter().any(|c| c.len() != first.len()) {
            return invalid("frame channels must have equal length");
        }
        let spc =
            u32::try_from(first.len()).or_else(|_| invalid("channel too long for one frame"))?;
        check_shape(channels.len() as u8, spc)?;
        let payload = channels
            .iter()
            .flat_map(|c| c.bytes().iter().copied())
            .collect();
        Self::new(
            sequence,
            timestamp_ticks,
            channels.len() as u8,
            spc,
            payload,
        )
    }

    pub fn channel_count(&self) -> u8 {
        self.channel_count
    }

    pub fn samples_per_channel(&self) -> u32 {
        self.samples_per_channel
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    /// Bits of channel `ch` as a stream at `rate_hz`.
    pub fn channel_stream(&self, ch: u8, rate_hz: u64) -> Result<PdmStream> {
        if ch >= self.channel_count {
            return invalid(format!(
                "channel {ch} out of range for a {}-channel frame",
                self.channel_count
            ));
        }
        let per = self.samples_per_channel as usize / 8;
        let start = ch as usize * per;
        PdmStream::from_packed(
            self.payload[start..start + per].to_vec(),
            self.samples_per_channel as usize,
            rate_hz,
            ch as u16,
        )
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len() + CRC_LEN
    }
}

pub fn encode_frame(f: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(f.encoded_len());
    encode_frame_into(f, &mut out);
    out
}

/// Appends the encoded frame to `out`.
pub fn encode_frame_into(f: &Frame, out: &mut Vec<u8>) {
    let start = out.len();
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(f.channel_count);
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&f.sequence.to_le_bytes());
    out.extend_from_slice(&f.timestamp_ticks.to_le_bytes());
    out.extend_from_slice(&f.samples_per_channel.to_le_bytes());
    out.extend_from_slice(&f.payload);
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StreamEvent {
    Frame(Frame),
    /// A well-formed header whose CRC did not match; `sequence` is as read
    /// from the (possibly corrupted) header.
    CrcMismatch {
        sequence: u32,
    },
    /// The parser skipped `bytes` bytes before finding the next frame (or
    /// reaching end of stream).
    Resync {
        bytes: u64,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamStats {
    pub frames_ok: u64,
    /// Frames missing from the sequence numbering.
    pub frames_lost: u64,
    pub resyncs: u64,
    pub bytes_discarded: u64,
    pub crc_errors: u64,
}

impl std::fmt::Display for StreamStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "frames_ok = {}", self.frames_ok)?;
        writeln!(f, "frames_lost = {}", self.frames_lost)?;
        writeln!(f, "crc_errors = {}", self.crc_errors)?;
        writeln!(f, "resyncs = {}", self.resyncs)?;
        write!(f, "bytes_discarded = {}", self.bytes_discarded)
    }
}

/// Sequence jumps at or beyond this distance are treated as reordering, not loss.
const GAP_WINDOW: u32 = 1 << 31;

enum Step {
    NeedMore,
    Discard,
    Accept(Frame, usize),
    Crc(u32),
}

/// Incremental frame parser.
///
/// Decisions are made only on complete data, so any chunking of the same
/// byte stream yields the same events. On a bad header or CRC failure the
/// parser drops a single byte and rescans for the magic.
#[derive(Debug, Default)]
pub struct StreamParser {
    buf: Vec<u8>,
    pos: usize,
    run: u64,
    last_sequence: Option<u32>,
    stats: StreamStats,
}

impl StreamParser {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> StreamStats {
        self.stats
    }

    pub fn feed(&mut self, bytes: &[u8]) -> Vec<StreamEvent> {
        let mut events = Vec::new();
        self.feed_with(bytes, |e| events.push(e));
        events
    }

    /// Like [`feed`](Self::feed) but hands events to a callback.
    pub fn feed_with(&mut self, bytes: &[u8], mut sink: impl FnMut(StreamEvent)) {
        if self.pos > 0 && self.pos >= self.buf.len() / 2 {
            self.buf.drain(..self.pos);
            self.pos = 0;
        }
        self.buf.extend_from_slice(bytes);
        self.drain(false, &mut sink);
    }

    /// Flushes the tail at end of stream: incomplete candidates are discarded.
    pub fn finish(&mut self) -> Vec<StreamEvent> {
        let mut events = Vec::new();
        self.drain(true, &mut |e| events.push(e));
        self.buf.clear();
        self.pos = 0;
        events
    }

    fn drain(&mut self, eof: bool, sink: &mut impl FnMut(StreamEvent)) {
        loop {
            match self.step() {
                Step::NeedMore if eof && self.pos < self.buf.len() => self.discard(1),
                Step::NeedMore => break,
                Step::Discard => self.discard(1),
                Step::Crc(sequence) => {
                    self.stats.crc_errors += 1;
                    sink(StreamEvent::CrcMismatch { sequence });
                    self.discard(1);
                }
                Step::Accept(frame, len) => {
                    self.flush_run(sink);
                    self.pos += len;
                    self.account(frame.sequence);
                    sink(StreamEvent::Frame(frame));
                }
            }
        }
        if eof {
            self.flush_run(sink);
        }
    }

    fn discard(&mut self, n: usize) {
        self.pos += n;
        self.run += n as u64;
        self.stats.bytes_discarded += n as u64;
    }

    fn flush_run(&mut self, sink: &mut impl FnMut(StreamEvent)) {
        if self.run > 0 {
            self.stats.resyncs += 1;
            sink(StreamEvent::Resync { bytes: self.run });
            self.run = 0;
        }
    }

    fn account(&mut self, sequence: u32) {
        self.stats.frames_ok += 1;
        if let Some(prev) = self.last_sequence {
            let gap = sequence.wrapping_sub(prev).wrapping_sub(1);
            if gap < GAP_WINDOW {
                self.stats.frames_lost += gap as u64;
            }
        }
        self.last_sequence = Some(sequence);
    }

    fn step(&self) -> Step {
        let b = &self.buf[self.pos..];
        let m = b.len().min(MAGIC.len());
        if b[..m] != MAGIC[..m] {
            return Step::Discard;
        }
        if b.len() < HEADER_LEN {
            return Step::NeedMore;
        }
        let version = b[4];
        let channels = b[5];
        let reserved = u16::from_le_bytes([b[6], b[7]]);
        let sequence = u32::from_le_bytes(b[8..12].try_into().unwrap());
        let timestamp = u64::from_le_bytes(b[12..20].try_into().unwrap());
        let spc = u32::from_le_bytes(b[20..24].try_into().unwrap());
        if version != VERSION || reserved != 0 {
            return Step::Discard;
        }
        let Ok(payload_len) = check_shape(channels, spc) else {
            return Step::Discard;
        };
        let total = HEADER_LEN + payload_len + CRC_LEN;
        if b.len() < total {
            return Step::NeedMore;
        }
        let body = &b[..HEADER_LEN + payload_len];
        let crc = u32::from_le_bytes(b[total - CRC_LEN..total].try_into().unwrap());
        if crc32fast::hash(body) != crc {
            return Step::Crc(sequence);
        }
        let frame = Frame {
            sequence,
            timestamp_ticks: timestamp,
            channel_count: channels,
            samples_per_channel: spc,
            payload: body[HEADER_LEN..].to_vec(),
        };
        Step::Accept(frame, total)
    }
}

/// Parses a complete byte stream in one go.
pub fn parse_stream(bytes: &[u8]) -> (Vec<StreamEvent>, StreamStats) {
    let mut p = StreamParser::new();
    let mut events = p.feed(bytes);
    events.extend(p.finish());
    (events, p.stats())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThroughputReport {
    pub bytes_parsed: u64,
    pub frames_parsed: u64,
    pub elapsed: Duration,
}

impl ThroughputReport {
    pub fn bytes_per_second(&self) -> f64 {
        self.bytes_parsed as f64 / self.elapsed.as_secs_f64().max(1e-9)
    }

    pub fn megabits_per_second(&self) -> f64 {
        self.bytes_per_second() * 8.0 / 1e6
    }
}

impl std::fmt::Display for ThroughputReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "parsed {} frames / {} bytes in {:.3} s: {:.1} MB/s ({:.1} Mb/s)",
            self.frames_parsed,
            self.bytes_parsed,
            self.elapsed.as_secs_f64(),
            self.bytes_per_second() / 1e6,
            self.megabits_per_second()
        )
    }
}

/// Feeds 16-channel frames of `samples_per_channel` samples through a parser
/// for roughly `duration`, in 64 KiB chunks.
pub fn stream_throughput_bench(
    samples_per_channel: u32,
    duration: Duration,
) -> Result<ThroughputReport> {
    const CHANNELS: u8 = crate::DEFAULT_ELEMENTS as u8;
    const FRAMES_PER_BLOCK: u32 = 64;
    const CHUNK: usize = 64 * 1024;
    let len = check_shape(CHANNELS, samples_per_channel)?;
    let mut block = Vec::new();
    for k in 0..FRAMES_PER_BLOCK {
        let payload = (0..len)
            .map(|i| (i as u32).wrapping_mul(2_654_435_761).wrapping_add(k) as u8)
            .collect();
        let f = Frame::new(
            k,
            k as u64 * samples_per_channel as u64,
            CHANNELS,
            samples_per_channel,
            payload,
        )?;
        encode_frame_into(&f, &mut block);
    }

    let mut parser = StreamParser::new();
    let mut bytes_parsed = 0u64;
    let start = Instant::now();
    while start.elapsed() < duration || bytes_parsed == 0 {
        for chunk in block.chunks(CHUNK) {
            parser.feed_with(chunk, |e| {
                std::hint::black_box(e);
            });
        }
        bytes_parsed += block.len() as u64;
    }
    let elapsed = start.elapsed();
    let stats = parser.stats();
    if stats.bytes_discarded != 0 || stats.crc_errors != 0 {
        return invalid("benchmark stream did not parse cleanly");
    }
    Ok(ThroughputReport {
        bytes_parsed,
        frames_parsed: stats.frames_ok,
        elapsed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(seq: u32, spc: u32, fill: u8) -> Frame {
        Frame::new(
            seq,
            seq as u64 * 1000,
            2,
            spc,
            vec![fill; 2 * spc as usize / 8],
        )
        .unwrap()
    }

    fn frames(events: &[StreamEvent]) -> Vec<&Frame> {
        events
            .iter()
            .filter_map(|e| match e {
                StreamEvent::Frame(f) => Some(f),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn minimal_frame_layout() {
        let f = Frame::new(7, 9, 1, 8, vec![0x00]).unwrap();
        let bytes = encode_frame(&f);
        assert_eq!(bytes.len(), HEADER_LEN + 1 + CRC_LEN);
        assert_eq!(&bytes[..8], &[0xA5, 0x5A, 0x52, 0x54, 1, 1, 0, 0]);
        assert_eq!(&bytes[8..12], &7u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &9u64.to_le_bytes());
        assert_eq!(&bytes[20..24], &8u32.to_le_bytes());
        // independent CRC-32 (reflected 0xEDB88320) of header + payload
        let mut crc = 0xFFFF_FFFFu32;
        for &b in &bytes[..25] {
            crc ^= b as u32;
            for _ in 0..8 {
                crc = if crc & 1 != 0 {
                    (crc >> 1) ^ 0xEDB8_8320
                } else {
                    crc >> 1
                };
            }
        }
        assert_eq!(&bytes[25..], &(!crc).to_le_bytes());
        let (events, stats) = parse_stream(&bytes);
        assert_eq!(events, vec![StreamEvent::Frame(f)]);
        assert_eq!(stats.frames_ok, 1);
    }

    #[test]
    fn crc_check_value() {
        assert_eq!(crc32fast::hash(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn rejects_malformed_frames() {
        assert!(Frame::new(0, 0, 0, 8, vec![]).is_err());
        assert!(Frame::new(0, 0, 1, 12, vec![0, 0]).is_err());
        assert!(Frame::new(0, 0, 1, 8, vec![0, 0]).is_err());
        let huge = (MAX_PAYLOAD * 8 / 16 + 8) as u32;
        assert!(Frame::new(0, 0, 16, huge, vec![0; 16 * huge as usize / 8]).is_err());
    }

    #[test]
    fn consecutive_and_gapped_sequences() {
        let mut bytes = encode_frame(&frame(10, 16, 1));
        bytes.extend(encode_frame(&frame(11, 16, 2)));
        assert_eq!(parse_stream(&bytes).1.frames_lost, 0);
        bytes.extend(encode_frame(&frame(16, 16, 3)));
        assert_eq!(parse_stream(&bytes).1.frames_lost, 4);
    }

    #[test]
    fn sequence_wraps() {
        let mut bytes = encode_frame(&frame(u32::MAX, 8, 0));
        bytes.extend(encode_frame(&frame(0, 8, 0)));
        let (_, stats) = parse_stream(&bytes);
        assert_eq!(stats.frames_lost, 0);
        assert_eq!(stats.frames_ok, 2);
    }

    #[test]
    fn garbage_between_frames() {
        let mut bytes = encode_frame(&frame(0, 16, 1));
        bytes.extend([0x11, 0xA5, 0x5A]);
        bytes.extend(encode_frame(&frame(1, 16, 2)));
        let (events, stats) = parse_stream(&bytes);
        assert_eq!(frames(&events).len(), 2);
        assert_eq!(stats.bytes_discarded, 3);
        assert_eq!(stats.resyncs, 1);
        assert!(events.contains(&StreamEvent::Resync { bytes: 3 }));
    }

    #[test]
    fn flipped_payload_bit_drops_only_that_frame() {
        let mut bytes = Vec::new();
        for s in 0..5 {
            encode_frame_into(&frame(s, 16, s as u8), &mut bytes);
        }
        let flen = frame(0, 16, 0).encoded_len();
        bytes[2 * flen + HEADER_LEN + 1] ^= 0x10;
        let (events, stats) = parse_stream(&bytes);
        let seqs: Vec<u32> = frames(&events).iter().map(|f| f.sequence).collect();
        assert_eq!(seqs, vec![0, 1, 3, 4]);
        assert_eq!(stats.crc_errors, 1);
        assert_eq!(stats.frames_lost, 1);
        assert_eq!(stats.bytes_discarded, flen as u64);
        assert!(events.contains(&StreamEvent::CrcMismatch { sequence: 2 }));
    }

    #[test]
    fn truncated_tail_is_discarded_at_finish() {
        let mut bytes = encode_frame(&frame(0, 16, 1));
        let second = encode_frame(&frame(1, 16, 1));
        bytes.extend(&second[..10]);
        let mut p = StreamParser::new();
        assert_eq!(frames(&p.feed(&bytes)).len(), 1);
        assert_eq!(p.finish(), vec![StreamEvent::Resync { bytes: 10 }]);
        assert_eq!(p.stats().bytes_discarded, 10);
    }

    #[test]
    fn empty_stream() {
        let (events, stats) = parse_stream(&[]);
        assert!(events.is_empty());
        assert_eq!(stats, StreamStats::default());
    }

    #[test]
    fn channel_streams_round_trip() {
        let a = PdmStream::from_bits((0..16).map(|i| i % 3 == 0), 4_450_000, 0).unwrap();
        let b = PdmStream::from_bits((0..16).map(|i| i % 5 == 0), 4_450_000, 1).unwrap();
        let f = Frame::from_channels(3, 0, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(f.channel_stream(0, 4_450_000).unwrap(), a);
        assert_eq!(f.channel_stream(1, 4_450_000).unwrap(), b);
        assert!(f.channel_stream(2, 4_450_000).is_err());
    }

    #[test]
    fn bench_reports_clean_parse() {
        let r = stream_throughput_bench(64, Duration::from_millis(5)).unwrap();
        assert!(r.bytes_parsed > 0);
        assert!(r.bytes_per_second() > 0.0);
    }
}
