//! VLC frame codec.
//!
//! Wire format, most significant bit first, NRZ on-off keying with one bit per
//! optical clock period (1.25 ms at 800 Hz):
//!
//! ```text
//! b31 ........ b24 | b23 ..................... b0
//!     preamble     |          payload
//!    1010_1011     |    24-bit unsigned value
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::SignalTrace;

/// Fixed 8-bit frame preamble.
pub const PREAMBLE: u8 = 0b1010_1011;
pub const PREAMBLE_BITS: usize = 8;
pub const PAYLOAD_BITS: usize = 24;
pub const FRAME_BITS: usize = PREAMBLE_BITS + PAYLOAD_BITS;
pub const PAYLOAD_MAX: u32 = (1 << PAYLOAD_BITS) - 1;
/// Default optical clock.
pub const DEFAULT_CLOCK_HZ: f64 = 800.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("payload {0:#x} does not fit in 24 bits")]
    PayloadOutOfRange(u32),
    #[error("no preamble in window")]
    NoPreamble,
    #[error("preamble at bit {offset} leaves only {remaining} of 24 payload bits")]
    Truncated { offset: usize, remaining: usize },
    #[error("trace timestep {dt} s is coarser than a quarter bit period at {clock_hz} Hz")]
    InsufficientResolution { dt: f64, clock_hz: f64 },
    #[error(
        "requested bits [{start}, {end}] s fall outside the trace [{trace_start}, {trace_end}] s"
    )]
    OutOfWindow {
        start: f64,
        end: f64,
        trace_start: f64,
        trace_end: f64,
    },
    #[error("clock frequency must be positive, got {0}")]
    InvalidClock(f64),
}

/// A 24-bit frame payload. Construction rejects values that do not fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Payload(u32);

impl Payload {
    pub fn new(value: u32) -> Result<Self, CodecError> {
        if value > PAYLOAD_MAX {
            return Err(CodecError::PayloadOutOfRange(value));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> u32 {
        self.0
    }
}

impl TryFrom<u32> for Payload {
    type Error = CodecError;

    fn try_from(value: u32) -> Result<Self, Self::Error> {
        Payload::new(value)
    }
}

impl From<Payload> for u32 {
    fn from(p: Payload) -> u32 {
        p.0
    }
}

/// One VLC frame. The preamble is implicit: every constructed frame carries
/// [`PREAMBLE`], and decoding never yields a frame with any other preamble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VlcFrame {
    pub payload: Payload,
}

impl VlcFrame {
    pub fn new(payload: Payload) -> Self {
        Self { payload }
    }

    pub fn from_u32(payload: u32) -> Result<Self, CodecError> {
        Payload::new(payload).map(Self::new)
    }

    pub fn preamble(&self) -> u8 {
        PREAMBLE
    }
}

/// Logic levels at the optical clock rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Bitstream {
    pub bits: Vec<bool>,
    pub clock_hz: f64,
}

impl Bitstream {
    pub fn new(bits: Vec<bool>, clock_hz: f64) -> Result<Self, CodecError> {
        if !(clock_hz > 0.0 && clock_hz.is_finite()) {
            return Err(CodecError::InvalidClock(clock_hz));
        }
        Ok(Self { bits, clock_hz })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bit_period(&self) -> f64 {
        1.0 / self.clock_hz
    }

    /// Air time of the whole stream in seconds.
    pub fn airtime(&self) -> f64 {
        self.bits.len() as f64 / self.clock_hz
    }
}

fn push_msb_first(bits: &mut Vec<bool>, value: u32, width: usize) {
    for i in (0..width).rev() {
        bits.push((value >> i) & 1 == 1);
    }
}

fn preamble_bits() -> [bool; PREAMBLE_BITS] {
    let mut out = [false; PREAMBLE_BITS];
    for (i, b) in out.iter_mut().enumerate() {
        *b = (PREAMBLE >> (PREAMBLE_BITS - 1 - i)) & 1 == 1;
    }
    out
}

pub fn encode_frame(frame: &VlcFrame) -> Bitstream {
    encode_frame_at(frame, DEFAULT_CLOCK_HZ).expect("default clock is valid")
}

pub fn encode_frame_at(frame: &VlcFrame, clock_hz: f64) -> Result<Bitstream, CodecError> {
    let mut bits = Vec::with_capacity(FRAME_BITS);
    push_msb_first(&mut bits, PREAMBLE as u32, PREAMBLE_BITS);
    push_msb_first(&mut bits, frame.payload.value(), PAYLOAD_BITS);
    Bitstream::new(bits, clock_hz)
}

/// Smallest index at which the preamble starts, by linear scan.
pub fn find_preamble(bits: &[bool]) -> Option<usize> {
    let pre = preamble_bits();
    bits.windows(PREAMBLE_BITS).position(|w| w == pre)
}

pub fn decode_frame(stream: &Bitstream) -> Result<VlcFrame, CodecError> {
    decode_bits(&stream.bits)
}

pub fn decode_bits(bits: &[bool]) -> Result<VlcFrame, CodecError> {
    let offset = find_preamble(bits).ok_or(CodecError::NoPreamble)?;
    let start = offset + PREAMBLE_BITS;
    let remaining = bits.len() - start;
    if remaining < PAYLOAD_BITS {
        return Err(CodecError::Truncated { offset, remaining });
    }
    let payload = bits[start..start + PAYLOAD_BITS]
        .iter()
        .fold(0u32, |acc, &b| (acc << 1) | b as u32);
    VlcFrame::from_u32(payload)
}

/// Sample `n_bits` bit periods from a logic trace beginning at `start_time`.
///
/// Each bit is the strict majority of the trace samples (value > 0.5) lying in
/// the central half of its period; ties resolve to 0.
pub fn sample_bits(
    trace: &SignalTrace,
    clock_hz: f64,
    start_time: f64,
    n_bits: usize,
) -> Result<Bitstream, CodecError> {
    if !(clock_hz > 0.0 && clock_hz.is_finite()) {
        return Err(CodecError::InvalidClock(clock_hz));
    }
    let period = 1.0 / clock_hz;
    let eps = trace.dt * 1e-6;
    if trace.dt > period / 4.0 + eps {
        return Err(CodecError::InsufficientResolution {
            dt: trace.dt,
            clock_hz,
        });
    }
    let end = start_time + n_bits as f64 * period;
    if start_time < trace.t0 - eps || end > trace.end() + eps {
        return Err(CodecError::OutOfWindow {
            start: start_time,
            end,
            trace_start: trace.t0,
            trace_end: trace.end(),
        });
    }

    let mut bits = Vec::with_capacity(n_bits);
    for k in 0..n_bits {
        let bit_start = start_time + k as f64 * period;
        let lo = bit_start + period / 4.0;
        let hi = bit_start + 3.0 * period / 4.0;
        let i_lo = (((lo - trace.t0) / trace.dt) - 1e-9).ceil().max(0.0) as usize;
        let i_hi = (((hi - trace.t0) / trace.dt) + 1e-9).floor() as usize;
        let i_hi = i_hi.min(trace.samples.len().saturating_sub(1));
        let (mut ones, mut total) = (0usize, 0usize);
        for &v in trace.samples.get(i_lo..=i_hi).unwrap_or(&[]) {
            total += 1;
            if v > 0.5 {
                ones += 1;
            }
        }
        bits.push(2 * ones > total);
    }
    Bitstream::new(bits, clock_hz)
}

/// Recover a frame from a digitized logic trace with no prior knowledge of
/// where the frame starts.
///
/// Every rising edge is a candidate bit boundary. The bit grid through that
/// edge is extended back to the start of the trace, sampled to the end, and
/// searched for the preamble. Candidates are tried in time order; the first
/// successful decode wins.
pub fn receive_frame(trace: &SignalTrace, clock_hz: f64) -> Result<VlcFrame, CodecError> {
    if !(clock_hz > 0.0 && clock_hz.is_finite()) {
        return Err(CodecError::InvalidClock(clock_hz));
    }
    let period = 1.0 / clock_hz;
    let mut tried_phases: Vec<f64> = Vec::new();
    let mut last_err = CodecError::NoPreamble;

    for i in 1..trace.samples.len() {
        if !(trace.samples[i - 1] <= 0.5 && trace.samples[i] > 0.5) {
            continue;
        }
        let edge = trace.time_at(i);
        let back = ((edge - trace.t0) / period + 1e-9).floor();
        let start = edge - back * period;
        let phase = (start - trace.t0) / period;
        if tried_phases.iter().any(|p| (p - phase).abs() < 0.125) {
            continue;
        }
        tried_phases.push(phase);

        let n_bits = ((trace.end() - start) / period + 1e-9).floor() as usize;
        if n_bits == 0 {
            continue;
        }
        let bits = sample_bits(trace, clock_hz, start, n_bits)?;
        match decode_frame(&bits) {
            Ok(frame) => return Ok(frame),
            Err(e @ CodecError::Truncated { .. }) => last_err = e,
            Err(_) => {}
        }
    }
    Err(last_err)
}
