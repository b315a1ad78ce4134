//! Length-prefixed frames.
//!
//! ```text
//! +----------------+------+-----------------+
//! | length: u32 BE | type | payload[length] |
//! +----------------+------+-----------------+
//! ```

use std::io::{self, Read, Write};

use speedlab_core::engines::EngineKind;
use speedlab_core::Direction;

use crate::WireError;

/// Largest payload a frame may carry.
pub const MAX_PAYLOAD: u32 = 1 << 20;
pub const HEADER_LEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameType {
    Data = 0x01,
    CounterReport = 0x02,
    Start = 0x03,
    Result = 0x04,
    Close = 0x05,
}

impl FrameType {
    pub const ALL: [FrameType; 5] = [
        FrameType::Data,
        FrameType::CounterReport,
        FrameType::Start,
        FrameType::Result,
        FrameType::Close,
    ];

    pub fn from_byte(b: u8) -> Result<Self, WireError> {
        match b {
            0x01 => Ok(FrameType::Data),
            0x02 => Ok(FrameType::CounterReport),
            0x03 => Ok(FrameType::Start),
            0x04 => Ok(FrameType::Result),
            0x05 => Ok(FrameType::Close),
            other => Err(WireError::UnknownType(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: FrameType, payload: Vec<u8>) -> Self {
        Frame { kind, payload }
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let len = check_len(self.payload.len())?;
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&len.to_be_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), WireError> {
        w.write_all(&self.encode()?)?;
        Ok(())
    }

    /// Read one whole frame; `None` on a clean end of stream.
    pub fn read_from(r: &mut impl Read) -> Result<Option<Frame>, WireError> {
        let Some((kind, len)) = read_header(r)? else {
            return Ok(None);
        };
        let mut payload = vec![0u8; len as usize];
        r.read_exact(&mut payload).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => WireError::Truncated,
            _ => WireError::Io(e),
        })?;
        Ok(Some(Frame { kind, payload }))
    }

    pub fn decode(bytes: &[u8]) -> Result<Frame, WireError> {
        let mut cur = bytes;
        let frame = Frame::read_from(&mut cur)?.ok_or(WireError::Truncated)?;
        if !cur.is_empty() {
            return Err(WireError::Protocol(format!("{} trailing bytes", cur.len())));
        }
        Ok(frame)
    }
}

fn check_len(len: usize) -> Result<u32, WireError> {
    match u32::try_from(len) {
        Ok(l) if l <= MAX_PAYLOAD => Ok(l),
        _ => Err(WireError::Oversized(len as u64)),
    }
}

/// Read and validate a header; `None` if the stream ends before its first byte.
pub fn read_header(r: &mut impl Read) -> Result<Option<(FrameType, u32)>, WireError> {
    let mut hdr = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut hdr[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(WireError::Truncated),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes([hdr[0], hdr[1], hdr[2], hdr[3]]);
    if len > MAX_PAYLOAD {
        return Err(WireError::Oversized(len as u64));
    }
    Ok(Some((FrameType::from_byte(hdr[4])?, len)))
}

/// Consume `len` payload bytes, reporting each chunk as it arrives.
pub fn drain_payload(
    r: &mut impl Read,
    len: u32,
    scratch: &mut [u8],
    mut on_chunk: impl FnMut(usize),
) -> Result<(), WireError> {
    let mut left = len as usize;
    while left > 0 {
        let want = left.min(scratch.len());
        match r.read(&mut scratch[..want]) {
            Ok(0) => return Err(WireError::Truncated),
            Ok(n) => {
                left -= n;
                on_chunk(n);
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

/// Write a DATA frame whose payload is `payload` (contents are filler).
pub fn write_data(w: &mut impl Write, payload: &[u8]) -> Result<(), WireError> {
    let len = check_len(payload.len())?;
    let mut hdr = [0u8; HEADER_LEN];
    hdr[..4].copy_from_slice(&len.to_be_bytes());
    hdr[4] = FrameType::Data as u8;
    w.write_all(&hdr)?;
    w.write_all(payload)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Start {
    /// Direction of the test from the client's point of view.
    pub direction: Direction,
    pub engine: EngineKind,
}

impl Start {
    pub fn to_frame(self) -> Frame {
        let d = match self.direction {
            Direction::Down => 0,
            Direction::Up => 1,
        };
        let e = match self.engine {
            EngineKind::SingleStream => 0,
            EngineKind::AdaptiveMulti => 1,
        };
        Frame::new(FrameType::Start, vec![d, e])
    }

    pub fn from_frame(f: &Frame) -> Result<Self, WireError> {
        expect(f, FrameType::Start, 2)?;
        let direction = match f.payload[0] {
            0 => Direction::Down,
            1 => Direction::Up,
            b => return Err(WireError::Protocol(format!("bad direction byte {b:#04x}"))),
        };
        let engine = match f.payload[1] {
            0 => EngineKind::SingleStream,
            1 => EngineKind::AdaptiveMulti,
            b => return Err(WireError::Protocol(format!("bad engine byte {b:#04x}"))),
        };
        Ok(Start { direction, engine })
    }
}

/// Receiver-side progress: seconds since the session started and payload
/// bytes received so far.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterReport {
    pub t_offset_s: f64,
    pub bytes_received_cum: u64,
}

impl CounterReport {
    pub fn to_frame(self) -> Frame {
        let mut p = Vec::with_capacity(16);
        p.extend_from_slice(&self.t_offset_s.to_be_bytes());
        p.extend_from_slice(&self.bytes_received_cum.to_be_bytes());
        Frame::new(FrameType::CounterReport, p)
    }

    pub fn from_frame(f: &Frame) -> Result<Self, WireError> {
        expect(f, FrameType::CounterReport, 16)?;
        let (a, b) = split16(&f.payload);
        Ok(CounterReport {
            t_offset_s: f64::from_be_bytes(a),
            bytes_received_cum: u64::from_be_bytes(b),
        })
    }
}

/// Server totals for a finished session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SessionResult {
    pub bytes_received: u64,
    pub bytes_sent: u64,
}

impl SessionResult {
    pub fn to_frame(self) -> Frame {
        let mut p = Vec::with_capacity(16);
        p.extend_from_slice(&self.bytes_received.to_be_bytes());
        p.extend_from_slice(&self.bytes_sent.to_be_bytes());
        Frame::new(FrameType::Result, p)
    }

    pub fn from_frame(f: &Frame) -> Result<Self, WireError> {
        expect(f, FrameType::Result, 16)?;
        let (a, b) = split16(&f.payload);
        Ok(SessionResult {
            bytes_received: u64::from_be_bytes(a),
            bytes_sent: u64::from_be_bytes(b),
        })
    }
}

pub fn close_frame() -> Frame {
    Frame::new(FrameType::Close, Vec::new())
}

fn expect(f: &Frame, kind: FrameType, len: usize) -> Result<(), WireError> {
    if f.kind != kind {
        return Err(WireError::Protocol(format!(
            "expected {kind:?}, got {:?}",
            f.kind
        )));
    }
    if f.payload.len() != len {
        return Err(WireError::Protocol(format!(
            "{kind:?} payload must be {len} bytes, got {}",
            f.payload.len()
        )));
    }
    Ok(())
}

fn split16(p: &[u8]) -> ([u8; 8], [u8; 8]) {
    let mut a = [0u8; 8];
    let mut b = [0u8; 8];
    a.copy_from_slice(&p[..8]);
    b.copy_from_slice(&p[8..16]);
    (a, b)
}
