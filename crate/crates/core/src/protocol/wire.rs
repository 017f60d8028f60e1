//! Classical-channel messages and their framing.
//!
//! A frame is a 4-byte big-endian payload length, a 1-byte message type and
//! the payload. Integers inside payloads are big-endian; bit vectors are a
//! `u64` bit count followed by the bits packed MSB-first.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BASIS_ANNOUNCE: u8 = 0x01;
pub const SAMPLE_REQUEST: u8 = 0x02;
pub const SAMPLE_DISCLOSE: u8 = 0x03;
pub const SIFT_MAP: u8 = 0x04;
pub const FRAME_META: u8 = 0x05;
pub const ABORT: u8 = 0x06;
pub const REPORT: u8 = 0x07;

pub const HEADER_LEN: usize = 5;
/// Largest accepted payload.
pub const MAX_PAYLOAD: usize = 64 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte limit")]
    Oversize(usize),
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("truncated payload for message type 0x{0:02x}")]
    Truncated(u8),
    #[error("malformed payload: {0}")]
    Malformed(String),
}

/// Frame decoding outcome reported by the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameStatus {
    Ok = 0,
    Lost = 1,
    Corrupt = 2,
}

impl FrameStatus {
    fn from_u8(b: u8) -> Result<Self, WireError> {
        match b {
            0 => Ok(Self::Ok),
            1 => Ok(Self::Lost),
            2 => Ok(Self::Corrupt),
            _ => Err(WireError::Malformed(format!("frame status {b}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    /// Bob's click pattern and measurement bases for a pulse range.
    BasisAnnounce {
        frame_id: u64,
        start: u64,
        clicks: Vec<bool>,
        bases: Vec<bool>,
    },
    /// Pulse indices whose bits Bob must disclose.
    SampleRequest { frame_id: u64, indices: Vec<u64> },
    SampleDisclose { frame_id: u64, bits: Vec<bool> },
    /// Kept positions and chip carriers for a pulse range.
    SiftMap {
        frame_id: u64,
        start: u64,
        kept: Vec<bool>,
        carriers: Vec<bool>,
    },
    FrameMeta {
        frame_id: u64,
        fec_ratio: u32,
        spread_ratio: u32,
        integrity_tag: u32,
    },
    Abort { reason: String },
    Report {
        frame_id: u64,
        status: FrameStatus,
        /// CRC-32 of the decoded payload, 0 unless `status` is `Ok`.
        digest: u32,
    },
}

impl Message {
    pub fn type_byte(&self) -> u8 {
        match self {
            Message::BasisAnnounce { .. } => BASIS_ANNOUNCE,
            Message::SampleRequest { .. } => SAMPLE_REQUEST,
            Message::SampleDisclose { .. } => SAMPLE_DISCLOSE,
            Message::SiftMap { .. } => SIFT_MAP,
            Message::FrameMeta { .. } => FRAME_META,
            Message::Abort { .. } => ABORT,
            Message::Report { .. } => REPORT,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::BasisAnnounce { .. } => "BASIS_ANNOUNCE",
            Message::SampleRequest { .. } => "SAMPLE_REQUEST",
            Message::SampleDisclose { .. } => "SAMPLE_DISCLOSE",
            Message::SiftMap { .. } => "SIFT_MAP",
            Message::FrameMeta { .. } => "FRAME_META",
            Message::Abort { .. } => "ABORT",
            Message::Report { .. } => "REPORT",
        }
    }

    fn payload(&self) -> Vec<u8> {
        let mut w = Vec::new();
        match self {
            Message::BasisAnnounce { frame_id, start, clicks, bases } => {
                put_u64(&mut w, *frame_id);
                put_u64(&mut w, *start);
                put_bits(&mut w, clicks);
                put_bits(&mut w, bases);
            }
            Message::SampleRequest { frame_id, indices } => {
                put_u64(&mut w, *frame_id);
                put_u64(&mut w, indices.len() as u64);
                indices.iter().for_each(|&i| put_u64(&mut w, i));
            }
            Message::SampleDisclose { frame_id, bits } => {
                put_u64(&mut w, *frame_id);
                put_bits(&mut w, bits);
            }
            Message::SiftMap { frame_id, start, kept, carriers } => {
                put_u64(&mut w, *frame_id);
                put_u64(&mut w, *start);
                put_bits(&mut w, kept);
                put_bits(&mut w, carriers);
            }
            Message::FrameMeta { frame_id, fec_ratio, spread_ratio, integrity_tag } => {
                put_u64(&mut w, *frame_id);
                w.extend_from_slice(&fec_ratio.to_be_bytes());
                w.extend_from_slice(&spread_ratio.to_be_bytes());
                w.extend_from_slice(&integrity_tag.to_be_bytes());
            }
            Message::Abort { reason } => w.extend_from_slice(reason.as_bytes()),
            Message::Report { frame_id, status, digest } => {
                put_u64(&mut w, *frame_id);
                w.push(*status as u8);
                w.extend_from_slice(&digest.to_be_bytes());
            }
        }
        w
    }

    /// Full wire frame: header plus payload.
    pub fn encode(&self) -> Vec<u8> {
        encode_frame(self.type_byte(), &self.payload())
    }

    pub fn decode(msg_type: u8, payload: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader { buf: payload, pos: 0, ty: msg_type };
        let msg = match msg_type {
            BASIS_ANNOUNCE => Message::BasisAnnounce {
                frame_id: r.u64()?,
                start: r.u64()?,
                clicks: r.bits()?,
                bases: r.bits()?,
            },
            SAMPLE_REQUEST => {
                let frame_id = r.u64()?;
                let n = r.u64()?;
                if n > (payload.len() / 8) as u64 {
                    return Err(WireError::Truncated(msg_type));
                }
                let indices = (0..n).map(|_| r.u64()).collect::<Result<_, _>>()?;
                Message::SampleRequest { frame_id, indices }
            }
            SAMPLE_DISCLOSE => Message::SampleDisclose {
                frame_id: r.u64()?,
                bits: r.bits()?,
            },
            SIFT_MAP => Message::SiftMap {
                frame_id: r.u64()?,
                start: r.u64()?,
                kept: r.bits()?,
                carriers: r.bits()?,
            },
            FRAME_META => Message::FrameMeta {
                frame_id: r.u64()?,
                fec_ratio: r.u32()?,
                spread_ratio: r.u32()?,
                integrity_tag: r.u32()?,
            },
            ABORT => {
                let reason = String::from_utf8(r.rest().to_vec())
                    .map_err(|_| WireError::Malformed("abort reason is not UTF-8".into()))?;
                Message::Abort { reason }
            }
            REPORT => Message::Report {
                frame_id: r.u64()?,
                status: FrameStatus::from_u8(r.u8()?)?,
                digest: r.u32()?,
            },
            t => return Err(WireError::UnknownType(t)),
        };
        if r.pos != payload.len() {
            return Err(WireError::Malformed(format!(
                "{} trailing bytes after {}",
                payload.len() - r.pos,
                msg.name()
            )));
        }
        Ok(msg)
    }
}

pub fn encode_frame(msg_type: u8, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.push(msg_type);
    out.extend_from_slice(payload);
    out
}

pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << (7 - i))))
        .collect()
}

pub fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] >> (7 - i % 8) & 1 == 1).collect()
}

fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_be_bytes());
}

fn put_bits(w: &mut Vec<u8>, bits: &[bool]) {
    put_u64(w, bits.len() as u64);
    w.extend_from_slice(&pack_bits(bits));
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    ty: u8,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(WireError::Truncated(self.ty))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bits(&mut self) -> Result<Vec<bool>, WireError> {
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| WireError::Truncated(self.ty))?;
        let bytes = self.take(n.div_ceil(8))?;
        Ok(unpack_bits(bytes, n))
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }
}

/// Incremental frame splitter for byte streams.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes buffered but not yet returned as a frame.
    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next complete `(type, payload)` frame, if one is buffered.
    pub fn next_frame(&mut self) -> Result<Option<(u8, Vec<u8>)>, WireError> {
        if self.buf.len() < HEADER_LEN {
            return Ok(None);
        }
        let len = u32::from_be_bytes(self.buf[..4].try_into().unwrap()) as usize;
        if len > MAX_PAYLOAD {
            return Err(WireError::Oversize(len));
        }
        if self.buf.len() < HEADER_LEN + len {
            return Ok(None);
        }
        let ty = self.buf[4];
        let payload = self.buf[HEADER_LEN..HEADER_LEN + len].to_vec();
        self.buf.drain(..HEADER_LEN + len);
        Ok(Some((ty, payload)))
    }

    pub fn next_message(&mut self) -> Result<Option<Message>, WireError> {
        match self.next_frame()? {
            None => Ok(None),
            Some((ty, p)) => Message::decode(ty, &p).map(Some),
        }
    }
}
