//! Codeword pipeline: FEC, spreading, one-time pad, masking, and its inverse.
//!
//! * FEC is pluggable through [`ForwardErrorCorrection`]; the default is a
//!   block repetition code (the whole 1000-bit frame repeated `r` times).
//! * Spreading repeats each coded bit over `spread_ratio` consecutive chips.
//! * The one-time pad XORs one pool key bit onto every chip.
//! * Masking XORs a keyed pseudo-random stream derived from the shared mask
//!   seed and the frame id through SplitMix64. It also hides the frame's
//!   CRC-32 integrity tag.
//!
//! Decoding majority-votes the surviving chips of each coded bit, combines the
//! votes of all repetitions, and checks the integrity tag.

use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::rng::{split_seed, SimRng};

pub const FRAME_BYTES: usize = 125;
pub const FRAME_BITS: usize = FRAME_BYTES * 8;

const MASK_CHIP_STREAM: u64 = 0;
const MASK_TAG_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum DecodeError {
    #[error("frame lost: {missing_bits} data bits had no surviving chip")]
    FrameLost { missing_bits: usize },
    #[error("frame corrupt: integrity tag mismatch")]
    FrameCorrupt,
}

/// Geometry of a coded frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameParams {
    pub frame_id: u64,
    pub fec_ratio: u32,
    pub spread_ratio: u32,
}

impl FrameParams {
    pub fn coded_bits(&self) -> usize {
        FRAME_BITS * self.fec_ratio as usize
    }

    pub fn chip_count(&self) -> usize {
        self.coded_bits() * self.spread_ratio as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub payload: [u8; FRAME_BYTES],
    pub frame_id: u64,
    pub fec_ratio: u32,
    pub spread_ratio: u32,
}

impl Frame {
    pub fn new(payload: &[u8], frame_id: u64, fec_ratio: u32, spread_ratio: u32) -> Result<Self, ProtocolError> {
        let payload: [u8; FRAME_BYTES] = payload
            .try_into()
            .map_err(|_| ProtocolError::InvalidFrame(format!("payload is {} bytes, expected {FRAME_BYTES}", payload.len())))?;
        if fec_ratio == 0 || spread_ratio == 0 {
            return Err(ProtocolError::InvalidFrame("fec and spread ratios must be >= 1".into()));
        }
        Ok(Self {
            payload,
            frame_id,
            fec_ratio,
            spread_ratio,
        })
    }

    pub fn params(&self) -> FrameParams {
        FrameParams {
            frame_id: self.frame_id,
            fec_ratio: self.fec_ratio,
            spread_ratio: self.spread_ratio,
        }
    }

    pub fn chip_count(&self) -> usize {
        self.params().chip_count()
    }
}

/// Majority tally of surviving chips for one coded bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Votes {
    pub ones: u32,
    pub total: u32,
}

pub trait ForwardErrorCorrection {
    /// Coded bits per data bit.
    fn ratio(&self) -> u32;
    fn encode(&self, data: &[u8]) -> Vec<u8>;
    /// Decodes `data_len` bits from per-coded-bit votes.
    fn decode(&self, votes: &[Votes], data_len: usize) -> Result<Vec<u8>, DecodeError>;
}

/// Whole-block repetition: coded bit `k * n + i` carries data bit `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepetitionCode {
    pub r: u32,
}

impl ForwardErrorCorrection for RepetitionCode {
    fn ratio(&self) -> u32 {
        self.r
    }

    fn encode(&self, data: &[u8]) -> Vec<u8> {
        data.repeat(self.r as usize)
    }

    fn decode(&self, votes: &[Votes], data_len: usize) -> Result<Vec<u8>, DecodeError> {
        let mut out = Vec::with_capacity(data_len);
        let mut missing = 0;
        for i in 0..data_len {
            let v = (0..self.r as usize).fold(Votes::default(), |acc, k| {
                let c = votes[k * data_len + i];
                Votes {
                    ones: acc.ones + c.ones,
                    total: acc.total + c.total,
                }
            });
            if v.total == 0 {
                missing += 1;
            }
            // Ties fall to 0; the integrity tag catches a wrong guess.
            out.push(u8::from(2 * v.ones > v.total));
        }
        if missing > 0 {
            return Err(DecodeError::FrameLost { missing_bits: missing });
        }
        Ok(out)
    }
}

/// Keyed masking stream. `Masking::none()` disables it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Masking {
    seed: Option<u64>,
}

impl Masking {
    pub fn keyed(mask_seed: u64) -> Self {
        Self { seed: Some(mask_seed) }
    }

    pub fn none() -> Self {
        Self { seed: None }
    }

    pub fn chip_mask(&self, frame_id: u64, n: usize) -> Vec<u8> {
        match self.seed {
            None => vec![0; n],
            Some(s) => {
                let mut rng = SimRng::for_stream(split_seed(s, frame_id), MASK_CHIP_STREAM);
                (0..n).map(|_| rng.bit()).collect()
            }
        }
    }

    pub fn tag_mask(&self, frame_id: u64) -> u32 {
        match self.seed {
            None => 0,
            Some(s) => (SimRng::for_stream(split_seed(s, frame_id), MASK_TAG_STREAM).next_u64() >> 32) as u32,
        }
    }
}

/// Chips of an encoded frame plus its masked integrity tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedFrame {
    pub chips: Vec<u8>,
    pub integrity_tag: u32,
}

pub fn bytes_to_bits(bytes: &[u8]) -> Vec<u8> {
    bytes
        .iter()
        .flat_map(|b| (0..8).rev().map(move |k| (b >> k) & 1))
        .collect()
}

pub fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | (b & 1)) << (8 - c.len()))
        .collect()
}

pub fn integrity_tag(payload: &[u8; FRAME_BYTES], masking: &Masking, frame_id: u64) -> u32 {
    crc32fast::hash(payload) ^ masking.tag_mask(frame_id)
}

/// FEC -> spreading -> one-time pad -> masking, with an explicit code.
pub fn preprocess_with<C: ForwardErrorCorrection>(
    code: &C,
    frame: &Frame,
    key_bits: &[u8],
    masking: &Masking,
) -> Result<EncodedFrame, ProtocolError> {
    let coded = code.encode(&bytes_to_bits(&frame.payload));
    let spread = frame.spread_ratio as usize;
    let n = coded.len() * spread;
    if key_bits.len() < n {
        return Err(ProtocolError::KeyPoolExhausted {
            requested: n as u64,
            available: key_bits.len() as u64,
        });
    }
    let mask = masking.chip_mask(frame.frame_id, n);
    let chips = (0..n)
        .map(|i| coded[i / spread] ^ key_bits[i] ^ mask[i])
        .collect();
    Ok(EncodedFrame {
        chips,
        integrity_tag: integrity_tag(&frame.payload, masking, frame.frame_id),
    })
}

/// Encodes a frame with the repetition code implied by its `fec_ratio`.
pub fn preprocess(frame: &Frame, key_bits: &[u8], masking: &Masking) -> Result<EncodedFrame, ProtocolError> {
    preprocess_with(&RepetitionCode { r: frame.fec_ratio }, frame, key_bits, masking)
}

/// Inverse pipeline over the surviving chips (`None` = not retained).
pub fn decode_with<C: ForwardErrorCorrection>(
    code: &C,
    received: &[Option<u8>],
    params: &FrameParams,
    key_bits: &[u8],
    masking: &Masking,
    tag: u32,
) -> Result<[u8; FRAME_BYTES], DecodeError> {
    let spread = params.spread_ratio as usize;
    let n = params.chip_count();
    assert_eq!(received.len(), n, "received chip count");
    assert!(key_bits.len() >= n, "key stream shorter than frame");
    let mask = masking.chip_mask(params.frame_id, n);
    let mut votes = vec![Votes::default(); params.coded_bits()];
    for (i, chip) in received.iter().enumerate() {
        if let Some(c) = chip {
            let v = &mut votes[i / spread];
            v.total += 1;
            v.ones += u32::from(c ^ key_bits[i] ^ mask[i]);
        }
    }
    let bits = code.decode(&votes, FRAME_BITS)?;
    let payload: [u8; FRAME_BYTES] = bits_to_bytes(&bits).try_into().expect("1000 bits");
    if integrity_tag(&payload, masking, params.frame_id) != tag {
        return Err(DecodeError::FrameCorrupt);
    }
    Ok(payload)
}

pub fn decode(
    received: &[Option<u8>],
    params: &FrameParams,
    key_bits: &[u8],
    masking: &Masking,
    tag: u32,
) -> Result<[u8; FRAME_BYTES], DecodeError> {
    decode_with(&RepetitionCode { r: params.fec_ratio }, received, params, key_bits, masking, tag)
}
