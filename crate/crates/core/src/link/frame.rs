//! Binary frame layout (all integers and floats little-endian):
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 4    | magic `"SDM1"`                 |
//! | 4      | 1    | version (1)                    |
//! | 5      | 1    | kind                           |
//! | 6      | 4    | seq, u32                       |
//! | 10     | 8    | t_us, u64                      |
//! | 18     | 1    | n, joint count                 |
//! | 19     | 24·n | n × (q, qd, tau_ext) as f64    |
//! | 19+24n | 4    | CRC-32 (IEEE) of bytes before  |

use alloc::vec::Vec;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::JointState;

pub const FRAME_MAGIC: [u8; 4] = *b"SDM1";
pub const FRAME_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 19;
const CRC_LEN: usize = 4;
const SAMPLE_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum FrameKind {
    JointState = 1,
    TorqueCmd = 2,
    Heartbeat = 3,
}

impl FrameKind {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(FrameKind::JointState),
            2 => Some(FrameKind::TorqueCmd),
            3 => Some(FrameKind::Heartbeat),
            _ => None,
        }
    }
}

/// One joint's `(q, qd, tau_ext)` triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointSample {
    pub q: f64,
    pub qd: f64,
    pub tau_ext: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub kind: FrameKind,
    pub seq: u32,
    pub t_us: u64,
    pub payload: Vec<JointSample>,
}

impl Frame {
    pub fn heartbeat(seq: u32, t_us: u64) -> Self {
        Self { kind: FrameKind::Heartbeat, seq, t_us, payload: Vec::new() }
    }

    pub fn joint_state(seq: u32, t_us: u64, state: &JointState) -> Self {
        let payload = (0..state.q.len())
            .map(|i| JointSample { q: state.q[i], qd: state.qd[i], tau_ext: state.tau_ext[i] })
            .collect();
        Self { kind: FrameKind::JointState, seq, t_us, payload }
    }

    pub fn to_joint_state(&self) -> JointState {
        let n = self.payload.len();
        JointState {
            q: DVector::from_iterator(n, self.payload.iter().map(|s| s.q)),
            qd: DVector::from_iterator(n, self.payload.iter().map(|s| s.qd)),
            tau_ext: DVector::from_iterator(n, self.payload.iter().map(|s| s.tau_ext)),
        }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + SAMPLE_LEN * self.payload.len() + CRC_LEN
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown frame kind {0}")]
    BadKind(u8),
    #[error("truncated frame: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("frame length {have} does not match joint count (expected {expected})")]
    LengthMismatch { expected: usize, have: usize },
    #[error("checksum mismatch")]
    ChecksumMismatch,
    #[error("invalid joint count {0} for frame kind")]
    BadJointCount(usize),
}

fn crc32(bytes: &[u8]) -> u32 {
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(bytes);
    hasher.finalize()
}

/// Serializes a frame. State and command frames need at least one joint;
/// heartbeats carry none.
pub fn encode(frame: &Frame) -> Result<Vec<u8>, CodecError> {
    let n = frame.payload.len();
    let valid = match frame.kind {
        FrameKind::Heartbeat => n == 0,
        FrameKind::JointState | FrameKind::TorqueCmd => (1..=255).contains(&n),
    };
    if !valid {
        return Err(CodecError::BadJointCount(n));
    }
    let mut out = Vec::with_capacity(frame.encoded_len());
    out.extend_from_slice(&FRAME_MAGIC);
    out.push(FRAME_VERSION);
    out.push(frame.kind as u8);
    out.extend_from_slice(&frame.seq.to_le_bytes());
    out.extend_from_slice(&frame.t_us.to_le_bytes());
    out.push(n as u8);
    for s in &frame.payload {
        out.extend_from_slice(&s.q.to_le_bytes());
        out.extend_from_slice(&s.qd.to_le_bytes());
        out.extend_from_slice(&s.tau_ext.to_le_bytes());
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn f64_at(bytes: &[u8], at: usize) -> f64 {
    let mut b = [0u8; 8];
    b.copy_from_slice(&bytes[at..at + 8]);
    f64::from_le_bytes(b)
}

/// Parses one whole frame. Checks run in a fixed order: magic, minimum
/// length, checksum (trailing four bytes), version, kind, joint count.
pub fn decode(bytes: &[u8]) -> Result<Frame, CodecError> {
    let prefix = bytes.len().min(FRAME_MAGIC.len());
    if bytes[..prefix] != FRAME_MAGIC[..prefix] {
        return Err(CodecError::BadMagic);
    }
    let min_len = HEADER_LEN + CRC_LEN;
    if bytes.len() < min_len {
        return Err(CodecError::Truncated { needed: min_len, have: bytes.len() });
    }
    let body_len = bytes.len() - CRC_LEN;
    let mut crc_bytes = [0u8; 4];
    crc_bytes.copy_from_slice(&bytes[body_len..]);
    if crc32(&bytes[..body_len]) != u32::from_le_bytes(crc_bytes) {
        return Err(CodecError::ChecksumMismatch);
    }
    if bytes[4] != FRAME_VERSION {
        return Err(CodecError::BadVersion(bytes[4]));
    }
    let kind = FrameKind::from_byte(bytes[5]).ok_or(CodecError::BadKind(bytes[5]))?;
    let n = bytes[18] as usize;
    let expected = HEADER_LEN + SAMPLE_LEN * n + CRC_LEN;
    if bytes.len() < expected {
        return Err(CodecError::Truncated { needed: expected, have: bytes.len() });
    }
    if bytes.len() != expected {
        return Err(CodecError::LengthMismatch { expected, have: bytes.len() });
    }
    let seq = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]);
    let mut t = [0u8; 8];
    t.copy_from_slice(&bytes[10..18]);
    let t_us = u64::from_le_bytes(t);
    let payload = (0..n)
        .map(|i| {
            let at = HEADER_LEN + SAMPLE_LEN * i;
            JointSample { q: f64_at(bytes, at), qd: f64_at(bytes, at + 8), tau_ext: f64_at(bytes, at + 16) }
        })
        .collect();
    let frame = Frame { kind, seq, t_us, payload };
    let valid = match kind {
        FrameKind::Heartbeat => n == 0,
        _ => n >= 1,
    };
    if !valid {
        return Err(CodecError::BadJointCount(n));
    }
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    // Layout-derived bytes for a zeroed heartbeat; CRC-32 of the first 19
    // bytes computed once with an independent CRC-32 (zlib) and frozen.
    const HEARTBEAT_GOLDEN: [u8; 23] = [
        0x53, 0x44, 0x4D, 0x31, 0x01, 0x03, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,
        0x00, 0x00, 0x00, 0x25, 0xD3, 0x23, 0x43,
    ];

    #[test]
    fn heartbeat_golden_bytes() {
        let bytes = encode(&Frame::heartbeat(0, 0)).unwrap();
        assert_eq!(bytes.len(), 23);
        assert_eq!(bytes, HEARTBEAT_GOLDEN);
        assert_eq!(decode(&bytes).unwrap(), Frame::heartbeat(0, 0));
    }

    #[test]
    fn joint_state_layout() {
        let frame = Frame {
            kind: FrameKind::JointState,
            seq: 0x0102_0304,
            t_us: 0x1122_3344_5566_7788,
            payload: vec![JointSample { q: 1.0, qd: -2.0, tau_ext: 0.5 }],
        };
        let bytes = encode(&frame).unwrap();
        assert_eq!(bytes.len(), 19 + 24 + 4);
        assert_eq!(&bytes[6..10], &[0x04, 0x03, 0x02, 0x01]);
        assert_eq!(&bytes[10..18], &0x1122_3344_5566_7788u64.to_le_bytes());
        assert_eq!(bytes[18], 1);
        assert_eq!(&bytes[19..27], &1.0f64.to_le_bytes());
        assert_eq!(decode(&bytes).unwrap(), frame);
    }

    #[test]
    fn rejects_in_order() {
        assert_eq!(decode(&[]), Err(CodecError::Truncated { needed: 23, have: 0 }));
        assert_eq!(decode(b"XDM1\x01\x03"), Err(CodecError::BadMagic));
        assert_eq!(decode(b"SD"), Err(CodecError::Truncated { needed: 23, have: 2 }));

        let mut bytes = encode(&Frame::heartbeat(7, 9)).unwrap();
        bytes[4] = 2;
        let body = bytes.len() - 4;
        let crc = crc32(&bytes[..body]).to_le_bytes();
        bytes[body..].copy_from_slice(&crc);
        assert_eq!(decode(&bytes), Err(CodecError::BadVersion(2)));

        let mut bytes = encode(&Frame::heartbeat(7, 9)).unwrap();
        bytes[10] ^= 0x40;
        assert_eq!(decode(&bytes), Err(CodecError::ChecksumMismatch));
    }

    #[test]
    fn joint_count_rules() {
        let empty_state = Frame { kind: FrameKind::JointState, seq: 0, t_us: 0, payload: vec![] };
        assert_eq!(encode(&empty_state), Err(CodecError::BadJointCount(0)));
        let fat_heartbeat = Frame {
            kind: FrameKind::Heartbeat,
            seq: 0,
            t_us: 0,
            payload: vec![JointSample { q: 0.0, qd: 0.0, tau_ext: 0.0 }],
        };
        assert_eq!(encode(&fat_heartbeat), Err(CodecError::BadJointCount(1)));
    }
}
