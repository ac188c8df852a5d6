//! Message framing: `"C2PI"`, version byte, type byte, u64-LE payload length,
//! payload.

use std::fmt;
use std::io::Read;
use std::num::Wrapping;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fixed::{Ring, RingTensor};

pub const MAGIC: [u8; 4] = *b"C2PI";
pub const WIRE_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 14;
pub const MAX_PAYLOAD: usize = 1 << 31;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MsgType {
    Hello = 0x01,
    CryptoArchMeta = 0x02,
    InputShare = 0x03,
    MulExchange = 0x04,
    ReluExchange = 0x05,
    TripleIssue = 0x06,
    NoisedReveal = 0x07,
    Result = 0x08,
    Abort = 0x0F,
}

impl MsgType {
    pub fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            0x01 => MsgType::Hello,
            0x02 => MsgType::CryptoArchMeta,
            0x03 => MsgType::InputShare,
            0x04 => MsgType::MulExchange,
            0x05 => MsgType::ReluExchange,
            0x06 => MsgType::TripleIssue,
            0x07 => MsgType::NoisedReveal,
            0x08 => MsgType::Result,
            0x0F => MsgType::Abort,
            other => return Err(Error::Wire(format!("unknown message type 0x{other:02x}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgType::Hello => "hello",
            MsgType::CryptoArchMeta => "crypto_arch_meta",
            MsgType::InputShare => "input_share",
            MsgType::MulExchange => "mul_exchange",
            MsgType::ReluExchange => "relu_exchange",
            MsgType::TripleIssue => "triple_issue",
            MsgType::NoisedReveal => "noised_reveal",
            MsgType::Result => "result",
            MsgType::Abort => "abort",
        }
    }
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for MsgType {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn new(msg_type: MsgType, payload: Vec<u8>) -> Self {
        Message { msg_type, payload }
    }

    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&MAGIC);
        out.push(WIRE_VERSION);
        out.push(self.msg_type as u8);
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Validates a header and returns the message type and payload length.
    pub fn parse_header(h: &[u8; HEADER_LEN]) -> Result<(MsgType, usize)> {
        if h[..4] != MAGIC {
            return Err(Error::Wire(format!("bad magic {:02x?}", &h[..4])));
        }
        if h[4] != WIRE_VERSION {
            return Err(Error::Wire(format!(
                "version mismatch: peer speaks {}, expected {WIRE_VERSION}",
                h[4]
            )));
        }
        let t = MsgType::from_byte(h[5])?;
        let len = u64::from_le_bytes(h[6..14].try_into().unwrap());
        if len > MAX_PAYLOAD as u64 {
            return Err(Error::Wire(format!(
                "payload length {len} exceeds maximum {MAX_PAYLOAD}"
            )));
        }
        Ok((t, len as usize))
    }

    pub fn decode(frame: &[u8]) -> Result<Message> {
        if frame.len() < HEADER_LEN {
            return Err(Error::Wire(format!(
                "frame of {} bytes is shorter than the header",
                frame.len()
            )));
        }
        let (t, len) = Self::parse_header(frame[..HEADER_LEN].try_into().unwrap())?;
        if frame.len() - HEADER_LEN != len {
            return Err(Error::Wire(format!(
                "header declares {len} payload bytes, frame has {}",
                frame.len() - HEADER_LEN
            )));
        }
        Ok(Message::new(t, frame[HEADER_LEN..].to_vec()))
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Message> {
        let mut h = [0u8; HEADER_LEN];
        r.read_exact(&mut h)?;
        let (t, len) = Self::parse_header(&h)?;
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload)?;
        Ok(Message::new(t, payload))
    }
}

/// Bare little-endian ring elements; the receiver knows the count from the
/// shared schedule.
pub fn encode_ring(parts: &[&RingTensor]) -> Vec<u8> {
    let n: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = Vec::with_capacity(8 * n);
    for p in parts {
        for v in &p.data {
            out.extend_from_slice(&v.0.to_le_bytes());
        }
    }
    out
}

/// Splits a bare payload into tensors of the given shapes.
pub fn decode_ring(payload: &[u8], shapes: &[&[usize]]) -> Result<Vec<RingTensor>> {
    let total: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    if payload.len() != 8 * total {
        return Err(Error::Wire(format!(
            "expected {} payload bytes, got {}",
            8 * total,
            payload.len()
        )));
    }
    let mut vals = payload
        .chunks_exact(8)
        .map(|c| Wrapping(u64::from_le_bytes(c.try_into().unwrap())));
    shapes
        .iter()
        .map(|s| {
            let n = s.iter().product();
            RingTensor::new(s.to_vec(), vals.by_ref().take(n).collect::<Vec<Ring>>())
        })
        .collect()
}

/// Self-describing tensor: u32 rank, u32 dims, u64-LE elements.
pub fn encode_shaped(shape: &[usize], data: &[u64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * shape.len() + 8 * data.len());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_shaped(payload: &[u8]) -> Result<(Vec<usize>, Vec<u64>)> {
    let short = || {
        Error::Wire(format!(
            "shaped tensor payload of {} bytes is truncated",
            payload.len()
        ))
    };
    let word = |i: usize| -> Result<u32> {
        payload
            .get(i..i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(short)
    };
    let rank = word(0)? as usize;
    let shape: Vec<usize> = (0..rank)
        .map(|k| word(4 + 4 * k).map(|d| d as usize))
        .collect::<Result<_>>()?;
    let body = &payload.get(4 + 4 * rank..).ok_or_else(short)?;
    let n: usize = shape.iter().product();
    if body.len() != 8 * n {
        return Err(Error::Wire(format!(
            "shape {shape:?} needs {} bytes of elements, got {}",
            8 * n,
            body.len()
        )));
    }
    Ok((
        shape,
        body.chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_roundtrip() {
        let m = Message::new(MsgType::MulExchange, vec![1, 2, 3]);
        let f = m.encode();
        assert_eq!(f.len(), 17);
        assert_eq!(&f[..6], b"C2PI\x01\x04");
        assert_eq!(Message::decode(&f).unwrap(), m);
        assert_eq!(Message::read_from(&mut &f[..]).unwrap(), m);
    }

    #[test]
    fn framing_errors() {
        let mut f = Message::new(MsgType::Hello, vec![]).encode();
        f[4] = 2;
        assert!(Message::decode(&f)
            .unwrap_err()
            .to_string()
            .contains("version mismatch"));
        f[4] = 1;
        f[5] = 0x09;
        assert!(Message::decode(&f)
            .unwrap_err()
            .to_string()
            .contains("0x09"));
        f[5] = 1;
        f[0] = b'X';
        assert!(Message::decode(&f).is_err());
        let mut g = Message::new(MsgType::Hello, vec![0; 4]).encode();
        g.pop();
        assert!(Message::decode(&g).is_err());
    }

    #[test]
    fn ring_payloads() {
        let a = RingTensor::from_u64(vec![2], vec![1, u64::MAX]).unwrap();
        let b = RingTensor::from_u64(vec![1, 1], vec![7]).unwrap();
        let p = encode_ring(&[&a, &b]);
        assert_eq!(p.len(), 24);
        let back = decode_ring(&p, &[&[2], &[1, 1]]).unwrap();
        assert_eq!(back, vec![a.clone(), b]);
        assert!(decode_ring(&p, &[&[2]]).is_err());
        let s = encode_shaped(&a.shape, &a.to_u64());
        assert_eq!(s.len(), 4 + 4 + 16);
        assert_eq!(decode_shaped(&s).unwrap(), (vec![2], vec![1, u64::MAX]));
        assert!(decode_shaped(&s[..10]).is_err());
    }
}
