//! Wire messages and length-prefixed framing.
//!
//! Frame: `len u32 LE | payload`. Payload: `round u32 LE | tag u8 | body`.
//!
//! | tag | body |
//! |-----|------|
//! | 1 HELLO        | `client_id u32 | version u16` |
//! | 2 MANIFEST     | `slots u32 | entries u32 | per entry: name_len u16, name, rank u8, dims u32*, offset u32, count u32, chunk_start u32, chunk_end u32` |
//! | 3 CHUNKS       | `count u32 | per chunk: len u32, ciphertext bytes` |
//! | 4 AGGREGATE    | same as CHUNKS |
//! | 5 PLAIN_CHUNKS | `count u32 | f64 LE bit patterns` |
//! | 6 ERROR        | `code u16 | text_len u16 | utf-8 text` |
//!
//! All integers little-endian. Ciphertexts use the [`Bfv`] byte format.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::bfv::{Bfv, Ciphertext};
use crate::encoder::{ManifestEntry, WeightManifest};
use crate::error::{Error, ProtocolError, Result};

pub const PROTOCOL_VERSION: u16 = 1;
/// Upper bound on a single frame payload.
pub const MAX_FRAME_LEN: usize = 1 << 28;

const TAG_HELLO: u8 = 1;
const TAG_MANIFEST: u8 = 2;
const TAG_CHUNKS: u8 = 3;
const TAG_AGGREGATE: u8 = 4;
const TAG_PLAIN: u8 = 5;
const TAG_ERROR: u8 = 6;

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Hello { client_id: u32, version: u16 },
    Manifest(WeightManifest),
    Chunks(Vec<Ciphertext>),
    Aggregate(Vec<Ciphertext>),
    PlainChunks(Vec<f64>),
    Error { code: u16, text: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub round: u32,
    pub body: Body,
}

/// Stable wire code for an error.
pub fn error_code(e: &Error) -> u16 {
    match e {
        Error::Protocol(p) => p.code(),
        Error::Range { .. } | Error::Domain(_) => 100,
        Error::NoiseOverflow => 101,
        Error::ScaleMismatch { .. } => 102,
        Error::Decode(_) => 103,
        Error::Shape(_) => 104,
        Error::ParamMismatch(_) | Error::InvalidParams(_) => 105,
    }
}

impl Message {
    pub fn new(round: u32, body: Body) -> Self {
        Message { round, body }
    }

    pub fn hello(client_id: u32) -> Self {
        Message::new(
            0,
            Body::Hello {
                client_id,
                version: PROTOCOL_VERSION,
            },
        )
    }

    pub fn error(round: u32, e: &Error) -> Self {
        let mut text = e.to_string();
        text.truncate(u16::MAX as usize);
        Message::new(
            round,
            Body::Error {
                code: error_code(e),
                text,
            },
        )
    }

    pub fn tag(&self) -> u8 {
        match self.body {
            Body::Hello { .. } => TAG_HELLO,
            Body::Manifest(_) => TAG_MANIFEST,
            Body::Chunks(_) => TAG_CHUNKS,
            Body::Aggregate(_) => TAG_AGGREGATE,
            Body::PlainChunks(_) => TAG_PLAIN,
            Body::Error { .. } => TAG_ERROR,
        }
    }

    /// Serializes the payload (without the frame length). Ciphertext bodies
    /// need the scheme context.
    pub fn encode(&self, bfv: Option<&Bfv>) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.round.to_le_bytes());
        out.push(self.tag());
        match &self.body {
            Body::Hello { client_id, version } => {
                out.extend_from_slice(&client_id.to_le_bytes());
                out.extend_from_slice(&version.to_le_bytes());
            }
            Body::Manifest(m) => encode_manifest(&mut out, m)?,
            Body::Chunks(cts) | Body::Aggregate(cts) => {
                let bfv = bfv.ok_or(Error::InvalidParams(
                    "ciphertext message needs a scheme context",
                ))?;
                put_u32(&mut out, cts.len())?;
                for ct in cts {
                    let bytes = bfv.serialize_ciphertext(ct);
                    put_u32(&mut out, bytes.len())?;
                    out.extend_from_slice(&bytes);
                }
            }
            Body::PlainChunks(values) => {
                put_u32(&mut out, values.len())?;
                for v in values {
                    out.extend_from_slice(&v.to_bits().to_le_bytes());
                }
            }
            Body::Error { code, text } => {
                out.extend_from_slice(&code.to_le_bytes());
                let bytes = text.as_bytes();
                let len = bytes.len().min(u16::MAX as usize);
                out.extend_from_slice(&(len as u16).to_le_bytes());
                out.extend_from_slice(&bytes[..len]);
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], bfv: Option<&Bfv>) -> Result<Message> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let round = r.u32()?;
        let tag = r.u8()?;
        let body = match tag {
            TAG_HELLO => Body::Hello {
                client_id: r.u32()?,
                version: r.u16()?,
            },
            TAG_MANIFEST => Body::Manifest(decode_manifest(&mut r)?),
            TAG_CHUNKS | TAG_AGGREGATE => {
                let bfv = bfv.ok_or(Error::InvalidParams(
                    "ciphertext message needs a scheme context",
                ))?;
                let count = r.u32()? as usize;
                let mut cts = Vec::with_capacity(count.min(1024));
                for _ in 0..count {
                    let len = r.u32()? as usize;
                    let raw = r.take(len)?;
                    let (ct, used) = bfv.deserialize_ciphertext(raw)?;
                    if used != len {
                        return Err(Error::Decode("ciphertext length prefix mismatch"));
                    }
                    cts.push(ct);
                }
                if tag == TAG_CHUNKS {
                    Body::Chunks(cts)
                } else {
                    Body::Aggregate(cts)
                }
            }
            TAG_PLAIN => {
                let count = r.u32()? as usize;
                let raw = r.take(
                    count
                        .checked_mul(8)
                        .ok_or(Error::Decode("length overflow"))?,
                )?;
                Body::PlainChunks(
                    raw.chunks_exact(8)
                        .map(|b| f64::from_bits(u64::from_le_bytes(b.try_into().unwrap())))
                        .collect(),
                )
            }
            TAG_ERROR => {
                let code = r.u16()?;
                let len = r.u16()? as usize;
                let text = core::str::from_utf8(r.take(len)?)
                    .map_err(|_| Error::Decode("error text is not utf-8"))?;
                Body::Error {
                    code,
                    text: text.to_string(),
                }
            }
            _ => return Err(Error::Decode("unknown message tag")),
        };
        if r.pos != bytes.len() {
            return Err(Error::Decode("trailing bytes after message"));
        }
        Ok(Message { round, body })
    }

    /// Rejects messages that are not for `round`.
    pub fn expect_round(&self, round: u32) -> Result<()> {
        if self.round != round {
            return Err(ProtocolError::StaleRound {
                expected: round,
                got: self.round,
            }
            .into());
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Decode("length exceeds u32"))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn encode_manifest(out: &mut Vec<u8>, m: &WeightManifest) -> Result<()> {
    out.extend_from_slice(&m.slots.to_le_bytes());
    put_u32(out, m.entries.len())?;
    for e in &m.entries {
        let name = e.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::Decode("tensor name too long"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        let rank =
            u8::try_from(e.shape.len()).map_err(|_| Error::Decode("tensor rank too large"))?;
        out.push(rank);
        for d in &e.shape {
            out.extend_from_slice(&d.to_le_bytes());
        }
        let (start, end) = m.chunk_range(e);
        for v in [e.offset, e.count, start, end] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

fn decode_manifest(r: &mut Reader<'_>) -> Result<WeightManifest> {
    let slots = r.u32()?;
    let count = r.u32()? as usize;
    let mut m = WeightManifest {
        entries: Vec::with_capacity(count.min(1024)),
        slots,
    };
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = core::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Decode("tensor name is not utf-8"))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let offset = r.u32()?;
        let count = r.u32()?;
        let chunks = (r.u32()?, r.u32()?);
        let entry = ManifestEntry {
            name,
            shape,
            offset,
            count,
        };
        if m.chunk_range(&entry) != chunks {
            return Err(Error::Decode("manifest chunk range inconsistent"));
        }
        m.entries.push(entry);
    }
    m.validate()
        .map_err(|_| Error::Decode("manifest entries do not tile"))?;
    Ok(m)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or(Error::Decode("length overflow"))?;
        if end > self.buf.len() {
            return Err(Error::Decode("truncated message"));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Prefixes `payload` with its u32 little-endian length.
pub fn encode_frame(payload: &[u8]) -> Result<Vec<u8>> {
    if payload.len() > MAX_FRAME_LEN {
        return Err(Error::Decode("frame too large"));
    }
    let mut out = Vec::with_capacity(payload.len() + 4);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

/// Incremental frame parser for a byte stream.
#[derive(Debug, Default)]
pub struct FrameReader {
    buf: Vec<u8>,
}

impl FrameReader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes buffered but not yet returned as a frame.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }

    /// Next complete payload, `Ok(None)` if more bytes are needed.
    pub fn next_frame(&mut self) -> Result<Option<Vec<u8>>> {
        if self.buf.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_le_bytes(self.buf[..4].try_into().unwrap()) as usize;
        if len > MAX_FRAME_LEN {
            return Err(Error::Decode("frame too large"));
        }
        if self.buf.len() < 4 + len {
            return Ok(None);
        }
        let payload = self.buf[4..4 + len].to_vec();
        self.buf.drain(..4 + len);
        Ok(Some(payload))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn hello_layout() {
        let bytes = Message::hello(7).encode(None).unwrap();
        assert_eq!(bytes, vec![0, 0, 0, 0, 1, 7, 0, 0, 0, 1, 0]);
        assert_eq!(Message::decode(&bytes, None).unwrap(), Message::hello(7));
    }

    #[test]
    fn manifest_roundtrip() {
        let m = WeightManifest::from_shapes([("w", vec![2, 3]), ("b", vec![3])]).with_slots(4);
        let msg = Message::new(3, Body::Manifest(m));
        let bytes = msg.encode(None).unwrap();
        assert_eq!(Message::decode(&bytes, None).unwrap(), msg);
    }

    #[test]
    fn plain_and_error_roundtrip() {
        for msg in [
            Message::new(2, Body::PlainChunks(vec![1.5, -0.25, 0.0])),
            Message::error(9, &Error::Protocol(ProtocolError::IncompleteRound)),
        ] {
            let bytes = msg.encode(None).unwrap();
            assert_eq!(Message::decode(&bytes, None).unwrap(), msg);
        }
    }

    #[test]
    fn rejects_malformed() {
        assert!(Message::decode(&[0, 0, 0], None).is_err());
        assert!(Message::decode(&[0, 0, 0, 0, 99], None).is_err());
        let mut bytes = Message::hello(1).encode(None).unwrap();
        bytes.push(0);
        assert!(Message::decode(&bytes, None).is_err());
        // chunk message without scheme context
        assert!(Message::decode(&[0, 0, 0, 0, 3, 0, 0, 0, 0], None).is_err());
    }

    #[test]
    fn frames_split_across_reads() {
        let a = encode_frame(b"hello").unwrap();
        let b = encode_frame(b"").unwrap();
        let mut stream = a.clone();
        stream.extend_from_slice(&b);
        let mut fr = FrameReader::new();
        fr.push(&stream[..3]);
        assert_eq!(fr.next_frame().unwrap(), None);
        fr.push(&stream[3..7]);
        assert_eq!(fr.next_frame().unwrap(), None);
        fr.push(&stream[7..]);
        assert_eq!(fr.next_frame().unwrap(), Some(b"hello".to_vec()));
        assert_eq!(fr.next_frame().unwrap(), Some(Vec::new()));
        assert_eq!(fr.next_frame().unwrap(), None);
        assert_eq!(fr.pending(), 0);
    }

    #[test]
    fn oversized_frame_rejected() {
        let mut fr = FrameReader::new();
        fr.push(&u32::MAX.to_le_bytes());
        assert!(fr.next_frame().is_err());
    }

    #[test]
    fn stale_round_check() {
        let m = Message::hello(1);
        assert!(m.expect_round(0).is_ok());
        assert!(matches!(
            m.expect_round(1),
            Err(Error::Protocol(ProtocolError::StaleRound {
                expected: 1,
                got: 0
            }))
        ));
    }
}
